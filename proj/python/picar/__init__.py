"""Low-rank Bayesian spatial GLMMs via mesh projection."""

try:
    from ._core import *  # noqa: F401,F403  installed wheel layout
    from ._core import __version__  # noqa: F401
except ImportError:  # in-tree build: extension directory on sys.path
    from _core import *  # type: ignore  # noqa: F401,F403
    from _core import __version__  # type: ignore  # noqa: F401
