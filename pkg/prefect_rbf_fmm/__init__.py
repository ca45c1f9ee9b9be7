from ._version import __version__  # noqa

from .config import RunConfig  # noqa
