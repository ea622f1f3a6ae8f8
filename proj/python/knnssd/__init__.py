"""Self-speculative decoding with skipped sublayers and nearest-neighbor mask routing."""

try:
    from ._knnssd import *  # noqa: F401,F403
    from ._knnssd import __doc__  # noqa: F401
except ImportError:  # in-tree build: the extension sits next to, not inside, the package
    from _knnssd import *  # noqa: F401,F403
