"""Convolution kernel backend selection.

The compiled extension is preferred when present; the pure numpy backend is
the fallback. Set IGDISTILL_KERNELS=python or =native before import to force
one (forcing native without the extension installed is an error).
"""

import os

from . import pure

try:
    from . import _native as native
except ImportError:
    native = None

_requested = os.environ.get("IGDISTILL_KERNELS", "").strip().lower()

if _requested == "python":
    _impl = pure
elif _requested == "native":
    if native is None:
        raise ImportError(
            "IGDISTILL_KERNELS=native but the compiled extension is not built; "
            "reinstall the package with a C compiler available")
    _impl = native
elif _requested:
    raise ValueError(f"unknown IGDISTILL_KERNELS value {_requested!r} "
                     "(expected 'python' or 'native')")
else:
    _impl = native if native is not None else pure

BACKEND = "native" if _impl is native else "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
depthwise_forward = _impl.depthwise_forward
depthwise_backward = _impl.depthwise_backward


def available_backends():
    """Importable backend modules keyed by name."""
    found = {"python": pure}
    if native is not None:
        found["native"] = native
    return found
