"""Hot kernels. The Cython build is used when importable, otherwise the numpy
fallback; ``VARGANLAB_PURE_PYTHON=1`` forces the fallback."""
import os

from . import _fallback

BACKEND = "python"
if not os.environ.get("VARGANLAB_PURE_PYTHON"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

minibatch_forward = _impl.minibatch_forward
minibatch_backward = _impl.minibatch_backward
nearest_centers = _impl.nearest_centers
classify_images = _impl.classify_images

__all__ = [
    "BACKEND", "minibatch_forward", "minibatch_backward", "nearest_centers", "classify_images",
]
