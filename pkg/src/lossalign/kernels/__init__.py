"""Training-chunk kernels with backend selection at import.

The compiled extension is used when present; the pure numpy fallback is
always available and defines the semantics. Set LOSSALIGN_PURE_PYTHON=1 to
force the fallback regardless of what was built. ``BACKEND`` names the
active choice ("compiled" or "python").
"""

import os

from . import pyimpl
from .packing import layout_of, pack, param_count, unpack

KIND_TRIPLET = pyimpl.KIND_TRIPLET
KIND_MIXTURE = pyimpl.KIND_MIXTURE
KIND_FOCAL = pyimpl.KIND_FOCAL
KIND_DEFAULT = pyimpl.KIND_DEFAULT
OPT_MOMENTUM = pyimpl.OPT_MOMENTUM
OPT_RMSPROP = pyimpl.OPT_RMSPROP

if os.environ.get("LOSSALIGN_PURE_PYTHON"):
    _impl = pyimpl
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = pyimpl

BACKEND = "python" if _impl is pyimpl else "compiled"
classifier_chunk = _impl.classifier_chunk
embedding_chunk = _impl.embedding_chunk

__all__ = [
    "BACKEND",
    "KIND_TRIPLET",
    "KIND_MIXTURE",
    "KIND_FOCAL",
    "KIND_DEFAULT",
    "OPT_MOMENTUM",
    "OPT_RMSPROP",
    "classifier_chunk",
    "embedding_chunk",
    "layout_of",
    "pack",
    "param_count",
    "unpack",
]
