"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise (or when
``NEURORRM_PURE_PYTHON=1``) the numpy fallback is imported instead. Both
expose the same four functions.
"""
import os

if os.environ.get("NEURORRM_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl
        BACKEND = "python"

best_config = _impl.best_config
best_configs = _impl.best_configs
tem_encode_batch = _impl.tem_encode_batch
lif_layer = _impl.lif_layer

__all__ = ["BACKEND", "best_config", "best_configs", "tem_encode_batch", "lif_layer"]
