"""Select the sequence-kernel backend at import.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
NumPy fallback is loaded. Set ``SEMDPO_KERNELS=python`` to force the fallback.
"""

import os

from semdpo import _pykernels

python_backend = _pykernels

if os.environ.get("SEMDPO_KERNELS", "").lower() == "python":
    _impl = _pykernels
else:
    try:
        from semdpo import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

try:
    from semdpo import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

cond_vector = _impl.cond_vector
seq_logprob = _impl.seq_logprob
seq_logprob_grad = _impl.seq_logprob_grad
