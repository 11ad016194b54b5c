"""LSTM kernel backends.

Two interchangeable implementations of the same three functions
(``lstm_step``, ``lstm_forward``, ``lstm_backward``) plus ``split_dims``:

* ``_core`` -- Cython extension, the default when the build produced it
* ``numpy_ref`` -- pure NumPy reference, always available

Set ``CFGDEC_BACKEND=numpy`` or ``CFGDEC_BACKEND=compiled`` to force one.
Forcing ``compiled`` when the extension is missing raises ImportError rather
than silently falling back.
"""

import os

from . import numpy_ref

_requested = os.environ.get("CFGDEC_BACKEND", "").strip().lower()

if _requested not in ("", "compiled", "numpy"):
    raise ImportError(
        f"CFGDEC_BACKEND={_requested!r}: expected 'compiled' or 'numpy'")

if _requested == "numpy":
    _impl = numpy_ref
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "CFGDEC_BACKEND=compiled but the cfgdec.kernels._core "
                "extension is not built; reinstall the package or use "
                "CFGDEC_BACKEND=numpy")
        _impl = numpy_ref

BACKEND_NAME = _impl.BACKEND_NAME
split_dims = _impl.split_dims
lstm_step = _impl.lstm_step
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward

__all__ = [
    "BACKEND_NAME",
    "split_dims",
    "lstm_step",
    "lstm_forward",
    "lstm_backward",
    "numpy_ref",
]
