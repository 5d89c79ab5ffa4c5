"""Hot kernels: LSTM recurrence (forward/backward) and DTW.

The compiled ``_core`` extension is used when importable; otherwise, or when
the environment variable ``HYPAD_PURE_PYTHON`` is set to a non-empty value,
the numpy versions in ``_reference`` are used.  ``BACKEND`` names the choice.
"""
import os

from . import _reference

if os.environ.get("HYPAD_PURE_PYTHON"):
    _impl = _reference
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _reference

BACKEND = "compiled" if _impl is not _reference else "python"

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
dtw = _impl.dtw
dtw_rows = _impl.dtw_rows

__all__ = ["BACKEND", "dtw", "dtw_rows", "lstm_backward", "lstm_forward"]
