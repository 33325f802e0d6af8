"""Kernel backend selection: compiled extension if importable, else pure Python.

Set ``NLCODEC_PURE_PYTHON=1`` to force the fallback. Both backends produce
byte-identical streams.
"""
import os

from .. import _purepy

BACKEND = "python"
RangeEncoder = _purepy.RangeEncoder
RangeDecoder = _purepy.RangeDecoder
dense_seq = _purepy.dense_seq

if os.environ.get("NLCODEC_PURE_PYTHON") != "1":
    try:
        from .. import _speedups
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        RangeEncoder = _speedups.RangeEncoder
        RangeDecoder = _speedups.RangeDecoder
        dense_seq = _speedups.dense_seq
