"""Range coder over quantized CDF tables."""
from __future__ import annotations

from .backend import BACKEND, RangeDecoder, RangeEncoder, dense_seq
from .cdf import DEFAULT_PRECISION, CdfTable, build_cdf, quantize_pmfs


def encode_symbol(state: RangeEncoder, symbol: int, table: CdfTable) -> RangeEncoder:
    state.encode(table.cumulative[None, :], [symbol], table.lo, table.escape, table.precision)
    return state


def decode_symbol(state: RangeDecoder, table: CdfTable) -> int:
    return int(state.decode(table.cumulative[None, :], table.lo, table.escape, table.precision)[0])


__all__ = [
    "BACKEND", "CdfTable", "DEFAULT_PRECISION", "RangeDecoder", "RangeEncoder", "build_cdf",
    "decode_symbol", "dense_seq", "encode_symbol", "quantize_pmfs",
]
