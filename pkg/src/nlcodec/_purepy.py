"""Pure-Python kernels: range coder and batch-invariant dense layer.

These mirror ``_speedups.pyx`` operation for operation; both backends emit
identical bytes and identical floating-point results.

The range coder keeps a 64-bit ``low`` (bit 32 is the carry) and a 32-bit
``range``, emitting bytes through a one-byte cache plus a run of pending 0xFF
bytes. Two details keep the output short: the always-zero leading byte is
never written, and the final flush rounds ``low`` up to a multiple of 2^24 so
only one byte of it is emitted. The decoder reads zeros past the end of the
buffer, so trailing zero bytes are trimmed as well.
"""
from __future__ import annotations

import numpy as np

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
RAW_BITS = 16
RAW_OFFSET = 1 << (RAW_BITS - 1)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.first = True
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                if self.first:
                    self.first = False
                else:
                    self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def _encode(self, start: int, size: int, precision: int):
        r = self.range >> precision
        self.low += start * r
        self.range = size * r
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_raw(self, value: int, nbits: int = RAW_BITS):
        if not 0 <= value < (1 << nbits):
            raise OverflowError(f"raw value {value} does not fit in {nbits} bits")
        self._encode(value, 1, nbits)

    def encode(self, cdf: np.ndarray, values: np.ndarray, lo: int, escape: bool, precision: int = 16):
        """Code ``values[i]`` with cumulative row ``cdf[i]``.

        With ``escape``, the last slot of each row is the escape slot: values
        outside the regular range code it and then a raw 16-bit value.
        """
        cdf = np.asarray(cdf)
        values = np.asarray(values)
        if cdf.ndim != 2 or cdf.shape[0] != values.shape[0]:
            raise ValueError("need one cumulative row per value")
        slots = cdf.shape[1] - 1
        regular = slots - 1 if escape else slots
        for row, v in zip(cdf.tolist(), values.tolist()):
            idx = v - lo
            if 0 <= idx < regular:
                size = row[idx + 1] - row[idx]
                if size <= 0:
                    raise ValueError(f"symbol {v} has zero mass")
                self._encode(row[idx], size, precision)
            elif escape:
                self._encode(row[slots - 1], row[slots] - row[slots - 1], precision)
                self.encode_raw(v + RAW_OFFSET)
            else:
                raise ValueError(f"symbol {v} outside [{lo}, {lo + regular - 1}] and no escape slot")

    def finish(self) -> bytes:
        self.low = (self.low + TOP - 1) & ~(TOP - 1)
        self._shift_low()
        self._shift_low()
        return bytes(self.out).rstrip(b"\x00")


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
        else:
            b = 0
        self.pos += 1
        return b

    def _normalize(self):
        while self.range < TOP:
            self.code = ((self.code << 8) | self._byte()) & MASK32
            self.range <<= 8

    def decode_raw(self, nbits: int = RAW_BITS) -> int:
        r = self.range >> nbits
        v = self.code // r
        if v >= (1 << nbits):
            raise ValueError("corrupt stream")
        self.code -= v * r
        self.range = r
        self._normalize()
        return v

    def decode(self, cdf: np.ndarray, lo: int, escape: bool, precision: int = 16) -> np.ndarray:
        cdf = np.asarray(cdf)
        slots = cdf.shape[1] - 1
        total = 1 << precision
        out = np.empty(cdf.shape[0], dtype=np.int64)
        for i, row in enumerate(cdf.tolist()):
            r = self.range >> precision
            v = self.code // r
            if v >= total:
                raise ValueError("corrupt stream")
            a, b = 0, slots
            while b - a > 1:
                mid = (a + b) >> 1
                if row[mid] <= v:
                    a = mid
                else:
                    b = mid
            self.code -= row[a] * r
            self.range = (row[a + 1] - row[a]) * r
            self._normalize()
            if escape and a == slots - 1:
                out[i] = self.decode_raw() - RAW_OFFSET
            else:
                out[i] = a + lo
        return out

    @property
    def consumed(self) -> int:
        return self.pos


def dense_seq(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out = b + sum_k x[:, k] * w[k], accumulated strictly in k order.

    The fixed summation order makes each output row independent of how many
    rows are evaluated together, which BLAS does not guarantee.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    out = np.repeat(np.asarray(b, dtype=np.float64)[None, :], x.shape[0], axis=0)
    for k in range(x.shape[1]):
        out += x[:, k:k + 1] * w[k]
    return out
