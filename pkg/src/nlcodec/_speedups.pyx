# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_purepy.py``; see there for the format."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t, uint32_t, uint64_t
from libc.stdlib cimport free, realloc

cnp.import_array()

DEF TOP = 1 << 24
DEF MASK32 = 0xFFFFFFFF
DEF RAW_BITS = 16
DEF RAW_OFFSET = 1 << 15


cdef class RangeEncoder:
    cdef uint64_t low
    cdef uint32_t rng
    cdef uint8_t cache
    cdef uint64_t cache_size
    cdef bint first
    cdef uint8_t* buf
    cdef Py_ssize_t size, cap

    def __cinit__(self):
        self.low = 0
        self.rng = MASK32
        self.cache = 0
        self.cache_size = 1
        self.first = True
        self.cap = 4096
        self.size = 0
        self.buf = <uint8_t*> realloc(NULL, self.cap)
        if self.buf == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.buf)

    cdef int _put(self, uint8_t b) except -1:
        cdef uint8_t* grown
        if self.size == self.cap:
            grown = <uint8_t*> realloc(self.buf, self.cap * 2)
            if grown == NULL:
                raise MemoryError()
            self.buf = grown
            self.cap *= 2
        self.buf[self.size] = b
        self.size += 1
        return 0

    cdef int _shift_low(self) except -1:
        cdef uint8_t temp
        cdef uint8_t carry
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = <uint8_t> (self.low >> 32)
            temp = self.cache
            while True:
                if self.first:
                    self.first = False
                else:
                    self._put(<uint8_t> (temp + carry))
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = <uint8_t> ((self.low >> 24) & 0xFF)
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8
        return 0

    cdef int _encode(self, uint64_t start, uint64_t size, int precision) except -1:
        cdef uint32_t r = self.rng >> precision
        self.low += start * r
        self.rng = <uint32_t> (size * r)
        while self.rng < TOP:
            self.rng <<= 8
            self._shift_low()
        return 0

    def encode_raw(self, int64_t value, int nbits=RAW_BITS):
        if value < 0 or value >= (<int64_t> 1 << nbits):
            raise OverflowError(f"raw value {value} does not fit in {nbits} bits")
        self._encode(<uint64_t> value, 1, nbits)

    def encode(self, cdf, values, int64_t lo, bint escape, int precision=16):
        cdef const uint32_t[:, ::1] c = np.ascontiguousarray(cdf, dtype=np.uint32)
        cdef const int64_t[::1] v = np.ascontiguousarray(values, dtype=np.int64)
        if c.shape[0] != v.shape[0]:
            raise ValueError("need one cumulative row per value")
        cdef Py_ssize_t slots = c.shape[1] - 1
        cdef Py_ssize_t regular = slots - 1 if escape else slots
        cdef Py_ssize_t i
        cdef int64_t idx, raw
        for i in range(v.shape[0]):
            idx = v[i] - lo
            if 0 <= idx < regular:
                if c[i, idx + 1] <= c[i, idx]:
                    raise ValueError(f"symbol {v[i]} has zero mass")
                self._encode(c[i, idx], c[i, idx + 1] - c[i, idx], precision)
            elif escape:
                self._encode(c[i, slots - 1], c[i, slots] - c[i, slots - 1], precision)
                raw = v[i] + RAW_OFFSET
                if raw < 0 or raw >= (1 << RAW_BITS):
                    raise OverflowError(f"raw value {raw} does not fit in {RAW_BITS} bits")
                self._encode(<uint64_t> raw, 1, RAW_BITS)
            else:
                raise ValueError(f"symbol {v[i]} outside [{lo}, {lo + regular - 1}] and no escape slot")

    def finish(self):
        self.low = (self.low + TOP - 1) & ~(<uint64_t> (TOP - 1))
        self._shift_low()
        self._shift_low()
        cdef Py_ssize_t n = self.size
        while n > 0 and self.buf[n - 1] == 0:
            n -= 1
        return bytes(self.buf[:n])


cdef class RangeDecoder:
    cdef bytes data
    cdef const uint8_t* ptr
    cdef Py_ssize_t n
    cdef Py_ssize_t pos
    cdef uint32_t rng
    cdef uint32_t code

    def __cinit__(self, data):
        self.data = bytes(data)
        self.ptr = self.data
        self.n = len(self.data)
        self.pos = 0
        self.rng = MASK32
        self.code = 0
        cdef int i
        for i in range(4):
            self.code = (self.code << 8) | self._byte()

    cdef inline uint32_t _byte(self):
        cdef uint32_t b = 0
        if self.pos < self.n:
            b = self.ptr[self.pos]
        self.pos += 1
        return b

    cdef inline void _normalize(self):
        while self.rng < TOP:
            self.code = (self.code << 8) | self._byte()
            self.rng <<= 8

    def decode_raw(self, int nbits=RAW_BITS):
        cdef uint32_t r = self.rng >> nbits
        cdef uint32_t v = self.code // r
        if v >= (<uint32_t> 1 << nbits):
            raise ValueError("corrupt stream")
        self.code -= v * r
        self.rng = r
        self._normalize()
        return v

    def decode(self, cdf, int64_t lo, bint escape, int precision=16):
        cdef const uint32_t[:, ::1] c = np.ascontiguousarray(cdf, dtype=np.uint32)
        cdef Py_ssize_t slots = c.shape[1] - 1
        cdef uint32_t total = (<uint32_t> 1) << precision
        out = np.empty(c.shape[0], dtype=np.int64)
        cdef int64_t[::1] o = out
        cdef Py_ssize_t i, a, b, mid
        cdef uint32_t r, v
        for i in range(c.shape[0]):
            r = self.rng >> precision
            v = self.code // r
            if v >= total:
                raise ValueError("corrupt stream")
            a = 0
            b = slots
            while b - a > 1:
                mid = (a + b) >> 1
                if c[i, mid] <= v:
                    a = mid
                else:
                    b = mid
            self.code -= c[i, a] * r
            self.rng = (c[i, a + 1] - c[i, a]) * r
            self._normalize()
            if escape and a == slots - 1:
                o[i] = <int64_t> self.decode_raw() - RAW_OFFSET
            else:
                o[i] = a + lo
        return out

    @property
    def consumed(self):
        return self.pos


def dense_seq(x, w, b):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t P = xv.shape[0], K = xv.shape[1], O = wv.shape[1]
    if wv.shape[0] != K or bv.shape[0] != O:
        raise ValueError("dense_seq shape mismatch")
    out = np.empty((P, O), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t p, k, o
    cdef double xk
    with nogil:
        for p in range(P):
            for o in range(O):
                ov[p, o] = bv[o]
            for k in range(K):
                xk = xv[p, k]
                for o in range(O):
                    ov[p, o] = ov[p, o] + xk * wv[k, o]
    return out
