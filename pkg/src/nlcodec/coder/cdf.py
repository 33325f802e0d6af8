"""Integer cumulative tables: the contract between probability models and the coder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PRECISION = 16


@dataclass(frozen=True)
class CdfTable:
    """Quantized CDF over symbols ``lo..hi``; ``cumulative[-1] == 2**precision``.

    With ``escape`` an extra final slot is reserved for out-of-range symbols,
    so ``cumulative`` has ``hi - lo + 3`` entries instead of ``hi - lo + 2``.
    """

    precision: int
    lo: int
    hi: int
    cumulative: np.ndarray
    escape: bool = False

    @property
    def escape_index(self) -> int | None:
        return self.hi - self.lo + 1 if self.escape else None

    def masses(self) -> np.ndarray:
        return np.diff(self.cumulative.astype(np.int64))


def quantize_pmfs(pmf: np.ndarray, precision: int = DEFAULT_PRECISION) -> np.ndarray:
    """Rows of probabilities -> rows of cumulative counts summing to 2**precision.

    Every slot keeps a mass of at least 1 so any symbol stays decodable; the
    rounding surplus or deficit is settled on the row's largest slot.
    """
    pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    if not 1 <= precision <= 24:
        raise ValueError(f"precision {precision} out of range")
    if (pmf < 0).any() or not np.isfinite(pmf).all():
        raise ValueError("pmf entries must be finite and non-negative")
    total = 1 << precision
    n, slots = pmf.shape
    if slots > total:
        raise ValueError(f"{slots} symbols cannot each get mass 1 at {precision}-bit precision")
    q = np.maximum(np.floor(pmf * total + 0.5).astype(np.int64), 1)
    diff = total - q.sum(axis=1)
    rows = np.arange(n)
    while (diff != 0).any():
        top = q.argmax(axis=1)
        grow = diff > 0
        q[rows[grow], top[grow]] += diff[grow]
        diff[grow] = 0
        shrink = diff < 0
        take = np.minimum(-diff, q[rows, top] - 1) * shrink
        q[rows, top] -= take
        diff += take
    cum = np.zeros((n, slots + 1), dtype=np.uint32)
    cum[:, 1:] = np.cumsum(q, axis=1)
    return cum


def build_cdf(pmf, precision: int = DEFAULT_PRECISION, bounds: tuple[int, int] | None = None,
              escape: bool = False) -> CdfTable:
    """Quantize one pmf over ``bounds`` (default ``0..len(pmf)-1``).

    With ``escape`` the mass missing from the pmf becomes the escape slot.
    """
    pmf = np.asarray(pmf, dtype=np.float64).ravel()
    if not 8 <= precision <= 16:
        raise ValueError("precision must be between 8 and 16 bits")
    lo, hi = bounds if bounds is not None else (0, len(pmf) - 1)
    if hi - lo + 1 != len(pmf):
        raise ValueError(f"bounds {lo}..{hi} do not match {len(pmf)} probabilities")
    if pmf.sum() > 1 + 1e-9:
        raise ValueError("pmf sums to more than 1")
    if escape:
        pmf = np.append(pmf, max(0.0, 1.0 - pmf.sum()))
    cum = quantize_pmfs(pmf[None], precision)[0]
    return CdfTable(precision=precision, lo=lo, hi=hi, cumulative=cum, escape=escape)
