"""Quantization, discretized location-scale likelihoods and the factorized prior.

Every latent is modelled as a continuous density convolved with a unit-width
uniform, so one likelihood expression serves both the noisy training relaxation
and integer coding::

    p(v) = F((v + 1/2 - mu) / sigma) - F((v - 1/2 - mu) / sigma)
"""
from __future__ import annotations

import enum
import math

import numpy as np
from scipy import special

from .autodiff import Module, Parameter, Tensor, as_tensor, ops

LIKELIHOOD_FLOOR = 1e-9
_LN2 = math.log(2.0)


class DistributionKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LOGISTIC = "logistic"
    LAPLACIAN = "laplacian"


_TENSOR_CDF = {
    DistributionKind.GAUSSIAN: ops.normal_cdf,
    DistributionKind.LOGISTIC: ops.logistic_cdf,
    DistributionKind.LAPLACIAN: ops.laplace_cdf,
}


def cdf(kind: DistributionKind | str, x: np.ndarray) -> np.ndarray:
    """Standardized CDF evaluated on plain arrays (the coding path)."""
    kind = DistributionKind(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is DistributionKind.GAUSSIAN:
        return 0.5 * special.erfc(-x / math.sqrt(2.0))
    if kind is DistributionKind.LOGISTIC:
        return special.expit(x)
    e = np.exp(-np.abs(x))
    return np.where(x < 0, 0.5 * e, 1.0 - 0.5 * e)


def round_half_away(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.floor(np.abs(y) + 0.5)


def quantize(y, mode: str = "round", rng: np.random.Generator | None = None):
    """Round to integers, or add U(-1/2, 1/2) noise (training relaxation).

    Rounding returns a constant tensor (no gradient); the noise path keeps the
    identity gradient to ``y``.
    """
    y = as_tensor(y)
    if mode == "round":
        return Tensor(round_half_away(y.data))
    if mode == "noise":
        rng = rng if rng is not None else np.random.default_rng()
        return y + rng.uniform(-0.5, 0.5, size=y.shape)
    raise ValueError(f"unknown quantization mode {mode!r}")


def relaxed_likelihood(v, mu, sigma, kind: DistributionKind | str = "gaussian",
                       floor: float = LIKELIHOOD_FLOOR) -> Tensor:
    """Probability mass of the unit bin centred on ``v``; broadcasts over inputs."""
    kind = DistributionKind(kind)
    v, mu, sigma = as_tensor(v), as_tensor(mu), as_tensor(sigma)
    F = _TENSOR_CDF[kind]
    # evaluate on the lower tail of the symmetric density to avoid 1 - 1 cancellation
    dist = ops.abs(v - mu)
    upper = F((0.5 - dist) / sigma)
    lower = F((-0.5 - dist) / sigma)
    return ops.lower_bound(upper - lower, floor)


def rate_bits(likelihoods) -> Tensor:
    """Total information content, sum of -log2 p, in bits."""
    p = as_tensor(likelihoods)
    if (p.data <= 0).any() or (p.data > 1).any():
        raise ValueError("likelihoods must lie in (0, 1]")
    return ops.sum(ops.log(p)) * (-1.0 / _LN2)


class FactorizedDensity(Module):
    """Per-channel learned CDF c(x), monotone by construction.

    Each channel applies ``len(filters)+1`` stages of ``softplus(H) @ h + b``;
    all but the last stage are followed by ``h + tanh(a) * tanh(h)``. A final
    sigmoid maps logits to (0, 1). Biases start at zero so c is odd-symmetric
    about 0.5 at initialization.
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0):
        self.channels = channels
        dims = (1, *filters, 1)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices = []
        self.biases = []
        self.factors = []
        for i in range(len(filters) + 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(Parameter(np.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(Parameter(np.zeros((channels, dims[i + 1], 1))))
            if i < len(filters):
                self.factors.append(Parameter(np.zeros((channels, dims[i + 1], 1))))

    def logits(self, x: Tensor) -> Tensor:
        """Pre-sigmoid cumulative for x of shape (channels, 1, points)."""
        h = x
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            h = ops.matmul(ops.softplus(m), h) + b
            if i < len(self.factors):
                h = h + ops.tanh(self.factors[i]) * ops.tanh(h)
        return h

    def logits_np(self, x: np.ndarray) -> np.ndarray:
        """Array version of :meth:`logits` for x of shape (channels, points)."""
        h = np.asarray(x, dtype=np.float64)[:, None, :]
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            h = np.matmul(np.logaddexp(0.0, m.data), h) + b.data
            if i < len(self.factors):
                h = h + np.tanh(self.factors[i].data) * np.tanh(h)
        return h[:, 0, :]

    def cdf_np(self, x: np.ndarray) -> np.ndarray:
        return special.expit(self.logits_np(x))

    def likelihood(self, v, floor: float = LIKELIHOOD_FLOOR) -> Tensor:
        """Bin probabilities c(v+1/2) - c(v-1/2) for v shaped (N, C, H, W)."""
        v = as_tensor(v)
        n, c, h, w = v.shape
        if c != self.channels:
            raise ValueError(f"density has {self.channels} channels, input has {c}")
        flat = ops.reshape(ops.transpose(v, (1, 0, 2, 3)), (c, 1, -1))
        lower = self.logits(flat - 0.5)
        upper = self.logits(flat + 0.5)
        # flip to the side where the sigmoid is small for precision
        sign = np.where(lower.data + upper.data > 0, -1.0, 1.0)
        p = ops.abs(ops.sigmoid(upper * sign) - ops.sigmoid(lower * sign))
        p = ops.lower_bound(p, floor)
        return ops.transpose(ops.reshape(p, (c, n, h, w)), (1, 0, 2, 3))

    def likelihood_np(self, v: np.ndarray, channel: int) -> np.ndarray:
        if not 0 <= channel < self.channels:
            raise IndexError(f"channel {channel} out of range for {self.channels} channels")
        v = np.asarray(v, dtype=np.float64).reshape(1, -1)
        rows = np.repeat(v, self.channels, axis=0)
        lower = self.logits_np(rows - 0.5)[channel]
        upper = self.logits_np(rows + 0.5)[channel]
        sign = np.where(lower + upper > 0, -1.0, 1.0)
        p = np.abs(special.expit(sign * upper) - special.expit(sign * lower))
        return np.maximum(p, LIKELIHOOD_FLOOR)



def discretized_pmf(mu, sigma, kind: DistributionKind | str, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin masses for integers ``lo..hi`` plus the combined mass of both tails.

    ``mu`` and ``sigma`` broadcast to a common shape ``S``; returns ``pmf`` of
    shape ``S + (hi - lo + 1,)`` and ``tail`` of shape ``S``. Each side of the
    mean is evaluated on its small-CDF tail so that ``pmf.sum(-1) + tail`` is 1
    to within rounding.
    """
    mu = np.asarray(mu, dtype=np.float64)[..., None]
    sigma = np.asarray(sigma, dtype=np.float64)[..., None]
    if (sigma <= 0).any():
        raise ValueError("scale must be positive")
    k = np.arange(lo, hi + 1, dtype=np.float64)
    below = cdf(kind, (k + 0.5 - mu) / sigma) - cdf(kind, (k - 0.5 - mu) / sigma)
    above = cdf(kind, (mu - k + 0.5) / sigma) - cdf(kind, (mu - k - 0.5) / sigma)
    pmf = np.where(k < mu, below, above)
    tail = cdf(kind, (lo - 0.5 - mu) / sigma) + cdf(kind, (mu - hi - 0.5) / sigma)
    return pmf, tail[..., 0]


def factorized_pmf(density: FactorizedDensity, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel bin masses over ``lo..hi`` and tail mass for a factorized density."""
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    logits = density.logits_np(np.repeat(edges[None], density.channels, axis=0))
    # differences of the sigmoid taken on whichever side is numerically small
    lower = special.expit(logits)
    upper = special.expit(-logits)
    pmf = np.where(logits[:, :-1] + logits[:, 1:] > 0, upper[:, :-1] - upper[:, 1:], lower[:, 1:] - lower[:, :-1])
    return pmf, lower[:, 0] + upper[:, -1]
