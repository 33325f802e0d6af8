"""Analysis/synthesis transforms, hyperprior, context model and entropy parameters.

Layer stacks follow the reference architecture with channel counts expressed
in terms of the internal width ``N`` and the bottleneck width ``M``:

=================  ==========================================================
encoder            conv5 s2 N, GDN, conv5 s2 N, GDN, conv5 s2 N, GDN, conv5 s2 M
decoder            deconv5 s2 N, IGDN, ..., deconv5 s2 3
hyper encoder      conv3 s1 N, LReLU, conv5 s2 N, LReLU, conv5 s2 N
hyper decoder      deconv5 s2 N, LReLU, deconv5 s2 3N/2, LReLU, deconv3 s1 2M
context model      masked k x k, 2M
entropy params     1x1 10M/3, LReLU, 1x1 8M/3, LReLU, 1x1 2M
=================  ==========================================================
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import CONTEXT_MASKS, GDN, Conv, LeakyReLU, Module, Sequential, Tensor, ops
from .entropy import DistributionKind, FactorizedDensity, quantize, relaxed_likelihood

LEAKY_SLOPE = 0.2


class ModelVariant(str, enum.Enum):
    FACTORIZED = "fully-factorized"
    SCALE_ONLY = "scale-only"
    MEAN_SCALE = "mean-scale"
    CONTEXT_ONLY = "context-only"
    COMBINED = "combined"

    @property
    def code(self) -> int:
        return list(ModelVariant).index(self)

    @classmethod
    def from_code(cls, code: int) -> "ModelVariant":
        return list(cls)[code]

    @property
    def has_hyperprior(self) -> bool:
        return self in (ModelVariant.SCALE_ONLY, ModelVariant.MEAN_SCALE, ModelVariant.COMBINED)

    @property
    def has_context(self) -> bool:
        return self in (ModelVariant.CONTEXT_ONLY, ModelVariant.COMBINED)


@dataclass(frozen=True)
class ModelConfig:
    M: int = 32
    N: int = 32
    context_kernel: str = "5"
    distribution: str = "gaussian"
    variant: str = "combined"
    scale_floor: float = 0.11

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("channel counts must be positive")
        if self.context_kernel not in CONTEXT_MASKS:
            raise ValueError(f"unknown context kernel {self.context_kernel!r}")
        if self.scale_floor <= 0:
            raise ValueError("scale floor must be positive")
        DistributionKind(self.distribution)
        ModelVariant(self.variant)

    @property
    def model_variant(self) -> ModelVariant:
        return ModelVariant(self.variant)

    @property
    def kind(self) -> DistributionKind:
        return DistributionKind(self.distribution)

    @property
    def ep_widths(self) -> tuple[int, int, int]:
        return max(1, round(self.M * 10 / 3)), max(1, round(self.M * 8 / 3)), 2 * self.M

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


PAPER_CONFIG = ModelConfig(M=192, N=192)


@dataclass
class EntropyParams:
    mu: Tensor
    sigma: Tensor
    psi: Tensor | None = None
    phi: Tensor | None = None


def analysis_transform(cfg: ModelConfig, rng) -> Sequential:
    N, M = cfg.N, cfg.M
    return Sequential(
        Conv(3, N, 5, 2, rng=rng), GDN(N),
        Conv(N, N, 5, 2, rng=rng), GDN(N),
        Conv(N, N, 5, 2, rng=rng), GDN(N),
        Conv(N, M, 5, 2, rng=rng),
    )


def synthesis_transform(cfg: ModelConfig, rng) -> Sequential:
    N, M = cfg.N, cfg.M
    return Sequential(
        Conv(M, N, 5, 2, "deconv", rng=rng), GDN(N, inverse=True),
        Conv(N, N, 5, 2, "deconv", rng=rng), GDN(N, inverse=True),
        Conv(N, N, 5, 2, "deconv", rng=rng), GDN(N, inverse=True),
        Conv(N, 3, 5, 2, "deconv", rng=rng),
    )


def hyper_analysis(cfg: ModelConfig, rng) -> Sequential:
    N, M = cfg.N, cfg.M
    return Sequential(
        Conv(M, N, 3, 1, rng=rng), LeakyReLU(LEAKY_SLOPE),
        Conv(N, N, 5, 2, rng=rng), LeakyReLU(LEAKY_SLOPE),
        Conv(N, N, 5, 2, rng=rng),
    )


def hyper_synthesis(cfg: ModelConfig, rng) -> Sequential:
    N, M = cfg.N, cfg.M
    mid = max(1, round(1.5 * N))
    return Sequential(
        Conv(N, N, 5, 2, "deconv", rng=rng), LeakyReLU(LEAKY_SLOPE),
        Conv(N, mid, 5, 2, "deconv", rng=rng), LeakyReLU(LEAKY_SLOPE),
        Conv(mid, 2 * M, 3, 1, "deconv", rng=rng),
    )


def context_model(cfg: ModelConfig, rng) -> Conv:
    mask = CONTEXT_MASKS[cfg.context_kernel]()
    return Conv(cfg.M, 2 * cfg.M, mask.shape[0], 1, "masked", mask=mask, rng=rng)


def entropy_parameters_net(cfg: ModelConfig, in_ch: int, rng) -> Sequential:
    a, b, out = cfg.ep_widths
    return Sequential(
        Conv(in_ch, a, 1, rng=rng), LeakyReLU(LEAKY_SLOPE),
        Conv(a, b, 1, rng=rng), LeakyReLU(LEAKY_SLOPE),
        Conv(b, out, 1, rng=rng),
    )


class CompressionModel(Module):
    """All sub-networks a variant needs; absent ones are ``None``."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        v = config.model_variant
        self.g_a = analysis_transform(config, rng)
        self.g_s = synthesis_transform(config, rng)
        self.h_a = hyper_analysis(config, rng) if v.has_hyperprior else None
        self.h_s = hyper_synthesis(config, rng) if v.has_hyperprior else None
        self.context = context_model(config, rng) if v.has_context else None
        if v is ModelVariant.FACTORIZED:
            self.ep = None
            self.y_density = FactorizedDensity(config.M)
            self.z_density = None
        else:
            in_ch = 2 * config.M * (int(v.has_hyperprior) + int(v.has_context))
            self.ep = entropy_parameters_net(config, in_ch, rng)
            self.y_density = None
            self.z_density = FactorizedDensity(config.N) if v.has_hyperprior else None
        self.name_parameters()

    @property
    def variant(self) -> ModelVariant:
        return self.config.model_variant

    def entropy_parameters(self, psi: Tensor | None, phi: Tensor | None) -> EntropyParams:
        """Map hyper features and/or context features to (mu, sigma)."""
        v = self.variant
        if v.has_hyperprior and v.has_context:
            if psi.shape[2:] != phi.shape[2:]:
                raise ValueError(f"spatial mismatch between psi {psi.shape} and phi {phi.shape}")
            features = ops.concat([psi, phi], axis=1)
        elif v.has_hyperprior:
            features = psi
        elif v.has_context:
            features = phi
        else:
            raise ValueError("the fully factorized variant has no conditional entropy model")
        raw = self.ep(features)
        mu, raw_scale = ops.split(raw, 2, axis=1)
        if v is ModelVariant.SCALE_ONLY:
            mu = Tensor(np.zeros(mu.shape))
        sigma = ops.softplus(raw_scale) + self.config.scale_floor
        return EntropyParams(mu=mu, sigma=sigma, psi=psi, phi=phi)

    def forward_train(self, x: Tensor, rng: np.random.Generator, mode: str = "noise") -> dict:
        """Relaxed forward pass; returns reconstruction and per-element likelihoods."""
        y = self.g_a(x)
        y_t = quantize(y, mode, rng)
        z_lik = None
        if self.variant is ModelVariant.FACTORIZED:
            y_lik = self.y_density.likelihood(y_t)
        else:
            psi = phi = None
            if self.variant.has_hyperprior:
                z = self.h_a(y)
                z_t = quantize(z, mode, rng)
                z_lik = self.z_density.likelihood(z_t)
                psi = self.h_s(z_t)
            if self.variant.has_context:
                phi = self.context(y_t)
            params = self.entropy_parameters(psi, phi)
            y_lik = relaxed_likelihood(y_t, params.mu, params.sigma, self.config.kind)
        x_hat = self.g_s(y_t)
        return {"x_hat": x_hat, "y": y, "y_likelihoods": y_lik, "z_likelihoods": z_lik}
