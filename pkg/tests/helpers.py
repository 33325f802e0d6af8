"""Test utilities: finite-difference gradient checks, op cases, small and trained models.

Trained checkpoints are keyed by their full training configuration and kept in
``.acceptance_cache/`` at the repository root (override with the
``NLCODEC_CACHE`` environment variable), so only the first run pays for
training.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from nlcodec.autodiff import Parameter, Tensor, backward, ops
from nlcodec.autodiff import causal_mask, conv2d, gdn, masked_conv2d, transposed_conv2d
from nlcodec.data import load_image_corpus, write_synthetic_corpus
from nlcodec.networks import CompressionModel, ModelConfig, ModelVariant
from nlcodec.training import TrainingConfig, load_checkpoint, train

ROOT = Path(__file__).resolve().parent.parent
CACHE = Path(os.environ.get("NLCODEC_CACHE", ROOT / ".acceptance_cache"))
ALL_VARIANTS = [v.value for v in ModelVariant]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


def numeric_grad(f, arrays, i, eps=1e-6) -> np.ndarray:
    """Central differences of scalar ``f(*arrays)`` with respect to ``arrays[i]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    x = base[i]
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f(*base)
        x[idx] = old - eps
        down = f(*base)
        x[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def gradcheck(fn, inputs, rng, eps=1e-6) -> float:
    """Worst relative error between backprop and central differences over all inputs.

    ``fn`` maps tensors to a tensor; a fixed random projection turns the output
    into a scalar.
    """
    params = [Parameter(x) for x in inputs]
    out = fn(*params)
    w = rng.standard_normal(out.shape)
    backward(ops.sum(out * w))
    scalar = lambda *xs: float((fn(*[Tensor(x) for x in xs]).data * w).sum())
    return max(relative_error(p.grad, numeric_grad(scalar, inputs, i, eps)) for i, p in enumerate(params))


def _away_from(x, points, margin=1e-2):
    """Push samples out of a small band around non-differentiable points."""
    for p in points:
        d = x - p
        x = np.where(np.abs(d) < margin, p + np.where(d >= 0, 2 * margin, -2 * margin), x)
    return x


def _positive(rng, shape, lo=0.5, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


# name -> builder(rng) returning (fn, inputs); inputs avoid kinks and domain edges
OP_CASES = {
    "add": lambda r: (ops.add, [r.normal(size=(3, 4)), r.normal(size=(4,))]),
    "sub": lambda r: (ops.sub, [r.normal(size=(3, 1)), r.normal(size=(3, 4))]),
    "mul": lambda r: (ops.mul, [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
    "div": lambda r: (ops.div, [r.normal(size=(2, 3)), _positive(r, (2, 3)) * r.choice([-1, 1], (2, 3))]),
    "neg": lambda r: (ops.neg, [r.normal(size=(5,))]),
    "power": lambda r: (lambda a: ops.power(a, 1.7), [_positive(r, (2, 3))]),
    "square": lambda r: (ops.square, [r.normal(size=(2, 3))]),
    "sqrt": lambda r: (ops.sqrt, [_positive(r, (2, 3))]),
    "exp": lambda r: (ops.exp, [r.normal(size=(2, 3))]),
    "log": lambda r: (ops.log, [_positive(r, (2, 3))]),
    "abs": lambda r: (ops.abs, [_away_from(r.normal(size=(2, 3)), [0.0])]),
    "tanh": lambda r: (ops.tanh, [r.normal(size=(2, 3))]),
    "sigmoid": lambda r: (ops.sigmoid, [r.normal(0, 3, size=(2, 3))]),
    "softplus": lambda r: (ops.softplus, [r.normal(0, 3, size=(2, 3))]),
    "leaky_relu": lambda r: (ops.leaky_relu, [_away_from(r.normal(size=(2, 3)), [0.0])]),
    "lower_bound": lambda r: (lambda a: ops.lower_bound(a, -5.0), [r.uniform(-4, 4, size=(2, 3))]),
    "normal_cdf": lambda r: (ops.normal_cdf, [r.normal(0, 2, size=(2, 3))]),
    "laplace_cdf": lambda r: (ops.laplace_cdf, [_away_from(r.normal(0, 2, size=(2, 3)), [0.0])]),
    "logistic_cdf": lambda r: (ops.logistic_cdf, [r.normal(0, 2, size=(2, 3))]),
    "sum": lambda r: (lambda a: ops.sum(a, axis=1, keepdims=True), [r.normal(size=(3, 4))]),
    "mean": lambda r: (lambda a: ops.mean(a, axis=0), [r.normal(size=(3, 4))]),
    "reshape": lambda r: (lambda a: ops.reshape(a, (4, 3)), [r.normal(size=(3, 4))]),
    "getitem": lambda r: (lambda a: ops.getitem(a, (slice(1, 3), [0, 2, 2])), [r.normal(size=(3, 4))]),
    "concat": lambda r: (lambda a, b: ops.concat([a, b], axis=1), [r.normal(size=(2, 2)), r.normal(size=(2, 3))]),
    "split": lambda r: (lambda a: ops.split(a, 2, axis=1)[1] * 2.0 + ops.split(a, 2, axis=1)[0], [r.normal(size=(2, 4))]),
    "where_const": lambda r: (lambda a: ops.where_const(np.array([[True, False, True]]), a, 0.5), [r.normal(size=(2, 3))]),
    "matmul": lambda r: (ops.matmul, [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 2))]),
    "transpose": lambda r: (lambda a: ops.transpose(a, (2, 0, 1)), [r.normal(size=(2, 3, 4))]),
    "conv2d": lambda r: (lambda x, k: conv2d(x, k, 2), [r.normal(size=(2, 2, 7, 6)), r.normal(size=(3, 2, 5, 5))]),
    "conv2d_stride1": lambda r: (lambda x, k: conv2d(x, k, 1), [r.normal(size=(1, 2, 5, 5)), r.normal(size=(2, 2, 3, 3))]),
    "transposed_conv2d": lambda r: (lambda y, k: transposed_conv2d(y, k, 2), [r.normal(size=(1, 2, 3, 4)), r.normal(size=(2, 3, 5, 5))]),
    "masked_conv2d": lambda r: (lambda x, k: masked_conv2d(x, k, causal_mask(5)), [r.normal(size=(1, 2, 6, 6)), r.normal(size=(3, 2, 5, 5))]),
    "gdn": lambda r: (lambda x, b, g: gdn(x, b, g), [r.normal(size=(2, 3, 3, 3)), _positive(r, (3,)), r.uniform(0.01, 0.3, size=(3, 3))]),
    "igdn": lambda r: (lambda x, b, g: gdn(x, b, g, inverse=True), [r.normal(size=(2, 3, 3, 3)), _positive(r, (3,)), r.uniform(0.01, 0.3, size=(3, 3))]),
}


def loss_gradcheck(variant: str, seed: int, lmbda: float | None = None, eps: float = 1e-6) -> float:
    """Relative error of the RD-loss directional derivative along a random parameter direction.

    The uniform noise is frozen by reseeding before every evaluation. By
    default lambda is chosen so that rate and distortion contribute equally,
    otherwise the distortion term of an untrained model swamps the rate.
    """
    from nlcodec.training import rd_loss
    r = np.random.default_rng(seed)
    model = perturbed(small_model(variant, seed=seed), seed=seed, scale=0.1)
    x = r.random((1, 3, 64, 64))
    noise_seed = int(r.integers(2**31))
    if lmbda is None:
        probe = rd_loss(x, model, 0.0, np.random.default_rng(noise_seed))
        lmbda = (probe.bpp_latent + probe.bpp_hyper) / (255.0 ** 2 * probe.mse)
    params = [p for _, p in model.named_parameters()]
    direction = [r.standard_normal(p.shape) for p in params]
    for p in params:
        p.zero_grad()
    backward(rd_loss(x, model, lmbda, np.random.default_rng(noise_seed)).loss)
    analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, direction))
    base = [p.data.copy() for p in params]

    def loss_at(t):
        for p, b, d in zip(params, base, direction):
            p.assign(b + t * d)
        return rd_loss(x, model, lmbda, np.random.default_rng(noise_seed)).loss.item()

    numeric = (loss_at(eps) - loss_at(-eps)) / (2 * eps)
    loss_at(0.0)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


def small_model(variant="combined", context="5", M=8, N=8, seed=0, distribution="gaussian"):
    cfg = ModelConfig(M=M, N=N, variant=variant, context_kernel=context, distribution=distribution)
    return CompressionModel(cfg, seed=seed)


def perturbed(model: CompressionModel, seed: int = 0, scale: float = 0.3) -> CompressionModel:
    """Jitter every parameter so that tests do not rely on symmetric initialization."""
    r = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.assign(p.data + scale * r.standard_normal(p.shape) * (np.abs(p.data).mean() + 0.1))
    return model


def corpus_dir(name: str, seed: int, count: int = 20, size: int = 256) -> Path:
    path = CACHE / "corpus" / name
    marker = path / ".complete"
    if not marker.exists():
        write_synthetic_corpus(path, count, size, seed)
        marker.write_text(json.dumps({"seed": seed, "count": count, "size": size}))
    return path


def trained_checkpoint(config: TrainingConfig, corpus_name: str = "train"):
    """Train (or reuse a cached run of) ``config`` on the procedural training corpus."""
    key = hashlib.sha1(json.dumps({"cfg": config.to_dict(), "corpus": corpus_name}, sort_keys=True).encode())
    path = CACHE / "models" / f"{key.hexdigest()[:16]}.ckpt"
    if path.exists():
        ckpt = load_checkpoint(path)
        ckpt.history = json.loads(path.with_suffix(".history.json").read_text())
        return ckpt
    corpus = load_image_corpus(corpus_dir(corpus_name, seed=1))
    ckpt = train(config, corpus, out_path=path)
    path.with_suffix(".history.json").write_text(json.dumps(ckpt.history))
    return ckpt
