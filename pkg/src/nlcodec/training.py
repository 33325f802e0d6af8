"""Rate-distortion training, Adam, and the checkpoint format.

Checkpoint layout (little-endian)::

    b"NLCK" | u16 version | u32 config length | config JSON
    | u32 record count | records | u32 CRC32 of the record bytes

    record := u16 name length | name (utf-8) | u8 ndim | ndim x u32 | float64 values

Model parameters are stored under their module path; optimizer moments under
``adam.m/<path>`` and ``adam.v/<path>``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward, ops
from .data import Corpus, sample_patch
from .entropy import rate_bits
from .networks import CompressionModel, ModelConfig, ModelVariant

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NLCK"
CHECKPOINT_VERSION = 1
DISTORTION_SCALE = 255.0 ** 2


class CheckpointError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    lmbda: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 8
    patch_size: int = 64
    steps: int = 2000
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    log_every: int = 50

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if not self.lmbda > 0:
            raise ValueError("lambda must be positive")
        if self.patch_size % 64:
            raise ValueError("patch size must be a multiple of 64")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch size must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class RDLoss:
    loss: Tensor
    bpp_latent: float
    bpp_hyper: float
    mse: float


def rd_loss(x, model: CompressionModel, lmbda: float, rng: np.random.Generator, mode: str = "noise") -> RDLoss:
    """Rate (latents + hyper-latents, bits per pixel) + lambda * 255^2 * MSE."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    out = model.forward_train(x, rng, mode)
    pixels = x.shape[0] * x.shape[2] * x.shape[3]
    bpp_y = rate_bits(out["y_likelihoods"]) * (1.0 / pixels)
    total = bpp_y
    bpp_z = 0.0
    if out["z_likelihoods"] is not None:
        rate_z = rate_bits(out["z_likelihoods"]) * (1.0 / pixels)
        total = total + rate_z
        bpp_z = rate_z.item()
    mse = ops.mean(ops.square(x - out["x_hat"]))
    if lmbda:
        total = total + mse * (lmbda * DISTORTION_SCALE)
    return RDLoss(total, bpp_y.item(), bpp_z, mse.item())


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.assign(p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# -- checkpoints -------------------------------------------------------------

def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    key = name.encode()
    return (struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())


def _parse_records(buf: memoryview, count: int) -> tuple[dict[str, np.ndarray], int]:
    pos = 0
    out = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = bytes(buf[pos:pos + klen]).decode()
        pos += klen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        out[name] = np.frombuffer(buf[pos:pos + 8 * n], dtype="<f8").reshape(shape).copy()
        pos += 8 * n
    return out, pos


def model_records(model: CompressionModel) -> bytes:
    return b"".join(_record(name, p.data) for name, p in model.named_parameters())


def model_hash(model: CompressionModel) -> bytes:
    """16-byte digest of the canonical model bytes (config + parameters)."""
    h = hashlib.blake2b(digest_size=16)
    h.update(json.dumps(model.config.to_dict(), sort_keys=True).encode())
    h.update(model_records(model))
    return h.digest()


@dataclass
class Checkpoint:
    model: CompressionModel
    train_config: TrainingConfig | None = None
    step: int = 0
    optimizer: Adam | None = None
    digest: int = 0
    history: list = field(default_factory=list)

    @property
    def model_hash(self) -> bytes:
        return model_hash(self.model)


def save_checkpoint(path, model: CompressionModel, train_config: TrainingConfig | None = None,
                    optimizer: Adam | None = None, step: int = 0) -> int:
    """Write a checkpoint; returns the record digest."""
    meta = {
        "model": model.config.to_dict(),
        "training": train_config.to_dict() if train_config else None,
        "step": step,
        "adam_t": optimizer.t if optimizer else 0,
    }
    records = [_record(name, p.data) for name, p in model.named_parameters()]
    if optimizer is not None:
        records += [_record(f"adam.m/{k}", v) for k, v in optimizer.m.items()]
        records += [_record(f"adam.v/{k}", v) for k, v in optimizer.v.items()]
    body = b"".join(records)
    digest = zlib.crc32(body)
    cfg = json.dumps(meta, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION))
    out.write(struct.pack("<I", len(cfg)) + cfg)
    out.write(struct.pack("<I", len(records)) + body + struct.pack("<I", digest))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(out.getvalue())
    return digest


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    try:
        (version,) = struct.unpack_from("<H", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack_from("<I", raw, 6)
        meta = json.loads(raw[10:10 + clen])
        pos = 10 + clen
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors, used = _parse_records(memoryview(raw)[pos:], count)
        body = raw[pos:pos + used]
        (digest,) = struct.unpack_from("<I", raw, pos + used)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if zlib.crc32(body) != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    model = CompressionModel(ModelConfig.from_dict(meta["model"]))
    for name, p in model.named_parameters():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter {name}")
        p.assign(tensors[name])
    tc = TrainingConfig.from_dict(meta["training"]) if meta.get("training") else None
    opt = None
    if meta.get("adam_t"):
        opt = Adam(model.parameters(), lr=tc.learning_rate if tc else 1e-3)
        opt.t = meta["adam_t"]
        for name in opt.m:
            opt.m[name] = tensors[f"adam.m/{name}"]
            opt.v[name] = tensors[f"adam.v/{name}"]
    return Checkpoint(model=model, train_config=tc, step=meta.get("step", 0), optimizer=opt, digest=digest)


# -- training loop -----------------------------------------------------------

def train(config: TrainingConfig, corpus: Corpus, out_path=None,
          log_sink: Callable[[dict], None] | None = None, model: CompressionModel | None = None) -> Checkpoint:
    """Minimize the RD loss with Adam on random patches; returns the final checkpoint.

    ``log_sink`` receives one dict per logged step (step, loss, bpp-latent,
    bpp-hyper, mse). Three consecutive non-finite steps abort training.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    model = model if model is not None else CompressionModel(config.model, seed=config.seed)
    opt = Adam(model.parameters(), lr=config.learning_rate)
    data_rng = np.random.default_rng([config.seed, 1])
    noise_rng = np.random.default_rng([config.seed, 2])
    history = []
    bad = 0
    for step in range(1, config.steps + 1):
        x = sample_patch(corpus, data_rng, config.patch_size, config.batch_size)
        opt.zero_grad()
        try:
            res = rd_loss(x, model, config.lmbda, noise_rng)
            backward(res.loss)
            grads_ok = all(np.isfinite(p.grad).all() for p in opt.params)
        except NonFiniteError as exc:
            log.warning("step %d: %s", step, exc)
            grads_ok = False
            res = None
        if not grads_ok:
            bad += 1
            if bad >= 3:
                raise TrainingDiverged(f"three consecutive non-finite steps ending at step {step}")
            continue
        bad = 0
        opt.step()
        record = {
            "step": step, "loss": res.loss.item(), "bpp_latent": res.bpp_latent,
            "bpp_hyper": res.bpp_hyper, "mse": res.mse,
        }
        history.append(record)
        if log_sink is not None and (step % config.log_every == 0 or step == config.steps):
            log_sink(record)
    ckpt = Checkpoint(model=model, train_config=config, step=config.steps, optimizer=opt, history=history)
    if out_path is not None:
        ckpt.digest = save_checkpoint(out_path, model, config, opt, config.steps)
    return ckpt


def smoothed_losses(history: list[dict], fraction: float = 0.1) -> tuple[float, float]:
    """Mean loss over the first and last ``fraction`` of logged steps."""
    losses = np.array([h["loss"] for h in history])
    k = max(1, int(math.ceil(len(losses) * fraction)))
    return float(losses[:k].mean()), float(losses[-k:].mean())
