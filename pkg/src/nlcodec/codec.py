"""Bitstream container, encoder pipeline and the autoregressive latent decoder.

Container layout (little-endian)::

    b"NLC1" | version u8 | variant u8 | M u16 | width u32 | height u32
    | model hash (16 bytes) | hyper length u32 | latent length u32
    | CRC32 u32 | hyper segment | latent segment

The CRC covers every header field before it together with both segments, so
any corrupted byte is caught before decoding starts.

Entropy parameters on the coding path are evaluated with ``dense_seq``, whose
fixed accumulation order makes each position's result independent of how many
positions are evaluated together. The encoder evaluates all positions at once;
the decoder evaluates one position (or one wavefront) at a time and still
obtains bit-identical probability tables.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .coder import RangeDecoder, RangeEncoder, dense_seq, quantize_pmfs
from .data import to_uint8, to_unit
from .entropy import LIKELIHOOD_FLOOR, DistributionKind, cdf, discretized_pmf, factorized_pmf, round_half_away
from .networks import LEAKY_SLOPE, CompressionModel, ModelVariant
from .training import model_hash

MAGIC = b"NLC1"
FORMAT_VERSION = 1
PRECISION = 16
LATENT_BOUNDS = (-64, 63)
HYPER_BOUNDS = (-32, 31)
BLOCK = 64

_FIELDS = struct.Struct("<4sBBHII16sII")
_CRC = struct.Struct("<I")
HEADER_SIZE = _FIELDS.size + _CRC.size


class BitstreamError(ValueError):
    """Malformed, truncated or corrupted compressed data."""


class ModelMismatch(BitstreamError):
    """The stream was produced with a different model than the one supplied."""


@dataclass(frozen=True)
class BitstreamHeader:
    variant: int
    M: int
    width: int
    height: int
    model_hash: bytes
    hyper_len: int
    latent_len: int
    version: int = FORMAT_VERSION

    @property
    def padded_size(self) -> tuple[int, int]:
        return _ceil_to(self.height, BLOCK), _ceil_to(self.width, BLOCK)

    def pack(self) -> bytes:
        try:
            return _FIELDS.pack(MAGIC, self.version, self.variant, self.M, self.width, self.height,
                                self.model_hash, self.hyper_len, self.latent_len)
        except struct.error as exc:
            raise OverflowError(f"header field out of range: {exc}") from exc


@dataclass(frozen=True)
class Bitstream:
    header: BitstreamHeader
    hyper: bytes
    latent: bytes

    def to_bytes(self) -> bytes:
        fields = self.header.pack()
        crc = zlib.crc32(self.latent, zlib.crc32(self.hyper, zlib.crc32(fields)))
        return fields + _CRC.pack(crc) + self.hyper + self.latent

    def __len__(self) -> int:
        return HEADER_SIZE + len(self.hyper) + len(self.latent)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        data = bytes(data)
        if len(data) < HEADER_SIZE:
            raise BitstreamError(f"stream of {len(data)} bytes is shorter than the header")
        magic, version, variant, M, width, height, digest, hyper_len, latent_len = _FIELDS.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError("not a compressed image (bad magic)")
        if version != FORMAT_VERSION:
            raise BitstreamError(f"unsupported format version {version}")
        end = HEADER_SIZE + hyper_len + latent_len
        if len(data) < end:
            raise BitstreamError(f"truncated stream: {len(data)} of {end} bytes")
        if len(data) > end:
            raise BitstreamError(f"{len(data) - end} trailing bytes after the latent segment")
        hyper = data[HEADER_SIZE:HEADER_SIZE + hyper_len]
        latent = data[HEADER_SIZE + hyper_len:end]
        (crc,) = _CRC.unpack_from(data, _FIELDS.size)
        if zlib.crc32(latent, zlib.crc32(hyper, zlib.crc32(data[:_FIELDS.size]))) != crc:
            raise BitstreamError("checksum mismatch")
        if width < 1 or height < 1 or variant >= len(ModelVariant):
            raise BitstreamError("invalid header fields")
        header = BitstreamHeader(variant, M, width, height, digest, hyper_len, latent_len, version)
        return cls(header, hyper, latent)


def _ceil_to(n: int, block: int) -> int:
    return -(-n // block) * block


def pad_image(x: np.ndarray, block: int = BLOCK) -> tuple[np.ndarray, tuple[int, int]]:
    """Edge-replicate ``(B, C, H, W)`` up to multiples of ``block``; returns (padded, (H, W))."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise ValueError("image must be at least 1x1")
    pad = [(0, 0)] * (x.ndim - 2) + [(0, _ceil_to(h, block) - h), (0, _ceil_to(w, block) - w)]
    return np.pad(x, pad, mode="edge"), (h, w)


# -- entropy parameters on the coding path ------------------------------------

class ParamEngine:
    """Numpy mirror of the context model and entropy-parameter network.

    Positions are ``(P, 2)`` integer arrays of latent-grid coordinates. The
    latent grid is held with a zero border of ``half`` cells on every side so
    that off-grid context taps read zeros.
    """

    def __init__(self, model: CompressionModel):
        cfg = model.config
        self.variant = model.variant
        self.M = cfg.M
        self.kind = DistributionKind(cfg.distribution)
        self.scale_floor = cfg.scale_floor
        self.half = 0
        if self.variant.has_context:
            mask = model.context.mask
            self.half = mask.shape[0] // 2
            self.taps = np.argwhere(mask > 0)
            w = model.context.weight.data
            self.ctx_w = np.ascontiguousarray(np.concatenate([w[:, :, ky, kx].T for ky, kx in self.taps]))
            self.ctx_b = model.context.bias.data.copy()
        self.layers = []
        if model.ep is not None:
            for layer in model.ep.layers:
                if hasattr(layer, "weight"):
                    self.layers.append((np.ascontiguousarray(layer.weight.data[:, :, 0, 0].T), layer.bias.data.copy()))

    def empty_grid(self, h: int, w: int) -> np.ndarray:
        return np.zeros((self.M, h + 2 * self.half, w + 2 * self.half))

    def set_grid(self, grid: np.ndarray, pos: np.ndarray, values: np.ndarray) -> None:
        """Write ``values`` of shape (P, M) at ``pos``."""
        grid[:, pos[:, 0] + self.half, pos[:, 1] + self.half] = values.T

    def context_features(self, grid: np.ndarray, pos: np.ndarray) -> np.ndarray:
        rows = pos[:, 0, None] + self.taps[None, :, 0]
        cols = pos[:, 1, None] + self.taps[None, :, 1]
        taps = grid[:, rows, cols]  # (M, P, T)
        x = taps.transpose(1, 2, 0).reshape(len(pos), -1)
        return dense_seq(x, self.ctx_w, self.ctx_b)

    def params(self, psi: np.ndarray | None, phi: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """(P, 2M) hyper and/or context features -> (mu, sigma), each (P, M)."""
        parts = [f for f in (psi, phi) if f is not None]
        h = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        for i, (w, b) in enumerate(self.layers):
            h = dense_seq(h, w, b)
            if i < len(self.layers) - 1:
                h = np.where(h >= 0, h, LEAKY_SLOPE * h)
        mu = h[:, :self.M]
        if self.variant is ModelVariant.SCALE_ONLY:
            mu = np.zeros_like(mu)
        sigma = np.logaddexp(0.0, h[:, self.M:]) + self.scale_floor
        return np.ascontiguousarray(mu), sigma

    def cdf_rows(self, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        pmf, tail = discretized_pmf(mu.ravel(), sigma.ravel(), self.kind, *LATENT_BOUNDS)
        return quantize_pmfs(np.concatenate([pmf, tail[:, None]], axis=1), PRECISION)


def factorized_cdf(density, bounds: tuple[int, int]) -> np.ndarray:
    """One quantized table (with escape slot) per channel of a factorized density."""
    pmf, tail = factorized_pmf(density, *bounds)
    return quantize_pmfs(np.concatenate([np.maximum(pmf, 0.0), tail[:, None]], axis=1), PRECISION)


def coding_schedule(model: CompressionModel, h: int, w: int, wavefront: bool = False) -> list[np.ndarray]:
    """Groups of latent positions in stream order.

    Symbols are coded position by position, all M channels together, in the
    concatenated order of the groups. Without a context model every position
    is independent and there is a single group. The 2-D causal contexts are
    coded in raster order one position at a time. The two restricted contexts
    admit coarser groups with the same stream order: "prev-row-3" is coded in
    raster order and a whole row can be evaluated at once; "single-neighbor"
    is coded column by column so a whole column can be evaluated at once.
    """
    ii, jj = np.mgrid[0:h, 0:w]
    raster = np.stack([ii.ravel(), jj.ravel()], axis=1)
    if not model.variant.has_context:
        return [raster]
    kernel = model.config.context_kernel
    if kernel == "single-neighbor":
        order = np.stack([ii.T.ravel(), jj.T.ravel()], axis=1)
        groups = np.split(order, w) if wavefront else list(order[:, None, :])
    else:
        order = raster
        if wavefront:
            if kernel != "prev-row-3":
                raise ValueError(f"context {kernel!r} has no parallel decode schedule")
            groups = np.split(order, h)
        else:
            groups = list(order[:, None, :])
    return groups


# -- encode / decode ----------------------------------------------------------

@dataclass
class EncodeResult:
    bitstream: Bitstream
    y_hat: np.ndarray
    z_hat: np.ndarray | None
    x_hat: np.ndarray
    ideal_latent_bits: float
    ideal_hyper_bits: float

    @property
    def num_bytes(self) -> int:
        return len(self.bitstream)


@dataclass
class DecodedLatents:
    header: BitstreamHeader
    y_hat: np.ndarray
    z_hat: np.ndarray | None


def _psi_rows(psi: np.ndarray | None, pos: np.ndarray) -> np.ndarray | None:
    return None if psi is None else np.ascontiguousarray(psi[:, pos[:, 0], pos[:, 1]].T)


def reconstruct(y_hat: np.ndarray, model: CompressionModel, size: tuple[int, int]) -> np.ndarray:
    """Synthesis of ``(M, h, w)`` latents, cropped to ``size``; float (1, 3, H, W) in [0, 1]."""
    x = model.g_s(Tensor(y_hat[None])).data
    return np.clip(x[:, :, :size[0], :size[1]], 0.0, 1.0)


def _check_size(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if max(image.shape[:2]) > 0xFFFFFFFF - BLOCK:
        raise OverflowError("image dimensions do not fit the container")


def encode(image: np.ndarray, model: CompressionModel) -> EncodeResult:
    """Compress a uint8 ``(H, W, 3)`` image and keep the encoder-side by-products."""
    image = np.asarray(image)
    _check_size(image)
    x, (h, w) = pad_image(to_unit(image))
    variant = model.variant
    y = model.g_a(Tensor(x)).data
    y_hat = round_half_away(y[0])
    M, lh, lw = y_hat.shape
    hyper = b""
    z_hat = None
    psi = None
    ideal_hyper = 0.0
    if variant.has_hyperprior:
        z = model.h_a(Tensor(y)).data
        z_hat = round_half_away(z[0])
        hyper, ideal_hyper = _encode_factorized(z_hat, model.z_density, HYPER_BOUNDS)
        psi = model.h_s(Tensor(z_hat[None])).data[0]
    if variant is ModelVariant.FACTORIZED:
        latent, ideal_latent = _encode_factorized(y_hat, model.y_density, LATENT_BOUNDS)
    else:
        engine = ParamEngine(model)
        pos = np.concatenate(coding_schedule(model, lh, lw))
        phi = None
        if variant.has_context:
            grid = engine.empty_grid(lh, lw)
            engine.set_grid(grid, pos, y_hat[:, pos[:, 0], pos[:, 1]].T)
            phi = engine.context_features(grid, pos)
        mu, sigma = engine.params(_psi_rows(psi, pos), phi)
        values = y_hat[:, pos[:, 0], pos[:, 1]].T.ravel()
        enc = RangeEncoder()
        enc.encode(engine.cdf_rows(mu, sigma), values.astype(np.int64), LATENT_BOUNDS[0], True, PRECISION)
        latent = enc.finish()
        ideal_latent = latent_information(values, mu.ravel(), sigma.ravel(), engine.kind)
    header = BitstreamHeader(variant.code, M, w, h, model_hash(model), len(hyper), len(latent))
    stream = Bitstream(header, hyper, latent)
    x_hat = reconstruct(y_hat, model, (h, w))
    return EncodeResult(stream, y_hat, z_hat, x_hat, ideal_latent, ideal_hyper)


def latent_information(values, mu, sigma, kind) -> float:
    """Sum of -log2 p(v) under the discretized conditional model (floored)."""
    return float(element_bits(values, mu, sigma, kind).sum())


def element_bits(values, mu, sigma, kind) -> np.ndarray:
    """-log2 p(v) per element, with the same floor as the training likelihood."""
    d = np.abs(np.asarray(values, dtype=np.float64) - mu)
    p = cdf(kind, (0.5 - d) / sigma) - cdf(kind, (-0.5 - d) / sigma)
    return -np.log2(np.maximum(p, LIKELIHOOD_FLOOR))


def _encode_factorized(v: np.ndarray, density, bounds) -> tuple[bytes, float]:
    """Channel-major coding of ``(C, h, w)`` integers under a factorized density."""
    C = v.shape[0]
    table = factorized_cdf(density, bounds)
    flat = v.reshape(C, -1)
    enc = RangeEncoder()
    enc.encode(np.repeat(table, flat.shape[1], axis=0), flat.ravel().astype(np.int64), bounds[0], True, PRECISION)
    bits = sum(float(-np.log2(density.likelihood_np(flat[c], c)).sum()) for c in range(C))
    return enc.finish(), bits


def _decode_factorized(data: bytes, density, bounds, shape) -> np.ndarray:
    C, h, w = shape
    table = factorized_cdf(density, bounds)
    dec = RangeDecoder(data)
    vals = dec.decode(np.repeat(table, h * w, axis=0), bounds[0], True, PRECISION)
    return vals.reshape(C, h, w).astype(np.float64)


def compress(image: np.ndarray, model: CompressionModel) -> Bitstream:
    return encode(image, model).bitstream


def _parse(data, model: CompressionModel) -> Bitstream:
    stream = data if isinstance(data, Bitstream) else Bitstream.from_bytes(data)
    hd = stream.header
    if hd.variant != model.variant.code or hd.M != model.config.M:
        raise ModelMismatch(f"stream is for variant {ModelVariant.from_code(hd.variant).value} with M={hd.M}")
    if hd.model_hash != model_hash(model):
        raise ModelMismatch("model hash differs from the one used to compress")
    return stream


def decode_latents(data, model: CompressionModel, wavefront: bool = False) -> DecodedLatents:
    """Recover the quantized latents; ``wavefront`` batches the restricted contexts."""
    stream = _parse(data, model)
    hd = stream.header
    ph, pw = hd.padded_size
    lh, lw = ph // 16, pw // 16
    variant = model.variant
    z_hat = None
    psi = None
    if variant.has_hyperprior:
        z_hat = _decode_factorized(stream.hyper, model.z_density, HYPER_BOUNDS, (model.config.N, lh // 4, lw // 4))
        psi = model.h_s(Tensor(z_hat[None])).data[0]
    if variant is ModelVariant.FACTORIZED:
        y_hat = _decode_factorized(stream.latent, model.y_density, LATENT_BOUNDS, (hd.M, lh, lw))
        return DecodedLatents(hd, y_hat, z_hat)
    engine = ParamEngine(model)
    grid = engine.empty_grid(lh, lw)
    dec = RangeDecoder(stream.latent)
    for group in coding_schedule(model, lh, lw, wavefront):
        phi = engine.context_features(grid, group) if variant.has_context else None
        mu, sigma = engine.params(_psi_rows(psi, group), phi)
        vals = dec.decode(engine.cdf_rows(mu, sigma), LATENT_BOUNDS[0], True, PRECISION)
        engine.set_grid(grid, group, vals.reshape(len(group), hd.M).astype(np.float64))
    c = engine.half
    y_hat = grid[:, c:c + lh, c:c + lw].copy()
    return DecodedLatents(hd, y_hat, z_hat)


def decompress_float(data, model: CompressionModel, wavefront: bool = False) -> np.ndarray:
    dl = decode_latents(data, model, wavefront)
    return reconstruct(dl.y_hat, model, (dl.header.height, dl.header.width))


def decompress(data, model: CompressionModel, wavefront: bool = False) -> np.ndarray:
    """Compressed bytes -> uint8 ``(H, W, 3)`` image."""
    return to_uint8(decompress_float(data, model, wavefront))


# -- diagnostics --------------------------------------------------------------

def _lag1(a: np.ndarray) -> dict:
    def corr(u, v):
        u = u - u.mean()
        v = v - v.mean()
        den = math.sqrt(float((u * u).sum() * (v * v).sum()))
        return float((u * v).sum() / den) if den > 0 else 0.0
    return {
        "horizontal": corr(a[:, :-1].ravel(), a[:, 1:].ravel()) if a.shape[1] > 1 else 0.0,
        "vertical": corr(a[:-1].ravel(), a[1:].ravel()) if a.shape[0] > 1 else 0.0,
    }


def inspect_latents(image: np.ndarray, model: CompressionModel) -> dict:
    """Diagnostics for the latent channel that costs the most bits.

    Returns grids (nested lists) of the quantized latents, predicted means,
    prediction errors, scales, normalized latents and per-element bits, plus
    lag-1 autocorrelations of the normalized latents.
    """
    res = encode(image, model)
    y_hat = res.y_hat
    M, lh, lw = y_hat.shape
    if model.variant is ModelVariant.FACTORIZED:
        mu = np.zeros_like(y_hat)
        sigma = None
        bits = np.stack([-np.log2(model.y_density.likelihood_np(y_hat[c].ravel(), c)).reshape(lh, lw)
                         for c in range(M)])
    else:
        engine = ParamEngine(model)
        pos = np.concatenate(coding_schedule(model, lh, lw))
        psi = model.h_s(Tensor(res.z_hat[None])).data[0] if res.z_hat is not None else None
        phi = None
        if model.variant.has_context:
            grid = engine.empty_grid(lh, lw)
            engine.set_grid(grid, pos, y_hat[:, pos[:, 0], pos[:, 1]].T)
            phi = engine.context_features(grid, pos)
        mu_p, sigma_p = engine.params(_psi_rows(psi, pos), phi)
        mu = np.zeros_like(y_hat)
        sigma = np.zeros_like(y_hat)
        mu[:, pos[:, 0], pos[:, 1]] = mu_p.T
        sigma[:, pos[:, 0], pos[:, 1]] = sigma_p.T
        bits = element_bits(y_hat, mu, sigma, engine.kind)
    per_channel = bits.reshape(M, -1).sum(axis=1)
    c = int(np.argmax(per_channel))
    err = y_hat[c] - mu[c]
    normalized = err / sigma[c] if sigma is not None else err
    return {
        "variant": model.variant.value,
        "channel": c,
        "channel_bits": float(per_channel[c]),
        "total_latent_bits": float(per_channel.sum()),
        "shape": [lh, lw],
        "latents": y_hat[c].tolist(),
        "means": mu[c].tolist(),
        "prediction_error": err.tolist(),
        "scales": sigma[c].tolist() if sigma is not None else None,
        "normalized": normalized.tolist(),
        "bits": bits[c].tolist(),
        "normalized_autocorrelation": _lag1(normalized),
    }
