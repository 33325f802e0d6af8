"""PSNR, MS-SSIM, bits per pixel and rate-distortion report assembly."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codec import decompress, encode
from .training import CheckpointError, load_checkpoint, model_hash

log = logging.getLogger(__name__)

DB_CAP = 100.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
K1, K2 = 0.01, 0.03
WINDOW = 11
WINDOW_SIGMA = 1.5
REPORT_COLUMNS = ("lambda", "variant", "bpp_actual", "bpp_entropy", "psnr_db", "msssim", "msssim_db")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, data_range: float = 1.0) -> float:
    """10 log10(range^2 / MSE) over all samples; identical inputs give the 100 dB cap."""
    a, b = _pair(a, b)
    mse = float(np.mean(((a - b) / data_range) ** 2))
    if mse == 0.0:
        return DB_CAP
    return min(DB_CAP, -10.0 * math.log10(mse))


def to_db(score: float) -> float:
    """-10 log10(1 - score), capped at 100 dB for a perfect score."""
    if score >= 1.0:
        return DB_CAP
    return min(DB_CAP, -10.0 * math.log10(1.0 - score))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' Gaussian filtering of a 2-D array."""
    rows = sliding_window_view(img, len(g), axis=1) @ g
    return sliding_window_view(rows, len(g), axis=0) @ g


def _ssim_terms(a: np.ndarray, b: np.ndarray, g: np.ndarray, data_range: float) -> tuple[float, float]:
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = _filter(a, g), _filter(b, g)
    var_a = _filter(a * a, g) - mu_a * mu_a
    var_b = _filter(b * b, g) - mu_b * mu_b
    cov = _filter(a * b, g) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def msssim_scales(height: int, width: int, window: int = WINDOW) -> int:
    """Number of dyadic scales whose smallest side still holds a full window."""
    scales = 0
    size = min(height, width)
    while scales < len(MSSSIM_WEIGHTS) and size >= window:
        scales += 1
        size //= 2
    return max(scales, 1)


def ms_ssim(a, b, data_range: float = 1.0) -> float:
    """Multi-scale SSIM of ``(H, W)`` or ``(H, W, C)`` images, averaged over channels.

    Images too small for five scales use as many as fit, with the remaining
    weights renormalized to sum to one. Negative contrast-structure terms are
    clipped at zero so the score stays in [0, 1].
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    window = min(WINDOW, h, w)
    window -= 1 - window % 2  # keep the window odd
    g = _gaussian_window(window, WINDOW_SIGMA)
    scales = msssim_scales(h, w, window)
    weights = np.array(MSSSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        score = 1.0
        for s in range(scales):
            ssim, cs = _ssim_terms(x, y, g, data_range)
            term = ssim if s == scales - 1 else cs
            score *= max(term, 0.0) ** weights[s]
            if s < scales - 1:
                x, y = _downsample(x), _downsample(y)
        scores.append(score)
    return float(np.mean(scores))


def bits_per_pixel(num_bytes: int, height: int, width: int) -> float:
    return 8.0 * num_bytes / (height * width)


@dataclass
class RdPoint:
    lmbda: float
    variant: str
    bpp_actual: float
    bpp_entropy: float
    psnr_db: float
    msssim: float
    msssim_db: float
    model_hash: str = ""
    images: int = 0
    error: str | None = None

    def row(self) -> dict:
        return {
            "lambda": self.lmbda, "variant": self.variant, "bpp_actual": self.bpp_actual,
            "bpp_entropy": self.bpp_entropy, "psnr_db": self.psnr_db, "msssim": self.msssim,
            "msssim_db": self.msssim_db,
        }


def evaluate_model(model, images, lmbda: float) -> RdPoint:
    """Average rate and quality of one model over ``(H, W, 3)`` uint8 images."""
    rows = []
    for img in images:
        h, w = img.shape[:2]
        res = encode(img, model)
        recon = decompress(res.bitstream.to_bytes(), model)
        ms = ms_ssim(img, recon, data_range=255.0)
        rows.append((
            bits_per_pixel(len(res.bitstream), h, w),
            (res.ideal_latent_bits + res.ideal_hyper_bits) / (h * w),
            psnr(img, recon, data_range=255.0),
            ms,
            to_db(ms),
        ))
    m = np.mean(rows, axis=0)
    return RdPoint(lmbda, model.variant.value, *map(float, m), model_hash=model_hash(model).hex(), images=len(rows))


def rd_report(checkpoints, images) -> list[RdPoint]:
    """One averaged point per checkpoint, sorted by lambda then variant.

    A checkpoint that cannot be loaded or evaluated yields a row with NaN
    values and the reason in ``error``.
    """
    if not checkpoints:
        raise ValueError("no checkpoints given")
    if not len(images):
        raise ValueError("no images given")
    points = []
    for path in checkpoints:
        try:
            ckpt = load_checkpoint(path)
            if ckpt.train_config is None:
                raise CheckpointError(f"{path}: no training configuration (lambda unknown)")
            if ckpt.train_config.model != ckpt.model.config:
                raise CheckpointError(f"{path}: training and model configurations disagree")
            points.append(evaluate_model(ckpt.model, images, ckpt.train_config.lmbda))
        except (CheckpointError, ValueError) as exc:
            log.warning("%s", exc)
            nan = float("nan")
            points.append(RdPoint(nan, "", nan, nan, nan, nan, nan, error=str(exc)))
    points.sort(key=lambda p: (math.isnan(p.lmbda), p.lmbda, p.variant))
    return points


def write_report(points: list[RdPoint], path) -> tuple[Path, Path]:
    """Write the CSV at ``path`` and a JSON mirror next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for p in points:
            writer.writerow(p.row())
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps([asdict(p) for p in points], indent=2))
    return path, json_path
