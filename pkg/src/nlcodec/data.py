"""Image I/O, corpus loading, patch sampling and a procedural test corpus."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


class ImageFormatError(ValueError):
    pass


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6, maxval 255) -> uint8 array of shape (H, W, 3)."""
    raw = Path(path).read_bytes()
    m = _PPM_HEADER.match(raw)
    if m is None:
        raise ImageFormatError(f"{path}: not a binary PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = raw[m.end():m.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ImageFormatError("write_ppm expects uint8 (H, W, 3)")
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # optional dependency
            raise ImageFormatError("PNG support needs Pillow (install the 'png' extra)") from exc
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    return read_ppm(path)


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image
        Image.fromarray(image).save(path)
    else:
        write_ppm(path, image)


def to_unit(image: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float64 (1, 3, H, W) in [0, 1]."""
    return (np.asarray(image, dtype=np.float64) / 255.0).transpose(2, 0, 1)[None]


def to_uint8(x: np.ndarray) -> np.ndarray:
    """float (1, 3, H, W) in [0, 1] -> uint8 (H, W, 3), rounding to nearest."""
    x = np.asarray(x)[0].transpose(1, 2, 0)
    return np.clip(np.floor(x * 255.0 + 0.5), 0, 255).astype(np.uint8)


@dataclass
class Corpus:
    images: list[np.ndarray]
    names: list[str]

    def __len__(self) -> int:
        return len(self.images)


def load_image_corpus(path, min_size: int = 1) -> Corpus:
    """Every readable .ppm/.png under ``path`` (sorted); unreadable files are skipped."""
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in (".ppm", ".png"))
    images, names = [], []
    for f in files:
        try:
            img = read_image(f)
        except (ImageFormatError, OSError) as exc:
            log.warning("skipping %s: %s", f, exc)
            continue
        if min(img.shape[:2]) < min_size:
            log.warning("skipping %s: smaller than %d px", f, min_size)
            continue
        images.append(img)
        names.append(f.name)
    if not images:
        raise FileNotFoundError(f"no usable images in {path}")
    return Corpus(images, names)


def sample_patch(corpus: Corpus, rng: np.random.Generator, patch: int, batch: int = 1) -> np.ndarray:
    """Uniform random crops (with replacement) -> float64 (batch, 3, patch, patch)."""
    out = np.empty((batch, 3, patch, patch))
    for b in range(batch):
        img = corpus.images[rng.integers(len(corpus))]
        h, w, _ = img.shape
        if h < patch or w < patch:
            raise ValueError(f"image {w}x{h} is smaller than the {patch}px patch")
        top = rng.integers(h - patch + 1)
        left = rng.integers(w - patch + 1)
        out[b] = img[top:top + patch, left:left + patch].transpose(2, 0, 1) / 255.0
    return out


def synthetic_image(rng: np.random.Generator, height: int = 256, width: int = 256) -> np.ndarray:
    """A piecewise-smooth colour image with edges and 1/f texture.

    Stands in for natural photographs in tests: overlapping flat-shaded
    ellipses and rectangles over a smooth gradient, plus low-amplitude
    pink noise.
    """
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    img = np.zeros((height, width, 3))
    base = rng.uniform(0.2, 0.8, size=3)
    slope = rng.normal(0, 0.3, size=(2, 3))
    img += base + xx[..., None] * slope[0] + yy[..., None] * slope[1]
    for _ in range(rng.integers(6, 14)):
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(0, 1, size=2) * (height / max(height, width), width / max(height, width))
        ry, rx = rng.uniform(0.04, 0.3, size=2)
        if rng.random() < 0.5:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
        else:
            inside = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        alpha = rng.uniform(0.5, 1.0)
        img[inside] = (1 - alpha) * img[inside] + alpha * color
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    for c in range(3):
        spectrum = (rng.normal(size=f.shape) + 1j * rng.normal(size=f.shape)) / f
        spectrum[0, 0] = 0
        noise = np.fft.irfft2(spectrum, s=(height, width))
        img[..., c] += 0.05 * noise / (noise.std() + 1e-12)
    return np.clip(np.floor(img * 255 + 0.5), 0, 255).astype(np.uint8)


def write_synthetic_corpus(directory, count: int, size: int = 256, seed: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = directory / f"img{i:03d}.ppm"
        write_ppm(p, synthetic_image(rng, size, size))
        paths.append(p)
    return paths
