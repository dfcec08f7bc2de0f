"""Synthetic vessel images, PGM I/O, dataset splitting, and batching.

The synthetic generator is a stand-in for real angiography data: each
sample is a procedurally grown vessel tree (1-3 root curves entering from
the borders, recursive branching with shrinking width) rasterized to a
binary mask, rendered as dark vessels over a smooth random background
with blur and noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensor import Tensor


class PGMError(ValueError):
    """Base class for PGM parsing failures."""


class PGMMagicError(PGMError):
    """Unsupported or missing magic number."""


class PGMTruncatedError(PGMError):
    """Header or pixel payload ends prematurely."""


class PGMMaxvalError(PGMError):
    """Maxval outside the supported 1..255 range."""


@dataclass
class ImageSample:
    image: Tensor  # [1,H,W], values in [0,1]
    mask: Tensor   # [1,H,W], values in {0,1}
    id: str


# ---- synthetic generation ----

def _draw_disk(mask, cy, cx, radius):
    h, w = mask.shape
    r = int(math.ceil(radius))
    y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 2)
    x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 2)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask[y0:y1, x0:x1] |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _grow_branch(mask, rng, y, x, angle, width, length, depth):
    h, w = mask.shape
    step = 1.0
    for _ in range(int(length)):
        _draw_disk(mask, y, x, width / 2.0)
        angle += rng.normal(0.0, 0.18)
        y += step * math.sin(angle)
        x += step * math.cos(angle)
        if not (-width <= y < h + width and -width <= x < w + width):
            break
    if depth > 0 and width > 1.0:
        n_children = rng.integers(1, 3)
        for _ in range(n_children):
            child_angle = angle + rng.uniform(0.4, 1.0) * rng.choice([-1.0, 1.0])
            child_len = length * rng.uniform(0.5, 0.8)
            _grow_branch(mask, rng, y, x, child_angle, max(1.0, width * 0.7),
                         child_len, depth - 1)


def _vessel_mask(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    n_roots = int(rng.integers(1, 4))
    for _ in range(n_roots):
        side = rng.integers(0, 4)
        pos = rng.uniform(0.2, 0.8) * size
        if side == 0:
            y, x, angle = 0.0, pos, math.pi / 2
        elif side == 1:
            y, x, angle = float(size - 1), pos, -math.pi / 2
        elif side == 2:
            y, x, angle = pos, 0.0, 0.0
        else:
            y, x, angle = pos, float(size - 1), math.pi
        angle += rng.normal(0.0, 0.3)
        width = rng.uniform(2.5, 4.5) * size / 64.0
        depth = int(rng.integers(2, 5))
        _grow_branch(mask, rng, y, x, angle, width, length=size * rng.uniform(0.5, 0.9),
                     depth=depth)
    return mask


def _render_image(rng, mask, size):
    # smooth random background from an upsampled coarse grid
    coarse = rng.uniform(0.45, 0.75, size=(5, 5))
    zoom = size / 5.0
    yy = np.clip((np.arange(size) + 0.5) / zoom - 0.5, 0, 4)
    i0 = np.floor(yy).astype(int)
    i1 = np.minimum(i0 + 1, 4)
    wy = (yy - i0)[:, None]
    wx = (yy - i0)[None, :]
    bg = ((1 - wy) * (1 - wx) * coarse[np.ix_(i0, i0)]
          + (1 - wy) * wx * coarse[np.ix_(i0, i1)]
          + wy * (1 - wx) * coarse[np.ix_(i1, i0)]
          + wy * wx * coarse[np.ix_(i1, i1)])
    vessels = gaussian_filter(mask.astype(np.float64), sigma=0.7)
    img = bg - 0.35 * vessels
    img = gaussian_filter(img, sigma=0.5)
    img = img + rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(seed, count, size=64):
    """Deterministically generate `count` vessel samples of shape [1,size,size]."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    samples = []
    for idx in range(count):
        mask = _vessel_mask(rng, size)
        img = _render_image(rng, mask, size)
        samples.append(ImageSample(
            image=Tensor(img[None, :, :]),
            mask=Tensor(mask[None, :, :].astype(np.float64)),
            id=f"synthetic-{seed}-{idx:04d}",
        ))
    return samples


# ---- PGM I/O ----

def _read_tokens(data, n):
    """Read n whitespace-separated header tokens, skipping # comments."""
    tokens = []
    i = 0
    while len(tokens) < n:
        if i >= len(data):
            raise PGMTruncatedError("unexpected end of file in header")
        c = data[i:i + 1]
        if c == b"#":
            j = data.find(b"\n", i)
            i = len(data) if j < 0 else j + 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i


def load_pgm(path):
    """Load a P2/P5 PGM as a float array in [0,1] of shape [H,W]."""
    data = Path(path).read_bytes()
    if len(data) < 2:
        raise PGMTruncatedError(f"{path}: file too short for a magic number")
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMMagicError(f"{path}: unsupported magic {magic!r} (expected P2 or P5)")
    tokens, offset = _read_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PGMTruncatedError(f"{path}: non-numeric header fields {tokens}") from None
    if not 1 <= maxval <= 255:
        raise PGMMaxvalError(f"{path}: maxval {maxval} outside supported range 1..255")
    n_pixels = width * height
    if magic == b"P5":
        payload = data[2 + offset + 1:]  # single whitespace byte after maxval
        if len(payload) < n_pixels:
            raise PGMTruncatedError(
                f"{path}: payload holds {len(payload)} bytes, expected {n_pixels}")
        pixels = np.frombuffer(payload[:n_pixels], dtype=np.uint8).astype(np.float64)
    else:
        values = data[2 + offset:].split()
        if len(values) < n_pixels:
            raise PGMTruncatedError(
                f"{path}: payload holds {len(values)} values, expected {n_pixels}")
        pixels = np.array([int(v) for v in values[:n_pixels]], dtype=np.float64)
    return (pixels / maxval).reshape(height, width)


def save_pgm(image, path):
    """Write a [H,W] or [1,H,W] array in [0,1] as binary P5 with maxval 255."""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"save_pgm: expected [H,W] or [1,H,W], got {arr.shape}")
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(q.tobytes())


def load_sample_dir(root):
    """Load `images/*.pgm` with parallel `masks/*.pgm` matched by stem."""
    root = Path(root)
    samples = []
    for img_path in sorted((root / "images").glob("*.pgm")):
        mask_path = root / "masks" / img_path.name
        if not mask_path.exists():
            raise FileNotFoundError(f"no mask for {img_path.name} under {root / 'masks'}")
        img = load_pgm(img_path)
        mask = (load_pgm(mask_path) >= 0.5).astype(np.float64)
        samples.append(ImageSample(
            image=Tensor(img[None]), mask=Tensor(mask[None]), id=img_path.stem))
    if not samples:
        raise FileNotFoundError(f"no .pgm images under {root / 'images'}")
    return samples


def save_sample_dir(samples, root):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_pgm(s.image.data, root / "images" / f"{s.id}.pgm")
        save_pgm(s.mask.data, root / "masks" / f"{s.id}.pgm")


# ---- splitting and batching ----

@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    ratios: tuple


def split(samples, ratios=(7, 1, 2), seed=0):
    """Seeded shuffle then partition; remainder goes to train."""
    if not samples:
        raise ValueError("cannot split an empty sample list")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios}")
    total = sum(ratios)
    if total <= 0 or abs(total - round(total)) > 1e-9:
        raise ValueError(f"ratios must sum to a positive whole number, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(samples))
    shuffled = [samples[i] for i in order]
    n = len(samples)
    n_val = int(n * ratios[1] / total + 0.5)
    n_test = int(n * ratios[2] / total + 0.5)
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        ratios=tuple(ratios),
    )


def batches(samples, batch_size, seed, epoch):
    """Yield reshuffled batches; the shuffle is a pure function of seed and epoch."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed ^ epoch).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]
