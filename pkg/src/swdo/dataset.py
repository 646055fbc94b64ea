"""Image data: synthetic lesions, PGM/PPM manifests, preprocessing and splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .minimodel import Batch

LABELS = {"melanoma": 1, "1": 1, "benign": 0, "0": 0}

# Augmentation magnitudes used when a parameter is not given explicitly.
ROTATION_RANGE = 20.0
ZOOM_RANGE = (0.9, 1.1)
SHIFT_FRACTION = 0.1

DISCRETE_OPS = ("hflip", "vflip", "rot90", "rot180", "rot270")
AUGMENT_OPS = DISCRETE_OPS + ("rotate", "zoom", "translate")


class DataError(ValueError):
    """Unreadable image, malformed manifest, or bad label."""


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (C, H, W) in [0, 1]
    label: int
    source_id: str = ""


def to_batch(images: list[LabeledImage]) -> Batch:
    if not images:
        raise DataError("empty image list")
    shapes = {im.pixels.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"images differ in shape: {sorted(shapes)}")
    return Batch(np.stack([im.pixels for im in images]), np.array([im.label for im in images]))


# --- synthetic data -------------------------------------------------------

def _smooth_ellipse(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) * 2.0 - 1.0
    cy, cx = rng.uniform(-0.2, 0.2, 2)
    ry, rx = rng.uniform(0.3, 0.45, 2)
    theta = rng.uniform(0, math.pi)
    y, x = yy - cy, xx - cx
    u = x * math.cos(theta) + y * math.sin(theta)
    v = -x * math.sin(theta) + y * math.cos(theta)
    r = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    inside = 1.0 / (1.0 + np.exp((r - 1.0) * 8.0))
    skin = rng.uniform(0.75, 0.85)
    lesion = rng.uniform(0.45, 0.55)
    return skin + (lesion - skin) * inside


def _irregular_blob(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) * 2.0 - 1.0
    cy, cx = rng.uniform(-0.2, 0.2, 2)
    y, x = yy - cy, xx - cx
    angle = np.arctan2(y, x)
    radius = rng.uniform(0.5, 0.65) * np.ones_like(angle)
    for k in range(3, 9):
        radius = radius * (1.0 + rng.uniform(0.0, 0.08) * np.sin(k * angle + rng.uniform(0, 2 * math.pi)))
    inside = (np.sqrt(x * x + y * y) <= radius).astype(float)
    skin = rng.uniform(0.75, 0.85)
    lesion = rng.uniform(0.2, 0.3)
    texture = rng.uniform(-0.2, 0.2, (size, size))
    return skin + (lesion - skin) * inside + texture * inside


def generate_synthetic(n: int, seed: int, size: int = 32) -> list[LabeledImage]:
    """Balanced two-class set of ``size`` x ``size`` grayscale images.

    Class 1 is an irregular blob with a speckled interior; class 0 a smooth
    ellipse. Labels alternate 0, 1, 0, ... so any prefix is balanced.
    """
    if n < 2:
        raise DataError("need at least two synthetic images")
    if size < 4 or size % 2:
        raise DataError("size must be an even integer >= 4")
    out = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(i,)))
        label = i % 2
        plane = _irregular_blob(rng, size) if label else _smooth_ellipse(rng, size)
        plane = plane + rng.normal(0.0, 0.01, plane.shape)
        out.append(LabeledImage(np.clip(plane, 0.0, 1.0)[None], label, f"synthetic-{seed}-{i}"))
    return out


# --- PGM / PPM ------------------------------------------------------------

def _tokens(data: bytes):
    """Header tokens of a netpbm file, skipping comments; yields (token, end_offset)."""
    i = 0
    while True:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise DataError("truncated header")
        yield data[start:i], i


def read_netpbm(path) -> np.ndarray:
    """Binary PGM (P5) or PPM (P6) with maxval 255 -> uint8 ``(C, H, W)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    toks = _tokens(data)
    try:
        magic, _ = next(toks)
        width, _ = next(toks)
        height, _ = next(toks)
        maxval, end = next(toks)
        width, height, maxval = int(width), int(height), int(maxval)
    except (StopIteration, ValueError, DataError):
        raise DataError(f"{path}: malformed header") from None
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported format {magic!r}, expected P5 or P6")
    if maxval != 255:
        raise DataError(f"{path}: maxval {maxval} unsupported, expected 255")
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    raster = data[end + 1:end + 1 + count]
    if len(raster) != count:
        raise DataError(f"{path}: raster has {len(raster)} bytes, expected {count}")
    pix = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(pix.transpose(2, 0, 1))


def write_netpbm(path, pixels: np.ndarray) -> None:
    """Write uint8 ``(H, W)``, ``(1, H, W)`` or ``(3, H, W)`` as P5/P6."""
    pix = np.asarray(pixels)
    if pix.ndim == 2:
        pix = pix[None]
    if pix.dtype != np.uint8:
        raise DataError("write_netpbm expects uint8 pixels")
    channels, height, width = pix.shape
    magic = {1: b"P5", 3: b"P6"}.get(channels)
    if magic is None:
        raise DataError(f"cannot write {channels} channels")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(np.ascontiguousarray(pix.transpose(1, 2, 0)).tobytes())


def normalize(raw) -> np.ndarray:
    raw = np.asarray(raw)
    return raw.astype(float) / 255.0


def parse_label(text: str) -> int:
    try:
        return LABELS[text.strip().lower()]
    except KeyError:
        raise DataError(f"unknown label {text!r}") from None


def load_manifest(manifest_path, size: int | None = None) -> list[LabeledImage]:
    """Read a ``filename,label`` CSV; filenames resolve relative to the manifest.

    Errors name the 1-based data row. With ``size`` given, images are resized
    to ``size`` x ``size``.
    """
    manifest_path = Path(manifest_path)
    try:
        fh = open(manifest_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{manifest_path}: {exc.strerror or exc}") from exc
    images = []
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["filename", "label"]:
            raise DataError(f"{manifest_path}: header must be 'filename,label'")
        for row_no, row in enumerate(reader, start=1):
            try:
                label = parse_label(row.get("label") or "")
                raw = read_netpbm(manifest_path.parent / (row.get("filename") or "").strip())
            except DataError as exc:
                raise DataError(f"{manifest_path}: row {row_no}: {exc}") from None
            pixels = normalize(raw)
            if size is not None:
                pixels = resize_bilinear(pixels, size, size)
            images.append(LabeledImage(pixels, label, row["filename"].strip()))
    if not images:
        raise DataError(f"{manifest_path}: no data rows")
    return images


# --- geometry -------------------------------------------------------------

def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``(C, H, W)`` at real coordinates with edge replication."""
    _, h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = img[:, y0, x0] * (1 - fx) + img[:, y0, x1] * fx
    bottom = img[:, y1, x0] * (1 - fx) + img[:, y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def _as_chw(img) -> tuple[np.ndarray, bool]:
    img = np.asarray(img, dtype=float)
    return (img[None], True) if img.ndim == 2 else (img, False)


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of ``(H, W)`` or ``(C, H, W)``."""
    if out_h < 1 or out_w < 1:
        raise DataError("output size must be positive")
    chw, squeeze = _as_chw(img)
    _, h, w = chw.shape
    ys = np.arange(out_h) * ((h - 1) / (out_h - 1)) if out_h > 1 else np.zeros(1)
    xs = np.arange(out_w) * ((w - 1) / (out_w - 1)) if out_w > 1 else np.zeros(1)
    out = _sample_bilinear(chw, ys[:, None] * np.ones((1, out_w)), np.ones((out_h, 1)) * xs[None, :])
    return out[0] if squeeze else out


def _affine(chw: np.ndarray, matrix: np.ndarray, shift=(0.0, 0.0)) -> np.ndarray:
    """Output pixel p samples the input at ``centre + matrix @ (p - centre) - shift``."""
    _, h, w = chw.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    dy, dx = yy - cy, xx - cx
    ys = cy + matrix[0, 0] * dy + matrix[0, 1] * dx - shift[0]
    xs = cx + matrix[1, 0] * dy + matrix[1, 1] * dx - shift[1]
    return _sample_bilinear(chw, ys, xs)


def augment(img, op: str, rng: np.random.Generator | None = None, *, degrees: float | None = None,
            factor: float | None = None, shift: tuple[int, int] | None = None) -> np.ndarray:
    """Apply one geometric augmentation. Unset magnitudes are drawn from ``rng``."""
    chw, squeeze = _as_chw(img)
    if op == "hflip":
        out = chw[:, :, ::-1]
    elif op == "vflip":
        out = chw[:, ::-1, :]
    elif op in ("rot90", "rot180", "rot270"):
        out = np.rot90(chw, k={"rot90": 1, "rot180": 2, "rot270": 3}[op], axes=(1, 2))
    elif op == "rotate":
        if degrees is None:
            degrees = float(rng.uniform(-ROTATION_RANGE, ROTATION_RANGE))
        t = math.radians(degrees)
        rot = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
        out = _affine(chw, rot)
    elif op == "zoom":
        if factor is None:
            factor = float(rng.uniform(*ZOOM_RANGE))
        if factor <= 0:
            raise DataError("zoom factor must be positive")
        out = chw.copy() if factor == 1.0 else _affine(chw, np.eye(2) / factor)
    elif op == "translate":
        if shift is None:
            _, h, w = chw.shape
            shift = (int(rng.integers(-int(SHIFT_FRACTION * h), int(SHIFT_FRACTION * h) + 1)),
                     int(rng.integers(-int(SHIFT_FRACTION * w), int(SHIFT_FRACTION * w) + 1)))
        dy, dx = (int(s) for s in shift)
        _, h, w = chw.shape
        rows = np.clip(np.arange(h) - dy, 0, h - 1)
        cols = np.clip(np.arange(w) - dx, 0, w - 1)
        out = chw[:, rows][:, :, cols]
    else:
        raise DataError(f"unknown augmentation {op!r}; choose from {AUGMENT_OPS}")
    out = np.ascontiguousarray(out)
    return out[0] if squeeze else out


def random_augment(img, rng: np.random.Generator) -> np.ndarray:
    return augment(img, AUGMENT_OPS[int(rng.integers(len(AUGMENT_OPS)))], rng)


def augment_set(images: list[LabeledImage], copies: int, seed: int) -> list[LabeledImage]:
    """Original images followed by ``copies`` random augmentations of each."""
    rng = np.random.default_rng(seed)
    out = list(images)
    for c in range(copies):
        for im in images:
            pix = np.clip(random_augment(im.pixels, rng), 0.0, 1.0)
            out.append(LabeledImage(pix, im.label, f"{im.source_id}#aug{c}"))
    return out


def preprocess(img, size: int) -> np.ndarray:
    """Resize to ``size`` x ``size`` (even) and keep values in [0, 1]."""
    if size < 2 or size % 2:
        raise DataError("target size must be an even integer >= 2")
    return np.clip(resize_bilinear(img, size, size), 0.0, 1.0)


# --- splits ---------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray

    def fold(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == i)

    def folds(self) -> list[np.ndarray]:
        return [self.fold(i) for i in range(self.k)]

    def train_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != i)


def kfold_split(n: int, k: int, seed: int) -> FoldPlan:
    if k < 2 or k > n:
        raise DataError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    assignments[perm] = np.arange(n) % k
    return FoldPlan(k, assignments)


def train_val_split(indices, val_fraction: float = 0.15, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    indices = np.asarray(indices, dtype=int)
    n = indices.size
    if n < 2:
        raise DataError("need at least two samples to split")
    if not 0 < val_fraction < 1:
        raise DataError("val_fraction must lie in (0, 1)")
    n_val = min(max(1, math.floor(val_fraction * n + 0.5)), n - 1)
    perm = np.random.default_rng(seed).permutation(indices)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
