"""Synthetic EM-like patches with particle ground truth, plus dataset I/O.

Randomness comes from numpy's ``Generator`` over the PCG64 bit generator,
seeded with integers, which is stable across platforms and numpy releases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "SceneSpec",
    "DatasetSample",
    "GenerationError",
    "ParseError",
    "generate_patch",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "read_pgm",
    "write_pgm",
    "SPLITS",
]

SPLITS = ("train", "val", "test")


class GenerationError(RuntimeError):
    pass


class ParseError(ValueError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


@dataclass
class SceneSpec:
    side: int = 64
    nm_per_px: float = 5.0
    radius_nm: float = 30.0
    max_count: int = 8
    empty_fraction: float = 0.5
    style: str = "disk"
    contrast: tuple[float, float] = (0.3, 0.6)
    noise: float = 0.1
    background: float = 0.08
    texture: float = 0.04
    texture_scale_px: float = 3.0
    separation: float = 2.2  # in radii
    seed: int = 0

    def __post_init__(self):
        self.contrast = tuple(float(c) for c in self.contrast)
        if self.side < 8:
            raise ValueError("side must be >= 8")
        if self.nm_per_px <= 0 or self.radius_nm <= 0:
            raise ValueError("nm_per_px and radius_nm must be positive")
        if 2 * self.radius_px >= self.side:
            raise ValueError("particle does not fit in the image")
        if self.separation < 2.0:
            raise ValueError("separation must be at least 2 radii (particles may not overlap)")
        if self.max_count < 0 or not 0 <= self.empty_fraction <= 1:
            raise ValueError("max_count must be >= 0 and empty_fraction in [0, 1]")
        if self.style not in ("disk", "ring"):
            raise ValueError("style must be 'disk' or 'ring'")
        if self.noise < 0 or self.texture < 0:
            raise ValueError("noise and texture must be non-negative")

    @property
    def radius_px(self):
        return self.radius_nm / self.nm_per_px


@dataclass
class DatasetSample:
    image: np.ndarray
    centers: list
    radius_px: float
    nm_per_px: float
    image_id: str = ""

    @property
    def label(self):
        return int(len(self.centers) > 0)

    @property
    def boxes(self):
        """Squares of side 2r around each center, as (x, y, w, h)."""
        r = self.radius_px
        return [(cx - r, cy - r, 2 * r, 2 * r) for cx, cy in self.centers]


def _place(spec, count, rng):
    r = spec.radius_px
    lo, hi = r, spec.side - 1 - r
    min_d = spec.separation * r
    centers = []
    for _ in range(count):
        for _try in range(1000):
            c = rng.uniform(lo, hi, size=2)
            if all(np.hypot(*(c - np.asarray(o))) >= min_d for o in centers):
                centers.append((float(c[0]), float(c[1])))
                break
        else:
            raise GenerationError(f"could not place particle {len(centers) + 1} of {count} after 1000 tries")
    return centers


def _render(spec, centers, contrasts, rng):
    n = spec.side
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    img = np.full((n, n), spec.background)
    if spec.texture > 0:
        field_ = gaussian_filter(rng.standard_normal((n, n)), spec.texture_scale_px, mode="wrap")
        field_ /= field_.std() + 1e-12
        img += spec.texture * field_
    else:
        rng.standard_normal((n, n))
    r = spec.radius_px
    for (cx, cy), c in zip(centers, contrasts):
        d = np.hypot(xx - cx, yy - cy)
        # one-pixel linear edge ramp
        cover = np.clip(r + 0.5 - d, 0.0, 1.0)
        if spec.style == "ring":
            inner = np.clip(0.6 * r + 0.5 - d, 0.0, 1.0)
            cover = cover - 0.75 * inner
        img += c * cover
    if spec.noise > 0:
        img += spec.noise * rng.standard_normal((n, n))
    return np.clip(img, 0.0, 1.0)


def generate_patch(spec: SceneSpec, rng) -> DatasetSample:
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if spec.max_count == 0 or rng.random() < spec.empty_fraction:
        count = 0
    else:
        count = int(rng.integers(1, spec.max_count + 1))
    centers = _place(spec, count, rng)
    contrasts = rng.uniform(*spec.contrast, size=count)
    image = _render(spec, centers, contrasts, rng)
    return DatasetSample(image, centers, spec.radius_px, spec.nm_per_px)


def generate_dataset(spec: SceneSpec, n, seed=None):
    """Generate ``n`` patches and split them 80/10/10 by a seeded shuffle.

    Each patch gets its own generator seeded from ``(seed, index)`` so
    patches do not depend on generation order. Returns a dict mapping
    split name to a list of samples.
    """
    if n < 10:
        raise ValueError("need at least 10 samples")
    seed = spec.seed if seed is None else seed
    samples = []
    for i in range(n):
        s = generate_patch(spec, np.random.default_rng([seed, i]))
        s.image_id = f"{i:05d}"
        samples.append(s)
    order = np.random.default_rng([seed, n, 1]).permutation(n)
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    cuts = {"train": order[:n_train], "val": order[n_train : n_train + n_val], "test": order[n_train + n_val :]}
    return {name: [samples[i] for i in sorted(idx)] for name, idx in cuts.items()}


def class_balance(splits):
    return {name: {"positive": sum(s.label for s in ss), "negative": sum(1 - s.label for s in ss)} for name, ss in splits.items()}


# -- I/O ---------------------------------------------------------------------


def write_pgm(path, image):
    """Write a [0, 1] image as binary 8-bit PGM (P5)."""
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []

    def skip_ws():
        nonlocal pos
        while pos < len(raw):
            if raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif raw[pos : pos + 1].isspace():
                pos += 1
            else:
                break

    while len(tokens) < 4:
        skip_ws()
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError(path, start, "truncated PGM header")
        tokens.append((raw[start:pos], start))
    (magic, m_off), *dims = tokens
    if magic != b"P5":
        raise ParseError(path, m_off, f"expected P5 magic, found {magic!r}")
    vals = []
    for tok, off in dims:
        if not tok.isdigit():
            raise ParseError(path, off, f"expected integer, found {tok!r}")
        vals.append(int(tok))
    w, h, maxval = vals
    if maxval != 255:
        raise ParseError(path, dims[2][1], "only 8-bit PGM files are supported")
    pos += 1  # single whitespace after maxval
    if len(raw) - pos < w * h:
        raise ParseError(path, len(raw), f"pixel data truncated: expected {w * h} bytes after offset {pos}")
    pix = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return pix.reshape(h, w).astype(np.float64) / 255.0


def save_dataset(splits, path, radius_px, nm_per_px):
    """Write ``path/{split}/*.pgm`` plus ``path/{split}.json`` annotations."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"radius_px": radius_px, "nm_per_px": nm_per_px, "splits": list(splits)}
    for name, samples in splits.items():
        d = root / name
        d.mkdir(exist_ok=True)
        entries = []
        for s in samples:
            fname = f"{s.image_id}.pgm"
            write_pgm(d / fname, s.image)
            entries.append({"image": fname, "centers": [[x, y] for x, y in s.centers], "label": s.label})
        _write_json(root / f"{name}.json", entries)
    _write_json(root / "dataset.json", meta)


def _write_json(path, obj):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1))
    tmp.replace(path)


def _read_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, len(text[: exc.pos].encode()), exc.msg) from None


def load_dataset(path, splits=None):
    root = Path(path)
    meta = _read_json(root / "dataset.json")
    out = {}
    for name in splits or meta["splits"]:
        ann_path = root / f"{name}.json"
        entries = _read_json(ann_path)
        if not isinstance(entries, list):
            raise ParseError(ann_path, 0, "annotation file must hold a JSON array")
        samples = []
        for e in entries:
            try:
                centers = [(float(x), float(y)) for x, y in e["centers"]]
                fname, label = e["image"], int(e["label"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(ann_path, 0, f"malformed entry {e!r}: {exc}") from None
            if label != int(bool(centers)):
                raise ParseError(ann_path, 0, f"label of {fname} inconsistent with its centers")
            img = read_pgm(root / name / fname)
            samples.append(DatasetSample(img, centers, meta["radius_px"], meta["nm_per_px"], Path(fname).stem))
        out[name] = samples
    return out
