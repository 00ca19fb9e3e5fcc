"""Dataset ingestion, deterministic splits, and a synthetic cell generator.

The on-disk layout matches the public malaria corpus: a root directory with
``Parasitized/`` and ``Uninfected/`` subdirectories of PNG files. Label 0 is
uninfected, label 1 parasitized. Enumeration order is purely lexicographic
so a dataset lists identically on every platform.

The synthetic generator writes the same layout at desk scale: pink elliptical
cells on a dark background, with small purple inclusions inside parasitized
cells. The class signal lives mostly in color, so histogram features beat raw
pixels on it just as they do on the real corpus.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import png
from .errors import ConfigError, DataError
from .imaging import HsvImage, hsv_to_rgb
from .prng import SeededPrng

GENERATOR_VERSION = 1


@dataclass(frozen=True)
class DatasetItem:
    sample_id: str
    source: Path
    label: int


@dataclass(frozen=True)
class LabeledDataset:
    """Ordered (id, source, label) items; ids are root-relative paths."""

    items: tuple[DatasetItem, ...]

    def __len__(self) -> int:
        return len(self.items)

    @property
    def labels(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=np.int64)

    @property
    def class_counts(self) -> tuple[int, int]:
        labels = self.labels
        return int(np.sum(labels == 0)), int(np.sum(labels == 1))

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(tuple(self.items[int(i)] for i in indices))


_CLASS_DIRS = (("Parasitized", 1), ("Uninfected", 0))


def load_dataset(root) -> LabeledDataset:
    """Enumerate the Parasitized/Uninfected layout, sorted lexicographically."""
    root = Path(root)
    items = []
    for sub, label in _CLASS_DIRS:
        class_dir = root / sub
        if not class_dir.is_dir():
            raise DataError(f"missing class directory {class_dir}")
        for p in class_dir.iterdir():
            if p.is_file() and p.suffix.lower() == ".png":
                items.append(DatasetItem(f"{sub}/{p.name}", p, label))
    if not items:
        raise DataError(f"no PNG files found under {root}")
    items.sort(key=lambda it: it.sample_id)
    return LabeledDataset(tuple(items))


@dataclass(frozen=True)
class FoldAssignment:
    folds: int
    assignment: np.ndarray  # per-item fold index
    seed: int

    @property
    def digest(self) -> str:
        return fold_assignment_hash(self.assignment, self.folds, self.seed)


def stratified_fold_indices(labels, folds: int, seed: int) -> np.ndarray:
    """Per-class seeded shuffle, then round-robin fold assignment.

    Within each class the fold sizes differ by at most one.
    """
    labels = np.asarray(labels)
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    rng = SeededPrng(seed)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < folds:
            raise ConfigError(
                f"class {int(cls)} has {members.size} samples, fewer than folds={folds}"
            )
        shuffled = members[rng.permutation(members.size)]
        assignment[shuffled] = np.arange(members.size) % folds
    return assignment


def stratified_folds(dataset: LabeledDataset, folds: int, seed: int) -> FoldAssignment:
    return FoldAssignment(folds, stratified_fold_indices(dataset.labels, folds, seed), seed)


def fold_assignment_hash(assignment: np.ndarray, folds: int, seed: int) -> str:
    h = hashlib.sha256()
    h.update(f"folds={folds},seed={seed}:".encode())
    h.update(np.ascontiguousarray(assignment, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def train_val_split_indices(labels, val_fraction: float, seed: int):
    """Stratified index split; returns (train_idx, val_idx), each sorted."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    labels = np.asarray(labels)
    rng = SeededPrng(seed)
    val_parts, train_parts = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        shuffled = members[rng.permutation(members.size)]
        n_val = int(np.floor(members.size * val_fraction + 0.5))
        val_parts.append(shuffled[:n_val])
        train_parts.append(shuffled[n_val:])
    train_idx = np.sort(np.concatenate(train_parts))
    val_idx = np.sort(np.concatenate(val_parts))
    if train_idx.size == 0 or val_idx.size == 0:
        raise ConfigError(
            f"degenerate split: {train_idx.size} train / {val_idx.size} val samples"
        )
    return train_idx, val_idx


def train_val_split(dataset: LabeledDataset, val_fraction: float = 0.2, seed: int = 0):
    train_idx, val_idx = train_val_split_indices(dataset.labels, val_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(val_idx)


def batch_iter(n_items: int, batch_size: int, shuffle: bool, rng: SeededPrng | int | None = None):
    """Index batches covering every index exactly once; last batch may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise ConfigError("shuffle=True needs a seed or SeededPrng")
        if not isinstance(rng, SeededPrng):
            rng = SeededPrng(int(rng))
        order = rng.permutation(n_items)
    else:
        order = np.arange(n_items)
    return [order[lo : lo + batch_size] for lo in range(0, n_items, batch_size)]


# --------------------------------------------------------------------------
# Synthetic generator
# --------------------------------------------------------------------------

# Shape/color ranges, in HSV fractions. The cell tone band is narrow so
# same-class images are close in histogram space; compact purple inclusions
# mark parasitized cells. Thin stain streaks appear in both classes with a
# color band overlapping the parasite band, so color alone stays imperfect
# while blob shape remains learnable.
SYNTH_PARAMS = {
    "background_value": (0.03, 0.07),
    "cell_center_jitter": 0.16,
    "cell_radius": (0.30, 0.40),
    "cell_aspect": (0.70, 1.00),
    "cell_hue": (0.91, 0.985),
    "cell_sat": (0.30, 0.38),
    "cell_val": (0.76, 0.88),
    "cell_shading": 0.25,  # radial darkening toward the rim
    "parasite_count": (2, 3),
    "parasite_radius": (0.06, 0.11),
    "parasite_hue": (0.70, 0.82),
    "parasite_sat": (0.50, 0.75),
    "parasite_val": (0.52, 0.68),
    "artifact_prob": 0.50,
    "artifact_count": (1, 2),
    "artifact_len": (0.14, 0.22),
    "artifact_width": (0.015, 0.028),
    "artifact_hue": (0.60, 0.90),
    "artifact_sat": (0.40, 0.70),
    "artifact_val": (0.45, 0.70),
    "luminance_noise": 0.04,
    "chroma_noise": 0.01,
}


def _ellipse_mask(xx, yy, cx, cy, a, b, theta):
    ct, st = np.cos(theta), np.sin(theta)
    xr = (xx - cx) * ct + (yy - cy) * st
    yr = -(xx - cx) * st + (yy - cy) * ct
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def _hsv_color(rng: SeededPrng, p: dict, prefix: str) -> np.ndarray:
    def span(key):
        lo, hi = p[f"{prefix}_{key}"]
        return lo + rng.uniform() * (hi - lo)

    hsv = np.array([[[span("hue") % 1.0, span("sat"), span("val")]]])
    return hsv_to_rgb(HsvImage(hsv)).values[0, 0]


def _draw_cell(rng: SeededPrng, side: int, parasitized: bool) -> np.ndarray:
    p = SYNTH_PARAMS
    u = rng.uniform

    def span(key):
        lo, hi = p[key]
        return lo + u() * (hi - lo)

    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    img = np.empty((side, side, 3), dtype=np.float64)
    img[:] = span("background_value")

    cx = 0.5 + (u() - 0.5) * 2 * p["cell_center_jitter"]
    cy = 0.5 + (u() - 0.5) * 2 * p["cell_center_jitter"]
    a = span("cell_radius")
    b = a * span("cell_aspect")
    theta = u() * np.pi
    ct, st = np.cos(theta), np.sin(theta)
    xr = (xx - cx) * ct + (yy - cy) * st
    yr = -(xx - cx) * st + (yy - cy) * ct
    rho = (xr / a) ** 2 + (yr / b) ** 2
    cell_mask = rho <= 1.0
    shade = 1.0 - p["cell_shading"] * rho
    img[cell_mask] = _hsv_color(rng, p, "cell") * shade[cell_mask, None]

    def inside_cell_point(max_frac: float):
        r_frac = max_frac * np.sqrt(u())
        phi = u() * 2 * np.pi
        px = cx + r_frac * a * np.cos(phi) * ct - r_frac * b * np.sin(phi) * st
        py = cy + r_frac * a * np.cos(phi) * st + r_frac * b * np.sin(phi) * ct
        return px, py

    # Stain streaks occur in both classes: parasite-band color, thin shape.
    if u() < p["artifact_prob"]:
        count = p["artifact_count"][0] + rng.below(p["artifact_count"][1] - p["artifact_count"][0] + 1)
        for _ in range(count):
            sx, sy = inside_cell_point(0.65)
            streak = _ellipse_mask(xx, yy, sx, sy, span("artifact_len"),
                                   span("artifact_width"), u() * np.pi)
            img[streak & cell_mask] = _hsv_color(rng, p, "artifact")

    if parasitized:
        count = p["parasite_count"][0] + rng.below(p["parasite_count"][1] - p["parasite_count"][0] + 1)
        for _ in range(count):
            px, py = inside_cell_point(0.75)
            pr = span("parasite_radius")
            blob = (xx - px) ** 2 + (yy - py) ** 2 <= pr**2
            img[blob & cell_mask] = _hsv_color(rng, p, "parasite")

    lum = (u((side, side, 1)) - 0.5) * 2 * p["luminance_noise"]
    chroma = (u((side, side, 3)) - 0.5) * 2 * p["chroma_noise"]
    return np.clip(img + lum + chroma, 0.0, 1.0)


def synth_generate(out_dir, n: int, parasitized_fraction: float = 0.5,
                   side: int = 64, seed: int = 0) -> dict:
    """Write a synthetic Parasitized/Uninfected PNG tree plus manifest.json.

    Byte-reproducible: the same (seed, n, fraction, side) always produces
    identical files. Returns the manifest dict.
    """
    if n < 2:
        raise ConfigError(f"need n >= 2 images, got {n}")
    if not 0.0 < parasitized_fraction < 1.0:
        raise ConfigError(f"parasitized_fraction must be in (0, 1), got {parasitized_fraction}")
    if side < 8:
        raise ConfigError(f"side must be >= 8 pixels, got {side}")
    out_dir = Path(out_dir)
    n_par = int(np.floor(n * parasitized_fraction + 0.5))
    counts = {"Parasitized": n_par, "Uninfected": n - n_par}
    master = SeededPrng(seed)
    try:
        for sub, label in _CLASS_DIRS:
            class_dir = out_dir / sub
            class_dir.mkdir(parents=True, exist_ok=True)
            for i in range(counts[sub]):
                pixels = _draw_cell(master.split(), side, parasitized=bool(label))
                data = png.encode_rgb8(np.round(pixels * 255.0).astype(np.uint8))
                (class_dir / f"cell_{i:05d}.png").write_bytes(data)
        manifest = {
            "generator_version": GENERATOR_VERSION,
            "seed": seed,
            "n": n,
            "parasitized_fraction": parasitized_fraction,
            "side": side,
            "counts": counts,
            "params": SYNTH_PARAMS,
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise DataError(f"cannot write synthetic dataset under {out_dir}: {exc}") from exc
    return manifest
