"""Cell-class taxonomy, image store, phantom renderer, splits and balancing.

Real slide crops are clinical data and not redistributable, so a parametric
phantom renderer stands in at desk scale: each class gets a distinct
cytoplasm tint, size, nucleus layout and granulation so that pixel-level
features separate the classes.

Images are 64x64 RGB stored as binary PPM (P6, maxval 255) next to a JSON
manifest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

IMAGE_SIZE = 64

PROVENANCES = ("real", "phantom", "cgan", "dm")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class CellClass:
    name: str
    reference_count: int


# Reference prevalences of the seven cell types in the source annotations.
CLASSES = (
    CellClass("neutrophil", 12556),
    CellClass("multinuclear", 310),
    CellClass("mast", 1553),
    CellClass("macrophage", 24498),
    CellClass("lymphocyte", 46397),
    CellClass("erythrocyte", 339),
    CellClass("eosinophil", 105),
)
CLASS_NAMES = tuple(c.name for c in CLASSES)
CLASS_INDEX = {c.name: i for i, c in enumerate(CLASSES)}
REFERENCE_COUNTS = {c.name: c.reference_count for c in CLASSES}


@dataclass
class ImageRecord:
    """One 64x64 RGB stimulus with provenance and optional label/split."""

    id: str
    pixels: np.ndarray  # (64, 64, 3) uint8
    provenance: str
    class_label: str | None = None
    split: str | None = None

    def validate(self) -> None:
        if self.pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValidationError(
                f"record {self.id}: pixels must be {IMAGE_SIZE}x{IMAGE_SIZE}x3, "
                f"got {self.pixels.shape}"
            )
        if self.pixels.dtype != np.uint8:
            raise ValidationError(f"record {self.id}: pixels must be uint8")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"record {self.id}: bad provenance {self.provenance!r}")
        if self.provenance in ("cgan", "dm") and self.class_label is None:
            raise ValidationError(
                f"record {self.id}: synthetic records must carry the conditioned class"
            )
        if self.class_label is not None and self.class_label not in CLASS_INDEX:
            raise ValidationError(f"record {self.id}: unknown class {self.class_label!r}")
        if self.split is not None and self.split not in SPLITS:
            raise ValidationError(f"record {self.id}: unknown split {self.split!r}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not (0.0 < f < 1.0) for f in fr):
            raise ValidationError(f"split fractions must lie in (0,1): {fr}")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ValidationError(f"split fractions must sum to 1: {fr}")


# ---------------------------------------------------------------------------
# phantom renderer

# Per-class appearance parameters: cytoplasm tint (RGB), radius range,
# nucleus count range, nucleus radius factor, granule spec.
_PHANTOM_STYLE = {
    "neutrophil": dict(tint=(236, 205, 216), radius=(13, 16), nuclei=(3, 3), nucleus_scale=0.22, granules=None),
    "multinuclear": dict(tint=(207, 201, 236), radius=(23, 27), nuclei=(4, 6), nucleus_scale=0.15, granules=None),
    "mast": dict(tint=(192, 150, 210), radius=(16, 19), nuclei=(1, 1), nucleus_scale=0.42, granules=("dark", 120)),
    "macrophage": dict(tint=(182, 216, 205), radius=(23, 27), nuclei=(1, 1), nucleus_scale=0.38, granules=("vacuole", 6)),
    "lymphocyte": dict(tint=(150, 156, 216), radius=(10, 12), nuclei=(1, 1), nucleus_scale=0.72, granules=None),
    "erythrocyte": dict(tint=(226, 104, 99), radius=(10, 12), nuclei=(0, 0), nucleus_scale=0.0, granules=None),
    "eosinophil": dict(tint=(241, 172, 131), radius=(14, 17), nuclei=(2, 2), nucleus_scale=0.26, granules=("bright", 90)),
}

_NUCLEUS_COLOR = np.array([62.0, 50.0, 118.0])
_BACKGROUND = np.array([228.0, 230.0, 237.0])

_YY, _XX = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)


def _disk(cx: float, cy: float, rx: float, ry: float, soft: float = 1.2) -> np.ndarray:
    """Soft-edged ellipse mask in [0,1]."""
    d = np.sqrt(((_XX - cx) / rx) ** 2 + ((_YY - cy) / ry) ** 2)
    return np.clip((1.0 - d) / (soft / max(rx, ry)) + 1.0, 0.0, 1.0) * (d < 1.0 + soft / max(rx, ry))


def _blend(img: np.ndarray, mask: np.ndarray, color) -> None:
    img += mask[..., None] * (np.asarray(color, dtype=np.float64) - img)


def render_phantom(cell_class: str | CellClass, seed: int) -> ImageRecord:
    """Deterministic parametric cell image for one class and seed."""
    name = cell_class.name if isinstance(cell_class, CellClass) else cell_class
    if name not in _PHANTOM_STYLE:
        raise ValidationError(f"unknown cell class {name!r}")
    style = _PHANTOM_STYLE[name]
    rng = np.random.default_rng((CLASS_INDEX[name] + 1) * 1_000_003 + seed)

    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float64)
    img[:] = _BACKGROUND
    # coarse background texture, upsampled so it is smooth at pixel scale
    coarse = rng.normal(0.0, 5.0, size=(8, 8, 3))
    img += np.kron(coarse, np.ones((8, 8))[..., None])
    img += rng.normal(0.0, 2.0, size=img.shape)

    c = IMAGE_SIZE / 2.0
    cx = c + rng.uniform(-3.0, 3.0)
    cy = c + rng.uniform(-3.0, 3.0)
    r = rng.uniform(*style["radius"])
    squish = rng.uniform(0.85, 1.0)
    cyto = _disk(cx, cy, r, r * squish)
    tint = np.asarray(style["tint"], dtype=np.float64) + rng.normal(0.0, 4.0, size=3)
    _blend(img, cyto * 0.92, tint)

    if name == "erythrocyte":
        # central pallor instead of a nucleus
        pallor = _disk(cx, cy, r * 0.45, r * 0.45 * squish)
        _blend(img, pallor * 0.5, tint + 45.0)

    n_nuclei = int(rng.integers(style["nuclei"][0], style["nuclei"][1] + 1))
    nuc_r = r * style["nucleus_scale"]
    if n_nuclei == 1:
        jitter = rng.uniform(-0.15 * r, 0.15 * r, size=2)
        mask = _disk(cx + jitter[0], cy + jitter[1], nuc_r, nuc_r * rng.uniform(0.8, 1.0))
        _blend(img, mask * 0.95, _NUCLEUS_COLOR + rng.normal(0.0, 6.0, size=3))
    elif n_nuclei > 1:
        # place lobes on a ring wide enough that the blobs stay disjoint
        ring = min(max(nuc_r * 2.8, r * 0.52), r * 0.62)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        for k in range(n_nuclei):
            ang = phase + 2.0 * math.pi * k / n_nuclei + rng.uniform(-0.06, 0.06)
            nx = cx + ring * math.cos(ang)
            ny = cy + ring * math.sin(ang) * squish
            mask = _disk(nx, ny, nuc_r, nuc_r * rng.uniform(0.85, 1.0))
            _blend(img, mask * 0.95, _NUCLEUS_COLOR + rng.normal(0.0, 6.0, size=3))

    granules = style["granules"]
    if granules is not None:
        kind, count = granules
        for _ in range(count):
            ang = rng.uniform(0.0, 2.0 * math.pi)
            rad = r * math.sqrt(rng.uniform(0.05, 0.92))
            gx = cx + rad * math.cos(ang)
            gy = cy + rad * math.sin(ang) * squish
            if kind == "dark":
                # granules stay lighter than nuclei so blob counts see one nucleus
                mask = _disk(gx, gy, 1.1, 1.1, soft=0.8)
                _blend(img, mask * 0.55, (115, 62, 142))
            elif kind == "bright":
                mask = _disk(gx, gy, 1.2, 1.2, soft=0.8)
                _blend(img, mask * 0.8, (250, 122, 60))
            else:  # vacuole
                vr = rng.uniform(1.8, 3.2)
                mask = _disk(gx, gy, vr, vr, soft=1.0)
                _blend(img, mask * 0.6, tint + 35.0)

    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    record = ImageRecord(
        id=f"phantom-{name}-{seed:06d}",
        pixels=pixels,
        provenance="phantom",
        class_label=name,
    )
    record.validate()
    return record


def render_phantom_corpus(per_class: int, seed: int = 0) -> list[ImageRecord]:
    """``per_class`` phantoms for every class, seeds offset per class."""
    records = []
    for name in CLASS_NAMES:
        for k in range(per_class):
            records.append(render_phantom(name, seed + k))
    return records


# ---------------------------------------------------------------------------
# splits and balancing


def largest_remainder(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Integer allocation of ``n`` over ``fractions``; sizes off by at most 1."""
    ideal = [n * f for f in fractions]
    base = [math.floor(x) for x in ideal]
    left = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def stratified_split(records: list[ImageRecord], spec: SplitSpec) -> list[ImageRecord]:
    """Assign train/val/test per class with largest-remainder sizing.

    The partition is exhaustive and disjoint; per class the split sizes match
    the fractions within one item. Records are mutated in place and returned.
    """
    spec.validate()
    for rec in records:
        if rec.class_label is None:
            raise ValidationError(f"record {rec.id} has no class label; cannot stratify")
    rng = np.random.default_rng(spec.seed)
    by_class: dict[str, list[ImageRecord]] = {}
    for rec in records:
        by_class.setdefault(rec.class_label, []).append(rec)
    fractions = (spec.train_fraction, spec.val_fraction, spec.test_fraction)
    for name in sorted(by_class):
        group = by_class[name]
        order = rng.permutation(len(group))
        sizes = largest_remainder(len(group), fractions)
        bounds = np.cumsum(sizes)
        for pos, idx in enumerate(order):
            split = SPLITS[int(np.searchsorted(bounds, pos, side="right"))]
            group[idx].split = split
    return records


def class_weights(records: list[ImageRecord]) -> dict[str, float]:
    """weight(c) = total / (num_classes * count(c)).

    Makes weighted class frequencies uniform; uniform data gives weight 1.
    Only classes present in ``records`` participate.
    """
    counts: dict[str, int] = {}
    for rec in records:
        if rec.class_label is None:
            raise ValidationError(f"record {rec.id} has no class label")
        counts[rec.class_label] = counts.get(rec.class_label, 0) + 1
    if not counts:
        raise ValidationError("no records given")
    total = sum(counts.values())
    k = len(counts)
    return {name: total / (k * n) for name, n in counts.items()}


def reference_class_weights() -> dict[str, float]:
    """Class weights computed from the reference prevalences."""
    total = sum(REFERENCE_COUNTS.values())
    k = len(REFERENCE_COUNTS)
    return {name: total / (k * n) for name, n in REFERENCE_COUNTS.items()}


def oversample(records: list[ImageRecord], seed: int = 0) -> list[ImageRecord]:
    """Duplicate minority-class records until every class matches the max count.

    Originals are all retained; duplicates are seeded random picks from the
    class's own records. Balanced input comes back unchanged.
    """
    by_class: dict[str, list[ImageRecord]] = {}
    for rec in records:
        if rec.class_label is None:
            raise ValidationError(f"record {rec.id} has no class label")
        by_class.setdefault(rec.class_label, []).append(rec)
    if not by_class:
        raise ValidationError("no records given")
    target = max(len(g) for g in by_class.values())
    rng = np.random.default_rng(seed)
    out = list(records)
    for name in sorted(by_class):
        group = by_class[name]
        need = target - len(group)
        if need > 0:
            picks = rng.integers(0, len(group), size=need)
            out.extend(group[int(i)] for i in picks)
    return out


# ---------------------------------------------------------------------------
# PPM + manifest I/O

MANIFEST_NAME = "manifest.json"
IMAGES_DIR = "images"


def write_ppm(path, pixels: np.ndarray) -> None:
    if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, 3) or pixels.dtype != np.uint8:
        raise ValidationError(f"PPM pixels must be {IMAGE_SIZE}x{IMAGE_SIZE}x3 uint8")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ValidationError(f"not a binary PPM (P6): {path}")
    # header: magic, width, height, maxval, single whitespace, then raw pixels
    parts = []
    i = 2
    while len(parts) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":  # comment line
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        parts.append(int(data[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    width, height, maxval = parts
    if maxval != 255:
        raise ValidationError(f"unsupported PPM maxval {maxval}")
    raw = data[i : i + width * height * 3]
    if len(raw) != width * height * 3:
        raise ValidationError(f"truncated PPM: {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()


def save_corpus(records: list[ImageRecord], directory, *, append: bool = False) -> str:
    """Write PPM files plus the JSON manifest; returns the manifest path."""
    os.makedirs(os.path.join(directory, IMAGES_DIR), exist_ok=True)
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    entries = []
    if append and os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
        known = {e["id"] for e in entries}
        dup = [r.id for r in records if r.id in known]
        if dup:
            raise ValidationError(f"duplicate record ids in corpus: {dup[:3]}")
    for rec in records:
        rec.validate()
        fname = f"{rec.id}.ppm"
        write_ppm(os.path.join(directory, IMAGES_DIR, fname), rec.pixels)
        entries.append(
            {
                "id": rec.id,
                "file": f"{IMAGES_DIR}/{fname}",
                "class": rec.class_label,
                "provenance": rec.provenance,
                "split": rec.split,
            }
        )
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")
    return manifest_path


def load_corpus(directory) -> list[ImageRecord]:
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ValidationError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    records = []
    for e in entries:
        pixels = read_ppm(os.path.join(directory, e["file"]))
        rec = ImageRecord(
            id=e["id"],
            pixels=pixels,
            provenance=e["provenance"],
            class_label=e.get("class"),
            split=e.get("split"),
        )
        rec.validate()
        records.append(rec)
    return records


def save_manifest_only(records: list[ImageRecord], directory) -> str:
    """Rewrite the manifest for records whose images are already on disk."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    entries = [
        {
            "id": rec.id,
            "file": f"{IMAGES_DIR}/{rec.id}.ppm",
            "class": rec.class_label,
            "provenance": rec.provenance,
            "split": rec.split,
        }
        for rec in records
    ]
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")
    return manifest_path
