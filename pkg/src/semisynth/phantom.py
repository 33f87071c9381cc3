"""Procedural multimodal phantom data.

Generates brain-like test images with nested lesion/core regions, renders them
into three source modalities plus one target modality, and manages
train/val/test splits with a paired/unpaired division of the training
patients.

Every piece of randomness is derived from explicit integer seeds, so datasets
are bit-reproducible: the same (seed, patient_id, slice_id) triple always
yields the same sample, whether samples are generated serially or in
parallel.

Intensity model
---------------
Each rendered pixel gets a base level per (modality, region) from
``REGION_LEVELS``, shifted by a per-slice jitter and modulated by a smooth
seeded texture field::

    value = clip(level + jitter + NOISE_GAIN * (texture - 0.5), FOREGROUND_FLOOR, 1.0)

which is a fixed monotone piecewise-linear transfer function of the texture
variable for every (modality, region) pair.  Background pixels are exactly 0
in all modalities.  The target modality's core level is far above every
source modality's core level, emulating a contrast-enhanced acquisition.
"""

from __future__ import annotations

import json
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Base intensity per (modality, region).  Published contract: changing these
# changes every rendered dataset.
REGION_LEVELS = {
    "src0": {"tissue": 0.55, "tumor": 0.35, "core": 0.30},
    "src1": {"tissue": 0.35, "tumor": 0.65, "core": 0.55},
    "src2": {"tissue": 0.45, "tumor": 0.75, "core": 0.62},
    "target": {"tissue": 0.50, "tumor": 0.40, "core": 0.92},
}
MODALITY_ORDER = ("src0", "src1", "src2", "target")

NOISE_GAIN = 0.12        # slope of the transfer function around each level
LEVEL_JITTER = 0.06      # per-slice uniform offset range for each (modality, region)
FOREGROUND_FLOOR = 0.05  # foreground intensities never fall below this
TEXTURE_CELLS = 8        # texture lattice is (canvas // TEXTURE_CELLS)^2 before upsampling

MIN_CANVAS = 16
TRAIN_FRACTION, VAL_FRACTION = 0.7, 0.1  # test gets the remainder (7:1:2)


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse in pixel coordinates."""

    cy: float
    cx: float
    ry: float
    rx: float


@dataclass(frozen=True)
class Blob:
    """Star-convex region: an ellipse whose radius is modulated by two
    low-order harmonics with amplitude ``irregularity``."""

    cy: float
    cx: float
    ry: float
    rx: float
    irregularity: float
    phase1: float = 0.0
    phase2: float = 0.0


@dataclass(frozen=True)
class Phantom:
    """Geometry of one synthetic slice. Rasterized masks satisfy
    core ⊆ tumor ⊆ brain by construction (nested intersection)."""

    canvas_size: int
    brain_region: Ellipse
    tumor_region: Blob
    core_region: Blob
    texture_seed: int

    def masks(self) -> dict[str, np.ndarray]:
        brain = _ellipse_mask(self.canvas_size, self.brain_region)
        tumor = _blob_mask(self.canvas_size, self.tumor_region) & brain
        core = _blob_mask(self.canvas_size, self.core_region) & tumor
        return {"brain": brain, "tumor": tumor, "core": core}


@dataclass(eq=False)
class MultimodalSample:
    """One training/eval item: three source images, optional target image."""

    sources: np.ndarray            # (3, H, W) float32 in [0, 1]
    target: np.ndarray | None      # (H, W) float32 in [0, 1], or None (unpaired)
    foreground_mask: np.ndarray    # (H, W) bool, true where any source > 0
    patient_id: int
    slice_id: int
    has_core: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.sources.shape[1], self.sources.shape[2]


@dataclass(eq=False)
class DatasetSplit:
    paired: list[MultimodalSample]
    unpaired: list[MultimodalSample]
    val: list[MultimodalSample]
    test: list[MultimodalSample]

    def subsets(self) -> dict[str, list[MultimodalSample]]:
        return {"paired": self.paired, "unpaired": self.unpaired,
                "val": self.val, "test": self.test}


def _ellipse_mask(canvas: int, e: Ellipse) -> np.ndarray:
    y, x = np.ogrid[:canvas, :canvas]
    return ((y - e.cy) / e.ry) ** 2 + ((x - e.cx) / e.rx) ** 2 <= 1.0


def _blob_mask(canvas: int, b: Blob) -> np.ndarray:
    if b.ry <= 0.0 or b.rx <= 0.0:
        return np.zeros((canvas, canvas), dtype=bool)
    y, x = np.ogrid[:canvas, :canvas]
    dy, dx = y - b.cy, x - b.cx
    theta = np.arctan2(dy, dx)
    # bounded modulation: |0.6 sin + 0.4 sin| <= 1, so radius scale in
    # [1 - irregularity, 1 + irregularity]
    mod = 0.6 * np.sin(2.0 * theta + b.phase1) + 0.4 * np.sin(3.0 * theta + b.phase2)
    limit = (1.0 + b.irregularity * mod) ** 2
    return (dy / b.ry) ** 2 + (dx / b.rx) ** 2 <= limit


def generate_phantom(seed: int, canvas_size: int = 64) -> Phantom:
    """Deterministically generate slice geometry from an integer seed.

    The brain ellipse parameter ranges are chosen so the rasterized brain
    always covers 30-80% of the canvas; the lesion blob is placed inside the
    brain and the core blob (present with probability 1/2) inside the lesion.
    """
    if canvas_size < MIN_CANVAS:
        raise ValueError(
            f"canvas_size must be >= {MIN_CANVAS} to fit nested regions, got {canvas_size}"
        )
    rng = np.random.default_rng(seed)
    n = float(canvas_size)

    brain = Ellipse(
        cy=n * (0.5 + rng.uniform(-0.02, 0.02)),
        cx=n * (0.5 + rng.uniform(-0.02, 0.02)),
        ry=n * rng.uniform(0.36, 0.46),
        rx=n * rng.uniform(0.33, 0.44),
    )

    r_inner = min(brain.ry, brain.rx)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    dist = rng.uniform(0.0, 0.35) * r_inner
    tumor = Blob(
        cy=brain.cy + dist * math.sin(angle),
        cx=brain.cx + dist * math.cos(angle),
        ry=rng.uniform(0.16, 0.30) * r_inner,
        rx=rng.uniform(0.16, 0.30) * r_inner,
        irregularity=rng.uniform(0.05, 0.45),
        phase1=rng.uniform(0.0, 2.0 * math.pi),
        phase2=rng.uniform(0.0, 2.0 * math.pi),
    )

    with_core = rng.random() < 0.5
    core_scale = rng.uniform(0.35, 0.60) if with_core else 0.0
    core = Blob(
        cy=tumor.cy + rng.uniform(-0.2, 0.2) * tumor.ry,
        cx=tumor.cx + rng.uniform(-0.2, 0.2) * tumor.rx,
        ry=core_scale * tumor.ry,
        rx=core_scale * tumor.rx,
        irregularity=rng.uniform(0.05, 0.50),
        phase1=rng.uniform(0.0, 2.0 * math.pi),
        phase2=rng.uniform(0.0, 2.0 * math.pi),
    )

    texture_seed = int(rng.integers(0, 2**31 - 1))
    phantom = Phantom(canvas_size, brain, tumor, core, texture_seed)

    frac = phantom.masks()["brain"].mean()
    if not 0.3 <= frac <= 0.8:
        raise RuntimeError(f"brain coverage {frac:.3f} outside [0.3, 0.8] for seed {seed}")
    return phantom


def _smooth_texture(rng: np.random.Generator, canvas: int) -> np.ndarray:
    """Seeded smooth noise in [0, 1]: a coarse uniform lattice upsampled bilinearly."""
    g = max(2, canvas // TEXTURE_CELLS)
    coarse = rng.random((g, g))
    # align-corners bilinear interpolation onto the full canvas
    pos = np.linspace(0.0, g - 1.0, canvas)
    i0 = np.clip(np.floor(pos).astype(int), 0, g - 2)
    frac = pos - i0
    rows = coarse[i0, :] * (1.0 - frac)[:, None] + coarse[i0 + 1, :] * frac[:, None]
    return rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]


def render_modalities(phantom: Phantom, patient_id: int = 0, slice_id: int = 0) -> MultimodalSample:
    """Render a phantom into 3 source images and 1 target image.

    Per-modality, per-region transfer functions are applied to a smooth
    seeded texture field; the target modality boosts the core region far
    above every source modality. Background stays exactly zero.
    """
    masks = phantom.masks()
    regions = {
        "tissue": masks["brain"] & ~masks["tumor"],
        "tumor": masks["tumor"] & ~masks["core"],
        "core": masks["core"],
    }
    rng = np.random.default_rng(phantom.texture_seed)
    jitter = {
        mod: {reg: rng.uniform(-LEVEL_JITTER, LEVEL_JITTER) for reg in ("tissue", "tumor", "core")}
        for mod in MODALITY_ORDER
    }

    images = {}
    for mod in MODALITY_ORDER:
        texture = _smooth_texture(rng, phantom.canvas_size)
        img = np.zeros((phantom.canvas_size, phantom.canvas_size), dtype=np.float64)
        for reg, mask in regions.items():
            level = REGION_LEVELS[mod][reg] + jitter[mod][reg]
            vals = np.clip(level + NOISE_GAIN * (texture - 0.5), FOREGROUND_FLOOR, 1.0)
            img[mask] = vals[mask]
        images[mod] = img.astype(np.float32)

    sources = np.stack([images["src0"], images["src1"], images["src2"]])
    foreground = sources.max(axis=0) > 0.0
    return MultimodalSample(
        sources=sources,
        target=images["target"],
        foreground_mask=foreground,
        patient_id=patient_id,
        slice_id=slice_id,
        has_core=bool(masks["core"].any()),
    )


def _sample_seed(seed: int, patient_id: int, slice_id: int) -> int:
    return int(np.random.SeedSequence([seed, patient_id, slice_id]).generate_state(1)[0])


def make_sample(seed: int, patient_id: int, slice_id: int, canvas_size: int = 64) -> MultimodalSample:
    """Sample for (patient, slice) under a global seed; pure in its arguments."""
    phantom = generate_phantom(_sample_seed(seed, patient_id, slice_id), canvas_size)
    return render_modalities(phantom, patient_id=patient_id, slice_id=slice_id)


def _strip_target(sample: MultimodalSample) -> MultimodalSample:
    return MultimodalSample(
        sources=sample.sources,
        target=None,
        foreground_mask=sample.foreground_mask,
        patient_id=sample.patient_id,
        slice_id=sample.slice_id,
        has_core=sample.has_core,
    )


def _balance_core_counts(samples: list[MultimodalSample], rng: np.random.Generator) -> list[MultimodalSample]:
    """Oversample the minority has_core class with replacement until 1:1."""
    pos = [s for s in samples if s.has_core]
    neg = [s for s in samples if not s.has_core]
    if not pos or not neg:
        return list(samples)
    minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    extra_idx = rng.integers(0, len(minority), size=len(majority) - len(minority))
    return list(samples) + [minority[i] for i in extra_idx]


def build_split(
    n_patients: int,
    slices_per_patient: int,
    paired_fraction: float,
    seed: int,
    canvas_size: int = 64,
) -> DatasetSplit:
    """Patient-level 7:1:2 split with a paired/unpaired division of training.

    Within the training patients, ceil(paired_fraction * n_train) patients
    keep their targets (paired set) and the rest have targets dropped
    (unpaired set). Training subsets are independently resampled to a 1:1
    ratio of has_core / no-core slices. Fully deterministic in ``seed``.
    """
    if n_patients < 10:
        raise ValueError(f"n_patients must be >= 10 for a 7:1:2 split, got {n_patients}")
    if slices_per_patient < 1:
        raise ValueError("slices_per_patient must be >= 1")
    if not 0.0 < paired_fraction <= 1.0:
        raise ValueError(f"paired_fraction must be in (0, 1], got {paired_fraction}")

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    patients = shuffle_rng.permutation(n_patients)

    n_train = round(TRAIN_FRACTION * n_patients)
    n_val = max(1, round(VAL_FRACTION * n_patients))
    n_test = n_patients - n_train - n_val
    train_pat = patients[:n_train]
    val_pat = patients[n_train:n_train + n_val]
    test_pat = patients[n_train + n_val:]

    k = math.ceil(paired_fraction * n_train)
    if paired_fraction < 0.5:
        # keep the unpaired pool strictly larger than the paired pool
        k = min(k, math.ceil(n_train / 2) - 1)
    k = max(1, k)
    paired_pat = train_pat[:k]
    unpaired_pat = train_pat[k:]

    def render_all(pats) -> list[MultimodalSample]:
        return [
            make_sample(seed, int(pid), sid, canvas_size)
            for pid in pats
            for sid in range(slices_per_patient)
        ]

    paired = render_all(paired_pat)
    unpaired = [_strip_target(s) for s in render_all(unpaired_pat)]
    paired = _balance_core_counts(paired, np.random.default_rng(np.random.SeedSequence([seed, 2])))
    unpaired = _balance_core_counts(unpaired, np.random.default_rng(np.random.SeedSequence([seed, 3])))

    return DatasetSplit(
        paired=paired,
        unpaired=unpaired,
        val=render_all(val_pat),
        test=render_all(test_pat),
    )


# ---------------------------------------------------------------------------
# Disk format: per sample, a flat little-endian float32 blob in channel-major
# order plus a JSON sidecar header. Round-trips are bit-exact.
# ---------------------------------------------------------------------------

def save_split(split: DatasetSplit, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    for name, samples in split.subsets().items():
        sub = out_dir / name
        sub.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(samples):
            channels = [s.sources[c] for c in range(s.sources.shape[0])]
            if s.target is not None:
                channels.append(s.target)
            data = np.ascontiguousarray(np.stack(channels), dtype="<f4")
            header = {
                "shape": [int(s.shape[0]), int(s.shape[1])],
                "channels": len(channels),
                "patient_id": int(s.patient_id),
                "slice_id": int(s.slice_id),
                "has_core": bool(s.has_core),
                "has_target": s.target is not None,
            }
            stem = sub / f"sample_{i:05d}"
            stem.with_suffix(".bin").write_bytes(data.tobytes())
            stem.with_suffix(".json").write_text(json.dumps(header, sort_keys=True))
    return out_dir


def _load_sample(stem: Path) -> MultimodalSample:
    header = json.loads(stem.with_suffix(".json").read_text())
    h, w = header["shape"]
    data = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f4")
    arr = data.reshape(header["channels"], h, w).copy()
    sources = arr[:3]
    target = arr[3] if header["has_target"] else None
    return MultimodalSample(
        sources=sources,
        target=target,
        foreground_mask=sources.max(axis=0) > 0.0,
        patient_id=header["patient_id"],
        slice_id=header["slice_id"],
        has_core=header["has_core"],
    )


def load_split(in_dir: str | Path) -> DatasetSplit:
    in_dir = Path(in_dir)
    loaded = {}
    for name in ("paired", "unpaired", "val", "test"):
        sub = in_dir / name
        stems = sorted(p.with_suffix("") for p in sub.glob("sample_*.bin"))
        loaded[name] = [_load_sample(stem) for stem in stems]
    return DatasetSplit(**loaded)


def split_hash(split: DatasetSplit) -> str:
    """Content hash of a split; equal hashes mean identical data and layout."""
    h = hashlib.sha256()
    for name, samples in split.subsets().items():
        h.update(name.encode())
        for s in samples:
            h.update(f"{s.patient_id},{s.slice_id},{int(s.has_core)}".encode())
            h.update(np.ascontiguousarray(s.sources, dtype="<f4").tobytes())
            if s.target is not None:
                h.update(np.ascontiguousarray(s.target, dtype="<f4").tobytes())
    return h.hexdigest()
