"""Image quality metrics (SSIM, PSNR, MSE), error maps, and report assembly.

SSIM follows the single-scale reference formulation: an 11x11 Gaussian
window with sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0, averaged over
all valid (fully interior) window positions. When an image is smaller than
the window, the window shrinks to the largest odd size that fits and the
Gaussian is renormalized; the rule is deterministic so oracles can mirror
it.

PSNR on bit-identical images is reported as infinity by ``psnr`` and turned
into an ``identical`` flag by the report layer, keeping CSV columns numeric.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _as_image(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError(f"{name} values outside [0, 1]: [{arr.min()}, {arr.max()}]")
    return arr


def ssim(a, b, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
         k1: float = SSIM_K1, k2: float = SSIM_K2, data_range: float = DATA_RANGE) -> float:
    a = _as_image(a, "a")
    b = _as_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")

    win = min(window, min(a.shape))
    if win % 2 == 0:
        win -= 1
    if win < 2:
        raise ValueError(f"image {a.shape} too small for SSIM")
    kernel = gaussian_kernel(win, sigma)

    def windowed_mean(img):
        views = np.lib.stride_tricks.sliding_window_view(img, (win, win))
        return np.tensordot(views, kernel, axes=([2, 3], [0, 1]))

    mu_a = windowed_mean(a)
    mu_b = windowed_mean(b)
    var_a = windowed_mean(a * a) - mu_a ** 2
    var_b = windowed_mean(b * b) - mu_b ** 2
    cov = windowed_mean(a * b) - mu_a * mu_b

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).mean())


def psnr(a, b, data_range: float = DATA_RANGE) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / err)


def error_map(target, pred) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {pred.shape}")
    return np.abs(target - pred)


def export_grayscale(img, path: str | Path, scale: float = 255.0) -> dict:
    """Write an image as 8-bit grayscale PNG, values multiplied by ``scale``
    and clipped to [0, 255]; returns metadata with the scale used."""
    arr = np.clip(np.asarray(img, dtype=np.float64) * scale, 0.0, 255.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(arr).astype(np.uint8), mode="L").save(path)
    meta = {"scale": scale, "path": str(path)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True))
    return meta


@dataclass
class SampleMetrics:
    index: int
    patient_id: int
    slice_id: int
    ssim: float
    psnr_db: float | None   # None when flagged identical
    mse: float
    identical: bool


@dataclass
class MetricReport:
    rows: list[SampleMetrics]
    split_name: str
    config_hash: str = ""
    checkpoint_id: str = ""
    extra: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        if not self.rows:
            return {"ssim": math.nan, "psnr_db": math.nan, "mse": math.nan, "n": 0,
                    "n_identical": 0}
        finite_psnr = [r.psnr_db for r in self.rows if r.psnr_db is not None]
        return {
            "ssim": float(np.mean([r.ssim for r in self.rows])),
            "psnr_db": float(np.mean(finite_psnr)) if finite_psnr else math.nan,
            "mse": float(np.mean([r.mse for r in self.rows])),
            "n": len(self.rows),
            "n_identical": sum(r.identical for r in self.rows),
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        agg = self.aggregate()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["# split", self.split_name, "config", self.config_hash,
                             "checkpoint", self.checkpoint_id])
            writer.writerow(["index", "patient_id", "slice_id", "ssim", "psnr_db",
                             "mse", "identical"])
            for r in self.rows:
                writer.writerow([r.index, r.patient_id, r.slice_id, repr(r.ssim),
                                 "" if r.psnr_db is None else repr(r.psnr_db),
                                 repr(r.mse), int(r.identical)])
            writer.writerow(["aggregate", "", "", repr(agg["ssim"]),
                             "" if math.isnan(agg["psnr_db"]) else repr(agg["psnr_db"]),
                             repr(agg["mse"]), agg["n_identical"]])
        return path


def score_pairs(pairs, split_name: str = "", config_hash: str = "",
                checkpoint_id: str = "", meta=None) -> MetricReport:
    """Build a MetricReport from (target, prediction, patient_id, slice_id) tuples."""
    rows = []
    for i, (target, pred, pid, sid) in enumerate(pairs):
        p = psnr(target, pred)
        identical = math.isinf(p)
        rows.append(SampleMetrics(
            index=i, patient_id=pid, slice_id=sid,
            ssim=ssim(target, pred),
            psnr_db=None if identical else p,
            mse=mse(target, pred),
            identical=identical,
        ))
    return MetricReport(rows=rows, split_name=split_name, config_hash=config_hash,
                        checkpoint_id=checkpoint_id, extra=dict(meta or {}))
