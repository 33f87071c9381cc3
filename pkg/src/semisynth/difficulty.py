"""Difficulty maps derived from discriminator score grids.

A region the generator renders well fools the discriminator (score near the
real target 1), so its difficulty |1 - score| is low; poorly rendered
regions score low and get high difficulty. The map is used purely as a loss
weight: it is always detached, so no gradient ever reaches the discriminator
through it.

Background pixels (no foreground anywhere) are pinned to the constant 0.2 so
they keep a small, nonzero weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

BACKGROUND_VALUE = 0.2
CLAMP_MAX = 2.0  # raw scores are unbounded; bounding the weight keeps losses stable


@dataclass
class DifficultyMap:
    full: torch.Tensor                    # (B, 1, H, W), detached, >= 0
    pyramid: dict[int, torch.Tensor] = field(default_factory=dict)
    background_value: float = BACKGROUND_VALUE
    stop_gradient: bool = True


def compute_difficulty_map(
    disc_scores: torch.Tensor,
    foreground_mask: torch.Tensor,
    out_size: int | tuple[int, int],
    clamp_max: float = CLAMP_MAX,
    background_value: float = BACKGROUND_VALUE,
) -> DifficultyMap:
    """Per-cell |1 - score|, bilinearly upsampled to image resolution,
    clamped to [0, clamp_max], then background pixels set to exactly
    ``background_value``. The result carries no autograd history."""
    if not torch.isfinite(disc_scores).all():
        raise ValueError("discriminator scores contain non-finite values")
    if isinstance(out_size, int):
        out_size = (out_size, out_size)
    if foreground_mask.dim() == 2:
        foreground_mask = foreground_mask[None, None]
    elif foreground_mask.dim() == 3:
        foreground_mask = foreground_mask[:, None]
    if tuple(foreground_mask.shape[2:]) != tuple(out_size):
        raise ValueError(
            f"mask shape {tuple(foreground_mask.shape[2:])} != out_size {tuple(out_size)}"
        )

    diff = (1.0 - disc_scores.detach()).abs()
    full = F.interpolate(diff, size=out_size, mode="bilinear", align_corners=False)
    full = full.clamp(0.0, clamp_max)
    full = torch.where(foreground_mask.bool(), full, torch.full_like(full, background_value))
    return DifficultyMap(full=full)


def build_pyramid(dmap: DifficultyMap, tap_shapes: dict[int, tuple[int, int]]) -> dict[int, torch.Tensor]:
    """Average-pool the full map down to each tap's spatial shape."""
    _, _, h, w = dmap.full.shape
    pyramid = {}
    for idx, (th, tw) in tap_shapes.items():
        if th > h or tw > w:
            raise ValueError(f"tap {idx} shape ({th}, {tw}) larger than map ({h}, {w})")
        pyramid[idx] = F.adaptive_avg_pool2d(dmap.full, (th, tw))
    dmap.pyramid = pyramid
    return pyramid


def constant_difficulty_map(
    batch: int,
    out_size: int | tuple[int, int],
    tap_shapes: dict[int, tuple[int, int]] | None = None,
    value: float = 1.0,
) -> DifficultyMap:
    """A map that is exactly ``value`` everywhere (first-stage override)."""
    if isinstance(out_size, int):
        out_size = (out_size, out_size)
    full = torch.full((batch, 1, *out_size), value)
    dmap = DifficultyMap(full=full)
    if tap_shapes:
        dmap.pyramid = {
            idx: torch.full((batch, 1, *shape), value) for idx, shape in tap_shapes.items()
        }
    return dmap
