"""Objective terms for teacher/student training.

Teacher (paired data):
    total_T = lambda_pid * pid + lambda_pad * pad + lambda_gan * gan_g

Student (unpaired data, distilled from the teacher):
    total_S = lambda_id * id + lambda_fd * fd + lambda_pad * pad + lambda_gan * gan_g

The two-network objective optimized at epoch t of T is
total_T + (1 - t/T) * total_S.

All difficulty weights enter as detached constants: increasing a weight
raises the corresponding loss but never routes gradient into the
discriminator that produced it. Spatial reductions are means over elements,
which keeps the lambda scales independent of image size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .nets import FeatureTapSet, ProjectionHeads, extract_patch_embeddings


@dataclass(frozen=True)
class LossWeights:
    lambda_pid: float = 100.0
    lambda_pad: float = 1.0
    lambda_gan: float = 1.0
    lambda_id: float = 100.0
    lambda_fd: float = 1.0
    tau: float = 0.07

    def __post_init__(self):
        for name in ("lambda_pid", "lambda_pad", "lambda_gan", "lambda_id", "lambda_fd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class PatchSamplingPlan:
    """How many grid locations to sample per tap; each location's positive is
    contrasted against the positives at the other count-1 locations."""

    count: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("count must be >= 2 (need at least one negative)")

    @property
    def negatives_per_positive(self) -> int:
        return self.count - 1


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def pixelwise_difficulty_l1(weight_map: torch.Tensor, target: torch.Tensor,
                            pred: torch.Tensor) -> torch.Tensor:
    """Mean over pixels of weight * |target - pred|; weight is a constant."""
    _check_same_shape(target, pred, "pixelwise_difficulty_l1")
    _check_same_shape(weight_map, pred, "pixelwise_difficulty_l1 weight")
    return (weight_map.detach() * (target - pred).abs()).mean()


def sample_patch_locations(grid_shape: tuple[int, int], count: int,
                           generator: torch.Generator) -> list[tuple[int, int]]:
    h, w = grid_shape
    if count > h * w:
        raise ValueError(f"cannot sample {count} locations from a {h}x{w} grid")
    flat = torch.randperm(h * w, generator=generator)[:count]
    return [(int(i) // w, int(i) % w) for i in flat]


def patch_difficulty_infonce(
    anchor_taps: FeatureTapSet,
    positive_taps: FeatureTapSet,
    heads: ProjectionHeads,
    plan: PatchSamplingPlan,
    pyramid: dict[int, torch.Tensor],
    tau: float = 0.07,
) -> torch.Tensor:
    """Difficulty-weighted patchwise contrastive loss.

    For each tap and each sampled location, the anchor embedding (from the
    input stream) is pulled toward the positive embedding (same location of
    the synthesized stream) against the positives at the other sampled
    locations of the same image. Each location's cross-entropy is weighted
    by the difficulty pyramid value there; per tap the weighted terms are
    averaged over locations, and tap values are summed.
    """
    gen = torch.Generator().manual_seed(plan.seed)
    total = None
    for idx in heads.tap_indices:
        anchor_grid = anchor_taps.taps[idx]
        _check_same_shape(anchor_grid, positive_taps.taps[idx], f"tap {idx}")
        b, _, h, w = anchor_grid.shape
        locs = sample_patch_locations((h, w), plan.count, gen)
        emb_a = extract_patch_embeddings(anchor_taps, heads, {idx: locs})[idx]   # (B, S, E)
        emb_p = extract_patch_embeddings(positive_taps, heads, {idx: locs})[idx]

        s = emb_a.shape[1]
        logits = torch.einsum("bse,bte->bst", emb_a, emb_p) / tau
        labels = torch.arange(s, device=logits.device).repeat(b)
        ce = F.cross_entropy(logits.reshape(b * s, s), labels, reduction="none")

        rows = torch.tensor([r for r, _ in locs], dtype=torch.long)
        cols = torch.tensor([c for _, c in locs], dtype=torch.long)
        weights = pyramid[idx][:, 0, rows, cols].detach().reshape(-1)
        tap_loss = (weights * ce).mean()
        total = tap_loss if total is None else total + tap_loss
    if total is None:
        raise ValueError("no projection heads: nothing to contrast")
    return total


def lsgan_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Discriminator side: 0.5 mean((real - 1)^2) + 0.5 mean(fake^2)."""
    if not torch.isfinite(real_scores).all() or not torch.isfinite(fake_scores).all():
        raise ValueError("non-finite discriminator scores")
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores ** 2).mean()


def lsgan_g(fake_scores: torch.Tensor) -> torch.Tensor:
    """Generator side: mean((fake - 1)^2)."""
    if not torch.isfinite(fake_scores).all():
        raise ValueError("non-finite discriminator scores")
    return ((fake_scores - 1.0) ** 2).mean()


def image_distill(weight_map: torch.Tensor, teacher_out: torch.Tensor,
                  student_out: torch.Tensor) -> torch.Tensor:
    """Difficulty-weighted L1 between teacher and student images; the teacher
    output is a pseudo ground truth, so gradient flows only into the student."""
    _check_same_shape(teacher_out, student_out, "image_distill")
    _check_same_shape(weight_map, student_out, "image_distill weight")
    return (weight_map.detach() * (teacher_out.detach() - student_out).abs()).mean()


def feature_distill(
    pyramid: dict[int, torch.Tensor],
    teacher_taps: FeatureTapSet,
    student_taps: FeatureTapSet,
    distill_indices,
) -> torch.Tensor:
    """Difficulty-weighted L1 between teacher and student activations,
    averaged over the selected taps; teacher features are gradient-severed."""
    indices = list(distill_indices)
    if not indices:
        raise ValueError("distill_indices is empty")
    total = None
    for k in indices:
        if k not in teacher_taps.taps or k not in student_taps.taps:
            raise KeyError(f"distillation tap {k} missing from tap set")
        if k not in pyramid:
            raise KeyError(f"distillation tap {k} missing from difficulty pyramid")
        t, s = teacher_taps.taps[k], student_taps.taps[k]
        _check_same_shape(t, s, f"feature_distill tap {k}")
        term = (pyramid[k].detach() * (t.detach() - s).abs()).mean()
        total = term if total is None else total + term
    return total / len(indices)


def teacher_total(pid, pad, gan_g, weights: LossWeights):
    return weights.lambda_pid * pid + weights.lambda_pad * pad + weights.lambda_gan * gan_g


def student_total(id_loss, fd, pad, gan_g, weights: LossWeights):
    return (weights.lambda_id * id_loss + weights.lambda_fd * fd
            + weights.lambda_pad * pad + weights.lambda_gan * gan_g)


def schedule_weight(t: int, total_epochs: int) -> float:
    if not 0 <= t < total_epochs:
        raise ValueError(f"epoch t={t} outside [0, {total_epochs})")
    return 1.0 - t / total_epochs


def combined_objective(total_teacher, total_student, t: int, total_epochs: int):
    """Two-network objective: teacher term plus (1 - t/T)-weighted student term."""
    return total_teacher + schedule_weight(t, total_epochs) * total_student


METRICS_COLUMNS = (
    "step", "stage", "pid", "pad", "gan_g", "gan_d", "id", "fd",
    "total_teacher", "total_student", "schedule_weight",
)


@dataclass
class LossBundle:
    """Itemized loss values for one training step.

    pid/pad/gan_g/gan_d are the teacher-side terms; student_pad and
    student_gan_* hold the student's own contrastive and adversarial values
    so both totals recompute exactly from their parts.
    """

    pid: float = 0.0
    pad: float = 0.0
    gan_g: float = 0.0
    gan_d: float = 0.0
    id: float = 0.0
    fd: float = 0.0
    student_pad: float = 0.0
    student_gan_g: float = 0.0
    student_gan_d: float = 0.0
    total_teacher: float = 0.0
    total_student: float = 0.0
    schedule_weight: float = 1.0

    @classmethod
    def from_parts(cls, weights: LossWeights, *, pid=0.0, pad=0.0, gan_g=0.0, gan_d=0.0,
                   id=0.0, fd=0.0, student_pad=0.0, student_gan_g=0.0, student_gan_d=0.0,
                   schedule_weight=1.0, include_student=True) -> "LossBundle":
        def val(x):
            return float(x.detach()) if torch.is_tensor(x) else float(x)

        pid, pad, gan_g, gan_d = val(pid), val(pad), val(gan_g), val(gan_d)
        id, fd = val(id), val(fd)
        student_pad, student_gan_g, student_gan_d = \
            val(student_pad), val(student_gan_g), val(student_gan_d)
        total_t = teacher_total(pid, pad, gan_g, weights)
        total_s = 0.0
        if include_student:
            total_s = student_total(id, fd, student_pad, student_gan_g, weights)
        return cls(
            pid=pid, pad=pad, gan_g=gan_g, gan_d=gan_d, id=id, fd=fd,
            student_pad=student_pad, student_gan_g=student_gan_g,
            student_gan_d=student_gan_d, total_teacher=total_t, total_student=total_s,
            schedule_weight=val(schedule_weight),
        )

    def validate(self, weights: LossWeights, rel_tol: float = 1e-6):
        for name, value in vars(self).items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite loss entry {name}={value}")
        checks = [
            ("teacher", self.total_teacher,
             teacher_total(self.pid, self.pad, self.gan_g, weights)),
        ]
        if self.total_student != 0.0:
            checks.append(("student", self.total_student,
                           student_total(self.id, self.fd, self.student_pad,
                                         self.student_gan_g, weights)))
        for name, got, expect in checks:
            if abs(got - expect) > rel_tol * max(abs(got), abs(expect), 1e-12):
                raise ValueError(f"{name} total {got} != weighted parts {expect}")

    def csv_row(self, step: int, stage: int) -> list[str]:
        return [str(step), str(stage)] + [repr(float(getattr(self, col)))
                                          for col in METRICS_COLUMNS[2:]]
