"""Two-stage training orchestration.

Stage 1 pre-activates the teacher on paired data with every difficulty map
pinned to the constant 1, tracking a validation L1 per epoch; the returned
teacher checkpoint is the one saved a fixed number of epochs before the
validation plateau (overfitting guard).

Stage 2 initializes the student bitwise from the teacher checkpoint and
trains both networks together: the teacher keeps optimizing on paired
batches (at a fifth of its stage-1 learning rates) while the student trains
on unpaired batches with image- and feature-level distillation from the
teacher plus its own adversarial and contrastive terms, weighted by
(1 - t/T). All learning rates decay linearly to zero over the stage.

Every run is a pure function of its TrainConfig: data order, patch
sampling, and weight init each draw from independent streams derived from
``config.seed``, so identical configs produce byte-identical metrics logs.
"""

from __future__ import annotations

import csv
import json
import hashlib
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
from torch.optim import AdamW

from . import losses as L
from .difficulty import build_pyramid, compute_difficulty_map, constant_difficulty_map
from .nets import (
    DiscriminatorSpec, GeneratorSpec, build_discriminator, build_generator, build_heads,
    layer_table, load_checkpoint, make_checkpoint, restore_networks, save_checkpoint,
    state_hash,
)
from .phantom import DatasetSplit, MultimodalSample, build_split

OPTIMIZER_BETAS = (0.5, 0.999)


@dataclass(frozen=True)
class TrainConfig:
    # data
    n_patients: int = 40
    slices_per_patient: int = 8
    canvas_size: int = 64
    paired_fraction: float = 0.05
    # architecture
    base_width: int = 16
    n_res_blocks: int = 3
    embed_dim: int = 128
    tap_indices: tuple[int, ...] = (0, 4, 8, 12, 16)
    distill_tap_indices: tuple[int, ...] = (4, 8, 12, 16, 21)
    disc_layers: int = 3
    # objective
    lambda_pid: float = 100.0
    lambda_pad: float = 1.0
    lambda_gan: float = 1.0
    lambda_id: float = 100.0
    lambda_fd: float = 1.0
    tau: float = 0.07
    patch_count: int = 64
    # schedule
    stage1_epochs: int = 10
    stage2_epochs: int = 100
    batch_size: int = 6
    lr_g: float = 0.0006
    lr_mlp: float = 0.0006
    lr_d: float = 0.0003
    teacher_stage2_lr_scale: float = 0.2
    weight_decay: float = 1e-4
    convergence_patience: int = 3
    convergence_min_improve: float = 0.005
    checkpoint_lookback: int = 5
    # seeding
    seed: int = 0
    # ablation toggles
    disable_map: bool = False
    disable_fd: bool = False
    disable_id: bool = False
    paired_only: bool = False
    freeze_teacher: bool = False
    # which network provides the distillation features (only "generator" implemented)
    distill_feature_source: str = "generator"

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ValueError("batch_size must be even (paired/unpaired halves)")
        if min(self.lr_g, self.lr_mlp, self.lr_d) <= 0:
            raise ValueError("learning rates must be > 0")
        if self.stage2_epochs < 1 or self.stage1_epochs < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.distill_feature_source != "generator":
            raise ValueError("only generator-side distillation features are implemented")

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            base_width=self.base_width, n_res_blocks=self.n_res_blocks,
            tap_indices=tuple(self.tap_indices),
            distill_tap_indices=tuple(self.distill_tap_indices),
            embed_dim=self.embed_dim,
        )

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(n_layers=self.disc_layers, base_width=self.base_width)

    def loss_weights(self) -> L.LossWeights:
        return L.LossWeights(
            lambda_pid=self.lambda_pid, lambda_pad=self.lambda_pad,
            lambda_gan=self.lambda_gan,
            lambda_id=0.0 if self.disable_id else self.lambda_id,
            lambda_fd=0.0 if self.disable_fd else self.lambda_fd,
            tau=self.tau,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        for key in ("tap_indices", "distill_tap_indices"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(config.to_json().encode()).hexdigest()[:16]


def build_split_from_config(config: TrainConfig) -> DatasetSplit:
    return build_split(
        n_patients=config.n_patients,
        slices_per_patient=config.slices_per_patient,
        paired_fraction=config.paired_fraction,
        seed=config.seed,
        canvas_size=config.canvas_size,
    )


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def _to_tensors(samples: list[MultimodalSample]):
    sources = torch.from_numpy(np.stack([s.sources for s in samples]))
    masks = torch.from_numpy(np.stack([s.foreground_mask for s in samples]))[:, None]
    targets = None
    if all(s.target is not None for s in samples):
        targets = torch.from_numpy(np.stack([s.target for s in samples]))[:, None]
    return sources, targets, masks


class _Cycler:
    """Seeded shuffling iterator that reshuffles each time it wraps."""

    def __init__(self, samples, rng: np.random.Generator):
        self.samples = samples
        self.rng = rng
        self.order = np.empty(0, dtype=int)
        self.pos = 0

    def take(self, n: int) -> list:
        out = []
        while len(out) < n:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.samples))
                self.pos = 0
            out.append(self.samples[int(self.order[self.pos])])
            self.pos += 1
        return out


def _tap_shapes(spec: GeneratorSpec, canvas: int, indices) -> dict[int, tuple[int, int]]:
    table = layer_table(spec)
    return {i: (canvas // table[i].stride, canvas // table[i].stride) for i in indices}


def _assert_finite(value: torch.Tensor, context: str, parts: dict):
    if not torch.isfinite(value).all():
        details = {k: float(v.detach() if torch.is_tensor(v) else v)
                   for k, v in parts.items()}
        raise RuntimeError(f"non-finite loss at {context}: {details}")


def _convergence_epoch(history: list[float], patience: int, min_improve: float) -> int | None:
    """First epoch (1-based) at which validation loss has failed to improve
    on the running best by more than ``min_improve`` for ``patience``
    consecutive epochs."""
    best = math.inf
    streak = 0
    for epoch, value in enumerate(history, start=1):
        if value < best * (1.0 - min_improve):
            best = value
            streak = 0
        else:
            streak += 1
            if streak >= patience:
                return epoch
    return None


def _validation_l1(gen, samples, batch: int = 8) -> float:
    gen.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(samples), batch):
            chunk = samples[i:i + batch]
            x, y, _ = _to_tensors(chunk)
            out, _ = gen(x, tap_indices=())
            total += float((y - out).abs().mean()) * len(chunk)
            count += len(chunk)
    gen.train()
    return total / max(count, 1)


def _effective_patch_count(config: TrainConfig) -> int:
    shapes = _tap_shapes(config.generator_spec(), config.canvas_size, config.tap_indices)
    smallest = min(h * w for h, w in shapes.values())
    return min(config.patch_count, smallest)


def _make_optimizers(gen, heads, disc, lr_g, lr_mlp, lr_d, weight_decay):
    return {
        "generator": AdamW(gen.parameters(), lr=lr_g, betas=OPTIMIZER_BETAS,
                           weight_decay=weight_decay),
        "heads": AdamW(heads.parameters(), lr=lr_mlp, betas=OPTIMIZER_BETAS,
                       weight_decay=weight_decay),
        "discriminator": AdamW(disc.parameters(), lr=lr_d, betas=OPTIMIZER_BETAS,
                               weight_decay=weight_decay),
    }


def _set_lr(optimizers: dict, base: dict, factor: float):
    for name, opt in optimizers.items():
        for group in opt.param_groups:
            group["lr"] = base[name] * factor


@dataclass
class TrainState:
    """Mutable bookkeeping for a stage-2 run."""

    teacher: dict
    student: dict
    teacher_opts: dict
    student_opts: dict
    epoch: int = 0
    stage: int = 2
    best_val: float = math.inf
    best_val_epoch: int = -1


@dataclass
class Stage1Result:
    checkpoint: dict
    checkpoint_epoch: int
    convergence_epoch: int
    val_pid_history: list[float]
    metrics_rows: list[list[str]]
    lr_rows: list[list[str]]


@dataclass
class Stage2Result:
    checkpoint: dict
    variant: str
    val_l1_history: list[float]
    metrics_rows: list[list[str]]
    lr_rows: list[list[str]]
    student_init_hash: str = ""
    teacher_checkpoint: dict | None = None


def train_stage1(config: TrainConfig, split: DatasetSplit, probe=None) -> Stage1Result:
    """Teacher pre-activation on paired data with difficulty maps pinned to 1."""
    if not split.paired:
        raise ValueError("paired set is empty: stage 1 needs paired data")

    gen_spec = config.generator_spec()
    teacher_gen = build_generator(gen_spec, seed=_derived_seed(config.seed, 100))
    teacher_disc = build_discriminator(config.discriminator_spec(),
                                       seed=_derived_seed(config.seed, 101))
    teacher_heads = build_heads(gen_spec, seed=_derived_seed(config.seed, 102))
    opts = _make_optimizers(teacher_gen, teacher_heads, teacher_disc,
                            config.lr_g, config.lr_mlp, config.lr_d, config.weight_decay)
    base_lr = {"generator": config.lr_g, "heads": config.lr_mlp, "discriminator": config.lr_d}

    weights = config.loss_weights()
    data_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 200]))
    patch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 201]))
    contrast_shapes = _tap_shapes(gen_spec, config.canvas_size, gen_spec.tap_indices)
    patch_count = _effective_patch_count(config)

    metrics_rows, lr_rows = [], []
    snapshots: dict[int, dict] = {}
    val_history: list[float] = []
    step = 0

    for epoch in range(1, config.stage1_epochs + 1):
        factor = 1.0 - (epoch - 1) / config.stage1_epochs
        _set_lr(opts, base_lr, factor)
        for name in ("generator", "heads", "discriminator"):
            lr_rows.append(["1", str(epoch), f"teacher_{name}", repr(base_lr[name] * factor)])

        order = data_rng.permutation(len(split.paired))
        n_batches = max(1, len(split.paired) // config.batch_size)
        for b in range(n_batches):
            batch = [split.paired[int(i)] for i in
                     order[b * config.batch_size:(b + 1) * config.batch_size]]
            x, y, mask = _to_tensors(batch)

            fake, taps_in = teacher_gen(x)
            d_loss = L.lsgan_d(teacher_disc(y), teacher_disc(fake.detach()))
            opts["discriminator"].zero_grad()
            d_loss.backward()
            opts["discriminator"].step()

            scores = teacher_disc(fake)
            gan_g = L.lsgan_g(scores)
            dmap = constant_difficulty_map(len(batch), config.canvas_size, contrast_shapes)
            pid = L.pixelwise_difficulty_l1(dmap.full, y, fake)
            plan = L.PatchSamplingPlan(count=patch_count,
                                       seed=int(patch_rng.integers(0, 2**31 - 1)))
            _, taps_pos = teacher_gen(fake.expand(-1, 3, -1, -1))
            pad = L.patch_difficulty_infonce(taps_in, taps_pos, teacher_heads, plan,
                                             dmap.pyramid, tau=weights.tau)
            total = L.teacher_total(pid, pad, gan_g, weights)
            _assert_finite(total, f"stage1 epoch {epoch} step {step}",
                           {"pid": pid, "pad": pad, "gan_g": gan_g, "gan_d": d_loss})
            opts["generator"].zero_grad()
            opts["heads"].zero_grad()
            total.backward()
            opts["generator"].step()
            opts["heads"].step()

            bundle = L.LossBundle.from_parts(
                weights, pid=pid, pad=pad, gan_g=gan_g, gan_d=d_loss,
                schedule_weight=1.0, include_student=False,
            )
            metrics_rows.append(bundle.csv_row(step, stage=1))
            if probe is not None:
                probe({"stage": 1, "epoch": epoch, "step": step, "bundle": bundle,
                       "teacher_map": dmap, "n_paired": len(batch), "n_unpaired": 0})
            step += 1

        val_history.append(_validation_l1(teacher_gen, split.val))
        snapshots[epoch] = make_checkpoint(
            teacher_gen, teacher_disc, teacher_heads,
            meta={"stage": 1, "epoch": epoch, "val_pid": val_history[-1]},
        )

    e_star = _convergence_epoch(val_history, config.convergence_patience,
                                config.convergence_min_improve)
    if e_star is None:
        e_star = config.stage1_epochs
    ckpt_epoch = max(1, e_star - config.checkpoint_lookback)
    return Stage1Result(
        checkpoint=snapshots[ckpt_epoch],
        checkpoint_epoch=ckpt_epoch,
        convergence_epoch=e_star,
        val_pid_history=val_history,
        metrics_rows=metrics_rows,
        lr_rows=lr_rows,
    )


def train_stage2(config: TrainConfig, split: DatasetSplit, teacher_checkpoint: dict,
                 probe=None) -> Stage2Result:
    """Joint teacher+student training with difficulty maps and distillation.

    With ``paired_only`` the student is never built or updated and the
    teacher simply continues supervised training on paired batches; the
    returned checkpoint then contains the teacher as the evaluation network.
    """
    if not config.paired_only and not split.unpaired:
        raise ValueError("unpaired set is empty; use paired_only=True for a supervised run")
    if not split.paired:
        raise ValueError("paired set is empty")

    gen_spec = config.generator_spec()
    teacher_gen, teacher_disc, teacher_heads = restore_networks(teacher_checkpoint)
    student_gen, student_disc, student_heads = restore_networks(teacher_checkpoint)
    student_init_hash = "/".join(
        state_hash(m) for m in (student_gen, student_disc, student_heads))

    scale = config.teacher_stage2_lr_scale
    teacher_base = {"generator": config.lr_g * scale, "heads": config.lr_mlp * scale,
                    "discriminator": config.lr_d * scale}
    student_base = {"generator": config.lr_g, "heads": config.lr_mlp,
                    "discriminator": config.lr_d}
    teacher_opts = _make_optimizers(teacher_gen, teacher_heads, teacher_disc,
                                    teacher_base["generator"], teacher_base["heads"],
                                    teacher_base["discriminator"], config.weight_decay)
    student_opts = _make_optimizers(student_gen, student_heads, student_disc,
                                    student_base["generator"], student_base["heads"],
                                    student_base["discriminator"], config.weight_decay)
    state = TrainState(
        teacher={"gen": teacher_gen, "disc": teacher_disc, "heads": teacher_heads},
        student={"gen": student_gen, "disc": student_disc, "heads": student_heads},
        teacher_opts=teacher_opts, student_opts=student_opts,
    )

    weights = config.loss_weights()
    T = config.stage2_epochs
    half = config.batch_size // 2
    contrast_shapes = _tap_shapes(gen_spec, config.canvas_size, gen_spec.tap_indices)
    all_shapes = _tap_shapes(
        gen_spec, config.canvas_size,
        sorted(set(gen_spec.tap_indices) | set(gen_spec.distill_tap_indices)),
    )
    patch_count = _effective_patch_count(config)

    paired_cycler = _Cycler(split.paired,
                            np.random.default_rng(np.random.SeedSequence([config.seed, 300])))
    unpaired_cycler = _Cycler(split.unpaired,
                              np.random.default_rng(np.random.SeedSequence([config.seed, 301])))
    patch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 302]))

    metrics_rows, lr_rows = [], []
    val_history: list[float] = []
    step = 0

    for t in range(T):
        state.epoch = t
        factor = 1.0 - t / T
        _set_lr(teacher_opts, teacher_base, factor)
        _set_lr(student_opts, student_base, factor)
        for name in ("generator", "heads", "discriminator"):
            lr_rows.append(["2", str(t), f"teacher_{name}", repr(teacher_base[name] * factor)])
            if not config.paired_only:
                lr_rows.append(["2", str(t), f"student_{name}",
                                repr(student_base[name] * factor)])
        w_t = L.schedule_weight(t, T)

        if config.paired_only:
            n_steps = max(1, len(split.paired) // config.batch_size)
        else:
            larger = max(len(split.paired), len(split.unpaired))
            n_steps = max(1, larger // half)

        for _ in range(n_steps):
            if config.paired_only:
                paired_batch = paired_cycler.take(config.batch_size)
                unpaired_batch = []
            else:
                paired_batch = paired_cycler.take(half)
                unpaired_batch = unpaired_cycler.take(half)
            x_p, y_p, mask_p = _to_tensors(paired_batch)

            # --- teacher on paired data ---
            fake_p, taps_p = teacher_gen(x_p)
            d_loss_t = L.lsgan_d(teacher_disc(y_p), teacher_disc(fake_p.detach()))
            if not config.freeze_teacher:
                teacher_opts["discriminator"].zero_grad()
                d_loss_t.backward()
                teacher_opts["discriminator"].step()
            else:
                d_loss_t = d_loss_t.detach()

            scores_p = teacher_disc(fake_p)
            gan_g_t = L.lsgan_g(scores_p)
            if config.disable_map:
                dmap_t = constant_difficulty_map(len(paired_batch), config.canvas_size,
                                                 contrast_shapes)
            else:
                dmap_t = compute_difficulty_map(scores_p, mask_p, config.canvas_size)
                build_pyramid(dmap_t, contrast_shapes)
            pid = L.pixelwise_difficulty_l1(dmap_t.full, y_p, fake_p)
            plan = L.PatchSamplingPlan(count=patch_count,
                                       seed=int(patch_rng.integers(0, 2**31 - 1)))
            _, taps_pos_p = teacher_gen(fake_p.expand(-1, 3, -1, -1))
            pad_t = L.patch_difficulty_infonce(taps_p, taps_pos_p, teacher_heads, plan,
                                               dmap_t.pyramid, tau=weights.tau)
            total_t = L.teacher_total(pid, pad_t, gan_g_t, weights)
            _assert_finite(total_t, f"stage2 epoch {t} step {step} (teacher)",
                           {"pid": pid, "pad": pad_t, "gan_g": gan_g_t, "gan_d": d_loss_t})
            if not config.freeze_teacher:
                teacher_opts["generator"].zero_grad()
                teacher_opts["heads"].zero_grad()
                total_t.backward()
                teacher_opts["generator"].step()
                teacher_opts["heads"].step()

            # --- student on unpaired data ---
            id_loss = fd_loss = pad_s = gan_g_s = d_loss_s = torch.tensor(0.0)
            dmap_s = None
            if not config.paired_only:
                x_u, _, mask_u = _to_tensors(unpaired_batch)
                with torch.no_grad():
                    pseudo, taps_teacher_u = teacher_gen(x_u)
                fake_u, taps_student_u = student_gen(x_u)
                # real examples for the student discriminator come from the
                # paired half of the batch
                d_loss_s = L.lsgan_d(student_disc(y_p), student_disc(fake_u.detach()))
                student_opts["discriminator"].zero_grad()
                d_loss_s.backward()
                student_opts["discriminator"].step()

                scores_u = student_disc(fake_u)
                gan_g_s = L.lsgan_g(scores_u)
                if config.disable_map:
                    dmap_s = constant_difficulty_map(len(unpaired_batch), config.canvas_size,
                                                     all_shapes)
                else:
                    dmap_s = compute_difficulty_map(scores_u, mask_u, config.canvas_size)
                    build_pyramid(dmap_s, all_shapes)
                id_loss = L.image_distill(dmap_s.full, pseudo, fake_u)
                fd_loss = L.feature_distill(dmap_s.pyramid, taps_teacher_u, taps_student_u,
                                            gen_spec.distill_tap_indices)
                plan_s = L.PatchSamplingPlan(count=patch_count,
                                             seed=int(patch_rng.integers(0, 2**31 - 1)))
                _, taps_pos_u = student_gen(fake_u.expand(-1, 3, -1, -1))
                pad_s = L.patch_difficulty_infonce(taps_student_u, taps_pos_u, student_heads,
                                                   plan_s, dmap_s.pyramid, tau=weights.tau)
                total_s = L.student_total(id_loss, fd_loss, pad_s, gan_g_s, weights)
                _assert_finite(total_s, f"stage2 epoch {t} step {step} (student)",
                               {"id": id_loss, "fd": fd_loss, "pad": pad_s,
                                "gan_g": gan_g_s, "gan_d": d_loss_s})
                student_opts["generator"].zero_grad()
                student_opts["heads"].zero_grad()
                (w_t * total_s).backward()
                student_opts["generator"].step()
                student_opts["heads"].step()

            bundle = L.LossBundle.from_parts(
                weights, pid=pid, pad=pad_t, gan_g=gan_g_t, gan_d=d_loss_t,
                id=id_loss, fd=fd_loss, student_pad=pad_s, student_gan_g=gan_g_s,
                student_gan_d=d_loss_s, schedule_weight=w_t,
                include_student=not config.paired_only,
            )
            metrics_rows.append(bundle.csv_row(step, stage=2))
            if probe is not None:
                probe({"stage": 2, "epoch": t, "step": step, "bundle": bundle,
                       "teacher_map": dmap_t, "student_map": dmap_s,
                       "n_paired": len(paired_batch), "n_unpaired": len(unpaired_batch)})
            step += 1

        eval_gen = teacher_gen if config.paired_only else student_gen
        val_l1 = _validation_l1(eval_gen, split.val)
        val_history.append(val_l1)
        if val_l1 < state.best_val:
            state.best_val, state.best_val_epoch = val_l1, t

    variant = "paired_only" if config.paired_only else "semi"
    teacher_payload = make_checkpoint(teacher_gen, teacher_disc, teacher_heads,
                                      meta={"stage": 2, "variant": variant,
                                            "network": "teacher"})
    if config.paired_only:
        payload = teacher_payload
    else:
        payload = make_checkpoint(student_gen, student_disc, student_heads,
                                  meta={"stage": 2, "variant": variant, "network": "student"})
    return Stage2Result(
        checkpoint=payload,
        variant=variant,
        val_l1_history=val_history,
        metrics_rows=metrics_rows,
        lr_rows=lr_rows,
        student_init_hash=student_init_hash,
        teacher_checkpoint=teacher_payload,
    )


def predict(checkpoint, sources) -> np.ndarray:
    """Deterministic inference: (3, H, W) sources -> (H, W) image in [0, 1]."""
    payload = checkpoint if isinstance(checkpoint, dict) else load_checkpoint(checkpoint)
    gen, _, _ = restore_networks(payload)
    gen.eval()
    x = torch.as_tensor(np.asarray(sources, dtype=np.float32))
    if x.dim() == 3:
        x = x[None]
    if x.dim() != 4 or x.shape[1] != gen.spec.n_encoders:
        raise ValueError(f"expected ({gen.spec.n_encoders}, H, W) sources, got {tuple(x.shape)}")
    with torch.no_grad():
        out, _ = gen(x, tap_indices=())
    return out[0, 0].numpy()


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


@dataclass
class TrainingArtifacts:
    stage1: Stage1Result
    stage2: Stage2Result
    out_dir: Path | None
    paths: dict = field(default_factory=dict)


def run_training(config: TrainConfig, out_dir: str | Path | None = None,
                 split: DatasetSplit | None = None, probe=None) -> TrainingArtifacts:
    """Full two-stage run; optionally writes checkpoints, metrics CSV, the
    learning-rate log, and a resolved-config snapshot to ``out_dir``."""
    if split is None:
        split = build_split_from_config(config)
    stage1 = train_stage1(config, split, probe=probe)
    stage2 = train_stage2(config, split, stage1.checkpoint, probe=probe)

    artifacts = TrainingArtifacts(stage1=stage1, stage2=stage2,
                                  out_dir=Path(out_dir) if out_dir else None)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(config.to_json())
        artifacts.paths["config"] = out / "resolved_config.json"
        artifacts.paths["stage1_teacher"] = save_checkpoint(stage1.checkpoint,
                                                            out / "stage1_teacher.pt")
        artifacts.paths["final_student"] = save_checkpoint(stage2.checkpoint,
                                                           out / "final_student.pt")
        artifacts.paths["metrics"] = _write_csv(
            out / "metrics.csv", L.METRICS_COLUMNS,
            stage1.metrics_rows + stage2.metrics_rows,
        )
        artifacts.paths["lrs"] = _write_csv(
            out / "lrs.csv", ("stage", "epoch", "optimizer", "lr"),
            stage1.lr_rows + stage2.lr_rows,
        )
    return artifacts
