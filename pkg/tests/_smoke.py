"""Worker for the smoke trend runs (shared by the acceptance suite).

Each unit is a fully seeded, self-contained training+evaluation of one
(seed, variant) pair under the fixed smoke configuration, so units can run
in parallel worker processes and still produce identical results to a
serial run.
"""

from dataclasses import replace

SMOKE_SEEDS = (0, 1, 2)


def smoke_config(seed: int):
    from semisynth.trainer import TrainConfig

    return TrainConfig(
        n_patients=40, slices_per_patient=8, canvas_size=64, paired_fraction=0.05,
        base_width=16, n_res_blocks=3, stage1_epochs=10, stage2_epochs=30, seed=seed,
    )


def run_unit(args):
    seed, variant = args
    import torch

    torch.set_num_threads(1)
    from semisynth import trainer
    from semisynth.sweep import evaluate_checkpoint

    cfg = smoke_config(seed)
    if variant == "paired_only":
        cfg = replace(cfg, paired_only=True)
    elif variant == "no_id":
        cfg = replace(cfg, disable_id=True)
    elif variant != "semi":
        raise ValueError(f"unknown variant {variant}")

    split = trainer.build_split_from_config(cfg)
    stage1 = trainer.train_stage1(cfg, split)
    stage2 = trainer.train_stage2(cfg, split, stage1.checkpoint)
    report = evaluate_checkpoint(stage2.checkpoint, split.test, "test")
    agg = report.aggregate()
    return {
        "seed": seed,
        "variant": variant,
        "ssim": agg["ssim"],
        "psnr_db": agg["psnr_db"],
        "mse": agg["mse"],
        "stage1_val_history": stage1.val_pid_history,
        "stage1_ckpt_epoch": stage1.checkpoint_epoch,
    }
