"""Paired-fraction experiment sweeps.

For each requested paired fraction (and seed) the sweep trains the
semi-supervised variant and the paired-only baseline on the identical split
and stage-1 teacher, then evaluates on the test set. When a fraction leaves
the unpaired set empty (fraction 1.0) the semi variant is by construction
the paired-only run and is labeled as such instead of being retrained.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import torch

from . import trainer
from .metrics import MetricReport, score_pairs
from .nets import checkpoint_id, restore_networks
from .phantom import DatasetSplit, split_hash
from .trainer import TrainConfig, config_hash

SWEEP_COLUMNS = ("fraction", "seed", "variant", "split_hash", "ssim", "psnr_db", "mse", "n_test")


def evaluate_checkpoint(payload: dict, samples, split_name: str = "test",
                        cfg_hash: str = "") -> MetricReport:
    gen, _, _ = restore_networks(payload)
    gen.eval()
    pairs = []
    with torch.no_grad():
        for s in samples:
            x = torch.as_tensor(s.sources[None])
            out, _ = gen(x, tap_indices=())
            pairs.append((s.target, out[0, 0].numpy(), s.patient_id, s.slice_id))
    return score_pairs(pairs, split_name=split_name, config_hash=cfg_hash,
                       checkpoint_id=checkpoint_id(payload))


def run_one(config: TrainConfig, split: DatasetSplit | None = None):
    """Train both variants on one (config, split) and return their reports."""
    if split is None:
        split = trainer.build_split_from_config(config)
    cfg_hash = config_hash(config)
    stage1 = trainer.train_stage1(config, split)

    baseline_cfg = replace(config, paired_only=True)
    baseline = trainer.train_stage2(baseline_cfg, split, stage1.checkpoint)
    baseline_report = evaluate_checkpoint(baseline.checkpoint, split.test, "test", cfg_hash)

    if split.unpaired:
        semi = trainer.train_stage2(replace(config, paired_only=False), split,
                                    stage1.checkpoint)
        semi_report = evaluate_checkpoint(semi.checkpoint, split.test, "test", cfg_hash)
        semi_label = "semi"
    else:
        semi_report = baseline_report
        semi_label = "semi(=paired_only)"
    return {"split": split, "baseline": baseline_report, "semi": semi_report,
            "semi_label": semi_label}


def run_sweep(base_config: TrainConfig, fractions, seeds=None,
              out_dir: str | Path | None = None) -> list[dict]:
    if not fractions:
        raise ValueError("fractions must be nonempty")
    seeds = list(seeds) if seeds is not None else [base_config.seed]

    rows = []
    for fraction in fractions:
        for seed in seeds:
            cfg = replace(base_config, paired_fraction=fraction, seed=seed)
            split = trainer.build_split_from_config(cfg)
            shash = split_hash(split)
            result = run_one(cfg, split)
            for variant, report in (("paired_only", result["baseline"]),
                                    (result["semi_label"], result["semi"])):
                agg = report.aggregate()
                rows.append({
                    "fraction": fraction, "seed": seed, "variant": variant,
                    "split_hash": shash, "ssim": agg["ssim"], "psnr_db": agg["psnr_db"],
                    "mse": agg["mse"], "n_test": agg["n"],
                })

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        (out / "sweep.txt").write_text(format_table(rows))
    return rows


def format_table(rows) -> str:
    lines = [f"{'fraction':>9} {'seed':>5} {'variant':<20} {'ssim':>8} {'psnr_db':>8} {'mse':>9}"]
    for r in rows:
        lines.append(f"{r['fraction']:>9.3f} {r['seed']:>5d} {r['variant']:<20} "
                     f"{r['ssim']:>8.4f} {r['psnr_db']:>8.2f} {r['mse']:>9.5f}")
    return "\n".join(lines) + "\n"
