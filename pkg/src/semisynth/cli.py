"""Command-line interface.

Subcommands:
    gen-data         generate a phantom dataset split and write it to disk
    train            run the two-stage training pipeline from a config JSON
    eval             score a checkpoint on a split (test or val)
    sweep            paired-fraction comparison sweep (semi vs paired-only)
    dump-difficulty  export per-sample difficulty maps as 8-bit grayscale
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import sweep as sweep_mod
from .difficulty import compute_difficulty_map
from .metrics import error_map, export_grayscale
from .nets import load_checkpoint, restore_networks
from .phantom import build_split, save_split, split_hash
from .trainer import TrainConfig, build_split_from_config, config_hash, predict, run_training


def _load_config(path: str, seed: int | None = None) -> TrainConfig:
    cfg = TrainConfig.from_json(Path(path).read_text())
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _cmd_gen_data(args) -> int:
    split = build_split(
        n_patients=args.patients,
        slices_per_patient=args.slices,
        paired_fraction=args.paired_fraction,
        seed=args.seed,
        canvas_size=args.size,
    )
    save_split(split, args.out)
    counts = {name: len(samples) for name, samples in split.subsets().items()}
    print(f"wrote {sum(counts.values())} samples to {args.out}: {counts}")
    print(f"split hash: {split_hash(split)}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    artifacts = run_training(cfg, out_dir=args.out_dir)
    s1, s2 = artifacts.stage1, artifacts.stage2
    print(f"config hash: {config_hash(cfg)}")
    print(f"stage 1: checkpoint epoch {s1.checkpoint_epoch} "
          f"(plateau at {s1.convergence_epoch}), val L1 {s1.val_pid_history[-1]:.4f}")
    print(f"stage 2 ({s2.variant}): final val L1 {s2.val_l1_history[-1]:.4f}")
    for name, path in artifacts.paths.items():
        print(f"  {name}: {path}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.seed)
    split = build_split_from_config(cfg)
    samples = getattr(split, args.split)
    payload = load_checkpoint(args.checkpoint)
    report = sweep_mod.evaluate_checkpoint(payload, samples, args.split, config_hash(cfg))
    out_dir = Path(args.out_dir)
    report.to_csv(out_dir / f"metrics_{args.split}.csv")
    if args.dump_error_maps:
        for i, s in enumerate(samples):
            pred = predict(payload, s.sources)
            export_grayscale(error_map(s.target, pred),
                             out_dir / "error_maps" / f"sample_{i:05d}.png", scale=255.0)
    agg = report.aggregate()
    print(f"{args.split}: ssim {agg['ssim']:.4f}  psnr {agg['psnr_db']:.2f} dB  "
          f"mse {agg['mse']:.5f}  (n={agg['n']})")
    print(f"report: {out_dir / f'metrics_{args.split}.csv'}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config, None)
    fractions = [float(f) for f in args.fractions.split(",") if f]
    seeds = [int(s) for s in args.seeds.split(",") if s] if args.seeds else None
    rows = sweep_mod.run_sweep(cfg, fractions, seeds=seeds, out_dir=args.out_dir)
    print(sweep_mod.format_table(rows), end="")
    return 0


def _cmd_dump_difficulty(args) -> int:
    cfg = _load_config(args.config, args.seed)
    split = build_split_from_config(cfg)
    payload = load_checkpoint(args.checkpoint)
    gen, disc, _ = restore_networks(payload)
    if disc is None:
        raise SystemExit("checkpoint has no discriminator; cannot compute difficulty maps")
    gen.eval()
    disc.eval()
    out_dir = Path(args.out_dir)
    for i, s in enumerate(split.val):
        x = torch.as_tensor(s.sources[None])
        mask = torch.as_tensor(s.foreground_mask[None, None])
        with torch.no_grad():
            fake, _ = gen(x, tap_indices=())
            scores = disc(fake)
        dmap = compute_difficulty_map(scores, mask, s.shape)
        export_grayscale(dmap.full[0, 0].numpy(),
                         out_dir / f"difficulty_{i:05d}.png", scale=127.5)
    print(f"wrote {len(split.val)} difficulty maps to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semisynth",
                                     description="difficulty-weighted semi-supervised "
                                                 "multimodal image synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a phantom dataset")
    p.add_argument("--patients", type=int, default=40)
    p.add_argument("--slices", type=int, default=8)
    p.add_argument("--paired-fraction", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run two-stage training")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dump-error-maps", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="paired-fraction sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--fractions", required=True, help="comma-separated, e.g. 0.05,0.1")
    p.add_argument("--seeds", default=None, help="comma-separated seeds")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("dump-difficulty", help="export validation difficulty maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_dump_difficulty)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
