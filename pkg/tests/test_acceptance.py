"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s``. Criteria 6 and 7 train
the full smoke configuration (three seeds, three variants) and dominate the
runtime: expect roughly half an hour on a desktop accelerator-class CPU
budget, up to ~2 h on a slow 2-core machine. Everything else finishes in
seconds.
"""

import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pytest
import torch

import semisynth as ss
from semisynth import losses as L
from semisynth import trainer

from _smoke import SMOKE_SEEDS, run_unit
from oracles import brute_force_infonce, check_gradients, oracle_ssim


def _report(criterion: str, detail: str = ""):
    print(f"\n[acceptance] {criterion} PASS {detail}", flush=True)


# ---------------------------------------------------------------------------
# criterion 1: loss identities
# ---------------------------------------------------------------------------

def test_criterion_1_loss_identities():
    start = time.perf_counter()

    y = torch.rand(1, 1, 8, 8)
    yhat = torch.rand(1, 1, 8, 8)
    ones = torch.ones_like(y)
    assert torch.allclose(L.pixelwise_difficulty_l1(ones, y, yhat),
                          (y - yhat).abs().mean())
    assert L.pixelwise_difficulty_l1(ones, y, y).item() == 0.0

    # equal-logit two-way softmax = ln 2
    heads = ss.build_heads(ss.GeneratorSpec(base_width=2, n_res_blocks=1, tap_indices=(0,),
                                            distill_tap_indices=(3,), embed_dim=8), seed=0)
    anchor = ss.FeatureTapSet({0: torch.randn(1, 6, 1, 2)}, "teacher")
    positive = ss.FeatureTapSet({0: torch.ones(1, 6, 1, 2)}, "teacher")
    loss = L.patch_difficulty_infonce(anchor, positive, heads,
                                      L.PatchSamplingPlan(count=2, seed=0),
                                      {0: torch.ones(1, 1, 1, 2)}, tau=0.07)
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-5)

    assert L.lsgan_d(torch.ones(1, 1, 4, 4), torch.zeros(1, 1, 4, 4)).item() == 0.0
    assert L.lsgan_g(torch.ones(1, 1, 4, 4)).item() == 0.0
    half = torch.full((1, 1, 4, 4), 0.5)
    assert L.lsgan_d(half, half).item() == pytest.approx(0.25, abs=1e-8)

    out = torch.rand(1, 1, 8, 8)
    assert L.image_distill(ones, out, out.clone()).item() == 0.0
    assert L.image_distill(ones, out, out + 0.1).item() == pytest.approx(0.1, abs=1e-6)

    w = L.LossWeights()
    assert L.teacher_total(0.01, 0.5, 0.3, w) == pytest.approx(1.8)
    assert L.student_total(0.0, 0.0, 0.0, 0.0, w) == 0.0
    assert L.schedule_weight(0, 100) == 1.0
    assert L.schedule_weight(50, 100) == 0.5
    assert L.schedule_weight(99, 100) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        L.schedule_weight(100, 100)

    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _report("criterion 1 (loss identities)", f"in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# criterion 2: analytic vs finite-difference gradients
# ---------------------------------------------------------------------------

def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    tiny = ss.GeneratorSpec(base_width=2, n_res_blocks=1, tap_indices=(0,),
                            distill_tap_indices=(3,), embed_dim=8)

    for trial in range(20):
        rng = np.random.default_rng(trial)
        torch.manual_seed(trial)

        wmap = torch.rand(1, 1, 4, 4, dtype=torch.float64) * 2
        y = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        yhat = torch.rand(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
        check_gradients(lambda: L.pixelwise_difficulty_l1(wmap, y, yhat), yhat, 10, rng)

        heads = ss.build_heads(tiny, seed=trial).double()
        anchor = torch.randn(1, 6, 2, 2, dtype=torch.float64, requires_grad=True)
        positive = torch.randn(1, 6, 2, 2, dtype=torch.float64, requires_grad=True)
        pyramid = {0: torch.rand(1, 1, 2, 2, dtype=torch.float64)}
        plan = L.PatchSamplingPlan(count=4, seed=trial)

        def infonce():
            return L.patch_difficulty_infonce(
                ss.FeatureTapSet({0: anchor}, "teacher"),
                ss.FeatureTapSet({0: positive}, "teacher"),
                heads, plan, pyramid, tau=0.07)

        check_gradients(infonce, anchor if trial % 2 == 0 else positive, 10, rng)

        teacher = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        student = torch.rand(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
        check_gradients(lambda: L.image_distill(wmap, teacher, student), student, 10, rng)

        t_tap = {4: torch.rand(1, 6, 3, 3, dtype=torch.float64)}
        s_tap = {4: torch.rand(1, 6, 3, 3, dtype=torch.float64, requires_grad=True)}
        pyr = {4: torch.rand(1, 1, 3, 3, dtype=torch.float64)}
        check_gradients(
            lambda: L.feature_distill(pyr, ss.FeatureTapSet(t_tap, "teacher"),
                                      ss.FeatureTapSet(s_tap, "student"), (4,)),
            s_tap[4], 10, rng)

        real = torch.randn(1, 1, 3, 3, dtype=torch.float64)
        fake = torch.randn(1, 1, 3, 3, dtype=torch.float64, requires_grad=True)
        check_gradients(lambda: L.lsgan_d(real, fake), fake, 5, rng)
        fake2 = torch.randn(1, 1, 3, 3, dtype=torch.float64, requires_grad=True)
        check_gradients(lambda: L.lsgan_g(fake2), fake2, 5, rng)

    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    _report("criterion 2 (gradient suite)", f"20 trials x 5 losses in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 3: difficulty maps
# ---------------------------------------------------------------------------

def test_criterion_3_difficulty_suite(tiny_config):
    start = time.perf_counter()

    # background pixels exactly 0.2 regardless of scores
    scores = torch.randn(1, 1, 4, 4) * 5
    mask = torch.zeros(1, 1, 16, 16, dtype=torch.bool)
    mask[0, 0, 5:11, 5:11] = True
    dmap = ss.compute_difficulty_map(scores, mask, 16)
    assert (dmap.full[~mask] == 0.2).all()

    # stage-1 maps exactly 1 at every sampled step
    flags = []

    def probe(info):
        if info["stage"] == 1:
            dm = info["teacher_map"]
            flags.append(bool((dm.full == 1.0).all())
                         and all((lvl == 1.0).all() for lvl in dm.pyramid.values()))

    split = trainer.build_split_from_config(tiny_config)
    trainer.train_stage1(tiny_config, split, probe=probe)
    assert flags and all(flags)

    # zero gradient into the discriminator through the map
    disc = ss.build_discriminator(ss.DiscriminatorSpec(n_layers=2, base_width=4), seed=3)
    fake = torch.rand(1, 1, 16, 16, requires_grad=True)
    live_scores = disc(fake)
    dmap2 = ss.compute_difficulty_map(live_scores, torch.ones(1, 1, 16, 16, dtype=torch.bool), 16)
    L.pixelwise_difficulty_l1(dmap2.full, torch.rand(1, 1, 16, 16), fake).backward()
    for p in disc.parameters():
        assert p.grad is None or torch.equal(p.grad, torch.zeros_like(p.grad))

    # pyramid pooling matches the hand oracle
    dm = ss.DifficultyMap(full=torch.tensor([[[[0.0, 1.0], [1.0, 1.0]]]]))
    assert ss.build_pyramid(dm, {0: (1, 1)})[0].item() == pytest.approx(0.75, abs=1e-9)

    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _report("criterion 3 (difficulty maps)", f"in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# criterion 4: oracle equivalence
# ---------------------------------------------------------------------------

def test_criterion_4_oracle_equivalence():
    tiny = ss.GeneratorSpec(base_width=2, n_res_blocks=1, tap_indices=(0,),
                            distill_tap_indices=(3,), embed_dim=8)
    for trial in range(6):
        torch.manual_seed(trial)
        heads = ss.build_heads(tiny, seed=trial).double()
        h, w = (2, 2) if trial % 2 == 0 else (4, 4)
        anchor = torch.randn(2, 6, h, w, dtype=torch.float64)
        positive = torch.randn(2, 6, h, w, dtype=torch.float64)
        pyramid = {0: torch.rand(2, 1, h, w, dtype=torch.float64) * 2}
        ours = L.patch_difficulty_infonce(
            ss.FeatureTapSet({0: anchor}, "teacher"),
            ss.FeatureTapSet({0: positive}, "teacher"),
            heads, L.PatchSamplingPlan(count=h * w, seed=trial), pyramid, tau=0.07).item()
        locations = [(r, c) for r in range(h) for c in range(w)]
        expected = brute_force_infonce(anchor, positive, heads, locations,
                                       pyramid[0].numpy(), tau=0.07)
        assert ours == pytest.approx(expected, abs=1e-6)

    rng = np.random.default_rng(0)
    for _ in range(8):
        a = rng.random((8, 8))
        b = np.clip(a + rng.normal(0, 0.1, (8, 8)), 0, 1)
        assert ss.ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-6)

    _report("criterion 4 (oracle equivalence)", "patch InfoNCE + SSIM vs brute force")


# ---------------------------------------------------------------------------
# criterion 5: architecture contracts
# ---------------------------------------------------------------------------

def test_criterion_5_architecture_contracts(tiny_config):
    # student initialization bitwise-equal to the teacher checkpoint
    split = trainer.build_split_from_config(tiny_config)
    s1 = trainer.train_stage1(tiny_config, split)
    s2 = trainer.train_stage2(replace(tiny_config, stage2_epochs=1), split, s1.checkpoint)
    nets_restored = ss.restore_networks(s1.checkpoint)
    expected = "/".join(ss.state_hash(m) for m in nets_restored)
    assert s2.student_init_hash == expected

    # fusion gates sum to 1 across streams
    block = ss.build_generator(ss.GeneratorSpec(), seed=0).fusion
    feats = [torch.randn(2, 64, 6, 6) for _ in range(3)]
    gates = block.gates(feats)
    assert torch.allclose(gates.sum(dim=0), torch.ones(2, 64), atol=1e-6)

    # tap shapes match the published enumeration table
    spec = ss.GeneratorSpec()
    gen = ss.build_generator(spec, seed=0)
    _, taps = gen(torch.rand(1, 3, 64, 64))
    table = ss.layer_table(spec)
    assert len(table) == 25
    for idx, t in taps.taps.items():
        entry = table[idx]
        assert t.shape == (1, entry.channels, 64 // entry.stride, 64 // entry.stride)

    # every parameter receives gradient from the full objective
    torch.manual_seed(0)
    cfg = tiny_config
    gen_spec = cfg.generator_spec()
    t_gen = ss.build_generator(gen_spec, seed=0)
    t_disc = ss.build_discriminator(cfg.discriminator_spec(), seed=1)
    t_heads = ss.build_heads(gen_spec, seed=2)
    s_gen = ss.build_generator(gen_spec, seed=3)
    s_disc = ss.build_discriminator(cfg.discriminator_spec(), seed=4)
    s_heads = ss.build_heads(gen_spec, seed=5)
    weights = L.LossWeights()
    shapes = trainer._tap_shapes(gen_spec, cfg.canvas_size,
                                 sorted(set(gen_spec.tap_indices)
                                        | set(gen_spec.distill_tap_indices)))

    for rep in range(3):  # accumulate over batches to rule out dead-ReLU flukes
        x_p = torch.rand(2, 3, cfg.canvas_size, cfg.canvas_size)
        y_p = torch.rand(2, 1, cfg.canvas_size, cfg.canvas_size)
        mask = torch.ones(2, 1, cfg.canvas_size, cfg.canvas_size, dtype=torch.bool)
        x_u = torch.rand(2, 3, cfg.canvas_size, cfg.canvas_size)

        fake_p, taps_p = t_gen(x_p)
        d_t = L.lsgan_d(t_disc(y_p), t_disc(fake_p.detach()))
        scores_p = t_disc(fake_p)
        dmap_t = ss.compute_difficulty_map(scores_p, mask, cfg.canvas_size)
        ss.build_pyramid(dmap_t, shapes)
        pid = L.pixelwise_difficulty_l1(dmap_t.full, y_p, fake_p)
        _, taps_pos = t_gen(fake_p.expand(-1, 3, -1, -1))
        pad_t = L.patch_difficulty_infonce(taps_p, taps_pos, t_heads,
                                           L.PatchSamplingPlan(count=16, seed=rep),
                                           dmap_t.pyramid, tau=weights.tau)
        total_t = L.teacher_total(pid, pad_t, L.lsgan_g(scores_p), weights) + d_t

        with torch.no_grad():
            pseudo, taps_tu = t_gen(x_u)
        fake_u, taps_su = s_gen(x_u)
        d_s = L.lsgan_d(s_disc(y_p), s_disc(fake_u.detach()))
        scores_u = s_disc(fake_u)
        dmap_s = ss.compute_difficulty_map(scores_u, mask, cfg.canvas_size)
        ss.build_pyramid(dmap_s, shapes)
        id_loss = L.image_distill(dmap_s.full, pseudo, fake_u)
        fd_loss = L.feature_distill(dmap_s.pyramid, taps_tu, taps_su,
                                    gen_spec.distill_tap_indices)
        _, taps_pos_u = s_gen(fake_u.expand(-1, 3, -1, -1))
        pad_s = L.patch_difficulty_infonce(taps_su, taps_pos_u, s_heads,
                                           L.PatchSamplingPlan(count=16, seed=100 + rep),
                                           dmap_s.pyramid, tau=weights.tau)
        total_s = L.student_total(id_loss, fd_loss, pad_s, L.lsgan_g(scores_u), weights) + d_s
        (total_t + total_s).backward()

    for name, module in (("teacher_gen", t_gen), ("teacher_disc", t_disc),
                         ("teacher_heads", t_heads), ("student_gen", s_gen),
                         ("student_disc", s_disc), ("student_heads", s_heads)):
        for pname, p in module.named_parameters():
            assert p.grad is not None and p.grad.abs().sum() > 0, \
                f"dead parameter {name}.{pname}"

    _report("criterion 5 (architecture contracts)")


# ---------------------------------------------------------------------------
# criteria 6 and 7: smoke trend + ablation runs (the expensive part)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def smoke_results():
    units = [(seed, variant) for seed in SMOKE_SEEDS
             for variant in ("semi", "paired_only", "no_id")]
    results = {}
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=2, mp_context=ctx) as pool:
        for row in pool.map(run_unit, units):
            results[(row["seed"], row["variant"])] = row
    print("\n[acceptance] smoke results:")
    for (seed, variant), row in sorted(results.items()):
        print(f"  seed {seed} {variant:<12} ssim {row['ssim']:.4f} "
              f"psnr {row['psnr_db']:.2f}", flush=True)
    return results


def test_criterion_6_semi_beats_paired_only(smoke_results):
    wins, details = 0, []
    for seed in SMOKE_SEEDS:
        semi = smoke_results[(seed, "semi")]["ssim"]
        base = smoke_results[(seed, "paired_only")]["ssim"]
        assert semi >= 0.5, f"seed {seed}: semi ssim {semi:.4f} < 0.5"
        assert base >= 0.5, f"seed {seed}: paired-only ssim {base:.4f} < 0.5"
        wins += semi >= base
        details.append(f"seed {seed}: {semi:.4f} vs {base:.4f}")
    assert wins >= 2, f"semi >= paired-only in only {wins}/3 seeds ({'; '.join(details)})"
    _report("criterion 6 (semi-supervised trend)", f"{wins}/3 seeds; {'; '.join(details)}")


def test_criterion_7_image_distillation_ablation(smoke_results):
    degraded, details = 0, []
    for seed in SMOKE_SEEDS:
        full = smoke_results[(seed, "semi")]["ssim"]
        ablated = smoke_results[(seed, "no_id")]["ssim"]
        degraded += (full - ablated) >= 0.05
        details.append(f"seed {seed}: {full:.4f} -> {ablated:.4f}")
    assert degraded >= 2, \
        f"image-distillation ablation degraded >= 0.05 in only {degraded}/3 seeds " \
        f"({'; '.join(details)})"
    _report("criterion 7 (image-distillation ablation)",
            f"{degraded}/3 seeds; {'; '.join(details)}")


def test_stage1_checkpoint_improves_on_first_epoch(smoke_results):
    # derived example: validation pixel loss at the returned stage-1
    # checkpoint is at most 0.7x its epoch-1 value on the smoke config
    for seed in SMOKE_SEEDS:
        row = smoke_results[(seed, "semi")]
        history = row["stage1_val_history"]
        at_ckpt = history[row["stage1_ckpt_epoch"] - 1]
        assert at_ckpt <= 0.7 * history[0], \
            f"seed {seed}: checkpoint val {at_ckpt:.4f} vs epoch-1 {history[0]:.4f}"
    _report("stage-1 convergence example", "checkpoint val <= 0.7x epoch-1 val")


# ---------------------------------------------------------------------------
# criterion 8: reproducibility
# ---------------------------------------------------------------------------

def test_criterion_8_reproducibility(tiny_config, tmp_path):
    a = trainer.run_training(tiny_config, out_dir=tmp_path / "a")
    b = trainer.run_training(tiny_config, out_dir=tmp_path / "b")
    assert a.paths["metrics"].read_bytes() == b.paths["metrics"].read_bytes()
    assert a.paths["lrs"].read_bytes() == b.paths["lrs"].read_bytes()
    _report("criterion 8 (reproducibility)", "byte-identical metrics logs")
