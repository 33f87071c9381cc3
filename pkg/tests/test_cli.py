import numpy as np
import pytest
from PIL import Image

from semisynth import cli
from semisynth import phantom as ph
from semisynth.trainer import TrainConfig


@pytest.fixture(scope="module")
def config_file(tiny_config, tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(tiny_config.to_json())
    return path


@pytest.fixture(scope="module")
def trained_dir(config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--config", str(config_file), "--out-dir", str(out)]) == 0
    return out


class TestGenData:
    def test_round_trip(self, tmp_path, capsys):
        out = tmp_path / "data"
        rc = cli.main(["gen-data", "--patients", "10", "--slices", "2",
                       "--paired-fraction", "0.34", "--seed", "5", "--size", "32",
                       "--out", str(out)])
        assert rc == 0
        loaded = ph.load_split(out)
        direct = ph.build_split(10, 2, 0.34, seed=5, canvas_size=32)
        assert ph.split_hash(loaded) == ph.split_hash(direct)
        assert "split hash" in capsys.readouterr().out


class TestTrain:
    def test_writes_artifacts(self, trained_dir):
        for name in ("resolved_config.json", "stage1_teacher.pt", "final_student.pt",
                     "metrics.csv", "lrs.csv"):
            assert (trained_dir / name).exists(), name

    def test_resolved_config_round_trips(self, trained_dir, tiny_config):
        text = (trained_dir / "resolved_config.json").read_text()
        assert TrainConfig.from_json(text) == tiny_config


class TestEval:
    def test_writes_report_and_error_maps(self, config_file, trained_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        rc = cli.main(["eval", "--checkpoint", str(trained_dir / "final_student.pt"),
                       "--config", str(config_file), "--split", "test",
                       "--out-dir", str(out), "--dump-error-maps"])
        assert rc == 0
        assert (out / "metrics_test.csv").exists()
        maps = list((out / "error_maps").glob("*.png"))
        assert maps
        img = np.asarray(Image.open(maps[0]))
        assert img.dtype == np.uint8
        assert "ssim" in capsys.readouterr().out


class TestDumpDifficulty:
    def test_writes_one_map_per_val_sample(self, config_file, trained_dir, tmp_path,
                                           tiny_config):
        out = tmp_path / "dmaps"
        rc = cli.main(["dump-difficulty",
                       "--checkpoint", str(trained_dir / "final_student.pt"),
                       "--config", str(config_file), "--out-dir", str(out)])
        assert rc == 0
        from semisynth.trainer import build_split_from_config

        n_val = len(build_split_from_config(tiny_config).val)
        pngs = list(out.glob("difficulty_*.png"))
        assert len(pngs) == n_val
        img = np.asarray(Image.open(pngs[0]))
        assert img.shape == (tiny_config.canvas_size, tiny_config.canvas_size)


class TestSweep:
    def test_fraction_one_labels_semi_as_baseline(self, tiny_config, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(tiny_config.to_json())
        out = tmp_path / "sweep"
        rc = cli.main(["sweep", "--config", str(cfg_path), "--fractions", "1.0",
                       "--out-dir", str(out)])
        assert rc == 0
        assert (out / "sweep.csv").exists()
        assert (out / "sweep.txt").exists()
        text = (out / "sweep.csv").read_text()
        assert "semi(=paired_only)" in text

    def test_controlled_comparison_same_split_hash(self, tiny_config, tmp_path):
        from semisynth.sweep import run_sweep

        rows = run_sweep(tiny_config, fractions=[tiny_config.paired_fraction],
                         out_dir=tmp_path / "s")
        assert len(rows) == 2
        assert rows[0]["split_hash"] == rows[1]["split_hash"]
        assert {r["variant"] for r in rows} == {"paired_only", "semi"}
