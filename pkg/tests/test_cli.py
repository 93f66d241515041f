import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from cdgan.cli import main, parse_override, resolve_config, build_parser, UsageError
from cdgan.core import LossTerm as T
from cdgan.trainer import TrainConfig, latest_checkpoint, read_log

TOY = ["--dataset", "toy", "--toy-pairs", "2", "--toy-test-pairs", "2", "--toy-size", "32"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("train", "--preset", "cdgan", "--profile", "test", "--epochs", "2", "--out", out, *TOY) == 0
    return out


def test_train_writes_checkpoint_and_log(run_dir):
    assert latest_checkpoint(run_dir) is not None
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["preset"] == "cdgan" and cfg["epochs_total"] == 2 and cfg["epochs_constant_lr"] == 1
    assert len(read_log(run_dir / "train_log.tsv")) == 4


def test_cyclegan_logs_zero_cd_terms(tmp_path):
    assert run("train", "--preset", "cyclegan", "--epochs", "1", "--out", tmp_path, *TOY) == 0
    entries = read_log(tmp_path / "train_log.tsv")
    assert all(e.report[T.CD_A] == 0 == e.report[T.CD_B] for e in entries)
    assert all(e.report[T.CYC_A] > 0 for e in entries)


def test_resume_via_cli(tmp_path):
    args = ["train", "--epochs", "2", "--out", tmp_path, "--set", "checkpoint_every=1", *TOY]
    assert run(*args) == 0
    before = (tmp_path / "train_log.tsv").read_text()
    assert run(*args, "--resume") == 0
    assert (tmp_path / "train_log.tsv").read_text() == before


def test_missing_dataset_root(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert run("train", "--dataset", "facades", "--data-root", missing) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_manifest(tmp_path, capsys):
    assert run("train", "--dataset", tmp_path / "m.ini") == 2
    assert "m.ini" in capsys.readouterr().err


def test_manifest_dataset(tmp_path, rng):
    for side in "AB":
        for i in range(3):
            (tmp_path / side).mkdir(exist_ok=True)
            Image.fromarray(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)).save(tmp_path / side / f"{i}.png")
    ini = tmp_path / "mini.ini"
    ini.write_text("[dataset]\nname = mini\ntrain_count = 2\ntest_count = 1\nimage_size = 32\n")
    out = tmp_path / "run"
    assert run("train", "--dataset", ini, "--epochs", "1", "--out", out) == 0
    assert run("eval", out, "--dataset", ini, "--out", out) == 0
    assert (out / "metrics.tsv").read_text().splitlines()[1].startswith("2\t")


def test_eval_and_infer(run_dir, tmp_path, capsys):
    assert run("eval", run_dir, *TOY) == 0
    lines = (run_dir / "metrics.tsv").read_text().splitlines()
    assert lines[0].startswith("id\tssim") and lines[-1].startswith("MEAN")
    src = tmp_path / "in.png"
    Image.fromarray(np.zeros((40, 40, 3), np.uint8)).save(src)
    assert run("infer", run_dir, src, "--size", "32", "--out", tmp_path / "o", "--direction", "B2A") == 0
    assert Image.open(tmp_path / "o" / "in_b2a.png").size == (32, 32)
    assert run("infer", run_dir, tmp_path / "none.png") == 2
    assert run("eval", tmp_path / "no_such_run") == 2


def test_ablate(tmp_path, capsys):
    assert run("ablate", "--epochs", "1", "--out", tmp_path, *TOY) == 0
    header = capsys.readouterr().out.splitlines()[0].split("\t")
    assert header == ["metric", "dualgan", "dualgan+", "cyclegan", "cyclegan+",
                      "ps2gan", "ps2gan+", "csgan", "csgan+", "cdgan"]


class TestConfigResolution:
    def parse(self, *argv):
        return resolve_config(build_parser().parse_args(["train", *map(str, argv)]))

    def test_file_then_overrides_then_flags(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(TrainConfig(seed=4, base_lr=1e-3).to_dict()))
        cfg = self.parse("--config", path, "--set", "base_lr=5e-4", "--set", "weights.omega_a=7", "--seed", "8")
        assert (cfg.seed, cfg.base_lr, cfg.preset.weights.omega_a) == (8, 5e-4, 7)

    def test_epochs_keep_proportion(self):
        cfg = self.parse("--epochs", "10")
        assert (cfg.epochs_total, cfg.epochs_constant_lr) == (10, 5)
        cfg = self.parse("--epochs", "10", "--set", "epochs_constant_lr=8")
        assert (cfg.epochs_total, cfg.epochs_constant_lr) == (10, 8)

    def test_undocumented_keys_rejected(self):
        with pytest.raises(UsageError):
            parse_override("learning_rate=1")
        with pytest.raises(UsageError):
            parse_override("seed")
        with pytest.raises(UsageError):
            parse_override("seed=1.5")
        assert parse_override("pool_size=50") == ("pool_size", 50)

    def test_bad_values_exit_2(self, capsys):
        assert run("train", "--preset", "nogan", *TOY) == 2
        assert run("train", "--set", "batch_size=4", *TOY) == 2


def test_verify_filter_and_exit_codes(capsys, monkeypatch):
    assert run("verify", "--only", "losses") == 0
    out = capsys.readouterr().out
    assert "loss-oracle" in out and "preset fidelity" not in out
    assert run("verify", "--only", "nonsense") == 2

    from cdgan import verify

    monkeypatch.setitem(verify.SUITES, "table", (5, "tampered", lambda: verify.check_published_psnr(lambda m: m)))
    assert run("verify", "--only", "table,presets") == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cdgan", "verify", "--only", "schedule"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "[PASS]" in out.stdout
