import json
import time

import numpy as np
import pytest

from imfas.cli import main, sha256_file
from imfas.meta_data import SyntheticSpec, load_dir, write_flat_config
from imfas.model import load_checkpoint

SMALL_SPEC = dict(n_datasets=12, n_algorithms=5, n_fidelities=5, n_features=3, latent_dim=2, seed=4)
SMALL_TRAIN = "epochs: 2\nbatch_size: 4\nencoder_hidden: 8\nhidden_size: 6\n"


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture
def data_dir(tmp_path):
    spec = tmp_path / "spec.yaml"
    write_flat_config(spec, SyntheticSpec(**SMALL_SPEC))
    assert main(["generate", "--config", str(spec), "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data"


@pytest.fixture
def train_cfg(tmp_path):
    path = tmp_path / "train.yaml"
    path.write_text(SMALL_TRAIN)
    return path


@pytest.fixture
def checkpoint(tmp_path, data_dir, train_cfg):
    out = tmp_path / "model"
    assert main(["train", "--data", str(data_dir), "--config", str(train_cfg), "--out", str(out)]) == 0
    return out / "checkpoint.json"


class TestGenerate:
    def test_default_spec_round_trips(self, tmp_path):
        out = tmp_path / "d"
        t0 = time.perf_counter()
        assert main(["generate", "--out", str(out)]) == 0
        assert time.perf_counter() - t0 < 5.0
        ds = load_dir(out)
        assert ds.performances.shape == (200, 20, 10) and ds.n_features == 8
        m = manifest(out)
        assert m["status"] == "completed" and m["command"] == "generate"
        assert m["config"]["spec"]["crossing_fraction"] == 0.4

    def test_byte_identical(self, tmp_path, data_dir):
        spec = tmp_path / "spec.yaml"
        assert main(["generate", "--config", str(spec), "--out", str(tmp_path / "again")]) == 0
        for name in ("curves.csv", "meta_features.csv"):
            assert (data_dir / name).read_bytes() == (tmp_path / "again" / name).read_bytes()

    def test_invalid_spec(self, tmp_path, capsys):
        spec = tmp_path / "bad.yaml"
        spec.write_text("n_fidelities: 1\n")
        assert main(["generate", "--config", str(spec), "--out", str(tmp_path / "o")]) == 2
        assert "n_fidelities" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path):
        spec = tmp_path / "bad.yaml"
        spec.write_text("n_datasets: 5\ncolour: red\n")
        assert main(["generate", "--config", str(spec), "--out", str(tmp_path / "o")]) == 2


class TestTrain:
    def test_smoke(self, tmp_path, data_dir):
        cfg = tmp_path / "one.yaml"
        cfg.write_text("epochs: 1\nbatch_size: 4\nencoder_hidden: 8\nhidden_size: 6\n")
        out = tmp_path / "run"
        assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "checkpoint.json").exists()
        assert len((out / "history.csv").read_text().splitlines()) == 2
        m = manifest(out)
        assert m["inputs"][str(data_dir / "curves.csv")] == sha256_file(data_dir / "curves.csv")
        assert m["config"]["train"]["epochs"] == 1 and m["status"] == "completed"

    def test_rerun_needs_force(self, tmp_path, data_dir, train_cfg, checkpoint):
        out = checkpoint.parent
        args = ["train", "--data", str(data_dir), "--config", str(train_cfg), "--out", str(out)]
        assert main(args) == 2
        assert main(args + ["--force"]) == 0

    def test_rerun_is_deterministic(self, tmp_path, data_dir, train_cfg, checkpoint):
        out = tmp_path / "second"
        assert main(["train", "--data", str(data_dir), "--config", str(train_cfg), "--out", str(out)]) == 0
        assert (out / "checkpoint.json").read_bytes() == checkpoint.read_bytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_abort_exit_code(self, tmp_path, data_dir, capsys):
        cfg = tmp_path / "wild.yaml"
        cfg.write_text(SMALL_TRAIN + "learning_rate: 1.0e+300\n")
        out = tmp_path / "wild"
        code = main(["train", "--data", str(data_dir), "--config", str(cfg), "--out", str(out)])
        assert code == 3
        err = capsys.readouterr().err
        assert "epoch" in err and "manifest.json" in err
        assert manifest(out)["status"] == "failed"

    def test_missing_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


class TestEval:
    def test_four_fractions(self, tmp_path, data_dir, checkpoint):
        digest = sha256_file(checkpoint)
        out = tmp_path / "ev"
        assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir),
                     "--fractions", "0.1,0.2,0.5,1.0", "--out", str(out)]) == 0
        header = (out / "report.md").read_text().splitlines()[0]
        assert header == "| Dataset | 10% | 20% | 50% | 100% | SH |"
        assert len((out / "fraction_curve.csv").read_text().splitlines()) == 5
        assert sha256_file(checkpoint) == digest
        payload = json.loads((out / "report.json").read_text())
        assert payload["fractions"] == [0.1, 0.2, 0.5, 1.0]

    def test_bad_fraction(self, tmp_path, data_dir, checkpoint):
        assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir),
                     "--fractions", "1.5", "--out", str(tmp_path / "ev")]) == 2

    def test_dimension_mismatch(self, tmp_path, checkpoint, capsys):
        spec = tmp_path / "other.yaml"
        write_flat_config(spec, SyntheticSpec(**{**SMALL_SPEC, "n_algorithms": 6}))
        assert main(["generate", "--config", str(spec), "--out", str(tmp_path / "other")]) == 0
        code = main(["eval", "--checkpoint", str(checkpoint), "--data", str(tmp_path / "other"),
                     "--out", str(tmp_path / "ev")])
        assert code == 2
        err = capsys.readouterr().err
        assert "|A|=5" in err and "|A|=6" in err and "F=3" in err


class TestBaseline:
    def test_default_and_override(self, tmp_path, data_dir):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["baseline", "--data", str(data_dir), "--out", str(a)]) == 0
        assert main(["baseline", "--data", str(data_dir), "--eta", "3", "--out", str(b)]) == 0
        assert manifest(a)["config"]["sh"]["eta"] == 2
        assert manifest(b)["config"]["sh"]["eta"] == 3
        payload = json.loads((a / "sh_report.json").read_text())
        assert -1 <= payload["sh"]["mean"] <= 1 and "eta=2" in payload["sh"]["schedule"]

    def test_repeat_is_byte_identical(self, tmp_path, data_dir):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["baseline", "--data", str(data_dir), "--out", str(a)]) == 0
        assert main(["baseline", "--data", str(data_dir), "--out", str(b)]) == 0
        assert (a / "sh_report.json").read_bytes() == (b / "sh_report.json").read_bytes()

    def test_bad_eta(self, tmp_path, data_dir):
        assert main(["baseline", "--data", str(data_dir), "--eta", "1", "--out", str(tmp_path / "a")]) == 2


class TestSplit:
    def test_split(self, tmp_path, data_dir):
        out = tmp_path / "s"
        assert main(["split", "--data", str(data_dir), "--seeds", "3", "--out", str(out)]) == 0
        train, test = load_dir(out / "train"), load_dir(out / "test")
        assert (train.n_datasets, test.n_datasets) == (10, 2)
        assert not set(train.dataset_ids) & set(test.dataset_ids)


class TestExperiment:
    def test_single_seed(self, tmp_path, data_dir, train_cfg, monkeypatch):
        monkeypatch.setenv("IMFAS_THREADS", "1")
        out = tmp_path / "exp"
        assert main(["experiment", "--data", str(data_dir), "--config", str(train_cfg), "--seeds", "7",
                     "--fractions", "0.5,1.0", "--out", str(out)]) == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["seeds"] == [7]
        assert all(v["sd"] == 0.0 for v in payload["aggregate"].values())
        assert (out / "seed_7" / "history.csv").exists()
        assert manifest(out)["seeds"] == [7]

    def test_spec_source_and_repeat(self, tmp_path, train_cfg, monkeypatch):
        monkeypatch.setenv("IMFAS_THREADS", "1")
        spec = tmp_path / "spec.yaml"
        write_flat_config(spec, SyntheticSpec(**SMALL_SPEC))
        outs = [tmp_path / "e1", tmp_path / "e2"]
        for out in outs:
            assert main(["experiment", "--data", str(spec), "--config", str(train_cfg), "--seeds", "1,2",
                         "--fractions", "0.5", "--out", str(out)]) == 0
        assert (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()
        assert manifest(outs[0])["config"]["spec"]["n_datasets"] == 12
