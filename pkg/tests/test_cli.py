import json

import pytest
import yaml

from fedinit.cli import main


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def toy(tmp_path):
    """Small generated dataset plus a matching partition file."""
    train = tmp_path / "train.fedf"
    test = tmp_path / "test.fedf"
    parts = tmp_path / "parts.feda"
    assert run_cli("gen", "--out", train, "--classes", 3, "--dim", 6,
                   "--samples-per-class", 40, "--seed", 5,
                   "--draw-seed", 1) == 0
    assert run_cli("gen", "--out", test, "--classes", 3, "--dim", 6,
                   "--samples-per-class", 30, "--seed", 5,
                   "--draw-seed", 2) == 0
    assert run_cli("partition", "--train", train, "--clients", 5,
                   "--alpha", 0.8, "--out", parts, "--seed", 2) == 0
    return tmp_path


class TestPipeline:
    def test_gen_is_deterministic(self, tmp_path):
        a = tmp_path / "a.fedf"
        b = tmp_path / "b.fedf"
        for out in (a, b):
            assert run_cli("gen", "--out", out, "--classes", 2, "--dim", 3,
                           "--samples-per-class", 10, "--seed", 9) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_init_then_eval(self, toy, capsys):
        weights = toy / "w.fedw"
        assert run_cli("init", "--train", toy / "train.fedf",
                       "--assignment", toy / "parts.feda",
                       "--method", "fedcof", "--out", weights) == 0
        per_class = toy / "per_class.csv"
        assert run_cli("eval", "--weights", weights,
                       "--test", toy / "test.fedf",
                       "--per-class", per_class) == 0
        out = capsys.readouterr().out
        assert "accuracy" in out
        assert per_class.exists()
        header = per_class.read_text().splitlines()[0]
        assert header == "class,accuracy"

    def test_init_with_fresh_partition(self, toy):
        weights = toy / "w2.fedw"
        assert run_cli("init", "--train", toy / "train.fedf",
                       "--clients", 4, "--alpha", 0.5,
                       "--method", "fedncm", "--out", weights) == 0
        assert weights.exists()

    def test_init_secure_mentions_residual(self, toy, capsys):
        weights = toy / "w3.fedw"
        assert run_cli("init", "--train", toy / "train.fedf",
                       "--assignment", toy / "parts.feda",
                       "--method", "fedcof", "--secure",
                       "--out", weights) == 0
        assert "mask residual" in capsys.readouterr().out

    def test_init_needs_a_partition_recipe(self, toy, capsys):
        code = run_cli("init", "--train", toy / "train.fedf",
                       "--method", "fedcof", "--out", toy / "w.fedw")
        assert code == 1
        assert capsys.readouterr().err.startswith("error:")


class TestComm:
    def test_reference_table_passes(self, capsys):
        assert run_cli("comm", "--reference") == 0
        out = capsys.readouterr().out
        assert "MISMATCH" not in out
        assert out.count("ok") == 12

    def test_reference_table_csv(self, tmp_path):
        assert run_cli("comm", "--reference", "--out-dir", tmp_path) == 0
        lines = (tmp_path / "comm_reference.csv").read_text().splitlines()
        assert len(lines) == 26

    def test_measured_cost(self, toy, capsys):
        assert run_cli("comm", "--train", toy / "train.fedf",
                       "--assignment", toy / "parts.feda",
                       "--method", "fed3r", "--out-dir", toy) == 0
        assert "fed3r" in capsys.readouterr().out
        lines = (toy / "comm_clients.csv").read_text().splitlines()
        assert len(lines) == 6

    def test_needs_reference_or_train(self, capsys):
        assert run_cli("comm") == 1
        assert "error:" in capsys.readouterr().err


class TestVerify:
    def test_prop2(self, tmp_path, capsys):
        assert run_cli("verify", "prop2", "--instances", 15,
                       "--out-dir", tmp_path) == 0
        assert "PASS" in capsys.readouterr().out
        assert (tmp_path / "prop2_residuals.csv").exists()
        assert (tmp_path / "prop2_residuals.png").exists()

    def test_unbiasedness_small(self, capsys):
        assert run_cli("verify", "unbiasedness", "--trials", 200) == 0
        assert "PASS" in capsys.readouterr().out

    def test_secure_agg(self, capsys):
        assert run_cli("verify", "secure-agg", "--instances", 6) == 0
        assert "PASS" in capsys.readouterr().out

    def test_bias_small(self, tmp_path, capsys):
        assert run_cli("verify", "bias", "--trials", 500,
                       "--out-dir", tmp_path) == 0
        assert "PASS" in capsys.readouterr().out
        assert (tmp_path / "bias.png").exists()

    def test_mse_small(self, tmp_path, capsys):
        assert run_cli("verify", "mse", "--trials", 8,
                       "--out-dir", tmp_path) == 0
        out = capsys.readouterr().out
        assert "PASS" in out
        assert "unbiased" in out
        assert (tmp_path / "mse_covariance.csv").exists()
        assert (tmp_path / "mse.png").exists()


class TestRun:
    def test_yaml_run_writes_report(self, tmp_path, capsys):
        config = {
            "train": {"synthetic": {"classes": 3, "dim": 5,
                                    "samples_per_class": 40, "seed": 4,
                                    "draw_seed": 1}},
            "test": {"synthetic": {"classes": 3, "dim": 5,
                                   "samples_per_class": 30, "seed": 4,
                                   "draw_seed": 2}},
            "clients": 5,
            "alpha": 0.7,
            "method": "fedcof",
            "participation": 0.4,
            "seed": 1,
        }
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(config))
        out = tmp_path / "out"
        assert run_cli("run", "--config", path, "--out-dir", out) == 0
        assert "accuracy" in capsys.readouterr().out
        result = json.loads((out / "result.json").read_text())
        assert result["method"] == "fedcof"
        for name in ("report.txt", "rounds.csv", "per_class.csv",
                     "coverage.png", "weights.fedw"):
            assert (out / name).exists()

    def test_seed_override_changes_partition(self, tmp_path):
        config = {
            "train": {"synthetic": {"classes": 2, "dim": 4,
                                    "samples_per_class": 30, "seed": 4,
                                    "draw_seed": 1}},
            "test": {"synthetic": {"classes": 2, "dim": 4,
                                   "samples_per_class": 20, "seed": 4,
                                   "draw_seed": 2}},
            "clients": 4,
            "alpha": 0.7,
            "method": "fedncm",
            "seed": 1,
        }
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(config))
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert run_cli("run", "--config", path, "--out-dir", a) == 0
        assert run_cli("run", "--config", path, "--seed", 77,
                       "--out-dir", b) == 0
        ra = json.loads((a / "result.json").read_text())
        rb = json.loads((b / "result.json").read_text())
        assert ra["seed"] == 1 and rb["seed"] == 77

    def test_bad_config_reports_cleanly(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"method": "fedcof", "mystery": 1}))
        assert run_cli("run", "--config", path) == 1
        assert "error:" in capsys.readouterr().err


class TestErrors:
    def test_missing_file_is_a_clean_error(self, capsys):
        assert run_cli("eval", "--weights", "/nope/w.fedw",
                       "--test", "/nope/t.fedf") == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "Traceback" not in err

    def test_unknown_method_is_a_usage_error(self, toy):
        with pytest.raises(SystemExit) as exc:
            run_cli("init", "--train", toy / "train.fedf",
                    "--clients", 2, "--alpha", 1.0,
                    "--method", "centroid", "--out", toy / "w.fedw")
        assert exc.value.code == 2

    def test_secure_requires_covariance_method(self, toy, capsys):
        code = run_cli("init", "--train", toy / "train.fedf",
                       "--assignment", toy / "parts.feda",
                       "--method", "fedncm", "--secure",
                       "--out", toy / "w.fedw")
        assert code == 1
        assert "secure" in capsys.readouterr().err
