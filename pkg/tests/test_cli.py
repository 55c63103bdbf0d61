import json
from dataclasses import replace

import numpy as np
import pytest

from softgrove.benchmark import prepare_folds, run_fold, BenchmarkConfig
from softgrove.cli import main, read_config_file, parse_grid, UsageError
from softgrove.data import synth, write_csv
from softgrove.io import dumps, load_model, save_model
from softgrove.training import TrainConfig, derive_seed, sgd_fit


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestTrain:
    def test_budding_default_grid_round_trips(self, tmp_path, capsys):
        code, out, _ = run(["train", "--synth", "xor", "--n", 120, "--model", "budding", "--epochs", 3, "--out", tmp_path], capsys)
        assert code == 0
        assert "validation accuracy" in out and "size" in out
        model, doc = load_model(tmp_path / "model.json")
        assert (tmp_path / "model.json").read_text() == dumps(model, {k: doc[k] for k in ("normalization", "class_names")})
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert len(summary["runs"]) == 16
        assert (tmp_path / "history.csv").read_text().startswith("epoch,")

    def test_zero_lr_warns(self, tmp_path, capsys):
        code, _, err = run(["train", "--synth", "xor", "--n", 60, "--model", "budding", "--lr", 0, "--lambda", 0, "--epochs", 2, "--out", tmp_path], capsys)
        assert code == 0
        assert "warning" in err
        model, _ = load_model(tmp_path / "model.json")
        assert model.root.is_leaf and model.root.gamma == 1.0

    def test_zero_epochs_rejected(self, tmp_path, capsys):
        code, _, err = run(["train", "--synth", "xor", "--model", "budding", "--epochs", 0, "--out", tmp_path], capsys)
        assert code == 1
        assert "epochs" in err

    def test_missing_model_flag(self, tmp_path, capsys):
        assert run(["train", "--synth", "xor", "--out", tmp_path], capsys)[0] == 1

    def test_data_needs_task(self, tmp_path, capsys):
        assert run(["train", "--data", "x.csv", "--model", "hard", "--out", tmp_path], capsys)[0] == 1

    def test_missing_data_file(self, tmp_path, capsys):
        code, _, err = run(["train", "--data", tmp_path / "none.csv", "--task", "binary", "--model", "hard", "--out", tmp_path], capsys)
        assert code == 2

    def test_hard_model(self, tmp_path, capsys):
        code, _, _ = run(["train", "--synth", "xor", "--n", 90, "--model", "hard", "--out", tmp_path], capsys)
        assert code == 0
        assert load_model(tmp_path / "model.json")[0].kind == "hard"

    def test_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# settings\nepochs = 2\nlr=0.1\nlambda = 0\n")
        code, out, _ = run(["train", "--synth", "xor", "--n", 60, "--model", "distributed", "--config", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["config"]["train"]["epochs"] == 2
        assert len(summary["runs"]) == 1

    def test_config_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochz = 2\n")
        code, _, err = run(["train", "--synth", "xor", "--model", "budding", "--config", cfg, "--out", tmp_path], capsys)
        assert code == 1 and "epochz" in err

    def test_flag_beats_file(self, tmp_path):
        cfg = tmp_path / "c"
        cfg.write_text("epochs=7\n")
        assert read_config_file(cfg, {"epochs": (int, 1)}) == {"epochs": "7"}


class TestSynthEval:
    def test_eval_matches_benchmark_fold_metric(self, tmp_path, capsys):
        # train a fold model the way the benchmark does, then score it through eval
        data = synth("xor", 150, 4)
        train, valid, test = prepare_folds(data, 4)[0]
        cfg = BenchmarkConfig(models=("distributed",), grid=((0.3, 0.0),), train=TrainConfig(epochs=5, seed=4))
        result = run_fold("distributed", 0, train, valid, test, cfg)
        # the same computation, written to disk and re-scored by the CLI
        tree, _ = sgd_fit("distributed", train, valid, replace(cfg.train, learning_rate=0.3, lam=0.0, seed=derive_seed(4, 0, 0)))
        save_model(tree, tmp_path / "m.json")
        write_csv(test, tmp_path / "test.csv")
        code, out, _ = run(["eval", "--model", tmp_path / "m.json", "--data", tmp_path / "test.csv"], capsys)
        assert code == 0
        assert float(out.splitlines()[0].split(": ")[1]) == result.metric

    def test_synth_writes_csv(self, tmp_path, capsys):
        code, _, _ = run(["synth", "--name", "ring", "--n", 30, "--seed", 1, "--out", tmp_path / "r.csv"], capsys)
        assert code == 0
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 31 and len(lines[0].split(",")) == 21

    def test_eval_dimension_mismatch(self, tmp_path, capsys):
        run(["train", "--synth", "xor", "--n", 60, "--model", "budding", "--lr", 0.1, "--lambda", 0, "--epochs", 2, "--out", tmp_path], capsys)
        run(["synth", "--name", "ring", "--n", 20, "--out", tmp_path / "r.csv"], capsys)
        code, _, err = run(["eval", "--model", tmp_path / "model.json", "--data", tmp_path / "r.csv"], capsys)
        assert code == 2
        assert "d=2" in err and "d=20" in err

    def test_eval_harden_budding_single_leaf(self, tmp_path, capsys):
        run(["train", "--synth", "xor", "--n", 200, "--model", "budding", "--lr", 0.3, "--lambda", 0, "--epochs", 20, "--out", tmp_path], capsys)
        code, out, _ = run(["eval", "--model", tmp_path / "model.json", "--synth", "xor", "--n", 200, "--harden"], capsys)
        assert code == 0
        hist = [line.strip() for line in out.split("histogram")[1].strip().splitlines()[1:]]
        assert hist == ["1: 200"]

    def test_eval_distributed_prints_histogram(self, tmp_path, capsys):
        run(["train", "--synth", "xor", "--n", 120, "--model", "distributed", "--lr", 0.3, "--lambda", 0, "--epochs", 10, "--out", tmp_path], capsys)
        code, out, _ = run(["eval", "--model", tmp_path / "model.json", "--synth", "xor", "--n", 120], capsys)
        assert code == 0 and "histogram" in out

    def test_eval_corrupt_model(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text("{not json")
        run(["synth", "--name", "xor", "--n", 20, "--out", tmp_path / "x.csv"], capsys)
        assert run(["eval", "--model", tmp_path / "bad.json", "--data", tmp_path / "x.csv"], capsys)[0] == 2
        assert run(["eval", "--model", tmp_path / "missing.json", "--data", tmp_path / "x.csv"], capsys)[0] == 2


class TestGradcheck:
    def test_passes(self, capsys):
        code, out, _ = run(["gradcheck", "--trials", 9, "--depth", 2, "--dim", 3], capsys)
        assert code == 0 and "max relative error" in out

    def test_corrupted_gradient_fails(self, capsys):
        code, _, err = run(["gradcheck", "--trials", 1, "--corrupt"], capsys)
        assert code == 4
        assert "kind=" in err and "parameter=rho" in err

    def test_depth_zero(self, capsys):
        assert run(["gradcheck", "--trials", 6, "--depth", 0], capsys)[0] == 0

    def test_bad_args(self, capsys):
        assert run(["gradcheck", "--trials", 0], capsys)[0] == 1


class TestBenchmark:
    ARGS = ["benchmark", "--synth", "xor", "--n", 90, "--models", "budding,distributed", "--grid", "0.3:0", "--epochs", 2, "--seed", 5]

    def test_shape_and_determinism(self, tmp_path, capsys):
        assert run(self.ARGS + ["--out", tmp_path / "a"], capsys)[0] == 0
        assert run(self.ARGS + ["--out", tmp_path / "b", "--workers", 2], capsys)[0] == 0
        a = (tmp_path / "a" / "report.json").read_bytes()
        assert a == (tmp_path / "b" / "report.json").read_bytes()
        doc = json.loads(a)
        assert doc["seed"] == 5 and doc["config"]["grid"] == [[0.3, 0.0]]
        models = doc["tables"][0]["models"]
        assert [m["name"] for m in models] == ["budding", "distributed"]
        assert all(len(m["metric_folds"]) == 10 and len(m["size_folds"]) == 10 for m in models)

    def test_unknown_model(self, tmp_path, capsys):
        code, _, err = run(["benchmark", "--synth", "xor", "--models", "forest", "--out", tmp_path], capsys)
        assert code == 1 and "forest" in err

    def test_bad_grid(self):
        with pytest.raises(UsageError):
            parse_grid("0.1;0")
        assert len(parse_grid("default")) == 16

    def test_hard_included(self, tmp_path, capsys):
        code, out, _ = run(["benchmark", "--synth", "xor", "--n", 60, "--models", "hard,budding", "--grid", "0.2:0", "--epochs", 1, "--out", tmp_path], capsys)
        assert code == 0 and "hard" in out

    def test_no_command(self, capsys):
        assert run([], capsys)[0] == 1
