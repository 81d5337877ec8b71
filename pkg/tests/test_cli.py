import csv
import json
from pathlib import Path

import numpy as np
import pytest

from rienhance.cli import EVAL_KEYS, RunConfig, evaluate_inputs, load_dataset_dir, main
from rienhance.embedding_io import read_embedding_csv
from rienhance.errors import ConfigError
from rienhance.eval_metrics import DEFAULT_FMR, DEFAULT_RANK, DEFAULT_REJECT_GRID, FAR_TARGETS, FPIR_TARGETS
from rienhance.synth_data import SynthConfig, generate
from rienhance.trainer import ModelState, TrainConfig, predict_xi_hat, train

SCHEMA = Path(__file__).resolve().parents[1] / "src" / "rienhance" / "schemas" / "eval_report.schema.json"
SMALL = {"epochs": 3, "pretrain_epochs": 2}


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Synth, train, score and eval once; reused by the read-only tests."""
    root = tmp_path_factory.mktemp("run")
    cfg = _write(root / "run.json", {"seed": 3, "train": SMALL})
    assert main(["synth", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--out", str(root / "model")]) == 0
    ckpt = str(root / "model" / "checkpoint.json")
    assert main(["score", ckpt, str(root / "data" / "probe.csv"), "--out", str(root / "scores.csv")]) == 0
    assert main(["eval", ckpt, str(root / "data" / "gallery.csv"), str(root / "data" / "probe.csv"),
                 "--out", str(root / "eval")]) == 0
    return root, cfg


def _snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "run.json"}


class TestRunConfig:
    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"seed": 0, "model": {}})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"eval": {"far": [0.1]}})

    def test_seed_only_at_top(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"train": {"seed": 1}})

    @pytest.mark.parametrize("seed", [-1, 1.5, True, "0"])
    def test_bad_seed(self, seed):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"seed": seed})

    def test_flag_overrides_file_seed(self):
        assert RunConfig(seed=1).resolved_seed(7) == 7
        assert RunConfig(seed=1).resolved_seed(None) == 1
        with pytest.raises(ConfigError):
            RunConfig().resolved_seed(None)

    def test_train_config_uses_shared_seed(self):
        cfg = RunConfig(synth={"noise_easy": 0.1}, train={"epochs": 2}).train_config(9)
        assert cfg.seed == 9 and cfg.synth.seed == 9 and cfg.synth.noise_easy == 0.1

    def test_baseline_flag(self):
        loss = RunConfig().train_config(0, baseline=True).loss
        assert (loss.weight_l1, loss.weight_id, loss.weight_mse) == (0.0, 0.0, 0.0)

    def test_json_error_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"seed": 1,\n  "train": }')
        with pytest.raises(ConfigError, match="line 2 column"):
            RunConfig.load(p)

    def test_eval_keys(self):
        assert set(EVAL_KEYS) == {"far_grid", "fpir_grid", "fmr", "reject_grid", "rank"}


class TestOutputs:
    def test_synth_files_round_trip(self, run):
        root, _ = run
        back = load_dataset_dir(root / "data")
        ds = generate(SynthConfig(seed=3))
        order = np.argsort(back.ids)
        ref = np.argsort(ds.ids)
        np.testing.assert_array_equal(back.inputs[order], ds.inputs[ref])
        np.testing.assert_array_equal(back.labels[order], ds.labels[ref])
        np.testing.assert_array_equal(back.is_hard[order], ds.is_hard[ref])
        np.testing.assert_array_equal(back.ui_inputs, ds.ui_inputs)

    def test_history_header(self, run):
        lines = (run[0] / "model" / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,l_cls,l_l1,l_id,l_mse,l_total,mean_ri_hard,mean_ri_easy"
        assert len(lines) == 1 + SMALL["epochs"]

    def test_score_matches_library(self, run):
        root, _ = run
        with open(root / "scores.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["id", "label", "xi_hat"]
        ids, labels, x = read_embedding_csv(root / "data" / "probe.csv")
        model = ModelState.load(root / "model" / "checkpoint.json")
        assert [r[0] for r in rows[1:]] == list(ids)
        np.testing.assert_array_equal([float(r[2]) for r in rows[1:]], predict_xi_hat(model, x))

    def test_report_schema(self, run):
        jsonschema = pytest.importorskip("jsonschema")
        report = json.loads((run[0] / "eval" / "report.json").read_text())
        jsonschema.validate(report, json.loads(SCHEMA.read_text()))

    def test_eval_matches_library(self, run):
        root, _ = run
        model = ModelState.load(root / "model" / "checkpoint.json")
        settings = {"far": FAR_TARGETS, "fpir": FPIR_TARGETS, "fmr": DEFAULT_FMR,
                    "reject": DEFAULT_REJECT_GRID, "rank": DEFAULT_RANK}
        rep = evaluate_inputs(model, read_embedding_csv(root / "data" / "gallery.csv"),
                              read_embedding_csv(root / "data" / "probe.csv"), settings)
        on_disk = json.loads((root / "eval" / "report.json").read_text())
        assert json.loads(json.dumps(rep.to_dict())) == on_disk

    def test_erc_csv(self, run):
        with open(run[0] / "eval" / "erc.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["reject_fraction", "fnmr"]
        grid = [float(r[0]) for r in rows[1:]]
        assert grid[0] == 0.0 and all(b > a for a, b in zip(grid, grid[1:]))
        assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])

    def test_eval_flags_override_defaults(self, run, tmp_path):
        root, _ = run
        ckpt = str(root / "model" / "checkpoint.json")
        args = ["eval", ckpt, str(root / "data" / "gallery.csv"), str(root / "data" / "probe.csv"),
                "--out", str(tmp_path), "--far-grid", "0.1,0.01", "--reject-grid", "0,0.5", "--fmr", "0.1"]
        assert main(args) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert [e["far"] for e in rep["tpr_at_far"]] == [0.1, 0.01]
        assert [e["reject_fraction"] for e in rep["erc"]] == [0.0, 0.5]
        assert rep["fmr_target"] == 0.1

    def test_byte_identical_rerun(self, run, tmp_path):
        root, cfg = run
        again = tmp_path / "again"
        again.mkdir()
        assert main(["synth", "--config", cfg, "--out", str(again / "data")]) == 0
        assert main(["train", "--config", cfg, "--out", str(again / "model")]) == 0
        ckpt = str(again / "model" / "checkpoint.json")
        assert main(["score", ckpt, str(again / "data" / "probe.csv"), "--out", str(again / "scores.csv")]) == 0
        assert main(["eval", ckpt, str(again / "data" / "gallery.csv"), str(again / "data" / "probe.csv"),
                     "--out", str(again / "eval")]) == 0
        assert _snapshot(again) == _snapshot(root)

    def test_synth_summary_printed(self, run, tmp_path, capsys):
        assert main(["synth", "--config", run[1], "--out", str(tmp_path)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["labeled"] == 400 and summary["ui"] == 200


class TestBaseline:
    def test_baseline_checkpoint_zero_weights(self, tmp_path):
        cfg = _write(tmp_path / "c.json", {"seed": 0, "train": {"epochs": 1, "pretrain_epochs": 0}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "m"), "--baseline"]) == 0
        loss = json.loads((tmp_path / "m" / "checkpoint.json").read_text())["loss_config"]
        assert (loss["weight_l1"], loss["weight_id"], loss["weight_mse"]) == (0.0, 0.0, 0.0)

    def test_train_from_data_dir_matches_synth(self, run, tmp_path):
        root, _ = run
        cfg = _write(tmp_path / "c.json", {"seed": 3, "train": SMALL, "data_dir": str(root / "data")})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "m")]) == 0
        lines = (tmp_path / "m" / "history.csv").read_text().splitlines()
        assert len(lines) == 1 + SMALL["epochs"]


class TestExitCodes:
    def test_missing_seed(self, tmp_path, capsys):
        cfg = _write(tmp_path / "c.json", {})
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "seed" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path):
        cfg = _write(tmp_path / "c.json", {"seed": 0, "train": {"epochz": 3}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_bad_flag_value(self, run, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["eval", "a", "b", "c", "--out", str(tmp_path), "--fmr", "lots"])
        assert err.value.code == 2

    def test_missing_input(self, run, tmp_path):
        ckpt = str(run[0] / "model" / "checkpoint.json")
        assert main(["score", ckpt, str(tmp_path / "nope.csv"), "--out", str(tmp_path / "s.csv")]) == 3

    def test_malformed_csv_located(self, run, tmp_path, capsys):
        src = (run[0] / "data" / "probe.csv").read_text().splitlines()
        cells = src[3].split(",")
        cells[4] = "abc"
        src[3] = ",".join(cells)
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join(src) + "\n")
        ckpt = str(run[0] / "model" / "checkpoint.json")
        assert main(["score", ckpt, str(bad), "--out", str(tmp_path / "s.csv")]) == 3
        err = capsys.readouterr().err
        assert "bad.csv:4: column 'x2'" in err

    def test_non_finite_prediction(self, run, tmp_path):
        doc = json.loads((run[0] / "model" / "checkpoint.json").read_text())
        doc["regression"]["w"] = [1e308] * len(doc["regression"]["w"])
        ckpt = _write(tmp_path / "ckpt.json", doc)
        assert main(["score", ckpt, str(run[0] / "data" / "probe.csv"), "--out", str(tmp_path / "s.csv")]) == 4

    def test_bad_log_level(self, run, tmp_path, monkeypatch):
        monkeypatch.setenv("RI_LOG", "loud")
        assert main(["synth", "--config", run[1], "--out", str(tmp_path)]) == 2
