import json

import numpy as np
import pytest

from rulforge.cli import DATA_ENV, main, run_config_from_dict
from rulforge.errors import ValidationError


@pytest.fixture(scope="module")
def trained_run(small_data_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    rc = main(
        [
            "train",
            "--subset",
            "SYNTH",
            "--data-root",
            str(small_data_root),
            "--out",
            str(out),
            "--preset",
            "tiny",
            "--epochs",
            "2",
            "--patience",
            "2",
            "--seed",
            "5",
        ]
    )
    assert rc == 0
    return out


class TestSynthCommand:
    def test_writes_standard_layout(self, tmp_path, capsys):
        out = tmp_path / "data"
        rc = main(
            [
                "synth",
                "--out",
                str(out),
                "--n-train",
                "6",
                "--n-test",
                "3",
                "--min-len",
                "45",
                "--max-len",
                "60",
                "--seed",
                "1",
            ]
        )
        assert rc == 0
        for name in ("train_SYNTH.txt", "test_SYNTH.txt", "RUL_SYNTH.txt"):
            assert (out / name).exists()
        assert "6 train / 3 test" in capsys.readouterr().out
        rc = main(["inspect", "--subset", "SYNTH", "--data-root", str(out)])
        assert rc == 0

    def test_bad_generator_args(self, tmp_path):
        rc = main(["synth", "--out", str(tmp_path), "--min-len", "10", "--max-len", "5"])
        assert rc == 2


class TestInspectCommand:
    def test_reports_counts_and_constants(self, small_data_root, capsys):
        rc = main(["inspect", "--subset", "SYNTH", "--data-root", str(small_data_root)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "10 train / 4 test" in out
        assert "constant features" in out
        assert "normalized feature count: 17" in out

    def test_env_var_data_root(self, small_data_root, monkeypatch):
        monkeypatch.setenv(DATA_ENV, str(small_data_root))
        assert main(["inspect", "--subset", "SYNTH"]) == 0

    def test_missing_data_root(self, monkeypatch, capsys):
        monkeypatch.delenv(DATA_ENV, raising=False)
        rc = main(["inspect", "--subset", "SYNTH"])
        assert rc == 2
        assert DATA_ENV in capsys.readouterr().err

    def test_missing_subset_files(self, small_data_root, capsys):
        rc = main(["inspect", "--subset", "FD001", "--data-root", str(small_data_root)])
        assert rc == 2
        assert "train_FD001.txt" in capsys.readouterr().err


class TestTrainCommand:
    def test_artifacts_written(self, trained_run):
        run_dir = trained_run / "run0"
        for name in (
            "checkpoint.rulf",
            "norm_stats.json",
            "epochs.csv",
            "train_report.json",
            "metrics.json",
            "loss_curve.svg",
        ):
            assert (run_dir / name).exists(), name
        assert (trained_run / "aggregate.json").exists()

    def test_metrics_and_report_content(self, trained_run):
        metrics = json.loads((trained_run / "run0" / "metrics.json").read_text())
        assert metrics["subset"] == "SYNTH"
        assert metrics["n_engines"] == 4
        assert 0.0 <= metrics["rmse"]
        report = json.loads((trained_run / "run0" / "train_report.json").read_text())
        assert report["epochs_run"] == 2
        assert len(report["train_losses"]) == 2

    def test_aggregate_single_run_sd_null(self, trained_run):
        agg = json.loads((trained_run / "aggregate.json").read_text())
        assert agg["n_runs"] == 1
        assert agg["rmse"]["sd"] is None
        assert agg["nasa_score"]["sd"] is None
        assert len(agg["per_run"]) == 1
        assert agg["per_run"][0]["seed"] == 5
        assert agg["rmse"]["mean"] == agg["per_run"][0]["rmse"]

    def test_checkpoint_meta(self, trained_run):
        from rulforge.train import load_checkpoint

        _, meta = load_checkpoint(trained_run / "run0" / "checkpoint.rulf")
        assert meta["subset"] == "SYNTH"
        assert meta["preprocessing_mode"] == "full_sequence"
        assert meta["seed"] == 5
        assert meta["train"]["max_epochs"] == 2
        # reproducibility forbids environment-dependent content
        blob = json.dumps(meta)
        assert "/" not in blob.replace("full_sequence", "")
        assert "time" not in blob

    def test_multi_run_seeds_and_sd(self, small_data_root, tmp_path):
        out = tmp_path / "multi"
        rc = main(
            [
                "train",
                "--subset",
                "SYNTH",
                "--data-root",
                str(small_data_root),
                "--out",
                str(out),
                "--preset",
                "tiny",
                "--epochs",
                "1",
                "--patience",
                "1",
                "--seed",
                "3",
                "--runs",
                "2",
            ]
        )
        assert rc == 0
        assert (out / "run0").is_dir() and (out / "run1").is_dir()
        agg = json.loads((out / "aggregate.json").read_text())
        assert [r["seed"] for r in agg["per_run"]] == [3, 4]
        assert agg["rmse"]["sd"] is not None

    def test_config_file_run(self, small_data_root, tmp_path):
        out = tmp_path / "cfgrun"
        cfg = {
            "subset": "SYNTH",
            "preset": "tiny",
            "output_dir": str(out),
            "train": {"max_epochs": 1, "patience": 1, "seed": 2},
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["train", "--config", str(cfg_path), "--data-root", str(small_data_root)])
        assert rc == 0
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["per_run"][0]["seed"] == 2

    def test_flag_overrides_config(self, small_data_root, tmp_path):
        out = tmp_path / "override"
        cfg = {"subset": "SYNTH", "preset": "tiny", "train": {"max_epochs": 1, "patience": 1}}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(
            [
                "train",
                "--config",
                str(cfg_path),
                "--data-root",
                str(small_data_root),
                "--out",
                str(out),
                "--seed",
                "9",
            ]
        )
        assert rc == 0
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["per_run"][0]["seed"] == 9

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.json")])
        assert rc == 2
        assert "config file not found" in capsys.readouterr().err

    def test_invalid_config_json(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text("{not json")
        rc = main(["train", "--config", str(cfg_path)])
        assert rc == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"subzet": "SYNTH"}))
        rc = main(["train", "--config", str(cfg_path)])
        assert rc == 2
        assert "unknown config key 'subzet'" in capsys.readouterr().err

    def test_unknown_train_key(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"train": {"momentum": 0.9}}))
        rc = main(["train", "--config", str(cfg_path)])
        assert rc == 2
        assert "train.momentum" in capsys.readouterr().err

    def test_invalid_train_value(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"train": {"learning_rate": -1.0}}))
        rc = main(["train", "--config", str(cfg_path)])
        assert rc == 2
        assert "train.learning_rate" in capsys.readouterr().err

    def test_wrong_type_train_value(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"train": {"learning_rate": "fast"}}))
        rc = main(["train", "--config", str(cfg_path)])
        assert rc == 2
        assert "train.learning_rate" in capsys.readouterr().err

    def test_minmax_requires_windowed(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"normalization": "minmax"}))
        rc = main(["train", "--config", str(cfg_path)])
        assert rc == 2
        assert "minmax" in capsys.readouterr().err

    def test_argparse_rejects_unknown_subset(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--subset", "FD009"])
        assert exc.value.code == 2

    def test_divergence_exit_code(self, small_data_root, tmp_path, capsys):
        cfg = {
            "subset": "SYNTH",
            "preset": "tiny",
            "output_dir": str(tmp_path / "div"),
            "train": {
                "optimizer": "sgd",
                "learning_rate": 1e6,
                "max_epochs": 2,
                "patience": 1,
            },
        }
        cfg_path = tmp_path / "div.json"
        cfg_path.write_text(json.dumps(cfg))
        with np.errstate(over="ignore", invalid="ignore"):
            rc = main(["train", "--config", str(cfg_path), "--data-root", str(small_data_root)])
        assert rc == 1
        assert "non-finite loss" in capsys.readouterr().err


class TestEvalCommand:
    def test_reproduces_metrics_byte_identical(self, small_data_root, trained_run):
        metrics_path = trained_run / "run0" / "metrics.json"
        before = metrics_path.read_bytes()
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(trained_run / "run0" / "checkpoint.rulf"),
                "--data-root",
                str(small_data_root),
            ]
        )
        assert rc == 0
        assert metrics_path.read_bytes() == before

    def test_curve_units(self, small_data_root, trained_run, tmp_path):
        out = tmp_path / "evalout"
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(trained_run / "run0" / "checkpoint.rulf"),
                "--data-root",
                str(small_data_root),
                "--out",
                str(out),
                "--curve-units",
                "1,2",
            ]
        )
        assert rc == 0
        assert (out / "curves" / "unit_1.csv").exists()
        assert (out / "curves" / "unit_2.csv").exists()
        svg = (out / "curves.svg").read_text()
        assert "series-actual-1" in svg
        assert "series-predicted-1" in svg

    def test_unknown_curve_unit(self, small_data_root, trained_run, tmp_path, capsys):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(trained_run / "run0" / "checkpoint.rulf"),
                "--data-root",
                str(small_data_root),
                "--out",
                str(tmp_path / "x"),
                "--curve-units",
                "99",
            ]
        )
        assert rc == 2
        assert "unit 99" in capsys.readouterr().err

    def test_malformed_curve_units(self, small_data_root, trained_run, tmp_path):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(trained_run / "run0" / "checkpoint.rulf"),
                "--data-root",
                str(small_data_root),
                "--out",
                str(tmp_path / "x"),
                "--curve-units",
                "a,b",
            ]
        )
        assert rc == 2

    def test_missing_checkpoint(self, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "nope.rulf")])
        assert rc == 2
        assert "checkpoint not found" in capsys.readouterr().err

    def test_corrupted_checkpoint(self, small_data_root, trained_run, tmp_path, capsys):
        raw = bytearray((trained_run / "run0" / "checkpoint.rulf").read_bytes())
        raw[-3] ^= 0xFF
        bad = tmp_path / "corrupt.rulf"
        bad.write_bytes(bytes(raw))
        stats_src = (trained_run / "run0" / "norm_stats.json").read_text()
        (tmp_path / "norm_stats.json").write_text(stats_src)
        rc = main(["eval", "--checkpoint", str(bad), "--data-root", str(small_data_root)])
        assert rc == 3
        assert "checksum" in capsys.readouterr().err

    def test_stats_feature_mismatch(self, small_data_root, trained_run, tmp_path, capsys):
        from rulforge.dataset import load_subset
        from rulforge.preprocess import fit_normalizer

        bundle = load_subset(small_data_root, "SYNTH")
        alt = fit_normalizer(bundle.train, include_settings=False)
        alt_path = tmp_path / "alt_stats.json"
        alt_path.write_text(alt.to_json())
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(trained_run / "run0" / "checkpoint.rulf"),
                "--stats",
                str(alt_path),
                "--data-root",
                str(small_data_root),
            ]
        )
        assert rc == 3
        assert "features" in capsys.readouterr().err

    def test_missing_stats(self, small_data_root, trained_run, tmp_path, capsys):
        ckpt = tmp_path / "lonely.rulf"
        ckpt.write_bytes((trained_run / "run0" / "checkpoint.rulf").read_bytes())
        rc = main(["eval", "--checkpoint", str(ckpt), "--data-root", str(small_data_root)])
        assert rc == 2
        assert "stats not found" in capsys.readouterr().err


class TestPlotCommand:
    def test_renders_curves(self, small_data_root, trained_run, tmp_path):
        out = tmp_path / "evalout"
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(trained_run / "run0" / "checkpoint.rulf"),
                "--data-root",
                str(small_data_root),
                "--out",
                str(out),
                "--curve-units",
                "1",
            ]
        )
        assert rc == 0
        svg = tmp_path / "replot.svg"
        rc = main(["plot", str(out / "curves" / "unit_1.csv"), "--out", str(svg)])
        assert rc == 0
        text = svg.read_text()
        assert "series-actual-1" in text  # unit id recovered from the filename

    def test_deterministic_output(self, small_data_root, trained_run, tmp_path):
        out = tmp_path / "evalout"
        main(
            [
                "eval",
                "--checkpoint",
                str(trained_run / "run0" / "checkpoint.rulf"),
                "--data-root",
                str(small_data_root),
                "--out",
                str(out),
                "--curve-units",
                "1",
            ]
        )
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        main(["plot", str(out / "curves" / "unit_1.csv"), "--out", str(a)])
        main(["plot", str(out / "curves" / "unit_1.csv"), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_missing_curve_file(self, tmp_path, capsys):
        rc = main(["plot", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.svg")])
        assert rc == 2
        assert "curve file not found" in capsys.readouterr().err


class TestRunConfigFromDict:
    def test_defaults_round_trip(self):
        cfg = run_config_from_dict({})
        cfg.validate()
        assert cfg.subset == "FD001"
        assert cfg.preset == "paper-4block"
        assert cfg.train.max_epochs == 1000

    def test_model_dict_instead_of_preset(self):
        cfg = run_config_from_dict(
            {"model": {"num_blocks": 1, "dilations": [1, 2], "kernel": 3, "channels": 8,
                       "dropout": 0.1, "head_widths": [8, 1], "padding_mode": "causal_left"}}
        )
        cfg.validate()
        assert cfg.model["channels"] == 8

    def test_bool_fields_strict(self):
        with pytest.raises(ValidationError):
            run_config_from_dict({"include_settings": "yes"})

    def test_int_fields_reject_bool(self):
        with pytest.raises(ValidationError):
            run_config_from_dict({"window": True})

    def test_non_object_rejected(self):
        with pytest.raises(ValidationError):
            run_config_from_dict(["subset"])
        with pytest.raises(ValidationError):
            run_config_from_dict({"train": "fast"})
