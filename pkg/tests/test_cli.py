import json

import numpy as np
import pytest

from etpa_ml.cli import main
from etpa_ml.dataset import generate_dataset, load_dataset, save_dataset, LevelBand
from etpa_ml.experiment import TABLE_CSV_HEADER
from etpa_ml.neuralnet import init_params, save_model
from etpa_ml.physics import PhotonSource


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data and train run once; later tests reuse the artifacts."""
    base = tmp_path_factory.mktemp("cli")
    data = str(base / "data.csv")
    model = str(base / "model.txt")
    assert main(["gen-data", "--band-low", "835", "--band-high", "845",
                 "--step", "1", "--per-class", "6", "--seed", "3",
                 "--out", data]) == 0
    assert main(["train", "--data", data, "--max-epochs", "25",
                 "--patience", "10", "--seed", "3", "--out", model]) == 0
    return {"dir": base, "data": data, "model": model}


# -------------------------------------------------------------------- plumbing

def test_version_flag_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "etpa-ml 0.1.0" in capsys.readouterr().out


def test_missing_subcommand_is_a_usage_error(capsys):
    assert main([]) == 1
    assert "subcommand" in capsys.readouterr().err


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["synth", "--bogus", "1"]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_required_option_is_a_usage_error(capsys):
    assert main(["synth", "--out", "x.csv"]) == 1
    assert "--levels is required" in capsys.readouterr().err


# ----------------------------------------------------------------------- synth

def test_synth_writes_trace_csv_and_figure(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    assert main(["synth", "--levels", "838,841.5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "tau_fs,p_norm"
    assert len(lines) == 501
    values = [float(line.split(",")[1]) for line in lines[1:]]
    assert max(values) == 1.0
    # 12 significant digits in plain decimal notation
    assert lines[1].split(",")[0] == "-100.000000000"
    assert (tmp_path / "trace.png").stat().st_size > 1000
    assert "wrote" in capsys.readouterr().out


def test_synth_reruns_are_byte_identical(tmp_path):
    out = tmp_path / "trace.csv"
    args = ["synth", "--levels", "840", "--te-fs", "7.16", "--samples", "120",
            "--no-figure", "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first
    assert not (tmp_path / "trace.png").exists()


def test_synth_rejects_mismatched_dipoles(tmp_path, capsys):
    assert main(["synth", "--levels", "838,841", "--dipoles", "1.0",
                 "--out", str(tmp_path / "t.csv")]) == 1
    assert "one value per level" in capsys.readouterr().err
    assert not (tmp_path / "t.csv").exists()


def test_synth_rejects_unparseable_levels(tmp_path, capsys):
    assert main(["synth", "--levels", "838;841",
                 "--out", str(tmp_path / "t.csv")]) == 1
    assert "comma-separated" in capsys.readouterr().err


# -------------------------------------------------------------------- gen-data

def test_gen_data_output_loads_back(workspace):
    data = load_dataset(workspace["data"])
    assert data.n_records == 24
    assert data.n_features == 500
    assert data.split_assignment is not None
    assert data.scaling is not None
    assert data.generator_config["seed"] == 3


def test_gen_data_is_deterministic(tmp_path):
    out = tmp_path / "d.csv"
    args = ["gen-data", "--band-low", "835", "--band-high", "845",
            "--step", "1", "--per-class", "6", "--seed", "3",
            "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    meta_first = (tmp_path / "d.csv.meta.json").read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first
    assert (tmp_path / "d.csv.meta.json").read_bytes() == meta_first


def test_gen_data_rejects_misaligned_grid(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert main(["gen-data", "--band-low", "835", "--band-high", "845",
                 "--step", "0.3", "--per-class", "6", "--out", str(out)]) == 1
    assert "misaligned" in capsys.readouterr().err
    assert not out.exists()


# ------------------------------------------------------------------ train, eval

def test_train_records_metadata(workspace):
    from etpa_ml.neuralnet import load_model
    params, metadata = load_model(workspace["model"])
    assert params.input_dim == 500 and params.output_dim == 4
    assert metadata["stop_reason"] in ("validation_stall", "max_epochs",
                                       "gradient_vanished")
    assert metadata["source_data"] == "data.csv"
    assert 0.0 <= float(metadata["test_accuracy"]) <= 1.0


def test_train_on_missing_file_is_a_validation_error(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "m.txt")]) == 1
    assert "error:" in capsys.readouterr().err


def test_eval_reports_accuracy_and_confusion(workspace, capsys):
    assert main(["eval", "--model", workspace["model"],
                 "--data", workspace["data"]]) == 0
    out = capsys.readouterr().out
    assert "test accuracy:" in out
    assert "confusion" in out


def test_eval_rejects_unknown_subset(workspace, capsys):
    assert main(["eval", "--model", workspace["model"],
                 "--data", workspace["data"], "--subset", "holdout"]) == 1
    assert "--subset" in capsys.readouterr().err


def test_eval_requires_a_split(tmp_path, capsys):
    band = LevelBand(835.0, 845.0, 1.0)
    source = PhotonSource(lambda_s0=810.0, lambda_i0=810.0,
                          entanglement_time=63.0)
    raw = generate_dataset(band, source, per_class=6, seed=1)
    data_path = str(tmp_path / "raw.csv")
    save_dataset(raw, data_path)
    model_path = str(tmp_path / "m.txt")
    save_model(init_params(5, 500, 4, np.random.default_rng(0)), model_path)
    assert main(["eval", "--model", model_path, "--data", data_path]) == 1
    assert "no train/validation/test split" in capsys.readouterr().err


# ---------------------------------------------------------------------- config

def test_config_file_fills_in_options_and_flags_win(tmp_path):
    config = tmp_path / "opts.json"
    config.write_text(json.dumps({
        "levels": "838,841", "samples": 40, "no-figure": True,
        "out": str(tmp_path / "a.csv")}))
    assert main(["synth", "--config", str(config)]) == 0
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 41
    assert not (tmp_path / "a.png").exists()
    assert main(["synth", "--config", str(config), "--samples", "60",
                 "--out", str(tmp_path / "b.csv")]) == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 61


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / "opts.json"
    config.write_text(json.dumps({"levels": "838", "voltage": 2}))
    assert main(["synth", "--config", str(config),
                 "--out", str(tmp_path / "t.csv")]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_config_file_type_errors(tmp_path, capsys):
    config = tmp_path / "opts.json"
    config.write_text(json.dumps(["not", "an", "object"]))
    assert main(["synth", "--config", str(config), "--levels", "838",
                 "--out", str(tmp_path / "t.csv")]) == 1
    config.write_text(json.dumps({"samples": "forty"}))
    assert main(["synth", "--config", str(config), "--levels", "838",
                 "--out", str(tmp_path / "t.csv")]) == 1
    err = capsys.readouterr().err
    assert "must be an integer" in err


# ----------------------------------------------------------------------- table

def test_table_writes_csv_figure_and_replicates(tmp_path, capsys):
    out = tmp_path / "table.csv"
    assert main(["table", "--te-fs", "63", "--replicates", "2",
                 "--per-class", "6", "--max-epochs", "15", "--patience", "6",
                 "--threads", "1", "--dump-replicates",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == TABLE_CSV_HEADER
    assert len(lines) == 13
    assert all(line.split(",")[3] == "63" for line in lines[1:])
    replicate_lines = (tmp_path / "table_replicates.csv").read_text().splitlines()
    assert len(replicate_lines) == 25
    assert (tmp_path / "table.png").stat().st_size > 1000
    assert "wrote 12 rows" in capsys.readouterr().out


def test_table_rejects_bad_entanglement_time(tmp_path, capsys):
    assert main(["table", "--te-fs", "-5", "--replicates", "2",
                 "--per-class", "6", "--out", str(tmp_path / "t.csv")]) == 1
    assert "entanglement_time" in capsys.readouterr().err


# ----------------------------------------------------------------------- check

def test_check_passes_and_prints_per_item_lines(capsys):
    assert main(["check", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 20
    assert "FAIL" not in out
    assert "all checks passed" in out
