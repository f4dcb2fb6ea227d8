"""Command-line interface tests: flags, config files, outputs, exit codes."""

import json

import numpy as np
import pytest

from diffeoflow import baselines as bl
from diffeoflow import cli
from diffeoflow import datasets as ds
from diffeoflow import pipeline as pl
from diffeoflow.flow import FlowDivergenceError
from diffeoflow.objective import LabeledSet
from diffeoflow.optim import TRACE_FIELDS


def blob_csvs(tmp_path, n_per=8, noise=0.25, seed=2, gap=3.0):
    rng = np.random.default_rng(seed)
    pts = np.vstack([rng.normal(0.0, noise, (2 * n_per, 2))])
    pts[:n_per, 0] -= gap
    pts[n_per:, 0] += gap
    labels = np.repeat([0, 1], n_per)
    train = LabeledSet(pts, labels)
    test_pts = pts + rng.normal(0.0, noise / 4, pts.shape)
    test = LabeledSet(test_pts, labels)
    train_path = tmp_path / "train.csv"
    test_path = tmp_path / "test.csv"
    ds.write_csv(train_path, train)
    ds.write_csv(test_path, test)
    return train_path, test_path


def read_table(path):
    """Parse a CLI CSV into (config dict, header, list of row tuples)."""
    config, header, rows = {}, None, []
    for line in path.read_text().splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition("=")
            config[key] = val
        elif header is None:
            header = line.split(",")
        else:
            rows.append(tuple(line.split(",")))
    return config, header, rows


def train_model(tmp_path, *extra):
    train_path, test_path = blob_csvs(tmp_path)
    model = tmp_path / "model.json"
    rc = cli.main(["train", "--train", str(train_path), "--out", str(model),
                   "--timesteps", "3", "--max-iter", "80", *extra])
    assert rc == 0
    return train_path, test_path, model


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_split_and_provenance(tmp_path):
    out = tmp_path / "data"
    rc = cli.main(["generate", "--dataset", "tori", "--dim", "3",
                   "--n-train-per-class", "5", "--n-test-per-class", "7",
                   "--seed", "4", "--out-dir", str(out)])
    assert rc == 0
    train = ds.read_csv(out / "train.csv")
    test = ds.read_csv(out / "test.csv")
    assert len(train) == 10 and len(test) == 14
    doc = json.loads((out / "provenance.json").read_text())
    assert doc["schema"] == "diffeoflow-dataset-v1"
    assert doc["config"]["seed"] == 4
    assert doc["dataset"]["name"] == "tori"


def test_generate_same_seed_byte_identical(tmp_path):
    args = ["generate", "--dataset", "xor", "--n-train-per-class", "4",
            "--n-test-per-class", "4", "--seed", "1"]
    assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("train.csv", "test.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_generate_unknown_dataset_exits_2(tmp_path, capsys):
    rc = cli.main(["generate", "--dataset", "nosuch",
                   "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_generate_missing_required_flag(tmp_path, capsys):
    assert cli.main(["generate", "--dataset", "tori"]) == 2
    assert "--out-dir" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train


def test_train_writes_model_and_trace(tmp_path):
    train_path, _, model = train_model(tmp_path)
    artifact = pl.load_model(model)
    assert artifact.train_error <= 0.005
    assert artifact.provenance["dataset_id"] == "train"
    assert artifact.provenance["config"]["max_iter"] == 80
    config, header, rows = read_table(tmp_path / "model.trace.csv")
    assert header == list(TRACE_FIELDS)
    assert config["train"] == str(train_path)
    assert rows[0][0] == "0"
    energies = [float(r[1]) for r in rows]
    assert energies[-1] < energies[0]


def test_train_single_timestep(tmp_path):
    *_, model = train_model(tmp_path, "--timesteps", "1")
    artifact = pl.load_model(model)
    assert artifact.hyper.T == 1
    assert artifact.z.shape[0] == 2


def test_train_missing_file_exits_2(tmp_path, capsys):
    rc = cli.main(["train", "--train", str(tmp_path / "absent.csv"),
                   "--out", str(tmp_path / "m.json")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_train_config_file_precedence(tmp_path):
    train_path, _, _ = blob_csvs(tmp_path), None, None
    train_path = tmp_path / "train.csv"
    conf = tmp_path / "run.conf"
    conf.write_text("timesteps=4\nmax_iter=60\nunused_key=ignored\n")
    model = tmp_path / "m.json"
    rc = cli.main(["train", "--train", str(train_path), "--out", str(model),
                   "--config", str(conf), "--timesteps", "2"])
    assert rc == 0
    artifact = pl.load_model(model)
    assert artifact.hyper.T == 2  # flag beats config
    assert artifact.provenance["config"]["max_iter"] == 60  # config beats default


def test_train_malformed_config_exits_2(tmp_path, capsys):
    blob_csvs(tmp_path)
    conf = tmp_path / "bad.conf"
    conf.write_text("timesteps 4\n")
    rc = cli.main(["train", "--train", str(tmp_path / "train.csv"),
                   "--out", str(tmp_path / "m.json"), "--config", str(conf)])
    assert rc == 2
    assert "key=value" in capsys.readouterr().err


def test_train_bad_numeric_flag_exits_2(tmp_path, capsys):
    blob_csvs(tmp_path)
    rc = cli.main(["train", "--train", str(tmp_path / "train.csv"),
                   "--out", str(tmp_path / "m.json"), "--rho", "wide"])
    assert rc == 2
    assert "--rho" in capsys.readouterr().err


def test_train_reruns_byte_identical(tmp_path):
    train_path, _ = blob_csvs(tmp_path)
    model = tmp_path / "m.json"
    args = ["train", "--train", str(train_path), "--out", str(model),
            "--timesteps", "3", "--max-iter", "40"]
    assert cli.main(args) == 0
    first_model = model.read_bytes()
    first_trace = (tmp_path / "m.trace.csv").read_bytes()
    assert cli.main(args) == 0
    assert model.read_bytes() == first_model
    assert (tmp_path / "m.trace.csv").read_bytes() == first_trace


# ---------------------------------------------------------------------------
# predict


def test_predict_round_trips_with_evaluate(tmp_path):
    _, test_path, model = train_model(tmp_path)
    out = tmp_path / "preds.csv"
    rc = cli.main(["predict", "--model", str(model),
                   "--data", str(test_path), "--out", str(out)])
    assert rc == 0
    _, header, rows = read_table(out)
    assert header == ["predicted", "p0", "p1"]
    test = ds.read_csv(test_path)
    assert len(rows) == len(test)
    predicted = np.array([int(r[0]) for r in rows])
    csv_error = float(np.mean(predicted != test.labels))
    artifact = pl.load_model(model)
    assert csv_error == bl.evaluate(artifact, test).error
    probs = np.array([[float(v) for v in r[1:]] for r in rows])
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_predict_dimension_mismatch_exits_2(tmp_path, capsys):
    *_, model = train_model(tmp_path)
    wide = LabeledSet(np.zeros((3, 5)), np.array([0, 1, 0]))
    ds.write_csv(tmp_path / "wide.csv", wide)
    rc = cli.main(["predict", "--model", str(model),
                   "--data", str(tmp_path / "wide.csv"),
                   "--out", str(tmp_path / "p.csv")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_emits_table(tmp_path, capsys):
    _, test_path, model = train_model(tmp_path)
    out = tmp_path / "eval.csv"
    rc = cli.main(["evaluate", "--model", str(model),
                   "--test", str(test_path), "--out", str(out)])
    assert rc == 0
    config, header, rows = read_table(out)
    assert header == ["dataset", "raw_logreg", "raw_knn",
                      "transformed_logreg", "transformed_knn"]
    assert rows[0][0] == "train"
    errors = [float(v) for v in rows[0][1:]]
    assert all(0.0 <= e <= 1.0 for e in errors)
    text = capsys.readouterr().out
    assert "transformed_logreg" in text
    # the transformed column is the artifact's own prediction error
    artifact = pl.load_model(model)
    test = ds.read_csv(test_path)
    assert errors[2] == bl.evaluate(artifact, test).error


def test_evaluate_baseline_subset(tmp_path, capsys):
    _, test_path, model = train_model(tmp_path)
    capsys.readouterr()  # drop the training output
    rc = cli.main(["evaluate", "--model", str(model), "--test",
                   str(test_path), "--baselines", "knn"])
    assert rc == 0
    header = capsys.readouterr().out.splitlines()[0].split()
    assert header == ["dataset", "raw_knn", "transformed_knn"]


def test_evaluate_empty_test_exits_2(tmp_path, capsys):
    *_, model = train_model(tmp_path)
    empty = tmp_path / "empty.csv"
    empty.write_text("x0,x1,label\n")
    rc = cli.main(["evaluate", "--model", str(model), "--test", str(empty)])
    assert rc == 2
    assert "empty" in capsys.readouterr().err


def test_evaluate_unknown_baseline_exits_2(tmp_path, capsys):
    *_, model = train_model(tmp_path)
    rc = cli.main(["evaluate", "--model", str(model),
                   "--test", str(tmp_path / "test.csv"),
                   "--baselines", "svm"])
    assert rc == 2
    assert "baselines" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# sweep


def sweep_args(tmp_path, out_dir, *extra):
    return ["sweep", "--train", str(tmp_path / "train.csv"),
            "--test", str(tmp_path / "test.csv"),
            "--timesteps", "3", "--max-iter", "40",
            "--out-dir", str(out_dir), *extra]


def test_sweep_timestep_grid_and_cache(tmp_path):
    blob_csvs(tmp_path)
    out_dir = tmp_path / "sweep"
    args = sweep_args(tmp_path, out_dir, "--param", "timesteps",
                      "--grid", "1,2")
    assert cli.main(args) == 0
    _, header, rows = read_table(out_dir / "sweep.csv")
    assert header == ["T=1", "T=2"]
    assert len(rows[0]) == 2
    cells = sorted(out_dir.glob("cell_*.json"))
    assert [c.name for c in cells] == ["cell_timesteps_1.json",
                                       "cell_timesteps_2.json"]
    before = {c: c.stat().st_mtime_ns for c in cells}
    assert cli.main(args) == 0  # resume: nothing recomputed
    assert {c: c.stat().st_mtime_ns for c in cells} == before


def test_sweep_rho_grid_uses_auto_scale(tmp_path):
    blob_csvs(tmp_path)
    out_dir = tmp_path / "rsweep"
    rc = cli.main(sweep_args(tmp_path, out_dir, "--param", "rho",
                             "--grid", "1"))
    assert rc == 0
    _, header, _ = read_table(out_dir / "sweep.csv")
    assert header == ["rho=1*rho0"]
    cell = json.loads((out_dir / "cell_rho_1.json").read_text())
    data = ds.read_csv(tmp_path / "train.csv")
    rho0 = pl.auto_scale(data, pl.TrainConfig(timesteps=3))
    assert cell["rho0"] == rho0
    assert cell["rho"] == rho0


def test_sweep_config_change_invalidates_cache(tmp_path, capsys):
    blob_csvs(tmp_path)
    out_dir = tmp_path / "sweep"
    base = sweep_args(tmp_path, out_dir, "--param", "timesteps",
                      "--grid", "1")
    assert cli.main(base) == 0
    rc = cli.main(base + ["--lambda", "2.0"])
    assert rc == 2
    assert "different" in capsys.readouterr().err


def test_sweep_rejects_rho_flag_in_rho_sweep(tmp_path, capsys):
    blob_csvs(tmp_path)
    rc = cli.main(sweep_args(tmp_path, tmp_path / "s", "--param", "rho",
                             "--grid", "1", "--rho", "0.7"))
    assert rc == 2
    assert "rho" in capsys.readouterr().err


def test_sweep_rejects_fractional_timesteps(tmp_path, capsys):
    blob_csvs(tmp_path)
    rc = cli.main(sweep_args(tmp_path, tmp_path / "s", "--param",
                             "timesteps", "--grid", "1.5"))
    assert rc == 2
    assert "timestep" in capsys.readouterr().err


def test_sweep_default_grids():
    assert cli.RHO_GRID == (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0)
    assert cli.TIMESTEP_GRID == (1, 2, 4, 10, 20, 40, 100)


# ---------------------------------------------------------------------------
# flowview


def test_flowview_filters_times_and_embeds_frame(tmp_path):
    *_, model = train_model(tmp_path)
    out = tmp_path / "view.csv"
    rc = cli.main(["flowview", "--model", str(model),
                   "--times", "0,3", "--out", str(out)])
    assert rc == 0
    config, header, rows = read_table(out)
    assert header == ["time", "point", "label", "u", "v", "w"]
    times = {r[0] for r in rows}
    assert times == {"0", "3"}
    assert len(rows) == 2 * 16
    assert "frame0" in config and "frame2" in config
    frame = np.array([[float(v) for v in config[f"frame{i}"].split(",")]
                      for i in range(3)])
    assert np.max(np.abs(frame @ frame.T - np.eye(3))) < 1e-10


def test_flowview_external_data(tmp_path):
    train_path, test_path, model = train_model(tmp_path)
    out = tmp_path / "view.csv"
    rc = cli.main(["flowview", "--model", str(model),
                   "--data", str(test_path), "--out", str(out)])
    assert rc == 0
    _, _, rows = read_table(out)
    assert len(rows) == 4 * 16  # T+1 times, 16 test points


def test_flowview_bad_time_exits_2(tmp_path, capsys):
    *_, model = train_model(tmp_path)
    rc = cli.main(["flowview", "--model", str(model), "--times", "9",
                   "--out", str(tmp_path / "v.csv")])
    assert rc == 2
    assert "--times" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# exit codes and global flags


def test_divergence_maps_to_exit_3(tmp_path, monkeypatch, capsys):
    blob_csvs(tmp_path)

    def boom(data, config=None):
        raise FlowDivergenceError(5)

    monkeypatch.setattr(pl, "train", boom)
    rc = cli.main(["train", "--train", str(tmp_path / "train.csv"),
                   "--out", str(tmp_path / "m.json")])
    assert rc == 3
    assert "diverged" in capsys.readouterr().err


def test_threads_flag_smoke(tmp_path):
    train_model(tmp_path, "--threads", "1")


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["transmogrify"])
    assert exc.value.code == 2
