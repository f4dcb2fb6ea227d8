"""Command-line surface: generate, train, predict, evaluate, sweep, flowview.

Every option can also be supplied through ``--config FILE``, a flat
``key=value`` text file whose keys are the long flag names with dashes
replaced by underscores.  Precedence is flags, then config file, then
defaults; config keys not used by the current command are ignored.  All
output files embed the resolved configuration, either as a ``config``
field (structured documents) or as leading ``# key=value`` comment lines
(CSV), and contain no timestamps, so equal seeds give equal bytes.

Exit codes: 0 success, 2 usage or input error, 3 numerical divergence.
"""

import argparse
import sys
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import datasets as ds
from . import pipeline as pl
from .flow import FlowDivergenceError
from .objective import LabeledSet
from .optim import TRACE_FIELDS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3

RHO_GRID = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0)
TIMESTEP_GRID = (1, 2, 4, 10, 20, 40, 100)


class CliError(Exception):
    """Usage or input problem; maps to exit code 2."""


# ---------------------------------------------------------------------------
# option handling


def _int(s):
    return int(str(s))


def _float(s):
    return float(str(s))


def _onoff(s):
    table = {"on": True, "off": False}
    if str(s) not in table:
        raise ValueError("expected 'on' or 'off'")
    return table[str(s)]


def _shape(s):
    parts = str(s).lower().split("x")
    if len(parts) != 2:
        raise ValueError("expected HxW, e.g. 4x4")
    return (int(parts[0]), int(parts[1]))


def _float_list(s):
    return tuple(float(tok) for tok in str(s).split(",") if tok.strip())


def _int_list(s):
    return tuple(int(tok) for tok in str(s).split(",") if tok.strip())


@dataclass(frozen=True)
class Opt:
    flag: str
    parse: object = str
    default: object = None
    required: bool = False
    help: str = ""
    choices: tuple = None

    @property
    def key(self):
        return self.flag.lstrip("-").replace("-", "_")

    @property
    def dest(self):
        # "lambda" is a Python keyword, so argparse needs another name
        return "lam" if self.key == "lambda" else self.key


def _add_options(sub, options):
    for opt in options:
        sub.add_argument(opt.flag, dest=opt.dest, default=None, type=str,
                         choices=opt.choices, help=opt.help)


def _read_config(path):
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}")
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{ln}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _resolve(args, options):
    """Merge flags, config file, and defaults into one plain dict."""
    cfg = _read_config(args.config) if args.config else {}
    out = {}
    for opt in options:
        raw = getattr(args, opt.dest)
        if raw is None:
            raw = cfg.get(opt.key)
        if raw is None:
            out[opt.key] = opt.default
            continue
        if opt.choices and str(raw) not in opt.choices:
            raise CliError(f"--{opt.key}: expected one of {opt.choices}")
        try:
            out[opt.key] = opt.parse(raw)
        except ValueError as exc:
            raise CliError(f"--{opt.key}: {exc}")
    for opt in options:
        if opt.required and out[opt.key] is None:
            raise CliError(f"missing required option {opt.flag}")
    return out


def _config_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return value


def _config_lines(resolved):
    return [f"# {k}={_config_value(v)}" for k, v in resolved.items()]


def _fmt(x):
    return repr(float(x))


def _write_table_csv(path, resolved, header, rows):
    lines = _config_lines(resolved)
    lines.append(",".join(header))
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _aligned_table(header, rows):
    widths = [max(len(h), max((len(r[i]) for r in rows), default=0))
              for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        out.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(out)


def _load_labeled_csv(path, what):
    try:
        data = ds.read_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read {what} file: {exc}")
    except ValueError as exc:
        raise CliError(f"{what} file {path}: {exc}")
    return data


def _load_model(path):
    try:
        return pl.load_model(path)
    except OSError as exc:
        raise CliError(f"cannot read model file: {exc}")
    except (KeyError, ValueError) as exc:
        raise CliError(f"model file {path}: {exc}")


def _progress_printer(prefix=""):
    def cb(record):
        print(f"{prefix}iter {record.iteration} "
              f"energy {record.energy:.8g} sigma2 {record.sigma2:.6g} "
              f"train_error {record.train_error:.6g}", file=sys.stderr)
    return cb


# ---------------------------------------------------------------------------
# generate

GENERATE_OPTIONS = (
    Opt("--dataset", str, required=True,
        help="family: tori, spherical_layers, rbf, mog, curve_segments, "
             "xor, segment_lengths, segment_pairs"),
    Opt("--dim", _int, help="ambient dimension (family default if omitted)"),
    Opt("--n-train-per-class", _int, 100),
    Opt("--n-test-per-class", _int, 2000),
    Opt("--seed", _int, 0),
    Opt("--out-dir", str, required=True),
)


def cmd_generate(args):
    resolved = _resolve(args, GENERATE_OPTIONS)
    try:
        spec = ds.DatasetSpec(resolved["dataset"],
                              resolved["n_train_per_class"],
                              resolved["seed"], dim=resolved["dim"])
        train_set, test_set = ds.make_split(
            spec, n_test_per_class=resolved["n_test_per_class"])
    except ValueError as exc:
        raise CliError(str(exc))
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ds.write_csv(out_dir / "train.csv", train_set)
    ds.write_csv(out_dir / "test.csv", test_set)
    doc = {"schema": "diffeoflow-dataset-v1", "config": resolved,
           "dataset": spec.to_dict(),
           "files": {"train": "train.csv", "test": "test.csv"},
           "rows": {"train": len(train_set), "test": len(test_set)}}
    pl.write_json(out_dir / "provenance.json", doc)
    print(f"wrote {out_dir / 'train.csv'} ({len(train_set)} rows)")
    print(f"wrote {out_dir / 'test.csv'} ({len(test_set)} rows)")
    print(f"wrote {out_dir / 'provenance.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

TRAIN_OPTIONS = (
    Opt("--train", str, required=True, help="training CSV"),
    Opt("--kernel", str, "matern3", choices=("matern3", "gaussian", "graph")),
    Opt("--rho", _float, help="kernel scale (default: auto)"),
    Opt("--timesteps", _int, 10),
    Opt("--lambda", _float, 1.0),
    Opt("--delta", _float, 0.005),
    Opt("--extra-dims", _int, help="dummy coordinates (default: classes-1)"),
    Opt("--affine", _onoff, True, choices=("on", "off")),
    Opt("--max-iter", _int, 2000),
    Opt("--normalize", _onoff, False, choices=("on", "off")),
    Opt("--graph-shape", _shape, help="grid HxW for the graph kernel"),
    Opt("--graph-radius", _int, 1),
    Opt("--seed", _int, 0),
    Opt("--dataset-id", str, help="label stored in the model provenance"),
    Opt("--arrays", str, "inline", choices=("inline", "blob")),
    Opt("--out", str, required=True, help="model file to write"),
    Opt("--trace", str, help="trace CSV (default: alongside the model)"),
)


def _train_config(resolved, progress):
    return pl.TrainConfig(
        kernel=resolved["kernel"], rho=resolved["rho"],
        timesteps=resolved["timesteps"], lam=resolved["lambda"],
        delta=resolved["delta"], extra_dims=resolved["extra_dims"],
        affine=resolved["affine"], max_iter=resolved["max_iter"],
        seed=resolved["seed"], normalize=resolved["normalize"],
        graph_shape=resolved["graph_shape"],
        graph_radius=resolved["graph_radius"],
        dataset_id=resolved["dataset_id"], progress=progress)


def _write_trace(path, resolved, trace):
    rows = [tuple(_fmt(v) if i else str(int(v)) for i, v in
                  enumerate(record.row())) for record in trace]
    _write_table_csv(path, resolved, TRACE_FIELDS, rows)


def cmd_train(args):
    resolved = _resolve(args, TRAIN_OPTIONS)
    if resolved["dataset_id"] is None:
        resolved["dataset_id"] = Path(resolved["train"]).stem
    data = _load_labeled_csv(resolved["train"], "training")
    try:
        artifact, trace = pl.train(data, _train_config(
            resolved, _progress_printer()))
    except ValueError as exc:
        raise CliError(str(exc))
    artifact.provenance["config"] = {k: _config_value(v)
                                     for k, v in resolved.items()}
    out = Path(resolved["out"])
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    pl.save_model(out, artifact, arrays=resolved["arrays"])
    trace_path = resolved["trace"] or out.parent / (out.stem + ".trace.csv")
    _write_trace(trace_path, resolved, trace)
    print(f"wrote {out}")
    print(f"wrote {trace_path}")
    print(f"train_error {_fmt(artifact.train_error)} "
          f"iterations {trace[-1].iteration} "
          f"sigma2 {_fmt(artifact.hyper.sigma2)} "
          f"rho {_fmt(artifact.kernel.rho)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict

PREDICT_OPTIONS = (
    Opt("--model", str, required=True),
    Opt("--data", str, required=True, help="query CSV (labels ignored)"),
    Opt("--out", str, required=True, help="predictions CSV"),
)


def cmd_predict(args):
    resolved = _resolve(args, PREDICT_OPTIONS)
    artifact = _load_model(resolved["model"])
    data = _load_labeled_csv(resolved["data"], "query")
    try:
        labels, probs = pl.predict(artifact, data.points)
    except ValueError as exc:
        raise CliError(str(exc))
    header = ["predicted"] + [f"p{c}" for c in range(artifact.n_classes)]
    rows = [[str(int(lab))] + [_fmt(p) for p in prow]
            for lab, prow in zip(labels, probs)]
    _write_table_csv(resolved["out"], resolved, header, rows)
    print(f"wrote {resolved['out']} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate

EVALUATE_OPTIONS = (
    Opt("--model", str, required=True),
    Opt("--test", str, required=True),
    Opt("--baselines", str, "logreg,knn"),
    Opt("--out", str, help="also write the table as CSV"),
)


def _evaluate_table(artifact, test, baselines):
    raw_train = LabeledSet(artifact.training_inputs(), artifact.labels)
    final_train = LabeledSet(artifact.z[-1], artifact.labels)
    transformed_test = pl.transform(artifact, test.points)
    dataset = str(artifact.provenance.get("dataset_id", ""))
    header, row = ["dataset"], [dataset]
    if "logreg" in baselines:
        theta = bl.logistic_fit(raw_train, lam=1.0)
        header.append("raw_logreg")
        row.append(_fmt(bl.evaluate(theta, test).error))
    if "knn" in baselines:
        header.append("raw_knn")
        row.append(_fmt(bl.evaluate(
            bl.knn_predict(raw_train, test.points), test).error))
    if "logreg" in baselines:
        header.append("transformed_logreg")
        row.append(_fmt(bl.evaluate(artifact, test).error))
    if "knn" in baselines:
        header.append("transformed_knn")
        row.append(_fmt(bl.evaluate(
            bl.knn_predict(final_train, transformed_test), test).error))
    return header, row


def cmd_evaluate(args):
    resolved = _resolve(args, EVALUATE_OPTIONS)
    baselines = {tok.strip() for tok in resolved["baselines"].split(",")}
    unknown = baselines - {"logreg", "knn"}
    if unknown or not baselines:
        raise CliError("--baselines accepts a subset of: logreg,knn")
    artifact = _load_model(resolved["model"])
    test = _load_labeled_csv(resolved["test"], "test")
    if len(test) == 0:
        raise CliError("test set is empty")
    try:
        header, row = _evaluate_table(artifact, test, baselines)
    except ValueError as exc:
        raise CliError(str(exc))
    print(_aligned_table(header, [row]))
    if resolved["out"]:
        _write_table_csv(resolved["out"], resolved, header, [row])
        print(f"wrote {resolved['out']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

SWEEP_OPTIONS = (
    Opt("--train", str, required=True),
    Opt("--test", str, required=True),
    Opt("--param", str, required=True, choices=("rho", "timesteps")),
    Opt("--grid", _float_list,
        help="comma list: rho multipliers or timestep counts"),
    Opt("--kernel", str, "matern3", choices=("matern3", "gaussian", "graph")),
    Opt("--rho", _float, help="fixed scale for timestep sweeps"),
    Opt("--timesteps", _int, 10, help="fixed T for rho sweeps"),
    Opt("--lambda", _float, 1.0),
    Opt("--delta", _float, 0.005),
    Opt("--extra-dims", _int),
    Opt("--affine", _onoff, True, choices=("on", "off")),
    Opt("--max-iter", _int, 2000),
    Opt("--normalize", _onoff, False, choices=("on", "off")),
    Opt("--graph-shape", _shape),
    Opt("--graph-radius", _int, 1),
    Opt("--seed", _int, 0),
    Opt("--dataset-id", str),
    Opt("--out-dir", str, required=True),
)


def _sweep_cells(resolved, train_data):
    param = resolved["param"]
    grid = resolved["grid"]
    if param == "rho":
        if resolved["rho"] is not None:
            raise CliError("a rho sweep sets --rho itself; drop the flag")
        grid = grid or RHO_GRID
        base_cfg = _train_config(resolved, None)
        rho0 = pl.auto_scale(train_data, base_cfg)
        return [(f"rho={mult:g}*rho0", {"rho": mult * rho0}, mult)
                for mult in grid], rho0
    grid = grid or TIMESTEP_GRID
    cells = []
    for v in grid:
        if v != int(v) or v < 1:
            raise CliError(f"--grid: {v:g} is not a positive timestep count")
        cells.append((f"T={int(v)}", {"timesteps": int(v)}, int(v)))
    return cells, None


def cmd_sweep(args):
    resolved = _resolve(args, SWEEP_OPTIONS)
    if resolved["dataset_id"] is None:
        resolved["dataset_id"] = Path(resolved["train"]).stem
    train_data = _load_labeled_csv(resolved["train"], "training")
    test = _load_labeled_csv(resolved["test"], "test")
    if len(test) == 0:
        raise CliError("test set is empty")
    cells, rho0 = _sweep_cells(resolved, train_data)
    base = {k: _config_value(v) for k, v in resolved.items()
            if k != "grid"}
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    header, row = [], []
    for label, override, value in cells:
        header.append(label)
        cell_path = out_dir / f"cell_{resolved['param']}_{value:g}.json"
        if cell_path.exists():
            doc = pl.read_json(cell_path)
            if doc.get("base") != base:
                raise CliError(f"{cell_path} was computed under a different "
                               "configuration; use a fresh --out-dir")
            row.append(_fmt(doc["error"]))
            print(f"{label}: cached error {doc['error']}", file=sys.stderr)
            continue
        cell_resolved = dict(resolved)
        cell_resolved.update(override)
        cfg = _train_config(cell_resolved, _progress_printer(f"[{label}] "))
        try:
            artifact, trace = pl.train(train_data, cfg)
            err = bl.evaluate(artifact, test).error
        except ValueError as exc:
            raise CliError(str(exc))
        doc = {"schema": "diffeoflow-sweep-cell-v1", "base": base,
               "param": resolved["param"], "value": value,
               "rho0": rho0, "rho": artifact.kernel.rho,
               "error": err, "train_error": artifact.train_error,
               "iterations": trace[-1].iteration}
        pl.write_json(cell_path, doc)
        row.append(_fmt(err))
        print(f"{label}: error {_fmt(err)}", file=sys.stderr)

    _write_table_csv(out_dir / "sweep.csv", resolved, header, [row])
    print(_aligned_table(header, [row]))
    print(f"wrote {out_dir / 'sweep.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# flowview

FLOWVIEW_OPTIONS = (
    Opt("--model", str, required=True),
    Opt("--data", str, help="points to transport (default: training cloud)"),
    Opt("--times", _int_list, help="comma list of timesteps to keep"),
    Opt("--out", str, required=True),
)


def cmd_flowview(args):
    resolved = _resolve(args, FLOWVIEW_OPTIONS)
    artifact = _load_model(resolved["model"])
    data = None
    if resolved["data"] is not None:
        data = _load_labeled_csv(resolved["data"], "query")
    try:
        rows, frame = pl.export_flow_view(artifact, data)
    except ValueError as exc:
        raise CliError(str(exc))
    times = resolved["times"]
    if times is not None:
        horizon = artifact.z.shape[0] - 1
        bad = [t for t in times if not 0 <= t <= horizon]
        if bad:
            raise CliError(f"--times: {bad[0]} outside 0..{horizon}")
        rows = rows[np.isin(rows[:, 0], times)]
    table = [[str(int(r[0])), str(int(r[1])), str(int(r[2])),
              _fmt(r[3]), _fmt(r[4]), _fmt(r[5])] for r in rows]
    augmented = dict(resolved)
    for i, axis in enumerate(frame):
        augmented[f"frame{i}"] = tuple(_fmt(v) for v in axis)
    _write_table_csv(resolved["out"], augmented,
                     ("time", "point", "label", "u", "v", "w"), table)
    print(f"wrote {resolved['out']} ({len(table)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _thread_limit(n):
    if n is None:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        print("warning: threadpoolctl not installed; --threads ignored",
              file=sys.stderr)
        return nullcontext()
    return threadpool_limits(limits=n)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="flat key=value file supplying defaults")
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (default: all cores)")

    parser = argparse.ArgumentParser(
        prog="diffeoflow",
        description="Diffeomorphic transport of labeled point clouds")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options, func in (
            ("generate", GENERATE_OPTIONS, cmd_generate),
            ("train", TRAIN_OPTIONS, cmd_train),
            ("predict", PREDICT_OPTIONS, cmd_predict),
            ("evaluate", EVALUATE_OPTIONS, cmd_evaluate),
            ("sweep", SWEEP_OPTIONS, cmd_sweep),
            ("flowview", FLOWVIEW_OPTIONS, cmd_flowview)):
        p = sub.add_parser(name, parents=[common])
        _add_options(p, options)
        p.set_defaults(func=func, options=options)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FlowDivergenceError as exc:
        print(f"error: flow diverged at step {exc.step}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
