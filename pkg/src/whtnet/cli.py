"""``whtnet`` command-line front end.

Subcommands: ``transform``, ``paramcount``, ``gradcheck``, ``train`` and
``bench``. Every command exits 0 on success, 1 when a check fails and 2 with a
one-line ``whtnet: error: ...`` diagnostic on bad input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .bench import KINDS, MIN_REPS, MIN_WARMUP, bench
from .config import load_config, parse_config
from .errors import ConfigError, WhtError
from .gradcheck import SCOPES, run_scope
from .layers import param_count as layer_param_count
from .nn import checkpoint
from .nn.model import Model, model_from_spec
from .nn.modules import WHT, build_layer
from .nn.train import train
from .transform import Normalization, Ordering, WalshSpec, fwht, log2_exact

SCHEMA_VERSION = 1
METRIC_FIELDS = ["schema_version", "epoch", "lr", "loss", "train_accuracy", "test_accuracy",
                 "seconds"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- output helpers -----------------------------------------------------------


def emit(rows: list[dict], fmt: str, out=None) -> None:
    """Write ``rows`` as an aligned table, CSV, or one JSON object per line."""
    out = out or sys.stdout
    if not rows:
        return
    if fmt == "json-lines":
        for r in rows:
            out.write(json.dumps(r, sort_keys=True) + "\n")
        return
    keys = list(rows[0])
    if fmt == "csv":
        w = csv.DictWriter(out, fieldnames=keys, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows({k: _cell(r.get(k)) for k in keys} for r in rows)
        return
    cells = [[_cell(r.get(k)) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    out.write("  ".join(k.ljust(wd) for k, wd in zip(keys, widths)).rstrip() + "\n")
    for c in cells:
        out.write("  ".join(v.ljust(wd) for v, wd in zip(c, widths)).rstrip() + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "x".join(str(e) for e in v)
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else str(v)


# -- transform ----------------------------------------------------------------


def read_vector(path: str) -> np.ndarray:
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    try:
        vec = np.array([float(tok) for tok in text.split()])
    except ValueError as exc:
        raise ConfigError(f"{path}: unparsable number ({exc})") from None
    if vec.size == 0:
        raise ConfigError(f"{path}: no numbers found")
    return vec


INVERSE_OF = {Normalization.NONE: Normalization.INVERSE,
              Normalization.INVERSE: Normalization.NONE,
              Normalization.ORTHONORMAL: Normalization.ORTHONORMAL}


def cmd_transform(args) -> int:
    vec = read_vector(args.input)
    k = log2_exact(vec.size)
    if args.k is not None and args.k != k:
        raise ConfigError(f"input has {vec.size} values but -k {args.k} needs {1 << args.k}")
    spec = WalshSpec(k, Ordering(args.ordering), Normalization(args.normalization))
    out = fwht(vec, -1, spec.ordering, spec.normalization)
    if args.round_trip:
        out = fwht(out, -1, spec.ordering, INVERSE_OF[spec.normalization])
    text = " ".join(repr(float(v)) for v in out) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -- paramcount ---------------------------------------------------------------


def _read_doc(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({str(exc).splitlines()[0]})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _model_doc(doc: dict, base: Path) -> dict:
    """The model spec inside an experiment config, or the document itself."""
    if "model" in doc or "model_file" in doc:
        return parse_config(doc, base).model
    return doc


def paramcount_report(doc: dict, base: Path = Path(".")) -> dict:
    """Per-layer and total counts for a model spec, or a single ``layer`` entry."""
    if "layer" in doc:
        if "input_shape" not in doc:
            raise ConfigError("single-layer paramcount needs input_shape")
        layer = build_layer(doc["layer"])
        layer.build(tuple(doc["input_shape"]), np.random.default_rng(0))
        row = {"index": 0, "type": layer.type_name, "output_shape": list(layer.out_shape),
               "trainable": layer.trainable_count(),
               "non_trainable": layer.non_trainable_count()}
        if isinstance(layer, WHT):
            row["replaces"] = layer.param_count()[1]
        return {"layers": [row], "trainable": row["trainable"],
                "non_trainable": row["non_trainable"]}
    model = model_from_spec(_model_doc(doc, base))
    return {"layers": model.summary(), "trainable": model.trainable_count(),
            "non_trainable": model.non_trainable_count()}


def compare_golden(report: dict, golden: dict) -> list[str]:
    """Mismatches between ``report`` and every key present in ``golden``."""
    problems = []
    for key, want in golden.items():
        got = report.get(key)
        if got != want:
            problems.append(f"{key}: expected {json.dumps(want)}, got {json.dumps(got)}")
    return problems


def cmd_paramcount(args) -> int:
    if not args.config:
        raise ConfigError("paramcount needs --config")
    report = paramcount_report(_read_doc(args.config), Path(args.config).parent)
    rows = report["layers"] + [{"index": "total", "type": "", "output_shape": "",
                                "trainable": report["trainable"],
                                "non_trainable": report["non_trainable"]}]
    emit(rows, args.format)
    if args.golden:
        golden = json.loads(Path(args.golden).read_text())
        problems = compare_golden(report, golden)
        if problems:
            print(f"whtnet: golden mismatch: {'; '.join(problems)}", file=sys.stderr)
            return 1
        print(f"golden match: {args.golden}", file=sys.stderr)
    return 0


# -- gradcheck ----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = run_scope(args.scope, 0 if args.seed is None else args.seed)
    emit([{"suite": r.name, "max_rel_err": r.max_rel_err, "tol": r.tol, "points": r.points,
           "status": "pass" if r.passed else "FAIL"} for r in results], args.format)
    return 0 if all(r.passed for r in results) else 1


# -- train --------------------------------------------------------------------


def wht_reduction(model: Model) -> dict | None:
    """Transform-layer parameters against the convolutions they stand in for."""
    layers = model.wht_layers()
    if not layers:
        return None
    own = sum(layer_param_count(w.layer_config)[0] for w in layers)
    replaced = sum(layer_param_count(w.layer_config)[1] for w in layers)
    return {"wht_params": own, "replaced_params": replaced,
            "reduction_ratio": 1 - own / replaced}


def write_metrics(path: Path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for e in report.epochs:
            w.writerow({"schema_version": SCHEMA_VERSION, "epoch": e.epoch, "lr": repr(e.lr),
                        "loss": repr(e.loss), "train_accuracy": repr(e.train_accuracy),
                        "test_accuracy": repr(e.test_accuracy), "seconds": f"{e.seconds:.3f}"})


def cmd_train(args) -> int:
    if not args.config:
        raise ConfigError("train needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = cfg.train.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    out = Path(args.out) if args.out else cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    if cfg.dataset is None:
        raise ConfigError("train needs a dataset section")
    data = cfg.dataset.load()
    model = model_from_spec(cfg.model, seed=cfg.seed)
    log = (lambda line: print(line, file=sys.stderr)) if not args.quiet else None
    with threadpool_limits(limits=cfg.threads):
        report = train(model, data, cfg.train, log=log)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_dict()
    checkpoint.save(out / "model.ckpt", model.state(), {"experiment": echo,
                                                         "model": model.spec()})
    write_metrics(out / "metrics.csv", report)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "final_test_accuracy": report.final_test_accuracy,
        "final_train_loss": report.epochs[-1].loss,
        "epochs": len(report.epochs),
        "steps": report.steps,
        "trainable_params": report.trainable_params,
        "non_trainable_params": report.non_trainable_params,
        "total_params": report.trainable_params + report.non_trainable_params,
        "wall_clock_seconds": report.wall_clock_seconds,
        "param_reduction": wht_reduction(model),
        "config": echo,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    row = {k: v for k, v in summary.items() if k != "config"}
    emit([row], args.format)
    return 0


# -- bench --------------------------------------------------------------------


def cmd_bench(args) -> int:
    kinds = args.kind or ["fwht2d", "conv3x3", "squeeze_excite"]
    with threadpool_limits(limits=args.threads or 1):
        results = [bench(k, args.dims, args.repetitions, args.warmup, args.seed or 0)
                   for k in kinds]
    rows = [r.to_dict() for r in results]
    if args.format == "human":
        rows = [{"kind": r.kind, "dims": r.dims, "median_ms": r.median_seconds * 1e3,
                 "adds": r.adds, "muls": r.muls, "params": r.params,
                 "peak_MiB": r.peak_bytes / 2**20} for r in results]
    emit(rows, args.format)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.jsonl", "w") as fh:
            emit([r.to_dict() for r in results], "json-lines", fh)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment or model config (YAML)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="BLAS thread count (default 1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=["human", "csv", "json-lines"], default="human")

    p = _Parser(prog="whtnet", description="Walsh-Hadamard transform layers for CNNs.")
    p.add_argument("--version", action="version", version=f"whtnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("transform", parents=[common], help="transform a vector from a file")
    t.add_argument("input", help="whitespace-separated reals, '-' for stdin")
    t.add_argument("-k", type=int, help="expected order (length 2**k)")
    t.add_argument("--ordering", choices=[o.value for o in Ordering], default="sequency")
    t.add_argument("--normalization", choices=[n.value for n in Normalization],
                   default="orthonormal")
    t.add_argument("--round-trip", action="store_true",
                   help="follow with the inverse transform")
    t.add_argument("-o", "--output", help="write here instead of stdout")
    t.set_defaults(func=cmd_transform)

    c = sub.add_parser("paramcount", parents=[common], help="per-layer parameter report")
    c.add_argument("--golden", help="JSON file of expected report fields")
    c.set_defaults(func=cmd_paramcount)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    g.add_argument("--scope", choices=SCOPES + ("layers", "all"), default="all")
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("train", parents=[common], help="train from an experiment config")
    r.add_argument("--quiet", action="store_true", help="no per-epoch log on stderr")
    r.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", parents=[common], help="forward-pass microbenchmark")
    b.add_argument("--kind", action="append", choices=KINDS,
                   help="layer kind (repeatable; default fwht2d, conv3x3, squeeze_excite)")
    b.add_argument("--dims", type=int, nargs=4, default=[10, 8, 8, 1024],
                   metavar=("N", "W", "H", "C"))
    b.add_argument("--repetitions", type=int, default=MIN_REPS)
    b.add_argument("--warmup", type=int, default=MIN_WARMUP)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command in ("train", "bench"):
            return args.func(args)
        with threadpool_limits(limits=args.threads or 1):
            return args.func(args)
    except (UsageError, WhtError, ValueError, OSError, KeyError) as exc:
        msg = str(exc).replace("\n", " ") or type(exc).__name__
        print(f"whtnet: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
