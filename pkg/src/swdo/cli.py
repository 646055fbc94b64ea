"""Command-line entry point: ``swdo {bench,dwt,train,tune,stats,reproduce}``.

Options can also come from a flat ``key=value`` file passed with
``--config``; flags on the command line win. Keys are the long option names
with dashes turned into underscores (``algo=mgto``, ``pop=6``). Every run
writes ``config.txt`` next to its outputs so it can be replayed.

Exit codes: 0 success, 1 usage error, 2 data error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ACCEPTANCE = 0, 1, 2, 3

logger = logging.getLogger("swdo")


class UsageError(Exception):
    pass


class DataFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    """Shortest round-trip text for a float; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _default_seed() -> int:
    raw = os.environ.get("SWDO_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SWDO_SEED must be an integer, got {raw!r}") from None


def read_config(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_config(path: Path, values: dict) -> None:
    lines = [f"{k}={fmt(v) if isinstance(v, (int, float, np.number)) else v}"
             for k, v in sorted(values.items()) if v is not None]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- shared pieces ---------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (int, float, np.number)) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _resolved(args) -> dict:
    skip = {"func", "config", "json"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _finish(args, out: Path, report: dict, started: float, artifacts: list[str]) -> None:
    report["config"] = _resolved(args)
    report["artifacts"] = sorted(artifacts + ["report.json", "config.txt"])
    _write_json(out / "report.json", report)
    write_config(out / "config.txt", {k: v for k, v in _resolved(args).items()
                                      if k not in ("command", "verbose") and (not isinstance(v, bool) or v)})
    # wall-clock lives apart from everything that is compared between runs
    _write_json(out / "timing.json", {"wall_clock_seconds": time.perf_counter() - started})


def _dataset(args):
    from .dataset import DataError, generate_synthetic, load_manifest
    if args.manifest:
        return load_manifest(args.manifest, size=args.size)
    if args.synthetic < 2:
        raise DataError("--synthetic needs at least 2 images")
    return generate_synthetic(args.synthetic, args.data_seed, args.size)


def _space(args):
    from .tuner import HyperSpace
    return HyperSpace.desk() if args.bounds == "desk" else HyperSpace.published()


def _model_config(args):
    from .minimodel import ModelConfig
    base = _space(args).midpoint().to_dict()
    for key in base:
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    try:
        cfg = ModelConfig(**base)
        if args.bounds == "published":
            cfg.check_bounds()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _eval_metrics(result, val_batch) -> dict:
    from .evalstats import confusion, metrics
    from .minimodel import forward
    probs = forward(None, result.weights, val_batch)
    counts = confusion(probs, val_batch.labels)
    out = metrics(counts)
    out.update(tp=counts.tp, tn=counts.tn, fp=counts.fp, fn=counts.fn)
    return out


# --- commands ------------------------------------------------------------------------

def cmd_bench(args) -> int:
    from .core import BENCHMARKS, Budget, benchmark, benchmark_space
    from .optimizers import OPTIMIZERS, run_optimizer
    if args.algo not in OPTIMIZERS:
        raise UsageError(f"unknown algorithm {args.algo!r}; choose from {', '.join(sorted(OPTIMIZERS))}")
    if args.fn not in BENCHMARKS:
        raise UsageError(f"unknown function {args.fn!r}; choose from {', '.join(sorted(BENCHMARKS))}")
    started = time.perf_counter()
    try:
        space = benchmark_space(args.fn, args.dims)
        budget = Budget(args.pop, args.iters)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    name = args.fn
    res = run_optimizer(args.algo, lambda x: benchmark(name, x), space, budget, args.seed, args.workers)
    out = _out_dir(args)
    _write_csv(out / "history.csv", ("iteration", "best", "mean"),
               [(i, h.best, h.mean) for i, h in enumerate(res.history, 1)])
    _finish(args, out, {"command": "bench", "seed": args.seed, "result": res.to_dict()}, started, ["history.csv"])
    print(f"{args.algo} on {args.fn}: best {fmt(res.best_fitness)} after {res.evaluations} evaluations")
    return EXIT_OK


def cmd_dwt(args) -> int:
    from .dataset import read_netpbm, write_netpbm
    from .wavelet import dwt2_forward
    started = time.perf_counter()
    raw = read_netpbm(args.input)
    plane = raw.astype(float).mean(axis=0) if raw.shape[0] > 1 else raw[0].astype(float)
    plane = plane / 255.0
    bands = dwt2_forward(plane)
    out = _out_dir(args)
    scales = {}
    for name, band in zip(("ll", "lh", "hl", "hh"), bands.bands()):
        lo, hi = float(band.min()), float(band.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        pix = np.clip(np.rint((band - lo) * scale), 0, 255).astype(np.uint8)
        write_netpbm(out / f"{name}.pgm", pix)
        # pixel = round((coefficient - offset) * scale)
        scales[name] = {"offset": lo, "scale": scale}
    energies = bands.energies()
    payload = {"energies": energies, "total": sum(energies.values()),
               "input_energy": float(np.sum(plane * plane)), "rescale": scales, "shape": list(plane.shape)}
    _write_json(out / "energies.json", payload)
    _finish(args, out, {"command": "dwt", **payload}, started,
            ["ll.pgm", "lh.pgm", "hl.pgm", "hh.pgm", "energies.json"])
    print(" ".join(f"{k}={fmt(v)}" for k, v in energies.items()))
    return EXIT_OK


METRIC_COLUMNS = ("fold", "accuracy", "precision", "recall", "f_measure", "tp", "tn", "fp", "fn",
                  "best_epoch", "val_accuracy")


def cmd_train(args) -> int:
    from .dataset import kfold_split, to_batch, train_val_split
    from .minimodel import save_weights, train
    started = time.perf_counter()
    cfg = _model_config(args)
    batch = to_batch(_dataset(args))
    out = _out_dir(args)
    rows, artifacts = [], ["metrics.csv"]
    if args.kfold:
        if args.kfold < 2 or args.kfold > len(batch):
            raise UsageError(f"--kfold must lie in [2, {len(batch)}]")
        plan = kfold_split(len(batch), args.kfold, args.seed)
        splits = []
        for i in range(args.kfold):
            tr, va = train_val_split(plan.train_indices(i), 0.15, args.seed + i)
            splits.append((i + 1, tr, va, plan.fold(i)))
    else:
        tr, va = train_val_split(np.arange(len(batch)), 0.15, args.seed)
        splits = [(0, tr, va, va)]
    for fold, tr, va, test in splits:
        res = train(cfg, batch.subset(tr), batch.subset(va), args.seed + fold)
        m = _eval_metrics(res, batch.subset(test))
        rows.append((fold, m["accuracy"], m["precision"], m["recall"], m["f_measure"],
                     m["tp"], m["tn"], m["fp"], m["fn"], res.best_epoch, res.best_val_accuracy))
        if not args.kfold:
            save_weights(out / "weights.bin", res.weights, cfg, args.seed)
            artifacts.append("weights.bin")
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    report = {"command": "train", "seed": args.seed, "model_config": cfg.to_dict(),
              "metrics": [dict(zip(METRIC_COLUMNS, r)) for r in rows]}
    _finish(args, out, report, started, artifacts)
    for r in rows:
        print(f"fold {r[0]}: accuracy {r[1]:.4f} precision {r[2]:.4f} recall {r[3]:.4f} f {r[4]:.4f}")
    return EXIT_OK


def cmd_tune(args) -> int:
    from .core import Budget
    from .minimodel import train
    from .optimizers import OPTIMIZERS
    from .tuner import agent_seed, split_dataset, tune
    if args.algo not in OPTIMIZERS:
        raise UsageError(f"unknown algorithm {args.algo!r}; choose from {', '.join(sorted(OPTIMIZERS))}")
    started = time.perf_counter()
    try:
        budget = Budget(args.pop, args.iters)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    space = _space(args)
    data = None if args.surrogate else _dataset(args)
    rep = tune(args.algo, data, budget, args.seed, space, workers=args.workers, surrogate=args.surrogate)
    out = _out_dir(args)
    artifacts = ["history.csv"]
    _write_csv(out / "history.csv", ("iteration", "best", "mean"),
               [(i, h.best, h.mean) for i, h in enumerate(rep.history, 1)])
    report = {"command": "tune", "tune": rep.to_dict()}
    if not args.surrogate:
        (out / "evaluations.csv").write_text(rep.log_csv(), encoding="utf-8")
        artifacts.append("evaluations.csv")
        best = min(rep.evaluations, key=lambda e: e.fitness)
        train_set, val_set = split_dataset(data, args.seed)
        res = train(best.config, train_set, val_set, best.seed)
        report["metrics"] = _eval_metrics(res, val_set)
    _finish(args, out, report, started, artifacts)
    print(f"{args.algo}: best fitness {fmt(rep.best_fitness)}, "
          f"{len(rep.evaluations) or rep.optimizer_evaluations} evaluations")
    if rep.best_config is not None and not args.surrogate:
        print("best config: " + " ".join(f"{k}={fmt(v)}" for k, v in rep.best_config.to_dict().items()))
    return EXIT_OK


def cmd_stats(args) -> int:
    from .evalstats import comparison_rows, load_fixture, parse_fold_csv
    started = time.perf_counter()
    if args.folds:
        try:
            text = Path(args.folds).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataFailure(f"{args.folds}: {exc.strerror or exc}") from None
        table = parse_fold_csv(text, str(args.folds))
    else:
        try:
            table = load_fixture(args.fixture)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    if args.family:
        fam = table.families()
        if args.family not in fam:
            raise UsageError(f"unknown family {args.family!r}; choose from {', '.join(fam)}")
        table = fam[args.family]
    header = ("model_a", "model_b", "statistic", "p_value")
    rows = [(a, b, r.statistic, r.p_value) for a, b, r in comparison_rows(table, args.welch)]
    out = _out_dir(args)
    _write_csv(out / "comparison.csv", header, rows)
    _finish(args, out, {"command": "stats", "table": table.name, "models": list(table.models)},
            started, ["comparison.csv"])
    sys.stdout.write((out / "comparison.csv").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .acceptance import run_all
    results = run_all(full=args.full, workers=args.workers)
    if args.json:
        print(json.dumps({"passed": all(r.passed for r in results),
                          "results": [r.to_dict() for r in results]}, indent=2, sort_keys=True, default=str))
    else:
        for r in results:
            print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print("failing checks: " + ", ".join(f"{r.criterion} ({r.name}: {r.detail})" for r in failed),
              file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------

def _common(p, seed: int, out: str, workers: bool = True):
    p.add_argument("--config", help="key=value file; flags given on the command line win")
    p.add_argument("--seed", type=int, default=seed, help="master seed (default: $SWDO_SEED or 0)")
    p.add_argument("--out", default=out, help="output directory")
    if workers:
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def _data_options(p):
    p.add_argument("--synthetic", type=int, default=400, help="number of synthetic images")
    p.add_argument("--manifest", help="filename,label CSV of PGM/PPM images instead of synthetic data")
    p.add_argument("--size", type=int, default=32, help="image side length")
    p.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic generator")
    p.add_argument("--bounds", choices=("desk", "published"), default="desk",
                   help="hyperparameter box: laptop-sized (default) or the full published bounds")


def build_parser(seed: int = 0) -> argparse.ArgumentParser:
    parser = _Parser(prog="swdo", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bench", help="run an optimizer on a benchmark function")
    p.add_argument("--algo", default="mgto")
    p.add_argument("--fn", default="sphere")
    p.add_argument("--dims", type=int, default=10)
    p.add_argument("--pop", type=int, default=30)
    p.add_argument("--iters", type=int, default=500)
    _common(p, seed, "swdo-out/bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dwt", help="one-level Haar sub-bands of a PGM image")
    p.add_argument("--input", required=True)
    _common(p, seed, "swdo-out/dwt", workers=False)
    p.set_defaults(func=cmd_dwt)

    p = sub.add_parser("train", help="train the mini model once or per fold")
    _data_options(p)
    p.add_argument("--kfold", type=int, default=0)
    for name, kind in (("filters_size", int), ("kernel_size", int), ("lr", float), ("l2_reg", float),
                       ("l1_reg", float), ("batch_size", int), ("epochs", int), ("att_reg_weight", float)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)
    _common(p, seed, "swdo-out/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="search hyperparameters with a swarm optimizer")
    _data_options(p)
    p.add_argument("--algo", default="mgto")
    p.add_argument("--pop", type=int, default=6)
    p.add_argument("--iters", type=int, default=8)
    p.add_argument("--surrogate", action="store_true", help="quadratic bowl instead of training")
    _common(p, seed, "swdo-out/tune")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("stats", help="pairwise t-tests over per-fold accuracies")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fixture", default="isic2016")
    g.add_argument("--folds", help="CSV with header model,fold1..foldK")
    p.add_argument("--family", help="restrict to one backbone, e.g. Xception")
    p.add_argument("--welch", action="store_true", help="Welch-Satterthwaite degrees of freedom")
    _common(p, seed, "swdo-out/stats", workers=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("reproduce", help="run the acceptance checks")
    p.add_argument("--json", action="store_true")
    p.add_argument("--full", action="store_true", help="include the end-to-end tuning check (minutes)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    values = read_config(path)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"{path}: unknown key {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif raw.lower() == "none":
            defaults[key] = None
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"{path}: bad value {raw!r} for {key}") from None
            if action.choices and defaults[key] not in action.choices:
                raise UsageError(f"{path}: {key} must be one of {', '.join(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    from .dataset import DataError
    from .evalstats import FixtureError
    from .wavelet import OddDimensionError
    try:
        parser = build_parser(_default_seed())
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"swdo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FixtureError, OddDimensionError, DataFailure) as exc:
        print(f"swdo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
