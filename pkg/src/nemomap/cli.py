"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .autodiff import NumericError
from .data import DataFormatError, load_samples, write_canonical_csv
from .evaluation import EvalReport, compare, time_build, time_query
from .field import FieldConfig
from .models import METHODS, build_model, load_model
from .render import RenderSpec, render_svg
from .swgmm import DegenerateCovarianceError
from .synth import scenario, synth_generate
from .trainer import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def parse_time(text) -> float:
    """'HH:MM' / 'HH:MM:SS' or plain seconds of day."""
    s = str(text).strip()
    if ":" in s:
        parts = [float(p) for p in s.split(":")]
        parts += [0.0] * (3 - len(parts))
        return parts[0] * 3600 + parts[1] * 60 + parts[2]
    return float(s)


def parse_bounds(text):
    if text is None:
        return None
    vals = [float(v) for v in str(text).split(",")]
    if len(vals) != 4:
        raise UsageError("--bounds expects x_min,x_max,y_min,y_max")
    return tuple(vals)


def read_config(path) -> dict:
    """Flat ``key = value`` file; keys are flag names with dashes or underscores."""
    cp = configparser.ConfigParser()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    cp.read_string("[run]\n" + text)
    return {k.replace("-", "_"): v for k, v in cp["run"].items()}


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="flat key=value file mirroring the flags")
    p.add_argument("-v", "--verbose", action="store_true")


def _build_flags(p):
    p.add_argument("--train", required=True, help="training samples CSV (canonical or ATC)")
    p.add_argument("--out", required=True, help="model document to write")
    p.add_argument("--bounds", default=None, help="x_min,x_max,y_min,y_max (default: data extent)")
    p.add_argument("--resolution", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=4096)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--variant", choices=("siren", "grid24", "fourier"), default="siren")
    p.add_argument("--checkpoint", default=None)


def make_parser() -> _Parser:
    parser = _Parser(prog="nemomap", description="Continuous spatio-temporal maps of dynamics.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corridor dataset")
    _common(p)
    p.add_argument("--scenario", default="reversal", choices=("reversal", "drift", "constant"))
    p.add_argument("--samples-per-day", type=int, default=15000)
    p.add_argument("--train-days", type=int, default=3)
    p.add_argument("--test-days", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("build", help="build a map with any method")
    _common(p)
    p.add_argument("--method", choices=METHODS, required=True)
    _build_flags(p)

    p = sub.add_parser("train", help="train a neural map (same as build --method nemo)")
    _common(p)
    _build_flags(p)

    p = sub.add_parser("eval", help="NLL report for one or more maps on a test set")
    _common(p)
    p.add_argument("--test", required=True)
    p.add_argument("--model", action="append", default=[], help="model document (repeatable)")
    p.add_argument("--method", action="append", default=[], choices=METHODS + ("truth",),
                   help="load <model-dir>/<method>.json (repeatable)")
    p.add_argument("--model-dir", default=".")
    p.add_argument("--reference", default=None)
    p.add_argument("--out", default=None, help="CSV report path")

    p = sub.add_parser("query", help="print the mixture at one (x, y, t)")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--t", required=True, help="HH:MM or seconds of day")

    p = sub.add_parser("render", help="SVG flow fields")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--times", default="09:00,11:00,18:00")
    p.add_argument("--mode", choices=("all", "max"), default="all")
    p.add_argument("--stride", type=float, default=1.0)
    p.add_argument("--arrow-scale", type=float, default=0.6)
    p.add_argument("--bounds", default=None)
    p.add_argument("--samples", default=None, help="training CSV; only render where data exists")

    p = sub.add_parser("bench", help="build and query timings")
    _common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--method", action="append", default=[], choices=METHODS)
    p.add_argument("--bounds", default=None)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=4096)
    p.add_argument("--queries", type=int, default=100_000)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default=None)
    return parser


def _apply_config(parser: _Parser, argv: list) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_help())
    if getattr(args, "config", None):
        conf = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in conf.items():
            if k not in known:
                raise UsageError(f"unknown config key {k!r}")
            action = known[k]
            if isinstance(action, argparse._AppendAction):
                defaults[k] = [s.strip() for s in v.split(",") if s.strip()]
            elif action.type is not None:
                defaults[k] = action.type(v)
            else:
                defaults[k] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
        # append actions extend their default list; keep CLI values only when given
        for k, v in defaults.items():
            if isinstance(known[k], argparse._AppendAction) and getattr(args, k) != v:
                setattr(args, k, getattr(args, k)[len(v):] or v)
    return args


def _field_config(args, bounds) -> FieldConfig:
    return FieldConfig(bounds=bounds, n_components=args.components, cell_size=args.resolution,
                       variant=args.variant, seed=args.seed)


def cmd_synth(args) -> int:
    cfg = scenario(args.scenario, samples_per_day=args.samples_per_day, train_days=args.train_days,
                   test_days=args.test_days, seed=args.seed)
    train, test, truth = synth_generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_canonical_csv(train, out / "train.csv")
    write_canonical_csv(test, out / "test.csv")
    truth.save(out / "truth.json")
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return EXIT_OK


def cmd_build(args, method=None) -> int:
    method = method or args.method
    train = load_samples(args.train)
    if len(train) == 0:
        raise DataFormatError(f"{args.train}: no samples")
    bounds = parse_bounds(args.bounds) or train.bounds()
    model = build_model(
        method, train, bounds,
        field_config=_field_config(args, bounds) if method == "nemo" else None,
        train_config=TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed),
        resolution=args.resolution,
        checkpoint=args.checkpoint,
        progress=sys.stdout if method == "nemo" else None,
    )
    model.save(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    test = load_samples(args.test)
    models = {}
    for m in args.method:
        models[m] = load_model(Path(args.model_dir) / f"{m}.json")
    for path in args.model:
        model = load_model(path)
        name = model.kind if model.kind not in models else Path(path).stem
        models[name] = model
    if not models:
        raise UsageError("eval needs at least one --model or --method")
    report: EvalReport = compare(models, test, args.reference)
    if args.out:
        Path(args.out).write_text(report.to_csv())
    sys.stdout.write(report.to_table())
    return EXIT_OK


def format_mixture(m) -> str:
    """One line per component:
    weight,mean_speed,mean_orientation,var_speed,var_orientation,correlation"""
    lines = []
    for w, c in zip(m.weights, m.components):
        lines.append(f"{w:.6f},{c.mean_speed:.6f},{c.mean_theta:.6f},{c.var_speed:.6g},{c.var_theta:.6g},{c.corr:.6f}")
    return "\n".join(lines)


def cmd_query(args) -> int:
    model = load_model(args.model)
    t = parse_time(args.t)
    res = model.query(args.x, args.y, t)
    if model.kind == "stef":
        for b, p in enumerate(res):
            print(f"{b},{b * 2 * np.pi / 8:.6f},{p:.6f}")
    else:
        print(format_mixture(res))
    return EXIT_OK


def _model_bounds(model, args):
    b = parse_bounds(getattr(args, "bounds", None))
    if b is not None:
        return b
    if model.kind == "nemo":
        return model.config.bounds
    if model.kind == "truth":
        return model.config.bounds
    lat = model.lattice
    return (lat.x0, lat.x0 + (lat.nx - 1) * lat.resolution, lat.y0, lat.y0 + (lat.ny - 1) * lat.resolution)


def cmd_render(args) -> int:
    model = load_model(args.model)
    samples = load_samples(args.samples) if args.samples else None
    times = [parse_time(s) for s in args.times.split(",") if s.strip()]
    spec = RenderSpec(times=times, stride=args.stride, mode=args.mode, arrow_scale=args.arrow_scale)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bounds = _model_bounds(model, args)
    for t in times:
        hh, mm = divmod(int(round(t)) // 60, 60)
        path = out / f"{model.kind}_{args.mode}_{hh:02d}{mm:02d}.svg"
        path.write_text(render_svg(model, bounds, t, spec, samples))
        print(path)
    return EXIT_OK


def cmd_bench(args) -> int:
    train = load_samples(args.train)
    bounds = parse_bounds(args.bounds) or train.bounds()
    methods = args.method or list(METHODS)
    rows = ["method,build_s,query_s_mean,query_s_std"]
    for m in methods:
        tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
        fc = FieldConfig(bounds=bounds, seed=args.seed) if m == "nemo" else None
        model, bt = time_build(lambda: build_model(m, train, bounds, field_config=fc, train_config=tc))
        qt = time_query(model, bounds, n=args.queries, repeats=args.repeats, seed=args.seed)
        rows.append(f"{m},{bt.mean:.6f},{qt.mean:.6e},{qt.std:.6e}")
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "build": cmd_build,
    "train": lambda a: cmd_build(a, method="nemo"),
    "eval": cmd_eval,
    "query": cmd_query,
    "render": cmd_render,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return EXIT_USAGE
    except (NumericError, FloatingPointError, DegenerateCovarianceError) as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    except (DataFormatError, serialize.FormatError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
