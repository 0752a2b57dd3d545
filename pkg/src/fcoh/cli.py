"""``fcoh`` command line: train, eval, synth, bench, mnist.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from fcoh import harness
from fcoh.config import RunConfig, apply_settings, load_config
from fcoh.data import concat, l2_normalize, load_features, load_mnist_idx, save_features, synth_clusters
from fcoh.errors import ConfigError, DataError, NumericalError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("fcoh")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", choices=["mnist", "cifar10", "places205"],
                   help="published hyperparameters for a benchmark")
    for f in fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="V")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    settings = {}
    if args.preset:
        settings["preset"] = args.preset
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            settings[f.name] = v
    return apply_settings(cfg, settings)


def cmd_train(args) -> int:
    cfg = _resolve_config(args).validate()
    out = Path(cfg.output_dir)
    result = harness.run_training(cfg, out_dir=out)
    for rep in result.reports:
        print(f"stage {rep.stage:>5}  samples {rep.samples_seen:>7}  mAP {rep.map:.4f}  "
              f"P@H2 {rep.precision_at_h2:.4f}")
    s = result.summary
    auc_txt = "n/a" if s["map_auc"] is None else f"{s['map_auc']:.4f}"
    print(f"final mAP {s['final_map']:.4f}  mAP AUC {auc_txt}  -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args).validate()
    rep = harness.run_eval(cfg, args.checkpoint)
    line = rep.to_json()
    if args.out:
        Path(args.out).write_text(line + "\n")
    print(line)
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = synth_clusters(args.d, args.classes, args.per_class, args.sep, args.noise, args.seed)
    save_features(args.out, ds, args.format)
    print(f"wrote {ds.n} samples, d={ds.d}, {args.classes} classes -> {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    configs = []
    for path in args.config or []:
        cfg = load_config(path).validate()
        configs.append((Path(path).stem, cfg, load_features(cfg.dataset, cfg.format or None)))
    if args.sweep_d:
        dims = [int(x) for x in args.sweep_d.split(",")]
        configs.extend(harness.synthetic_sweep(
            dims, r=args.r, n_t=args.n_t, train_size=args.train_size,
            database_size=args.database_size, seed=args.seed,
        ))
    if not configs:
        raise ConfigError("bench needs --config files and/or --sweep-d")
    rows = harness.bench(configs, repeats=args.repeats)
    print(harness.format_bench(rows))
    if args.out:
        with open(args.out, "w") as f:
            for row in rows:
                f.write(json.dumps(row.to_record()) + "\n")
    return EXIT_OK


def cmd_mnist(args) -> int:
    if len(args.images) != len(args.labels):
        raise ConfigError("give one --labels file per --images file")
    parts = [load_mnist_idx(img, lab) for img, lab in zip(args.images, args.labels)]
    ds = concat(*parts, name="mnist")
    if args.normalize == "l2":
        ds = l2_normalize(ds)
    save_features(args.out, ds)
    print(f"wrote {ds.n} MNIST samples ({args.normalize} normalisation) -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fcoh", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="stream the training split and evaluate per stage")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint without training")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="also write the report record here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-cluster feature file")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=610)
    p.add_argument("--sep", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["fvec", "csv"], default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time hash-function vs hash-table updating")
    p.add_argument("--config", action="append", help="run config file (repeatable)")
    p.add_argument("--sweep-d", help="comma-separated feature dims for a synthetic sweep")
    p.add_argument("--r", type=int, default=32)
    p.add_argument("--n-t", type=int, default=100)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--database-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="write rows as JSON lines")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("mnist", help="convert MNIST IDX files to an FVEC feature file")
    p.add_argument("--images", action="append", required=True)
    p.add_argument("--labels", action="append", required=True)
    p.add_argument("--normalize", choices=["l2", "none"], default="l2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mnist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fcoh: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fcoh: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as exc:
        print(f"fcoh: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
