"""``deltadepth`` command line: gen-data, train, eval, infer, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import training
from .autodiff import CheckpointError
from .config import ConfigError, build_config, format_config
from .formats import FormatError
from .losses import CSV_HEADER, MetricReport
from .network import VARIANTS

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> config key
_FLAGS = {
    "out": "out",
    "seed": "seed",
    "variant": "variant",
    "data": "data",
    "eval_data": "eval_data",
    "checkpoint": "checkpoint",
    "sequence": "sequence",
    "sequences": "sequences",
    "windows": "windows",
    "lidar_period": "lidar_period",
    "steps": "steps",
    "epochs": "epochs",
    "phase": "phase",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--force", action="store_true", help="overwrite an existing dataset directory")
    common.add_argument("--data", help="dataset directory")
    common.add_argument("--eval-data", dest="eval_data", help="held-out dataset directory (ablate)")
    common.add_argument("--checkpoint", help="checkpoint file")
    common.add_argument("--sequence", help="sequence directory (infer)")
    common.add_argument("--sequences", type=int)
    common.add_argument("--windows", type=int)
    common.add_argument("--lidar-period", dest="lidar_period", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--phase", type=float)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="deltadepth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train and write checkpoint.dltw + loss_log.csv")
    sub.add_parser("eval", parents=[common], help="metrics.csv and baseline_metrics.csv")
    sub.add_parser("infer", parents=[common], help="pred_<t>.df32 / .pgm and error_<t>.pgm")
    sub.add_parser("ablate", parents=[common], help="train and evaluate every variant, write ablation.csv")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def resolve_config(args) -> tuple[dict, set]:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for flag, key in _FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            overrides[key] = v
    cfg = build_config(args.config, overrides)
    return cfg, set(overrides)


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if not cfg[k]:
            raise UsageError(f"missing required setting {k!r} (use --{k.replace('_', '-')} or --set {k}=...)")


def _write_run_config(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(format_config(cfg), encoding="utf-8")


def _side_by_side(ours: MetricReport, base: MetricReport) -> str:
    lines = [f"{'cutoff_m':>8} {'mean':>9} {'base_mean':>9} {'absrel':>8} {'rms':>8} {'d1':>6} {'count':>7}"]
    for a, b in zip(ours.rows, base.rows):
        f = lambda v, w, p=3: f"{'-':>{w}}" if v is None else f"{v:>{w}.{p}f}"
        lines.append(f"{a.cutoff:>8g} {f(a.mean, 9)} {f(b.mean, 9)} {f(a.absrel, 8)} {f(a.rms, 8)} {f(a.d1, 6)} {a.count:>7}")
    return "\n".join(lines)


def cmd_gen_data(cfg: dict, force: bool) -> None:
    _require(cfg, "out")
    dirs = training.gen_data(cfg, cfg["out"], force=force)
    _write_run_config(Path(cfg["out"]), cfg)
    print(f"wrote {len(dirs)} sequences to {cfg['out']}")


def cmd_train(cfg: dict) -> None:
    _require(cfg, "out", "data")
    out = Path(cfg["out"])
    _write_run_config(out, cfg)
    net = training.train(cfg, out)
    print(f"trained {cfg['variant']} ({net.count_parameters()} parameters); checkpoint {out / 'checkpoint.dltw'}")


def _load_checked(cfg: dict, explicit: set):
    net = training.load_network(cfg["checkpoint"])
    if "variant" in explicit and cfg["variant"] != net.config.variant:
        raise training.DataError(f"checkpoint variant {net.config.variant} does not match requested {cfg['variant']}")
    return net


def cmd_eval(cfg: dict, explicit: set) -> None:
    _require(cfg, "out", "data", "checkpoint")
    out = Path(cfg["out"])
    net = _load_checked(cfg, explicit)
    ours, base = training.evaluate(net, training.load_dataset(cfg["data"]))
    _write_run_config(out, cfg)
    (out / "metrics.csv").write_text(ours.to_csv())
    (out / "baseline_metrics.csv").write_text(base.to_csv())
    print(_side_by_side(ours, base))


def cmd_infer(cfg: dict, explicit: set) -> None:
    _require(cfg, "out", "sequence", "checkpoint")
    out = Path(cfg["out"])
    net = _load_checked(cfg, explicit)
    seq = training.load_sequence(cfg["sequence"])
    H, W = seq.inputs[0].events.shape[:2]
    if (H, W) != (net.config.H, net.config.W):
        raise training.DataError(f"sequence resolution {(H, W)} does not match checkpoint {(net.config.H, net.config.W)}")
    _write_run_config(out, cfg)
    preds = training.infer(net, seq, out)
    print(f"wrote {len(preds)} predictions to {out}")


def cmd_ablate(cfg: dict) -> None:
    _require(cfg, "out", "data")
    out = Path(cfg["out"])
    _write_run_config(out, cfg)
    held_out = training.load_dataset(cfg["eval_data"] or cfg["data"])
    rows = [",".join(["variant", "parameters"] + CSV_HEADER)]
    for variant in VARIANTS:
        run = dict(cfg, variant=variant)
        net = training.train(run, out / variant)
        ours, _ = training.evaluate(net, held_out)
        for line in ours.to_csv().splitlines()[1:]:
            rows.append(f"{variant},{net.count_parameters()},{line}")
        print(f"{variant}: mean error at {ours.rows[-1].cutoff:g} m = {ours.rows[-1].mean}")
    (out / "ablation.csv").write_text("\n".join(rows) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg, explicit = resolve_config(args)
        with threadpool_limits(limits=1):
            if args.command == "gen-data":
                cmd_gen_data(cfg, args.force)
            elif args.command == "train":
                cmd_train(cfg)
            elif args.command == "eval":
                cmd_eval(cfg, explicit)
            elif args.command == "infer":
                cmd_infer(cfg, explicit)
            elif args.command == "ablate":
                cmd_ablate(cfg)
            else:
                sys.stdout.write(format_config(cfg))
    except (ConfigError, UsageError) as exc:
        print(f"deltadepth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except training.NumericError as exc:
        print(f"deltadepth: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (training.DataError, FormatError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"deltadepth: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
