"""Command-line entry point: ``prom <subcommand> [flags]``.

Every subcommand writes CSVs (and PNG figures) into ``--out`` together with a
``run_config.txt`` snapshot of the resolved flags.  Files are staged in a
temporary directory and moved into place only after the whole set is written.

Exit codes: 0 success (recorded divergence included), 1 numerical or I/O
failure, 2 usage error.
"""

import argparse
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis, plotting
from .chain import KinematicChain
from .checks import run_checks
from .errors import InvalidInputError
from .heads import HEADS, ORTHO_ALIASES
from .tasks import (
    LossConfig,
    TrainConfig,
    train_chain,
    train_point_cloud,
    train_rotation_recovery,
    write_rows,
    write_run_records,
)

SUMMARY_FIELDS = ("name", "seed", "mean_deg", "max_deg", "std_deg", "diverged_at")
CHAIN_SUMMARY_FIELDS = SUMMARY_FIELDS + ("variant", "position_mse")


class UsageError(Exception):
    pass


# -- argument types ---------------------------------------------------------


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _choice_list(choices):
    def parse(text):
        names = [v.strip() for v in text.split(",") if v.strip()]
        bad = [n for n in names if n not in choices]
        if bad or not names:
            raise argparse.ArgumentTypeError(f"unknown name(s) {bad or text!r}; choose from {sorted(choices)}")
        return names
    return parse


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# -- output staging ---------------------------------------------------------


class Staging:
    """Collects files in a temp dir beside ``out`` and publishes them on success."""

    def __init__(self, out):
        self.out = out
        self.tmp = None

    def __enter__(self):
        os.makedirs(self.out, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".staging-", dir=self.out)
        return self

    def path(self, name):
        return os.path.join(self.tmp, name)

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in sorted(os.listdir(self.tmp)):
                    os.replace(os.path.join(self.tmp, name), os.path.join(self.out, name))
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def write_run_config(path, args):
    skip = {"func", "config"}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(vars(args)):
            if key in skip:
                continue
            value = getattr(args, key)
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")


def _train_cfg(args, seed=None):
    return TrainConfig(
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        batch_size=args.batch_size,
        lr=args.lr,
        eval_size=args.eval_size,
        seed=args.seed if seed is None else seed,
    )


def _summary_row(result, seed):
    row = result.summary()
    row["seed"] = seed
    return row


def _run_parallel(fn, jobs, threads):
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(fn, jobs))


# -- subcommands ------------------------------------------------------------


def _eigen_outputs(stage, methods, n, sigma, seed):
    results = [analysis.eigen_verification(m, n, sigma, seed) for m in methods]
    for res in results:
        analysis.write_eigen(stage.path(f"eigen_{res.method}.csv"), res)
    if n:
        plotting.plot_eigen(results, stage.path("eigen.png"))
    return results


def cmd_scatter(args, stage):
    for sigma in args.sigma:
        results = [analysis.gradient_scatter(m, sigma, args.iters, args.seed) for m in args.methods]
        for res in results:
            analysis.write_scatter(stage.path(analysis.scatter_filename(res.method, sigma)), res)
            if args.iters:
                print(f"{res.method:>5} sigma={sigma:g}: sign disagreement {res.sign_disagreement:.4f}, "
                      f"outlier ratio {res.outlier_ratio:.2f}")
        if args.iters:
            plotting.plot_scatter(results, stage.path(f"scatter_{sigma:g}.png"))
    _eigen_outputs(stage, args.methods, args.eigen_samples, args.eigen_sigma, args.seed)
    return 0


def cmd_eigen(args, stage):
    for res in _eigen_outputs(stage, args.methods, args.samples, args.sigma, args.seed):
        if len(res.lambda_min):
            print(f"{res.method:>5}: max lambda_min {res.lambda_min.max():.3e}, "
                  f"fraction < 1e-12: {res.fraction_below(1e-12):.4f}")
    return 0


def cmd_explode(args, stage):
    rows = analysis.explosion_probe(args.gaps)
    analysis.write_explosion(stage.path("explosion.csv"), rows)
    plotting.plot_explosion(rows, stage.path("explosion.png"))
    return 0


def _write_training(stage, results, seeds, prefix, fields=SUMMARY_FIELDS):
    for res, seed in zip(results, seeds):
        tag = res.name.replace(":", "_")
        write_run_records(stage.path(f"{prefix}_{tag}_seed{seed}.csv"), res.records)
    write_rows(stage.path(f"{prefix}_summary.csv"), fields,
               [_summary_row(r, s) for r, s in zip(results, seeds)])
    plotting.plot_training(results, stage.path(f"{prefix}.png"))
    for res in results:
        state = "diverged at step %d" % res.diverged_at if res.diverged_at is not None else f"mean {res.mean:.3f} deg"
        print(f"{res.name}: {state}")


def cmd_rot_recover(args, stage):
    cfg = _train_cfg(args)
    results = _run_parallel(lambda h: train_rotation_recovery(h, cfg), args.heads, args.threads)
    _write_training(stage, results, [args.seed] * len(results), "rot_recover")
    return 0


def cmd_point_cloud(args, stage):
    cfg = _train_cfg(args)
    results = _run_parallel(
        lambda h: train_point_cloud(h, cfg, n_points=args.points, use_rotation_loss=args.rotation_loss),
        args.heads, args.threads)
    _write_training(stage, results, [args.seed] * len(results), "point_cloud")
    return 0


def _load_chain(args):
    if args.chain:
        with open(args.chain, encoding="utf-8") as fh:
            return KinematicChain.from_text(fh.read())
    return KinematicChain.default(args.joints)


def cmd_chain(args, stage):
    chain = _load_chain(args)
    loss_cfg = LossConfig(args.rotation_loss, args.downstream_loss, args.ortho_theta, args.ortho_y)
    res = train_chain(args.head, loss_cfg, chain, _train_cfg(args), max_angle=math.radians(args.max_angle))
    _write_training(stage, [res], [args.seed], "chain", CHAIN_SUMMARY_FIELDS)
    print(f"position MSE {res.extra['position_mse']:.4e}")
    return 0


def cmd_lr_sweep(args, stage):
    chain = _load_chain(args)
    rows = analysis.lr_sweep(args.methods, args.lrs, args.seed, _train_cfg(args), chain, args.threads,
                             math.radians(args.max_angle))
    analysis.write_lr_sweep(stage.path("lr_sweep.csv"), rows)
    plotting.plot_lr_sweep(rows, stage.path("lr_sweep.png"))
    for method in args.methods:
        print(f"{method:>5}: max stable lr {analysis.max_stable_lr(rows, method)}")
    return 0


def cmd_check(args, stage):
    results = run_checks(args.samples, args.seed)
    rows = []
    for res in results:
        print(res.line())
        rows.append({"check": res.name, "samples": res.samples, "max_rel_error": res.max_rel_error,
                     "tolerance": res.tolerance, "passed": res.passed})
    write_rows(stage.path("check.csv"), ("check", "samples", "max_rel_error", "tolerance", "passed"), rows)
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return 0 if ok else 1


# -- parser -----------------------------------------------------------------


def _add_training(p, epochs=20, lr=1e-3):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--steps-per-epoch", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--eval-size", type=int, default=1000)


def _add_chain_options(p):
    p.add_argument("--chain", default=None, help="chain description file (joints = K / offset = x, y, z lines)")
    p.add_argument("--joints", type=int, default=4, help="joint count of the default chain")
    p.add_argument("--max-angle", type=float, default=60.0, help="joint rotation range in degrees")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out", default="./out/")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--config", default=None, help="key = value file providing defaults; flags win")

    parser = argparse.ArgumentParser(prog="prom", description="Rotation-representation gradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    methods = _choice_list(analysis.METHODS)
    heads = _choice_list(HEADS)

    p = sub.add_parser("scatter", parents=[common], help="gradient vs error scatter")
    p.add_argument("--methods", type=methods, default=list(analysis.METHODS))
    p.add_argument("--sigma", type=_float_list, default=[0.5])
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--eigen-samples", type=int, default=1000)
    p.add_argument("--eigen-sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("eigen", parents=[common], help="lambda_min of B B^T per method")
    p.add_argument("--methods", type=methods, default=list(analysis.METHODS))
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("explode", parents=[common], help="Jacobian norm vs degeneracy gap")
    p.add_argument("--gaps", type=_float_list, default=list(analysis.EXPLOSION_GAPS))
    p.set_defaults(func=cmd_explode)

    p = sub.add_parser("rot-recover", parents=[common], help="rotation auto-encoding")
    p.add_argument("--heads", type=heads, default=["prom", "six_d", "quat", "euler", "axis_angle"])
    _add_training(p)
    p.set_defaults(func=cmd_rot_recover)

    p = sub.add_parser("point-cloud", parents=[common], help="toy point-cloud pose regression")
    p.add_argument("--heads", type=heads, default=["prom", "six_d"])
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--rotation-loss", type=_bool, default=True)
    _add_training(p)
    p.set_defaults(func=cmd_point_cloud)

    ortho = sorted(ORTHO_ALIASES)
    p = sub.add_parser("chain", parents=[common], help="chain-supervised pose with orthogonalization placement")
    p.add_argument("--head", choices=sorted(HEADS), default="prom")
    p.add_argument("--ortho-theta", choices=ortho, default="id")
    p.add_argument("--ortho-y", choices=ortho, default="id")
    p.add_argument("--rotation-loss", type=_bool, default=True)
    p.add_argument("--downstream-loss", type=_bool, default=True)
    _add_chain_options(p)
    _add_training(p)
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("lr-sweep", parents=[common], help="chain task over a learning-rate grid")
    p.add_argument("--methods", type=methods, default=list(analysis.METHODS))
    p.add_argument("--lrs", type=_float_list, default=list(analysis.SWEEP_LRS))
    _add_chain_options(p)
    _add_training(p)
    p.set_defaults(func=cmd_lr_sweep)

    p = sub.add_parser("check", parents=[common], help="finite-difference oracle suite")
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_check)
    return parser


def read_config(path):
    """Parse ``key = value`` lines (``#`` comments); keys may use dashes or underscores."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, argv):
    """Re-parse with config-file values installed as defaults of the chosen subparser."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = read_config(args.config)
    except OSError as exc:
        parser.error(f"cannot read config: {exc}")
    except UsageError as exc:
        parser.error(str(exc))
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        if key not in known or key in ("config", "help"):
            parser.error(f"unknown config key {key!r}")
        action = known[key]
        try:
            defaults[key] = action.type(value) if action.type else value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key!r}: {exc}")
        if action.choices is not None and defaults[key] not in action.choices:
            parser.error(f"config key {key!r}: invalid choice {value!r}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
    try:
        with Staging(args.out) as stage:
            write_run_config(stage.path("run_config.txt"), args)
            return args.func(args, stage)
    except InvalidInputError as exc:
        print(f"prom: error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"prom: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
