"""Command-line interface: ``kcusum {detect,evaluate,bounds,generate}``.

Exit codes for ``detect``: 0 alarm raised, 1 stream ended without alarm,
2 usage or data error. Other commands exit 0 on success and 2 on error.
Commands that draw random numbers need ``--seed`` (or ``KCUSUM_SEED``)
unless ``--nondeterministic`` is given.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import math
import os
import secrets
import sys
from typing import Sequence

import numpy as np

from kcusum import __version__
from kcusum.bounds import tradeoff_curve
from kcusum.detectors import (
    CusumDetector,
    DatabaseReference,
    KcusumConfig,
    KernelCusumDetector,
    SamplerReference,
)
from kcusum.distributions import (
    ChangeStream,
    DiagonalGaussian,
    GaussianLLR,
    VarianceChangeLLR,
    distribution_from_config,
    make_rng,
    task_laws,
)
from kcusum.errors import ConfigError, KcusumError, UndetectableChangeError
from kcusum.evaluation import (
    DEFAULT_MAX_STEPS,
    EvalReport,
    ExperimentConfig,
    KcusumSpec,
    CusumSpec,
    run_experiment,
    run_task_suite,
)
from kcusum.kernels import KernelSpec
from kcusum.streamio import (
    infer_format,
    load_config,
    read_observations,
    write_observations,
)

EXIT_ALARM, EXIT_NO_ALARM, EXIT_ERROR = 0, 1, 2

FIG3 = {"mmd2": 1.0 / 6.0, "delta": 2.0**-5, "k_sup": 0.5, "targets": "1:10000:int"}

# Threshold grids chosen so every task's false-alarm time spans roughly 1e4..1.5e5.
DEFAULT_THRESHOLDS = {
    1: [16.0, 19.0, 22.0, 25.0, 28.0, 31.0, 34.0],
    2: [16.0, 19.0, 22.0, 25.0, 28.0, 31.0, 34.0],
    3: [16.0, 19.0, 22.0, 25.0, 28.0, 31.0, 34.0],
    4: [24.0, 30.0, 36.0, 42.0, 48.0, 54.0, 60.0],
}


class CliError(Exception):
    """Usage problem reported with exit code 2."""


def resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("KCUSUM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"KCUSUM_SEED must be an integer, got {env!r}") from None
    if getattr(args, "nondeterministic", False):
        seed = secrets.randbits(63)
        print(f"using random seed {seed}", file=sys.stderr)
        return seed
    raise CliError("--seed is required (or set KCUSUM_SEED, or pass --nondeterministic)")


def parse_targets(spec: str) -> list[float]:
    """Parse ``a:b:log[:N]``, ``a:b:lin[:N]``, ``a:b:int`` or a comma list."""
    if ":" not in spec:
        try:
            return [float(v) for v in spec.split(",")]
        except ValueError:
            raise CliError(f"bad target list {spec!r}") from None
    parts = spec.split(":")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        mode = parts[2] if len(parts) > 2 else "log"
        num = int(parts[3]) if len(parts) > 3 else 50
    except (ValueError, IndexError):
        raise CliError(f"bad target spec {spec!r}") from None
    if not 0 < lo <= hi:
        raise CliError("targets need 0 < start <= stop")
    if lo == hi:
        return [lo]
    if mode == "log":
        return [float(v) for v in np.geomspace(lo, hi, num)]
    if mode == "lin":
        return [float(v) for v in np.linspace(lo, hi, num)]
    if mode == "int":
        return [float(v) for v in range(math.ceil(lo), math.floor(hi) + 1)]
    raise CliError(f"unknown target spacing {mode!r}")


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad number list {text!r}") from None


@contextlib.contextmanager
def open_text(path: str, mode: str = "r"):
    if path == "-":
        yield sys.stdin if "r" in mode else sys.stdout
    else:
        with open(path, mode, newline="") as f:
            yield f


# -- detect ----------------------------------------------------------------------


def llr_from_config(cfg: dict):
    model = cfg.get("model", "gaussian_diag")
    if model == "gaussian_variance_change":
        return VarianceChangeLLR()
    if model == "gaussian_diag":
        try:
            pre = DiagonalGaussian(cfg["pre_mean"], cfg["pre_variances"])
            post = DiagonalGaussian(cfg["post_mean"], cfg["post_variances"])
        except KeyError as exc:
            raise ConfigError(f"llr model config is missing {exc}") from None
        return GaussianLLR(pre, post)
    raise ConfigError(f"unknown llr model {model!r}")


def cmd_detect(args: argparse.Namespace) -> int:
    fmt = infer_format(args.input, args.format)
    if args.detector == "cusum":
        if not args.llr_model:
            raise CliError("cusum needs --llr-model CFG")
        detector = CusumDetector(llr_from_config(load_config(args.llr_model)), args.threshold)
    else:
        if args.delta is None:
            raise CliError("kcusum needs --delta")
        kernel = KernelSpec(args.kernel, args.sigma2)
        if args.reference and args.reference_dist:
            raise CliError("give either --reference or --reference-dist, not both")
        if args.reference:
            with open_text(args.reference) as f:
                data = list(read_observations(f, infer_format(args.reference, args.format)))
            rng = make_rng(resolve_seed(args)) if args.reference_policy == "resample" else None
            reference = DatabaseReference(data, args.reference_policy, rng)
        elif args.reference_dist:
            dist = distribution_from_config(load_config(args.reference_dist))
            reference = SamplerReference(dist, make_rng(resolve_seed(args)))
        else:
            raise CliError("kcusum needs --reference PATH or --reference-dist CFG")
        detector = KernelCusumDetector(KcusumConfig(kernel, args.delta, args.threshold, reference))

    trace = open(args.trace, "w", newline="") if args.trace else None
    event = None
    try:
        if trace:
            trace.write("n,v,z\n")
        with open_text(args.input) as f:
            for x in read_observations(f, fmt, header=args.header):
                event = detector.update(x)
                if trace:
                    st = detector.state
                    trace.write(f"{st.n},{detector.last_increment:.17g},{st.z:.17g}\n")
                if event is not None:
                    break
    finally:
        if trace:
            trace.close()
    report = {
        "alarm": event is not None,
        "time": event.time if event else None,
        "statistic": detector.statistic,
    }
    print(json.dumps(report))
    return EXIT_ALARM if event else EXIT_NO_ALARM


# -- evaluate ----------------------------------------------------------------------


def _merge_evaluate_config(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config) if args.config else {}
    flags = {
        "task": args.task,
        "reps": args.reps,
        "seed": args.seed,
        "thresholds": parse_float_list(args.thresholds) if args.thresholds else None,
        "delta": args.delta,
        "out": args.out,
        "max_steps": args.max_steps,
        "half_width": args.half_width,
        "threads": args.threads,
        "detector": args.detector,
    }
    cfg.update({k: v for k, v in flags.items() if v is not None})
    return cfg


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _merge_evaluate_config(args)
    if "out" not in cfg:
        raise CliError("evaluate needs --out DIR (or 'out' in the config)")
    if "seed" not in cfg:
        cfg["seed"] = resolve_seed(args)
    seed = int(cfg["seed"])
    reps = int(cfg.get("reps", 5000))
    threads = int(cfg.get("threads", os.cpu_count() or 1))
    max_steps = int(cfg.get("max_steps", DEFAULT_MAX_STEPS))
    thresholds = cfg.get("thresholds")

    if "pre_dist" in cfg:
        pre = distribution_from_config(cfg, "pre_")
        post = distribution_from_config(cfg, "post_")
        if not thresholds:
            raise CliError("custom experiments need thresholds")
        if cfg.get("detector", "kcusum") == "kcusum":
            det = KcusumSpec(KernelSpec(cfg.get("kernel", "gaussian"), float(cfg.get("sigma2", 1.0))),
                             float(cfg.get("delta", 2.0**-7)))
        else:
            if not (isinstance(pre, DiagonalGaussian) and isinstance(post, DiagonalGaussian)):
                raise ConfigError("cusum experiments need gaussian_diag laws")
            det = CusumSpec(GaussianLLR(pre, post))
        config = ExperimentConfig(
            str(cfg.get("name", "custom")), pre, post, det, tuple(sorted(thresholds)),
            reps, max_steps, seed,
        )
        report = EvalReport([run_experiment(config, threads)], [config.echo()])
    else:
        tasks = cfg.get("task", [1, 2, 3, 4])
        if isinstance(tasks, (int, str)):
            tasks = [int(t) for t in str(tasks).split(",")]
        tasks = [int(t) for t in tasks]
        if any(t not in (1, 2, 3, 4) for t in tasks):
            raise CliError("--task must be in 1..4")
        if cfg.get("detector", "kcusum") != "kcusum":
            raise CliError("benchmark task suites run the kcusum detector")
        grid = sorted(thresholds) if thresholds else {t: DEFAULT_THRESHOLDS[t] for t in tasks}
        deltas = {t: float(cfg["delta"]) for t in tasks} if "delta" in cfg else None
        report = run_task_suite(
            tasks, grid, reps, seed, deltas, threads, max_steps,
            half_width=cfg.get("half_width"),
        )
    json_path, csv_path = report.write(cfg["out"])
    print(json.dumps({"json": str(json_path), "csv": str(csv_path)}))
    failed = [t.task for t in report.tasks if t.error]
    if failed:
        print(f"tasks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ERROR
    return 0


# -- bounds --------------------------------------------------------------------------


def cmd_bounds(args: argparse.Namespace) -> int:
    if args.fig3:
        params = dict(FIG3)
        for key in ("mmd2", "delta", "k_sup"):
            if getattr(args, key) is not None:
                params[key] = getattr(args, key)
        if args.targets:
            params["targets"] = args.targets
    else:
        missing = [k for k in ("delta", "k_sup", "mmd2", "targets") if getattr(args, k) is None]
        if missing:
            raise CliError("bounds needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
        params = {k: getattr(args, k) for k in ("delta", "k_sup", "mmd2", "targets")}
    targets = parse_targets(params["targets"])
    curve = tradeoff_curve(params["delta"], params["k_sup"], params["mmd2"], targets)
    for w in curve.warnings[:1]:
        extra = len(curve.warnings) - 1
        print(w + (f" (and {extra} more)" if extra else ""), file=sys.stderr)
    with open_text(args.out or "-", "w") as f:
        f.write(curve.to_csv())
    return 0


# -- generate ------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    if args.variance_change_1d:
        pre = DiagonalGaussian([1.0], [1.0])
        post = DiagonalGaussian([1.0], [4.0])
    elif args.task is not None:
        pre, post = task_laws(args.task, half_width=args.half_width)
    elif args.pre_dist:
        pre = distribution_from_config(load_config(args.pre_dist))
        post = distribution_from_config(load_config(args.post_dist)) if args.post_dist else pre
    else:
        raise CliError("generate needs --variance-change-1d, --task or --pre-dist")
    seed = resolve_seed(args)
    stream = ChangeStream(pre, post, args.change_at, make_rng(seed, 0), make_rng(seed, 1))
    fmt = infer_format(args.out, args.format)
    with open_text(args.out or "-", "w") as f:
        write_observations(f, stream.take(args.n), fmt)
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kcusum", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--nondeterministic", action="store_true")

    d = sub.add_parser("detect", help="run a detector over a stream")
    d.add_argument("--detector", choices=("cusum", "kcusum"), required=True)
    d.add_argument("--input", default="-")
    d.add_argument("--format", choices=("csv", "ndjson"))
    d.add_argument("--header", action="store_true", help="skip the first input line")
    d.add_argument("--threshold", type=float, required=True)
    d.add_argument("--delta", type=float)
    d.add_argument("--kernel", default="gaussian")
    d.add_argument("--sigma2", type=float, default=1.0)
    d.add_argument("--reference", help="file of reference observations (database mode)")
    d.add_argument("--reference-policy", choices=DatabaseReference.POLICIES, default="fail")
    d.add_argument("--reference-dist", help="distribution config (sampler mode)")
    d.add_argument("--llr-model", help="llr model config for cusum")
    d.add_argument("--trace", help="write n,v,z per step as CSV")
    seeded(d)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="Monte Carlo ARL2FA and delay estimates")
    e.add_argument("--config")
    e.add_argument("--task", help="task number(s) 1..4, comma separated")
    e.add_argument("--reps", type=int)
    e.add_argument("--thresholds", help="comma-separated threshold grid")
    e.add_argument("--delta", type=float)
    e.add_argument("--out")
    e.add_argument("--max-steps", type=int)
    e.add_argument("--half-width", type=float, help="task-4 uniform half-width override")
    e.add_argument("--threads", type=int)
    e.add_argument("--detector", choices=("cusum", "kcusum"))
    seeded(e)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bounds", help="false-alarm/delay trade-off curve as CSV")
    b.add_argument("--delta", type=float)
    b.add_argument("--k-sup", type=float)
    b.add_argument("--mmd2", type=float)
    b.add_argument("--targets", help="a:b:log[:N], a:b:lin[:N], a:b:int or a comma list")
    b.add_argument("--out")
    b.add_argument("--fig3", action="store_true", help="mmd2=1/6, delta=2^-5, k_sup=0.5")
    b.set_defaults(func=cmd_bounds)

    g = sub.add_parser("generate", help="write a synthetic stream with an optional change")
    g.add_argument("--task", type=int, choices=(1, 2, 3, 4))
    g.add_argument("--variance-change-1d", action="store_true", help="N(1,1) -> N(1,4) in one dimension")
    g.add_argument("--pre-dist")
    g.add_argument("--post-dist")
    g.add_argument("--half-width", type=float)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--change-at", type=int)
    g.add_argument("--format", choices=("csv", "ndjson"))
    g.add_argument("--out")
    seeded(g)
    g.set_defaults(func=cmd_generate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else 0
    try:
        return args.func(args)
    except CliError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except UndetectableChangeError as exc:
        print(f"error: change not detectable: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (KcusumError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
