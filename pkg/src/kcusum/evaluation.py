"""Monte Carlo estimation of run length to false alarm and detection delay.

Every replicate draws from its own random streams keyed by
``(master_seed, task, kind, slot, replicate, purpose)``:

* ``kind`` is 0 for no-change runs (false alarm) and 1 for change-at-1 runs (delay);
* ``slot`` is 0 when the whole threshold grid shares one trajectory, or the
  threshold index when thresholds are run independently;
* ``purpose`` is 0 for monitored observations and 1 for reference samples.

Results are therefore identical for any worker count and adding replicates
never changes the earlier ones. Delay is the alarm time on a stream that is
post-change from the first observation (``E_1[T]``), which is bounded above
by the worst-case delay bounds.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from kcusum import __version__
from kcusum.detectors import cusum_alarm_times, kcusum_alarm_times
from kcusum.distributions import (
    TASK_DELTAS,
    TASK_NAMES,
    Distribution,
    GaussianLLR,
    SampleStream,
    distribution_to_config,
    make_rng,
    task_laws,
)
from kcusum.errors import ConfigError, KcusumError
from kcusum.kernels import KernelSpec, gaussian
from kcusum.mmd import check_delta, mmd2_oracle

log = logging.getLogger(__name__)

NO_CHANGE = 0
CHANGE_AT_ONE = 1
DEFAULT_MAX_STEPS = 10**6
CLEAN_CENSORED_FRACTION = 0.01
# Replicates per job handed to a worker process.
JOB_SIZE = 25


@dataclass(frozen=True)
class CusumSpec:
    """CUSUM driven by a vectorized log-likelihood-ratio model."""

    llr: Callable[[np.ndarray], np.ndarray]

    name = "cusum"


@dataclass(frozen=True)
class KcusumSpec:
    kernel: KernelSpec = field(default_factory=gaussian)
    delta: float = 2.0**-7

    name = "kcusum"

    def __post_init__(self) -> None:
        check_delta(self.delta)


DetectorSpec = Union[CusumSpec, KcusumSpec]


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    pre: Distribution
    post: Distribution
    detector: DetectorSpec
    thresholds: tuple[float, ...]
    n_reps: int = 5000
    max_steps: int = DEFAULT_MAX_STEPS
    master_seed: int = 0
    task_code: int = 0
    shared_trajectory: bool = True

    def __post_init__(self) -> None:
        hs = tuple(float(h) for h in self.thresholds)
        object.__setattr__(self, "thresholds", hs)
        if not hs:
            raise ConfigError("thresholds must be non-empty")
        if any(b < a for a, b in zip(hs, hs[1:])):
            raise ConfigError("thresholds must be sorted ascending")
        if hs[0] < 0:
            raise ConfigError("thresholds must be >= 0")
        if self.n_reps < 1:
            raise ConfigError("n_reps must be >= 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.pre.dim != self.post.dim:
            raise ConfigError("pre- and post-change laws must share a dimension")

    def echo(self) -> dict:
        det = {"name": self.detector.name}
        if isinstance(self.detector, KcusumSpec):
            det.update(
                kernel=self.detector.kernel.family,
                sigma2=self.detector.kernel.sigma2,
                delta=self.detector.delta,
            )
        else:
            det["llr"] = type(self.detector.llr).__name__
        return {
            "task": self.task,
            "task_code": self.task_code,
            "pre": distribution_to_config(self.pre),
            "post": distribution_to_config(self.post),
            "detector": det,
            "thresholds": list(self.thresholds),
            "n_reps": self.n_reps,
            "max_steps": self.max_steps,
            "master_seed": self.master_seed,
            "shared_trajectory": self.shared_trajectory,
        }


def task_config(
    task: int,
    thresholds: Sequence[float],
    n_reps: int = 5000,
    master_seed: int = 0,
    delta: float | None = None,
    detector: str = "kcusum",
    sigma2: float = 1.0,
    max_steps: int = DEFAULT_MAX_STEPS,
    half_width: float | None = None,
    component_mode: str = "per_observation",
    shared_trajectory: bool = True,
) -> ExperimentConfig:
    """Experiment for one of the four benchmark tasks with its default delta."""
    pre, post = task_laws(task, half_width=half_width, component_mode=component_mode)
    if detector == "kcusum":
        spec: DetectorSpec = KcusumSpec(gaussian(sigma2), TASK_DELTAS[task] if delta is None else delta)
    elif detector == "cusum":
        if not hasattr(post, "logpdf"):
            raise ConfigError(f"task {task} has no closed-form density for CUSUM")
        spec = CusumSpec(GaussianLLR(pre, post))
    else:
        raise ConfigError(f"unknown detector {detector!r}")
    return ExperimentConfig(
        task=TASK_NAMES[task],
        pre=pre,
        post=post,
        detector=spec,
        thresholds=tuple(thresholds),
        n_reps=n_reps,
        max_steps=max_steps,
        master_seed=master_seed,
        task_code=task,
        shared_trajectory=shared_trajectory,
    )


@dataclass(frozen=True)
class ThresholdEstimate:
    """Run-length summary at one threshold.

    ``mean``/``se`` are over uncensored replicates, ``se`` being the sample
    standard deviation over the square root of that count.
    ``mean_censored_at_horizon`` counts censored runs as ``max_steps`` and is
    biased low. ``clean`` means fewer than 1% of replicates were censored.
    """

    h: float
    mean: float | None
    se: float | None
    n_uncensored: int
    censored: int
    mean_censored_at_horizon: float
    clean: bool
    lower_bound_only: bool


def summarize(h: float, times: Sequence[int | None], max_steps: int) -> ThresholdEstimate:
    done = np.array([t for t in times if t is not None], dtype=np.float64)
    censored = len(times) - done.size
    with_horizon = np.concatenate([done, np.full(censored, float(max_steps))])
    mean = float(np.mean(done)) if done.size else None
    se = float(np.std(done, ddof=1) / math.sqrt(done.size)) if done.size > 1 else (0.0 if done.size else None)
    return ThresholdEstimate(
        h=h,
        mean=mean,
        se=se,
        n_uncensored=int(done.size),
        censored=int(censored),
        mean_censored_at_horizon=float(np.mean(with_horizon)),
        clean=censored < CLEAN_CENSORED_FRACTION * len(times),
        lower_bound_only=done.size == 0,
    )


def replicate_alarm_times(
    config: ExperimentConfig, kind: int, slot: int, rep: int, thresholds: Sequence[float]
) -> list[int | None]:
    """Alarm times of one replicate for a sorted threshold list."""
    key = (config.task_code, kind, slot, rep)
    obs_law = config.pre if kind == NO_CHANGE else config.post
    stream = SampleStream(obs_law, make_rng(config.master_seed, *key, 0))
    det = config.detector
    if isinstance(det, KcusumSpec):
        reference = SampleStream(config.pre, make_rng(config.master_seed, *key, 1))
        return kcusum_alarm_times(det.kernel, det.delta, stream, reference, thresholds, config.max_steps)
    return cusum_alarm_times(det.llr, stream, thresholds, config.max_steps)


def _job(config: ExperimentConfig, kind: int, slot: int, reps: range, thresholds: tuple) -> list:
    return [replicate_alarm_times(config, kind, slot, r, thresholds) for r in reps]


def _alarm_time_table(config: ExperimentConfig, kind: int, threads: int) -> list[list[int | None]]:
    """``table[i][r]`` = alarm time of replicate ``r`` at threshold ``i``."""
    if config.shared_trajectory:
        groups = [(0, config.thresholds, list(range(len(config.thresholds))))]
    else:
        groups = [(i, (h,), [i]) for i, h in enumerate(config.thresholds)]
    jobs = []
    for slot, hs, idx in groups:
        for start in range(0, config.n_reps, JOB_SIZE):
            reps = range(start, min(start + JOB_SIZE, config.n_reps))
            jobs.append(((config, kind, slot, reps, hs), idx))
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            outputs = list(pool.map(_job, *zip(*(args for args, _ in jobs))))
    else:
        outputs = [_job(*args) for args, _ in jobs]
    table: list[list[int | None]] = [[] for _ in config.thresholds]
    for (_, idx), rows in zip(jobs, outputs):
        for row in rows:
            for i, t in zip(idx, row):
                table[i].append(t)
    return table


def _estimate(config: ExperimentConfig, kind: int, threads: int) -> list[ThresholdEstimate]:
    table = _alarm_time_table(config, kind, threads)
    out = [summarize(h, times, config.max_steps) for h, times in zip(config.thresholds, table)]
    for est in out:
        if est.lower_bound_only:
            log.warning("all replicates censored at h=%s; estimate is a lower bound only", est.h)
    return out


def estimate_arl2fa(config: ExperimentConfig, threads: int = 1) -> list[ThresholdEstimate]:
    """Mean alarm time on streams with no change, per threshold."""
    return _estimate(config, NO_CHANGE, threads)


def check_detectability(config: ExperimentConfig, n_samples: int = 10**5) -> tuple[float, float] | None:
    """Oracle ``mmd2`` of a KCUSUM experiment; warns when ``mmd2 <= delta``."""
    det = config.detector
    if not isinstance(det, KcusumSpec):
        return None
    est, se = mmd2_oracle(det.kernel, config.pre, config.post, n_samples, seed=config.master_seed)
    if est <= det.delta:
        warnings.warn(
            f"{config.task}: estimated mmd2 {est:.5g} <= delta {det.delta:.5g}; "
            "the change is not detectable and delays will be censored",
            stacklevel=2,
        )
    return est, se


def estimate_delay(config: ExperimentConfig, threads: int = 1, check: bool = True) -> list[ThresholdEstimate]:
    """Mean alarm time on streams that are post-change from the first observation."""
    if check:
        check_detectability(config)
    return _estimate(config, CHANGE_AT_ONE, threads)


@dataclass
class TaskResult:
    task: str
    delta: float | None
    arl2fa: list[ThresholdEstimate] = field(default_factory=list)
    delay: list[ThresholdEstimate] = field(default_factory=list)
    mmd2: float | None = None
    mmd2_se: float | None = None
    error: str | None = None


@dataclass
class EvalReport:
    tasks: list[TaskResult]
    configs: list[dict]
    version: str = __version__
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "configs": self.configs,
            "tasks": [asdict(t) for t in self.tasks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        lines = ["task,delta,h,arl2fa,arl2fa_se,delay,delay_se,censored"]
        for t in self.tasks:
            for a, d in zip(t.arl2fa, t.delay):
                cells = [t.task, _fmt(t.delta), _fmt(a.h), _fmt(a.mean), _fmt(a.se), _fmt(d.mean), _fmt(d.se)]
                cells.append(str(a.censored + d.censored))
                lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike, stem: str = "report") -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>.csv`` plus a ``<stem>.timing.json`` sidecar.

        The JSON and CSV files hold no timing, so identical configs give
        byte-identical files.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path, csv_path = out / f"{stem}.json", out / f"{stem}.csv"
        json_path.write_text(self.to_json())
        csv_path.write_text(self.to_csv())
        (out / f"{stem}.timing.json").write_text(json.dumps({"wall_time_s": self.wall_time}) + "\n")
        return json_path, csv_path


def _fmt(x: float | None) -> str:
    return "" if x is None else format(x, ".17g")


def run_experiment(config: ExperimentConfig, threads: int = 1, oracle_samples: int = 10**5) -> TaskResult:
    det = config.detector
    result = TaskResult(config.task, det.delta if isinstance(det, KcusumSpec) else None)
    if isinstance(det, KcusumSpec):
        result.mmd2, result.mmd2_se = check_detectability(config, oracle_samples)
    result.arl2fa = estimate_arl2fa(config, threads)
    result.delay = estimate_delay(config, threads, check=False)
    return result


def run_task_suite(
    tasks: Sequence[int],
    thresholds: Sequence[float] | dict[int, Sequence[float]],
    n_reps: int = 5000,
    master_seed: int = 0,
    deltas: dict[int, float] | None = None,
    threads: int = 1,
    max_steps: int = DEFAULT_MAX_STEPS,
    half_width: float | None = None,
    oracle_samples: int = 10**5,
) -> EvalReport:
    """KCUSUM sweep over benchmark tasks: (ARL2FA, delay) at every threshold.

    ``thresholds`` is one grid for all tasks or a per-task mapping; ``deltas``
    overrides the per-task defaults. A task that fails is recorded with its
    error and the suite moves on.
    """
    started = time.perf_counter()
    results, configs = [], []
    for task in tasks:
        delta = (deltas or {}).get(task, TASK_DELTAS.get(task))
        hs = thresholds[task] if isinstance(thresholds, dict) else thresholds
        try:
            config = task_config(
                task, hs, n_reps, master_seed, delta, max_steps=max_steps, half_width=half_width
            )
        except KcusumError as exc:
            results.append(TaskResult(TASK_NAMES.get(task, str(task)), delta, error=str(exc)))
            configs.append({"task": task, "error": str(exc)})
            continue
        configs.append(config.echo())
        try:
            results.append(run_experiment(config, threads, oracle_samples))
        except (KcusumError, ValueError, RuntimeError) as exc:
            log.error("task %s failed: %s", task, exc)
            results.append(TaskResult(config.task, delta, error=str(exc)))
    report = EvalReport(results, configs)
    report.wall_time = time.perf_counter() - started
    return report
