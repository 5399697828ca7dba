"""CUSUM and kernel CUSUM as incremental state machines.

Both detectors keep a reflected statistic ``Z_n = max(0, Z_{n-1} + v_n)``.
CUSUM alarms when ``Z_n >= h``; KCUSUM alarms when ``Z_n > h`` and only
updates at even ``n``, pairing ``(x_{n-1}, x_n)`` with two reference draws.
A detector freezes after its alarm; call ``reset()`` to reuse it.

The ``*_alarm_times`` functions compute stopping times for a whole sorted
threshold grid from one trajectory. They use the same arithmetic as the
step functions, so they agree exactly with stepping the detectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import accumulate
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from kcusum.distributions import Distribution, SampleStream
from kcusum.errors import ConfigError, DataError, InputError, UsageError
from kcusum.kernels import KernelSpec, as_observation
from kcusum.mmd import check_delta, g_batch


@dataclass(frozen=True)
class DetectorState:
    z: float = 0.0
    n: int = 0
    h: float = 0.0
    alarmed: bool = False
    alarm_time: int | None = None


@dataclass(frozen=True)
class AlarmEvent:
    time: int
    statistic_at_alarm: float
    detector_id: str


def _reflect(z: float, v: float) -> float:
    return max(0.0, z + v)


def cusum_step(state: DetectorState, llr_value: float) -> DetectorState:
    """Advance CUSUM by one log-likelihood-ratio increment."""
    if state.alarmed:
        raise UsageError("detector has already alarmed; reset it before stepping")
    if not math.isfinite(llr_value):
        raise InputError(f"llr value must be finite, got {llr_value}")
    z = _reflect(state.z, float(llr_value))
    n = state.n + 1
    alarmed = z >= state.h
    return DetectorState(z, n, state.h, alarmed, n if alarmed else None)


# -- reference sources -------------------------------------------------------


class ReferenceSource(Protocol):
    def draw(self) -> np.ndarray: ...


class SamplerReference:
    """Live reference sampler: one fresh draw from the pre-change law per call."""

    def __init__(self, dist: Distribution, rng: np.random.Generator):
        self.stream = SampleStream(dist, rng)

    @property
    def dim(self) -> int:
        return self.stream.dim

    def draw(self) -> np.ndarray:
        return self.stream.next()

    def take(self, m: int) -> np.ndarray:
        return self.stream.take(m)


class DatabaseReference:
    """Finite database of pre-change samples.

    Policies: ``"fail"`` raises :class:`DataError` when exhausted, ``"cyclic"``
    wraps around, ``"resample"`` draws indices uniformly with replacement
    (needs ``rng``).
    """

    POLICIES = ("fail", "cyclic", "resample")

    def __init__(self, samples, policy: str = "fail", rng: np.random.Generator | None = None):
        data = np.asarray(samples, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] == 0:
            raise InputError("reference database must be a non-empty list of observations")
        if not np.all(np.isfinite(data)):
            raise InputError("reference database contains non-finite values")
        if policy not in self.POLICIES:
            raise ConfigError(f"unknown database policy {policy!r}")
        if policy == "resample" and rng is None:
            raise ConfigError("the resample policy needs a random generator")
        self.data = data
        self.policy = policy
        self.rng = rng
        self.cursor = 0

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def draw(self) -> np.ndarray:
        if self.policy == "resample":
            return self.data[int(self.rng.integers(0, self.data.shape[0]))]
        if self.cursor >= self.data.shape[0]:
            if self.policy == "fail":
                raise DataError(f"reference database exhausted after {self.cursor} samples")
            self.cursor = 0
        out = self.data[self.cursor]
        self.cursor += 1
        return out


@dataclass
class KcusumConfig:
    """KCUSUM parameters. ``reference`` is a stateful source of pre-change samples."""

    kernel: KernelSpec
    delta: float
    h: float
    reference: ReferenceSource

    def __post_init__(self) -> None:
        check_delta(self.delta)
        if not self.h >= 0:
            raise ConfigError(f"threshold must be >= 0, got {self.h}")
        if self.kernel.nonnegative and self.delta >= 2 * self.kernel.sup_bound:
            raise ConfigError("delta >= 2 * sup_bound: no change can ever be detected")
        if not self.kernel.nonnegative and self.delta >= 4 * self.kernel.sup_bound:
            raise ConfigError("delta >= 4 * sup_bound: no change can ever be detected")


Pending = tuple  # (x_prev, y_prev) held between an odd and the following even step


def kcusum_step(
    state: DetectorState,
    config: KcusumConfig,
    x_n,
    pending: Pending | None,
) -> tuple[DetectorState, Pending | None, AlarmEvent | None, float]:
    """Advance KCUSUM by one observation.

    Draws one reference sample per observation. Returns the new state, the
    new pending buffer, an alarm event if one fired, and the increment
    ``v_n`` (0 at odd ``n``).
    """
    if state.alarmed:
        raise UsageError("detector has already alarmed; reset it before stepping")
    x = as_observation(x_n)
    y = as_observation(config.reference.draw(), dim=x.shape[0])
    n = state.n + 1
    if n % 2 == 1:
        return DetectorState(state.z, n, state.h, False, None), (x, y), None, 0.0
    x_prev, y_prev = pending
    if x_prev.shape[0] != x.shape[0]:
        raise InputError("dimension changed mid-stream")
    v = float(g_batch(config.kernel, x_prev[None], x[None], y_prev[None], y[None])[0]) - config.delta
    z = _reflect(state.z, v)
    if z > state.h:
        new = DetectorState(z, n, state.h, True, n)
        return new, None, AlarmEvent(n, z, "kcusum"), v
    return DetectorState(z, n, state.h, False, None), None, None, v


# -- detector objects ------------------------------------------------------------


class CusumDetector:
    """Page's CUSUM driven by a log-likelihood-ratio model.

    Args:
        llr: callable mapping an ``(m, dim)`` array of observations to ``m``
            log-likelihood ratios.
        h: threshold; alarm when the statistic reaches ``h``.
    """

    detector_id = "cusum"

    def __init__(self, llr: Callable[[np.ndarray], np.ndarray], h: float):
        if not h >= 0:
            raise ConfigError(f"threshold must be >= 0, got {h}")
        self.llr = llr
        self.h = float(h)
        self.state = DetectorState(h=self.h)
        self.last_increment = 0.0

    def reset(self) -> None:
        self.state = DetectorState(h=self.h)

    @property
    def statistic(self) -> float:
        return self.state.z

    @property
    def alarmed(self) -> bool:
        return self.state.alarmed

    def update_llr(self, value: float) -> AlarmEvent | None:
        self.state = cusum_step(self.state, value)
        self.last_increment = float(value)
        if self.state.alarmed:
            return AlarmEvent(self.state.n, self.state.z, self.detector_id)
        return None

    def update(self, x) -> AlarmEvent | None:
        obs = as_observation(x)
        return self.update_llr(float(self.llr(obs[None, :])[0]))


class KernelCusumDetector:
    """Kernel CUSUM; needs only observations and pre-change reference samples."""

    detector_id = "kcusum"

    def __init__(self, config: KcusumConfig):
        self.config = config
        self.state = DetectorState(h=float(config.h))
        self.pending: Pending | None = None
        self.last_increment = 0.0

    def reset(self) -> None:
        self.state = DetectorState(h=float(self.config.h))
        self.pending = None

    @property
    def statistic(self) -> float:
        return self.state.z

    @property
    def alarmed(self) -> bool:
        return self.state.alarmed

    def update(self, x) -> AlarmEvent | None:
        self.state, self.pending, event, self.last_increment = kcusum_step(
            self.state, self.config, x, self.pending
        )
        return event


class Detector(Protocol):
    state: DetectorState

    def update(self, x) -> AlarmEvent | None: ...


def run_to_alarm(detector: Detector, stream: Iterable, max_steps: int) -> AlarmEvent | None:
    """Feed ``stream`` to ``detector`` until it alarms or ``max_steps`` are used.

    Returns ``None`` for a censored run (stream ended or horizon reached).
    """
    if max_steps < 1:
        raise ConfigError("max_steps must be >= 1")
    # range first so the stream is never read past the horizon
    for _, x in zip(range(max_steps), stream):
        event = detector.update(x)
        if event is not None:
            return event
    return None


# -- whole-grid stopping times from one trajectory ---------------------------------

_FIRST_CHUNK = 64
_MAX_CHUNK = 8192


def _scan_thresholds(
    increments_in_chunks: Iterable[np.ndarray],
    thresholds: Sequence[float],
    inclusive: bool,
) -> list[int | None]:
    """First 1-based index where the reflected walk crosses each threshold.

    Consumes chunks lazily and stops as soon as every threshold is crossed.
    """
    hs = list(thresholds)
    if any(b < a for a, b in zip(hs, hs[1:])):
        raise ConfigError("thresholds must be sorted ascending")
    out: list[int | None] = [None] * len(hs)
    k = 0
    z = 0.0
    offset = 0
    for chunk in increments_in_chunks:
        zs = np.fromiter(accumulate(chunk.tolist(), _reflect, initial=z), float, len(chunk) + 1)[1:]
        z = float(zs[-1])
        while k < len(hs):
            hit = zs >= hs[k] if inclusive else zs > hs[k]
            if not hit.any():
                break
            out[k] = offset + int(np.argmax(hit)) + 1
            k += 1
        if k == len(hs):
            break
        offset += len(chunk)
    return out


def _chunk_sizes(limit: int):
    size, used = _FIRST_CHUNK, 0
    while used < limit:
        m = min(size, limit - used)
        yield m
        used += m
        size = min(size * 2, _MAX_CHUNK)


def cusum_alarm_times(
    llr: Callable[[np.ndarray], np.ndarray],
    stream,
    thresholds: Sequence[float],
    max_steps: int,
) -> list[int | None]:
    """CUSUM alarm times for each threshold on one stream (``None`` = censored)."""

    def chunks():
        for m in _chunk_sizes(max_steps):
            yield np.asarray(llr(stream.take(m)), dtype=np.float64)

    return _scan_thresholds(chunks(), thresholds, inclusive=True)


def kcusum_block_increments(spec: KernelSpec, delta: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``g_delta`` on consecutive pairs of ``2m`` observations and ``2m`` references."""
    return g_batch(spec, x[0::2], x[1::2], y[0::2], y[1::2]) - delta


def kcusum_alarm_times(
    spec: KernelSpec,
    delta: float,
    stream,
    reference,
    thresholds: Sequence[float],
    max_steps: int,
) -> list[int | None]:
    """KCUSUM alarm times (observation indices, always even) for each threshold."""
    check_delta(delta)

    def chunks():
        for m in _chunk_sizes(max_steps // 2):
            yield kcusum_block_increments(spec, delta, stream.take(2 * m), reference.take(2 * m))

    blocks = _scan_thresholds(chunks(), thresholds, inclusive=False)
    return [None if c is None else 2 * c for c in blocks]


def reflected_walk(increments: Sequence[float], z0: float = 0.0) -> list[float]:
    """Values of ``Z_n = max(0, Z_{n-1} + v_n)`` for ``n = 1..len(increments)``."""
    return list(accumulate((float(v) for v in increments), _reflect, initial=z0))[1:]
