"""Closed-form performance bounds for CUSUM and KCUSUM, plus the random-walk
facts they rest on (a supermartingale tail bound and Lorden's first-passage
bound) in directly testable form."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from kcusum.errors import ConfigError, InputError, UndetectableChangeError


@dataclass(frozen=True)
class BoundInputs:
    """Quantities the bounds are stated in.

    Only the fields a given bound uses need to be set: CUSUM uses ``h``,
    ``kl_forward`` (KL of the post- from the pre-change law) and
    ``second_moment_pos`` (``E[(llr^+)^2]`` after the change); KCUSUM uses
    ``h``, ``delta``, ``k_sup`` and ``mmd2``.
    """

    h: float = 0.0
    delta: float | None = None
    k_sup: float | None = None
    mmd2: float | None = None
    kl_forward: float | None = None
    second_moment_pos: float | None = None


@dataclass(frozen=True)
class TradeoffPoint:
    arl2fa_target: float
    h_required: float
    esadd_bound: float


@dataclass
class TradeoffCurve:
    points: list[TradeoffPoint]
    warnings: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["arl2fa_target,h_required,esadd_bound"]
        for p in self.points:
            lines.append(f"{p.arl2fa_target!r},{p.h_required!r},{p.esadd_bound!r}")
        return "\n".join(lines) + "\n"


def _check_h(h: float) -> None:
    if not h >= 0:
        raise ConfigError(f"threshold must be >= 0, got {h}")


def cusum_arl2fa_lower(h: float) -> float:
    """CUSUM false-alarm bound: ``ARL2FA >= exp(h)``."""
    _check_h(h)
    return math.exp(h)


def cusum_esadd_upper(inputs: BoundInputs) -> float:
    """CUSUM delay bound ``h / KL + E[(llr^+)^2] / KL^2``."""
    kl = inputs.kl_forward
    if kl is None or not kl > 0:
        raise ConfigError("cusum_esadd_upper needs kl_forward > 0")
    m2 = inputs.second_moment_pos
    if m2 is None or not (m2 >= 0 and math.isfinite(m2)):
        raise ConfigError("cusum_esadd_upper needs a finite second_moment_pos >= 0")
    _check_h(inputs.h)
    return inputs.h / kl + m2 / (kl * kl)


def kcusum_rate_r(delta: float, k_sup: float) -> float:
    """Exponent ``r = log(1 + delta / (4 k_sup)) / (4 k_sup)`` with ``M(r) <= 1`` pre-change."""
    if not (delta > 0 and k_sup > 0):
        raise ConfigError("kcusum_rate_r needs delta > 0 and k_sup > 0")
    c = 4.0 * k_sup
    return math.log1p(delta / c) / c


def _check_kcusum(delta: float, k_sup: float) -> None:
    if not (delta > 0 and k_sup > 0):
        raise ConfigError("KCUSUM bounds need delta > 0 and k_sup > 0")
    if delta >= 2 * k_sup:
        raise ConfigError(f"KCUSUM bounds need delta < 2 k_sup, got delta={delta}, k_sup={k_sup}")


def kcusum_arl2fa_lower(h: float, delta: float, k_sup: float) -> float:
    """KCUSUM false-alarm bound ``2 exp(r h)``."""
    _check_h(h)
    _check_kcusum(delta, k_sup)
    return 2.0 * math.exp(kcusum_rate_r(delta, k_sup) * h)


def kcusum_esadd_upper(inputs: BoundInputs, nonnegative_kernel: bool = True) -> float:
    """KCUSUM delay bound ``2h/(mmd2 - delta) + C k_sup^2 / (mmd2 - delta)^2``.

    ``C = 8`` uses ``g_delta^+ <= 2 k_sup``, valid for nonnegative kernels;
    other bounded kernels only have ``|g_delta| <= 4 k_sup`` and get ``C = 16``.
    """
    delta, k_sup, mmd2 = inputs.delta, inputs.k_sup, inputs.mmd2
    if delta is None or k_sup is None or mmd2 is None:
        raise ConfigError("kcusum_esadd_upper needs delta, k_sup and mmd2")
    _check_h(inputs.h)
    _check_kcusum(delta, k_sup)
    gap = mmd2 - delta
    if not gap > 0:
        raise UndetectableChangeError(
            f"mmd2={mmd2} <= delta={delta}: the change is not detectable at this delta"
        )
    const = 8.0 if nonnegative_kernel else 16.0
    return 2.0 * inputs.h / gap + const * k_sup * k_sup / (gap * gap)


def supermartingale_tail_bound(q: float, h: float) -> float:
    """``P(sup_n S_n > h) <= exp(-q h)`` for a walk whose increments have ``M(q) <= 1``."""
    if not q > 0:
        raise ConfigError("q must be positive")
    _check_h(h)
    return math.exp(-q * h)


def empirical_mgf(samples: Sequence[float] | np.ndarray, q: float) -> float:
    a = np.asarray(samples, dtype=np.float64)
    with np.errstate(over="ignore"):
        return float(np.mean(np.exp(q * a)))


def find_q(
    samples: Sequence[float] | np.ndarray,
    tolerance: float = 1e-3,
    q_max: float = 20.0,
    iterations: int = 100,
) -> float | None:
    """Largest ``q`` in ``(0, q_max]`` with empirical ``M(q) <= 1 - tolerance``.

    The empirical MGF is convex with ``M(0) = 1``, so the feasible set is an
    interval. Its right end is found by locating the minimizer with a
    golden-section search and bisecting between it and ``q_max``. Returns
    ``None`` when no feasible ``q`` exists (e.g. non-negative mean).
    """
    a = np.asarray(samples, dtype=np.float64)
    if a.size == 0:
        raise InputError("find_q needs at least one sample")
    target = 1.0 - tolerance

    def m(q: float) -> float:
        return empirical_mgf(a, q)

    if m(q_max) <= target:
        return q_max
    if float(np.mean(a)) >= 0:
        return None
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, q_max
    c, d = hi - inv_phi * (hi - lo), lo + inv_phi * (hi - lo)
    mc, md = m(c), m(d)
    for _ in range(iterations):
        if mc < md:
            hi, d, md = d, c, mc
            c = hi - inv_phi * (hi - lo)
            mc = m(c)
        else:
            lo, c, mc = c, d, md
            d = lo + inv_phi * (hi - lo)
            md = m(d)
    q_min = (lo + hi) / 2.0
    if m(q_min) > target:
        return None
    lo, hi = q_min, q_max  # m(lo) <= target < m(hi)
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        if m(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


def lorden_first_passage_upper(
    mu: float, second_moment_pos: float, b: float, a: float = 0.0, alpha: float = 0.0
) -> float:
    """Lorden's bound on the exit time of a positive-drift walk from ``[a, b]``.

    ``E[T] <= ((1 - alpha) b + alpha a) / mu + E[(a_1^+)^2] / mu^2`` where
    ``alpha`` is the probability of leaving through ``a``. The one-sided
    case (exit above ``b`` only) is ``a = 0, alpha = 0``.
    """
    if not mu > 0:
        raise ConfigError(f"mu must be positive, got {mu}")
    if not a <= 0 <= b:
        raise ConfigError("need a <= 0 <= b")
    if not 0 <= alpha <= 1:
        raise ConfigError("alpha must lie in [0, 1]")
    if not second_moment_pos >= 0:
        raise ConfigError("second_moment_pos must be >= 0")
    return ((1.0 - alpha) * b + alpha * a) / mu + second_moment_pos / (mu * mu)


def required_threshold(target: float, delta: float, k_sup: float) -> float:
    """Smallest ``h`` whose KCUSUM false-alarm bound reaches ``target`` (0 below 2)."""
    _check_kcusum(delta, k_sup)
    if target <= 2.0:
        return 0.0
    return math.log(target / 2.0) / kcusum_rate_r(delta, k_sup)


def tradeoff_curve(
    delta: float,
    k_sup: float,
    mmd2: float,
    arl2fa_targets: Sequence[float],
    nonnegative_kernel: bool = True,
) -> TradeoffCurve:
    """Guaranteed delay as a function of the false-alarm target.

    For each target the smallest threshold meeting it under
    :func:`kcusum_arl2fa_lower` is plugged into :func:`kcusum_esadd_upper`.
    Targets below 2 are clamped to ``h = 0`` and noted in ``warnings``.
    """
    warnings = []
    points = []
    for x in sorted(float(t) for t in arl2fa_targets):
        if x < 2.0:
            warnings.append(f"target {x!r} is below the minimum bound 2; clamped to h=0")
        h = required_threshold(x, delta, k_sup)
        esadd = kcusum_esadd_upper(BoundInputs(h=h, delta=delta, k_sup=k_sup, mmd2=mmd2), nonnegative_kernel)
        points.append(TradeoffPoint(x, h, esadd))
    return TradeoffCurve(points, warnings)


def second_moment_positive(samples: Sequence[float] | np.ndarray) -> tuple[float, float]:
    """Monte Carlo ``E[(a^+)^2]`` with its standard error."""
    a = np.asarray(samples, dtype=np.float64)
    if a.size < 2:
        raise InputError("need at least two samples")
    sq = np.maximum(a, 0.0) ** 2
    return float(np.mean(sq)), float(np.std(sq, ddof=1) / math.sqrt(a.size))
