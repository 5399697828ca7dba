"""MMD building blocks: the four-point statistic, its shifted form, the
linear-time estimator and a Monte Carlo estimate of the squared MMD."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Sequence

import numpy as np

from kcusum.distributions import Distribution, make_rng
from kcusum.errors import ConfigError, InputError
from kcusum.kernels import ArrayLike, KernelSpec, as_observation, paired_kernel

# Stream-key namespace for oracle chunks, keeps them apart from harness streams.
ORACLE_STREAM = 7
ORACLE_CHUNK = 1 << 16


class PairBlock(NamedTuple):
    """Two consecutive monitored observations and two reference samples."""

    x0: ArrayLike
    x1: ArrayLike
    y0: ArrayLike
    y1: ArrayLike


def g_batch(spec: KernelSpec, x0, x1, y0, y1) -> np.ndarray:
    """Row-wise ``k(x0,x1) + k(y0,y1) - k(x0,y1) - k(x1,y0)`` on ``(m, dim)`` arrays."""
    return (
        paired_kernel(spec, x0, x1)
        + paired_kernel(spec, y0, y1)
        - paired_kernel(spec, x0, y1)
        - paired_kernel(spec, x1, y0)
    )


def _block_arrays(block: PairBlock) -> list[np.ndarray]:
    x0 = as_observation(block.x0)
    rest = [as_observation(v, dim=x0.shape[0]) for v in (block.x1, block.y0, block.y1)]
    return [a[None, :] for a in (x0, *rest)]


def g_statistic(spec: KernelSpec, block: PairBlock) -> float:
    """Four-point MMD statistic of one block; its mean over blocks is ``d_k^2``."""
    return float(g_batch(spec, *_block_arrays(block))[0])


def check_delta(delta: float) -> float:
    if not (delta > 0 and math.isfinite(delta)):
        raise ConfigError(f"delta must be positive, got {delta}")
    return float(delta)


def g_delta(spec: KernelSpec, block: PairBlock, delta: float) -> float:
    """``g_statistic(spec, block) - delta``; the KCUSUM increment."""
    check_delta(delta)
    return g_statistic(spec, block) - delta


def rho_linear(spec: KernelSpec, X: Sequence[ArrayLike], Y: Sequence[ArrayLike]) -> float:
    """Linear-time unbiased estimate of ``d_k^2`` from paired samples.

    Averages ``g`` over the disjoint consecutive blocks
    ``((X[2i], X[2i+1]), (Y[2i], Y[2i+1]))``. An odd trailing element is
    dropped. The sum runs left to right so results are reproducible.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n != Y.shape[0]:
        raise InputError(f"X and Y must have equal length, got {n} and {Y.shape[0]}")
    if n < 2:
        raise InputError("rho_linear needs at least two observations per sample")
    if X.shape[1] != Y.shape[1]:
        raise InputError("X and Y have different dimensions")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InputError("samples contain NaN or infinite values")
    m = n // 2
    g = g_batch(spec, X[0 : 2 * m : 2], X[1 : 2 * m : 2], Y[0 : 2 * m : 2], Y[1 : 2 * m : 2])
    total = 0.0
    for v in g.tolist():
        total += v
    return total / m


def _oracle_chunk(spec: KernelSpec, p: Distribution, q: Distribution, seed: int, c: int, m: int):
    rng = make_rng(seed, ORACLE_STREAM, c)
    # Six independent samples: (x, x') for E k(p,p), (y, y') for E k(q,q), (x'', y'') for the cross term.
    xa, xb = p.sample(rng, m), p.sample(rng, m)
    ya, yb = q.sample(rng, m), q.sample(rng, m)
    xc, yc = p.sample(rng, m), q.sample(rng, m)
    out = []
    for vals in (paired_kernel(spec, xa, xb), paired_kernel(spec, ya, yb), paired_kernel(spec, xc, yc)):
        out.append((float(np.sum(vals)), float(np.sum(vals * vals))))
    return out


def mmd2_oracle(
    spec: KernelSpec,
    p: Distribution,
    q: Distribution,
    n_samples: int = 10**6,
    seed: int = 0,
    workers: int = 1,
) -> tuple[float, float]:
    """Monte Carlo estimate of ``E k(x,x') + E k(y,y') - 2 E k(x,y)`` and its standard error.

    Each expectation is estimated from its own independent sample pairs.
    Work is split into fixed chunks with one random stream per chunk, and
    chunk results are reduced in index order, so the output depends only on
    ``seed`` and ``n_samples``, not on ``workers``.
    """
    if n_samples < 10**4:
        raise ConfigError("mmd2_oracle needs n_samples >= 10^4")
    if p.dim != q.dim:
        raise InputError("p and q must share a dimension")
    sizes = [ORACLE_CHUNK] * (n_samples // ORACLE_CHUNK)
    if n_samples % ORACLE_CHUNK:
        sizes.append(n_samples % ORACLE_CHUNK)
    jobs = [(spec, p, q, seed, c, m) for c, m in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _oracle_chunk(*a), jobs))
    else:
        parts = [_oracle_chunk(*a) for a in jobs]

    n = float(n_samples)
    means, variances = [], []
    for term in range(3):
        s = s2 = 0.0
        for part in parts:
            s += part[term][0]
            s2 += part[term][1]
        mean = s / n
        means.append(mean)
        variances.append(max(s2 - n * mean * mean, 0.0) / (n - 1.0))
    estimate = means[0] + means[1] - 2.0 * means[2]
    std_error = math.sqrt((variances[0] + variances[1] + 4.0 * variances[2]) / n)
    return estimate, std_error
