"""Sampleable laws, seeded random streams and the four benchmark tasks.

Random numbers come from numpy's ``PCG64`` bit generator seeded through
``SeedSequence(master_seed, spawn_key=key)``. A key is a tuple of
non-negative integers (for example ``(task, kind, slot, replicate, purpose)``)
so every simulated stream is reproducible from ``(master_seed, key)`` alone
and independent of how work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Union

import numpy as np

from kcusum.errors import ConfigError

LOG_HALF = math.log(0.5)

# Observations drawn per refill of a SampleStream. Changing this changes
# which draws a seeded stream produces; it is part of the reproducibility contract.
STREAM_BLOCK = 1024


def make_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Return a ``PCG64`` generator for the stream ``(master_seed, key)``."""
    if master_seed < 0 or any(k < 0 for k in key):
        raise ConfigError("seeds and stream keys must be non-negative integers")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def _vector(values: Any, name: str, dim: int | None = None) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{name} must be a non-empty vector")
    if dim is not None:
        if arr.size == 1:
            arr = np.full(dim, arr[0])
        elif arr.size != dim:
            raise ConfigError(f"{name} has length {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Normal law with independent components."""

    mean: tuple[float, ...]
    variances: tuple[float, ...]

    kind = "gaussian_diag"

    def __post_init__(self) -> None:
        mean = _vector(self.mean, "mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", _vector(self.variances, "variances", len(mean)))
        if min(self.variances) <= 0:
            raise ConfigError("variances must be strictly positive")

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        return np.asarray(self.mean) + z * np.sqrt(np.asarray(self.variances))

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        var = np.asarray(self.variances)
        resid = (x - np.asarray(self.mean)) ** 2 / var
        return -0.5 * (np.sum(resid, axis=-1) + np.sum(np.log(2 * np.pi * var)))


@dataclass(frozen=True)
class ComponentScaledGaussian:
    """Draw from ``base`` and multiply one component's value by ``scale_factor``.

    With ``component=None`` the scaled index is drawn uniformly for every
    observation; an integer fixes it. ``per_stream=True`` makes
    :class:`SampleStream` draw one index when the stream is created.
    """

    base: DiagonalGaussian
    scale_factor: float = 2.0
    component: int | None = None
    per_stream: bool = False

    kind = "gaussian_component_scaled"

    def __post_init__(self) -> None:
        if not math.isfinite(self.scale_factor):
            raise ConfigError("scale_factor must be finite")
        if self.component is not None and not 0 <= self.component < self.base.dim:
            raise ConfigError(f"component index {self.component} out of range")

    @property
    def dim(self) -> int:
        return self.base.dim

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = self.base.sample(rng, size)
        if self.component is None:
            idx = rng.integers(0, self.dim, size=size)
        else:
            idx = np.full(size, self.component)
        out[np.arange(size), idx] *= self.scale_factor
        return out


@dataclass(frozen=True)
class ComponentwiseUniform:
    """Independent ``Uniform[mean - half_width, mean + half_width]`` components."""

    half_width: float
    dim: int
    mean: tuple[float, ...] = field(default=())

    kind = "uniform_componentwise"

    def __post_init__(self) -> None:
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ConfigError("half_width must be positive")
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        mean = self.mean if len(self.mean) else (0.0,)
        object.__setattr__(self, "mean", _vector(mean, "mean", self.dim))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.uniform(-self.half_width, self.half_width, size=(size, self.dim))
        return np.asarray(self.mean) + u


Distribution = Union[DiagonalGaussian, ComponentScaledGaussian, ComponentwiseUniform]


class SampleStream:
    """Endless observation stream backed by one generator.

    Draws are made in fixed blocks of :data:`STREAM_BLOCK` observations, so
    the values delivered do not depend on how the consumer slices them
    (``next()`` one at a time or ``take(m)`` in batches).
    """

    def __init__(self, dist: Distribution, rng: np.random.Generator, block: int = STREAM_BLOCK):
        if isinstance(dist, ComponentScaledGaussian) and dist.per_stream and dist.component is None:
            dist = replace(dist, component=int(rng.integers(0, dist.dim)))
        self.dist = dist
        self.rng = rng
        self.block = block
        self._buf = np.empty((0, dist.dim))
        self._pos = 0
        self.consumed = 0

    @property
    def dim(self) -> int:
        return self.dist.dim

    def _refill(self) -> None:
        rest = self._buf[self._pos :]
        self._buf = np.concatenate([rest, self.dist.sample(self.rng, self.block)])
        self._pos = 0

    def take(self, m: int) -> np.ndarray:
        while self._buf.shape[0] - self._pos < m:
            self._refill()
        out = self._buf[self._pos : self._pos + m]
        self._pos += m
        self.consumed += m
        return out

    def next(self) -> np.ndarray:
        return self.take(1)[0]

    def __iter__(self):
        while True:
            yield self.next()


class ChangeStream:
    """Stream that switches from ``pre`` to ``post`` at ``change_at`` (1-based).

    Pre- and post-change segments use separate generators; ``change_at=None``
    never changes, ``change_at=1`` is post-change from the first observation.
    """

    def __init__(
        self,
        pre: Distribution,
        post: Distribution,
        change_at: int | None,
        pre_rng: np.random.Generator,
        post_rng: np.random.Generator,
    ):
        if pre.dim != post.dim:
            raise ConfigError("pre- and post-change laws must share a dimension")
        if change_at is not None and change_at < 1:
            raise ConfigError("change_at must be >= 1")
        self.change_at = change_at
        self._pre = SampleStream(pre, pre_rng)
        self._post = SampleStream(post, post_rng)
        self.n = 0

    @property
    def dim(self) -> int:
        return self._pre.dim

    def take(self, m: int) -> np.ndarray:
        start = self.n + 1
        self.n += m
        if self.change_at is None or self.n < self.change_at:
            return self._pre.take(m)
        if start >= self.change_at:
            return self._post.take(m)
        n_pre = self.change_at - start
        return np.concatenate([self._pre.take(n_pre), self._post.take(m - n_pre)])

    def next(self) -> np.ndarray:
        return self.take(1)[0]

    def __iter__(self):
        while True:
            yield self.next()


def llr_gaussian_variance_change(x):
    """Log-likelihood ratio ``log f1(x)/f0(x)`` for ``N(1,1) -> N(1,4)``.

    Works elementwise on arrays as well as on scalars.
    """
    return 0.375 * x * x - 0.75 * x + LOG_HALF + 0.375


@dataclass(frozen=True)
class GaussianLLR:
    """Log-likelihood ratio between two diagonal Gaussians, vectorized over rows."""

    pre: DiagonalGaussian
    post: DiagonalGaussian

    def __post_init__(self) -> None:
        if self.pre.dim != self.post.dim:
            raise ConfigError("llr model laws must share a dimension")

    @property
    def dim(self) -> int:
        return self.pre.dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.post.logpdf(x) - self.pre.logpdf(x)


@dataclass(frozen=True)
class VarianceChangeLLR:
    """The closed-form scalar model ``N(1,1) -> N(1,4)``."""

    dim = 1

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return llr_gaussian_variance_change(x[..., 0])


def kl_divergence_gaussian(p: DiagonalGaussian, q: DiagonalGaussian) -> float:
    """Closed-form ``KL(p || q)`` for diagonal Gaussians, summed over components."""
    if p.dim != q.dim:
        raise ConfigError("KL divergence needs equal dimensions")
    total = 0.0
    for mp, vp, mq, vq in zip(p.mean, p.variances, q.mean, q.variances):
        total += 0.5 * (math.log(vq / vp) + (vp + (mp - mq) ** 2) / vq - 1.0)
    return total


# Benchmark tasks on R^4; the pre-change law is N(0, I/2).
TASK_NAMES = {
    1: "mean_shift",
    2: "variance_all",
    3: "variance_random_component",
    4: "uniform_matched",
}
TASK_DELTAS = {1: 2.0**-7, 2: 2.0**-7, 3: 2.0**-7, 4: 2.0**-9}
TASK_DIM = 4
UNIFORM_HALF_WIDTH = 1.0 / (2.0 * math.sqrt(3.0))
# Half-width giving per-component variance 1/2, i.e. matching the pre-change law.
UNIFORM_VARIANCE_MATCHED_HALF_WIDTH = math.sqrt(1.5)


def pre_change_law(dim: int = TASK_DIM) -> DiagonalGaussian:
    return DiagonalGaussian((0.0,) * dim, (0.5,) * dim)


def task_laws(
    task: int,
    half_width: float | None = None,
    component_mode: str = "per_observation",
) -> tuple[Distribution, Distribution]:
    """Return ``(pre, post)`` for one of the four benchmark tasks.

    Task 4 uses the interval ``[-1/(2 sqrt 3), 1/(2 sqrt 3)]`` unless
    ``half_width`` overrides it. ``component_mode`` selects whether task 3
    redraws the scaled component per observation or once per stream.
    """
    pre = pre_change_law()
    if task == 1:
        post: Distribution = DiagonalGaussian((1.0,) * TASK_DIM, (0.5,) * TASK_DIM)
    elif task == 2:
        post = DiagonalGaussian((0.0,) * TASK_DIM, (2.0,) * TASK_DIM)
    elif task == 3:
        if component_mode not in ("per_observation", "per_stream"):
            raise ConfigError(f"unknown component_mode {component_mode!r}")
        post = ComponentScaledGaussian(pre, 2.0, per_stream=component_mode == "per_stream")
    elif task == 4:
        post = ComponentwiseUniform(half_width or UNIFORM_HALF_WIDTH, TASK_DIM)
    else:
        raise ConfigError(f"task must be one of 1..4, got {task!r}")
    return pre, post


def distribution_from_config(cfg: Mapping[str, Any], prefix: str = "") -> Distribution:
    """Build a distribution from flat config keys.

    Recognized ``dist`` names are ``gaussian_diag`` (``mean``, ``variances``),
    ``gaussian_component_scaled`` (``mean``, ``variances``, ``scale_factor``,
    optional ``component``) and ``uniform_componentwise`` (``half_width``,
    ``dim``, optional ``mean``). Keys are looked up with ``prefix`` prepended.
    """

    def get(key: str, default: Any = ...) -> Any:
        if prefix + key in cfg:
            return cfg[prefix + key]
        if default is ...:
            raise ConfigError(f"missing config key {prefix + key!r}")
        return default

    kind = get("dist")
    if kind == "gaussian_diag":
        return DiagonalGaussian(get("mean"), get("variances"))
    if kind == "gaussian_component_scaled":
        base = DiagonalGaussian(get("mean"), get("variances"))
        mode = get("component_mode", "per_observation")
        return ComponentScaledGaussian(
            base,
            float(get("scale_factor", 2.0)),
            get("component", None),
            per_stream=mode == "per_stream",
        )
    if kind == "uniform_componentwise":
        dim = int(get("dim"))
        return ComponentwiseUniform(float(get("half_width")), dim, tuple(get("mean", [0.0] * dim)))
    raise ConfigError(f"unknown distribution {kind!r}")


def distribution_to_config(dist: Distribution, prefix: str = "") -> dict[str, Any]:
    """Inverse of :func:`distribution_from_config`."""
    if isinstance(dist, DiagonalGaussian):
        out = {"dist": dist.kind, "mean": list(dist.mean), "variances": list(dist.variances)}
    elif isinstance(dist, ComponentScaledGaussian):
        out = {
            "dist": dist.kind,
            "mean": list(dist.base.mean),
            "variances": list(dist.base.variances),
            "scale_factor": dist.scale_factor,
            "component_mode": "per_stream" if dist.per_stream else "per_observation",
        }
        if dist.component is not None:
            out["component"] = dist.component
    else:
        out = {
            "dist": dist.kind,
            "half_width": dist.half_width,
            "dim": dist.dim,
            "mean": list(dist.mean),
        }
    return {prefix + k: v for k, v in out.items()}
