import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcusum import ConfigError, DataError, InputError, UsageError
from kcusum.detectors import (
    CusumDetector,
    DatabaseReference,
    DetectorState,
    KcusumConfig,
    KernelCusumDetector,
    SamplerReference,
    cusum_alarm_times,
    cusum_step,
    kcusum_alarm_times,
    kcusum_block_increments,
    kcusum_step,
    reflected_walk,
    run_to_alarm,
)
from kcusum.distributions import (
    ChangeStream,
    DiagonalGaussian,
    SampleStream,
    VarianceChangeLLR,
    llr_gaussian_variance_change,
    make_rng,
    pre_change_law,
    task_laws,
)
from kcusum.kernels import KernelSpec, gaussian, register_family

P0 = DiagonalGaussian([1.0], [1.0])
P1 = DiagonalGaussian([1.0], [4.0])


class ConstantReference:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def draw(self):
        return self.value


def kcusum_config(h=5.0, delta=2**-7, reference=None, kernel=None):
    return KcusumConfig(kernel or gaussian(1.0), delta, h, reference or ConstantReference([0.0]))


# -- cusum_step --------------------------------------------------------------------


def test_cusum_reflects_at_zero():
    s = cusum_step(DetectorState(0.0, 0, 10.0), -5.0)
    assert s.z == 0.0 and not s.alarmed and s.n == 1


def test_cusum_threshold_is_inclusive():
    s = cusum_step(DetectorState(9.5, 3, 10.0), 0.5)
    assert s.z == 10.0 and s.alarmed and s.alarm_time == 4


def test_cusum_frozen_after_alarm():
    s = cusum_step(DetectorState(0.0, 0, 0.0), 0.0)
    with pytest.raises(UsageError):
        cusum_step(s, 1.0)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_cusum_rejects_non_finite(bad):
    with pytest.raises(InputError):
        cusum_step(DetectorState(h=1.0), bad)


def test_cusum_detector_reset():
    d = CusumDetector(VarianceChangeLLR(), 0.0)
    assert d.update([1.0]).time == 1
    with pytest.raises(UsageError):
        d.update([1.0])
    d.reset()
    assert d.statistic == 0.0 and not d.alarmed
    assert d.update([1.0]) is not None


def test_cusum_update_uses_llr():
    d = CusumDetector(VarianceChangeLLR(), 100.0)
    d.update([3.0])
    assert d.last_increment == pytest.approx(llr_gaussian_variance_change(3.0), abs=1e-15)
    assert d.statistic == max(0.0, llr_gaussian_variance_change(3.0))


def test_scalar_variance_change_cusum_delay():
    delays = []
    for i in range(1000):
        stream = ChangeStream(P0, P1, 200, make_rng(1, i, 0), make_rng(1, i, 1))
        event = run_to_alarm(CusumDetector(VarianceChangeLLR(), 10.0), stream, 10**5)
        delays.append(event.time - 200)
    assert 5 <= np.median(delays) <= 60


# -- kcusum_step ---------------------------------------------------------------------


def test_kcusum_odd_step_leaves_statistic():
    cfg = kcusum_config(h=0.0)
    state = DetectorState(0.7, 2, 0.0)
    new, pending, event, v = kcusum_step(state, cfg, [50.0], None)
    assert new.z == 0.7 and new.n == 3 and event is None and v == 0.0
    assert pending is not None


def test_kcusum_equal_points_block():
    cfg = kcusum_config(reference=ConstantReference([2.0]))
    state, pending, _, _ = kcusum_step(DetectorState(h=5.0), cfg, [2.0], None)
    state, pending, event, v = kcusum_step(state, cfg, [2.0], pending)
    assert v == -(2**-7) and state.z == 0.0 and event is None and pending is None


def test_kcusum_threshold_is_strict():
    # x far from the constant reference: g = 1 + 1 - 0 - 0 = 2 exactly in double precision
    cfg = kcusum_config(h=2.0 - 0.5, delta=0.5)
    det = KernelCusumDetector(cfg)
    assert det.update([100.0]) is None
    assert det.update([100.0]) is None
    assert det.statistic == 1.5
    det2 = KernelCusumDetector(kcusum_config(h=1.4, delta=0.5))
    det2.update([100.0])
    event = det2.update([100.0])
    assert event.time == 2 and event.statistic_at_alarm == 1.5 and event.detector_id == "kcusum"


def test_kcusum_one_reference_draw_per_observation():
    ref = SamplerReference(P0, make_rng(3))
    det = KernelCusumDetector(kcusum_config(h=1e9, reference=ref))
    for x in range(7):
        det.update([float(x)])
    assert ref.stream.consumed == 7


def test_kcusum_dimension_change_rejected():
    det = KernelCusumDetector(kcusum_config(h=10.0, reference=ConstantReference([0.0, 0.0])))
    with pytest.raises(InputError):
        det.update([0.0])


def _brute_kcusum_alarm(seed):
    """Independent scalar simulation of N(1,1) -> N(1,4) with a change at 200."""
    gen = np.random.default_rng(seed)
    k = lambda a, b: math.exp(-((a - b) ** 2) / 2.0)
    z, n, xp, yp = 0.0, 0, 0.0, 0.0
    while True:
        n += 1
        x = 1.0 + gen.standard_normal() * (1.0 if n < 200 else 2.0)
        y = 1.0 + gen.standard_normal()
        if n % 2 == 0:
            z = max(0.0, z + k(xp, x) + k(yp, y) - k(xp, y) - k(x, yp) - 1 / 40)
            if z > 5.0:
                return n
        xp, yp = x, y


def test_scalar_variance_change_kcusum_alarm_times():
    times = []
    for i in range(1000):
        cfg = KcusumConfig(gaussian(1.0), 1 / 40, 5.0, SamplerReference(P0, make_rng(2, i, 1)))
        stream = ChangeStream(P0, P1, 200, make_rng(2, i, 0), make_rng(2, i, 2))
        times.append(run_to_alarm(KernelCusumDetector(cfg), stream, 10**5).time)
    assert all(t % 2 == 0 for t in times)
    brute = [_brute_kcusum_alarm(10**6 + i) for i in range(1000)]
    lo, hi = np.quantile(brute, [0.437, 0.563])
    assert lo <= np.median(times) <= hi


# -- run_to_alarm ------------------------------------------------------------------


def test_run_to_alarm_empty_stream():
    assert run_to_alarm(CusumDetector(VarianceChangeLLR(), 1.0), iter(()), 10) is None


def test_run_to_alarm_zero_threshold_cusum():
    event = run_to_alarm(CusumDetector(VarianceChangeLLR(), 0.0), iter([[-50.0], [1.0]]), 10)
    assert event.time == 1


def test_run_to_alarm_horizon():
    stream = SampleStream(P0, make_rng(4))
    assert run_to_alarm(CusumDetector(VarianceChangeLLR(), 1e6), stream, 100) is None
    assert stream.consumed == 100
    with pytest.raises(ConfigError):
        run_to_alarm(CusumDetector(VarianceChangeLLR(), 1.0), stream, 0)


def test_run_to_alarm_replay():
    def once():
        ref = SamplerReference(P0, make_rng(5, 1))
        stream = ChangeStream(P0, P1, 50, make_rng(5, 0), make_rng(5, 2))
        return run_to_alarm(KernelCusumDetector(kcusum_config(h=3.0, delta=1 / 40, reference=ref)), stream, 10**5)

    assert once() == once()


# -- properties ----------------------------------------------------------------------


@settings(max_examples=200)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=200))
def test_cusum_max_representation(llrs):
    d = CusumDetector(VarianceChangeLLR(), math.inf)
    for n, v in enumerate(llrs, start=1):
        d.update_llr(v)
        brute = max(0.0, max(sum(llrs[j:n]) for j in range(n)))
        assert d.statistic >= 0.0
        assert abs(d.statistic - brute) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_kcusum_parity(seed, h):
    ref = SamplerReference(pre_change_law(), make_rng(seed, 1))
    det = KernelCusumDetector(kcusum_config(h=h, reference=ref))
    stream = SampleStream(task_laws(1)[1], make_rng(seed, 0))
    prev = 0.0
    for n in range(1, 301):
        event = det.update(stream.next())
        if n % 2 == 1:
            assert det.statistic == prev
        prev = det.statistic
        if event is not None:
            assert event.time % 2 == 0
            break


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_alarm_time_monotone_in_h(seed):
    hs = [0.0, 0.5, 1.0, 2.0, 4.0]
    times = kcusum_alarm_times(
        gaussian(), 2**-7, SampleStream(task_laws(2)[1], make_rng(seed, 0)),
        SampleStream(pre_change_law(), make_rng(seed, 1)), hs, 10**4,
    )
    finite = [t for t in times if t is not None]
    assert finite == sorted(finite)
    assert times[: len(finite)] == finite


register_family("test_linear", lambda spec, x, y: np.sum(x * y, axis=-1))
LINEAR = KernelSpec("test_linear", 1.0, 64.0, False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-64, 64), min_size=1, max_size=250), st.integers(0, 320))
def test_walk_reduction(steps, h_units):
    """With a linear kernel, zero references and blocks (1, b + delta), each
    increment is exactly the dyadic value b; the alarm must land at 2c."""
    delta = 2**-6
    blocks = [k / 64 for k in steps]
    h = h_units / 64
    z, c = 0.0, None
    for i, b in enumerate(blocks, start=1):
        z = max(0.0, z + b)
        if z > h:
            c = i
            break
    det = KernelCusumDetector(KcusumConfig(LINEAR, delta, h, ConstantReference([0.0])))
    xs = [v for b in blocks for v in ([1.0], [b + delta])]
    event = run_to_alarm(det, xs, len(xs))
    assert (event.time if event else None) == (None if c is None else 2 * c)


def test_reflected_walk_values():
    assert reflected_walk([1.0, -3.0, 2.0, 0.5]) == [1.0, 0.0, 2.0, 2.5]
    assert reflected_walk([], 1.0) == []


# -- whole-grid fast path equals step detectors ------------------------------------------


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("task", [1, 2, 3, 4])
def test_kcusum_fast_path_matches_detector(seed, task):
    pre, post = task_laws(task)
    hs = [0.0, 1.0, 3.0, 6.0]
    fast = kcusum_alarm_times(
        gaussian(), 2**-7, SampleStream(post, make_rng(seed, 0)),
        SampleStream(pre, make_rng(seed, 1)), hs, 4000,
    )
    for h, t in zip(hs, fast):
        ref = SamplerReference(pre, make_rng(seed, 1))
        det = KernelCusumDetector(kcusum_config(h=h, reference=ref))
        event = run_to_alarm(det, SampleStream(post, make_rng(seed, 0)), 4000)
        assert (event.time if event else None) == t


@pytest.mark.parametrize("seed", range(5))
def test_cusum_fast_path_matches_detector(seed):
    hs = [0.0, 2.0, 5.0, 10.0]
    llr = VarianceChangeLLR()
    fast = cusum_alarm_times(llr, ChangeStream(P0, P1, 100, make_rng(seed, 0), make_rng(seed, 1)), hs, 5000)
    for h, t in zip(hs, fast):
        stream = ChangeStream(P0, P1, 100, make_rng(seed, 0), make_rng(seed, 1))
        event = run_to_alarm(CusumDetector(llr, h), stream, 5000)
        assert (event.time if event else None) == t


def test_block_increments_layout():
    x = np.arange(8, dtype=float).reshape(4, 2)
    y = x[::-1].copy()
    inc = kcusum_block_increments(gaussian(), 0.25, x, y)
    assert inc.shape == (2,)


def test_fast_path_rejects_unsorted_thresholds():
    with pytest.raises(ConfigError):
        cusum_alarm_times(VarianceChangeLLR(), SampleStream(P0, make_rng(0)), [2.0, 1.0], 10)


# -- reference databases ------------------------------------------------------------------


def test_database_fail_policy():
    db = DatabaseReference([[0.0], [1.0]])
    det = KernelCusumDetector(kcusum_config(h=100.0, reference=db))
    det.update([0.0])
    det.update([0.0])
    with pytest.raises(DataError):
        det.update([0.0])


def test_database_cyclic_policy():
    db = DatabaseReference([[0.0], [1.0], [2.0]], policy="cyclic")
    assert [float(db.draw()[0]) for _ in range(7)] == [0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0]


def test_database_resample_policy():
    db = DatabaseReference([[0.0], [1.0], [2.0]], policy="resample", rng=make_rng(0))
    draws = {float(db.draw()[0]) for _ in range(100)}
    assert draws == {0.0, 1.0, 2.0}


@pytest.mark.parametrize(
    "kwargs, err",
    [
        ({"samples": [], "policy": "fail"}, InputError),
        ({"samples": [[math.nan]], "policy": "fail"}, InputError),
        ({"samples": [[0.0]], "policy": "shuffle"}, ConfigError),
        ({"samples": [[0.0]], "policy": "resample"}, ConfigError),
    ],
)
def test_database_validation(kwargs, err):
    with pytest.raises(err):
        DatabaseReference(**kwargs)


# -- config validation -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"delta": 0.0},
        {"delta": -1.0},
        {"delta": 2.0},
        {"h": -1.0},
        {"delta": 4.0, "kernel": KernelSpec("test_linear", 1.0, 1.0, False)},
    ],
)
def test_kcusum_config_validation(kwargs):
    with pytest.raises(ConfigError):
        kcusum_config(**kwargs)


def test_cusum_negative_threshold():
    with pytest.raises(ConfigError):
        CusumDetector(VarianceChangeLLR(), -1.0)
