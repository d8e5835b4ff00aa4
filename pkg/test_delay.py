"""Runtime model: communication delay, round times, order statistics, speedup."""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.delay import (
    ComputeTime,
    DelayModel,
    comm_delay,
    communication_ratio,
    expected_iteration_time,
    expected_max_exponential,
    harmonic_number,
    runtime_tail,
    sample_average_compute,
    sample_round_time,
    sample_round_times,
    speedup_ratio,
)

EXP1 = ComputeTime("Exponential", 1.0)
H16_PLUS_1 = 4.3807


def _quantile_band(tail, q, z=3.0):
    """Order statistics bracketing the q-quantile by z binomial standard errors of the count."""
    n = tail.n
    half = z * math.sqrt(n * q * (1 - q))
    low = max(math.floor(n * q - half), 0)
    high = min(math.ceil(n * q + half), n - 1)
    return tail.values[low], tail.values[high]


class TestCommDelay:
    def test_constant_scaling(self):
        dm = DelayModel(D0=1.0)
        assert [comm_delay(dm, m) for m in (1, 4, 64)] == [1.0, 1.0, 1.0]

    def test_log2_tree(self):
        assert comm_delay(DelayModel(D0=0.5, scaling="Log2Tree"), 16) == pytest.approx(4.0, abs=1e-12)

    def test_linear(self):
        assert comm_delay(DelayModel(D0=1.0, scaling="Linear"), 4) == 4.0

    def test_custom_table(self):
        dm = DelayModel(D0=2.0, scaling="Custom", table={4: 1.5})
        assert comm_delay(dm, 4) == 3.0
        with pytest.raises(ValueError):
            comm_delay(dm, 8)

    def test_zero_workers(self):
        with pytest.raises(ValueError):
            comm_delay(DelayModel(), 0)

    def test_invalid_models(self):
        with pytest.raises(ValueError):
            DelayModel(D0=-1.0)
        with pytest.raises(ValueError):
            ComputeTime("Constant", 0.0)
        with pytest.raises(ValueError):
            ComputeTime("ShiftedExponential", 1.0, shift=1.5)


class TestRoundTime:
    def test_constant_is_deterministic(self):
        dm = DelayModel(ComputeTime("Constant", 1.0), D0=1.0)
        rng = np.random.default_rng(0)
        for m in (1, 4, 16):
            assert sample_round_time(dm, m, 3, rng) == 4.0

    def test_harmonic_oracle(self):
        assert_allclose(harmonic_number(16) + 1.0, H16_PLUS_1, atol=5e-5)
        assert expected_max_exponential(2.0, 16) == pytest.approx(2.0 * harmonic_number(16))
        times = sample_round_times(DelayModel(EXP1, D0=1.0), 16, 1, 100_000, seed=1)
        assert_allclose(times.mean(), H16_PLUS_1, rtol=0.02)

    @pytest.mark.parametrize("tau", [5, 10])
    def test_erlang_variance(self, tau):
        n = 100_000
        ybar = sample_average_compute(DelayModel(EXP1), tau, n, seed=2)
        assert_allclose(ybar.mean(), 1.0, atol=4 * math.sqrt(1 / tau / n))
        # Var(s^2) ~ sigma^4 (2 + 6/tau) / n for an Erlang(tau) average
        assert_allclose(ybar.var(ddof=1), 1 / tau, atol=4 * (1 / tau) * math.sqrt((2 + 6 / tau) / n))

    def test_bit_identical_for_seed(self):
        dm = DelayModel(EXP1, D0=1.0)
        a = sample_round_times(dm, 4, 5, 3000, seed=9)
        b = sample_round_times(dm, 4, 5, 3000, seed=9)
        assert_array_equal(a, b)
        # prefix blocks do not depend on the total count
        c = sample_round_times(dm, 4, 5, 1024, seed=9)
        assert_array_equal(a[:1024], c)

    def test_shifted_exponential_mean(self):
        dm = DelayModel(ComputeTime("ShiftedExponential", 1.0, shift=0.4), D0=0.0)
        times = sample_round_times(dm, 1, 1, 100_000, seed=4)
        assert_allclose(times.mean(), 1.0, rtol=0.01)
        assert times.min() >= 0.4

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            sample_round_time(DelayModel(), 0, 1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_round_time(DelayModel(), 1, 0, np.random.default_rng(0))


class TestExpectedIterationTime:
    def test_constant_closed_form(self):
        dm = DelayModel(ComputeTime("Constant", 1.0), D0=1.0)
        assert expected_iteration_time(dm, 16, 10).mean_iteration_time == pytest.approx(1.1, abs=1e-15)
        stats = expected_iteration_time(dm, 16, 1)
        assert stats.mean_iteration_time == 2.0
        assert stats.mean_round_time == 2.0

    def test_exponential_harmonic(self):
        stats = expected_iteration_time(DelayModel(EXP1, D0=1.0), 16, 1, 100_000, seed=3)
        assert_allclose(stats.mean_iteration_time, H16_PLUS_1, rtol=0.02)
        assert 0 < stats.stderr < 0.01
        assert stats.mean_iteration_time == pytest.approx(stats.mean_round_time)

    @pytest.mark.parametrize("m", [2, 4, 16])
    @pytest.mark.parametrize("tau", [5, 10])
    def test_averaging_shrinks_max(self, m, tau):
        dm = DelayModel(EXP1, D0=0.0)
        one = expected_iteration_time(dm, m, 1, 50_000, seed=5)
        many = expected_iteration_time(dm, m, tau, 50_000, seed=6)
        assert many.mean_iteration_time <= one.mean_iteration_time + 3 * math.hypot(one.stderr, many.stderr)

    def test_nonincreasing_in_tau(self):
        for dm in (DelayModel(EXP1, D0=1.0),
                   DelayModel(ComputeTime("ShiftedExponential", 1.0, 0.5), D0=2.0, scaling="Log2Tree")):
            prev = None
            for tau in (1, 2, 5, 10):
                st = expected_iteration_time(dm, 8, tau, 20_000, seed=tau)
                if prev is not None:
                    assert st.mean_iteration_time <= prev.mean_iteration_time + 3 * math.hypot(st.stderr, prev.stderr)
                prev = st


class TestRuntimeTail:
    def test_constant_step(self):
        tail = runtime_tail(DelayModel(ComputeTime("Constant", 1.0), D0=1.0), 4, 2, 1000)
        assert tail.cdf(1.49) == 0.0
        assert tail.cdf(1.5) == 1.0

    def test_lighter_tail_with_averaging(self):
        dm = DelayModel(EXP1, D0=1.0)
        t1 = runtime_tail(dm, 16, 1, 100_000, seed=1)
        t10 = runtime_tail(dm, 16, 10, 100_000, seed=2)
        assert_allclose(t1.mean, H16_PLUS_1, rtol=0.02)
        assert t10.mean < t1.mean
        _, t10_high = _quantile_band(t10, 0.99)
        t1_low, _ = _quantile_band(t1, 0.99)
        assert t10_high < t1_low

    def test_needs_enough_samples(self):
        with pytest.raises(ValueError):
            runtime_tail(DelayModel(EXP1), 2, 1, 999)


class TestSpeedup:
    @pytest.mark.parametrize("tau", [1, 2, 5, 10, 100])
    def test_formula(self, tau):
        assert_allclose(speedup_ratio(0.9, tau), 1.9 / (1 + 0.9 / tau), rtol=0, atol=1e-12)

    def test_examples(self):
        assert speedup_ratio(0.9, 1) == 1.0
        assert speedup_ratio(0.9, math.inf) == pytest.approx(1.9)
        assert speedup_ratio(0.9, 100) == pytest.approx(1.8831, abs=1e-4)

    def test_identities_and_monotonicity(self):
        for tau in (1, 3, 50):
            assert speedup_ratio(0.0, tau) == 1.0
        for alpha in (0.1, 1.0, 7.5):
            assert speedup_ratio(alpha, 1) == 1.0
            values = [speedup_ratio(alpha, t) for t in (1, 2, 4, 8, 1000)]
            assert values == sorted(values)

    def test_communication_ratio(self):
        dm = DelayModel(ComputeTime("Constant", 2.0), D0=0.9, scaling="Linear")
        assert communication_ratio(dm, 2) == pytest.approx(0.9)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            speedup_ratio(-0.1, 2)
        with pytest.raises(ValueError):
            speedup_ratio(1.0, 0)
