"""Error-runtime bounds, step-size conditions and convergence-condition checks."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.adacomm import optimal_tau
from src.bounds import (
    BoundParams,
    RateDescriptorError,
    RateFamily,
    adaptive_bound,
    bound_curve,
    bound_derivative_tau,
    check_adaptive_conditions,
    crossover_time,
    error_floor,
    error_runtime_bound,
    sgd_conditions,
    simplified_fixed_lr_bound,
    weighted_grad_stat,
)
from src.delay import ComputeTime, DelayModel
from src.engine import FixedPeriod, LrSchedule, TrainConfig, run_pasgd
from src.objectives import NoisyQuadratic

# F(x1)=1, F_inf=0, lr=0.08, L=1, C=1, m=16, Y=1, D=1
REF = BoundParams(F1=1.0, F_inf=0.0, L=1.0, C=1.0, m=16, Y=1.0, D=1.0)
LR = 0.08


class TestErrorRuntimeBound:
    def test_floors(self):
        assert_allclose(error_floor(REF, LR, 1), 0.005, rtol=0, atol=1e-12)
        assert_allclose(error_floor(REF, LR, 10), 0.0626, rtol=0, atol=1e-12)

    def test_limit_is_floor(self):
        for tau in (1, 10):
            assert_allclose(error_runtime_bound(REF, LR, tau, 1e15), error_floor(REF, LR, tau), rtol=1e-9)

    def test_strictly_decreasing_in_time(self):
        times = np.geomspace(1.0, 1e6, 50)
        values = [error_runtime_bound(REF, LR, 10, T) for T in times]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_crossover(self):
        t = crossover_time(REF, LR, 1, 10)
        assert t == pytest.approx(2 * 0.9 / (LR * 0.0576), rel=1e-9)
        assert t == pytest.approx(390.6, rel=0.01)
        for T in (10.0, 100.0, 0.9 * t):
            assert error_runtime_bound(REF, LR, 10, T) < error_runtime_bound(REF, LR, 1, T)
        for T in (1.1 * t, 1000.0, 1e5):
            assert error_runtime_bound(REF, LR, 10, T) > error_runtime_bound(REF, LR, 1, T)

    def test_no_crossover_without_delay(self):
        no_delay = BoundParams(F1=1.0, F_inf=0.0, L=1.0, C=1.0, m=16, Y=1.0, D=0.0)
        assert crossover_time(no_delay, LR, 1, 10) is None
        assert crossover_time(REF, LR, 4, 4) is None

    def test_curve_rows(self):
        rows = bound_curve(REF, LR, [1, 10], [100.0, 1000.0])
        assert [(T, tau) for T, tau, _ in rows] == [(100.0, 1), (1000.0, 1), (100.0, 10), (1000.0, 10)]
        assert rows[0][2] == error_runtime_bound(REF, LR, 1, 100.0)

    def test_derivative_zero_at_optimum(self):
        T = 1000.0
        tau_star = optimal_tau(REF.F1, REF.F_inf, REF.D, LR, REF.L, REF.C, T)
        h = 1e-4
        fd = (error_runtime_bound(REF, LR, tau_star + h, T, warn=False)
              - error_runtime_bound(REF, LR, tau_star - h, T, warn=False)) / (2 * h)
        assert abs(fd) <= 1e-9
        assert abs(bound_derivative_tau(REF, LR, tau_star, T)) <= 1e-12

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            error_runtime_bound(REF, LR, 1, 0.0)
        with pytest.raises(ValueError):
            error_runtime_bound(REF, LR, 0, 10.0)
        with pytest.raises(ValueError):
            BoundParams(F1=0.0, F_inf=0.0, L=1.0, C=1.0)

    def test_warns_when_step_size_condition_fails(self, caplog):
        with caplog.at_level("WARNING"):
            error_runtime_bound(REF, 0.5, 10, 100.0)
        assert "violate" in caplog.text


class TestSimplifiedFixedLrBound:
    def test_noise_term_for_decreasing_periods(self):
        value = simplified_fixed_lr_bound(REF, LR, (4, 2, 1), 7)
        noise = value - 2.0 / (LR * 7) - LR / 16
        assert noise == pytest.approx(0.0128, abs=1e-12)

    def test_same_noise_term_as_constant_three(self):
        a = simplified_fixed_lr_bound(REF, LR, (4, 2, 1), 7) - 2.0 / (LR * 7)
        b = simplified_fixed_lr_bound(REF, LR, (3, 3, 3), 9) - 2.0 / (LR * 9)
        assert a == pytest.approx(b, abs=1e-15)

    def test_constant_period_identity(self):
        rng = np.random.default_rng(2024)
        for _ in range(10):
            p = BoundParams(F1=rng.uniform(1.0, 10.0), F_inf=rng.uniform(-1.0, 0.5), L=rng.uniform(0.1, 3.0),
                            C=rng.uniform(0.1, 3.0), m=int(rng.integers(1, 65)),
                            Y=rng.uniform(0.1, 2.0), D=rng.uniform(0.0, 10.0))
            lr = rng.uniform(0.001, 0.1)
            tau = int(rng.integers(1, 33))
            J = int(rng.integers(1, 200))
            K = J * tau
            lhs = simplified_fixed_lr_bound(p, lr, [tau] * J, K)
            rhs = error_runtime_bound(p, lr, tau, K * (p.Y + p.D / tau), warn=False)
            assert_allclose(lhs, rhs, rtol=1e-12)

    def test_k_mismatch(self):
        with pytest.raises(ValueError):
            simplified_fixed_lr_bound(REF, LR, (4, 2, 1), 8)

    def test_adaptive_bound_reduces_to_fixed(self):
        lhs = adaptive_bound(REF, [LR] * 5, [3] * 5)
        rhs = simplified_fixed_lr_bound(REF, LR, [3] * 5, 15)
        assert_allclose(lhs, rhs, rtol=1e-12)


class TestAdaptiveConditions:
    def test_harmonic_lr_constant_tau_passes(self):
        report = check_adaptive_conditions("power:a=0.1,p=1", "constant:a=4")
        assert report.sum_lr_tau_diverges
        assert report.sum_lr2_tau_converges
        assert report.sum_lr3_tau2_converges
        assert report.verdict == "PASS"

    def test_constant_lr_and_tau_fails(self):
        report = check_adaptive_conditions("constant:a=0.1", "constant:a=4")
        assert report.sum_lr_tau_diverges
        assert not report.sum_lr2_tau_converges
        assert report.verdict == "FAIL"

    def test_bounded_tau_passes(self):
        assert check_adaptive_conditions("power:a=0.1,p=1", "bounded:b=16").passed

    @pytest.mark.parametrize("p", [0.0, 0.3, 0.5, 0.6, 0.75, 1.0, 1.5, 2.0])
    def test_constant_period_reproduces_sgd_conditions(self, p):
        lr = RateFamily("power", 0.1, p)
        report = check_adaptive_conditions(lr, RateFamily("constant", 8.0))
        diverges, converges = sgd_conditions(lr)
        assert report.sum_lr_tau_diverges == diverges
        assert report.sum_lr2_tau_converges == converges
        assert report.passed == (diverges and converges)

    def test_finite_sequences_report_partial_sums(self):
        report = check_adaptive_conditions([0.1, 0.05], [4, 4],
                                           tail_model=(RateFamily("power", 0.1, 1.0), RateFamily("bounded", 4.0)))
        assert_allclose(report.partial_sums, (0.6, 0.05, 0.018), rtol=1e-12)
        assert report.passed

    def test_finite_sequences_without_tail_model_are_undetermined(self):
        report = check_adaptive_conditions([0.1, 0.05], [4, 4])
        assert_allclose(report.partial_sums, (0.6, 0.05, 0.018), rtol=1e-12)
        assert not report.determined
        assert report.passed is None
        assert report.verdict == "UNDETERMINED"
        assert report.as_row()[2:] == [None, None, None, "UNDETERMINED"]

    def test_finite_sequences_must_match(self):
        with pytest.raises(ValueError):
            check_adaptive_conditions([0.1, 0.05], [4])
        with pytest.raises(RateDescriptorError):
            check_adaptive_conditions([0.1], RateFamily("constant", 4.0))

    @pytest.mark.parametrize("text", ["", "linear:a=1", "power:a=x", "power:a", "constant:a=1,p=2", "power:z=3"])
    def test_malformed_descriptors(self, text):
        with pytest.raises(RateDescriptorError):
            RateFamily.parse(text)

    def test_bounded_lr_rejected(self):
        with pytest.raises(RateDescriptorError):
            check_adaptive_conditions("bounded:b=2", "constant:a=1")

    def test_row_layout(self):
        row = check_adaptive_conditions("power:a=0.1,p=1", "bounded:b=16").as_row()
        assert row[-1] == "PASS"
        assert len(row) == 6


def _trace(C, lr, tau, max_time, dense=False):
    cfg = TrainConfig(workers=4, batch_size=1, lr_schedule=LrSchedule(lr), schedule=FixedPeriod(tau),
                      max_time=max_time, dense=dense)
    return run_pasgd(cfg, NoisyQuadratic(10, M=0.0, C=C), DelayModel(ComputeTime("Constant", 1.0), D0=1.0))


class TestWeightedGradStat:
    def test_uniform_weights_give_mean(self):
        trace = _trace(1.0, 0.05, 4, 100.0)
        assert weighted_grad_stat(trace) == pytest.approx(np.mean([r.grad_norm_sq for r in trace.records]))

    def test_single_record(self):
        trace = _trace(1.0, 0.05, 4, 100.0)
        assert weighted_grad_stat(trace, start=3, stop=4) == pytest.approx(trace.records[3].grad_norm_sq)

    def test_noiseless_decreases(self):
        trace = _trace(0.0, 0.1, 2, 120.0)
        half = len(trace) // 2
        assert weighted_grad_stat(trace, start=half) < weighted_grad_stat(trace, stop=half)

    def test_dense_converging_run(self):
        trace = _trace(1.0, 0.05, 4, 300.0, dense=True)
        third = len(trace.dense) // 3
        assert weighted_grad_stat(trace, start=2 * third, dense=True) < weighted_grad_stat(trace, stop=third, dense=True)

    def test_explicit_sequences_must_match(self):
        trace = _trace(1.0, 0.05, 4, 100.0)
        with pytest.raises(ValueError):
            weighted_grad_stat(trace, lr_seq=[0.05], tau_seq=[4])

    def test_empty(self):
        trace = _trace(1.0, 0.05, 4, 100.0)
        with pytest.raises(ValueError):
            weighted_grad_stat(trace, start=len(trace))
        with pytest.raises(ValueError):
            weighted_grad_stat(trace, dense=True)
