import numpy as np
import pytest
from dataclasses import replace

from ctclid import estimation
from ctclid.estimation import (
    DecisionLayout,
    EstimationError,
    default_starts,
    equation_error_init,
    estimate,
    fit_initial_state,
    multi_start,
    prediction_cost,
    sample_starts,
)
from ctclid.lm import LMOptions, fd_jacobian
from ctclid.models import ModelStructure, TransferFunction, is_hurwitz
from ctclid.placement import PoleSet
from ctclid.predictors import OE, FixedPoleExtendedObserver, FixedPoleObserver, FreeGainObserver, simulate_predictor
from ctclid.simulate import SignalSpec, simulate_closed_loop

KIND = FixedPoleObserver(PoleSet([-3, -3 + 1j, -3 - 1j]))


@pytest.fixture(scope="module")
def perturbed_fit(maglev, maglev_clean):
    theta0 = maglev.theta * np.array([1.2, 0.8, 1.2, 0.8])
    return theta0, estimate(maglev.structure, maglev_clean, KIND, theta0, state_init="lstsq")


def test_noise_free_recovery_from_perturbed_start(maglev, perturbed_fit):
    _, res = perturbed_fit
    assert np.abs(res.theta / maglev.theta - 1).max() < 1e-3
    assert res.converged


def test_final_cost_matches_recomputation(maglev, maglev_clean, perturbed_fit):
    _, res = perturbed_fit
    again = prediction_cost(maglev.structure, maglev_clean, KIND, res.theta, res.x0)
    assert abs(again - res.cost) <= 1e-12 * max(res.cost, 1e-300)
    assert res.cost <= res.initial_cost
    assert all(b < a for a, b in zip(res.trace, res.trace[1:]))


def test_rerun_is_bit_identical(maglev, maglev_clean, perturbed_fit):
    theta0, res = perturbed_fit
    again = estimate(maglev.structure, maglev_clean, KIND, theta0, state_init="lstsq")
    np.testing.assert_array_equal(again.theta, res.theta)
    np.testing.assert_array_equal(again.x0, res.x0)
    assert again.trace == res.trace


def test_forward_jacobian_against_central_difference(maglev, maglev_data, rng):
    layout = DecisionLayout.for_kind(maglev.structure, KIND)
    fun = estimation._residual_fn(maglev.structure, maglev_data, KIND, layout)
    for _ in range(3):
        theta = maglev.theta * rng.uniform(0.8, 1.2, 4)
        v = layout.join(theta, None, fit_initial_state(maglev.structure, maglev_data, KIND, theta))
        J, _ = fd_jacobian(fun, v, fun(v))
        Jc = np.empty_like(J)
        for i in range(v.size):
            step = 0.5e-6 * (1 + abs(v[i]))
            vp, vm = v.copy(), v.copy()
            vp[i] += step
            vm[i] -= step
            Jc[:, i] = (fun(vp) - fun(vm)) / (2 * step)
        col_err = np.linalg.norm(J - Jc, axis=0) / np.linalg.norm(Jc, axis=0)
        assert col_err.max() < 1e-4


def test_fixed_pole_estimation_only_sees_stable_predictors(maglev, maglev_data, monkeypatch):
    seen = []
    real = estimation.simulate_predictor

    def spy(sys, *args, **kwargs):
        seen.append(is_hurwitz(sys.A))
        return real(sys, *args, **kwargs)

    monkeypatch.setattr(estimation, "simulate_predictor", spy)
    theta0 = maglev.theta * np.array([0.5, 1.5, 0.7, 1.3])
    estimate(maglev.structure, maglev_data, KIND, theta0, LMOptions(max_iterations=15))
    assert len(seen) > 50 and all(seen)


def test_pinned_initial_state(maglev, maglev_clean):
    res = estimate(maglev.structure, maglev_clean, KIND, maglev.theta * 1.05, LMOptions(max_iterations=5), fit_state=False)
    np.testing.assert_array_equal(res.x0, np.zeros(3))


def test_infeasible_start(maglev, maglev_data):
    with pytest.raises(EstimationError, match="starts"):
        estimate(maglev.structure, maglev_data, OE(), maglev.theta)


def test_free_gain_needs_initial_gain(maglev, maglev_data):
    with pytest.raises(ValueError):
        estimate(maglev.structure, maglev_data, FreeGainObserver(), maglev.theta)


def test_extended_result_carries_disturbance_state(maglev_offset):
    data = replace(maglev_offset, N=2000)
    from ctclid.harness import generate_data

    d = generate_data(data.noise_free(), 0)
    kind = FixedPoleExtendedObserver(PoleSet([-3 + 1j, -3 - 1j, -3 + 0.5j, -3 - 0.5j]))
    res = estimate(maglev_offset.structure, d, kind, maglev_offset.theta, LMOptions(max_iterations=3))
    assert res.d0 is not None and res.d0 == res.x0[-1]
    assert res.x0.size == 4


class TestLayout:
    def test_sizes(self, maglev):
        assert DecisionLayout.for_kind(maglev.structure, KIND).size == 4 + 3
        assert DecisionLayout.for_kind(maglev.structure, FreeGainObserver()).size == 4 + 3 + 3
        ext = FixedPoleExtendedObserver(PoleSet([-1.0, -2.0, -3.0, -4.0]))
        assert DecisionLayout.for_kind(maglev.structure, ext).size == 4 + 4

    def test_join_split_round_trip(self):
        lay = DecisionLayout(2, 1, 3)
        v = lay.join([1, 2], [3], [4, 5, 6])
        np.testing.assert_array_equal(v, [1, 2, 3, 4, 5, 6])
        theta, gain, x0 = lay.split(v)
        np.testing.assert_array_equal(theta, [1, 2])
        np.testing.assert_array_equal(gain, [3])
        np.testing.assert_array_equal(x0, [4, 5, 6])

    def test_join_length_check(self):
        with pytest.raises(ValueError):
            DecisionLayout(2, 0, 1).join([1, 2], None, [1, 2])


class TestStarts:
    def test_sampler_reproducible(self, maglev, maglev_data):
        a = sample_starts(maglev.structure, maglev_data, 5, seed=11)
        b = sample_starts(maglev.structure, maglev_data, 5, seed=11)
        c = sample_starts(maglev.structure, maglev_data, 5, seed=12)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert not np.array_equal(a[0], c[0])

    def test_sampler_ranges(self, rg, rg_data):
        starts = sample_starts(rg.structure, rg_data, 50, seed=0)
        for s in starts:
            roots = np.roots(np.r_[1.0, s[:4]])
            assert np.all(np.abs(roots) >= 0.1 - 1e-9) and np.all(np.abs(roots) <= 100 + 1e-6)
            assert s[4] == 0.0 and s[5] != 0.0

    def test_equation_error_exact_on_noise_free_open_loop(self):
        ms = ModelStructure(2, 1)
        theta = np.array([3.0, 2.0, 1.0, 4.0])
        d = simulate_closed_loop(
            ms.tf(theta), TransferFunction.zero(), {"r_u": SignalSpec.zoh_gaussian(0.0, 1.0, 0.05, seed=3)}, 0.005, 8000
        )
        est = equation_error_init(ms, d, bandwidth=5.0)
        np.testing.assert_allclose(est, theta, rtol=2e-2)

    def test_default_starts_layout(self, maglev, maglev_data):
        starts = default_starts(maglev.structure, maglev_data, KIND, seed=0, random_starts=3)
        assert len(starts) == 4
        assert all(s.shape == (4,) for s in starts)
        again = default_starts(maglev.structure, maglev_data, KIND, seed=0, random_starts=3)
        for x, y in zip(starts, again):
            np.testing.assert_array_equal(x, y)


class TestMultiStart:
    def test_winner_no_worse_than_truth(self, maglev, maglev_data):
        starts = [maglev.theta * 1.3, maglev.theta]
        res = multi_start(maglev.structure, maglev_data, KIND, starts, LMOptions(max_iterations=20), state_init="lstsq")
        x_true = fit_initial_state(maglev.structure, maglev_data, KIND, maglev.theta)
        assert res.cost <= prediction_cost(maglev.structure, maglev_data, KIND, maglev.theta, x_true)
        assert len(res.starts) == 2
        assert res.cost == min(row["cost"] for row in res.starts)

    def test_default_policy_recovers_truth(self, maglev, maglev_clean):
        starts = default_starts(maglev.structure, maglev_clean, KIND, seed=1, random_starts=8)
        assert len(starts) == 9
        res = multi_start(maglev.structure, maglev_clean, KIND, starts, state_init="lstsq")
        assert np.abs(res.theta / maglev.theta - 1).max() < 1e-3

    def test_infeasible_starts_are_recorded(self, maglev, maglev_data):
        res = multi_start(
            maglev.structure, maglev_data, OE(), [maglev.theta, -maglev.theta * [1, 0, 0, 1] + [20, 0, 0, 0]],
            LMOptions(max_iterations=2),
        )
        assert "error" in res.starts[0]
        assert "cost" in res.starts[1]

    def test_all_infeasible(self, maglev, maglev_data):
        with pytest.raises(EstimationError):
            multi_start(maglev.structure, maglev_data, OE(), [maglev.theta, maglev.theta * 1.1])

    def test_needs_a_start(self, maglev, maglev_data):
        with pytest.raises(ValueError):
            multi_start(maglev.structure, maglev_data, KIND, [])
