import numpy as np
import pytest

from ctclid.models import (
    ModelStructure,
    Polynomial,
    StateSpace,
    TransferFunction,
    eigenvalues,
    freq_response,
    is_hurwitz,
    realize_ccf,
    ss_to_tf,
)
from ctclid.placement import PoleSet, observer_gain

from oracles import companion, poly_roots_desc

MAGLEV = np.array([13.33, -494.4, -6593.0, 7148.0])
RG = np.array([5.0, 408.0, 416.0, 1600.0, -6400.0, 1600.0])


class TestPolynomial:
    def test_trims_leading_zeros(self):
        assert Polynomial([1.0, 2.0, 0.0, 0.0]).degree == 1

    def test_zero_polynomial(self):
        z = Polynomial([0.0, 0.0])
        assert z.is_zero() and z.degree == 0

    def test_descending_round_trip(self):
        p = Polynomial.from_descending([1.0, 9.0, 28.0, 30.0])
        np.testing.assert_array_equal(p.coeffs, [30.0, 28.0, 9.0, 1.0])
        np.testing.assert_array_equal(p.descending(), [1.0, 9.0, 28.0, 30.0])

    def test_product_and_sum(self):
        a = Polynomial.from_descending([1.0, 1.0])
        b = Polynomial.from_descending([1.0, 2.0])
        np.testing.assert_array_equal((a * b).descending(), [1.0, 3.0, 2.0])
        np.testing.assert_array_equal((a + b).descending(), [2.0, 3.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Polynomial([1.0, np.nan])

    def test_evaluation(self):
        p = Polynomial.from_descending([1.0, 0.0, -2.0])
        assert p(3.0) == 7.0


class TestTransferFunction:
    def test_denominator_normalized_to_monic(self):
        tf = TransferFunction.from_descending([4.0], [2.0, 6.0])
        np.testing.assert_array_equal(tf.den.descending(), [1.0, 3.0])
        np.testing.assert_array_equal(tf.num.descending(), [2.0])

    def test_improper_rejected(self):
        with pytest.raises(ValueError):
            TransferFunction.from_descending([1.0, 0.0, 0.0], [1.0, 1.0])

    def test_zpk_expansion(self):
        tf = TransferFunction.zpk([-1.0], [-2.0, -3.0 + 1j, -3.0 - 1j], 5.0)
        np.testing.assert_allclose(tf.den.descending(), [1.0, 8.0, 22.0, 20.0])
        np.testing.assert_allclose(tf.num.descending(), [5.0, 5.0])

    def test_poles(self):
        tf = TransferFunction.from_descending([1.0], [1.0, 3.0, 2.0])
        np.testing.assert_allclose(np.sort(tf.poles().real), [-2.0, -1.0])

    def test_biproper_state_space_has_direct_term(self):
        tf = TransferFunction.from_descending([2.0, 3.0], [1.0, 1.0])
        ss = tf.to_ss()
        assert ss.D == 2.0
        w = np.array([0.3, 7.0])
        g = ss.C @ np.linalg.solve(1j * w[0] * np.eye(1) - ss.A, ss.B) + ss.D
        assert abs(g[0, 0] - tf(1j * w[0])) < 1e-14


class TestRealizeCCF:
    def test_maglev_layout(self):
        ss = realize_ccf(ModelStructure(3, 0), MAGLEV)
        np.testing.assert_array_equal(ss.A, [[0, 1, 0], [0, 0, 1], [6593.0, 494.4, -13.33]])
        np.testing.assert_array_equal(ss.B.ravel(), [0, 0, 1])
        np.testing.assert_array_equal(ss.C.ravel(), [7148.0, 0, 0])

    def test_first_order(self):
        ss = realize_ccf(ModelStructure(1, 0), [2.5, 4.0])
        assert ss.A[0, 0] == -2.5 and ss.B[0, 0] == 1.0 and ss.C[0, 0] == 4.0

    def test_rg_round_trip(self):
        ms = ModelStructure(4, 1)
        back = ms.theta_from_tf(ss_to_tf(realize_ccf(ms, RG)))
        np.testing.assert_allclose(back, RG, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            realize_ccf(ModelStructure(3, 0), [1.0, 2.0])

    def test_matches_independent_companion(self):
        ms = ModelStructure(4, 1)
        ss = realize_ccf(ms, RG)
        A, B, C, _ = companion(np.r_[1.0, RG[:4]], RG[4:])
        np.testing.assert_array_equal(ss.A, A)
        np.testing.assert_array_equal(ss.B.ravel(), B)
        np.testing.assert_array_equal(ss.C.ravel(), C)

    @pytest.mark.parametrize("n,m", [(1, 0), (2, 1), (3, 0), (4, 1), (5, 4), (6, 2)])
    def test_round_trip_random(self, n, m, rng):
        ms = ModelStructure(n, m)
        for _ in range(20):
            theta = rng.standard_normal(ms.n_params) * 10.0 ** rng.uniform(-1, 2, ms.n_params)
            back = ms.theta_from_tf(ss_to_tf(realize_ccf(ms, theta)))
            np.testing.assert_allclose(back, theta, rtol=1e-12, atol=1e-12 * np.abs(theta).max())


def test_ss_to_tf_similarity_invariant(rng):
    ms = ModelStructure(4, 2)
    theta = rng.standard_normal(ms.n_params)
    ss = realize_ccf(ms, theta)
    T = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    Ti = np.linalg.inv(T)
    moved = StateSpace(T @ ss.A @ Ti, T @ ss.B, ss.C @ Ti)
    tf = ss_to_tf(moved)
    num = np.zeros(4)
    num[: tf.num.coeffs.size] = tf.num.coeffs
    # the transformed realization leaves a roundoff-level p^3 numerator term
    assert abs(num[3]) < 1e-12
    np.testing.assert_allclose(tf.den.coeffs[:4][::-1], theta[:4], rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(num[:3][::-1], theta[4:], rtol=1e-9, atol=1e-10)


class TestEigenvalues:
    def test_identity(self):
        np.testing.assert_allclose(eigenvalues(np.eye(3)), [1, 1, 1])

    def test_maglev_roots(self):
        ev = eigenvalues(realize_ccf(ModelStructure(3, 0), MAGLEV).A)
        oracle = poly_roots_desc([1.0, 13.33, -494.4, -6593.0])
        assert np.all(np.abs(ev.imag) < 1e-9)
        assert np.sum(ev.real > 0) == 1
        assert abs(ev.real.max() - 22.0) < 0.5
        np.testing.assert_allclose(np.sort(ev.real), np.sort(oracle.real), rtol=1e-10)

    def test_factored(self):
        A = realize_ccf(ModelStructure(2, 0), [3.0, 2.0, 1.0]).A
        np.testing.assert_allclose(np.sort(eigenvalues(A).real), [-2.0, -1.0])

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            eigenvalues(np.ones((2, 3)))

    def test_companion_eigs_equal_roots(self, rng):
        for n in range(1, 9):
            coeffs = rng.uniform(-3, 3, n)
            ev = eigenvalues(realize_ccf(ModelStructure(n, 0), np.r_[coeffs, 1.0]).A)
            oracle = poly_roots_desc(np.r_[1.0, coeffs])
            # match each eigenvalue to the nearest root
            for r in oracle:
                assert np.min(np.abs(ev - r)) < 1e-8 * max(1.0, abs(r))


class TestHurwitz:
    def test_maglev_unstable(self):
        assert not is_hurwitz(realize_ccf(ModelStructure(3, 0), MAGLEV).A)

    def test_negative_identity(self):
        assert is_hurwitz(-np.eye(3), margin=0.5)
        assert not is_hurwitz(-np.eye(3), margin=1.0)

    def test_observer_matrix(self):
        ss = realize_ccf(ModelStructure(3, 0), MAGLEV)
        K = observer_gain(ss, PoleSet([-3, -3 + 1j, -3 - 1j])).K_x
        assert is_hurwitz(ss.A - np.outer(K, ss.C))

    def test_rg_plant_stable(self):
        assert is_hurwitz(realize_ccf(ModelStructure(4, 1), RG).A)
        assert np.all(poly_roots_desc([1, 5, 408, 416, 1600]).real < 0)


class TestFrequencyResponse:
    def test_first_order(self):
        g = freq_response(TransferFunction.from_descending([1.0], [1.0, 1.0]), [1.0])[0]
        assert abs(g - (1 - 1j) / 2) < 1e-15
        assert abs(abs(g) - 1 / np.sqrt(2)) < 1e-15

    def test_static_gain(self):
        g = freq_response(TransferFunction.from_descending([3.0], [1.0, 4.0]), [0.0])[0]
        assert g == 0.75

    def test_maglev_direct_evaluation(self):
        tf = ModelStructure(3, 0).tf(MAGLEV)
        s = 10j
        oracle = 7148.0 / (s**3 + 13.33 * s**2 - 494.4 * s - 6593.0)
        assert abs(freq_response(tf, [10.0])[0] - oracle) < 1e-12 * abs(oracle)

    def test_pole_on_axis_is_flagged(self):
        tf = TransferFunction.from_descending([1.0], [1.0, 0.0, 4.0])
        g = freq_response(tf, [1.0, 2.0, 3.0])
        assert np.isnan(g[1]) and np.all(np.isfinite(g[[0, 2]]))

    def test_product_magnitudes(self, rng):
        w = np.logspace(-1, 3, 50)
        for _ in range(10):
            a = TransferFunction.from_descending(rng.standard_normal(2), np.r_[1.0, rng.uniform(0.5, 5, 3)])
            b = TransferFunction.from_descending(rng.standard_normal(1), np.r_[1.0, rng.uniform(0.5, 5, 2)])
            lhs = np.abs(freq_response(a * b, w))
            rhs = np.abs(freq_response(a, w)) * np.abs(freq_response(b, w))
            np.testing.assert_allclose(lhs, rhs, rtol=1e-10)
