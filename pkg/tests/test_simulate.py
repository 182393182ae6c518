import numpy as np
import pytest
from dataclasses import replace

from ctclid.harness import generate_data
from ctclid.models import ModelStructure, TransferFunction, is_hurwitz, realize_ccf
from ctclid.simulate import (
    DataSet,
    DivergenceError,
    SignalSpec,
    SimulationError,
    closed_loop_system,
    expm,
    make_signal,
    simulate_closed_loop,
    zoh_discretize,
)

from oracles import rk4_closed_loop, taylor_expm


class TestExpm:
    def test_zero(self):
        np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))

    def test_diagonal(self):
        d = np.array([-1.0, 0.5, 2.0])
        np.testing.assert_allclose(expm(np.diag(d)), np.diag(np.exp(d)), rtol=1e-15)

    def test_matches_taylor(self, rng):
        for _ in range(10):
            M = rng.standard_normal((4, 4))
            M *= 5.0 / np.linalg.norm(M, 2)
            ref = taylor_expm(M).astype(float)
            assert np.abs(expm(M) - ref).max() <= 1e-12 * np.abs(ref).max()

    def test_nilpotent(self):
        N = np.array([[0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_array_equal(expm(N), [[1.0, 1.0], [0.0, 1.0]])

    def test_overflow(self):
        with pytest.raises(OverflowError):
            expm(np.array([[1000.0]]))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            expm(np.ones((2, 3)))
        with pytest.raises(ValueError):
            expm(np.array([[np.nan]]))


class TestZohDiscretize:
    def test_integrator(self):
        Ad, Bd = zoh_discretize(np.zeros((1, 1)), 0.25, np.ones((1, 1)))
        assert Ad[0, 0] == 1.0 and Bd[0, 0] == pytest.approx(0.25, rel=1e-15)

    def test_first_order(self):
        a, h = 3.0, 0.1
        Ad, Bd = zoh_discretize(np.array([[-a]]), h, np.array([[2.0]]))
        assert Ad[0, 0] == pytest.approx(np.exp(-a * h), rel=1e-14)
        assert Bd[0, 0] == pytest.approx(2.0 * (1 - np.exp(-a * h)) / a, rel=1e-14)

    def test_state_space_input(self):
        ss = realize_ccf(ModelStructure(2, 0), [3.0, 2.0, 1.0])
        Ad, Bd = zoh_discretize(ss, 0.01)
        Ad2, Bd2 = zoh_discretize(ss.A, 0.01, ss.B)
        np.testing.assert_array_equal(Ad, Ad2)
        np.testing.assert_array_equal(Bd, Bd2)

    def test_rejects_nonpositive_h(self):
        with pytest.raises(ValueError):
            zoh_discretize(np.eye(2), 0.0, np.ones((2, 1)))


class TestSignals:
    def test_constant(self):
        np.testing.assert_array_equal(make_signal(SignalSpec.constant(2.5), 0.1, 4), [2.5] * 4)

    def test_square_wave_quarter_period_samples(self):
        s = make_signal(SignalSpec.square_wave(1.0, 0.5), 0.125, 8)
        np.testing.assert_array_equal(s, [1, 1, -1, -1, 1, 1, -1, -1])

    def test_gaussian_moments(self):
        s = make_signal(SignalSpec.zoh_gaussian(0.0, 0.5, 1.0, seed=3), 1.0, 40000)
        assert abs(s.mean()) < 4 * 0.5 / np.sqrt(s.size)
        assert abs(s.std() - 0.5) < 0.01

    def test_gaussian_hold(self):
        s = make_signal(SignalSpec.zoh_gaussian(0.0, 1.0, 0.5, seed=1), 0.1, 20)
        blocks = s.reshape(4, 5)
        assert np.all(blocks == blocks[:, :1])
        assert len(np.unique(blocks[:, 0])) == 4

    def test_seed_and_stream(self):
        a = make_signal(SignalSpec.zoh_gaussian(0.0, 1.0, 1.0, seed=5), 1.0, 50)
        b = make_signal(SignalSpec.zoh_gaussian(0.0, 1.0, 1.0, seed=5), 1.0, 50)
        c = make_signal(SignalSpec.zoh_gaussian(0.0, 1.0, 1.0, seed=5, stream=1), 1.0, 50)
        d = make_signal(SignalSpec.zoh_gaussian(0.0, 1.0, 1.0, seed=6), 1.0, 50)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c) and not np.allclose(a, d)

    def test_rejects_bad_spec(self):
        with pytest.raises(ValueError):
            SignalSpec("zoh_gaussian", std=-1.0, hold=1.0)
        with pytest.raises(ValueError):
            SignalSpec("sawtooth")


class TestClosedLoop:
    def test_first_order_step(self):
        # y' = -y + u, u = r_u: y(kh) = 1 - exp(-kh)
        h = 0.01
        d = simulate_closed_loop(
            TransferFunction.from_descending([1.0], [1.0, 1.0]),
            TransferFunction.zero(),
            {"r_u": SignalSpec.constant(1.0)},
            h,
            300,
        )
        t = np.arange(300) * h
        np.testing.assert_allclose(d.y, 1 - np.exp(-t), atol=1e-14)
        np.testing.assert_array_equal(d.u, 1.0)

    def test_proportional_loop(self):
        # P = 1/(p+1), K = 3: y' = -4 y + 3 r_y
        h = 0.01
        d = simulate_closed_loop(
            TransferFunction.from_descending([1.0], [1.0, 1.0]),
            TransferFunction.from_descending([3.0], [1.0]),
            {"r_y": SignalSpec.constant(1.0)},
            h,
            200,
        )
        t = np.arange(200) * h
        np.testing.assert_allclose(d.y, 0.75 * (1 - np.exp(-4 * t)), atol=1e-14)
        np.testing.assert_allclose(d.u, 3.0 * (1.0 - d.y), atol=1e-13)

    def test_maglev_loop_is_stable(self, maglev):
        assert is_hurwitz(closed_loop_system(maglev.plant, maglev.controller).A)

    def test_open_loop_unstable_diverges(self, maglev):
        with pytest.raises(DivergenceError, match="diverged at t ="):
            simulate_closed_loop(maglev.plant, TransferFunction.zero(), {"r_u": SignalSpec.constant(1.0)}, 1e-3, 5000)

    def test_algebraic_loop_rejected(self):
        biproper = TransferFunction.from_descending([1.0, 0.0], [1.0, 1.0])
        with pytest.raises(SimulationError):
            simulate_closed_loop(biproper, TransferFunction.from_descending([1.0], [1.0]), {}, 0.1, 10)

    def test_incommensurate_hold(self):
        with pytest.raises(SimulationError):
            simulate_closed_loop(
                TransferFunction.from_descending([1.0], [1.0, 1.0]),
                TransferFunction.zero(),
                {"r_u": SignalSpec.zoh_gaussian(0.0, 1.0, np.pi * 1e-2, seed=0)},
                0.01,
                10,
            )

    def test_unknown_signal(self):
        with pytest.raises(ValueError):
            simulate_closed_loop(
                TransferFunction.from_descending([1.0], [1.0, 1.0]), TransferFunction.zero(), {"v": SignalSpec.zero()}, 0.1, 5
            )

    def test_sub_sample_hold_uses_finer_grid(self):
        # hold of h/4 needs four substeps per sample
        d = simulate_closed_loop(
            TransferFunction.from_descending([1.0], [1.0, 1.0]),
            TransferFunction.zero(),
            {"r_u": SignalSpec.zoh_gaussian(0.0, 1.0, 0.025, seed=0)},
            0.1,
            20,
        )
        assert d.meta["substeps"] == 4

    def test_maglev_matches_rk4(self, maglev):
        # short horizon version of the full oracle comparison
        sc = replace(maglev.noise_free(), N=2000, warmup=0)
        d = generate_data(sc, 0)
        V = np.zeros((sc.N, 4))
        V[:, 1] = make_signal(sc.signals["r_y"], sc.h, sc.N)
        ctrl = (sc.controller.num.descending(), sc.controller.den.descending())
        plant = (sc.plant.num.descending(), sc.plant.den.descending())
        u_rk, y_rk = rk4_closed_loop(plant, ctrl, V, sc.h, 100)
        assert np.abs(d.y - y_rk).max() <= 1e-8 * np.abs(y_rk).max()
        assert np.abs(d.u - u_rk).max() <= 1e-8 * np.abs(u_rk).max()

    def test_shadow_matches_noise_free_run(self, maglev, maglev_data, maglev_clean):
        np.testing.assert_array_equal(maglev_data.y0, maglev_clean.y)
        np.testing.assert_array_equal(maglev_data.u0, maglev_clean.u)
        assert not np.array_equal(maglev_data.y, maglev_data.y0)

    def test_shadow_disabled(self, maglev):
        d = generate_data(replace(maglev, N=10), 0, shadow=False)
        assert not d.has_shadow

    def test_deterministic(self, maglev, maglev_data):
        again = generate_data(maglev, 0)
        np.testing.assert_array_equal(again.y, maglev_data.y)
        np.testing.assert_array_equal(again.u, maglev_data.u)
        other = generate_data(replace(maglev, N=50), 1)
        assert not np.array_equal(other.y, maglev_data.y[:50])

    def test_maglev_tracks_reference(self, maglev_clean, maglev):
        r = make_signal(maglev.signals["r_y"], maglev.h, maglev.N + maglev.warmup)[maglev.warmup :]
        assert np.all(np.isfinite(maglev_clean.y))
        assert np.corrcoef(r, maglev_clean.y)[0, 1] > 0.5


class TestDataSet:
    def test_csv_round_trip(self, tmp_path, maglev_data):
        p = tmp_path / "d.csv"
        maglev_data.to_csv(p)
        back = DataSet.from_csv(p)
        np.testing.assert_array_equal(back.y, maglev_data.y)
        np.testing.assert_array_equal(back.u0, maglev_data.u0)
        assert back.h == pytest.approx(maglev_data.h, rel=1e-9)

    def test_csv_without_shadow(self, tmp_path, maglev_data):
        p = tmp_path / "d.csv"
        maglev_data.to_csv(p, shadow=False)
        assert p.read_text().splitlines()[0] == "t,u,y"
        assert not DataSet.from_csv(p).has_shadow

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "t,y,u\n0,1,2\n1,1,2\n",
            "t,u,y\n0,1\n",
            "t,u,y\n0,1,a\n1,2,3\n",
            "t,u,y\n0,1,2\n",
            "t,u,y\n0,1,2\n1,1,2\n3,1,2\n",
            "t,u,y\n",
        ],
    )
    def test_csv_errors(self, tmp_path, text):
        p = tmp_path / "bad.csv"
        p.write_text(text)
        with pytest.raises(ValueError):
            DataSet.from_csv(p)

    def test_validation(self):
        with pytest.raises(ValueError):
            DataSet(0.0, [1.0], [1.0])
        with pytest.raises(ValueError):
            DataSet(0.1, [1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            DataSet(0.1, [1.0], [1.0], u0=[1.0, 2.0])

    def test_noise_free_view(self, maglev_data):
        nf = maglev_data.noise_free()
        np.testing.assert_array_equal(nf.y, maglev_data.y0)
        with pytest.raises(ValueError):
            nf.noise_free()
