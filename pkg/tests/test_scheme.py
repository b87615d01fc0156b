import math

import numpy as np
import pytest

from mvsde.analysis import moment_track
from mvsde.model import AdditiveNoiseModel, GinzburgLandauModel, LinearMeanFieldModel
from mvsde.noise import BrownianLattice, generate
from mvsde.scheme import (
    DivergenceError,
    InitialLaw,
    SimConfig,
    SimState,
    euler_step,
    lambda1,
    lambda2,
    milstein_step,
    simulate,
)

from conftest import TwoNoiseModel, lattice_from


def state(*xs):
    return SimState(t=0.0, k=0, X=np.array(xs, dtype=float).reshape(len(xs), -1))


def one_kick(n=100, k=0, dw=0.3, N=1):
    inc = np.zeros((N, 1, n))
    inc[:, 0, k] = dw
    return lattice_from(inc)


class TestLambda1:
    def test_constant_sigma_gives_zero(self):
        lat = generate(0, 3, 1, 64, 1.0)
        out = lambda1(AdditiveNoiseModel(0.4), state(0.1, 0.5, -2.0), lat, 8, 3)
        assert np.all(out == 0)

    def test_gl_unit_alpha(self):
        lat = generate(4, 2, 1, 64, 1.0)
        n, k = 16, 5
        out = lambda1(GinzburgLandauModel(alpha=1.0, c=0.0), state(1.0, 1.0), lat, n, k, i=1)
        dw = lat.coarse_increment(n, 1, 0, k)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(0.5 * (dw**2 - 1 / n))

    def test_two_noise_columns(self):
        lat = generate(9, 1, 2, 32, 1.0)
        n, k, x = 4, 2, 0.7
        out = lambda1(TwoNoiseModel(), state(x), lat, n, k, i=0)
        assert out.shape == (1, 2)
        assert out[0, 0] == pytest.approx(x * lat.iterated_integral(n, 0, 0, 0, 0, k))
        assert out[0, 1] == 0.0


class TestLambda2:
    def test_zero_measure_derivative(self):
        lat = generate(1, 4, 1, 64, 1.0)
        out = lambda2(GinzburgLandauModel(1.0, 0.5), state(0.1, 0.2, 0.3, 0.4), lat, 8, 1)
        assert np.all(out == 0)

    def test_single_particle(self):
        model = LinearMeanFieldModel()
        lat = generate(3, 1, 1, 64, 1.0)
        x, n, k = 0.8, 8, 6
        out = lambda2(model, state(x), lat, n, k, i=0)
        sig = model.bcoef * x + model.bbar * x
        assert out[0, 0] == pytest.approx(model.bbar * sig * lat.iterated_integral(n, 0, 0, 0, 0, k))

    @pytest.mark.parametrize("i", [0, 1])
    def test_two_equal_particles(self, i):
        model = LinearMeanFieldModel()
        lat = generate(3, 2, 1, 64, 1.0)
        x, n, k = -0.6, 4, 3
        out = lambda2(model, state(x, x), lat, n, k, i=i)
        sig = (model.bcoef + model.bbar) * x
        I1 = lat.iterated_integral(n, i, 0, 0, 0, k)
        I2 = lat.iterated_integral(n, i, 1, 0, 0, k)
        assert out[0, 0] == pytest.approx(model.bbar * sig / 2 * (I1 + I2), rel=1e-12)

    def test_all_rows_match_single_rows(self):
        model = LinearMeanFieldModel()
        lat = generate(8, 5, 1, 64, 1.0)
        st = state(0.3, -0.1, 1.2, 0.5, -0.9)
        full = lambda2(model, st, lat, 4, 2)
        for i in range(5):
            np.testing.assert_allclose(full[i], lambda2(model, st, lat, 4, 2, i=i), rtol=1e-13)


class TestSteps:
    def test_additive_is_exact(self):
        lat = generate(0, 3, 1, 16, 1.0)
        st = state(0.0, 1.0, -1.0)
        new = milstein_step(AdditiveNoiseModel(0.5), st, lat, 16, 4)
        np.testing.assert_array_equal(new.X, st.X + 0.5 * lat.increments[:, :, 4])

    def test_milstein_hand_value(self):
        new = milstein_step(GinzburgLandauModel(1.0, 0.0), state(1.0), one_kick(), 100, 0)
        assert new.X[0, 0] == pytest.approx(1.3350495, abs=1e-7)
        assert new.t == pytest.approx(0.01) and new.k == 1

    def test_deterministic_gl(self):
        lat = lattice_from(np.zeros((1, 1, 10)))
        model = GinzburgLandauModel(0.0, 0.0)
        for step in (milstein_step, euler_step):
            assert step(model, state(1.0), lat, 10, 0).X[0, 0] == pytest.approx(1 - 0.1 / 1.1, abs=1e-12)

    def test_euler_constant_sigma(self):
        lat = generate(5, 2, 1, 8, 1.0)
        new = euler_step(AdditiveNoiseModel(0.3), state(1.0, 2.0), lat, 8, 7)
        np.testing.assert_array_equal(new.X, np.array([[1.0], [2.0]]) + 0.3 * lat.increments[:, :, 7])

    def test_euler_hand_value(self):
        # Milstein minus the (dW^2 - h)/2 correction
        new = euler_step(GinzburgLandauModel(1.0, 0.0), state(1.0), one_kick(), 100, 0)
        assert new.X[0, 0] == pytest.approx(1.3350495 - 0.04, abs=1e-7)

    def test_divergence_raises_with_location(self):
        model = GinzburgLandauModel(1.0, 0.0)
        lat = lattice_from(np.zeros((3, 1, 1)))
        with pytest.raises(DivergenceError) as info:
            euler_step(model, state(0.0, 1e110, 0.0), lat, 1, 0, taming=False)
        assert info.value.event.particle == 1
        assert info.value.event.step == 0

    def test_level_must_divide_lattice(self):
        with pytest.raises(ValueError):
            milstein_step(GinzburgLandauModel(), state(1.0), generate(0, 1, 1, 12, 1.0), 5, 0)


class TestSimulate:
    def test_zero_dynamics_constant(self):
        cfg = SimConfig(N=1, n=8, initial=InitialLaw("constant", {"value": 0.75}))
        traj = simulate(cfg, AdditiveNoiseModel(0.0))
        assert len(traj.states) == 9
        for s in traj.states:
            assert s.X[0, 0] == 0.75

    def test_deterministic_limit(self):
        cfg = SimConfig(N=1, n=2**10, n_fine=2**10, initial=InitialLaw("constant", {"value": 1.0}))
        x_T = simulate(cfg, GinzburgLandauModel(0.0, 0.0)).final.X[0, 0]
        assert abs(x_T - 1 / math.sqrt(3)) <= 2e-3

    def test_stride(self):
        cfg = SimConfig(N=2, n=10, stride=4, n_fine=10)
        traj = simulate(cfg, GinzburgLandauModel())
        assert [s.k for s in traj.states] == [0, 4, 8, 10]

    def test_worker_count_does_not_change_results(self):
        model = LinearMeanFieldModel()
        base = SimConfig(N=600, n=8, n_fine=32, seed=4, initial=InitialLaw("gaussian", {"mean": 1.0, "std": 0.5}))
        runs = [simulate(SimConfig(**{**base.__dict__, "workers": w}), model).final.X for w in (1, 3, 8)]
        assert np.array_equal(runs[0], runs[1]) and np.array_equal(runs[0], runs[2])

    def test_exchangeability(self):
        model = LinearMeanFieldModel()
        N, n = 7, 8
        lat = generate(6, N, 1, 64, 1.0)
        X0 = np.linspace(-1, 1.5, N)[:, None]
        perm = np.random.default_rng(0).permutation(N)
        lat_p = BrownianLattice(lat.seed, N, 1, lat.n_fine, lat.T, lat.increments[perm])
        cfg = SimConfig(N=N, n=n, n_fine=64)
        a = simulate(cfg, model, lat, X0).final.X
        b = simulate(cfg, model, lat_p, X0[perm]).final.X
        np.testing.assert_allclose(b, a[perm], rtol=1e-12, atol=1e-14)

    def test_additive_milstein_equals_euler(self):
        model = AdditiveNoiseModel(0.8)
        lat = generate(2, 5, 1, 64, 1.0)
        X0 = np.arange(5.0)[:, None]
        a = simulate(SimConfig(N=5, n=16, scheme="milstein", n_fine=64), model, lat, X0).final.X
        b = simulate(SimConfig(N=5, n=16, scheme="euler", n_fine=64), model, lat, X0).final.X
        assert np.array_equal(a, b)

    def test_moments_do_not_grow_with_n(self):
        model = GinzburgLandauModel(1.0, 0.5)
        init = InitialLaw("uniform", {"low": -2.0, "high": 2.0})
        maxima = []
        for n in [2**k for k in range(4, 11)]:
            traj = simulate(SimConfig(N=128, n=n, n_fine=n, seed=3, initial=init), model)
            maxima.append(moment_track(traj, 4).max)
        # bounded uniformly, and refining never inflates the moment
        assert max(maxima) < 1e3
        assert max(maxima[1:]) <= maxima[0]
        assert max(maxima[3:]) / min(maxima[3:]) < 2.0

    def test_untamed_euler_diverges_tamed_milstein_does_not(self):
        model = GinzburgLandauModel(1.0, 0.5)
        init = InitialLaw("constant", {"value": 10.0})
        lat = generate(1, 8, 1, 16, 1.0)
        wild = simulate(SimConfig(N=8, n=16, n_fine=16, scheme="euler", taming=False, initial=init), model, lat)
        tame = simulate(SimConfig(N=8, n=16, n_fine=16, scheme="milstein", initial=init), model, lat)
        assert wild.diverged and wild.divergence.step < 16
        assert not tame.diverged

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(N=0, n=4)
        with pytest.raises(ValueError):
            SimConfig(N=1, n=3, n_fine=8)
        with pytest.raises(ValueError):
            SimConfig(N=1, n=3, scheme="heun")
