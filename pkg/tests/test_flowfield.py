import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoflow import flowfield as ff
from geoflow import geodesic as geo
from geoflow.errors import DomainError

EVO = geo.EvoSchedule.evo()


class TestVelocity:
    def test_mode_moves_with_mean(self):
        mu, _, dmu, _ = geo.gaussian_path_rates(EVO, [2.0], 0.4)
        assert ff.gaussian_velocity(EVO, 2.0, 0.4, mu[0]) == pytest.approx(dmu[0], abs=1e-12)

    def test_sldm_pure_translation(self):
        s = geo.EvoSchedule.sldm(0.05)
        u = ff.gaussian_velocity(s, 2.0, 0.3, np.linspace(-5, 5, 11))
        np.testing.assert_allclose(u, 2.0, rtol=1e-12)

    def test_particle_transport(self):
        # x = mu_t + sigma_t z is carried to mu_{t+h} + sigma_{t+h} z
        t, x, h = 0.5, 3.0, 1e-6
        p = geo.gaussian_path(EVO, [2.0], t)
        z = (x - p.mean[0]) / p.sigma
        fwd, bwd = geo.gaussian_path(EVO, [2.0], t + h), geo.gaussian_path(EVO, [2.0], t - h)
        fd = ((fwd.mean[0] + fwd.sigma * z) - (bwd.mean[0] + bwd.sigma * z)) / (2 * h)
        assert ff.gaussian_velocity(EVO, 2.0, t, x) == pytest.approx(fd, abs=1e-4)

    @given(st.floats(0.01, 0.99), st.floats(-10, 10), st.floats(-10, 10))
    def test_affine_in_x(self, t, a, b):
        u = ff.gaussian_velocity(EVO, 2.0, t, np.array([a, b, 0.5 * (a + b)]))
        assert u[2] == pytest.approx(0.5 * (u[0] + u[1]), rel=1e-9, abs=1e-9)

    def test_vector_target_broadcasts(self):
        u = ff.gaussian_velocity(EVO, np.array([1.0, -1.0]), 0.5, np.zeros(2))
        assert u.shape == (2,)
        assert u[0] == pytest.approx(-u[1])


class TestGrid:
    @pytest.mark.parametrize("t", [0.0, 0.5, 0.99])
    def test_density_normalised(self, t):
        g = ff.density_grid(EVO, 2.0, t)
        assert abs(g.integral() - 1.0) < 1e-4
        assert g.nodes.size == g.values.size

    def test_coarse_grid_flagged(self):
        coarse = ff.density_grid(EVO, 2.0, 0.5, points_per_sigma=10)
        res = ff.continuity_residual(EVO, 2.0, 0.5, grid=coarse)
        assert res.coarse and res.status.startswith("warning")
        assert ff.continuity_residual(EVO, 2.0, 0.5).status == "ok"


class TestContinuity:
    @pytest.mark.parametrize("t", np.round(np.linspace(0.05, 0.95, 19), 10))
    def test_analytic_field(self, t):
        assert ff.continuity_residual(EVO, 2.0, float(t)).residual < 1e-4

    @pytest.mark.parametrize("target", [-3.0, 0.0, 0.7])
    def test_other_targets(self, target):
        assert ff.continuity_residual(EVO, target, 0.6).residual < 1e-4

    def test_zero_velocity_control(self):
        res = ff.continuity_residual(EVO, 2.0, 0.5, velocity=ff.zero_velocity)
        assert res.residual > 1e-2

    def test_stationary_path(self):
        still = geo.EvoSchedule.static(1.0)
        res = ff.continuity_residual(still, 0.0, 0.5, velocity=ff.zero_velocity)
        assert res.residual < 1e-10

    def test_endpoint_rejected(self):
        with pytest.raises(DomainError):
            ff.continuity_residual(EVO, 2.0, 1.0)


class TestFisherFM:
    def test_zero_scale_convention(self):
        assert ff.fisher_fm_check(EVO, [2.0], 0.5, 0.0) == 1.0
        assert ff.fisher_fm_check(EVO, [2.0], 0.5, 1e-3, 0.0) == 1.0

    @pytest.mark.parametrize("t", [0.1, 0.3, 0.5, 0.7])
    def test_gaussian_band(self, t):
        for seed in range(5):
            assert 0.99 <= ff.fisher_fm_check(EVO, np.array([2.0, -1.0, 0.5]), t, 1e-3, 1e-3, "gaussian", seed) <= 1.01

    @pytest.mark.parametrize("k", [3, 7])
    @pytest.mark.parametrize("t", [0.1, 0.3, 0.5, 0.7])
    def test_dirichlet_band(self, k, t):
        for seed in range(5):
            assert 0.98 <= ff.fisher_fm_check(EVO, np.eye(k)[0], t, 1e-3, 1e-3, "dirichlet", seed) <= 1.02

    @pytest.mark.parametrize("family, target", [
        ("gaussian", np.array([2.0, -1.0, 0.5])),
        ("gaussian", np.array([2.0])),
        ("dirichlet", np.eye(3)[0]),
        ("dirichlet", np.eye(7)[0]),
    ])
    @pytest.mark.parametrize("t", [0.05, 0.5, 0.9])
    def test_tightens_with_scale(self, family, target, t):
        devs = [max(abs(ff.fisher_fm_check(EVO, target, t, s, s, family, seed) - 1) for seed in range(5))
                for s in (1e-2, 1e-3, 1e-4)]
        assert devs[0] > devs[1] > devs[2]
        assert devs[2] < 5e-3

    def test_unknown_family(self):
        with pytest.raises(DomainError):
            ff.fisher_fm_check(EVO, [2.0], 0.5, 1e-3, family="poisson")
