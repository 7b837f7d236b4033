import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from geoflow import manifold as mf
from geoflow.errors import DomainError

pos = st.floats(min_value=0.05, max_value=20.0)
alphas = arrays(np.float64, st.integers(2, 6), elements=st.floats(min_value=0.2, max_value=10.0))


class TestParams:
    def test_gaussian_validation(self):
        with pytest.raises(DomainError):
            mf.GaussianParams([0.0], 0.0).to_natural()
        with pytest.raises(DomainError):
            mf.GaussianParams([[0.0, 1.0]], 1.0)

    def test_dirichlet_validation(self):
        with pytest.raises(DomainError):
            mf.DirichletParams([0.0, 0.0])
        with pytest.raises(DomainError):
            mf.DirichletParams([1.0, -1.0])
        # a boundary point is a valid object but not an interior manifold point
        p = mf.DirichletParams([1.0, 0.0])
        assert not p.is_interior
        with pytest.raises(DomainError):
            p.to_natural()

    @given(arrays(np.float64, st.integers(1, 4), elements=st.floats(-50, 50)), pos)
    def test_gaussian_round_trip(self, mean, var):
        back = mf.GaussianParams.from_natural(mf.GaussianParams(mean, var).to_natural())
        assert back.variance == pytest.approx(var, rel=1e-12)
        np.testing.assert_allclose(back.mean, mean, rtol=1e-12, atol=1e-12 * abs(var))

    @given(alphas)
    def test_dirichlet_round_trip_exact(self, a):
        # alpha - 1 + 1 may round for tiny alpha; the documented contract is within 1e-12
        np.testing.assert_allclose(mf.DirichletParams.from_natural(mf.DirichletParams(a).to_natural()).alpha, a,
                                   rtol=1e-12)

    def test_natural_values(self):
        eta = mf.GaussianParams([2.0, -1.0], 0.5).to_natural()
        np.testing.assert_allclose(eta, [-1.0, 4.0, -2.0])
        np.testing.assert_allclose(mf.DirichletParams([2.0, 0.5]).to_natural(), [1.0, -0.5])

    def test_json_round_trip(self):
        comp = mf.CompositeParams((("x", mf.GaussianParams([1.0, 2.0], 0.3)), ("v", mf.DirichletParams([1, 2, 3]))))
        for p in (comp.blocks[0][1], comp.blocks[1][1], comp):
            back = mf.params_from_json(p.to_json())
            np.testing.assert_array_equal(back.to_natural(), p.to_natural())
        assert comp.to_json()["family"] == "composite"
        with pytest.raises(DomainError):
            mf.params_from_json({"family": "poisson"})


class TestLogPartition:
    def test_standard_normal(self):
        # integral of the unnormalised density exp(eta . T(x)) with h(x) = 1
        z, _ = integrate.quad(lambda x: math.exp(-0.5 * x * x), -np.inf, np.inf)
        assert mf.log_partition(mf.GaussianParams([0.0], 1.0)) == pytest.approx(math.log(z), abs=1e-12)
        assert math.log(z) == pytest.approx(0.918939, abs=1e-6)

    def test_dirichlet_values(self):
        assert mf.log_partition(mf.DirichletParams([1.0, 1.0, 1.0])) == pytest.approx(-0.693147, abs=1e-6)
        assert mf.log_partition(mf.DirichletParams([1.0, 1.0])) == pytest.approx(0.0, abs=1e-14)

    def test_dirichlet_quadrature(self):
        a = np.array([2.5, 0.7])
        z, _ = integrate.quad(lambda x: x ** (a[0] - 1) * (1 - x) ** (a[1] - 1), 0, 1)
        assert mf.log_partition(mf.DirichletParams(a)) == pytest.approx(math.log(z), abs=1e-8)

    @given(arrays(np.float64, st.integers(1, 4), elements=st.floats(-10, 10)), pos)
    def test_natural_form_matches(self, mean, var):
        p = mf.GaussianParams(mean, var)
        assert mf.log_partition_natural("gaussian", p.to_natural()) == pytest.approx(mf.log_partition(p), rel=1e-10,
                                                                                     abs=1e-10)

    def test_composite_additive(self):
        g, d = mf.GaussianParams([0.3, -2.0], 0.8), mf.DirichletParams([0.5, 2.0, 4.0])
        comp = mf.CompositeParams((("x", g), ("v", d)))
        assert mf.log_partition(comp) == pytest.approx(mf.log_partition(g) + mf.log_partition(d), abs=1e-14)
        np.testing.assert_array_equal(comp.to_natural(), np.concatenate([g.to_natural(), d.to_natural()]))

    def test_composite_log_density_additive(self):
        g, d = mf.GaussianParams([0.3], 0.8), mf.DirichletParams([0.5, 2.0, 4.0])
        comp = mf.CompositeParams((("x", g), ("v", d)))
        xs = mf.sample(comp, 5, 1)
        np.testing.assert_allclose(mf.log_density(comp, xs), mf.log_density(g, xs[0]) + mf.log_density(d, xs[1]))

    def test_rejects_boundary(self):
        with pytest.raises(DomainError):
            mf.log_partition(mf.DirichletParams([1.0, 0.0]))

    @pytest.mark.parametrize("params", [mf.GaussianParams([0.5, -1.0], 0.7), mf.DirichletParams([0.8, 2.0, 3.5])])
    def test_gradient_is_mean_statistic(self, params):
        fam = "gaussian" if isinstance(params, mf.GaussianParams) else "dirichlet"
        eta = params.to_natural()
        fd = np.array([(mf.log_partition_natural(fam, eta + h) - mf.log_partition_natural(fam, eta - h)) / 2e-6
                       for h in 1e-6 * np.eye(eta.size)])
        np.testing.assert_allclose(mf.grad_log_partition(params), fd, rtol=1e-7, atol=1e-8)


class TestSampling:
    def test_deterministic(self):
        p = mf.DirichletParams([1.0, 2.0])
        np.testing.assert_array_equal(mf.sample(p, 10, 4), mf.sample(p, 10, 4))

    def test_empty(self):
        assert mf.sample(mf.GaussianParams([1.0, 2.0], 1.0), 0, 0).shape == (0, 2)
        assert mf.sample(mf.DirichletParams([1.0, 2.0]), 0, 0).shape == (0, 2)

    def test_concentrated_gaussian(self):
        x = mf.sample(mf.GaussianParams([2.0], 1e-12), 1000, 0)
        assert np.abs(x - 2.0).max() < 1e-5

    def test_zero_variance_rejected(self):
        with pytest.raises(DomainError):
            mf.sample(mf.GaussianParams([2.0], 0.0), 5, 0)

    def test_vertex(self):
        x = mf.sample(mf.DirichletParams([1.0, 0.0, 0.0]), 1000, 0)
        assert np.array_equal(x, np.tile([1.0, 0.0, 0.0], (1000, 1)))

    def test_uniform_simplex_means(self):
        x = mf.sample(mf.DirichletParams([1.0, 1.0, 1.0]), 1_000_000, 0)
        se = x.std(axis=0) / 1000.0
        assert np.all(np.abs(x.mean(axis=0) - 1 / 3) < 3 * se)

    def test_small_concentration_no_underflow(self):
        x = mf.sample(mf.DirichletParams([1e-3, 1e-3, 1e-3]), 1000, 0)
        assert np.all(np.isfinite(x))
        np.testing.assert_allclose(x.sum(axis=1), 1.0)

    def test_gaussian_moments(self):
        x = mf.sample(mf.GaussianParams([1.0, -2.0], 0.25), 200_000, 3)
        np.testing.assert_allclose(x.mean(axis=0), [1.0, -2.0], atol=3 * 0.5 / math.sqrt(2e5))
        np.testing.assert_allclose(x.var(axis=0), 0.25, rtol=0.01)


class TestKL:
    def test_identity(self):
        g = mf.GaussianParams([1.0, 2.0], 0.4)
        d = mf.DirichletParams([2.0, 3.0])
        assert mf.kl_gaussian(g, g) == 0.0
        assert mf.kl_dirichlet(d, d) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("mp, vp, mq, vq, expected", [
        (0.0, 1.0, 1.0, 1.0, 0.5),
        (0.0, 1.0, 0.0, 2.0, 0.5 * (0.5 - 1 + math.log(2))),
    ])
    def test_gaussian_frozen(self, mp, vp, mq, vq, expected):
        val = mf.kl_gaussian(mf.GaussianParams([mp], vp), mf.GaussianParams([mq], vq))
        assert val == pytest.approx(expected, abs=1e-12)

    @given(st.floats(-3, 3), st.floats(0.2, 3.0), st.floats(-3, 3), st.floats(0.2, 3.0))
    def test_gaussian_vs_simpson(self, mp, vp, mq, vq):
        sp = math.sqrt(vp)
        x = np.linspace(mp - 12 * sp, mp + 12 * sp, 20001)
        lp = -0.5 * (x - mp) ** 2 / vp - 0.5 * np.log(2 * np.pi * vp)
        lq = -0.5 * (x - mq) ** 2 / vq - 0.5 * np.log(2 * np.pi * vq)
        quad = integrate.simpson(np.exp(lp) * (lp - lq), x=x)
        assert mf.kl_gaussian(mf.GaussianParams([mp], vp), mf.GaussianParams([mq], vq)) == pytest.approx(quad, abs=1e-6)

    @given(alphas, st.data())
    def test_nonnegative(self, a, data):
        b = data.draw(arrays(np.float64, a.size, elements=st.floats(0.2, 10.0)))
        kl = mf.kl_dirichlet(mf.DirichletParams(a), mf.DirichletParams(b))
        assert kl >= 0
        if not np.allclose(a, b):
            assert kl > 0

    @given(arrays(np.float64, 2, elements=st.floats(-5, 5)), arrays(np.float64, 2, elements=st.floats(-5, 5)),
           pos, pos)
    def test_gaussian_nonnegative(self, m1, m2, v1, v2):
        assert mf.kl_gaussian(mf.GaussianParams(m1, v1), mf.GaussianParams(m2, v2)) >= 0

    def test_dirichlet_monte_carlo(self):
        p, q = mf.DirichletParams([1.0, 1.0]), mf.DirichletParams([2.0, 1.0])
        rng = np.random.default_rng(0)
        logx = mf.sample_dirichlet_log(p.alpha, rng, 1_000_000)
        d = mf.dirichlet_log_density_from_log(p.alpha, logx) - mf.dirichlet_log_density_from_log(q.alpha, logx)
        assert abs(d.mean() - mf.kl_dirichlet(p, q)) < 3 * d.std() / 1000

    def test_as_written_is_reverse_direction(self):
        p, q = mf.DirichletParams([1.0, 1.0]), mf.DirichletParams([2.0, 1.0])
        assert mf.kl_dirichlet_as_written(p, q) == pytest.approx(mf.kl_dirichlet(q, p), abs=1e-15)
        assert abs(mf.kl_dirichlet_as_written(p, q) - mf.kl_dirichlet(p, q)) > 0.05
        # KL(p||q) for (1,1) vs (2,1): E_p[-ln 2x] = 1 - ln 2
        assert mf.kl_dirichlet(p, q) == pytest.approx(1 - math.log(2), abs=1e-12)

    def test_close_arguments_keep_precision(self):
        a = np.array([2.0, 3.0, 0.5])
        b = a * (1 + 1e-7)
        kl = mf.kl_dirichlet(mf.DirichletParams(a), mf.DirichletParams(b))
        quad = 0.5 * (b - a) @ mf.fisher_metric(mf.DirichletParams(a)) @ (b - a)
        assert kl == pytest.approx(quad, rel=1e-5)

    def test_rejects_boundary(self):
        with pytest.raises(DomainError):
            mf.kl_dirichlet(mf.DirichletParams([1.0, 0.0]), mf.DirichletParams([1.0, 1.0]))
        with pytest.raises(DomainError):
            mf.kl_gaussian(mf.GaussianParams([0.0], 1.0), mf.GaussianParams([0.0, 0.0], 1.0))


def _fd_hessian(family, eta, h=1e-5):
    n = eta.size
    g = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        hp = mf.grad_log_partition(_params(family, eta + e))
        hm = mf.grad_log_partition(_params(family, eta - e))
        g[:, i] = (hp - hm) / (2 * h)
    return g


def _params(family, eta):
    return mf.GaussianParams.from_natural(eta) if family == "gaussian" else mf.DirichletParams.from_natural(eta)


class TestFisher:
    def test_dirichlet_frozen(self):
        g = mf.fisher_metric(mf.DirichletParams([1.0, 1.0]))
        t1, t2 = math.pi**2 / 6, math.pi**2 / 6 - 1
        np.testing.assert_allclose(g, [[t1 - t2, -t2], [-t2, t1 - t2]], atol=1e-13)

    @pytest.mark.parametrize("params", [
        mf.DirichletParams([1.0, 1.0]),
        mf.DirichletParams([0.7, 2.0, 5.0]),
        mf.GaussianParams([0.0], 1.0),
        mf.GaussianParams([1.5, -0.3], 0.2),
    ])
    def test_matches_fd_hessian(self, params):
        fam = "gaussian" if isinstance(params, mf.GaussianParams) else "dirichlet"
        g = mf.fisher_metric(params)
        fd = _fd_hessian(fam, params.to_natural())
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)

    @given(alphas)
    def test_symmetric_positive_definite(self, a):
        g = mf.fisher_metric(mf.DirichletParams(a))
        assert np.array_equal(g, g.T)
        assert np.linalg.eigvalsh(g).min() > 0

    def test_gaussian_spd(self):
        g = mf.fisher_metric(mf.GaussianParams([1.0, -2.0, 0.5], 0.3))
        assert np.allclose(g, g.T, rtol=0, atol=0)
        assert np.linalg.eigvalsh(g).min() > 0

    def test_composite_block_diagonal(self):
        g, d = mf.GaussianParams([0.3], 0.8), mf.DirichletParams([0.5, 2.0])
        big = mf.fisher_metric(mf.CompositeParams((("x", g), ("v", d))))
        assert big.shape == (4, 4)
        np.testing.assert_array_equal(big[2:, 2:], mf.fisher_metric(d))
        assert np.all(big[:2, 2:] == 0)

    def test_rejects_boundary(self):
        with pytest.raises(DomainError):
            mf.fisher_metric(mf.DirichletParams([1.0, 0.0]))

    @pytest.mark.parametrize("family", ["gaussian", "dirichlet"])
    def test_second_order_kl_law(self, family):
        rng = np.random.default_rng(5)
        s = 1e-3
        for _ in range(20):
            if family == "gaussian":
                p = mf.GaussianParams(rng.normal(size=2), rng.uniform(0.3, 3))
            else:
                p = mf.DirichletParams(rng.uniform(0.5, 5, 4))
            eta = p.to_natural()
            d1, d2 = rng.normal(size=(2, eta.size))
            d1 *= s / np.linalg.norm(d1)
            d2 *= s / np.linalg.norm(d2)
            a, b = _params(family, eta + d1), _params(family, eta + d2)
            kl = mf.kl_gaussian(a, b) if family == "gaussian" else mf.kl_dirichlet(a, b)
            quad = 0.5 * (d1 - d2) @ mf.fisher_metric(p) @ (d1 - d2)
            assert 0.99 <= kl / quad <= 1.01
