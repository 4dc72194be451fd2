"""Tilted log-mass, derivative tensors, and barycenter inversion."""

import math
import warnings

import numpy as np
import pytest

from loclab.errors import DegenerateTiltWarning, InteriorPointError, LoclabError
from loclab.loglaplace import (
    Tilt,
    invert_grad_laplace,
    log_laplace,
    tilt_summary,
    tilt_third_tensor,
)
from loclab.measures import (
    make_atom_cloud,
    make_cube_measure,
    make_truncated_gaussian,
    AtomicMeasure,
)

TWO_ATOM = make_atom_cloud("two-atom", 1)


class TestLogLaplace:
    def test_single_atom_zero_mass(self):
        m = make_atom_cloud("single-atom", 2, x0=(0.0, 0.0))
        for t, th in [(0.0, (0.3, -1.0)), (2.5, (0.0, 0.0)), (1.0, (5.0, 5.0))]:
            assert log_laplace(m, Tilt(t, th)) == pytest.approx(0.0, abs=1e-14)

    def test_two_atom_log_cosh(self):
        # oracle: direct two-term sum log(e^1/2 + e^-1/2)
        oracle = math.log(0.5 * math.exp(1.0) + 0.5 * math.exp(-1.0))
        assert oracle == pytest.approx(math.log(math.cosh(1.0)))
        got = log_laplace(TWO_ATOM, Tilt(0.0, [1.0]))
        assert got == pytest.approx(oracle, abs=1e-14)

    def test_two_atom_gaussian_factor(self):
        # both atoms contribute e^{-3/2}; weights sum to 1
        got = log_laplace(TWO_ATOM, Tilt(3.0, [0.0]))
        assert got == pytest.approx(-1.5, abs=1e-14)

    def test_no_overflow_huge_tilt(self):
        val = log_laplace(TWO_ATOM, Tilt(0.0, [1e6]))
        assert np.isfinite(val)
        assert val == pytest.approx(1e6 + math.log(0.5), rel=1e-12)


class TestTiltSummary:
    def test_isotropic_zero_tilt(self):
        m = make_cube_measure(3, 512)
        s = tilt_summary(m, Tilt(0.0, np.zeros(3)))
        assert np.abs(s.mean).max() < 1e-9
        assert np.abs(s.cov - np.eye(3)).max() < 1e-6

    def test_two_atom_closed_form(self):
        # two atoms sit below the effective-sample floor by construction
        with pytest.warns(DegenerateTiltWarning):
            s = tilt_summary(TWO_ATOM, Tilt(0.0, [1.0]))
        assert s.mean[0] == pytest.approx(math.tanh(1.0), abs=1e-14)
        assert s.cov[0, 0] == pytest.approx(1.0 - math.tanh(1.0) ** 2, abs=1e-14)

    def test_gaussian_time_shrinks_cov(self):
        # exact Gaussian: tilted covariance 1/(1+t)
        m = make_truncated_gaussian(1, 8.0, 2048)
        s = tilt_summary(m, Tilt(1.0, [0.0]))
        assert s.cov[0, 0] == pytest.approx(0.5, abs=1e-4)

    def test_ess_warning(self):
        cloud = make_atom_cloud("gaussian", 1, 200, seed=4)
        with pytest.warns(DegenerateTiltWarning):
            s = tilt_summary(cloud, Tilt(0.0, [40.0]))
        assert s.low_ess
        assert s.ess < 50


class TestThirdTensor:
    def test_symmetric_law_vanishes(self):
        xi = tilt_third_tensor(TWO_ATOM, Tilt(0.0, [0.0]), np.eye(1))
        assert abs(xi[0, 0, 0]) < 1e-15

    def test_three_atom_brute_force(self):
        m = AtomicMeasure(dim=1, atoms=[[-1.0], [0.0], [2.0]],
                          weights=[0.4, 0.4, 0.2])
        xi = tilt_third_tensor(m, Tilt(0.0, [0.0]), np.eye(1))
        # brute-force oracle: centered third moment of the three atoms
        pts = np.array([-1.0, 0.0, 2.0])
        w = np.array([0.4, 0.4, 0.2])
        mean = (w * pts).sum()
        oracle = (w * (pts - mean) ** 3).sum()
        assert xi[0, 0, 0] == pytest.approx(oracle, abs=1e-14)

    def test_permutation_symmetry(self):
        m = make_atom_cloud("cube", 3, 60, seed=2)
        rng = np.random.default_rng(0)
        basis, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        xi = tilt_third_tensor(m, Tilt(0.3, [0.1, -0.2, 0.4]), basis)
        for perm in [(0, 2, 1), (1, 0, 2), (2, 1, 0), (1, 2, 0), (2, 0, 1)]:
            assert np.abs(xi - np.transpose(xi, perm)).max() < 1e-12

    def test_product_diag_only(self):
        from loclab.measures import make_exponential_product
        m = make_exponential_product(2, 256)
        xi = tilt_third_tensor(m, Tilt(0.0, np.zeros(2)), np.eye(2))
        # off-diagonal entries vanish for independent centered coordinates
        assert abs(xi[0, 0, 1]) < 1e-14
        assert abs(xi[0, 1, 1]) < 1e-14
        assert abs(xi[0, 0, 0]) > 0.1

    def test_rejects_skew_basis(self):
        with pytest.raises(LoclabError):
            tilt_third_tensor(TWO_ATOM, Tilt(0.0, [0.0]),
                              np.array([[1.0 + 1e-6]]))


class TestInversion:
    def test_centered_target_zero(self):
        m = make_truncated_gaussian(1, 8.0, 512)
        theta = invert_grad_laplace(m, 0.0, [0.0])
        assert abs(theta[0]) < 1e-9

    def test_two_atom_artanh(self):
        theta = invert_grad_laplace(TWO_ATOM, 0.0, [0.5])
        assert theta[0] == pytest.approx(math.atanh(0.5), abs=1e-9)

    @pytest.mark.parametrize("measure", [
        make_truncated_gaussian(1, 8.0, 512),
        make_cube_measure(2, 512),
        make_atom_cloud("cube", 2, 200, seed=8),
    ])
    def test_round_trip_random_targets(self, measure):
        rng = np.random.default_rng(31)
        for _ in range(100):
            t = float(rng.uniform(0.0, 2.0))
            theta = rng.standard_normal(measure.dim)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateTiltWarning)
                target = tilt_summary(measure, Tilt(t, theta)).mean
                back = invert_grad_laplace(measure, t, target)
                reached = tilt_summary(measure, Tilt(t, back)).mean
            assert np.linalg.norm(reached - target) < 1e-9

    def test_exterior_target_rejected(self):
        m = make_cube_measure(1, 512)
        with pytest.raises(InteriorPointError):
            invert_grad_laplace(m, 0.0, [5.0])


class TestAnalyticProperties:
    def test_convexity(self):
        m = make_atom_cloud("gaussian", 2, 120, seed=5)
        rng = np.random.default_rng(7)
        for _ in range(50):
            t = float(rng.uniform(0.0, 3.0))
            th1, th2 = rng.standard_normal((2, 2)) * 2.0
            s = float(rng.uniform())
            lhs = log_laplace(m, Tilt(t, s * th1 + (1 - s) * th2))
            rhs = (s * log_laplace(m, Tilt(t, th1))
                   + (1 - s) * log_laplace(m, Tilt(t, th2)))
            assert lhs <= rhs + 1e-10

    def test_gradient_matches_mean(self):
        m = make_cube_measure(2, 512)
        rng = np.random.default_rng(9)
        eps = 1e-5
        for _ in range(20):
            t = float(rng.uniform(0.0, 2.0))
            theta = rng.standard_normal(2)
            s = tilt_summary(m, Tilt(t, theta))
            for i in range(2):
                e = np.zeros(2)
                e[i] = eps
                fd = (log_laplace(m, Tilt(t, theta + e))
                      - log_laplace(m, Tilt(t, theta - e))) / (2 * eps)
                assert fd == pytest.approx(s.mean[i], rel=1e-6, abs=1e-9)

    def test_hessian_matches_cov(self):
        m = make_truncated_gaussian(2, 8.0, 512)
        rng = np.random.default_rng(13)
        eps = 1e-5
        for _ in range(10):
            t = float(rng.uniform(0.0, 2.0))
            theta = rng.standard_normal(2)
            s = tilt_summary(m, Tilt(t, theta))
            for i in range(2):
                e = np.zeros(2)
                e[i] = eps
                fd = (tilt_summary(m, Tilt(t, theta + e)).mean
                      - tilt_summary(m, Tilt(t, theta - e)).mean) / (2 * eps)
                assert np.abs(fd - s.cov[:, i]).max() < 1e-5

    def test_support_radius_bounds(self):
        for m in (TWO_ATOM, make_cube_measure(2, 256),
                  make_atom_cloud("gaussian", 2, 150, seed=6)):
            r = m.support_radius
            rng = np.random.default_rng(17)
            prev = None
            for _ in range(40):
                t = float(rng.uniform(0.0, 4.0))
                theta = rng.standard_normal(m.dim) * 3.0
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegenerateTiltWarning)
                    s = tilt_summary(m, Tilt(t, theta))
                assert np.linalg.norm(s.mean) <= r + 1e-12
                assert np.linalg.eigvalsh(s.cov).max() <= r**2 + 1e-12
                if prev is not None and prev[0] == t:
                    lip = np.linalg.norm(s.mean - prev[2])
                    assert lip <= r**2 * np.linalg.norm(theta - prev[1]) + 1e-12
                prev = (t, theta, s.mean)

    def test_mean_lipschitz_in_theta(self):
        m = make_cube_measure(2, 256)
        r2 = m.support_radius**2
        rng = np.random.default_rng(23)
        for _ in range(40):
            t = float(rng.uniform(0.0, 3.0))
            th1, th2 = rng.standard_normal((2, 2)) * 2.0
            a1 = tilt_summary(m, Tilt(t, th1)).mean
            a2 = tilt_summary(m, Tilt(t, th2)).mean
            assert (np.linalg.norm(a1 - a2)
                    <= r2 * np.linalg.norm(th1 - th2) + 1e-12)

    def test_lichnerowicz_product_measures(self):
        # covariance of a t-uniformly log-concave measure is at most Id/t
        rng = np.random.default_rng(29)
        for m in (make_cube_measure(2, 512), make_truncated_gaussian(2, 8.0, 512)):
            for t in np.geomspace(0.05, 20.0, 12):
                theta = rng.standard_normal(2) * 2.0
                s = tilt_summary(m, Tilt(float(t), theta))
                lam_max = np.linalg.eigvalsh(s.cov).max()
                assert lam_max <= (1.0 + 1e-3) / t
