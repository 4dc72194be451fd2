"""Tilt flow integration: exactness, order, reversibility, structure."""

import numpy as np
import pytest

from loclab.errors import LoclabError
from loclab.flow import (
    BrownianPath,
    check_flow_structure,
    sample_brownian_path,
    solve_flow,
    solve_reverse_flow,
)
from loclab.measures import make_atom_cloud, make_truncated_gaussian

TWO_ATOM = make_atom_cloud("two-atom", 1)
GAUSS_1D = make_truncated_gaussian(1, 8.0, 512)
GAUSS_2D = make_truncated_gaussian(2, 8.0, 512)


class TestBrownianPath:
    def test_container_shape(self):
        p = sample_brownian_path(1, 1.0, 0.5, seed=0)
        assert p.grid.shape == (3,)
        assert p.values.shape == (3, 1)
        assert p.values[0, 0] == 0.0

    def test_determinism(self):
        a = sample_brownian_path(3, 1.0, 0.01, seed=42)
        b = sample_brownian_path(3, 1.0, 0.01, seed=42)
        assert np.array_equal(a.values, b.values)

    def test_marginal_variance(self):
        # Monte Carlo oracle: Var(B_1) = t_max over many seeds
        t_max = 1.0
        vals = np.array([
            sample_brownian_path(1, t_max, 0.25, seed=s).values[-1, 0]
            for s in range(10_000)
        ])
        assert abs(vals.var() - t_max) < 0.05 * t_max

    def test_increment_reconstruction(self):
        p = sample_brownian_path(2, 0.5, 0.1, seed=7)
        rng = np.random.Generator(np.random.Philox(key=7))
        inc = rng.standard_normal((5, 2)) * np.sqrt(0.1)
        assert np.allclose(p.increments(), inc)

    def test_off_grid_time_rejected(self):
        p = sample_brownian_path(1, 1.0, 0.1, seed=0)
        with pytest.raises(LoclabError):
            p.index_of(0.123456)


class TestSolveFlow:
    def test_single_atom_exact(self):
        # constant drift x0, zero covariance: theta = x + w_t + t x0, M = Id
        m = make_atom_cloud("single-atom", 2, x0=(1.0, 0.0))
        grid = np.linspace(0.0, 2.0, 21)
        path = BrownianPath(grid=grid, values=np.zeros((21, 2)), seed=None, n=2)
        traj = solve_flow(m, np.zeros(2), path, want_deriv=True)
        assert np.allclose(traj.theta[-1], [2.0, 0.0], atol=1e-14)
        expected = grid[:, None] * np.array([1.0, 0.0])
        assert np.abs(traj.theta - expected).max() < 1e-13
        assert np.abs(traj.deriv - np.eye(2)).max() < 1e-14

    def test_gaussian_derivative_flow(self):
        # A(t, theta) = Id/(1+t) gives M_t = (1+t) Id, |M_1|^2 = 4n
        n = 2
        path = sample_brownian_path(n, 1.0, 1e-3, seed=3)
        traj = solve_flow(GAUSS_2D, np.zeros(n), path, want_deriv=True)
        hs = (traj.deriv[-1] ** 2).sum()
        assert abs(hs - 4.0 * n) < 0.01 * 4.0 * n
        assert np.abs(traj.deriv[-1] - 2.0 * np.eye(n)).max() < 1e-3

    def test_richardson_second_order(self):
        path = sample_brownian_path(1, 1.0, 0.01, seed=11)
        ends = [solve_flow(TWO_ATOM, np.array([0.2]), path,
                           substeps=s).theta[-1, 0] for s in (1, 2, 4)]
        e1 = abs(ends[0] - ends[1])
        e2 = abs(ends[1] - ends[2])
        assert 3.0 <= e1 / e2 <= 5.0

    def test_dimension_mismatch(self):
        path = sample_brownian_path(2, 0.5, 0.1, seed=1)
        with pytest.raises(LoclabError):
            solve_flow(GAUSS_1D, np.zeros(1), path)

    def test_jacobian_matches_finite_differences(self):
        path = sample_brownian_path(2, 0.5, 1e-3, seed=19)
        x = np.array([0.1, -0.3])
        traj = solve_flow(GAUSS_2D, x, path, want_deriv=True)
        eps = 1e-5
        for i in range(2):
            e = np.zeros(2)
            e[i] = eps
            plus = solve_flow(GAUSS_2D, x + e, path).theta[-1]
            minus = solve_flow(GAUSS_2D, x - e, path).theta[-1]
            fd = (plus - minus) / (2 * eps)
            col = traj.deriv[-1][:, i]
            assert np.abs(fd - col).max() < 1e-4 * max(1.0, np.abs(col).max())

    def test_path_continuity_bound(self):
        # perturbing the path uniformly by delta moves theta by at most
        # e^{R^2 t} (1 + R^2 t) delta plus integration tolerance
        delta = 1e-3
        path = sample_brownian_path(1, 1.0, 1e-2, seed=23)
        bump = delta * np.sin(np.linspace(0.0, np.pi, path.grid.size))[:, None]
        bump[0] = 0.0
        perturbed = BrownianPath(grid=path.grid, values=path.values + bump,
                                 seed=None, n=1)
        a = solve_flow(TWO_ATOM, np.array([0.3]), path).theta
        b = solve_flow(TWO_ATOM, np.array([0.3]), perturbed).theta
        r2 = TWO_ATOM.support_radius**2
        t = path.grid[-1]
        bound = np.exp(r2 * t) * (1.0 + r2 * t) * delta + 1e-8
        assert np.abs(a - b).max() <= bound


class TestReverseFlow:
    def test_single_atom_exact(self):
        m = make_atom_cloud("single-atom", 1, x0=(0.5,))
        path = sample_brownian_path(1, 1.0, 0.1, seed=2)
        y = np.array([1.7])
        x = solve_reverse_flow(m, y, path, t=1.0)
        oracle = y - path.values[-1] - 1.0 * 0.5
        assert np.allclose(x, oracle, atol=1e-13)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for k in range(50):
            path = sample_brownian_path(1, 1.0, 1e-3, seed=100 + k)
            x = rng.standard_normal(1)
            y = solve_flow(GAUSS_1D, x, path).theta[-1]
            back = solve_reverse_flow(GAUSS_1D, y, path, t=1.0)
            worst = max(worst, abs(float(back[0] - x[0])))
        assert worst < 1e-6

    def test_injectivity_witness(self):
        path = sample_brownian_path(1, 0.5, 1e-2, seed=5)
        x1 = solve_reverse_flow(TWO_ATOM, np.array([0.4]), path, t=0.5)
        x2 = solve_reverse_flow(TWO_ATOM, np.array([0.9]), path, t=0.5)
        assert abs(x1[0] - x2[0]) > 1e-8


class TestFlowStructure:
    def test_single_atom_equality(self):
        m = make_atom_cloud("single-atom", 1, x0=(1.0,))
        path = sample_brownian_path(1, 1.0, 1e-2, seed=4)
        rep = check_flow_structure(m, path, [[0.0], [1.0]],
                                   t_grid=[0.5, 1.0])
        assert rep.expansion_ok and abs(rep.expansion_margin) < 1e-12
        assert rep.passed

    def test_gaussian_ratio_decreasing(self):
        # closed form: |theta^x - theta^y| = (1+t) |x-y|, ratio (1+t)/t decreasing
        path = sample_brownian_path(1, 1.0, 1e-2, seed=6)
        rep = check_flow_structure(GAUSS_1D, path, [[0.0], [1.0]],
                                   t_grid=[0.25, 0.5, 1.0])
        assert rep.ratio_asserted and rep.ratio_monotone_ok
        flows = [solve_flow(GAUSS_1D, np.array([x]), path) for x in (0.0, 1.0)]
        d = np.abs(flows[0].theta - flows[1].theta).ravel()
        expected = 1.0 + path.grid
        assert np.abs(d - expected).max() < 1e-3

    def test_semigroup(self):
        path = sample_brownian_path(2, 1.0, 1e-3, seed=8)
        rep = check_flow_structure(GAUSS_2D, path, [[0.0, 0.0], [0.5, -0.2]],
                                   t_grid=[0.5, 1.0])
        assert rep.semigroup_ok
        assert rep.semigroup_error < 1e-5

    def test_atom_cloud_ratio_recorded_not_asserted(self):
        cloud = make_atom_cloud("cube", 2, 100, seed=9)
        path = sample_brownian_path(2, 0.5, 1e-2, seed=10)
        rep = check_flow_structure(cloud, path, [[0.0, 0.0], [0.3, 0.1]],
                                   t_grid=[0.25, 0.5])
        assert not rep.ratio_asserted
        assert rep.expansion_ok and rep.lipschitz_ok
