"""Product integrals, spectral inequalities, divided differences, bumps."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from loclab.errors import HypothesisViolatedError, LoclabError, StepSizeError
from loclab.measures import make_exponential_product, make_truncated_gaussian
from loclab.spectral import (
    PSDPath,
    check_lemma2230,
    check_prop1813,
    dk_quadratic_form,
    guan_tensor_check,
    make_bump,
    polynomial_function,
    random_rotating_psd_path,
    solve_product_integral,
    sorted_eigh,
    trace_fn,
    von_neumann_gap,
)


def constant_path(matrix, t_max=1.0, dt=1e-3):
    matrix = np.asarray(matrix, dtype=float)
    steps = int(round(t_max / dt))
    grid = np.arange(steps + 1) * dt
    return PSDPath(grid=grid, matrices=np.tile(matrix, (steps + 1, 1, 1)))


def rotating_rank_one_path(omega=5.0, t_max=1.0, dt=1e-3):
    steps = int(round(t_max / dt))
    grid = np.arange(steps + 1) * dt
    c, s = np.cos(omega * grid), np.sin(omega * grid)
    mats = np.empty((steps + 1, 2, 2))
    mats[:, 0, 0] = c * c
    mats[:, 0, 1] = mats[:, 1, 0] = c * s
    mats[:, 1, 1] = s * s
    return PSDPath(grid=grid, matrices=mats, descriptor={"omega": omega})


class TestProductIntegral:
    def test_scalar_exponential(self):
        path = constant_path([[1.0]])
        M = solve_product_integral(path)
        assert abs(M[-1, 0, 0] - math.e) < 1e-6

    def test_commuting_diagonal(self):
        path = constant_path(np.diag([1.0, 2.0]))
        M = solve_product_integral(path)
        assert abs(M[-1, 0, 0] - math.e) / math.e < 1e-5
        assert abs(M[-1, 1, 1] - math.e**2) / math.e**2 < 1e-5
        assert abs(M[-1, 0, 1]) < 1e-12

    def test_rotating_rank_one_against_closed_form(self):
        # rotating frame: N' = (P - omega J) N is constant-coefficient, so
        # M_t = Q(omega t) expm(t (P - omega J)) is an exact reference
        omega = 5.0
        path = rotating_rank_one_path(omega=omega)
        M = solve_product_integral(path)
        P = np.diag([1.0, 0.0])
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        t = 1.0
        Q = np.array([[math.cos(omega * t), -math.sin(omega * t)],
                      [math.sin(omega * t), math.cos(omega * t)]])
        ref = Q @ expm(t * (P - omega * J))
        assert np.abs(M[-1] - ref).max() < 1e-4
        # fine-grid self-check agrees with the closed form
        fine = solve_product_integral(rotating_rank_one_path(omega=omega, dt=1e-5))
        assert np.abs(fine[-1] - ref).max() < 1e-7

    def test_step_size_guard(self):
        path = constant_path([[600.0]], t_max=0.01, dt=1e-3)
        with pytest.raises(StepSizeError):
            solve_product_integral(path)


class TestProp1813:
    def test_scalar_equality(self):
        rep = check_prop1813(constant_path([[1.0]]))
        assert rep.passed
        assert abs(rep.lhs - rep.rhs) < 1e-5 * rep.rhs

    def test_commuting_equality(self):
        rep = check_prop1813(constant_path(np.diag([1.0, 2.0]), dt=5e-4))
        assert rep.passed
        assert abs(rep.lhs - rep.rhs) < 1e-6 * rep.rhs

    def test_random_rotating_paths(self):
        for i in range(50):
            n = 2 + i % 5
            path = random_rotating_psd_path(n, 1.0, 1e-3, seed=1000 + i)
            rep = check_prop1813(path)
            assert rep.passed, (i, rep.margin)

    def test_report_serializes(self):
        rep = check_prop1813(constant_path([[0.5]]))
        doc = rep.to_json()
        assert doc["check"] == "prop1813"
        assert set(doc) >= {"check", "inputs", "lhs", "rhs", "margin", "pass"}


class TestLemma2230:
    def test_fixed_point_saturates(self):
        grid = np.linspace(0.0, 1.0, 201)
        lam = np.vstack([np.full(201, 1.5), np.full(201, 0.5)])
        mu = np.exp(2.0 * lam * grid)
        rep = check_lemma2230(mu, lam, grid)
        assert rep.passed
        assert rep.margin < 1e-4  # equality case: conclusion tight

    def test_constant_case(self):
        grid = np.linspace(0.0, 1.0, 51)
        mu = np.ones((3, 51))
        lam = np.zeros((3, 51))
        rep = check_lemma2230(mu, lam, grid)
        assert rep.passed

    def test_harvested_from_matrix_flow(self):
        # mu_i = descending eigenvalues of M^T M, lambda from the path:
        # the partial-sum hypothesis is the integral identity behind the
        # Hilbert-Schmidt bound, so harvested data must satisfy both sides
        for i in range(100):
            n = 2 + i % 5
            path = random_rotating_psd_path(n, 1.0, 2e-3, seed=4000 + i)
            M = solve_product_integral(path)
            gram = np.einsum("tji,tjk->tik", M, M)
            mu = np.linalg.eigvalsh(gram)[:, ::-1].T
            lam = path.eigenvalues().T
            rep = check_lemma2230(mu, lam, path.grid)
            assert rep.passed, i

    def test_hypothesis_violation_rejected(self):
        grid = np.linspace(0.0, 1.0, 11)
        mu = np.full((1, 11), 10.0)
        lam = np.zeros((1, 11))
        with pytest.raises(HypothesisViolatedError):
            check_lemma2230(mu, lam, grid)

    def test_unsorted_lambda_rejected(self):
        grid = np.linspace(0.0, 1.0, 11)
        mu = np.ones((2, 11))
        lam = np.vstack([np.full(11, 0.5), np.full(11, 1.5)])
        with pytest.raises(LoclabError):
            check_lemma2230(mu, lam, grid)


class TestVonNeumann:
    def test_identity_gap_zero(self):
        assert von_neumann_gap(np.eye(2), np.eye(2)) == pytest.approx(0.0, abs=1e-12)

    def test_hand_summed(self):
        # sorted products 2*2 + 1*1 = 5; Tr[AB] = 2*1 + 1*2 = 4
        gap = von_neumann_gap(np.diag([2.0, 1.0]), np.diag([1.0, 2.0]))
        assert gap == pytest.approx(1.0, abs=1e-12)

    def test_many_random_pairs(self):
        rng = np.random.default_rng(77)
        worst = np.inf
        for _ in range(10_000):
            n = int(rng.integers(2, 7))
            X = rng.standard_normal((n, n))
            Y = rng.standard_normal((n, n))
            worst = min(worst, von_neumann_gap(X @ X.T, Y @ Y.T))
        assert worst >= -1e-10

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_gap_nonnegative_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        X = rng.standard_normal((n, n))
        Y = rng.standard_normal((n, n))
        assert von_neumann_gap(X @ X.T, Y @ Y.T) >= -1e-10


class TestDaleckiiKrein:
    def test_square_function(self):
        rng = np.random.default_rng(1)
        f = polynomial_function([1.0, 0.0, 0.0])
        for _ in range(5):
            X = rng.standard_normal((3, 3))
            A = X @ X.T
            H = rng.standard_normal((3, 3))
            H = 0.5 * (H + H.T)
            got = dk_quadratic_form(A, H, f)
            assert got == pytest.approx(2.0 * (H**2).sum(), rel=1e-12)

    def test_cubic_hand_case(self):
        f = polynomial_function([1.0, 0.0, 0.0, 0.0])
        A = np.diag([1.0, 2.0])
        H = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert dk_quadratic_form(A, H, f) == pytest.approx(18.0, rel=1e-12)

    @staticmethod
    def fd_oracle(A, H, fn, eps):
        return (trace_fn(A + eps * H, fn) - 2.0 * trace_fn(A, fn)
                + trace_fn(A - eps * H, fn)) / eps**2

    def test_matches_second_difference(self):
        rng = np.random.default_rng(2)
        functions = [
            (polynomial_function([0.3, -0.5, 2.0, 1.0, 0.0]), 1e-4),
            (polynomial_function([1.0, 0.0, 0.0]), 1e-4),
            (make_bump(2.0, 2.5), 3e-5),
            (make_bump(4.0, 2.0), 2e-5),
        ]
        for fn, eps in functions:
            for _ in range(10):
                n = int(rng.integers(2, 5))
                X = rng.standard_normal((n, n))
                A = X @ X.T / n + 0.5 * np.eye(n)
                H = rng.standard_normal((n, n))
                H = 0.5 * (H + H.T)
                H /= np.abs(np.linalg.eigvalsh(H)).max()
                got = dk_quadratic_form(A, H, fn)
                want = self.fd_oracle(A, H, fn, eps)
                assert got == pytest.approx(want, rel=1e-4, abs=1e-8)

    def test_symmetry_and_homogeneity(self):
        rng = np.random.default_rng(3)
        fn = polynomial_function([0.7, 1.0, -0.2, 0.5])
        X = rng.standard_normal((4, 4))
        A = X @ X.T
        H = rng.standard_normal((4, 4))
        H = 0.5 * (H + H.T)
        base = dk_quadratic_form(A, H, fn)
        assert dk_quadratic_form(A, -H, fn) == pytest.approx(base, abs=1e-10)
        assert dk_quadratic_form(A, 2.0 * H, fn) == pytest.approx(
            4.0 * base, rel=1e-10)

    def test_degenerate_spectrum_uses_fpp(self):
        fn = polynomial_function([1.0, 0.0, 0.0, 0.0])  # x^3, f'' = 6x
        A = np.eye(2) * 1.5
        H = np.array([[0.2, 0.1], [0.1, -0.3]])
        got = dk_quadratic_form(A, H, fn)
        assert got == pytest.approx(6.0 * 1.5 * (H**2).sum(), rel=1e-12)


class TestTraceCalculus:
    def test_trace_fn_matches_matrix_polynomial(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((4, 4))
        A = X @ X.T
        fn = polynomial_function([2.0, -1.0, 0.5, 3.0])
        direct = np.trace(2.0 * A @ A @ A - A @ A + 0.5 * A + 3.0 * np.eye(4))
        assert trace_fn(A, fn) == pytest.approx(direct, rel=1e-8)

    def test_sorted_eigh_sign_convention(self):
        A = np.diag([1.0, 3.0, 2.0])
        vals, vecs = sorted_eigh(A)
        assert np.allclose(vals, [3.0, 2.0, 1.0])
        assert np.allclose(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])
        assert (vecs.max(axis=0) > 0).all()


class TestBumpFamily:
    def test_quadratic_endpoint(self):
        fn = make_bump(2.0, 2.5)
        assert fn(np.array([2.5]))[0] == pytest.approx(6.25, abs=1e-12)

    def test_exponential_endpoint(self):
        for D, r in [(1.5, 2.0), (4.0, 3.0), (8.0, 2.5)]:
            fn = make_bump(D, r)
            x0 = r - 1.0 / D
            assert fn(np.array([x0]))[0] == pytest.approx(1.0 / math.e, abs=1e-12)

    @pytest.mark.parametrize("D", [1.5, 2.0, 4.0, 8.0])
    @pytest.mark.parametrize("r", [2.0, 2.5, 3.0])
    def test_contract_grid(self, D, r):
        fn = make_bump(D, r)  # constructor probes raise on violation
        xs = np.linspace(0.0, r + 2.0, 10_000)
        vals, slopes, curv = fn.f(xs), fn.fp(xs), fn.fpp(xs)
        assert (vals > 0).all()
        assert (slopes > 0).all()
        assert (curv <= (12.0 * D) ** 2 * vals).all()
        assert (np.diff(vals) >= 0).all()

    def test_c2_gluing(self):
        # second-order one-sided stencils; step scaled to the bridge width
        # 1/D so the truncation term h^2 f'''' is D-independent
        def onesided(fn, x, h):
            pts = np.array([x, x + h, x + 2 * h, x + 3 * h])
            return (2 * fn.f(pts[0:1])[0] - 5 * fn.f(pts[1:2])[0]
                    + 4 * fn.f(pts[2:3])[0] - fn.f(pts[3:4])[0]) / h**2

        for D, r in [(1.5, 2.0), (2.0, 2.5), (8.0, 3.0)]:
            fn = make_bump(D, r)
            h = 5e-4 / D**2
            for x in (r - 1.0 / D, r):
                left = onesided(fn, x, -h)
                right = onesided(fn, x, h)
                assert abs(left - right) <= 1e-3 * max(abs(left), abs(right), 1.0)

    def test_probe_consistency(self):
        assert make_bump(2.0, 2.5).probe_consistency()
        assert polynomial_function([1.0, -2.0, 0.5]).probe_consistency()

    def test_domain_validation(self):
        with pytest.raises(LoclabError):
            make_bump(0.5, 2.5)
        with pytest.raises(LoclabError):
            make_bump(2.0, 3.5)


class TestGuanTensor:
    def test_symmetric_law_zero(self):
        m = make_truncated_gaussian(3, 8.0, 512)
        rep = guan_tensor_check(m, t=1.0, theta=np.zeros(3), u=1.0, k=0)
        assert rep.passed
        assert rep.lhs < 1e-20

    def test_asymmetric_product_family(self):
        m = make_exponential_product(4, 1024)
        from loclab.loglaplace import Tilt, tilt_summary
        lam = np.linalg.eigvalsh(tilt_summary(m, Tilt(1.0, np.zeros(4))).cov)
        u = lam.max()
        for k in range(4):
            rep = guan_tensor_check(m, t=1.0, theta=np.zeros(4), u=u, k=k)
            assert rep.passed
            assert rep.lhs > 0  # skewed coordinates keep mass in the tensor

    def test_small_u_vacuous(self):
        m = make_exponential_product(2, 256)
        rep = guan_tensor_check(m, t=1.0, theta=np.zeros(2), u=1e-6, k=0)
        assert rep.lhs == 0.0
        assert rep.passed

    def test_atom_cloud_rejected(self):
        from loclab.measures import make_atom_cloud
        cloud = make_atom_cloud("cube", 2, 50, seed=1)
        with pytest.raises(LoclabError):
            guan_tensor_check(cloud, 1.0, np.zeros(2), 1.0, 0)
