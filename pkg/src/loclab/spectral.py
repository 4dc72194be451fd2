"""Matrix and spectral calculus for PSD paths and spectral functions.

Covers the linear matrix flow M' = A(t) M for arbitrary PSD paths, the
eigenvalue exponential bound on its Hilbert-Schmidt norm, the coupled
eigenvalue recursion, trace inequalities, second derivatives of
spectral traces via divided differences, the exponential-to-quadratic
bridge family used to weight eigenvalues, and the 3-tensor bound for
uniformly log-concave tilts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BumpConstructionError,
    HypothesisViolatedError,
    LoclabError,
    StepSizeError,
)
from .loglaplace import Tilt, tilt_summary, tilt_third_tensor
from .measures import Measure, ProductQuadMeasure
from .seeding import generator


def digest_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


@dataclass
class CheckReport:
    """Uniform result record: {name, inputs digest, lhs, rhs, margin, pass}."""

    name: str
    digest: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"check": self.name, "inputs": self.digest, "lhs": self.lhs,
                "rhs": self.rhs, "margin": self.margin, "pass": self.passed,
                **({"extra": self.extra} if self.extra else {})}


def sorted_eigh(A: np.ndarray):
    """Descending eigenvalues and sign-fixed orthonormal eigenvectors.

    Sign convention: the first entry of largest magnitude in each
    eigenvector is made positive, so decompositions are reproducible.
    """
    vals, vecs = np.linalg.eigh(A)
    vals = vals[..., ::-1]
    vecs = vecs[..., ::-1]
    idx = np.argmax(np.abs(vecs), axis=-2)
    signs = np.sign(np.take_along_axis(vecs, idx[..., None, :], axis=-2))
    signs[signs == 0] = 1.0
    return vals, vecs * signs


@dataclass(frozen=True)
class PSDPath:
    """Symmetric PSD matrices on a time grid, plus a generator descriptor."""

    grid: np.ndarray
    matrices: np.ndarray
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[0] != grid.size:
            raise LoclabError("matrices must be (len(grid), n, n)")
        if np.abs(mats - np.swapaxes(mats, 1, 2)).max() > 1e-12:
            raise LoclabError("matrices must be symmetric within 1e-12")
        if np.linalg.eigvalsh(mats).min() < -1e-10:
            raise LoclabError("matrices must be PSD within 1e-10")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "matrices", mats)

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    def eigenvalues(self) -> np.ndarray:
        """Descending eigenvalues at each grid time, shape (len(grid), n)."""
        return np.linalg.eigvalsh(self.matrices)[:, ::-1]


def random_rotating_psd_path(n: int, t_max: float, dt: float, seed: int,
                             omega: float = 5.0) -> PSDPath:
    """Q(omega t) diag(d(t)) Q(omega t)^T with smoothly varying d(t) >= 0.

    Rotation injects genuine non-commutativity; all generator
    parameters are logged in the descriptor for reproducibility.
    """
    rng = generator(seed, "psd-path", n)
    steps = int(round(t_max / dt))
    grid = np.arange(steps + 1) * dt
    skew = rng.standard_normal((n, n))
    skew = skew - skew.T
    norm = max(np.abs(skew).max(), 1e-12)
    skew /= norm
    base = rng.uniform(0.4, 2.0, size=n)
    amp = base * rng.uniform(0.0, 0.8, size=n)
    freq = rng.uniform(0.5, 3.0, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    d = base[None, :] + amp[None, :] * np.sin(freq[None, :] * grid[:, None]
                                              + phase[None, :])
    w, V = np.linalg.eig(skew)
    Vinv = np.linalg.inv(V)
    rot = np.einsum("ij,tj,jk->tik", V, np.exp(np.outer(grid, omega * w)), Vinv).real
    mats = np.einsum("tij,tj,tkj->tik", rot, d, rot)
    mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    descriptor = {"seed": seed, "omega": omega, "base": base.tolist(),
                  "amp": amp.tolist(), "freq": freq.tolist(),
                  "phase": phase.tolist(), "skew_norm": float(norm)}
    return PSDPath(grid=grid, matrices=mats, descriptor=descriptor)


def solve_product_integral(path: PSDPath) -> np.ndarray:
    """Solution of M' = A(t) M, M(0) = Id, at every grid time.

    Same positivity-respecting midpoint update as the flow engine; in
    1D this reproduces exp(int A) to O(dt^2).
    """
    lam_max = np.linalg.eigvalsh(path.matrices).max(axis=1)
    dts = np.diff(path.grid)
    if np.any(dts * np.maximum(lam_max[:-1], lam_max[1:]) >= 0.5):
        raise StepSizeError("dt * ||A|| >= 1/2; refine the grid")
    n = path.n
    out = np.empty_like(path.matrices)
    out[0] = np.eye(n)
    M = np.eye(n)
    eye = np.eye(n)
    for k, dt in enumerate(dts):
        a_start = path.matrices[k]
        a_mid = 0.5 * (path.matrices[k] + path.matrices[k + 1])
        M = (eye + dt * (a_mid @ (eye + 0.5 * dt * a_start))) @ M
        out[k + 1] = M
    return out


def check_prop1813(path: PSDPath, rtol: float = 1e-4,
                   atol: float = 1e-8) -> CheckReport:
    """|M_t|_HS^2 against the sum of exponentiated eigenvalue integrals."""
    M = solve_product_integral(path)
    lhs = float((M[-1] ** 2).sum())
    lams = path.eigenvalues()
    integrals = np.trapezoid(lams, path.grid, axis=0)
    rhs = float(np.exp(2.0 * integrals).sum())
    bound = rhs * (1.0 + rtol) + atol
    return CheckReport(
        name="prop1813", digest=digest_arrays(path.grid, path.matrices),
        lhs=lhs, rhs=rhs, margin=bound - lhs, passed=bool(lhs <= bound),
        extra={"descriptor": path.descriptor})


def _cumulative_trapezoid(y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    steps = 0.5 * (y[..., 1:] + y[..., :-1]) * np.diff(grid)
    out = np.zeros_like(y)
    out[..., 1:] = np.cumsum(steps, axis=-1)
    return out


def check_lemma2230(mu_seqs, lambda_seqs, grid, tol: float = 1e-6) -> CheckReport:
    """Coupled eigenvalue recursion: hypothesis-checked partial-sum bound.

    mu_seqs, lambda_seqs: (n, len(grid)) non-negative, lambda sorted
    descending pointwise. Inputs violating the integral hypothesis are
    rejected (that is an input error, not a conclusion failure).
    """
    mu = np.atleast_2d(np.asarray(mu_seqs, dtype=float))
    lam = np.atleast_2d(np.asarray(lambda_seqs, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if mu.shape != lam.shape or mu.shape[1] != grid.size:
        raise LoclabError("mu/lambda must share shape (n, len(grid))")
    if np.any(mu < 0) or np.any(lam < 0):
        raise LoclabError("sequences must be non-negative")
    if np.any(np.diff(lam, axis=0) > 1e-12):
        raise LoclabError("lambda sequences must be sorted descending")

    prod_int = _cumulative_trapezoid(mu * lam, grid)
    hyp_rhs = np.cumsum(1.0 + 2.0 * prod_int, axis=0)
    partial_mu = np.cumsum(mu, axis=0)
    hyp_slack = 1e-9 * (1.0 + np.abs(hyp_rhs))
    if np.any(partial_mu > hyp_rhs + hyp_slack):
        raise HypothesisViolatedError("integral hypothesis fails on the grid")

    concl_rhs = np.cumsum(np.exp(2.0 * _cumulative_trapezoid(lam, grid)), axis=0)
    gap = concl_rhs + tol - partial_mu
    return CheckReport(
        name="lemma2230", digest=digest_arrays(mu, lam, grid),
        lhs=float(partial_mu.max()), rhs=float(concl_rhs.max()),
        margin=float(gap.min()), passed=bool(gap.min() >= 0.0))


def von_neumann_gap(A: np.ndarray, B: np.ndarray) -> float:
    """sum_i a_i b_i - Tr[AB] with both spectra sorted descending; >= 0."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if (np.abs(A - A.T).max() > 1e-12) or (np.abs(B - B.T).max() > 1e-12):
        raise LoclabError("inputs must be symmetric")
    a = np.sort(np.linalg.eigvalsh(A))[::-1]
    b = np.sort(np.linalg.eigvalsh(B))[::-1]
    return float((a * b).sum() - np.trace(A @ B))


# ---------------------------------------------------------------------------
# spectral functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralFunction:
    """Scalar function with first two derivatives, applied spectrally."""

    f: callable
    fp: callable
    fpp: callable
    descriptor: dict

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def probe_consistency(self, grid=None, rtol: float = 1e-5) -> bool:
        """f, f', f'' mutually consistent under central differences."""
        if grid is None:
            grid = np.linspace(0.1, 6.0, 200)
        grid = np.asarray(grid, dtype=float)
        eps = 1e-6
        fd1 = (self.f(grid + eps) - self.f(grid - eps)) / (2 * eps)
        fd2 = (self.fp(grid + eps) - self.fp(grid - eps)) / (2 * eps)
        scale1 = np.abs(self.fp(grid)) + 1.0
        scale2 = np.abs(self.fpp(grid)) + 1.0
        return bool(np.max(np.abs(fd1 - self.fp(grid)) / scale1) < rtol
                    and np.max(np.abs(fd2 - self.fpp(grid)) / scale2) < rtol)


def polynomial_function(coeffs) -> SpectralFunction:
    """Polynomial with given coefficients, highest degree first."""
    c = np.asarray(coeffs, dtype=float)
    d1 = np.polyder(c)
    d2 = np.polyder(c, 2)
    return SpectralFunction(
        f=lambda x: np.polyval(c, x),
        fp=lambda x: np.polyval(d1, x),
        fpp=lambda x: np.polyval(d2, x),
        descriptor={"kind": "polynomial", "coeffs": c.tolist()})


def trace_fn(A: np.ndarray, fn: SpectralFunction) -> float:
    """Tr f(A) = sum_i f(lambda_i)."""
    return float(fn(np.linalg.eigvalsh(A)).sum())


def dk_quadratic_form(A: np.ndarray, H: np.ndarray, fn: SpectralFunction) -> float:
    """Second derivative of Tr f at A in direction H via divided differences.

    Coincident eigenvalues take the continuity value f''(lambda_i); the
    degeneracy threshold is 1e-8 relative to the eigenvalue scale.
    """
    A = np.asarray(A, dtype=float)
    H = np.asarray(H, dtype=float)
    if np.abs(A - A.T).max() > 1e-12 or np.abs(H - H.T).max() > 1e-12:
        raise LoclabError("inputs must be symmetric")
    lam, U = np.linalg.eigh(A)
    G = U.T @ H @ U
    diff = lam[:, None] - lam[None, :]
    degenerate = np.abs(diff) < 1e-8 * (1.0 + np.abs(lam[:, None]))
    fp = fn.fp(lam)
    num = fp[:, None] - fp[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, diff))
    dd = dd + np.where(degenerate, fn.fpp(lam)[:, None] * np.ones_like(dd), 0.0)
    return float((dd * G**2).sum())


# ---------------------------------------------------------------------------
# bridge family: exponential head, quadratic tail
# ---------------------------------------------------------------------------

def _bridge_coefficients(D: float, r: float) -> np.ndarray:
    """Quintic h on [0,1]: four endpoint constraints, unit-mass constraint,
    remaining freedom spent minimizing the integral of h''^2."""
    e = np.e
    # constraint rows in the monomial basis c_0..c_5
    A = np.array([
        [1, 0, 0, 0, 0, 0],                       # h(0)
        [0, 1, 0, 0, 0, 0],                       # h'(0)
        [1, 1, 1, 1, 1, 1],                       # h(1)
        [0, 1, 2, 3, 4, 5],                       # h'(1)
        [1, 1 / 2, 1 / 3, 1 / 4, 1 / 5, 1 / 6],   # integral
    ], dtype=float)
    b = np.array([1 / e, 1 / e, 2 * r / D, 2 / D**2, r**2 - 1 / e])
    Q = np.zeros((6, 6))
    for j in range(2, 6):
        for k in range(2, 6):
            Q[j, k] = j * k * (j - 1) * (k - 1) / (j + k - 3)
    kkt = np.zeros((11, 11))
    kkt[:6, :6] = 2.0 * Q
    kkt[:6, 6:] = A.T
    kkt[6:, :6] = A
    rhs = np.concatenate([np.zeros(6), b])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:6]


def make_bump(D: float, r: float, probe_points: int = 10_000) -> SpectralFunction:
    """Increasing C^2 function: exp(D(x-r)) below r - 1/D, x^2 above r.

    The bridge integrates a quintic polynomial chosen so values, slopes
    and the total rise match at both ends. Contract probes check
    positivity, monotonicity and the curvature bound f'' <= (12 D)^2 f
    on a dense grid; a probe failure raises, since the construction is
    guaranteed for D > 1 and r in [2, 3].
    """
    if not (D > 1.0) or not (2.0 <= r <= 3.0):
        raise LoclabError("need D > 1 and r in [2, 3]")
    c = _bridge_coefficients(D, r)
    r0 = r - 1.0 / D
    poly_h = np.polynomial.Polynomial(c)
    poly_hp = poly_h.deriv()
    poly_H = poly_h.integ()  # antiderivative with H(0) = 0

    def piecewise(x, head, bridge, tail):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= r, tail(x), 0.0)
        mid = (x > r0) & (x < r)
        lo = x <= r0
        out = np.where(mid, bridge(x), out)
        return np.where(lo, head(x), out)

    f = lambda x: piecewise(x, lambda v: np.exp(D * (v - r)),
                            lambda v: 1.0 / np.e + poly_H(D * (v - r0)),
                            lambda v: v**2)
    fp = lambda x: piecewise(x, lambda v: D * np.exp(D * (v - r)),
                             lambda v: D * poly_h(D * (v - r0)),
                             lambda v: 2.0 * v)
    fpp = lambda x: piecewise(x, lambda v: D**2 * np.exp(D * (v - r)),
                              lambda v: D**2 * poly_hp(D * (v - r0)),
                              lambda v: 2.0 * np.ones_like(v))
    fn = SpectralFunction(f=f, fp=fp, fpp=fpp,
                          descriptor={"kind": "bump", "D": D, "r": r,
                                      "bridge": c.tolist()})
    probes = np.linspace(0.0, max(r + 2.0, 6.0), probe_points)
    vals = fn.f(probes)
    slopes = fn.fp(probes)
    curv = fn.fpp(probes)
    if np.any(vals <= 0):
        raise BumpConstructionError("bridge lost positivity")
    if np.any(slopes <= 0):
        raise BumpConstructionError("bridge lost monotonicity")
    if np.any(curv > (12.0 * D) ** 2 * vals):
        raise BumpConstructionError("curvature bound f'' <= (12D)^2 f failed")
    return fn


# ---------------------------------------------------------------------------
# 3-tensor bound for uniformly log-concave tilts
# ---------------------------------------------------------------------------

def guan_tensor_check(measure: Measure, t: float, theta, u: float,
                      k: int, rtol: float = 1e-3) -> CheckReport:
    """Truncated squared 3-tensor mass against 4 t^{-1/2} u^{3/2} lambda_k.

    Requires a quadrature measure (the t-uniform log-concavity regime)
    and t > 0. Indices with max(lambda_i, lambda_j) > u are excluded.
    """
    if not isinstance(measure, ProductQuadMeasure):
        raise LoclabError("3-tensor bound asserted only for quadrature measures")
    if t <= 0 or u <= 0:
        raise LoclabError("need t > 0 and u > 0")
    theta = np.asarray(theta, dtype=float).ravel()
    tilt = Tilt(t, theta)
    summary = tilt_summary(measure, tilt)
    lam, U = sorted_eigh(summary.cov)
    xi = tilt_third_tensor(measure, tilt, U)
    mask = (np.maximum(lam[:, None], lam[None, :]) <= u)
    lhs = float((xi[:, :, k] ** 2 * mask).sum())
    rhs = float(4.0 * t**-0.5 * u**1.5 * lam[k])
    bound = rhs * (1.0 + rtol)
    return CheckReport(
        name="third-tensor",
        digest=digest_arrays(theta, [t, u, k]),
        lhs=lhs, rhs=rhs, margin=bound - lhs, passed=bool(lhs <= bound),
        extra={"k": k, "u": u, "t": t})
