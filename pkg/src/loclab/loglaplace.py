"""Tilted log-mass and its derivative tensors.

For a compactly supported measure and a quadratic tilt (t, theta), the
log-mass of exp(<theta, x> - t|x|^2/2) plays the role of a cumulant
generator: its gradient is the tilted barycenter, its Hessian the
tilted covariance, and the third derivative the centered 3-tensor. All
mass computations run through log-sum-exp with a running max, so tilts
up to |theta| ~ 1e6 never overflow.

Product measures factor coordinate-by-coordinate, which keeps every
quantity here a family of 1D weighted sums; atom clouds use direct
weighted sums over the cloud.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTiltWarning,
    InteriorPointError,
    LoclabError,
    NoConvergenceError,
)
from .measures import AtomicMeasure, Measure, ProductQuadMeasure

ESS_FLOOR = 50.0


@dataclass(frozen=True)
class Tilt:
    t: float
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if self.t < 0:
            raise LoclabError("tilt time must be non-negative")
        if not np.all(np.isfinite(theta)):
            raise LoclabError("tilt vector must be finite")
        object.__setattr__(self, "theta", theta)


@dataclass
class TiltSummary:
    """Log-mass, barycenter and covariance of one tilted measure."""

    log_mass: float
    mean: np.ndarray
    cov: np.ndarray
    ess: float | None = None
    low_ess: bool = False

    def __post_init__(self):
        self.cov = 0.5 * (self.cov + self.cov.T)


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------

def _atom_logits(measure: AtomicMeasure, t, thetas: np.ndarray) -> np.ndarray:
    """t may be scalar or per-row (P,), matching the theta batch."""
    sq = (measure.atoms**2).sum(axis=1)
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    return measure.log_weights()[None, :] + thetas @ measure.atoms.T - 0.5 * t * sq[None, :]


def _product_logits(measure: ProductQuadMeasure, t, thetas):
    nodes = measure.nodes
    t = np.asarray(t, dtype=float).reshape(-1, 1, 1)
    return (measure.log_weights[None, :, :]
            + thetas[:, :, None] * nodes[None, :, :]
            - 0.5 * t * (nodes**2)[None, :, :])


def _normalize(logits: np.ndarray):
    """Softmax along the last axis; returns (weights, log normalizer)."""
    m = logits.max(axis=-1, keepdims=True)
    w = np.exp(logits - m)
    z = w.sum(axis=-1, keepdims=True)
    return w / z, (m + np.log(z))[..., 0]


def tilt_means(measure: Measure, t: float, thetas: np.ndarray) -> np.ndarray:
    """Barycenters of the tilted measure for a batch of tilt vectors."""
    thetas = np.atleast_2d(thetas)
    if isinstance(measure, AtomicMeasure):
        w, _ = _normalize(_atom_logits(measure, t, thetas))
        return w @ measure.atoms
    w, _ = _normalize(_product_logits(measure, t, thetas))
    return (w * measure.nodes[None, :, :]).sum(axis=-1)


def tilt_means_vars(measure: ProductQuadMeasure, t, thetas):
    """Per-coordinate tilted means and variances (product measures only)."""
    thetas = np.atleast_2d(thetas)
    w, _ = _normalize(_product_logits(measure, t, thetas))
    means = (w * measure.nodes[None, :, :]).sum(axis=-1)
    centered = measure.nodes[None, :, :] - means[:, :, None]
    return means, (w * centered**2).sum(axis=-1)


def tilt_means_covs(measure: AtomicMeasure, t, thetas):
    """Tilted means and full covariance matrices for an atom cloud batch."""
    thetas = np.atleast_2d(thetas)
    w, _ = _normalize(_atom_logits(measure, t, thetas))
    means = w @ measure.atoms
    centered = measure.atoms[None, :, :] - means[:, None, :]
    covs = np.einsum("pa,pai,paj->pij", w, centered, centered)
    return means, covs


class ProductMomentKernel:
    """Reusable-workspace evaluator for batched product-measure moments.

    Repeated (batch, dim, nodes) temporaries dominate the cost of long
    ensemble scans; this object owns one logits buffer and runs the
    softmax in place. Results match tilt_means / tilt_means_vars to
    rounding. One kernel per scan; not safe to share across threads.
    """

    def __init__(self, measure: ProductQuadMeasure, batch: int):
        self.measure = measure
        self.nodes = measure.nodes
        self.nodesq = measure.nodes**2
        self.logw = measure.log_weights
        self.buf = np.empty((batch, measure.dim, measure.nodes.shape[1]))

    def _weights(self, t: float, thetas: np.ndarray) -> np.ndarray:
        buf = self.buf if thetas.shape[0] == self.buf.shape[0] \
            else np.empty(thetas.shape + (self.nodes.shape[1],))
        np.multiply(thetas[:, :, None], self.nodes[None, :, :], out=buf)
        buf += (self.logw - (0.5 * t) * self.nodesq)[None, :, :]
        buf -= buf.max(axis=2, keepdims=True)
        np.exp(buf, out=buf)
        buf /= buf.sum(axis=2, keepdims=True)
        return buf

    def means(self, t: float, thetas: np.ndarray) -> np.ndarray:
        w = self._weights(t, thetas)
        return np.einsum("pnm,nm->pn", w, self.nodes)

    def lambdas(self, t: float, thetas: np.ndarray) -> np.ndarray:
        """Descending covariance eigenvalues (coordinate variances sorted)."""
        w = self._weights(t, thetas)
        means = np.einsum("pnm,nm->pn", w, self.nodes)
        second = np.einsum("pnm,nm->pn", w, self.nodesq)
        vars_ = np.maximum(second - means**2, 0.0)
        vars_.sort(axis=1)
        return vars_[:, ::-1]


class AtomMomentKernel:
    """Batched tilted means/eigenvalues for atom clouds (workspace-free:
    the (batch, n_atoms) logits are small for the clouds used here)."""

    def __init__(self, measure: AtomicMeasure, batch: int):
        self.measure = measure

    def means(self, t: float, thetas: np.ndarray) -> np.ndarray:
        return tilt_means(self.measure, t, thetas)

    def lambdas(self, t: float, thetas: np.ndarray) -> np.ndarray:
        _, covs = tilt_means_covs(self.measure, t, thetas)
        return np.linalg.eigvalsh(covs)[:, ::-1]


def moment_kernel(measure: Measure, batch: int):
    if isinstance(measure, ProductQuadMeasure):
        return ProductMomentKernel(measure, batch)
    return AtomMomentKernel(measure, batch)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def log_laplace(measure: Measure, tilt: Tilt) -> float:
    theta = tilt.theta[None, :]
    if isinstance(measure, AtomicMeasure):
        _, logz = _normalize(_atom_logits(measure, tilt.t, theta))
        return float(logz[0])
    _, logz = _normalize(_product_logits(measure, tilt.t, theta))
    return float(logz[0].sum())


def tilt_summary(measure: Measure, tilt: Tilt) -> TiltSummary:
    theta = tilt.theta[None, :]
    if isinstance(measure, AtomicMeasure):
        w, logz = _normalize(_atom_logits(measure, tilt.t, theta))
        w = w[0]
        mean = w @ measure.atoms
        centered = measure.atoms - mean
        cov = (w[:, None] * centered).T @ centered
        ess = 1.0 / float((w**2).sum())
        low = ess < ESS_FLOOR
        if low:
            warnings.warn(
                f"effective sample size {ess:.1f} below {ESS_FLOOR:.0f}; "
                "tilted moments dominated by few atoms",
                DegenerateTiltWarning, stacklevel=2)
        return TiltSummary(float(logz[0]), mean, cov, ess=ess, low_ess=low)
    w, logz = _normalize(_product_logits(measure, tilt.t, theta))
    w = w[0]
    mean = (w * measure.nodes).sum(axis=1)
    var = (w * (measure.nodes - mean[:, None]) ** 2).sum(axis=1)
    return TiltSummary(float(logz[0].sum()), mean, np.diag(var))


def tilt_third_tensor(measure: Measure, tilt: Tilt, basis: np.ndarray) -> np.ndarray:
    """Fully symmetric centered 3-tensor in the given orthonormal basis.

    basis columns are the directions u_i; entry (i, j, k) is the tilted
    expectation of <x-a, u_i><x-a, u_j><x-a, u_k>.
    """
    basis = np.asarray(basis, dtype=float)
    n = measure.dim
    if basis.shape != (n, n) or np.abs(basis.T @ basis - np.eye(n)).max() > 1e-10:
        raise LoclabError("basis must be orthonormal within 1e-10")
    theta = tilt.theta[None, :]
    if isinstance(measure, AtomicMeasure):
        w, _ = _normalize(_atom_logits(measure, tilt.t, theta))
        mean = w[0] @ measure.atoms
        y = (measure.atoms - mean) @ basis
        return np.einsum("a,ai,aj,ak->ijk", w[0], y, y, y)
    w, _ = _normalize(_product_logits(measure, tilt.t, theta))
    w = w[0]
    mean = (w * measure.nodes).sum(axis=1)
    centered = measure.nodes - mean[:, None]
    m3 = (w * centered**3).sum(axis=1)
    # independent centered coordinates: only the diagonal survives
    return np.einsum("a,ai,aj,ak->ijk", m3, basis, basis, basis)


def invert_grad_laplace(measure: Measure, t: float, target,
                        tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    """Tilt vector whose barycenter map hits the target point.

    Damped Newton on the strictly convex objective log-mass minus
    <theta, target>, with the exact tilted covariance as Hessian. Steps
    are halved until the objective decreases.
    """
    target = np.asarray(target, dtype=float).ravel()
    if target.shape != (measure.dim,):
        raise LoclabError("target dimension mismatch")
    _check_interior(measure, t, target)
    if isinstance(measure, ProductQuadMeasure):
        return np.array([
            _invert_coord(measure, i, t, target[i], tol, max_iter)
            for i in range(measure.dim)
        ])
    return _invert_atoms(measure, t, target, tol, max_iter)


def _check_interior(measure: Measure, t: float, target: np.ndarray,
                    margin: float = 1e-8) -> None:
    if isinstance(measure, ProductQuadMeasure):
        lo = measure.nodes.min(axis=1)
        hi = measure.nodes.max(axis=1)
    else:
        lo = measure.atoms.min(axis=0)
        hi = measure.atoms.max(axis=0)
        # bounding box is only a necessary condition for atom hulls;
        # interior failures inside the box surface as NoConvergenceError
    if np.any(target <= lo + margin) or np.any(target >= hi - margin):
        raise InteriorPointError("target not strictly inside the support hull")


def _invert_coord(measure, i, t, target, tol, max_iter):
    nodes = measure.nodes[i]
    logw = measure.log_weights[i]
    base = logw - 0.5 * t * nodes**2

    def stats(theta):
        logits = base + theta * nodes
        m = logits.max()
        w = np.exp(logits - m)
        z = w.sum()
        mean = float((w * nodes).sum() / z)
        var = float((w * (nodes - mean) ** 2).sum() / z)
        return m + np.log(z) - theta * target, mean, var

    theta = 0.0
    obj, mean, var = stats(theta)
    for _ in range(max_iter):
        grad = mean - target
        if abs(grad) < tol:
            return theta
        step = -grad / max(var, 1e-300)
        alpha = 1.0
        while alpha > 1e-16:
            cand = theta + alpha * step
            cobj, cmean, cvar = stats(cand)
            # float-noise band keeps full Newton steps alive near the optimum,
            # where the strictly convex objective is flat to rounding
            if cobj < obj + 1e-14 * (1.0 + abs(obj)):
                theta, obj, mean, var = cand, cobj, cmean, cvar
                break
            alpha *= 0.5
        else:
            break
    if abs(mean - target) < tol:
        return theta
    raise NoConvergenceError("barycenter inversion stalled near the hull boundary")


def _invert_atoms(measure, t, target, tol, max_iter):
    theta = np.zeros(measure.dim)

    def objective(th):
        return log_laplace(measure, Tilt(t, th)) - float(th @ target)

    obj = objective(theta)
    for _ in range(max_iter):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateTiltWarning)
            summary = tilt_summary(measure, Tilt(t, theta))
        grad = summary.mean - target
        if np.linalg.norm(grad) < tol:
            return theta
        hess = summary.cov + 1e-14 * np.eye(measure.dim)
        step = -np.linalg.solve(hess, grad)
        alpha = 1.0
        while alpha > 1e-16:
            cand = theta + alpha * step
            cobj = objective(cand)
            if cobj < obj + 1e-14 * (1.0 + abs(obj)):
                theta, obj = cand, cobj
                break
            alpha *= 0.5
        else:
            break
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTiltWarning)
        final = tilt_summary(measure, Tilt(t, theta))
    if np.linalg.norm(final.mean - target) < tol:
        return theta
    raise NoConvergenceError("barycenter inversion stalled near the hull boundary")
