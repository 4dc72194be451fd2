"""Compactly supported probability measures in two representations.

Atom clouds are weighted point sets: fully general and cheap to tilt,
but discrete, so inequalities that need genuine log-concavity are only
recorded for them. Product quadrature measures hold one 1D density grid
per coordinate and model honestly log-concave product densities
(uniform cube slabs, truncated Gaussians, truncated exponentials).

Grids use uniform cells with two Gauss-Legendre nodes per cell. Node
weights stay positive and cells stay uniform, while per-cell exactness
through cubics keeps low moments of polynomial densities exact at float
accuracy; for smooth rapidly decaying densities the rule converges
super-algebraically. All measure values are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AffineSpanError, LoclabError, SingularCovarianceError
from .jsonio import decode_array, encode_array
from .seeding import generator

_WEIGHT_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AtomicMeasure:
    """Finite atom cloud with probability weights.

    support_radius is the largest Euclidean atom norm; it is the source
    of every support-dependent constant used downstream (barycenters of
    tilts stay inside the ball of this radius, covariances below its
    square).
    """

    dim: int
    atoms: np.ndarray
    weights: np.ndarray
    family: str = "custom"
    seed: int | None = None
    support_radius: float = field(init=False)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape[0] != weights.shape[0] or atoms.shape[1] != self.dim:
            raise LoclabError("atoms/weights shapes inconsistent with dim")
        if atoms.shape[0] < 1:
            raise LoclabError("need at least one atom")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise LoclabError("weights must be a probability vector")
        object.__setattr__(self, "atoms", _freeze(atoms))
        object.__setattr__(self, "weights", _freeze(weights))
        radius = float(np.sqrt((atoms**2).sum(axis=1).max()))
        object.__setattr__(self, "support_radius", radius)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)


@dataclass(frozen=True)
class ProductQuadMeasure:
    """Per-coordinate 1D density grids on bounded intervals.

    nodes/log_weights/lebesgue are (dim, m) arrays: abscissas,
    log probability masses, and Lebesgue cell weights of the quadrature
    rule. Node densities are recovered as mass/lebesgue. Joint moments
    factor across coordinates by construction.
    """

    dim: int
    nodes: np.ndarray
    log_weights: np.ndarray
    lebesgue: np.ndarray
    intervals: np.ndarray
    family: str = "custom"
    seed: int | None = None

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        logw = np.atleast_2d(np.asarray(self.log_weights, dtype=float))
        leb = np.atleast_2d(np.asarray(self.lebesgue, dtype=float))
        ivals = np.atleast_2d(np.asarray(self.intervals, dtype=float))
        if nodes.shape != logw.shape or nodes.shape != leb.shape:
            raise LoclabError("grid arrays must share one (dim, m) shape")
        if nodes.shape[0] != self.dim or ivals.shape != (self.dim, 2):
            raise LoclabError("grid arrays inconsistent with dim")
        sums = np.exp(logw).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _WEIGHT_TOL):
            raise LoclabError("per-coordinate weights must sum to 1")
        for name, arr in (("nodes", nodes), ("log_weights", logw),
                          ("lebesgue", leb), ("intervals", ivals)):
            object.__setattr__(self, name, _freeze(arr))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[1]

    @property
    def support_radius(self) -> float:
        return float(np.sqrt((np.abs(self.nodes).max(axis=1) ** 2).sum()))

    def weights_matrix(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def coordinate(self, i: int) -> "ProductQuadMeasure":
        """1D marginal along coordinate i (exact for product measures)."""
        return ProductQuadMeasure(
            dim=1,
            nodes=self.nodes[i : i + 1],
            log_weights=self.log_weights[i : i + 1],
            lebesgue=self.lebesgue[i : i + 1],
            intervals=self.intervals[i : i + 1],
            family=self.family,
            seed=self.seed,
        )


Measure = AtomicMeasure | ProductQuadMeasure


@dataclass(frozen=True)
class MeasureHandle:
    """Tagged union over the two representations plus a family label."""

    kind: str
    measure: Measure
    family: str
    seed: int | None = None

    def __post_init__(self):
        expected = "atoms" if isinstance(self.measure, AtomicMeasure) else "product"
        if self.kind != expected:
            raise LoclabError(f"handle kind {self.kind!r} does not match payload")


def handle_for(measure: Measure) -> MeasureHandle:
    kind = "atoms" if isinstance(measure, AtomicMeasure) else "product"
    return MeasureHandle(kind=kind, measure=measure, family=measure.family,
                         seed=measure.seed)


# ---------------------------------------------------------------------------
# grid construction
# ---------------------------------------------------------------------------

def _gl2_nodes(a: float, b: float, n_cells: int):
    """Two Gauss-Legendre nodes per uniform cell of [a, b], sorted."""
    h = (b - a) / n_cells
    centers = a + h * (np.arange(n_cells) + 0.5)
    offset = h / (2.0 * np.sqrt(3.0))
    nodes = np.sort(np.concatenate([centers - offset, centers + offset]))
    lebesgue = np.full(nodes.shape, h / 2.0)
    return nodes, lebesgue


def _product_from_density(dim, a, b, resolution, log_density, family, seed=None):
    if resolution < 16:
        raise LoclabError("resolution below 16 is too coarse for the stated tolerances")
    nodes1, leb1 = _gl2_nodes(a, b, resolution // 2)
    logw = np.log(leb1) + log_density(nodes1)
    logw = logw - _logsumexp(logw)
    # second exact pass: log-space normalization alone leaves an m*eps
    # residual that can breach the 1e-12 probability-vector contract
    logw = logw - np.log(np.exp(logw).sum())
    m = nodes1.size
    return ProductQuadMeasure(
        dim=dim,
        nodes=np.tile(nodes1, (dim, 1)),
        log_weights=np.tile(logw, (dim, 1)),
        lebesgue=np.tile(leb1, (dim, 1)),
        intervals=np.tile([a, b], (dim, 1)),
        family=family,
        seed=seed,
    )


def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + float(np.log(np.exp(v - m).sum()))


def make_cube_measure(dim: int, resolution: int = 1024) -> ProductQuadMeasure:
    """Uniform density on [-sqrt(3), sqrt(3)] per coordinate (unit variance)."""
    if dim < 1:
        raise LoclabError("dim must be >= 1")
    s = np.sqrt(3.0)
    return _product_from_density(dim, -s, s, resolution,
                                 lambda x: np.zeros_like(x), family="cube")


def make_truncated_gaussian(dim: int, truncation: float = 8.0,
                            resolution: int = 2048) -> ProductQuadMeasure:
    """Standard normal restricted to [-truncation, truncation] per coordinate.

    After truncation the grid is recentred and rescaled so the discrete
    coordinate variance is exactly 1.
    """
    if truncation < 6.0:
        raise LoclabError("truncation below 6 sigma distorts the tested moments")
    measure = _product_from_density(
        dim, -truncation, truncation, resolution,
        lambda x: -0.5 * x**2, family="gaussian")
    return _whiten_product(measure)


def make_exponential_product(dim: int, resolution: int = 2048) -> ProductQuadMeasure:
    """Truncated exponential density on [0, 4] per coordinate, isotropized.

    A deliberately skewed product family: coordinates keep a nonzero
    third moment after whitening, which exercises the 3-tensor bounds.
    """
    measure = _product_from_density(dim, 0.0, 4.0, resolution,
                                    lambda x: -x, family="exp")
    return _whiten_product(measure)


def _whiten_product(measure: ProductQuadMeasure) -> ProductQuadMeasure:
    w = measure.weights_matrix()
    mean = (w * measure.nodes).sum(axis=1)
    var = (w * (measure.nodes - mean[:, None]) ** 2).sum(axis=1)
    if np.any(var <= 1e-10):
        raise SingularCovarianceError("degenerate coordinate variance")
    scale = np.sqrt(var)
    nodes = (measure.nodes - mean[:, None]) / scale[:, None]
    intervals = (measure.intervals - mean[:, None]) / scale[:, None]
    return ProductQuadMeasure(
        dim=measure.dim,
        nodes=nodes,
        log_weights=measure.log_weights,
        lebesgue=measure.lebesgue / scale[:, None],
        intervals=intervals,
        family=measure.family,
        seed=measure.seed,
    )


# ---------------------------------------------------------------------------
# atom clouds
# ---------------------------------------------------------------------------

_SAMPLED_FAMILIES = ("cube", "gaussian")


def make_atom_cloud(family: str, dim: int, n_atoms: int = 0, seed: int = 0,
                    x0=None) -> AtomicMeasure:
    """Atom cloud from a named family; bit-identical for identical inputs.

    "two-atom" and "single-atom" are fixed deterministic configurations;
    "cube" and "gaussian" draw n_atoms (>= dim + 1) i.i.d. samples with
    uniform weights from a counter-based generator keyed by seed.
    """
    if family == "two-atom":
        if dim != 1:
            raise LoclabError("two-atom family is one-dimensional")
        return AtomicMeasure(dim=1, atoms=[[-1.0], [1.0]], weights=[0.5, 0.5],
                             family=family, seed=seed)
    if family == "single-atom":
        point = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
        return AtomicMeasure(dim=dim, atoms=point.reshape(1, dim), weights=[1.0],
                             family=family, seed=seed)
    if family not in _SAMPLED_FAMILIES:
        raise LoclabError(f"unknown atom family {family!r}")
    if n_atoms < dim + 1:
        raise LoclabError("sampled clouds need n_atoms >= dim + 1")
    rng = generator(seed, "atom-cloud", family, dim, n_atoms)
    if family == "cube":
        atoms = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(n_atoms, dim))
    else:
        atoms = rng.standard_normal((n_atoms, dim))
    _check_affine_span(atoms)
    return AtomicMeasure(dim=dim, atoms=atoms,
                         weights=np.full(n_atoms, 1.0 / n_atoms),
                         family=family, seed=seed)


def _check_affine_span(atoms: np.ndarray) -> None:
    centered = atoms - atoms.mean(axis=0)
    rank = np.linalg.matrix_rank(centered, tol=1e-10)
    if rank < atoms.shape[1]:
        raise AffineSpanError("atoms do not affinely span the ambient space")


# ---------------------------------------------------------------------------
# moments and whitening
# ---------------------------------------------------------------------------

def moments(measure: Measure):
    """(barycenter, covariance): exact weighted sums / tensorized quadrature."""
    if isinstance(measure, AtomicMeasure):
        mean = measure.weights @ measure.atoms
        centered = measure.atoms - mean
        cov = (measure.weights[:, None] * centered).T @ centered
        return mean, 0.5 * (cov + cov.T)
    w = measure.weights_matrix()
    mean = (w * measure.nodes).sum(axis=1)
    var = (w * (measure.nodes - mean[:, None]) ** 2).sum(axis=1)
    return mean, np.diag(var)


def isotropize(measure: Measure) -> Measure:
    """Affine map to barycenter 0 and identity covariance.

    Uses the symmetric inverse square root of the covariance, the unique
    positive-definite root, so the map is deterministic.
    """
    if isinstance(measure, ProductQuadMeasure):
        return _whiten_product(measure)
    mean, cov = moments(measure)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals.min() <= 1e-10:
        raise SingularCovarianceError("covariance numerically singular")
    root_inv = (eigvecs * (1.0 / np.sqrt(eigvals))) @ eigvecs.T
    atoms = (measure.atoms - mean) @ root_inv.T
    return AtomicMeasure(dim=measure.dim, atoms=atoms, weights=measure.weights,
                         family=measure.family, seed=measure.seed)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def measure_to_json(measure: Measure) -> dict:
    handle = handle_for(measure)
    doc = {"schema": 1, "dim": measure.dim, "repr": handle.kind,
           "family": handle.family, "seed": handle.seed}
    if isinstance(measure, AtomicMeasure):
        doc["atoms"] = encode_array(measure.atoms)
        doc["weights"] = encode_array(measure.weights)
    else:
        doc["nodes"] = encode_array(measure.nodes)
        doc["log_weights"] = encode_array(measure.log_weights)
        doc["lebesgue"] = encode_array(measure.lebesgue)
        doc["intervals"] = encode_array(measure.intervals)
    return doc


def measure_from_json(doc: dict) -> Measure:
    seed = doc.get("seed")
    if doc["repr"] == "atoms":
        return AtomicMeasure(dim=doc["dim"], atoms=decode_array(doc["atoms"]),
                             weights=decode_array(doc["weights"]),
                             family=doc["family"], seed=seed)
    if doc["repr"] == "product":
        return ProductQuadMeasure(
            dim=doc["dim"], nodes=decode_array(doc["nodes"]),
            log_weights=decode_array(doc["log_weights"]),
            lebesgue=decode_array(doc["lebesgue"]),
            intervals=decode_array(doc["intervals"]),
            family=doc["family"], seed=seed)
    raise LoclabError(f"unknown measure repr {doc['repr']!r}")
