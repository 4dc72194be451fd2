"""Declarative experiment configs, the check registry, and manifests.

A config is one JSON document; runs are deterministic given the master
seed, with per-check substreams fanned out by name so adding a check
never perturbs the others. Manifests record a digest of the config,
per-check pass/fail with margins, and the output file inventory.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError, LoclabError
from .flow import check_flow_structure, sample_brownian_path
from .jsonio import canonical_dumps, dump_json_atomic
from .localization import (
    ensemble_scan,
    estimate_stopping_tails,
    martingale_residuals,
    run_localization,
    trace_to_json,
    traces_to_csv,
    verify_coupling_law,
    verify_cov_sde,
)
from .measures import (
    make_atom_cloud,
    make_cube_measure,
    make_exponential_product,
    make_truncated_gaussian,
)
from .seeding import seed_for
from .spectral import (
    check_lemma2230,
    check_prop1813,
    dk_quadratic_form,
    guan_tensor_check,
    make_bump,
    polynomial_function,
    random_rotating_psd_path,
    solve_product_integral,
    trace_fn,
    von_neumann_gap,
)
from .thinshell import (
    full_chain_report,
    infinitesimal_ratio,
    variance_of_norm_sq,
    verify_coupling_wasserstein_bound,
)

KINDS = ("simulate", "verify", "thinshell", "report")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    out_dir: str = "."
    measure: dict = field(default_factory=dict)
    dynamics: dict = field(default_factory=dict)
    checks: tuple = ()
    thinshell: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        dyn = self.dynamics
        for key in ("t_max", "dt", "n_paths"):
            if key in dyn and not dyn[key] > 0:
                raise ConfigError(f"dynamics.{key} must be positive")
        for check in self.checks:
            if check.get("name") not in CHECKS:
                raise ConfigError(f"unknown check {check.get('name')!r}")

    def to_json(self) -> dict:
        return {"schema": 1, "kind": self.kind, "seed": self.seed,
                "out_dir": self.out_dir, "measure": self.measure,
                "dynamics": self.dynamics, "checks": list(self.checks),
                "thinshell": self.thinshell, "simulate": self.simulate,
                "report": self.report}

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        try:
            return cls(kind=doc["kind"], seed=int(doc.get("seed", 0)),
                       out_dir=doc.get("out_dir", "."),
                       measure=doc.get("measure", {}),
                       dynamics=doc.get("dynamics", {}),
                       checks=tuple(doc.get("checks", [])),
                       thinshell=doc.get("thinshell", {}),
                       simulate=doc.get("simulate", {}),
                       report=doc.get("report", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def digest(self) -> str:
        return hashlib.sha256(canonical_dumps(self.to_json()).encode()).hexdigest()


def build_measure(spec: dict):
    family = spec.get("family")
    dim = int(spec.get("dim", 1))
    resolution = int(spec.get("resolution", 1024))
    if family == "cube":
        return make_cube_measure(dim, resolution)
    if family == "gaussian":
        return make_truncated_gaussian(dim, float(spec.get("truncation", 8.0)),
                                       resolution)
    if family == "exp":
        return make_exponential_product(dim, resolution)
    if family in ("two-atom", "single-atom"):
        return make_atom_cloud(family, dim, x0=spec.get("x0"))
    if family == "atom-cloud":
        return make_atom_cloud(spec.get("sampler", "cube"), dim,
                               int(spec.get("n_atoms", 1000)),
                               seed=int(spec.get("seed", 0)))
    raise ConfigError(f"unknown measure family {family!r}")


# ---------------------------------------------------------------------------
# check registry
# ---------------------------------------------------------------------------

def _run_prop1813(params, seed):
    cases = int(params.get("cases", 1000))
    n_max = int(params.get("n_max", 8))
    dt = float(params.get("dt", 1e-3))
    violations = 0
    worst = np.inf
    for i in range(cases):
        n = 2 + i % (n_max - 1)
        path = random_rotating_psd_path(n, params.get("t_max", 1.0), dt,
                                        seed=seed_for(seed, "prop1813", i))
        rep = check_prop1813(path)
        worst = min(worst, rep.margin)
        violations += 0 if rep.passed else 1
    return {"pass": violations == 0, "margin": worst,
            "cases": cases, "violations": violations}


def _run_lemma2230(params, seed):
    cases = int(params.get("cases", 100))
    failures = 0
    worst = np.inf
    for i in range(cases):
        n = 2 + i % 5
        path = random_rotating_psd_path(n, 1.0, 2e-3,
                                        seed=seed_for(seed, "lemma2230", i))
        M = solve_product_integral(path)
        gram = np.einsum("tji,tjk->tik", M, M)
        mu = np.linalg.eigvalsh(gram)[:, ::-1].T
        rep = check_lemma2230(mu, path.eigenvalues().T, path.grid)
        worst = min(worst, rep.margin)
        failures += 0 if rep.passed else 1
    return {"pass": failures == 0, "margin": worst, "cases": cases}


def _run_von_neumann(params, seed):
    cases = int(params.get("cases", 10_000))
    rng = np.random.default_rng(seed_for(seed, "von-neumann"))
    worst = np.inf
    for _ in range(cases):
        n = int(rng.integers(2, 7))
        X = rng.standard_normal((n, n))
        Y = rng.standard_normal((n, n))
        worst = min(worst, von_neumann_gap(X @ X.T, Y @ Y.T))
    return {"pass": worst >= -1e-10, "margin": worst + 1e-10, "cases": cases}


def _second_difference(A, H, fn, eps):
    return (trace_fn(A + eps * H, fn) - 2.0 * trace_fn(A, fn)
            + trace_fn(A - eps * H, fn)) / eps**2


def _run_daleckii_krein(params, seed):
    cases = int(params.get("cases", 200))
    rng = np.random.default_rng(seed_for(seed, "daleckii-krein"))
    functions = [
        (polynomial_function([1.0, 0.0, 0.0]), 1e-4),
        (polynomial_function([0.3, -0.5, 2.0, 1.0, 0.0]), 1e-4),
        (make_bump(2.0, 2.5), 1e-4),
        (make_bump(4.0, 2.0), 1e-4),
        (make_bump(1.5, 3.0), 1e-4),
    ]
    worst = 0.0
    for i in range(cases):
        fn, eps = functions[i % len(functions)]
        n = int(rng.integers(2, 5))
        X = rng.standard_normal((n, n))
        A = X @ X.T / n + 0.5 * np.eye(n)
        H = rng.standard_normal((n, n))
        H = 0.5 * (H + H.T)
        H /= np.abs(np.linalg.eigvalsh(H)).max()
        got = dk_quadratic_form(A, H, fn)
        # Richardson-extrapolated central second difference: the eps^2
        # truncation term cancels, leaving rounding noise well below 1e-4
        oracle = (4.0 * _second_difference(A, H, fn, eps / 2)
                  - _second_difference(A, H, fn, eps)) / 3.0
        worst = max(worst, abs(got - oracle) / max(abs(oracle), 1e-8))
    return {"pass": worst <= 1e-4, "margin": 1e-4 - worst,
            "worst_relative_error": worst, "cases": cases}


def _run_bump_family(params, seed):
    results = []
    for D in params.get("D_grid", (1.5, 2.0, 4.0, 8.0)):
        for r in params.get("r_grid", (2.0, 2.5, 3.0)):
            try:
                fn = make_bump(float(D), float(r))
                ok = fn.probe_consistency()
            except LoclabError:
                ok = False
            results.append(ok)
    return {"pass": all(results), "cases": len(results),
            "margin": float(all(results))}


def _run_third_tensor(params, seed):
    dim = int(params.get("dim", 4))
    measure = make_exponential_product(dim, int(params.get("resolution", 1024)))
    rng = np.random.default_rng(seed_for(seed, "third-tensor"))
    worst = np.inf
    violations = 0
    cases = 0
    for t in params.get("t_grid", (0.25, 0.5, 1.0, 2.0)):
        theta = rng.standard_normal(dim) * 0.5
        from .loglaplace import Tilt, tilt_summary
        lam = np.linalg.eigvalsh(tilt_summary(measure, Tilt(float(t), theta)).cov)
        for u in (lam.max(), lam.mean(), 2.0 * lam.max()):
            for k in range(dim):
                rep = guan_tensor_check(measure, float(t), theta, float(u), k)
                worst = min(worst, rep.margin)
                violations += 0 if rep.passed else 1
                cases += 1
    return {"pass": violations == 0, "margin": worst, "cases": cases}


def _measure_from(params, default_family="gaussian"):
    spec = dict(params.get("measure", {}))
    spec.setdefault("family", default_family)
    spec.setdefault("dim", 2)
    spec.setdefault("resolution", 256)
    return build_measure(spec)


def _run_coupling_law(params, seed):
    rows = []
    for spec in params.get("measures", ({"family": "two-atom", "dim": 1},
                                        {"family": "gaussian", "dim": 2,
                                         "resolution": 128})):
        measure = build_measure(spec)
        rep = verify_coupling_law(
            measure, x=np.zeros(measure.dim),
            t_checkpoints=params.get("t_checkpoints", (0.5, 1.0, 2.0)),
            n_paths=int(params.get("n_paths", 4000)),
            seed=seed_for(seed, "coupling", spec["family"]),
            dt=float(params.get("dt", 2e-3)))
        rows.append({"family": spec["family"], "pass": rep.passed,
                     "worst_mean_z": rep.worst_mean_z,
                     "worst_cov_z": rep.worst_cov_z,
                     "max_ks": max(rep.ks_distances)})
    return {"pass": all(r["pass"] for r in rows), "rows": rows,
            "margin": 4.0 - max(max(r["worst_mean_z"], r["worst_cov_z"])
                                for r in rows)}


def _run_martingales(params, seed):
    rows = []
    n_paths = int(params.get("n_paths", 5000))
    for spec in params.get("measures", ({"family": "two-atom", "dim": 1},
                                        {"family": "gaussian", "dim": 2,
                                         "resolution": 128})):
        measure = build_measure(spec)
        for quantity in ("a", "S"):
            xi = None if quantity == "a" else np.zeros(measure.dim)
            rep = martingale_residuals(
                measure, quantity, xi,
                t_pairs=params.get("t_pairs", ((0.0, 0.5), (0.25, 1.0),
                                               (0.5, 1.5))),
                n_paths=n_paths,
                seed=seed_for(seed, "martingale", spec["family"], quantity),
                dt=float(params.get("dt", 2e-3)))
            rows.append({"family": spec["family"], "quantity": quantity,
                         "pass": rep.passed, "worst_z": rep.worst_z})
    return {"pass": all(r["pass"] for r in rows), "rows": rows,
            "margin": 4.0 - max(r["worst_z"] for r in rows)}


def _run_flow_structure(params, seed):
    n_pairs = int(params.get("n_pairs", 50))
    rows = []
    for spec in params.get("measures", ({"family": "gaussian", "dim": 2,
                                         "resolution": 128},
                                        {"family": "cube", "dim": 2,
                                         "resolution": 128})):
        measure = build_measure(spec)
        rng = np.random.default_rng(seed_for(seed, "flow-structure",
                                             spec["family"]))
        ok = True
        worst_semi = 0.0
        for i in range(0, n_pairs, 25):
            batch = min(25, n_pairs - i)
            points = rng.standard_normal((2 * batch, measure.dim)) * 0.5
            path = sample_brownian_path(
                measure.dim, float(params.get("t_max", 1.0)),
                float(params.get("dt", 1e-3)),
                seed=seed_for(seed, "flow-structure-path", spec["family"], i))
            rep = check_flow_structure(measure, path, points,
                                       t_grid=(0.5, 1.0))
            ok = ok and rep.passed
            worst_semi = max(worst_semi, rep.semigroup_error)
        rows.append({"family": spec["family"], "pass": ok,
                     "worst_semigroup_error": worst_semi})
    return {"pass": all(r["pass"] for r in rows), "rows": rows,
            "margin": 1e-5 - max(r["worst_semigroup_error"] for r in rows)}


def _run_lichnerowicz(params, seed):
    rows = []
    for spec in params.get("measures", ({"family": "cube", "dim": 4,
                                         "resolution": 256},
                                        {"family": "gaussian", "dim": 4,
                                         "resolution": 128})):
        measure = build_measure(spec)
        scan = ensemble_scan(measure, float(params.get("t_max", 2.0)),
                             float(params.get("dt", 1e-3)),
                             int(params.get("n_paths", 256)),
                             seed_for(seed, "lichnerowicz", spec["family"]),
                             lichnerowicz_from=0.05, stream="lich")
        worst = float(scan.lichnerowicz_max.max())
        rows.append({"family": spec["family"], "worst_t_lambda1": worst,
                     "pass": worst <= 1.0 + 1e-3})
    return {"pass": all(r["pass"] for r in rows), "rows": rows,
            "margin": 1.0 + 1e-3 - max(r["worst_t_lambda1"] for r in rows)}


def _run_cov_sde(params, seed):
    measure = build_measure(params.get("measure", {"family": "two-atom",
                                                   "dim": 1}))
    dt = float(params.get("dt", 1e-4))
    window = tuple(params.get("window", (0.1, 0.3)))
    t_max = window[1]
    results = {}
    for scale in (1.0, 0.5):
        step = dt * scale
        s = seed_for(seed, "cov-sde")
        trace = run_localization(measure, t_max, step, s)
        path = sample_brownian_path(measure.dim, t_max, step, s)
        results[scale] = verify_cov_sde(measure, trace, path, window)
    ratio = results[1.0].residual_sq / max(results[0.5].residual_sq, 1e-300)
    ok = results[1.0].passed and results[0.5].passed and 1.5 <= ratio <= 3.0
    return {"pass": bool(ok), "margin": results[1.0].threshold
            - results[1.0].residual_sq, "halving_ratio": ratio,
            "residual_sq": results[1.0].residual_sq,
            "stochastic_sq": results[1.0].stochastic_sq}


def _run_stopping_tails(params, seed):
    rows = []
    for spec in params.get("measures", ({"family": "gaussian", "dim": 4,
                                         "resolution": 128},
                                        {"family": "cube", "dim": 8,
                                         "resolution": 256})):
        measure = build_measure(spec)
        table = estimate_stopping_tails(
            measure, k_list=params.get("k_list", (1, 2)),
            t_list=params.get("t_list", (0.1, 0.25, 0.5)),
            n_paths=int(params.get("n_paths", 2000)),
            seed=seed_for(seed, "tails", spec["family"]),
            dt=float(params.get("dt", 1e-3)))
        rows.append({"family": spec["family"], "pass": table.passed,
                     "max_frequency": float(table.frequencies.max()),
                     "short_time_ok": table.short_time_bound_ok})
    return {"pass": all(r["pass"] for r in rows), "rows": rows,
            "margin": 0.01 - max(r["max_frequency"] for r in rows
                                 if r["short_time_ok"] is not None)}


def _run_wasserstein_bound(params, seed):
    measure = build_measure(params.get("measure", {"family": "gaussian",
                                                   "dim": 1,
                                                   "resolution": 256}))
    rep = verify_coupling_wasserstein_bound(
        measure, float(params.get("x", 0.0)), float(params.get("y", 0.5)),
        t=float(params.get("t", 1.0)),
        n_paths=int(params.get("n_paths", 4000)),
        seed=seed_for(seed, "wbound"))
    return {"pass": rep.passed, "margin": rep.margin, "w2": rep.w2,
            "coupling_estimate": rep.coupling_estimate}


def _run_infinitesimal(params, seed):
    measure = build_measure(params.get("measure", {"family": "gaussian",
                                                   "dim": 1, "truncation": 6.0,
                                                   "resolution": 2048}))
    rep = infinitesimal_ratio(
        measure, t=float(params.get("t", 1.0)),
        eps_list=params.get("eps_list", (0.03, 0.1, 0.3)),
        n_paths=int(params.get("n_paths", 1000)),
        seed=seed_for(seed, "infinitesimal"))
    return {"pass": rep.sandwich_ok, "h1_norm": rep.h1_norm,
            "w2_ratios": rep.w2_ratios, "deriv_estimate": rep.deriv_estimate,
            "margin": rep.deriv_estimate * 1.05 + 3 * rep.deriv_se
            - rep.w2_ratios[0]}


def _run_chain(params, seed):
    measure = build_measure(params.get("measure", {"family": "cube", "dim": 8,
                                                   "resolution": 512}))
    rep = full_chain_report(measure, t=float(params.get("t", 1.0)),
                            n_paths=int(params.get("n_paths", 512)),
                            seed=seed_for(seed, "chain"),
                            dt=float(params.get("dt", 1e-3)))
    ok = rep.chain_ok if rep.chain_ok is not None else True
    return {"pass": bool(ok), "report": rep.to_json(),
            "margin": (4.0 * (rep.chain_right + 4.0 * (rep.chain_right_se or 0))
                       - rep.chain_middle) if rep.chain_right else 0.0}


CHECKS = {
    "prop1813": {
        "summary": "Hilbert-Schmidt norm of the matrix flow against the "
                   "eigenvalue exponential bound",
        "formula": "|M_t|^2 <= sum_i exp(2 int_0^t lambda_i(s) ds) for "
                   "M' = A(t) M, M_0 = Id, A(t) symmetric PSD",
        "runner": _run_prop1813,
    },
    "lemma2230": {
        "summary": "coupled eigenvalue recursion: partial-sum hypothesis "
                   "implies exponential partial-sum bound",
        "formula": "sum_{i<=k} mu_i(t) <= sum_{i<=k} [1 + 2 int mu_i lambda_i] "
                   " =>  sum_{i<=k} mu_i(t) <= sum_{i<=k} exp(2 int lambda_i)",
        "runner": _run_lemma2230,
    },
    "von-neumann": {
        "summary": "trace inequality for symmetric PSD pairs",
        "formula": "Tr[AB] <= sum_i a_i b_i (spectra sorted descending)",
        "runner": _run_von_neumann,
    },
    "daleckii-krein": {
        "summary": "second derivative of spectral traces via divided "
                   "differences of f'",
        "formula": "d^2/de^2 Tr f(A + eH) = sum_ij (f'(l_i)-f'(l_j))/(l_i-l_j)"
                   " <H u_i, u_j>^2",
        "runner": _run_daleckii_krein,
    },
    "bump-family": {
        "summary": "exponential-to-quadratic C^2 bridge family contract",
        "formula": "f = exp(D(x-r)) below r-1/D, f = x^2 above r, "
                   "f'' <= (12 D)^2 f, f positive increasing",
        "runner": _run_bump_family,
    },
    "third-tensor": {
        "summary": "truncated squared 3-tensor mass bound for uniformly "
                   "log-concave tilts",
        "formula": "sum_ij xi_ijk^2 1{max(l_i,l_j) <= u} <= "
                   "4 t^(-1/2) u^(3/2) lambda_k",
        "runner": _run_third_tensor,
    },
    "coupling-law": {
        "summary": "flow ensemble matches the explicit process x + B_t + t X "
                   "in law",
        "formula": "law(G_{t,B}(x)) = law(x + B_t + t X), X ~ tilt of the "
                   "measure at x",
        "runner": _run_coupling_law,
    },
    "martingales": {
        "summary": "zero-mean increments of the tilted barycenter process "
                   "and its reparameterized map",
        "formula": "E[q_t - q_s] = 0 and E[(q_t - q_s) phi(q_s)] = 0 within "
                   "4 SE for phi in {1, coordinates}",
        "runner": _run_martingales,
    },
    "flow-structure": {
        "summary": "expansion, Lipschitz, ratio-monotonicity and semigroup "
                   "checks of the tilt flow",
        "formula": "|x-y| <= |theta_t^x - theta_t^y| <= e^{R^2 t} |x-y|; "
                   "|theta_t^x - theta_t^y|/t non-increasing; "
                   "G_{t1+t2} = G-shifted o G_{t1}",
        "runner": _run_flow_structure,
    },
    "lichnerowicz": {
        "summary": "covariance cap of t-uniformly log-concave tilts along "
                   "paths",
        "formula": "lambda_1(t) <= (1 + 1e-3) / t for grid t >= 0.05",
        "runner": _run_lichnerowicz,
    },
    "cov-sde": {
        "summary": "realized covariance increments against the drift-noise "
                   "decomposition",
        "formula": "dA_t = sum_i H_i dB_i - A_t^2 dt with "
                   "H_i = E[(x_i - a_i)(x - a) (x - a)^T]",
        "runner": _run_cov_sde,
    },
    "stopping-tails": {
        "summary": "empirical eigenvalue threshold crossing frequencies",
        "formula": "P(tau_k <= t) non-decreasing in t, non-increasing in k; "
                   "quadrature products: P(tau_1 <= t) <= 0.01 for t <= 0.2",
        "runner": _run_stopping_tails,
    },
    "wasserstein-bound": {
        "summary": "quantile W2 of two tilts against the parallel coupling "
                   "distance",
        "formula": "W2(mu_x, mu_y) <= (E |theta_t^x - theta_t^y|^2)^{1/2} / t",
        "runner": _run_wasserstein_bound,
    },
    "infinitesimal-sandwich": {
        "summary": "dual Sobolev norm below the infinitesimal W2 ratio below "
                   "the normalized derivative flow",
        "formula": "||x||_{H^-1} <= W2(mu, mu_eps)/eps <= (E M_t^2)^{1/2}/t",
        "runner": _run_infinitesimal,
    },
    "chain": {
        "summary": "variance / dual-norm / eigenvalue-exponential chain for "
                   "isotropic product measures",
        "formula": "Var(|X|^2) <= 4 sum_i ||x_i||^2 <= "
                   "(4/t^2) E sum_i exp(2 int_0^t lambda_i)",
        "runner": _run_chain,
    },
}


def describe(name: str) -> str:
    if name not in CHECKS:
        raise ConfigError(f"unknown check {name!r}")
    info = CHECKS[name]
    return (f"{name}: {info['summary']}\n  statement: {info['formula']}\n"
            f"  default parameters: see `loclab run` config keys")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config_digest: str
    tool_version: str
    wall_time_s: float
    checks: list
    outputs: list

    @property
    def all_passed(self) -> bool:
        return all(c.get("pass", True) for c in self.checks)

    def to_json(self) -> dict:
        return {"schema": 1, "config_digest": self.config_digest,
                "tool_version": self.tool_version,
                "wall_time_s": self.wall_time_s,
                "checks": self.checks, "outputs": self.outputs}


def run(config: ExperimentConfig) -> RunManifest:
    start = time.perf_counter()
    os.makedirs(config.out_dir, exist_ok=True)
    outputs = []
    checks = []

    if config.kind == "verify":
        for entry in config.checks:
            name = entry["name"]
            result = CHECKS[name]["runner"](entry, config.seed)
            checks.append({"name": name, **result})
    elif config.kind == "thinshell":
        checks.append(_thinshell_entry(config))
    elif config.kind == "simulate":
        outputs += _simulate(config)
    elif config.kind == "report":
        from .report import render_report
        outputs += render_report(config)

    manifest = RunManifest(config_digest=config.digest(),
                           tool_version=__version__,
                           wall_time_s=time.perf_counter() - start,
                           checks=checks, outputs=outputs)
    path = os.path.join(config.out_dir, "manifest.json")
    dump_json_atomic(path, manifest.to_json())
    manifest.outputs.append(path)
    return manifest


def _thinshell_entry(config: ExperimentConfig) -> dict:
    spec = dict(config.thinshell)
    measure = build_measure({"family": spec.get("family", "cube"),
                             "dim": spec.get("dim", 16),
                             "resolution": spec.get("resolution", 1024),
                             "truncation": spec.get("truncation", 8.0)})
    method = spec.get("method", "monte-carlo")
    samples = int(spec.get("samples", 200_000))
    var, se = variance_of_norm_sq(measure, method, n_samples=samples,
                                  seed=seed_for(config.seed, "thinshell"))
    n = measure.dim
    return {"name": "thinshell", "pass": True, "family": spec.get("family"),
            "n": n, "method": method, "samples": samples,
            "var_norm_sq": var, "var_norm_sq_se": se,
            "var_norm_sq_over_n": var / n}


def _simulate(config: ExperimentConfig) -> list:
    measure = build_measure(config.measure)
    dyn = config.dynamics
    n_traces = int(config.simulate.get("n_traces", 1))
    traces = [run_localization(measure, float(dyn.get("t_max", 1.0)),
                               float(dyn.get("dt", 1e-3)),
                               seed=seed_for(config.seed, "simulate", i))
              for i in range(n_traces)]
    outputs = []
    for i, trace in enumerate(traces):
        path = os.path.join(config.out_dir, f"trace_{i}.json")
        dump_json_atomic(path, trace_to_json(trace))
        outputs.append(path)
    csv_path = os.path.join(config.out_dir, "traces.csv")
    traces_to_csv(traces, csv_path)
    outputs.append(csv_path)
    return outputs


def manifest_matches(manifest_doc: dict, config: ExperimentConfig) -> bool:
    """Recompute the config digest and compare with the stored one."""
    return manifest_doc.get("config_digest") == config.digest()


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    config = ExperimentConfig.from_json(doc)
    env_seed = os.environ.get("LOCLAB_SEED")
    if env_seed is not None:
        config = ExperimentConfig.from_json(
            {**config.to_json(), "seed": int(env_seed)})
    return config
