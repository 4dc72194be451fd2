"""Figure rendering for the report path.

Renders matplotlib figures to files alongside the delimited output:
an eigenvalue fan for localization traces, and variance / chain
scaling panels for dimension sweeps.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .jsonio import atomic_write_text, dump_json_atomic
from .localization import run_localization, traces_to_csv
from .seeding import seed_for
from .thinshell import full_chain_report


def render_trace_figures(traces, out_dir: str) -> list:
    """Eigenvalue fan plot + per-(path, time) CSV for a batch of traces."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "traces.csv")
    traces_to_csv(traces, csv_path)
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for trace in traces:
        for i in range(trace.eigvals.shape[1]):
            ax.plot(trace.grid, trace.eigvals[:, i], lw=0.8, alpha=0.7)
    tpos = trace.grid[trace.grid > 0.05]
    ax.plot(tpos, 1.0 / tpos, "k--", lw=1.2, label="1/t cap")
    ax.set_xlabel("t")
    ax.set_ylabel("covariance eigenvalues")
    ax.set_ylim(0, min(3.0, float(np.nanmax([tr.eigvals.max() for tr in traces])) * 1.3 + 0.1))
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    fig_path = os.path.join(out_dir, "eigenvalue_fan.png")
    fig.savefig(fig_path, dpi=130)
    plt.close(fig)
    return [csv_path, fig_path]


def render_scaling_figures(reports, out_dir: str) -> list:
    """Scaling CSV (one row per dimension) + panels for a chain sweep."""
    os.makedirs(out_dir, exist_ok=True)
    rows = ["n,var_norm_sq,var_over_n,chain_middle,chain_right,chain_right_se,"
            "chain_right_over_n,t_used"]
    for rep in reports:
        cr = rep.chain_right
        rows.append(",".join([
            str(rep.n), repr(rep.var_norm_sq),
            repr(rep.var_norm_sq / rep.n), repr(rep.chain_middle),
            "" if cr is None else repr(cr),
            "" if rep.chain_right_se is None else repr(rep.chain_right_se),
            "" if cr is None else repr(cr / rep.n),
            "" if rep.t_used is None else repr(rep.t_used),
        ]))
    csv_path = os.path.join(out_dir, "scaling.csv")
    atomic_write_text(csv_path, "\n".join(rows) + "\n")

    ns = [rep.n for rep in reports]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    axes[0].plot(ns, [rep.var_norm_sq / rep.n for rep in reports], "o-")
    axes[0].set_xlabel("n")
    axes[0].set_ylabel("Var(|X|^2) / n")
    if all(rep.chain_right is not None for rep in reports):
        axes[1].errorbar(ns, [rep.chain_right / rep.n for rep in reports],
                         yerr=[4 * rep.chain_right_se / rep.n for rep in reports],
                         fmt="s-")
    axes[1].set_xlabel("n")
    axes[1].set_ylabel("chain right side / n")
    for ax in axes:
        ax.set_xscale("log", base=2)
    fig.tight_layout()
    fig_path = os.path.join(out_dir, "scaling.png")
    fig.savefig(fig_path, dpi=130)
    plt.close(fig)
    return [csv_path, fig_path]


def render_report(config) -> list:
    """Dispatch for config kind=report: traces mode or scaling mode."""
    from .experiments import build_measure

    mode = config.report.get("mode", "traces")
    out_dir = config.out_dir
    if mode == "traces":
        measure = build_measure(config.measure)
        dyn = config.dynamics
        n_traces = int(config.report.get("n_traces", 4))
        traces = [run_localization(measure, float(dyn.get("t_max", 1.0)),
                                   float(dyn.get("dt", 1e-3)),
                                   seed=seed_for(config.seed, "report", i))
                  for i in range(n_traces)]
        return render_trace_figures(traces, out_dir)
    if mode == "scaling":
        dims = [int(n) for n in config.report.get("dims", (2, 4, 8, 16))]
        reports = []
        json_path = os.path.join(out_dir, "scaling_reports.json")
        for n in dims:
            spec = dict(config.measure)
            spec["dim"] = n
            measure = build_measure(spec)
            reports.append(full_chain_report(
                measure, t=float(config.report.get("t", 1.0)),
                n_paths=int(config.report.get("n_paths", 256)),
                seed=seed_for(config.seed, "report-scaling", n),
                dt=float(config.dynamics.get("dt", 1e-3))))
        os.makedirs(out_dir, exist_ok=True)
        dump_json_atomic(json_path, [rep.to_json() for rep in reports])
        return render_scaling_figures(reports, out_dir) + [json_path]
    raise ValueError(f"unknown report mode {mode!r}")
