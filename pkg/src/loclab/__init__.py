"""loclab: a numerical laboratory for Brownian tilt flows of compactly
supported measures, their covariance eigenvalue processes, and the
thin-shell variance chain, verified at desk scale."""

__version__ = "0.1.0"

from .measures import (                                    # noqa: F401
    AtomicMeasure,
    MeasureHandle,
    ProductQuadMeasure,
    isotropize,
    make_atom_cloud,
    make_cube_measure,
    make_exponential_product,
    make_truncated_gaussian,
    measure_from_json,
    measure_to_json,
    moments,
)
from .loglaplace import (                                  # noqa: F401
    Tilt,
    TiltSummary,
    invert_grad_laplace,
    log_laplace,
    tilt_summary,
    tilt_third_tensor,
)
from .flow import (                                        # noqa: F401
    BrownianPath,
    FlowTrajectory,
    check_flow_structure,
    sample_brownian_path,
    solve_flow,
    solve_reverse_flow,
)
from .localization import (                                # noqa: F401
    LocalizationTrace,
    StoppingRecord,
    estimate_stopping_tails,
    eval_S,
    martingale_residuals,
    run_localization,
    verify_coupling_law,
    verify_cov_sde,
)
from .spectral import (                                    # noqa: F401
    PSDPath,
    SpectralFunction,
    check_lemma2230,
    check_prop1813,
    dk_quadratic_form,
    guan_tensor_check,
    make_bump,
    solve_product_integral,
    von_neumann_gap,
)
from .thinshell import (                                   # noqa: F401
    ThinShellReport,
    full_chain_report,
    h1neg_norm_1d,
    infinitesimal_ratio,
    variance_of_norm_sq,
    verify_coupling_wasserstein_bound,
    wasserstein_1d,
)
