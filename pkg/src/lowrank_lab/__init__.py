"""Numerical lab for greedy low-rank learning and matrix-factorization flows."""

from .analysis import (
    JacobianOp,
    alignment,
    critical_point_spectrum,
    jacobian_at_zero_spectrum,
    scaling_slope,
    traj_set_distance,
)
from .baselines import ProxConfig, R1mpState, nuclear_min, r1mp_run
from .counterexamples import (
    Counterexample4x4,
    DeepEscapeInstance,
    build_4x4,
    build_deep_escape_instance,
    deep_escape_demo,
    rank1_escape_invariance,
    verify_gf_refutes_conjecture,
    xy_oracle,
)
from .dynamics import (
    AdaptiveConfig,
    DeepFactorState,
    IntegratorConfig,
    Trajectory,
    balanced_init,
    blowup_times,
    deep_diag_closed_form,
    flow_deep,
    flow_depth2,
    flow_kernel_depth,
    gd_deep_factored,
    gd_factored,
    kernel_matrix,
    sigma_closed_form,
)
from .errors import (
    BlowUp,
    ClassificationMismatch,
    Diverged,
    Infeasible,
    InvalidInput,
    NoAlignment,
    NoEscape,
    NotPSD,
    Unsupported,
)
from .expcli import (
    ExperimentConfig,
    gen_ground_truth,
    gen_measurements,
    rng_streams,
    run_experiment,
)
from .glrl import (
    GlrlConfig,
    GlrlReport,
    deep_glrl_run,
    escape_time_shift,
    glrl_run,
    glrl_trajectory_shifted,
)
from .losses import (
    FullObservationLoss,
    LinearLoss,
    Measurement,
    SensingLoss,
    build_counterexample_loss,
    completion_measurement,
    symmetrize_loss,
)
from .symmat import (
    EigDecomp,
    eig,
    frac_power,
    low_rankness,
    nuclear_norm,
    symmetrize,
    top_eigpair,
)

__version__ = "0.1.0"
