"""Numerical laboratory for stable-jump generators on closed manifolds.

The package has three layers.  `manifolds`/`flow` provide chart-based
geometry with a batched geodesic integrator; `conjugacy`/`symplectic`
locate conjugate pairs, label them into components and attach canonical
covector data; `generator`/`simulate` evaluate the nonlocal jump
generator, its local/far/smoothing decomposition and a Monte Carlo
cross-check.  `cli` wraps the lot behind a JSON-configured batch tool.
"""

from .errors import (
    BadAlpha,
    BadParams,
    ChartSwitchFailed,
    ComponentsTooClose,
    DegenerateKernel,
    GeokernelError,
    InsufficientResolution,
    NoConvergence,
    NotConjugate,
    NumericalError,
    OutOfChart,
    QuadratureBudgetExceeded,
    ReferencePointDegenerate,
    SingularPairPresent,
    TailNotControlled,
)
from .manifolds import (
    ChartPoint,
    CovectorVec,
    ManifoldModel,
    TangentVec,
    catalog_build,
    make_point,
    orthonormal_frame,
)
from .flow import (
    FlowState,
    GeodesicSegment,
    distance_local,
    exp_map,
    exp_map_batch,
    flow,
    flow_segment,
    make_state,
    parallel_transport,
    rk4_to,
    sweep,
)
from .conjugacy import (
    ConjugacyConfig,
    ConjugateRecord,
    PairClassification,
    ScanResult,
    atlas_from_csv,
    atlas_to_csv,
    classify_pair,
    conjugate_scan,
    find_conjugate_pairs,
    propagate_jacobi,
    transversality_slope,
)
from .symplectic import (
    CovectorPair,
    LemmaReport,
    TangentOfTM,
    canonical_pair,
    flow_differential,
    flow_symplectic_residual,
    omega_g_eval,
    verify_geometric_lemma,
)
from .fields import (
    TestField,
    ambient_bump,
    constant_field,
    eval_field,
    random_wave,
    sphere_harmonic,
    torus_mode,
    zonal_harmonic,
)
from .generator import (
    FlowFan,
    GeneratorConfig,
    GeneratorPieces,
    Partition,
    PartitionOptions,
    ProbeResult,
    alternating_component,
    apply_generator,
    average_along_flow,
    constant_coefficient,
    decompose_generator,
    far_part,
    fit_loglog,
    levy_constant,
    local_part,
    partition_builder,
    remainder_op,
    resolve_s_max,
    spectral_probe,
    split_remainder,
    sphere_area,
    standard_fan,
    truncated_generator,
    weighted_remainder,
)
from .simulate import (
    EnsembleResult,
    PathRecord,
    SimConfig,
    bias_bound,
    empirical_generator,
    jump_rate,
    pareto_cdf,
    pareto_mean,
    replay_path,
    resolve_cap,
    run_ensemble,
    sample_direction,
    sample_jump_length,
    simulate_path,
)

__version__ = "0.1.0"
