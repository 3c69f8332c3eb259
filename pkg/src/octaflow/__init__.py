"""Geodesic-flow entropy and curvature-flow laboratory on a genus-2 surface."""

from .errors import (
    OctaflowError,
    NotReducible,
    CurvaturePositive,
    OutOfRange,
    StepFailure,
    RiccatiBlowup,
    CflViolation,
    NegativeInput,
)
from .mobius_geometry import (
    DiskPoint,
    MobiusMap,
    SurfaceAtlas,
    mobius_apply,
    hyperbolic_distance,
    bolza_atlas,
    octagon_contains,
    reduce_to_domain,
)
from .conformal_field import (
    DEFAULT_GRID_SPACING,
    ConformalField,
    CurvatureField,
    area_integral,
    evaluate,
    field_from_bumps,
    gauss_curvature,
    load_snapshot,
    save_snapshot,
)
from .geodesic_dynamics import (
    DEFAULT_BURN_IN,
    DEFAULT_DT,
    GeodesicState,
    RiccatiEstimate,
    UnitTangent,
    curvature_bounds,
    flow_derivative,
    half_orbit_integral,
    half_orbit_profile,
    integrate_geodesic,
    jacobi_ratio,
    riccati_stable,
    riccati_unstable,
    riccati_value_function,
    stable_derivative,
    vertical_derivative,
)
from .liouville_estimators import (
    EstimatorReport,
    LiouvilleSample,
    Perturbation,
    entropy_derivative_fd,
    entropy_derivative_formula,
    entropy_estimate,
    identity_checks,
    jensen_check,
    mean_root_curvature,
    mrc_derivative_fd,
    mrc_derivative_formula,
    perturbation_from_bumps,
    perturbed_field,
    pinched_positivity_check,
    ricci_direction_sign,
    ricci_perturbation,
    riccati_mean_check,
    sample_liouville,
    verify_integration_by_parts,
)
from .flow_cli import (
    FlowCheckpoint,
    FlowConfig,
    jensen_sweep,
    main,
    ricci_step,
    run_flow,
)

__version__ = "0.1.0"
