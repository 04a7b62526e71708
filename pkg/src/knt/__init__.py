"""knt: a numerical laboratory for kinetic transport in the diffusive regime.

The package solves the stationary radiative transfer boundary-value problem
on the ball through its nonlocal integral formulation, compares it against
the diffusion expansion with boundary-layer correctors, assembles the
angularly averaged albedo operator, and evaluates the entropy/singular-value
machinery that converts the expansion into quantitative instability bounds.
"""

from knt.albedo import (
    AlbedoMatrix,
    DTN_NORMALIZATION,
    PairingReport,
    SweepRow,
    adjoint_check,
    albedo_apriori_sweep,
    assemble_albedo,
    boundary_flux_moment,
    default_modes,
    operator_norm,
    weak_form_check,
)
from knt.angular import AngularQuadrature, build_quadrature, diffusion_constant, velocity_average
from knt.elliptic import (
    BoundaryData,
    ExpansionFields,
    ModeField,
    RadialModeSolution,
    UnsupportedConfigurationError,
    dtn_mode,
    expansion_fields,
    graded_radial_nodes,
    interior_sobolev_norm,
    laplace_beltrami_eigenvalue,
    real_sphere_harmonic,
    solve_mode,
)
from knt.geometry import AbsorptionField, Ball, BoundaryPoint, segment_integral
from knt.layer1d import (
    HalfLineGrid,
    LayerSolution,
    assemble_layer_operator,
    closed_form_mean_layer,
    layer_constants,
    layer_regularity_suite,
    moment_condition_check,
    solve_layer,
    solve_standard_layers,
)
from knt.layer_constants import W1, W2, W1_OVER_W2
from knt.remainder import (
    ExpansionEvaluators,
    LayerFitReport,
    RemainderReport,
    RemainderSamples,
    expansion_terms,
    layer_profile_check,
    remainder_fields,
    remainder_sweep,
    sample_grid,
    velocity_moment,
)
from knt.specfun import (
    exp_integral_e1,
    kernel_e,
    kernel_e_antiderivative,
    kernel_moments,
    layer_sources,
)
from knt.transport import (
    CALIBRATED_PHI2,
    Phi2Constants,
    SpatialMesh,
    SupersolutionReport,
    TransportSolution,
    apply_nonlocal_L,
    boundary_source,
    kernel_E_D,
    phi1_constant,
    phi2_function,
    ray_resolution,
    reconstruct_u,
    solve_mean_intensity,
    verify_supersolution,
)

__version__ = "0.1.0"

__all__ = [
    "AbsorptionField",
    "adjoint_check",
    "albedo_apriori_sweep",
    "AlbedoMatrix",
    "AngularQuadrature",
    "apply_nonlocal_L",
    "assemble_albedo",
    "assemble_layer_operator",
    "Ball",
    "boundary_flux_moment",
    "boundary_source",
    "BoundaryData",
    "BoundaryPoint",
    "build_quadrature",
    "CALIBRATED_PHI2",
    "closed_form_mean_layer",
    "default_modes",
    "diffusion_constant",
    "dtn_mode",
    "DTN_NORMALIZATION",
    "exp_integral_e1",
    "expansion_fields",
    "expansion_terms",
    "ExpansionEvaluators",
    "ExpansionFields",
    "graded_radial_nodes",
    "HalfLineGrid",
    "interior_sobolev_norm",
    "kernel_e",
    "kernel_e_antiderivative",
    "kernel_E_D",
    "kernel_moments",
    "laplace_beltrami_eigenvalue",
    "layer_constants",
    "layer_profile_check",
    "layer_regularity_suite",
    "layer_sources",
    "LayerFitReport",
    "LayerSolution",
    "ModeField",
    "moment_condition_check",
    "operator_norm",
    "PairingReport",
    "phi1_constant",
    "phi2_function",
    "Phi2Constants",
    "RadialModeSolution",
    "ray_resolution",
    "real_sphere_harmonic",
    "reconstruct_u",
    "remainder_fields",
    "remainder_sweep",
    "RemainderReport",
    "RemainderSamples",
    "sample_grid",
    "segment_integral",
    "solve_layer",
    "solve_mean_intensity",
    "solve_mode",
    "solve_standard_layers",
    "SpatialMesh",
    "SupersolutionReport",
    "SweepRow",
    "TransportSolution",
    "UnsupportedConfigurationError",
    "velocity_average",
    "velocity_moment",
    "verify_supersolution",
    "W1",
    "W1_OVER_W2",
    "W2",
    "weak_form_check",
    "__version__",
]
