"""Sparse deformations of Anosov toral automorphisms, with desk-scale checks."""

from .cones import (
    ConeField,
    ConeInvarianceReport,
    DominationReport,
    NearHyperbolicityReport,
    ParameterLedger,
    check_cone_invariance,
    check_gamma_near_hyperbolic,
    check_respects_domination,
    choose_parameters,
    cone_contains,
    cone_pair,
    constraint_slack,
    estimate_dominated_splitting,
    stable_cone,
    unstable_cone,
)
from .deform import (
    ChartFrame,
    DeformedMap,
    LinearConjugationPatch,
    LocalDeformation,
    SparsenessReport,
    apply_linear_conjugation,
    build_bv_map,
    build_center_stage,
    build_pitchfork_stage,
    build_tangency_stage,
    check_sparse_deformation,
    flow,
    flow_derivative,
    linear_deformed_map,
    map_from_descriptor,
)
from .fields import CutoffFunction, PlanarVectorField
from .leaves import (
    EquivarianceReport,
    LeafDisk,
    UniquenessReport,
    cauchy_ratios,
    check_equivariance,
    check_leaf_uniqueness,
    compute_cs_disk,
    compute_cu_disk,
    flat_disk,
    graph_transform_step,
)
from .shadow import (
    ExpansivityReport,
    FiberProbe,
    IntersectionResult,
    SemiConjugacy,
    c0_distance,
    calibrate_shadowing,
    check_almost_expansivity,
    fiber_probe,
    load_displacement,
    product_intersection,
    save_displacement,
    solve_semiconjugacy,
)
from .torus import (
    CAT_MAP,
    PeriodicData,
    SpectralData,
    ToralAutomorphism,
    apply_automorphism,
    as_automorphism,
    choose_stage_centers,
    find_bv_matrix,
    fixed_points,
    minimal_lift,
    periodic_points,
    spectral_decomposition,
    torus_distance,
    wrap,
)

__all__ = [
    "CAT_MAP",
    "ChartFrame",
    "ConeField",
    "ConeInvarianceReport",
    "CutoffFunction",
    "DeformedMap",
    "DominationReport",
    "EquivarianceReport",
    "ExpansivityReport",
    "FiberProbe",
    "IntersectionResult",
    "LeafDisk",
    "LinearConjugationPatch",
    "LocalDeformation",
    "NearHyperbolicityReport",
    "ParameterLedger",
    "PeriodicData",
    "PlanarVectorField",
    "SemiConjugacy",
    "SparsenessReport",
    "SpectralData",
    "ToralAutomorphism",
    "UniquenessReport",
    "apply_automorphism",
    "apply_linear_conjugation",
    "as_automorphism",
    "build_bv_map",
    "build_center_stage",
    "build_pitchfork_stage",
    "build_tangency_stage",
    "c0_distance",
    "calibrate_shadowing",
    "cauchy_ratios",
    "check_almost_expansivity",
    "check_cone_invariance",
    "check_equivariance",
    "check_gamma_near_hyperbolic",
    "check_leaf_uniqueness",
    "check_respects_domination",
    "check_sparse_deformation",
    "choose_parameters",
    "choose_stage_centers",
    "compute_cs_disk",
    "compute_cu_disk",
    "cone_contains",
    "cone_pair",
    "constraint_slack",
    "estimate_dominated_splitting",
    "fiber_probe",
    "find_bv_matrix",
    "fixed_points",
    "flat_disk",
    "flow",
    "flow_derivative",
    "graph_transform_step",
    "linear_deformed_map",
    "load_displacement",
    "map_from_descriptor",
    "minimal_lift",
    "periodic_points",
    "product_intersection",
    "save_displacement",
    "solve_semiconjugacy",
    "spectral_decomposition",
    "stable_cone",
    "torus_distance",
    "unstable_cone",
    "wrap",
]
