//! Forward and inverse design engine for self-morphing bilayer plates printed
//! from a single shape-memory polymer.
//!
//! The forward path turns printing angles, layer thicknesses and an activation
//! temperature into the deployed midplane strains and curvatures of the plate.
//! The inverse path starts from a target surface with negative Gaussian
//! curvature, superimposes it on a torus, and searches the design space for the
//! layup and flat plate dimensions that deploy into it.
//!
//! Units: lengths in mm, moduli in MPa, temperatures in °C, angles in degrees
//! at every public boundary that carries a `_deg` suffix and radians elsewhere.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod designmap;
pub mod error;
pub mod inverse;
pub mod io;
pub mod laminate;
pub mod material;
pub mod torusgeom;

pub use designmap::{
    classify_mode, curvatures_from_principal, gaussian_curvature, principal_curvatures, sweep_map,
    DesignMapGrid, MapCell, MapField, ModeLabel, ModeTolerances, PrincipalCurvature,
};
pub use error::{Error, ErrorKind, Result};
pub use inverse::{
    curvature_target, filter_candidates, initial_dimensions, plan_pipeline, plan_sweep,
    search_candidates, verify_plan, Candidate, CurvatureTarget, FilterCriteria, PlanOptions,
    PrintPlan, TargetSurface, VerificationReport,
};
pub use laminate::{
    assemble_abd, free_recovery, lamina_stresses, solve_free_recovery, thermal_resultants,
    transform_recovery, transform_stiffness, AbdMatrices, LayerSpec, Layup, MidplaneState,
    StressProfile, ThermalResultants,
};
pub use material::{
    load_material_card, recovery_strains, reduced_stiffness, ElasticConstants, MaterialCard,
    ProcessRecord, RecoveryPoint, RecoveryState,
};
pub use torusgeom::{
    estimate_curvatures, fit_torus, flatten_patch, quadratic_preview, torus_curvatures,
    torus_point, FlattenedPatch, SurfaceMesh, TorusFit, TorusPatch, TorusSpec,
};
