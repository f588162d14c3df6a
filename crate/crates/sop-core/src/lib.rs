//! Variance-parameter estimation for generalized linear mixed models whose
//! random-effect precision matrices are linear combinations of known
//! symmetric building blocks, one variance parameter per block.
//!
//! The estimation loop alternates a single coefficient-system factorization
//! with closed-form multiplicative updates: each variance parameter is the
//! quadratic form of its random effects divided by its effective dimension,
//! and the effective dimensions come from the same factorization at no extra
//! solve. The crate provides:
//!
//! - [`splines`]: B-spline bases and difference-penalty matrices;
//! - [`family`] and [`model`]: response families, model specification with
//!   overlapping precision atoms, working responses, and identifiability
//!   (rank) diagnostics;
//! - [`henderson`]: assembly and factorization of the coefficient system;
//! - [`estimate`]: effective dimensions, update rules, restricted-likelihood
//!   evaluation, and the full fitting loop;
//! - [`adaptive`] and [`hierarchical`]: builders turning curve-fitting
//!   problems (locally adaptive smoothing, subject-specific curves) into
//!   model specifications;
//! - [`predict`]: pointwise curve prediction with approximate 95% bands.

pub mod adaptive;
pub mod error;
pub mod estimate;
pub mod family;
pub mod henderson;
pub mod hierarchical;
pub mod model;
pub mod predict;
pub mod splines;

pub use adaptive::{adaptive_pspline_spec, lambda_field, AdaptiveSpec};
pub use error::{Result, SopError};
pub use estimate::{
    compute_ed, ed_upper_bounds, fit, phi_update, phi_update_uncorrected, reml_deviance,
    t_identity_check, update_variances, EdBounds, EffectiveDims, FitOptions, FitResult,
    VarianceUpdate, DEGENERATE_ED_TOL, VARIANCE_FLOOR_FACTOR,
};
pub use family::{Family, FamilyKind, Link, PhiSpec};
pub use henderson::{
    assemble_henderson, solve_henderson, CoefficientEstimates, CstarBlock, HendersonSystem,
    Layout, WorkingSystem,
};
pub use hierarchical::{
    factor_by_curve_spec, hierarchical_m0_spec, GroupCurve, HierarchicalSpec, PopulationCurve,
    SubjectCurve,
};
pub use model::{
    assemble_all_precisions, assemble_precision, check_rank_conditions, numeric_rank,
    working_response, BlockPrecision, MixedModelSpec, RandomBlock, RankCondition, RankReport,
    RankShortcut, VarianceState,
};
pub use predict::{predict_curve, CurveDesign, Prediction, Z_95};
pub use splines::{
    diff_matrix, eval_basis, make_knots, polynomial_coefficients, BasisMatrix, DifferenceMatrix,
    KnotVector,
};
