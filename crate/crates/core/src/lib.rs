//! Cluster-aware sparse linear regression.
//!
//! The centerpiece is an exact solver for cardinality-constrained ridge
//! regression on an extended design: fixed effects plus per-cluster intercept
//! (and optionally slope) columns, with a budget on how many cluster effects
//! may be nonzero per block. The solver runs outer approximation with
//! supporting-hyperplane cuts; a classification tree learned on the fitted
//! effects assigns clusters to unseen observations. Reference baselines (OLS,
//! ridge, random-intercept mixed model), a simulation engine, and evaluation
//! pipelines round out the crate.

pub mod baselines;
pub mod campaign;
pub mod error;
pub mod io;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod protein;
pub mod simulator;
pub mod solver;
pub mod svg;
pub mod tree;

pub use campaign::{run_bench, BenchCampaign, RunManifest};
pub use error::{Error, Result};
pub use model::{
    build_extended_design, one_hot_assignment, split_coefficients, AssignmentMatrix, Block,
    ClusteredDataset, CoefficientSplit, EmptyClusters, ExtendedDesign, Role,
};
pub use pipeline::{
    fit_full, fit_full_with, run_replicate, tune_sparsity, AssignMode, ClusterRegressor,
    EvalOptions, EvalReport, MethodMetrics,
};
pub use solver::{
    brute_force_best_subset, cut_at, inner_solve, solve_outer_approximation, Cut, InnerSolution,
    MioFit, OracleSolution, SolveOptions, SolveStatus, SupportVector,
};
pub use tree::{fit_classification_tree, ClassTree, Criterion, TreeOptions};
