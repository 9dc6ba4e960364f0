//! Parabolic relaxation toolkit for quadratically-constrained quadratic
//! programming.
//!
//! The crate builds convex relaxations of nonconvex QCQPs by replacing the
//! quadratic terms with a lifted matrix variable constrained through
//! two-dimensional parabolic (rotated quadratic cone) rows, penalizes the
//! lift around an anchor point to recover rank-consistent solutions, and
//! iterates the penalized solve into a sequential local optimizer with
//! certified descent. Analysis utilities compute penalty-weight thresholds,
//! constraint-qualification measures, and diagonal-dominance exactness
//! certificates; a system-identification pipeline exercises the solver on
//! bilinear state-space recovery problems.
//!
//! Module map:
//! - [`qcqp`]: instance types (quadratic forms, instances, lifted points).
//! - [`relax`]: relaxation model construction (parabolic rows, box cuts,
//!   product-minor baseline).
//! - [`cone`]: cone-program encoding and the reference interior-point solver.
//! - [`theory`]: feasibility distance, binding sets, penalty thresholds,
//!   exactness certificates, KKT residuals.
//! - [`local`]: local nonlinear search used for feasibility projection and
//!   as an independent optimum oracle.
//! - [`seq`]: sequential penalized solves (plain and accelerated), penalty
//!   grid search, gap reporting.
//! - [`sysid`]: linear system identification experiment pipeline.
//! - [`io`]: native instance documents, external-format import, reports.
//! - [`synth`]: seeded synthetic instance generators.

pub mod error;
pub mod cone;
pub mod local;
pub mod mat;
pub mod qcqp;
pub mod relax;
pub mod seq;
pub mod synth;
pub mod sysid;
pub mod theory;

pub use error::{Error, Result};
pub use local::{
    minimize_from, multistart_distance, multistart_minimize, project_to_feasible,
    restore_feasible, LocalOptions, LocalSolution,
};
pub use mat::{RectMatrix, SymMatrix};
pub use qcqp::{Bounds, ConIndex, LiftedPoint, QcqpInstance, QuadForm};
pub use cone::{
    encode_cone_program, extract_duals, solve_cone_program, solve_cone_program_with, ConeBlock,
    ConeProgram, ConeSolution, ConeSolver, ReferenceIpm, SolveSettings, SolveStatus,
    StandardForm, StandardSolution,
};
pub use relax::{
    add_box_cuts, build_parabolic_model, build_socp_baseline, select_pairs, LinExpr, ModelRow,
    PairPolicy, PairSign, ParabolicPair, RelaxationModel, VarMap,
};
pub use seq::{
    auto_eta, auto_eta_with, compute_gaps, eta_grid, run_accelerated, run_accelerated_with,
    run_rounds, run_sequential, run_sequential_with, LambdaRule, RoundRecord, RunConfig,
    RunOutcome, RunTrace, Schedule, StopRule, RANK_TIGHT_TOL,
};
pub use synth::{random_feasible_instance, random_quadform, SynthOptions};
pub use sysid::{
    build_sysid_instance, build_sysid_relaxation, composite_truth, generate_system,
    identity_anchor, recovery_error, simulate, split_composite, LinearSystem, Trajectory,
};
pub use theory::{
    analyze, eta_thresholds, exactness_certificate, expanded_q, feasibility_distance_upper,
    jacobian, kkt_residual, pencil_norm_upper, quasi_binding_set, singularity, BindingSet,
    ExactnessCertificate, PencilNormKind, TheoryReport,
};
