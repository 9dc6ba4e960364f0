//! Standard-form cone programs, the encoder from relaxation models, the
//! pluggable solver seam, and dual extraction.
//!
//! A [`ConeProgram`] stacks affine rows `s(x) = M x + q` whose segments must
//! land in zero cones (equalities), the nonnegative orthant (inequalities),
//! or rotated quadratic cones `{(u, w, v) : u·w ≥ ‖v‖², u ≥ 0, w ≥ 0}`.
//! Solving lowers rotated rows to second-order cones via the symmetric
//! orthogonal-up-to-scaling map
//!
//! ```text
//!     (u, w, v)  ↦  ((u + w)/√2, (u − w)/√2, √2·v)
//! ```
//!
//! and hands the result to a [`ConeSolver`]. The bundled reference solver is
//! a dense Nesterov–Todd primal-dual interior-point method; the seam accepts
//! external implementations of the same standard form.

pub mod ipm;
pub mod jordan;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qcqp::ConIndex;
use crate::relax::{LinExpr, ModelRow, RelaxationModel};
use jordan::ConeLayout;

/// Multiplier magnitude above which an inequality counts as binding when
/// assembling the dual certificate matrix.
pub const DUAL_TOL: f64 = 1e-7;

/// One cone segment of the stacked affine rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeBlock {
    /// `len` rows pinned to zero.
    Zero(usize),
    /// `len` rows kept nonnegative.
    NonNeg(usize),
    /// `2 + vdim` rows `(u, w, v)` with `u·w ≥ ‖v‖²`.
    Rotated { vdim: usize },
}

impl ConeBlock {
    pub fn num_rows(&self) -> usize {
        match *self {
            ConeBlock::Zero(len) | ConeBlock::NonNeg(len) => len,
            ConeBlock::Rotated { vdim } => 2 + vdim,
        }
    }
}

/// Standard-form cone program: minimize `costᵀx + constant` subject to
/// `M x + q ∈ K`, with `M` stored as sparse rows aligned with the cone list.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeProgram {
    pub num_vars: usize,
    pub cost: Vec<f64>,
    pub cost_constant: f64,
    /// Sparse rows of `M`: each row is a sorted `(column, value)` list.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Offsets `q`, one per row.
    pub offsets: Vec<f64>,
    pub cones: Vec<ConeBlock>,
}

impl ConeProgram {
    /// Total stacked row count implied by the cone list.
    pub fn num_rows(&self) -> usize {
        self.cones.iter().map(ConeBlock::num_rows).sum()
    }

    /// `(zero rows, nonnegative rows, rotated blocks)`.
    pub fn cone_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for c in &self.cones {
            match c {
                ConeBlock::Zero(len) => counts.0 += len,
                ConeBlock::NonNeg(len) => counts.1 += len,
                ConeBlock::Rotated { .. } => counts.2 += 1,
            }
        }
        counts
    }

    fn row_value(&self, row: usize, x: &[f64]) -> f64 {
        let mut acc = self.offsets[row];
        for &(c, v) in &self.rows[row] {
            acc += v * x[c];
        }
        acc
    }

    /// Cone-membership residuals at a decision vector, one per zero and
    /// nonnegative row and one per rotated block (`u·w − ‖v‖²`), in row
    /// order. Nonnegative residuals mean the membership holds; zero rows
    /// report their raw value.
    pub fn membership_residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut row = 0;
        for block in &self.cones {
            match *block {
                ConeBlock::Zero(len) | ConeBlock::NonNeg(len) => {
                    for _ in 0..len {
                        out.push(self.row_value(row, x));
                        row += 1;
                    }
                }
                ConeBlock::Rotated { vdim } => {
                    let u = self.row_value(row, x);
                    let w = self.row_value(row + 1, x);
                    let mut v2 = 0.0;
                    for k in 0..vdim {
                        v2 += self.row_value(row + 2 + k, x).powi(2);
                    }
                    out.push(u * w - v2);
                    row += 2 + vdim;
                }
            }
        }
        out
    }

    /// Lower to the solver's standard form `min cᵀx, A x = b, G x + s = h,
    /// s ∈ (orthant × SOC…)`, with rotated blocks mapped onto second-order
    /// cones. Also returns the dual mapping used to fold solver multipliers
    /// back onto the stacked rows.
    pub fn lower(&self) -> (StandardForm, DualMap) {
        let mut eq_rows = Vec::new();
        let mut eq_rhs = Vec::new();
        let mut orth_rows = Vec::new();
        let mut orth_rhs = Vec::new();
        let mut soc_rows = Vec::new();
        let mut soc_rhs = Vec::new();
        let mut soc_dims = Vec::new();
        let mut targets = Vec::with_capacity(self.num_rows());

        let mut row = 0;
        for block in &self.cones {
            match *block {
                ConeBlock::Zero(len) => {
                    for _ in 0..len {
                        // s = Mx + q = 0  ⇔  A x = b with A = M, b = −q.
                        targets.push(RowTarget::Eq(eq_rows.len()));
                        eq_rows.push(self.rows[row].clone());
                        eq_rhs.push(-self.offsets[row]);
                        row += 1;
                    }
                }
                ConeBlock::NonNeg(len) => {
                    for _ in 0..len {
                        // s = Mx + q ≥ 0  ⇔  G x + s = h with G = −M, h = q.
                        targets.push(RowTarget::Orthant(orth_rows.len()));
                        orth_rows.push(negate_row(&self.rows[row]));
                        orth_rhs.push(self.offsets[row]);
                        row += 1;
                    }
                }
                ConeBlock::Rotated { vdim } => {
                    let dim = 2 + vdim;
                    targets.push(RowTarget::Soc {
                        block: soc_dims.len(),
                        dim,
                    });
                    for _ in 1..dim {
                        targets.push(RowTarget::SocContinuation);
                    }
                    // Lowered slack T·(u, w, v) with T symmetric:
                    //   s₀ = (u + w)/√2, s₁ = (u − w)/√2, s₂.. = √2·v.
                    let r2 = std::f64::consts::SQRT_2;
                    let u = (&self.rows[row], self.offsets[row]);
                    let w = (&self.rows[row + 1], self.offsets[row + 1]);
                    let plus = combine_rows(&[(u.0, 1.0 / r2), (w.0, 1.0 / r2)]);
                    let minus = combine_rows(&[(u.0, 1.0 / r2), (w.0, -1.0 / r2)]);
                    soc_rows.push(negate_row(&plus));
                    soc_rhs.push((u.1 + w.1) / r2);
                    soc_rows.push(negate_row(&minus));
                    soc_rhs.push((u.1 - w.1) / r2);
                    for k in 0..vdim {
                        let vr = &self.rows[row + 2 + k];
                        soc_rows.push(negate_row(&scale_row(vr, r2)));
                        soc_rhs.push(r2 * self.offsets[row + 2 + k]);
                    }
                    soc_dims.push(dim);
                    row += dim;
                }
            }
        }

        let nonneg = orth_rows.len();
        orth_rows.extend(soc_rows);
        orth_rhs.extend(soc_rhs);
        (
            StandardForm {
                num_vars: self.num_vars,
                cost: self.cost.clone(),
                cost_constant: self.cost_constant,
                eq_rows,
                eq_rhs,
                cone_rows: orth_rows,
                cone_rhs: orth_rhs,
                layout: ConeLayout {
                    nonneg,
                    soc: soc_dims,
                },
            },
            DualMap { targets },
        )
    }
}

fn negate_row(row: &[(usize, f64)]) -> Vec<(usize, f64)> {
    row.iter().map(|&(c, v)| (c, -v)).collect()
}

fn scale_row(row: &[(usize, f64)], s: f64) -> Vec<(usize, f64)> {
    row.iter().map(|&(c, v)| (c, s * v)).collect()
}

fn combine_rows(parts: &[(&[(usize, f64)], f64)]) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for (row, scale) in parts {
        for &(c, v) in *row {
            *acc.entry(c).or_insert(0.0) += scale * v;
        }
    }
    acc.into_iter().filter(|&(_, v)| v != 0.0).collect()
}

/// Where each stacked program row landed in the standard form.
#[derive(Clone, Debug)]
enum RowTarget {
    Eq(usize),
    Orthant(usize),
    Soc { block: usize, dim: usize },
    SocContinuation,
}

/// Folds standard-form multipliers back onto the stacked program rows.
#[derive(Clone, Debug)]
pub struct DualMap {
    targets: Vec<RowTarget>,
}

impl DualMap {
    /// Per-row duals in the program's original (rotated) coordinates.
    pub fn fold(&self, layout: &ConeLayout, eq_duals: &[f64], cone_duals: &[f64]) -> Vec<f64> {
        let soc_offsets: Vec<(usize, usize)> = layout.soc_offsets().collect();
        let mut out = Vec::with_capacity(self.targets.len());
        let r2 = std::f64::consts::SQRT_2;
        for t in &self.targets {
            match *t {
                RowTarget::Eq(i) => out.push(eq_duals[i]),
                RowTarget::Orthant(i) => out.push(cone_duals[i]),
                RowTarget::Soc { block, dim } => {
                    let (off, d) = soc_offsets[block];
                    debug_assert_eq!(d, dim);
                    let z0 = cone_duals[off];
                    let z1 = cone_duals[off + 1];
                    // Original coords: Tᵀ z with the same symmetric T.
                    out.push((z0 + z1) / r2);
                    out.push((z0 - z1) / r2);
                    for k in 2..dim {
                        out.push(r2 * cone_duals[off + k]);
                    }
                }
                RowTarget::SocContinuation => {}
            }
        }
        out
    }
}

/// Solver-facing standard form: minimize `costᵀ x` subject to `A x = b` and
/// `G x + s = h`, `s ∈ K` with `K` described by `layout`. Matrices are kept
/// as sparse rows; [`StandardForm::eq_triplets`] and
/// [`StandardForm::cone_triplets`] expose them as `(row, col, value)`
/// triplets for external adapters.
#[derive(Clone, Debug)]
pub struct StandardForm {
    pub num_vars: usize,
    pub cost: Vec<f64>,
    pub cost_constant: f64,
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub cone_rows: Vec<Vec<(usize, f64)>>,
    pub cone_rhs: Vec<f64>,
    pub layout: ConeLayout,
}

impl StandardForm {
    pub fn eq_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.eq_rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    pub fn cone_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.cone_rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }
}

/// Outcome classification of one solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::NumericFailure => "numeric_failure",
        };
        f.write_str(s)
    }
}

/// Termination settings for cone solves.
#[derive(Clone, Copy, Debug)]
pub struct SolveSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iter: 200,
        }
    }
}

impl SolveSettings {
    fn validate(&self) -> Result<()> {
        if !(self.tol_feas > 0.0 && self.tol_gap > 0.0) {
            return Err(Error::InvalidArgument(
                "solver tolerances must be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Solution of a standard-form solve, in lowered coordinates.
#[derive(Clone, Debug)]
pub struct StandardSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub cone_duals: Vec<f64>,
    pub slacks: Vec<f64>,
    /// `costᵀx` without the constant.
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

/// Pluggable cone-solver seam: implementations consume the standard form.
pub trait ConeSolver {
    fn name(&self) -> &str;
    fn solve_standard_form(
        &self,
        form: &StandardForm,
        settings: &SolveSettings,
    ) -> Result<StandardSolution>;
}

/// The bundled dense Nesterov–Todd interior-point method.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceIpm;

impl ConeSolver for ReferenceIpm {
    fn name(&self) -> &str {
        "reference"
    }

    fn solve_standard_form(
        &self,
        form: &StandardForm,
        settings: &SolveSettings,
    ) -> Result<StandardSolution> {
        ipm::solve_standard(form, settings)
    }
}

/// Solution of a cone program, with duals folded back to the stacked rows.
#[derive(Clone, Debug)]
pub struct ConeSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// One dual per stacked row, in program row order. Equality duals are
    /// unrestricted; orthant duals are nonnegative; rotated-block duals are
    /// reported in the original `(u, w, v)` coordinates.
    pub row_duals: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// Encode a relaxation model as a standard-form cone program. Rows keep the
/// model's order; every lifted `X` reference must be present in the model's
/// variable map.
pub fn encode_cone_program(model: &RelaxationModel<'_>) -> Result<ConeProgram> {
    let vmap = &model.vmap;
    let to_row = |e: &LinExpr| -> Result<(Vec<(usize, f64)>, f64)> {
        let mut row = Vec::with_capacity(e.y_coeffs.len() + e.x_coeffs.len());
        for &(r, c, v) in &e.y_coeffs {
            row.push((vmap.y_slot(r, c), v));
        }
        for &(i, j, v) in &e.x_coeffs {
            let slot = vmap.x_slot(i, j).ok_or_else(|| {
                Error::Internal(format!(
                    "row references lifted entry ({i}, {j}) absent from the variable map"
                ))
            })?;
            row.push((slot, v));
        }
        row.sort_by_key(|&(c, _)| c);
        Ok((row, e.constant))
    };

    let mut cost = vec![0.0; vmap.num_vars()];
    let (cost_row, cost_constant) = to_row(&model.objective)?;
    for (c, v) in cost_row {
        cost[c] += v;
    }

    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    let mut cones: Vec<ConeBlock> = Vec::new();
    let push_block = |cones: &mut Vec<ConeBlock>, kind: u8| match (cones.last_mut(), kind) {
        (Some(ConeBlock::Zero(len)), 0) => *len += 1,
        (Some(ConeBlock::NonNeg(len)), 1) => *len += 1,
        (_, 0) => cones.push(ConeBlock::Zero(1)),
        (_, 1) => cones.push(ConeBlock::NonNeg(1)),
        _ => unreachable!(),
    };

    for mrow in &model.rows {
        match mrow {
            ModelRow::Eq(e) => {
                let (r, q) = to_row(e)?;
                rows.push(r);
                offsets.push(q);
                push_block(&mut cones, 0);
            }
            ModelRow::Ineq(e) => {
                // Membership slack is −expr ≥ 0.
                let (r, q) = to_row(e)?;
                rows.push(negate_row(&r));
                offsets.push(-q);
                push_block(&mut cones, 1);
            }
            ModelRow::Parabolic { u, v } => {
                let (ur, uq) = to_row(u)?;
                rows.push(ur);
                offsets.push(uq);
                // Second coordinate is the constant 1.
                rows.push(Vec::new());
                offsets.push(1.0);
                for e in v {
                    let (vr, vq) = to_row(e)?;
                    rows.push(vr);
                    offsets.push(vq);
                }
                cones.push(ConeBlock::Rotated { vdim: v.len() });
            }
            ModelRow::ProductMinor { u, w, v } => {
                for e in [u, w, v] {
                    let (r, q) = to_row(e)?;
                    rows.push(r);
                    offsets.push(q);
                }
                cones.push(ConeBlock::Rotated { vdim: 1 });
            }
        }
    }

    Ok(ConeProgram {
        num_vars: vmap.num_vars(),
        cost,
        cost_constant,
        rows,
        offsets,
        cones,
    })
}

/// Solve a cone program with the bundled reference solver.
pub fn solve_cone_program(prog: &ConeProgram, settings: &SolveSettings) -> Result<ConeSolution> {
    solve_cone_program_with(prog, settings, &ReferenceIpm)
}

/// Solve a cone program with a caller-supplied solver implementation.
pub fn solve_cone_program_with(
    prog: &ConeProgram,
    settings: &SolveSettings,
    solver: &dyn ConeSolver,
) -> Result<ConeSolution> {
    settings.validate()?;
    let start = Instant::now();
    let (form, dual_map) = prog.lower();
    if form.layout.total_dim() == 0 {
        return Err(Error::InvalidArgument(
            "program has no inequality or cone rows; the interior-point method needs at least one"
                .into(),
        ));
    }
    let raw = solver.solve_standard_form(&form, settings)?;
    let row_duals = dual_map.fold(&form.layout, &raw.eq_duals, &raw.cone_duals);
    Ok(ConeSolution {
        status: raw.status,
        x: raw.x,
        row_duals,
        primal_objective: raw.primal_objective + prog.cost_constant,
        dual_objective: raw.dual_objective + prog.cost_constant,
        iterations: raw.iterations,
        wall_time: start.elapsed(),
    })
}

/// Multipliers of the lifted instance constraints plus the assembled dual
/// certificate matrix `Λ = η·I + A₀ + Σ_{k∈B} τ_k·A_k`, where `B` holds all
/// equalities and the inequalities with `|τ_k| >` [`DUAL_TOL`].
///
/// Sign convention: the Lagrangian is `objective + Σ τ_k·(lifted row k)`, so
/// inequality multipliers come out nonnegative.
pub fn extract_duals(
    sol: &ConeSolution,
    model: &RelaxationModel<'_>,
) -> Result<(BTreeMap<ConIndex, f64>, DMatrix<f64>)> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::SolverFailure {
            status: sol.status.to_string(),
            detail: "dual extraction requires an optimal solution".into(),
        });
    }
    let inst = model.instance;
    let ne = model.num_eq_rows();
    let ni = model.num_ineq_rows();
    let mut tau = BTreeMap::new();
    for k in 0..ne {
        tau.insert(ConIndex::Eq(k), sol.row_duals[k]);
    }
    for k in 0..ni {
        tau.insert(ConIndex::Ineq(k), sol.row_duals[ne + k]);
    }

    let n = inst.n;
    let mut lambda = DMatrix::<f64>::identity(n, n) * model.eta;
    inst.objective.a.add_scaled_to_dense(&mut lambda, 1.0);
    for (idx, &t) in &tau {
        let binding = match idx {
            ConIndex::Eq(_) => true,
            ConIndex::Ineq(_) => t.abs() > DUAL_TOL,
        };
        if binding {
            inst.constraint(*idx).a.add_scaled_to_dense(&mut lambda, t);
        }
    }
    Ok((tau, lambda))
}
