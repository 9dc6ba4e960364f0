//! Analysis quantities for penalized relaxations.
//!
//! Everything here is a pure function of an instance and a candidate anchor
//! point: distance-to-feasibility estimates, quasi-binding constraint sets,
//! constraint-qualification singular values, pencil-norm bounds, certified
//! penalty-weight thresholds, diagonal-dominance exactness certificates, and
//! KKT residuals for the original nonconvex problem.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::cone::{encode_cone_program, solve_cone_program, SolveSettings, SolveStatus};
use crate::error::{Error, Result};
use crate::local::{self, LocalOptions, PROJECTION_TOL};
use crate::qcqp::{ConIndex, QcqpInstance, QuadForm};
use crate::relax::{build_parabolic_model, select_pairs, PairPolicy};

/// Inequalities whose expanded value is at least `-BINDING_TOL` are treated
/// as (quasi-)binding.
pub const BINDING_TOL: f64 = 1e-8;

/// Safety inflation applied to certified penalty thresholds, absorbing their
/// strict inequalities and floating-point slack.
pub const THRESHOLD_INFLATION: f64 = 1.05;

/// Which matrix norm a pencil bound accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PencilNormKind {
    /// Induced 1-norm (maximum absolute column sum).
    InducedOne,
    /// Spectral norm (largest singular value).
    Spectral,
}

/// Constraints treated as binding at an anchor, together with the expansion
/// radius used to form the set.
#[derive(Debug, Clone)]
pub struct BindingSet {
    /// Member indices: every equality, then qualifying inequalities, in
    /// instance order.
    pub indices: Vec<ConIndex>,
    /// The distance value the expansion used.
    pub d: f64,
    /// Expanded constraint values for the members.
    pub expanded: BTreeMap<ConIndex, f64>,
}

impl BindingSet {
    pub fn contains(&self, k: ConIndex) -> bool {
        self.indices.contains(&k)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Diagonal-dominance certificate for uniqueness/exactness of a penalized
/// solve.
#[derive(Debug, Clone)]
pub struct ExactnessCertificate {
    /// `η·I + A₀ + Σ_{k∈B} τ_k A_k`.
    pub lambda: DMatrix<f64>,
    /// `min_i (Λ_ii − Σ_{j≠i} |Λ_ij|)`.
    pub diag_dominance_margin: f64,
    /// True exactly when the margin is nonnegative.
    pub holds: bool,
}

/// Full analysis of an anchor point against an instance.
#[derive(Debug, Clone)]
pub struct TheoryReport {
    /// Upper bound on the pencil norm in the induced 1-norm.
    pub rho1_ub: f64,
    /// Upper bound on the pencil norm in the spectral norm.
    pub rho2_ub: f64,
    /// Upper bound on the distance from the anchor to the feasible set;
    /// infinite when local search could not reach feasibility.
    pub d_upper: f64,
    /// Quasi-binding constraints at the anchor, expanded by `d_upper`.
    pub binding: BindingSet,
    /// Smallest singular value of the binding Jacobian (or 0 past the
    /// row-budget case split).
    pub s_value: f64,
    /// Certified penalty threshold for feasible anchors, when applicable.
    pub eta_thm1: Option<f64>,
    /// Certified penalty threshold for near-feasible anchors, when
    /// applicable.
    pub eta_thm2: Option<f64>,
    /// Whether the binding Jacobian has full row rank.
    pub glicq_ok: bool,
    /// Precondition slack for the near-feasible threshold:
    /// `s − 2(ρ₁+ρ₂)·d_upper`.
    pub margin: f64,
    /// Human-readable caveats (distance unavailable, row-budget overflow…).
    pub notes: Vec<String>,
}

/// Upper bound on the distance from `y_check` to the feasible set, along
/// with the feasible witness found. Runs local projection first; when that
/// stalls, solves the penalized relaxation (with a pure-distance objective
/// and penalty weight `eta_probe`) and retries restoration from its
/// solution.
pub fn feasibility_distance_upper(
    inst: &QcqpInstance,
    y_check: &DMatrix<f64>,
    eta_probe: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if eta_probe <= 0.0 || eta_probe.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "distance probe penalty must be positive, got {eta_probe}"
        )));
    }
    let expanded = inst.with_bounds_as_rows();
    let opts = LocalOptions::default();
    match local::project_to_feasible(&expanded, y_check, &opts) {
        Ok(hit) => Ok(hit),
        Err(_) => {
            // Fall back to the relaxation: minimize the penalty alone around
            // the anchor and restore from the relaxed solution.
            let probe = QcqpInstance::new(
                inst.n,
                inst.m,
                QuadForm::linear(crate::mat::RectMatrix::zeros(inst.n, inst.m), 0.0),
                expanded.equalities.clone(),
                expanded.inequalities.clone(),
                None,
            )?;
            let pairs = select_pairs(&probe, PairPolicy::default_for_dim(probe.n));
            let model = build_parabolic_model(&probe, &pairs, Some(y_check.clone()), eta_probe)?;
            let prog = encode_cone_program(&model)?;
            let sol = solve_cone_program(&prog, &SolveSettings::default())?;
            if sol.status != SolveStatus::Optimal {
                return Err(Error::DistanceUnavailable(format!(
                    "distance probe solve ended with status {}",
                    sol.status
                )));
            }
            let seed = model.unpack(&sol.x).y;
            local::project_seeded(&expanded, y_check, &seed, &opts)
        }
    }
}

/// The expanded constraint value
/// `q_k(Y̌) + ‖∇q_k(Y̌)‖_F·d + ‖A_k‖₂·d²`, nondecreasing in `d`.
pub fn expanded_q(inst: &QcqpInstance, k: ConIndex, y_check: &DMatrix<f64>, d: f64) -> f64 {
    let q = inst.constraint(k);
    let base = q.eval(y_check);
    let grad_norm = q.grad(y_check).norm();
    let a_norm = q.a.norm_2_spectral();
    // Written so an infinite d with a zero coefficient contributes nothing
    // rather than NaN.
    let linear = if grad_norm == 0.0 { 0.0 } else { grad_norm * d };
    let quad = if a_norm == 0.0 { 0.0 } else { a_norm * d * d };
    base + linear + quad
}

/// Every equality plus each inequality whose expanded value at distance `d`
/// reaches `-BINDING_TOL`.
pub fn quasi_binding_set(inst: &QcqpInstance, y_check: &DMatrix<f64>, d: f64) -> BindingSet {
    let mut indices = Vec::new();
    let mut expanded = BTreeMap::new();
    for k in inst.constraint_indices() {
        let value = expanded_q(inst, k, y_check, d);
        let member = match k {
            ConIndex::Eq(_) => true,
            ConIndex::Ineq(_) => value >= -BINDING_TOL,
        };
        if member {
            indices.push(k);
            expanded.insert(k, value);
        }
    }
    BindingSet { indices, d, expanded }
}

/// Constraint-gradient Jacobian: row `r` is the column-major vectorization
/// of `∇q_{indices[r]}(Y̌) = 2(A Y̌ + B)`.
pub fn jacobian(inst: &QcqpInstance, indices: &[ConIndex], y_check: &DMatrix<f64>) -> DMatrix<f64> {
    let nm = inst.n * inst.m;
    let mut jac = DMatrix::zeros(indices.len(), nm);
    for (r, &k) in indices.iter().enumerate() {
        let g = inst.constraint(k).grad(y_check);
        for (c, v) in g.as_slice().iter().enumerate() {
            jac[(r, c)] = *v;
        }
    }
    jac
}

/// Smallest singular value of the quasi-binding Jacobian when the set fits
/// in the row budget `n`; zero otherwise. An empty set has no rank
/// obstruction and yields infinity.
pub fn singularity(inst: &QcqpInstance, y_check: &DMatrix<f64>, d: f64) -> f64 {
    let binding = quasi_binding_set(inst, y_check, d);
    singularity_of(inst, &binding, y_check)
}

/// [`singularity`] against an already-formed binding set.
pub fn singularity_of(inst: &QcqpInstance, binding: &BindingSet, y_check: &DMatrix<f64>) -> f64 {
    if binding.is_empty() {
        return f64::INFINITY;
    }
    if binding.len() > inst.n {
        return 0.0;
    }
    let jac = jacobian(inst, &binding.indices, y_check);
    jac.svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Sum of constraint-matrix norms: an upper bound on the worst-case norm of
/// any unit-coefficient combination `Σ τ_k A_k`.
pub fn pencil_norm_upper(inst: &QcqpInstance, which: PencilNormKind) -> f64 {
    inst.equalities
        .iter()
        .chain(inst.inequalities.iter())
        .map(|q| match which {
            PencilNormKind::InducedOne => q.a.norm_1_induced(),
            PencilNormKind::Spectral => q.a.norm_2_spectral(),
        })
        .sum()
}

/// Certified penalty thresholds from a partially-filled report (pencil
/// bounds, distance, singularity, and binding set must be present).
///
/// The first threshold applies to feasible anchors with a nondegenerate
/// binding Jacobian; the second to near-feasible anchors whose margin
/// `s − 2(ρ₁+ρ₂)d` is positive. Both are inflated by 5% to absorb their
/// strict inequalities; either is `None` when its hypotheses fail.
pub fn eta_thresholds(
    inst: &QcqpInstance,
    y_check: &DMatrix<f64>,
    report: &TheoryReport,
) -> (Option<f64>, Option<f64>) {
    let a0_1 = inst.objective.a.norm_1_induced();
    let a0_2 = inst.objective.a.norm_2_spectral();
    let g0 = inst.objective.grad(y_check).norm();
    let (rho1, rho2) = (report.rho1_ub, report.rho2_ub);
    let s = report.s_value;
    let d = report.d_upper;

    // Non-binding inequalities, shared by both threshold families.
    let outside: Vec<ConIndex> = (0..inst.inequalities.len())
        .map(ConIndex::Ineq)
        .filter(|k| !report.binding.contains(*k))
        .collect();

    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };

    let thm1 = if d <= PROJECTION_TOL && s > 0.0 {
        let base = a0_1 + a0_2 + ratio(2.0 * (2.0 * rho1 + rho2) * g0, s);
        let mut eta = base;
        let mut ok = true;
        for &k in &outside {
            let q = inst.constraint(k);
            let qv = q.eval(y_check).abs();
            if qv <= 0.0 {
                ok = false;
                break;
            }
            let ak2 = q.a.norm_2_spectral();
            let gk = q.grad(y_check).norm();
            eta = eta.max(a0_2 + g0 * ((ak2 / qv).sqrt() + gk / qv));
        }
        if ok && eta.is_finite() {
            Some(eta * THRESHOLD_INFLATION)
        } else {
            None
        }
    } else {
        None
    };

    let thm2 = if report.margin > 0.0 && d.is_finite() {
        let numer =
            2.0 * rho1 * a0_1 * d + 2.0 * (2.0 * rho1 + rho2) * (g0 + a0_2 * d);
        let base = a0_1 + a0_2 + ratio(numer, report.margin);
        let mut eta = base;
        let mut ok = true;
        for &k in &outside {
            let q = inst.constraint(k);
            let qt = expanded_q(inst, k, y_check, d).abs();
            if qt <= 0.0 {
                ok = false;
                break;
            }
            let ak2 = q.a.norm_2_spectral();
            let gk = q.grad(y_check).norm();
            eta = eta.max(a0_2 + (g0 + a0_2 * d) * ((ak2 / qt).sqrt() + (gk + 2.0 * ak2 * d) / qt));
        }
        if ok && eta.is_finite() {
            Some(eta * THRESHOLD_INFLATION)
        } else {
            None
        }
    } else {
        None
    };

    (thm1, thm2)
}

/// Builds `Λ = η·I + A₀ + Σ_{k∈B} τ_k A_k` and tests diagonal dominance.
/// A nonnegative margin certifies that the penalized relaxation solution is
/// unique and rank-tight.
pub fn exactness_certificate(
    inst: &QcqpInstance,
    tau: &BTreeMap<ConIndex, f64>,
    eta: f64,
    binding: &BindingSet,
) -> ExactnessCertificate {
    let n = inst.n;
    let mut lambda = DMatrix::identity(n, n) * eta;
    inst.objective.a.add_scaled_to_dense(&mut lambda, 1.0);
    for &k in &binding.indices {
        let t = tau.get(&k).copied().unwrap_or(0.0);
        inst.constraint(k).a.add_scaled_to_dense(&mut lambda, t);
    }
    let mut margin = f64::INFINITY;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| lambda[(i, j)].abs()).sum();
        margin = margin.min(lambda[(i, i)] - off);
    }
    ExactnessCertificate {
        lambda,
        diag_dominance_margin: margin,
        holds: margin >= 0.0,
    }
}

/// Worst violation of the original problem's first-order optimality system
/// at `(y, tau)`: stationarity, binding-constraint values, multiplier signs,
/// and non-binding inequality feasibility.
pub fn kkt_residual(
    inst: &QcqpInstance,
    y: &DMatrix<f64>,
    tau: &BTreeMap<ConIndex, f64>,
    binding: &BindingSet,
) -> f64 {
    // Stationarity: (A₀ + Σ τ_k A_k)·Y + B₀ + Σ τ_k B_k over the binding set.
    let mut grad = inst.objective.a.matvec(y);
    inst.objective.b.add_scaled_to_dense(&mut grad, 1.0);
    for &k in &binding.indices {
        let t = tau.get(&k).copied().unwrap_or(0.0);
        let q = inst.constraint(k);
        grad += q.a.matvec(y) * t;
        q.b.add_scaled_to_dense(&mut grad, t);
    }
    let mut worst = grad.norm();

    for &k in &binding.indices {
        worst = worst.max(inst.constraint(k).eval(y).abs());
        if matches!(k, ConIndex::Ineq(_)) {
            let t = tau.get(&k).copied().unwrap_or(0.0);
            worst = worst.max((-t).max(0.0));
        }
    }
    for k in (0..inst.inequalities.len()).map(ConIndex::Ineq) {
        if !binding.contains(k) {
            worst = worst.max(inst.constraint(k).eval(y).max(0.0));
        }
    }
    worst
}

/// Runs the full analysis pipeline at an anchor. A failed distance search is
/// not an error: the report then carries an infinite distance, an empty
/// margin, and no thresholds, plus an explanatory note.
pub fn analyze(inst: &QcqpInstance, y_check: &DMatrix<f64>, eta_probe: f64) -> Result<TheoryReport> {
    if y_check.nrows() != inst.n || y_check.ncols() != inst.m {
        return Err(Error::DimensionMismatch(format!(
            "anchor is {}×{}, instance variable is {}×{}",
            y_check.nrows(),
            y_check.ncols(),
            inst.n,
            inst.m
        )));
    }
    let rho1_ub = pencil_norm_upper(inst, PencilNormKind::InducedOne);
    let rho2_ub = pencil_norm_upper(inst, PencilNormKind::Spectral);
    let mut notes = Vec::new();
    let d_upper = match feasibility_distance_upper(inst, y_check, eta_probe) {
        Ok((d, _)) => d,
        Err(e) => {
            notes.push(format!("distance upper bound unavailable: {e}"));
            f64::INFINITY
        }
    };
    let binding = quasi_binding_set(inst, y_check, d_upper);
    let s_value = singularity_of(inst, &binding, y_check);
    let glicq_ok = s_value > 0.0;
    if binding.len() > inst.n && binding.len() <= inst.n * inst.m {
        notes.push(format!(
            "binding set has {} members: over the {}-row budget that the \
             singularity case split allows, though the {}-column Jacobian \
             could still have full row rank",
            binding.len(),
            inst.n,
            inst.n * inst.m
        ));
    }
    let margin = if d_upper.is_finite() {
        s_value - 2.0 * (rho1_ub + rho2_ub) * d_upper
    } else if rho1_ub + rho2_ub == 0.0 {
        s_value
    } else {
        f64::NEG_INFINITY
    };
    let mut report = TheoryReport {
        rho1_ub,
        rho2_ub,
        d_upper,
        binding,
        s_value,
        eta_thm1: None,
        eta_thm2: None,
        glicq_ok,
        margin,
        notes,
    };
    let (thm1, thm2) = eta_thresholds(inst, y_check, &report);
    report.eta_thm1 = thm1;
    report.eta_thm2 = thm2;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::extract_duals;
    use crate::mat::{RectMatrix, SymMatrix};
    use crate::qcqp::LiftedPoint;
    use crate::synth::{random_feasible_instance, SynthOptions};
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `min 2y₁ s.t. ‖y‖² = 1`, analyzed at the feasible anchor `(0, 1)`.
    ///
    /// By hand: ρ₁ = ρ₂ = 1, d = 0, the binding Jacobian is `(0, 2)` so
    /// s = 2, and both thresholds come out to
    /// `0 + 0 + 2·(2·1 + 1)·2 / 2 = 6`, inflated to 6.3.
    fn hand_instance() -> (QcqpInstance, DMatrix<f64>) {
        let objective = QuadForm::linear(
            RectMatrix::from_dense(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])),
            0.0,
        );
        let circle = QuadForm::new(
            SymMatrix::from_dense(DMatrix::identity(2, 2)).unwrap(),
            RectMatrix::zeros(2, 1),
            -1.0,
        )
        .unwrap();
        let inst = QcqpInstance::new(2, 1, objective, vec![circle], vec![], None).unwrap();
        let anchor = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        (inst, anchor)
    }

    fn dense_spectral(a: &DMatrix<f64>) -> f64 {
        SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    fn solve_penalized(
        inst: &QcqpInstance,
        anchor: &DMatrix<f64>,
        eta: f64,
    ) -> Option<(LiftedPoint, BTreeMap<ConIndex, f64>)> {
        let pairs = select_pairs(inst, PairPolicy::Full);
        let model = build_parabolic_model(inst, &pairs, Some(anchor.clone()), eta).unwrap();
        let prog = encode_cone_program(&model).unwrap();
        let sol = solve_cone_program(&prog, &SolveSettings::default()).ok()?;
        if sol.status != SolveStatus::Optimal {
            return None;
        }
        let point = model.unpack(&sol.x);
        let (duals, _) = extract_duals(&sol, &model).ok()?;
        Some((point, duals))
    }

    struct SolvedCase {
        inst: QcqpInstance,
        anchor: DMatrix<f64>,
        eta: f64,
        point: LiftedPoint,
        duals: BTreeMap<ConIndex, f64>,
        d_upper: f64,
    }

    /// Penalized solves at certified weights over jittered near-feasible
    /// anchors; only optimally-solved cases are returned.
    fn solved_corpus(seed: u64, want: usize) -> Vec<SolvedCase> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for trial in 0..(want * 4) {
            if out.len() >= want {
                break;
            }
            let opts = SynthOptions {
                n: 2 + trial % 3,
                m: 1,
                num_eq: 1,
                num_ineq: 1,
                ..SynthOptions::default()
            };
            let (inst, witness) = random_feasible_instance(&opts, &mut rng);
            let jitter =
                DMatrix::from_fn(inst.n, inst.m, |_, _| rng.random_range(-0.05..0.05));
            let anchor = &witness + jitter;
            let report = analyze(&inst, &anchor, 1.0).unwrap();
            let Some(eta) = report.eta_thm2.or(report.eta_thm1) else {
                continue;
            };
            if !(eta.is_finite() && eta < 1e6) {
                continue;
            }
            let Some((point, duals)) = solve_penalized(&inst, &anchor, eta) else {
                continue;
            };
            out.push(SolvedCase {
                inst,
                anchor,
                eta,
                point,
                duals,
                d_upper: report.d_upper,
            });
        }
        assert!(
            out.len() >= want,
            "only {} of {want} corpus cases reached a certified optimal solve",
            out.len()
        );
        out
    }

    #[test]
    fn hand_computed_thresholds_match() {
        let (inst, anchor) = hand_instance();
        let report = analyze(&inst, &anchor, 1.0).unwrap();
        assert!((report.rho1_ub - 1.0).abs() < 1e-12);
        assert!((report.rho2_ub - 1.0).abs() < 1e-12);
        assert!(report.d_upper <= 1e-9, "d = {}", report.d_upper);
        assert_eq!(report.binding.indices, vec![ConIndex::Eq(0)]);
        assert!((report.s_value - 2.0).abs() < 1e-9, "s = {}", report.s_value);
        assert!(report.glicq_ok);
        assert!((report.margin - 2.0).abs() < 1e-6);
        let thm1 = report.eta_thm1.expect("feasible anchor threshold");
        let thm2 = report.eta_thm2.expect("near-feasible threshold");
        assert!((thm1 - 6.3).abs() < 1e-6, "thm1 = {thm1}");
        assert!((thm2 - 6.3).abs() < 1e-6, "thm2 = {thm2}");
        assert!(report.notes.is_empty(), "notes: {:?}", report.notes);
    }

    #[test]
    fn hand_instance_threshold_is_effective() {
        let (inst, anchor) = hand_instance();
        let (point, _) = solve_penalized(&inst, &anchor, 6.3).expect("optimal solve");
        assert!(point.rank_gap() < 1e-7, "rank gap {}", point.rank_gap());
        assert!(inst.feasibility_residual(&point.y) < 1e-6);
        // On the circle the penalized objective is 2y₁ − 12.6y₂ + const, so
        // the optimum is −(2, −12.6)/‖(2, 12.6)‖.
        let scale = (2.0f64 * 2.0 + 12.6 * 12.6).sqrt();
        let expect = DMatrix::from_column_slice(2, 1, &[-2.0 / scale, 12.6 / scale]);
        assert!(
            (&point.y - &expect).norm() < 1e-5,
            "solution {:?} vs expected {:?}",
            point.y.as_slice(),
            expect.as_slice()
        );
        // Objective does not increase relative to the anchor value 0.
        assert!(inst.objective.eval(&point.y) <= 1e-8);
    }

    #[test]
    fn zero_objective_threshold_is_zero() {
        let (inst, anchor) = hand_instance();
        let free = QcqpInstance::new(
            2,
            1,
            QuadForm::linear(RectMatrix::zeros(2, 1), 0.0),
            inst.equalities.clone(),
            vec![],
            None,
        )
        .unwrap();
        let report = analyze(&free, &anchor, 1.0).unwrap();
        assert_eq!(report.eta_thm1, Some(0.0));
        assert_eq!(report.eta_thm2, Some(0.0));
    }

    #[test]
    fn expanded_value_is_exact_at_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let opts = SynthOptions {
                n: 3,
                m: 2,
                num_eq: 1,
                num_ineq: 2,
                ..SynthOptions::default()
            };
            let (inst, _) = random_feasible_instance(&opts, &mut rng);
            let y = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            for k in inst.constraint_indices() {
                let expanded = expanded_q(&inst, k, &y, 0.0);
                let exact = inst.constraint(k).eval(&y);
                assert!((expanded - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expanded_value_matches_independent_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..30 {
            let opts = SynthOptions {
                n: 4,
                m: 1,
                num_eq: 1,
                num_ineq: 1,
                ..SynthOptions::default()
            };
            let (inst, _) = random_feasible_instance(&opts, &mut rng);
            let y = DMatrix::from_fn(4, 1, |_, _| rng.random_range(-1.0..1.0));
            let d: f64 = rng.random_range(0.0..2.0);
            for k in inst.constraint_indices() {
                let q = inst.constraint(k);
                let a = q.a.to_dense();
                let grad = &a * &y * 2.0 + q.b.to_dense() * 2.0;
                let expect = q.eval(&y) + grad.norm() * d + dense_spectral(&a) * d * d;
                let got = expanded_q(&inst, k, &y, d);
                assert!(
                    (got - expect).abs() <= 1e-9 * (1.0 + expect.abs()),
                    "expanded {got} vs recomputed {expect}"
                );
            }
        }
    }

    #[test]
    fn expanded_value_handles_infinite_distance() {
        // A constant inequality stays finite; anything with a coefficient
        // blows up to +∞ rather than NaN.
        let constant = QuadForm::linear(RectMatrix::zeros(2, 1), -3.0);
        let linear = QuadForm::linear(
            RectMatrix::from_dense(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])),
            0.0,
        );
        let inst = QcqpInstance::new(
            2,
            1,
            QuadForm::linear(RectMatrix::zeros(2, 1), 0.0),
            vec![],
            vec![constant, linear],
            None,
        )
        .unwrap();
        let y = DMatrix::zeros(2, 1);
        let v0 = expanded_q(&inst, ConIndex::Ineq(0), &y, f64::INFINITY);
        let v1 = expanded_q(&inst, ConIndex::Ineq(1), &y, f64::INFINITY);
        assert_eq!(v0, -3.0);
        assert_eq!(v1, f64::INFINITY);
        // The constant row stays out of the binding set even at infinite
        // distance, so a hopeless instance keeps strictly-slack rows slack.
        let binding = quasi_binding_set(&inst, &y, f64::INFINITY);
        assert!(!binding.contains(ConIndex::Ineq(0)));
        assert!(binding.contains(ConIndex::Ineq(1)));
    }

    #[test]
    fn binding_set_grows_monotonically_with_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let opts = SynthOptions {
                n: 3,
                m: 1,
                num_eq: 1,
                num_ineq: 3,
                binding_fraction: 0.4,
                ..SynthOptions::default()
            };
            let (inst, witness) = random_feasible_instance(&opts, &mut rng);
            let mut previous: Option<Vec<ConIndex>> = None;
            for d in [0.0, 0.05, 0.2, 1.0, 5.0] {
                let b = quasi_binding_set(&inst, &witness, d);
                for k in 0..inst.equalities.len() {
                    assert!(b.contains(ConIndex::Eq(k)), "equality dropped at d={d}");
                }
                if let Some(prev) = &previous {
                    for k in prev {
                        assert!(b.contains(*k), "binding set shrank between distances");
                    }
                }
                previous = Some(b.indices);
            }
        }
    }

    #[test]
    fn binding_set_at_witness_is_slack_aware() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let opts = SynthOptions {
            n: 3,
            m: 1,
            num_eq: 1,
            num_ineq: 4,
            binding_fraction: 0.5,
            ..SynthOptions::default()
        };
        let (inst, witness) = random_feasible_instance(&opts, &mut rng);
        let b = quasi_binding_set(&inst, &witness, 0.0);
        for (k, q) in inst.inequalities.iter().enumerate() {
            let active = q.eval(&witness) >= -BINDING_TOL;
            assert_eq!(b.contains(ConIndex::Ineq(k)), active);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..20 {
            let opts = SynthOptions {
                n: 3,
                m: 2,
                num_eq: 2,
                num_ineq: 1,
                ..SynthOptions::default()
            };
            let (inst, _) = random_feasible_instance(&opts, &mut rng);
            let y = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            let indices = inst.constraint_indices();
            let jac = jacobian(&inst, &indices, &y);
            let eps = 1e-5;
            for (row, &k) in indices.iter().enumerate() {
                let q = inst.constraint(k);
                for col in 0..6 {
                    let mut plus = y.clone();
                    let mut minus = y.clone();
                    plus.as_mut_slice()[col] += eps;
                    minus.as_mut_slice()[col] -= eps;
                    let fd = (q.eval(&plus) - q.eval(&minus)) / (2.0 * eps);
                    assert!(
                        (jac[(row, col)] - fd).abs() < 1e-6,
                        "row {row} col {col}: analytic {} vs fd {fd}",
                        jac[(row, col)]
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_of_linear_rows_is_constant() {
        let lin = QuadForm::linear(
            RectMatrix::from_dense(DMatrix::from_column_slice(2, 1, &[0.5, -1.5])),
            2.0,
        );
        let inst = QcqpInstance::new(
            2,
            1,
            QuadForm::linear(RectMatrix::zeros(2, 1), 0.0),
            vec![lin],
            vec![],
            None,
        )
        .unwrap();
        let a = jacobian(&inst, &[ConIndex::Eq(0)], &DMatrix::zeros(2, 1));
        let b = jacobian(
            &inst,
            &[ConIndex::Eq(0)],
            &DMatrix::from_column_slice(2, 1, &[7.0, -3.0]),
        );
        assert_eq!(a, b);
        assert!((a[(0, 0)] - 1.0).abs() < 1e-15 && (a[(0, 1)] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn singularity_covers_rank_budget_and_duplicates() {
        let (inst, _) = hand_instance();
        // Sphere gradient at e₁ is (2, 0): smallest singular value 2.
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!((singularity(&inst, &e1, 0.0) - 2.0).abs() < 1e-12);

        // Duplicating the constraint makes the Jacobian rank-deficient.
        let dup = QcqpInstance::new(
            2,
            1,
            inst.objective.clone(),
            vec![inst.equalities[0].clone(), inst.equalities[0].clone()],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(singularity(&dup, &e1, 0.0), 0.0);

        // Three equalities in two variables exceed the row budget.
        let third = QuadForm::linear(
            RectMatrix::from_dense(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])),
            0.0,
        );
        let over = QcqpInstance::new(
            2,
            1,
            inst.objective.clone(),
            vec![
                inst.equalities[0].clone(),
                third.clone(),
                QuadForm::linear(
                    RectMatrix::from_dense(DMatrix::from_column_slice(2, 1, &[1.0, 1.0])),
                    0.0,
                ),
            ],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(singularity(&over, &e1, 0.0), 0.0);

        // No constraints at all: nothing can lose rank.
        let free = QcqpInstance::new(2, 1, inst.objective.clone(), vec![], vec![], None).unwrap();
        assert_eq!(singularity(&free, &e1, 0.0), f64::INFINITY);
    }

    #[test]
    fn pencil_bound_dominates_unit_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let opts = SynthOptions {
            n: 4,
            m: 1,
            num_eq: 2,
            num_ineq: 3,
            ..SynthOptions::default()
        };
        let (inst, _) = random_feasible_instance(&opts, &mut rng);
        let rho1 = pencil_norm_upper(&inst, PencilNormKind::InducedOne);
        let rho2 = pencil_norm_upper(&inst, PencilNormKind::Spectral);
        assert!(rho1 > 0.0 && rho2 > 0.0 && rho2 <= rho1 + 1e-12);
        for _ in 0..200 {
            let mut pencil = DMatrix::zeros(4, 4);
            for k in inst.constraint_indices() {
                let t: f64 = rng.random_range(-1.0..1.0);
                inst.constraint(k).a.add_scaled_to_dense(&mut pencil, t);
            }
            let one_norm = (0..4)
                .map(|j| (0..4).map(|i| pencil[(i, j)].abs()).sum::<f64>())
                .fold(0.0_f64, f64::max);
            assert!(one_norm <= rho1 + 1e-10);
            assert!(dense_spectral(&pencil) <= rho2 + 1e-10);
        }
    }

    #[test]
    fn feasible_threshold_forces_rank_tightness() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut applicable = 0;
        for trial in 0..15 {
            let opts = SynthOptions {
                n: 2 + trial % 3,
                m: 1,
                num_eq: 1,
                num_ineq: 1,
                ..SynthOptions::default()
            };
            let (inst, witness) = random_feasible_instance(&opts, &mut rng);
            let report = analyze(&inst, &witness, 1.0).unwrap();
            let Some(eta) = report.eta_thm1 else { continue };
            if !(eta.is_finite() && eta < 1e6) {
                continue;
            }
            let Some((point, _)) = solve_penalized(&inst, &witness, eta) else {
                continue;
            };
            applicable += 1;
            assert!(
                point.rank_gap() < 1e-7,
                "trial {trial}: rank gap {} at eta {eta}",
                point.rank_gap()
            );
            assert!(
                inst.feasibility_residual(&point.y) < 1e-6,
                "trial {trial}: solution infeasible by {}",
                inst.feasibility_residual(&point.y)
            );
            let before = inst.objective.eval(&witness);
            let after = inst.objective.eval(&point.y);
            assert!(
                after <= before + 1e-7 * (1.0 + before.abs()),
                "trial {trial}: objective rose from {before} to {after}"
            );
        }
        assert!(applicable >= 8, "only {applicable} of 15 trials were applicable");
    }

    #[test]
    fn near_feasible_threshold_forces_rank_tightness() {
        for case in solved_corpus(48, 12) {
            assert!(
                case.point.rank_gap() < 1e-6,
                "rank gap {} at eta {}",
                case.point.rank_gap(),
                case.eta
            );
            assert!(case.inst.feasibility_residual(&case.point.y) < 1e-6);
        }
    }

    #[test]
    fn penalized_distance_envelope_holds() {
        let mut checked = 0;
        for case in solved_corpus(49, 12) {
            let a0_2 = case.inst.objective.a.norm_2_spectral();
            if case.eta <= a0_2 || case.point.rank_gap() >= 1e-6 {
                continue;
            }
            let step = (&case.point.y - &case.anchor).norm();
            let d_hat = case.d_upper.min(step);
            let excess = step - d_hat;
            let cap =
                (a0_2 * d_hat + case.inst.objective.grad(&case.anchor).norm())
                    / (case.eta - a0_2);
            assert!(excess >= -1e-9, "step {step} fell below the distance {d_hat}");
            assert!(
                excess <= cap + 1e-6,
                "excess {excess} exceeds envelope {cap} at eta {}",
                case.eta
            );
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} envelope cases were checkable");
    }

    #[test]
    fn multiplier_norm_envelope_holds() {
        let mut checked = 0;
        for case in solved_corpus(50, 12) {
            if case.point.rank_gap() >= 1e-6 {
                continue;
            }
            let binding = quasi_binding_set(&case.inst, &case.point.y, 0.0);
            let s_star = singularity_of(&case.inst, &binding, &case.point.y);
            if !(s_star > 1e-3 && s_star.is_finite()) {
                continue;
            }
            let tau_norm = binding
                .indices
                .iter()
                .map(|k| case.duals.get(k).copied().unwrap_or(0.0).powi(2))
                .sum::<f64>()
                .sqrt();
            let lhs = tau_norm / case.eta;
            let rhs = (2.0 * (&case.point.y - &case.anchor).norm()
                + case.inst.objective.grad(&case.point.y).norm() / case.eta)
                / s_star;
            assert!(
                lhs <= rhs + 1e-4,
                "multiplier norm {lhs} exceeds envelope {rhs} (s* = {s_star})"
            );
            checked += 1;
        }
        assert!(checked >= 8, "only {checked} multiplier cases were checkable");
    }

    #[test]
    fn nonnegative_certificate_margin_implies_rank_tightness() {
        let mut held = 0;
        for case in solved_corpus(51, 12) {
            let binding = quasi_binding_set(&case.inst, &case.point.y, 0.0);
            let cert = exactness_certificate(&case.inst, &case.duals, case.eta, &binding);
            assert_eq!(cert.holds, cert.diag_dominance_margin >= 0.0);
            if cert.holds {
                held += 1;
                assert!(
                    case.point.rank_gap() < 1e-6,
                    "certificate held but rank gap is {}",
                    case.point.rank_gap()
                );
            }
        }
        // The hand instance gives a deterministic positive example.
        let (inst, anchor) = hand_instance();
        let (point, duals) = solve_penalized(&inst, &anchor, 6.3).unwrap();
        let binding = quasi_binding_set(&inst, &point.y, 0.0);
        let cert = exactness_certificate(&inst, &duals, 6.3, &binding);
        assert!(
            cert.holds,
            "hand-instance certificate should hold, margin {}",
            cert.diag_dominance_margin
        );
        assert!(point.rank_gap() < 1e-7);
        assert!(held <= 12);
    }

    #[test]
    fn certificate_margin_matches_hand_arithmetic() {
        // Λ = η·I + A₀ with η = 2 and A₀ = [[0, -3], [-3, 0]] gives rows
        // 2 - 3 = -1: dominance fails by exactly 1.
        let a0 = SymMatrix::from_triplets(2, &[(0, 1, -3.0)]).unwrap();
        let inst = QcqpInstance::new(
            2,
            1,
            QuadForm::new(a0, RectMatrix::zeros(2, 1), 0.0).unwrap(),
            vec![],
            vec![],
            None,
        )
        .unwrap();
        let binding = quasi_binding_set(&inst, &DMatrix::zeros(2, 1), 0.0);
        let cert = exactness_certificate(&inst, &BTreeMap::new(), 2.0, &binding);
        assert!((cert.diag_dominance_margin + 1.0).abs() < 1e-12);
        assert!(!cert.holds);
        assert_eq!(cert.lambda[(0, 1)], -3.0);

        let pass = exactness_certificate(&inst, &BTreeMap::new(), 3.0, &binding);
        assert!(pass.holds && pass.diag_dominance_margin.abs() < 1e-12);
    }

    #[test]
    fn kkt_residual_vanishes_at_stationary_points() {
        // min y s.t. y² = 1 at y = -1 with multiplier 1/2.
        let obj = QuadForm::linear(
            RectMatrix::from_dense(DMatrix::from_column_slice(1, 1, &[0.5])),
            0.0,
        );
        let circle = QuadForm::new(
            SymMatrix::from_dense(DMatrix::identity(1, 1)).unwrap(),
            RectMatrix::zeros(1, 1),
            -1.0,
        )
        .unwrap();
        let inst = QcqpInstance::new(1, 1, obj, vec![circle], vec![], None).unwrap();
        let y = DMatrix::from_column_slice(1, 1, &[-1.0]);
        let binding = quasi_binding_set(&inst, &y, 0.0);
        let mut tau = BTreeMap::new();
        tau.insert(ConIndex::Eq(0), 0.5);
        assert!(kkt_residual(&inst, &y, &tau, &binding) < 1e-12);

        // Off the optimizer the residual is visible.
        let off = DMatrix::from_column_slice(1, 1, &[-0.9]);
        let binding_off = quasi_binding_set(&inst, &off, 0.0);
        assert!(kkt_residual(&inst, &off, &tau, &binding_off) > 1e-2);
    }

    #[test]
    fn kkt_residual_flags_sign_and_interior_violations() {
        // min 0 s.t. y ≤ 0 (as 2·0.5·y ≤ 0), probed at y = 1 and with a
        // negative multiplier at y = 0.
        let ineq = QuadForm::linear(
            RectMatrix::from_dense(DMatrix::from_column_slice(1, 1, &[0.5])),
            0.0,
        );
        let inst = QcqpInstance::new(
            1,
            1,
            QuadForm::linear(RectMatrix::zeros(1, 1), 0.0),
            vec![],
            vec![ineq],
            None,
        )
        .unwrap();

        let origin = DMatrix::zeros(1, 1);
        let binding = quasi_binding_set(&inst, &origin, 0.0);
        assert!(binding.contains(ConIndex::Ineq(0)));
        let mut tau = BTreeMap::new();
        tau.insert(ConIndex::Ineq(0), -0.25);
        // Stationarity picks up τ·∇q = -0.25, and the sign violation is 0.25.
        let r = kkt_residual(&inst, &origin, &tau, &binding);
        assert!((r - 0.25).abs() < 1e-12, "residual {r}");

        // An interior probe that violates the inequality reports its value.
        let outside = DMatrix::from_column_slice(1, 1, &[2.0]);
        let empty = BindingSet {
            indices: vec![],
            d: 0.0,
            expanded: BTreeMap::new(),
        };
        let r2 = kkt_residual(&inst, &outside, &BTreeMap::new(), &empty);
        assert!((r2 - 2.0).abs() < 1e-12, "residual {r2}");
    }

    #[test]
    fn distance_of_feasible_anchor_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for trial in 0..10 {
            let opts = SynthOptions {
                n: 2 + trial % 3,
                m: 1,
                num_eq: 1,
                num_ineq: 2,
                ..SynthOptions::default()
            };
            let (inst, witness) = random_feasible_instance(&opts, &mut rng);
            let (d, y) = feasibility_distance_upper(&inst, &witness, 1.0).unwrap();
            assert!(d <= 1e-7, "trial {trial}: distance {d}");
            assert!(inst.feasibility_residual(&y) <= 1e-7);
        }
    }

    #[test]
    fn distance_to_sphere_is_radial() {
        let (inst, _) = hand_instance();
        let anchor = DMatrix::from_column_slice(2, 1, &[0.5, 0.0]);
        let (d, y) = feasibility_distance_upper(&inst, &anchor, 1.0).unwrap();
        assert!((d - 0.5).abs() < 1e-6, "distance {d}");
        assert!((y[(0, 0)] - 1.0).abs() < 1e-6 && y[(1, 0)].abs() < 1e-6);
    }

    #[test]
    fn distance_probe_rejects_nonpositive_penalty() {
        let (inst, anchor) = hand_instance();
        assert!(matches!(
            feasibility_distance_upper(&inst, &anchor, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            feasibility_distance_upper(&inst, &anchor, -1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn distance_upper_bound_is_sound_against_multistart() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let opts_local = LocalOptions::default();
        let mut tight = 0;
        let trials = 12;
        for trial in 0..trials {
            let opts = SynthOptions {
                n: 2 + trial % 3,
                m: 1,
                num_eq: 1,
                num_ineq: 1,
                ..SynthOptions::default()
            };
            let (inst, _) = random_feasible_instance(&opts, &mut rng);
            let anchor = DMatrix::from_fn(inst.n, 1, |_, _| rng.random_range(-1.5..1.5));
            let (d_upper, _) = feasibility_distance_upper(&inst, &anchor, 1.0)
                .expect("distance search should succeed on a feasible instance");
            let (oracle, _) = local::multistart_distance(
                &inst,
                &anchor,
                150,
                2.0,
                &mut rng,
                &opts_local,
            )
            .expect("multistart oracle should reach feasibility");
            assert!(
                d_upper >= oracle - 1e-6,
                "trial {trial}: upper bound {d_upper} undercuts oracle {oracle}"
            );
            if d_upper <= 1.1 * oracle + 1e-6 {
                tight += 1;
            }
        }
        assert!(
            tight * 10 >= trials * 9,
            "single-start distance was loose on {} of {trials} trials",
            trials - tight
        );
    }

    #[test]
    fn degenerate_anchor_reports_distance_unavailable() {
        // From the exact center of ‖y‖² = 1 every residual gradient vanishes,
        // so restoration stalls and the relaxation probe re-seeds at the same
        // ridge point.
        let (inst, _) = hand_instance();
        let center = DMatrix::zeros(2, 1);
        match feasibility_distance_upper(&inst, &center, 1.0) {
            Err(Error::DistanceUnavailable(_)) => {}
            other => panic!("expected a distance failure, got {other:?}"),
        }
    }

    #[test]
    fn analysis_degrades_gracefully_on_empty_feasible_set() {
        let ball = QuadForm::new(
            SymMatrix::from_dense(DMatrix::identity(2, 2)).unwrap(),
            RectMatrix::zeros(2, 1),
            1.0,
        )
        .unwrap();
        let inst = QcqpInstance::new(
            2,
            1,
            QuadForm::linear(
                RectMatrix::from_dense(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])),
                0.0,
            ),
            vec![],
            vec![ball],
            None,
        )
        .unwrap();
        let report = analyze(&inst, &DMatrix::zeros(2, 1), 1.0).unwrap();
        assert!(report.d_upper.is_infinite());
        assert!(report.binding.contains(ConIndex::Ineq(0)));
        assert_eq!(report.eta_thm1, None);
        assert_eq!(report.eta_thm2, None);
        assert_eq!(report.margin, f64::NEG_INFINITY);
        assert!(!report.notes.is_empty());
    }

    #[test]
    fn analysis_notes_row_budget_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let opts = SynthOptions {
            n: 2,
            m: 2,
            num_eq: 3,
            num_ineq: 0,
            ..SynthOptions::default()
        };
        let (inst, witness) = random_feasible_instance(&opts, &mut rng);
        let report = analyze(&inst, &witness, 1.0).unwrap();
        assert!(report.d_upper <= 1e-7);
        assert_eq!(report.binding.len(), 3);
        assert_eq!(report.s_value, 0.0);
        assert!(!report.glicq_ok);
        assert_eq!(report.eta_thm1, None);
        assert!(report.notes.iter().any(|n| n.contains("row budget")));
    }

    #[test]
    fn perturbation_envelope_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..300 {
            let opts = SynthOptions {
                n: 3,
                m: 2,
                num_eq: 1,
                num_ineq: 1,
                ..SynthOptions::default()
            };
            let (inst, _) = random_feasible_instance(&opts, &mut rng);
            let y2 = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-2.0..2.0));
            let delta = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            let y1 = &y2 + &delta;
            let dn = delta.norm();
            for k in inst.constraint_indices() {
                let q = inst.constraint(k);
                let a2 = q.a.norm_2_spectral();
                let value_jump = (q.eval(&y1) - q.eval(&y2)).abs();
                let value_cap = a2 * dn * dn + q.grad(&y2).norm() * dn;
                assert!(
                    value_jump <= value_cap + 1e-9 * (1.0 + value_cap),
                    "value jump {value_jump} exceeds envelope {value_cap}"
                );
                let grad_jump = (q.grad(&y1).norm() - q.grad(&y2).norm()).abs();
                let grad_cap = 2.0 * a2 * dn;
                assert!(
                    grad_jump <= grad_cap + 1e-9 * (1.0 + grad_cap),
                    "gradient jump {grad_jump} exceeds envelope {grad_cap}"
                );
            }
        }
    }
}
