//! Sequential penalized drivers.
//!
//! Each round solves the penalized relaxation anchored at the previous
//! iterate. The plain driver re-anchors directly; the accelerated driver
//! blends the previous anchor and solution with a per-round weight chosen by
//! a rule (constant, zero, or backtracking against the certified-threshold
//! conditions). Also here: automatic penalty-weight grid search and
//! percentage-gap arithmetic for reports.

use std::collections::BTreeMap;
use std::time::Duration;

use nalgebra::DMatrix;

use crate::cone::{
    encode_cone_program, extract_duals, solve_cone_program_with, ConeSolver, ReferenceIpm,
    SolveSettings, SolveStatus,
};
use crate::error::{Error, Result};
use crate::qcqp::{ConIndex, QcqpInstance};
use crate::relax::{build_parabolic_model, select_pairs, PairPolicy, RelaxationModel};
use crate::theory::{
    eta_thresholds, exactness_certificate, jacobian, pencil_norm_upper, quasi_binding_set,
    singularity_of, ExactnessCertificate, PencilNormKind, TheoryReport, THRESHOLD_INFLATION,
};

/// Rounds whose rank gap falls below this are treated as rank-tight.
pub const RANK_TIGHT_TOL: f64 = 1e-7;

/// Stopping rule for sequential runs.
#[derive(Clone, Debug)]
pub struct StopRule {
    /// Relative-descent threshold: stop at the first round where
    /// `(q₀(Y^(l−1)) − q₀(Y^(l))) / |q₀(Y^(l))|` does not exceed it.
    pub rel_tol: f64,
    /// Hard cap on the number of rounds.
    pub max_rounds: usize,
    /// Optional anchor-movement criterion `‖Y^(l) − Y^(l−1)‖_F ≤ step_tol`,
    /// for feasibility instances whose objective is identically zero and
    /// whose relative descent is therefore undefined.
    pub step_tol: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            rel_tol: 1e-4,
            max_rounds: 400,
            step_tol: None,
        }
    }
}

impl StopRule {
    fn validate(&self) -> Result<()> {
        if self.rel_tol <= 0.0 || self.rel_tol.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "relative stopping tolerance must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument(
                "round cap must be at least 1".into(),
            ));
        }
        if let Some(t) = self.step_tol {
            if t <= 0.0 || t.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "step tolerance must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Solver-facing knobs shared by every driver.
pub struct RunConfig<'s> {
    /// Lifted-pair policy for the generic builders; `None` picks the
    /// dimension-based default.
    pub pairs: Option<PairPolicy>,
    pub settings: SolveSettings,
    pub solver: &'s dyn ConeSolver,
}

impl Default for RunConfig<'static> {
    fn default() -> Self {
        RunConfig {
            pairs: None,
            settings: SolveSettings::default(),
            solver: &ReferenceIpm,
        }
    }
}

/// Per-round blend weight rule for the accelerated driver.
#[derive(Clone, Debug)]
pub enum LambdaRule {
    /// Always 0: reduces to the plain sequential driver.
    Zero,
    /// A constant weight in `[0, 1)`.
    Fixed(f64),
    /// Halve from 0.5 until the certified near-feasible conditions accept
    /// the blended anchor (margin positive and the penalty weight above the
    /// threshold evaluated with distance `λ·‖Y̌ − Y*‖`), or fall back to 0.
    Backtracking,
}

/// Accelerated-run schedule: a static penalty weight plus the blend rule.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub eta: f64,
    pub lambda: LambdaRule,
}

/// One solved round.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// Anchor the round was solved against.
    pub anchor: DMatrix<f64>,
    pub eta: f64,
    /// Blend weight, recorded by the accelerated driver only.
    pub lambda: Option<f64>,
    pub y: DMatrix<f64>,
    /// Original-instance objective at `y`.
    pub objective: f64,
    pub rank_gap: f64,
    /// Worst instance-constraint violation at `y`.
    pub feasibility: f64,
    pub status: SolveStatus,
    pub wall_time: Duration,
    /// Constraint multipliers from the subproblem, when optimal.
    pub duals: Option<BTreeMap<ConIndex, f64>>,
    /// Diagonal-dominance certificate assembled from the duals.
    pub certificate: Option<ExactnessCertificate>,
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// A stopping criterion fired.
    Converged,
    /// The round cap was exhausted first.
    RoundLimit,
    /// A subproblem finished without an optimal status; the trace is
    /// truncated at that round.
    Aborted(SolveStatus),
}

/// Full record of a sequential or accelerated run.
#[derive(Clone, Debug)]
pub struct RunTrace {
    /// Objective value at the starting point (the epigraph level the descent
    /// argument starts from).
    pub initial_objective: f64,
    pub rounds: Vec<RoundRecord>,
    /// First round with rank gap below [`RANK_TIGHT_TOL`].
    pub i_feas: Option<usize>,
    /// Round at which a stopping criterion fired.
    pub i_stop: Option<usize>,
    pub outcome: RunOutcome,
}

impl RunTrace {
    /// Solution of the last recorded round.
    pub fn final_y(&self) -> Option<&DMatrix<f64>> {
        self.rounds.last().map(|r| &r.y)
    }

    /// Objective of the last round that was rank-tight and feasible.
    pub fn best_tight_objective(&self, feas_tol: f64) -> Option<f64> {
        self.rounds
            .iter()
            .filter(|r| r.rank_gap < RANK_TIGHT_TOL && r.feasibility <= feas_tol)
            .map(|r| r.objective)
            .next_back()
    }
}

fn require_positive_eta(eta: f64) -> Result<()> {
    if eta <= 0.0 || eta.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "sequential runs need a positive penalty weight, got {eta}"
        )));
    }
    Ok(())
}

/// Backtracking acceptance: does the blended anchor satisfy the certified
/// near-feasible conditions at distance `λ·‖Y̌ − Y*‖` for this `eta`?
fn lambda_acceptable(
    inst: &QcqpInstance,
    rho1: f64,
    rho2: f64,
    prev_y: &DMatrix<f64>,
    prev_anchor: &DMatrix<f64>,
    lambda: f64,
    eta: f64,
) -> bool {
    let blended = prev_y * (1.0 - lambda) + prev_anchor * lambda;
    let d = lambda * (prev_anchor - prev_y).norm();
    let binding = quasi_binding_set(inst, &blended, d);
    let s = singularity_of(inst, &binding, &blended);
    let margin = s - 2.0 * (rho1 + rho2) * d;
    if margin <= 0.0 || margin.is_nan() {
        return false;
    }
    let report = TheoryReport {
        rho1_ub: rho1,
        rho2_ub: rho2,
        d_upper: d,
        binding,
        s_value: s,
        eta_thm1: None,
        eta_thm2: None,
        glicq_ok: s > 0.0,
        margin,
        notes: Vec::new(),
    };
    let (_, thm2) = eta_thresholds(inst, &blended, &report);
    // Compare against the raw threshold (the published safety inflation is
    // stripped): the acceptance test mirrors the strict inequalities.
    match thm2 {
        Some(t) => eta > t / THRESHOLD_INFLATION,
        None => false,
    }
}

/// Polish extracted multipliers against the subproblem's stationarity
/// system `∇q₀(Y) + Σ τ_k ∇q_k(Y) + 2η(Y − Y̌) = 0` by a least-squares
/// re-estimation over the binding constraints. Cone-level dual recovery
/// carries noise on the order of the square root of the solver gap; the
/// re-estimate is kept only where it does not worsen the residual, and
/// binding-inequality multipliers are clamped at zero.
fn refine_duals(
    inst: &QcqpInstance,
    y: &DMatrix<f64>,
    anchor: &DMatrix<f64>,
    eta: f64,
    tau: &mut BTreeMap<ConIndex, f64>,
) {
    let binding = quasi_binding_set(inst, y, 0.0);
    if binding.indices.is_empty() {
        return;
    }
    let j = jacobian(inst, &binding.indices, y);
    let g = inst.objective.grad(y) + (y - anchor) * (2.0 * eta);
    let gvec = DMatrix::from_column_slice(g.len(), 1, g.as_slice());
    let residual = |t: &BTreeMap<ConIndex, f64>| -> f64 {
        let mut r = gvec.clone();
        for (i, &k) in binding.indices.iter().enumerate() {
            r += j.row(i).transpose() * t.get(&k).copied().unwrap_or(0.0);
        }
        r.norm()
    };
    let Ok(sol) = j.transpose().svd(true, true).solve(&(-&gvec), 1e-12) else {
        return;
    };
    let mut candidate = tau.clone();
    for (i, &k) in binding.indices.iter().enumerate() {
        let v = sol[(i, 0)];
        let v = if matches!(k, ConIndex::Ineq(_)) {
            v.max(0.0)
        } else {
            v
        };
        candidate.insert(k, v);
    }
    if residual(&candidate) <= residual(tau) {
        *tau = candidate;
    }
}

/// Evaluate the square KKT system of the original instance at `(y, τ)` over
/// a fixed binding set: stationarity `(A₀ + Σ τ_k A_k)y + B₀ + Σ τ_k B_k`
/// stacked with the binding-constraint values, plus its Jacobian.
fn kkt_system(
    inst: &QcqpInstance,
    y: &DMatrix<f64>,
    tau: &[f64],
    binding: &[ConIndex],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (inst.n, inst.m);
    let nm = n * m;
    let nb = binding.len();
    let mut stat = inst.objective.a.matvec(y);
    inst.objective.b.add_scaled_to_dense(&mut stat, 1.0);
    let mut pencil = inst.objective.a.to_dense();
    for (j, &k) in binding.iter().enumerate() {
        let q = inst.constraint(k);
        stat += q.a.matvec(y) * tau[j];
        q.b.add_scaled_to_dense(&mut stat, tau[j]);
        q.a.add_scaled_to_dense(&mut pencil, tau[j]);
    }
    let mut f = DMatrix::zeros(nm + nb, 1);
    f.view_mut((0, 0), (nm, 1))
        .copy_from(&DMatrix::from_column_slice(nm, 1, stat.as_slice()));
    for (j, &k) in binding.iter().enumerate() {
        f[(nm + j, 0)] = inst.constraint(k).eval(y);
    }
    let mut jac = DMatrix::zeros(nm + nb, nm + nb);
    for c in 0..m {
        jac.view_mut((c * n, c * n), (n, n)).copy_from(&pencil);
    }
    for (j, &k) in binding.iter().enumerate() {
        let q = inst.constraint(k);
        let mut col = q.a.matvec(y);
        q.b.add_scaled_to_dense(&mut col, 1.0);
        for idx in 0..nm {
            jac[(idx, nm + j)] = col.as_slice()[idx];
            // ∇q_k = 2(A_k y + B_k): the constraint rows scale by two.
            jac[(nm + j, idx)] = 2.0 * col.as_slice()[idx];
        }
    }
    (f, jac)
}

/// Crossover polish for the stopping round: a guarded Newton iteration on
/// the original instance's KKT system, started from the interior-point
/// iterate and its refined multipliers. Interior-point primal accuracy at
/// degenerate (rank-tight) optima degrades to the square root of the gap
/// tolerance along flat directions; Newton restores full precision.
/// Returns the polished pair only when the residual shrinks substantially
/// and neither feasibility nor the objective regresses.
fn crossover_polish(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    tau0: &BTreeMap<ConIndex, f64>,
    binding: &[ConIndex],
) -> Option<(DMatrix<f64>, BTreeMap<ConIndex, f64>)> {
    let nm = inst.n * inst.m;
    let nb = binding.len();
    let mut y = y0.clone();
    let mut tau: Vec<f64> = binding
        .iter()
        .map(|k| tau0.get(k).copied().unwrap_or(0.0))
        .collect();
    let (f0, _) = kkt_system(inst, &y, &tau, binding);
    let start_norm = f0.norm();
    let mut cur_norm = start_norm;
    for _ in 0..8 {
        if cur_norm < 1e-13 {
            break;
        }
        let (f, jac) = kkt_system(inst, &y, &tau, binding);
        let Ok(delta) = jac.svd(true, true).solve(&(-&f), 1e-12) else {
            break;
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..4 {
            let mut y_try = y.clone();
            for c in 0..inst.m {
                for r in 0..inst.n {
                    y_try[(r, c)] += scale * delta[(c * inst.n + r, 0)];
                }
            }
            let tau_try: Vec<f64> = (0..nb)
                .map(|j| tau[j] + scale * delta[(nm + j, 0)])
                .collect();
            let (f_try, _) = kkt_system(inst, &y_try, &tau_try, binding);
            if f_try.norm() < cur_norm {
                y = y_try;
                tau = tau_try;
                cur_norm = f_try.norm();
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let moved = (&y - y0).norm();
    let feas_before = inst.feasibility_residual(y0);
    let feas_after = inst.feasibility_residual(&y);
    let obj_rise = inst.objective.eval(&y) - inst.objective.eval(y0);
    let sign_ok = binding
        .iter()
        .zip(&tau)
        .all(|(k, &t)| !matches!(k, ConIndex::Ineq(_)) || t >= -1e-9);
    if cur_norm < 0.5 * start_norm
        && moved <= 1e-2
        && feas_after <= feas_before.max(1e-7)
        && obj_rise <= 1e-9
        && sign_ok
    {
        let mut out = tau0.clone();
        for (j, &k) in binding.iter().enumerate() {
            let v = if matches!(k, ConIndex::Ineq(_)) {
                tau[j].max(0.0)
            } else {
                tau[j]
            };
            out.insert(k, v);
        }
        Some((y, out))
    } else {
        None
    }
}

/// The round loop shared by every driver. `build` maps `(anchor, eta)` to
/// the round's relaxation model, so callers with specialized models (sparse
/// substituted lifts, custom solvers) reuse the same loop.
pub fn run_rounds<'a>(
    inst: &QcqpInstance,
    build: &dyn Fn(DMatrix<f64>, f64) -> Result<RelaxationModel<'a>>,
    y0: &DMatrix<f64>,
    eta: f64,
    stop: &StopRule,
    lambda_rule: Option<&LambdaRule>,
    config: &RunConfig<'_>,
) -> Result<RunTrace> {
    require_positive_eta(eta)?;
    stop.validate()?;
    if y0.nrows() != inst.n || y0.ncols() != inst.m {
        return Err(Error::DimensionMismatch(format!(
            "starting point is {}×{}, instance variable is {}×{}",
            y0.nrows(),
            y0.ncols(),
            inst.n,
            inst.m
        )));
    }
    if let Some(LambdaRule::Fixed(l)) = lambda_rule {
        if !(0.0..1.0).contains(l) {
            return Err(Error::InvalidArgument(format!(
                "blend weight must lie in [0, 1), got {l}"
            )));
        }
    }
    // Pencil bounds are anchor-independent; compute once for backtracking.
    let (rho1, rho2) = match lambda_rule {
        Some(LambdaRule::Backtracking) => (
            pencil_norm_upper(inst, PencilNormKind::InducedOne),
            pencil_norm_upper(inst, PencilNormKind::Spectral),
        ),
        _ => (0.0, 0.0),
    };

    let initial_objective = inst.objective.eval(y0);
    let mut prev_obj = initial_objective;
    let mut prev_y = y0.clone();
    let mut prev_anchor = y0.clone();

    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut i_feas = None;
    let mut i_stop = None;
    let mut outcome = RunOutcome::RoundLimit;

    for l in 1..=stop.max_rounds {
        // Round 1 always solves at the provided starting anchor; later
        // rounds re-anchor at the previous solution, optionally blended.
        let (anchor, lambda) = if l == 1 {
            (y0.clone(), lambda_rule.map(|_| 0.0))
        } else {
            match lambda_rule {
                None | Some(LambdaRule::Zero) => {
                    (prev_y.clone(), lambda_rule.map(|_| 0.0))
                }
                Some(LambdaRule::Fixed(lam)) => (
                    &prev_y * (1.0 - *lam) + &prev_anchor * *lam,
                    Some(*lam),
                ),
                Some(LambdaRule::Backtracking) => {
                    let mut accepted = 0.0;
                    let mut lam = 0.5;
                    while lam >= 1e-6 {
                        if lambda_acceptable(inst, rho1, rho2, &prev_y, &prev_anchor, lam, eta) {
                            accepted = lam;
                            break;
                        }
                        lam *= 0.5;
                    }
                    (
                        &prev_y * (1.0 - accepted) + &prev_anchor * accepted,
                        Some(accepted),
                    )
                }
            }
        };

        let model = build(anchor.clone(), eta)?;
        let prog = encode_cone_program(&model)?;
        let sol = solve_cone_program_with(&prog, &config.settings, config.solver)?;
        let point = model.unpack(&sol.x);
        let objective = inst.objective.eval(&point.y);
        let rank_gap = point.rank_gap();
        let feasibility = inst.feasibility_residual(&point.y);

        let (duals, certificate) = if sol.status == SolveStatus::Optimal {
            match extract_duals(&sol, &model) {
                Ok((mut tau, _)) => {
                    refine_duals(inst, &point.y, &anchor, eta, &mut tau);
                    let binding = quasi_binding_set(inst, &point.y, 0.0);
                    let cert = exactness_certificate(inst, &tau, eta, &binding);
                    (Some(tau), Some(cert))
                }
                Err(_) => (None, None),
            }
        } else {
            (None, None)
        };

        rounds.push(RoundRecord {
            round: l,
            anchor: anchor.clone(),
            eta,
            lambda,
            y: point.y.clone(),
            objective,
            rank_gap,
            feasibility,
            status: sol.status,
            wall_time: sol.wall_time,
            duals,
            certificate,
        });
        if i_feas.is_none() && rank_gap < RANK_TIGHT_TOL {
            i_feas = Some(l);
        }
        if sol.status != SolveStatus::Optimal {
            outcome = RunOutcome::Aborted(sol.status);
            break;
        }

        let step = (&point.y - &prev_y).norm();
        let descent_met = objective != 0.0 && (prev_obj - objective) / objective.abs() <= stop.rel_tol;
        let step_met = stop.step_tol.map(|t| step <= t).unwrap_or(false);

        prev_obj = objective;
        prev_y = point.y;
        prev_anchor = anchor;

        if descent_met || step_met {
            // Crossover: polish the stopping round's iterate and multipliers
            // on the original KKT system before sealing the trace.
            if rank_gap < RANK_TIGHT_TOL {
                if let Some(rec) = rounds.last_mut() {
                    if let Some(tau_map) = rec.duals.clone() {
                        let binding = quasi_binding_set(inst, &rec.y, 0.0);
                        let polished =
                            crossover_polish(inst, &rec.y, &tau_map, &binding.indices);
                        if let Some((y_p, tau_p)) = polished {
                            rec.objective = inst.objective.eval(&y_p);
                            rec.feasibility = inst.feasibility_residual(&y_p);
                            let binding_p = quasi_binding_set(inst, &y_p, 0.0);
                            rec.certificate =
                                Some(exactness_certificate(inst, &tau_p, eta, &binding_p));
                            rec.y = y_p;
                            rec.duals = Some(tau_p);
                        }
                    }
                }
            }
            i_stop = Some(l);
            outcome = RunOutcome::Converged;
            break;
        }
    }

    Ok(RunTrace {
        initial_objective,
        rounds,
        i_feas,
        i_stop,
        outcome,
    })
}

/// Sequential penalized run with default pair policy and the bundled solver.
pub fn run_sequential(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    eta: f64,
    stop: &StopRule,
) -> Result<RunTrace> {
    run_sequential_with(inst, y0, eta, stop, &RunConfig::default())
}

/// Sequential penalized run: every round re-solves the penalized parabolic
/// model anchored at the previous round's solution.
pub fn run_sequential_with(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    eta: f64,
    stop: &StopRule,
    config: &RunConfig<'_>,
) -> Result<RunTrace> {
    let policy = config.pairs.unwrap_or_else(|| PairPolicy::default_for_dim(inst.n));
    let pairs = select_pairs(inst, policy);
    let build = |anchor: DMatrix<f64>, eta: f64| {
        build_parabolic_model(inst, &pairs, Some(anchor), eta)
    };
    run_rounds(inst, &build, y0, eta, stop, None, config)
}

/// Accelerated run with defaults; see [`run_accelerated_with`].
pub fn run_accelerated(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    schedule: &Schedule,
    stop: &StopRule,
) -> Result<RunTrace> {
    run_accelerated_with(inst, y0, schedule, stop, &RunConfig::default())
}

/// Accelerated run: round `l ≥ 2` anchors at the blend
/// `(1−λ_l)·Y^(l−1) + λ_l·Y̌^(l−1)` with `λ_l` from the schedule's rule.
/// A constantly-zero rule reproduces the sequential driver round-for-round.
pub fn run_accelerated_with(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    schedule: &Schedule,
    stop: &StopRule,
    config: &RunConfig<'_>,
) -> Result<RunTrace> {
    let policy = config.pairs.unwrap_or_else(|| PairPolicy::default_for_dim(inst.n));
    let pairs = select_pairs(inst, policy);
    let build = |anchor: DMatrix<f64>, eta: f64| {
        build_parabolic_model(inst, &pairs, Some(anchor), eta)
    };
    run_rounds(inst, &build, y0, schedule.eta, stop, Some(&schedule.lambda), config)
}

/// The penalty-weight search grid: `α·10^β` for `α ∈ {1, 2, 5}` and
/// `β ∈ [−6, 12]`, ascending.
pub fn eta_grid() -> Vec<f64> {
    let mut grid = Vec::with_capacity(57);
    for beta in -6..=12 {
        for alpha in [1.0, 2.0, 5.0] {
            grid.push(alpha * 10f64.powi(beta));
        }
    }
    grid
}

/// Smallest grid value whose first `rounds_probe` sequential rounds are all
/// rank-tight, found by bisection over the sorted grid (monotone acceptance
/// assumed). Uses defaults; see [`auto_eta_with`].
pub fn auto_eta(inst: &QcqpInstance, y0: &DMatrix<f64>, rounds_probe: usize) -> Result<f64> {
    auto_eta_with(inst, y0, rounds_probe, &RunConfig::default())
}

/// [`auto_eta`] against a caller-supplied solver configuration.
pub fn auto_eta_with(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    rounds_probe: usize,
    config: &RunConfig<'_>,
) -> Result<f64> {
    if rounds_probe == 0 {
        return Err(Error::InvalidArgument(
            "probing needs at least one round".into(),
        ));
    }
    let grid = eta_grid();
    let stop = StopRule {
        max_rounds: rounds_probe,
        ..StopRule::default()
    };
    let mut cache: BTreeMap<usize, bool> = BTreeMap::new();
    let probe = |idx: usize, cache: &mut BTreeMap<usize, bool>| -> bool {
        if let Some(&hit) = cache.get(&idx) {
            return hit;
        }
        let ok = match run_sequential_with(inst, y0, grid[idx], &stop, config) {
            Ok(trace) => {
                !trace.rounds.is_empty()
                    && !matches!(trace.outcome, RunOutcome::Aborted(_))
                    && trace.rounds.iter().all(|r| r.rank_gap < RANK_TIGHT_TOL)
            }
            Err(_) => false,
        };
        cache.insert(idx, ok);
        ok
    };
    let (mut lo, mut hi) = (0usize, grid.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if probe(mid, &mut cache) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if probe(lo, &mut cache) {
        Ok(grid[lo])
    } else {
        Err(Error::EtaSearchFailed)
    }
}

/// Percentage gaps against a reference objective:
/// `lb = 100·(q_ref − q_relax)/|q_ref|` measures how far a relaxation bound
/// sits below the reference, `ub = 100·(q_feasible − q_ref)/|q_ref|` how far
/// a feasible point sits above it.
pub fn compute_gaps(q_relax: f64, q_feasible: f64, q_ref: f64) -> Result<(f64, f64)> {
    if q_ref == 0.0 {
        return Err(Error::GapUndefined);
    }
    let lb = 100.0 * (q_ref - q_relax) / q_ref.abs();
    let ub = 100.0 * (q_feasible - q_ref) / q_ref.abs();
    Ok((lb, ub))
}
