//! Local search on the original nonconvex problem.
//!
//! Two building blocks over the vectorized variable `v = vec(Y)`:
//!
//! * feasibility restoration — damped Gauss–Newton on the violated
//!   constraint residuals;
//! * active-set sequential quadratic programming with an ℓ1-merit line
//!   search, for either the instance objective or the squared distance to an
//!   anchor point.
//!
//! Multistart drivers wrap the pair into best-of-many-starts searches. They
//! are deliberately independent of the conic machinery so they can serve as
//! oracles in tests of the relaxation and of the distance estimates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::qcqp::{ConIndex, QcqpInstance};

/// Knobs for the restoration and SQP loops.
#[derive(Debug, Clone, Copy)]
pub struct LocalOptions {
    /// Iteration cap shared by restoration and SQP.
    pub max_iters: usize,
    /// Target infinity-norm constraint violation.
    pub tol_feas: f64,
    /// Stationarity tolerance, relative to the objective gradient size.
    pub tol_stat: f64,
    /// Inequalities with value ≥ −active_tol join the working set.
    pub active_tol: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol_feas: 1e-9,
            tol_stat: 1e-7,
            active_tol: 1e-8,
        }
    }
}

/// Outcome of one local run.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub y: DMatrix<f64>,
    pub objective: f64,
    pub feasibility: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// What the SQP loop minimizes.
enum Goal<'a> {
    /// The instance objective q₀.
    Objective,
    /// Half the squared Frobenius distance to an anchor.
    Distance(&'a DMatrix<f64>),
}

impl Goal<'_> {
    fn value(&self, inst: &QcqpInstance, y: &DMatrix<f64>) -> f64 {
        match self {
            Goal::Objective => inst.objective.eval(y),
            Goal::Distance(anchor) => 0.5 * (y - *anchor).norm_squared(),
        }
    }

    fn grad_vec(&self, inst: &QcqpInstance, y: &DMatrix<f64>) -> DVector<f64> {
        match self {
            Goal::Objective => vec_of(&inst.objective.grad(y)),
            Goal::Distance(anchor) => vec_of(&(y - *anchor)),
        }
    }

    fn hess(&self, inst: &QcqpInstance, n: usize, m: usize) -> DMatrix<f64> {
        match self {
            Goal::Objective => block_hessian(&inst.objective.a.to_dense(), n, m),
            Goal::Distance(_) => DMatrix::identity(n * m, n * m),
        }
    }
}

fn vec_of(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(y.as_slice())
}

fn devec(n: usize, m: usize, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, m, v.as_slice())
}

/// Hessian of `tr{YᵀAY}` with respect to `vec(Y)`: block-diagonal copies
/// of `2A`, one per column of `Y`.
fn block_hessian(a: &DMatrix<f64>, n: usize, m: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n * m, n * m);
    for c in 0..m {
        for i in 0..n {
            for j in 0..n {
                h[(c * n + i, c * n + j)] = 2.0 * a[(i, j)];
            }
        }
    }
    h
}

fn cons_grad_vec(inst: &QcqpInstance, k: ConIndex, y: &DMatrix<f64>) -> DVector<f64> {
    vec_of(&inst.constraint(k).grad(y))
}

/// Sum of absolute equality residuals and positive inequality parts.
fn violation_l1(inst: &QcqpInstance, y: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for q in &inst.equalities {
        total += q.eval(y).abs();
    }
    for q in &inst.inequalities {
        total += q.eval(y).max(0.0);
    }
    total
}

/// Damped Gauss–Newton on the violated constraint residuals. Returns the
/// improved point together with its infinity-norm violation.
pub fn restore_feasible(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    opts: &LocalOptions,
) -> (DMatrix<f64>, f64) {
    let mut y = y0.clone();
    let merit = |p: &DMatrix<f64>| -> f64 {
        let mut total = 0.0;
        for q in &inst.equalities {
            total += q.eval(p).powi(2);
        }
        for q in &inst.inequalities {
            total += q.eval(p).max(0.0).powi(2);
        }
        total
    };
    for _ in 0..opts.max_iters {
        if inst.feasibility_residual(&y) <= opts.tol_feas {
            break;
        }
        // Residual rows: every equality, plus inequalities that are violated.
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        for k in inst.constraint_indices() {
            let v = inst.constraint(k).eval(&y);
            let include = match k {
                ConIndex::Eq(_) => true,
                ConIndex::Ineq(_) => v > 0.0,
            };
            if include {
                rows.push(cons_grad_vec(inst, k, &y));
                vals.push(v);
            }
        }
        if rows.is_empty() {
            break;
        }
        let nm = y.nrows() * y.ncols();
        let mut jac = DMatrix::zeros(rows.len(), nm);
        for (r, g) in rows.iter().enumerate() {
            jac.row_mut(r).copy_from(&g.transpose());
        }
        let r = DVector::from_column_slice(&vals);
        let Ok(pinv) = jac.pseudo_inverse(1e-12) else {
            break;
        };
        let step = -(&pinv * &r);
        let base = merit(&y);
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha >= 1e-12 {
            let trial = &y + devec(y.nrows(), y.ncols(), &(&step * alpha));
            if merit(&trial) <= base * (1.0 - 1e-4 * alpha) {
                y = trial;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let viol = inst.feasibility_residual(&y);
    (y, viol)
}

/// Active-set SQP with an ℓ1 exact-penalty line search.
fn sqp(
    inst: &QcqpInstance,
    goal: &Goal<'_>,
    y0: &DMatrix<f64>,
    opts: &LocalOptions,
) -> LocalSolution {
    let (n, m) = (inst.n, inst.m);
    let nm = n * m;
    let mut y = y0.clone();
    let mut rho = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iters {
        iterations = it;
        let viol = inst.feasibility_residual(&y);
        let g = goal.grad_vec(inst, &y);

        // Working set: all equalities plus near-active inequalities; drop
        // inequality rows whose least-squares multiplier is negative.
        let mut work: Vec<ConIndex> = inst
            .constraint_indices()
            .into_iter()
            .filter(|k| match k {
                ConIndex::Eq(_) => true,
                ConIndex::Ineq(_) => inst.constraint(*k).eval(&y) >= -opts.active_tol,
            })
            .collect();
        let mut lambda: DVector<f64> = DVector::zeros(0);
        let mut stat = g.norm();
        for _ in 0..=work.len() {
            if work.is_empty() {
                lambda = DVector::zeros(0);
                stat = g.norm();
                break;
            }
            let mut jt = DMatrix::zeros(nm, work.len());
            for (c, k) in work.iter().enumerate() {
                jt.column_mut(c).copy_from(&cons_grad_vec(inst, *k, &y));
            }
            let Ok(pinv) = jt.clone().pseudo_inverse(1e-12) else {
                lambda = DVector::zeros(work.len());
                break;
            };
            lambda = -(&pinv * &g);
            stat = (&g + &jt * &lambda).norm();
            let worst = work
                .iter()
                .enumerate()
                .filter(|(_, k)| matches!(k, ConIndex::Ineq(_)))
                .map(|(c, _)| (c, lambda[c]))
                .filter(|(_, l)| *l < -1e-8)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((c, _)) => {
                    work.remove(c);
                }
                None => break,
            }
        }

        let g_scale = 1.0 + g.norm();
        if stat <= opts.tol_stat * g_scale && viol <= opts.tol_feas {
            converged = true;
            break;
        }

        // Lagrangian Hessian, shifted until safely positive definite.
        let mut h = goal.hess(inst, n, m);
        for (c, k) in work.iter().enumerate() {
            let a = inst.constraint(*k).a.to_dense();
            h += block_hessian(&a, n, m) * lambda[c];
        }
        let eig = SymmetricEigen::new(h.clone());
        let max_abs = eig.eigenvalues.amax().max(1.0);
        let min_eig = eig.eigenvalues.min();
        let floor = 1e-6 * max_abs;
        if min_eig < floor {
            h += DMatrix::identity(nm, nm) * (floor - min_eig);
        }

        // Equality-constrained QP on the working set.
        let nw = work.len();
        let mut kkt = DMatrix::zeros(nm + nw, nm + nw);
        kkt.view_mut((0, 0), (nm, nm)).copy_from(&h);
        let mut rhs = DVector::zeros(nm + nw);
        rhs.rows_mut(0, nm).copy_from(&(-&g));
        for (c, k) in work.iter().enumerate() {
            let gk = cons_grad_vec(inst, *k, &y);
            kkt.view_mut((nm + c, 0), (1, nm)).copy_from(&gk.transpose());
            kkt.view_mut((0, nm + c), (nm, 1)).copy_from(&gk);
            kkt[(nm + c, nm + c)] = -1e-10;
            rhs[nm + c] = -inst.constraint(*k).eval(&y);
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            break;
        };
        let step = sol.rows(0, nm).clone_owned();

        // ℓ1 merit: φ = f + ρ·(Σ|q_E| + Σ max(q_I, 0)).
        let lam_inf = if nw == 0 { 0.0 } else { lambda.amax() };
        rho = rho.max(2.0 * lam_inf + 1.0);
        let merit0 = goal.value(inst, &y) + rho * violation_l1(inst, &y);
        let descent = g.dot(&step) - rho * violation_l1(inst, &y);
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha >= 1e-12 {
            let trial = &y + devec(n, m, &(&step * alpha));
            let merit = goal.value(inst, &trial) + rho * violation_l1(inst, &trial);
            let target = merit0 + 0.1 * alpha * descent.min(0.0) - 1e-14 * merit0.abs();
            if merit <= target {
                y = trial;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }

    // Polish the violation back down if the merit trade-off left any.
    let viol = inst.feasibility_residual(&y);
    if viol > opts.tol_feas {
        let (polished, pviol) = restore_feasible(inst, &y, opts);
        if pviol < viol {
            y = polished;
        }
    }
    let feasibility = inst.feasibility_residual(&y);
    LocalSolution {
        objective: goal.value(inst, &y),
        feasibility,
        converged,
        iterations,
        y,
    }
}

/// Feasibility tolerance accepted from local search results.
pub const PROJECTION_TOL: f64 = 1e-7;

/// Nearest-feasible-point search from `anchor`: restoration first, then
/// distance-minimizing SQP. Returns the Frobenius distance and the point.
pub fn project_to_feasible(
    inst: &QcqpInstance,
    anchor: &DMatrix<f64>,
    opts: &LocalOptions,
) -> Result<(f64, DMatrix<f64>)> {
    project_seeded(inst, anchor, anchor, opts)
}

/// Like [`project_to_feasible`], but restoration starts from `seed` while the
/// distance objective still measures from `anchor`. Useful when a relaxation
/// solution provides a better basin than the anchor itself.
pub fn project_seeded(
    inst: &QcqpInstance,
    anchor: &DMatrix<f64>,
    seed: &DMatrix<f64>,
    opts: &LocalOptions,
) -> Result<(f64, DMatrix<f64>)> {
    if anchor.nrows() != inst.n || anchor.ncols() != inst.m {
        return Err(Error::DimensionMismatch(format!(
            "anchor is {}×{}, instance variable is {}×{}",
            anchor.nrows(),
            anchor.ncols(),
            inst.n,
            inst.m
        )));
    }
    let (restored, viol) = restore_feasible(inst, seed, opts);
    if viol > PROJECTION_TOL {
        return Err(Error::DistanceUnavailable(format!(
            "restoration stalled at violation {viol:.3e}"
        )));
    }
    let sol = sqp(inst, &Goal::Distance(anchor), &restored, opts);
    let candidate = if sol.feasibility <= PROJECTION_TOL {
        sol.y
    } else {
        restored
    };
    let d = (&candidate - anchor).norm();
    Ok((d, candidate))
}

/// Minimize the instance objective from one start: restore feasibility, then
/// run SQP.
pub fn minimize_from(
    inst: &QcqpInstance,
    y0: &DMatrix<f64>,
    opts: &LocalOptions,
) -> LocalSolution {
    let (restored, _) = restore_feasible(inst, y0, opts);
    sqp(inst, &Goal::Objective, &restored, opts)
}

/// Best feasible local minimum of the objective over many starts. Bound
/// constraints are handled as explicit rows. Starts are the provided points
/// plus `num_random` perturbations of the first provided start (or the
/// origin when none are given).
pub fn multistart_minimize<R: Rng>(
    inst: &QcqpInstance,
    starts: &[DMatrix<f64>],
    num_random: usize,
    radius: f64,
    rng: &mut R,
    opts: &LocalOptions,
) -> Result<LocalSolution> {
    let expanded = inst.with_bounds_as_rows();
    let center = starts
        .first()
        .cloned()
        .unwrap_or_else(|| DMatrix::zeros(inst.n, inst.m));
    let mut best: Option<LocalSolution> = None;
    let mut consider = |sol: LocalSolution| {
        if sol.feasibility <= PROJECTION_TOL
            && best
                .as_ref()
                .map(|b| sol.objective < b.objective)
                .unwrap_or(true)
        {
            best = Some(sol);
        }
    };
    for s in starts {
        consider(minimize_from(&expanded, s, opts));
    }
    for _ in 0..num_random {
        let jitter = DMatrix::from_fn(inst.n, inst.m, |_, _| rng.random_range(-radius..radius));
        consider(minimize_from(&expanded, &(&center + jitter), opts));
    }
    best.ok_or_else(|| Error::DistanceUnavailable("no start reached feasibility".into()))
}

/// Multistart estimate of the distance from `anchor` to the feasible set:
/// the smallest projection distance over `num_random` jittered starts plus
/// the anchor itself.
pub fn multistart_distance<R: Rng>(
    inst: &QcqpInstance,
    anchor: &DMatrix<f64>,
    num_random: usize,
    radius: f64,
    rng: &mut R,
    opts: &LocalOptions,
) -> Result<(f64, DMatrix<f64>)> {
    let expanded = inst.with_bounds_as_rows();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut consider = |result: Result<(f64, DMatrix<f64>)>| {
        if let Ok((d, y)) = result {
            if best.as_ref().map(|b| d < b.0).unwrap_or(true) {
                best = Some((d, y));
            }
        }
    };
    consider(project_to_feasible(&expanded, anchor, opts));
    for _ in 0..num_random {
        let jitter = DMatrix::from_fn(inst.n, inst.m, |_, _| rng.random_range(-radius..radius));
        let start = anchor + jitter;
        // Restore from the jittered start, then project from the true anchor
        // by seeding SQP at the restored point.
        let (restored, viol) = restore_feasible(&expanded, &start, opts);
        if viol > PROJECTION_TOL {
            continue;
        }
        let sol = sqp(&expanded, &Goal::Distance(anchor), &restored, opts);
        if sol.feasibility <= PROJECTION_TOL {
            let d = (&sol.y - anchor).norm();
            consider(Ok((d, sol.y)));
        }
    }
    best.ok_or_else(|| Error::DistanceUnavailable("no start reached feasibility".into()))
}
