//! Identification of linear dynamics from partially observed trajectories.
//!
//! The pipeline generates a discrete-time system `x⁺ = A·x + B·u` closed
//! under a stabilizing feedback `u = F·x + w`, simulates it while recording
//! only every `stride`-th state, and poses recovery of `(A, B)` together
//! with the unobserved states as a feasibility QCQP over the composite
//! variable
//!
//! ```text
//!     Y = [ rows 0..n           the rows of A
//!           rows n..n+|U|       the unobserved states xᵗ, t ∈ U
//!           rows n+|U|..        the columns of B     ] ∈ ℝ^{(n+|U|+m)×n}
//! ```
//!
//! Each transition contributes `n` equality rows. Transitions leaving an
//! observed state are affine in `Y`; transitions leaving an unobserved state
//! couple an `A`-row with a state row and are bilinear. The tailored
//! relaxation built here lifts only the row norms `ā_k = X_kk` and
//! `x̄_t = X_ss` and substitutes each bilinear product out of its pair of
//! parabolic rows, so no off-diagonal lifted entry ever becomes a decision
//! variable and the cone program stays near the size of the original data.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mat::{RectMatrix, SymMatrix};
use crate::qcqp::{QcqpInstance, QuadForm};
use crate::relax::{
    pair_row, LinExpr, LinExprBuilder, ModelRow, ParabolicPair, RelaxationModel, VarMap,
};

/// Absolute-to-scale tolerance of the Riccati fixed-point recursion.
const RICCATI_TOL: f64 = 1e-12;
/// Iteration cap of the Riccati recursion.
const RICCATI_MAX_ITER: usize = 10_000;
/// Redraw attempts before system generation gives up.
const GENERATE_ATTEMPTS: u64 = 10;

/// Ground-truth dynamics `x⁺ = A·x + B·u` plus the stabilizing feedback
/// `u = F·x + w` used to excite them.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    /// State matrix, `n×n`.
    pub a: DMatrix<f64>,
    /// Input matrix, `n×m`.
    pub b: DMatrix<f64>,
    /// Feedback gain, `m×n`; the closed loop `A + B·F` is Schur stable.
    pub f: DMatrix<f64>,
    /// Fixed point of the Riccati recursion that produced `f`.
    pub p: DMatrix<f64>,
}

impl LinearSystem {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `‖AᵀPA + I − P − AᵀPB(I + BᵀPB)⁻¹BᵀPA‖_F`: how far `p` is from being
    /// a fixed point of the Riccati recursion.
    pub fn riccati_residual(&self) -> f64 {
        let n = self.state_dim();
        let m = self.input_dim();
        let atp = self.a.transpose() * &self.p;
        let g = DMatrix::<f64>::identity(m, m) + self.b.transpose() * &self.p * &self.b;
        let Some(chol) = g.cholesky() else {
            return f64::INFINITY;
        };
        let k = chol.solve(&(self.b.transpose() * &self.p * &self.a));
        let next = &atp * &self.a + DMatrix::<f64>::identity(n, n) - (&atp * &self.b) * k;
        (next - &self.p).norm()
    }
}

/// A simulated closed-loop trajectory with a subset of observed states.
///
/// Times are 0-based: `states[t]` is the state at time `t`, and `inputs[t]`
/// drives the transition `t → t+1`. Builders consult `states[t]` only at
/// observed times `known`; the remaining entries are ground truth retained
/// for error reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    /// States over the full horizon, each `n×1`.
    pub states: Vec<DMatrix<f64>>,
    /// Recorded inputs, each `m×1`; one fewer than the states.
    pub inputs: Vec<DMatrix<f64>>,
    /// Sorted, distinct observed times.
    pub known: Vec<usize>,
}

impl Trajectory {
    pub fn new(
        n: usize,
        m: usize,
        states: Vec<DMatrix<f64>>,
        inputs: Vec<DMatrix<f64>>,
        known: Vec<usize>,
    ) -> Result<Self> {
        let traj = Trajectory {
            n,
            m,
            states,
            inputs,
            known,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument(
                "trajectory dimensions must be positive".into(),
            ));
        }
        if self.states.len() < 2 {
            return Err(Error::InvalidArgument(
                "a trajectory needs at least two states".into(),
            ));
        }
        if self.inputs.len() + 1 != self.states.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} states need {} inputs, got {}",
                self.states.len(),
                self.states.len() - 1,
                self.inputs.len()
            )));
        }
        for (t, x) in self.states.iter().enumerate() {
            if x.nrows() != self.n || x.ncols() != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "state {t} is {}×{}, expected {}×1",
                    x.nrows(),
                    x.ncols(),
                    self.n
                )));
            }
        }
        for (t, u) in self.inputs.iter().enumerate() {
            if u.nrows() != self.m || u.ncols() != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "input {t} is {}×{}, expected {}×1",
                    u.nrows(),
                    u.ncols(),
                    self.m
                )));
            }
        }
        if self.known.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one state must be observed".into(),
            ));
        }
        for w in self.known.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidArgument(
                    "observed times must be sorted and distinct".into(),
                ));
            }
        }
        if *self.known.last().expect("nonempty") >= self.states.len() {
            return Err(Error::InvalidArgument(format!(
                "observed time {} is outside the horizon {}",
                self.known.last().expect("nonempty"),
                self.states.len()
            )));
        }
        Ok(())
    }

    /// Number of recorded states.
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// Sorted unobserved times (complement of `known`).
    pub fn unknown(&self) -> Vec<usize> {
        let known: std::collections::BTreeSet<usize> = self.known.iter().copied().collect();
        (0..self.horizon()).filter(|t| !known.contains(t)).collect()
    }

    /// Rows of the composite variable: `n + |U| + m`.
    pub fn composite_rows(&self) -> usize {
        self.n + (self.horizon() - self.known.len()) + self.m
    }
}

/// Spectral radius via the complex eigenvalues.
fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Run the Riccati recursion `P ← AᵀPA + I − AᵀPB(I + BᵀPB)⁻¹BᵀPA` from
/// `P₀ = I` to its fixed point and derive the gain `F = −(I + BᵀPB)⁻¹BᵀPA`.
/// Returns `None` when the recursion stalls or leaves the finite range.
fn riccati_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let m = b.ncols();
    let eye_n = DMatrix::<f64>::identity(n, n);
    let eye_m = DMatrix::<f64>::identity(m, m);
    let mut p = eye_n.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let atp = a.transpose() * &p;
        let g = &eye_m + b.transpose() * &p * b;
        let chol = g.cholesky()?;
        let k = chol.solve(&(b.transpose() * &p * a));
        let raw = &atp * a + &eye_n - (&atp * b) * &k;
        // Re-symmetrize: the recursion amplifies antisymmetric roundoff at
        // rate ‖A‖² once P drifts, which poisons the Cholesky pivots.
        let next = (&raw + raw.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return None;
        }
        let delta = (&next - &p).norm();
        let scale = next.norm().max(1.0);
        p = next;
        if delta <= RICCATI_TOL * scale {
            let g = &eye_m + b.transpose() * &p * b;
            let chol = g.cholesky()?;
            let gain = -chol.solve(&(b.transpose() * &p * a));
            return Some((p, gain));
        }
    }
    None
}

/// Draw a system with `A = I + U(−0.25, 0.25)` entrywise and `B` standard
/// normal, then stabilize it with the Riccati-derived feedback gain. Draws
/// whose recursion stalls are replaced (incremented seed, up to ten tries).
pub fn generate_system(n: usize, m: usize, seed: u64) -> Result<LinearSystem> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(
            "system dimensions must be positive".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal is well-formed");
    for attempt in 0..GENERATE_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let a = DMatrix::from_fn(n, n, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base + rng.random_range(-0.25..0.25)
        });
        let b = DMatrix::from_fn(n, m, |_, _| normal.sample(&mut rng));
        let Some((p, f)) = riccati_gain(&a, &b) else {
            continue;
        };
        if spectral_radius(&(&a + &b * &f)) < 1.0 {
            return Ok(LinearSystem { a, b, f, p });
        }
    }
    Err(Error::Internal(format!(
        "no stabilizable draw in {GENERATE_ATTEMPTS} attempts from seed {seed}"
    )))
}

/// Simulate the closed loop `u[t] = F·x[t] + w[t]`, `x[t+1] = A·x[t] +
/// B·u[t]` for `horizon` states with `w` Gaussian of deviation `noise_std`,
/// observing every `known_stride`-th state starting at time 0. The dynamics
/// are exact; noise enters only through the recorded inputs.
pub fn simulate(
    sys: &LinearSystem,
    x1: &DMatrix<f64>,
    horizon: usize,
    noise_std: f64,
    known_stride: usize,
    seed: u64,
) -> Result<Trajectory> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    if x1.nrows() != n || x1.ncols() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "initial state is {}×{}, expected {n}×1",
            x1.nrows(),
            x1.ncols()
        )));
    }
    if horizon < 2 {
        return Err(Error::InvalidArgument(
            "simulation horizon must be at least 2".into(),
        ));
    }
    if known_stride == 0 {
        return Err(Error::InvalidArgument(
            "observation stride must be positive".into(),
        ));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise deviation must be finite and nonnegative, got {noise_std}"
        )));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise model: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(horizon);
    let mut inputs = Vec::with_capacity(horizon - 1);
    states.push(x1.clone());
    for t in 0..horizon - 1 {
        let w = DMatrix::from_fn(m, 1, |_, _| noise.sample(&mut rng));
        let u = &sys.f * &states[t] + w;
        let next = &sys.a * &states[t] + &sys.b * &u;
        inputs.push(u);
        states.push(next);
    }
    let known = (0..horizon).step_by(known_stride).collect();
    Trajectory::new(n, m, states, inputs, known)
}

/// Composite-variable row holding column `j` of `B`.
fn input_row(n: usize, num_unknown: usize, j: usize) -> usize {
    n + num_unknown + j
}

/// Pose recovery of `(A, B)` and the unobserved states as a feasibility
/// QCQP over the composite variable. Every transition becomes `n` equality
/// rows `x[t+1]_k − (A-row k)·x[t] − (B·u[t])_k = 0`; the affine rows
/// (observed `x[t]`) come first so relaxations that keep only those rows
/// explicit can label their duals positionally, followed by the bilinear
/// rows (unobserved `x[t]`) in time order. The objective is zero.
pub fn build_sysid_instance(traj: &Trajectory) -> Result<QcqpInstance> {
    traj.validate()?;
    let n = traj.n;
    let unknown = traj.unknown();
    let rank: BTreeMap<usize, usize> = unknown.iter().enumerate().map(|(s, &t)| (t, s)).collect();
    let rows = traj.composite_rows();

    let mut affine = Vec::new();
    let mut bilinear = Vec::new();
    for t in 0..traj.horizon() - 1 {
        for k in 0..n {
            let mut a_trip: Vec<(usize, usize, f64)> = Vec::new();
            let mut b_trip: Vec<(usize, usize, f64)> = Vec::new();
            let mut c = 0.0;
            // x[t+1]_k: a constant when observed, a state-row entry when not.
            match rank.get(&(t + 1)) {
                None => c += traj.states[t + 1][(k, 0)],
                Some(&s1) => b_trip.push((n + s1, k, 0.5)),
            }
            // −(A-row k)·x[t]: affine in the A-rows when x[t] is observed,
            // bilinear (A-row times state-row) when it is not.
            match rank.get(&t) {
                None => {
                    for c_idx in 0..n {
                        b_trip.push((k, c_idx, -0.5 * traj.states[t][(c_idx, 0)]));
                    }
                }
                Some(&s) => a_trip.push((k, n + s, -0.5)),
            }
            // −(B·u[t])_k with B[k, j] stored at composite entry (row j, col k).
            for j in 0..traj.m {
                b_trip.push((input_row(n, unknown.len(), j), k, -0.5 * traj.inputs[t][(j, 0)]));
            }
            let q = QuadForm::new(
                SymMatrix::from_triplets(rows, &a_trip)?,
                RectMatrix::from_triplets(rows, n, &b_trip)?,
                c,
            )?;
            if rank.contains_key(&t) {
                bilinear.push(q);
            } else {
                affine.push(q);
            }
        }
    }
    let mut equalities = affine;
    equalities.extend(bilinear);
    let objective = QuadForm::linear(RectMatrix::zeros(rows, n), 0.0);
    QcqpInstance::new(rows, n, objective, equalities, Vec::new(), None)
}

/// Canonical starting point of identification runs: the `A`-rows hold the
/// identity, the unobserved states and the `B`-columns are zero.
pub fn identity_anchor(traj: &Trajectory) -> DMatrix<f64> {
    DMatrix::from_fn(traj.composite_rows(), traj.n, |r, c| {
        if r == c && r < traj.n {
            1.0
        } else {
            0.0
        }
    })
}

/// Build the tailored relaxation of a composite identification instance.
///
/// `inst` must be the output of [`build_sysid_instance`] for the same
/// trajectory; it is borrowed rather than rebuilt so the model can share it
/// with the round driver. Only the diagonal lifts of the `A`-rows and the
/// unobserved-state rows become decision variables. Each bilinear transition
/// row is substituted into its two parabolic rows
///
/// ```text
///     ā_k + x̄_t ± 2·e_kᵀ(x[t+1] − B·u[t]) ≥ ‖(A-row k) ± x[t]‖²
/// ```
///
/// so the model carries no explicit bilinear equalities and no off-diagonal
/// lifted entries. The anchor penalty covers the `A`-rows and the state rows
/// but not the `B`-columns, which enter every constraint affinely.
pub fn build_sysid_relaxation<'a>(
    traj: &Trajectory,
    inst: &'a QcqpInstance,
    anchor: Option<DMatrix<f64>>,
    eta: f64,
) -> Result<RelaxationModel<'a>> {
    traj.validate()?;
    if eta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalty weight must be nonnegative, got {eta}"
        )));
    }
    if eta > 0.0 && anchor.is_none() {
        return Err(Error::InvalidArgument(
            "a positive penalty weight requires an anchor point".into(),
        ));
    }
    let n = traj.n;
    let unknown = traj.unknown();
    let lifted = n + unknown.len();
    let rows_total = traj.composite_rows();
    if inst.n != rows_total || inst.m != n {
        return Err(Error::DimensionMismatch(format!(
            "instance variable is {}×{}, the trajectory composite is {rows_total}×{n}",
            inst.n, inst.m
        )));
    }
    let num_affine = n * (0..traj.horizon() - 1)
        .filter(|t| traj.known.binary_search(t).is_ok())
        .count();
    if inst.equalities.len() != n * (traj.horizon() - 1)
        || !inst.inequalities.is_empty()
        || inst.equalities[..num_affine].iter().any(|q| !q.is_linear())
        || inst.equalities[num_affine..].iter().any(|q| q.is_linear())
    {
        return Err(Error::InvalidArgument(
            "instance rows do not match the trajectory's transition structure".into(),
        ));
    }
    if let Some(a) = &anchor {
        if a.nrows() != rows_total || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "anchor is {}×{}, the composite variable is {rows_total}×{n}",
                a.nrows(),
                a.ncols()
            )));
        }
    }

    let rank: BTreeMap<usize, usize> = unknown.iter().enumerate().map(|(s, &t)| (t, s)).collect();
    let vmap = VarMap::new(rows_total, n, (0..lifted).map(|i| (i, i)));

    // Affine transition rows stay explicit equalities, in instance order.
    let mut rows = Vec::new();
    for q in &inst.equalities[..num_affine] {
        rows.push(ModelRow::Eq(LinExpr::lift(q)));
    }

    // Diagonal parabolic rows pin the lifted row norms from below.
    let pairs: Vec<ParabolicPair> = (0..lifted).map(ParabolicPair::diagonal).collect();
    for p in &pairs {
        rows.push(pair_row(p, n));
    }

    // Substituted rows, two per (unobserved time, A-row) in time order.
    for (&t, &s) in &rank {
        if t + 1 >= traj.horizon() {
            continue;
        }
        for k in 0..n {
            for sign in [-1.0, 1.0] {
                let mut u = LinExprBuilder::new();
                u.x(k, k, 1.0).x(n + s, n + s, 1.0);
                // ±2·e_kᵀ(x[t+1] − B·u[t]).
                match rank.get(&(t + 1)) {
                    None => {
                        u.constant(sign * 2.0 * traj.states[t + 1][(k, 0)]);
                    }
                    Some(&s1) => {
                        u.y(n + s1, k, sign * 2.0);
                    }
                }
                for j in 0..traj.m {
                    u.y(
                        input_row(n, unknown.len(), j),
                        k,
                        -sign * 2.0 * traj.inputs[t][(j, 0)],
                    );
                }
                let mut v = Vec::with_capacity(n);
                for c in 0..n {
                    let mut e = LinExprBuilder::new();
                    e.y(k, c, 1.0).y(n + s, c, sign);
                    v.push(e.finish());
                }
                rows.push(ModelRow::Parabolic { u: u.finish(), v });
            }
        }
    }

    // Objective: the lifted instance objective plus the anchor penalty on
    // the lifted rows.
    let lifted0 = LinExpr::lift(&inst.objective);
    for &(i, j, _) in &lifted0.x_coeffs {
        if !vmap.has_x(i, j) {
            return Err(Error::InvalidArgument(format!(
                "objective references the unmapped lifted entry ({i}, {j})"
            )));
        }
    }
    let mut obj = LinExprBuilder::new();
    for (r, c, v) in lifted0.y_coeffs {
        obj.y(r, c, v);
    }
    for (i, j, v) in lifted0.x_coeffs {
        obj.x(i, j, v);
    }
    obj.constant(lifted0.constant);
    if eta > 0.0 {
        let anchor_ref = anchor.as_ref().expect("checked above");
        for i in 0..lifted {
            obj.x(i, i, eta);
            for c in 0..n {
                obj.y(i, c, -2.0 * eta * anchor_ref[(i, c)]);
                obj.constant(eta * anchor_ref[(i, c)].powi(2));
            }
        }
    }

    Ok(RelaxationModel {
        instance: inst,
        anchor,
        eta,
        pairs,
        has_box_cuts: false,
        vmap,
        objective: obj.finish(),
        rows,
        penalized_rows: (0..lifted).collect(),
        num_eq_rows: num_affine,
        num_ineq_rows: 0,
    })
}

/// Recovered `A`, the unobserved states in time order, and recovered `B`.
pub type CompositeSplit = (DMatrix<f64>, Vec<DMatrix<f64>>, DMatrix<f64>);

/// Split a composite iterate into its [`CompositeSplit`] blocks.
pub fn split_composite(traj: &Trajectory, y: &DMatrix<f64>) -> Result<CompositeSplit> {
    let n = traj.n;
    let unknown = traj.unknown();
    if y.nrows() != traj.composite_rows() || y.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "iterate is {}×{}, the composite variable is {}×{n}",
            y.nrows(),
            y.ncols(),
            traj.composite_rows()
        )));
    }
    let a = DMatrix::from_fn(n, n, |i, j| y[(i, j)]);
    let states = (0..unknown.len())
        .map(|s| DMatrix::from_fn(n, 1, |c, _| y[(n + s, c)]))
        .collect();
    let b = DMatrix::from_fn(n, traj.m, |i, j| y[(input_row(n, unknown.len(), j), i)]);
    Ok((a, states, b))
}

/// Pack the ground truth `(A, B, hidden states)` into a composite iterate,
/// the exact feasible point the identification instance is built around.
pub fn composite_truth(traj: &Trajectory, sys: &LinearSystem) -> Result<DMatrix<f64>> {
    let n = traj.n;
    if sys.state_dim() != n || sys.input_dim() != traj.m {
        return Err(Error::DimensionMismatch(format!(
            "system is {}-state/{}-input, trajectory is {n}-state/{}-input",
            sys.state_dim(),
            sys.input_dim(),
            traj.m
        )));
    }
    let unknown = traj.unknown();
    let mut y = DMatrix::zeros(traj.composite_rows(), n);
    for i in 0..n {
        for j in 0..n {
            y[(i, j)] = sys.a[(i, j)];
        }
    }
    for (s, &t) in unknown.iter().enumerate() {
        for c in 0..n {
            y[(n + s, c)] = traj.states[t][(c, 0)];
        }
    }
    for j in 0..traj.m {
        for c in 0..n {
            y[(input_row(n, unknown.len(), j), c)] = sys.b[(c, j)];
        }
    }
    Ok(y)
}

/// Recovery error `(1/n)‖Â − A‖_F + (1/√(n·m))‖B̂ − B‖_F`.
pub fn recovery_error(
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    sys: &LinearSystem,
) -> Result<f64> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    if a_hat.nrows() != n || a_hat.ncols() != n || b_hat.nrows() != n || b_hat.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "estimates are {}×{} and {}×{}, system is {n}×{n} and {n}×{m}",
            a_hat.nrows(),
            a_hat.ncols(),
            b_hat.nrows(),
            b_hat.ncols()
        )));
    }
    Ok((a_hat - &sys.a).norm() / n as f64 + (b_hat - &sys.b).norm() / ((n * m) as f64).sqrt())
}
