//! Relaxation model construction.
//!
//! The lifted instance is affine in `(Y, X)`; what makes the relaxation is
//! the set of parabolic rows
//!
//! ```text
//!     X_ii + X_jj ∓ 2X_ij ≥ ‖(e_i ∓ e_j)ᵀY‖²
//! ```
//!
//! each of which is one rotated quadratic cone membership. A model is a list
//! of affine/conic rows over the mapped decision variables (all `Y` entries
//! plus the lifted `X` entries actually referenced), an objective, and the
//! anchor-penalty bookkeeping. Rows are kept symbolic over `(Y, X)` keys so
//! the same structure serves the dense pair-based models, the box-cut
//! bounding runs, the product-minor baseline, and the sparse substituted
//! models built by the system-identification pipeline.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qcqp::{LiftedPoint, QcqpInstance, QuadForm};

/// Sign of a parabolic row: `minus` pins `X_ii + X_jj − 2X_ij`, `plus` pins
/// `X_ii + X_jj + 2X_ij`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PairSign {
    Minus,
    Plus,
}

/// One lifted index pair `(i, j)` with `i ≤ j`. For `i = j` only the plus
/// sign is meaningful (the minus row degenerates to `0 ≥ 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParabolicPair {
    pub i: usize,
    pub j: usize,
    pub sign: PairSign,
}

impl ParabolicPair {
    pub fn diagonal(i: usize) -> Self {
        ParabolicPair {
            i,
            j: i,
            sign: PairSign::Plus,
        }
    }
}

/// Pair selection policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairPolicy {
    /// Every `i ≤ j`, both signs off the diagonal.
    Full,
    /// Only pairs where some coefficient matrix (objective or constraint)
    /// has a structural nonzero, plus every diagonal.
    Sparsity,
}

impl PairPolicy {
    /// Default policy: full up to dimension 64 (row count stays ≤ ~4160),
    /// sparsity beyond.
    pub fn default_for_dim(n: usize) -> Self {
        if n <= 64 {
            PairPolicy::Full
        } else {
            PairPolicy::Sparsity
        }
    }
}

/// Select the lifted pairs for an instance under a policy. Diagonals are
/// always included; off-diagonal pairs come in minus/plus couples.
pub fn select_pairs(inst: &QcqpInstance, policy: PairPolicy) -> Vec<ParabolicPair> {
    let n = inst.n;
    let mut off: BTreeSet<(usize, usize)> = BTreeSet::new();
    match policy {
        PairPolicy::Full => {
            for i in 0..n {
                for j in (i + 1)..n {
                    off.insert((i, j));
                }
            }
        }
        PairPolicy::Sparsity => {
            let mut scan = |q: &QuadForm| {
                for (i, j, _) in q.a.iter_upper() {
                    if i != j {
                        off.insert((i, j));
                    }
                }
            };
            scan(&inst.objective);
            inst.equalities.iter().for_each(&mut scan);
            inst.inequalities.iter().for_each(&mut scan);
        }
    }
    let mut pairs: Vec<ParabolicPair> = (0..n).map(ParabolicPair::diagonal).collect();
    for (i, j) in off {
        pairs.push(ParabolicPair {
            i,
            j,
            sign: PairSign::Minus,
        });
        pairs.push(ParabolicPair {
            i,
            j,
            sign: PairSign::Plus,
        });
    }
    pairs
}

/// Affine expression over the model variables: `Σ cᵧ·Y[r,c] + Σ cₓ·X[i,j]
/// + constant`, with `X` keys normalized to `i ≤ j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub y_coeffs: Vec<(usize, usize, f64)>,
    pub x_coeffs: Vec<(usize, usize, f64)>,
    pub constant: f64,
}

/// Builder that merges duplicate keys deterministically.
#[derive(Default)]
pub struct LinExprBuilder {
    y: BTreeMap<(usize, usize), f64>,
    x: BTreeMap<(usize, usize), f64>,
    constant: f64,
}

impl LinExprBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn y(&mut self, r: usize, c: usize, coeff: f64) -> &mut Self {
        *self.y.entry((r, c)).or_insert(0.0) += coeff;
        self
    }

    pub fn x(&mut self, i: usize, j: usize, coeff: f64) -> &mut Self {
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.x.entry(key).or_insert(0.0) += coeff;
        self
    }

    pub fn constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn finish(self) -> LinExpr {
        LinExpr {
            y_coeffs: self
                .y
                .into_iter()
                .filter(|&(_, v)| v != 0.0)
                .map(|((r, c), v)| (r, c, v))
                .collect(),
            x_coeffs: self
                .x
                .into_iter()
                .filter(|&(_, v)| v != 0.0)
                .map(|((i, j), v)| (i, j, v))
                .collect(),
            constant: self.constant,
        }
    }
}

impl LinExpr {
    /// Evaluate against a lifted point (full symmetric `X`).
    pub fn eval(&self, p: &LiftedPoint) -> f64 {
        let mut acc = self.constant;
        for &(r, c, v) in &self.y_coeffs {
            acc += v * p.y[(r, c)];
        }
        for &(i, j, v) in &self.x_coeffs {
            acc += v * p.x[(i, j)];
        }
        acc
    }

    /// Lift a quadratic function: `q̄(Y, X) = tr{AX} + 2tr{BᵀY} + c`.
    pub fn lift(q: &QuadForm) -> LinExpr {
        let mut b = LinExprBuilder::new();
        for (i, j, v) in q.a.iter_upper() {
            b.x(i, j, if i == j { v } else { 2.0 * v });
        }
        for (r, c, v) in q.b.iter() {
            b.y(r, c, 2.0 * v);
        }
        b.constant(q.c);
        b.finish()
    }
}

/// One model row.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelRow {
    /// `expr = 0`.
    Eq(LinExpr),
    /// `expr ≤ 0`.
    Ineq(LinExpr),
    /// `u ≥ ‖v‖²` — a rotated quadratic cone row `(u, 1, v)`.
    Parabolic { u: LinExpr, v: Vec<LinExpr> },
    /// `u·w ≥ v²`, `u ≥ 0`, `w ≥ 0` — a general rotated cone row.
    ProductMinor { u: LinExpr, w: LinExpr, v: LinExpr },
}

impl ModelRow {
    /// Signed residual: nonnegative iff the row is satisfied (equalities
    /// report their raw value, whose magnitude should vanish).
    pub fn residual(&self, p: &LiftedPoint) -> f64 {
        match self {
            ModelRow::Eq(e) => e.eval(p),
            ModelRow::Ineq(e) => -e.eval(p),
            ModelRow::Parabolic { u, v } => {
                let vv: f64 = v.iter().map(|e| e.eval(p).powi(2)).sum();
                u.eval(p) - vv
            }
            ModelRow::ProductMinor { u, w, v } => u.eval(p) * w.eval(p) - v.eval(p).powi(2),
        }
    }
}

/// Map from `(Y entries, lifted X entries)` to a flat decision vector:
/// `Y` occupies the first `n·m` slots in column-major order, mapped `X`
/// entries follow in `(i, j)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct VarMap {
    pub n: usize,
    pub m: usize,
    x_slots: BTreeMap<(usize, usize), usize>,
}

impl VarMap {
    pub fn new(n: usize, m: usize, x_keys: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let keys: BTreeSet<(usize, usize)> = x_keys
            .into_iter()
            .map(|(i, j)| if i <= j { (i, j) } else { (j, i) })
            .collect();
        let x_slots = keys
            .into_iter()
            .enumerate()
            .map(|(rank, key)| (key, n * m + rank))
            .collect();
        VarMap { n, m, x_slots }
    }

    pub fn num_vars(&self) -> usize {
        self.n * self.m + self.x_slots.len()
    }

    pub fn num_x(&self) -> usize {
        self.x_slots.len()
    }

    pub fn y_slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.n && c < self.m);
        c * self.n + r
    }

    pub fn x_slot(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.x_slots.get(&key).copied()
    }

    pub fn has_x(&self, i: usize, j: usize) -> bool {
        self.x_slot(i, j).is_some()
    }

    /// Mapped X keys in slot order.
    pub fn x_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.x_slots.keys().copied()
    }
}

/// A convex relaxation model over one instance.
#[derive(Clone, Debug)]
pub struct RelaxationModel<'a> {
    pub instance: &'a QcqpInstance,
    /// Anchor `Y̌` of the penalty; absent for unpenalized bounding runs.
    pub anchor: Option<DMatrix<f64>>,
    /// Penalty weight; zero means unpenalized.
    pub eta: f64,
    pub pairs: Vec<ParabolicPair>,
    pub has_box_cuts: bool,
    pub vmap: VarMap,
    /// Minimization objective over the mapped variables.
    pub objective: LinExpr,
    /// Rows in encoding order: instance equalities, instance inequalities,
    /// box cuts, cone rows.
    pub rows: Vec<ModelRow>,
    /// `Y` rows whose diagonal lift carries the anchor penalty (all rows for
    /// pair-based models; the lifted subset for substituted sparse models).
    pub penalized_rows: Vec<usize>,
    pub(crate) num_eq_rows: usize,
    pub(crate) num_ineq_rows: usize,
}

impl<'a> RelaxationModel<'a> {
    /// Index of the first equality row (always 0) and count, used by dual
    /// extraction.
    pub fn num_eq_rows(&self) -> usize {
        self.num_eq_rows
    }

    /// Count of instance inequality rows (box cuts excluded).
    pub fn num_ineq_rows(&self) -> usize {
        self.num_ineq_rows
    }

    /// Evaluate the model objective at a lifted point.
    pub fn objective_value(&self, p: &LiftedPoint) -> f64 {
        self.objective.eval(p)
    }

    /// Signed residual of every row at a lifted point, in row order.
    pub fn row_residuals(&self, p: &LiftedPoint) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual(p)).collect()
    }

    /// Flatten a lifted point into the decision vector.
    pub fn pack(&self, p: &LiftedPoint) -> Vec<f64> {
        let mut x = vec![0.0; self.vmap.num_vars()];
        for c in 0..self.vmap.m {
            for r in 0..self.vmap.n {
                x[self.vmap.y_slot(r, c)] = p.y[(r, c)];
            }
        }
        for (i, j) in self.vmap.x_keys() {
            x[self.vmap.x_slot(i, j).expect("mapped key")] = p.x[(i, j)];
        }
        x
    }

    /// Expand a decision vector into a lifted point. Unmapped `X` entries
    /// are completed from the exact lift `Y Yᵀ`, so the rank gap of the
    /// result measures exactly the mapped diagonals' excess.
    pub fn unpack(&self, x: &[f64]) -> LiftedPoint {
        let n = self.vmap.n;
        let m = self.vmap.m;
        let y = DMatrix::from_fn(n, m, |r, c| x[self.vmap.y_slot(r, c)]);
        let mut full = &y * y.transpose();
        for (i, j) in self.vmap.x_keys() {
            let v = x[self.vmap.x_slot(i, j).expect("mapped key")];
            full[(i, j)] = v;
            full[(j, i)] = v;
        }
        LiftedPoint { y, x: full }
    }

    /// Anchor-penalty value `η·Σ_{i∈penalized}(X_ii − 2y̌ᵢᵀyᵢ + ‖y̌ᵢ‖²)` at a
    /// lifted point (zero when unpenalized).
    pub fn penalty_value(&self, p: &LiftedPoint) -> f64 {
        let Some(anchor) = &self.anchor else {
            return 0.0;
        };
        if self.eta == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for &i in &self.penalized_rows {
            let mut row = p.x[(i, i)];
            for c in 0..self.vmap.m {
                row += -2.0 * anchor[(i, c)] * p.y[(i, c)] + anchor[(i, c)].powi(2);
            }
            acc += row;
        }
        self.eta * acc
    }
}

/// Build the penalized parabolic relaxation: lifted constraint rows, one
/// rotated-cone row per pair, and the objective `q̄₀ + η·tr{X − 2Y̌Yᵀ +
/// Y̌Y̌ᵀ}`.
pub fn build_parabolic_model<'a>(
    inst: &'a QcqpInstance,
    pairs: &[ParabolicPair],
    anchor: Option<DMatrix<f64>>,
    eta: f64,
) -> Result<RelaxationModel<'a>> {
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
    if let Some(a) = &anchor {
        if a.nrows() != inst.n || a.ncols() != inst.m {
            return Err(Error::DimensionMismatch(format!(
                "anchor is {}x{}, instance variable is {}x{}",
                a.nrows(),
                a.ncols(),
                inst.n,
                inst.m
            )));
        }
    }

    // Deduplicate pairs and force every diagonal in.
    let mut pair_set: BTreeSet<ParabolicPair> = pairs
        .iter()
        .map(|p| {
            let (i, j) = if p.i <= p.j { (p.i, p.j) } else { (p.j, p.i) };
            let sign = if i == j { PairSign::Plus } else { p.sign };
            ParabolicPair { i, j, sign }
        })
        .collect();
    for i in 0..inst.n {
        pair_set.insert(ParabolicPair::diagonal(i));
    }
    for p in &pair_set {
        if p.j >= inst.n {
            return Err(Error::DimensionMismatch(format!(
                "pair ({}, {}) out of range for n = {}",
                p.i, p.j, inst.n
            )));
        }
    }
    let pairs: Vec<ParabolicPair> = pair_set.into_iter().collect();

    // Variable map: X keys from pairs and from every coefficient matrix.
    let mut x_keys: BTreeSet<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
    let mut scan = |q: &QuadForm| {
        for (i, j, _) in q.a.iter_upper() {
            x_keys.insert((i, j));
        }
    };
    scan(&inst.objective);
    inst.equalities.iter().for_each(&mut scan);
    inst.inequalities.iter().for_each(&mut scan);
    let vmap = VarMap::new(inst.n, inst.m, x_keys);

    let mut rows = Vec::new();
    for q in &inst.equalities {
        rows.push(ModelRow::Eq(LinExpr::lift(q)));
    }
    for q in &inst.inequalities {
        rows.push(ModelRow::Ineq(LinExpr::lift(q)));
    }
    let num_eq_rows = inst.equalities.len();
    let num_ineq_rows = inst.inequalities.len();
    for p in &pairs {
        rows.push(pair_row(p, inst.m));
    }

    // Objective: lifted q₀ plus the anchor penalty on every diagonal.
    let mut obj = LinExprBuilder::new();
    let lifted0 = LinExpr::lift(&inst.objective);
    for (r, c, v) in lifted0.y_coeffs {
        obj.y(r, c, v);
    }
    for (i, j, v) in lifted0.x_coeffs {
        obj.x(i, j, v);
    }
    obj.constant(lifted0.constant);
    let penalized_rows: Vec<usize> = (0..inst.n).collect();
    if eta > 0.0 {
        let anchor_ref = anchor.as_ref().expect("checked above");
        for i in 0..inst.n {
            obj.x(i, i, eta);
            for c in 0..inst.m {
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
        penalized_rows,
        num_eq_rows,
        num_ineq_rows,
    })
}

pub(crate) fn pair_row(p: &ParabolicPair, m: usize) -> ModelRow {
    let mut u = LinExprBuilder::new();
    let mut v = Vec::with_capacity(m);
    if p.i == p.j {
        u.x(p.i, p.i, 1.0);
        for c in 0..m {
            let mut e = LinExprBuilder::new();
            e.y(p.i, c, 1.0);
            v.push(e.finish());
        }
    } else {
        let s = match p.sign {
            PairSign::Minus => -1.0,
            PairSign::Plus => 1.0,
        };
        u.x(p.i, p.i, 1.0).x(p.j, p.j, 1.0).x(p.i, p.j, 2.0 * s);
        for c in 0..m {
            let mut e = LinExprBuilder::new();
            e.y(p.i, c, 1.0).y(p.j, c, s);
            v.push(e.finish());
        }
    }
    ModelRow::Parabolic {
        u: u.finish(),
        v,
    }
}

/// Append the box valid inequalities for finite bounds: per variable `k`,
///
/// ```text
///     X_kk − (l_k + u_k)·y_k + l_k·u_k ≤ 0
///     X_kk − 2u_k·y_k + u_k² ≥ 0
///     X_kk − 2l_k·y_k + l_k² ≥ 0
/// ```
///
/// Rows whose bound is infinite are skipped; the returned strings describe
/// the skips.
pub fn add_box_cuts(
    model: &mut RelaxationModel<'_>,
    lower: &[f64],
    upper: &[f64],
) -> Result<Vec<String>> {
    if model.vmap.m != 1 {
        return Err(Error::Unsupported(
            "box cuts apply to vector instances (m = 1) only".into(),
        ));
    }
    let n = model.vmap.n;
    if lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "bound vectors have lengths {}/{}, expected {n}",
            lower.len(),
            upper.len()
        )));
    }
    let mut warnings = Vec::new();
    let mut cut_rows = Vec::new();
    for k in 0..n {
        let (l, u) = (lower[k], upper[k]);
        if l.is_finite() && u.is_finite() {
            let mut e = LinExprBuilder::new();
            e.x(k, k, 1.0).y(k, 0, -(l + u)).constant(l * u);
            cut_rows.push(ModelRow::Ineq(e.finish()));
        } else {
            warnings.push(format!(
                "variable {k}: product cut skipped (bound not finite)"
            ));
        }
        if u.is_finite() {
            // X_kk − 2u·y + u² ≥ 0  ⇔  −X_kk + 2u·y − u² ≤ 0
            let mut e = LinExprBuilder::new();
            e.x(k, k, -1.0).y(k, 0, 2.0 * u).constant(-u * u);
            cut_rows.push(ModelRow::Ineq(e.finish()));
        } else {
            warnings.push(format!("variable {k}: upper cut skipped (+inf bound)"));
        }
        if l.is_finite() {
            let mut e = LinExprBuilder::new();
            e.x(k, k, -1.0).y(k, 0, 2.0 * l).constant(-l * l);
            cut_rows.push(ModelRow::Ineq(e.finish()));
        } else {
            warnings.push(format!("variable {k}: lower cut skipped (−inf bound)"));
        }
    }

    // Box cuts sit between the instance inequalities and the cone rows.
    let first_cone = model
        .rows
        .iter()
        .position(|r| matches!(r, ModelRow::Parabolic { .. } | ModelRow::ProductMinor { .. }))
        .unwrap_or(model.rows.len());
    let tail: Vec<ModelRow> = model.rows.split_off(first_cone);
    model.rows.extend(cut_rows);
    model.rows.extend(tail);
    model.has_box_cuts = true;
    Ok(warnings)
}

/// Product-minor baseline relaxation: diagonal rows `X_ii ≥ ‖e_iᵀY‖²` plus
/// `X_ij² ≤ X_ii·X_jj` for each selected off-diagonal pair. Weaker than the
/// parabolic model but a useful bounding reference.
pub fn build_socp_baseline(inst: &QcqpInstance) -> Result<RelaxationModel<'_>> {
    let policy = PairPolicy::default_for_dim(inst.n);
    let pairs = select_pairs(inst, policy);
    let mut model = build_parabolic_model(inst, &pairs, None, 0.0)?;

    // Swap the off-diagonal parabolic rows for product minors, one per
    // distinct (i, j); keep the diagonal rows.
    let mut rows: Vec<ModelRow> = model
        .rows
        .iter()
        .filter(|r| matches!(r, ModelRow::Eq(_) | ModelRow::Ineq(_)))
        .cloned()
        .collect();
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    for p in &model.pairs {
        if p.i == p.j {
            rows.push(pair_row(p, inst.m));
        } else if seen.insert((p.i, p.j)) {
            let mut u = LinExprBuilder::new();
            u.x(p.i, p.i, 1.0);
            let mut w = LinExprBuilder::new();
            w.x(p.j, p.j, 1.0);
            let mut v = LinExprBuilder::new();
            v.x(p.i, p.j, 1.0);
            rows.push(ModelRow::ProductMinor {
                u: u.finish(),
                w: w.finish(),
                v: v.finish(),
            });
        }
    }
    model.rows = rows;
    Ok(model)
}
