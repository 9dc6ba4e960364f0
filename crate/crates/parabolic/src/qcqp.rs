//! Core problem types: quadratic forms over a matrix variable, instances,
//! and lifted points.
//!
//! A problem instance minimizes `q₀(Y)` over `Y ∈ ℝ^{n×m}` subject to
//! `q_k(Y) = 0` (equalities) and `q_k(Y) ≤ 0` (inequalities), where every
//! function has the shape
//!
//! ```text
//!     q(Y) = tr{Yᵀ A Y} + 2 tr{Bᵀ Y} + c
//! ```
//!
//! with `A` symmetric `n×n`, `B` of shape `n×m`, and scalar `c`. The lifted
//! reformulation replaces the quadratic part by a symmetric matrix `X`
//! standing in for `Y Yᵀ`, making every function affine:
//!
//! ```text
//!     q̄(Y, X) = tr{A X} + 2 tr{Bᵀ Y} + c
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mat::{RectMatrix, SymMatrix};

/// Relative asymmetry tolerated in user-provided quadratic coefficients
/// before construction is rejected (measured entrywise against the largest
/// absolute entry).
pub const ASYMMETRY_TOLERANCE: f64 = 1e-12;

/// One quadratic function `q(Y) = tr{YᵀAY} + 2tr{BᵀY} + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadForm {
    pub a: SymMatrix,
    pub b: RectMatrix,
    pub c: f64,
}

impl QuadForm {
    /// Assemble from parts already known to be consistent.
    pub fn new(a: SymMatrix, b: RectMatrix, c: f64) -> Result<Self> {
        let (bn, _bm) = b.shape();
        if a.dim() != bn {
            return Err(Error::DimensionMismatch(format!(
                "quadratic coefficient is {}x{} but linear coefficient has {} rows",
                a.dim(),
                a.dim(),
                bn
            )));
        }
        Ok(QuadForm { a, b, c })
    }

    /// Build from dense coefficients. `a` is symmetrized as `(A + Aᵀ)/2`;
    /// asymmetry beyond [`ASYMMETRY_TOLERANCE`] (relative to the largest
    /// absolute entry) is rejected rather than silently averaged away.
    pub fn from_dense(a: DMatrix<f64>, b: DMatrix<f64>, c: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "quadratic coefficient must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let asym = (&a - a.transpose())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        if asym > ASYMMETRY_TOLERANCE * scale {
            return Err(Error::InvalidArgument(format!(
                "quadratic coefficient asymmetry {asym:.3e} exceeds {ASYMMETRY_TOLERANCE:.0e} relative tolerance"
            )));
        }
        let sym = (&a + a.transpose()) * 0.5;
        QuadForm::new(
            SymMatrix::from_dense(sym)?,
            RectMatrix::from_dense(b),
            c,
        )
    }

    /// Linear function `2tr{BᵀY} + c` (zero quadratic part).
    pub fn linear(b: RectMatrix, c: f64) -> Self {
        let (n, _) = b.shape();
        QuadForm {
            a: SymMatrix::zeros(n),
            b,
            c,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.a.is_zero()
    }

    /// `q(Y)`.
    pub fn eval(&self, y: &DMatrix<f64>) -> f64 {
        self.a.quad_form(y) + 2.0 * self.b.dot(y) + self.c
    }

    /// `∇q(Y) = 2(AY + B)`.
    pub fn grad(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = self.a.matvec(y);
        self.b.add_scaled_to_dense(&mut g, 1.0);
        g * 2.0
    }

    /// Lifted evaluation `q̄(Y, X) = tr{AX} + 2tr{BᵀY} + c`.
    pub fn eval_lifted(&self, p: &LiftedPoint) -> f64 {
        let mut acc = 0.0;
        for (i, j, v) in self.a.iter_upper() {
            acc += if i == j {
                v * p.x[(i, j)]
            } else {
                2.0 * v * p.x[(i, j)]
            };
        }
        acc + 2.0 * self.b.dot(&p.y) + self.c
    }
}

/// Index of a constraint within an instance: equalities and inequalities
/// keep separate lists, and analysis code refers to members of either.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConIndex {
    Eq(usize),
    Ineq(usize),
}

impl std::fmt::Display for ConIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConIndex::Eq(k) => write!(f, "eq[{k}]"),
            ConIndex::Ineq(k) => write!(f, "ineq[{k}]"),
        }
    }
}

/// Optional per-row bounds `lower ≤ y ≤ upper`, meaningful only for vector
/// instances (`m == 1`). Infinite entries mean "unbounded on that side".
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// A quadratically-constrained quadratic program over `Y ∈ ℝ^{n×m}`.
#[derive(Clone, Debug, PartialEq)]
pub struct QcqpInstance {
    pub n: usize,
    pub m: usize,
    pub objective: QuadForm,
    pub equalities: Vec<QuadForm>,
    pub inequalities: Vec<QuadForm>,
    pub bounds: Option<Bounds>,
}

impl QcqpInstance {
    pub fn new(
        n: usize,
        m: usize,
        objective: QuadForm,
        equalities: Vec<QuadForm>,
        inequalities: Vec<QuadForm>,
        bounds: Option<Bounds>,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "instance dimensions must be positive".into(),
            ));
        }
        let inst = QcqpInstance {
            n,
            m,
            objective,
            equalities,
            inequalities,
            bounds,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let check = |q: &QuadForm, what: &str| -> Result<()> {
            if q.a.dim() != self.n || q.b.shape() != (self.n, self.m) {
                return Err(Error::DimensionMismatch(format!(
                    "{what} has coefficient shapes A:{0}x{0}, B:{1}x{2}; expected {3}x{3} and {3}x{4}",
                    q.a.dim(),
                    q.b.shape().0,
                    q.b.shape().1,
                    self.n,
                    self.m
                )));
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (k, q) in self.equalities.iter().enumerate() {
            check(q, &format!("equality {k}"))?;
        }
        for (k, q) in self.inequalities.iter().enumerate() {
            check(q, &format!("inequality {k}"))?;
        }
        if let Some(b) = &self.bounds {
            if self.m != 1 {
                return Err(Error::InvalidArgument(
                    "per-variable bounds require a vector instance (m = 1)".into(),
                ));
            }
            if b.lower.len() != self.n || b.upper.len() != self.n {
                return Err(Error::DimensionMismatch(format!(
                    "bounds have lengths {}/{}, expected {}",
                    b.lower.len(),
                    b.upper.len(),
                    self.n
                )));
            }
            for i in 0..self.n {
                if b.lower[i] > b.upper[i] {
                    return Err(Error::InvalidArgument(format!(
                        "bound row {i} has lower {} > upper {}",
                        b.lower[i], b.upper[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_constraints(&self) -> usize {
        self.equalities.len() + self.inequalities.len()
    }

    pub fn constraint(&self, k: ConIndex) -> &QuadForm {
        match k {
            ConIndex::Eq(i) => &self.equalities[i],
            ConIndex::Ineq(i) => &self.inequalities[i],
        }
    }

    /// All constraint indices, equalities first.
    pub fn constraint_indices(&self) -> Vec<ConIndex> {
        (0..self.equalities.len())
            .map(ConIndex::Eq)
            .chain((0..self.inequalities.len()).map(ConIndex::Ineq))
            .collect()
    }

    /// Largest constraint violation at `Y`: `max(|q_k| for k ∈ E,
    /// max(q_k, 0) for k ∈ I, bound violations)`. Zero means feasible.
    pub fn feasibility_residual(&self, y: &DMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for q in &self.equalities {
            worst = worst.max(q.eval(y).abs());
        }
        for q in &self.inequalities {
            worst = worst.max(q.eval(y).max(0.0));
        }
        if let Some(b) = &self.bounds {
            for i in 0..self.n {
                worst = worst.max(b.lower[i] - y[(i, 0)]);
                worst = worst.max(y[(i, 0)] - b.upper[i]);
            }
        }
        worst
    }

    /// Copy of the instance with finite bounds re-expressed as linear
    /// inequality rows (`lᵢ − yᵢ ≤ 0`, `yᵢ − uᵢ ≤ 0`) and the bounds field
    /// cleared. Local search and analysis operate on `E ∪ I` only, so this
    /// makes bounded instances visible to them.
    pub fn with_bounds_as_rows(&self) -> QcqpInstance {
        let Some(b) = &self.bounds else {
            return self.clone();
        };
        let mut out = self.clone();
        out.bounds = None;
        for i in 0..self.n {
            if b.lower[i].is_finite() {
                let lin =
                    RectMatrix::from_triplets(self.n, 1, &[(i, 0, -0.5)]).expect("in range");
                out.inequalities.push(QuadForm::linear(lin, b.lower[i]));
            }
            if b.upper[i].is_finite() {
                let lin = RectMatrix::from_triplets(self.n, 1, &[(i, 0, 0.5)]).expect("in range");
                out.inequalities.push(QuadForm::linear(lin, -b.upper[i]));
            }
        }
        out
    }
}

/// A point of the lifted space: `Y ∈ ℝ^{n×m}` together with the symmetric
/// matrix `X` standing in for `Y Yᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPoint {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl LiftedPoint {
    /// Exact lift `X = Y Yᵀ`.
    pub fn lift(y: &DMatrix<f64>) -> Self {
        let x = y * y.transpose();
        LiftedPoint { y: y.clone(), x }
    }

    /// `tr{X − Y Yᵀ}`: zero exactly when the lift is exact on the diagonal,
    /// and the quantity whose vanishing certifies rank-consistency of a
    /// relaxation solution.
    pub fn rank_gap(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.y.nrows() {
            let row_sq: f64 = (0..self.y.ncols()).map(|c| self.y[(i, c)].powi(2)).sum();
            acc += self.x[(i, i)] - row_sq;
        }
        acc
    }
}

/// `(induced 1-norm, spectral norm)` of a symmetric coefficient matrix.
pub fn matrix_norms(a: &SymMatrix) -> (f64, f64) {
    (a.norm_1_induced(), a.norm_2_spectral())
}

/// Column-major flattening of `Y` (the convention used for constraint
/// Jacobians).
pub fn vec_col_major(y: &DMatrix<f64>) -> Vec<f64> {
    y.as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense_form(n: usize, m: usize, rng: &mut ChaCha8Rng) -> QuadForm {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = (&raw + raw.transpose()) * 0.5;
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        QuadForm::from_dense(a, b, rng.random_range(-1.0..1.0)).unwrap()
    }

    /// Scalar triple-loop evaluation oracle, independent of the storage and
    /// linear-algebra paths used by `eval`.
    fn eval_oracle(q: &QuadForm, y: &DMatrix<f64>) -> f64 {
        let a = q.a.to_dense();
        let b = q.b.to_dense();
        let (n, m) = (y.nrows(), y.ncols());
        let mut acc = q.c;
        for i in 0..n {
            for j in 0..n {
                for c in 0..m {
                    acc += a[(i, j)] * y[(i, c)] * y[(j, c)];
                }
            }
        }
        for r in 0..n {
            for c in 0..m {
                acc += 2.0 * b[(r, c)] * y[(r, c)];
            }
        }
        acc
    }

    #[test]
    fn eval_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..100 {
            let n = rng.random_range(1..7);
            let m = rng.random_range(1..4);
            let q = random_dense_form(n, m, &mut rng);
            let y = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
            let got = q.eval(&y);
            let want = eval_oracle(&q, &y);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "eval {got} vs oracle {want}"
            );

            // Sparse-storage route must agree bit-for-bit in semantics.
            let entries: Vec<_> = q.a.iter_upper().collect();
            let sparse = QuadForm::new(
                SymMatrix::from_triplets(n, &entries).unwrap(),
                q.b.clone(),
                q.c,
            )
            .unwrap();
            assert!((sparse.eval(&y) - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let h = 1e-6;
        for _ in 0..100 {
            let n = rng.random_range(1..6);
            let m = rng.random_range(1..4);
            let q = random_dense_form(n, m, &mut rng);
            let y = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
            let g = q.grad(&y);
            for r in 0..n {
                for c in 0..m {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[(r, c)] += h;
                    ym[(r, c)] -= h;
                    let fd = (q.eval(&yp) - q.eval(&ym)) / (2.0 * h);
                    let scale = g[(r, c)].abs().max(1.0);
                    assert!(
                        (g[(r, c)] - fd).abs() <= 1e-6 * scale,
                        "grad[{r},{c}] = {} vs fd {fd}",
                        g[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn lifting_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        for _ in 0..200 {
            let n = rng.random_range(1..7);
            let m = rng.random_range(1..4);
            let q = random_dense_form(n, m, &mut rng);
            let y = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
            let lifted = LiftedPoint::lift(&y);
            let a = q.eval(&y);
            let b = q.eval_lifted(&lifted);
            assert!(
                (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                "eval {a} vs lifted {b}"
            );
            assert!(lifted.rank_gap().abs() <= 1e-12 * (1.0 + y.norm_squared()));
        }
    }

    #[test]
    fn asymmetric_input_is_rejected_but_roundoff_passes() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::zeros(2, 1);
        a[(0, 1)] += 1e-6;
        assert!(matches!(
            QuadForm::from_dense(a.clone(), b.clone(), 0.0),
            Err(Error::InvalidArgument(_))
        ));
        a[(0, 1)] = 0.5 + 1e-14;
        let q = QuadForm::from_dense(a, b, 0.0).unwrap();
        // Stored value is the average of the two off-diagonal entries.
        assert!((q.a.get(0, 1) - (0.5 + 5e-15)).abs() < 1e-16);
    }

    #[test]
    fn rank_gap_reads_diagonal_excess() {
        let y = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        let mut p = LiftedPoint::lift(&y);
        assert_eq!(p.rank_gap(), 0.0);
        p.x[(0, 0)] += 0.25;
        p.x[(2, 2)] += 0.5;
        assert!((p.rank_gap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn feasibility_residual_unit_circle() {
        // q(y) = ‖y‖² − 1 = 0.
        let q = QuadForm::from_dense(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), -1.0).unwrap();
        let inst = QcqpInstance::new(2, 1, q.clone(), vec![q], vec![], None).unwrap();
        let on = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let origin = DMatrix::zeros(2, 1);
        assert!(inst.feasibility_residual(&on).abs() < 1e-15);
        assert!((inst.feasibility_residual(&origin) - 1.0).abs() < 1e-15);
    }

    /// Perturbation inequalities used throughout the analysis module: for
    /// 1000 random triples (q, Y₁, Y₂),
    ///   |q(Y₁) − q(Y₂)| ≤ ‖A‖₂‖Y₁−Y₂‖² + ‖∇q(Y₂)‖‖Y₁−Y₂‖
    ///   |‖∇q(Y₁)‖ − ‖∇q(Y₂)‖| ≤ 2‖A‖₂‖Y₁−Y₂‖
    #[test]
    fn perturbation_envelopes_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let m = rng.random_range(1..3);
            let q = random_dense_form(n, m, &mut rng);
            let y1 = DMatrix::from_fn(n, m, |_, _| rng.random_range(-3.0..3.0));
            let y2 = DMatrix::from_fn(n, m, |_, _| rng.random_range(-3.0..3.0));
            let d = (&y1 - &y2).norm();
            let a2 = q.a.norm_2_spectral();
            let lhs_val = (q.eval(&y1) - q.eval(&y2)).abs();
            let rhs_val = a2 * d * d + q.grad(&y2).norm() * d;
            assert!(
                lhs_val <= rhs_val * (1.0 + 1e-9) + 1e-12,
                "value envelope: {lhs_val} > {rhs_val}"
            );
            let lhs_grad = (q.grad(&y1).norm() - q.grad(&y2).norm()).abs();
            let rhs_grad = 2.0 * a2 * d;
            assert!(
                lhs_grad <= rhs_grad * (1.0 + 1e-9) + 1e-12,
                "gradient envelope: {lhs_grad} > {rhs_grad}"
            );
        }
    }

    #[test]
    fn bounds_validation() {
        let q = QuadForm::from_dense(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), 0.0).unwrap();
        let bad = Bounds {
            lower: vec![1.0, 0.0],
            upper: vec![0.0, 1.0],
        };
        assert!(QcqpInstance::new(2, 1, q.clone(), vec![], vec![], Some(bad)).is_err());

        let q2 = QuadForm::from_dense(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), 0.0).unwrap();
        let b = Bounds {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        // Bounds on a matrix-variable instance are rejected.
        assert!(QcqpInstance::new(2, 2, q2, vec![], vec![], Some(b)).is_err());
    }

    #[test]
    fn bounds_as_rows_match_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let q = random_dense_form(3, 1, &mut rng);
        let inst = QcqpInstance::new(
            3,
            1,
            q,
            vec![],
            vec![],
            Some(Bounds {
                lower: vec![-1.0, f64::NEG_INFINITY, 0.0],
                upper: vec![1.0, 2.0, f64::INFINITY],
            }),
        )
        .unwrap();
        let converted = inst.with_bounds_as_rows();
        assert_eq!(converted.inequalities.len(), 4);
        for _ in 0..50 {
            let y = DMatrix::from_fn(3, 1, |_, _| rng.random_range(-3.0..3.0));
            let a = inst.feasibility_residual(&y);
            let b = converted.feasibility_residual(&y);
            assert!((a - b).abs() < 1e-12, "residuals {a} vs {b}");
        }
    }
}
