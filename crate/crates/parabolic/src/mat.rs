//! Matrix storage shared by instance types and the cone encoder.
//!
//! Quadratic-coefficient matrices are symmetric and frequently very sparse
//! (a bilinear constraint touches two rows of the matrix variable), while
//! small dense instances are more convenient to build and inspect as full
//! arrays. Both live behind [`SymMatrix`] / [`RectMatrix`]: dense storage for
//! small dimensions, sorted-triplet storage beyond, with identical semantics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dimension boundary of the default storage policy: constraint matrices at or
/// below this dimension are held dense, larger ones as sorted triplets.
pub const DENSE_STORAGE_LIMIT: usize = 256;

/// Symmetric `dim × dim` coefficient matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum SymMatrix {
    /// Full symmetric array.
    Dense(DMatrix<f64>),
    /// Upper-triangle triplets `(i, j, v)` with `i <= j`, sorted by `(i, j)`,
    /// no duplicates, no explicit zeros. Each off-diagonal triplet implies the
    /// mirrored entry.
    Sparse {
        dim: usize,
        triplets: Vec<(usize, usize, f64)>,
    },
}

impl SymMatrix {
    /// Zero matrix in sparse form.
    pub fn zeros(dim: usize) -> Self {
        SymMatrix::Sparse {
            dim,
            triplets: Vec::new(),
        }
    }

    /// Dense storage of an already-symmetric matrix. The input is trusted;
    /// use [`crate::qcqp::QuadForm::from_dense`] for symmetry checking of
    /// user-provided data.
    pub fn from_dense(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(SymMatrix::Dense(a))
    }

    /// Build from upper-triangle triplets. Entries with `i > j` are folded to
    /// `(j, i)`; duplicates are summed; exact zeros are dropped.
    pub fn from_triplets(dim: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut normalized: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(i, j, v) in entries {
            if i >= dim || j >= dim {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({i}, {j}) out of range for dimension {dim}"
                )));
            }
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            normalized.push((i, j, v));
        }
        normalized.sort_by_key(|&(i, j, _)| (i, j));
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(normalized.len());
        for (i, j, v) in normalized {
            match triplets.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => triplets.push((i, j, v)),
            }
        }
        triplets.retain(|&(_, _, v)| v != 0.0);
        Ok(SymMatrix::Sparse { dim, triplets })
    }

    /// Convert to the storage the default policy prescribes for this
    /// dimension (dense at or below [`DENSE_STORAGE_LIMIT`]).
    pub fn with_default_storage(self) -> Self {
        match &self {
            SymMatrix::Dense(a) if a.nrows() > DENSE_STORAGE_LIMIT => {
                let entries: Vec<_> = self.iter_upper().collect();
                let dim = self.dim();
                SymMatrix::from_triplets(dim, &entries).expect("entries from a valid matrix")
            }
            SymMatrix::Sparse { dim, .. } if *dim <= DENSE_STORAGE_LIMIT => {
                SymMatrix::Dense(self.to_dense())
            }
            _ => self,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Dense(a) => a.nrows(),
            SymMatrix::Sparse { dim, .. } => *dim,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SymMatrix::Dense(a) => a.iter().all(|&v| v == 0.0),
            SymMatrix::Sparse { triplets, .. } => triplets.is_empty(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match self {
            SymMatrix::Dense(a) => a[(i, j)],
            SymMatrix::Sparse { triplets, .. } => triplets
                .binary_search_by_key(&(i, j), |&(r, c, _)| (r, c))
                .map(|pos| triplets[pos].2)
                .unwrap_or(0.0),
        }
    }

    /// Iterate the upper triangle (`i <= j`), skipping zero entries, in
    /// row-major order.
    pub fn iter_upper(&self) -> Box<dyn Iterator<Item = (usize, usize, f64)> + '_> {
        match self {
            SymMatrix::Dense(a) => {
                let n = a.nrows();
                Box::new((0..n).flat_map(move |i| {
                    (i..n).filter_map(move |j| {
                        let v = a[(i, j)];
                        (v != 0.0).then_some((i, j, v))
                    })
                }))
            }
            SymMatrix::Sparse { triplets, .. } => Box::new(triplets.iter().copied()),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Dense(a) => a.clone(),
            SymMatrix::Sparse { dim, triplets } => {
                let mut out = DMatrix::zeros(*dim, *dim);
                for &(i, j, v) in triplets {
                    out[(i, j)] = v;
                    if i != j {
                        out[(j, i)] = v;
                    }
                }
                out
            }
        }
    }

    /// `tr{Yᵀ A Y}` for an `n × m` matrix `Y`.
    pub fn quad_form(&self, y: &DMatrix<f64>) -> f64 {
        debug_assert_eq!(y.nrows(), self.dim());
        match self {
            SymMatrix::Dense(a) => {
                let ay = a * y;
                y.iter().zip(ay.iter()).map(|(u, v)| u * v).sum()
            }
            SymMatrix::Sparse { triplets, .. } => {
                let mut acc = 0.0;
                for &(i, j, v) in triplets {
                    let dot: f64 = (0..y.ncols()).map(|c| y[(i, c)] * y[(j, c)]).sum();
                    acc += if i == j { v * dot } else { 2.0 * v * dot };
                }
                acc
            }
        }
    }

    /// `A · Y` for an `n × m` matrix `Y`.
    pub fn matvec(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(y.nrows(), self.dim());
        match self {
            SymMatrix::Dense(a) => a * y,
            SymMatrix::Sparse { dim, triplets } => {
                let mut out = DMatrix::zeros(*dim, y.ncols());
                for &(i, j, v) in triplets {
                    for c in 0..y.ncols() {
                        out[(i, c)] += v * y[(j, c)];
                        if i != j {
                            out[(j, c)] += v * y[(i, c)];
                        }
                    }
                }
                out
            }
        }
    }

    fn matvec_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            SymMatrix::Dense(a) => a * v,
            SymMatrix::Sparse { dim, triplets } => {
                let mut out = DVector::zeros(*dim);
                for &(i, j, w) in triplets {
                    out[i] += w * v[j];
                    if i != j {
                        out[j] += w * v[i];
                    }
                }
                out
            }
        }
    }

    /// Induced 1-norm: largest absolute row sum.
    pub fn norm_1_induced(&self) -> f64 {
        match self {
            SymMatrix::Dense(a) => (0..a.nrows())
                .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
                .fold(0.0, f64::max),
            SymMatrix::Sparse { dim, triplets } => {
                let mut sums = vec![0.0f64; *dim];
                for &(i, j, v) in triplets {
                    sums[i] += v.abs();
                    if i != j {
                        sums[j] += v.abs();
                    }
                }
                sums.into_iter().fold(0.0, f64::max)
            }
        }
    }

    /// Spectral norm (largest absolute eigenvalue) via power iteration on
    /// `A²`, falling back to a dense symmetric eigensolve if the iteration
    /// stalls on a near-tied spectrum.
    pub fn norm_2_spectral(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let n = self.dim();
        if n == 1 {
            return self.get(0, 0).abs();
        }
        // Deterministic start with nonzero overlap against generic eigenbases.
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 1e-3 * (i as f64 + 1.0));
        v /= v.norm();
        let mut lambda_sq = 0.0f64;
        let mut stable = 0;
        for _ in 0..2_000 {
            let u = self.matvec_vec(&self.matvec_vec(&v)); // A² v
            let rq = v.dot(&u);
            let norm_u = u.norm();
            if norm_u == 0.0 {
                // v sits in the null space of A²; perturb deterministically.
                v = DVector::from_fn(n, |i, _| ((i * 2654435761 + 1) % 1000) as f64 / 1000.0 + 0.5);
                v /= v.norm();
                continue;
            }
            if (rq - lambda_sq).abs() <= 1e-13 * rq.max(f64::MIN_POSITIVE) {
                stable += 1;
                if stable >= 2 {
                    return rq.max(0.0).sqrt();
                }
            } else {
                stable = 0;
            }
            lambda_sq = rq;
            v = u / norm_u;
        }
        // Near-tied |λ|: the value estimate is already close, but settle it
        // exactly for dimensions where a dense solve is affordable.
        if n <= 1024 {
            let eig = self.to_dense().symmetric_eigen();
            eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max)
        } else {
            lambda_sq.max(0.0).sqrt()
        }
    }

    /// Accumulate `out += s · A` into a dense matrix.
    pub fn add_scaled_to_dense(&self, out: &mut DMatrix<f64>, s: f64) {
        debug_assert_eq!(out.nrows(), self.dim());
        match self {
            SymMatrix::Dense(a) => {
                out.zip_apply(a, |o, v| *o += s * v);
            }
            SymMatrix::Sparse { triplets, .. } => {
                for &(i, j, v) in triplets {
                    out[(i, j)] += s * v;
                    if i != j {
                        out[(j, i)] += s * v;
                    }
                }
            }
        }
    }

    /// Same matrix scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        match self {
            SymMatrix::Dense(a) => SymMatrix::Dense(a * s),
            SymMatrix::Sparse { dim, triplets } => SymMatrix::Sparse {
                dim: *dim,
                triplets: triplets
                    .iter()
                    .map(|&(i, j, v)| (i, j, s * v))
                    .filter(|&(_, _, v)| v != 0.0)
                    .collect(),
            },
        }
    }

    /// Number of stored structural nonzeros in the upper triangle.
    pub fn nnz_upper(&self) -> usize {
        self.iter_upper().count()
    }
}

/// Rectangular `nrows × ncols` coefficient matrix (linear terms).
#[derive(Clone, Debug, PartialEq)]
pub enum RectMatrix {
    Dense(DMatrix<f64>),
    /// Triplets `(r, c, v)` sorted by `(r, c)`, no duplicates, no zeros.
    Sparse {
        nrows: usize,
        ncols: usize,
        triplets: Vec<(usize, usize, f64)>,
    },
}

impl RectMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        RectMatrix::Sparse {
            nrows,
            ncols,
            triplets: Vec::new(),
        }
    }

    pub fn from_dense(b: DMatrix<f64>) -> Self {
        RectMatrix::Dense(b)
    }

    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted = entries.to_vec();
        for &(r, c, _) in &sorted {
            if r >= nrows || c >= ncols {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({r}, {c}) out of range for {nrows}x{ncols}"
                )));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match triplets.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => triplets.push((r, c, v)),
            }
        }
        triplets.retain(|&(_, _, v)| v != 0.0);
        Ok(RectMatrix::Sparse {
            nrows,
            ncols,
            triplets,
        })
    }

    pub fn with_default_storage(self) -> Self {
        match &self {
            RectMatrix::Dense(b) if b.nrows() > DENSE_STORAGE_LIMIT => {
                let (nrows, ncols) = self.shape();
                let entries: Vec<_> = self.iter().collect();
                RectMatrix::from_triplets(nrows, ncols, &entries).expect("valid entries")
            }
            RectMatrix::Sparse { nrows, .. } if *nrows <= DENSE_STORAGE_LIMIT => {
                RectMatrix::Dense(self.to_dense())
            }
            _ => self,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            RectMatrix::Dense(b) => (b.nrows(), b.ncols()),
            RectMatrix::Sparse { nrows, ncols, .. } => (*nrows, *ncols),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            RectMatrix::Dense(b) => b.iter().all(|&v| v == 0.0),
            RectMatrix::Sparse { triplets, .. } => triplets.is_empty(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        match self {
            RectMatrix::Dense(b) => b[(r, c)],
            RectMatrix::Sparse { triplets, .. } => triplets
                .binary_search_by_key(&(r, c), |&(i, j, _)| (i, j))
                .map(|pos| triplets[pos].2)
                .unwrap_or(0.0),
        }
    }

    /// Iterate nonzero entries `(r, c, v)` in row-major order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (usize, usize, f64)> + '_> {
        match self {
            RectMatrix::Dense(b) => {
                let (nr, nc) = (b.nrows(), b.ncols());
                Box::new((0..nr).flat_map(move |r| {
                    (0..nc).filter_map(move |c| {
                        let v = b[(r, c)];
                        (v != 0.0).then_some((r, c, v))
                    })
                }))
            }
            RectMatrix::Sparse { triplets, .. } => Box::new(triplets.iter().copied()),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            RectMatrix::Dense(b) => b.clone(),
            RectMatrix::Sparse {
                nrows,
                ncols,
                triplets,
            } => {
                let mut out = DMatrix::zeros(*nrows, *ncols);
                for &(r, c, v) in triplets {
                    out[(r, c)] = v;
                }
                out
            }
        }
    }

    /// Frobenius inner product `Σ B_rc · Y_rc`.
    pub fn dot(&self, y: &DMatrix<f64>) -> f64 {
        debug_assert_eq!(self.shape(), (y.nrows(), y.ncols()));
        match self {
            RectMatrix::Dense(b) => b.iter().zip(y.iter()).map(|(u, v)| u * v).sum(),
            RectMatrix::Sparse { triplets, .. } => {
                triplets.iter().map(|&(r, c, v)| v * y[(r, c)]).sum()
            }
        }
    }

    pub fn add_scaled_to_dense(&self, out: &mut DMatrix<f64>, s: f64) {
        debug_assert_eq!(self.shape(), (out.nrows(), out.ncols()));
        match self {
            RectMatrix::Dense(b) => out.zip_apply(b, |o, v| *o += s * v),
            RectMatrix::Sparse { triplets, .. } => {
                for &(r, c, v) in triplets {
                    out[(r, c)] += s * v;
                }
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            RectMatrix::Dense(b) => b.norm(),
            RectMatrix::Sparse { triplets, .. } => triplets
                .iter()
                .map(|&(_, _, v)| v * v)
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            RectMatrix::Dense(b) => RectMatrix::Dense(b * s),
            RectMatrix::Sparse {
                nrows,
                ncols,
                triplets,
            } => RectMatrix::Sparse {
                nrows: *nrows,
                ncols: *ncols,
                triplets: triplets
                    .iter()
                    .map(|&(r, c, v)| (r, c, s * v))
                    .filter(|&(_, _, v)| v != 0.0)
                    .collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&raw + raw.transpose()) * 0.5
    }

    #[test]
    fn sparse_and_dense_storage_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let dense = random_symmetric(n, &mut rng);
            let sym_dense = SymMatrix::from_dense(dense.clone()).unwrap();
            let entries: Vec<_> = sym_dense.iter_upper().collect();
            let sym_sparse = SymMatrix::from_triplets(n, &entries).unwrap();

            let y = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            assert!((sym_dense.quad_form(&y) - sym_sparse.quad_form(&y)).abs() < 1e-12);
            assert_eq!(sym_sparse.to_dense(), dense);
            assert!((sym_dense.matvec(&y) - sym_sparse.matvec(&y)).norm() < 1e-12);
            assert!((sym_dense.norm_1_induced() - sym_sparse.norm_1_induced()).abs() < 1e-14);
            let n2d = sym_dense.norm_2_spectral();
            let n2s = sym_sparse.norm_2_spectral();
            assert!((n2d - n2s).abs() <= 1e-9 * n2d.max(1.0));
        }
    }

    #[test]
    fn triplet_normalization_folds_and_sums() {
        // (1,0) folds to (0,1); duplicates sum; exact zeros drop.
        let m = SymMatrix::from_triplets(2, &[(1, 0, 2.0), (0, 1, 3.0), (0, 0, 0.0)]).unwrap();
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.get(1, 0), 5.0);
        assert_eq!(m.nnz_upper(), 1);
    }

    #[test]
    fn spectral_norm_matches_eigensolve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let n = rng.random_range(2..9);
            let a = random_symmetric(n, &mut rng);
            let sym = SymMatrix::from_dense(a.clone()).unwrap();
            let oracle = a
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .map(|l| l.abs())
                .fold(0.0, f64::max);
            let got = sym.norm_2_spectral();
            assert!(
                (got - oracle).abs() <= 1e-9 * oracle.max(1.0),
                "norm2 {got} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn spectral_norm_handles_sign_ties() {
        // Eigenvalues ±5 have equal magnitude; the squared iteration must not
        // stall on the alternating sign.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]);
        let sym = SymMatrix::from_dense(a).unwrap();
        assert!((sym.norm_2_spectral() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn induced_norm_example() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let sym = SymMatrix::from_dense(a).unwrap();
        assert_eq!(sym.norm_1_induced(), 3.0);
        assert!((sym.norm_2_spectral() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn rect_matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = DMatrix::from_fn(4, 3, |_, _| {
            if rng.random_bool(0.5) {
                rng.random_range(-2.0..2.0)
            } else {
                0.0
            }
        });
        let dense = RectMatrix::from_dense(b.clone());
        let entries: Vec<_> = dense.iter().collect();
        let sparse = RectMatrix::from_triplets(4, 3, &entries).unwrap();
        assert_eq!(sparse.to_dense(), b);
        let y = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        assert!((dense.dot(&y) - sparse.dot(&y)).abs() < 1e-12);
        assert!((dense.frobenius_norm() - sparse.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn default_storage_policy_boundary() {
        let small = SymMatrix::from_triplets(4, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            small.with_default_storage(),
            SymMatrix::Dense(_)
        ));
        let big_dim = DENSE_STORAGE_LIMIT + 1;
        let big = SymMatrix::from_dense(DMatrix::identity(big_dim, big_dim)).unwrap();
        assert!(matches!(
            big.with_default_storage(),
            SymMatrix::Sparse { .. }
        ));
    }
}
