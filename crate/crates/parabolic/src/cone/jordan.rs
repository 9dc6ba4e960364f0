//! Composite symmetric-cone arithmetic for the interior-point solver.
//!
//! The slack cone is `K = ℝ₊^ℓ × Q_{d₁} × … × Q_{dₚ}` where each `Q_d` is a
//! second-order cone `{v ∈ ℝ^d : v₀ ≥ ‖v₁..‖}`. Vectors over `K` are stored
//! flat; this module provides the Jordan products, interiority margins, step
//! lengths, and the Nesterov–Todd scaling that links a primal-dual pair
//! `(s, z)` through `W z = W⁻¹ s = λ`.

use nalgebra::DVector;

/// Block structure of the composite cone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConeLayout {
    /// Leading nonnegative-orthant length.
    pub nonneg: usize,
    /// Second-order cone dimensions, in order after the orthant.
    pub soc: Vec<usize>,
}

impl ConeLayout {
    pub fn total_dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree: one per orthant coordinate, one per quadratic cone.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    /// Identity element `e` (all ones on the orthant, `(1, 0, …)` per cone).
    pub fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.total_dim());
        for i in 0..self.nonneg {
            e[i] = 1.0;
        }
        let mut off = self.nonneg;
        for &d in &self.soc {
            e[off] = 1.0;
            off += d;
        }
        e
    }

    /// Offsets of each SOC block into the flat vector.
    pub fn soc_offsets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut off = self.nonneg;
        self.soc.iter().map(move |&d| {
            let cur = (off, d);
            off += d;
            cur
        })
    }

    /// Minimum interiority margin: orthant entries themselves, and
    /// `v₀ − ‖v₁..‖` per quadratic cone. Positive iff strictly interior.
    pub fn min_margin(&self, v: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.nonneg {
            m = m.min(v[i]);
        }
        for (off, d) in self.soc_offsets() {
            let head = v[off];
            let tail = v.rows(off + 1, d - 1).norm();
            m = m.min(head - tail);
        }
        m
    }

    /// Jordan product `u ∘ v` blockwise.
    pub fn product(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_dim());
        for i in 0..self.nonneg {
            out[i] = u[i] * v[i];
        }
        for (off, d) in self.soc_offsets() {
            let (u0, v0) = (u[off], v[off]);
            let mut dot = u0 * v0;
            for k in 1..d {
                dot += u[off + k] * v[off + k];
            }
            out[off] = dot;
            for k in 1..d {
                out[off + k] = u0 * v[off + k] + v0 * u[off + k];
            }
        }
        out
    }

    /// Solve `λ ∘ u = d` for `u` (`λ` strictly interior).
    pub fn arrow_solve(&self, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_dim());
        for i in 0..self.nonneg {
            out[i] = d[i] / lambda[i];
        }
        for (off, dim) in self.soc_offsets() {
            let l0 = lambda[off];
            let mut l1_norm2 = 0.0;
            let mut l1_dot_d1 = 0.0;
            for k in 1..dim {
                l1_norm2 += lambda[off + k] * lambda[off + k];
                l1_dot_d1 += lambda[off + k] * d[off + k];
            }
            let det = l0 * l0 - l1_norm2;
            let u0 = (l0 * d[off] - l1_dot_d1) / det;
            out[off] = u0;
            for k in 1..dim {
                out[off + k] = (d[off + k] - u0 * lambda[off + k]) / l0;
            }
        }
        out
    }

    /// Largest `α ≥ 0` with `v + α·dv` in the closed cone (∞ if unbounded).
    pub fn max_step(&self, v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.nonneg {
            if dv[i] < 0.0 {
                alpha = alpha.min(-v[i] / dv[i]);
            }
        }
        for (off, d) in self.soc_offsets() {
            // J(v + α dv) = aα² + bα + c with c = J(v) > 0 on interior
            // points; the step is bounded by the smallest positive root,
            // plus the explicit head guard v₀ + α dv₀ ≥ 0.
            let jv = |p: &DVector<f64>, q: &DVector<f64>| {
                let mut acc = p[off] * q[off];
                for k in 1..d {
                    acc -= p[off + k] * q[off + k];
                }
                acc
            };
            let a = jv(dv, dv);
            let b = 2.0 * jv(v, dv);
            let c = jv(v, v);
            if let Some(r) = smallest_positive_root(a, b, c) {
                alpha = alpha.min(r);
            }
            if dv[off] < 0.0 {
                alpha = alpha.min(-v[off] / dv[off]);
            }
        }
        alpha
    }
}

/// Smallest strictly positive root of `aα² + bα + c = 0`, if any.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let eps = 1e-300;
    if a.abs() <= eps {
        if b.abs() <= eps {
            return None;
        }
        let r = -c / b;
        return (r > 0.0).then_some(r);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Citardauq-stable pairing of roots.
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = [q / a, if q.abs() <= eps { f64::NAN } else { c / q }];
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    roots
        .into_iter()
        .find(|r| r.is_finite() && *r > 0.0)
}

/// Nesterov–Todd scaling state for one `(s, z)` interior pair: a linear map
/// `W` with `W z = W⁻¹ s = λ`.
pub struct NtScaling {
    layout: ConeLayout,
    /// Orthant: `w_i = √(s_i / z_i)`.
    orthant_w: Vec<f64>,
    /// Per SOC block: `(η, w̄)` with `w̄ᵀ J w̄ = 1`. The block scaling is
    /// `W = η·[[w̄₀, w̄₁ᵀ], [w̄₁, I + w̄₁w̄₁ᵀ/(1+w̄₀)]]`, the symmetric square
    /// root of `η²(2w̄w̄ᵀ − J)`; its inverse swaps `w̄₁ ↦ −w̄₁` and `η ↦ η⁻¹`.
    soc: Vec<(f64, DVector<f64>)>,
    lambda: DVector<f64>,
}

impl NtScaling {
    pub fn compute(layout: &ConeLayout, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut orthant_w = Vec::with_capacity(layout.nonneg);
        let mut lambda = DVector::zeros(layout.total_dim());
        for i in 0..layout.nonneg {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return None;
            }
            orthant_w.push((s[i] / z[i]).sqrt());
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        let mut soc = Vec::with_capacity(layout.soc.len());
        for (off, d) in layout.soc_offsets() {
            let jval = |p: &DVector<f64>| {
                let mut acc = p[off] * p[off];
                for k in 1..d {
                    acc -= p[off + k] * p[off + k];
                }
                acc
            };
            let js = jval(s);
            let jz = jval(z);
            if js <= 0.0 || jz <= 0.0 || s[off] <= 0.0 || z[off] <= 0.0 {
                return None;
            }
            let (rs, rz) = (js.sqrt(), jz.sqrt());
            // s̄ = s/√J(s), z̄ = z/√J(z), γ² = (1 + s̄ᵀz̄)/2,
            // w̄ = (s̄ + J z̄)/(2γ).
            let mut sbar_dot_zbar = s[off] / rs * (z[off] / rz);
            for k in 1..d {
                sbar_dot_zbar += (s[off + k] / rs) * (z[off + k] / rz);
            }
            let gamma = ((1.0 + sbar_dot_zbar) / 2.0).sqrt();
            let mut wbar = DVector::zeros(d);
            wbar[0] = (s[off] / rs + z[off] / rz) / (2.0 * gamma);
            for k in 1..d {
                wbar[k] = (s[off + k] / rs - z[off + k] / rz) / (2.0 * gamma);
            }
            let eta = (js / jz).powf(0.25);

            // λ block: λ = W z, computed directly.
            let lam = apply_soc_w(eta, &wbar, z, off, d, false);
            for k in 0..d {
                lambda[off + k] = lam[k];
            }
            soc.push((eta, wbar));
        }
        Some(NtScaling {
            layout: layout.clone(),
            orthant_w,
            soc,
            lambda,
        })
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// `W u`.
    pub fn apply_w(&self, u: &DVector<f64>) -> DVector<f64> {
        self.apply(u, false)
    }

    /// `W⁻¹ u`.
    pub fn apply_winv(&self, u: &DVector<f64>) -> DVector<f64> {
        self.apply(u, true)
    }

    /// `W⁻² u`, applied in one pass per block: orthant `u_i/w_i²`, SOC
    /// `η⁻²(2(Jw̄)((Jw̄)ᵀu) − Ju)`.
    pub fn apply_winv2(&self, u: &DVector<f64>) -> DVector<f64> {
        self.apply_squared(u, true)
    }

    /// `W² u`: orthant `u_i·w_i²`, SOC `η²(2w̄(w̄ᵀu) − Ju)`.
    pub fn apply_w2(&self, u: &DVector<f64>) -> DVector<f64> {
        self.apply_squared(u, false)
    }

    fn apply_squared(&self, u: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.total_dim());
        for i in 0..self.layout.nonneg {
            let w2 = self.orthant_w[i] * self.orthant_w[i];
            out[i] = if inverse { u[i] / w2 } else { u[i] * w2 };
        }
        let sgn = if inverse { -1.0 } else { 1.0 };
        for (bi, (off, d)) in self.layout.soc_offsets().enumerate() {
            let (eta, wbar) = &self.soc[bi];
            let scale = if inverse {
                1.0 / (eta * eta)
            } else {
                eta * eta
            };
            let mut dot = wbar[0] * u[off];
            for k in 1..d {
                dot += sgn * wbar[k] * u[off + k];
            }
            out[off] = scale * (2.0 * wbar[0] * dot - u[off]);
            for k in 1..d {
                out[off + k] = scale * (2.0 * sgn * wbar[k] * dot + u[off + k]);
            }
        }
        out
    }

    fn apply(&self, u: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.total_dim());
        for i in 0..self.layout.nonneg {
            out[i] = if inverse {
                u[i] / self.orthant_w[i]
            } else {
                u[i] * self.orthant_w[i]
            };
        }
        for (bi, (off, d)) in self.layout.soc_offsets().enumerate() {
            let (eta, wbar) = &self.soc[bi];
            let r = apply_soc_w(*eta, wbar, u, off, d, inverse);
            for k in 0..d {
                out[off + k] = r[k];
            }
        }
        out
    }

    /// Dense `W⁻²` of one SOC block (for the Schur-complement assembly):
    /// `W⁻² = η⁻²(2(Jw̄)(Jw̄)ᵀ − J)`.
    pub fn soc_winv2_dense(&self, block: usize) -> nalgebra::DMatrix<f64> {
        let (eta, wbar) = &self.soc[block];
        let d = wbar.len();
        let mut jw = wbar.clone();
        for k in 1..d {
            jw[k] = -jw[k];
        }
        let mut winv2 = &jw * jw.transpose() * 2.0;
        winv2[(0, 0)] -= 1.0;
        for k in 1..d {
            winv2[(k, k)] += 1.0;
        }
        winv2 / (eta * eta)
    }

    /// Orthant weights `w_i` (scaling is `diag(w)`).
    pub fn orthant_w(&self) -> &[f64] {
        &self.orthant_w
    }
}

/// Apply one SOC block's `W` (or `W⁻¹`) to the slice of `u` at `off`:
/// `W u = η·(w̄₀u₀ + w̄₁ᵀu₁, u₀w̄₁ + u₁ + w̄₁(w̄₁ᵀu₁)/(1+w̄₀))`.
fn apply_soc_w(
    eta: f64,
    wbar: &DVector<f64>,
    u: &DVector<f64>,
    off: usize,
    d: usize,
    inverse: bool,
) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    let sgn = if inverse { -1.0 } else { 1.0 };
    let w0 = wbar[0];
    let mut tail_dot = 0.0;
    for k in 1..d {
        tail_dot += wbar[k] * u[off + k];
    }
    v[0] = w0 * u[off] + sgn * tail_dot;
    let coef = sgn * u[off] + tail_dot / (1.0 + w0);
    for k in 1..d {
        v[k] = u[off + k] + coef * wbar[k];
    }
    let scale = if inverse { 1.0 / eta } else { eta };
    v * scale
}
