//! Reference dense primal-dual interior-point method.
//!
//! Solves `min cᵀx  s.t.  A x = b,  G x + s = h,  s ∈ K` with `K` an
//! orthant × second-order-cone product, using Nesterov–Todd scaling and a
//! Mehrotra predictor-corrector. Each iteration eliminates `(Δs, Δz)` and
//! factors the quasi-definite system
//!
//! ```text
//!     [ GᵀW⁻²G + εI   Aᵀ  ] [Δx]   [ rhs_x ]
//!     [ A            −εI  ] [Δy] = [ rhs_y ]
//! ```
//!
//! by dense LU with iterative refinement against the unregularized
//! operator. Every loop runs in a fixed order over plain vectors, so a
//! given program and settings reproduce the exact same iterates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::jordan::NtScaling;
use super::{SolveSettings, SolveStatus, StandardForm, StandardSolution};
#[cfg(test)]
use super::jordan::ConeLayout;

/// A full primal-dual iterate `(x, y, z, s)` with its primal/dual costs.
type Iterate = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, f64, f64);
/// Search directions `(Δx, Δy, Δz, Δs)`.
type Directions = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

/// Static regularization added to the KKT factorization.
const KKT_REG: f64 = 1e-9;
/// Fraction of the distance to the cone boundary taken each step.
const STEP_FRACTION: f64 = 0.99;
/// Rounds of iterative refinement per KKT solve.
const REFINE_ROUNDS: usize = 2;

pub fn solve_standard(form: &StandardForm, settings: &SolveSettings) -> Result<StandardSolution> {
    let nx = form.num_vars;
    let ne = form.eq_rows.len();
    let layout = &form.layout;
    let nk = layout.total_dim();
    if nk != form.cone_rows.len() || nk != form.cone_rhs.len() {
        return Err(Error::DimensionMismatch(format!(
            "cone layout spans {nk} rows but {} rows / {} offsets were given",
            form.cone_rows.len(),
            form.cone_rhs.len()
        )));
    }
    if ne != form.eq_rhs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{ne} equality rows but {} right-hand sides",
            form.eq_rhs.len()
        )));
    }

    let c = DVector::from_column_slice(&form.cost);
    let b = DVector::from_column_slice(&form.eq_rhs);
    let h = DVector::from_column_slice(&form.cone_rhs);
    let degree = layout.degree() as f64;
    let e = layout.identity();

    let norm_b = b.norm().max(1.0);
    let norm_h = h.norm().max(1.0);
    let norm_c = c.norm().max(1.0);

    // --- Initial point: least-squares with identity scaling, then a shift
    // into the interior.
    let unit = NtScaling::compute(layout, &e, &e).expect("identity is interior");
    let kkt0 = KktSystem::factor(form, &unit)?;

    // Primal: minimize ‖h − Gx‖ subject to Ax = b.
    let (x0, _, zp) = kkt0.solve3(form, &unit, &DVector::zeros(nx), &b, &h)?;
    let s_tilde = -zp;
    let margin_p = layout.min_margin(&s_tilde);
    let s0 = if margin_p > 0.0 {
        s_tilde
    } else {
        &s_tilde + &e * (1.0 - margin_p)
    };

    // Dual: least-norm (y, z) with Aᵀy + Gᵀz = −c.
    let (_, y0, z_tilde) = kkt0.solve3(
        form,
        &unit,
        &(-&c),
        &DVector::zeros(ne),
        &DVector::zeros(nk),
    )?;
    let margin_d = layout.min_margin(&z_tilde);
    let z0 = if margin_d > 0.0 {
        z_tilde
    } else {
        &z_tilde + &e * (1.0 - margin_d)
    };

    let mut x = x0;
    let mut y = y0;
    let mut s = s0;
    let mut z = z0;

    let trace = std::env::var_os("IPM_TRACE").is_some();

    // Iterates can degrade once the scaling reaches floating-point limits;
    // remember the best one seen so stalls still report a usable point.
    let mut best_score = f64::INFINITY;
    let mut best: Option<Iterate> = None;

    let mut iterations = 0;
    for iter in 0..=settings.max_iter {
        let rx = &c + mul_at(form, &y) + mul_gt(form, &z);
        let ry = mul_a(form, &x) - &b;
        let rz = mul_g(form, &x) + &s - &h;
        let pcost = c.dot(&x);
        let dcost = -b.dot(&y) - h.dot(&z);
        let gap = s.dot(&z);
        let pres = (ry.norm() / norm_b).max(rz.norm() / norm_h);
        let dres = rx.norm() / norm_c;
        let relgap = gap / pcost.abs().max(dcost.abs()).max(1.0);
        if trace {
            eprintln!(
                "it {iter}: pcost {pcost:.6e} dcost {dcost:.6e} gap {gap:.3e} pres {pres:.3e} dres {dres:.3e}"
            );
        }

        if !(pcost.is_finite() && dcost.is_finite() && gap.is_finite()) {
            return finish_stalled(
                SolveStatus::NumericFailure,
                best,
                x,
                y,
                z,
                s,
                pcost,
                dcost,
                iterations,
            );
        }

        let score = pres.max(dres).max(relgap.abs());
        if score.is_finite() && score < best_score {
            best_score = score;
            best = Some((x.clone(), y.clone(), z.clone(), s.clone(), pcost, dcost));
        }

        if pres <= settings.tol_feas
            && dres <= settings.tol_feas
            && (relgap <= settings.tol_gap || gap <= settings.tol_gap)
        {
            return finish(SolveStatus::Optimal, x, y, z, s, pcost, dcost, iterations);
        }

        if iter >= 1 {
            // Primal-infeasibility certificate: a dual ray (y, z) with
            // Aᵀy + Gᵀz ≈ 0 and bᵀy + hᵀz < 0.
            if dcost > 0.0 {
                let ray_res = (&rx - &c).norm() / dcost;
                if ray_res <= settings.tol_feas * norm_c {
                    return finish(
                        SolveStatus::Infeasible,
                        x,
                        y,
                        z,
                        s,
                        pcost,
                        dcost,
                        iterations,
                    );
                }
            }
            // Dual-infeasibility (unbounded) certificate: a primal ray
            // (x, s) with A x ≈ 0, G x + s ≈ 0 and cᵀx < 0.
            if pcost < 0.0 {
                let ax = (&ry + &b).norm();
                let gxs = (&rz + &h).norm();
                let ray_res = ax.max(gxs) / (-pcost);
                if ray_res <= settings.tol_feas * norm_b.max(norm_h) {
                    return finish(
                        SolveStatus::Unbounded,
                        x,
                        y,
                        z,
                        s,
                        pcost,
                        dcost,
                        iterations,
                    );
                }
            }
        }

        if iter == settings.max_iter {
            return finish_stalled(
                SolveStatus::MaxIter,
                best,
                x,
                y,
                z,
                s,
                pcost,
                dcost,
                iterations,
            );
        }

        let Some(scaling) = NtScaling::compute(layout, &s, &z) else {
            return finish_stalled(
                SolveStatus::NumericFailure,
                best,
                x,
                y,
                z,
                s,
                pcost,
                dcost,
                iterations,
            );
        };
        let lambda = scaling.lambda().clone();
        let mu = gap / degree;
        // Direction solves can fail once the scaling degenerates at the edge
        // of floating-point resolution; report the current iterate instead
        // of surfacing an error.
        let Ok(kkt) = KktSystem::factor(form, &scaling) else {
            return finish_stalled(
                SolveStatus::NumericFailure,
                best,
                x,
                y,
                z,
                s,
                pcost,
                dcost,
                iterations,
            );
        };

        // Predictor (affine) direction. With full residuals the z-side
        // right-hand term collapses: rz + W(−λ) = rz − s.
        let t_aff = &rz - &s;
        let Ok((dx_a, _dy_a, dz_a, ds_a)) =
            directions(form, &scaling, &kkt, &rx, &ry, &rz, &t_aff)
        else {
            return finish_stalled(
                SolveStatus::NumericFailure,
                best,
                x,
                y,
                z,
                s,
                pcost,
                dcost,
                iterations,
            );
        };
        let _ = dx_a;

        let alpha_aff = layout
            .max_step(&s, &ds_a)
            .min(layout.max_step(&z, &dz_a))
            .min(1.0);
        let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / degree;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector: centering plus the Mehrotra second-order term.
        let wds = scaling.apply_winv(&ds_a);
        let wdz = scaling.apply_w(&dz_a);
        let mut d = &e * (sigma * mu);
        d -= layout.product(&lambda, &lambda);
        d -= layout.product(&wds, &wdz);
        let dtilde = layout.arrow_solve(&lambda, &d);
        let t = &rz + scaling.apply_w(&dtilde);
        let Ok((dx, dy, dz, ds)) = directions(form, &scaling, &kkt, &rx, &ry, &rz, &t) else {
            return finish_stalled(
                SolveStatus::NumericFailure,
                best,
                x,
                y,
                z,
                s,
                pcost,
                dcost,
                iterations,
            );
        };

        let alpha_max = layout.max_step(&s, &ds).min(layout.max_step(&z, &dz));
        let alpha = (STEP_FRACTION * alpha_max).min(1.0);
        if !alpha.is_finite() || alpha <= 1e-13 {
            return finish_stalled(
                SolveStatus::NumericFailure,
                best,
                x,
                y,
                z,
                s,
                pcost,
                dcost,
                iterations,
            );
        }

        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        iterations = iter + 1;
    }
    unreachable!("loop returns at or before max_iter");
}

/// Finish on a stall, preferring the best iterate recorded so far over the
/// (possibly degraded) current one.
#[allow(clippy::too_many_arguments)]
fn finish_stalled(
    status: SolveStatus,
    best: Option<Iterate>,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    pcost: f64,
    dcost: f64,
    iterations: usize,
) -> Result<StandardSolution> {
    match best {
        Some((bx, by, bz, bs, bp, bd)) => finish(status, bx, by, bz, bs, bp, bd, iterations),
        None => finish(status, x, y, z, s, pcost, dcost, iterations),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    status: SolveStatus,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    pcost: f64,
    dcost: f64,
    iterations: usize,
) -> Result<StandardSolution> {
    Ok(StandardSolution {
        status,
        x: x.as_slice().to_vec(),
        eq_duals: y.as_slice().to_vec(),
        cone_duals: z.as_slice().to_vec(),
        slacks: s.as_slice().to_vec(),
        primal_objective: pcost,
        dual_objective: dcost,
        iterations,
    })
}

/// Solve for the search direction given the z-side term `t = rz + W·d̃`:
/// the full system has third row `GΔx − W²Δz = −t`, and `Δs = −rz − GΔx`
/// keeps the primal linearization exact.
fn directions(
    form: &StandardForm,
    scaling: &NtScaling,
    kkt: &KktSystem,
    rx: &DVector<f64>,
    ry: &DVector<f64>,
    rz: &DVector<f64>,
    t: &DVector<f64>,
) -> Result<Directions> {
    let (dx, dy, dz) = kkt.solve3(form, scaling, &(-rx), &(-ry), &(-t))?;
    let ds = -(rz + mul_g(form, &dx));
    Ok((dx, dy, dz, ds))
}

fn mul_a(form: &StandardForm, x: &DVector<f64>) -> DVector<f64> {
    sparse_mul(&form.eq_rows, x)
}

fn mul_g(form: &StandardForm, x: &DVector<f64>) -> DVector<f64> {
    sparse_mul(&form.cone_rows, x)
}

fn sparse_mul(rows: &[Vec<(usize, f64)>], x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut acc = 0.0;
        for &(c, v) in row {
            acc += v * x[c];
        }
        out[i] = acc;
    }
    out
}

fn mul_at(form: &StandardForm, y: &DVector<f64>) -> DVector<f64> {
    sparse_mul_t(&form.eq_rows, y, form.num_vars)
}

fn mul_gt(form: &StandardForm, z: &DVector<f64>) -> DVector<f64> {
    sparse_mul_t(&form.cone_rows, z, form.num_vars)
}

fn sparse_mul_t(rows: &[Vec<(usize, f64)>], y: &DVector<f64>, nx: usize) -> DVector<f64> {
    let mut out = DVector::zeros(nx);
    for (i, row) in rows.iter().enumerate() {
        let yi = y[i];
        if yi != 0.0 {
            for &(c, v) in row {
                out[c] += v * yi;
            }
        }
    }
    out
}

/// Factored KKT system with the scaled Schur complement `H = GᵀW⁻²G`.
struct KktSystem {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KktSystem {
    fn factor(form: &StandardForm, scaling: &NtScaling) -> Result<Self> {
        let nx = form.num_vars;
        let ne = form.eq_rows.len();
        let mut k = DMatrix::zeros(nx + ne, nx + ne);

        // Orthant contribution: Σ g_i g_iᵀ / w_i².
        for (i, wi) in scaling.orthant_w().iter().enumerate() {
            let inv_w2 = 1.0 / (wi * wi);
            let row = &form.cone_rows[i];
            for &(c1, v1) in row {
                for &(c2, v2) in row {
                    k[(c1, c2)] += v1 * v2 * inv_w2;
                }
            }
        }
        // SOC contribution: per block, dense W⁻² on the block's column
        // support.
        for (bi, (off, d)) in form.layout.soc_offsets().enumerate() {
            let mut cols: Vec<usize> = Vec::new();
            for r in 0..d {
                for &(c, _) in &form.cone_rows[off + r] {
                    cols.push(c);
                }
            }
            cols.sort_unstable();
            cols.dedup();
            if cols.is_empty() {
                continue;
            }
            let pos = |c: usize| cols.binary_search(&c).expect("support column");
            let mut local = DMatrix::<f64>::zeros(d, cols.len());
            for r in 0..d {
                for &(c, v) in &form.cone_rows[off + r] {
                    local[(r, pos(c))] += v;
                }
            }
            let winv2 = scaling.soc_winv2_dense(bi);
            let hl: DMatrix<f64> = local.transpose() * winv2 * &local;
            for (a, &ca) in cols.iter().enumerate() {
                for (b, &cb) in cols.iter().enumerate() {
                    k[(ca, cb)] += hl[(a, b)];
                }
            }
        }

        for i in 0..nx {
            k[(i, i)] += KKT_REG;
        }
        for (i, row) in form.eq_rows.iter().enumerate() {
            for &(c, v) in row {
                k[(nx + i, c)] = v;
                k[(c, nx + i)] = v;
            }
            k[(nx + i, nx + i)] = -KKT_REG;
        }

        Ok(KktSystem { lu: k.lu() })
    }

    /// Solve the full system
    ///
    /// ```text
    ///     [ 0   Aᵀ  Gᵀ  ] [Δx]   [r1]
    ///     [ A   0   0   ] [Δy] = [r2]
    ///     [ G   0  −W²  ] [Δz]   [r3]
    /// ```
    ///
    /// through the reduced factorization, with iterative refinement against
    /// the full operator so that the `Δz = W⁻²(GΔx − r3)` elimination error
    /// is also corrected.
    fn solve3(
        &self,
        form: &StandardForm,
        scaling: &NtScaling,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let nx = form.num_vars;
        let ne = form.eq_rows.len();
        let nk = form.layout.total_dim();
        let mut dx = DVector::zeros(nx);
        let mut dy = DVector::zeros(ne);
        let mut dz = DVector::zeros(nk);
        let residual = |dx: &DVector<f64>, dy: &DVector<f64>, dz: &DVector<f64>| {
            let e1 = r1 - (mul_at(form, dy) + mul_gt(form, dz));
            let e2 = r2 - mul_a(form, dx);
            let e3 = r3 - (mul_g(form, dx) - scaling.apply_w2(dz));
            (e1, e2, e3)
        };
        let norm3 = |e1: &DVector<f64>, e2: &DVector<f64>, e3: &DVector<f64>| {
            (e1.norm_squared() + e2.norm_squared() + e3.norm_squared()).sqrt()
        };
        let (mut e1, mut e2, mut e3) = residual(&dx, &dy, &dz);
        let mut best = norm3(&e1, &e2, &e3);
        for round in 0..=REFINE_ROUNDS {
            let mut rhs = DVector::zeros(nx + ne);
            rhs.rows_mut(0, nx)
                .copy_from(&(&e1 + mul_gt(form, &scaling.apply_winv2(&e3))));
            rhs.rows_mut(nx, ne).copy_from(&e2);
            let sol = self.lu.solve(&rhs).ok_or_else(|| Error::SolverFailure {
                status: SolveStatus::NumericFailure.to_string(),
                detail: "KKT factorization is singular".into(),
            })?;
            let cx = dx.clone() + sol.rows(0, nx);
            let cy = dy.clone() + sol.rows(nx, ne);
            let cz = &dz + scaling.apply_winv2(&(mul_g(form, &sol.rows(0, nx).clone_owned()) - &e3));
            let finite = cx.iter().all(|v| v.is_finite())
                && cy.iter().all(|v| v.is_finite())
                && cz.iter().all(|v| v.is_finite());
            if !finite {
                if round == 0 {
                    return Err(Error::SolverFailure {
                        status: SolveStatus::NumericFailure.to_string(),
                        detail: "KKT solve produced non-finite values".into(),
                    });
                }
                break;
            }
            let (n1, n2, n3) = residual(&cx, &cy, &cz);
            let norm = norm3(&n1, &n2, &n3);
            // Keep a refinement round only while it actually reduces the
            // full-system residual; ill-conditioned scalings otherwise make
            // successive corrections diverge.
            if round > 0 && (norm >= best || norm.is_nan()) {
                break;
            }
            dx = cx;
            dy = cy;
            dz = cz;
            (e1, e2, e3) = (n1, n2, n3);
            best = norm;
        }
        Ok((dx, dy, dz))
    }
}
