//! Seeded synthetic instance generation.
//!
//! Instances are built around a drawn witness point: equality offsets are
//! chosen so the witness satisfies them exactly, and inequality offsets so
//! the witness sits strictly inside (or, for a requested fraction, exactly
//! on) each constraint. Every generator is a pure function of the passed
//! RNG, so a seeded RNG reproduces the same instance.

use nalgebra::DMatrix;
use rand::Rng;

use crate::mat::{RectMatrix, SymMatrix};
use crate::qcqp::{Bounds, QcqpInstance, QuadForm};

/// Shape parameters for a synthetic instance.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub n: usize,
    pub m: usize,
    pub num_eq: usize,
    pub num_ineq: usize,
    /// When set, adds box bounds `[-w, w]` on every variable (vector
    /// instances only) and draws the witness from the inner half of the box.
    pub box_halfwidth: Option<f64>,
    /// Fraction of inequalities made binding at the witness.
    pub binding_fraction: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n: 3,
            m: 1,
            num_eq: 1,
            num_ineq: 2,
            box_halfwidth: None,
            binding_fraction: 0.0,
        }
    }
}

fn random_sym<R: Rng>(n: usize, rng: &mut R) -> SymMatrix {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    SymMatrix::from_dense(a).expect("symmetric by construction")
}

fn random_rect<R: Rng>(n: usize, m: usize, rng: &mut R) -> RectMatrix {
    RectMatrix::from_dense(DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)))
}

/// A random quadratic form with entries in `[-1, 1)` and zero offset.
pub fn random_quadform<R: Rng>(n: usize, m: usize, rng: &mut R) -> QuadForm {
    QuadForm::new(random_sym(n, rng), random_rect(n, m, rng), 0.0)
        .expect("dimensions agree by construction")
}

/// Draws an instance together with a witness point that is feasible by
/// construction: exactly on every equality, strictly inside non-binding
/// inequalities, and exactly on binding ones.
pub fn random_feasible_instance<R: Rng>(
    opts: &SynthOptions,
    rng: &mut R,
) -> (QcqpInstance, DMatrix<f64>) {
    let (n, m) = (opts.n, opts.m);
    let witness_range = match opts.box_halfwidth {
        Some(w) => 0.5 * w,
        None => 1.0,
    };
    let witness =
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-witness_range..witness_range));

    let objective = random_quadform(n, m, rng);

    let mut equalities = Vec::with_capacity(opts.num_eq);
    for _ in 0..opts.num_eq {
        let mut q = random_quadform(n, m, rng);
        q.c = -(q.a.quad_form(&witness) + 2.0 * q.b.dot(&witness));
        equalities.push(q);
    }

    let mut inequalities = Vec::with_capacity(opts.num_ineq);
    let binding_count =
        ((opts.num_ineq as f64) * opts.binding_fraction).round() as usize;
    for i in 0..opts.num_ineq {
        let mut q = random_quadform(n, m, rng);
        let slack = if i < binding_count {
            0.0
        } else {
            rng.random_range(0.1..1.0)
        };
        q.c = -(q.a.quad_form(&witness) + 2.0 * q.b.dot(&witness)) - slack;
        inequalities.push(q);
    }

    let bounds = opts.box_halfwidth.map(|w| Bounds {
        lower: vec![-w; n],
        upper: vec![w; n],
    });
    let inst = QcqpInstance::new(n, m, objective, equalities, inequalities, bounds)
        .expect("generated dimensions are consistent");
    (inst, witness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn witness_is_feasible_and_binding_fraction_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let opts = SynthOptions {
                n: 1 + (trial % 5),
                m: 1 + (trial % 2),
                num_eq: trial % 3,
                num_ineq: 1 + trial % 4,
                box_halfwidth: if trial % 2 == 0 { Some(2.0) } else { None },
                binding_fraction: if trial % 4 == 0 { 0.5 } else { 0.0 },
            };
            let opts = SynthOptions {
                box_halfwidth: if opts.m > 1 { None } else { opts.box_halfwidth },
                ..opts
            };
            let (inst, witness) = random_feasible_instance(&opts, &mut rng);
            assert!(
                inst.feasibility_residual(&witness) <= 1e-12,
                "trial {trial}: witness violates by {}",
                inst.feasibility_residual(&witness)
            );
            let binding = inst
                .inequalities
                .iter()
                .filter(|q| q.eval(&witness).abs() <= 1e-12)
                .count();
            let expected =
                ((opts.num_ineq as f64) * opts.binding_fraction).round() as usize;
            assert_eq!(binding, expected, "trial {trial}");
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let opts = SynthOptions::default();
        let (a, wa) = random_feasible_instance(&opts, &mut ChaCha8Rng::seed_from_u64(3));
        let (b, wb) = random_feasible_instance(&opts, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(wa, wb);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.equalities, b.equalities);
        assert_eq!(a.inequalities, b.inequalities);
    }
}
