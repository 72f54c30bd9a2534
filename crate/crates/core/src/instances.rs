//! Random plants that admit a passivating gain by construction.
//!
//! With `P > 0`, `J = -J^T`, `R > 0`:
//! `A1 = P^{-1}(J - R) + B H1`, `A2 = B H2`, `C = [B^T P, 0]`, so that
//! `K = -[H1, H2]` gives `P (A1 + B K1) = J - R` and `A2 + B K2 = 0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{self, DataSet};
use crate::error::{Error, Result};
use crate::model::{Exosystem, FunctionLibrary, InputSignal, PlantModel, Term};
use crate::simulate::{run_experiment, ExperimentSpec};

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub plant: PlantModel,
    pub exosystem: Exosystem,
    pub experiment: ExperimentSpec,
    /// Storage matrix the construction certifies.
    pub storage: DMatrix<f64>,
    /// Passivating gain the construction certifies.
    pub gain: DMatrix<f64>,
}

impl RandomInstance {
    pub fn collect(&self) -> Result<DataSet> {
        let traj = run_experiment(&self.plant, &self.exosystem, &self.experiment)?;
        data::assemble(&traj, &self.plant.library, &self.exosystem)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..=scale))
}

fn draw(seed: u64) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=3usize);
    let m = if n == 3 { rng.gen_range(1..=2usize) } else { 1 };

    let mut terms: Vec<Term> = (0..n).map(|i| Term::coordinate(n, i)).collect();
    terms.push(Term::Sin(0));
    terms.push(Term::CosMinusOne(1));
    let mut sq = vec![0; n];
    sq[n - 1] = 2;
    terms.push(Term::Monomial(sq));
    let library = FunctionLibrary::new(n, terms)?;
    let r = library.n_z() - n;

    let l = uniform(&mut rng, n, n, 1.0);
    let storage = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let g = uniform(&mut rng, n, n, 1.0);
    let j = &g - g.transpose();
    let h = uniform(&mut rng, n, n, 0.7);
    let rr = &h * h.transpose() + DMatrix::identity(n, n) * 0.3;
    let b = loop {
        let b = uniform(&mut rng, n, m, 1.0);
        if (b.transpose() * &b).determinant().abs() > 0.1 {
            break b;
        }
    };
    let h1 = uniform(&mut rng, m, n, 0.3);
    let h2 = uniform(&mut rng, m, r, 0.3);
    let p_inv = storage
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Parameter("random storage matrix is not positive definite".into()))?
        .inverse();
    let a1 = p_inv * (j - rr) + &b * &h1;
    let a2 = &b * &h2;
    let a = crate::linalg::hstack(&[&a1, &a2]);
    let c = crate::linalg::hstack(&[&(b.transpose() * &storage), &DMatrix::zeros(m, r)]);

    let sigma = rng.gen_range(0.5..=3.0);
    let w0 = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..=1.0));
    let exosystem = Exosystem::new(vec![sigma], 1, w0)?;
    let e = uniform(&mut rng, n, 3, 0.5);
    let f = uniform(&mut rng, m, 3, 0.5);
    let plant = PlantModel::new(library, a, b, c, e, f)?;

    let inputs = (0..m)
        .map(|_| {
            let mut s = InputSignal::constant(rng.gen_range(-0.3..=0.3));
            for _ in 0..3 {
                s = s.with_term(rng.gen_range(0.5..=1.5), rng.gen_range(0.3..=4.0), rng.gen_range(0.0..=6.0));
            }
            s
        })
        .collect();
    let samples = 3 * (plant.n_z() + m + 3);
    let experiment = ExperimentSpec {
        x0: (0..n).map(|_| rng.gen_range(-0.5..=0.5)).collect(),
        inputs,
        sample_period: 0.2,
        samples,
        dt: 1e-3,
        start_time: 0.0,
        derivative: Default::default(),
    };
    let gain = -crate::linalg::hstack(&[&h1, &h2]);
    Ok(RandomInstance { seed, plant, exosystem, experiment, storage, gain })
}

/// Draws a random instance whose experiment stays bounded and passes the
/// richness gate. Deterministic in `seed`.
pub fn random_instance(seed: u64) -> Result<RandomInstance> {
    let mut last = None;
    for attempt in 0..32u64 {
        let inst = draw(seed.wrapping_mul(1_000_003).wrapping_add(attempt))?;
        match inst.collect().and_then(|ds| data::richness_gate(&ds).map(|_| ())) {
            Ok(()) => return Ok(RandomInstance { seed, ..inst }),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Parameter("no random instance drawn".into())))
}
