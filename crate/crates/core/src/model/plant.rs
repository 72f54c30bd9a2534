use nalgebra::{DMatrix, DVector};

use super::FunctionLibrary;
use crate::error::{dim_err, Result};

/// Ground-truth plant `x' = A Z(x) + B u + E w`, `e = C Z(x) + F w`.
///
/// Only data generation and the oracles in [`crate::verify`] read these
/// matrices; synthesis works from sampled data alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub library: FunctionLibrary,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        library: FunctionLibrary,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, nz) = (library.n(), library.n_z());
        let m = b.ncols();
        let q = e.ncols();
        let checks = [
            ("A", a.shape(), (n, nz)),
            ("B", b.shape(), (n, m)),
            ("C", c.shape(), (m, nz)),
            ("E", e.shape(), (n, q)),
            ("F", f.shape(), (m, q)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(dim_err(&format!("plant matrix {name}"), format!("{want:?}"), format!("{got:?}")));
            }
        }
        Ok(Self { library, a, b, c, e, f })
    }

    pub fn n(&self) -> usize {
        self.library.n()
    }

    pub fn n_z(&self) -> usize {
        self.library.n_z()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn q(&self) -> usize {
        self.e.ncols()
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * self.library.eval(x) + &self.b * u + &self.e * w
    }

    pub fn error(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.c * self.library.eval(x) + &self.f * w
    }

    /// Checks that `x`, `u`, `w` have the plant's dimensions.
    pub fn check_signal_dims(&self, x: usize, u: usize, w: usize) -> Result<()> {
        if x != self.n() {
            return Err(dim_err("plant state", self.n(), x));
        }
        if u != self.m() {
            return Err(dim_err("plant input", self.m(), u));
        }
        if w != self.q() {
            return Err(dim_err("exogenous signal", self.q(), w));
        }
        Ok(())
    }

    /// Same plant with the input entering through `B (K Z(x) + v)`, returned
    /// as the closed-loop drift matrix `A + B K`.
    pub fn closed_loop_drift(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pendulum_rhs_values() {
        let p = examples::pendulum().plant;
        let zero = DVector::zeros(2);
        let r = p.rhs(&zero, &DVector::zeros(1), &DVector::zeros(3));
        assert_eq!(r.as_slice(), &[0.0, 0.0]);
        let x = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 1.0]);
        let r = p.rhs(&x, &DVector::zeros(1), &DVector::zeros(3));
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] + 11.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_shapes() {
        let lib = FunctionLibrary::identity(2);
        let r = PlantModel::new(
            lib,
            DMatrix::zeros(2, 3),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(1, 0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn rhs_matches_expanded_polynomial() {
        // x1' = a0 x1 + a1 x2 + a2 x1 x2 + a3 x1^2 + b0 u + e0 w
        // x2' = c-row analogue, expanded by hand below.
        let lib = FunctionLibrary::parse(2, &["x1", "x2", "x1*x2", "x1^2"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-2.0..2.0));
        let b = DMatrix::from_fn(2, 1, |_, _| rng.gen_range(-2.0..2.0));
        let e = DMatrix::from_fn(2, 1, |_, _| rng.gen_range(-2.0..2.0));
        let p = PlantModel::new(lib, a.clone(), b.clone(), DMatrix::zeros(1, 4), e.clone(), DMatrix::zeros(1, 1)).unwrap();
        for _ in 0..10 {
            let (x1, x2, u, w) = (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let got = p.rhs(&DVector::from_vec(vec![x1, x2]), &DVector::from_vec(vec![u]), &DVector::from_vec(vec![w]));
            for i in 0..2 {
                let want = a[(i, 0)] * x1 + a[(i, 1)] * x2 + a[(i, 2)] * x1 * x2 + a[(i, 3)] * x1 * x1 + b[(i, 0)] * u + e[(i, 0)] * w;
                assert!((got[i] - want).abs() < 1e-12);
            }
        }
    }
}
