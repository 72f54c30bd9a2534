use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear exosystem `w' = S w` with `S = blockdiag([0 s_i; -s_i 0], ..., 0_{q2})`.
///
/// `w0` is ground truth for simulation; synthesis never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExoSpec", into = "ExoSpec")]
pub struct Exosystem {
    frequencies: Vec<f64>,
    constant_modes: usize,
    w0: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct ExoSpec {
    frequencies: Vec<f64>,
    constant_modes: usize,
    w0: Vec<f64>,
}

impl TryFrom<ExoSpec> for Exosystem {
    type Error = Error;
    fn try_from(s: ExoSpec) -> Result<Self> {
        Exosystem::new(s.frequencies, s.constant_modes, DVector::from_vec(s.w0))
    }
}

impl From<Exosystem> for ExoSpec {
    fn from(e: Exosystem) -> Self {
        ExoSpec { frequencies: e.frequencies, constant_modes: e.constant_modes, w0: e.w0.as_slice().to_vec() }
    }
}

impl Exosystem {
    pub fn new(frequencies: Vec<f64>, constant_modes: usize, w0: DVector<f64>) -> Result<Self> {
        for (i, &s) in frequencies.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("exosystem frequency {s} must be finite and positive")));
            }
            if frequencies[..i].iter().any(|&o| (o - s).abs() <= 1e-12 * s.max(1.0)) {
                return Err(Error::Config(format!(
                    "repeated exosystem frequency {s}: the signal factorization would be rank deficient"
                )));
            }
        }
        let q = 2 * frequencies.len() + constant_modes;
        if w0.len() != q {
            return Err(crate::error::dim_err("exosystem initial condition", q, w0.len()));
        }
        if w0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("exosystem initial condition must be finite".into()));
        }
        Ok(Self { frequencies, constant_modes, w0 })
    }

    /// An exosystem with no modes (`q = 0`).
    pub fn empty() -> Self {
        Self { frequencies: Vec::new(), constant_modes: 0, w0: DVector::zeros(0) }
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn constant_modes(&self) -> usize {
        self.constant_modes
    }

    pub fn q(&self) -> usize {
        2 * self.frequencies.len() + self.constant_modes
    }

    pub fn w0(&self) -> &DVector<f64> {
        &self.w0
    }

    pub fn with_initial_state(&self, w0: DVector<f64>) -> Result<Self> {
        Self::new(self.frequencies.clone(), self.constant_modes, w0)
    }

    pub fn s_matrix(&self) -> DMatrix<f64> {
        let q = self.q();
        let mut s = DMatrix::zeros(q, q);
        for (i, &sigma) in self.frequencies.iter().enumerate() {
            s[(2 * i, 2 * i + 1)] = sigma;
            s[(2 * i + 1, 2 * i)] = -sigma;
        }
        s
    }

    /// `exp(S t)`, assembled blockwise from rotations.
    pub fn transition(&self, t: f64) -> DMatrix<f64> {
        let q = self.q();
        let mut phi = DMatrix::identity(q, q);
        for (i, &sigma) in self.frequencies.iter().enumerate() {
            let (s, c) = (sigma * t).sin_cos();
            let k = 2 * i;
            phi[(k, k)] = c;
            phi[(k, k + 1)] = s;
            phi[(k + 1, k)] = -s;
            phi[(k + 1, k + 1)] = c;
        }
        phi
    }

    /// `w(t) = exp(S t) w0`.
    pub fn state(&self, t: f64) -> DVector<f64> {
        let mut w = self.w0.clone();
        for (i, &sigma) in self.frequencies.iter().enumerate() {
            let (s, c) = (sigma * t).sin_cos();
            let (a, b) = (self.w0[2 * i], self.w0[2 * i + 1]);
            w[2 * i] = c * a + s * b;
            w[2 * i + 1] = -s * a + c * b;
        }
        w
    }

    /// The regressor column `[sin(s_1 t), cos(s_1 t), ..., 1, ..., 1]`.
    pub fn regressor(&self, t: f64) -> DVector<f64> {
        let mut m = DVector::from_element(self.q(), 1.0);
        for (i, &sigma) in self.frequencies.iter().enumerate() {
            let (s, c) = (sigma * t).sin_cos();
            m[2 * i] = s;
            m[2 * i + 1] = c;
        }
        m
    }

    /// The diagonal-block matrix `Gamma` with `w(t) = Gamma * regressor(t)`.
    pub fn factor(&self) -> DMatrix<f64> {
        let q = self.q();
        let mut g = DMatrix::zeros(q, q);
        for i in 0..self.frequencies.len() {
            let (a, b) = (self.w0[2 * i], self.w0[2 * i + 1]);
            let k = 2 * i;
            g[(k, k)] = b;
            g[(k, k + 1)] = a;
            g[(k + 1, k)] = -a;
            g[(k + 1, k + 1)] = b;
        }
        for j in 2 * self.frequencies.len()..q {
            g[(j, j)] = self.w0[j];
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn pendulum_exo() -> Exosystem {
        Exosystem::new(vec![2.0], 1, DVector::from_vec(vec![0.0, 1.0, 1.0])).unwrap()
    }

    #[test]
    fn initial_state_and_quarter_turn() {
        let exo = pendulum_exo();
        assert_eq!(exo.state(0.0).as_slice(), &[0.0, 1.0, 1.0]);
        let w = exo.state(FRAC_PI_4);
        assert!((w[0] - 1.0).abs() < 1e-15 && w[1].abs() < 1e-15 && w[2] == 1.0);
    }

    #[test]
    fn s_matrix_layout() {
        let s = pendulum_exo().s_matrix();
        assert_eq!(s, DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn rejects_repeated_or_nonpositive_frequencies() {
        assert!(Exosystem::new(vec![1.0, 1.0], 0, DVector::zeros(4)).is_err());
        assert!(Exosystem::new(vec![0.0], 0, DVector::zeros(2)).is_err());
        assert!(Exosystem::new(vec![1.0], 1, DVector::zeros(2)).is_err());
    }

    /// Classical RK4 on w' = S w, independent of the closed form.
    fn integrate(exo: &Exosystem, t: f64, steps: usize) -> DVector<f64> {
        let s = exo.s_matrix();
        let h = t / steps as f64;
        let mut w = exo.w0().clone();
        for _ in 0..steps {
            let k1 = &s * &w;
            let k2 = &s * (&w + &k1 * (h / 2.0));
            let k3 = &s * (&w + &k2 * (h / 2.0));
            let k4 = &s * (&w + &k3 * h);
            w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        w
    }

    #[test]
    fn closed_form_matches_integration_and_conserves_block_norms() {
        let exo = Exosystem::new(vec![0.7, 2.3], 1, DVector::from_vec(vec![0.4, -1.2, 2.0, 0.5, 3.0])).unwrap();
        for t in [0.0, 0.3, 1.7, 9.2] {
            let closed = exo.state(t);
            let numeric = integrate(&exo, t, 20_000);
            assert!((&closed - &numeric).amax() <= 1e-8, "t = {t}");
            for b in 0..2 {
                let r0 = exo.w0().rows(2 * b, 2).norm();
                assert!((closed.rows(2 * b, 2).norm() - r0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factor_reproduces_state() {
        let exo = Exosystem::new(vec![1.3], 2, DVector::from_vec(vec![0.2, -0.7, 1.5, -3.0])).unwrap();
        for t in [0.0, 0.5, 4.2] {
            let w = exo.factor() * exo.regressor(t);
            assert!((w - exo.state(t)).amax() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn flow_property(t1 in 0.0f64..10.0, t2 in 0.0f64..10.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let exo = Exosystem::new(vec![1.1, 3.0], 1, DVector::from_vec(vec![a, b, b, a, 0.5])).unwrap();
            let lhs = exo.state(t1 + t2);
            let rhs = exo.transition(t1) * exo.state(t2);
            prop_assert!((lhs - rhs).amax() <= 1e-10);
        }
    }
}
