//! Internal model and the overall regulator
//! `eta' = S eta - alpha Xi e`, `u = K Z(x) + Xi^T eta - K_hat e`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::model::{Exosystem, FunctionLibrary, PlantModel};
use crate::synthesis::SynthesisResult;

/// Exosystem copy `S`, coupling `Xi` (q x m) and gain `alpha > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalModelParams {
    s: DMatrix<f64>,
    xi: DMatrix<f64>,
    alpha: f64,
}

impl InternalModelParams {
    pub fn new(s: DMatrix<f64>, xi: DMatrix<f64>, alpha: f64) -> Result<Self> {
        if !s.is_square() {
            return Err(dim_err("internal-model matrix", "square", format!("{:?}", s.shape())));
        }
        if xi.nrows() != s.nrows() {
            return Err(dim_err("internal-model coupling rows", s.nrows(), xi.nrows()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Parameter(format!("internal-model gain alpha = {alpha} must be positive")));
        }
        if (&s + s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
            return Err(Error::Parameter("internal-model matrix must be skew-symmetric".into()));
        }
        Ok(Self { s, xi, alpha })
    }

    pub fn from_exosystem(exo: &Exosystem, xi: DMatrix<f64>, alpha: f64) -> Result<Self> {
        Self::new(exo.s_matrix(), xi, alpha)
    }

    /// Coupling of all ones, used when no `Xi` is configured.
    pub fn default_coupling(q: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_element(q, m, 1.0)
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn q(&self) -> usize {
        self.s.nrows()
    }

    pub fn m(&self) -> usize {
        self.xi.ncols()
    }

    /// Stand-alone internal model `eta' = S eta + alpha Xi e_tilde`, `v_tilde = Xi^T eta`.
    pub fn rhs(&self, eta: &DVector<f64>, e_tilde: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.s * eta + &self.xi * e_tilde * self.alpha, self.xi.transpose() * eta)
    }

    /// `|eta1 - eta2|^2 / (2 alpha)`.
    pub fn storage(&self, eta1: &DVector<f64>, eta2: &DVector<f64>) -> f64 {
        (eta1 - eta2).norm_squared() / (2.0 * self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regulator {
    k: DMatrix<f64>,
    im: InternalModelParams,
    k_hat: DMatrix<f64>,
    library: FunctionLibrary,
}

impl Regulator {
    pub fn new(k: DMatrix<f64>, im: InternalModelParams, k_hat: DMatrix<f64>, library: FunctionLibrary) -> Result<Self> {
        let m = k.nrows();
        if k.ncols() != library.n_z() {
            return Err(dim_err("passivation gain columns", library.n_z(), k.ncols()));
        }
        if im.m() != m {
            return Err(dim_err("internal-model coupling columns", m, im.m()));
        }
        if k_hat.shape() != (m, m) {
            return Err(dim_err("error-feedback gain", format!("{:?}", (m, m)), format!("{:?}", k_hat.shape())));
        }
        if !linalg::is_symmetric(&k_hat, 1e-12) || !linalg::is_positive_definite(&k_hat) {
            return Err(Error::Parameter("error-feedback gain must be symmetric positive definite".into()));
        }
        Ok(Self { k, im, k_hat, library })
    }

    /// Replaces the error-feedback gain without the definiteness gate.
    /// Only meant for audits of degenerate loops.
    pub fn with_error_gain_unchecked(mut self, k_hat: DMatrix<f64>) -> Self {
        self.k_hat = k_hat;
        self
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn k_hat(&self) -> &DMatrix<f64> {
        &self.k_hat
    }

    pub fn internal_model(&self) -> &InternalModelParams {
        &self.im
    }

    pub fn library(&self) -> &FunctionLibrary {
        &self.library
    }

    pub fn eta_dim(&self) -> usize {
        self.im.q()
    }

    pub fn check_plant(&self, plant: &PlantModel) -> Result<()> {
        if plant.library != self.library {
            return Err(Error::Config("regulator and plant use different function libraries".into()));
        }
        if plant.m() != self.k.nrows() {
            return Err(dim_err("regulator output", plant.m(), self.k.nrows()));
        }
        Ok(())
    }

    /// Returns `(eta', u)`.
    pub fn rhs(&self, x: &DVector<f64>, eta: &DVector<f64>, e: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let deta = self.im.s() * eta - self.im.xi() * e * self.im.alpha();
        let u = &self.k * self.library.eval(x) + self.im.xi().transpose() * eta - &self.k_hat * e;
        (deta, u)
    }
}

/// Packages a synthesized gain with user-chosen internal-model and
/// error-feedback gains.
pub fn build_regulator(result: &SynthesisResult, im: InternalModelParams, k_hat: DMatrix<f64>) -> Result<Regulator> {
    Regulator::new(result.k.clone(), im, k_hat, result.library.clone())
}

/// Serializable form of the user gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorGains {
    pub alpha: f64,
    /// Row-major `q x m` coupling; all ones when absent.
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
    /// Row-major `m x m` error-feedback gain.
    pub k_hat: Vec<f64>,
}

impl RegulatorGains {
    pub fn internal_model(&self, exo: &Exosystem, m: usize) -> Result<InternalModelParams> {
        let q = exo.q();
        let xi = match &self.xi {
            Some(v) if v.len() == q * m => DMatrix::from_row_slice(q, m, v),
            Some(v) => return Err(dim_err("coupling Xi entries", q * m, v.len())),
            None => InternalModelParams::default_coupling(q, m),
        };
        InternalModelParams::from_exosystem(exo, xi, self.alpha)
    }

    pub fn k_hat_matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        if self.k_hat.len() != m * m {
            return Err(dim_err("error-feedback gain entries", m * m, self.k_hat.len()));
        }
        Ok(DMatrix::from_row_slice(m, m, &self.k_hat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum_regulator(k: DMatrix<f64>) -> Regulator {
        let exo = Exosystem::new(vec![2.0], 1, DVector::from_vec(vec![0.0, 1.0, 1.0])).unwrap();
        let im = InternalModelParams::from_exosystem(&exo, DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]), 10.0).unwrap();
        let lib = FunctionLibrary::parse(2, &["x1", "x2", "sin(x1)"]).unwrap();
        Regulator::new(k, im, DMatrix::from_element(1, 1, 80.0), lib).unwrap()
    }

    #[test]
    fn zero_state_gives_zero_output() {
        let reg = pendulum_regulator(DMatrix::from_row_slice(1, 3, &[-0.129, -0.0132, 1.0]));
        let (deta, u) = reg.rhs(&DVector::zeros(2), &DVector::zeros(3), &DVector::zeros(1));
        assert_eq!(deta.amax(), 0.0);
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn hand_evaluated_internal_model() {
        let reg = pendulum_regulator(DMatrix::zeros(1, 3));
        let eta = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let (deta, u) = reg.rhs(&DVector::zeros(2), &eta, &DVector::zeros(1));
        assert_eq!(deta.as_slice(), &[0.0, -2.0, 0.0]);
        assert_eq!(deta, reg.internal_model().s() * &eta);
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn affine_in_error() {
        let reg = pendulum_regulator(DMatrix::from_row_slice(1, 3, &[0.3, -1.0, 2.0]));
        let x = DVector::from_vec(vec![0.2, -0.4]);
        let eta = DVector::from_vec(vec![0.5, 1.0, -2.0]);
        let e1 = DVector::from_vec(vec![0.7]);
        let e2 = DVector::from_vec(vec![-1.9]);
        let f = |e: &DVector<f64>| reg.rhs(&x, &eta, e);
        let (a, b, c, d) = (f(&(&e1 + &e2)), f(&e1), f(&e2), f(&DVector::zeros(1)));
        assert!((a.0 - b.0 - c.0 + d.0).amax() < 1e-12);
        assert!((a.1 - b.1 - c.1 + d.1).amax() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_gains() {
        let exo = Exosystem::new(vec![2.0], 1, DVector::zeros(3)).unwrap();
        let im = InternalModelParams::from_exosystem(&exo, DMatrix::from_element(3, 1, 1.0), 10.0).unwrap();
        let lib = FunctionLibrary::identity(2);
        let r = Regulator::new(DMatrix::zeros(1, 2), im, DMatrix::from_element(1, 1, -1.0), lib);
        assert!(matches!(r, Err(Error::Parameter(_))));
        assert!(InternalModelParams::from_exosystem(&exo, DMatrix::from_element(3, 1, 1.0), 0.0).is_err());
    }

    #[test]
    fn storage_is_scaled_distance() {
        let im = InternalModelParams::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), 4.0).unwrap();
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        assert!((im.storage(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gains_parse_and_default() {
        let exo = Exosystem::new(vec![1.0], 1, DVector::zeros(3)).unwrap();
        let g = RegulatorGains { alpha: 25.0, xi: None, k_hat: vec![15.0] };
        assert_eq!(g.internal_model(&exo, 1).unwrap().xi(), &DMatrix::from_element(3, 1, 1.0));
        let bad = RegulatorGains { alpha: 25.0, xi: Some(vec![1.0]), k_hat: vec![15.0] };
        assert!(bad.internal_model(&exo, 1).is_err());
    }
}
