use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of a function library.
///
/// Every term vanishes at the origin, which keeps `Z(0) = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    /// `prod_i x_i^{exponents[i]}` with total degree at least one.
    Monomial(Vec<u32>),
    /// `sin(x_i)`
    Sin(usize),
    /// `cos(x_i) - 1`
    CosMinusOne(usize),
}

impl Term {
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut exps = vec![0; n];
        exps[i] = 1;
        Term::Monomial(exps)
    }

    fn is_coordinate(&self, i: usize) -> bool {
        match self {
            Term::Monomial(e) => e.iter().enumerate().all(|(j, &p)| p == u32::from(j == i)),
            _ => false,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Term::Monomial(e) => e
                .iter()
                .zip(x)
                .filter(|(p, _)| **p > 0)
                .map(|(&p, &xi)| xi.powi(p as i32))
                .product(),
            Term::Sin(i) => x[*i].sin(),
            Term::CosMinusOne(i) => x[*i].cos() - 1.0,
        }
    }

    fn partial(&self, x: &[f64], j: usize) -> f64 {
        match self {
            Term::Monomial(e) => {
                if e[j] == 0 {
                    return 0.0;
                }
                let mut v = f64::from(e[j]) * x[j].powi(e[j] as i32 - 1);
                for (k, (&p, &xk)) in e.iter().zip(x).enumerate() {
                    if k != j && p > 0 {
                        v *= xk.powi(p as i32);
                    }
                }
                v
            }
            Term::Sin(i) if *i == j => x[j].cos(),
            Term::CosMinusOne(i) if *i == j => -x[j].sin(),
            _ => 0.0,
        }
    }

    fn max_index(&self) -> Option<usize> {
        match self {
            Term::Monomial(e) => e.iter().rposition(|&p| p > 0),
            Term::Sin(i) | Term::CosMinusOne(i) => Some(*i),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Monomial(e) => {
                let parts: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(i, &p)| if p == 1 { format!("x{}", i + 1) } else { format!("x{}^{}", i + 1, p) })
                    .collect();
                write!(f, "{}", parts.join("*"))
            }
            Term::Sin(i) => write!(f, "sin(x{})", i + 1),
            Term::CosMinusOne(i) => write!(f, "cos(x{})-1", i + 1),
        }
    }
}

fn parse_var(s: &str) -> Option<usize> {
    let idx: usize = s.trim().strip_prefix('x')?.parse().ok()?;
    idx.checked_sub(1)
}

impl Term {
    /// Parses `x1`, `x1^2*x2`, `sin(x1)` or `cos(x1)-1` for a state of dimension `n`.
    pub fn parse(s: &str, n: usize) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Config(format!("cannot parse library term '{s}'"));
        let term = if let Some(inner) = s.strip_prefix("sin(").and_then(|r| r.strip_suffix(')')) {
            Term::Sin(parse_var(inner).ok_or_else(bad)?)
        } else if let Some(inner) = s.strip_prefix("cos(").and_then(|r| r.strip_suffix(")-1")) {
            Term::CosMinusOne(parse_var(inner).ok_or_else(bad)?)
        } else {
            let mut exps = vec![0u32; n];
            for factor in s.split('*') {
                let (var, pow) = match factor.split_once('^') {
                    Some((v, p)) => (v, p.parse::<u32>().map_err(|_| bad())?),
                    None => (factor, 1),
                };
                let i = parse_var(var).ok_or_else(bad)?;
                if i >= n {
                    return Err(Error::Config(format!("term '{s}' references x{} but n = {n}", i + 1)));
                }
                exps[i] += pow;
            }
            Term::Monomial(exps)
        };
        Ok(term)
    }
}

/// Ordered basis `Z(x) = [x; Q(x)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LibrarySpec", into = "LibrarySpec")]
pub struct FunctionLibrary {
    n: usize,
    terms: Vec<Term>,
}

#[derive(Serialize, Deserialize)]
struct LibrarySpec {
    n: usize,
    terms: Vec<String>,
}

impl TryFrom<LibrarySpec> for FunctionLibrary {
    type Error = Error;
    fn try_from(spec: LibrarySpec) -> Result<Self> {
        let terms = spec.terms.iter().map(|t| Term::parse(t, spec.n)).collect::<Result<Vec<_>>>()?;
        FunctionLibrary::new(spec.n, terms)
    }
}

impl From<FunctionLibrary> for LibrarySpec {
    fn from(lib: FunctionLibrary) -> Self {
        LibrarySpec { n: lib.n, terms: lib.terms.iter().map(Term::to_string).collect() }
    }
}

impl FunctionLibrary {
    pub fn new(n: usize, terms: Vec<Term>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("library needs n >= 1".into()));
        }
        if terms.len() < n {
            return Err(Error::Config(format!("library has {} terms, fewer than n = {n}", terms.len())));
        }
        for (i, t) in terms.iter().take(n).enumerate() {
            if !t.is_coordinate(i) {
                return Err(Error::Config(format!("library term {} must be x{}, found {t}", i + 1, i + 1)));
            }
        }
        for (k, t) in terms.iter().enumerate() {
            if let Term::Monomial(e) = t {
                if e.len() != n {
                    return Err(Error::Config(format!("monomial {t} has {} exponents, expected {n}", e.len())));
                }
                if e.iter().all(|&p| p == 0) {
                    return Err(Error::Config("constant monomials are not allowed (Z(0) must vanish)".into()));
                }
            }
            if t.max_index().is_some_and(|i| i >= n) {
                return Err(Error::Config(format!("term {t} references a coordinate beyond n = {n}")));
            }
            if terms[..k].contains(t) {
                return Err(Error::Config(format!("duplicate library term {t}")));
            }
        }
        Ok(Self { n, terms })
    }

    /// The plain coordinate basis `Z(x) = x`.
    pub fn identity(n: usize) -> Self {
        let terms = (0..n).map(|i| Term::coordinate(n, i)).collect();
        Self { n, terms }
    }

    /// All monomials of degree `1..=max_degree`.
    ///
    /// Within each degree the mixed monomials come first (descending
    /// lexicographic exponents), followed by the pure powers `x1^d, ..., xn^d`.
    pub fn polynomial(n: usize, max_degree: u32) -> Self {
        let mut terms: Vec<Term> = (0..n).map(|i| Term::coordinate(n, i)).collect();
        for d in 2..=max_degree {
            let mut all = Vec::new();
            exponent_vectors(n, d, &mut vec![0; n], 0, &mut all);
            all.sort_by(|a, b| b.cmp(a));
            let (pure, mixed): (Vec<_>, Vec<_>) = all.into_iter().partition(|e| e.iter().filter(|&&p| p > 0).count() == 1);
            terms.extend(mixed.into_iter().map(Term::Monomial));
            terms.extend(pure.into_iter().map(Term::Monomial));
        }
        Self { n, terms }
    }

    pub fn parse(n: usize, terms: &[&str]) -> Result<Self> {
        let terms = terms.iter().map(|t| Term::parse(t, n)).collect::<Result<Vec<_>>>()?;
        Self::new(n, terms)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_z(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn index_of(&self, term: &Term) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    /// Union of two libraries over the same state; `self` keeps its order and
    /// new terms of `other` are appended.
    pub fn merged_with(&self, other: &FunctionLibrary) -> Result<Self> {
        if other.n != self.n {
            return Err(crate::error::dim_err("library merge", self.n, other.n));
        }
        let mut terms = self.terms.clone();
        for t in &other.terms {
            if !terms.contains(t) {
                terms.push(t.clone());
            }
        }
        Self::new(self.n, terms)
    }

    /// `Z(x)`.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "library state dimension");
        let xs = x.as_slice();
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.eval(xs)))
    }

    /// Analytic Jacobian `dZ/dx`, `n_Z x n`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(x.len(), self.n, "library state dimension");
        let xs = x.as_slice();
        DMatrix::from_fn(self.terms.len(), self.n, |r, c| self.terms[r].partial(xs, c))
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(Term::to_string).collect()
    }
}

fn exponent_vectors(n: usize, remaining: u32, cur: &mut Vec<u32>, pos: usize, out: &mut Vec<Vec<u32>>) {
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        cur[pos] = p;
        exponent_vectors(n, remaining - p, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pendulum_lib() -> FunctionLibrary {
        FunctionLibrary::parse(2, &["x1", "x2", "sin(x1)"]).unwrap()
    }

    #[test]
    fn eval_at_origin_vanishes() {
        let z = pendulum_lib().eval(&DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(z.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn eval_sine_term() {
        let z = pendulum_lib().eval(&DVector::from_vec(vec![FRAC_PI_2, 3.0]));
        assert_eq!(z[0], FRAC_PI_2);
        assert_eq!(z[1], 3.0);
        assert!((z[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cubic_library_order() {
        let lib = FunctionLibrary::polynomial(2, 3);
        assert_eq!(
            lib.term_names(),
            vec!["x1", "x2", "x1*x2", "x1^2", "x2^2", "x1^2*x2", "x1*x2^2", "x1^3", "x2^3"]
        );
        let z = lib.eval(&DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(z.as_slice(), &[1.0, 2.0, 2.0, 1.0, 4.0, 2.0, 4.0, 1.0, 8.0]);
    }

    #[test]
    fn jacobian_examples() {
        let j = pendulum_lib().jacobian(&DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(j, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]));
        let lib = FunctionLibrary::parse(2, &["x1", "x2", "x1^2"]).unwrap();
        let j = lib.jacobian(&DVector::from_vec(vec![3.0, 0.0]));
        assert_eq!(j, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 6.0, 0.0]));
    }

    #[test]
    fn parse_display_round_trip() {
        for s in ["x1", "x2^3", "x1^2*x2", "sin(x2)", "cos(x1)-1"] {
            assert_eq!(Term::parse(s, 2).unwrap().to_string(), s);
        }
        assert!(Term::parse("tan(x1)", 2).is_err());
        assert!(Term::parse("x3", 2).is_err());
    }

    #[test]
    fn rejects_bad_orderings() {
        assert!(FunctionLibrary::parse(2, &["x2", "x1"]).is_err());
        assert!(FunctionLibrary::parse(2, &["x1", "x2", "x1^2", "x1^2"]).is_err());
        assert!(FunctionLibrary::parse(2, &["x1"]).is_err());
    }

    #[test]
    fn merge_appends_new_terms_only() {
        let base = FunctionLibrary::parse(2, &["x1", "x2", "x1^2*x2"]).unwrap();
        let quad = FunctionLibrary::parse(2, &["x1", "x2", "x1^2", "x2^2"]).unwrap();
        let merged = base.merged_with(&quad).unwrap();
        assert_eq!(merged.term_names(), vec!["x1", "x2", "x1^2*x2", "x1^2", "x2^2"]);
    }

    fn mixed_library() -> FunctionLibrary {
        FunctionLibrary::parse(3, &["x1", "x2", "x3", "sin(x2)", "cos(x3)-1", "x1*x2^2", "x3^3", "x1*x2*x3"]).unwrap()
    }

    fn fd_jacobian(lib: &FunctionLibrary, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(lib.n_z(), lib.n());
        for c in 0..lib.n() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            j.set_column(c, &((lib.eval(&xp) - lib.eval(&xm)) / (2.0 * h)));
        }
        j
    }

    proptest! {
        #[test]
        fn leading_block_is_state(x in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let lib = mixed_library();
            let xv = DVector::from_vec(x.clone());
            let z = lib.eval(&xv);
            prop_assert_eq!(&z.as_slice()[..3], x.as_slice());
            let j = lib.jacobian(&xv);
            prop_assert_eq!(j.view((0, 0), (3, 3)).clone_owned(), DMatrix::<f64>::identity(3, 3));
        }

        #[test]
        fn jacobian_matches_finite_differences(x in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let lib = mixed_library();
            let xv = DVector::from_vec(x);
            let diff = lib.jacobian(&xv) - fd_jacobian(&lib, &xv, 1e-6);
            prop_assert!(diff.amax() <= 1e-5, "max diff {}", diff.amax());
        }
    }
}
