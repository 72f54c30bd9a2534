//! Data-based passivation: the semidefinite program over `(Y, G2, P)` and
//! the gain `K = U0 Y P^-1`.
//!
//! Constraints, with `D = [Z0; U0; M0]` and `P = blockdiag(P1, P2)`:
//!
//! * `Z0 Y = P`, `M0 Y = 0`
//! * `D G2 = [0; I; 0]`
//! * `[I 0]^T X1 Y + (.)^T <= 0`
//! * `[(X1 G2)^T 0] = E0 Y` (or `= C P` with a known output map)
//! * `P >= eps_P I`
//!
//! The lower-right block of the matrix inequality is identically zero, so it
//! is passed to the solver as `X1 Y[:, n..] = 0` together with
//! `-(X1 Y[:, ..n] + (.)^T) >= 0`; a PSD matrix with a zero diagonal block
//! has zero off-diagonal blocks, so the two forms have the same solutions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{self, DataSet, GateReport};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, RANK_REL_TOL};
use crate::model::FunctionLibrary;
use crate::sdp::{ClarabelBackend, MatExpr, SdpProblem, SdpSolver, SdpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    /// Block-diagonal `P` over a library `Z = [x; Q(x)]`.
    Nonlinear,
    /// Identity library; `P` unstructured.
    Linear,
    /// Known output map replaces `E0 Y`.
    Stabilization,
}

impl fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthesisMode::Nonlinear => "nonlinear",
            SynthesisMode::Linear => "linear",
            SynthesisMode::Stabilization => "stabilization",
        })
    }
}

impl FromStr for SynthesisMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonlinear" => Ok(Self::Nonlinear),
            "linear" => Ok(Self::Linear),
            "stabilization" => Ok(Self::Stabilization),
            other => Err(Error::Mode(format!("unknown synthesis mode '{other}'"))),
        }
    }
}

/// Tie-breaking objective over the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `tr(P)`.
    Trace,
    /// `tr(P) + tr(W)` with `W >= P^-1` per block; keeps `P` well conditioned.
    #[default]
    Conditioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisOptions {
    pub eps_p: f64,
    pub eps_eq: f64,
    pub lmi_tol: f64,
    pub gain_tol: f64,
    pub condition_warning: f64,
    pub objective: Objective,
    /// Weight on the spectral norm of `U0 Y = K P`. Without it the gain is
    /// unbounded along the feasible set and the solver may return a very
    /// stiff one.
    pub gain_weight: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            eps_p: 1e-6,
            eps_eq: 1e-6,
            lmi_tol: 1e-7,
            gain_tol: 1e-8,
            condition_warning: 1e10,
            objective: Objective::default(),
            gain_weight: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub ds: DataSet,
    pub mode: SynthesisMode,
    /// Known output map (stabilization only), `m x n_Z`.
    pub c_tilde: Option<DMatrix<f64>>,
    pub options: SynthesisOptions,
}

impl SynthesisProblem {
    pub fn new(ds: DataSet, mode: SynthesisMode, c_tilde: Option<DMatrix<f64>>, options: SynthesisOptions) -> Result<Self> {
        let (n, nz, m) = (ds.n(), ds.n_z(), ds.m());
        match mode {
            SynthesisMode::Linear if nz != n => {
                return Err(Error::Mode(format!("linear mode needs the identity library, got n_Z = {nz} for n = {n}")));
            }
            SynthesisMode::Stabilization => {
                let c = c_tilde.as_ref().ok_or_else(|| Error::Mode("stabilization mode needs a known output map".into()))?;
                if c.shape() != (m, nz) {
                    return Err(dim_err("known output map", format!("{:?}", (m, nz)), format!("{:?}", c.shape())));
                }
                if m != 1 && m != n {
                    return Err(Error::Mode(format!("stabilization needs a single input or a fully actuated plant, got m = {m}")));
                }
            }
            _ if c_tilde.is_some() => {
                return Err(Error::Mode(format!("a known output map is only used in stabilization mode, not {mode}")));
            }
            _ => {}
        }
        if !(options.eps_p > 0.0) {
            return Err(Error::Parameter("eps_P must be positive".into()));
        }
        Ok(Self { ds, mode, c_tilde, options })
    }
}

/// Independently recomputed condition residuals. Equality residuals are
/// max-abs differences divided by `max(1, |lhs|, |rhs|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `Z0 Y = P`.
    pub state_consistency: f64,
    /// `M0 Y = 0`.
    pub exo_annihilation: f64,
    /// `[Z0; U0; M0] G2 = [0; I; 0]`.
    pub input_representation: f64,
    /// `[(X1 G2)^T 0] = E0 Y` or `= C P`.
    pub output_matching: f64,
    /// Largest eigenvalue of `[I 0]^T X1 Y + (.)^T`.
    pub lmi_lambda_max: f64,
    /// Same for the leading `n x n` block; the library rows are zero by
    /// construction, so only this block says whether the margin is strict.
    pub state_lmi_lambda_max: f64,
    pub p_lambda_min: f64,
    /// Absolute `|K P - U0 Y|`.
    pub gain_identity: f64,
    pub p_condition: f64,
}

impl Residuals {
    pub fn failures(&self, o: &SynthesisOptions) -> Vec<String> {
        let mut out = Vec::new();
        let eq = [
            ("state consistency", self.state_consistency),
            ("exogenous annihilation", self.exo_annihilation),
            ("input representation", self.input_representation),
            ("output matching", self.output_matching),
        ];
        for (name, v) in eq {
            if !(v <= o.eps_eq) {
                out.push(format!("{name} residual {v:.3e} exceeds {:.1e}", o.eps_eq));
            }
        }
        if !(self.lmi_lambda_max <= o.lmi_tol) {
            out.push(format!("matrix inequality lambda_max {:.3e} exceeds {:.1e}", self.lmi_lambda_max, o.lmi_tol));
        }
        // Interior-point iterates meet eps_P up to the solver tolerance.
        if !(self.p_lambda_min >= o.eps_p * (1.0 - 1e-3)) {
            out.push(format!("lambda_min(P) = {:.3e} below {:.1e}", self.p_lambda_min, o.eps_p));
        }
        if !(self.gain_identity <= o.gain_tol) {
            out.push(format!("gain identity residual {:.3e} exceeds {:.1e}", self.gain_identity, o.gain_tol));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub mode: SynthesisMode,
    pub library: FunctionLibrary,
    pub y: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residuals: Residuals,
    pub solver_status: String,
    pub iterations: u32,
    pub solve_time: f64,
    pub gate: GateReport,
    pub warnings: Vec<String>,
}

impl SynthesisResult {
    pub fn n(&self) -> usize {
        self.library.n()
    }

    pub fn p1(&self) -> DMatrix<f64> {
        let n = self.n();
        self.p.view((0, 0), (n, n)).clone_owned()
    }

    pub fn p2(&self) -> DMatrix<f64> {
        let (n, nz) = (self.n(), self.library.n_z());
        self.p.view((n, n), (nz - n, nz - n)).clone_owned()
    }

    /// Storage matrix `P1^-1` of `V = (x1 - x2)^T P1^-1 (x1 - x2) / 2`.
    pub fn storage_matrix(&self) -> DMatrix<f64> {
        symmetric_inverse(&self.p1())
    }

    /// `G1 = Y P^-1`.
    pub fn g1(&self) -> DMatrix<f64> {
        &self.y * symmetric_inverse(&self.p)
    }
}

pub fn symmetric_inverse(p: &DMatrix<f64>) -> DMatrix<f64> {
    match p.clone().cholesky() {
        Some(c) => c.inverse(),
        None => p.clone().try_inverse().unwrap_or_else(|| linalg::pinv(p)),
    }
}

/// `K = U0 Y P^-1`, via a Cholesky solve of `P K^T = (U0 Y)^T`.
pub fn gain_from(u0: &DMatrix<f64>, y: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let uy = u0 * y;
    match p.clone().cholesky() {
        Some(c) => c.solve(&uy.transpose()).transpose(),
        None => uy * symmetric_inverse(p),
    }
}

fn rel_residual(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> f64 {
    let scale = 1f64.max(linalg::max_abs(lhs)).max(linalg::max_abs(rhs));
    linalg::max_abs(&(lhs - rhs)) / scale
}

/// Recomputes every condition for a candidate certificate, independently of
/// how it was produced.
pub fn evaluate_certificate(
    ds: &DataSet,
    c_tilde: Option<&DMatrix<f64>>,
    y: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Residuals {
    let (n, nz, m) = (ds.n(), ds.n_z(), ds.m());
    let t = ds.t();
    let target = linalg::vstack(&[&DMatrix::zeros(nz, m), &DMatrix::identity(m, m), &DMatrix::zeros(ds.q(), m)]);
    let x1g2t = (&ds.x1 * g2).transpose();
    let padded = linalg::hstack(&[&x1g2t, &DMatrix::zeros(m, nz - n)]);
    let out_rhs = match c_tilde {
        Some(c) => c * p,
        None => &ds.e0 * y,
    };
    let x1y = &ds.x1 * y;
    let mut lmi = DMatrix::zeros(nz, nz);
    lmi.view_mut((0, 0), (n, nz)).copy_from(&x1y);
    let lmi = &lmi + lmi.transpose();
    let k = gain_from(&ds.u0, y, p);
    debug_assert_eq!(y.nrows(), t);
    Residuals {
        state_consistency: rel_residual(&(&ds.z0 * y), p),
        exo_annihilation: rel_residual(&(&ds.m0 * y), &DMatrix::zeros(ds.q(), nz)),
        input_representation: rel_residual(&(ds.zum() * g2), &target),
        output_matching: rel_residual(&padded, &out_rhs),
        lmi_lambda_max: linalg::lambda_max(&lmi),
        state_lmi_lambda_max: linalg::lambda_max(&lmi.view((0, 0), (n, n)).clone_owned()),
        p_lambda_min: linalg::lambda_min(&((p + p.transpose()) * 0.5)),
        gain_identity: linalg::max_abs(&(&k * p - &ds.u0 * y)),
        p_condition: linalg::condition_number(p),
    }
}

/// Structural obstructions visible from data alone.
///
/// With `[Z0; U0; M0]` of full row rank the data determine `B` and `C`
/// uniquely. Feasibility forces the output map onto the coordinate block
/// with `C1 = B^T P1^-1`, so `C2 = 0` and `C1 B` symmetric positive definite
/// are necessary.
pub fn infeasibility_diagnostics(ds: &DataSet, c_tilde: Option<&DMatrix<f64>>) -> Vec<String> {
    let mut out = Vec::new();
    let (n, nz, m) = (ds.n(), ds.n_z(), ds.m());
    let d = ds.zum();
    let rank = linalg::numerical_rank(&d, RANK_REL_TOL);
    if rank.rank < d.nrows() {
        out.push(format!(
            "[Z0; U0; M0] has rank {} < {} rows: the input map cannot be represented uniquely from data",
            rank.rank,
            d.nrows()
        ));
        return out;
    }
    let dp = linalg::pinv(&d);
    let b_hat = (&ds.x1 * &dp).columns(nz, m).clone_owned();
    let c_hat = match c_tilde {
        Some(c) => c.clone(),
        None => (&ds.e0 * &dp).columns(0, nz).clone_owned(),
    };
    let scale = linalg::max_abs(&c_hat).max(1e-300);
    if nz > n {
        let c2 = c_hat.columns(n, nz - n);
        let c2max = c2.amax();
        if c2max > 1e-6 * scale {
            out.push(format!(
                "the error depends on non-coordinate library terms (max weight {c2max:.3e}); the output matching equality forces that block to vanish"
            ));
        }
    }
    let cb = c_hat.columns(0, n) * &b_hat;
    let sym = (&cb + cb.transpose()) * 0.5;
    let asym = linalg::max_abs(&(&cb - cb.transpose()));
    let cb_scale = linalg::max_abs(&cb).max(linalg::max_abs(&b_hat) * scale);
    let lmin = linalg::lambda_min(&sym);
    if asym > 1e-6 * cb_scale.max(1e-300) || lmin <= 1e-8 * cb_scale.max(1e-300) {
        out.push(format!(
            "C1 B = {} (from data) is not symmetric positive definite; the error must have relative degree one with respect to the input",
            fmt_matrix(&cb)
        ));
    }
    out
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

pub fn synthesize(problem: &SynthesisProblem) -> Result<SynthesisResult> {
    synthesize_with(problem, &ClarabelBackend::default())
}

pub fn synthesize_nonlinear(ds: &DataSet, options: SynthesisOptions) -> Result<SynthesisResult> {
    synthesize(&SynthesisProblem::new(ds.clone(), SynthesisMode::Nonlinear, None, options)?)
}

pub fn synthesize_linear(ds: &DataSet, options: SynthesisOptions) -> Result<SynthesisResult> {
    synthesize(&SynthesisProblem::new(ds.clone(), SynthesisMode::Linear, None, options)?)
}

pub fn synthesize_stabilization(ds: &DataSet, c_tilde: &DMatrix<f64>, options: SynthesisOptions) -> Result<SynthesisResult> {
    synthesize(&SynthesisProblem::new(ds.clone(), SynthesisMode::Stabilization, Some(c_tilde.clone()), options)?)
}

struct Program {
    sdp: SdpProblem,
    y: MatExpr,
    g2: MatExpr,
    p: MatExpr,
}

fn build_program(pb: &SynthesisProblem) -> Program {
    let ds = &pb.ds;
    let (n, nz, m, q, t) = (ds.n(), ds.n_z(), ds.m(), ds.q(), ds.t());
    let nq = nz - n;
    let opts = &pb.options;
    let mut sdp = SdpProblem::new();
    let y = sdp.matrix_var(t, nz);
    let g2 = sdp.matrix_var(t, m);
    let p1 = sdp.symmetric_var(n);
    let p2 = sdp.symmetric_var(nq);
    let p = MatExpr::vstack(&[
        &MatExpr::hstack(&[&p1, &MatExpr::zeros(n, nq)]),
        &MatExpr::hstack(&[&MatExpr::zeros(nq, n), &p2]),
    ]);

    sdp.equal("Z0 Y = P", &y.left_mul(&ds.z0), &p);
    sdp.equal("M0 Y = 0", &y.left_mul(&ds.m0), &MatExpr::zeros(q, nz));

    let target = linalg::vstack(&[&DMatrix::zeros(nz, m), &DMatrix::identity(m, m), &DMatrix::zeros(q, m)]);
    sdp.equal("D G2", &g2.left_mul(&ds.zum()), &MatExpr::from_constant(&target));

    let x1y = y.left_mul(&ds.x1);
    let x1y1 = x1y.columns_range(0, n);
    if nq > 0 {
        sdp.equal("X1 Y2 = 0", &x1y.columns_range(n, nq), &MatExpr::zeros(n, nq));
    }
    sdp.psd("-(X1 Y1 + .T)", &-&(&x1y1 + &x1y1.transpose()));

    let x1g2t = g2.left_mul(&ds.x1).transpose();
    match &pb.c_tilde {
        Some(c) => {
            sdp.equal("output coordinates", &x1g2t, &p1.left_mul(&c.columns(0, n).clone_owned()));
            if nq > 0 {
                sdp.equal("output library", &p2.left_mul(&c.columns(n, nq).clone_owned()), &MatExpr::zeros(m, nq));
            }
        }
        None => {
            let e0y = y.left_mul(&ds.e0);
            sdp.equal("output coordinates", &x1g2t, &e0y.columns_range(0, n));
            if nq > 0 {
                sdp.equal("output library", &e0y.columns_range(n, nq), &MatExpr::zeros(m, nq));
            }
        }
    }

    let mut objective = p.trace();
    for (blk, dim) in [(&p1, n), (&p2, nq)] {
        if dim == 0 {
            continue;
        }
        let shift = MatExpr::from_constant(&(DMatrix::identity(dim, dim) * opts.eps_p));
        sdp.psd("P - eps I", &(blk - &shift));
        if opts.objective == Objective::Conditioning {
            let w = sdp.symmetric_var(dim);
            let id = MatExpr::identity(dim);
            let schur = MatExpr::vstack(&[&MatExpr::hstack(&[&w, &id]), &MatExpr::hstack(&[&id, blk])]);
            sdp.psd("[W I; I P]", &schur);
            objective = objective + w.trace();
        }
    }
    if opts.gain_weight > 0.0 {
        let l = y.left_mul(&ds.u0);
        let bound = sdp.matrix_var(1, 1).get(0, 0).clone();
        let block = MatExpr::vstack(&[
            &MatExpr::hstack(&[&MatExpr::scaled_identity(&bound, m), &l]),
            &MatExpr::hstack(&[&l.transpose(), &MatExpr::scaled_identity(&bound, nz)]),
        ]);
        sdp.psd("|U0 Y| <= t", &block);
        objective = objective + bound.scaled(opts.gain_weight);
    }
    sdp.minimize(objective);
    Program { sdp, y, g2, p }
}

pub fn synthesize_with(pb: &SynthesisProblem, backend: &dyn SdpSolver) -> Result<SynthesisResult> {
    let ds = &pb.ds;
    let gate = data::richness_gate(ds)?;
    let program = build_program(pb);
    let (n_eq, psd_dims) = program.sdp.constraint_summary();
    log::debug!(
        "synthesis ({}) with {} scalars, {} equalities, PSD blocks {:?}",
        pb.mode,
        program.sdp.n_vars(),
        n_eq,
        psd_dims
    );
    let sol = backend.solve(&program.sdp)?;
    let diagnostics = || infeasibility_diagnostics(ds, pb.c_tilde.as_ref());
    if sol.status.is_infeasible() || sol.status == SdpStatus::Unbounded {
        return Err(Error::Infeasible { status: sol.status.to_string(), diagnostics: diagnostics() });
    }

    let y = program.y.eval(&sol.x);
    let g2 = program.g2.eval(&sol.x);
    let p = program.p.eval(&sol.x);
    let p = (&p + p.transpose()) * 0.5;
    let residuals = evaluate_certificate(ds, pb.c_tilde.as_ref(), &y, &g2, &p);
    let failures = residuals.failures(&pb.options);
    if !failures.is_empty() {
        let mut diag = failures;
        diag.extend(diagnostics());
        return Err(Error::Infeasible { status: format!("{} but the certificate check failed", sol.status), diagnostics: diag });
    }

    let mut warnings = Vec::new();
    if sol.status != SdpStatus::Solved {
        warnings.push(format!("solver status: {}", sol.status));
    }
    if residuals.p_condition > pb.options.condition_warning {
        warnings.push(format!("P is ill conditioned (condition number {:.3e})", residuals.p_condition));
    }
    if residuals.state_lmi_lambda_max > -1e-9 {
        warnings.push(format!(
            "matrix inequality is marginal (lambda_max = {:.3e}); convergence may be slow",
            residuals.state_lmi_lambda_max
        ));
    }
    let m0_rank = linalg::numerical_rank(&ds.m0, RANK_REL_TOL);
    if m0_rank.rank < ds.q() {
        warnings.push(format!("M0 has rank {} < q = {}: sampling may alias an exosystem frequency", m0_rank.rank, ds.q()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let k = gain_from(&ds.u0, &y, &p);
    Ok(SynthesisResult {
        mode: pb.mode,
        library: ds.library.clone(),
        y,
        g2,
        p,
        k,
        residuals,
        solver_status: sol.status.to_string(),
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        gate,
        warnings,
    })
}
