//! Ground-truth oracles: model-based passivity conditions, the data
//! representation identities, numeric incremental-passivity audits, linear
//! regulator equations and regulation metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::DataSet;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, RankInfo, RANK_REL_TOL};
use crate::model::{Exosystem, FunctionLibrary, InputSignal, PlantModel};
use crate::regulator::InternalModelParams;
use crate::simulate::{integrate, run_feedback, steps_in, Trajectory};

/// `[I_n 0]`, `n x n_Z`.
fn selector(n: usize, nz: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, nz);
    s.view_mut((0, 0), (n, n)).fill_with_identity();
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma3Report {
    pub storage_lambda_min: f64,
    pub lmi_lambda_max: f64,
    pub equality_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `P > 0`, `I^T P (A + B K) + (.)^T <= 0` and `I^T P B = C^T` on
/// the true plant.
pub fn check_lemma3(model: &PlantModel, k: &DMatrix<f64>, storage: &DMatrix<f64>, tol: f64) -> Result<Lemma3Report> {
    let (n, nz, m) = (model.n(), model.n_z(), model.m());
    if k.shape() != (m, nz) {
        return Err(dim_err("gain", format!("{:?}", (m, nz)), format!("{:?}", k.shape())));
    }
    if storage.shape() != (n, n) {
        return Err(dim_err("storage matrix", format!("{:?}", (n, n)), format!("{:?}", storage.shape())));
    }
    let sel = selector(n, nz);
    let acl = model.closed_loop_drift(k);
    let l = sel.transpose() * storage * &acl;
    let lmi = &l + l.transpose();
    let eq = sel.transpose() * storage * &model.b - model.c.transpose();
    let sym = (storage + storage.transpose()) * 0.5;
    let storage_lambda_min = linalg::lambda_min(&sym);
    let lmi_lambda_max = linalg::lambda_max(&lmi);
    let equality_residual = linalg::max_abs(&eq);
    let passed = storage_lambda_min > 0.0 && lmi_lambda_max <= tol && equality_residual <= tol;
    Ok(Lemma3Report { storage_lambda_min, lmi_lambda_max, equality_residual, tolerance: tol, passed })
}

/// Box `[lo, hi]^n` sampled with a fixed seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRegion {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SampleRegion {
    fn default() -> Self {
        Self { lo: -5.0, hi: 5.0, samples: 1000, seed: 0 }
    }
}

impl SampleRegion {
    fn points(&self, n: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut pts = vec![DVector::zeros(n)];
        while pts.len() < self.samples.max(1) {
            pts.push(DVector::from_fn(n, |_, _| rng.gen_range(self.lo..=self.hi)));
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma4Report {
    pub block_lambda_min: f64,
    pub equality_residual: f64,
    /// Largest `lambda_max(J^T J - R R^T)` over the sampled region.
    pub bound_margin: f64,
    pub region: SampleRegion,
    pub tolerance: f64,
    pub passed: bool,
}

/// Validates `(dQ/dx)^T (dQ/dx) <= R R^T` on the sampled region, returning
/// the worst margin or a violation with its witness point.
pub fn validate_lipschitz_bound(library: &FunctionLibrary, r_q: &DMatrix<f64>, region: &SampleRegion) -> Result<f64> {
    let n = library.n();
    if r_q.nrows() != n {
        return Err(dim_err("Lipschitz factor rows", n, r_q.nrows()));
    }
    let rr = r_q * r_q.transpose();
    let mut worst = f64::NEG_INFINITY;
    for x in region.points(n) {
        let j = library.jacobian(&x);
        let jq = j.rows(n, library.n_z() - n).clone_owned();
        let gap = jq.transpose() * &jq - &rr;
        let lmax = linalg::lambda_max(&gap);
        let scale = 1f64.max(linalg::max_abs(&rr));
        if lmax > 1e-12 * scale {
            return Err(Error::BoundViolation {
                message: format!("(dQ/dx)^T (dQ/dx) exceeds R_Q R_Q^T by {lmax:.3e}"),
                witness: x.as_slice().to_vec(),
            });
        }
        worst = worst.max(lmax);
    }
    Ok(worst)
}

/// The Lipschitz-based sufficient condition, with the bound validated by
/// sampling.
pub fn check_lemma4(
    model: &PlantModel,
    k: &DMatrix<f64>,
    storage: &DMatrix<f64>,
    r_q: &DMatrix<f64>,
    region: &SampleRegion,
    tol: f64,
) -> Result<Lemma4Report> {
    let (n, nz, m) = (model.n(), model.n_z(), model.m());
    if k.shape() != (m, nz) {
        return Err(dim_err("gain", format!("{:?}", (m, nz)), format!("{:?}", k.shape())));
    }
    let bound_margin = validate_lipschitz_bound(&model.library, r_q, region)?;
    let acl = model.closed_loop_drift(k);
    let a1 = acl.columns(0, n).clone_owned();
    let a2 = acl.columns(n, nz - n).clone_owned();
    let pa1 = storage * &a1;
    let top_left = -(&pa1 + pa1.transpose()) - r_q * r_q.transpose();
    let off = storage * &a2;
    let block = linalg::vstack(&[
        &linalg::hstack(&[&top_left, &off]),
        &linalg::hstack(&[&off.transpose(), &DMatrix::identity(nz - n, nz - n)]),
    ]);
    let block_lambda_min = linalg::lambda_min(&block);
    let equality_residual = linalg::max_abs(&(storage * &model.b - model.c.columns(0, n).transpose()));
    let c2 = if nz > n { model.c.columns(n, nz - n).amax() } else { 0.0 };
    let equality_residual = equality_residual.max(c2);
    let passed = block_lambda_min >= -tol && equality_residual <= tol;
    Ok(Lemma4Report { block_lambda_min, equality_residual, bound_margin, region: *region, tolerance: tol, passed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma5Report {
    /// `|[I; K; 0] - D G1|`.
    pub g1_consistency: f64,
    /// `|[0; I; 0] - D G2|`.
    pub g2_consistency: f64,
    pub drift_residual: f64,
    pub input_residual: f64,
    pub output_residual: f64,
}

impl Lemma5Report {
    pub fn max(&self) -> f64 {
        [self.g1_consistency, self.g2_consistency, self.drift_residual, self.input_residual, self.output_residual]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Data-based matrices `X1 G1`, `X1 G2`, `E0 G1` against the true
/// `A + B K`, `B`, `C`.
pub fn check_lemma5(
    model: &PlantModel,
    exo: &Exosystem,
    ds: &DataSet,
    k: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    g2: &DMatrix<f64>,
) -> Result<Lemma5Report> {
    let (nz, m, q) = (ds.n_z(), ds.m(), ds.q());
    if exo.q() != q || model.n_z() != nz || model.m() != m {
        return Err(dim_err("plant, exosystem and data", format!("n_Z = {nz}, m = {m}, q = {q}"), format!(
            "n_Z = {}, m = {}, q = {}",
            model.n_z(),
            model.m(),
            exo.q()
        )));
    }
    let d = ds.zum();
    let t1 = linalg::vstack(&[&DMatrix::identity(nz, nz), k, &DMatrix::zeros(q, nz)]);
    let t2 = linalg::vstack(&[&DMatrix::zeros(nz, m), &DMatrix::identity(m, m), &DMatrix::zeros(q, m)]);
    Ok(Lemma5Report {
        g1_consistency: linalg::max_abs(&(t1 - &d * g1)),
        g2_consistency: linalg::max_abs(&(t2 - &d * g2)),
        drift_residual: linalg::max_abs(&(model.closed_loop_drift(k) - &ds.x1 * g1)),
        input_residual: linalg::max_abs(&(&model.b - &ds.x1 * g2)),
        output_residual: linalg::max_abs(&(&model.c - &ds.e0 * g1)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassivityCertificate {
    /// Minimum of `(e1 - e2)^T (v1 - v2) - dV/dt` over the grid.
    pub min_slack: f64,
    /// Time of the minimum.
    pub witness_time: f64,
    /// `max(0, -min_slack)`.
    pub max_violation: f64,
    pub samples: usize,
    pub storage: Vec<Vec<f64>>,
    pub x0: [Vec<f64>; 2],
    pub passed: bool,
}

pub const PASSIVITY_TOL: f64 = 1e-6;

/// Simulates the plant under `u = K Z(x) + v_i` from two initial states with
/// the same exogenous signal, and audits `dV/dt <= (e1 - e2)^T (v1 - v2)` for
/// `V = (x1 - x2)^T P (x1 - x2) / 2`, with `dV/dt` from the chain rule.
#[allow(clippy::too_many_arguments)]
pub fn check_passivity_numeric(
    model: &PlantModel,
    exo: &Exosystem,
    k: &DMatrix<f64>,
    storage: &DMatrix<f64>,
    x0: [&DVector<f64>; 2],
    v: [&[InputSignal]; 2],
    t_final: f64,
    dt: f64,
) -> Result<PassivityCertificate> {
    let a = run_feedback(model, exo, k, x0[0], v[0], t_final, dt)?;
    let b = run_feedback(model, exo, k, x0[1], v[1], t_final, dt)?;
    let mut min_slack = f64::INFINITY;
    let mut witness_time = 0.0;
    for i in 0..a.len() {
        let dx = &a.states[i] - &b.states[i];
        let ddx = &a.derivatives[i] - &b.derivatives[i];
        let vdot = (dx.transpose() * storage * ddx)[0];
        let supply = (&a.errors[i] - &b.errors[i]).dot(&(&a.inputs[i] - &b.inputs[i]));
        let slack = supply - vdot;
        if slack < min_slack {
            min_slack = slack;
            witness_time = a.timestamps[i];
        }
    }
    Ok(PassivityCertificate {
        min_slack,
        witness_time,
        max_violation: (-min_slack).max(0.0),
        samples: a.len(),
        storage: storage.row_iter().map(|r| r.iter().copied().collect()).collect(),
        x0: [x0[0].as_slice().to_vec(), x0[1].as_slice().to_vec()],
        passed: min_slack >= -PASSIVITY_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InternalModelCertificate {
    /// Extremes of `(v1 - v2)^T (e1 - e2) - dV/dt` with the chain-rule
    /// derivative of `V = |eta1 - eta2|^2 / (2 alpha)`.
    pub min_slack: f64,
    pub max_slack: f64,
    /// Same quantity with `dV/dt` from central differences of `V`.
    pub max_discrete_deviation: f64,
    pub samples: usize,
    pub passed: bool,
}

pub const INTERNAL_MODEL_TOL: f64 = 1e-8;

/// Two copies of `eta' = S eta + alpha Xi e_i` with output `v = Xi^T eta`.
pub fn check_internal_model_passivity(
    im: &InternalModelParams,
    eta0: [&DVector<f64>; 2],
    inputs: [&[InputSignal]; 2],
    t_final: f64,
    dt: f64,
) -> Result<InternalModelCertificate> {
    let q = im.q();
    for (i, e) in eta0.iter().enumerate() {
        if e.len() != q {
            return Err(dim_err(&format!("internal-model initial state {i}"), q, e.len()));
        }
        if inputs[i].len() != im.m() {
            return Err(dim_err(&format!("internal-model input {i}"), im.m(), inputs[i].len()));
        }
    }
    let steps = steps_in(t_final, dt, "internal-model horizon")?;
    let sig = |s: &[InputSignal], t: f64| DVector::from_iterator(s.len(), s.iter().map(|x| x.eval(t)));
    let run = |i: usize| {
        let f = |t: f64, eta: &DVector<f64>| im.rhs(eta, &sig(inputs[i], t)).0;
        integrate(f, eta0[i].clone(), 0.0, dt, steps)
    };
    let (ea, eb) = (run(0)?, run(1)?);
    let alpha = im.alpha();
    let storage: Vec<f64> = ea.iter().zip(&eb).map(|(a, b)| im.storage(a, b)).collect();
    let (mut min_slack, mut max_slack, mut max_dev) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (ua, ub) = (sig(inputs[0], t), sig(inputs[1], t));
        let (da, va) = im.rhs(&ea[k], &ua);
        let (db, vb) = im.rhs(&eb[k], &ub);
        let supply = (va - vb).dot(&(ua - ub));
        let vdot = (&ea[k] - &eb[k]).dot(&(da - db)) / alpha;
        let slack = supply - vdot;
        min_slack = min_slack.min(slack);
        max_slack = max_slack.max(slack);
        if k > 0 && k < steps {
            let fd = (storage[k + 1] - storage[k - 1]) / (2.0 * dt);
            max_dev = max_dev.max((supply - fd).abs());
        }
    }
    Ok(InternalModelCertificate {
        min_slack,
        max_slack,
        max_discrete_deviation: max_dev,
        samples: steps + 1,
        passed: min_slack >= -INTERNAL_MODEL_TOL && max_slack <= INTERNAL_MODEL_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulatorEquationReport {
    pub solvable: bool,
    pub unique: bool,
    pub residual: f64,
    pub rank: RankInfo,
    pub augmented_rank: RankInfo,
    pub unknowns: usize,
    #[serde(skip)]
    pub pi: Option<DMatrix<f64>>,
    #[serde(skip)]
    pub gamma: Option<DMatrix<f64>>,
}

pub const REGULATOR_EQUATION_TOL: f64 = 1e-8;

/// Solves `Pi S = A Pi + B Gamma + E`, `0 = C Pi + F` by vectorization.
pub fn solve_linear_regulator_equations(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<RegulatorEquationReport> {
    let n = a.nrows();
    let m = b.ncols();
    let q = s.nrows();
    let checks = [
        ("A", a.shape(), (n, n)),
        ("B", b.shape(), (n, m)),
        ("C", c.shape(), (c.nrows(), n)),
        ("E", e.shape(), (n, q)),
        ("F", f.shape(), (c.nrows(), q)),
        ("S", s.shape(), (q, q)),
    ];
    for (name, got, want) in checks {
        if got != want {
            return Err(dim_err(&format!("regulator equations {name}"), format!("{want:?}"), format!("{got:?}")));
        }
    }
    let p = c.nrows();
    let iq = DMatrix::identity(q, q);
    let in_ = DMatrix::identity(n, n);
    let top = linalg::hstack(&[&(linalg::kron(&s.transpose(), &in_) - linalg::kron(&iq, a)), &-linalg::kron(&iq, b)]);
    let bottom = linalg::hstack(&[&linalg::kron(&iq, c), &DMatrix::zeros(p * q, m * q)]);
    let lhs = linalg::vstack(&[&top, &bottom]);
    let rhs = DVector::from_iterator(n * q + p * q, e.iter().copied().chain(f.iter().map(|v| -v)));
    let unknowns = n * q + m * q;
    let rank = linalg::numerical_rank(&lhs, RANK_REL_TOL);
    let aug = linalg::hstack(&[&lhs, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice())]);
    let augmented_rank = linalg::numerical_rank(&aug, RANK_REL_TOL);
    let sol = linalg::pinv(&lhs) * &rhs;
    let pi = DMatrix::from_column_slice(n, q, &sol.as_slice()[..n * q]);
    let gamma = DMatrix::from_column_slice(m, q, &sol.as_slice()[n * q..]);
    let r1 = &pi * s - a * &pi - b * &gamma - e;
    let r2 = c * &pi + f;
    let residual = linalg::max_abs(&r1).max(linalg::max_abs(&r2));
    let solvable = residual <= REGULATOR_EQUATION_TOL * 1f64.max(linalg::max_abs(e)).max(linalg::max_abs(f));
    Ok(RegulatorEquationReport {
        solvable,
        unique: solvable && rank.rank == unknowns,
        residual,
        rank,
        augmented_rank,
        unknowns,
        pi: solvable.then_some(pi),
        gamma: solvable.then_some(gamma),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSpec {
    pub band: f64,
    pub bound: f64,
    pub checkpoints: Vec<f64>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self { band: 2e-2, bound: 1e6, checkpoints: vec![0.0, 10.0, 20.0, 30.0, 40.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulationMetrics {
    /// `(t, |e(t)|)` at the sample nearest each requested checkpoint.
    pub checkpoints: Vec<(f64, f64)>,
    /// First time after which `|e|` stays within the band.
    pub settling_time: Option<f64>,
    pub max_error: f64,
    pub final_error: f64,
    pub bounded: bool,
    pub first_exceedance: Option<f64>,
    pub max_state_norm: f64,
    pub max_eta_norm: f64,
}

impl RegulationMetrics {
    /// Largest `|e(t)|` for `t >= t0`.
    pub fn max_error_after(traj: &Trajectory, t0: f64) -> f64 {
        traj.timestamps
            .iter()
            .zip(&traj.errors)
            .filter(|(t, _)| **t >= t0 - 1e-12)
            .map(|(_, e)| e.amax())
            .fold(0.0, f64::max)
    }
}

pub fn regulation_metrics(traj: &Trajectory, spec: &MetricsSpec) -> RegulationMetrics {
    let norms = traj.error_norms();
    let mut last_outside = None;
    for (i, &v) in norms.iter().enumerate() {
        if !(v <= spec.band) {
            last_outside = Some(i);
        }
    }
    let settling_time = match last_outside {
        None => traj.timestamps.first().copied(),
        Some(i) if i + 1 < norms.len() => Some(traj.timestamps[i + 1]),
        Some(_) => None,
    };
    let mut first_exceedance = None;
    let (mut max_x, mut max_eta) = (0.0f64, 0.0f64);
    for i in 0..traj.len() {
        let xn = traj.states[i].norm();
        let en = traj.eta.get(i).map_or(0.0, |e| e.norm());
        max_x = max_x.max(xn);
        max_eta = max_eta.max(en);
        if first_exceedance.is_none() && (!(xn <= spec.bound) || !(en <= spec.bound)) {
            first_exceedance = Some(traj.timestamps[i]);
        }
    }
    let checkpoints = spec
        .checkpoints
        .iter()
        .filter_map(|&c| {
            let i = traj.timestamps.iter().position(|&t| t >= c - 1e-12)?;
            Some((traj.timestamps[i], norms[i]))
        })
        .collect();
    RegulationMetrics {
        checkpoints,
        settling_time,
        max_error: norms.iter().copied().fold(0.0, f64::max),
        final_error: norms.last().copied().unwrap_or(0.0),
        bounded: first_exceedance.is_none(),
        first_exceedance,
        max_state_norm: max_x,
        max_eta_norm: max_eta,
    }
}
