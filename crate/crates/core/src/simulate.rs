//! Fixed-step fourth-order integration of open-loop experiments and of the
//! plant/regulator interconnection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::{Exosystem, InputSignal, PlantModel};
use crate::regulator::Regulator;

pub const DEFAULT_DT: f64 = 1e-3;

/// Sampled record of one run. Every series has the same length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Right-hand side evaluations at the sample instants.
    pub derivatives: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub errors: Vec<DVector<f64>>,
    /// Ground-truth exogenous signal; never part of a synthesis view.
    pub exo_states: Vec<DVector<f64>>,
    /// Internal-model state (empty vectors for open-loop experiments).
    pub eta: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    fn push(&mut self, t: f64, x: DVector<f64>, dx: DVector<f64>, u: DVector<f64>, e: DVector<f64>, w: DVector<f64>, eta: DVector<f64>) {
        self.timestamps.push(t);
        self.states.push(x);
        self.derivatives.push(dx);
        self.inputs.push(u);
        self.errors.push(e);
        self.exo_states.push(w);
        self.eta.push(eta);
    }

    /// Euclidean norm of the recorded error at each sample.
    pub fn error_norms(&self) -> Vec<f64> {
        self.errors.iter().map(|e| e.norm()).collect()
    }
}

/// How `x'(t_k)` is recorded in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Evaluate the plant right-hand side at the sample.
    #[default]
    Exact,
    /// Second-order central difference over one integration step.
    CentralDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub x0: Vec<f64>,
    /// One signal per input channel.
    pub inputs: Vec<InputSignal>,
    pub sample_period: f64,
    pub samples: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Absolute time of the first sample on the shared exosystem clock.
    #[serde(default)]
    pub start_time: f64,
    #[serde(default)]
    pub derivative: DerivativeMode,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSpec {
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Recording period; must be a multiple of `dt`.
    #[serde(default = "default_record_period")]
    pub record_period: f64,
}

fn default_record_period() -> f64 {
    0.01
}

impl ClosedLoopSpec {
    pub fn new(t_final: f64, dt: f64, record_period: f64) -> Self {
        Self { t_final, dt, record_period }
    }
}

/// One classical Runge-Kutta step.
pub fn rk4_step<F>(f: &F, t: f64, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integer number of `dt` steps in `period`, rejecting non-divisors.
pub fn steps_in(period: f64, dt: f64, what: &str) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0 && period.is_finite() && period >= 0.0) {
        return Err(Error::Config(format!("{what}: period {period} and step {dt} must be positive and finite")));
    }
    let steps = (period / dt).round();
    if (steps * dt - period).abs() > 1e-9 * period.max(dt) {
        return Err(Error::Config(format!("{what}: integration step {dt} does not divide {period}")));
    }
    Ok(steps as usize)
}

/// Integrates `x' = f(t, x)` for `steps` steps, returning every state
/// (including the initial one).
pub fn integrate<F>(f: F, x0: DVector<f64>, t0: f64, dt: f64, steps: usize) -> Result<Vec<DVector<f64>>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let next = rk4_step(&f, t, &out[k], dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { time: t + dt });
        }
        out.push(next);
    }
    Ok(out)
}

fn input_vector(inputs: &[InputSignal], t: f64) -> DVector<f64> {
    DVector::from_iterator(inputs.len(), inputs.iter().map(|s| s.eval(t)))
}

/// Open-loop experiment sampled every `sample_period`.
pub fn run_experiment(model: &PlantModel, exo: &Exosystem, spec: &ExperimentSpec) -> Result<Trajectory> {
    model.check_signal_dims(spec.x0.len(), spec.inputs.len(), exo.q())?;
    if spec.samples == 0 {
        return Err(Error::Config("experiment needs at least one sample".into()));
    }
    let per_sample = steps_in(spec.sample_period, spec.dt, "experiment sampling")?;
    if per_sample == 0 && spec.samples > 1 {
        return Err(Error::Config("sample period must be positive".into()));
    }
    let t0 = spec.start_time;
    let dt = spec.dt;
    let rhs = |t: f64, x: &DVector<f64>| model.rhs(x, &input_vector(&spec.inputs, t), &exo.state(t));
    let extra = usize::from(spec.derivative == DerivativeMode::CentralDifference);
    let total = (spec.samples - 1) * per_sample + extra;
    let states = integrate(rhs, DVector::from_vec(spec.x0.clone()), t0, dt, total)?;

    let mut traj = Trajectory::default();
    for k in 0..spec.samples {
        let idx = k * per_sample;
        let t = t0 + idx as f64 * dt;
        let x = states[idx].clone();
        let u = input_vector(&spec.inputs, t);
        let w = exo.state(t);
        let dx = match spec.derivative {
            DerivativeMode::Exact => model.rhs(&x, &u, &w),
            DerivativeMode::CentralDifference if idx == 0 => {
                (&states[1] * 4.0 - &states[0] * 3.0 - &states[2.min(states.len() - 1)]) / (2.0 * dt)
            }
            DerivativeMode::CentralDifference => (&states[idx + 1] - &states[idx - 1]) / (2.0 * dt),
        };
        let e = model.error(&x, &w);
        traj.push(t, x, dx, u, e, w, DVector::zeros(0));
    }
    Ok(traj)
}

/// Plant in feedback with the regulator, starting from `(x0, eta0)` at t = 0.
pub fn run_closed_loop(
    model: &PlantModel,
    exo: &Exosystem,
    regulator: &Regulator,
    x0: &DVector<f64>,
    eta0: Option<&DVector<f64>>,
    spec: &ClosedLoopSpec,
) -> Result<Trajectory> {
    let (n, m) = (model.n(), model.m());
    model.check_signal_dims(x0.len(), m, exo.q())?;
    regulator.check_plant(model)?;
    let qi = regulator.eta_dim();
    let eta0 = eta0.cloned().unwrap_or_else(|| DVector::zeros(qi));
    if eta0.len() != qi {
        return Err(dim_err("internal-model initial state", qi, eta0.len()));
    }
    let steps = steps_in(spec.t_final, spec.dt, "closed-loop horizon")?;
    let every = steps_in(spec.record_period, spec.dt, "closed-loop recording")?.max(1);

    let split = |z: &DVector<f64>| (z.rows(0, n).clone_owned(), z.rows(n, qi).clone_owned());
    let law = |t: f64, z: &DVector<f64>| {
        let (x, eta) = split(z);
        let w = exo.state(t);
        let e = model.error(&x, &w);
        let (deta, u) = regulator.rhs(&x, &eta, &e);
        (x, eta, w, e, deta, u)
    };
    let rhs = |t: f64, z: &DVector<f64>| {
        let (x, _, w, _, deta, u) = law(t, z);
        let dx = model.rhs(&x, &u, &w);
        let mut out = DVector::zeros(n + qi);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, qi).copy_from(&deta);
        out
    };

    let mut z0 = DVector::zeros(n + qi);
    z0.rows_mut(0, n).copy_from(x0);
    z0.rows_mut(n, qi).copy_from(&eta0);

    let mut traj = Trajectory::default();
    let mut z = z0;
    let record = |traj: &mut Trajectory, t: f64, z: &DVector<f64>| {
        let (x, eta, w, e, _, u) = law(t, z);
        let dx = model.rhs(&x, &u, &w);
        traj.push(t, x, dx, u, e, w, eta);
    };
    record(&mut traj, 0.0, &z);
    for k in 0..steps {
        let t = k as f64 * spec.dt;
        z = rk4_step(&rhs, t, &z, spec.dt);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { time: t + spec.dt });
        }
        if (k + 1) % every == 0 {
            record(&mut traj, (k + 1) as f64 * spec.dt, &z);
        }
    }
    Ok(traj)
}

/// Plant under static feedback `u = K Z(x) + v(t)`, recorded at every step.
pub fn run_feedback(
    model: &PlantModel,
    exo: &Exosystem,
    gain: &DMatrix<f64>,
    x0: &DVector<f64>,
    virtual_inputs: &[InputSignal],
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    model.check_signal_dims(x0.len(), virtual_inputs.len(), exo.q())?;
    if gain.shape() != (model.m(), model.n_z()) {
        return Err(dim_err("feedback gain", format!("{:?}", (model.m(), model.n_z())), format!("{:?}", gain.shape())));
    }
    let steps = steps_in(t_final, dt, "feedback horizon")?;
    let input = |t: f64, x: &DVector<f64>| gain * model.library.eval(x) + input_vector(virtual_inputs, t);
    let rhs = |t: f64, x: &DVector<f64>| model.rhs(x, &input(t, x), &exo.state(t));
    let states = integrate(rhs, x0.clone(), 0.0, dt, steps)?;
    let mut traj = Trajectory::default();
    for (k, x) in states.into_iter().enumerate() {
        let t = k as f64 * dt;
        let w = exo.state(t);
        let v = input_vector(virtual_inputs, t);
        let u = input(t, &x);
        let dx = model.rhs(&x, &u, &w);
        let e = model.error(&x, &w);
        // `inputs` holds the virtual input v for this kind of run.
        traj.push(t, x, dx, v, e, w, DVector::zeros(0));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::model::FunctionLibrary;
    use crate::regulator::InternalModelParams;

    fn zero_plant() -> PlantModel {
        PlantModel::new(
            FunctionLibrary::identity(2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn pendulum_experiment_shape() {
        let ex = examples::pendulum();
        let traj = run_experiment(&ex.plant, &ex.exosystem, &ex.experiment).unwrap();
        assert_eq!(traj.len(), 15);
        assert!((traj.timestamps[14] - 7.0).abs() < 1e-12);
        for k in 0..traj.len() {
            let want = ex.plant.rhs(&traj.states[k], &traj.inputs[k], &traj.exo_states[k]);
            assert_eq!(traj.derivatives[k], want);
        }
    }

    #[test]
    fn zero_dynamics_stay_constant() {
        let exo = Exosystem::new(vec![], 1, DVector::from_vec(vec![1.0])).unwrap();
        let spec = ExperimentSpec {
            x0: vec![0.3, -1.0],
            inputs: vec![InputSignal::sine(1.0, 1.0, 0.0)],
            sample_period: 0.5,
            samples: 6,
            dt: 1e-3,
            start_time: 0.0,
            derivative: DerivativeMode::Exact,
        };
        let traj = run_experiment(&zero_plant(), &exo, &spec).unwrap();
        for (x, dx) in traj.states.iter().zip(&traj.derivatives) {
            assert_eq!(x.as_slice(), &[0.3, -1.0]);
            assert_eq!(dx.amax(), 0.0);
        }
    }

    #[test]
    fn step_halving_on_pendulum() {
        let ex = examples::pendulum();
        let coarse = run_experiment(&ex.plant, &ex.exosystem, &ex.experiment).unwrap();
        let mut spec = ex.experiment.clone();
        spec.dt /= 2.0;
        let fine = run_experiment(&ex.plant, &ex.exosystem, &spec).unwrap();
        let diff = coarse.states.iter().zip(&fine.states).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        assert!(diff <= 1e-6, "step-halving difference {diff}");
    }

    #[test]
    fn fourth_order_convergence() {
        let ex = examples::pendulum();
        let run = |dt: f64| {
            let mut spec = ex.experiment.clone();
            spec.dt = dt;
            spec.samples = 5;
            run_experiment(&ex.plant, &ex.exosystem, &spec).unwrap()
        };
        let (a, b, c) = (run(0.05), run(0.025), run(0.0125));
        let d1 = a.states.iter().zip(&b.states).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
        let d2 = b.states.iter().zip(&c.states).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
        assert!(d1 / d2 >= 8.0, "ratio {}", d1 / d2);
    }

    #[test]
    fn central_difference_mode_is_close() {
        let ex = examples::pendulum();
        let mut spec = ex.experiment.clone();
        spec.derivative = DerivativeMode::CentralDifference;
        let traj = run_experiment(&ex.plant, &ex.exosystem, &spec).unwrap();
        for k in 0..traj.len() {
            let exact = ex.plant.rhs(&traj.states[k], &traj.inputs[k], &traj.exo_states[k]);
            assert!((&traj.derivatives[k] - exact).amax() < 1e-4);
        }
    }

    #[test]
    fn dt_must_divide_sample_period() {
        let ex = examples::pendulum();
        let mut spec = ex.experiment.clone();
        spec.dt = 0.3;
        assert!(matches!(run_experiment(&ex.plant, &ex.exosystem, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn blowup_is_reported_with_time() {
        // x' = x^2 from x0 = 1 escapes at t = 1.
        let lib = FunctionLibrary::parse(1, &["x1", "x1^2"]).unwrap();
        let plant = PlantModel::new(
            lib,
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 0),
        )
        .unwrap();
        let spec = ExperimentSpec {
            x0: vec![1.0],
            inputs: vec![InputSignal::zero()],
            sample_period: 0.5,
            samples: 5,
            dt: 1e-3,
            start_time: 0.0,
            derivative: DerivativeMode::Exact,
        };
        match run_experiment(&plant, &Exosystem::empty(), &spec) {
            Err(Error::IntegrationBlowup { time }) => assert!(time > 0.99 && time < 1.1, "time {time}"),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn no_feedback_keeps_error_constant() {
        let plant = zero_plant();
        let exo = Exosystem::new(vec![], 1, DVector::from_vec(vec![1.0])).unwrap();
        let im = InternalModelParams::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), 1.0).unwrap();
        let reg = Regulator::new(DMatrix::zeros(1, 2), im, DMatrix::from_element(1, 1, 1.0), plant.library.clone()).unwrap();
        // K_hat must be PD, so zero it out by building the law by hand.
        let reg = reg.with_error_gain_unchecked(DMatrix::zeros(1, 1));
        let x0 = DVector::from_vec(vec![0.4, 0.1]);
        let traj = run_closed_loop(&plant, &exo, &reg, &x0, None, &ClosedLoopSpec::new(2.0, 1e-3, 0.1)).unwrap();
        for e in &traj.errors {
            assert_eq!(e[0], 0.4);
        }
    }

    #[test]
    fn deterministic_runs() {
        let ex = examples::pendulum();
        let a = run_experiment(&ex.plant, &ex.exosystem, &ex.experiment).unwrap();
        let b = run_experiment(&ex.plant, &ex.exosystem, &ex.experiment).unwrap();
        assert_eq!(a, b);
    }
}
