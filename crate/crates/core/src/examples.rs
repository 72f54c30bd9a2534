//! Built-in benchmark setups: forced pendulum, non-collocated double
//! mass-spring-damper, and set-point stabilization of a cubic plant.

use nalgebra::{DMatrix, DVector};

use crate::data::{self, DataSet};
use crate::error::Result;
use crate::model::{Exosystem, FunctionLibrary, InputSignal, PlantModel, Term};
use crate::regulator::{Regulator, RegulatorGains};
use crate::simulate::{run_experiment, DerivativeMode, ExperimentSpec, Trajectory, DEFAULT_DT};
use crate::stabilization::{self, EquilibriumTask};
use crate::synthesis::{SynthesisMode, SynthesisOptions, SynthesisProblem, SynthesisResult};

#[derive(Debug, Clone)]
pub struct BenchmarkSetup {
    pub id: u8,
    pub name: &'static str,
    pub mode: SynthesisMode,
    /// Plant used for data collection and closed-loop runs. For set-point
    /// tasks this is already the extended plant with the virtual error.
    pub plant: PlantModel,
    /// Design exosystem (extended for set-point tasks).
    pub exosystem: Exosystem,
    pub task: Option<EquilibriumTask>,
    pub experiment: ExperimentSpec,
    pub gains: RegulatorGains,
    /// Published gain, used as an uncertified fallback when the data
    /// program has no solution.
    pub reference_gain: DMatrix<f64>,
    pub initial_conditions: Vec<DVector<f64>>,
    pub t_final: f64,
}

impl BenchmarkSetup {
    pub fn collect_trajectory(&self) -> Result<Trajectory> {
        run_experiment(&self.plant, &self.exosystem, &self.experiment)
    }

    pub fn collect(&self) -> Result<DataSet> {
        data::assemble(&self.collect_trajectory()?, &self.plant.library, &self.exosystem)
    }

    /// Known output map of the set-point task.
    pub fn c_tilde(&self) -> Option<DMatrix<f64>> {
        self.task.as_ref().map(|_| self.plant.c.clone())
    }

    pub fn problem(&self, ds: DataSet, options: SynthesisOptions) -> Result<SynthesisProblem> {
        SynthesisProblem::new(ds, self.mode, self.c_tilde(), options)
    }

    pub fn synthesize(&self, ds: DataSet, options: SynthesisOptions) -> Result<SynthesisResult> {
        crate::synthesis::synthesize(&self.problem(ds, options)?)
    }

    pub fn regulator(&self, k: DMatrix<f64>) -> Result<Regulator> {
        let m = self.plant.m();
        let im = self.gains.internal_model(&self.exosystem, m)?;
        Regulator::new(k, im, self.gains.k_hat_matrix(m)?, self.plant.library.clone())
    }
}

fn experiment(x0: &[f64], input: InputSignal, samples: usize) -> ExperimentSpec {
    ExperimentSpec {
        x0: x0.to_vec(),
        inputs: vec![input],
        sample_period: 0.5,
        samples,
        dt: DEFAULT_DT,
        start_time: 0.0,
        derivative: DerivativeMode::Exact,
    }
}

fn ics(points: &[[f64; 2]]) -> Vec<DVector<f64>> {
    points.iter().map(|p| DVector::from_row_slice(p)).collect()
}

pub fn pendulum() -> BenchmarkSetup {
    let library = FunctionLibrary::parse(2, &["x1", "x2", "sin(x1)"]).expect("static library");
    let s3 = 3f64.sqrt() / 2.0;
    let plant = PlantModel::new(
        library,
        DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, -1.0, -10.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 10.0]),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 3, &[-s3, 0.5, 0.0, 0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 0.0]),
    )
    .expect("static plant");
    let exosystem = Exosystem::new(vec![2.0], 1, DVector::from_vec(vec![0.0, 1.0, 1.0])).expect("static exosystem");
    BenchmarkSetup {
        id: 1,
        name: "pendulum",
        mode: SynthesisMode::Nonlinear,
        plant,
        exosystem,
        task: None,
        experiment: experiment(&[-0.1, 0.1], InputSignal::sine(1.0, 1.0, 0.0), 15),
        gains: RegulatorGains { alpha: 10.0, xi: Some(vec![1.0, 0.0, 1.0]), k_hat: vec![80.0] },
        reference_gain: DMatrix::from_row_slice(1, 3, &[-0.1290, -0.0132, 1.0]),
        initial_conditions: ics(&[[0.0, 0.0], [1.0, -1.0], [-1.0, 1.0], [0.5, 0.5]]),
        t_final: 40.0,
    }
}

pub fn mass_spring_damper() -> BenchmarkSetup {
    let (m1, m2, k1, k2, c1, c2) = (2.34, 0.57, 2000.0, 146.0, 17.0, 0.28);
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        -(k1 + k2) / m1, k2 / m1, -(c1 + c2) / m1, c2 / m1,
        k2 / m2, -k2 / m2, c2 / m2, -c2 / m2,
    ]);
    #[rustfmt::skip]
    let e = DMatrix::from_row_slice(4, 3, &[
        1.0, 0.0, 0.0,
        0.0, 0.0, 0.0,
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
    ]);
    let plant = PlantModel::new(
        FunctionLibrary::identity(4),
        a,
        DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0 / m1, 0.0]),
        DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 0.0, 0.0]),
        e,
        DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 0.0]),
    )
    .expect("static plant");
    let exosystem = Exosystem::new(vec![1.0], 1, DVector::from_vec(vec![0.0, 1.0, 1.0])).expect("static exosystem");
    let x0s = [[0.0, 0.0, 0.0, 0.0], [0.1, -0.1, 0.0, 0.0], [-0.2, 0.2, 0.5, -0.5], [0.05, 0.1, -0.3, 0.2]];
    BenchmarkSetup {
        id: 2,
        name: "mass-spring-damper",
        mode: SynthesisMode::Linear,
        plant,
        exosystem,
        task: None,
        experiment: experiment(&[-0.1, 0.3, 0.1, -0.1], InputSignal::sine(1.0, 2.0, 0.0), 15),
        gains: RegulatorGains { alpha: 25.0, xi: Some(vec![1.0, 0.0, 1.0]), k_hat: vec![15.0] },
        reference_gain: DMatrix::from_row_slice(1, 4, &[884.2, 1080.5, -58.6, 10.6]),
        initial_conditions: x0s.iter().map(|p| DVector::from_row_slice(p)).collect(),
        t_final: 50.0,
    }
}

/// Base plant of the set-point task together with its disturbance model.
pub fn cubic_setpoint_task() -> EquilibriumTask {
    let library = FunctionLibrary::polynomial(2, 3);
    let mut a = DMatrix::zeros(2, library.n_z());
    a[(0, 0)] = -1.0;
    a[(0, 1)] = 2.0;
    a[(1, 0)] = -1.0;
    a[(1, 1)] = 1.0;
    let x1sq_x2 = library.index_of(&Term::Monomial(vec![2, 1])).expect("cubic library term");
    a[(1, x1sq_x2)] = -1.0;
    let nz = library.n_z();
    let plant = PlantModel::new(
        library,
        a,
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DMatrix::zeros(1, nz),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        DMatrix::zeros(1, 2),
    )
    .expect("static plant");
    let exosystem = Exosystem::new(vec![2.0], 0, DVector::from_vec(vec![0.0, 1.0])).expect("static exosystem");
    EquilibriumTask::new(DVector::from_vec(vec![-2.0, -1.0]), plant, exosystem).expect("static task")
}

pub fn cubic_setpoint() -> BenchmarkSetup {
    let task = cubic_setpoint_task();
    let ext = stabilization::extend_task(&task).expect("static task extends");
    let mut reference_gain = DMatrix::zeros(1, ext.plant.n_z());
    reference_gain[(0, 0)] = -36.4774;
    reference_gain[(0, 1)] = -9.7023;
    reference_gain[(0, 5)] = 1.0;
    BenchmarkSetup {
        id: 3,
        name: "cubic set-point",
        mode: SynthesisMode::Stabilization,
        plant: ext.plant,
        exosystem: ext.exosystem,
        task: Some(task),
        experiment: experiment(&[-0.1, 0.1], InputSignal::sine(1.0, 1.0, 0.0), 30),
        gains: RegulatorGains { alpha: 30.0, xi: Some(vec![1.0, 1.0, 1.0]), k_hat: vec![20.0] },
        reference_gain,
        initial_conditions: ics(&[[-1.0, 1.0], [-2.5, -0.5], [-1.5, -1.5], [-2.0, 0.0]]),
        t_final: 80.0,
    }
}

pub fn by_id(id: u8) -> Option<BenchmarkSetup> {
    match id {
        1 => Some(pendulum()),
        2 => Some(mass_spring_damper()),
        3 => Some(cubic_setpoint()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_disturbance_matches_closed_form() {
        let ex = pendulum();
        for t in [0.0, 0.4, 2.9] {
            let d = &ex.plant.e * ex.exosystem.state(t);
            assert!((d[0] - (2.0 * t + std::f64::consts::FRAC_PI_3).cos()).abs() < 1e-14);
            assert!((d[1] - 1.0).abs() < 1e-15);
            let e = ex.plant.error(&DVector::zeros(2), &ex.exosystem.state(t));
            assert!((e[0] + (2.0 * t).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn cubic_plant_rhs() {
        let task = cubic_setpoint_task();
        let x = DVector::from_vec(vec![1.5, -0.5]);
        let r = task.plant.rhs(&x, &DVector::from_vec(vec![0.25]), &DVector::from_vec(vec![0.0, 1.0]));
        assert!((r[0] - (2.0 * -0.5 - 1.5)).abs() < 1e-14);
        assert!((r[1] - (-1.5 - 0.5 + 2.25 * 0.5 + 0.25 + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn by_id_covers_all() {
        for id in 1..=3 {
            let ex = by_id(id).unwrap();
            assert_eq!(ex.id, id);
            assert_eq!(ex.reference_gain.ncols(), ex.plant.n_z());
            assert_eq!(ex.exosystem.q(), ex.plant.q());
        }
        assert!(by_id(4).is_none());
    }
}
