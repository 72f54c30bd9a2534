//! Set-point stabilization recast as output regulation: a virtual error that
//! vanishes only at the target, an extended library and an extended
//! exosystem carrying the constant offset.

use nalgebra::{DMatrix, DVector};

use crate::data::{assemble, DataSet};
use crate::error::{dim_err, Error, Result};
use crate::model::{Exosystem, FunctionLibrary, PlantModel, Term};
use crate::regulator::{build_regulator, Regulator, RegulatorGains};
use crate::simulate::{run_closed_loop, run_experiment, ClosedLoopSpec, ExperimentSpec, Trajectory};
use crate::synthesis::{synthesize_stabilization, SynthesisOptions, SynthesisResult};

/// Target equilibrium of a plant whose disturbance comes from `exosystem`.
/// The plant's own `C` and `F` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumTask {
    pub x_e: DVector<f64>,
    pub plant: PlantModel,
    pub exosystem: Exosystem,
}

impl EquilibriumTask {
    pub fn new(x_e: DVector<f64>, plant: PlantModel, exosystem: Exosystem) -> Result<Self> {
        if x_e.len() != plant.n() {
            return Err(dim_err("equilibrium", plant.n(), x_e.len()));
        }
        if x_e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("equilibrium must be finite".into()));
        }
        if exosystem.q() != plant.q() {
            return Err(dim_err("disturbance model", plant.q(), exosystem.q()));
        }
        if plant.m() != 1 && plant.m() != plant.n() {
            return Err(Error::Mode(format!(
                "set-point tasks need a single input or a fully actuated plant (m = n), got m = {}",
                plant.m()
            )));
        }
        Ok(Self { x_e, plant, exosystem })
    }

    pub fn fully_actuated(&self) -> bool {
        self.plant.m() == self.plant.n()
    }
}

/// `e_v = C Z(x) + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualErrorSpec {
    pub library: FunctionLibrary,
    pub c_tilde: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl VirtualErrorSpec {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c_tilde * self.library.eval(x) + &self.offset
    }

    /// Scalar offset `|x_e|^2` of the squared-distance form.
    pub fn w_v(&self) -> f64 {
        self.offset[0]
    }
}

/// `|x - x_e|^2 = sum x_i^2 - 2 sum x_e,i x_i + |x_e|^2` over `base`
/// extended with the squares.
pub fn build_virtual_error(x_e: &DVector<f64>, base: &FunctionLibrary) -> Result<VirtualErrorSpec> {
    let n = base.n();
    if x_e.len() != n {
        return Err(dim_err("equilibrium", n, x_e.len()));
    }
    let squares: Vec<Term> = (0..n)
        .map(|i| {
            let mut e = vec![0; n];
            e[i] = 2;
            Term::Monomial(e)
        })
        .collect();
    let library = base.merged_with(&FunctionLibrary::new(n, (0..n).map(|i| Term::coordinate(n, i)).chain(squares.iter().cloned()).collect())?)?;
    let mut c = DMatrix::zeros(1, library.n_z());
    for i in 0..n {
        c[(0, i)] = -2.0 * x_e[i];
        let j = library.index_of(&squares[i]).expect("square was merged");
        c[(0, j)] = 1.0;
    }
    Ok(VirtualErrorSpec { library, c_tilde: c, offset: DVector::from_element(1, x_e.norm_squared()) })
}

/// Fully actuated variant `e_v = x - x_e`.
pub fn build_linear_virtual_error(x_e: &DVector<f64>, base: &FunctionLibrary) -> Result<VirtualErrorSpec> {
    let n = base.n();
    if x_e.len() != n {
        return Err(dim_err("equilibrium", n, x_e.len()));
    }
    let mut c = DMatrix::zeros(n, base.n_z());
    c.view_mut((0, 0), (n, n)).fill_with_identity();
    Ok(VirtualErrorSpec { library: base.clone(), c_tilde: c, offset: -x_e })
}

/// Design exosystem with one constant mode carrying the virtual-error offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedExosystem {
    pub exosystem: Exosystem,
    /// `w_p = embed * w_tilde`.
    pub embed: DMatrix<f64>,
    /// Offset coupling `F_tilde`.
    pub f_tilde: DMatrix<f64>,
}

/// Appends a constant mode for the offset. When the plant exosystem already
/// has constant modes they are merged into that single mode (value 1), so
/// `M0` never repeats an all-ones row.
pub fn extend_exosystem(exo_p: &Exosystem, offset: &DVector<f64>) -> Result<ExtendedExosystem> {
    let freqs = exo_p.frequencies().to_vec();
    let q1 = 2 * freqs.len();
    let qp = exo_p.q();
    let mv = offset.len();
    let q = q1 + 1;
    let mut embed = DMatrix::zeros(qp, q);
    embed.view_mut((0, 0), (q1, q1)).fill_with_identity();
    let mut w0 = DVector::zeros(q);
    w0.rows_mut(0, q1).copy_from(&exo_p.w0().rows(0, q1));
    let mut f_tilde = DMatrix::zeros(mv, q);
    if exo_p.constant_modes() == 0 && mv == 1 {
        w0[q1] = offset[0];
        f_tilde[(0, q1)] = 1.0;
    } else {
        w0[q1] = 1.0;
        for j in q1..qp {
            embed[(j, q1)] = exo_p.w0()[j];
        }
        f_tilde.column_mut(q1).copy_from(offset);
    }
    Ok(ExtendedExosystem { exosystem: Exosystem::new(freqs, 1, w0)?, embed, f_tilde })
}

/// Everything needed to run a set-point task through the regulation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTask {
    pub virtual_error: VirtualErrorSpec,
    /// Plant over the extended library with output `e_v`.
    pub plant: PlantModel,
    pub exosystem: Exosystem,
}

pub fn extend_task(task: &EquilibriumTask) -> Result<ExtendedTask> {
    let base = &task.plant.library;
    let ve = if task.fully_actuated() {
        build_linear_virtual_error(&task.x_e, base)?
    } else {
        build_virtual_error(&task.x_e, base)?
    };
    let ext = extend_exosystem(&task.exosystem, &ve.offset)?;
    let lib = &ve.library;
    let mut a = DMatrix::zeros(task.plant.n(), lib.n_z());
    for (j, term) in base.terms().iter().enumerate() {
        let jj = lib.index_of(term).expect("extended library contains the base");
        a.column_mut(jj).copy_from(&task.plant.a.column(j));
    }
    let plant = PlantModel::new(
        lib.clone(),
        a,
        task.plant.b.clone(),
        ve.c_tilde.clone(),
        &task.plant.e * &ext.embed,
        ext.f_tilde.clone(),
    )?;
    Ok(ExtendedTask { virtual_error: ve, plant, exosystem: ext.exosystem })
}

#[derive(Debug, Clone)]
pub struct StabilizationReport {
    pub data: DataSet,
    pub result: SynthesisResult,
    pub regulator: Regulator,
    pub trajectories: Vec<Trajectory>,
    /// `|x(t) - x_e|` per run, aligned with the trajectory samples.
    pub distances: Vec<Vec<f64>>,
}

/// Collect, synthesize with the known output map, build the stabilizer and
/// simulate from each initial condition.
pub fn run_stabilization_pipeline(
    task: &EquilibriumTask,
    experiment: &ExperimentSpec,
    gains: &RegulatorGains,
    initial_conditions: &[DVector<f64>],
    sim: &ClosedLoopSpec,
    options: SynthesisOptions,
) -> Result<StabilizationReport> {
    let ext = extend_task(task)?;
    let traj = run_experiment(&ext.plant, &ext.exosystem, experiment)?;
    let data = assemble(&traj, &ext.plant.library, &ext.exosystem)?;
    let result = synthesize_stabilization(&data, &ext.virtual_error.c_tilde, options)?;
    let im = gains.internal_model(&ext.exosystem, ext.plant.m())?;
    let regulator = build_regulator(&result, im, gains.k_hat_matrix(ext.plant.m())?)?;
    let mut trajectories = Vec::new();
    let mut distances = Vec::new();
    for x0 in initial_conditions {
        let t = run_closed_loop(&ext.plant, &ext.exosystem, &regulator, x0, None, sim)?;
        distances.push(t.states.iter().map(|x| (x - &task.x_e).norm()).collect());
        trajectories.push(t);
    }
    Ok(StabilizationReport { data, result, regulator, trajectories, distances })
}
