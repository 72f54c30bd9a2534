//! Run configuration: a builtin example or an explicit plant, with optional
//! overrides for the experiment, regulator gains, simulation and solver.

use std::path::Path;

use ddreg::examples::{self, BenchmarkSetup};
use ddreg::regulator::RegulatorGains;
use ddreg::simulate::ExperimentSpec;
use ddreg::stabilization::{extend_task, EquilibriumTask};
use ddreg::synthesis::{SynthesisMode, SynthesisOptions};
use ddreg::{Exosystem, FunctionLibrary, PlantModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSpec,
    #[serde(default)]
    pub exosystem: Option<ExosystemSpec>,
    /// Set-point task: the plant's `C`, `F` are replaced by a virtual error.
    #[serde(default)]
    pub task: Option<TaskSpec>,
    /// Experiments on a shared exosystem clock; their data are concatenated.
    #[serde(default)]
    pub experiments: Option<Vec<ExperimentSpec>>,
    #[serde(default)]
    pub regulator: Option<RegulatorGains>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    /// Row-major `m x n_Z` gain used only as an uncertified fallback.
    #[serde(default)]
    pub reference_gain: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSpec {
    Builtin {
        builtin: u8,
    },
    Explicit {
        n: usize,
        library: Vec<String>,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        e: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        f: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        mode: Option<SynthesisMode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExosystemSpec {
    #[serde(default)]
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub constant_modes: usize,
    pub w0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub x_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub initial_conditions: Vec<Vec<f64>>,
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record")]
    pub record_period: f64,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_record() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    /// Random trajectory pairs for the numeric passivity audit.
    pub pairs: usize,
    pub horizon: f64,
    /// Row-major `n x r` factor of the Lipschitz bound, if known.
    pub lipschitz_factor: Option<Vec<Vec<f64>>>,
    pub band: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { pairs: 20, horizon: 5.0, lipschitz_factor: None, band: 2e-2 }
    }
}

/// Everything a command needs, with overrides applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub hash: String,
    pub mode: SynthesisMode,
    pub plant: PlantModel,
    pub exosystem: Exosystem,
    pub task: Option<EquilibriumTask>,
    pub c_tilde: Option<DMatrix<f64>>,
    pub experiments: Vec<ExperimentSpec>,
    pub gains: Option<RegulatorGains>,
    pub simulation: Option<SimulationSpec>,
    pub reference_gain: Option<DMatrix<f64>>,
}

pub fn builtin(id: u8) -> Result<RunConfig, CliError> {
    if examples::by_id(id).is_none() {
        return Err(CliError::schema(format!("unknown builtin example {id}; expected 1, 2 or 3")));
    }
    Ok(RunConfig {
        seed: 0,
        plant: PlantSpec::Builtin { builtin: id },
        exosystem: None,
        task: None,
        experiments: None,
        regulator: None,
        simulation: None,
        synthesis: SynthesisOptions::default(),
        reference_gain: None,
        verify: VerifySpec::default(),
    })
}

/// `example1`..`example3` name builtins; anything else is a TOML file.
pub fn load(arg: &str) -> Result<RunConfig, CliError> {
    if let Some(id) = arg.strip_prefix("example").and_then(|s| s.parse::<u8>().ok()) {
        return builtin(id);
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::schema(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::schema(format!("config {}: {e}", path.display())))
}

pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn matrix(name: &str, rows: &[Vec<f64>], want_rows: usize, want_cols: Option<usize>) -> Result<DMatrix<f64>, CliError> {
    let cols = want_cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if rows.len() != want_rows || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::schema(format!(
            "matrix {name}: expected {want_rows} x {cols}, got {} rows of lengths {:?}",
            rows.len(),
            rows.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(DMatrix::from_fn(want_rows, cols, |i, j| rows[i][j]))
}

fn exosystem(spec: &ExosystemSpec) -> Result<Exosystem, CliError> {
    Ok(Exosystem::new(spec.frequencies.clone(), spec.constant_modes, DVector::from_vec(spec.w0.clone()))?)
}

fn from_setup(config: &RunConfig, setup: BenchmarkSetup) -> Resolved {
    let c_tilde = setup.c_tilde();
    Resolved {
        config: config.clone(),
        hash: config_hash(config),
        mode: setup.mode,
        plant: setup.plant,
        exosystem: setup.exosystem,
        task: setup.task,
        c_tilde,
        experiments: vec![setup.experiment],
        gains: Some(setup.gains),
        simulation: Some(SimulationSpec {
            initial_conditions: setup.initial_conditions.iter().map(|x| x.as_slice().to_vec()).collect(),
            t_final: setup.t_final,
            dt: default_dt(),
            record_period: default_record(),
        }),
        reference_gain: Some(setup.reference_gain),
    }
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let mut r = match &self.plant {
            PlantSpec::Builtin { builtin } => {
                if self.exosystem.is_some() || self.task.is_some() {
                    return Err(CliError::schema("builtin plants carry their own exosystem and task"));
                }
                let setup = examples::by_id(*builtin)
                    .ok_or_else(|| CliError::schema(format!("unknown builtin example {builtin}; expected 1, 2 or 3")))?;
                from_setup(self, setup)
            }
            PlantSpec::Explicit { n, library, a, b, c, e, f, mode } => self.explicit(*n, library, [a, b], [c, e, f], *mode)?,
        };
        if let Some(x) = &self.experiments {
            if x.is_empty() {
                return Err(CliError::schema("experiments: at least one experiment is required"));
            }
            r.experiments = x.clone();
        }
        if let Some(g) = &self.regulator {
            r.gains = Some(g.clone());
        }
        if let Some(s) = &self.simulation {
            r.simulation = Some(s.clone());
        }
        if let Some(k) = &self.reference_gain {
            r.reference_gain = Some(matrix("reference_gain", k, r.plant.m(), Some(r.plant.n_z()))?);
        }
        for (i, x) in r.experiments.iter().enumerate() {
            if x.x0.len() != r.plant.n() || x.inputs.len() != r.plant.m() {
                return Err(CliError::schema(format!(
                    "experiment {i}: expected x0 of length {} and {} input signals",
                    r.plant.n(),
                    r.plant.m()
                )));
            }
        }
        if let Some(sim) = &r.simulation {
            if let Some(bad) = sim.initial_conditions.iter().find(|x| x.len() != r.plant.n()) {
                return Err(CliError::schema(format!("initial condition {bad:?} does not have {} entries", r.plant.n())));
            }
        }
        Ok(r)
    }

    fn explicit(
        &self,
        n: usize,
        library: &[String],
        [a, b]: [&Vec<Vec<f64>>; 2],
        [c, e, f]: [&Option<Vec<Vec<f64>>>; 3],
        mode: Option<SynthesisMode>,
    ) -> Result<Resolved, CliError> {
        let terms: Vec<&str> = library.iter().map(String::as_str).collect();
        let lib = FunctionLibrary::parse(n, &terms)?;
        let nz = lib.n_z();
        let exo_spec = self.exosystem.as_ref().ok_or_else(|| CliError::schema("explicit plants need an [exosystem] section"))?;
        let exo = exosystem(exo_spec)?;
        let q = exo.q();
        let a = matrix("a", a, n, Some(nz))?;
        let b = matrix("b", b, n, None)?;
        let m = b.ncols();
        let e = match e {
            Some(e) => matrix("e", e, n, Some(q))?,
            None => DMatrix::zeros(n, q),
        };
        let (c, f) = match (&self.task, c) {
            (Some(_), _) => (DMatrix::zeros(m, nz), DMatrix::zeros(m, q)),
            (None, Some(c)) => {
                let c = matrix("c", c, m, Some(nz))?;
                let f = match f {
                    Some(f) => matrix("f", f, m, Some(q))?,
                    None => DMatrix::zeros(m, q),
                };
                (c, f)
            }
            (None, None) => return Err(CliError::schema("explicit plants need c unless a [task] is given")),
        };
        let plant = PlantModel::new(lib, a, b, c, e, f)?;
        let (plant, exo, task, c_tilde, default_mode) = match &self.task {
            Some(t) => {
                let task = EquilibriumTask::new(DVector::from_vec(t.x_e.clone()), plant, exo)?;
                let ext = extend_task(&task)?;
                let ct = ext.virtual_error.c_tilde.clone();
                (ext.plant, ext.exosystem, Some(task), Some(ct), SynthesisMode::Stabilization)
            }
            None => {
                let mode = if nz == n { SynthesisMode::Linear } else { SynthesisMode::Nonlinear };
                (plant, exo, None, None, mode)
            }
        };
        let experiments = self.experiments.clone().ok_or_else(|| CliError::schema("explicit plants need [[experiments]]"))?;
        Ok(Resolved {
            config: self.clone(),
            hash: config_hash(self),
            mode: mode.unwrap_or(default_mode),
            plant,
            exosystem: exo,
            task,
            c_tilde,
            experiments,
            gains: None,
            simulation: None,
            reference_gain: None,
        })
    }
}

impl Resolved {
    pub fn library(&self) -> &FunctionLibrary {
        &self.plant.library
    }

    pub fn gains(&self) -> Result<&RegulatorGains, CliError> {
        self.gains.as_ref().ok_or_else(|| CliError::schema("config has no [regulator] section"))
    }

    pub fn lipschitz_factor(&self) -> Result<Option<DMatrix<f64>>, CliError> {
        match &self.config.verify.lipschitz_factor {
            Some(rows) => Ok(Some(matrix("verify.lipschitz_factor", rows, self.plant.n(), None)?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve() {
        for id in 1..=3 {
            let r = load(&format!("example{id}")).unwrap().resolve().unwrap();
            assert_eq!(r.experiments.len(), 1);
            assert!(r.gains.is_some());
        }
        assert!(load("example9").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = builtin(1).unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 4;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn explicit_plant_parses() {
        let text = r#"
            [plant]
            n = 1
            library = ["x1"]
            a = [[-1.0]]
            b = [[1.0]]
            c = [[1.0]]

            [exosystem]
            constant_modes = 1
            w0 = [1.0]

            [[experiments]]
            x0 = [0.0]
            inputs = [{ terms = [{ amplitude = 1.0, frequency = 1.0 }] }]
            sample_period = 0.5
            samples = 10
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.mode, SynthesisMode::Linear);
        assert_eq!(r.exosystem.q(), 1);
        assert_eq!(r.plant.f.shape(), (1, 1));
    }

    #[test]
    fn bad_shapes_are_schema_errors() {
        let text = r#"
            [plant]
            n = 2
            library = ["x1", "x2"]
            a = [[0.0, 1.0]]
            b = [[0.0], [1.0]]
            c = [[1.0, 0.0]]

            [exosystem]
            w0 = []

            [[experiments]]
            x0 = [0.0, 0.0]
            inputs = [{}]
            sample_period = 0.5
            samples = 10
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("matrix a"), "{err}");
    }
}
