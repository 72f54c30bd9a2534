//! Data matrices `X0, X1, Z0, U0, E0, M0` and the richness gate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, RankInfo, RANK_REL_TOL};
use crate::model::{Exosystem, FunctionLibrary};
use crate::simulate::Trajectory;

/// Sampled experiment data. Column `k` of every matrix belongs to
/// `timestamps[k]`. Carries the exosystem structure (frequencies and number
/// of constant modes) but never its initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub library: FunctionLibrary,
    pub frequencies: Vec<f64>,
    pub constant_modes: usize,
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub z0: DMatrix<f64>,
    pub u0: DMatrix<f64>,
    pub e0: DMatrix<f64>,
    pub m0: DMatrix<f64>,
    pub timestamps: Vec<f64>,
}

/// Regressor matrix with column `k` equal to
/// `[sin(s_1 t_k), cos(s_1 t_k), ..., 1, ..., 1]`.
pub fn build_m0(exo: &Exosystem, timestamps: &[f64]) -> DMatrix<f64> {
    regressor_matrix(exo.frequencies(), exo.constant_modes(), timestamps)
}

pub fn regressor_matrix(frequencies: &[f64], constant_modes: usize, timestamps: &[f64]) -> DMatrix<f64> {
    let q1 = frequencies.len();
    let mut m = DMatrix::from_element(2 * q1 + constant_modes, timestamps.len(), 1.0);
    for (k, &t) in timestamps.iter().enumerate() {
        for (i, &s) in frequencies.iter().enumerate() {
            let (sn, cs) = (s * t).sin_cos();
            m[(2 * i, k)] = sn;
            m[(2 * i + 1, k)] = cs;
        }
    }
    m
}

fn columns(series: &[nalgebra::DVector<f64>], rows: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, series.len(), |r, c| series[c][r])
}

/// Ground-truth `W0`, for oracles only.
pub fn exo_matrix(trajectory: &Trajectory) -> DMatrix<f64> {
    let q = trajectory.exo_states.first().map_or(0, |w| w.len());
    columns(&trajectory.exo_states, q)
}

impl DataSet {
    /// Validates shapes and the column consistency `Z0 = Z(X0)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        library: FunctionLibrary,
        frequencies: Vec<f64>,
        constant_modes: usize,
        x0: DMatrix<f64>,
        x1: DMatrix<f64>,
        z0: DMatrix<f64>,
        u0: DMatrix<f64>,
        e0: DMatrix<f64>,
        timestamps: Vec<f64>,
    ) -> Result<Self> {
        let t = timestamps.len();
        let (n, nz) = (library.n(), library.n_z());
        let m = u0.nrows();
        let checks = [
            ("X0", x0.shape(), (n, t)),
            ("X1", x1.shape(), (n, t)),
            ("Z0", z0.shape(), (nz, t)),
            ("U0", u0.shape(), (m, t)),
            ("E0", e0.shape(), (m, t)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(dim_err(&format!("data matrix {name}"), format!("{want:?}"), format!("{got:?}")));
            }
        }
        if timestamps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("timestamps must be finite".into()));
        }
        for k in 0..t {
            let z = library.eval(&x0.column(k).clone_owned());
            let scale = z.amax().max(1.0);
            if (&z - z0.column(k)).amax() > 1e-9 * scale {
                return Err(Error::Config(format!("column {k} of Z0 does not match the library evaluated at X0")));
            }
        }
        let m0 = regressor_matrix(&frequencies, constant_modes, &timestamps);
        Ok(Self { library, frequencies, constant_modes, x0, x1, z0, u0, e0, m0, timestamps })
    }

    pub fn t(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n(&self) -> usize {
        self.library.n()
    }

    pub fn n_z(&self) -> usize {
        self.library.n_z()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn q(&self) -> usize {
        self.m0.nrows()
    }

    /// `[Z0; U0]`.
    pub fn zu(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.z0, &self.u0])
    }

    /// `[Z0; U0; M0]`.
    pub fn zum(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.z0, &self.u0, &self.m0])
    }

    /// Same data with every recorded signal multiplied by `c` (`M0` unchanged).
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.x0 *= c;
        out.x1 *= c;
        out.z0 *= c;
        out.u0 *= c;
        out.e0 *= c;
        out
    }
}

pub fn assemble(trajectory: &Trajectory, library: &FunctionLibrary, exo: &Exosystem) -> Result<DataSet> {
    if trajectory.is_empty() {
        return Err(Error::DataInsufficient("trajectory has no samples".into()));
    }
    let n = library.n();
    if trajectory.states[0].len() != n {
        return Err(dim_err("trajectory state", n, trajectory.states[0].len()));
    }
    let m = trajectory.inputs[0].len();
    let z: Vec<_> = trajectory.states.iter().map(|x| library.eval(x)).collect();
    Ok(DataSet {
        library: library.clone(),
        frequencies: exo.frequencies().to_vec(),
        constant_modes: exo.constant_modes(),
        x0: columns(&trajectory.states, n),
        x1: columns(&trajectory.derivatives, n),
        z0: columns(&z, library.n_z()),
        u0: columns(&trajectory.inputs, m),
        e0: columns(&trajectory.errors, m),
        m0: build_m0(exo, &trajectory.timestamps),
        timestamps: trajectory.timestamps.clone(),
    })
}

/// Column-concatenates experiments that share one exosystem clock.
pub fn concat(sets: &[DataSet]) -> Result<DataSet> {
    let first = sets.first().ok_or_else(|| Error::DataInsufficient("no experiments to concatenate".into()))?;
    for s in &sets[1..] {
        if s.library != first.library || s.frequencies != first.frequencies || s.constant_modes != first.constant_modes {
            return Err(Error::Config("experiments use different libraries or exosystem structures".into()));
        }
        if s.m() != first.m() {
            return Err(dim_err("experiment input count", first.m(), s.m()));
        }
    }
    let cat = |f: fn(&DataSet) -> &DMatrix<f64>| {
        let parts: Vec<&DMatrix<f64>> = sets.iter().map(f).collect();
        linalg::hstack(&parts)
    };
    Ok(DataSet {
        library: first.library.clone(),
        frequencies: first.frequencies.clone(),
        constant_modes: first.constant_modes,
        x0: cat(|s| &s.x0),
        x1: cat(|s| &s.x1),
        z0: cat(|s| &s.z0),
        u0: cat(|s| &s.u0),
        e0: cat(|s| &s.e0),
        m0: cat(|s| &s.m0),
        timestamps: sets.iter().flat_map(|s| s.timestamps.iter().copied()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub samples: usize,
    pub required_rank: usize,
    /// Rank data of `[Z0; U0]`.
    pub rank: RankInfo,
    /// Rank data of `[Z0; U0; M0]`, which the input-map equality needs.
    pub extended_rank: RankInfo,
    pub passed: bool,
}

/// Full-row-rank test on `[Z0; U0]` with a relative singular-value threshold.
/// Returns the report on success and a data-insufficiency error otherwise.
pub fn richness_gate(ds: &DataSet) -> Result<GateReport> {
    let report = rank_report(ds);
    if report.samples < report.required_rank {
        return Err(Error::DataInsufficient(format!(
            "T = {} samples but n_Z + m = {} are required",
            report.samples, report.required_rank
        )));
    }
    if !report.passed {
        return Err(Error::DataInsufficient(format!(
            "[Z0; U0] has numerical rank {} < n_Z + m = {} (smallest singular value {:.3e}, largest {:.3e})",
            report.rank.rank, report.required_rank, report.rank.sigma_min, report.rank.sigma_max
        )));
    }
    Ok(report)
}

/// Rank data without failing; used by reports.
pub fn rank_report(ds: &DataSet) -> GateReport {
    let required = ds.n_z() + ds.m();
    let rank = linalg::numerical_rank(&ds.zu(), RANK_REL_TOL);
    let extended_rank = linalg::numerical_rank(&ds.zum(), RANK_REL_TOL);
    let passed = ds.t() >= required && rank.rank == required;
    GateReport { samples: ds.t(), required_rank: required, rank, extended_rank, passed }
}
