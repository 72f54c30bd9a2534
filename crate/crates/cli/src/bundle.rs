//! On-disk artifacts: plain CSV matrices with a JSON manifest that records
//! shapes, hashes and the configuration hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ddreg::data::{DataSet, GateReport};
use ddreg::synthesis::{Residuals, SynthesisMode, SynthesisResult};
use ddreg::FunctionLibrary;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::CliError;

pub const DATA_MANIFEST: &str = "manifest.json";
pub const RESULT_MANIFEST: &str = "result.json";

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("create {}", dir.display()), e))?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&format!("write {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(&format!("rename to {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::schema(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

pub fn matrix_csv(m: &DMatrix<f64>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_matrix(dir: &Path, name: &str, m: &DMatrix<f64>) -> Result<FileEntry, CliError> {
    let bytes = matrix_csv(m);
    let file = format!("{name}.csv");
    write_atomic(&dir.join(&file), &bytes)?;
    Ok(FileEntry { file, rows: m.nrows(), cols: m.ncols(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

pub fn read_matrix(dir: &Path, entry: &FileEntry) -> Result<DMatrix<f64>, CliError> {
    let path = dir.join(&entry.file);
    let shape_err = |detail: String| {
        CliError::schema(format!("{}: expected a {} x {} matrix, {detail}", path.display(), entry.rows, entry.cols))
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&path)
        .map_err(|e| CliError::schema(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::with_capacity(entry.rows * entry.cols);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::schema(format!("{}: {e}", path.display())))?;
        if rec.len() != entry.cols {
            return Err(shape_err(format!("row {} has {} entries", rows + 1, rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::schema(format!("{}: row {} has non-numeric entry {field:?}", path.display(), rows + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != entry.rows {
        return Err(shape_err(format!("found {rows} rows")));
    }
    Ok(DMatrix::from_row_slice(entry.rows, entry.cols, &values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub kind: String,
    pub config_hash: String,
    pub n: usize,
    pub library: Vec<String>,
    pub frequencies: Vec<f64>,
    pub constant_modes: usize,
    pub samples: usize,
    pub experiments: usize,
    /// All experiments are sampled on one exosystem clock.
    pub shared_clock: bool,
    pub timestamps: Vec<f64>,
    pub gate: GateReport,
    pub files: BTreeMap<String, FileEntry>,
}

pub fn write_dataset(dir: &Path, ds: &DataSet, hash: &str, experiments: usize, gate: &GateReport) -> Result<DataManifest, CliError> {
    let mut files = BTreeMap::new();
    for (name, m) in [("X0", &ds.x0), ("X1", &ds.x1), ("Z0", &ds.z0), ("U0", &ds.u0), ("E0", &ds.e0), ("M0", &ds.m0)] {
        files.insert(name.to_string(), write_matrix(dir, name, m)?);
    }
    let manifest = DataManifest {
        kind: "dataset".into(),
        config_hash: hash.into(),
        n: ds.n(),
        library: ds.library.term_names(),
        frequencies: ds.frequencies.clone(),
        constant_modes: ds.constant_modes,
        samples: ds.t(),
        experiments,
        shared_clock: true,
        timestamps: ds.timestamps.clone(),
        gate: gate.clone(),
        files,
    };
    write_json(&dir.join(DATA_MANIFEST), &manifest)?;
    Ok(manifest)
}

fn entry<'a>(files: &'a BTreeMap<String, FileEntry>, name: &str, manifest: &Path) -> Result<&'a FileEntry, CliError> {
    files.get(name).ok_or_else(|| CliError::schema(format!("{} lists no {name} file", manifest.display())))
}

pub fn read_dataset(dir: &Path) -> Result<(DataSet, DataManifest), CliError> {
    let mpath = dir.join(DATA_MANIFEST);
    let manifest: DataManifest = read_json(&mpath)?;
    let terms: Vec<&str> = manifest.library.iter().map(String::as_str).collect();
    let library = FunctionLibrary::parse(manifest.n, &terms)?;
    let load = |name: &str| read_matrix(dir, entry(&manifest.files, name, &mpath)?);
    let ds = DataSet::from_parts(
        library,
        manifest.frequencies.clone(),
        manifest.constant_modes,
        load("X0")?,
        load("X1")?,
        load("Z0")?,
        load("U0")?,
        load("E0")?,
        manifest.timestamps.clone(),
    )
    .map_err(|e| CliError::schema(format!("{}: {e}", dir.display())))?;
    if let Some(e) = manifest.files.get("M0") {
        let m0 = read_matrix(dir, e)?;
        if m0.shape() != ds.m0.shape() || (&m0 - &ds.m0).amax() > 1e-12 {
            return Err(CliError::schema(format!("{}: M0 does not match the manifest timestamps and frequencies", dir.display())));
        }
    }
    Ok((ds, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub kind: String,
    pub config_hash: String,
    pub mode: SynthesisMode,
    /// False when the gain is a configured fallback, not a solved certificate.
    pub certified: bool,
    pub n: usize,
    pub library: Vec<String>,
    pub solver_status: Option<String>,
    pub iterations: Option<u32>,
    pub residuals: Option<Residuals>,
    pub gate: Option<GateReport>,
    pub warnings: Vec<String>,
    pub diagnostics: Vec<String>,
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Clone)]
pub struct LoadedResult {
    pub manifest: ResultManifest,
    pub k: DMatrix<f64>,
    pub y: Option<DMatrix<f64>>,
    pub g2: Option<DMatrix<f64>>,
    pub p: Option<DMatrix<f64>>,
}

impl LoadedResult {
    pub fn library(&self) -> Result<FunctionLibrary, CliError> {
        let terms: Vec<&str> = self.manifest.library.iter().map(String::as_str).collect();
        Ok(FunctionLibrary::parse(self.manifest.n, &terms)?)
    }

    /// `P1^{-1}` when a certificate is present.
    pub fn storage(&self) -> Option<DMatrix<f64>> {
        let p = self.p.as_ref()?;
        let n = self.manifest.n;
        Some(ddreg::synthesis::symmetric_inverse(&p.view((0, 0), (n, n)).clone_owned()))
    }
}

pub fn write_result(dir: &Path, res: &SynthesisResult, hash: &str) -> Result<ResultManifest, CliError> {
    let mut files = BTreeMap::new();
    for (name, m) in [("K", &res.k), ("Y", &res.y), ("G2", &res.g2), ("P", &res.p)] {
        files.insert(name.to_string(), write_matrix(dir, name, m)?);
    }
    let manifest = ResultManifest {
        kind: "synthesis".into(),
        config_hash: hash.into(),
        mode: res.mode,
        certified: true,
        n: res.n(),
        library: res.library.term_names(),
        solver_status: Some(res.solver_status.clone()),
        iterations: Some(res.iterations),
        residuals: Some(res.residuals),
        gate: Some(res.gate.clone()),
        warnings: res.warnings.clone(),
        diagnostics: Vec::new(),
        files,
    };
    write_json(&dir.join(RESULT_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Bundle holding only a fallback gain, marked uncertified.
pub fn write_uncertified(
    dir: &Path,
    mode: SynthesisMode,
    library: &FunctionLibrary,
    k: &DMatrix<f64>,
    hash: &str,
    diagnostics: Vec<String>,
) -> Result<ResultManifest, CliError> {
    let mut files = BTreeMap::new();
    files.insert("K".to_string(), write_matrix(dir, "K", k)?);
    let manifest = ResultManifest {
        kind: "synthesis".into(),
        config_hash: hash.into(),
        mode,
        certified: false,
        n: library.n(),
        library: library.term_names(),
        solver_status: None,
        iterations: None,
        residuals: None,
        gate: None,
        warnings: vec!["UNCERTIFIED: gain taken from the configuration because synthesis failed".into()],
        diagnostics,
        files,
    };
    write_json(&dir.join(RESULT_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_result(dir: &Path) -> Result<LoadedResult, CliError> {
    let mpath = dir.join(RESULT_MANIFEST);
    let manifest: ResultManifest = read_json(&mpath)?;
    let k = read_matrix(dir, entry(&manifest.files, "K", &mpath)?)?;
    let opt = |name: &str| manifest.files.get(name).map(|e| read_matrix(dir, e)).transpose();
    let (y, g2, p) = (opt("Y")?, opt("G2")?, opt("P")?);
    Ok(LoadedResult { manifest, k, y, g2, p })
}
