use std::path::{Path, PathBuf};
use std::time::Instant;

use ddreg::data::{self, DataSet};
use ddreg::regulator::Regulator;
use ddreg::simulate::{run_closed_loop, run_experiment, ClosedLoopSpec, Trajectory};
use ddreg::synthesis::{self, SynthesisMode, SynthesisProblem};
use ddreg::verify::{self, MetricsSpec, RegulationMetrics, SampleRegion};
use ddreg::{Error, InputSignal};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bundle::{self, write_json, LoadedResult};
use crate::config::Resolved;
use crate::exit::{CliError, Code};
use crate::plot::{self, Series};

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn result(&self) -> PathBuf {
        self.root.join("result")
    }

    pub fn sim(&self) -> PathBuf {
        self.root.join("sim")
    }

    pub fn verify(&self) -> PathBuf {
        self.root.join("verify.json")
    }
}

pub fn collect(r: &Resolved, dir: &Path) -> Result<DataSet, CliError> {
    let mut sets = Vec::with_capacity(r.experiments.len());
    for exp in &r.experiments {
        let traj = run_experiment(&r.plant, &r.exosystem, exp)?;
        sets.push(data::assemble(&traj, r.library(), &r.exosystem)?);
    }
    let ds = data::concat(&sets)?;
    let gate = data::richness_gate(&ds)?;
    bundle::write_dataset(dir, &ds, &r.hash, r.experiments.len(), &gate)?;
    println!(
        "collected T = {} samples from {} experiment(s); rank [Z0; U0] = {} of {}; wrote {}",
        ds.t(),
        r.experiments.len(),
        gate.rank.rank,
        gate.required_rank,
        dir.display()
    );
    Ok(ds)
}

#[derive(Serialize)]
struct FailureReport<'a> {
    config_hash: &'a str,
    mode: SynthesisMode,
    status: String,
    diagnostics: Vec<String>,
}

pub fn synthesize(r: &Resolved, data_dir: &Path, dir: &Path, mode: Option<SynthesisMode>) -> Result<LoadedResult, CliError> {
    let (ds, manifest) = bundle::read_dataset(data_dir)?;
    if manifest.config_hash != r.hash {
        log::warn!("data bundle was collected under a different configuration ({})", manifest.config_hash);
    }
    let mode = mode.unwrap_or(r.mode);
    let c_tilde = match mode {
        SynthesisMode::Stabilization => {
            Some(r.c_tilde.clone().ok_or_else(|| Error::Mode("stabilization mode needs a set-point task".into()))?)
        }
        _ => None,
    };
    let pb = SynthesisProblem::new(ds, mode, c_tilde, r.config.synthesis)?;
    match synthesis::synthesize(&pb) {
        Ok(res) => {
            bundle::write_result(dir, &res, &r.hash)?;
            println!(
                "synthesis ({mode}) {} in {:.2} s: K = {:?}; wrote {}",
                res.solver_status,
                res.solve_time,
                res.k.transpose().as_slice(),
                dir.display()
            );
            for w in &res.warnings {
                println!("warning: {w}");
            }
            bundle::read_result(dir)
        }
        Err(Error::Infeasible { status, diagnostics }) => {
            write_json(
                &dir.join("failure.json"),
                &FailureReport { config_hash: &r.hash, mode, status: status.clone(), diagnostics: diagnostics.clone() },
            )?;
            for d in &diagnostics {
                println!("diagnostic: {d}");
            }
            Err(Error::Infeasible { status, diagnostics }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn regulator(r: &Resolved, res: &LoadedResult) -> Result<Regulator, CliError> {
    let library = res.library()?;
    if library != *r.library() {
        return Err(CliError::schema(format!(
            "result library {:?} does not match the configured plant {:?}",
            library.term_names(),
            r.library().term_names()
        )));
    }
    let m = r.plant.m();
    let gains = r.gains()?;
    Ok(Regulator::new(res.k.clone(), gains.internal_model(&r.exosystem, m)?, gains.k_hat_matrix(m)?, library)?)
}

fn closed_loop_runs(r: &Resolved, reg: &Regulator) -> Result<Vec<(DVector<f64>, Result<Trajectory, Error>)>, CliError> {
    let sim = r.simulation.as_ref().ok_or_else(|| CliError::schema("config has no [simulation] section"))?;
    let spec = ClosedLoopSpec::new(sim.t_final, sim.dt, sim.record_period);
    let ics: Vec<DVector<f64>> = sim.initial_conditions.iter().map(|x| DVector::from_vec(x.clone())).collect();
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> = ics
            .iter()
            .map(|x0| s.spawn(|| run_closed_loop(&r.plant, &r.exosystem, reg, x0, None, &spec)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread")).collect::<Vec<_>>()
    });
    Ok(ics.into_iter().zip(runs).collect())
}

fn trajectory_csv(t: &Trajectory) -> Vec<u8> {
    let (n, q, m) = (
        t.states.first().map_or(0, |v| v.len()),
        t.eta.first().map_or(0, |v| v.len()),
        t.errors.first().map_or(0, |v| v.len()),
    );
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=q).map(|i| format!("eta{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=m).map(|i| format!("e{i}")));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for k in 0..t.len() {
        let row = std::iter::once(t.timestamps[k])
            .chain(t.states[k].iter().copied())
            .chain(t.eta[k].iter().copied())
            .chain(t.inputs[k].iter().copied())
            .chain(t.errors[k].iter().copied())
            .map(|v| format!("{v:e}"));
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Serialize)]
struct RunSummary {
    x0: Vec<f64>,
    file: Option<String>,
    metrics: Option<RegulationMetrics>,
    /// Largest `|x - x_e|` over the run, for set-point tasks.
    final_distance: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SimulationSummary {
    config_hash: String,
    certified: bool,
    runs: Vec<RunSummary>,
}

fn metrics_spec(r: &Resolved) -> MetricsSpec {
    let t_final = r.simulation.as_ref().map_or(0.0, |s| s.t_final);
    let checkpoints = (0..=4).map(|k| t_final * k as f64 / 4.0).collect();
    MetricsSpec { band: r.config.verify.band, checkpoints, ..Default::default() }
}

pub fn simulate(r: &Resolved, result_dir: &Path, dir: &Path) -> Result<(), CliError> {
    let res = bundle::read_result(result_dir)?;
    if !res.manifest.certified {
        println!("warning: simulating an UNCERTIFIED gain");
    }
    let reg = regulator(r, &res)?;
    let ics = r.simulation.as_ref().map_or(0, |s| s.initial_conditions.len());
    if ics == 0 {
        log::warn!("no initial conditions configured; nothing to simulate");
        println!("warning: no initial conditions configured; nothing to simulate");
        return Ok(());
    }
    let spec = metrics_spec(r);
    let mut summaries = Vec::new();
    let mut series = Vec::new();
    let mut first_err = None;
    for (i, (x0, run)) in closed_loop_runs(r, &reg)?.into_iter().enumerate() {
        let mut s = RunSummary { x0: x0.as_slice().to_vec(), file: None, metrics: None, final_distance: None, error: None };
        match run {
            Ok(t) => {
                let file = format!("run_{}.csv", i + 1);
                bundle::write_atomic(&dir.join(&file), &trajectory_csv(&t))?;
                let m = verify::regulation_metrics(&t, &spec);
                match &r.task {
                    Some(task) => {
                        s.final_distance = t.states.last().map(|x| (x - &task.x_e).norm());
                        for j in 0..r.plant.n() {
                            series.push(Series {
                                label: format!("x{} from {:?}", j + 1, x0.as_slice()),
                                points: t.timestamps.iter().zip(&t.states).map(|(a, x)| (*a, x[j])).collect(),
                            });
                        }
                    }
                    None => series.push(Series {
                        label: format!("e from {:?}", x0.as_slice()),
                        points: t.timestamps.iter().zip(&t.errors).map(|(a, e)| (*a, e[0])).collect(),
                    }),
                }
                println!(
                    "run {}: x0 = {:?}, final |e| = {:.3e}, settling time {}",
                    i + 1,
                    x0.as_slice(),
                    m.final_error,
                    m.settling_time.map_or("none".into(), |t| format!("{t:.2} s"))
                );
                s.file = Some(file);
                s.metrics = Some(m);
            }
            Err(e) => {
                println!("run {}: x0 = {:?}: {e}", i + 1, x0.as_slice());
                s.error = Some(e.to_string());
                first_err.get_or_insert(e);
            }
        }
        summaries.push(s);
    }
    let refs: Vec<f64> = r.task.as_ref().map(|t| t.x_e.iter().copied().collect()).unwrap_or_else(|| vec![0.0]);
    let title = match &r.task {
        Some(_) => "state trajectories; dashed: set point",
        None => "regulation error e(t)",
    };
    plot::overlay(&dir.join("overlay.svg"), title, &series, &refs)?;
    write_json(
        &dir.join("summary.json"),
        &SimulationSummary { config_hash: r.hash.clone(), certified: res.manifest.certified, runs: summaries },
    )?;
    println!("wrote {} run(s) and overlay.svg to {}", ics, dir.display());
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize, Default)]
struct CheckOutcome<T: Serialize> {
    passed: bool,
    skipped: Option<String>,
    report: Option<T>,
}

fn skipped<T: Serialize>(why: &str) -> CheckOutcome<T> {
    CheckOutcome { passed: false, skipped: Some(why.into()), report: None }
}

#[derive(Serialize)]
struct PassivityAudit {
    pairs: usize,
    min_slack: f64,
    witness_time: f64,
    tolerance: f64,
}

#[derive(Serialize)]
struct InternalModelAudit {
    pairs: usize,
    min_slack: f64,
    max_slack: f64,
    tolerance: f64,
}

#[derive(Serialize)]
struct VerifyReport {
    config_hash: String,
    certified: bool,
    ground_truth: bool,
    seed: u64,
    lemma3: Option<CheckOutcome<verify::Lemma3Report>>,
    lemma4: Option<CheckOutcome<verify::Lemma4Report>>,
    lemma5: Option<CheckOutcome<verify::Lemma5Report>>,
    regulator_equations: Option<CheckOutcome<verify::RegulatorEquationReport>>,
    passivity: CheckOutcome<PassivityAudit>,
    internal_model: Option<CheckOutcome<InternalModelAudit>>,
    regulation: Vec<RunSummary>,
    passed: bool,
}

fn random_signal(rng: &mut ChaCha8Rng) -> InputSignal {
    let mut s = InputSignal::constant(rng.gen_range(-0.5..=0.5));
    for _ in 0..2 {
        s = s.with_term(rng.gen_range(0.1..=1.0), rng.gen_range(0.2..=3.0), rng.gen_range(0.0..=6.0));
    }
    s
}

fn passivity_audit(r: &Resolved, k: &DMatrix<f64>, storage: &DMatrix<f64>, seed: u64) -> Result<CheckOutcome<PassivityAudit>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (r.plant.n(), r.plant.m());
    let v = &r.config.verify;
    let mut audit = PassivityAudit { pairs: v.pairs, min_slack: f64::INFINITY, witness_time: 0.0, tolerance: verify::PASSIVITY_TOL };
    for _ in 0..v.pairs {
        let xa = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let xb = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let va: Vec<_> = (0..m).map(|_| random_signal(&mut rng)).collect();
        let vb: Vec<_> = (0..m).map(|_| random_signal(&mut rng)).collect();
        let c = verify::check_passivity_numeric(&r.plant, &r.exosystem, k, storage, [&xa, &xb], [&va, &vb], v.horizon, 1e-3)?;
        if c.min_slack < audit.min_slack {
            audit.min_slack = c.min_slack;
            audit.witness_time = c.witness_time;
        }
    }
    Ok(CheckOutcome { passed: audit.min_slack >= -verify::PASSIVITY_TOL, skipped: None, report: Some(audit) })
}

fn internal_model_audit(r: &Resolved, seed: u64) -> Result<CheckOutcome<InternalModelAudit>, CliError> {
    let im = r.gains()?.internal_model(&r.exosystem, r.plant.m())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let pairs = r.config.verify.pairs;
    let mut audit = InternalModelAudit { pairs, min_slack: f64::INFINITY, max_slack: f64::NEG_INFINITY, tolerance: verify::INTERNAL_MODEL_TOL };
    let mut passed = true;
    for _ in 0..pairs {
        let ea = DVector::from_fn(im.q(), |_, _| rng.gen_range(-1.0..=1.0));
        let eb = DVector::from_fn(im.q(), |_, _| rng.gen_range(-1.0..=1.0));
        let ua: Vec<_> = (0..im.m()).map(|_| random_signal(&mut rng)).collect();
        let ub: Vec<_> = (0..im.m()).map(|_| random_signal(&mut rng)).collect();
        let c = verify::check_internal_model_passivity(&im, [&ea, &eb], [&ua, &ub], r.config.verify.horizon, 1e-3)?;
        audit.min_slack = audit.min_slack.min(c.min_slack);
        audit.max_slack = audit.max_slack.max(c.max_slack);
        passed &= c.passed;
    }
    Ok(CheckOutcome { passed, skipped: None, report: Some(audit) })
}

pub fn verify_bundle(
    r: &Resolved,
    result_dir: &Path,
    data_dir: &Path,
    path: &Path,
    seed: u64,
    ground_truth: bool,
) -> Result<(), CliError> {
    let res = bundle::read_result(result_dir)?;
    let storage = res.storage();
    let no_cert = "bundle carries no certificate (uncertified gain)";
    let mut report = VerifyReport {
        config_hash: r.hash.clone(),
        certified: res.manifest.certified,
        ground_truth,
        seed,
        lemma3: None,
        lemma4: None,
        lemma5: None,
        regulator_equations: None,
        passivity: skipped(no_cert),
        internal_model: None,
        regulation: Vec::new(),
        passed: false,
    };

    if ground_truth {
        report.lemma3 = Some(match &storage {
            Some(s) => {
                let rep = verify::check_lemma3(&r.plant, &res.k, s, 1e-5)?;
                CheckOutcome { passed: rep.passed, skipped: None, report: Some(rep) }
            }
            None => skipped(no_cert),
        });
        if let Some(rq) = r.lipschitz_factor()? {
            let region = SampleRegion { seed, ..SampleRegion::default() };
            report.lemma4 = Some(match &storage {
                Some(s) => {
                    let rep = verify::check_lemma4(&r.plant, &res.k, s, &rq, &region, 1e-5)?;
                    CheckOutcome { passed: rep.passed, skipped: None, report: Some(rep) }
                }
                None => skipped(no_cert),
            });
        }
        report.lemma5 = Some(match (&res.y, &res.g2, &res.p) {
            (Some(y), Some(g2), Some(p)) => {
                let (ds, _) = bundle::read_dataset(data_dir)?;
                let g1 = y * synthesis::symmetric_inverse(p);
                let rep = verify::check_lemma5(&r.plant, &r.exosystem, &ds, &res.k, &g1, g2)?;
                CheckOutcome { passed: rep.max() <= 1e-6, skipped: None, report: Some(rep) }
            }
            _ => skipped(no_cert),
        });
        if res.manifest.mode == SynthesisMode::Linear {
            let p = &r.plant;
            let rep = verify::solve_linear_regulator_equations(&p.a, &p.b, &p.c, &p.e, &p.f, &r.exosystem.s_matrix())?;
            report.regulator_equations = Some(CheckOutcome { passed: rep.solvable, skipped: None, report: Some(rep) });
        }
        report.internal_model = Some(internal_model_audit(r, seed)?);
    }
    if let Some(s) = &storage {
        report.passivity = passivity_audit(r, &res.k, s, seed)?;
    }

    let reg = regulator(r, &res)?;
    let spec = metrics_spec(r);
    let mut regulation_ok = true;
    for (x0, run) in closed_loop_runs(r, &reg)? {
        let mut s = RunSummary { x0: x0.as_slice().to_vec(), file: None, metrics: None, final_distance: None, error: None };
        match run {
            Ok(t) => {
                let m = verify::regulation_metrics(&t, &spec);
                regulation_ok &= m.bounded && m.settling_time.is_some();
                s.final_distance = r.task.as_ref().and_then(|task| t.states.last().map(|x| (x - &task.x_e).norm()));
                s.metrics = Some(m);
            }
            Err(e) => {
                regulation_ok = false;
                s.error = Some(e.to_string());
            }
        }
        report.regulation.push(s);
    }

    let checks = [
        report.lemma3.as_ref().map(|c| c.passed),
        report.lemma4.as_ref().map(|c| c.passed),
        report.lemma5.as_ref().map(|c| c.passed),
        report.regulator_equations.as_ref().map(|c| c.passed),
        report.internal_model.as_ref().map(|c| c.passed),
        Some(report.passivity.passed),
        Some(regulation_ok),
    ];
    report.passed = checks.iter().flatten().all(|&p| p);
    let skip = [
        report.lemma3.as_ref().and_then(|c| c.skipped.as_deref()),
        report.lemma4.as_ref().and_then(|c| c.skipped.as_deref()),
        report.lemma5.as_ref().and_then(|c| c.skipped.as_deref()),
        None,
        None,
        report.passivity.skipped.as_deref(),
        None,
    ];
    let names = [
        "passivity conditions on the true plant",
        "Lipschitz sufficient condition",
        "data representation identities",
        "linear regulator equations",
        "internal-model passivity",
        "numeric incremental passivity",
        "closed-loop regulation",
    ];
    for ((name, c), why) in names.iter().zip(checks).zip(skip) {
        match (c, why) {
            (Some(_), Some(why)) => println!("{name}: FAIL (not evaluable: {why})"),
            (Some(true), None) => println!("{name}: pass"),
            (Some(false), None) => println!("{name}: FAIL"),
            (None, _) => {}
        }
    }
    write_json(path, &report)?;
    println!("wrote {}", path.display());
    if report.passed {
        Ok(())
    } else {
        Err(CliError::new(Code::Verification, "one or more verification checks failed"))
    }
}

/// Collect, synthesize, simulate and verify. When synthesis is infeasible
/// and the configuration carries a reference gain, the remaining stages run
/// with that gain marked uncertified and the infeasibility is still reported
/// through the exit code.
pub fn example(r: &Resolved, layout: &Layout, seed: u64, ground_truth: bool) -> Result<(), CliError> {
    let start = Instant::now();
    collect(r, &layout.data())?;
    let mut deferred = None;
    match synthesize(r, &layout.data(), &layout.result(), None) {
        Ok(_) => {}
        Err(e) if e.code == Code::Infeasible => {
            let Some(k) = &r.reference_gain else { return Err(e) };
            let (_, diagnostics) = match bundle::read_json::<serde_json::Value>(&layout.result().join("failure.json")) {
                Ok(v) => ((), v["diagnostics"].as_array().map(|a| a.iter().filter_map(|d| d.as_str().map(String::from)).collect()).unwrap_or_default()),
                Err(_) => ((), Vec::new()),
            };
            println!("synthesis infeasible; continuing with the configured reference gain (UNCERTIFIED)");
            bundle::write_uncertified(&layout.result(), r.mode, r.library(), k, &r.hash, diagnostics)?;
            deferred = Some(e);
        }
        Err(e) => return Err(e),
    }
    simulate(r, &layout.result(), &layout.sim())?;
    let verified = verify_bundle(r, &layout.result(), &layout.data(), &layout.verify(), seed, ground_truth);
    println!("pipeline finished in {:.1} s", start.elapsed().as_secs_f64());
    match (deferred, verified) {
        (Some(e), _) => Err(e),
        (None, v) => v,
    }
}
