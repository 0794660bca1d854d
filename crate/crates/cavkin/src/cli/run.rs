//! Sweep orchestration: expand a config into points, run them on one
//! shared worker pool, and write results.csv, per-point trace sidecars,
//! and a manifest that is sufficient to re-run or resume the experiment.
//!
//! Determinism contract: points are scheduled in parallel but merged in
//! index order, each with its own seed stream, so reruns of the same
//! config and seed reproduce every physics column bitwise. Only
//! wall_time_s varies between reruns.

use super::{
    CavityCoord, ClassicalParams, ExperimentConfig, HeomParams, Method, PointSpec, Resolved,
};
use crate::baths::{decompose_debye, BathExpansion, BathLabel, DebyeBath};
use crate::classical::{self, ClassicalCavity, GleConfig, Potential};
use crate::error::CliError;
use crate::heom::{
    modes_from_expansions, propagate, steady_state, HeomSystem, Hierarchy, SteadySpec,
    Tolerances, TruncationSpec,
};
use crate::model::{BathAttachment, BathSite, CavitySpec, CompositeSystem};
use crate::rates::{
    self, equilibrium_populations, extract_rate, Convergence, InitialCondition, PopulationTrace,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const RESULTS_SCHEMA: u32 = 1;
pub const MANIFEST_SCHEMA: &str = "cavkin manifest v1";

const CSV_HEADER: &str = "omega_c_cm1,eta_c,tau_c_fs,eta_s_over_omega_b,c_q_au,kappa_au,\
                          kappa_over_kappa0,method,trunc_l,gamma_trunc,k_pade,ado_count,\
                          n_traj,seed,wall_time_s";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub n_points: usize,
    pub n_failed: usize,
    pub n_reused: usize,
}

/// One CSV row. Optional columns are empty cells: sweep coordinates
/// that do not apply to the point and convergence metadata the method
/// does not produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub omega_c_cm1: Option<f64>,
    pub eta_c: Option<f64>,
    pub tau_c_fs: Option<f64>,
    pub eta_s_over_omega_b: f64,
    pub c_q_au: Option<f64>,
    /// Plateau rate constant, 1/au of time.
    pub kappa_au: f64,
    /// Cavity modification against the paired cavity-free run; present
    /// only when that run exists in the same result set.
    pub kappa_over_kappa0: Option<f64>,
    pub method: Method,
    pub trunc_l: Option<usize>,
    pub gamma_trunc: Option<f64>,
    pub k_pade: Option<usize>,
    pub ado_count: Option<usize>,
    pub n_traj: Option<usize>,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// L against L+2 comparison attached to an accepted heom point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub l: usize,
    pub l_refined: usize,
    pub kappa_au: f64,
    pub kappa_refined_au: f64,
    pub rel_change: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointRecord {
    pub index: usize,
    pub cavity: Option<CavityCoord>,
    pub status: String,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub row: Option<ResultRow>,
    #[serde(default)]
    pub trace_file: Option<String>,
    #[serde(default)]
    pub spectrum_file: Option<String>,
    #[serde(default)]
    pub convergence: Option<ConvergenceReport>,
}

/// Everything needed to re-run the experiment: the config verbatim plus
/// its hash, the library version, and the per-point outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub crate_version: String,
    pub created_unix_s: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub workers: Option<usize>,
    pub results_csv: String,
    /// "complete" or "partial"; partial means some points failed and
    /// their rows are missing from the CSV.
    pub status: String,
    pub points: Vec<PointRecord>,
}

enum TraceData {
    /// Reactant/product populations with the instantaneous rate on the
    /// interior stencil (empty cells at the edges).
    Population { t_au: Vec<f64>, p_r: Vec<f64>, p_p: Vec<f64>, k_inst: Vec<Option<f64>> },
    /// Flux-side transmission curve with block standard errors.
    FluxSide { t_au: Vec<f64>, kappa: Vec<f64>, se: Vec<f64> },
}

struct SpectrumData {
    omega_cm1: Vec<f64>,
    intensity: Vec<f64>,
}

struct RowMeta {
    trunc_l: Option<usize>,
    gamma_trunc: Option<f64>,
    k_pade: Option<usize>,
    ado_count: Option<usize>,
    n_traj: Option<usize>,
}

struct PointPhysics {
    kappa_au: f64,
    meta: RowMeta,
    trace: Option<TraceData>,
    spectrum: Option<SpectrumData>,
    convergence: Option<ConvergenceReport>,
}

struct Executed {
    record: PointRecord,
    trace: Option<TraceData>,
    spectrum: Option<SpectrumData>,
}

fn internal(msg: String) -> CliError {
    CliError::Internal(msg)
}

fn read_config(path: &Path) -> Result<(Vec<u8>, ExperimentConfig), CliError> {
    let bytes = fs::read(path).map_err(|e| {
        CliError::Validation(format!("cannot read config {}: {e}", path.display()))
    })?;
    let cfg = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Validation(format!("config {}: {e}", path.display()))
    })?;
    Ok((bytes, cfg))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Parse, resolve, and echo the config in atomic units without running
/// anything. The returned string is the pretty-printed echo document.
pub fn validate_config(config_path: &Path) -> Result<String, CliError> {
    let (_, cfg) = read_config(config_path)?;
    let resolved = cfg.resolve()?;
    let echo = resolved.echo()?;
    serde_json::to_string_pretty(&echo).map_err(|e| internal(format!("echo serialization: {e}")))
}

/// Execute every sweep point and write results.csv, trace sidecars, and
/// manifest.json into the output directory. Failed points are recorded
/// in the manifest and skipped in the CSV; they surface as
/// [`CliError::Partial`] after everything else has been written.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let (bytes, cfg) = read_config(config_path)?;
    let sha = sha256_hex(&bytes);
    let config_value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Validation(format!("config: {e}")))?;
    let res = cfg.resolve()?;

    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| res.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cavkin-out"));
    fs::create_dir_all(&out_dir)
        .map_err(|e| internal(format!("cannot create {}: {e}", out_dir.display())))?;

    let reused = match &opts.resume {
        None => vec![None; res.points.len()],
        Some(p) => load_resume(p, &sha, &res)?,
    };

    if let Some(w) = opts.workers {
        if w == 0 {
            return Err(CliError::Validation("--workers must be at least 1".into()));
        }
        // one process-wide pool serves both sweep scheduling and the
        // trajectory ensembles inside points; a second run in the same
        // process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }

    let executed: Vec<Executed> = res
        .points
        .par_iter()
        .map(|pt| match &reused[pt.index] {
            Some(record) => Executed { record: record.clone(), trace: None, spectrum: None },
            None => execute_point(&res, pt),
        })
        .collect();

    let n_reused = reused.iter().filter(|r| r.is_some()).count();
    let mut records = Vec::with_capacity(executed.len());
    for ex in executed {
        let mut record = ex.record;
        if res.traces {
            if let Some(trace) = &ex.trace {
                let name = format!("trace_{:03}.csv", record.index);
                write_trace(&out_dir.join(&name), trace)
                    .map_err(|e| internal(format!("writing {name}: {e}")))?;
                record.trace_file = Some(name);
            }
        }
        if let Some(spec) = &ex.spectrum {
            let name = format!("spectrum_{:03}.csv", record.index);
            write_spectrum(&out_dir.join(&name), spec)
                .map_err(|e| internal(format!("writing {name}: {e}")))?;
            record.spectrum_file = Some(name);
        }
        records.push(record);
    }

    apply_kappa0_pairing(&mut records);

    for r in &records {
        match (&r.row, &r.error) {
            (Some(row), _) => println!(
                "point {} [{}] kappa = {} au ({:.2} s){}",
                r.index,
                describe_coords(&r.cavity),
                f12(row.kappa_au),
                row.wall_time_s,
                if reused_marker(&reused, r.index) { " [reused]" } else { "" },
            ),
            (None, Some(err)) => {
                println!("point {} [{}] FAILED: {err}", r.index, describe_coords(&r.cavity))
            }
            (None, None) => println!("point {} [{}] FAILED", r.index, describe_coords(&r.cavity)),
        }
    }

    let n_failed = records.iter().filter(|r| r.status == "failed").count();
    let csv_path = out_dir.join(&res.results_name);
    write_results_csv(&csv_path, &records)
        .map_err(|e| internal(format!("writing {}: {e}", csv_path.display())))?;

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        created_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config_sha256: sha,
        config: config_value,
        workers: opts.workers,
        results_csv: res.results_name.clone(),
        status: if n_failed == 0 { "complete".into() } else { "partial".into() },
        points: records,
    };
    let manifest_path = out_dir.join("manifest.json");
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| internal(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, manifest_json)
        .map_err(|e| internal(format!("writing {}: {e}", manifest_path.display())))?;

    println!(
        "wrote {} ({} rows) and {}",
        csv_path.display(),
        manifest.points.iter().filter(|r| r.status == "done").count(),
        manifest_path.display()
    );

    if n_failed > 0 {
        return Err(CliError::Partial { failed: n_failed, total: res.points.len() });
    }
    Ok(RunSummary {
        csv_path,
        manifest_path,
        n_points: res.points.len(),
        n_failed,
        n_reused,
    })
}

fn reused_marker(reused: &[Option<PointRecord>], index: usize) -> bool {
    reused.get(index).map(|r| r.is_some()).unwrap_or(false)
}

fn describe_coords(cavity: &Option<CavityCoord>) -> String {
    match cavity {
        None => "no cavity".into(),
        Some(c) => match c.tau_c_fs {
            Some(tau) => format!(
                "omega_c = {} cm-1, eta_c = {}, tau_c = {} fs",
                c.omega_c_cm1, c.eta_c, tau
            ),
            None => format!("omega_c = {} cm-1, eta_c = {}, lossless", c.omega_c_cm1, c.eta_c),
        },
    }
}

fn load_resume(
    manifest_path: &Path,
    config_sha: &str,
    res: &Resolved,
) -> Result<Vec<Option<PointRecord>>, CliError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| {
        CliError::Validation(format!("cannot read manifest {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!("manifest {}: {e}", manifest_path.display()))
    })?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(CliError::Validation(format!(
            "manifest schema {:?} is not {MANIFEST_SCHEMA:?}",
            manifest.schema
        )));
    }
    if manifest.config_sha256 != config_sha {
        return Err(CliError::Validation(
            "resume manifest was created from a different config (sha256 mismatch); \
             point results cannot be reused"
                .into(),
        ));
    }
    let mut reused = vec![None; res.points.len()];
    for rec in manifest.points {
        if rec.status != "done" || rec.row.is_none() {
            continue;
        }
        let idx = rec.index;
        match res.points.get(idx) {
            Some(pt) if pt.cavity == rec.cavity => reused[idx] = Some(rec),
            // an identical config always regenerates the same point
            // list, so a mismatch means the manifest was edited
            _ => {
                return Err(CliError::Validation(format!(
                    "manifest point {} does not match the sweep generated from the config",
                    rec.index
                )))
            }
        }
    }
    Ok(reused)
}

fn execute_point(res: &Resolved, pt: &PointSpec) -> Executed {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| run_point(res, pt)));
    let wall_time_s = start.elapsed().as_secs_f64();
    let (status, error, physics) = match outcome {
        Ok(Ok(p)) => ("done", None, Some(p)),
        Ok(Err(msg)) => ("failed", Some(msg), None),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            ("failed", Some(format!("panicked: {msg}")), None)
        }
    };
    let (row, trace, spectrum, convergence) = match physics {
        None => (None, None, None, None),
        Some(p) => (
            Some(ResultRow {
                omega_c_cm1: pt.cavity.map(|c| c.omega_c_cm1),
                eta_c: pt.cavity.map(|c| c.eta_c),
                tau_c_fs: pt.cavity.and_then(|c| c.tau_c_fs),
                eta_s_over_omega_b: res.solvent.eta_over_omega_b,
                c_q_au: res.spectator.as_ref().map(|s| s.c_q),
                kappa_au: p.kappa_au,
                kappa_over_kappa0: None,
                method: res.method,
                trunc_l: p.meta.trunc_l,
                gamma_trunc: p.meta.gamma_trunc,
                k_pade: p.meta.k_pade,
                ado_count: p.meta.ado_count,
                n_traj: p.meta.n_traj,
                seed: res.seed,
                wall_time_s,
            }),
            p.trace,
            p.spectrum,
            p.convergence,
        ),
    };
    Executed {
        record: PointRecord {
            index: pt.index,
            cavity: pt.cavity,
            status: status.into(),
            error,
            row,
            trace_file: None,
            spectrum_file: None,
            convergence,
        },
        trace,
        spectrum,
    }
}

fn run_point(res: &Resolved, pt: &PointSpec) -> Result<PointPhysics, String> {
    match res.method {
        Method::Heom => heom_point(res, res.heom.as_ref().expect("heom params"), pt),
        Method::ClassicalGle => {
            classical_point(res, res.classical.as_ref().expect("classical params"), pt)
        }
        Method::GroteHynes => grote_hynes_point(res, pt),
    }
}

/// The cavity-free run divides every other row; it gets exactly 1.0 for
/// itself so the column is self-consistent.
fn apply_kappa0_pairing(records: &mut [PointRecord]) {
    let kappa0 = records
        .iter()
        .find(|r| r.cavity.is_none() && r.status == "done")
        .and_then(|r| r.row.as_ref())
        .map(|row| row.kappa_au);
    for r in records.iter_mut() {
        if let Some(row) = r.row.as_mut() {
            row.kappa_over_kappa0 = match kappa0 {
                Some(_) if r.cavity.is_none() => Some(1.0),
                Some(k0) => Some(row.kappa_au / k0),
                None => None,
            };
        }
    }
}

// ---- formatting ----

/// Scientific notation with 12 significant digits; every float column
/// uses it so CSVs are diffable across runs.
fn f12(x: f64) -> String {
    format!("{x:.11e}")
}

fn opt_f12(x: Option<f64>) -> String {
    x.map(f12).unwrap_or_default()
}

fn opt_int(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_results_csv(path: &Path, records: &[PointRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# cavkin results schema {RESULTS_SCHEMA}\n"));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for rec in records {
        let Some(row) = &rec.row else { continue };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            opt_f12(row.omega_c_cm1),
            opt_f12(row.eta_c),
            opt_f12(row.tau_c_fs),
            f12(row.eta_s_over_omega_b),
            opt_f12(row.c_q_au),
            f12(row.kappa_au),
            opt_f12(row.kappa_over_kappa0),
            row.method,
            opt_int(row.trunc_l),
            opt_f12(row.gamma_trunc),
            opt_int(row.k_pade),
            opt_int(row.ado_count),
            opt_int(row.n_traj),
            row.seed,
            f12(row.wall_time_s),
        ));
    }
    fs::write(path, out)
}

fn write_trace(path: &Path, trace: &TraceData) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# cavkin trace schema {RESULTS_SCHEMA}\n"));
    match trace {
        TraceData::Population { t_au, p_r, p_p, k_inst } => {
            out.push_str("t_au,p_reactant,p_product,k_inst_au\n");
            for i in 0..t_au.len() {
                let k = match k_inst[i] {
                    Some(v) if v.is_finite() => f12(v),
                    _ => String::new(),
                };
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    f12(t_au[i]),
                    f12(p_r[i]),
                    f12(p_p[i]),
                    k
                ));
            }
        }
        TraceData::FluxSide { t_au, kappa, se } => {
            out.push_str("t_au,kappa,kappa_se\n");
            for i in 0..t_au.len() {
                out.push_str(&format!("{},{},{}\n", f12(t_au[i]), f12(kappa[i]), f12(se[i])));
            }
        }
    }
    fs::write(path, out)
}

fn write_spectrum(path: &Path, spec: &SpectrumData) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# cavkin spectrum schema {RESULTS_SCHEMA}\n"));
    out.push_str("omega_cm1,intensity_au\n");
    for i in 0..spec.omega_cm1.len() {
        out.push_str(&format!("{},{}\n", f12(spec.omega_cm1[i]), f12(spec.intensity[i])));
    }
    fs::write(path, out)
}

// ---- heom ----

struct HeomAssembly {
    system: CompositeSystem,
    expansions: Vec<BathExpansion>,
}

/// Build the composite system and certified bath expansions for one
/// point. Expansion order matches the coupling operator order.
fn assemble_heom(
    res: &Resolved,
    hp: &HeomParams,
    cavity: Option<&CavityCoord>,
) -> Result<HeomAssembly, String> {
    let basis =
        crate::model::solve_vibrational_states(&res.potential, &res.grid, hp.n_states)
            .map_err(|e| format!("eigensolve: {e}"))?;

    let mut baths: Vec<DebyeBath> = Vec::new();
    let mut attachments: Vec<BathAttachment> = Vec::new();
    let solvent = DebyeBath::new(res.solvent.lambda, res.solvent.gamma, BathLabel::Solvent)
        .map_err(|e| e.to_string())?;
    attachments.push(BathAttachment {
        site: BathSite::ReactionCoordinate,
        label: "solvent".into(),
        reorganization: solvent.lambda_reorg,
    });
    baths.push(solvent);
    if let Some(sec) = &res.secondary {
        let b = DebyeBath::new(sec.lambda, sec.gamma, BathLabel::Secondary)
            .map_err(|e| e.to_string())?;
        attachments.push(BathAttachment {
            site: BathSite::SpectatorMode,
            label: "secondary".into(),
            reorganization: b.lambda_reorg,
        });
        baths.push(b);
    }
    let cavity_spec = match cavity {
        None => None,
        Some(c) => {
            if let Some(lambda) = res.loss_reorganization(c) {
                let lambda = lambda.map_err(|e| e.to_string())?;
                let b = DebyeBath::new(lambda, res.loss_gamma, BathLabel::Loss)
                    .map_err(|e| e.to_string())?;
                attachments.push(BathAttachment {
                    site: BathSite::CavityMode,
                    label: "loss".into(),
                    reorganization: b.lambda_reorg,
                });
                baths.push(b);
            }
            Some(CavitySpec {
                omega_c: c.omega_c_au(),
                eta_c: c.eta_c,
                n_fock: hp.n_fock,
                coupling_target: res.couples_to,
                tau_c: c.tau_c_au(),
            })
        }
    };

    let system = CompositeSystem::build(
        &basis,
        cavity_spec.as_ref(),
        res.spectator.as_ref(),
        &attachments,
    )
    .map_err(|e| format!("composite assembly: {e}"))?;

    let expansions: Result<Vec<BathExpansion>, String> = baths
        .iter()
        .map(|b| decompose_debye(b, res.beta, hp.pade).map_err(|e| format!("bath {}: {e}", b.label)))
        .collect();
    Ok(HeomAssembly { system, expansions: expansions? })
}

struct HeomRun {
    kappa: f64,
    k_pade: usize,
    ado_count: usize,
    trace: TraceData,
    spectrum: Option<SpectrumData>,
}

fn heom_run(
    res: &Resolved,
    hp: &HeomParams,
    trunc: TruncationSpec,
    assembly: &HeomAssembly,
    want_outputs: bool,
) -> Result<HeomRun, String> {
    let sys = HeomSystem::new(&assembly.system).map_err(|e| e.to_string())?;
    let refs: Vec<&BathExpansion> = assembly.expansions.iter().collect();
    let modes = modes_from_expansions(&refs).map_err(|e| e.to_string())?;
    let hierarchy = Hierarchy::enumerate(assembly.system.dims.total(), modes, &trunc)
        .map_err(|e| format!("hierarchy enumeration: {e}"))?;

    let steady_spec = SteadySpec::default();
    let (steady, _report) = steady_state(&hierarchy, &sys, res.beta, &steady_spec)
        .map_err(|e| format!("stationary state: {e}"))?;
    let equilibrium = equilibrium_populations(&steady, &sys);

    let mut state = match hp.initial_condition {
        InitialCondition::UncorrelatedThermal => {
            rates::initial_uncorrelated(&hierarchy, &sys, res.beta).map_err(|e| e.to_string())?
        }
        InitialCondition::CorrelatedSteadyState => {
            rates::initial_correlated(&steady, &hierarchy, &sys).map_err(|e| e.to_string())?
        }
    };
    let tol = Tolerances { rtol: hp.rtol, atol: hp.atol, ..Tolerances::default() };
    let traj = propagate(
        &hierarchy,
        &sys,
        &mut state,
        hp.t_final,
        hp.n_samples,
        &[assembly.system.side_op.clone()],
        &tol,
    )
    .map_err(|e| format!("propagation: {e}"))?;

    let n = traj.times.len();
    let p_p: Vec<f64> = traj.observables[0].iter().map(|v| v.re).collect();
    let p_r: Vec<f64> = (0..n).map(|k| traj.trace[k] - p_p[k]).collect();
    let trace = PopulationTrace::new(traj.times.clone(), p_r.clone(), p_p.clone(), equilibrium)
        .map_err(|e| format!("population trace: {e}"))?;
    let rate = extract_rate(
        &trace,
        hp.initial_condition,
        Convergence { truncation: trunc, rtol: hp.rtol, atol: hp.atol },
    )
    .map_err(|e| format!("rate extraction: {e}"))?;

    let mut k_inst: Vec<Option<f64>> = vec![None; n];
    for (j, &(_, k)) in rate.instantaneous_rate.iter().enumerate() {
        k_inst[j + 2] = Some(k);
    }

    let spectrum = match (&res.spectrum, want_outputs) {
        (Some(sc), true) => {
            let spec = crate::heom::dipole_spectrum(
                &hierarchy,
                &sys,
                &steady,
                &sc.omega,
                sc.window,
                sc.n_samples,
                &tol,
            )
            .map_err(|e| format!("spectrum: {e}"))?;
            Some(SpectrumData {
                omega_cm1: spec.omega.iter().map(|&w| crate::units::hartree_to_cm1(w)).collect(),
                intensity: spec.intensity,
            })
        }
        _ => None,
    };

    let k_pade = assembly
        .expansions
        .iter()
        .map(|e| e.certification.pade_order)
        .max()
        .unwrap_or(0);
    Ok(HeomRun {
        kappa: rate.kappa_fwd,
        k_pade,
        ado_count: hierarchy.n_ados(),
        trace: TraceData::Population { t_au: traj.times, p_r, p_p, k_inst },
        spectrum,
    })
}

fn heom_point(res: &Resolved, hp: &HeomParams, pt: &PointSpec) -> Result<PointPhysics, String> {
    let assembly = assemble_heom(res, hp, pt.cavity.as_ref())?;
    let run = heom_run(res, hp, hp.trunc, &assembly, true)?;

    let convergence = match hp.convergence_tolerance {
        None => None,
        Some(tolerance) => {
            let mut deeper = hp.trunc;
            deeper.l += 2;
            let refined = heom_run(res, hp, deeper, &assembly, false)?;
            let rel_change =
                (refined.kappa - run.kappa).abs() / run.kappa.abs().max(f64::MIN_POSITIVE);
            if rel_change > tolerance {
                return Err(format!(
                    "hierarchy not converged: deepening L = {} to {} moved kappa from {} \
                     to {} (relative change {rel_change:.3e} exceeds the declared \
                     tolerance {tolerance:.1e})",
                    hp.trunc.l,
                    deeper.l,
                    f12(run.kappa),
                    f12(refined.kappa),
                ));
            }
            Some(ConvergenceReport {
                l: hp.trunc.l,
                l_refined: deeper.l,
                kappa_au: run.kappa,
                kappa_refined_au: refined.kappa,
                rel_change,
                tolerance,
            })
        }
    };

    Ok(PointPhysics {
        kappa_au: run.kappa,
        meta: RowMeta {
            trunc_l: Some(hp.trunc.l),
            gamma_trunc: match hp.trunc.strategy {
                crate::heom::TruncationStrategy::Modified => Some(hp.trunc.gamma_trunc),
                _ => None,
            },
            k_pade: Some(run.k_pade),
            ado_count: Some(run.ado_count),
            n_traj: None,
        },
        trace: Some(run.trace),
        spectrum: run.spectrum,
        convergence,
    })
}

// ---- classical ----

fn classical_point(
    res: &Resolved,
    cp: &ClassicalParams,
    pt: &PointSpec,
) -> Result<PointPhysics, String> {
    let solvent = DebyeBath::new(res.solvent.lambda, res.solvent.gamma, BathLabel::Solvent)
        .map_err(|e| e.to_string())?;
    let cavity = match &pt.cavity {
        None => None,
        Some(c) => {
            let loss = match c.tau_c_au() {
                None => None,
                Some(tau) => Some(
                    classical::loss_kernel_for_lifetime(tau, res.loss_gamma)
                        .map_err(|e| e.to_string())?,
                ),
            };
            Some(ClassicalCavity { omega_c: c.omega_c_au(), eta_c: c.eta_c, loss })
        }
    };
    let gle = GleConfig {
        potential: Potential::DoubleWell(res.potential),
        solvent,
        cavity,
        dt: cp.dt,
        t_final: cp.t_final,
        n_traj: cp.n_traj,
        temperature: res.temperature_k,
        seed: res.seed,
        dividing_surface: 0.0,
    };
    let flux = classical::transmission_coefficient(&gle).map_err(|e| e.to_string())?;
    let plateau = flux.plateau.as_ref().ok_or_else(|| {
        "flux-side correlation has no plateau inside the horizon; extend \
         method_params.t_final_fs"
            .to_string()
    })?;
    let tst = classical::tst_rate(&gle.potential, res.beta, gle.dividing_surface)
        .map_err(|e| e.to_string())?;
    Ok(PointPhysics {
        kappa_au: plateau.kappa * tst,
        meta: RowMeta {
            trunc_l: None,
            gamma_trunc: None,
            k_pade: None,
            ado_count: None,
            n_traj: Some(flux.n_traj_used),
        },
        trace: Some(TraceData::FluxSide {
            t_au: flux.times,
            kappa: flux.kappa_t,
            se: flux.standard_error,
        }),
        spectrum: None,
        convergence: None,
    })
}

// ---- grote-hynes ----

/// A lossy cavity mode adds memory friction on the reaction coordinate:
/// eliminating the harmonic photon coordinate (itself damped by the
/// loss kernel zl) from the linearized equations of motion gives
///   eta_cav(s) = 2 eta_c^2 omega_c (s + zl(s)) / (s^2 + zl(s) s + omega_c^2),
/// which vanishes at s -> 0 for a lossless cavity (conservative mode)
/// and carries a static part 2 eta_c^2 omega_c zl(0) / omega_c^2 when
/// loss is on.
fn grote_hynes_point(res: &Resolved, pt: &PointSpec) -> Result<PointPhysics, String> {
    let s = res.solvent;
    let cav = pt.cavity;
    let loss_gamma = res.loss_gamma;
    let loss_lambda = match &pt.cavity {
        Some(c) => match res.loss_reorganization(c) {
            Some(l) => Some(l.map_err(|e| e.to_string())?),
            None => None,
        },
        None => None,
    };
    let eta_hat = move |x: f64| {
        let mut v = 2.0 * s.lambda / (x + s.gamma);
        if let Some(c) = cav {
            let wc = c.omega_c_au();
            let zl = match loss_lambda {
                Some(ll) => 2.0 * ll / (x + loss_gamma),
                None => 0.0,
            };
            v += 2.0 * c.eta_c * c.eta_c * wc * (x + zl) / (x * x + zl * x + wc * wc);
        }
        v
    };
    let gh = classical::grote_hynes(res.potential.omega_b, eta_hat).map_err(|e| e.to_string())?;
    let tst = classical::tst_rate(&Potential::DoubleWell(res.potential), res.beta, 0.0)
        .map_err(|e| e.to_string())?;
    Ok(PointPhysics {
        kappa_au: gh.kappa * tst,
        meta: RowMeta {
            trunc_l: None,
            gamma_trunc: None,
            k_pade: None,
            ado_count: None,
            n_traj: None,
        },
        trace: None,
        spectrum: None,
        convergence: None,
    })
}
