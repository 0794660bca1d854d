//! Declarative experiment files and their resolution to atomic units.
//!
//! One JSON document describes one experiment: the potential, the
//! dissipative environment, an optional cavity sweep, a method, and the
//! output layout. Field names carry their unit (`_cm1`, `_fs`, `_k`,
//! `_au`); the conversion to hartree atomic units happens here, once,
//! and everything past [`ExperimentConfig::resolve`] speaks au only.
//! `validate` echoes the resolved parameter set back (including derived
//! quantities such as the solvent reorganization energy and the loss
//! reorganization implied by a cavity lifetime) so a config can be
//! audited against published parameter tables without running anything.

mod run;

pub use run::{
    run_experiment, validate_config, ConvergenceReport, Manifest, PointRecord, ResultRow,
    RunOptions, RunSummary, MANIFEST_SCHEMA, RESULTS_SCHEMA,
};

use crate::baths::reorganization_from_lifetime;
use crate::error::CliError;
use crate::heom::TruncationSpec;
use crate::model::{BistablePotential, CouplingTarget, GridSpec, SpectatorSpec};
use crate::rates::InitialCondition;
use crate::units::{beta_from_kelvin, cm1_to_hartree, fs_to_au};
use serde::{Deserialize, Serialize};
use std::fmt;

/// The solvent kernel rate every named preset uses, cm^-1.
pub const PRESET_GAMMA_CM1: f64 = 200.0;

fn bad(msg: String) -> CliError {
    CliError::Validation(msg)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub environment: EnvironmentConfig,
    pub temperature_k: f64,
    #[serde(default)]
    pub cavity: Option<CavitySweepConfig>,
    pub method: Method,
    #[serde(default)]
    pub method_params: MethodParams,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Heom,
    ClassicalGle,
    GroteHynes,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Heom => "heom",
            Method::ClassicalGle => "classical_gle",
            Method::GroteHynes => "grote_hynes",
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub omega_b_cm1: f64,
    pub barrier_height_cm1: f64,
    /// Cubic tilt coefficient, hartree per bohr^3. Zero keeps the well
    /// symmetric.
    #[serde(default)]
    pub cubic_au: f64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub spectator: Option<SpectatorConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    /// Half width of the coordinate grid; omitted means three well
    /// distances, which covers every thermally relevant state.
    #[serde(default)]
    pub extent_au: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectatorConfig {
    pub omega_q_cm1: f64,
    pub c_q_au: f64,
    pub n_q: usize,
}

/// Exactly one of `preset` and `solvent` must be given. `secondary`
/// damps the spectator mode and therefore requires one.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub solvent: Option<SolventConfig>,
    #[serde(default)]
    pub secondary: Option<SecondaryConfig>,
}

/// Solvent friction on the reaction coordinate. The strength is given
/// either as the dimensionless Markovian friction eta_s / omega_b or as
/// the reorganization energy directly; exactly one of the two.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolventConfig {
    pub gamma_s_cm1: f64,
    #[serde(default)]
    pub eta_s_over_omega_b: Option<f64>,
    #[serde(default)]
    pub lambda_s_au: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondaryConfig {
    pub gamma_q_cm1: f64,
    pub lambda_q_au: f64,
}

/// Cavity sweep: the cartesian product of the three axes, each sorted
/// ascending, plus one paired cavity-free reference run when
/// `include_cavity_free` is on (the default). No `tau_c_fs` axis means
/// a lossless cavity.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySweepConfig {
    pub omega_c_cm1: AxisSpec,
    pub eta_c: AxisSpec,
    #[serde(default)]
    pub tau_c_fs: Option<AxisSpec>,
    /// Kernel rate of the loss bath; a free choice at fixed lifetime.
    #[serde(default = "default_loss_gamma")]
    pub loss_gamma_cm1: f64,
    #[serde(default)]
    pub couples_to: CouplesTo,
    #[serde(default = "default_true")]
    pub include_cavity_free: bool,
}

fn default_loss_gamma() -> f64 {
    1000.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplesTo {
    #[default]
    ReactionCoordinate,
    SpectatorMode,
}

/// One sweep axis: a single value, an explicit list, or an inclusive
/// linear range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    One(f64),
    List(Vec<f64>),
    Range { start: f64, stop: f64, n: usize },
}

impl AxisSpec {
    /// Expand to concrete points, sorted ascending. Empty axes are a
    /// config error, not an empty sweep.
    pub fn points(&self, field: &str) -> Result<Vec<f64>, CliError> {
        let mut v = match self {
            AxisSpec::One(x) => vec![*x],
            AxisSpec::List(xs) => {
                if xs.is_empty() {
                    return Err(bad(format!("{field} must list at least one value")));
                }
                xs.clone()
            }
            AxisSpec::Range { start, stop, n } => {
                if *n < 2 {
                    return Err(bad(format!(
                        "{field}: a range needs n >= 2 (use a single value otherwise)"
                    )));
                }
                if !(stop > start) {
                    return Err(bad(format!(
                        "{field}: range stop {stop} must exceed start {start}"
                    )));
                }
                let step = (stop - start) / (*n as f64 - 1.0);
                (0..*n).map(|k| start + step * k as f64).collect()
            }
        };
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(bad(format!("{field} contains a non-finite value {x}")));
        }
        v.sort_by(f64::total_cmp);
        Ok(v)
    }
}

/// One bag of knobs for all three methods; resolution checks that only
/// the fields the chosen method reads are present, so a config cannot
/// silently carry dead parameters.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    // hierarchy (heom)
    #[serde(default)]
    pub truncation: Option<TruncationConfig>,
    #[serde(default)]
    pub pade: Option<PadeConfig>,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub n_states: Option<usize>,
    #[serde(default)]
    pub n_fock: Option<usize>,
    #[serde(default)]
    pub initial_condition: Option<InitialCondition>,
    #[serde(default)]
    pub convergence_check: Option<ConvergenceCheckConfig>,
    // trajectory ensemble (classical_gle)
    #[serde(default)]
    pub dt_au: Option<f64>,
    #[serde(default)]
    pub n_traj: Option<usize>,
    // propagation horizon (heom and classical_gle)
    #[serde(default)]
    pub t_final_fs: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    #[serde(default)]
    pub strategy: TruncationStrategyConfig,
    pub l: usize,
    #[serde(default = "default_gamma_trunc")]
    pub gamma_trunc: f64,
}

fn default_gamma_trunc() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationStrategyConfig {
    #[default]
    Excitation,
    DecayRate,
    Modified,
}

/// Pade order for the Bose pole expansion: pinned, or escalated until
/// the certified reconstruction error reaches `tol`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum PadeConfig {
    Fixed { k: usize },
    Auto { tol: f64, max_k: usize },
}

/// Re-run each point with the hierarchy deepened by two levels and
/// reject the result when the rate moves by more than `tolerance`
/// (relative).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceCheckConfig {
    pub tolerance: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; the `--out` flag overrides it.
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub results_name: Option<String>,
    /// Per-point sidecar CSVs (population or flux-side traces).
    #[serde(default = "default_true")]
    pub traces: bool,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, results_name: None, traces: true, spectrum: None }
    }
}

/// Dipole absorption spectrum sidecar, computed from the stationary
/// state of each heom point.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub omega_min_cm1: f64,
    pub omega_max_cm1: f64,
    pub n: usize,
    #[serde(default = "default_spectrum_window")]
    pub window_fs: f64,
    #[serde(default = "default_spectrum_samples")]
    pub n_samples: usize,
}

fn default_spectrum_window() -> f64 {
    1000.0
}

fn default_spectrum_samples() -> usize {
    2048
}

/// Named solvent presets follow the published friction table: the form
/// is "main-text, eta_s = <x> omega_b", gamma_s = 200 cm^-1, and the
/// reorganization energy follows as eta_s gamma_s / 2.
pub fn parse_preset(name: &str) -> Result<SolventConfig, CliError> {
    let err = || {
        bad(format!(
            "environment.preset: unrecognized name {name:?}; presets follow the form \
             \"main-text, eta_s = <x> omega_b\" (gamma_s = {PRESET_GAMMA_CM1} cm-1), \
             with x in {{0.02, 0.1, 0.5, 1.5}} matching the published friction table"
        ))
    };
    let rest = name.trim().strip_prefix("main-text, eta_s = ").ok_or_else(err)?;
    let x: f64 = rest.strip_suffix(" omega_b").ok_or_else(err)?.trim().parse().map_err(|_| err())?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(bad(format!(
            "environment.preset: eta_s / omega_b must be positive and finite, got {x}"
        )));
    }
    Ok(SolventConfig {
        gamma_s_cm1: PRESET_GAMMA_CM1,
        eta_s_over_omega_b: Some(x),
        lambda_s_au: None,
    })
}

/// Solvent parameters in atomic units, with both strength conventions
/// carried so outputs can quote either.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolventResolved {
    pub lambda: f64,
    pub gamma: f64,
    pub eta: f64,
    pub eta_over_omega_b: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SecondaryResolved {
    pub lambda: f64,
    pub gamma: f64,
}

/// Cavity coordinates of one sweep point, kept in the declared units so
/// result rows echo the config values exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityCoord {
    pub omega_c_cm1: f64,
    pub eta_c: f64,
    pub tau_c_fs: Option<f64>,
}

impl CavityCoord {
    pub fn omega_c_au(&self) -> f64 {
        cm1_to_hartree(self.omega_c_cm1)
    }

    pub fn tau_c_au(&self) -> Option<f64> {
        self.tau_c_fs.map(fs_to_au)
    }
}

/// One scheduled run: `cavity: None` is the paired cavity-free
/// reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSpec {
    pub index: usize,
    pub cavity: Option<CavityCoord>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeomParams {
    pub trunc: TruncationSpec,
    pub pade: crate::baths::PadeOrder,
    pub rtol: f64,
    pub atol: f64,
    pub t_final: f64,
    pub n_samples: usize,
    pub n_states: usize,
    pub n_fock: usize,
    pub initial_condition: InitialCondition,
    pub convergence_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassicalParams {
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
}

#[derive(Debug, Clone)]
pub struct SpectrumResolved {
    /// Frequency grid, hartree.
    pub omega: Vec<f64>,
    pub window: f64,
    pub n_samples: usize,
}

/// Everything `run` needs, in atomic units, after every validation has
/// passed. The point list is final: index order is output order.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub temperature_k: f64,
    pub beta: f64,
    pub potential: BistablePotential,
    pub grid: GridSpec,
    pub spectator: Option<SpectatorSpec>,
    pub solvent: SolventResolved,
    pub secondary: Option<SecondaryResolved>,
    pub points: Vec<PointSpec>,
    pub loss_gamma: f64,
    pub couples_to: CouplingTarget,
    pub method: Method,
    pub heom: Option<HeomParams>,
    pub classical: Option<ClassicalParams>,
    pub spectrum: Option<SpectrumResolved>,
    pub traces: bool,
    pub out_dir: Option<String>,
    pub results_name: String,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let m = &self.model;
        for (field, v) in [
            ("model.omega_b_cm1", m.omega_b_cm1),
            ("model.barrier_height_cm1", m.barrier_height_cm1),
            ("temperature_k", self.temperature_k),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(bad(format!("{field} must be positive and finite, got {v}")));
            }
        }
        let potential = BistablePotential::new(
            cm1_to_hartree(m.omega_b_cm1),
            cm1_to_hartree(m.barrier_height_cm1),
            m.cubic_au,
        )
        .map_err(|e| bad(format!("model: {e}")))?;
        let beta = beta_from_kelvin(self.temperature_k);

        let grid = match m.grid {
            None => GridSpec::default(),
            Some(g) => {
                if g.n_points < 16 {
                    return Err(bad(format!(
                        "model.grid.n_points must be at least 16, got {}",
                        g.n_points
                    )));
                }
                if let Some(e) = g.extent_au {
                    if !(e > 0.0) || !e.is_finite() {
                        return Err(bad(format!(
                            "model.grid.extent_au must be positive and finite, got {e}"
                        )));
                    }
                }
                GridSpec { points: g.n_points, extent: g.extent_au.unwrap_or(f64::NAN) }
            }
        };

        let spectator = match m.spectator {
            None => None,
            Some(s) => {
                if !(s.omega_q_cm1 > 0.0) || !s.omega_q_cm1.is_finite() {
                    return Err(bad(format!(
                        "model.spectator.omega_q_cm1 must be positive, got {}",
                        s.omega_q_cm1
                    )));
                }
                if !s.c_q_au.is_finite() {
                    return Err(bad("model.spectator.c_q_au must be finite".into()));
                }
                if s.n_q == 0 {
                    return Err(bad("model.spectator.n_q must be at least 1".into()));
                }
                Some(SpectatorSpec {
                    omega_q: cm1_to_hartree(s.omega_q_cm1),
                    c_q: s.c_q_au,
                    n_q: s.n_q,
                })
            }
        };

        let solvent = self.resolve_solvent(&potential)?;
        let secondary = match self.environment.secondary {
            None => None,
            Some(s) => {
                if spectator.is_none() {
                    return Err(bad(
                        "environment.secondary damps the spectator mode; add model.spectator \
                         or drop it"
                            .into(),
                    ));
                }
                if !(s.gamma_q_cm1 > 0.0) || !(s.lambda_q_au > 0.0) {
                    return Err(bad(format!(
                        "environment.secondary needs positive gamma_q_cm1 and lambda_q_au, \
                         got {} and {}",
                        s.gamma_q_cm1, s.lambda_q_au
                    )));
                }
                Some(SecondaryResolved {
                    lambda: s.lambda_q_au,
                    gamma: cm1_to_hartree(s.gamma_q_cm1),
                })
            }
        };

        let (points, loss_gamma, couples_to) = self.resolve_sweep(spectator.is_some())?;
        let (heom, classical) = self.resolve_method(spectator.is_some())?;

        let spectrum = match (self.output.spectrum, self.method) {
            (None, _) => None,
            (Some(_), Method::ClassicalGle | Method::GroteHynes) => {
                return Err(bad(format!(
                    "output.spectrum requires method heom, not {}",
                    self.method
                )))
            }
            (Some(s), Method::Heom) => {
                if !(s.omega_max_cm1 > s.omega_min_cm1) || !(s.omega_min_cm1 > 0.0) {
                    return Err(bad(format!(
                        "output.spectrum needs 0 < omega_min_cm1 < omega_max_cm1, got \
                         [{}, {}]",
                        s.omega_min_cm1, s.omega_max_cm1
                    )));
                }
                if s.n < 2 || s.n_samples < 8 || !(s.window_fs > 0.0) {
                    return Err(bad(
                        "output.spectrum needs n >= 2, n_samples >= 8, window_fs > 0".into(),
                    ));
                }
                let lo = cm1_to_hartree(s.omega_min_cm1);
                let hi = cm1_to_hartree(s.omega_max_cm1);
                let step = (hi - lo) / (s.n as f64 - 1.0);
                Some(SpectrumResolved {
                    omega: (0..s.n).map(|k| lo + step * k as f64).collect(),
                    window: fs_to_au(s.window_fs),
                    n_samples: s.n_samples,
                })
            }
        };

        Ok(Resolved {
            temperature_k: self.temperature_k,
            beta,
            potential,
            grid,
            spectator,
            solvent,
            secondary,
            points,
            loss_gamma,
            couples_to,
            method: self.method,
            heom,
            classical,
            spectrum,
            traces: self.output.traces,
            out_dir: self.output.dir.clone(),
            results_name: self
                .output
                .results_name
                .clone()
                .unwrap_or_else(|| "results.csv".into()),
            seed: self.seed,
        })
    }

    fn resolve_solvent(&self, potential: &BistablePotential) -> Result<SolventResolved, CliError> {
        let sc = match (&self.environment.preset, self.environment.solvent) {
            (Some(_), Some(_)) => {
                return Err(bad(
                    "environment: give either preset or solvent, not both".into(),
                ))
            }
            (None, None) => {
                return Err(bad(
                    "environment: one of preset or solvent is required".into(),
                ))
            }
            (Some(name), None) => parse_preset(name)?,
            (None, Some(s)) => s,
        };
        if !(sc.gamma_s_cm1 > 0.0) || !sc.gamma_s_cm1.is_finite() {
            return Err(bad(format!(
                "environment.solvent.gamma_s_cm1 must be positive, got {}",
                sc.gamma_s_cm1
            )));
        }
        let gamma = cm1_to_hartree(sc.gamma_s_cm1);
        let (lambda, eta) = match (sc.eta_s_over_omega_b, sc.lambda_s_au) {
            (Some(_), Some(_)) => {
                return Err(bad(
                    "environment.solvent: give either eta_s_over_omega_b or lambda_s_au, \
                     not both"
                        .into(),
                ))
            }
            (None, None) => {
                return Err(bad(
                    "environment.solvent: one of eta_s_over_omega_b or lambda_s_au is \
                     required"
                        .into(),
                ))
            }
            (Some(x), None) => {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(bad(format!(
                        "environment.solvent.eta_s_over_omega_b must be positive, got {x}"
                    )));
                }
                let eta = x * potential.omega_b;
                (0.5 * gamma * eta, eta)
            }
            (None, Some(l)) => {
                if !(l > 0.0) || !l.is_finite() {
                    return Err(bad(format!(
                        "environment.solvent.lambda_s_au must be positive, got {l}"
                    )));
                }
                (l, 2.0 * l / gamma)
            }
        };
        Ok(SolventResolved {
            lambda,
            gamma,
            eta,
            eta_over_omega_b: eta / potential.omega_b,
        })
    }

    fn resolve_sweep(
        &self,
        has_spectator: bool,
    ) -> Result<(Vec<PointSpec>, f64, CouplingTarget), CliError> {
        let mut points = Vec::new();
        let mut loss_gamma = cm1_to_hartree(default_loss_gamma());
        let mut couples_to = CouplingTarget::ReactionCoordinate;
        if let Some(c) = &self.cavity {
            let omegas = c.omega_c_cm1.points("cavity.omega_c_cm1")?;
            let etas = c.eta_c.points("cavity.eta_c")?;
            let taus: Vec<Option<f64>> = match &c.tau_c_fs {
                None => vec![None],
                Some(ax) => ax.points("cavity.tau_c_fs")?.into_iter().map(Some).collect(),
            };
            for &w in &omegas {
                if !(w > 0.0) {
                    return Err(bad(format!(
                        "cavity.omega_c_cm1 values must be positive, got {w}"
                    )));
                }
            }
            for &e in &etas {
                if e < 0.0 {
                    return Err(bad(format!(
                        "cavity.eta_c values must be non-negative, got {e}"
                    )));
                }
            }
            for t in taus.iter().flatten() {
                if !(*t > 0.0) {
                    return Err(bad(format!(
                        "cavity.tau_c_fs values must be positive, got {t}"
                    )));
                }
            }
            if !(c.loss_gamma_cm1 > 0.0) || !c.loss_gamma_cm1.is_finite() {
                return Err(bad(format!(
                    "cavity.loss_gamma_cm1 must be positive, got {}",
                    c.loss_gamma_cm1
                )));
            }
            if c.couples_to == CouplesTo::SpectatorMode && !has_spectator {
                return Err(bad(
                    "cavity.couples_to = spectator_mode requires model.spectator".into(),
                ));
            }
            loss_gamma = cm1_to_hartree(c.loss_gamma_cm1);
            couples_to = match c.couples_to {
                CouplesTo::ReactionCoordinate => CouplingTarget::ReactionCoordinate,
                CouplesTo::SpectatorMode => CouplingTarget::SpectatorMode,
            };
            if c.include_cavity_free {
                points.push(PointSpec { index: 0, cavity: None });
            }
            for &w in &omegas {
                for &e in &etas {
                    for &t in &taus {
                        points.push(PointSpec {
                            index: points.len(),
                            cavity: Some(CavityCoord {
                                omega_c_cm1: w,
                                eta_c: e,
                                tau_c_fs: t,
                            }),
                        });
                    }
                }
            }
        } else {
            points.push(PointSpec { index: 0, cavity: None });
        }
        Ok((points, loss_gamma, couples_to))
    }

    fn resolve_method(
        &self,
        has_spectator: bool,
    ) -> Result<(Option<HeomParams>, Option<ClassicalParams>), CliError> {
        let p = &self.method_params;
        let forbid = |cond: bool, field: &str| -> Result<(), CliError> {
            if cond {
                Err(bad(format!(
                    "method_params.{field} does not apply to method {}",
                    self.method
                )))
            } else {
                Ok(())
            }
        };
        let t_final = |required: bool| -> Result<f64, CliError> {
            match p.t_final_fs {
                Some(t) if t > 0.0 && t.is_finite() => Ok(fs_to_au(t)),
                Some(t) => Err(bad(format!(
                    "method_params.t_final_fs must be positive and finite, got {t}"
                ))),
                None if required => Err(bad(format!(
                    "method_params.t_final_fs is required for method {}",
                    self.method
                ))),
                None => Ok(0.0),
            }
        };
        match self.method {
            Method::Heom => {
                forbid(p.dt_au.is_some(), "dt_au")?;
                forbid(p.n_traj.is_some(), "n_traj")?;
                let tc = p.truncation.ok_or_else(|| {
                    bad("method_params.truncation is required for method heom".into())
                })?;
                if tc.l == 0 {
                    return Err(bad("method_params.truncation.l must be at least 1".into()));
                }
                let trunc = match tc.strategy {
                    TruncationStrategyConfig::Excitation => TruncationSpec::excitation(tc.l),
                    TruncationStrategyConfig::DecayRate => TruncationSpec::decay_rate(tc.l),
                    TruncationStrategyConfig::Modified => {
                        TruncationSpec::modified(tc.l, tc.gamma_trunc)
                    }
                };
                trunc.validate().map_err(|e| bad(format!("method_params.truncation: {e}")))?;
                let pade = match p.pade {
                    None => crate::baths::PadeOrder::default(),
                    Some(PadeConfig::Fixed { k }) => crate::baths::PadeOrder::Fixed(k),
                    Some(PadeConfig::Auto { tol, max_k }) => {
                        if !(tol > 0.0) || max_k == 0 {
                            return Err(bad(
                                "method_params.pade needs tol > 0 and max_k >= 1".into(),
                            ));
                        }
                        crate::baths::PadeOrder::Auto { tol, max_k }
                    }
                };
                let rtol = p.rtol.unwrap_or(1e-8);
                let atol = p.atol.unwrap_or(1e-12);
                if !(rtol > 0.0) || !(atol > 0.0) {
                    return Err(bad(format!(
                        "method_params rtol and atol must be positive, got {rtol} and {atol}"
                    )));
                }
                let n_samples = p.n_samples.unwrap_or(400);
                if n_samples < 16 {
                    return Err(bad(format!(
                        "method_params.n_samples must be at least 16 for plateau detection, \
                         got {n_samples}"
                    )));
                }
                let n_states = p.n_states.unwrap_or(6);
                if n_states < 2 {
                    return Err(bad(format!(
                        "method_params.n_states must be at least 2, got {n_states}"
                    )));
                }
                let n_fock = p.n_fock.unwrap_or(4);
                if n_fock == 0 {
                    return Err(bad("method_params.n_fock must be at least 1".into()));
                }
                let convergence_tolerance = match p.convergence_check {
                    None => None,
                    Some(c) if c.tolerance > 0.0 => Some(c.tolerance),
                    Some(c) => {
                        return Err(bad(format!(
                            "method_params.convergence_check.tolerance must be positive, \
                             got {}",
                            c.tolerance
                        )))
                    }
                };
                Ok((
                    Some(HeomParams {
                        trunc,
                        pade,
                        rtol,
                        atol,
                        t_final: t_final(true)?,
                        n_samples,
                        n_states,
                        n_fock,
                        initial_condition: p
                            .initial_condition
                            .unwrap_or(InitialCondition::UncorrelatedThermal),
                        convergence_tolerance,
                    }),
                    None,
                ))
            }
            Method::ClassicalGle => {
                for (gone, name) in [
                    (p.truncation.is_some(), "truncation"),
                    (p.pade.is_some(), "pade"),
                    (p.rtol.is_some(), "rtol"),
                    (p.atol.is_some(), "atol"),
                    (p.n_samples.is_some(), "n_samples"),
                    (p.n_states.is_some(), "n_states"),
                    (p.n_fock.is_some(), "n_fock"),
                    (p.initial_condition.is_some(), "initial_condition"),
                    (p.convergence_check.is_some(), "convergence_check"),
                ] {
                    forbid(gone, name)?;
                }
                if has_spectator {
                    return Err(bad(
                        "model.spectator is not supported by method classical_gle; use heom \
                         or drop the spectator"
                            .into(),
                    ));
                }
                let n_traj = p.n_traj.ok_or_else(|| {
                    bad("method_params.n_traj is required for method classical_gle".into())
                })?;
                if n_traj < 2 {
                    return Err(bad(format!(
                        "method_params.n_traj must be at least 2, got {n_traj}"
                    )));
                }
                let dt = p.dt_au.unwrap_or(10.0);
                if !(dt > 0.0) || !dt.is_finite() {
                    return Err(bad(format!(
                        "method_params.dt_au must be positive and finite, got {dt}"
                    )));
                }
                Ok((
                    None,
                    Some(ClassicalParams { dt, t_final: t_final(true)?, n_traj }),
                ))
            }
            Method::GroteHynes => {
                for (gone, name) in [
                    (p.truncation.is_some(), "truncation"),
                    (p.pade.is_some(), "pade"),
                    (p.rtol.is_some(), "rtol"),
                    (p.atol.is_some(), "atol"),
                    (p.n_samples.is_some(), "n_samples"),
                    (p.n_states.is_some(), "n_states"),
                    (p.n_fock.is_some(), "n_fock"),
                    (p.initial_condition.is_some(), "initial_condition"),
                    (p.convergence_check.is_some(), "convergence_check"),
                    (p.dt_au.is_some(), "dt_au"),
                    (p.n_traj.is_some(), "n_traj"),
                    (p.t_final_fs.is_some(), "t_final_fs"),
                ] {
                    forbid(gone, name)?;
                }
                if has_spectator {
                    return Err(bad(
                        "model.spectator is not supported by method grote_hynes".into(),
                    ));
                }
                Ok((None, None))
            }
        }
    }
}

impl Resolved {
    /// Loss-bath reorganization implied by a cavity lifetime, in the
    /// convention of the method that will consume it: thermal energy
    /// decay of the quantum mode for heom, Markovian velocity damping
    /// of the classical oscillator otherwise.
    pub fn loss_reorganization(&self, c: &CavityCoord) -> Option<Result<f64, CliError>> {
        let tau = c.tau_c_au()?;
        Some(match self.method {
            Method::Heom => {
                reorganization_from_lifetime(tau, c.omega_c_au(), self.loss_gamma, self.beta)
                    .map_err(|e| bad(format!("cavity loss bath: {e}")))
            }
            Method::ClassicalGle | Method::GroteHynes => Ok(self.loss_gamma / (2.0 * tau)),
        })
    }

    /// The fully resolved parameter set as a JSON document, everything
    /// in atomic units plus the derived quantities worth auditing.
    pub fn echo(&self) -> Result<serde_json::Value, CliError> {
        let p = &self.potential;
        let quartic = p.omega_b.powi(4) / (16.0 * p.barrier_height);
        let cavity_points: Result<Vec<serde_json::Value>, CliError> = self
            .points
            .iter()
            .filter_map(|pt| pt.cavity.as_ref())
            .map(|c| {
                let lambda_loss = match self.loss_reorganization(c) {
                    None => serde_json::Value::Null,
                    Some(l) => serde_json::json!(l?),
                };
                Ok(serde_json::json!({
                    "omega_c": c.omega_c_au(),
                    "eta_c": c.eta_c,
                    "tau_c": c.tau_c_au(),
                    "lambda_loss": lambda_loss,
                    "loss_gamma": if c.tau_c_fs.is_some() {
                        serde_json::json!(self.loss_gamma)
                    } else {
                        serde_json::Value::Null
                    },
                }))
            })
            .collect();
        let method_params = match self.method {
            Method::Heom => {
                let h = self.heom.as_ref().expect("resolved heom params");
                serde_json::json!({
                    "truncation": h.trunc,
                    "pade": h.pade,
                    "rtol": h.rtol,
                    "atol": h.atol,
                    "t_final": h.t_final,
                    "n_samples": h.n_samples,
                    "n_states": h.n_states,
                    "n_fock": h.n_fock,
                    "initial_condition": h.initial_condition,
                    "convergence_tolerance": h.convergence_tolerance,
                })
            }
            Method::ClassicalGle => {
                let c = self.classical.as_ref().expect("resolved classical params");
                serde_json::json!({
                    "dt": c.dt,
                    "t_final": c.t_final,
                    "n_traj": c.n_traj,
                    "dividing_surface": 0.0,
                })
            }
            Method::GroteHynes => serde_json::json!({}),
        };
        Ok(serde_json::json!({
            "schema": "cavkin resolved config, atomic units",
            "temperature_k": self.temperature_k,
            "beta": self.beta,
            "potential": {
                "omega_b": p.omega_b,
                "barrier_height": p.barrier_height,
                "cubic": p.cubic,
                "quartic": quartic,
                "well_position": p.well_position(),
            },
            "solvent": self.solvent,
            "secondary": self.secondary,
            "spectator": self.spectator.as_ref().map(|s| serde_json::json!({
                "omega_q": s.omega_q, "c_q": s.c_q, "n_q": s.n_q,
            })),
            "cavity_points": cavity_points?,
            "includes_cavity_free_run": self.points.iter().any(|pt| pt.cavity.is_none()),
            "n_points": self.points.len(),
            "method": self.method.to_string(),
            "method_params": method_params,
            "seed": self.seed,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn minimal(method: &str, extra_params: &str) -> String {
        format!(
            r#"{{
                "model": {{"omega_b_cm1": 1000.0, "barrier_height_cm1": 2250.0}},
                "environment": {{"preset": "main-text, eta_s = 0.1 omega_b"}},
                "temperature_k": 300.0,
                "method": "{method}",
                "method_params": {{{extra_params}}}
            }}"#
        )
    }

    fn parse(s: &str) -> ExperimentConfig {
        serde_json::from_str(s).expect("config parses")
    }

    #[test]
    fn preset_table_reproduces_the_published_reorganization_energies() {
        // lambda_s = eta_s gamma_s / 2 at gamma_s = 200 cm-1, quoted to
        // three significant figures in the source table
        for (x, lambda) in [(0.02, 4.15e-8), (0.1, 2.08e-7), (0.5, 1.04e-6), (1.5, 3.11e-6)] {
            let cfg =
                parse(&minimal("grote_hynes", "").replace("0.1 omega_b", &format!("{x} omega_b")));
            let res = cfg.resolve().unwrap();
            assert_relative_eq!(res.solvent.lambda, lambda, max_relative = 5e-3);
            assert_relative_eq!(res.solvent.eta_over_omega_b, x, max_relative = 1e-12);
        }
    }

    #[test]
    fn unknown_presets_and_malformed_names_are_rejected() {
        for name in ["side-text, eta_s = 0.1 omega_b", "main-text, eta_s = x omega_b", ""] {
            let err = parse_preset(name).unwrap_err();
            assert!(err.to_string().contains("preset"), "{err}");
        }
        let ok = parse_preset("main-text, eta_s = 5 omega_b").unwrap();
        assert_eq!(ok.eta_s_over_omega_b, Some(5.0));
    }

    #[test]
    fn explicit_solvent_strength_conventions_are_exclusive_and_inverse() {
        let cfg = parse(&minimal("grote_hynes", "").replace(
            r#""preset": "main-text, eta_s = 0.1 omega_b""#,
            r#""solvent": {"gamma_s_cm1": 200.0, "lambda_s_au": 2.076e-7}"#,
        ));
        let res = cfg.resolve().unwrap();
        assert_relative_eq!(res.solvent.eta_over_omega_b, 0.1, max_relative = 1e-3);

        let both = parse(&minimal("grote_hynes", "").replace(
            r#""preset": "main-text, eta_s = 0.1 omega_b""#,
            r#""solvent": {"gamma_s_cm1": 200.0, "lambda_s_au": 2.076e-7,
                          "eta_s_over_omega_b": 0.1}"#,
        ));
        let err = both.resolve().unwrap_err();
        assert!(err.to_string().contains("not both"), "{err}");
    }

    #[test]
    fn sweep_axes_expand_sorted_and_reject_empty() {
        assert_eq!(
            AxisSpec::List(vec![3.0, 1.0, 2.0]).points("f").unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(AxisSpec::One(7.0).points("f").unwrap(), vec![7.0]);
        let r = AxisSpec::Range { start: 0.0, stop: 1.0, n: 5 }.points("f").unwrap();
        assert_eq!(r, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let err = AxisSpec::List(vec![]).points("cavity.omega_c_cm1").unwrap_err();
        assert!(err.to_string().contains("cavity.omega_c_cm1"), "{err}");
    }

    #[test]
    fn cavity_sweep_is_a_sorted_cartesian_product_with_a_reference_point() {
        let mut s = minimal("grote_hynes", "");
        s = s.replace(
            r#""method": "grote_hynes""#,
            r#""cavity": {"omega_c_cm1": [1200.0, 1000.0], "eta_c": 0.00125,
                          "tau_c_fs": [500.0, 1000.0]},
               "method": "grote_hynes""#,
        );
        let res = parse(&s).resolve().unwrap();
        assert_eq!(res.points.len(), 5);
        assert_eq!(res.points[0].cavity, None);
        let coords: Vec<(f64, Option<f64>)> = res.points[1..]
            .iter()
            .map(|p| {
                let c = p.cavity.unwrap();
                (c.omega_c_cm1, c.tau_c_fs)
            })
            .collect();
        assert_eq!(
            coords,
            vec![
                (1000.0, Some(500.0)),
                (1000.0, Some(1000.0)),
                (1200.0, Some(500.0)),
                (1200.0, Some(1000.0)),
            ]
        );
        for (i, p) in res.points.iter().enumerate() {
            assert_eq!(p.index, i);
        }
    }

    #[test]
    fn method_parameter_cross_checks_are_field_precise() {
        let err = parse(&minimal("heom", r#""n_traj": 100"#)).resolve().unwrap_err();
        assert!(err.to_string().contains("method_params.n_traj"), "{err}");

        let err = parse(&minimal("heom", "")).resolve().unwrap_err();
        assert!(err.to_string().contains("method_params.truncation"), "{err}");

        let err = parse(&minimal("classical_gle", r#""n_traj": 100"#)).resolve().unwrap_err();
        assert!(err.to_string().contains("method_params.t_final_fs"), "{err}");

        let err = parse(&minimal(
            "grote_hynes",
            r#""truncation": {"l": 3}"#,
        ))
        .resolve()
        .unwrap_err();
        assert!(err.to_string().contains("method_params.truncation"), "{err}");

        parse(&minimal("grote_hynes", "")).resolve().unwrap();
    }

    #[test]
    fn resolved_echo_converts_to_atomic_units_and_derives_the_loss_strength() {
        let mut s = minimal("heom", r#""truncation": {"l": 3}, "t_final_fs": 100.0"#);
        s = s.replace(
            r#""method": "heom""#,
            r#""cavity": {"omega_c_cm1": 1200.0, "eta_c": 0.00125, "tau_c_fs": 1000.0},
               "method": "heom""#,
        );
        let res = parse(&s).resolve().unwrap();
        let echo = res.echo().unwrap();
        // cm-1 -> hartree spot check against the CODATA factor
        assert_relative_eq!(
            echo["potential"]["omega_b"].as_f64().unwrap(),
            4.5563e-3,
            max_relative = 1e-4
        );
        // the derived loss reorganization round-trips to the lifetime
        let c = res.points[1].cavity.unwrap();
        let lam = echo["cavity_points"][0]["lambda_loss"].as_f64().unwrap();
        let tau = crate::baths::lifetime_from_reorganization(
            lam,
            c.omega_c_au(),
            res.loss_gamma,
            res.beta,
        )
        .unwrap();
        assert_relative_eq!(tau, c.tau_c_au().unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn classical_loss_convention_also_round_trips_the_lifetime() {
        let mut s = minimal(
            "classical_gle",
            r#""n_traj": 100, "t_final_fs": 10.0, "dt_au": 5.0"#,
        );
        s = s.replace(
            r#""method": "classical_gle""#,
            r#""cavity": {"omega_c_cm1": 1200.0, "eta_c": 0.00125, "tau_c_fs": 1000.0},
               "method": "classical_gle""#,
        );
        let res = parse(&s).resolve().unwrap();
        let c = res.points[1].cavity.unwrap();
        let lam = res.loss_reorganization(&c).unwrap().unwrap();
        // Markovian kernel friction 2 lambda / gamma is the energy decay
        // rate 1 / tau_c
        assert_relative_eq!(
            2.0 * lam / res.loss_gamma,
            1.0 / c.tau_c_au().unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn unknown_config_fields_are_parse_errors() {
        let with_unknown = r#"{
            "model": {"omega_b_cm1": 1000.0, "barrier_height_cm1": 2250.0,
                      "omega_typo_cm1": 1.0},
            "environment": {"preset": "main-text, eta_s = 0.1 omega_b"},
            "temperature_k": 300.0,
            "method": "grote_hynes"
        }"#;
        let err = serde_json::from_str::<ExperimentConfig>(with_unknown).unwrap_err();
        assert!(err.to_string().contains("omega_typo_cm1"), "{err}");
    }
}
