//! Classical cross-checks for the quantum rate machinery: generalized
//! Langevin trajectories, flux-side transmission coefficients, and
//! Grote-Hynes theory.
//!
//! The solvent acts on the reaction coordinate through the exponential
//! friction kernel zeta(t) = 2 Lambda exp(-Gamma t), which is the
//! classical image of the Debye spectral density used on the quantum
//! side: (2/pi) Int J(w) cos(wt)/w dw for J(w) = 2 Lambda Gamma w /
//! (w^2 + Gamma^2). Its time integral, the Markovian friction, is
//! eta = 2 Lambda / Gamma. Note the units: for a mass-weighted
//! coordinate the kernel carries frequency squared, so Lambda here is
//! not an energy even though the same struct field doubles as a
//! reorganization energy for the quantum baths.
//!
//! An optional cavity mode adds one harmonic degree of freedom coupled
//! to the coordinate through the completed square
//! (1/2) w_c^2 (q_c + sqrt(2/w_c) eta_c R)^2, and photon loss enters as
//! a second friction kernel acting on the cavity momentum.

mod gle;

pub use gle::{
    mechanical_energy, propagate_ensemble, propagate_trajectory, sample_dividing_surface,
    transmission_coefficient, EnsembleSummary, FluxSideResult, PhasePoint, PlateauEstimate,
    SingleTrajectory,
};

use crate::baths::{BathLabel, DebyeBath};
use crate::baths::quad;
use crate::error::ClassicalError;
use crate::model::BistablePotential;
use crate::units;

/// Potential energy curve for the reaction coordinate. The double well
/// is the production surface; the free and harmonic forms exist for
/// validation work (a free particle never recrosses the dividing
/// surface, a harmonic trap pins integrator conservation laws).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Potential {
    DoubleWell(BistablePotential),
    Harmonic { omega: f64 },
    Free,
}

impl Potential {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Potential::DoubleWell(w) => w.eval(r),
            Potential::Harmonic { omega } => 0.5 * omega * omega * r * r,
            Potential::Free => 0.0,
        }
    }

    /// Force -dV/dR.
    pub fn force(&self, r: f64) -> f64 {
        match *self {
            Potential::DoubleWell(w) => {
                let quart = w.omega_b.powi(4) / (16.0 * w.barrier_height);
                -4.0 * quart * r.powi(3) + w.omega_b * w.omega_b * r + 3.0 * w.cubic * r * r
            }
            Potential::Harmonic { omega } => -omega * omega * r,
            Potential::Free => 0.0,
        }
    }

    fn validate(&self) -> Result<(), ClassicalError> {
        let ok = match *self {
            Potential::DoubleWell(w) => {
                w.omega_b > 0.0
                    && w.omega_b.is_finite()
                    && w.barrier_height > 0.0
                    && w.barrier_height.is_finite()
                    && w.cubic.is_finite()
            }
            Potential::Harmonic { omega } => omega > 0.0 && omega.is_finite(),
            Potential::Free => true,
        };
        if ok {
            Ok(())
        } else {
            Err(ClassicalError::BadParameter(format!(
                "potential parameters out of range: {self:?}"
            )))
        }
    }
}

/// Cavity mode as the trajectories see it: frequency, dimensionless
/// coupling, and an optional loss kernel on the photon momentum. The
/// loss kernel reuses the Debye parameterization; which microscopic
/// parameters it should inherit is ambiguous in the folded-bath
/// construction, so both are exposed here instead of being derived.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ClassicalCavity {
    pub omega_c: f64,
    pub eta_c: f64,
    #[serde(default)]
    pub loss: Option<DebyeBath>,
}

/// Loss kernel 2 lambda exp(-gamma t) whose Markovian limit damps the
/// cavity energy at 1/tau_c, i.e. lambda = gamma / (2 tau_c). `gamma`
/// sets the kernel memory and is a free choice at fixed lifetime.
pub fn loss_kernel_for_lifetime(tau_c: f64, gamma: f64) -> Result<DebyeBath, ClassicalError> {
    if !(tau_c > 0.0) || !tau_c.is_finite() || !(gamma > 0.0) || !gamma.is_finite() {
        return Err(ClassicalError::BadParameter(format!(
            "lifetime and kernel rate must be positive and finite, got tau_c = {tau_c}, \
             gamma = {gamma}"
        )));
    }
    Ok(DebyeBath {
        lambda_reorg: gamma / (2.0 * tau_c),
        gamma,
        label: BathLabel::Loss,
    })
}

/// Ensemble specification for the Langevin runs. Temperature is in
/// kelvin; everything else is in atomic units. `dividing_surface` is
/// the surface both the sampler and the side operator use; 0 puts it
/// on the barrier top of the symmetric well.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GleConfig {
    pub potential: Potential,
    pub solvent: DebyeBath,
    #[serde(default)]
    pub cavity: Option<ClassicalCavity>,
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default)]
    pub dividing_surface: f64,
}

impl GleConfig {
    pub fn validate(&self) -> Result<(), ClassicalError> {
        self.potential.validate()?;
        let bad = |msg: String| Err(ClassicalError::BadParameter(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("time step must be positive and finite, got {}", self.dt));
        }
        if !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return bad(format!(
                "horizon {} must cover at least one step of {}",
                self.t_final, self.dt
            ));
        }
        if self.n_traj == 0 {
            return bad("at least one trajectory is required".into());
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !self.dividing_surface.is_finite() {
            return bad("dividing surface must be finite".into());
        }
        // zero strength is allowed (kernel off); DebyeBath::new is stricter
        // because the quantum expansion needs a genuine pole
        check_kernel("solvent", &self.solvent)?;
        if let Some(cav) = &self.cavity {
            if !(cav.omega_c > 0.0) || !cav.omega_c.is_finite() {
                return bad(format!("cavity frequency must be positive, got {}", cav.omega_c));
            }
            if !(cav.eta_c >= 0.0) || !cav.eta_c.is_finite() {
                return bad(format!("cavity coupling must be >= 0, got {}", cav.eta_c));
            }
            if let Some(loss) = &cav.loss {
                check_kernel("cavity loss", loss)?;
            }
        }
        Ok(())
    }

    pub(crate) fn beta(&self) -> f64 {
        units::beta_from_kelvin(self.temperature)
    }
}

fn check_kernel(which: &str, bath: &DebyeBath) -> Result<(), ClassicalError> {
    if !(bath.lambda_reorg >= 0.0)
        || !bath.lambda_reorg.is_finite()
        || !(bath.gamma > 0.0)
        || !bath.gamma.is_finite()
    {
        return Err(ClassicalError::BadParameter(format!(
            "{which} kernel needs lambda >= 0 and gamma > 0, got lambda = {}, gamma = {}",
            bath.lambda_reorg, bath.gamma
        )));
    }
    Ok(())
}

/// Friction kernel 2 Lambda exp(-Gamma t) at time t.
pub fn friction_kernel(t: f64, bath: &DebyeBath) -> f64 {
    2.0 * bath.lambda_reorg * (-bath.gamma * t).exp()
}

/// Time integral of the kernel: the friction a memoryless solvent with
/// the same zero-frequency response would exert.
pub fn markovian_friction(bath: &DebyeBath) -> f64 {
    2.0 * bath.lambda_reorg / bath.gamma
}

/// Reactive frequency at the barrier and the transmission factor it
/// implies.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GroteHynes {
    pub reactive_frequency: f64,
    pub kappa: f64,
}

/// Solves the Grote-Hynes self-consistency lambda (lambda +
/// eta_hat(lambda)) = omega_b^2 for the reactive frequency, where
/// eta_hat is the Laplace transform of the friction kernel at the
/// barrier. The left side vanishes at lambda = 0 and exceeds omega_b^2
/// at lambda = omega_b whenever eta_hat >= 0, so a root is bracketed in
/// (0, omega_b] and bisection cannot escape it. A kernel whose
/// transform blows up faster than 1/lambda near zero quenches the
/// crossing entirely; that shows up as a sign test failure and is
/// reported instead of iterated on.
pub fn grote_hynes(
    omega_b: f64,
    eta_hat: impl Fn(f64) -> f64,
) -> Result<GroteHynes, ClassicalError> {
    if !(omega_b > 0.0) || !omega_b.is_finite() {
        return Err(ClassicalError::BadParameter(format!(
            "barrier frequency must be positive, got {omega_b}"
        )));
    }
    let gap = |l: f64| l * (l + eta_hat(l)) - omega_b * omega_b;
    let mut lo = 1e-12 * omega_b;
    let mut hi = omega_b;
    let g_lo = gap(lo);
    let g_hi = gap(hi);
    if !g_lo.is_finite() || !g_hi.is_finite() {
        return Err(ClassicalError::BadParameter(
            "friction transform is not finite on (0, omega_b]".into(),
        ));
    }
    if g_lo >= 0.0 {
        return Err(ClassicalError::NoReactiveRoot(format!(
            "lambda (lambda + eta_hat) = {:.3e} already exceeds omega_b^2 = {:.3e} at \
             lambda -> 0; the kernel is too stiff for a finite reactive frequency",
            g_lo + omega_b * omega_b,
            omega_b * omega_b
        )));
    }
    if g_hi < 0.0 {
        return Err(ClassicalError::NoReactiveRoot(
            "eta_hat is negative at the barrier frequency; not a friction kernel".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = gap(mid);
        if !g_mid.is_finite() {
            return Err(ClassicalError::BadParameter(format!(
                "friction transform not finite at lambda = {mid:.6e}"
            )));
        }
        if g_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * omega_b {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    Ok(GroteHynes { reactive_frequency: lambda, kappa: lambda / omega_b })
}

/// Grote-Hynes factor for the exponential kernel, whose transform is
/// 2 Lambda / (s + Gamma).
pub fn grote_hynes_debye(omega_b: f64, bath: &DebyeBath) -> Result<GroteHynes, ClassicalError> {
    check_kernel("barrier", bath)?;
    let (lam, gam) = (bath.lambda_reorg, bath.gamma);
    grote_hynes(omega_b, move |s| 2.0 * lam / (s + gam))
}

/// Transition-state-theory rate for the bare potential: the thermal
/// one-way flux through the dividing surface over the reactant
/// configuration integral, both by quadrature. Transmission factors
/// multiply this; it is reported separately so the dynamical correction
/// stays dimensionless.
pub fn tst_rate(
    potential: &Potential,
    beta: f64,
    dividing_surface: f64,
) -> Result<f64, ClassicalError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(ClassicalError::BadParameter(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    let Potential::DoubleWell(well) = potential else {
        return Err(ClassicalError::BadParameter(
            "the TST flux needs a barrier; only the double well has one".into(),
        ));
    };
    potential.validate()?;
    let top = dividing_surface;
    let reach = 4.0 * well.well_position() + 1.0;
    let a = top - reach;
    // floor the integrand at the deepest point so the quadrature works
    // near 1 instead of underflowing
    let mut v_min = f64::INFINITY;
    for i in 0..=4000 {
        let r = a + (top - a) * i as f64 / 4000.0;
        v_min = v_min.min(potential.eval(r));
    }
    let f = |r: f64| (-beta * (potential.eval(r) - v_min)).exp();
    let (z, err) = quad::integrate(&f, a, top, 1e-11);
    if !(z > 0.0) || err > 1e-8 * z {
        return Err(ClassicalError::BadParameter(format!(
            "reactant configuration integral did not converge: Z = {z:.3e}, \
             estimate {err:.1e}"
        )));
    }
    let barrier = potential.eval(top) - v_min;
    Ok((-beta * barrier).exp() / ((2.0 * std::f64::consts::PI * beta).sqrt() * z))
}
