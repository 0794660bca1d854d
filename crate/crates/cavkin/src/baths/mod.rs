//! Bath spectral densities and their exponential correlation expansions.
//!
//! Everything dissipative in this crate funnels through one pipeline:
//! a spectral density (a bare Debye form, or the exact rational density
//! of a folded harmonic network) is turned into a sum of decaying
//! exponentials C(t) = sum_k c_k exp(-nu_k t) by residue calculus, with
//! the Bose function handled through its Pade pole expansion. Every
//! expansion ships with a measured certificate: the reconstruction is
//! compared against adaptive quadrature of the defining integral and the
//! achieved sup-norm error is stored alongside the modes.

mod network;
mod pade;
pub(crate) mod quad;
mod rational;

pub use network::{EffectiveDensity, HarmonicNetwork, NetworkNode, NetworkParent};
pub use pade::pade_bose;
pub use quad::{correlation_oracle, fourier_pair, integrate, wynn_epsilon};

use crate::error::BathError;
use num_complex::Complex64 as C64;
use rational::Rational;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Role of a Debye bath in the model: broad solvent friction on the
/// reaction coordinate, the secondary bath damping a spectator mode, or
/// the loss continuum damping the cavity mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathLabel {
    Solvent,
    Secondary,
    Loss,
}

impl fmt::Display for BathLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BathLabel::Solvent => "solvent",
            BathLabel::Secondary => "secondary",
            BathLabel::Loss => "loss",
        })
    }
}

/// Overdamped (Debye) spectral density J(w) = 2 lambda gamma w / (w^2 + gamma^2),
/// peaking at w = gamma with value lambda.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebyeBath {
    /// Reorganization energy (1/pi) Int J(w)/w dw.
    pub lambda_reorg: f64,
    /// Cutoff frequency.
    pub gamma: f64,
    pub label: BathLabel,
}

impl DebyeBath {
    pub fn new(lambda_reorg: f64, gamma: f64, label: BathLabel) -> Result<Self, BathError> {
        let b = DebyeBath {
            lambda_reorg,
            gamma,
            label,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BathError> {
        if !(self.lambda_reorg >= 0.0) || !self.lambda_reorg.is_finite() {
            return Err(BathError::BadParameter(format!(
                "{} bath reorganization must be finite and nonnegative, got {}",
                self.label, self.lambda_reorg
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(BathError::BadParameter(format!(
                "{} bath cutoff must be finite and positive, got {}",
                self.label, self.gamma
            )));
        }
        Ok(())
    }

    /// J(w); odd in w, positive for w > 0 whenever lambda_reorg > 0.
    pub fn density(&self, omega: f64) -> f64 {
        2.0 * self.lambda_reorg * self.gamma * omega / (omega * omega + self.gamma * self.gamma)
    }
}

/// Markovian friction coefficient -> Debye reorganization at fixed
/// cutoff: lambda = gamma * eta / 2, so that the zero-frequency friction
/// kernel matches eta.
pub fn reorganization_from_friction(eta: f64, gamma: f64) -> Result<f64, BathError> {
    if !(eta >= 0.0) || !(gamma > 0.0) {
        return Err(BathError::BadParameter(format!(
            "friction conversion needs eta >= 0 and gamma > 0, got eta={eta}, gamma={gamma}"
        )));
    }
    Ok(0.5 * gamma * eta)
}

/// Inverse of [`reorganization_from_friction`].
pub fn friction_from_reorganization(lambda: f64, gamma: f64) -> Result<f64, BathError> {
    if !(lambda >= 0.0) || !(gamma > 0.0) {
        return Err(BathError::BadParameter(format!(
            "friction conversion needs lambda >= 0 and gamma > 0, got lambda={lambda}, gamma={gamma}"
        )));
    }
    Ok(2.0 * lambda / gamma)
}

/// lambda * tau for a Debye bath damping a mode of frequency `omega` at
/// inverse temperature `beta`: the mode's thermal energy decay rate is
/// 1/tau = 2 J(omega) / (1 - exp(-beta omega)).
fn lifetime_reorganization_product(omega: f64, gamma: f64, beta: f64) -> f64 {
    (1.0 - (-beta * omega).exp()) * (omega * omega + gamma * gamma) / (4.0 * omega * gamma)
}

/// Reorganization energy of a loss bath that gives the damped mode a
/// thermal energy lifetime `tau`.
pub fn reorganization_from_lifetime(
    tau: f64,
    omega: f64,
    gamma: f64,
    beta: f64,
) -> Result<f64, BathError> {
    if !(tau > 0.0 && omega > 0.0 && gamma > 0.0 && beta > 0.0) {
        return Err(BathError::BadParameter(format!(
            "lifetime conversion needs positive tau, omega, gamma, beta; \
             got tau={tau}, omega={omega}, gamma={gamma}, beta={beta}"
        )));
    }
    Ok(lifetime_reorganization_product(omega, gamma, beta) / tau)
}

/// Thermal energy lifetime of a mode damped by a loss bath of the given
/// reorganization energy. Inverse of [`reorganization_from_lifetime`].
pub fn lifetime_from_reorganization(
    lambda: f64,
    omega: f64,
    gamma: f64,
    beta: f64,
) -> Result<f64, BathError> {
    if !(lambda > 0.0 && omega > 0.0 && gamma > 0.0 && beta > 0.0) {
        return Err(BathError::BadParameter(format!(
            "lifetime conversion needs positive lambda, omega, gamma, beta; \
             got lambda={lambda}, omega={omega}, gamma={gamma}, beta={beta}"
        )));
    }
    Ok(lifetime_reorganization_product(omega, gamma, beta) / lambda)
}

/// How many Pade poles to use for the Bose function when expanding a
/// correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PadeOrder {
    /// Pin the order; the expansion is still certified but never fails
    /// on tolerance.
    Fixed(usize),
    /// Escalate from 6 in steps of 2 until the certified error is at
    /// most `tol`, failing with the best achieved error past `max_k`.
    Auto { tol: f64, max_k: usize },
}

impl Default for PadeOrder {
    fn default() -> Self {
        PadeOrder::Auto {
            tol: 1e-4,
            max_k: 48,
        }
    }
}

/// Measured reconstruction accuracy of an expansion: the sup over the
/// grid t_j = j * window / n_points (j = 1..n_points) of
/// |C_modes(t) - C_quadrature(t)|, divided by the sup of |C_quadrature|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub pade_order: usize,
    pub sup_rel_error: f64,
    pub window: f64,
    pub n_points: usize,
}

/// One exponential mode: C(t) gets c exp(-nu t), C*(t) gets cbar exp(-nu t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathMode {
    pub c: C64,
    pub cbar: C64,
    pub nu: C64,
}

/// Exponential decomposition of a bath correlation function at fixed
/// temperature, with its accuracy certificate.
#[derive(Debug, Clone)]
pub struct BathExpansion {
    pub modes: Vec<BathMode>,
    pub beta: f64,
    pub source: String,
    pub certification: Certification,
}

impl BathExpansion {
    /// C(t) = sum c_k exp(-nu_k t), valid for t >= 0.
    pub fn correlation(&self, t: f64) -> C64 {
        self.modes
            .iter()
            .map(|m| m.c * (-m.nu * t).exp())
            .sum()
    }

    /// C*(t) = sum cbar_k exp(-nu_k t), valid for t >= 0.
    pub fn conjugate_correlation(&self, t: f64) -> C64 {
        self.modes
            .iter()
            .map(|m| m.cbar * (-m.nu * t).exp())
            .sum()
    }
}

/// Expand a Debye bath's correlation function at inverse temperature
/// `beta`; the first mode carries the Debye pole (nu = gamma), the rest
/// the Pade thermal poles.
pub fn decompose_debye(
    bath: &DebyeBath,
    beta: f64,
    order: PadeOrder,
) -> Result<BathExpansion, BathError> {
    bath.validate()?;
    if !(beta > 0.0) {
        return Err(BathError::BadParameter(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    let kernel = network::debye_kernel(bath);
    let poles = vec![C64::new(0.0, -bath.gamma)];
    expand_certified(&kernel, &poles, beta, order, format!("debye({})", bath.label))
}

/// Expand the correlation function of a folded network density.
pub fn decompose_effective(
    density: &EffectiveDensity,
    beta: f64,
    order: PadeOrder,
) -> Result<BathExpansion, BathError> {
    if !(beta > 0.0) {
        return Err(BathError::BadParameter(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    expand_certified(
        &density.kernel,
        density.poles(),
        beta,
        order,
        density.label.clone(),
    )
}

/// Bose occupation weight 1/(1 - exp(-x)) continued to complex argument,
/// with overflow guards on the real part.
fn bose_weight(x: C64) -> Result<C64, BathError> {
    if x.re > 700.0 {
        return Ok(C64::new(1.0, 0.0));
    }
    if x.re < -700.0 {
        return Ok(-x.exp());
    }
    let d = C64::new(1.0, 0.0) - (-x).exp();
    if d.norm() < 1e-10 {
        // A kernel pole sitting on a thermal (Matsubara) frequency makes
        // the pole residue diverge even though C(t) stays finite; the
        // configuration is measure-zero, so ask for a detuned parameter.
        return Err(BathError::BadParameter(format!(
            "kernel pole resonant with a thermal frequency (beta * pole = {x}); \
             perturb the bath parameters"
        )));
    }
    Ok(C64::new(1.0, 0.0) / d)
}

/// Residue calculus for C(t>0) = (1/pi) Int J(w) e^{-iwt} / (1-e^{-beta w}) dw:
/// closing the contour below picks up the kernel poles weighted by the
/// exact Bose factor, and the Pade poles of the Bose factor weighted by
/// J continued to the negative imaginary axis. The conjugate-side
/// coefficients come from the identical contour with weight
/// 1/(1-e^{-x}) - 1, which reconstructs C*(t) on the same exponents.
fn expand_modes(
    kernel: &Rational,
    poles: &[C64],
    beta: f64,
    k_pade: usize,
) -> Result<Vec<BathMode>, BathError> {
    let kbar = kernel.conj_coeffs();
    let j_at = |z: C64| C64::new(0.0, 0.5) * (kernel.eval(z) - kbar.eval(z));
    let mut modes = Vec::with_capacity(poles.len() + k_pade);
    for &p in poles {
        let r = kernel.residue_at(p);
        let w = bose_weight(beta * p)?;
        modes.push(BathMode {
            c: r * w,
            cbar: r * (w - 1.0),
            nu: C64::new(0.0, 1.0) * p,
        });
    }
    let (xi, eta) = pade_bose(k_pade);
    for (x, e) in xi.iter().zip(eta.iter()) {
        let nu = x / beta;
        let c = C64::new(0.0, -2.0) * (e / beta) * j_at(C64::new(0.0, -nu));
        modes.push(BathMode {
            c,
            cbar: c,
            nu: C64::new(nu, 0.0),
        });
    }
    for m in &modes {
        if !(m.nu.re > 0.0) {
            return Err(BathError::BadParameter(format!(
                "non-decaying correlation mode nu = {}",
                m.nu
            )));
        }
    }
    Ok(modes)
}

fn expand_certified(
    kernel: &Rational,
    poles: &[C64],
    beta: f64,
    order: PadeOrder,
    source: String,
) -> Result<BathExpansion, BathError> {
    // Certification grid: five decay times of the slowest kernel mode.
    // t = 0 is excluded; the Debye correlation function diverges
    // logarithmically there and no exponential sum converges at it.
    let min_rate = poles.iter().map(|p| -p.im).fold(f64::INFINITY, f64::min);
    let omega_scale = poles.iter().map(|p| p.norm()).fold(0.0f64, f64::max);
    let window = 5.0 / min_rate;
    let n_points = 200;
    let kbar = kernel.conj_coeffs();
    let j_re = |w: f64| {
        let z = C64::new(w, 0.0);
        (C64::new(0.0, 0.5) * (kernel.eval(z) - kbar.eval(z))).re
    };
    let grid: Vec<f64> = (1..=n_points)
        .map(|j| j as f64 * window / n_points as f64)
        .collect();
    let oracle: Vec<C64> = grid
        .iter()
        .map(|&t| quad::correlation_oracle(&j_re, beta, t, omega_scale))
        .collect();
    let scale = oracle.iter().map(|c| c.norm()).fold(0.0f64, f64::max);

    let measure = |modes: &[BathMode]| -> f64 {
        if scale < 1e-300 {
            return 0.0;
        }
        let mut sup = 0.0f64;
        for (&t, &c_or) in grid.iter().zip(oracle.iter()) {
            let mut c = C64::new(0.0, 0.0);
            let mut cb = C64::new(0.0, 0.0);
            for m in modes {
                let e = (-m.nu * t).exp();
                c += m.c * e;
                cb += m.cbar * e;
            }
            sup = sup.max((c - c_or).norm()).max((cb - c_or.conj()).norm());
        }
        sup / scale
    };

    let build = |k: usize| -> Result<(Vec<BathMode>, Certification), BathError> {
        let modes = expand_modes(kernel, poles, beta, k)?;
        let cert = Certification {
            pade_order: k,
            sup_rel_error: measure(&modes),
            window,
            n_points,
        };
        Ok((modes, cert))
    };

    let (modes, certification) = match order {
        PadeOrder::Fixed(k) => build(k)?,
        PadeOrder::Auto { tol, max_k } => {
            let mut k = 6.min(max_k);
            let mut best: Option<(Vec<BathMode>, Certification)> = None;
            loop {
                let cand = build(k)?;
                let better = best
                    .as_ref()
                    .map(|(_, c)| cand.1.sup_rel_error < c.sup_rel_error)
                    .unwrap_or(true);
                if better {
                    best = Some(cand);
                }
                let achieved = best.as_ref().unwrap().1.sup_rel_error;
                if achieved <= tol {
                    break;
                }
                if k >= max_k {
                    return Err(BathError::NotCertified {
                        achieved,
                        tol,
                        k: best.as_ref().unwrap().1.pade_order,
                        k_max: max_k,
                    });
                }
                k = (k + 2).min(max_k);
            }
            best.unwrap()
        }
    };

    Ok(BathExpansion {
        modes,
        beta,
        source,
        certification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{beta_from_kelvin, cm1_to_hartree, AU_PER_FS};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn solvent() -> DebyeBath {
        let gamma = cm1_to_hartree(200.0);
        let eta = 0.1 * cm1_to_hartree(1000.0);
        DebyeBath::new(
            reorganization_from_friction(eta, gamma).unwrap(),
            gamma,
            BathLabel::Solvent,
        )
        .unwrap()
    }

    #[test]
    fn friction_table_for_standard_solvent() {
        let gamma = cm1_to_hartree(200.0);
        let omega_b = cm1_to_hartree(1000.0);
        let expect = [
            (0.02, 4.15e-8),
            (0.1, 2.08e-7),
            (0.5, 1.04e-6),
            (1.5, 3.11e-6),
        ];
        for (frac, lam) in expect {
            let got = reorganization_from_friction(frac * omega_b, gamma).unwrap();
            assert_relative_eq!(got, lam, max_relative = 5e-3);
            let back = friction_from_reorganization(got, gamma).unwrap();
            assert_relative_eq!(back, frac * omega_b, max_relative = 1e-14);
        }
    }

    #[test]
    fn debye_density_shape() {
        let b = solvent();
        assert_eq!(b.density(0.0), 0.0);
        assert_relative_eq!(b.density(b.gamma), b.lambda_reorg, max_relative = 1e-15);
        // independent evaluation at 400 cm^-1
        let w = cm1_to_hartree(400.0);
        let expect = 2.0 * b.lambda_reorg * w * b.gamma / (w * w + b.gamma * b.gamma);
        assert_relative_eq!(b.density(w), expect, max_relative = 1e-15);
        // maximum is at gamma
        assert!(b.density(b.gamma) > b.density(0.7 * b.gamma));
        assert!(b.density(b.gamma) > b.density(1.4 * b.gamma));
    }

    #[test]
    fn lifetime_conversion_round_trip() {
        let beta = beta_from_kelvin(300.0);
        let omega_c = cm1_to_hartree(1142.0);
        let gamma_l = cm1_to_hartree(1000.0);
        let tau = 100.0 * AU_PER_FS;
        let lam = reorganization_from_lifetime(tau, omega_c, gamma_l, beta).unwrap();
        assert!(lam > 0.0);
        let back = lifetime_from_reorganization(lam, omega_c, gamma_l, beta).unwrap();
        assert_relative_eq!(back, tau, max_relative = 1e-12);
        // defining identity: thermal decay rate of the damped mode
        let b = DebyeBath::new(lam, gamma_l, BathLabel::Loss).unwrap();
        let rate = 2.0 * b.density(omega_c) / (1.0 - (-beta * omega_c).exp());
        assert_relative_eq!(rate, 1.0 / tau, max_relative = 1e-12);
    }

    #[test]
    fn debye_modes_have_closed_form_leading_coefficient() {
        let b = solvent();
        let beta = beta_from_kelvin(300.0);
        let exp = decompose_debye(&b, beta, PadeOrder::Fixed(4)).unwrap();
        assert_eq!(exp.modes.len(), 5);
        let m0 = &exp.modes[0];
        assert_relative_eq!(m0.nu.re, b.gamma, max_relative = 1e-12);
        assert_abs_diff_eq!(m0.nu.im, 0.0, epsilon = 1e-18);
        let lg = b.lambda_reorg * b.gamma;
        let half = 0.5 * beta * b.gamma;
        assert_relative_eq!(m0.c.re, lg * half.cos() / half.sin(), max_relative = 1e-12);
        assert_relative_eq!(m0.c.im, -lg, max_relative = 1e-12);
        // thermal modes are real and self-conjugate
        for m in &exp.modes[1..] {
            assert_abs_diff_eq!(m.c.im, 0.0, epsilon = 1e-22);
            assert_eq!(m.c, m.cbar);
            assert!(m.nu.re > 0.0);
        }
        assert_relative_eq!(m0.cbar.re, m0.c.re, max_relative = 1e-14);
        assert_relative_eq!(m0.cbar.im, -m0.c.im, max_relative = 1e-14);
    }

    #[test]
    fn solvent_expansion_certifies_at_default_tolerance() {
        let beta = beta_from_kelvin(300.0);
        let exp = decompose_debye(&solvent(), beta, PadeOrder::default()).unwrap();
        let cert = exp.certification;
        assert!(cert.sup_rel_error <= 1e-4, "sup {}", cert.sup_rel_error);
        assert!(
            cert.pade_order <= 12,
            "escalated past 12: {}",
            cert.pade_order
        );
        assert_relative_eq!(cert.window, 5.0 / solvent().gamma, max_relative = 1e-15);
    }

    #[test]
    fn low_order_is_honestly_insufficient_on_the_dense_grid() {
        // Six Pade poles miss 1e-4 because the grid's earliest times sit
        // in the short-time region where C(t) is steep; escalation is
        // what makes the default path reliable.
        let beta = beta_from_kelvin(300.0);
        let exp = decompose_debye(&solvent(), beta, PadeOrder::Fixed(6)).unwrap();
        let sup = exp.certification.sup_rel_error;
        assert!(
            (1.5e-4..2e-3).contains(&sup),
            "expected ~7e-4 from the frozen measurement, got {sup}"
        );
    }

    #[test]
    fn imaginary_part_is_temperature_free_and_exact() {
        // Im C(t) = -lambda gamma e^{-gamma t} for a Debye bath: the
        // expansion reproduces it exactly since thermal modes are real.
        let b = solvent();
        for (beta_k, t_scale) in [(300.0, 1.0), (120.0, 1.7)] {
            let beta = beta_from_kelvin(beta_k);
            let exp = decompose_debye(&b, beta, PadeOrder::Fixed(10)).unwrap();
            for j in 1..=7 {
                let t = t_scale * j as f64 * 250.0;
                let im = exp.correlation(t).im;
                let expect = -b.lambda_reorg * b.gamma * (-b.gamma * t).exp();
                assert_relative_eq!(im, expect, max_relative = 1e-12);
                // conjugate side is the literal conjugate for this bath
                let cc = exp.conjugate_correlation(t);
                assert_abs_diff_eq!(
                    (cc - exp.correlation(t).conj()).norm(),
                    0.0,
                    epsilon = 1e-24
                );
            }
        }
    }

    #[test]
    fn secondary_and_loss_presets_certify() {
        let beta = beta_from_kelvin(300.0);
        let secondary =
            DebyeBath::new(6.70e-7, cm1_to_hartree(1000.0), BathLabel::Secondary).unwrap();
        let e1 = decompose_debye(&secondary, beta, PadeOrder::default()).unwrap();
        assert!(e1.certification.sup_rel_error <= 1e-4);

        let omega_c = cm1_to_hartree(1142.0);
        let gamma_l = cm1_to_hartree(1000.0);
        let lam_l =
            reorganization_from_lifetime(100.0 * AU_PER_FS, omega_c, gamma_l, beta).unwrap();
        let loss = DebyeBath::new(lam_l, gamma_l, BathLabel::Loss).unwrap();
        let e2 = decompose_debye(&loss, beta, PadeOrder::default()).unwrap();
        assert!(e2.certification.sup_rel_error <= 1e-4);
    }

    fn lossy_cavity_network(eta_c: f64, tau_fs: f64, beta: f64) -> HarmonicNetwork {
        let omega_c = cm1_to_hartree(1142.0);
        let gamma_l = cm1_to_hartree(1000.0);
        let lam_l =
            reorganization_from_lifetime(tau_fs * AU_PER_FS, omega_c, gamma_l, beta).unwrap();
        HarmonicNetwork {
            anchor_baths: vec![],
            nodes: vec![NetworkNode {
                frequency: omega_c,
                coupling: 2.0f64.sqrt() * omega_c.powf(1.5) * eta_c,
                parent: NetworkParent::Anchor,
                baths: vec![DebyeBath::new(lam_l, gamma_l, BathLabel::Loss).unwrap()],
                label: "cavity".into(),
            }],
        }
    }

    #[test]
    fn folded_cavity_density_certifies() {
        let beta = beta_from_kelvin(300.0);
        let j = lossy_cavity_network(0.005, 100.0, beta).fold().unwrap();
        let exp = decompose_effective(&j, beta, PadeOrder::default()).unwrap();
        assert!(
            exp.certification.sup_rel_error <= 1e-4,
            "sup {}",
            exp.certification.sup_rel_error
        );
        // three kernel poles + Pade modes
        assert_eq!(
            exp.modes.len(),
            3 + exp.certification.pade_order,
            "mode count"
        );
    }

    #[test]
    fn folded_cavity_sum_rule() {
        let beta = beta_from_kelvin(300.0);
        let net = lossy_cavity_network(0.00125, 200.0, beta);
        let j = net.fold().unwrap();
        let omega_c = cm1_to_hartree(1142.0);
        // (1/pi) Int J/w dw against the analytic edge counterterm
        let f = |w: f64| j.eval(w) / w / std::f64::consts::PI;
        let (core, _) = integrate(&f, 1e-9, 40.0 * omega_c, 1e-13);
        let (tail, _) = integrate(&f, 40.0 * omega_c, 40_000.0 * omega_c, 1e-13);
        assert_relative_eq!(core + tail, j.reorganization, max_relative = 1e-4);
        // and the analytic value is the dipole self-energy scale
        let eta_c = 0.00125;
        assert_relative_eq!(
            j.reorganization,
            eta_c * eta_c * omega_c,
            max_relative = 1e-14
        );
    }

    #[test]
    fn zero_coupling_node_leaves_anchor_density_untouched() {
        let b = solvent();
        let net = HarmonicNetwork {
            anchor_baths: vec![b],
            nodes: vec![NetworkNode {
                frequency: cm1_to_hartree(1200.0),
                coupling: 0.0,
                parent: NetworkParent::Anchor,
                baths: vec![DebyeBath::new(
                    6.7e-7,
                    cm1_to_hartree(1000.0),
                    BathLabel::Secondary,
                )
                .unwrap()],
                label: "spectator".into(),
            }],
        };
        let j = net.fold().unwrap();
        for k in [5.0, 50.0, 200.0, 1000.0, 3000.0] {
            let w = cm1_to_hartree(k);
            assert_relative_eq!(j.eval(w), b.density(w), max_relative = 1e-12);
        }
    }

    #[test]
    fn repeated_kernel_pole_is_flagged() {
        use super::rational::Poly;
        let gamma = cm1_to_hartree(500.0);
        // K(z) = 2 lam z / (z + i gamma)^2: critically degenerate
        let num = Poly(vec![C64::new(2e-7, 0.0), C64::new(0.0, 0.0)]);
        let den = Poly(vec![C64::new(1.0, 0.0), C64::new(0.0, gamma)]);
        let kernel = Rational {
            num,
            den: den.mul(&den),
        };
        match EffectiveDensity::from_kernel(kernel, 2e-7, "degenerate".into()) {
            Err(BathError::HighOrderPole { multiplicity, .. }) => assert_eq!(multiplicity, 2),
            other => panic!("expected repeated-pole flag, got {other:?}"),
        }
    }

    #[test]
    fn thermal_resonance_is_rejected() {
        let beta = beta_from_kelvin(300.0);
        // cutoff exactly on the first Matsubara frequency
        let gamma = 2.0 * std::f64::consts::PI / beta;
        let b = DebyeBath::new(2e-7, gamma, BathLabel::Solvent).unwrap();
        match decompose_debye(&b, beta, PadeOrder::Fixed(6)) {
            Err(BathError::BadParameter(msg)) => assert!(msg.contains("thermal")),
            other => panic!("expected thermal-resonance rejection, got {other:?}"),
        }
    }

    #[test]
    fn auto_escalation_fails_honestly_when_capped() {
        let beta = beta_from_kelvin(300.0);
        let order = PadeOrder::Auto {
            tol: 1e-12,
            max_k: 8,
        };
        match decompose_debye(&solvent(), beta, order) {
            Err(BathError::NotCertified {
                achieved,
                tol,
                k_max,
                ..
            }) => {
                assert!(achieved > tol);
                assert_eq!(k_max, 8);
            }
            other => panic!("expected certification failure, got {other:?}"),
        }
    }
}
