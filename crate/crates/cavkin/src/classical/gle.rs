//! Extended-phase-space integrator for the generalized Langevin
//! equation and the flux-side transmission coefficient built on it.
//!
//! Each exponential kernel is carried by one auxiliary force S obeying
//!
//!   dS = -Gamma S dt - 2 Lambda v dt + 2 Gamma sqrt(Lambda/(Gamma beta)) dW,
//!
//! so that eliminating S reproduces the friction integral
//! -Int 2 Lambda exp(-Gamma (t-s)) v(s) ds plus noise whose stationary
//! variance 2 Lambda / beta balances it (classical fluctuation-
//! dissipation). Stepping is the symmetric O(h/2) B(h/2) A(h) B(h/2)
//! O(h/2) splitting: exact Ornstein-Uhlenbeck half steps for the
//! auxiliaries with the velocity held, a velocity-Verlet
//! kick-drift-kick in between. With the kernels switched off the O
//! stages are identities and the scheme is plain velocity Verlet, so
//! conservative runs keep their shadow invariant to roundoff.
//!
//! Every trajectory draws from its own counter-based stream keyed by
//! (seed, trajectory index), and ensemble reductions run block by block
//! in index order, so results are bitwise reproducible regardless of
//! how rayon schedules the work.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::GleConfig;
use crate::error::ClassicalError;
use crate::rates;

/// Trajectories are dropped as divergent past this displacement; the
/// quartic well confines everything physical well inside it and a free
/// thermal particle cannot ballistically cover it on any sane horizon.
const R_RUNAWAY: f64 = 1e6;

/// Output grids are thinned to at most this many points.
const MAX_OUT: usize = 800;

const BLOCKS: usize = 32;

/// One point of the extended phase space: coordinate and momentum of
/// the reaction coordinate and cavity mode, plus the two auxiliary
/// friction forces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub r: f64,
    pub p: f64,
    pub q_c: f64,
    pub p_c: f64,
    pub s_b: f64,
    pub s_c: f64,
}

impl PhasePoint {
    pub fn at_rest(r: f64) -> Self {
        PhasePoint { r, p: 0.0, q_c: 0.0, p_c: 0.0, s_b: 0.0, s_c: 0.0 }
    }
}

/// Half-step transition of one auxiliary force: exact exponential decay
/// toward the drag value -2 Lambda v / Gamma with the matching noise so
/// the free process is stationary at variance 2 Lambda / beta.
#[derive(Clone, Copy)]
struct KernelStep {
    decay: f64,
    drag: f64,
    noise: f64,
}

impl KernelStep {
    fn new(lambda: f64, gamma: f64, h: f64, beta: f64) -> Self {
        let decay = (-gamma * h).exp();
        KernelStep {
            decay,
            drag: (1.0 - decay) * 2.0 * lambda / gamma,
            noise: ((2.0 * lambda / beta) * (1.0 - decay * decay)).sqrt(),
        }
    }

    fn advance(&self, s: f64, v: f64, xi: f64) -> f64 {
        self.decay * s - self.drag * v + self.noise * xi
    }
}

pub(crate) struct Engine<'a> {
    cfg: &'a GleConfig,
    beta: f64,
    half: f64,
    has_cavity: bool,
    wc2: f64,
    /// sqrt(2/w_c) eta_c, the coordinate shift in the completed square.
    couple: f64,
    kernel_b: KernelStep,
    kernel_c: Option<KernelStep>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(cfg: &'a GleConfig) -> Self {
        let beta = cfg.beta();
        let (has_cavity, wc2, couple, kernel_c) = match &cfg.cavity {
            Some(cav) => (
                true,
                cav.omega_c * cav.omega_c,
                (2.0 / cav.omega_c).sqrt() * cav.eta_c,
                cav.loss
                    .as_ref()
                    .map(|l| KernelStep::new(l.lambda_reorg, l.gamma, 0.5 * cfg.dt, beta)),
            ),
            None => (false, 0.0, 0.0, None),
        };
        Engine {
            cfg,
            beta,
            half: 0.5 * cfg.dt,
            has_cavity,
            wc2,
            couple,
            kernel_b: KernelStep::new(
                cfg.solvent.lambda_reorg,
                cfg.solvent.gamma,
                0.5 * cfg.dt,
                beta,
            ),
            kernel_c,
        }
    }

    fn stream(&self, traj: usize) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(traj as u64);
        rng
    }

    fn forces(&self, st: &PhasePoint) -> (f64, f64) {
        let mut f_r = self.cfg.potential.force(st.r);
        let mut f_q = 0.0;
        if self.has_cavity {
            let disp = st.q_c + self.couple * st.r;
            f_r -= self.wc2 * self.couple * disp;
            f_q = -self.wc2 * disp;
        }
        (f_r, f_q)
    }

    fn energy(&self, st: &PhasePoint) -> f64 {
        let mut e = 0.5 * st.p * st.p + self.cfg.potential.eval(st.r);
        if self.has_cavity {
            let disp = st.q_c + self.couple * st.r;
            e += 0.5 * st.p_c * st.p_c + 0.5 * self.wc2 * disp * disp;
        }
        e
    }

    fn ou_half(&self, st: &mut PhasePoint, rng: &mut ChaCha12Rng) {
        let xi: f64 = StandardNormal.sample(rng);
        st.s_b = self.kernel_b.advance(st.s_b, st.p, xi);
        if let Some(k) = self.kernel_c {
            let xi: f64 = StandardNormal.sample(rng);
            st.s_c = k.advance(st.s_c, st.p_c, xi);
        }
    }

    /// One full step. `forces` carries the forces at the current
    /// position in and the forces at the new position out, so each step
    /// pays for one evaluation.
    fn step(&self, st: &mut PhasePoint, forces: &mut (f64, f64), rng: &mut ChaCha12Rng) {
        self.ou_half(st, rng);
        st.p += self.half * (forces.0 + st.s_b);
        if self.has_cavity {
            st.p_c += self.half * (forces.1 + st.s_c);
        }
        st.r += self.cfg.dt * st.p;
        if self.has_cavity {
            st.q_c += self.cfg.dt * st.p_c;
        }
        *forces = self.forces(st);
        st.p += self.half * (forces.0 + st.s_b);
        if self.has_cavity {
            st.p_c += self.half * (forces.1 + st.s_c);
        }
        self.ou_half(st, rng);
    }

    /// Draws a start on the dividing surface: Maxwell-Boltzmann momenta,
    /// the cavity coordinate from its conditional thermal Gaussian at
    /// fixed R, and auxiliary forces with the width sqrt(2 Lambda /
    /// (beta dt)) of a kernel collapsed onto one step. The draw order
    /// (P, q_c, p_c, S_B, S_c) is part of the reproducibility contract.
    fn sample(&self, rng: &mut ChaCha12Rng) -> PhasePoint {
        let r = self.cfg.dividing_surface;
        let sd_p = (1.0 / self.beta).sqrt();
        let normal = |rng: &mut ChaCha12Rng| -> f64 { StandardNormal.sample(rng) };
        let p = sd_p * normal(rng);
        let (q_c, p_c) = if self.has_cavity {
            let q = -self.couple * r + (1.0 / (self.beta * self.wc2)).sqrt() * normal(rng);
            (q, sd_p * normal(rng))
        } else {
            (0.0, 0.0)
        };
        let s_b = (2.0 * self.cfg.solvent.lambda_reorg / (self.beta * self.cfg.dt)).sqrt()
            * normal(rng);
        let s_c = match &self.cfg.cavity {
            Some(cav) => match &cav.loss {
                Some(l) => {
                    (2.0 * l.lambda_reorg / (self.beta * self.cfg.dt)).sqrt() * normal(rng)
                }
                None => 0.0,
            },
            None => 0.0,
        };
        PhasePoint { r, p, q_c, p_c, s_b, s_c }
    }

    fn n_steps(&self) -> Result<usize, ClassicalError> {
        let n = (self.cfg.t_final / self.cfg.dt).round();
        if n < 1.0 || n > 2e9 {
            return Err(ClassicalError::BadParameter(format!(
                "horizon of {n} steps is out of range"
            )));
        }
        Ok(n as usize)
    }
}

/// Kinetic plus potential energy of the coordinate and cavity mode
/// (the auxiliary forces carry no energy of their own).
pub fn mechanical_energy(cfg: &GleConfig, st: &PhasePoint) -> f64 {
    Engine::new(cfg).energy(st)
}

/// One trajectory from a caller-supplied start, recorded on a uniform
/// grid of about `n_samples` points including t = 0. Noise comes from
/// the stream for `traj`, matching what the ensemble drivers use.
pub fn propagate_trajectory(
    cfg: &GleConfig,
    start: PhasePoint,
    traj: usize,
    n_samples: usize,
) -> Result<SingleTrajectory, ClassicalError> {
    cfg.validate()?;
    let eng = Engine::new(cfg);
    let n_steps = eng.n_steps()?;
    let stride = (n_steps + n_samples.max(1) - 1) / n_samples.max(1);
    let stride = stride.max(1);

    let mut rng = eng.stream(traj);
    let mut st = start;
    let mut forces = eng.forces(&st);
    let mut out = SingleTrajectory {
        times: vec![0.0],
        points: vec![st],
    };
    for step in 1..=n_steps {
        eng.step(&mut st, &mut forces, &mut rng);
        if !(st.r.abs() < R_RUNAWAY) {
            return Err(ClassicalError::Unstable {
                traj,
                t: step as f64 * cfg.dt,
                r: st.r,
            });
        }
        if step % stride == 0 || step == n_steps {
            out.times.push(step as f64 * cfg.dt);
            out.points.push(st);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SingleTrajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
}

/// A start drawn from the constrained thermal distribution on the
/// dividing surface, as trajectory `traj` of the ensemble would get it.
pub fn sample_dividing_surface(
    cfg: &GleConfig,
    traj: usize,
) -> Result<PhasePoint, ClassicalError> {
    cfg.validate()?;
    let eng = Engine::new(cfg);
    Ok(eng.sample(&mut eng.stream(traj)))
}

/// Ensemble moments on the output grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub mean_r: Vec<f64>,
    pub var_r: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub n_traj_used: usize,
    pub n_unstable: usize,
}

struct MomentBlock {
    sum_r: Vec<f64>,
    sum_r2: Vec<f64>,
    sum_e: Vec<f64>,
    used: usize,
    unstable: usize,
}

/// Propagates the full ensemble from the dividing surface and returns
/// running moments. Divergent trajectories are dropped in whole and
/// counted, never partially accumulated.
pub fn propagate_ensemble(cfg: &GleConfig) -> Result<EnsembleSummary, ClassicalError> {
    cfg.validate()?;
    let eng = Engine::new(cfg);
    let n_steps = eng.n_steps()?;
    let stride = ((n_steps + MAX_OUT - 1) / MAX_OUT).max(1);
    let n_out = n_steps / stride;
    let times: Vec<f64> = (1..=n_out).map(|k| (k * stride) as f64 * cfg.dt).collect();

    let blocks = block_ranges(cfg.n_traj);
    let accs: Vec<MomentBlock> = blocks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = MomentBlock {
                sum_r: vec![0.0; n_out],
                sum_r2: vec![0.0; n_out],
                sum_e: vec![0.0; n_out],
                used: 0,
                unstable: 0,
            };
            let mut r_buf = vec![0.0; n_out];
            let mut e_buf = vec![0.0; n_out];
            for traj in lo..hi {
                if run_recording(&eng, traj, n_steps, stride, &mut r_buf, &mut e_buf) {
                    for k in 0..n_out {
                        acc.sum_r[k] += r_buf[k];
                        acc.sum_r2[k] += r_buf[k] * r_buf[k];
                        acc.sum_e[k] += e_buf[k];
                    }
                    acc.used += 1;
                } else {
                    acc.unstable += 1;
                }
            }
            acc
        })
        .collect();

    let mut sum_r = vec![0.0; n_out];
    let mut sum_r2 = vec![0.0; n_out];
    let mut sum_e = vec![0.0; n_out];
    let mut used = 0;
    let mut unstable = 0;
    for b in &accs {
        for k in 0..n_out {
            sum_r[k] += b.sum_r[k];
            sum_r2[k] += b.sum_r2[k];
            sum_e[k] += b.sum_e[k];
        }
        used += b.used;
        unstable += b.unstable;
    }
    if used < 2 {
        return Err(ClassicalError::InsufficientStatistics(format!(
            "{unstable} of {} trajectories diverged",
            cfg.n_traj
        )));
    }
    let n = used as f64;
    let mean_r: Vec<f64> = sum_r.iter().map(|s| s / n).collect();
    let var_r: Vec<f64> = (0..n_out)
        .map(|k| (sum_r2[k] / n - mean_r[k] * mean_r[k]) * n / (n - 1.0))
        .collect();
    let mean_energy: Vec<f64> = sum_e.iter().map(|s| s / n).collect();
    Ok(EnsembleSummary { times, mean_r, var_r, mean_energy, n_traj_used: used, n_unstable: unstable })
}

fn run_recording(
    eng: &Engine,
    traj: usize,
    n_steps: usize,
    stride: usize,
    r_buf: &mut [f64],
    e_buf: &mut [f64],
) -> bool {
    let mut rng = eng.stream(traj);
    let mut st = eng.sample(&mut rng);
    let mut forces = eng.forces(&st);
    let n_out = r_buf.len();
    let mut k = 0;
    for step in 1..=n_steps {
        eng.step(&mut st, &mut forces, &mut rng);
        if !(st.r.abs() < R_RUNAWAY) {
            return false;
        }
        if step % stride == 0 {
            r_buf[k] = st.r;
            e_buf[k] = eng.energy(&st);
            k += 1;
            if k == n_out {
                break;
            }
        }
    }
    true
}

/// Plateau read off a transmission curve: its mean over the window,
/// the block scatter of that mean, and the window itself.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PlateauEstimate {
    pub kappa: f64,
    pub standard_error: f64,
    pub window: (f64, f64),
}

/// Flux-side transmission coefficient on a time grid, with block
/// standard errors and the detected plateau (absent when the curve is
/// still relaxing at the end of the horizon).
#[derive(Debug, Clone, serde::Serialize)]
pub struct FluxSideResult {
    pub times: Vec<f64>,
    pub kappa_t: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub plateau: Option<PlateauEstimate>,
    pub n_traj_used: usize,
    pub n_unstable: usize,
}

struct FluxBlock {
    num: Vec<f64>,
    den: f64,
    used: usize,
    unstable: usize,
}

/// kappa(t) = <P(0) h[R(t) - R_dag]> / <P(0) h[P(0)]> over trajectories
/// released from the dividing surface. Both averages share one sample,
/// so kappa(0+) = 1 by construction and the plateau value multiplies
/// the TST rate directly.
pub fn transmission_coefficient(cfg: &GleConfig) -> Result<FluxSideResult, ClassicalError> {
    cfg.validate()?;
    if cfg.n_traj < 2 {
        return Err(ClassicalError::BadParameter(
            "a transmission estimate needs at least two trajectories".into(),
        ));
    }
    let eng = Engine::new(cfg);
    let n_steps = eng.n_steps()?;
    let stride = ((n_steps + MAX_OUT - 1) / MAX_OUT).max(1);
    let n_out = n_steps / stride;
    let times: Vec<f64> = (1..=n_out).map(|k| (k * stride) as f64 * cfg.dt).collect();
    let r_dag = cfg.dividing_surface;

    let accs: Vec<FluxBlock> = block_ranges(cfg.n_traj)
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc =
                FluxBlock { num: vec![0.0; n_out], den: 0.0, used: 0, unstable: 0 };
            let mut side = vec![false; n_out];
            for traj in lo..hi {
                let mut rng = eng.stream(traj);
                let mut st = eng.sample(&mut rng);
                let weight = st.p;
                let mut forces = eng.forces(&st);
                let mut ok = true;
                let mut k = 0;
                for step in 1..=n_steps {
                    eng.step(&mut st, &mut forces, &mut rng);
                    if !(st.r.abs() < R_RUNAWAY) {
                        ok = false;
                        break;
                    }
                    if step % stride == 0 {
                        side[k] = st.r > r_dag;
                        k += 1;
                        if k == n_out {
                            break;
                        }
                    }
                }
                if ok {
                    acc.den += weight.max(0.0);
                    for k in 0..n_out {
                        if side[k] {
                            acc.num[k] += weight;
                        }
                    }
                    acc.used += 1;
                } else {
                    acc.unstable += 1;
                }
            }
            acc
        })
        .collect();

    let mut num = vec![0.0; n_out];
    let mut den = 0.0;
    let mut used = 0;
    let mut unstable = 0;
    for b in &accs {
        for k in 0..n_out {
            num[k] += b.num[k];
        }
        den += b.den;
        used += b.used;
        unstable += b.unstable;
    }
    if !(den > 0.0) {
        return Err(ClassicalError::InsufficientStatistics(
            "no forward flux survived; all trajectories diverged or start backwards".into(),
        ));
    }
    let kappa_t: Vec<f64> = num.iter().map(|v| v / den).collect();

    // block scatter: each block forms its own ratio estimate
    let ratios: Vec<Vec<f64>> = accs
        .iter()
        .filter(|b| b.den > 0.0)
        .map(|b| b.num.iter().map(|v| v / b.den).collect())
        .collect();
    let nb = ratios.len();
    if nb < 2 {
        return Err(ClassicalError::InsufficientStatistics(format!(
            "only {nb} block(s) carry forward flux; too few for an error bar"
        )));
    }
    let scatter = |pick: &dyn Fn(&Vec<f64>) -> f64| -> f64 {
        let vals: Vec<f64> = ratios.iter().map(pick).collect();
        let mean = vals.iter().sum::<f64>() / nb as f64;
        let ss = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        (ss / (nb as f64 * (nb - 1) as f64)).sqrt()
    };
    let standard_error: Vec<f64> =
        (0..n_out).map(|k| scatter(&|r: &Vec<f64>| r[k])).collect();

    let pairs: Vec<(f64, f64)> =
        times.iter().copied().zip(kappa_t.iter().copied()).collect();
    let plateau = rates::find_plateau(&pairs).map(|(i, j)| {
        let width = (j - i + 1) as f64;
        let kappa = kappa_t[i..=j].iter().sum::<f64>() / width;
        let standard_error =
            scatter(&|r: &Vec<f64>| r[i..=j].iter().sum::<f64>() / width);
        PlateauEstimate { kappa, standard_error, window: (times[i], times[j]) }
    });

    Ok(FluxSideResult {
        times,
        kappa_t,
        standard_error,
        plateau,
        n_traj_used: used,
        n_unstable: unstable,
    })
}

/// Contiguous index ranges, as even as they come; blocking is part of
/// the result definition (error bars), not a scheduling detail.
fn block_ranges(n_traj: usize) -> Vec<(usize, usize)> {
    let nb = BLOCKS.min(n_traj);
    (0..nb)
        .map(|b| (b * n_traj / nb, (b + 1) * n_traj / nb))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baths::{BathLabel, DebyeBath};
    use crate::classical::{grote_hynes_debye, ClassicalCavity, Potential};
    use crate::model::BistablePotential;
    use crate::units::cm1_to_hartree;

    fn kernel(lambda: f64, gamma: f64) -> DebyeBath {
        DebyeBath { lambda_reorg: lambda, gamma, label: BathLabel::Solvent }
    }

    fn well() -> Potential {
        Potential::DoubleWell(
            BistablePotential::new(cm1_to_hartree(1000.0), cm1_to_hartree(2250.0), 0.0)
                .unwrap(),
        )
    }

    /// Solvent strength for a Markovian friction of x omega_b.
    fn lambda_for(eta: f64, gamma: f64) -> f64 {
        eta * gamma / 2.0
    }

    fn base_config(potential: Potential, lambda: f64) -> GleConfig {
        GleConfig {
            potential,
            solvent: kernel(lambda, cm1_to_hartree(200.0)),
            cavity: None,
            dt: 10.0,
            t_final: 10_000.0,
            n_traj: 1000,
            temperature: 300.0,
            seed: 7,
            dividing_surface: 0.0,
        }
    }

    #[test]
    fn conservative_harmonic_motion_keeps_its_invariants() {
        // with the kernels off the scheme is velocity Verlet, which on a
        // harmonic trap conserves p^2 + w^2 (1 - (w dt)^2 / 4) r^2
        // exactly; only roundoff can move it
        let omega = cm1_to_hartree(1000.0);
        let mut cfg = base_config(Potential::Harmonic { omega }, 0.0);
        cfg.dt = 10.0;
        cfg.t_final = 330_000.0;
        let run = propagate_trajectory(&cfg, PhasePoint::at_rest(10.0), 0, 33_000).unwrap();

        let shadow = |st: &PhasePoint| {
            st.p * st.p
                + omega * omega * (1.0 - (omega * cfg.dt).powi(2) / 4.0) * st.r * st.r
        };
        let first = shadow(&run.points[0]);
        let worst = run
            .points
            .iter()
            .map(|st| (shadow(st) - first).abs() / first)
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "shadow invariant drifted by {worst:.2e}");

        // the plain energy oscillates at O((w dt)^2) but must not walk;
        // windowed means kill the oscillation at a finer step
        cfg.dt = 0.5;
        let run = propagate_trajectory(&cfg, PhasePoint::at_rest(10.0), 0, 660_000).unwrap();
        let energies: Vec<f64> =
            run.points.iter().map(|st| mechanical_energy(&cfg, st)).collect();
        let n = energies.len();
        let w = (n as f64 * 0.4) as usize;
        let head = energies[..w].iter().sum::<f64>() / w as f64;
        let tail = energies[n - w..].iter().sum::<f64>() / w as f64;
        let drift = ((tail - head) / head).abs();
        assert!(drift < 1e-8, "windowed energy drift {drift:.2e}");
    }

    #[test]
    fn auxiliary_force_obeys_fluctuation_dissipation() {
        // frozen coordinate: S is then a plain Ornstein-Uhlenbeck
        // process and must hold the variance 2 Lambda / beta that makes
        // noise and friction books balance
        let lambda = 1.04e-6;
        let gamma = cm1_to_hartree(200.0);
        let beta = 1052.0;
        let dt = 10.0;
        let ks = KernelStep::new(lambda, gamma, 0.5 * dt, beta);

        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut s = 0.0;
        let burn = 5_000;
        let n = 400_000;
        let mut samples = Vec::with_capacity(n);
        for i in 0..burn + n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            s = ks.advance(s, 0.0, xi);
            let xi: f64 = StandardNormal.sample(&mut rng);
            s = ks.advance(s, 0.0, xi);
            if i >= burn {
                samples.push(s);
            }
        }
        let want = 2.0 * lambda / beta;
        let nb = 40;
        let means: Vec<f64> = (0..nb)
            .map(|b| {
                let chunk = &samples[b * n / nb..(b + 1) * n / nb];
                chunk.iter().map(|v| v * v).sum::<f64>() / chunk.len() as f64
            })
            .collect();
        let mean = means.iter().sum::<f64>() / nb as f64;
        let se = (means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (nb as f64 * (nb - 1) as f64))
            .sqrt();
        assert!(
            (mean - want).abs() < 3.0 * se,
            "variance {mean:.4e} vs 2 Lambda / beta = {want:.4e} (se {se:.1e})"
        );

        // autocorrelation decays at the kernel rate Gamma
        let lag_steps = (0.5 / (gamma * dt)).round() as usize;
        let lag = lag_steps as f64 * dt;
        let m = samples.len() - lag_steps;
        let c0 = samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
        let cl = (0..m).map(|i| samples[i] * samples[i + lag_steps]).sum::<f64>() / m as f64;
        let rate = -(cl / c0).ln() / lag;
        assert!(
            (rate - gamma).abs() < 0.02 * gamma,
            "correlation decay {rate:.4e} vs Gamma = {gamma:.4e}"
        );

        // drag: with the noise negligible and unit velocity, S settles
        // on the Markovian friction -2 Lambda / Gamma
        let quiet = KernelStep::new(lambda, gamma, 0.5 * dt, 1e30);
        let mut s = 0.0;
        for _ in 0..10_000 {
            s = quiet.advance(s, 1.0, 0.0);
        }
        let want = -2.0 * lambda / gamma;
        assert!(
            (s - want).abs() < 1e-10 * want.abs(),
            "drag fixed point {s:.6e} vs -eta = {want:.6e}"
        );
    }

    #[test]
    fn surface_sampling_obeys_equipartition() {
        let omega_c = cm1_to_hartree(1142.0);
        let mut cfg = base_config(well(), 1.04e-6);
        cfg.cavity = Some(ClassicalCavity {
            omega_c,
            eta_c: 0.00125,
            loss: Some(kernel(2.0e-7, cm1_to_hartree(150.0))),
        });
        let beta = cfg.beta();
        let n = 30_000;

        let (mut p2, mut q2, mut pc2, mut sb2, mut sc2, mut p1) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for traj in 0..n {
            let st = sample_dividing_surface(&cfg, traj).unwrap();
            assert_eq!(st.r, 0.0);
            p1 += st.p;
            p2 += st.p * st.p;
            q2 += st.q_c * st.q_c;
            pc2 += st.p_c * st.p_c;
            sb2 += st.s_b * st.s_b;
            sc2 += st.s_c * st.s_c;
        }
        let nf = n as f64;
        // relative error of a sampled second moment is sqrt(2/n)
        let band = 3.0 * (2.0 / nf).sqrt();
        let check = |name: &str, got: f64, want: f64| {
            assert!(
                (got / want - 1.0).abs() < band,
                "{name}: {got:.4e} vs {want:.4e}"
            );
        };
        check("<P^2>", p2 / nf, 1.0 / beta);
        check("<q_c^2>", q2 / nf, 1.0 / (beta * omega_c * omega_c));
        check("<p_c^2>", pc2 / nf, 1.0 / beta);
        check("<S_B^2>", sb2 / nf, 2.0 * 1.04e-6 / (beta * cfg.dt));
        check("<S_c^2>", sc2 / nf, 2.0 * 2.0e-7 / (beta * cfg.dt));
        let se_p = (1.0 / (beta * nf)).sqrt();
        assert!((p1 / nf).abs() < 3.0 * se_p, "<P> = {:.2e}", p1 / nf);
    }

    #[test]
    fn langevin_dynamics_thermalizes_the_harmonic_trap() {
        // released from a delta sheet at R = 0, the ensemble must relax
        // to the classical Boltzmann distribution; this closes the loop
        // between drag, noise, and the Verlet kicks in one observable.
        // Energy flows at Re zeta_hat(i omega) = eta Gamma^2 / (omega^2
        // + Gamma^2), so the kernel must be fast or the horizon is never
        // long enough
        let omega = cm1_to_hartree(1000.0);
        let gamma = cm1_to_hartree(1000.0);
        let mut cfg = base_config(Potential::Harmonic { omega }, lambda_for(0.5 * omega, gamma));
        cfg.solvent = kernel(lambda_for(0.5 * omega, gamma), gamma);
        cfg.t_final = 20_000.0;
        cfg.n_traj = 4000;
        let beta = cfg.beta();

        let out = propagate_ensemble(&cfg).unwrap();
        assert_eq!(out.n_traj_used, 4000);
        assert_eq!(out.n_unstable, 0);
        let last = out.times.len() - 1;

        let var_want = 1.0 / (beta * omega * omega);
        let n = out.n_traj_used as f64;
        let band_var = 3.0 * (2.0 / n).sqrt() * var_want;
        assert!(
            (out.var_r[last] - var_want).abs() < band_var,
            "position variance {:.4e} vs thermal {var_want:.4e}",
            out.var_r[last]
        );

        let e_want = 1.0 / beta;
        let band_e = 3.0 * e_want / n.sqrt();
        assert!(
            (out.mean_energy[last] - e_want).abs() < band_e,
            "mean energy {:.4e} vs kT = {e_want:.4e}",
            out.mean_energy[last]
        );

        let se_r = (var_want / n).sqrt();
        assert!(out.mean_r[last].abs() < 3.0 * se_r);
    }

    #[test]
    fn free_particles_never_recross() {
        let mut cfg = base_config(Potential::Free, 0.0);
        cfg.n_traj = 512;
        cfg.t_final = 20_000.0;
        cfg.dt = 20.0;
        let out = transmission_coefficient(&cfg).unwrap();
        assert_eq!(out.n_traj_used, 512);
        for (&t, &k) in out.times.iter().zip(&out.kappa_t) {
            assert!((k - 1.0).abs() < 1e-14, "kappa({t}) = {k}");
        }
        let plat = out.plateau.expect("a constant curve is all plateau");
        assert!((plat.kappa - 1.0).abs() < 1e-14);
    }

    #[test]
    fn flux_side_runs_are_bitwise_reproducible() {
        let mut cfg = base_config(well(), 1.04e-6);
        cfg.cavity = Some(ClassicalCavity {
            omega_c: cm1_to_hartree(1142.0),
            eta_c: 0.00125,
            loss: Some(kernel(2.0e-7, cm1_to_hartree(150.0))),
        });
        cfg.n_traj = 128;
        cfg.t_final = 3_000.0;

        let a = transmission_coefficient(&cfg).unwrap();
        let b = transmission_coefficient(&cfg).unwrap();
        assert_eq!(a.n_traj_used, b.n_traj_used);
        for k in 0..a.kappa_t.len() {
            assert_eq!(a.kappa_t[k].to_bits(), b.kappa_t[k].to_bits());
            assert_eq!(a.standard_error[k].to_bits(), b.standard_error[k].to_bits());
        }

        cfg.seed = 8;
        let c = transmission_coefficient(&cfg).unwrap();
        assert!(
            (0..a.kappa_t.len()).any(|k| a.kappa_t[k].to_bits() != c.kappa_t[k].to_bits()),
            "a new seed must move the estimate"
        );
    }

    #[test]
    fn blown_up_trajectories_are_reported_not_averaged() {
        // omega_b dt >> 2 makes Verlet unconditionally unstable on the
        // well, so every trajectory must be flagged
        let mut cfg = base_config(well(), 1.04e-6);
        cfg.dt = 3000.0;
        cfg.t_final = 300_000.0;
        let err = propagate_trajectory(&cfg, PhasePoint::at_rest(10.0), 0, 100).unwrap_err();
        assert!(matches!(err, ClassicalError::Unstable { .. }), "{err}");

        cfg.n_traj = 16;
        let err = transmission_coefficient(&cfg).unwrap_err();
        assert!(matches!(err, ClassicalError::InsufficientStatistics(_)), "{err}");
    }

    #[test]
    fn strong_friction_plateau_matches_grote_hynes() {
        // a fast kernel keeps two approximations honest at once: the
        // parabolic-barrier assumption behind Grote-Hynes, and the
        // one-step-collapsed width the surface sampler gives the
        // auxiliary forces, which relaxes away within 1/Gamma and must
        // not overlap the reactive decision
        let omega_b = cm1_to_hartree(1000.0);
        let gamma = cm1_to_hartree(4000.0);
        let mut cfg = base_config(well(), 0.0);
        cfg.solvent = kernel(lambda_for(5.0 * omega_b, gamma), gamma);
        cfg.dt = 5.0;
        cfg.t_final = 12_000.0;
        cfg.n_traj = 20_000;

        let out = transmission_coefficient(&cfg).unwrap();
        let plat = out.plateau.expect("strong friction plateaus fast");
        let gh = grote_hynes_debye(omega_b, &cfg.solvent).unwrap();
        let gap = (plat.kappa - gh.kappa).abs();
        assert!(
            gap < 3.0 * plat.standard_error,
            "kappa = {:.4} +/- {:.4} vs Grote-Hynes {:.4}",
            plat.kappa,
            plat.standard_error,
            gh.kappa
        );
        // ~1e-2 absolute is what 20k trajectories buy; zero or huge both
        // mean the blocking went wrong
        assert!(
            plat.standard_error > 1e-4 && plat.standard_error < 0.03,
            "error bar degenerate: {:.2e}",
            plat.standard_error
        );
    }

    #[test]
    fn transmission_turns_over_with_friction() {
        // weak coupling cannot carry reaction energy away (recrossings
        // pile up), strong coupling drags the crossing itself; the
        // transmission must peak in between. The kernel is kept fast:
        // a slow kernel starves energy diffusion at the well frequency
        // and shoves the whole turnover off this friction grid
        let omega_b = cm1_to_hartree(1000.0);
        let gamma = cm1_to_hartree(4000.0);
        let tail_mean = |eta: f64| {
            let mut cfg = base_config(well(), 0.0);
            cfg.solvent = kernel(lambda_for(eta, gamma), gamma);
            cfg.t_final = 40_000.0;
            cfg.n_traj = 6000;
            let out = transmission_coefficient(&cfg).unwrap();
            let n = out.kappa_t.len();
            let w = n / 4;
            let kappa = out.kappa_t[n - w..].iter().sum::<f64>() / w as f64;
            let se = out.standard_error[n - w..].iter().sum::<f64>() / w as f64;
            (kappa, se, out.kappa_t[0], out.standard_error[0])
        };
        let (lo, se_lo, first, se_first) = tail_mean(0.02 * omega_b);
        let (mid, se_mid, _, _) = tail_mean(0.5 * omega_b);
        let (hi, se_hi, _, _) = tail_mean(5.0 * omega_b);

        // at 0.02 omega_b the first output lands early enough that no
        // trajectory has recrossed: kappa(0+) = 1
        assert!((first - 1.0).abs() < 3.0 * se_first.max(1e-3), "kappa(0+) = {first}");

        assert!(
            mid - lo > 3.0 * se_mid.hypot(se_lo),
            "no rise from weak friction: {lo:.3} ({se_lo:.3}) vs {mid:.3} ({se_mid:.3})"
        );
        assert!(
            mid - hi > 3.0 * se_mid.hypot(se_hi),
            "no fall to strong friction: {mid:.3} ({se_mid:.3}) vs {hi:.3} ({se_hi:.3})"
        );
    }

    #[test]
    fn error_bars_shrink_like_root_n() {
        let omega_b = cm1_to_hartree(1000.0);
        let gamma = cm1_to_hartree(200.0);
        let mean_se = |n_traj: usize| {
            let mut cfg = base_config(well(), lambda_for(0.5 * omega_b, gamma));
            cfg.t_final = 3_000.0;
            cfg.n_traj = n_traj;
            let out = transmission_coefficient(&cfg).unwrap();
            let n = out.standard_error.len();
            out.standard_error[n / 2..].iter().sum::<f64>() / (n - n / 2) as f64
        };
        let ratio = mean_se(2000) / mean_se(8000);
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "quadrupling trajectories should halve the error, ratio {ratio:.3}"
        );
    }
}
