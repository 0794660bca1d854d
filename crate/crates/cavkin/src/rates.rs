//! From population dynamics to rate constants.
//!
//! A reactive trace relaxes toward equilibrium as P_P(t) -> <P_P>. The
//! flux-over-remaining-distance ratio
//!
//!   k(t) = dP_P/dt / (1 - P_P(t)/<P_P>)
//!
//! settles onto a plateau once the barrier-crossing transient has died;
//! the plateau value is the forward rate constant and detailed balance
//! fixes the backward one. Everything here is pure post-processing on
//! immutable traces.

use crate::error::{DynamicsError, RateError};
use crate::heom::{HeomSystem, Hierarchy, HierarchyState, TruncationSpec};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub p_r: f64,
    pub p_p: f64,
}

/// Reactant/product populations on a uniform time grid together with
/// their equilibrium targets.
#[derive(Debug, Clone)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    pub p_r: Vec<f64>,
    pub p_p: Vec<f64>,
    pub equilibrium: Equilibrium,
}

impl PopulationTrace {
    /// Validates completeness: the two projectors partition the space,
    /// so the populations must sum to one and stay inside [0, 1] up to
    /// integrator tolerance.
    pub fn new(
        times: Vec<f64>,
        p_r: Vec<f64>,
        p_p: Vec<f64>,
        equilibrium: Equilibrium,
    ) -> Result<Self, RateError> {
        if times.len() != p_r.len() || times.len() != p_p.len() {
            return Err(RateError::BadInput(format!(
                "length mismatch: {} times, {} reactant, {} product samples",
                times.len(),
                p_r.len(),
                p_p.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RateError::BadInput("times must be strictly ascending".into()));
        }
        for k in 0..times.len() {
            if (p_r[k] + p_p[k] - 1.0).abs() > 1e-10 {
                return Err(RateError::BadInput(format!(
                    "populations do not partition at t = {}: P_R + P_P = {}",
                    times[k],
                    p_r[k] + p_p[k]
                )));
            }
            for p in [p_r[k], p_p[k]] {
                if !(-1e-10..=1.0 + 1e-10).contains(&p) {
                    return Err(RateError::BadInput(format!(
                        "population {p} out of range at t = {}",
                        times[k]
                    )));
                }
            }
        }
        Ok(PopulationTrace { times, p_r, p_p, equilibrium })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    UncorrelatedThermal,
    CorrelatedSteadyState,
}

/// What produced the trace: carried through so a rate is never quoted
/// without the truncation and tolerances that made it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Convergence {
    pub truncation: TruncationSpec,
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Debug, Clone)]
pub struct RateResult {
    /// Plateau-mean forward rate constant, 1/au of time.
    pub kappa_fwd: f64,
    /// Backward rate from detailed balance against the equilibrium
    /// populations.
    pub kappa_bwd: f64,
    pub plateau_window: (f64, f64),
    /// The full instantaneous-rate diagnostic k(t) on the interior grid.
    pub instantaneous_rate: Vec<(f64, f64)>,
    pub initial_condition: InitialCondition,
    pub convergence: Convergence,
}

/// Factorized reactant start: the system part is the symmetrized
/// projected Boltzmann matrix e^{-beta H/2} (1-h) e^{-beta H/2} / Z_R,
/// the bath thermal and uncorrelated (all higher ADOs zero).
pub fn initial_uncorrelated(
    h: &Hierarchy,
    sys: &HeomSystem,
    beta: f64,
) -> Result<HierarchyState, DynamicsError> {
    if !(beta > 0.0) {
        return Err(DynamicsError::BadParameter(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    let d = sys.dim;
    let e0 = sys.energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = sys
        .energies
        .iter()
        .map(|&e| (-0.5 * beta * (e - e0)).exp())
        .collect();
    // reactant projector in the eigenbasis
    let mut m = Array2::<C64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let q = if i == j { C64::new(1.0, 0.0) - sys.side[[i, j]] } else { -sys.side[[i, j]] };
            m[[i, j]] = q * (w[i] * w[j]);
        }
    }
    let z_r: f64 = (0..d).map(|i| m[[i, i]].re).sum();
    if z_r <= 1e-14 {
        return Err(DynamicsError::BadParameter(format!(
            "reactant partition function vanished (Z_R = {z_r:.3e}); the projector \
             leaves no thermally occupied reactant state"
        )));
    }
    m.mapv_inplace(|v| v / z_r);

    let mut state = HierarchyState::zeros(h);
    state.pool.index_axis_mut(ndarray::Axis(0), 0).assign(&m);
    Ok(state)
}

/// Correlated reactant start: project the solved stationary hierarchy
/// onto the reactant side from the right and renormalize by the root
/// reactant weight. Bath correlations survive in the higher ADOs.
pub fn initial_correlated(
    steady: &HierarchyState,
    h: &Hierarchy,
    sys: &HeomSystem,
) -> Result<HierarchyState, DynamicsError> {
    let d = sys.dim;
    if steady.pool.dim() != (h.n_ados(), d, d) {
        return Err(DynamicsError::BadParameter(format!(
            "stationary state shape {:?} does not match the hierarchy",
            steady.pool.dim()
        )));
    }
    let mut q = Array2::<C64>::eye(d);
    q -= &sys.side;

    let root = steady.root();
    let weight = {
        let prod = root.to_owned().dot(&q);
        (0..d).map(|i| prod[[i, i]].re).sum::<f64>()
    };
    if weight <= 1e-12 {
        return Err(DynamicsError::BadParameter(format!(
            "stationary reactant weight vanished (Tr[rho_ss (1-h)] = {weight:.3e})"
        )));
    }

    let mut state = HierarchyState::zeros(h);
    state.time = steady.time;
    for (a, ado) in steady.pool.outer_iter().enumerate() {
        let projected = ado.to_owned().dot(&q) / C64::new(weight, 0.0);
        state
            .pool
            .index_axis_mut(ndarray::Axis(0), a)
            .assign(&projected);
    }
    Ok(state)
}

/// Equilibrium product weight Tr[h rho_ss] of a stationary root.
pub fn equilibrium_populations(steady: &HierarchyState, sys: &HeomSystem) -> Equilibrium {
    let root = steady.root();
    let prod = root.to_owned().dot(&sys.side);
    let p_p: f64 = (0..sys.dim).map(|i| prod[[i, i]].re).sum();
    Equilibrium { p_r: 1.0 - p_p, p_p }
}

/// Interior-grid instantaneous rate k(t) by the fourth-order centered
/// five-point derivative; the two samples at each end are dropped.
pub fn instantaneous_rate(trace: &PopulationTrace) -> Result<Vec<(f64, f64)>, RateError> {
    let n = trace.times.len();
    if n < 5 {
        return Err(RateError::TooShort { n, min: 5 });
    }
    let p_eq = trace.equilibrium.p_p;
    if p_eq <= 0.0 {
        return Err(RateError::BadInput(format!(
            "equilibrium product population must be positive, got {p_eq}"
        )));
    }
    let dt = trace.times[1] - trace.times[0];
    for w in trace.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(RateError::BadInput(
                "instantaneous rates need a uniform time grid".into(),
            ));
        }
    }
    let p = &trace.p_p;
    let mut out = Vec::with_capacity(n - 4);
    for i in 2..n - 2 {
        let dp = (-p[i + 2] + 8.0 * p[i + 1] - 8.0 * p[i - 1] + p[i - 2]) / (12.0 * dt);
        let denom = 1.0 - p[i] / p_eq;
        if denom.abs() < 1e-12 {
            // the trace touched equilibrium exactly; flux over zero
            // distance carries no information here
            out.push((trace.times[i], f64::NAN));
        } else {
            out.push((trace.times[i], dp / denom));
        }
    }
    Ok(out)
}

const PLATEAU_MIN_SAMPLES: usize = 10;
const PLATEAU_BAND: f64 = 0.02;

/// Longest window, searched from the end of the trace backwards, in
/// which k(t) stays within two percent of its window mean.
pub(crate) fn find_plateau(k: &[(f64, f64)]) -> Option<(usize, usize)> {
    let n = k.len();
    let valid = |i: usize| k[i].1.is_finite();
    let mut best: Option<(usize, usize)> = None;
    let mut end = n;
    while end >= PLATEAU_MIN_SAMPLES {
        let j = end - 1;
        if !valid(j) {
            end -= 1;
            continue;
        }
        // grow the window [i, j] backwards while it stays in band
        let mut i = j;
        let mut sum = k[j].1;
        while i > 0 && valid(i - 1) {
            let cand_sum = sum + k[i - 1].1;
            let cand_len = (j - i + 2) as f64;
            let mean = cand_sum / cand_len;
            let tol = PLATEAU_BAND * mean.abs();
            let ok = (i - 1..=j).all(|m| (k[m].1 - mean).abs() <= tol);
            if !ok {
                break;
            }
            i -= 1;
            sum = cand_sum;
        }
        let width = j - i + 1;
        if width >= PLATEAU_MIN_SAMPLES
            && best.map(|(bi, bj)| width > bj - bi + 1).unwrap_or(true)
        {
            best = Some((i, j));
        }
        end -= 1;
        if let Some((bi, bj)) = best {
            if end <= bj - bi + 1 {
                // no window fitting left of here can beat the best
                break;
            }
        }
    }
    best
}

/// Plateau rate constants from a relaxing population trace.
pub fn extract_rate(
    trace: &PopulationTrace,
    initial_condition: InitialCondition,
    convergence: Convergence,
) -> Result<RateResult, RateError> {
    let n = trace.times.len();
    if n < PLATEAU_MIN_SAMPLES + 4 {
        return Err(RateError::TooShort { n, min: PLATEAU_MIN_SAMPLES + 4 });
    }
    let k = instantaneous_rate(trace)?;
    let (i, j) = find_plateau(&k).ok_or_else(|| {
        RateError::NoPlateau(format!(
            "no window of {PLATEAU_MIN_SAMPLES}+ samples varies under {:.0}%; the \
             transient has not decayed within the propagated horizon. Inspect the \
             instantaneous-rate trace and extend the run.",
            PLATEAU_BAND * 100.0
        ))
    })?;

    let kappa_fwd = k[i..=j].iter().map(|&(_, v)| v).sum::<f64>() / (j - i + 1) as f64;
    let eq = trace.equilibrium;
    if eq.p_p <= 0.0 || eq.p_r <= 0.0 {
        return Err(RateError::BadInput(format!(
            "detailed balance needs both equilibrium populations positive, got \
             P_R = {}, P_P = {}",
            eq.p_r, eq.p_p
        )));
    }
    let kappa_bwd = kappa_fwd * eq.p_r / eq.p_p;
    Ok(RateResult {
        kappa_fwd,
        kappa_bwd,
        plateau_window: (k[i].0, k[j].0),
        instantaneous_rate: k,
        initial_condition,
        convergence,
    })
}
