//! Stationary state of the hierarchy and the linear response spectrum
//! built on top of it.
//!
//! The generator conserves the root trace exactly, so its matrix is
//! singular. We solve for the correction z around a thermal guess x0 by
//! shifting the trace direction: A z = RHS(z) + sigma Tr(z_root) E with
//! E carrying unit root trace. The wanted correction is trace-free, so
//! it solves A z = -RHS(x0), and A is invertible exactly when the
//! stationary state is unique.

use super::rhs::{left_mul_into, propagate_eig, rhs_flat, Tolerances, Workspace};
use super::{HeomSystem, Hierarchy, HierarchyState};
use crate::error::DynamicsError;
use ndarray::Array2;
use num_complex::Complex64 as C64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy)]
pub struct SteadySpec {
    /// Convergence target, relative to the initial defect |RHS(x0)|.
    pub tol: f64,
    /// Krylov dimension per restart cycle.
    pub restart: usize,
    pub max_matvecs: usize,
    /// Trace shift; defaults to the slowest bath decay rate.
    pub shift: Option<f64>,
    /// Relaxation horizon used when the solver stalls; defaults to ten
    /// times the slowest bath correlation time.
    pub fallback_horizon: Option<f64>,
    pub fallback_cycles: usize,
}

impl Default for SteadySpec {
    fn default() -> Self {
        SteadySpec {
            tol: 1e-10,
            restart: 40,
            max_matvecs: 4000,
            shift: None,
            fallback_horizon: None,
            fallback_cycles: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyReport {
    /// |RHS(x)| at the returned state, per element RMS.
    pub residual: f64,
    pub matvecs: usize,
    pub fallback_used: usize,
}

/// Keep the Krylov basis under a memory cap; huge pools fall back to
/// short cycles plus relaxation.
fn effective_restart(requested: usize, len: usize) -> usize {
    const CAP_BYTES: usize = 1 << 31;
    let per_vec = 16 * len;
    let fit = (CAP_BYTES / per_vec).saturating_sub(1);
    requested.min(fit).max(4)
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// One restarted GMRES cycle on the preconditioned operator. `x` holds
/// the accumulated solution and is updated in place. Returns the final
/// residual estimate and the matvecs spent.
fn gmres_cycle(
    apply: &mut impl FnMut(&[C64], &mut [C64]),
    b: &[C64],
    x: &mut [C64],
    m: usize,
    target: f64,
) -> (f64, usize) {
    let len = b.len();
    let mut matvecs = 0usize;

    let mut r = vec![ZERO; len];
    apply(x, &mut r);
    matvecs += 1;
    for e in 0..len {
        r[e] = b[e] - r[e];
    }
    let beta = norm2(&r);
    if beta <= target || beta == 0.0 {
        return (beta, matvecs);
    }

    let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
    let inv = 1.0 / beta;
    v.push(r.iter().map(|&e| e * inv).collect());

    let mut hcols: Vec<Vec<C64>> = Vec::with_capacity(m);
    let mut cs: Vec<f64> = Vec::with_capacity(m);
    let mut sn: Vec<C64> = Vec::with_capacity(m);
    let mut g = vec![ZERO; m + 1];
    g[0] = C64::new(beta, 0.0);

    let mut w = vec![ZERO; len];
    let mut res = beta;
    let mut k_used = 0;
    for j in 0..m {
        apply(&v[j], &mut w);
        matvecs += 1;

        let mut hc = vec![ZERO; j + 2];
        for (i, vi) in v.iter().enumerate() {
            let hij = dot(vi, &w);
            hc[i] = hij;
            for e in 0..len {
                w[e] -= hij * vi[e];
            }
        }
        let hnorm = norm2(&w);
        hc[j + 1] = C64::new(hnorm, 0.0);

        // previously accumulated rotations
        for i in 0..j {
            let t = cs[i] * hc[i] + sn[i] * hc[i + 1];
            hc[i + 1] = -sn[i].conj() * hc[i] + cs[i] * hc[i + 1];
            hc[i] = t;
        }
        // new rotation zeroing the subdiagonal
        let a = hc[j];
        let bb = hc[j + 1];
        let t = (a.norm_sqr() + bb.norm_sqr()).sqrt();
        let (c, s) = if t == 0.0 {
            (1.0, ZERO)
        } else if a.norm() == 0.0 {
            (0.0, bb.conj() / bb.norm())
        } else {
            let phase = a / a.norm();
            (a.norm() / t, phase * bb.conj() / t)
        };
        hc[j] = c * a + s * bb;
        hc[j + 1] = ZERO;
        let gj = g[j];
        g[j] = c * gj + s * g[j + 1];
        g[j + 1] = -s.conj() * gj + c * g[j + 1];
        cs.push(c);
        sn.push(s);
        hcols.push(hc);
        k_used = j + 1;
        res = g[j + 1].norm();

        if hnorm <= 1e-14 * beta || res <= target {
            break;
        }
        let inv = 1.0 / hnorm;
        v.push(w.iter().map(|&e| e * inv).collect());
    }

    // back substitution on the rotated Hessenberg
    let mut y = vec![ZERO; k_used];
    for i in (0..k_used).rev() {
        let mut acc = g[i];
        for k in i + 1..k_used {
            acc -= hcols[k][i] * y[k];
        }
        y[i] = acc / hcols[i][i];
    }
    for (k, yk) in y.iter().enumerate() {
        let vk = &v[k];
        for e in 0..len {
            x[e] += yk * vk[e];
        }
    }
    (res, matvecs)
}

/// Stationary hierarchy state at inverse temperature `beta` (the guess;
/// the result does not depend on it) together with a convergence report.
pub fn steady_state(
    h: &Hierarchy,
    sys: &HeomSystem,
    beta: f64,
    spec: &SteadySpec,
) -> Result<(HierarchyState, SteadyReport), DynamicsError> {
    if h.n_modes() == 0 {
        return Err(DynamicsError::DegenerateNullspace(
            "a closed system conserves every population; there is no unique stationary state"
                .into(),
        ));
    }
    if !(beta > 0.0) {
        return Err(DynamicsError::BadParameter(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    if !(spec.tol > 0.0) || spec.restart == 0 || spec.max_matvecs == 0 {
        return Err(DynamicsError::BadParameter(
            "steady-state solve needs a positive tolerance, restart and budget".into(),
        ));
    }

    let d = h.dim;
    let dd = d * d;
    let len = h.n_ados() * dd;
    let sigma = spec.shift.unwrap_or(h.nu_min);
    if !(sigma > 0.0) {
        return Err(DynamicsError::BadParameter(format!(
            "trace shift must be positive, got {sigma}"
        )));
    }

    let mut ws = Workspace::new(h, sys)?;
    let mut x0 = HierarchyState::zeros(h);
    x0.pool
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(&sys.thermal_root(beta));

    // diagonal of the generator, used as a right preconditioner
    let l0 = sys.liouville.as_slice().expect("liouville not contiguous");
    let decay = h.tables().decay.to_vec();
    let precond: Vec<C64> = (0..len)
        .map(|e| {
            let a = e / dd;
            l0[e % dd] - decay[a] - sigma
        })
        .collect();

    let mut b = vec![ZERO; len];
    let mut total_matvecs = 0usize;
    let mut fallback_used = 0usize;

    let defect = |x0: &HierarchyState, ws: &mut Workspace, b: &mut [C64]| {
        rhs_flat(h, sys, x0.pool.as_slice().unwrap(), ws, b);
        for e in b.iter_mut() {
            *e = -*e;
        }
    };
    defect(&x0, &mut ws, &mut b);
    let scale = norm2(&b);
    let target = spec.tol * scale.max(f64::MIN_POSITIVE);
    let m = effective_restart(spec.restart, len);

    let mut z = vec![ZERO; len];
    let mut res = scale;
    if scale > 0.0 {
        let mut zin = vec![ZERO; len];
        loop {
            let mut apply = |u: &[C64], out: &mut [C64]| {
                for e in 0..len {
                    zin[e] = u[e] / precond[e];
                }
                rhs_flat(h, sys, &zin, &mut ws, out);
                let mut tr = ZERO;
                for i in 0..d {
                    tr += zin[i * d + i];
                }
                let shift = tr * (sigma / d as f64);
                for i in 0..d {
                    out[i * d + i] += shift;
                }
            };

            while total_matvecs < spec.max_matvecs {
                let before = res;
                let (r, used) = gmres_cycle(&mut apply, &b, &mut z, m, target);
                total_matvecs += used;
                res = r;
                // a cycle that recovers less than ten percent has stalled
                if res <= target || res > 0.9 * before {
                    break;
                }
            }
            drop(apply);

            if res <= target
                || fallback_used >= spec.fallback_cycles
                || total_matvecs >= spec.max_matvecs
            {
                break;
            }
            // stalled: fold the current iterate into the guess, relax it
            // toward the attractor for a while, and restart the solve
            fallback_used += 1;
            for e in 0..len {
                zin[e] = z[e] / precond[e];
            }
            {
                let flat = x0.pool.as_slice_mut().unwrap();
                for e in 0..len {
                    flat[e] += zin[e];
                }
            }
            renormalize_root(&mut x0, d)?;
            let horizon = spec.fallback_horizon.unwrap_or(10.0 / h.nu_min);
            let relax_tol = Tolerances { rtol: 1e-8, atol: 1e-12, ..Default::default() };
            let t_end = x0.time + horizon;
            propagate_eig(h, sys, &mut x0, t_end, 2, &[], &relax_tol)?;
            defect(&x0, &mut ws, &mut b);
            z.iter_mut().for_each(|e| *e = ZERO);
            res = norm2(&b);
            if total_matvecs >= spec.max_matvecs {
                break;
            }
        }

        if res > target {
            return Err(DynamicsError::SteadyStateDiverged {
                residual: res / scale.max(f64::MIN_POSITIVE),
                iters: total_matvecs,
            });
        }
        let flat = x0.pool.as_slice_mut().unwrap();
        for e in 0..len {
            flat[e] += z[e] / precond[e];
        }
    }

    renormalize_root(&mut x0, d)?;
    defect(&x0, &mut ws, &mut b);
    let true_res = norm2(&b) / (len as f64).sqrt();
    Ok((
        x0,
        SteadyReport {
            residual: true_res,
            matvecs: total_matvecs,
            fallback_used,
        },
    ))
}

fn renormalize_root(x: &mut HierarchyState, d: usize) -> Result<(), DynamicsError> {
    let tr = {
        let flat = x.pool.as_slice().unwrap();
        let mut tr = ZERO;
        for i in 0..d {
            tr += flat[i * d + i];
        }
        tr
    };
    if tr.norm() < 0.1 {
        return Err(DynamicsError::DegenerateNullspace(format!(
            "stationary candidate lost its trace (Tr = {tr}); the hierarchy has no \
             normalizable fixed point at these parameters"
        )));
    }
    let flat = x.pool.as_slice_mut().unwrap();
    for e in flat.iter_mut() {
        *e /= tr;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub omega: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Length of the propagated response window, in au of time.
    pub window: f64,
    /// Exponential apodization time constant applied before the
    /// transform.
    pub apodization: f64,
    pub n_samples: usize,
}

/// Equilibrium dipole response: propagate mu applied to the stationary
/// hierarchy and cosine-transform the fluctuating part of
/// Tr[mu X(t)]. Peaks sit at the transition frequencies the dipole can
/// reach, broadened by the bath.
pub fn dipole_spectrum(
    h: &Hierarchy,
    sys: &HeomSystem,
    steady: &HierarchyState,
    omega: &[f64],
    window: f64,
    n_samples: usize,
    tol: &Tolerances,
) -> Result<SpectrumResult, DynamicsError> {
    if !(window > 0.0) || n_samples < 8 {
        return Err(DynamicsError::BadParameter(
            "spectrum needs a positive window and at least eight samples".into(),
        ));
    }
    if omega.is_empty() {
        return Err(DynamicsError::BadParameter("empty frequency grid".into()));
    }
    let d = h.dim;
    // stored operators already live in the eigenbasis
    let mu = sys.dipole.clone();
    let mu_flat = mu.as_slice().expect("dipole not contiguous");

    // <mu> in the stationary state, for the fluctuation subtraction
    let root = steady.root();
    let mut mean_mu = ZERO;
    for i in 0..d {
        for j in 0..d {
            mean_mu += mu[[i, j]] * root[[j, i]];
        }
    }

    let mut probe = HierarchyState::zeros(h);
    probe.time = steady.time;
    left_mul_into(
        mu_flat,
        d,
        steady.pool.as_slice().expect("pool not contiguous"),
        probe.pool.as_slice_mut().expect("pool not contiguous"),
    );

    let t0 = probe.time;
    let traj = propagate_eig(h, sys, &mut probe, t0 + window, n_samples, &[mu.clone()], tol)?;

    let c_inf = mean_mu * mean_mu;
    let tau = window / 3.0;
    let dt = window / (n_samples - 1) as f64;
    let mut intensity = Vec::with_capacity(omega.len());
    for &w in omega {
        let mut acc = 0.0;
        for (k, (ts, ms)) in traj.times.iter().zip(&traj.observables[0]).enumerate() {
            let t = ts - t0;
            let weight = if k == 0 || k == n_samples - 1 { 0.5 } else { 1.0 };
            let damped = (ms - c_inf) * (-t / tau).exp();
            acc += weight * (C64::from_polar(1.0, w * t) * damped).re;
        }
        intensity.push(acc * dt);
    }
    Ok(SpectrumResult {
        omega: omega.to_vec(),
        intensity,
        window,
        apodization: tau,
        n_samples,
    })
}
