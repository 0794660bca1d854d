//! Right-hand side of the rescaled hierarchy and the embedded
//! Runge-Kutta propagator. Everything works on the flattened ADO pool;
//! each ADO block is a contiguous dim x dim matrix in the eigenbasis.

use super::{HeomSystem, Hierarchy, HierarchyState};
use crate::error::DynamicsError;
use ndarray::{Array2, Array3};
use num_complex::Complex64 as C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Scratch buffers reused across stage evaluations: left and right
/// products of every coupling operator with the whole pool.
pub(crate) struct Workspace {
    sp: Vec<Vec<C64>>,
    ps: Vec<Vec<C64>>,
    n_baths: usize,
}

impl Workspace {
    pub(crate) fn new(h: &Hierarchy, sys: &HeomSystem) -> Result<Self, DynamicsError> {
        let n_baths = h.modes.iter().map(|m| m.bath + 1).max().unwrap_or(0);
        if n_baths > sys.couplings.len() {
            return Err(DynamicsError::BadParameter(format!(
                "hierarchy references {n_baths} coupling operators, system has {}",
                sys.couplings.len()
            )));
        }
        let len = h.n_ados() * h.dim * h.dim;
        Ok(Workspace {
            sp: vec![vec![ZERO; len]; n_baths],
            ps: vec![vec![ZERO; len]; n_baths],
            n_baths,
        })
    }
}

/// out = s . y per ADO block.
pub(crate) fn left_mul_into(s: &[C64], d: usize, y: &[C64], out: &mut [C64]) {
    let dd = d * d;
    for (yb, ob) in y.chunks_exact(dd).zip(out.chunks_exact_mut(dd)) {
        ob.fill(ZERO);
        for i in 0..d {
            for k in 0..d {
                let a = s[i * d + k];
                let row = &yb[k * d..k * d + d];
                let orow = &mut ob[i * d..i * d + d];
                for j in 0..d {
                    orow[j] += a * row[j];
                }
            }
        }
    }
}

/// out = y . s per ADO block.
fn right_mul_into(s: &[C64], d: usize, y: &[C64], out: &mut [C64]) {
    let dd = d * d;
    for (yb, ob) in y.chunks_exact(dd).zip(out.chunks_exact_mut(dd)) {
        ob.fill(ZERO);
        for i in 0..d {
            for k in 0..d {
                let a = yb[i * d + k];
                let row = &s[k * d..k * d + d];
                let orow = &mut ob[i * d..i * d + d];
                for j in 0..d {
                    orow[j] += a * row[j];
                }
            }
        }
    }
}

/// Derivative of the whole pool under the rescaled hierarchy. The local
/// part is elementwise (the eigenbasis makes the commutator diagonal);
/// neighbor terms are table-driven accumulations of the precomputed
/// ladder products.
pub(crate) fn rhs_flat(
    h: &Hierarchy,
    sys: &HeomSystem,
    y: &[C64],
    ws: &mut Workspace,
    out: &mut [C64],
) {
    let d = h.dim;
    let dd = d * d;
    let nm = h.n_modes();
    let t = h.tables();

    for b in 0..ws.n_baths {
        let s = sys.couplings[b].as_slice().expect("coupling not contiguous");
        left_mul_into(s, d, y, &mut ws.sp[b]);
        right_mul_into(s, d, y, &mut ws.ps[b]);
    }

    let l0 = sys.liouville.as_slice().expect("liouville not contiguous");
    for (a, (yb, ob)) in y.chunks_exact(dd).zip(out.chunks_exact_mut(dd)).enumerate() {
        let g = t.decay[a];
        for e in 0..dd {
            ob[e] = (l0[e] - g) * yb[e];
        }
        for k in 0..nm {
            let slot = a * nm + k;
            let bath = h.modes[k].bath;
            let u = t.up[slot];
            if u != super::NO_NEIGHBOR {
                let cu = t.up_coef[slot];
                let sp = &ws.sp[bath][u as usize * dd..(u as usize + 1) * dd];
                let ps = &ws.ps[bath][u as usize * dd..(u as usize + 1) * dd];
                for e in 0..dd {
                    ob[e] += cu * (sp[e] - ps[e]);
                }
            }
            let dn = t.down[slot];
            if dn != super::NO_NEIGHBOR {
                let cc = t.down_c[slot];
                let cb = t.down_cb[slot];
                let sp = &ws.sp[bath][dn as usize * dd..(dn as usize + 1) * dd];
                let ps = &ws.ps[bath][dn as usize * dd..(dn as usize + 1) * dd];
                for e in 0..dd {
                    ob[e] += cc * sp[e] + cb * ps[e];
                }
            }
        }
    }
}

/// One full derivative evaluation, allocating its own scratch. Intended
/// for checks and small instances; propagation reuses buffers instead.
pub fn heom_rhs(
    h: &Hierarchy,
    sys: &HeomSystem,
    state: &HierarchyState,
) -> Result<Array3<C64>, DynamicsError> {
    check_shapes(h, sys, state)?;
    let mut ws = Workspace::new(h, sys)?;
    let mut out = Array3::zeros(state.pool.raw_dim());
    rhs_flat(
        h,
        sys,
        state.pool.as_slice().expect("pool not contiguous"),
        &mut ws,
        out.as_slice_mut().expect("pool not contiguous"),
    );
    Ok(out)
}

fn check_shapes(
    h: &Hierarchy,
    sys: &HeomSystem,
    state: &HierarchyState,
) -> Result<(), DynamicsError> {
    if sys.dim != h.dim {
        return Err(DynamicsError::BadParameter(format!(
            "system dimension {} does not match hierarchy dimension {}",
            sys.dim, h.dim
        )));
    }
    if state.pool.dim() != (h.n_ados(), h.dim, h.dim) {
        return Err(DynamicsError::BadParameter(format!(
            "state pool shape {:?} does not match hierarchy ({}, {}, {})",
            state.pool.dim(),
            h.n_ados(),
            h.dim,
            h.dim
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-12, max_steps: 2_000_000 }
    }
}

/// Observables sampled on a uniform grid, with the conservation metrics
/// every run should be judged by.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per requested observable: Tr[A rho_root(t)].
    pub observables: Vec<Vec<C64>>,
    /// Re Tr[rho_root] per sample.
    pub trace: Vec<f64>,
    pub trace_drift: f64,
    pub hermiticity_drift: f64,
    pub n_steps: usize,
}

// Dormand-Prince 5(4) tableau; the last stage is first-same-as-last.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const ERR_W: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Propagate to `t_final`, recording `Tr[A rho_root]` for each site-basis
/// observable on `n_samples` uniformly spaced times including both ends.
pub fn propagate(
    h: &Hierarchy,
    sys: &HeomSystem,
    state: &mut HierarchyState,
    t_final: f64,
    n_samples: usize,
    observables: &[Array2<C64>],
    tol: &Tolerances,
) -> Result<Trajectory, DynamicsError> {
    let obs_eig: Vec<Array2<C64>> = observables.iter().map(|o| sys.to_eigenbasis(o)).collect();
    propagate_eig(h, sys, state, t_final, n_samples, &obs_eig, tol)
}

/// Same as `propagate` but with observables already in the eigenbasis.
pub(crate) fn propagate_eig(
    h: &Hierarchy,
    sys: &HeomSystem,
    state: &mut HierarchyState,
    t_final: f64,
    n_samples: usize,
    obs_eig: &[Array2<C64>],
    tol: &Tolerances,
) -> Result<Trajectory, DynamicsError> {
    check_shapes(h, sys, state)?;
    if n_samples < 2 {
        return Err(DynamicsError::BadParameter(
            "need at least two sample points (start and end)".into(),
        ));
    }
    if !(t_final > state.time) {
        return Err(DynamicsError::BadParameter(format!(
            "t_final {t_final} must exceed the state time {}",
            state.time
        )));
    }
    if !(tol.rtol > 0.0) || !(tol.atol >= 0.0) {
        return Err(DynamicsError::BadParameter(format!(
            "tolerances must be positive, got rtol {} atol {}",
            tol.rtol, tol.atol
        )));
    }

    let d = h.dim;
    let dd = d * d;
    let len = h.n_ados() * dd;
    let t0 = state.time;
    let dt_sample = (t_final - t0) / (n_samples - 1) as f64;

    let mut ws = Workspace::new(h, sys)?;
    let y = state.pool.as_slice_mut().expect("pool not contiguous");
    let mut stages: Vec<Vec<C64>> = vec![vec![ZERO; len]; 7];
    let mut ytmp = vec![ZERO; len];

    let mut traj = Trajectory {
        times: Vec::with_capacity(n_samples),
        observables: vec![Vec::with_capacity(n_samples); obs_eig.len()],
        trace: Vec::with_capacity(n_samples),
        trace_drift: 0.0,
        hermiticity_drift: 0.0,
        n_steps: 0,
    };
    let mut defects = Vec::with_capacity(n_samples);
    record(&mut traj, &mut defects, t0, y, d, obs_eig);

    // local rate scale for the very first step guess; the controller
    // takes over immediately
    let rate = sys
        .liouville
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max)
        + h.tables().decay.iter().map(|v| v.norm()).fold(0.0f64, f64::max)
        + h.modes.iter().map(|m| m.c.norm().sqrt()).sum::<f64>();
    let mut dt = (0.5 / rate.max(1e-300)).min(dt_sample);

    let mut t = t0;
    let mut fsal_valid = false;
    for sample in 1..n_samples {
        let t_target = t0 + sample as f64 * dt_sample;
        while t < t_target {
            let remaining = t_target - t;
            if remaining < 1e-12 * t_target.abs().max(1.0) {
                // roundoff sliver left over from clipping; not a real step
                t = t_target;
                break;
            }
            let clipped = dt.min(remaining);
            let floor = 1e-14 * t_target.abs().max(1.0);
            if clipped < floor {
                return Err(DynamicsError::StepUnderflow { t, dt: clipped, min: floor });
            }
            if traj.n_steps >= tol.max_steps {
                return Err(DynamicsError::StepBudgetExhausted { t, steps: traj.n_steps });
            }

            if !fsal_valid {
                let (head, tail) = stages.split_at_mut(1);
                rhs_flat(h, sys, y, &mut ws, &mut head[0]);
                let _ = tail;
                fsal_valid = true;
            }
            for s in 1..7 {
                for e in 0..len {
                    let mut acc = ZERO;
                    for (j, stage) in stages.iter().enumerate().take(s) {
                        let a = A[s - 1][j];
                        if a != 0.0 {
                            acc += stage[e] * a;
                        }
                    }
                    ytmp[e] = y[e] + acc * clipped;
                }
                let (done, rest) = stages.split_at_mut(s);
                let _ = done;
                rhs_flat(h, sys, &ytmp, &mut ws, &mut rest[0]);
            }
            // stage 7 was evaluated at the fifth-order solution itself
            let err = root_error_norm(&stages, clipped, y, &ytmp, dd, tol);
            traj.n_steps += 1;

            if err.is_finite() && err <= 1.0 {
                y.copy_from_slice(&ytmp);
                stages.swap(0, 6);
                t += clipped;
                let grow = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
                dt = clipped * grow.clamp(0.2, 5.0);
            } else {
                fsal_valid = true; // stage 0 still holds f(t, y)
                if !err.is_finite() {
                    let probe = y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite());
                    if probe {
                        return Err(DynamicsError::NonFinite { t });
                    }
                    dt = clipped * 0.2;
                } else {
                    dt = clipped * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                }
            }
        }
        record(&mut traj, &mut defects, t, y, d, obs_eig);
    }
    state.time = t;

    let tr0 = traj.trace[0];
    traj.trace_drift = traj
        .trace
        .iter()
        .map(|&x| (x - tr0).abs())
        .fold(0.0f64, f64::max);
    // drift is measured against the defect the caller started with, so a
    // deliberately non-Hermitian probe state (dipole response) does not
    // register as error
    let d0 = defects[0];
    traj.hermiticity_drift = defects
        .iter()
        .map(|&x| (x - d0).max(0.0))
        .fold(0.0f64, f64::max);
    Ok(traj)
}

/// RMS error over the root block, weighted elementwise by
/// atol + rtol max(|old|, |new|).
fn root_error_norm(
    stages: &[Vec<C64>],
    dt: f64,
    y_old: &[C64],
    y_new: &[C64],
    dd: usize,
    tol: &Tolerances,
) -> f64 {
    let mut acc = 0.0f64;
    for e in 0..dd {
        let mut err = ZERO;
        for (w, stage) in ERR_W.iter().zip(stages.iter()) {
            if *w != 0.0 {
                err += stage[e] * *w;
            }
        }
        let scale = tol.atol + tol.rtol * y_old[e].norm().max(y_new[e].norm());
        let r = err.norm() * dt / scale;
        acc += r * r;
    }
    (acc / dd as f64).sqrt()
}

fn record(
    traj: &mut Trajectory,
    defects: &mut Vec<f64>,
    t: f64,
    y: &[C64],
    d: usize,
    obs_eig: &[Array2<C64>],
) {
    let root = &y[..d * d];
    traj.times.push(t);
    for (o, series) in obs_eig.iter().zip(traj.observables.iter_mut()) {
        // Tr[A rho] = sum_ij A[i][j] rho[j][i]
        let os = o.as_slice().expect("observable not contiguous");
        let mut v = ZERO;
        for i in 0..d {
            for j in 0..d {
                v += os[i * d + j] * root[j * d + i];
            }
        }
        series.push(v);
    }
    let mut tr = ZERO;
    for i in 0..d {
        tr += root[i * d + i];
    }
    traj.trace.push(tr.re);
    let mut defect = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            defect = defect.max((root[i * d + j] - root[j * d + i].conj()).norm());
        }
    }
    defects.push(defect);
}
