//! Hierarchical equations of motion over exponential bath expansions.
//!
//! One auxiliary density operator (ADO) per multi-index over the
//! expansion modes of every attached bath; the root ADO is the reduced
//! density operator. All matrices live in the eigenbasis of the system
//! Hamiltonian, where the coherent part of the Liouvillian is an
//! elementwise multiplication, and the ADOs carry the rescaled
//! convention that keeps deep-tier magnitudes of order one.

pub mod checkpoint;
mod rhs;
mod steady;

pub use rhs::{heom_rhs, propagate, Tolerances, Trajectory};
pub use steady::{dipole_spectrum, steady_state, SpectrumResult, SteadyReport, SteadySpec};

use crate::baths::BathExpansion;
use crate::error::DynamicsError;
use crate::linalg::eigh;
use crate::model::CompositeSystem;
use ndarray::{Array1, Array2, Array3, ArrayView2};
use num_complex::Complex64 as C64;
use std::collections::HashMap;

/// One exponential mode of one bath, flattened into hierarchy order.
/// `c` and `cbar` are the expansion coefficients of C(t) and C*(t) on
/// the shared exponent exp(-nu t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSlot {
    /// Position of the owning bath's coupling operator.
    pub bath: usize,
    pub c: C64,
    pub cbar: C64,
    pub nu: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationStrategy {
    /// Keep indices with total excitation number at most L.
    ExcitationCap,
    /// Keep indices whose summed decay rate stays below L nu_min.
    DecayRateCap,
    /// Decay-rate cap with a floor: slow modes are charged at least
    /// Gamma nu_min per excitation, so they cannot flood the hierarchy.
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TruncationSpec {
    pub strategy: TruncationStrategy,
    pub l: usize,
    /// The dimensionless floor Gamma; only Modified reads it.
    pub gamma_trunc: f64,
}

impl TruncationSpec {
    pub fn excitation(l: usize) -> Self {
        Self { strategy: TruncationStrategy::ExcitationCap, l, gamma_trunc: 1.0 }
    }

    pub fn decay_rate(l: usize) -> Self {
        Self { strategy: TruncationStrategy::DecayRateCap, l, gamma_trunc: 1.0 }
    }

    pub fn modified(l: usize, gamma_trunc: f64) -> Self {
        Self { strategy: TruncationStrategy::Modified, l, gamma_trunc }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.strategy == TruncationStrategy::Modified && !(self.gamma_trunc > 0.0) {
            return Err(DynamicsError::BadParameter(format!(
                "modified truncation needs Gamma > 0, got {}",
                self.gamma_trunc
            )));
        }
        Ok(())
    }
}

/// Default cap on one ADO pool; propagation holds roughly a dozen pools
/// at once, so this keeps the full working set inside a few gigabytes.
pub const DEFAULT_POOL_BUDGET: usize = 256 * 1024 * 1024;

/// The enumerated hierarchy: admitted multi-indices, neighbor tables,
/// and the rescaled coupling coefficients, all precomputed so the
/// right-hand side is pure table-driven arithmetic.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub modes: Vec<ModeSlot>,
    pub dim: usize,
    pub indices: Vec<Vec<u16>>,
    /// Smallest Re(nu) over the kept modes; 0 for a closed system.
    pub nu_min: f64,
    // flat (index, mode) tables, stride = modes.len(); u32::MAX marks a
    // truncated neighbor
    up: Vec<u32>,
    down: Vec<u32>,
    // -i sqrt((n_k+1) s_k), -i sqrt(n_k/s_k) c_k, +i sqrt(n_k/s_k) cbar_k
    // with s_k = |c_k|: the signs and scalings of the rescaled ladder
    // terms, folded in once
    up_coef: Vec<C64>,
    down_c: Vec<C64>,
    down_cb: Vec<C64>,
    /// Sum n_k nu_k per index.
    decay: Vec<C64>,
}

const NO_NEIGHBOR: u32 = u32::MAX;

/// Flatten certified expansions into mode slots, one bath per coupling
/// operator, in the order given. Modes with exactly zero weight in both
/// C and C* carry no influence and are dropped.
pub fn modes_from_expansions(
    expansions: &[&BathExpansion],
) -> Result<Vec<ModeSlot>, DynamicsError> {
    let mut modes = Vec::new();
    for (b, exp) in expansions.iter().enumerate() {
        for m in &exp.modes {
            if m.c.norm() == 0.0 && m.cbar.norm() == 0.0 {
                continue;
            }
            if m.c.norm() == 0.0 {
                return Err(DynamicsError::BadParameter(format!(
                    "bath {b} has a mode with c = 0 but cbar = {}; the rescaled ladder \
                     needs |c| > 0 on every influential mode",
                    m.cbar
                )));
            }
            if !(m.nu.re > 0.0) {
                return Err(DynamicsError::BadParameter(format!(
                    "bath {b} has a non-decaying mode nu = {}; the hierarchy is unstable",
                    m.nu
                )));
            }
            modes.push(ModeSlot { bath: b, c: m.c, cbar: m.cbar, nu: m.nu });
        }
    }
    Ok(modes)
}

impl Hierarchy {
    pub fn enumerate(
        dim: usize,
        modes: Vec<ModeSlot>,
        spec: &TruncationSpec,
    ) -> Result<Self, DynamicsError> {
        Self::enumerate_with_budget(dim, modes, spec, DEFAULT_POOL_BUDGET)
    }

    pub fn enumerate_with_budget(
        dim: usize,
        modes: Vec<ModeSlot>,
        spec: &TruncationSpec,
        budget_bytes: usize,
    ) -> Result<Self, DynamicsError> {
        spec.validate()?;
        if dim == 0 {
            return Err(DynamicsError::BadParameter("system dimension is zero".into()));
        }
        let nm = modes.len();
        let nu_min = modes
            .iter()
            .map(|m| m.nu.re)
            .fold(f64::INFINITY, f64::min)
            .min(f64::MAX);
        let nu_min = if nm == 0 { 0.0 } else { nu_min };

        // per-excitation weight and admission cap for the chosen strategy
        let (weights, cap): (Vec<f64>, f64) = match spec.strategy {
            TruncationStrategy::ExcitationCap => (vec![1.0; nm], spec.l as f64),
            TruncationStrategy::DecayRateCap => {
                (modes.iter().map(|m| m.nu.re).collect(), spec.l as f64 * nu_min)
            }
            TruncationStrategy::Modified => (
                modes
                    .iter()
                    .map(|m| m.nu.re.max(spec.gamma_trunc * nu_min))
                    .collect(),
                spec.l as f64 * nu_min,
            ),
        };
        // slack keeps boundary indices in when two strategies coincide
        // algebraically but differ in rounding
        let cap = cap * (1.0 + 1e-12) + 1e-300;

        let ado_bytes = dim * dim * std::mem::size_of::<C64>();
        let mut indices: Vec<Vec<u16>> = vec![vec![0u16; nm]];
        let mut wsum: Vec<f64> = vec![0.0];
        let mut map: HashMap<Vec<u16>, u32> = HashMap::new();
        map.insert(indices[0].clone(), 0);

        let mut head = 0usize;
        while head < indices.len() {
            for k in 0..nm {
                if wsum[head] + weights[k] > cap {
                    continue;
                }
                let mut child = indices[head].clone();
                child[k] += 1;
                if map.contains_key(&child) {
                    continue;
                }
                if (indices.len() + 1) * ado_bytes > budget_bytes {
                    return Err(DynamicsError::HierarchyTooLarge {
                        n_ados: indices.len() + 1,
                        dim,
                        budget_bytes,
                    });
                }
                map.insert(child.clone(), indices.len() as u32);
                wsum.push(wsum[head] + weights[k]);
                indices.push(child);
            }
            head += 1;
        }

        let n = indices.len();
        let mut up = vec![NO_NEIGHBOR; n * nm];
        let mut down = vec![NO_NEIGHBOR; n * nm];
        let mut up_coef = vec![C64::new(0.0, 0.0); n * nm];
        let mut down_c = vec![C64::new(0.0, 0.0); n * nm];
        let mut down_cb = vec![C64::new(0.0, 0.0); n * nm];
        let mut decay = vec![C64::new(0.0, 0.0); n];
        let mut scratch = vec![0u16; nm];
        for (a, idx) in indices.iter().enumerate() {
            let mut g = C64::new(0.0, 0.0);
            for (k, m) in modes.iter().enumerate() {
                let nk = idx[k] as f64;
                g += m.nu * nk;
                let s = m.c.norm();
                scratch.copy_from_slice(idx);
                scratch[k] += 1;
                if let Some(&u) = map.get(&scratch) {
                    up[a * nm + k] = u;
                    up_coef[a * nm + k] = C64::new(0.0, -((nk + 1.0) * s).sqrt());
                }
                if idx[k] > 0 {
                    scratch.copy_from_slice(idx);
                    scratch[k] -= 1;
                    // every admitted index is downward closed
                    let d = *map.get(&scratch).expect("missing parent index");
                    down[a * nm + k] = d;
                    let r = (nk / s).sqrt();
                    down_c[a * nm + k] = C64::new(0.0, -r) * m.c;
                    down_cb[a * nm + k] = C64::new(0.0, r) * m.cbar;
                }
            }
            decay[a] = g;
        }

        Ok(Hierarchy {
            modes,
            dim,
            indices,
            nu_min,
            up,
            down,
            up_coef,
            down_c,
            down_cb,
            decay,
        })
    }

    pub fn n_ados(&self) -> usize {
        self.indices.len()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn up_neighbor(&self, index: usize, mode: usize) -> Option<usize> {
        let v = self.up[index * self.n_modes() + mode];
        (v != NO_NEIGHBOR).then_some(v as usize)
    }

    pub fn down_neighbor(&self, index: usize, mode: usize) -> Option<usize> {
        let v = self.down[index * self.n_modes() + mode];
        (v != NO_NEIGHBOR).then_some(v as usize)
    }

    pub(crate) fn tables(&self) -> HierarchyTables<'_> {
        HierarchyTables {
            up: &self.up,
            down: &self.down,
            up_coef: &self.up_coef,
            down_c: &self.down_c,
            down_cb: &self.down_cb,
            decay: &self.decay,
        }
    }
}

pub(crate) struct HierarchyTables<'a> {
    pub up: &'a [u32],
    pub down: &'a [u32],
    pub up_coef: &'a [C64],
    pub down_c: &'a [C64],
    pub down_cb: &'a [C64],
    pub decay: &'a [C64],
}

/// System operators rotated into the Hamiltonian eigenbasis, which is
/// where the hierarchy propagates.
#[derive(Debug, Clone)]
pub struct HeomSystem {
    pub dim: usize,
    pub energies: Array1<f64>,
    /// Columns are eigenvectors: site = basis . eig.
    basis: Array2<C64>,
    pub couplings: Vec<Array2<C64>>,
    pub side: Array2<C64>,
    pub dipole: Array2<C64>,
    /// -i (E_i - E_j), the diagonal Liouvillian.
    pub(crate) liouville: Array2<C64>,
}

impl HeomSystem {
    /// Assemble from explicit site-basis operators. The Hamiltonian must
    /// be Hermitian; coupling operators must match its dimension.
    pub fn from_parts(
        hamiltonian: &Array2<C64>,
        couplings: &[Array2<C64>],
        side: &Array2<C64>,
        dipole: &Array2<C64>,
    ) -> Result<Self, DynamicsError> {
        let d = hamiltonian.nrows();
        if hamiltonian.ncols() != d {
            return Err(DynamicsError::BadParameter("Hamiltonian is not square".into()));
        }
        for (name, m) in [("side", side), ("dipole", dipole)] {
            if m.dim() != (d, d) {
                return Err(DynamicsError::BadParameter(format!(
                    "{name} operator dimension {:?} does not match system dimension {d}",
                    m.dim()
                )));
            }
        }
        for (i, s) in couplings.iter().enumerate() {
            if s.dim() != (d, d) {
                return Err(DynamicsError::BadParameter(format!(
                    "coupling operator {i} dimension {:?} does not match system dimension {d}",
                    s.dim()
                )));
            }
        }
        let herm_defect = hamiltonian
            .indexed_iter()
            .map(|((i, j), v)| (v - hamiltonian[[j, i]].conj()).norm())
            .fold(0.0f64, f64::max);
        let scale = hamiltonian.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        if herm_defect > 1e-10 * scale.max(1.0) {
            return Err(DynamicsError::BadParameter(format!(
                "Hamiltonian is not Hermitian: defect {herm_defect:.2e}"
            )));
        }
        let (energies, basis) = eigh(hamiltonian);
        let rot = |m: &Array2<C64>| -> Array2<C64> {
            let bh = conj_transpose(&basis);
            bh.dot(m).dot(&basis)
        };
        let mut liouville = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                liouville[[i, j]] = C64::new(0.0, -(energies[i] - energies[j]));
            }
        }
        Ok(HeomSystem {
            dim: d,
            energies,
            couplings: couplings.iter().map(&rot).collect(),
            side: rot(side),
            dipole: rot(dipole),
            basis,
            liouville,
        })
    }

    /// Standard entry point: take everything from an assembled composite
    /// model. Expansions must be supplied to the hierarchy in the same
    /// order as `system.coupling_ops`.
    pub fn new(system: &CompositeSystem) -> Result<Self, DynamicsError> {
        let couplings: Vec<Array2<C64>> =
            system.coupling_ops.iter().map(|(s, _)| s.clone()).collect();
        Self::from_parts(
            &system.hamiltonian,
            &couplings,
            &system.side_op,
            &system.dipole_op,
        )
    }

    pub fn to_eigenbasis(&self, site: &Array2<C64>) -> Array2<C64> {
        conj_transpose(&self.basis).dot(site).dot(&self.basis)
    }

    pub fn from_eigenbasis(&self, eig: &Array2<C64>) -> Array2<C64> {
        self.basis.dot(eig).dot(&conj_transpose(&self.basis))
    }

    /// Boltzmann state of the system Hamiltonian, diagonal here.
    pub fn thermal_root(&self, beta: f64) -> Array2<C64> {
        let e0 = self.energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = self.energies.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        Array2::from_diag(&Array1::from_iter(w.iter().map(|&x| C64::new(x / z, 0.0))))
    }
}

pub(crate) fn conj_transpose(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|v| v.conj())
}

/// The full hierarchy at one instant: a contiguous pool of eigenbasis
/// ADO matrices plus the clock.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    /// Shape (n_ados, dim, dim); entry 0 is the root.
    pub pool: Array3<C64>,
    pub time: f64,
}

impl HierarchyState {
    pub fn zeros(h: &Hierarchy) -> Self {
        HierarchyState {
            pool: Array3::zeros((h.n_ados(), h.dim, h.dim)),
            time: 0.0,
        }
    }

    /// Factorized start: the given site-basis density on the root, every
    /// higher ADO zero (bath in its own thermal state).
    pub fn from_root(
        h: &Hierarchy,
        sys: &HeomSystem,
        root_site: &Array2<C64>,
    ) -> Result<Self, DynamicsError> {
        if root_site.dim() != (h.dim, h.dim) {
            return Err(DynamicsError::BadParameter(format!(
                "root density dimension {:?} does not match system dimension {}",
                root_site.dim(),
                h.dim
            )));
        }
        let mut st = Self::zeros(h);
        st.pool
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&sys.to_eigenbasis(root_site));
        Ok(st)
    }

    pub fn root(&self) -> ArrayView2<'_, C64> {
        self.pool.index_axis(ndarray::Axis(0), 0)
    }

    pub fn root_site(&self, sys: &HeomSystem) -> Array2<C64> {
        sys.from_eigenbasis(&self.root().to_owned())
    }

    pub fn trace(&self) -> C64 {
        let r = self.root();
        (0..r.nrows()).map(|i| r[[i, i]]).sum()
    }

    /// Max-norm deviation of the root from its own adjoint.
    pub fn hermiticity_defect(&self) -> f64 {
        let r = self.root();
        let mut d = 0.0f64;
        for i in 0..r.nrows() {
            for j in 0..r.ncols() {
                d = d.max((r[[i, j]] - r[[j, i]].conj()).norm());
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baths::{decompose_debye, DebyeBath, BathLabel, PadeOrder};
    use crate::units::{beta_from_kelvin, cm1_to_hartree};

    fn toy_expansion() -> BathExpansion {
        let b = DebyeBath::new(cm1_to_hartree(50.0), cm1_to_hartree(200.0), BathLabel::Solvent)
            .unwrap();
        decompose_debye(&b, beta_from_kelvin(300.0), PadeOrder::Fixed(2)).unwrap()
    }

    #[test]
    fn l_zero_keeps_only_the_root() {
        let exp = toy_expansion();
        let modes = modes_from_expansions(&[&exp]).unwrap();
        let h = Hierarchy::enumerate(2, modes, &TruncationSpec::excitation(0)).unwrap();
        assert_eq!(h.n_ados(), 1);
        assert!(h.indices[0].iter().all(|&n| n == 0));
    }

    #[test]
    fn two_modes_cap_three_gives_ten_indices() {
        let exp = toy_expansion();
        let modes: Vec<ModeSlot> = modes_from_expansions(&[&exp]).unwrap()
            .into_iter()
            .take(2)
            .collect();
        assert_eq!(modes.len(), 2);
        let h = Hierarchy::enumerate(2, modes, &TruncationSpec::excitation(3)).unwrap();
        // brute force count of {(n1, n2): n1 + n2 <= 3}
        assert_eq!(h.n_ados(), 10);
    }

    #[test]
    fn modified_gamma_one_equals_decay_rate_cap() {
        let exp = toy_expansion();
        let base = modes_from_expansions(&[&exp]).unwrap();
        let a = Hierarchy::enumerate(2, base.clone(), &TruncationSpec::modified(6, 1.0)).unwrap();
        let b = Hierarchy::enumerate(2, base, &TruncationSpec::decay_rate(6)).unwrap();
        let sa: std::collections::HashSet<_> = a.indices.iter().cloned().collect();
        let sb: std::collections::HashSet<_> = b.indices.iter().cloned().collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn deeper_hierarchies_contain_shallower_ones() {
        let exp = toy_expansion();
        let modes = modes_from_expansions(&[&exp]).unwrap();
        for spec in [TruncationSpec::excitation(0), TruncationSpec::decay_rate(2),
                     TruncationSpec::modified(3, 2.0)] {
            let mut deeper = spec;
            deeper.l += 1;
            let small = Hierarchy::enumerate(2, modes.clone(), &spec).unwrap();
            let big = Hierarchy::enumerate(2, modes.clone(), &deeper).unwrap();
            let set: std::collections::HashSet<_> = big.indices.iter().cloned().collect();
            assert!(small.indices.iter().all(|i| set.contains(i)));
            assert!(big.n_ados() >= small.n_ados());
        }
    }

    #[test]
    fn neighbor_tables_are_mutually_consistent() {
        let exp = toy_expansion();
        let modes = modes_from_expansions(&[&exp]).unwrap();
        let h = Hierarchy::enumerate(2, modes, &TruncationSpec::excitation(4)).unwrap();
        for a in 0..h.n_ados() {
            for k in 0..h.n_modes() {
                if let Some(u) = h.up_neighbor(a, k) {
                    assert_eq!(h.down_neighbor(u, k), Some(a));
                    assert_eq!(h.indices[u][k], h.indices[a][k] + 1);
                }
                if let Some(d) = h.down_neighbor(a, k) {
                    assert_eq!(h.up_neighbor(d, k), Some(a));
                }
            }
        }
    }

    #[test]
    fn budget_overflow_reports_the_count() {
        let exp = toy_expansion();
        let modes = modes_from_expansions(&[&exp]).unwrap();
        // three modes at cap six hold 84 indices; allow 50
        let err = Hierarchy::enumerate_with_budget(
            64,
            modes,
            &TruncationSpec::excitation(6),
            50 * 64 * 64 * 16,
        )
        .unwrap_err();
        match err {
            DynamicsError::HierarchyTooLarge { n_ados, dim, .. } => {
                assert_eq!(dim, 64);
                assert!(n_ados > 50, "overflow reported at {n_ados} indices");
            }
            other => panic!("expected budget error, got {other}"),
        }
    }

    #[test]
    fn silent_modes_are_dropped_and_half_silent_rejected() {
        let mut exp = toy_expansion();
        exp.modes.push(crate::baths::BathMode {
            c: C64::new(0.0, 0.0),
            cbar: C64::new(0.0, 0.0),
            nu: C64::new(1.0, 0.0),
        });
        let n_live = exp.modes.len() - 1;
        let modes = modes_from_expansions(&[&exp]).unwrap();
        assert_eq!(modes.len(), n_live);

        exp.modes.last_mut().unwrap().cbar = C64::new(1e-3, 0.0);
        assert!(modes_from_expansions(&[&exp]).is_err());
    }

    #[test]
    fn eigenbasis_round_trip_preserves_operators() {
        let h = ndarray::array![
            [C64::new(0.0, 0.0), C64::new(0.2, 0.1)],
            [C64::new(0.2, -0.1), C64::new(1.0, 0.0)]
        ];
        let s = ndarray::array![
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]
        ];
        let sys = HeomSystem::from_parts(&h, &[s.clone()], &s, &s).unwrap();
        let back = sys.from_eigenbasis(&sys.to_eigenbasis(&s));
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[[i, j]] - s[[i, j]]).norm() < 1e-13);
            }
        }
        // rotating the Hamiltonian itself diagonalizes it
        let he = sys.to_eigenbasis(&h);
        assert!(he[[0, 1]].norm() < 1e-13);
        assert!((he[[0, 0]].re - sys.energies[0]).abs() < 1e-13);
    }

    #[test]
    fn thermal_root_is_boltzmann_normalized() {
        let h = ndarray::array![
            [C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(2e-3, 0.0)]
        ];
        let id = Array2::eye(2);
        let sys = HeomSystem::from_parts(&h, &[], &id, &id).unwrap();
        let beta = 500.0;
        let rho = sys.thermal_root(beta);
        let z = 1.0 + (-beta * 2e-3f64).exp();
        assert!((rho[[0, 0]].re - 1.0 / z).abs() < 1e-14);
        assert!((rho[[1, 1]].re - (-beta * 2e-3f64).exp() / z).abs() < 1e-14);
    }
}
