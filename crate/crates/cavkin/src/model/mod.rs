//! Reaction-coordinate model: a bistable potential in a mass-weighted
//! coordinate, solved on a sinc-function discrete variable representation
//! grid, plus the derived quantities the dynamics modules consume
//! (localized well states, tunneling splitting, transition dipoles, and
//! the reactant/product side projector).

mod composite;

pub use composite::{
    polaron_renormalized_tunneling, BathAttachment, BathSite, CavitySpec, CompositeSystem,
    CouplingTarget, SpectatorSpec,
};

use crate::error::ModelError;
use crate::linalg::eigh_real;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

/// Bistable potential in the mass-weighted coordinate R (atomic units
/// throughout): a symmetric quartic double well with an optional cubic
/// tilt,
///
///   V(R) = wb^4/(16 Eb) R^4 - (1/2) wb^2 R^2 - c R^3.
///
/// The barrier top sits at V(0) = 0 and for c = 0 the two minima are at
/// R = +/- 2 sqrt(Eb)/wb with depth -Eb.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BistablePotential {
    /// Barrier (imaginary) frequency, hartree.
    pub omega_b: f64,
    /// Barrier height measured from the well bottom for c = 0, hartree.
    pub barrier_height: f64,
    /// Cubic tilt coefficient in the mass-weighted coordinate; 0 gives a
    /// symmetric well.
    pub cubic: f64,
}

impl BistablePotential {
    pub fn new(omega_b: f64, barrier_height: f64, cubic: f64) -> Result<Self, ModelError> {
        if !(omega_b > 0.0) || !omega_b.is_finite() {
            return Err(ModelError::BadParameter(format!(
                "barrier frequency must be positive and finite, got {omega_b}"
            )));
        }
        if !(barrier_height > 0.0) || !barrier_height.is_finite() {
            return Err(ModelError::BadParameter(format!(
                "barrier height must be positive and finite, got {barrier_height}"
            )));
        }
        if !cubic.is_finite() {
            return Err(ModelError::BadParameter("cubic tilt must be finite".into()));
        }
        Ok(Self {
            omega_b,
            barrier_height,
            cubic,
        })
    }

    pub fn eval(&self, r: f64) -> f64 {
        let quart = self.omega_b.powi(4) / (16.0 * self.barrier_height);
        quart * r.powi(4) - 0.5 * self.omega_b * self.omega_b * r * r - self.cubic * r.powi(3)
    }

    /// Distance from the barrier top to either minimum of the symmetric
    /// (c = 0) well.
    pub fn well_position(&self) -> f64 {
        2.0 * self.barrier_height.sqrt() / self.omega_b
    }
}

/// Uniform grid for the sinc DVR. `extent` is the half width; points are
/// placed symmetrically about 0 and, for even `points`, avoid R = 0.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 512,
            extent: f64::NAN, // resolved against the potential at solve time
        }
    }
}

impl GridSpec {
    /// Extent actually used: explicit if finite, otherwise three well
    /// distances, which keeps every bound state of interest far from the
    /// grid edge for the parameter ranges this model targets.
    fn resolve_extent(&self, pot: &BistablePotential) -> f64 {
        if self.extent.is_finite() {
            self.extent
        } else {
            3.0 * pot.well_position()
        }
    }
}

/// Eigenstates of the one-dimensional reaction coordinate.
///
/// `states` holds wavefunction values on the grid, one column per state,
/// normalized so that sum_g psi_i(x_g) psi_j(x_g) dx = delta_ij. Columns
/// carry the raw sign returned by the eigensolver; quantities that depend
/// on relative phases (transition dipoles) are only meaningful up to that
/// sign and consumers must square or fix gauge as appropriate.
#[derive(Debug, Clone)]
pub struct VibrationalBasis {
    /// Eigenenergies, ascending, hartree. Barrier top is at 0.
    pub energies: Array1<f64>,
    /// Grid values of the eigenfunctions, column j = state j.
    pub states: Array2<f64>,
    /// Grid points, ascending.
    pub grid: Array1<f64>,
    /// Grid spacing.
    pub dx: f64,
}

/// Solve the lowest `n_states` eigenstates of the bistable potential with
/// a sinc DVR (unit mass; the coordinate is mass weighted).
pub fn solve_vibrational_states(
    pot: &BistablePotential,
    grid: &GridSpec,
    n_states: usize,
) -> Result<VibrationalBasis, ModelError> {
    let extent = grid.resolve_extent(pot);
    let mut basis = solve_states_on_grid(|r| pot.eval(r), grid.points, extent, n_states)?;
    if pot.cubic == 0.0 {
        purify_parity(&mut basis);
    }
    Ok(basis)
}

/// Snap eigenvectors of an even potential to definite parity. Tunneling
/// doublets are split by orders of magnitude less than the spectral span,
/// so the eigensolver may return arbitrarily rotated mixtures within a
/// doublet; projecting onto the dominant parity component restores the
/// even/odd basis the analytical structure relies on.
fn purify_parity(basis: &mut VibrationalBasis) {
    let n = basis.grid.len();
    for j in 0..basis.n_states() {
        let mut even_norm = 0.0;
        let mut odd_norm = 0.0;
        let mut even = vec![0.0; n];
        let mut odd = vec![0.0; n];
        for g in 0..n {
            let e = 0.5 * (basis.states[[g, j]] + basis.states[[n - 1 - g, j]]);
            let o = 0.5 * (basis.states[[g, j]] - basis.states[[n - 1 - g, j]]);
            even[g] = e;
            odd[g] = o;
            even_norm += e * e;
            odd_norm += o * o;
        }
        let (part, norm) = if even_norm >= odd_norm {
            (even, even_norm)
        } else {
            (odd, odd_norm)
        };
        let scale = 1.0 / (norm * basis.dx).sqrt();
        for g in 0..n {
            basis.states[[g, j]] = part[g] * scale;
        }
    }
}

/// DVR solve for an arbitrary one-dimensional potential. Exposed so the
/// harmonic and tilted variants can share the kinetic-matrix setup.
pub fn solve_states_on_grid(
    potential: impl Fn(f64) -> f64,
    points: usize,
    extent: f64,
    n_states: usize,
) -> Result<VibrationalBasis, ModelError> {
    if points < 8 {
        return Err(ModelError::BadParameter(format!(
            "grid needs at least 8 points, got {points}"
        )));
    }
    if n_states == 0 || n_states > points {
        return Err(ModelError::BadParameter(format!(
            "requested {n_states} states from a {points}-point grid"
        )));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(ModelError::BadParameter(format!(
            "grid extent must be positive, got {extent}"
        )));
    }
    let n = points;
    let dx = 2.0 * extent / (n as f64 - 1.0);
    let grid = Array1::from_iter((0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * dx));

    // Sinc-DVR kinetic energy for unit mass: pi^2/3 on the diagonal,
    // 2 (-1)^(i-j) / (i-j)^2 off it, all over 2 dx^2.
    let pref = 1.0 / (2.0 * dx * dx);
    let mut h = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            h[[i, j]] = if i == j {
                pref * std::f64::consts::PI.powi(2) / 3.0 + potential(grid[i])
            } else {
                let d = i as f64 - j as f64;
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                pref * 2.0 * sign / (d * d)
            };
        }
    }

    let (vals, vecs) = eigh_real(&h);
    let energies = vals.slice(ndarray::s![..n_states]).to_owned();
    // Convert eigenvectors to quadrature-normalized wavefunction values.
    let states = vecs.slice(ndarray::s![.., ..n_states]).mapv(|v| v / dx.sqrt());

    // Bound states must vanish at the box edge or the spectrum is an
    // artifact of the grid, not the potential.
    let edge_amp = (0..n_states)
        .map(|j| states[[0, j]].abs().max(states[[n - 1, j]].abs()) * dx.sqrt())
        .fold(0.0f64, f64::max);
    if edge_amp > 1e-8 {
        return Err(ModelError::GridTooSmall { edge_amp, extent });
    }

    Ok(VibrationalBasis {
        energies,
        states,
        grid,
        dx,
    })
}

impl VibrationalBasis {
    pub fn n_states(&self) -> usize {
        self.energies.len()
    }

    /// Matrix elements <i| f(R) |j> by grid quadrature.
    pub fn matrix_elements_of(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let n = self.n_states();
        let fx = self.grid.mapv(&f);
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..self.grid.len())
                    .map(|g| self.states[[g, i]] * fx[g] * self.states[[g, j]])
                    .sum::<f64>()
                    * self.dx;
                out[[i, j]] = v;
                out[[j, i]] = v;
            }
        }
        out
    }

    /// Position operator R in the eigenbasis.
    pub fn position_matrix(&self) -> Array2<f64> {
        self.matrix_elements_of(|x| x)
    }

    /// Projector onto the product side R > 0, rounded to an exact
    /// projector: the grid-quadrature matrix of theta(R) is
    /// eigendecomposed and its eigenvalues snapped to {0, 1} at the 1/2
    /// threshold, which restores idempotency lost to basis truncation.
    pub fn side_projector(&self) -> Array2<f64> {
        let raw = self.matrix_elements_of(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let (vals, vecs) = eigh_real(&raw);
        let n = self.n_states();
        let mut out = Array2::zeros((n, n));
        for k in 0..n {
            if vals[k] > 0.5 {
                for i in 0..n {
                    for j in 0..n {
                        out[[i, j]] += vecs[[i, k]] * vecs[[j, k]];
                    }
                }
            }
        }
        out
    }

    /// Indices (even, odd) of complete tunneling doublets lying below the
    /// barrier top: consecutive pairs (2k, 2k+1) with both energies < 0.
    pub fn sub_barrier_doublets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut k = 0;
        while 2 * k + 1 < self.n_states() {
            if self.energies[2 * k] < 0.0 && self.energies[2 * k + 1] < 0.0 {
                out.push((2 * k, 2 * k + 1));
            } else {
                break;
            }
            k += 1;
        }
        out
    }

    /// Ground tunneling doublet recombined into left/right localized
    /// states, with the derived spectroscopic quantities.
    pub fn ground_doublet(&self) -> Result<LocalizedDoublet, ModelError> {
        if self.n_states() < 3 {
            return Err(ModelError::BadParameter(
                "need at least 3 states for the ground doublet and its bright state".into(),
            ));
        }
        let n_grid = self.grid.len();
        let (e0, e1) = (self.energies[0], self.energies[1]);
        if e0 >= 0.0 || e1 >= 0.0 {
            return Err(ModelError::NoDoublet { e0, e1 });
        }
        // Localized combinations (|0> +/- |1>)/sqrt(2); label the one with
        // <R> < 0 as the reactant (left) state.
        let s = 1.0 / 2.0f64.sqrt();
        let mut left = Array1::zeros(n_grid);
        let mut right = Array1::zeros(n_grid);
        for g in 0..n_grid {
            left[g] = s * (self.states[[g, 0]] + self.states[[g, 1]]);
            right[g] = s * (self.states[[g, 0]] - self.states[[g, 1]]);
        }
        let mean_r = |psi: &Array1<f64>| -> f64 {
            (0..n_grid)
                .map(|g| psi[g] * self.grid[g] * psi[g])
                .sum::<f64>()
                * self.dx
        };
        let mut left_coeffs = [s, s];
        let mut right_coeffs = [s, -s];
        if mean_r(&left) > 0.0 {
            std::mem::swap(&mut left, &mut right);
            std::mem::swap(&mut left_coeffs, &mut right_coeffs);
        }
        let r_left = mean_r(&left);
        // A vanishing displacement leaves left/right labels meaningless.
        if r_left.abs() < 1e-6 {
            return Err(ModelError::AmbiguousLocalization { mean_r: r_left });
        }
        let mean_energy = 0.5 * (e0 + e1);
        let dipole_asymmetry = r_left - mean_r(&right);
        Ok(LocalizedDoublet {
            left,
            right,
            left_coeffs,
            right_coeffs,
            tunnel_coupling: 0.5 * (e1 - e0),
            mean_energy,
            well_frequency: self.energies[2] - mean_energy,
            dipole_asymmetry,
        })
    }
}

/// Left/right localized recombination of the ground tunneling doublet.
#[derive(Debug, Clone)]
pub struct LocalizedDoublet {
    /// Reactant-side localized state on the grid, <R> < 0.
    pub left: Array1<f64>,
    /// Product-side localized state on the grid.
    pub right: Array1<f64>,
    /// Expansion of the left state over {|0>, |1>}.
    pub left_coeffs: [f64; 2],
    /// Expansion of the right state over {|0>, |1>}.
    pub right_coeffs: [f64; 2],
    /// Tunnel coupling (E1 - E0)/2, hartree; the splitting is twice this.
    pub tunnel_coupling: f64,
    /// Mean doublet energy (E0 + E1)/2, hartree.
    pub mean_energy: f64,
    /// Transition frequency from the doublet to the next vibrational
    /// state, E2 - (E0 + E1)/2; this is the frequency a resonant cavity
    /// is tuned to.
    pub well_frequency: f64,
    /// <L|R|L> - <R_state|R|R_state>: permanent dipole difference between
    /// the localized wells (coordinate units, unit effective charge).
    pub dipole_asymmetry: f64,
}

/// Complex copy of a real operator matrix, convenience for composite
/// builders and dynamics setup.
pub fn complexify(m: &Array2<f64>) -> Array2<C64> {
    m.mapv(|v| C64::new(v, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::cm1_to_hartree;
    use approx::assert_relative_eq;

    fn main_text_potential() -> BistablePotential {
        BistablePotential::new(cm1_to_hartree(1000.0), cm1_to_hartree(2250.0), 0.0).unwrap()
    }

    fn solve_main_text(n_states: usize) -> VibrationalBasis {
        solve_vibrational_states(&main_text_potential(), &GridSpec::default(), n_states).unwrap()
    }

    #[test]
    fn well_geometry() {
        let pot = main_text_potential();
        let rmin = pot.well_position();
        assert_relative_eq!(rmin, 44.442, epsilon = 1e-2);
        assert_relative_eq!(pot.eval(rmin), -cm1_to_hartree(2250.0), epsilon = 1e-15);
        assert_relative_eq!(pot.eval(0.0), 0.0);
    }

    #[test]
    fn harmonic_oracle_on_dvr() {
        // Exactly solvable check of the kinetic matrix: unit-mass harmonic
        // oscillator, omega = 0.01 au.
        let w = 0.01;
        let basis = solve_states_on_grid(|x| 0.5 * w * w * x * x, 256, 90.0, 6).unwrap();
        for k in 0..6 {
            assert_relative_eq!(basis.energies[k], w * (k as f64 + 0.5), epsilon = 1e-10);
        }
        // quadrature orthonormality
        let overlap: f64 = (0..256)
            .map(|g| basis.states[[g, 2]] * basis.states[[g, 3]])
            .sum::<f64>()
            * basis.dx;
        assert!(overlap.abs() < 1e-12);
    }

    #[test]
    fn symmetric_well_spectrum() {
        let basis = solve_main_text(6);
        let e_cm: Vec<f64> = basis
            .energies
            .iter()
            .map(|&e| crate::units::hartree_to_cm1(e))
            .collect();
        // Frozen from an independent grid solve of the same potential.
        let expected = [-1574.8, -1572.8, -431.8, -336.5, 366.7, 870.5];
        for (got, want) in e_cm.iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 0.05);
        }
    }

    #[test]
    fn ground_doublet_quantities() {
        let basis = solve_main_text(6);
        let d = basis.ground_doublet().unwrap();
        let cm = crate::units::hartree_to_cm1;
        assert_relative_eq!(cm(2.0 * d.tunnel_coupling), 2.051, epsilon = 2e-3);
        assert_relative_eq!(cm(d.well_frequency), 1142.0, epsilon = 0.05);
        // Left state localized in the reactant well, within 10% of -Rmin.
        let rmin = main_text_potential().well_position();
        let mean_left: f64 = (0..basis.grid.len())
            .map(|g| d.left[g] * basis.grid[g] * d.left[g])
            .sum::<f64>()
            * basis.dx;
        assert!((mean_left + rmin).abs() < 0.1 * rmin);
        assert_relative_eq!(d.dipole_asymmetry, -82.83, epsilon = 0.01);
    }

    #[test]
    fn bright_state_transition_moment() {
        let basis = solve_main_text(6);
        let r = basis.position_matrix();
        // |<2|R|1>| frozen from an independent solve; sign is gauge.
        assert_relative_eq!(r[[2, 1]].abs(), 9.273, epsilon = 2e-3);
        // Parity: even-even and odd-odd elements vanish for c = 0.
        assert!(r[[0, 0]].abs() < 1e-9);
        assert!(r[[2, 0]].abs() < 1e-9);
    }

    #[test]
    fn doublet_count_vs_barrier() {
        // Lower barrier, softer mode: three complete doublets under the top.
        let low = BistablePotential::new(cm1_to_hartree(500.0), cm1_to_hartree(2000.0), 0.0)
            .unwrap();
        let b = solve_vibrational_states(&low, &GridSpec::default(), 10).unwrap();
        assert_eq!(b.sub_barrier_doublets().len(), 3);

        // Stiffer mode, similar barrier: only the ground doublet survives.
        let high = BistablePotential::new(cm1_to_hartree(1500.0), cm1_to_hartree(2500.0), 0.0)
            .unwrap();
        let b = solve_vibrational_states(&high, &GridSpec::default(), 10).unwrap();
        assert_eq!(b.sub_barrier_doublets().len(), 1);

        // Main text well: two.
        let b = solve_main_text(10);
        assert_eq!(b.sub_barrier_doublets().len(), 2);
    }

    #[test]
    fn side_projector_idempotent_and_half_filled() {
        let basis = solve_main_text(12);
        let h = basis.side_projector();
        let h2 = h.dot(&h);
        for i in 0..12 {
            for j in 0..12 {
                assert!((h2[[i, j]] - h[[i, j]]).abs() < 1e-10);
            }
        }
        // Symmetric well: the ground state straddles both sides equally.
        assert_relative_eq!(h[[0, 0]], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn tilted_well_localizes_ground_state() {
        // Cubic tilt quoted for the bare proton coordinate, converted to
        // the mass-weighted frame (divide by m^(3/2)).
        let c = 0.005 / 1836.152_673_43f64.powf(1.5);
        let pot = BistablePotential::new(cm1_to_hartree(1000.0), cm1_to_hartree(2250.0), c)
            .unwrap();
        let basis = solve_vibrational_states(&pot, &GridSpec::default(), 4).unwrap();
        let r = basis.position_matrix();
        // Tilt deepens R > 0: ground state sits in the product well and
        // the near-degenerate doublet is split far beyond 2 cm^-1.
        assert!(r[[0, 0]] > 30.0);
        let split = crate::units::hartree_to_cm1(basis.energies[1] - basis.energies[0]);
        assert!(split > 100.0, "splitting {split} cm^-1");
    }

    #[test]
    fn grid_refinement_stability() {
        let pot = main_text_potential();
        let coarse = solve_vibrational_states(&pot, &GridSpec::default(), 6).unwrap();
        let fine = solve_vibrational_states(
            &pot,
            &GridSpec {
                points: 1024,
                extent: f64::NAN,
            },
            6,
        )
        .unwrap();
        for k in 0..6 {
            assert!((coarse.energies[k] - fine.energies[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn doublet_coefficients_match_grid_states() {
        let basis = solve_main_text(4);
        let d = basis.ground_doublet().unwrap();
        for g in (0..basis.grid.len()).step_by(37) {
            let rebuilt =
                d.left_coeffs[0] * basis.states[[g, 0]] + d.left_coeffs[1] * basis.states[[g, 1]];
            assert_relative_eq!(rebuilt, d.left[g], epsilon = 1e-12);
        }
        // orthonormal rotation
        let dot: f64 = d.left_coeffs.iter().zip(d.right_coeffs).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-14);
    }

    #[test]
    fn edge_detection_rejects_small_box() {
        let pot = main_text_potential();
        let grid = GridSpec {
            points: 128,
            extent: 50.0, // barely past the wells; excited states leak out
        };
        let err = solve_vibrational_states(&pot, &grid, 8).unwrap_err();
        match err {
            ModelError::GridTooSmall { .. } => {}
            other => panic!("expected grid error, got {other:?}"),
        }
    }
}
