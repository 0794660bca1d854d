//! Composite system assembly: molecule x optional spectator oscillator x
//! optional cavity photon mode, with all completed-square counterterms
//! folded in, plus the operator bundle the dynamics modules consume.

use super::VibrationalBasis;
use crate::error::ModelError;
use crate::linalg::{eigh, kron};
use crate::units::beta_from_kelvin;
use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Single-mode cavity description. `eta_c` is the dimensionless coupling
/// multiplying sqrt(2/omega_c) mu in the completed square; `tau_c` absent
/// means a lossless cavity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CavitySpec {
    /// Photon frequency, hartree.
    pub omega_c: f64,
    /// Dimensionless light-matter coupling.
    pub eta_c: f64,
    /// Photon-number truncation (Fock dimension).
    pub n_fock: usize,
    /// Which matter coordinate the field couples to.
    pub coupling_target: CouplingTarget,
    /// Cavity lifetime in atomic time units; None = lossless.
    pub tau_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CouplingTarget {
    ReactionCoordinate,
    SpectatorMode,
}

/// Harmonic spectator mode bilinearly coupled to the reaction coordinate
/// through the completed square (omega_q^2/2)(Q + c_q R / omega_q^2)^2.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectatorSpec {
    /// Mode frequency, hartree.
    pub omega_q: f64,
    /// Bilinear coupling strength, atomic units.
    pub c_q: f64,
    /// Oscillator-level truncation.
    pub n_q: usize,
}

/// Which composite coordinate a dissipative bath attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BathSite {
    ReactionCoordinate,
    SpectatorMode,
    CavityMode,
}

/// One bath hookup: the site fixes the coupling operator; the
/// reorganization energy fixes the counterterm lambda S^2 folded out of
/// the bath's completed square into the system Hamiltonian.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BathAttachment {
    pub site: BathSite,
    pub label: String,
    /// lambda_reorg = (1/pi) Int J(w)/w dw, hartree.
    pub reorganization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeDims {
    pub n_states: usize,
    pub n_q: usize,
    pub n_fock: usize,
}

impl CompositeDims {
    pub fn total(&self) -> usize {
        self.n_states * self.n_q * self.n_fock
    }

    /// Flat index of the product state |vib i, spectator m, photon n>.
    pub fn index_of(&self, i: usize, m: usize, n: usize) -> usize {
        (i * self.n_q + m) * self.n_fock + n
    }
}

/// Truncated system Hamiltonian plus the operators the hierarchy needs:
/// bath coupling operators, the product-side projector, and the dipole.
#[derive(Debug, Clone)]
pub struct CompositeSystem {
    pub hamiltonian: Array2<C64>,
    /// (S_i, bath label) pairs in the order the attachments were given.
    pub coupling_ops: Vec<(Array2<C64>, String)>,
    /// Projector onto R > 0, extended over all factors.
    pub side_op: Array2<C64>,
    /// Matter operator the cavity couples to (R by default).
    pub dipole_op: Array2<C64>,
    /// (label, lambda) for every counterterm added to `hamiltonian`.
    pub counterterm_record: Vec<(String, f64)>,
    pub dims: CompositeDims,
}

/// Hard cap on the composite dimension; eigensolves and hierarchy sweeps
/// beyond this are not realistic on one node.
pub const DEFAULT_MAX_DIM: usize = 4096;

fn identity(n: usize) -> Array2<C64> {
    Array2::eye(n)
}

/// Ladder position operator (a + a^dag)/sqrt(2 w) in a Fock basis.
fn mode_position(n: usize, omega: f64) -> Array2<C64> {
    let mut q = Array2::zeros((n, n));
    let s = 1.0 / (2.0 * omega).sqrt();
    for k in 1..n {
        let v = C64::new(s * (k as f64).sqrt(), 0.0);
        q[[k - 1, k]] = v;
        q[[k, k - 1]] = v;
    }
    q
}

/// a + a^dag in a Fock basis.
fn mode_displacement(n: usize) -> Array2<C64> {
    let mut d = Array2::zeros((n, n));
    for k in 1..n {
        let v = C64::new((k as f64).sqrt(), 0.0);
        d[[k - 1, k]] = v;
        d[[k, k - 1]] = v;
    }
    d
}

fn mode_number_energy(n: usize, omega: f64) -> Array2<C64> {
    Array2::from_diag(&ndarray::Array1::from_iter(
        (0..n).map(|k| C64::new(omega * (k as f64 + 0.5), 0.0)),
    ))
}

fn kron3(a: &Array2<C64>, b: &Array2<C64>, c: &Array2<C64>) -> Array2<C64> {
    kron(&kron(a, b), c)
}

impl CompositeSystem {
    pub fn build(
        basis: &VibrationalBasis,
        cavity: Option<&CavitySpec>,
        spectator: Option<&SpectatorSpec>,
        baths: &[BathAttachment],
    ) -> Result<Self, ModelError> {
        Self::build_with_limit(basis, cavity, spectator, baths, DEFAULT_MAX_DIM)
    }

    pub fn build_with_limit(
        basis: &VibrationalBasis,
        cavity: Option<&CavitySpec>,
        spectator: Option<&SpectatorSpec>,
        baths: &[BathAttachment],
        max_dim: usize,
    ) -> Result<Self, ModelError> {
        if let Some(c) = cavity {
            if !(c.omega_c > 0.0) || c.eta_c < 0.0 || c.n_fock == 0 {
                return Err(ModelError::BadParameter(format!(
                    "cavity needs omega_c > 0, eta_c >= 0, n_fock >= 1; got {c:?}"
                )));
            }
            if c.coupling_target == CouplingTarget::SpectatorMode && spectator.is_none() {
                return Err(ModelError::InconsistentTarget(
                    "cavity couples to the spectator mode but no spectator is present".into(),
                ));
            }
        }
        if let Some(s) = spectator {
            if !(s.omega_q > 0.0) || s.n_q == 0 {
                return Err(ModelError::BadParameter(format!(
                    "spectator needs omega_q > 0 and n_q >= 1; got {s:?}"
                )));
            }
        }
        let dims = CompositeDims {
            n_states: basis.n_states(),
            n_q: spectator.map_or(1, |s| s.n_q),
            n_fock: cavity.map_or(1, |c| c.n_fock),
        };
        if dims.total() > max_dim {
            return Err(ModelError::DimensionOverflow {
                dim: dims.total(),
                max: max_dim,
            });
        }

        let i_s = identity(dims.n_states);
        let i_q = identity(dims.n_q);
        let i_f = identity(dims.n_fock);

        let h_mol = Array2::from_diag(&ndarray::Array1::from_iter(
            basis.energies.iter().map(|&e| C64::new(e, 0.0)),
        ));
        let r_mol = super::complexify(&basis.position_matrix());
        let r_sq = r_mol.dot(&r_mol);

        let mut h = kron3(&h_mol, &i_q, &i_f);
        let mut counterterms: Vec<(String, f64)> = Vec::new();

        let q_op = spectator.map(|s| mode_position(s.n_q, s.omega_q));
        if let Some(s) = spectator {
            let q = q_op.as_ref().unwrap();
            h = h + kron3(&i_s, &mode_number_energy(s.n_q, s.omega_q), &i_f);
            // (w_q^2/2)(Q + c_q R / w_q^2)^2 minus the bare oscillator:
            // bilinear coupling plus the R-side counterterm. The square of
            // the truncated R matrix keeps this construction exactly
            // equivalent to the folded effective-bath route.
            h = h + kron3(&r_mol, q, &i_f).mapv(|v| v * s.c_q);
            let lam = s.c_q * s.c_q / (2.0 * s.omega_q * s.omega_q);
            h = h + kron3(&r_sq, &i_q, &i_f).mapv(|v| v * lam);
            counterterms.push(("spectator-coupling".into(), lam));
        }

        // Matter operator the field sees, embedded in molecule x spectator.
        let mu_factor = |target: CouplingTarget| -> Result<Array2<C64>, ModelError> {
            match target {
                CouplingTarget::ReactionCoordinate => Ok(kron(&r_mol, &i_q)),
                CouplingTarget::SpectatorMode => q_op
                    .as_ref()
                    .map(|q| kron(&i_s, q))
                    .ok_or_else(|| {
                        ModelError::InconsistentTarget("spectator coupling without mode".into())
                    }),
            }
        };

        let dipole_sub = match cavity {
            Some(c) => mu_factor(c.coupling_target)?,
            None => kron(&r_mol, &i_q),
        };
        let dipole_op = kron(&dipole_sub, &i_f);

        if let Some(c) = cavity {
            h = h + kron3(&i_s, &i_q, &mode_number_energy(c.n_fock, c.omega_c));
            let disp = mode_displacement(c.n_fock);
            let g = c.eta_c * c.omega_c;
            h = h + kron(&dipole_sub, &disp).mapv(|v| v * g);
            // Dipole self energy with the matrix square of the truncated
            // matter operator, matching the folded route exactly.
            let dse = c.eta_c * c.eta_c * c.omega_c;
            h = h + kron(&dipole_sub.dot(&dipole_sub), &i_f).mapv(|v| v * dse);
            counterterms.push(("dipole-self-energy".into(), dse));
        }

        let mut coupling_ops = Vec::with_capacity(baths.len());
        for b in baths {
            let s_full = match b.site {
                BathSite::ReactionCoordinate => kron3(&r_mol, &i_q, &i_f),
                BathSite::SpectatorMode => {
                    let q = q_op.as_ref().ok_or_else(|| {
                        ModelError::InconsistentTarget(format!(
                            "bath '{}' targets the spectator mode but none is present",
                            b.label
                        ))
                    })?;
                    kron3(&i_s, q, &i_f)
                }
                BathSite::CavityMode => {
                    let c = cavity.ok_or_else(|| {
                        ModelError::InconsistentTarget(format!(
                            "bath '{}' targets the cavity mode but none is present",
                            b.label
                        ))
                    })?;
                    kron3(&i_s, &i_q, &mode_position(c.n_fock, c.omega_c))
                }
            };
            h = h + s_full.dot(&s_full).mapv(|v| v * b.reorganization);
            counterterms.push((b.label.clone(), b.reorganization));
            coupling_ops.push((s_full, b.label.clone()));
        }

        let side_op = kron3(&super::complexify(&basis.side_projector()), &i_q, &i_f);

        Ok(CompositeSystem {
            hamiltonian: h,
            coupling_ops,
            side_op,
            dipole_op,
            counterterm_record: counterterms,
            dims,
        })
    }

    /// Gap between the two polariton eigenstates that hybridize the bare
    /// |v2, 0 photons> and |v1, 1 photon> product states, found by overlap
    /// ranking. Meaningful near resonance omega_c ~ E2 - (E0+E1)/2.
    pub fn polariton_gap(&self) -> Result<f64, ModelError> {
        if self.dims.n_states < 3 || self.dims.n_fock < 2 {
            return Err(ModelError::BadParameter(
                "polariton gap needs >= 3 vibrational states and >= 2 photon states".into(),
            ));
        }
        let (vals, vecs) = eigh(&self.hamiltonian);
        let a = self.dims.index_of(2, 0, 0);
        let b = self.dims.index_of(1, 0, 1);
        let mut scored: Vec<(f64, usize)> = (0..vals.len())
            .map(|k| {
                (
                    vecs[[a, k]].norm_sqr() + vecs[[b, k]].norm_sqr(),
                    k,
                )
            })
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0));
        Ok((vals[scored[0].1] - vals[scored[1].1]).abs())
    }
}

/// Thermal polaron suppression of the tunnel coupling by a cavity mode:
/// Delta_eff = Delta exp(-eta_c^2 dmu^2 coth(beta w_c / 2) / 2), the
/// Gaussian average of the photon displacement operator generated by the
/// light-matter coupling.
pub fn polaron_renormalized_tunneling(
    doublet: &super::LocalizedDoublet,
    cavity: &CavitySpec,
    temperature_kelvin: f64,
) -> f64 {
    let beta = beta_from_kelvin(temperature_kelvin);
    let coth = 1.0 / (0.5 * beta * cavity.omega_c).tanh();
    let expo = 0.5 * cavity.eta_c.powi(2) * doublet.dipole_asymmetry.powi(2) * coth;
    doublet.tunnel_coupling * (-expo).exp()
}
