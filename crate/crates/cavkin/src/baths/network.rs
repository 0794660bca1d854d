//! Exact elimination of harmonic subnetworks. A tree of bilinearly
//! coupled harmonic modes with Debye baths on its leaves and branches is
//! folded, node by node, into a single rational influence kernel K(z) for
//! the anchor coordinate; the effective spectral density follows as
//! J_eff(z) = (i/2)(K(z) - K~(z)) with K~ the conjugate-coefficient image.
//! All algebra is closed-form rational arithmetic; nothing is fitted.

use super::rational::{Poly, Rational};
use super::{BathLabel, DebyeBath};
use crate::error::BathError;
use num_complex::Complex64 as C64;

/// Where a network node hangs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NetworkParent {
    /// Directly coupled to the anchor (system) coordinate.
    Anchor,
    /// Coupled to another harmonic node, by index into `nodes`.
    Node(usize),
}

/// One harmonic mode of the environment network. The coupling enters the
/// Hamiltonian through the completed square
/// (omega^2/2)(y + coupling x_parent / omega^2)^2, so each edge carries
/// its reorganization counterterm coupling^2/(2 omega^2) on the parent.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NetworkNode {
    pub frequency: f64,
    pub coupling: f64,
    pub parent: NetworkParent,
    pub baths: Vec<DebyeBath>,
    pub label: String,
}

/// Tree of harmonic modes rooted at the anchor coordinate.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct HarmonicNetwork {
    /// Debye baths attached directly to the anchor.
    pub anchor_baths: Vec<DebyeBath>,
    /// Harmonic modes; a node's parent index must precede it.
    pub nodes: Vec<NetworkNode>,
}

impl HarmonicNetwork {
    pub fn validate(&self) -> Result<(), BathError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.frequency > 0.0) {
                return Err(BathError::BadParameter(format!(
                    "node '{}' frequency must be positive",
                    n.label
                )));
            }
            if let NetworkParent::Node(p) = n.parent {
                if p >= i {
                    return Err(BathError::BadParameter(format!(
                        "node '{}' parent index {p} must precede the node (tree order)",
                        n.label
                    )));
                }
            }
        }
        for b in self
            .anchor_baths
            .iter()
            .chain(self.nodes.iter().flat_map(|n| n.baths.iter()))
        {
            b.validate()?;
        }
        Ok(())
    }

    /// Total reorganization energy seen by the anchor: direct bath
    /// reorganizations plus coupling^2/(2 omega^2) for each first-level
    /// edge (deeper structure renormalizes inner nodes, not the anchor).
    pub fn anchor_reorganization(&self) -> f64 {
        let direct: f64 = self.anchor_baths.iter().map(|b| b.lambda_reorg).sum();
        let edges: f64 = self
            .nodes
            .iter()
            .filter(|n| n.parent == NetworkParent::Anchor)
            .map(|n| n.coupling * n.coupling / (2.0 * n.frequency * n.frequency))
            .sum();
        direct + edges
    }

    /// Fold the network into the anchor's influence kernel K(z).
    pub fn fold(&self) -> Result<EffectiveDensity, BathError> {
        self.validate()?;
        // children[i]: nodes whose parent is node i
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        let mut anchor_children = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            match n.parent {
                NetworkParent::Anchor => anchor_children.push(i),
                NetworkParent::Node(p) => children[p].push(i),
            }
        }
        let mut kernel = Rational::zero();
        for b in &self.anchor_baths {
            kernel = kernel.add(&debye_kernel(b));
        }
        for &c in &anchor_children {
            kernel = kernel.add(&self.node_kernel(c, &children));
        }
        EffectiveDensity::from_kernel(kernel, self.anchor_reorganization(), "network".into())
    }

    /// Kernel contributed to the parent by node `i` and everything below
    /// it. With K_cc = N/D the total kernel already attached to the node,
    /// the node's dressed response is 1/(w^2 - z^2 + K_cc) and the bare
    /// edge counterterm g^2/(2w^2) sits on the parent, so eliminating the
    /// node coordinate leaves
    ///   K_up(z) = g^2 (K_cc(z) - z^2) / (w^2 (w^2 - z^2 + K_cc(z))),
    /// verified against exact diagonalization of discretized networks.
    fn node_kernel(&self, i: usize, children: &[Vec<usize>]) -> Rational {
        let node = &self.nodes[i];
        let mut inner = Rational::zero();
        for b in &node.baths {
            inner = inner.add(&debye_kernel(b));
        }
        for &c in &children[i] {
            inner = inner.add(&self.node_kernel(c, children));
        }
        let g2 = node.coupling * node.coupling;
        let w2 = node.frequency * node.frequency;
        let z2 = Poly::from_real(&[1.0, 0.0, 0.0]);
        let num = inner.num.sub(&z2.mul(&inner.den)).scale(C64::new(g2, 0.0));
        let w2_minus_z2 = Poly::from_real(&[-1.0, 0.0, w2]);
        let den = w2_minus_z2
            .mul(&inner.den)
            .add(&inner.num)
            .scale(C64::new(w2, 0.0));
        Rational { num, den }.normalized()
    }
}

/// Influence kernel of a Debye bath in completed-square convention:
/// K(z) = 2 lambda z / (z + i gamma); K(0) = 0 because the reorganization
/// counterterm is part of the system Hamiltonian.
pub(super) fn debye_kernel(b: &DebyeBath) -> Rational {
    Rational {
        num: Poly(vec![C64::new(2.0 * b.lambda_reorg, 0.0), C64::new(0.0, 0.0)]),
        den: Poly(vec![C64::new(1.0, 0.0), C64::new(0.0, b.gamma)]),
    }
}

/// Rational effective spectral density with its pole structure already
/// verified: all kernel poles strictly inside the lower half plane and
/// simple.
#[derive(Debug, Clone)]
pub struct EffectiveDensity {
    pub(super) kernel: Rational,
    /// Kernel poles, all with Im < 0.
    pub(super) poles: Vec<C64>,
    /// Analytic reorganization energy (1/pi) Int J/w dw.
    pub reorganization: f64,
    pub label: String,
}

impl EffectiveDensity {
    pub(super) fn from_kernel(
        kernel: Rational,
        reorganization: f64,
        label: String,
    ) -> Result<Self, BathError> {
        let kernel = kernel.normalized();
        let poles = kernel.den.roots();
        let scale = poles.iter().map(|p| p.norm()).fold(0.0f64, f64::max).max(1e-300);
        for (i, p) in poles.iter().enumerate() {
            if p.im >= -1e-12 * scale {
                return Err(BathError::BadParameter(format!(
                    "undamped network: kernel pole at {p} not strictly in the lower half \
                     plane (attach loss to every branch)"
                )));
            }
            for q in poles.iter().skip(i + 1) {
                // a true double root splits by ~sqrt(coefficient rounding)
                // under the root finder, so the confluence window must sit
                // above sqrt(machine epsilon), not at it
                if (p - q).norm() < 1e-7 * scale {
                    return Err(BathError::HighOrderPole {
                        at: format!("{p}"),
                        multiplicity: 2,
                    });
                }
            }
        }
        Ok(EffectiveDensity {
            kernel,
            poles,
            reorganization,
            label,
        })
    }

    /// J_eff on the real axis.
    pub fn eval(&self, omega: f64) -> f64 {
        self.eval_complex(C64::new(omega, 0.0)).re
    }

    /// Analytic continuation (i/2)(K(z) - K~(z)); real on the real axis.
    pub fn eval_complex(&self, z: C64) -> C64 {
        C64::new(0.0, 0.5) * (self.kernel.eval(z) - self.kernel.conj_coeffs().eval(z))
    }

    pub fn poles(&self) -> &[C64] {
        &self.poles
    }

    /// Residue of the kernel at one of its (simple) poles.
    pub(super) fn kernel_residue(&self, p: C64) -> C64 {
        self.kernel.residue_at(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::cm1_to_hartree;
    use approx::assert_relative_eq;

    fn solvent() -> DebyeBath {
        DebyeBath::new(2.08e-7, cm1_to_hartree(200.0), BathLabel::Solvent).unwrap()
    }

    #[test]
    fn bare_debye_network_reproduces_debye_density() {
        let net = HarmonicNetwork {
            anchor_baths: vec![solvent()],
            nodes: vec![],
        };
        let j = net.fold().unwrap();
        let b = solvent();
        for &w_cm in &[10.0, 100.0, 200.0, 1000.0, 5000.0] {
            let w = cm1_to_hartree(w_cm);
            assert_relative_eq!(j.eval(w), b.density(w), max_relative = 1e-12);
        }
        assert_relative_eq!(j.reorganization, b.lambda_reorg, epsilon = 1e-20);
    }

    #[test]
    fn spectator_peak_sits_at_mode_frequency() {
        // R -- Q(1200 cm^-1, damped by the secondary bath): J_eff peaks
        // near the mode frequency and is positive everywhere.
        let omega_q = cm1_to_hartree(1200.0);
        let c_q = 5e-7;
        let net = HarmonicNetwork {
            anchor_baths: vec![solvent()],
            nodes: vec![NetworkNode {
                frequency: omega_q,
                coupling: c_q,
                parent: NetworkParent::Anchor,
                baths: vec![DebyeBath::new(6.7e-7, cm1_to_hartree(1000.0), BathLabel::Secondary).unwrap()],
                label: "spectator".into(),
            }],
        };
        let j = net.fold().unwrap();
        let mut best_w = 0.0;
        let mut best_v = 0.0;
        for k in 1..4000 {
            let w = cm1_to_hartree(k as f64);
            let v = j.eval(w);
            assert!(v >= -1e-25, "J_eff negative at {k} cm^-1: {v}");
            if v > best_v {
                best_v = v;
                best_w = k as f64;
            }
        }
        assert!(
            (best_w - 1200.0).abs() < 30.0,
            "peak at {best_w} cm^-1, expected near 1200"
        );
    }

    #[test]
    fn cavity_on_spectator_splits_the_peak() {
        // R -- Q -- q_c(resonant with Q, lossy): polaritonic normal modes
        // split the single resonance into two.
        let omega_q = cm1_to_hartree(1200.0);
        let omega_c = omega_q;
        let eta_c = 0.01;
        let g = 2.0f64.sqrt() * omega_c.powf(1.5) * eta_c;
        let net = HarmonicNetwork {
            anchor_baths: vec![],
            nodes: vec![
                NetworkNode {
                    frequency: omega_q,
                    coupling: 5e-7,
                    parent: NetworkParent::Anchor,
                    baths: vec![
                        DebyeBath::new(6.7e-7, cm1_to_hartree(1000.0), BathLabel::Secondary).unwrap(),
                    ],
                    label: "spectator".into(),
                },
                NetworkNode {
                    frequency: omega_c,
                    coupling: g,
                    parent: NetworkParent::Node(0),
                    baths: vec![
                        DebyeBath::new(2e-7, cm1_to_hartree(1000.0), BathLabel::Loss).unwrap(),
                    ],
                    label: "cavity".into(),
                },
            ],
        };
        let j = net.fold().unwrap();
        // local maxima over a fine grid
        let mut peaks = Vec::new();
        let mut prev2 = j.eval(cm1_to_hartree(800.0));
        let mut prev1 = j.eval(cm1_to_hartree(801.0));
        for k in 802..1600 {
            let v = j.eval(cm1_to_hartree(k as f64));
            if prev1 > prev2 && prev1 > v {
                peaks.push((k - 1) as f64);
            }
            prev2 = prev1;
            prev1 = v;
        }
        assert_eq!(peaks.len(), 2, "expected split resonance, got {peaks:?}");
        assert!(peaks[0] < 1200.0 && peaks[1] > 1200.0);
    }

    #[test]
    fn undamped_branch_is_rejected() {
        let net = HarmonicNetwork {
            anchor_baths: vec![],
            nodes: vec![NetworkNode {
                frequency: cm1_to_hartree(1200.0),
                coupling: 5e-7,
                parent: NetworkParent::Anchor,
                baths: vec![], // nothing dissipates this mode
                label: "lonely".into(),
            }],
        };
        match net.fold() {
            Err(BathError::BadParameter(msg)) => assert!(msg.contains("undamped")),
            other => panic!("expected undamped rejection, got {other:?}"),
        }
    }

    #[test]
    fn first_edge_counterterm_rule() {
        let omega_c = cm1_to_hartree(1142.0);
        let eta_c = 0.00125;
        let g = 2.0f64.sqrt() * omega_c.powf(1.5) * eta_c;
        let net = HarmonicNetwork {
            anchor_baths: vec![],
            nodes: vec![NetworkNode {
                frequency: omega_c,
                coupling: g,
                parent: NetworkParent::Anchor,
                baths: vec![DebyeBath::new(1e-7, cm1_to_hartree(1000.0), BathLabel::Loss).unwrap()],
                label: "cavity".into(),
            }],
        };
        // g^2/(2 w^2) = eta_c^2 w_c for this parameterization
        assert_relative_eq!(
            net.anchor_reorganization(),
            eta_c * eta_c * omega_c,
            max_relative = 1e-14
        );
    }
}
