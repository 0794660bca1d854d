//! Durable snapshots of a hierarchy propagation.
//!
//! A checkpoint is only meaningful for the exact hierarchy that wrote
//! it: the ADO layout depends on the mode list and the truncation
//! shape. Files therefore carry a fingerprint of both and refuse to
//! load into anything else. Values round-trip bit exactly through the
//! shortest-representation float encoding.

use super::{Hierarchy, HierarchyState};
use crate::error::DynamicsError;
use ndarray::Array3;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    fingerprint: String,
    time: f64,
    n_ados: usize,
    dim: usize,
    /// Row-major (ado, row, col), each entry [re, im].
    pool: Vec<[f64; 2]>,
}

/// Digest of everything that fixes the pool layout and the generator:
/// dimension, mode list with coefficients, and the full index set.
pub fn hierarchy_fingerprint(h: &Hierarchy) -> String {
    let mut hasher = Sha256::new();
    hasher.update((h.dim as u64).to_le_bytes());
    hasher.update((h.n_modes() as u64).to_le_bytes());
    for m in &h.modes {
        hasher.update((m.bath as u64).to_le_bytes());
        for x in [m.c.re, m.c.im, m.cbar.re, m.cbar.im, m.nu.re, m.nu.im] {
            hasher.update(x.to_le_bytes());
        }
    }
    for idx in &h.indices {
        for &n in idx {
            hasher.update(n.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

pub fn save(
    path: &Path,
    h: &Hierarchy,
    state: &HierarchyState,
) -> Result<(), DynamicsError> {
    if state.pool.dim() != (h.n_ados(), h.dim, h.dim) {
        return Err(DynamicsError::CheckpointMismatch(format!(
            "state shape {:?} does not belong to this hierarchy",
            state.pool.dim()
        )));
    }
    let mut pool = Vec::with_capacity(state.pool.len());
    for v in state.pool.iter() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(DynamicsError::NonFinite { t: state.time });
        }
        pool.push([v.re, v.im]);
    }
    let snap = Checkpoint {
        version: FORMAT_VERSION,
        fingerprint: hierarchy_fingerprint(h),
        time: state.time,
        n_ados: h.n_ados(),
        dim: h.dim,
        pool,
    };
    let writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(writer, &snap)
        .map_err(|e| DynamicsError::CheckpointMismatch(format!("write failed: {e}")))?;
    Ok(())
}

pub fn load(path: &Path, h: &Hierarchy) -> Result<HierarchyState, DynamicsError> {
    let reader = BufReader::new(File::open(path)?);
    let snap: Checkpoint = serde_json::from_reader(reader)
        .map_err(|e| DynamicsError::CheckpointMismatch(format!("not a checkpoint: {e}")))?;
    if snap.version != FORMAT_VERSION {
        return Err(DynamicsError::CheckpointMismatch(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            snap.version
        )));
    }
    let expect = hierarchy_fingerprint(h);
    if snap.fingerprint != expect {
        return Err(DynamicsError::CheckpointMismatch(
            "fingerprint does not match the requested hierarchy; the checkpoint was \
             written with different modes or truncation"
                .into(),
        ));
    }
    if snap.n_ados != h.n_ados() || snap.dim != h.dim {
        return Err(DynamicsError::CheckpointMismatch(format!(
            "shape ({}, {}) does not match the hierarchy ({}, {})",
            snap.n_ados,
            snap.dim,
            h.n_ados(),
            h.dim
        )));
    }
    if snap.pool.len() != snap.n_ados * snap.dim * snap.dim {
        return Err(DynamicsError::CheckpointMismatch(format!(
            "pool holds {} entries, expected {}",
            snap.pool.len(),
            snap.n_ados * snap.dim * snap.dim
        )));
    }
    let data: Vec<C64> = snap.pool.iter().map(|&[re, im]| C64::new(re, im)).collect();
    let pool = Array3::from_shape_vec((snap.n_ados, snap.dim, snap.dim), data)
        .expect("shape was validated");
    Ok(HierarchyState { pool, time: snap.time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baths::{decompose_debye, BathLabel, DebyeBath, PadeOrder};
    use crate::heom::{modes_from_expansions, TruncationSpec};
    use crate::units::{beta_from_kelvin, cm1_to_hartree};

    fn small_hierarchy(l: usize) -> Hierarchy {
        let beta = beta_from_kelvin(300.0);
        let bath =
            DebyeBath::new(cm1_to_hartree(50.0), cm1_to_hartree(200.0), BathLabel::Solvent)
                .unwrap();
        let exp = decompose_debye(&bath, beta, PadeOrder::Fixed(2)).unwrap();
        let modes = modes_from_expansions(&[&exp]).unwrap();
        Hierarchy::enumerate(3, modes, &TruncationSpec::excitation(l)).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let h = small_hierarchy(4);
        let mut state = HierarchyState::zeros(&h);
        for (k, v) in state.pool.iter_mut().enumerate() {
            // awkward irrational values, not representable exactly in
            // decimal, to prove the encoding is lossless
            *v = C64::new((k as f64 + 0.3).sin() / 3.0, (k as f64).cos() * 1e-17);
        }
        state.time = 1234.567891011e-3;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        save(&path, &h, &state).unwrap();
        let back = load(&path, &h).unwrap();

        assert_eq!(back.time.to_bits(), state.time.to_bits());
        for (a, b) in back.pool.iter().zip(state.pool.iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn foreign_checkpoints_are_refused() {
        let h4 = small_hierarchy(4);
        let h6 = small_hierarchy(6);
        let state = HierarchyState::zeros(&h4);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        save(&path, &h4, &state).unwrap();

        let err = load(&path, &h6).unwrap_err();
        assert!(matches!(err, DynamicsError::CheckpointMismatch(_)), "{err}");

        std::fs::write(&path, b"{\"version\": 99}").unwrap();
        let err = load(&path, &h4).unwrap_err();
        assert!(matches!(err, DynamicsError::CheckpointMismatch(_)), "{err}");

        std::fs::write(&path, b"not json at all").unwrap();
        let err = load(&path, &h4).unwrap_err();
        assert!(matches!(err, DynamicsError::CheckpointMismatch(_)), "{err}");

        let err = load(&dir.path().join("missing.json"), &h4).unwrap_err();
        assert!(matches!(err, DynamicsError::CheckpointIo(_)), "{err}");
    }

    #[test]
    fn non_finite_states_are_never_written() {
        let h = small_hierarchy(2);
        let mut state = HierarchyState::zeros(&h);
        state.pool[[0, 0, 0]] = C64::new(f64::NAN, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let err = save(&dir.path().join("bad.json"), &h, &state).unwrap_err();
        assert!(matches!(err, DynamicsError::NonFinite { .. }), "{err}");
    }
}
