//! Dense linear-algebra helpers shared across modules: Hermitian
//! eigendecompositions (nalgebra backed), Kronecker products, matrix
//! functions of Hermitian operators, and small-degree complex polynomial
//! root finding.

use nalgebra::{Complex, DMatrix};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

/// Eigendecomposition of a real symmetric matrix, eigenvalues ascending.
/// Returns (values, vectors) with vectors in columns.
pub fn eigh_real(m: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let se = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let vals = Array1::from_iter(order.iter().map(|&k| se.eigenvalues[k]));
    let vecs = Array2::from_shape_fn((n, n), |(i, j)| se.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

/// Eigendecomposition of a complex Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &Array2<C64>) -> (Array1<f64>, Array2<C64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let dm = DMatrix::from_fn(n, n, |i, j| Complex::new(m[[i, j]].re, m[[i, j]].im));
    let se = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let vals = Array1::from_iter(order.iter().map(|&k| se.eigenvalues[k]));
    let vecs = Array2::from_shape_fn((n, n), |(i, j)| {
        let c = se.eigenvectors[(i, order[j])];
        C64::new(c.re, c.im)
    });
    (vals, vecs)
}

/// Kronecker product a (x) b.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// f(H) for Hermitian H via eigendecomposition.
pub fn hermitian_function(h: &Array2<C64>, f: impl Fn(f64) -> f64) -> Array2<C64> {
    let (vals, vecs) = eigh(h);
    let n = h.nrows();
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let fj = C64::new(f(vals[j]), 0.0);
        col.map_inplace(|x| *x *= fj);
    }
    let mut vd = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            vd[[i, j]] = vecs[[j, i]].conj();
        }
    }
    scaled.dot(&vd)
}

/// Normalized thermal state exp(-beta H)/Z of a Hermitian matrix.
/// Energies are shifted by the ground state before exponentiating so the
/// construction stays finite for large beta.
pub fn thermal_state(h: &Array2<C64>, beta: f64) -> Array2<C64> {
    let (vals, _) = eigh(h);
    let e0 = vals[0];
    let boltz = hermitian_function(h, |e| (-beta * (e - e0)).exp());
    let z: f64 = (0..h.nrows()).map(|i| boltz[[i, i]].re).sum();
    boltz.mapv(|x| x / z)
}

/// Trace of a square complex matrix.
pub fn trace(m: &Array2<C64>) -> C64 {
    (0..m.nrows()).map(|i| m[[i, i]]).sum()
}

/// Roots of a complex polynomial c[0] z^n + c[1] z^(n-1) + ... + c[n]
/// by Durand-Kerner iteration with Newton polish. Intended for the small
/// degrees that arise from rational spectral densities.
pub fn poly_roots(coeffs: &[C64]) -> Vec<C64> {
    let lead = coeffs[0];
    assert!(lead.norm() > 0.0, "leading coefficient must be nonzero");
    let monic: Vec<C64> = coeffs.iter().map(|c| c / lead).collect();
    let n = monic.len() - 1;
    if n == 0 {
        return vec![];
    }
    // radius bound: 1 + max |a_k|
    let r = 1.0
        + monic[1..]
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
    let mut z: Vec<C64> = (0..n)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / n as f64;
            C64::new(th.cos(), th.sin()) * (0.5 * r)
        })
        .collect();
    let eval = |x: C64| -> C64 { monic.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c) };
    for _ in 0..500 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            let step = eval(z[i]) / denom;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * r.max(1.0) {
            break;
        }
    }
    // Newton polish against the original polynomial
    let deriv: Vec<C64> = (0..n)
        .map(|k| monic[k] * C64::new((n - k) as f64, 0.0))
        .collect();
    let eval_d = |x: C64| -> C64 { deriv.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c) };
    for zi in z.iter_mut() {
        for _ in 0..8 {
            let d = eval_d(*zi);
            if d.norm() == 0.0 {
                break;
            }
            let step = eval(*zi) / d;
            *zi -= step;
            if step.norm() < 1e-16 * (zi.norm() + 1.0) {
                break;
            }
        }
    }
    z
}

/// Evaluate a complex polynomial with coefficients in descending powers.
pub fn poly_eval(coeffs: &[C64], x: C64) -> C64 {
    coeffs.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn real_symmetric_eigenvalues_sorted() {
        let m = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = eigh_real(&m);
        assert_relative_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 3.0, epsilon = 1e-12);
        // residual check
        for j in 0..2 {
            for i in 0..2 {
                let mv: f64 = (0..2).map(|k| m[[i, k]] * vecs[[k, j]]).sum();
                assert_relative_eq!(mv, vals[j] * vecs[[i, j]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_eigenvalues() {
        let m = array![
            [C64::new(1.0, 0.0), C64::new(0.0, -0.5)],
            [C64::new(0.0, 0.5), C64::new(1.0, 0.0)]
        ];
        let (vals, _) = eigh(&m);
        assert_relative_eq!(vals[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn thermal_state_two_level() {
        let m = array![
            [C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
        ];
        let rho = thermal_state(&m, 2.0);
        let z = 1.0 + (-2.0f64).exp();
        assert_relative_eq!(rho[[0, 0]].re, 1.0 / z, epsilon = 1e-12);
        assert_relative_eq!(rho[[1, 1]].re, (-2.0f64).exp() / z, epsilon = 1e-12);
    }

    #[test]
    fn cubic_roots_recovered() {
        // (z-1)(z-2i)(z+3) = z^3 + (2-2i) z^2 + (-3-4i) z + 6i
        let c = [
            C64::new(1.0, 0.0),
            C64::new(2.0, -2.0),
            C64::new(-3.0, -4.0),
            C64::new(0.0, 6.0),
        ];
        let mut roots = poly_roots(&c);
        roots.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((roots[0] - C64::new(-3.0, 0.0)).norm() < 1e-12);
        assert!((roots[1] - C64::new(0.0, 2.0)).norm() < 1e-12);
        assert!((roots[2] - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn kron_dimensions_and_values() {
        let a = array![[C64::new(1.0, 0.0), C64::new(2.0, 0.0)]];
        let b = array![[C64::new(0.0, 1.0)], [C64::new(3.0, 0.0)]];
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (2, 2));
        assert_eq!(k[[0, 1]], C64::new(0.0, 2.0));
        assert_eq!(k[[1, 0]], C64::new(3.0, 0.0));
    }
}
