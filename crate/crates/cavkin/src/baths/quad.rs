//! Adaptive quadrature and oscillatory-integral machinery used to evaluate
//! bath correlation functions directly from their defining integrals. This
//! is the module's measurement standard: expansions are certified against
//! it, so it deliberately shares no code with the residue algebra.

use num_complex::Complex64 as C64;

// Gauss-Kronrod (G7, K15) nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut fk = 0.0;
    let mut fg = 0.0;
    for i in 0..8 {
        if i == 7 {
            let v = f(c);
            fk += WGK[7] * v;
            fg += WG[3] * v;
        } else {
            let v1 = f(c - h * XGK[i]);
            let v2 = f(c + h * XGK[i]);
            fk += WGK[i] * (v1 + v2);
            if i % 2 == 1 {
                fg += WG[i / 2] * (v1 + v2);
            }
        }
    }
    (h * fk, (h * (fk - fg)).abs())
}

/// Globally adaptive bisection on the Kronrod error estimate: the panel
/// with the worst estimate is split until the summed estimate meets
/// `tol`, the worst panel reaches the rounding floor of its own value,
/// or the panel budget runs out. Returns (value, summed error estimate);
/// the estimate is honest even when the target was not reached.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const MAX_PANELS: usize = 4096;
    let (v, e) = gk15(f, a, b);
    let mut panels = vec![(a, b, v, e)];
    let mut total_err = e;
    while total_err > tol && panels.len() < MAX_PANELS {
        let mut wi = 0;
        for (i, p) in panels.iter().enumerate() {
            if p.3 > panels[wi].3 {
                wi = i;
            }
        }
        let (pa, pb, pv, pe) = panels[wi];
        // splitting cannot improve a panel whose estimate already sits
        // at the rounding floor of its own magnitude or width
        let floor = 1e-15 * pv.abs() + f64::MIN_POSITIVE;
        if pe <= floor || pb - pa <= f64::EPSILON * (pa.abs() + pb.abs()) {
            break;
        }
        let m = 0.5 * (pa + pb);
        let (v1, e1) = gk15(f, pa, m);
        let (v2, e2) = gk15(f, m, pb);
        panels[wi] = (pa, m, v1, e1);
        panels.push((m, pb, v2, e2));
        total_err += e1 + e2 - pe;
    }
    let value = panels.iter().map(|p| p.2).sum();
    let err = panels.iter().map(|p| p.3).sum();
    (value, err)
}

/// Wynn epsilon acceleration of a partial-sum sequence; returns the best
/// even-column extrapolant.
pub fn wynn_epsilon(sums: &[f64]) -> f64 {
    let n = sums.len();
    if n == 0 {
        return 0.0;
    }
    // tab[j][k]: epsilon table, k=0 column of zeros, k=1 the sums
    let mut tab = vec![vec![0.0f64; n + 1]; n];
    for j in 0..n {
        tab[j][1] = sums[j];
    }
    let mut best = sums[n - 1];
    for k in 2..=n {
        for j in 0..=(n - k) {
            let d = tab[j + 1][k - 1] - tab[j][k - 1];
            if d == 0.0 {
                return tab[j + 1][k - 1];
            }
            tab[j][k] = tab[j + 1][k - 2] + 1.0 / d;
        }
        if k % 2 == 1 {
            best = tab[n - k][k];
        }
    }
    best
}

/// Semi-infinite Fourier integrals of a smooth, slowly decaying envelope:
/// (Int_0^inf g(w) cos(wt) dw, Int_0^inf g(w) sin(wt) dw). The structured
/// region (a few omega_scale widths) is integrated adaptively; the
/// oscillatory tail is summed over half-period segments and accelerated
/// with the epsilon algorithm, which handles envelopes decaying as slowly
/// as 1/w.
pub fn fourier_pair(
    g: &impl Fn(f64) -> f64,
    t: f64,
    omega_scale: f64,
    tol_rel: f64,
) -> (f64, f64) {
    assert!(t > 0.0, "oscillatory path needs t > 0");
    let h = std::f64::consts::PI / t;
    let nseg_core = ((8.0 * omega_scale / h).ceil() as usize).max(1);
    let w0 = nseg_core as f64 * h;
    let scale = g(omega_scale).abs() + g(0.5 * omega_scale).abs() + 1e-300;
    let atol = tol_rel * scale * omega_scale;
    let (cos_core, _) = integrate(&|w| g(w) * (w * t).cos(), 0.0, w0, atol);
    let (sin_core, _) = integrate(&|w| g(w) * (w * t).sin(), 0.0, w0, atol);
    const NSEG: usize = 64;
    let mut cs = [0.0f64; NSEG];
    let mut ss = [0.0f64; NSEG];
    for k in 0..NSEG {
        let a = w0 + k as f64 * h;
        let b = a + h;
        cs[k] = integrate(&|w| g(w) * (w * t).cos(), a, b, atol / 8.0).0;
        ss[k] = integrate(&|w| g(w) * (w * t).sin(), a, b, atol / 8.0).0;
    }
    let mut csum = [0.0f64; NSEG];
    let mut ssum = [0.0f64; NSEG];
    let mut acc_c = 0.0;
    let mut acc_s = 0.0;
    for k in 0..NSEG {
        acc_c += cs[k];
        acc_s += ss[k];
        csum[k] = acc_c;
        ssum[k] = acc_s;
    }
    (
        cos_core + wynn_epsilon(&csum),
        sin_core + wynn_epsilon(&ssum),
    )
}

/// Bath correlation function from its defining integral,
/// C(t) = (1/pi) Int_0^inf J(w) [coth(bw/2) cos(wt) - i sin(wt)] dw,
/// by adaptive oscillatory quadrature. Test oracle: independent of the
/// residue expansions it certifies. Requires t > 0; for densities with
/// J ~ 1/w tails the t = 0 limit diverges logarithmically.
pub fn correlation_oracle(
    j: &impl Fn(f64) -> f64,
    beta: f64,
    t: f64,
    omega_scale: f64,
) -> C64 {
    let g_re = |w: f64| {
        if w == 0.0 {
            return 0.0;
        }
        let x = beta * w / 2.0;
        let coth = if x > 1e-8 { 1.0 / x.tanh() } else { 1.0 / x + x / 3.0 };
        j(w) * coth / std::f64::consts::PI
    };
    let g_im = |w: f64| j(w) / std::f64::consts::PI;
    let (re, _) = fourier_pair(&g_re, t, omega_scale, 1e-9);
    let (_, im) = fourier_pair(&g_im, t, omega_scale, 1e-9);
    C64::new(re, -im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact_on_kronrod() {
        // degree-7 polynomial is exact for G7 and K15 alike
        let f = |x: f64| 3.0 * x.powi(7) - x.powi(4) + 2.0 * x - 5.0;
        let (v, e) = integrate(&f, -1.0, 2.0, 1e-14);
        // antiderivative: 3/8 x^8 - x^5/5 + x^2 - 5x
        let anti = |x: f64| 0.375 * x.powi(8) - 0.2 * x.powi(5) + x * x - 5.0 * x;
        assert_relative_eq!(v, anti(2.0) - anti(-1.0), epsilon = 1e-12);
        assert!(e < 1e-10);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        // Lorentzian of width 1e-3 inside a wide interval
        let g = 1e-3;
        let f = |x: f64| g / (x * x + g * g);
        let (v, _) = integrate(&f, -10.0, 10.0, 1e-13);
        assert_relative_eq!(v, 2.0 * (10.0 / g).atan(), epsilon = 1e-10);
    }

    #[test]
    fn epsilon_accelerates_alternating_series() {
        // log(2) = sum (-1)^{k+1}/k, very slowly converging
        let mut sums = Vec::new();
        let mut s = 0.0;
        for k in 1..=20 {
            s += if k % 2 == 1 { 1.0 / k as f64 } else { -1.0 / k as f64 };
            sums.push(s);
        }
        let acc = wynn_epsilon(&sums);
        assert_relative_eq!(acc, 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn fourier_pair_against_closed_form() {
        // Int_0^inf cos(wt)/(w^2+g^2) dw = pi/(2g) e^{-gt}
        // Int_0^inf w sin(wt)/(w^2+g^2) dw = pi/2 e^{-gt}
        let g = 0.37;
        let t = 5.0;
        let (c, _) = fourier_pair(&|w: f64| 1.0 / (w * w + g * g), t, g, 1e-11);
        assert_relative_eq!(
            c,
            std::f64::consts::FRAC_PI_2 / g * (-g * t).exp(),
            max_relative = 1e-9
        );
        let (_, s) = fourier_pair(&|w: f64| w / (w * w + g * g), t, g, 1e-11);
        assert_relative_eq!(
            s,
            std::f64::consts::FRAC_PI_2 * (-g * t).exp(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn oracle_matches_brute_force_matsubara() {
        // Debye bath: closed-form pole term + dense Matsubara sum.
        let cm = 219474.6313632;
        let gam = 200.0 / cm;
        let lam = 0.1 * (1000.0 / cm) * gam / 2.0;
        let beta = 1.0 / (3.166811563e-6 * 300.0);
        let jfun = move |w: f64| 2.0 * lam * w * gam / (w * w + gam * gam);
        let reference = |t: f64| -> C64 {
            let mut re = lam * gam / (beta * gam / 2.0).tan() * (-gam * t).exp();
            for k in 1..=2_000_000u64 {
                let nu = 2.0 * std::f64::consts::PI * k as f64 / beta;
                re += 4.0 * lam * gam / beta * nu / (nu * nu - gam * gam) * (-nu * t).exp();
            }
            C64::new(re, -lam * gam * (-gam * t).exp())
        };
        for &t in &[5.0, 200.0, 5486.9] {
            let o = correlation_oracle(&jfun, beta, t, gam);
            let r = reference(t);
            assert!(
                (o - r).norm() / r.norm() < 1e-10,
                "t={t}: oracle {o} vs reference {r}"
            );
        }
    }
}
