//! Test-side oracles. Nothing here calls into the library's quadrature.
#![allow(dead_code)]

/// Adaptive Simpson on [a, b] to absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        // roundoff floor on the local error target
        let target = (15.0 * tol).max(1e-15 * (left.abs() + right.abs()));
        if depth == 0 || delta.abs() <= target {
            return left + right + delta / 15.0;
        }
        let t = 0.5 * tol;
        rec(f, a, m, fa, flm, fm, left, t, depth - 1) + rec(f, m, b, fm, frm, fb, right, t, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// ∫_{x+ε}^{b} f(t)/(t−x)^k dt through t − x = ε(L/ε)^s, L = b − x, which
/// turns the near-singular end into an exponential profile in s.
fn log_mapped<F: Fn(f64) -> f64>(f: &F, x: f64, b: f64, eps: f64, k: i32, tol: f64) -> f64 {
    let ratio = ((b - x) / eps).ln();
    let g = |s: f64| {
        let d = eps * (ratio * s).exp();
        f(x + d) * d.powi(1 - k) * ratio
    };
    simpson(&g, 0.0, 1.0, tol)
}

/// Richardson extrapolation of r(ε) = L + c₁ε + c₂ε² + … from ε, ε/2, ε/4, ε/8.
fn richardson(r: &dyn Fn(f64) -> f64, eps: f64) -> f64 {
    let mut t: Vec<f64> = (0..4).map(|k| r(eps / f64::powi(2.0, k))).collect();
    for level in 1..t.len() {
        let p = f64::powi(2.0, level as i32);
        for k in (level..t.len()).rev() {
            t[k] = (p * t[k] - t[k - 1]) / (p - 1.0);
        }
    }
    t[3]
}

/// p.f.∫ₓᵇ f(t)/(t−x) dt as lim_ε [∫_{x+ε}^b f/(t−x) + f(x) ln ε].
pub fn pf1_upper_oracle<F: Fn(f64) -> f64>(f: &F, x: f64, b: f64) -> f64 {
    let fx = f(x);
    let eps = 1e-2 * (b - x);
    let r = |e: f64| log_mapped(f, x, b, e, 1, 1e-13) + fx * e.ln();
    richardson(&r, eps)
}

/// p.f.∫ₓᵇ f(t)/(t−x)² dt as lim_ε [∫_{x+ε}^b f/(t−x)² − f(x)/ε + f′(x) ln ε].
pub fn pf2_upper_oracle<F: Fn(f64) -> f64>(f: &F, df: f64, x: f64, b: f64) -> f64 {
    let fx = f(x);
    let eps = 1e-2 * (b - x);
    let r = |e: f64| log_mapped(f, x, b, e, 2, 1e-13 / eps) - fx / e + df * e.ln();
    richardson(&r, eps)
}

/// p.f.∫ₐˣ f(t)/(t−x) dt as lim_ε [∫_a^{x−ε} f/(t−x) − f(x) ln ε].
pub fn pf1_lower_oracle<F: Fn(f64) -> f64>(f: &F, x: f64, a: f64) -> f64 {
    // t = 2x − s maps it onto an upper finite part with the sign of 1/(t−x) flipped
    -pf1_upper_oracle(&|s: f64| f(2.0 * x - s), x, 2.0 * x - a)
}

/// Central difference.
pub fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Fourth-order central difference.
pub fn central4<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Legendre polynomial Pₗ by the three-term recurrence.
pub fn legendre(l: usize, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    if l == 0 {
        return p0;
    }
    for k in 1..l {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * t * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// √(E(E′+2)/(E′(E+2))), written out independently.
pub fn mu_ref(ep: f64, e: f64) -> f64 {
    (e * (ep + 2.0) / (ep * (e + 2.0))).sqrt()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}
