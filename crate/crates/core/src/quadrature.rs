//! Gauss–Legendre rules, graded composite panels and product rules on the
//! sphere, the circle and the ball.
//!
//! All rules return nodes in a fixed order so that every reduction built on
//! top of them is reproducible.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Node layout of a composite Gauss–Legendre rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub panel_count: usize,
    pub nodes_per_panel: usize,
    /// Ratio between neighbouring panel widths, growing away from the
    /// singular endpoint. `1.0` gives uniform panels.
    pub endpoint_grading: f64,
    /// Integrate in `u` with `t = x + u²` instead of in `t`.
    #[serde(default)]
    pub sqrt_substitution: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            panel_count: 16,
            nodes_per_panel: 12,
            endpoint_grading: 2.0,
            sqrt_substitution: false,
        }
    }
}

impl QuadratureSpec {
    pub fn new(panel_count: usize, nodes_per_panel: usize, endpoint_grading: f64) -> Self {
        QuadratureSpec {
            panel_count,
            nodes_per_panel,
            endpoint_grading,
            sqrt_substitution: false,
        }
    }

    pub fn with_sqrt_substitution(mut self, on: bool) -> Self {
        self.sqrt_substitution = on;
        self
    }

    pub fn total_nodes(&self) -> usize {
        self.panel_count * self.nodes_per_panel
    }

    pub fn is_valid(&self) -> bool {
        self.panel_count > 0 && self.nodes_per_panel > 0 && self.endpoint_grading >= 1.0
    }
}

/// Where the panels of a composite rule are refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grading {
    Uniform,
    /// Refine toward the left endpoint.
    Left,
    /// Refine toward the right endpoint.
    Right,
    /// Refine toward both endpoints (the interval is split at its midpoint).
    Both,
}

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&t, &w)| (c + h * t, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mut acc = KahanSum::new();
        for (t, w) in self.mapped(a, b) {
            acc.add(w * f(t));
        }
        acc.value()
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Legendre polynomial values P_0..=P_l at x.
pub fn legendre_table(l_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(l_max + 1);
    out.push(1.0);
    if l_max >= 1 {
        out.push(x);
    }
    for k in 2..=l_max {
        let kf = k as f64;
        let p = ((2.0 * kf - 1.0) * x * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
        out.push(p);
    }
    out
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        KahanSum::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum of a slice in index order with compensation.
pub fn kahan_sum(values: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Panel breakpoints on [a, b] for the given grading.
pub fn panel_breaks(a: f64, b: f64, panels: usize, ratio: f64, grading: Grading) -> Vec<f64> {
    let geometric = |n: usize, toward_left: bool| -> Vec<f64> {
        // fractions in [0,1], refined toward 0
        let mut fr = Vec::with_capacity(n + 1);
        if ratio <= 1.0 || n == 1 {
            for k in 0..=n {
                fr.push(k as f64 / n as f64);
            }
        } else {
            let denom = ratio.powi(n as i32) - 1.0;
            for k in 0..=n {
                fr.push((ratio.powi(k as i32) - 1.0) / denom);
            }
            fr[n] = 1.0;
        }
        if !toward_left {
            fr = fr.iter().rev().map(|f| 1.0 - f).collect();
        }
        fr
    };
    let map = |fr: Vec<f64>, lo: f64, hi: f64| -> Vec<f64> {
        let n = fr.len() - 1;
        let mut out: Vec<f64> = fr.iter().map(|f| lo + (hi - lo) * f).collect();
        out[0] = lo;
        out[n] = hi;
        out
    };
    match grading {
        Grading::Uniform => map((0..=panels).map(|k| k as f64 / panels as f64).collect(), a, b),
        Grading::Left => map(geometric(panels, true), a, b),
        Grading::Right => map(geometric(panels, false), a, b),
        Grading::Both => {
            let mid = 0.5 * (a + b);
            let mut left = map(geometric(panels, true), a, mid);
            let right = map(geometric(panels, false), mid, b);
            left.pop();
            left.extend(right);
            left
        }
    }
}

/// Composite rule on [a, b]: `(node, weight)` pairs in ascending node order.
///
/// With `Grading::Both` the panel count applies to each half.
pub fn composite_rule(a: f64, b: f64, spec: &QuadratureSpec, grading: Grading) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(spec.nodes_per_panel);
    composite_rule_with(&gl, a, b, spec, grading)
}

/// As [`composite_rule`] with a precomputed reference rule.
pub fn composite_rule_with(
    gl: &GaussLegendre,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
    grading: Grading,
) -> Vec<(f64, f64)> {
    if b <= a {
        return Vec::new();
    }
    let breaks = panel_breaks(a, b, spec.panel_count, spec.endpoint_grading, grading);
    let mut out = Vec::with_capacity((breaks.len() - 1) * gl.len());
    for w in breaks.windows(2) {
        out.extend(gl.mapped(w[0], w[1]));
    }
    out
}

/// Composite rule over [a, b] whose panels also respect interior breakpoints.
/// Each sub-interval is graded toward both of its ends.
pub fn composite_rule_with_breaks(
    a: f64,
    b: f64,
    interior: &[f64],
    spec: &QuadratureSpec,
) -> Vec<(f64, f64)> {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = interior
        .iter()
        .copied()
        .filter(|&p| p > a + 1e-12 * (b - a) && p < b - 1e-12 * (b - a))
        .collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    inner.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    pts.extend(inner);
    pts.push(b);
    let gl = GaussLegendre::new(spec.nodes_per_panel);
    let mut out = Vec::new();
    for w in pts.windows(2) {
        out.extend(composite_rule_with(&gl, w[0], w[1], spec, Grading::Both));
    }
    out
}

/// Element `i` of the van der Corput sequence in base `b`.
pub fn halton(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Product rule on S²: Gauss–Legendre in cos θ times the trapezoid rule in φ.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub points: Vec<(Vector3<f64>, f64)>,
}

impl SphereRule {
    pub fn new(n_polar: usize, n_azimuth: usize) -> Self {
        let gl = GaussLegendre::new(n_polar);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut points = Vec::with_capacity(n_polar * n_azimuth);
        for (&z, &wz) in gl.nodes.iter().zip(&gl.weights) {
            let rho = (1.0 - z * z).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = dphi * k as f64;
                let w = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
                points.push((w, wz * dphi));
            }
        }
        SphereRule { points }
    }

    /// Rule on the cap {ω : ω·axis ≥ 0} (or ≤ 0 when `upper` is false),
    /// built in a frame aligned with `axis`.
    pub fn hemisphere(axis: &Vector3<f64>, upper: bool, n_polar: usize, n_azimuth: usize) -> Self {
        let gl = GaussLegendre::new(n_polar);
        let r = crate::sphere_geom::rotation_to(axis);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut points = Vec::with_capacity(n_polar * n_azimuth);
        let (lo, hi) = if upper { (0.0, 1.0) } else { (-1.0, 0.0) };
        for (z, wz) in gl.mapped(lo, hi) {
            let rho = (1.0 - z * z).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = dphi * k as f64;
                let local = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
                points.push((r * local, wz * dphi));
            }
        }
        SphereRule { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: FnMut(&Vector3<f64>) -> f64>(&self, mut f: F) -> f64 {
        let mut acc = KahanSum::new();
        for (w, wt) in &self.points {
            acc.add(wt * f(w));
        }
        acc.value()
    }
}

/// Trapezoid nodes on [0, 2π).
#[derive(Debug, Clone)]
pub struct CircleRule {
    pub angles: Vec<(f64, f64)>,
    pub weight: f64,
}

impl CircleRule {
    pub fn new(n: usize) -> Self {
        let h = 2.0 * PI / n as f64;
        let angles = (0..n).map(|k| {
            let s = h * k as f64;
            (s.cos(), s.sin())
        });
        CircleRule {
            angles: angles.collect(),
            weight: h,
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// Product rule on the ball of radius `radius`: Gauss–Legendre in r (with
/// the r² Jacobian folded into the weights) times a sphere rule.
#[derive(Debug, Clone)]
pub struct BallRule {
    pub points: Vec<(Vector3<f64>, f64)>,
}

impl BallRule {
    pub fn new(radius: f64, n_radial: usize, n_polar: usize, n_azimuth: usize) -> Self {
        let gl = GaussLegendre::new(n_radial);
        let sphere = SphereRule::new(n_polar, n_azimuth);
        let mut points = Vec::with_capacity(n_radial * sphere.len());
        for (r, wr) in gl.mapped(0.0, radius) {
            for (w, ww) in &sphere.points {
                points.push((w * r, wr * r * r * ww));
            }
        }
        BallRule { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..20 {
            let gl = GaussLegendre::new(n);
            for deg in 0..(2 * n) {
                let got = gl.integrate(-1.0, 1.0, |x| x.powi(deg as i32));
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg} got={got}");
            }
        }
    }

    #[test]
    fn weights_sum_to_two() {
        let gl = GaussLegendre::new(12);
        assert!((kahan_sum(&gl.weights) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn graded_breaks_monotone_and_refined() {
        let b = panel_breaks(0.0, 1.0, 16, 2.0, Grading::Left);
        assert_eq!(b.len(), 17);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert!(b[1] - b[0] < 1e-4);
        let r = panel_breaks(0.0, 1.0, 16, 2.0, Grading::Right);
        assert!(r[16] - r[15] < 1e-4);
        let both = panel_breaks(0.0, 1.0, 4, 2.0, Grading::Both);
        assert_eq!(both.len(), 9);
        assert!((both[4] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn composite_rule_handles_log_singularity() {
        let spec = QuadratureSpec::new(16, 12, 2.0);
        let rule = composite_rule(0.0, 1.0, &spec, Grading::Left);
        let got: f64 = rule.iter().map(|(t, w)| w * t.ln()).sum();
        assert!((got + 1.0).abs() < 1e-6, "{got}");
    }

    #[test]
    fn sphere_rule_area_and_moments() {
        let s = SphereRule::new(24, 48);
        assert!((s.integrate(|_| 1.0) - 4.0 * PI).abs() < 1e-12);
        assert!((s.integrate(|w| w[2] * w[2]) - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!(s.integrate(|w| w[0]).abs() < 1e-13);
    }

    #[test]
    fn hemisphere_rules_split_the_sphere() {
        let axis = Vector3::new(0.3, -0.4, 0.5).normalize();
        let up = SphereRule::hemisphere(&axis, true, 8, 16);
        let dn = SphereRule::hemisphere(&axis, false, 8, 16);
        let a = up.integrate(|w| w.dot(&axis));
        let b = dn.integrate(|w| w.dot(&axis));
        assert!((a - PI).abs() < 1e-12);
        assert!((b + PI).abs() < 1e-12);
    }

    #[test]
    fn ball_rule_volume() {
        let b = BallRule::new(2.0, 4, 4, 8);
        let v: f64 = b.points.iter().map(|p| p.1).sum();
        assert!((v - 4.0 / 3.0 * PI * 8.0).abs() < 1e-11);
    }

    #[test]
    fn legendre_table_values() {
        let t = legendre_table(3, 0.5);
        assert!((t[2] - (-0.125)).abs() < 1e-15);
        assert!((t[3] - (-0.4375)).abs() < 1e-15);
    }
}
