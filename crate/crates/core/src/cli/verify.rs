use super::CliError;
use crate::config::RunConfig;
use crate::csda::CsdaContext;
use crate::finite_part::{fubini_pf1_residual, pf1_derivative, pf1_upper, pf2_to_pf1_identity, pf2_upper, PfDensity2, PfIntegrand};
use crate::kinematics_xs::{mu, mu_de, mu_de_prime, mu_sum_identity, XsParams};
use crate::phase_field::{green_residual, phase_points, SeparableField, ANGULAR_FACTORS};
use crate::quadrature::{halton, CircleRule, QuadratureSpec, SphereRule};
use crate::sphere_geom::{circle_sphere_swap_residual, exp_map, laplace_beltrami, log_map, rotation_to, Vec3};
use crate::transport_variational::{pair_report, Assembler, TestSide, TransportForm, TrialSide};
use clap::ValueEnum;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    FinitePart,
    Geometry,
    Collision,
    Transport,
    Variational,
    Csda,
    All,
}

/// Outcome of one check: `measured` against `tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tol: f64,
    pub pass: bool,
    /// `measured` must be at least `tol` instead of below it.
    pub lower_bound: bool,
}

impl Check {
    fn below(name: &str, measured: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            tol,
            pass: measured < tol,
            lower_bound: false,
        }
    }

    fn exact(name: &str, ok: bool, measured: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            tol: 0.0,
            pass: ok,
            lower_bound: false,
        }
    }

    fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            tol: bound,
            pass: measured >= bound,
            lower_bound: true,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        let rel = if self.lower_bound { ">=" } else { "<" };
        write!(f, "{tag} {:<44} measured={:.3e} {rel} {:.1e}", self.name, self.measured, self.tol)
    }
}

/// Maximum that keeps NaN.
fn worse(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Relative pairing error with a Cauchy–Schwarz floor for nearly orthogonal pairs.
pub(crate) fn pairing_error(a: f64, b: f64, scale: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(1e-8 * scale)
}

pub fn run_suite(suite: Suite, cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::FinitePart {
        out.extend(finite_part(cfg)?);
    }
    if all || suite == Suite::Geometry {
        out.extend(geometry(cfg)?);
    }
    if all || suite == Suite::Collision {
        out.extend(collision(cfg)?);
    }
    if all || suite == Suite::Transport {
        out.extend(transport(cfg)?);
    }
    if all || suite == Suite::Variational {
        out.extend(variational(cfg)?);
    }
    if all || suite == Suite::Csda {
        out.extend(csda(cfg)?);
    }
    Ok(out)
}

fn finite_part(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let tol = &cfg.tolerances;
    let q = QuadratureSpec::default();
    let fp = |e: crate::finite_part::FinitePartError| CliError::Numeric(e.to_string());
    let mut worst: f64 = 0.0;
    let one = |_t: f64| 1.0;
    let zero = |_t: f64| 0.0;
    let c = PfIntegrand::new(&one).with_derivative(&zero);
    let id = |t: f64| t;
    let lin = PfIntegrand::new(&id).with_derivative(&one);
    for i in 0..200u64 {
        let k = i + 1 + cfg.seed;
        let x = 4.0 * halton(k, 2) - 2.0;
        let b = x + 1e-3 + 5.0 * halton(k, 3);
        let p1 = pf1_upper(&c, x, b, &q).map_err(fp)?;
        let p2 = pf2_upper(&c, x, b, &q).map_err(fp)?;
        let e1 = (b - x).ln();
        let e2 = -1.0 / (b - x);
        worst = worse(worst, (p1 - e1).abs() / e1.abs().max(f64::MIN_POSITIVE));
        worst = worse(worst, (p2 - e2).abs() / e2.abs());
        let l = b - x;
        let q1 = pf1_upper(&lin, x, b, &q).map_err(fp)?;
        let q2 = pf2_upper(&lin, x, b, &q).map_err(fp)?;
        let r1 = l + x * l.ln();
        let r2 = l.ln() - x / l;
        worst = worse(worst, (q1 - r1).abs() / (1.0 + r1.abs()));
        worst = worse(worst, (q2 - r2).abs() / (1.0 + r2.abs()));
    }
    let mut out = vec![Check::below("finite-part/closed-forms", worst, tol.finite_part)];

    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let k = i + 1 + cfg.seed;
        let (a, bb, cc) = (0.5 + 2.0 * halton(k, 2), 1.5 * halton(k, 3) - 0.75, halton(k, 5));
        let f = move |x: f64, t: f64| (a * t + bb * x).sin() + cc * t * x;
        let fx = move |x: f64, t: f64| bb * (a * t + bb * x).cos() + cc * t;
        let ft = move |x: f64, t: f64| a * (a * t + bb * x).cos() + cc * x;
        let (x, end) = (0.3, 1.7);
        let d = pf1_derivative(&PfDensity2::new(&f).with_partials(&fx, &ft), x, end, &q).map_err(fp)?;
        let g = |xx: f64| {
            let h = |t: f64| f(xx, t);
            pf1_upper(&PfIntegrand::new(&h), xx, end, &q)
        };
        let h = 1e-4;
        let fd = (g(x + h).map_err(fp)? - g(x - h).map_err(fp)?) / (2.0 * h);
        worst = worse(worst, (d - fd).abs() / (1.0 + d.abs()));
    }
    out.push(Check::below("finite-part/derivative-identity", worst, tol.derivative));

    let mut worst: f64 = 0.0;
    for (a, b) in [(1.0, 0.5), (0.3, 2.0), (2.0, -1.0)] {
        let f = move |ep: f64, e: f64| (a * ep - b * e).cos() * (1.0 + e * ep);
        worst = worse(worst, fubini_pf1_residual(&f, 1.0, 3.0, &q).map_err(fp)?);
    }
    out.push(Check::below("finite-part/fubini-swap", worst, tol.fubini));

    let mut worst: f64 = 0.0;
    for (a, e) in [(0.7, 1.2), (1.3, 2.0), (-0.4, 2.8)] {
        let f = move |_e: f64, t: f64| (a * t).exp();
        let ft = move |_e: f64, t: f64| a * (a * t).exp();
        let zero2 = |_e: f64, _t: f64| 0.0;
        let (l, r) = pf2_to_pf1_identity(&PfDensity2::new(&f).with_partials(&zero2, &ft), e, 3.0, &q).map_err(fp)?;
        worst = worse(worst, (l - r).abs() / (1.0 + l.abs()));
    }
    out.push(Check::below("finite-part/pf2-to-pf1", worst, tol.pf2_identity));
    Ok(out)
}

fn sphere_point(k: u64) -> Vec3 {
    let z = 2.0 * halton(k, 2) - 1.0;
    let phi = 2.0 * std::f64::consts::PI * halton(k, 3);
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

fn geometry(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let tol = &cfg.tolerances;
    let mut dirs: Vec<Vec3> = (0..996).map(|i| sphere_point(i + 1 + cfg.seed)).collect();
    dirs.extend([Vec3::z(), -Vec3::z(), Vec3::new(1e-9, 0.0, 1.0).normalize(), Vec3::new(0.0, -1e-9, -1.0).normalize()]);
    let mut worst: f64 = 0.0;
    for w in &dirs {
        let r = rotation_to(w);
        let m = r.transpose() * r - nalgebra::Matrix3::identity();
        worst = worse(worst, worse(m.abs().max(), worse((r * Vec3::z() - w).norm(), (r.determinant() - 1.0).abs())));
    }
    let mut out = vec![Check::below("geometry/frame", worst, tol.frame)];

    let mut worst: f64 = 0.0;
    for (i, w) in dirs.iter().enumerate().step_by(5) {
        let (o1, o2) = crate::sphere_geom::frame(w);
        let t = 0.1 + 2.9 * halton(i as u64 + 1, 5);
        let a = 2.0 * std::f64::consts::PI * halton(i as u64 + 1, 7);
        let zeta = (o1 * a.cos() + o2 * a.sin()) * t;
        let back = log_map(w, &exp_map(w, &zeta)).map_err(|e| CliError::Numeric(e.to_string()))?;
        worst = worse(worst, (back - zeta).norm());
    }
    out.push(Check::below("geometry/exp-log", worst, tol.exp_log));

    let mut worst: f64 = 0.0;
    for y in ANGULAR_FACTORS {
        let l = y.degree() as f64;
        for w in dirs.iter().step_by(10) {
            worst = worse(worst, (laplace_beltrami(&y, w) + l * (l + 1.0) * y.value(w)).abs());
        }
    }
    out.push(Check::below("geometry/laplace-eigen", worst, tol.laplace));

    let kin = |e: crate::kinematics_xs::KinematicsError| CliError::Numeric(e.to_string());
    let mut exact = true;
    let mut sum: f64 = 0.0;
    let mut partial: f64 = 0.0;
    for i in 0..50u64 {
        let e = cfg.phase_space.e0 + (cfg.phase_space.em - cfg.phase_space.e0) * halton(i + 1, 2);
        exact &= mu(e, e).map_err(kin)? == 1.0;
        sum = worse(sum, mu_sum_identity(e).map_err(kin)?.abs());
        let ep = e + 0.5 * halton(i + 1, 3) + 0.05;
        let h = 1e-5;
        let d1 = (mu(ep + h, e).map_err(kin)? - mu(ep - h, e).map_err(kin)?) / (2.0 * h);
        let d2 = (mu(ep, e + h).map_err(kin)? - mu(ep, e - h).map_err(kin)?) / (2.0 * h);
        partial = worse(partial, (d1 - mu_de_prime(ep, e).map_err(kin)?).abs());
        partial = worse(partial, (d2 - mu_de(ep, e).map_err(kin)?).abs());
    }
    out.push(Check::exact("geometry/mu-diagonal-exact", exact, 0.0));
    out.push(Check::below("geometry/mu-sum-identity", sum, tol.mu));
    out.push(Check::below("geometry/mu-partials", partial, tol.mu_partials));
    Ok(out)
}

fn collision(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let tol = &cfg.tolerances;
    let sphere = SphereRule::new(24, 48);
    let circle = CircleRule::new(48);
    let mut worst: f64 = 0.0;
    let pairs = [(1.5, 1.2), (2.0, 1.1), (2.9, 1.0), (1.3, 1.25), (2.5, 2.0)];
    for (i, &(ep, e)) in pairs.iter().enumerate() {
        for (ya, yb) in [(0, 1), (2, 2)] {
            let (a, b) = (ANGULAR_FACTORS[ya], ANGULAR_FACTORS[(yb + i) % 3]);
            let psi = move |w: &Vec3| a.value(w) * (1.0 + 0.3 * w[0]);
            let v = move |w: &Vec3| b.value(w) + 0.2 * w[1] * w[2];
            let r = circle_sphere_swap_residual(&psi, &v, ep, e, &sphere, &circle).map_err(|e| CliError::Numeric(e.to_string()))?;
            worst = worse(worst, r);
        }
    }
    let mut out = vec![Check::below("collision/circle-sphere-swap", worst, tol.circle_swap)];

    let ctx = cfg.collision()?;
    let mut worst: f64 = 0.0;
    let pts = phase_points(&cfg.phase_space, cfg.points.min(16), cfg.seed, 0.05);
    for id in &cfg.fields.trial {
        let f = cfg.field(id)?;
        for (x, w, e) in &pts {
            let a = ctx.collision_hadamard_form(&f, x, w, *e).map_err(crate::transport_variational::TransportError::from)?;
            let b = ctx
                .collision_pseudo_form(&f, x, w, *e, cfg.fd_step)
                .map_err(crate::transport_variational::TransportError::from)?;
            worst = worse(worst, (a - b).abs() / (1.0 + a.abs()));
        }
    }
    out.push(Check::below("collision/hadamard-vs-pseudo", worst, tol.forms));
    Ok(out)
}

fn transport(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let ctx = cfg.transport()?;
    let pts = phase_points(&cfg.phase_space, cfg.points, cfg.seed, 0.05);
    let mut worst: f64 = 0.0;
    for id in &cfg.fields.trial {
        let f = cfg.field(id)?;
        for (x, w, e) in &pts {
            let s = ctx.transport_apply(&f, x, w, *e, TransportForm::Strong)?;
            let p = ctx.transport_apply(&f, x, w, *e, TransportForm::Pseudo)?;
            let r = ctx.transport_apply(&f, x, w, *e, TransportForm::Refined)?;
            let d = worse((s - p).abs(), worse((s - r).abs(), (p - r).abs()));
            worst = worse(worst, d / (1.0 + s.abs()));
        }
    }
    Ok(vec![Check::below("transport/triple-form", worst, cfg.tolerances.forms)])
}

fn variational(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let tol = &cfg.tolerances;
    let ctx = cfg.transport()?;
    let asm = Assembler::new(&ctx);
    let trials = cfg.fields.trial.iter().map(|id| cfg.field(id)).collect::<Result<Vec<_>, _>>()?;
    let tests = cfg.fields.test.iter().map(|id| cfg.field(id)).collect::<Result<Vec<_>, _>>()?;
    let sides = tests.iter().map(|v| TestSide::new(&asm, v)).collect::<Result<Vec<_>, _>>()?;
    let (mut res, mut b2, mut a1, mut a2, mut kr): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for psi in &trials {
        let trial = TrialSide::new(&asm, psi)?;
        let a1g = asm.collision("a1", psi, |g, x, w, e| ctx.a1_apply(g, x, w, e))?;
        let a2g = asm.collision("a2", psi, |g, x, w, e| ctx.a2_apply(g, x, w, e))?;
        let krg = asm.collision("kr", psi, |g, x, w, e| Ok(ctx.collision.restricted_apply(g, x, w, e)?))?;
        let kr_adj = |v: &SeparableField| asm.collision("kr*", v, |g, x, w, e| Ok(ctx.collision.restricted_adjoint_apply(g, x, w, e)?));
        for (v, side) in tests.iter().zip(&sides) {
            let r = pair_report(&asm, psi, &trial, v, side);
            res = worse(res, r.residual / (1.0 + r.scale));
            let low = asm.inner(&trial.psi, &side.lowered) + asm.b2_gradient_term(psi, v)?;
            b2 = worse(b2, (low - r.B2).abs() / (1.0 + r.B2.abs()));
            let nv = side.norm;
            let g = &asm.grid;
            a1 = worse(a1, pairing_error(g.inner(&a1g, &side.v), r.B1, g.norm(&a1g) * nv));
            a2 = worse(a2, pairing_error(g.inner(&a2g, &side.v), r.B2, g.norm(&a2g) * nv));
            let krs = g.inner(&trial.psi, &kr_adj(v)?);
            kr = worse(kr, pairing_error(g.inner(&krg, &side.v), krs, g.norm(&krg) * nv));
        }
    }
    let mut green: f64 = 0.0;
    for psi in &trials {
        for v in &tests {
            green = worse(green, green_residual(psi, v, &cfg.phase_space));
        }
    }
    Ok(vec![
        Check::below("variational/weak-identity", res, tol.variational),
        Check::below("variational/b2-hyper-vs-lowered", b2, tol.variational),
        Check::below("variational/pairing-a1", a1, tol.pairing),
        Check::below("variational/pairing-a2", a2, tol.pairing),
        Check::below("variational/pairing-kr", kr, tol.pairing),
        Check::below("variational/green", green, tol.green),
    ])
}

fn csda(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let tol = &cfg.tolerances;
    let ctx = cfg.csda()?;
    let kappa = cfg.csda.kappa;
    let pts = phase_points(&cfg.phase_space, cfg.points.min(16), cfg.seed, 0.05);
    let mut split: f64 = 0.0;
    for id in &cfg.fields.trial {
        let f = cfg.field(id)?;
        for (x, w, e) in &pts {
            for j in [1, 2] {
                let (s, r) = ctx.split_k(&f, x, w, *e, j, kappa)?;
                let full = ctx.transport.collision.hadamard_collision(&f, x, w, *e, j).map_err(crate::csda::CsdaError::from)?;
                split = worse(split, (s + r - full).abs() / (1.0 + full.abs()));
            }
        }
    }
    let mut out = vec![Check::below("csda/split-additivity", split, tol.split)];

    let mut plain = cfg.clone();
    plain.cross_sections = XsParams {
        c1: 0.0,
        c2: 0.0,
        ..cfg.cross_sections.clone()
    };
    let pctx: CsdaContext = plain.csda()?;
    let mut max_err: f64 = 0.0;
    for id in &cfg.fields.trial {
        let f = cfg.field(id)?;
        for (x, w, e) in &pts {
            max_err = worse(max_err, pctx.truncation_error(&f, x, w, *e, kappa)?.abs());
        }
    }
    out.push(Check::exact("csda/exact-without-singular-parts", max_err == 0.0, max_err));

    let report = super::converge(cfg)?;
    out.push(Check::at_least("csda/rate-slope", report.fitted_slope, tol.slope));

    let psi = cfg.field(&cfg.fields.trial[0])?;
    let v = cfg
        .fields
        .test
        .iter()
        .map(|id| cfg.field(id))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .find(|v| v.spatial_value(&Vec3::new(cfg.phase_space.radius, 0.0, 0.0)) == 0.0);
    if let Some(v) = v {
        let (a, b) = ctx.pairing(&psi, &v, kappa)?;
        let scale = crate::phase_field::l2_inner(&psi, &psi, &cfg.phase_space).sqrt()
            * crate::phase_field::l2_inner(&v, &v, &cfg.phase_space).sqrt();
        out.push(Check::below("csda/adjoint-pairing", pairing_error(a, b, scale), tol.pairing));
    } else {
        // the pairing needs v = 0 on the boundary; no configured test field qualifies
        out.push(Check::below("csda/adjoint-pairing", f64::NAN, tol.pairing));
    }
    Ok(out)
}
