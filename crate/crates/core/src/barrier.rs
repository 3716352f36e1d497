//! The singular-integral barrier `h(x) = -(1/alpha) int_O d(x^{-1} o xi)^{-alpha} dxi`,
//! its smoothing `h_eps`, numerical verification of `L_A h_eps >= C lambda`, and
//! the constant chain `C -> gamma -> eps` of the critical-density estimate.
//!
//! All integrals over `O` are rewritten around the evaluation point. For `h`,
//! `xi = x o y` and `y` runs in gauge polar coordinates `y = delta_r(omega)`, so
//! `dy = Q |B_1| r^{Q-1} dr dsigma(omega)` with `sigma` the normalised polar
//! measure. For `L_A h_eps`, `xi = x o y^{-1}`: left translations commute with
//! the horizontal fields, so the kernel derivatives are those of `G(d(y))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::{self, BallSpec, GaugeConstants, LocalFrame};
use crate::group::{GroupPoint, HTypeGroup};
use crate::operator::{self, CoefficientField, EllipticityBounds};
use crate::sampling::{self, par_moments, Estimate, Moments};

/// Relative slack allowed on the lemma's inequality, in units of `lambda`.
pub const MARGIN_TOLERANCE: f64 = 0.1;
const SHELLS_PER_OCTAVE: f64 = 4.0;
const H_OCTAVES: i32 = 40;

/// `g(s) = 1/(1-s) - 1/s` and its first two derivatives on `(0, 1)`.
fn smoothstep_arg(s: f64) -> (f64, f64, f64) {
    let a = 1.0 - s;
    (
        1.0 / a - 1.0 / s,
        1.0 / (a * a) + 1.0 / (s * s),
        2.0 / (a * a * a) - 2.0 / (s * s * s),
    )
}

/// `sigma(s) = e(s) / (e(s) + e(1-s))` with `e(s) = exp(-1/s)`, written as the
/// logistic function of `g(s)`. Returns `(sigma, sigma', sigma'')`.
fn smoothstep(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let (g, g1, g2) = smoothstep_arg(s);
    let e = (-g.abs()).exp();
    let (l, one_minus_l) = if g >= 0.0 {
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    let w = l * one_minus_l;
    let d1 = if w == 0.0 { 0.0 } else { w * g1 };
    let d2 = if w == 0.0 {
        0.0
    } else {
        w * (one_minus_l - l) * g1 * g1 + w * g2
    };
    (l, d1, d2)
}

/// Cutoff `eta_eps`: 0 on `[0, eps]`, 1 on `[2 eps, inf)`, `C^infty` in between.
pub fn eta_eps(rho: f64, eps: f64) -> f64 {
    smoothstep((rho - eps) / eps).0
}

/// `(eta, eta', eta'')` with respect to `rho`.
pub fn eta_eps_derivatives(rho: f64, eps: f64) -> (f64, f64, f64) {
    let (s0, s1, s2) = smoothstep((rho - eps) / eps);
    (s0, s1 / eps, s2 / (eps * eps))
}

/// Radial profile `G(rho) = -(1/alpha) eta(rho) rho^{-alpha}` and two derivatives.
pub fn radial_profile(rho: f64, alpha: f64, eps: f64) -> (f64, f64, f64) {
    let (e0, e1, e2) = eta_eps_derivatives(rho, eps);
    if e0 == 0.0 && e1 == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let p0 = rho.powf(-alpha);
    let p1 = p0 / rho;
    let p2 = p1 / rho;
    (
        -e0 * p0 / alpha,
        -e1 * p0 / alpha + e0 * p1,
        -e2 * p0 / alpha + 2.0 * e1 * p1 - (alpha + 1.0) * e0 * p2,
    )
}

/// `sum a_ij X_i X_j [G(d)]` at `y`:
/// `G''(d) <A grad_H d, grad_H d> + G'(d) L_A d`.
pub fn kernel_la(g: &HTypeGroup, a: &DMatrix<f64>, y: &GroupPoint, alpha: f64, eps: f64) -> Result<f64> {
    let lf = LocalFrame::at(g, y);
    let (_, g1, g2) = radial_profile(lf.d, alpha, eps);
    if g1 == 0.0 && g2 == 0.0 {
        return Ok(0.0);
    }
    let gd = lf.grad_d()?;
    let quad = gd.dot(&(a * &gd));
    Ok(g2 * quad + g1 * operator::la_d_local(a, &lf)?)
}

/// Integration region `O`.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Ball(BallSpec),
    /// `outer` minus the closure of `hole`; the hole must sit inside the outer ball.
    BallWithHole { outer: BallSpec, hole: BallSpec },
}

fn gauge_offset(g: &HTypeGroup, center: &GroupPoint, p: &GroupPoint) -> f64 {
    gauge::gauge_norm(g, &g.compose_unchecked(&g.inverse(center), p))
}

impl Region {
    pub fn ball(center: GroupPoint, radius: f64) -> Result<Self> {
        Ok(Region::Ball(BallSpec::new(center, radius)?))
    }

    pub fn bounding_ball(&self) -> &BallSpec {
        match self {
            Region::Ball(b) => b,
            Region::BallWithHole { outer, .. } => outer,
        }
    }

    pub fn contains(&self, g: &HTypeGroup, p: &GroupPoint) -> bool {
        match self {
            Region::Ball(b) => b.contains(g, p),
            Region::BallWithHole { outer, hole } => {
                outer.contains(g, p) && gauge_offset(g, &hole.center, p) > hole.radius
            }
        }
    }

    /// A radius `r` such that `d(y) < r` implies `x o y^{-1}` and `x o y` lie in
    /// `O`, given the quasi-triangle constant `k`. Negative when `x` is outside.
    pub fn inner_radius(&self, g: &HTypeGroup, x: &GroupPoint, k: f64) -> f64 {
        let outer = self.bounding_ball();
        let to_outer = outer.radius / k - gauge_offset(g, &outer.center, x);
        match self {
            Region::Ball(_) => to_outer,
            Region::BallWithHole { hole, .. } => {
                to_outer.min(gauge_offset(g, &hole.center, x) / k - hole.radius)
            }
        }
    }

    pub fn measure(&self, g: &HTypeGroup, k: f64) -> Result<f64> {
        let value = match self {
            Region::Ball(b) => b.measure(g),
            Region::BallWithHole { outer, hole } => {
                if k * (gauge_offset(g, &outer.center, &hole.center) + hole.radius) > outer.radius {
                    return Err(Error::Domain("the hole is not contained in the outer ball".into()));
                }
                outer.measure(g) - hole.measure(g)
            }
        };
        if value <= 0.0 {
            return Err(Error::Domain("region has zero measure".into()));
        }
        Ok(value)
    }

    /// Conservative check that `O` lies in `B_1(0)`.
    pub fn inside_unit_ball(&self, g: &HTypeGroup, k: f64) -> bool {
        let b = self.bounding_ball();
        k * (gauge::gauge_norm(g, &b.center) + b.radius) <= 1.0 + 1e-12
    }

    /// Upper bound for `d(y)` over all `y` with `x o y` or `x o y^{-1}` in `O`.
    fn reach(&self, g: &HTypeGroup, x: &GroupPoint, k: f64) -> f64 {
        let b = self.bounding_ball();
        k * (gauge_offset(g, &b.center, x) + b.radius) * (1.0 + 1e-4)
    }

    /// Lower bound for `d(y)` over the same set; zero when `x` is close to `O`.
    fn gap(&self, g: &HTypeGroup, x: &GroupPoint, k: f64) -> f64 {
        let b = self.bounding_ball();
        ((gauge_offset(g, &b.center, x) / k - b.radius) * (1.0 - 1e-4)).max(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct BarrierConfig {
    pub region: Region,
    /// Landis margin in `(0, 2]`; `alpha = Q - delta`.
    pub delta: f64,
    pub eps: f64,
    /// Number of sampled polar directions per evaluation point.
    pub budget: usize,
    pub seed: u64,
}

impl BarrierConfig {
    pub fn alpha(&self, g: &HTypeGroup) -> f64 {
        g.qf() - self.delta
    }

    pub fn validate(&self, g: &HTypeGroup, k: f64) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 2.0) {
            return Err(Error::Domain(format!("delta must lie in (0, 2], got {}", self.delta)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Domain(format!("eps must be positive, got {}", self.eps)));
        }
        if self.budget < 2 {
            return Err(Error::Domain("quadrature budget must be at least 2".into()));
        }
        self.region.measure(g, k)?;
        Ok(())
    }
}

fn polar_mass(g: &HTypeGroup) -> f64 {
    g.qf() * gauge::unit_ball_volume_exact(g.m(), g.n())
}

/// Log-uniform stratification of `[lo, hi]`: yields `(r, dr-weight)` pairs.
fn log_shells<R: Rng>(rng: &mut R, lo: f64, hi: f64, shells: usize, mut f: impl FnMut(f64, f64)) {
    let span = (hi / lo).ln();
    let width = span / shells as f64;
    for k in 0..shells {
        let r = lo * ((k as f64 + rng.random::<f64>()) * width).exp();
        f(r, r * width);
    }
}

fn shell_count(lo: f64, hi: f64) -> usize {
    ((hi / lo).log2() * SHELLS_PER_OCTAVE).ceil().max(1.0) as usize
}

/// `-(1/alpha) int_O d^{-alpha}`, damped by `eta_eps(d)` when `eps` is given.
fn potential(g: &HTypeGroup, x: &GroupPoint, config: &BarrierConfig, eps: Option<f64>, k: f64) -> Result<Estimate> {
    config.validate(g, k)?;
    let alpha = config.alpha(g);
    let delta = config.delta;
    let hi = config.region.reach(g, x, k);
    let gap = config.region.gap(g, x, k);
    let (lo, remainder) = match eps {
        Some(e) => (e.max(gap), 0.0),
        None if gap > 0.0 => (gap, 0.0),
        None => {
            let lo = hi * 0.5f64.powi(H_OCTAVES);
            let inside = config.region.contains(g, x);
            (lo, if inside { lo.powf(delta) / delta } else { 0.0 })
        }
    };
    if lo >= hi {
        return Ok(Estimate::exact(0.0));
    }
    let shells = shell_count(lo, hi);
    let moments = par_moments(config.budget, config.seed, |rng, count| {
        let mut acc = Moments::default();
        for _ in 0..count {
            let omega = gauge::sample_polar_direction(g, rng);
            let mut radial = remainder;
            log_shells(rng, lo, hi, shells, |r, w| {
                let y = g.dilate_unchecked(r, &omega);
                if config.region.contains(g, &g.compose_unchecked(x, &y)) {
                    let cut = eps.map_or(1.0, |e| eta_eps(r, e));
                    radial += w * cut * r.powf(delta - 1.0);
                }
            });
            acc.push(radial);
        }
        acc
    });
    Ok(moments.estimate().scale(-polar_mass(g) / alpha))
}

/// Monte Carlo estimate of `h(x)`; always `<= 0`.
pub fn barrier_h(g: &HTypeGroup, x: &GroupPoint, config: &BarrierConfig, k: f64) -> Result<Estimate> {
    potential(g, x, config, None, k)
}

/// Monte Carlo estimate of `h_eps(x)`; `h <= h_eps <= 0`.
pub fn barrier_h_eps(g: &HTypeGroup, x: &GroupPoint, config: &BarrierConfig, k: f64) -> Result<Estimate> {
    potential(g, x, config, Some(config.eps), k)
}

/// `L_A h_eps(x)` with `A` frozen at `a`, by differentiating under the integral.
///
/// On `d(y) < r_c`, where the indicator of `O` is identically one, the radial
/// integral is done by parts; the term proportional to `L_A d - (Q-1)<A grad d, grad d>`
/// integrates to zero over the gauge sphere and is dropped.
pub fn la_h_eps(g: &HTypeGroup, a: &DMatrix<f64>, x: &GroupPoint, config: &BarrierConfig, k: f64) -> Result<Estimate> {
    config.validate(g, k)?;
    let alpha = config.alpha(g);
    let q = g.qf();
    let eps = config.eps;
    let hi = config.region.reach(g, x, k);
    let r_c = config.region.inner_radius(g, x, k).max(0.0).min(hi);
    let lo = r_c.max(eps).max(config.region.gap(g, x, k));
    let shells = if hi > lo { shell_count(lo, hi) } else { 0 };
    let inner_g1 = if r_c > 0.0 {
        radial_profile(r_c, alpha, eps).1 * r_c.powf(q - 1.0)
    } else {
        0.0
    };
    let moments = par_moments(config.budget, config.seed, |rng, count| {
        let mut acc = Moments::default();
        let mut pushed = 0;
        while pushed < count {
            let omega = gauge::sample_polar_direction(g, rng);
            let lf = LocalFrame::at(g, &omega);
            let (Ok(gd), Ok(b)) = (lf.grad_d(), operator::la_d_local(a, &lf)) else {
                continue;
            };
            let a_w = gd.dot(&(a * &gd));
            let mut value = a_w * inner_g1;
            if shells > 0 {
                log_shells(rng, lo, hi, shells, |r, w| {
                    let y = g.dilate_unchecked(r, &omega);
                    if config.region.contains(g, &g.compose_unchecked(x, &g.inverse(&y))) {
                        let (_, g1, g2) = radial_profile(r, alpha, eps);
                        value += w * r.powf(q - 1.0) * (g2 * a_w + g1 * b / r);
                    }
                });
            }
            acc.push(value);
            pushed += 1;
        }
        acc
    });
    Ok(moments.estimate().scale(polar_mass(g)))
}

/// Sphere averages of `a = <A grad_H d, grad_H d>` and `b = L_A d` over the
/// normalised polar measure; `b = (Q-1) a` on average.
pub fn sphere_averages(g: &HTypeGroup, a: &DMatrix<f64>, budget: usize, seed: u64) -> (Estimate, Estimate) {
    let moments = sampling::par_chunks(
        budget,
        seed,
        |rng, count| {
            let (mut ma, mut mb) = (Moments::default(), Moments::default());
            let mut pushed = 0;
            while pushed < count {
                let omega = gauge::sample_polar_direction(g, rng);
                let lf = LocalFrame::at(g, &omega);
                if let (Ok(gd), Ok(b)) = (lf.grad_d(), operator::la_d_local(a, &lf)) {
                    ma.push(gd.dot(&(a * &gd)));
                    mb.push(b);
                    pushed += 1;
                }
            }
            (ma, mb)
        },
        |(a1, b1), (a2, b2)| (a1.merge(a2), b1.merge(b2)),
    )
    .unwrap_or_default();
    (moments.0.estimate(), moments.1.estimate())
}

/// `C = 1 / (beta (2K)^{2 - delta})`.
pub fn theoretical_c(beta: f64, k: f64, delta: f64) -> Result<f64> {
    if !(beta > 0.0 && k >= 1.0 && delta > 0.0 && delta <= 2.0) {
        return Err(Error::Domain(format!(
            "need beta > 0, K >= 1, 0 < delta <= 2; got ({beta}, {k}, {delta})"
        )));
    }
    Ok(1.0 / (beta * (2.0 * k).powf(2.0 - delta)))
}

/// `gamma = Q |B_1|^{alpha/Q} / (alpha delta)`, the closed form of
/// `(1/alpha) |B_1|^{-(Q-alpha)/Q} int_{B_1} d^{-alpha}`.
pub fn lower_bound_gamma(q: usize, delta: f64, ball_volume: f64) -> Result<f64> {
    let qf = q as f64;
    let alpha = qf - delta;
    if !(delta > 0.0 && delta <= 2.0 && ball_volume > 0.0) {
        return Err(Error::Domain(format!("invalid gamma inputs delta={delta}, |B_1|={ball_volume}")));
    }
    Ok(qf * ball_volume.powf(alpha / qf) / (alpha * delta))
}

/// `gamma` from a box quadrature of `int_{B_1} d^{-alpha}`.
pub fn gamma_by_quadrature(g: &HTypeGroup, delta: f64, ball_volume: f64, budget: usize, seed: u64) -> Result<Estimate> {
    let alpha = g.qf() - delta;
    let integral = gauge::layer_cake_integral(g, alpha, budget, seed)?;
    Ok(integral.scale(ball_volume.powf(-delta / g.qf()) / alpha))
}

/// `eps` with `(7C / (128 gamma (Q+2)) lambda/Lambda)^{Q/delta} = eps |B_1|`.
pub fn critical_density_epsilon(
    c: f64,
    gamma: f64,
    q: usize,
    bounds: &EllipticityBounds,
    delta: f64,
    ball_volume: f64,
) -> Result<f64> {
    if !(c > 0.0 && gamma > 0.0 && delta > 0.0 && ball_volume > 0.0) {
        return Err(Error::Domain("critical-density inputs must be positive".into()));
    }
    let qf = q as f64;
    let base = 7.0 * c / (128.0 * gamma * (qf + 2.0)) * bounds.lambda / bounds.big_lambda;
    let eps = base.powf(qf / delta) / ball_volume;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Consistency(format!("critical-density fraction {eps} is not in (0, 1)")));
    }
    Ok(eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstantChain {
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: f64,
    pub epsilon_cd: f64,
    pub c_cd: f64,
}

/// `C`, `gamma` and the critical-density pair `(eps, 1/2)` from gauge constants.
/// `|B_1|` is taken in closed form.
pub fn constant_chain(
    g: &HTypeGroup,
    constants: &GaugeConstants,
    bounds: &EllipticityBounds,
    delta: f64,
) -> Result<ConstantChain> {
    let vol = gauge::unit_ball_volume_exact(g.m(), g.n());
    let c = theoretical_c(constants.beta, constants.k, delta)?;
    let gamma = lower_bound_gamma(g.q(), delta, vol)?;
    Ok(ConstantChain {
        c,
        gamma,
        epsilon_cd: critical_density_epsilon(c, gamma, g.q(), bounds, delta, vol)?,
        c_cd: 0.5,
    })
}

/// Centre, points of the boundary sphere and a Halton fill of a closed ball.
pub fn ball_test_points(g: &HTypeGroup, ball: &BallSpec, count: usize) -> Vec<GroupPoint> {
    let (m, n) = (g.m(), g.n());
    let mut out = vec![ball.center.clone()];
    let mut i = 0u64;
    while out.len() < count {
        let h = sampling::halton(i + 1, m + n);
        i += 1;
        let v = DVector::from_fn(m, |j, _| 2.0 * h[j] - 1.0);
        let z = DVector::from_fn(n, |k, _| 0.25 * (2.0 * h[m + k] - 1.0));
        let p = g.from_frame(&v, &z);
        let d = gauge::gauge_norm(g, &p);
        if d >= 1.0 || d == 0.0 {
            continue;
        }
        // every other accepted point is pushed to the boundary sphere
        let scale = if out.len() % 2 == 1 { ball.radius / d } else { ball.radius };
        out.push(g.compose_unchecked(&ball.center, &g.dilate_unchecked(scale, &p)));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointMargin {
    pub point: Vec<f64>,
    pub la_h_eps: Estimate,
    /// `(L_A h_eps - C lambda) / lambda`.
    pub margin: f64,
    pub margin_stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierReport {
    pub margin_min: f64,
    pub stderr: f64,
    pub verdict: Verdict,
    #[serde(rename = "C")]
    pub c: f64,
    pub beta: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub delta: f64,
    pub lambda: f64,
    pub failing_points: Vec<usize>,
    pub points: Vec<PointMargin>,
}

/// Checks `L_A h_eps >= C lambda` at `test_points`.
///
/// Refuses (precondition error) unless the field satisfies the Landis condition
/// with margin at least `config.delta` on a fill of `O` and the test points, and
/// unless `2 eps` is below the distance of every test point to the boundary of `O`.
/// Per point, `margin + 3 sigma < -tol` is a failure; pass needs
/// `margin - 3 sigma >= -tol` everywhere.
pub fn verify_barrier_lemma(
    g: &HTypeGroup,
    field: &dyn CoefficientField,
    config: &BarrierConfig,
    test_points: &[GroupPoint],
    constants: &GaugeConstants,
) -> Result<BarrierReport> {
    if test_points.is_empty() {
        return Err(Error::Domain("no test points".into()));
    }
    if field.dim() != g.m() {
        return Err(Error::Dimension(format!(
            "field has dimension {}, group has m = {}",
            field.dim(),
            g.m()
        )));
    }
    let k = constants.k;
    let outer = config.region.bounding_ball();
    let mut landis_points = operator::fill_points(g, &outer.center, outer.radius, 256);
    landis_points.extend_from_slice(test_points);
    let landis = operator::landis_delta_field(field, &landis_points, g.q())?;
    if !landis.satisfied {
        return Err(Error::Precondition(format!(
            "Landis condition fails: delta = {:.6} at {:?}",
            landis.delta, landis.worst_point
        )));
    }
    if config.delta > landis.delta + 1e-12 {
        return Err(Error::Precondition(format!(
            "barrier delta {} exceeds the field's Landis margin {:.6}",
            config.delta, landis.delta
        )));
    }
    config.validate(g, k)?;
    if !config.region.inside_unit_ball(g, k) {
        return Err(Error::Precondition("region is not inside B_1(0)".into()));
    }
    for (i, x) in test_points.iter().enumerate() {
        let dist = config.region.inner_radius(g, x, k);
        if 2.0 * config.eps >= dist {
            return Err(Error::Precondition(format!(
                "test point {i} is within 2 eps of the boundary (distance {dist:.4})"
            )));
        }
    }
    let c = theoretical_c(constants.beta, k, config.delta)?;
    let lambda = field.bounds().lambda;
    let points = test_points
        .iter()
        .map(|x| {
            let est = la_h_eps(g, &field.matrix(x), x, config, k)?;
            Ok(PointMargin {
                point: x.coords(),
                margin: (est.value - c * lambda) / lambda,
                margin_stderr: est.stderr / lambda,
                la_h_eps: est,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let failing_points: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.margin + 3.0 * p.margin_stderr < -MARGIN_TOLERANCE)
        .map(|(i, _)| i)
        .collect();
    let certified = points
        .iter()
        .all(|p| p.margin - 3.0 * p.margin_stderr >= -MARGIN_TOLERANCE);
    let verdict = if !failing_points.is_empty() {
        Verdict::Fail
    } else if certified {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    let worst = points
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin))
        .expect("nonempty");
    Ok(BarrierReport {
        margin_min: worst.margin,
        stderr: worst.margin_stderr,
        verdict,
        c,
        beta: constants.beta,
        k,
        delta: config.delta,
        lambda,
        failing_points,
        points,
    })
}
