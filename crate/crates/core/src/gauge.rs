//! The Kaplan gauge and the constants derived from it.
//!
//! `phi = |v|^4 + 16|z|^2` and `d = phi^{1/4}`. `d^{2-Q}` is, up to a constant,
//! the fundamental solution of the sub-Laplacian, which makes `d` the natural
//! homogeneous norm for the mean-value formula on gauge balls.
//!
//! Measures (ball volumes, the mean-value constant, barrier integrals) are taken
//! with respect to Lebesgue measure in frame coordinates `(v, z)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::group::{GroupPoint, HTypeGroup};
use crate::sampling::{self, par_moments, Estimate, McRng, Moments};

/// Frame-coordinate data at a point, shared by the closed forms below.
#[derive(Clone, Debug)]
pub struct LocalFrame {
    pub v: DVector<f64>,
    pub z: DVector<f64>,
    /// `J_{Z_k}(v)` for `k = 1..n`.
    pub jv: Vec<DVector<f64>>,
    pub phi: f64,
    pub d: f64,
}

impl LocalFrame {
    pub fn at(g: &HTypeGroup, p: &GroupPoint) -> Self {
        let v = g.horizontal_part(p);
        let z = p.t.clone();
        let jv = g.j_basis(&v);
        let phi = v.norm_squared().powi(2) + 16.0 * z.norm_squared();
        Self {
            v,
            z,
            jv,
            phi,
            d: phi.sqrt().sqrt(),
        }
    }

    /// `J_z(v)` at the point itself.
    pub fn jzv(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.v.len());
        for (k, j) in self.jv.iter().enumerate() {
            out += j * self.z[k];
        }
        out
    }

    pub fn grad_phi(&self) -> DVector<f64> {
        (&self.v * self.v.norm_squared() + self.jzv() * 4.0) * 4.0
    }

    pub fn grad_d(&self) -> Result<DVector<f64>> {
        self.nonzero()?;
        Ok(self.grad_phi() / (4.0 * self.d.powi(3)))
    }

    pub fn hessian_phi(&self, g: &HTypeGroup) -> DMatrix<f64> {
        let m = self.v.len();
        let vn2 = self.v.norm_squared();
        // skew block <z, [e_i, e_j]> = sum_k z_k B^k_{ji}
        let mut zb = DMatrix::zeros(m, m);
        for (k, b) in g.frame_matrices().iter().enumerate() {
            zb += b * self.z[k];
        }
        let mut h = DMatrix::identity(m, m) * (4.0 * vn2);
        h += &self.v * self.v.transpose() * 8.0;
        h += zb.transpose() * 16.0;
        for j in &self.jv {
            h += j * j.transpose() * 8.0;
        }
        h
    }

    pub fn hessian_d(&self, g: &HTypeGroup) -> Result<DMatrix<f64>> {
        let gd = self.grad_d()?;
        Ok(&gd * gd.transpose() * (-3.0 / self.d) + self.hessian_phi(g) / (4.0 * self.d.powi(3)))
    }

    fn nonzero(&self) -> Result<()> {
        if self.d == 0.0 {
            Err(Error::Singularity("gauge derivative at the origin".into()))
        } else {
            Ok(())
        }
    }
}

/// `phi(p) = |v|^4 + 16|z|^2`.
pub fn phi(g: &HTypeGroup, p: &GroupPoint) -> f64 {
    let v = g.horizontal_part(p);
    v.norm_squared().powi(2) + 16.0 * p.t.norm_squared()
}

/// `d(p) = phi(p)^{1/4}`.
pub fn gauge_norm(g: &HTypeGroup, p: &GroupPoint) -> f64 {
    phi(g, p).sqrt().sqrt()
}

/// `d(p, q) = d(q^{-1} o p)`.
pub fn quasi_distance(g: &HTypeGroup, p: &GroupPoint, q: &GroupPoint) -> Result<f64> {
    Ok(gauge_norm(g, &g.compose(&g.inverse(q), p)?))
}

/// `X_j phi = 4 <|v|^2 v + 4 J_z(v), X_j>`.
pub fn horizontal_gradient_phi(g: &HTypeGroup, p: &GroupPoint) -> DVector<f64> {
    LocalFrame::at(g, p).grad_phi()
}

pub fn horizontal_gradient_d(g: &HTypeGroup, p: &GroupPoint) -> Result<DVector<f64>> {
    LocalFrame::at(g, p).grad_d()
}

/// Full `X_i X_j phi` (symmetric part plus the `16 <z, [X_i, X_j]>` skew block).
pub fn horizontal_hessian_phi(g: &HTypeGroup, p: &GroupPoint) -> DMatrix<f64> {
    LocalFrame::at(g, p).hessian_phi(g)
}

pub fn horizontal_hessian_d(g: &HTypeGroup, p: &GroupPoint) -> Result<DMatrix<f64>> {
    LocalFrame::at(g, p).hessian_d(g)
}

/// Euclidean gradient of `d` in frame coordinates `(v, z)`.
pub fn euclidean_gradient_d(g: &HTypeGroup, p: &GroupPoint) -> Result<DVector<f64>> {
    let lf = LocalFrame::at(g, p);
    lf.nonzero()?;
    let m = g.m();
    let scale = 1.0 / (4.0 * lf.d.powi(3));
    let vn2 = lf.v.norm_squared();
    Ok(DVector::from_fn(g.dim(), |l, _| {
        if l < m {
            4.0 * vn2 * lf.v[l] * scale
        } else {
            32.0 * lf.z[l - m] * scale
        }
    }))
}

/// Mean-value kernel `psi_0 = |grad_H d|^2 / |grad d|`.
pub fn psi0(g: &HTypeGroup, p: &GroupPoint) -> Result<f64> {
    let gh = horizontal_gradient_d(g, p)?;
    let full = euclidean_gradient_d(g, p)?.norm();
    if full == 0.0 {
        return Err(Error::Singularity("full gradient of d vanishes".into()));
    }
    Ok(gh.norm_squared() / full)
}

/// `Delta_G d^{2-Q}` from the closed-form gradient and Hessian. Vanishes
/// identically away from the origin.
pub fn fundamental_solution_residual(g: &HTypeGroup, p: &GroupPoint) -> Result<f64> {
    let lf = LocalFrame::at(g, p);
    let gd = lf.grad_d()?;
    let lap = lf.hessian_d(g)?.trace();
    let q = g.qf();
    let d = lf.d;
    Ok((2.0 - q) * (d.powf(1.0 - q) * lap + (1.0 - q) * d.powf(-q) * gd.norm_squared()))
}

/// A gauge ball `B_R(x_0) = x_0 o B_R(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallSpec {
    pub center: GroupPoint,
    pub radius: f64,
}

impl BallSpec {
    pub fn new(center: GroupPoint, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn contains(&self, g: &HTypeGroup, p: &GroupPoint) -> bool {
        let y = g.compose_unchecked(&g.inverse(&self.center), p);
        phi(g, &y) < self.radius.powi(4)
    }

    /// Lebesgue measure in frame coordinates: `R^Q |B_1|`.
    pub fn measure(&self, g: &HTypeGroup) -> f64 {
        self.radius.powf(g.qf()) * unit_ball_volume_exact(g.m(), g.n())
    }
}

/// Volume of the Euclidean unit ball in `R^k`.
pub fn euclidean_ball_volume(k: usize) -> f64 {
    let k = k as f64;
    std::f64::consts::PI.powf(k / 2.0) / gamma(k / 2.0 + 1.0)
}

/// Area of the Euclidean unit sphere `S^{k-1}`.
pub fn euclidean_sphere_area(k: usize) -> f64 {
    let kf = k as f64;
    2.0 * std::f64::consts::PI.powf(kf / 2.0) / gamma(kf / 2.0)
}

/// `|B_1(0)|` in closed form: slicing by `|z| = sin(theta)/4` reduces the volume to
/// a Beta integral, `|B^m| |S^{n-1}| 4^{-n} B(n/2, m/4 + 1) / 2`.
pub fn unit_ball_volume_exact(m: usize, n: usize) -> f64 {
    let (mf, nf) = (m as f64, n as f64);
    let beta = gamma(nf / 2.0) * gamma(mf / 4.0 + 1.0) / gamma(nf / 2.0 + mf / 4.0 + 1.0);
    euclidean_ball_volume(m) * euclidean_sphere_area(n) * 0.25_f64.powi(n as i32) * 0.5 * beta
}

/// Uniform sample in the box `[-R, R]^m x [-R^2/4, R^2/4]^n` (frame coordinates),
/// which contains `B_R(0)`.
pub(crate) fn sample_box(g: &HTypeGroup, rng: &mut McRng, radius: f64) -> GroupPoint {
    let v = DVector::from_fn(g.m(), |_, _| radius * (2.0 * rng.random::<f64>() - 1.0));
    let z = DVector::from_fn(g.n(), |_, _| {
        0.25 * radius * radius * (2.0 * rng.random::<f64>() - 1.0)
    });
    g.from_frame(&v, &z)
}

pub(crate) fn box_volume(g: &HTypeGroup, radius: f64) -> f64 {
    (2.0 * radius).powi(g.m() as i32) * (0.5 * radius * radius).powi(g.n() as i32)
}

/// Uniform sample in `B_1(0)` by rejection from the bounding box.
pub(crate) fn sample_unit_ball(g: &HTypeGroup, rng: &mut McRng) -> GroupPoint {
    loop {
        let p = sample_box(g, rng, 1.0);
        if phi(g, &p) < 1.0 {
            return p;
        }
    }
}

/// Sample from the normalised polar measure on the unit gauge sphere: a uniform
/// point of `B_1(0)` projected by the dilation `delta_{1/d}`.
pub(crate) fn sample_polar_direction(g: &HTypeGroup, rng: &mut McRng) -> GroupPoint {
    loop {
        let p = sample_unit_ball(g, rng);
        let d = gauge_norm(g, &p);
        if d > 1e-12 {
            return g.dilate_unchecked(1.0 / d, &p);
        }
    }
}

fn derived_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn box_integral<F>(g: &HTypeGroup, radius: f64, budget: usize, seed: u64, f: F) -> Estimate
where
    F: Fn(&GroupPoint) -> f64 + Sync,
{
    let moments = par_moments(budget, seed, |rng, count| {
        let mut m = Moments::default();
        for _ in 0..count {
            let p = sample_box(g, rng, radius);
            m.push(f(&p));
        }
        m
    });
    moments.estimate().scale(box_volume(g, radius))
}

/// `|B_R(0)|` by rejection counting in the bounding box.
pub fn ball_volume_at(g: &HTypeGroup, radius: f64, budget: usize, seed: u64) -> Result<Estimate> {
    if budget < 2 {
        return Err(Error::Domain("quadrature budget must be at least 2".into()));
    }
    let r4 = radius.powi(4);
    Ok(box_integral(g, radius, budget, seed, |p| {
        if phi(g, p) < r4 {
            1.0
        } else {
            0.0
        }
    }))
}

/// `|B_1(0)|` by rejection counting. Small budgets return a large stderr.
pub fn ball_volume(g: &HTypeGroup, budget: usize, seed: u64) -> Result<Estimate> {
    ball_volume_at(g, 1.0, budget, seed)
}

/// `|B_1(0)|` by layers in the centre: for fixed `z` the slice is a Euclidean ball
/// of radius `(1 - 16|z|^2)^{1/4}`, integrated exactly.
pub fn ball_volume_layered(g: &HTypeGroup, budget: usize, seed: u64) -> Result<Estimate> {
    if budget < 2 {
        return Err(Error::Domain("quadrature budget must be at least 2".into()));
    }
    let (m, n) = (g.m(), g.n());
    let slice = euclidean_ball_volume(m);
    let zvol = euclidean_ball_volume(n) * 0.25_f64.powi(n as i32);
    let moments = par_moments(budget, seed, |rng, count| {
        let mut acc = Moments::default();
        for _ in 0..count {
            let z = sampling::euclidean_ball(rng, n, 0.25);
            let s = 1.0 - 16.0 * z.iter().map(|a| a * a).sum::<f64>();
            acc.push(slice * s.max(0.0).powf(m as f64 / 4.0));
        }
        acc
    });
    Ok(moments.estimate().scale(zvol))
}

/// Estimates of the mean-value normalisation `beta`.
#[derive(Clone, Debug, Serialize)]
pub struct BetaReport {
    /// Coarea route at `R = 1`: `beta = 1 / (Q int_{B_1} |grad_H d|^2)`.
    pub beta: Estimate,
    /// Coarea route at `R = 2`, which must agree with `R = 1`.
    pub beta_r2: Estimate,
    /// Direct surface integral of `psi_0` over the unit gauge sphere.
    pub beta_surface: Estimate,
    pub relative_disagreement: f64,
}

fn invert(est: Estimate, numerator: f64) -> Estimate {
    let value = numerator / est.value;
    Estimate {
        value,
        stderr: value.abs() * est.stderr / est.value.abs(),
        samples: est.samples,
    }
}

fn coarea_beta(g: &HTypeGroup, radius: f64, budget: usize, seed: u64) -> Estimate {
    let r4 = radius.powi(4);
    let integral = box_integral(g, radius, budget, seed, |p| {
        let lf = LocalFrame::at(g, p);
        if lf.phi < r4 && lf.d > 0.0 {
            lf.v.norm_squared() / (lf.d * lf.d)
        } else {
            0.0
        }
    });
    // int_{B_R} |grad_H d|^2 = R^Q I_1 and beta = 1 / (Q I_1)
    invert(integral, radius.powf(g.qf()) / g.qf())
}

/// Surface route: parametrise the unit sphere by `z` in the ball of radius 1/4 and
/// a horizontal direction `w`, with `v = r(z) w`. The surface element contributes
/// `|grad d| r^{m-1} / |d_r d|`.
fn surface_beta(g: &HTypeGroup, budget: usize, seed: u64) -> Estimate {
    let (m, n) = (g.m(), g.n());
    let measure = euclidean_ball_volume(n) * 0.25_f64.powi(n as i32) * euclidean_sphere_area(m);
    let moments = par_moments(budget, seed, |rng, count| {
        let mut acc = Moments::default();
        let mut pushed = 0;
        while pushed < count {
            let z = DVector::from_vec(sampling::euclidean_ball(rng, n, 0.25));
            let w = DVector::from_vec(sampling::unit_sphere(rng, m));
            let r = (1.0 - 16.0 * z.norm_squared()).max(0.0).sqrt().sqrt();
            if r < 1e-9 {
                continue;
            }
            let p = g.from_frame(&(&w * r), &z);
            let value = (|| -> Result<f64> {
                let full = euclidean_gradient_d(g, &p)?;
                let radial = full.rows(0, m).dot(&w).abs();
                Ok(psi0(g, &p)? * full.norm() * r.powi(m as i32 - 1) / radial)
            })();
            if let Ok(x) = value {
                acc.push(x);
                pushed += 1;
            }
        }
        acc
    });
    invert(moments.estimate().scale(measure), 1.0)
}

/// `beta` with its two cross-checks. Fails if any estimator deviates from the
/// coarea value by more than 5%.
pub fn mean_value_beta(g: &HTypeGroup, budget: usize, seed: u64) -> Result<BetaReport> {
    if budget < 1000 {
        return Err(Error::Domain("mean-value quadrature needs at least 1000 samples".into()));
    }
    let beta = coarea_beta(g, 1.0, budget, derived_seed(seed, 1));
    let beta_r2 = coarea_beta(g, 2.0, budget, derived_seed(seed, 2));
    let beta_surface = surface_beta(g, budget / 4, derived_seed(seed, 3));
    let rel = |e: &Estimate| (e.value - beta.value).abs() / beta.value;
    let relative_disagreement = rel(&beta_surface).max(rel(&beta_r2));
    if relative_disagreement > 0.05 {
        return Err(Error::Consistency(format!(
            "beta estimators disagree: coarea {:.6}, R=2 {:.6}, surface {:.6}",
            beta.value, beta_r2.value, beta_surface.value
        )));
    }
    Ok(BetaReport {
        beta,
        beta_r2,
        beta_surface,
        relative_disagreement,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KEstimate {
    pub k: f64,
    pub sup_ratio: f64,
    pub samples: usize,
}

pub const K_SAFETY: f64 = 1.05;

/// Quasi-triangle constant: `1.05 * sup d(p o q) / (d(p) + d(q))` over sampled
/// pairs at random relative scales, floored at 1.
pub fn estimate_k(g: &HTypeGroup, samples: usize, seed: u64) -> Result<KEstimate> {
    if samples < 10_000 {
        return Err(Error::Domain(format!(
            "K estimation needs at least 10^4 samples, got {samples}"
        )));
    }
    let sup = sampling::par_chunks(
        samples,
        seed,
        |rng, count| {
            let mut best = 0.0_f64;
            for _ in 0..count {
                let p = sample_box(g, rng, 1.0);
                let s = (4.0 * rng.random::<f64>() - 2.0).exp();
                let q = g.dilate_unchecked(s, &sample_box(g, rng, 1.0));
                let denom = gauge_norm(g, &p) + gauge_norm(g, &q);
                if denom > 0.0 {
                    best = best.max(gauge_norm(g, &g.compose_unchecked(&p, &q)) / denom);
                }
            }
            best
        },
        f64::max,
    )
    .unwrap_or(0.0);
    Ok(KEstimate {
        k: (K_SAFETY * sup).max(1.0),
        sup_ratio: sup,
        samples,
    })
}

/// `int_{B_1} d^{-alpha}` by dilation layers: the shell `1/2 <= d < 1` is sampled
/// from the bounding box and the inner shells follow from exact homogeneity,
/// giving the factor `1 / (1 - 2^{alpha - Q})`.
pub fn layer_cake_integral(g: &HTypeGroup, alpha: f64, budget: usize, seed: u64) -> Result<Estimate> {
    let q = g.qf();
    if alpha >= q {
        return Err(Error::Domain(format!("d^-alpha is not integrable for alpha = {alpha} >= Q")));
    }
    let shell = box_integral(g, 1.0, budget, seed, |p| {
        let d = gauge_norm(g, p);
        if (0.5..1.0).contains(&d) {
            d.powf(-alpha)
        } else {
            0.0
        }
    });
    Ok(shell.scale(1.0 / (1.0 - 2f64.powf(alpha - q))))
}

/// Gauge constants consumed by the barrier module.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GaugeConstants {
    pub beta: f64,
    pub beta_stderr: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub ball_volume: f64,
    pub ball_volume_stderr: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantsBudget {
    pub quadrature: usize,
    pub k_samples: usize,
}

impl Default for ConstantsBudget {
    fn default() -> Self {
        Self {
            quadrature: 400_000,
            k_samples: 100_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantsReport {
    pub constants: GaugeConstants,
    pub beta: BetaReport,
    pub k: KEstimate,
    pub ball_volume: Estimate,
    pub ball_volume_layered: Estimate,
}

pub fn compute_constants(g: &HTypeGroup, budget: ConstantsBudget, seed: u64) -> Result<ConstantsReport> {
    let beta = mean_value_beta(g, budget.quadrature, seed)?;
    let k = estimate_k(g, budget.k_samples, derived_seed(seed, 4))?;
    let vol = ball_volume(g, budget.quadrature, derived_seed(seed, 5))?;
    let layered = ball_volume_layered(g, budget.quadrature / 4, derived_seed(seed, 6))?;
    Ok(ConstantsReport {
        constants: GaugeConstants {
            beta: beta.beta.value,
            beta_stderr: beta.beta.stderr,
            k: k.k,
            ball_volume: vol.value,
            ball_volume_stderr: vol.stderr,
        },
        beta,
        k,
        ball_volume: vol,
        ball_volume_layered: layered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn h1() -> HTypeGroup {
        HTypeGroup::preset("heisenberg:1").unwrap()
    }

    fn pt(x: &[f64], t: &[f64]) -> GroupPoint {
        GroupPoint::from_slices(x, t)
    }

    #[test]
    fn gauge_examples() {
        let g = h1();
        assert_eq!(gauge_norm(&g, &pt(&[1., 0.], &[0.])), 1.0);
        assert_eq!(gauge_norm(&g, &pt(&[0., 0.], &[0.25])), 1.0);
        assert_eq!(phi(&g, &pt(&[1., 0.], &[1.])), 17.0);
        assert_eq!(phi(&g, &g.origin()), 0.0);
    }

    #[test]
    fn gradient_examples() {
        let g = h1();
        let gp = horizontal_gradient_phi(&g, &pt(&[1., 0.], &[0.]));
        assert_eq!(gp.as_slice(), &[4.0, 0.0]);
        assert_eq!(horizontal_gradient_phi(&g, &g.origin()).amax(), 0.0);
        let gd = horizontal_gradient_d(&g, &pt(&[1., 0.], &[0.])).unwrap();
        assert!((gd.norm_squared() - 1.0).abs() < 1e-15);
        let gd = horizontal_gradient_d(&g, &pt(&[0., 0.], &[0.25])).unwrap();
        assert_eq!(gd.norm_squared(), 0.0);
        assert!(matches!(
            horizontal_gradient_d(&g, &g.origin()),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn hessian_at_unit_horizontal_point() {
        let g = h1();
        let h = horizontal_hessian_phi(&g, &pt(&[1., 0.], &[0.]));
        let expected = DMatrix::identity(2, 2) * 12.0;
        assert!((h - expected).amax() < 1e-14);
        assert_eq!(horizontal_hessian_phi(&g, &g.origin()).amax(), 0.0);
        assert!(horizontal_hessian_d(&g, &g.origin()).is_err());
    }

    #[test]
    fn psi0_vanishes_on_centre_axis() {
        let g = h1();
        assert_eq!(psi0(&g, &pt(&[0., 0.], &[0.25])).unwrap(), 0.0);
        assert!(psi0(&g, &g.origin()).is_err());
    }

    #[test]
    fn exact_ball_volume_heisenberg() {
        assert!((unit_ball_volume_exact(2, 1) - PI * PI / 8.0).abs() < 1e-13);
    }

    #[test]
    fn ball_specs() {
        let g = h1();
        assert!(BallSpec::new(g.origin(), 0.0).is_err());
        let b = BallSpec::new(pt(&[1., 0.], &[0.]), 0.5).unwrap();
        assert!(b.contains(&g, &pt(&[1.2, 0.], &[0.])));
        assert!(!b.contains(&g, &g.origin()));
    }

    #[test]
    fn k_rejects_small_budgets() {
        assert!(estimate_k(&h1(), 100, 0).is_err());
        let k = estimate_k(&h1(), 10_000, 0).unwrap();
        assert!(k.k >= 1.0);
    }

    #[test]
    fn small_budget_has_large_error() {
        let e = ball_volume(&h1(), 16, 0).unwrap();
        assert!(e.stderr > 0.05);
    }

    #[test]
    fn layer_cake_domain() {
        assert!(layer_cake_integral(&h1(), 4.0, 1000, 0).is_err());
    }
}
