//! Horizontally elliptic operators `L_A = sum_ij a_ij(x) X_i X_j` in the
//! orthonormal horizontal frame, ellipticity checks and the Cordes-Landis margin.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::LocalFrame;
use crate::group::{GroupPoint, HTypeGroup};
use crate::sampling;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EllipticityBounds {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

impl EllipticityBounds {
    pub fn new(lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "ellipticity bounds need 0 < lambda <= Lambda, got ({lambda}, {big_lambda})"
            )));
        }
        Ok(Self { lambda, big_lambda })
    }

    pub fn ratio(&self) -> f64 {
        self.big_lambda / self.lambda
    }
}

/// A symmetric coefficient matrix as a pure function of the point.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;
    fn matrix(&self, p: &GroupPoint) -> DMatrix<f64>;
    fn bounds(&self) -> EllipticityBounds;
}

/// Config-level description of the shipped coefficient fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Identity,
    /// Explicit constant matrix, given by rows.
    Constant { matrix: Vec<Vec<f64>> },
    /// `diag(start + s (end - start))` with `s` the clamped position of the
    /// flat coordinate `coordinate` inside `[lo, hi]`.
    DiagonalRamp {
        start: Vec<f64>,
        end: Vec<f64>,
        coordinate: usize,
        lo: f64,
        hi: f64,
    },
    /// `R(theta)^T diag(eigenvalues) R(theta)`, Givens rotations on the planes
    /// `(0,1), (2,3), ...` with `theta = frequency * (sum x + sum t)`.
    Rotating { eigenvalues: Vec<f64>, frequency: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(flatten)]
    pub kind: FieldKind,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

impl FieldSpec {
    pub fn identity() -> Self {
        Self {
            kind: FieldKind::Identity,
            lambda: 1.0,
            big_lambda: 1.0,
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let m = diag.len();
        let matrix = (0..m)
            .map(|i| (0..m).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            kind: FieldKind::Constant { matrix },
            lambda: lo,
            big_lambda: hi,
        }
    }

    pub fn build(&self, m: usize) -> Result<Field> {
        let bounds = EllipticityBounds::new(self.lambda, self.big_lambda)?;
        let check_len = |name: &str, len: usize| {
            if len != m {
                Err(Error::Dimension(format!("{name} has {len} entries, expected {m}")))
            } else {
                Ok(())
            }
        };
        match &self.kind {
            FieldKind::Identity => {}
            FieldKind::Constant { matrix } => {
                check_len("matrix", matrix.len())?;
                for row in matrix {
                    check_len("matrix row", row.len())?;
                }
            }
            FieldKind::DiagonalRamp { start, end, lo, hi, .. } => {
                check_len("start", start.len())?;
                check_len("end", end.len())?;
                if !(hi > lo) {
                    return Err(Error::Domain("diagonal_ramp needs hi > lo".into()));
                }
            }
            FieldKind::Rotating { eigenvalues, .. } => check_len("eigenvalues", eigenvalues.len())?,
        }
        Ok(Field {
            m,
            kind: self.kind.clone(),
            bounds,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Field {
    m: usize,
    kind: FieldKind,
    bounds: EllipticityBounds,
}

impl CoefficientField for Field {
    fn dim(&self) -> usize {
        self.m
    }

    fn matrix(&self, p: &GroupPoint) -> DMatrix<f64> {
        let m = self.m;
        match &self.kind {
            FieldKind::Identity => DMatrix::identity(m, m),
            FieldKind::Constant { matrix } => DMatrix::from_fn(m, m, |i, j| matrix[i][j]),
            FieldKind::DiagonalRamp {
                start,
                end,
                coordinate,
                lo,
                hi,
            } => {
                let c = p.coords().get(*coordinate).copied().unwrap_or(0.0);
                let s = ((c - lo) / (hi - lo)).clamp(0.0, 1.0);
                DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        start[i] + s * (end[i] - start[i])
                    } else {
                        0.0
                    }
                })
            }
            FieldKind::Rotating {
                eigenvalues,
                frequency,
            } => {
                let theta = frequency * (p.x.sum() + p.t.sum());
                let (s, c) = theta.sin_cos();
                let mut rot = DMatrix::identity(m, m);
                for k in (0..m.saturating_sub(1)).step_by(2) {
                    rot[(k, k)] = c;
                    rot[(k, k + 1)] = -s;
                    rot[(k + 1, k)] = s;
                    rot[(k + 1, k + 1)] = c;
                }
                let diag = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
                let a = rot.transpose() * diag * &rot;
                (&a + a.transpose()) * 0.5
            }
        }
    }

    fn bounds(&self) -> EllipticityBounds {
        self.bounds
    }
}

/// A coefficient field frozen at a constant matrix.
#[derive(Clone, Debug)]
pub struct ConstantField {
    pub matrix: DMatrix<f64>,
    pub bounds: EllipticityBounds,
}

impl CoefficientField for ConstantField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn matrix(&self, _p: &GroupPoint) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn bounds(&self) -> EllipticityBounds {
        self.bounds
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
    }
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::Structural(format!(
            "coefficient matrix is not symmetric (deviation {asym:.3e})"
        )));
    }
    Ok(())
}

/// `(min eigenvalue, max eigenvalue)` of a symmetric matrix.
pub fn eigen_range(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_symmetric(a)?;
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    Ok((eig.min(), eig.max()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EllipticityFailure {
    pub index: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// How far the eigenvalue range leaves `[lambda, Lambda]`.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EllipticityReport {
    pub points_checked: usize,
    pub failures: Vec<EllipticityFailure>,
}

impl EllipticityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn check_ellipticity(field: &dyn CoefficientField, points: &[GroupPoint]) -> Result<EllipticityReport> {
    if points.is_empty() {
        return Err(Error::Domain("no sample points".into()));
    }
    let b = field.bounds();
    let mut failures = Vec::new();
    for (index, p) in points.iter().enumerate() {
        let (lo, hi) = eigen_range(&field.matrix(p))?;
        let excess = (b.lambda - lo).max(hi - b.big_lambda);
        if excess > EIGEN_SLACK {
            failures.push(EllipticityFailure {
                index,
                min_eigenvalue: lo,
                max_eigenvalue: hi,
                excess,
            });
        }
    }
    Ok(EllipticityReport {
        points_checked: points.len(),
        failures,
    })
}

/// Largest `delta` such that
/// `tr A + (Q + 2 - m) max eig A <= (Q + 4 - delta) min eig A`.
pub fn landis_delta_pointwise(a: &DMatrix<f64>, q: usize) -> Result<f64> {
    let (lo, hi) = eigen_range(a)?;
    if lo <= 0.0 {
        return Err(Error::Domain(format!(
            "matrix is not positive definite (min eigenvalue {lo:e})"
        )));
    }
    let m = a.nrows() as f64;
    let qf = q as f64;
    Ok((qf + 4.0) - (a.trace() + (qf + 2.0 - m) * hi) / lo)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LandisReport {
    pub delta: f64,
    pub satisfied: bool,
    pub worst_index: usize,
    pub worst_point: Vec<f64>,
}

pub fn landis_delta_field(field: &dyn CoefficientField, points: &[GroupPoint], q: usize) -> Result<LandisReport> {
    let mut worst: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let delta = landis_delta_pointwise(&field.matrix(p), q)?;
        if worst.is_none_or(|(_, w)| delta < w) {
            worst = Some((i, delta));
        }
    }
    let (worst_index, delta) = worst.ok_or_else(|| Error::Domain("no sample points".into()))?;
    Ok(LandisReport {
        delta,
        satisfied: delta > 0.0,
        worst_index,
        worst_point: points[worst_index].coords(),
    })
}

/// Halton fill of the box `[-R, R]^m x [-R^2/4, R^2/4]^n` (frame coordinates)
/// around `center`.
pub fn fill_points(g: &HTypeGroup, center: &GroupPoint, radius: f64, count: usize) -> Vec<GroupPoint> {
    let (m, n) = (g.m(), g.n());
    (0..count as u64)
        .map(|i| {
            let h = sampling::halton(i, m + n);
            let v = DVector::from_fn(m, |j, _| radius * (2.0 * h[j] - 1.0));
            let z = DVector::from_fn(n, |k, _| 0.25 * radius * radius * (2.0 * h[m + k] - 1.0));
            g.compose_unchecked(center, &g.from_frame(&v, &z))
        })
        .collect()
}

/// The margin implied by the eigenvalue ratio alone:
/// `(Q + 1)((Q + 3)/(Q + 1) - Lambda/lambda)`, expanded to keep exact inputs exact.
pub fn delta_from_ratio(bounds: &EllipticityBounds, q: usize) -> f64 {
    let qf = q as f64;
    (qf + 3.0) - (qf + 1.0) * bounds.ratio()
}

/// `sum_ij a_ij h_ij`.
pub fn contract(a: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    a.component_mul(h).sum()
}

/// Closed form of `L_A d` for a frozen matrix `A`.
pub fn la_d_with_matrix(g: &HTypeGroup, a: &DMatrix<f64>, p: &GroupPoint) -> Result<f64> {
    let lf = LocalFrame::at(g, p);
    la_d_local(a, &lf)
}

pub(crate) fn la_d_local(a: &DMatrix<f64>, lf: &LocalFrame) -> Result<f64> {
    let gd = lf.grad_d()?;
    let d = lf.d;
    let tr = a.trace();
    let agd = a * &gd;
    let first = (tr * gd.norm_squared() - 3.0 * gd.dot(&agd)) / d;
    let mut quad = lf.v.dot(&(a * &lf.v));
    for j in &lf.jv {
        quad += j.dot(&(a * j));
    }
    Ok(first + 2.0 * quad / d.powi(3))
}

pub fn apply_la_closed_form_d(field: &dyn CoefficientField, g: &HTypeGroup, p: &GroupPoint) -> Result<f64> {
    la_d_with_matrix(g, &field.matrix(p), p)
}

/// `L_A phi = 4|v|^2 tr A + 8 <AV, V> + 8 sum_k <A J_k V, J_k V>`.
pub fn la_phi_with_matrix(g: &HTypeGroup, a: &DMatrix<f64>, p: &GroupPoint) -> f64 {
    let lf = LocalFrame::at(g, p);
    let mut quad = lf.v.dot(&(a * &lf.v));
    for j in &lf.jv {
        quad += j.dot(&(a * j));
    }
    4.0 * lf.v.norm_squared() * a.trace() + 8.0 * quad
}

pub fn apply_la_phi(field: &dyn CoefficientField, g: &HTypeGroup, p: &GroupPoint) -> f64 {
    la_phi_with_matrix(g, &field.matrix(p), p)
}

pub const DEFAULT_FD_STEP: f64 = 1e-4;

fn mixed_difference<F>(g: &HTypeGroup, a: &DMatrix<f64>, u: &F, p: &GroupPoint, h: f64) -> f64
where
    F: Fn(&GroupPoint) -> f64 + ?Sized,
{
    let m = g.m();
    let flow = |i: usize, s: f64| {
        let mut e = DVector::zeros(m);
        e[i] = s;
        g.exp_horizontal(&e)
    };
    let eval = |i: usize, s: f64, j: usize, t: f64| {
        let q = g.compose_unchecked(&g.compose_unchecked(p, &flow(i, s)), &flow(j, t));
        u(&q)
    };
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            let mixed = eval(i, h, j, h) - eval(i, h, j, -h) - eval(i, -h, j, h) + eval(i, -h, j, -h);
            total += aij * mixed / (4.0 * h * h);
        }
    }
    total
}

/// Finite-difference `L_A u` from mixed differences of `u(p o Exp(sY_i) o Exp(tY_j))`,
/// with one Richardson step.
pub fn la_fd_with_matrix<F>(g: &HTypeGroup, a: &DMatrix<f64>, u: &F, p: &GroupPoint, step: f64) -> Result<f64>
where
    F: Fn(&GroupPoint) -> f64 + ?Sized,
{
    if !(step.is_finite() && step > 1e-8 * (1.0 + p.max_abs())) {
        return Err(Error::Domain(format!("finite-difference step {step:e} underflows")));
    }
    let coarse = mixed_difference(g, a, u, p, step);
    let fine = mixed_difference(g, a, u, p, step / 2.0);
    Ok((4.0 * fine - coarse) / 3.0)
}

pub fn apply_la_fd<F>(field: &dyn CoefficientField, g: &HTypeGroup, u: &F, p: &GroupPoint, step: f64) -> Result<f64>
where
    F: Fn(&GroupPoint) -> f64 + ?Sized,
{
    la_fd_with_matrix(g, &field.matrix(p), u, p, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1() -> HTypeGroup {
        HTypeGroup::preset("heisenberg:1").unwrap()
    }

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(d))
    }

    #[test]
    fn bounds_validation() {
        assert!(EllipticityBounds::new(2.0, 1.0).is_err());
        assert!(EllipticityBounds::new(0.0, 1.0).is_err());
        assert!(EllipticityBounds::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn identity_is_elliptic() {
        let g = h1();
        let f = FieldSpec::identity().build(2).unwrap();
        let pts = fill_points(&g, &g.origin(), 1.0, 20);
        assert!(check_ellipticity(&f, &pts).unwrap().passed());
    }

    #[test]
    fn ellipticity_excess_reported() {
        let g = h1();
        let f = FieldSpec {
            kind: FieldKind::Constant {
                matrix: vec![vec![1.0, 0.0], vec![0.0, 3.0]],
            },
            lambda: 1.0,
            big_lambda: 2.0,
        }
        .build(2)
        .unwrap();
        let pts = fill_points(&g, &g.origin(), 1.0, 7);
        let r = check_ellipticity(&f, &pts).unwrap();
        assert_eq!(r.failures.len(), 7);
        assert!(r.failures.iter().all(|fl| (fl.excess - 1.0).abs() < 1e-12));
        assert!(check_ellipticity(&f, &[]).is_err());
    }

    #[test]
    fn asymmetric_field_is_structural_error() {
        let f = ConstantField {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            bounds: EllipticityBounds::new(0.5, 2.0).unwrap(),
        };
        let g = h1();
        assert!(matches!(
            check_ellipticity(&f, &[g.origin()]),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn landis_examples() {
        for (m, q) in [(2, 4), (4, 6), (4, 10)] {
            let d = landis_delta_pointwise(&DMatrix::identity(m, m), q).unwrap();
            assert!((d - 2.0).abs() < 1e-14);
        }
        for big in [1.0, 1.2, 1.35, 1.4, 1.5] {
            let d = landis_delta_pointwise(&diag(&[1.0, big]), 4).unwrap();
            assert!((d - (7.0 - 5.0 * big)).abs() < 1e-13);
        }
        let a = DMatrix::from_row_slice(2, 2, &[1.3, 0.1, 0.1, 1.1]);
        let d1 = landis_delta_pointwise(&a, 4).unwrap();
        let d2 = landis_delta_pointwise(&(&a * 7.5), 4).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(landis_delta_pointwise(&diag(&[1.0, -1.0]), 4).is_err());
    }

    #[test]
    fn ramp_field_landis() {
        let g = h1();
        let f = FieldSpec {
            kind: FieldKind::DiagonalRamp {
                start: vec![1.0, 1.0],
                end: vec![1.0, 1.5],
                coordinate: 0,
                lo: -1.0,
                hi: 1.0,
            },
            lambda: 1.0,
            big_lambda: 1.5,
        }
        .build(2)
        .unwrap();
        let pts = fill_points(&g, &g.origin(), 1.0, 64);
        let mut pts = pts;
        pts.push(GroupPoint::from_slices(&[1.0, 0.0], &[0.0]));
        let r = landis_delta_field(&f, &pts, 4).unwrap();
        assert!((r.delta + 0.5).abs() < 1e-12);
        assert!(!r.satisfied);
        let id = FieldSpec::identity().build(2).unwrap();
        assert!((landis_delta_field(&id, &pts, 4).unwrap().delta - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ratio_examples() {
        let b = EllipticityBounds::new(1.0, 1.0).unwrap();
        assert!((delta_from_ratio(&b, 4) - 2.0).abs() < 1e-15);
        let b = EllipticityBounds::new(5.0, 7.0).unwrap();
        assert!(delta_from_ratio(&b, 4).abs() < 1e-14);
        let b = EllipticityBounds::new(1.0, 1.2).unwrap();
        assert!((delta_from_ratio(&b, 4) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn la_phi_at_unit_point_attains_bound() {
        let g = h1();
        let id = DMatrix::identity(2, 2);
        let p = GroupPoint::from_slices(&[1.0, 0.0], &[0.0]);
        assert!((la_phi_with_matrix(&g, &id, &p) - 24.0).abs() < 1e-13);
        let fd = la_fd_with_matrix(&g, &id, &|q: &GroupPoint| crate::gauge::phi(&g, q), &p, DEFAULT_FD_STEP).unwrap();
        assert!((fd - 24.0).abs() < 1e-6 * 24.0);
        assert_eq!(la_phi_with_matrix(&g, &id, &g.origin()), 0.0);
    }

    #[test]
    fn la_d_on_centre_axis_is_zero() {
        let g = h1();
        let p = GroupPoint::from_slices(&[0.0, 0.0], &[0.3]);
        let v = la_d_with_matrix(&g, &DMatrix::identity(2, 2), &p).unwrap();
        assert_eq!(v, 0.0);
        assert!(la_d_with_matrix(&g, &DMatrix::identity(2, 2), &g.origin()).is_err());
    }

    #[test]
    fn fd_annihilates_constants_and_rejects_tiny_steps() {
        let g = h1();
        let a = diag(&[1.0, 1.3]);
        let p = GroupPoint::from_slices(&[0.2, -0.4], &[0.1]);
        let v = la_fd_with_matrix(&g, &a, &|_: &GroupPoint| 3.5, &p, DEFAULT_FD_STEP).unwrap();
        assert_eq!(v, 0.0);
        assert!(la_fd_with_matrix(&g, &a, &|_: &GroupPoint| 1.0, &p, 1e-12).is_err());
    }

    #[test]
    fn rotating_field_stays_in_bounds() {
        let g = h1();
        let f = FieldSpec {
            kind: FieldKind::Rotating {
                eigenvalues: vec![1.0, 1.3],
                frequency: 3.0,
            },
            lambda: 1.0,
            big_lambda: 1.3,
        }
        .build(2)
        .unwrap();
        let pts = fill_points(&g, &g.origin(), 1.0, 50);
        assert!(check_ellipticity(&f, &pts).unwrap().passed());
        let rep = landis_delta_field(&f, &pts, 4).unwrap();
        assert!(rep.delta >= delta_from_ratio(&f.bounds(), 4) - 1e-12);
    }
}
