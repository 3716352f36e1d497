//! H-type groups in prototype coordinates.
//!
//! A prototype group lives on `R^m x R^n` with the law
//! `(x, t) o (x', t') = (x + x', t + t' + 1/2 <Bx, x'>)`, where the k-th centre
//! entry is `<B^k x, x'>`. The exponential map is the identity chart, so the
//! `v`/`z` parts of a point are its `x`/`t` coordinates.
//!
//! Groups whose Jacobian frame is not orthonormal (for instance the
//! `r5_example` preset) carry a positive diagonal rescale `D`: the orthonormal
//! horizontal frame is `Y_j = D_jj X_j`. Every gauge and operator computation
//! is done in frame coordinates `(v, z) = (D^{-1} x, t)`, in which the group is
//! again prototype with structure matrices `D B^k D`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const STRUCTURE_TOL: f64 = 1e-12;
const SELF_TEST_TOL: f64 = 1e-8;

/// A point `(x, t)` in exponential coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPoint {
    pub x: DVector<f64>,
    pub t: DVector<f64>,
}

impl GroupPoint {
    pub fn new(x: DVector<f64>, t: DVector<f64>) -> Self {
        Self { x, t }
    }

    pub fn from_slices(x: &[f64], t: &[f64]) -> Self {
        Self {
            x: DVector::from_column_slice(x),
            t: DVector::from_column_slice(t),
        }
    }

    /// Splits a flat `[x..., t...]` coordinate vector.
    pub fn from_coords(m: usize, coords: &[f64]) -> Self {
        Self::from_slices(&coords[..m], &coords[m..])
    }

    pub fn origin(m: usize, n: usize) -> Self {
        Self {
            x: DVector::zeros(m),
            t: DVector::zeros(n),
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        self.x.iter().chain(self.t.iter()).copied().collect()
    }

    pub fn is_origin(&self) -> bool {
        self.x.iter().all(|&a| a == 0.0) && self.t.iter().all(|&a| a == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(self.t.iter())
            .fold(0.0_f64, |acc, a| acc.max(a.abs()))
    }
}

/// A centre vector `z` (coordinates in `Z_1, ..., Z_n`).
pub type CenterVector = DVector<f64>;

/// User-facing description of a prototype group.
#[derive(Clone, Debug, PartialEq)]
pub struct HTypeGroupSpec {
    pub m: usize,
    pub n: usize,
    pub b: Vec<DMatrix<f64>>,
    /// Diagonal of `D`; `None` means the Jacobian frame is already orthonormal.
    pub rescale: Option<Vec<f64>>,
}

impl HTypeGroupSpec {
    pub fn new(b: Vec<DMatrix<f64>>, rescale: Option<Vec<f64>>) -> Result<Self> {
        let n = b.len();
        let m = b.first().map(|mat| mat.nrows()).unwrap_or(0);
        let spec = Self { m, n, b, rescale };
        spec.check_shapes()?;
        Ok(spec)
    }

    pub fn homogeneous_dim(&self) -> usize {
        self.m + 2 * self.n
    }

    /// The Heisenberg group `H^k`: `m = 2k`, `n = 1`, `B = [[0, -I], [I, 0]]`.
    pub fn heisenberg(k: usize) -> Self {
        let m = 2 * k;
        let mut b = DMatrix::zeros(m, m);
        for j in 0..k {
            b[(j, j + k)] = -1.0;
            b[(j + k, j)] = 1.0;
        }
        Self {
            m,
            n: 1,
            b: vec![b],
            rescale: None,
        }
    }

    /// Quaternionic prototype groups on `R^4 x R^n`, `1 <= n <= 3`, built from
    /// left multiplication by `i`, `j`, `k`.
    pub fn quaternion(n: usize) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::Domain(format!(
                "quaternion preset needs 1 <= n <= 3, got {n}"
            )));
        }
        #[rustfmt::skip]
        let mats: [[f64; 16]; 3] = [
            [0., -1., 0., 0.,  1., 0., 0., 0.,  0., 0., 0., -1.,  0., 0., 1., 0.],
            [0., 0., -1., 0.,  0., 0., 0., 1.,  1., 0., 0., 0.,  0., -1., 0., 0.],
            [0., 0., 0., -1.,  0., 0., -1., 0.,  0., 1., 0., 0.,  1., 0., 0., 0.],
        ];
        let b = mats[..n]
            .iter()
            .map(|rows| DMatrix::from_row_slice(4, 4, rows))
            .collect();
        Ok(Self {
            m: 4,
            n,
            b,
            rescale: None,
        })
    }

    /// The group on `R^5` with `B = diag(J, 2J)`, isomorphic to `H^2`; its
    /// orthonormal frame is `X_1, X_2, X_3/sqrt 2, X_4/sqrt 2`.
    pub fn r5_example() -> Self {
        let mut spec = Self::r5_example_unscaled();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        spec.rescale = Some(vec![1.0, 1.0, s, s]);
        spec
    }

    /// The same group with its raw Jacobian frame (not H-type orthonormal).
    pub fn r5_example_unscaled() -> Self {
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(4, 4, &[
            0., -1., 0., 0.,
            1., 0., 0., 0.,
            0., 0., 0., -2.,
            0., 0., 2., 0.,
        ]);
        Self {
            m: 4,
            n: 1,
            b: vec![b],
            rescale: None,
        }
    }

    /// Parses preset names: `heisenberg:<k>`, `quaternion:<n>`, `r5_example`,
    /// `r5_example_unscaled`.
    pub fn preset(name: &str) -> Result<Self> {
        let (base, arg) = match name.split_once(':') {
            Some((b, a)) => (b, Some(a)),
            None => (name, None),
        };
        let parse_arg = |default: usize| -> Result<usize> {
            match arg {
                None => Ok(default),
                Some(a) => a
                    .trim()
                    .parse()
                    .map_err(|_| Error::Domain(format!("bad preset argument in `{name}`"))),
            }
        };
        match base {
            "heisenberg" => {
                let k = parse_arg(1)?;
                if k == 0 {
                    return Err(Error::Domain("heisenberg:0 is not a group".into()));
                }
                Ok(Self::heisenberg(k))
            }
            "quaternion" => Self::quaternion(parse_arg(3)?),
            "r5_example" => Ok(Self::r5_example()),
            "r5_example_unscaled" => Ok(Self::r5_example_unscaled()),
            _ => Err(Error::Domain(format!("unknown group preset `{name}`"))),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Structural(format!(
                "m = {}, n = {}: both layers must be nontrivial",
                self.m, self.n
            )));
        }
        if self.b.len() != self.n {
            return Err(Error::Dimension(format!(
                "expected {} structure matrices, got {}",
                self.n,
                self.b.len()
            )));
        }
        for (k, mat) in self.b.iter().enumerate() {
            if mat.nrows() != self.m || mat.ncols() != self.m {
                return Err(Error::Dimension(format!(
                    "B^{} is {}x{}, expected {}x{}",
                    k + 1,
                    mat.nrows(),
                    mat.ncols(),
                    self.m,
                    self.m
                )));
            }
            if mat.iter().any(|a| !a.is_finite()) {
                return Err(Error::Structural(format!("B^{} has non-finite entries", k + 1)));
            }
        }
        if let Some(d) = &self.rescale {
            if d.len() != self.m {
                return Err(Error::Dimension(format!(
                    "rescale has {} entries, expected {}",
                    d.len(),
                    self.m
                )));
            }
            if d.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
                return Err(Error::Structural(
                    "rescale entries must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    fn frame_matrices(&self) -> Vec<DMatrix<f64>> {
        match &self.rescale {
            None => self.b.clone(),
            Some(d) => self
                .b
                .iter()
                .map(|mat| DMatrix::from_fn(self.m, self.m, |i, j| d[i] * mat[(i, j)] * d[j]))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    NotSkew,
    NotOrthogonal,
    NotAnticommuting,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Matrix index (and partner index for anticommutation), zero-based.
    pub indices: (usize, Option<usize>),
    /// Max entrywise deviation.
    pub magnitude: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn max_abs(mat: &DMatrix<f64>) -> f64 {
    mat.iter().fold(0.0_f64, |acc, a| acc.max(a.abs()))
}

/// Checks the prototype H-type axioms on the (rescaled) structure matrices.
pub fn validate_htype(spec: &HTypeGroupSpec) -> Result<ValidationReport> {
    spec.check_shapes()?;
    let mats = spec.frame_matrices();
    let eye = DMatrix::<f64>::identity(spec.m, spec.m);
    let mut violations = Vec::new();
    for (k, b) in mats.iter().enumerate() {
        let skew = max_abs(&(b + b.transpose()));
        if skew > STRUCTURE_TOL {
            violations.push(Violation {
                kind: ViolationKind::NotSkew,
                indices: (k, None),
                magnitude: skew,
            });
        }
        let orth = max_abs(&(b.transpose() * b - &eye));
        if orth > STRUCTURE_TOL {
            violations.push(Violation {
                kind: ViolationKind::NotOrthogonal,
                indices: (k, None),
                magnitude: orth,
            });
        }
    }
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            let anti = max_abs(&(&mats[i] * &mats[j] + &mats[j] * &mats[i]));
            if anti > STRUCTURE_TOL {
                violations.push(Violation {
                    kind: ViolationKind::NotAnticommuting,
                    indices: (i, Some(j)),
                    magnitude: anti,
                });
            }
        }
    }
    Ok(ValidationReport { violations })
}

/// A validated H-type group.
#[derive(Clone, Debug)]
pub struct HTypeGroup {
    spec: HTypeGroupSpec,
    scale: Vec<f64>,
    frame_b: Vec<DMatrix<f64>>,
}

impl HTypeGroup {
    /// Validates the spec and runs the bracket self-test: `bracket(e_i, e_j)`
    /// must match the numerical commutator of the Jacobian frame.
    pub fn new(spec: HTypeGroupSpec) -> Result<Self> {
        let report = validate_htype(&spec)?;
        if let Some(v) = report.violations.first() {
            return Err(Error::Structural(format!(
                "not an H-type prototype: {:?} on {:?} (deviation {:.3e})",
                v.kind, v.indices, v.magnitude
            )));
        }
        let scale = spec.rescale.clone().unwrap_or_else(|| vec![1.0; spec.m]);
        let frame_b = spec.frame_matrices();
        let group = Self {
            spec,
            scale,
            frame_b,
        };
        group.bracket_self_test()?;
        Ok(group)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::new(HTypeGroupSpec::preset(name)?)
    }

    pub fn spec(&self) -> &HTypeGroupSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Topological dimension `m + n`.
    pub fn dim(&self) -> usize {
        self.spec.m + self.spec.n
    }

    /// Homogeneous dimension `Q = m + 2n`.
    pub fn q(&self) -> usize {
        self.spec.homogeneous_dim()
    }

    pub fn qf(&self) -> f64 {
        self.q() as f64
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Structure matrices in the orthonormal frame.
    pub fn frame_matrices(&self) -> &[DMatrix<f64>] {
        &self.frame_b
    }

    pub fn origin(&self) -> GroupPoint {
        GroupPoint::origin(self.m(), self.n())
    }

    pub fn check_point(&self, p: &GroupPoint) -> Result<()> {
        if p.x.len() != self.m() || p.t.len() != self.n() {
            return Err(Error::Dimension(format!(
                "point has ({}, {}) coordinates, group is ({}, {})",
                p.x.len(),
                p.t.len(),
                self.m(),
                self.n()
            )));
        }
        Ok(())
    }

    fn check_horizontal(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.m() {
            return Err(Error::Dimension(format!(
                "horizontal vector has {} entries, expected {}",
                v.len(),
                self.m()
            )));
        }
        Ok(())
    }

    /// Group law in prototype coordinates.
    pub fn compose(&self, p: &GroupPoint, q: &GroupPoint) -> Result<GroupPoint> {
        self.check_point(p)?;
        self.check_point(q)?;
        Ok(self.compose_unchecked(p, q))
    }

    pub(crate) fn compose_unchecked(&self, p: &GroupPoint, q: &GroupPoint) -> GroupPoint {
        let x = &p.x + &q.x;
        let t = DVector::from_fn(self.n(), |k, _| {
            p.t[k] + q.t[k] + 0.5 * q.x.dot(&(&self.spec.b[k] * &p.x))
        });
        GroupPoint { x, t }
    }

    /// `(x, t)^{-1} = (-x, -t)`; the bracket term vanishes because `<B^k x, x> = 0`.
    pub fn inverse(&self, p: &GroupPoint) -> GroupPoint {
        GroupPoint {
            x: -&p.x,
            t: -&p.t,
        }
    }

    pub fn dilate(&self, lambda: f64, p: &GroupPoint) -> Result<GroupPoint> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "dilation factor must be positive, got {lambda}"
            )));
        }
        Ok(self.dilate_unchecked(lambda, p))
    }

    pub(crate) fn dilate_unchecked(&self, lambda: f64, p: &GroupPoint) -> GroupPoint {
        GroupPoint {
            x: &p.x * lambda,
            t: &p.t * (lambda * lambda),
        }
    }

    /// Frame coordinates `v = D^{-1} x`.
    pub fn horizontal_part(&self, p: &GroupPoint) -> DVector<f64> {
        DVector::from_fn(self.m(), |j, _| p.x[j] / self.scale[j])
    }

    /// Builds a point from frame coordinates `(v, z)`.
    pub fn from_frame(&self, v: &DVector<f64>, z: &DVector<f64>) -> GroupPoint {
        GroupPoint {
            x: DVector::from_fn(self.m(), |j, _| v[j] * self.scale[j]),
            t: z.clone(),
        }
    }

    /// `Exp(sum_j a_j Y_j)` for frame components `a`.
    pub fn exp_horizontal(&self, a: &DVector<f64>) -> GroupPoint {
        self.from_frame(a, &DVector::zeros(self.n()))
    }

    /// `[v1, v2]` in the centre: k-th component `<B^k v1, v2>` (frame components).
    ///
    /// With this sign `Exp(v1) o Exp(v2) = Exp(v1 + v2 + 1/2 [v1, v2])`.
    pub fn bracket(&self, v1: &DVector<f64>, v2: &DVector<f64>) -> Result<CenterVector> {
        self.check_horizontal(v1)?;
        self.check_horizontal(v2)?;
        Ok(self.bracket_unchecked(v1, v2))
    }

    pub(crate) fn bracket_unchecked(&self, v1: &DVector<f64>, v2: &DVector<f64>) -> CenterVector {
        DVector::from_fn(self.n(), |k, _| v2.dot(&(&self.frame_b[k] * v1)))
    }

    /// `J_z(v) = sum_k z_k B^k v`, the map with `<J_z v, w> = <z, [v, w]>`.
    pub fn j_map(&self, z: &CenterVector, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_horizontal(v)?;
        if z.len() != self.n() {
            return Err(Error::Dimension(format!(
                "centre vector has {} entries, expected {}",
                z.len(),
                self.n()
            )));
        }
        Ok(self.j_map_unchecked(z, v))
    }

    pub(crate) fn j_map_unchecked(&self, z: &CenterVector, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for (k, b) in self.frame_b.iter().enumerate() {
            if z[k] != 0.0 {
                out += b * v * z[k];
            }
        }
        out
    }

    /// `J_{Z_k}(v)` for each centre basis vector.
    pub fn j_basis(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        self.frame_b.iter().map(|b| b * v).collect()
    }

    /// Coefficients of the frame field `Y_j = D_jj X_j` at `p` in
    /// `(d/dx_1, ..., d/dx_m, d/dt_1, ..., d/dt_n)`. `j` is zero-based.
    pub fn jacobian_field_coefficients(&self, j: usize, p: &GroupPoint) -> Result<DVector<f64>> {
        if j >= self.m() {
            return Err(Error::Domain(format!(
                "field index {j} out of range 0..{}",
                self.m()
            )));
        }
        self.check_point(p)?;
        let m = self.m();
        let d = self.scale[j];
        let mut c = DVector::zeros(self.dim());
        c[j] = d;
        for k in 0..self.n() {
            let row = self.spec.b[k].row(j);
            c[m + k] = 0.5 * d * row.dot(&p.x.transpose());
        }
        Ok(c)
    }

    /// All frame-field coefficients as an `m x (m + n)` matrix.
    pub fn frame_matrix(&self, p: &GroupPoint) -> DMatrix<f64> {
        let (m, n) = (self.m(), self.n());
        let mut c = DMatrix::zeros(m, m + n);
        for j in 0..m {
            c[(j, j)] = self.scale[j];
        }
        for k in 0..n {
            let bx = &self.spec.b[k] * &p.x;
            for j in 0..m {
                c[(j, m + k)] = 0.5 * self.scale[j] * bx[j];
            }
        }
        c
    }

    /// Numerical commutator `[Y_i, Y_j]` at `p` from central differences of the
    /// field coefficients.
    pub fn numerical_commutator(&self, i: usize, j: usize, p: &GroupPoint) -> Result<DVector<f64>> {
        let ci = self.jacobian_field_coefficients(i, p)?;
        let cj = self.jacobian_field_coefficients(j, p)?;
        let h = 1e-3;
        let dim = self.dim();
        let m = self.m();
        let derivative = |dir: &DVector<f64>, field: usize| -> Result<DVector<f64>> {
            let mut plus = p.coords();
            let mut minus = p.coords();
            for l in 0..dim {
                plus[l] += h * dir[l];
                minus[l] -= h * dir[l];
            }
            let fp = self.jacobian_field_coefficients(field, &GroupPoint::from_coords(m, &plus))?;
            let fm = self.jacobian_field_coefficients(field, &GroupPoint::from_coords(m, &minus))?;
            Ok((fp - fm) / (2.0 * h))
        };
        Ok(derivative(&ci, j)? - derivative(&cj, i)?)
    }

    fn bracket_self_test(&self) -> Result<()> {
        let p = GroupPoint::new(
            DVector::from_fn(self.m(), |j, _| 0.3 - 0.17 * j as f64),
            DVector::from_fn(self.n(), |k, _| 0.1 + 0.05 * k as f64),
        );
        for i in 0..self.m() {
            for j in 0..self.m() {
                let comm = self.numerical_commutator(i, j, &p)?;
                let mut ei = DVector::zeros(self.m());
                let mut ej = DVector::zeros(self.m());
                ei[i] = 1.0;
                ej[j] = 1.0;
                let br = self.bracket_unchecked(&ei, &ej);
                let horiz = comm.rows(0, self.m()).amax();
                let center = (comm.rows(self.m(), self.n()) - &br).amax();
                if horiz > SELF_TEST_TOL || center > SELF_TEST_TOL {
                    return Err(Error::Consistency(format!(
                        "bracket sign self-test failed for ({i}, {j}): deviation {:.3e}",
                        horiz.max(center)
                    )));
                }
            }
        }
        Ok(())
    }
}
