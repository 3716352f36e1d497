use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::sparse::{self, BandedLu, CsrMatrix};
use crate::error::{Error, Result};
use crate::gauge;
use crate::group::{GroupPoint, HTypeGroup};
use crate::operator::CoefficientField;

pub const DIRECT_TOLERANCE: f64 = 1e-10;
pub const ITERATIVE_TOLERANCE: f64 = 1e-8;
const ITERATIVE_TARGET: f64 = 1e-10;
const MAX_ITERATIONS: usize = 20_000;
const DIRECT_MAX_FLOPS: f64 = 1e10;
const DIRECT_MAX_STORAGE: usize = 40_000_000;

/// Second-order coefficients `C^T A C` and first-order coefficients of
/// `sum a_ij Y_i Y_j` in the coordinates `(x, t)`, where row `j` of `C` holds the
/// coordinate components of `Y_j`.
pub fn expand_la_coordinates(
    field: &dyn CoefficientField,
    g: &HTypeGroup,
    p: &GroupPoint,
) -> (DMatrix<f64>, DVector<f64>) {
    let (m, n) = (g.m(), g.n());
    let a = field.matrix(p);
    let c = g.frame_matrix(p);
    let second = c.transpose() * &a * &c;
    let second = (&second + second.transpose()) * 0.5;
    // Y_i applied to the t_k-coefficient of Y_j gives (1/2) s_i s_j B^k_{ji}
    let mut first = DVector::zeros(m + n);
    let s = g.scale();
    for (k, b) in g.spec().b.iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                acc += a[(i, j)] * 0.5 * s[i] * s[j] * b[(j, i)];
            }
        }
        first[m + k] = acc;
    }
    (second, first)
}

/// Dirichlet data presets. Values are functions of the node in exponential
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryData {
    Constant { value: f64 },
    Affine { offset: f64, slope: Vec<f64> },
    /// `1 + sin(x_1) / 2`.
    SinX1,
    /// `d(p)^{2-Q}`; undefined at the origin.
    Fundamental,
    /// `scale (1 + sum_k a_k sin(w_k . p + phase_k))` with `sum |a_k| <= 1`.
    RandomTrig { seed: u64, modes: usize, scale: f64 },
}

#[derive(Clone, Debug)]
struct TrigMode {
    amplitude: f64,
    wave: Vec<f64>,
    phase: f64,
}

/// A boundary preset bound to a group, ready for evaluation.
#[derive(Clone, Debug)]
pub struct Boundary {
    data: BoundaryData,
    modes: Vec<TrigMode>,
}

impl Boundary {
    pub fn new(data: BoundaryData, dim: usize) -> Result<Self> {
        let mut modes = Vec::new();
        match &data {
            BoundaryData::Affine { slope, .. } if slope.len() != dim => {
                return Err(Error::Dimension(format!(
                    "affine slope has {} entries, expected {dim}",
                    slope.len()
                )));
            }
            BoundaryData::RandomTrig { seed, modes: count, scale } => {
                if *scale < 0.0 || *count == 0 {
                    return Err(Error::Domain("random_trig needs scale >= 0 and at least one mode".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let raw: Vec<f64> = (0..*count).map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                for w in raw {
                    modes.push(TrigMode {
                        amplitude: 0.95 * w / total,
                        wave: (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    });
                }
            }
            _ => {}
        }
        Ok(Self { data, modes })
    }

    pub fn data(&self) -> &BoundaryData {
        &self.data
    }

    pub fn eval(&self, g: &HTypeGroup, p: &GroupPoint) -> f64 {
        match &self.data {
            BoundaryData::Constant { value } => *value,
            BoundaryData::Affine { offset, slope } => {
                offset + p.coords().iter().zip(slope).map(|(c, s)| c * s).sum::<f64>()
            }
            BoundaryData::SinX1 => 1.0 + 0.5 * p.x[0].sin(),
            BoundaryData::Fundamental => gauge::gauge_norm(g, p).powf(2.0 - g.qf()),
            BoundaryData::RandomTrig { scale, .. } => {
                let c = p.coords();
                let wave: f64 = self
                    .modes
                    .iter()
                    .map(|md| md.amplitude * (md.wave.iter().zip(&c).map(|(w, x)| w * x).sum::<f64>() + md.phase).sin())
                    .sum();
                scale * (1.0 + wave)
            }
        }
    }

    pub fn describe(&self) -> String {
        match &self.data {
            BoundaryData::Constant { value } => format!("constant({value})"),
            BoundaryData::Affine { offset, slope } => format!("affine({offset}; {slope:?})"),
            BoundaryData::SinX1 => "sin_x1".into(),
            BoundaryData::Fundamental => "fundamental".into(),
            BoundaryData::RandomTrig { seed, modes, scale } => format!("random_trig(seed={seed}, modes={modes}, scale={scale})"),
        }
    }
}

/// Row-scaled Dirichlet system on a grid: interior rows carry the stencil of
/// `L_A` divided by the magnitude of its diagonal, boundary rows are identity.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub grid: GridSpec,
    pub m: usize,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Magnitude of the unscaled diagonal of each interior row, 1 on the boundary.
    pub row_scale: Vec<f64>,
    pub boundary: Vec<bool>,
    pub description: String,
}

impl LinearSystem {
    /// Unscaled discrete `L_A u` at interior node `idx`.
    pub fn apply_row(&self, idx: usize, values: &[f64]) -> f64 {
        self.matrix.row(idx).map(|(c, v)| v * values[c]).sum::<f64>() * self.row_scale[idx]
    }
}

fn stencil_row(grid: &GridSpec, second: &DMatrix<f64>, first: &DVector<f64>, idx: usize) -> Vec<(usize, f64)> {
    let dim = grid.dim();
    let mut row = Vec::with_capacity(1 + 2 * dim + 2 * dim * dim);
    let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();
    let st: Vec<usize> = (0..dim).map(|a| grid.stride(a)).collect();
    for a in 0..dim {
        let c = second[(a, a)] / (h[a] * h[a]);
        let f = first[a] / (2.0 * h[a]);
        if c != 0.0 || f != 0.0 {
            row.push((idx + st[a], c + f));
            row.push((idx - st[a], c - f));
            row.push((idx, -2.0 * c));
        }
        for b in a + 1..dim {
            let mixed = 2.0 * second[(a, b)];
            if mixed == 0.0 {
                continue;
            }
            let w = mixed / (4.0 * h[a] * h[b]);
            row.push((idx + st[a] + st[b], w));
            row.push((idx - st[a] - st[b], w));
            row.push((idx + st[a] - st[b], -w));
            row.push((idx - st[a] + st[b], -w));
        }
    }
    row
}

/// Centred second differences (four-point cross for mixed terms) and centred
/// first differences at interior nodes; Dirichlet rows on the box boundary.
pub fn assemble_system(
    grid: &GridSpec,
    field: &dyn CoefficientField,
    g: &HTypeGroup,
    boundary: &(dyn Fn(&GroupPoint) -> f64 + Sync),
    description: &str,
) -> Result<LinearSystem> {
    if grid.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "grid has {} axes, group has dimension {}",
            grid.dim(),
            g.dim()
        )));
    }
    let m = g.m();
    let assembled: Vec<(Vec<(usize, f64)>, f64, f64, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let p = grid.point(m, idx);
            if grid.is_boundary(idx) {
                return Ok((vec![(idx, 1.0)], boundary(&p), 1.0, true));
            }
            let (second, first) = expand_la_coordinates(field, g, &p);
            let mut row = stencil_row(grid, &second, &first, idx);
            let diag: f64 = row.iter().filter(|e| e.0 == idx).map(|e| e.1).sum();
            if !(diag.abs() > 0.0 && diag.is_finite()) {
                return Err(Error::Structural(format!("degenerate stencil at node {idx}")));
            }
            let scale = diag.abs();
            for e in &mut row {
                e.1 /= scale;
            }
            Ok((row, 0.0, scale, false))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(assembled.len());
    let mut rhs = Vec::with_capacity(assembled.len());
    let mut row_scale = Vec::with_capacity(assembled.len());
    let mut is_boundary = Vec::with_capacity(assembled.len());
    for (row, b, s, bd) in assembled {
        rows.push(row);
        rhs.push(b);
        row_scale.push(s);
        is_boundary.push(bd);
    }
    Ok(LinearSystem {
        grid: grid.clone(),
        m,
        matrix: CsrMatrix::from_rows(rows),
        rhs,
        row_scale,
        boundary: is_boundary,
        description: description.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    BandedLu,
    Bicgstab,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscreteSolution {
    pub grid: GridSpec,
    #[serde(skip)]
    pub m: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
    /// Max over rows of `|(A u - b)_i| / |A_ii|`.
    pub residual_max: f64,
    pub boundary: String,
    pub solver: SolverKind,
    pub iterations: usize,
}

impl DiscreteSolution {
    pub fn point(&self, idx: usize) -> GroupPoint {
        self.grid.point(self.m, idx)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn value_at(&self, p: &GroupPoint) -> Option<f64> {
        self.grid.interpolate(&self.values, &p.coords())
    }
}

/// Direct banded solve when affordable, ILU(0)-BiCGSTAB otherwise. The initial
/// guess for the iteration is the mean of the boundary data.
pub fn solve_dirichlet(system: &LinearSystem) -> Result<DiscreteSolution> {
    let a = &system.matrix;
    let (kl, ku) = a.bandwidths();
    let direct = BandedLu::flops(a.n, kl, ku) <= DIRECT_MAX_FLOPS && BandedLu::storage(a.n, kl, ku) <= DIRECT_MAX_STORAGE;
    let (values, solver, iterations) = if direct {
        let mut x = system.rhs.clone();
        BandedLu::factor(a)?.solve(&mut x);
        (x, SolverKind::BandedLu, 0)
    } else {
        let (sum, count) = system
            .rhs
            .iter()
            .zip(&system.boundary)
            .filter(|e| *e.1)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        let mut x: Vec<f64> = system
            .rhs
            .iter()
            .zip(&system.boundary)
            .map(|(&v, &bd)| if bd { v } else { mean })
            .collect();
        let stats = sparse::bicgstab(a, &system.rhs, &mut x, ITERATIVE_TARGET, MAX_ITERATIONS)?;
        (x, SolverKind::Bicgstab, stats.iterations)
    };
    let residual_max = sparse::true_residual(a, &system.rhs, &values);
    let tol = if direct { DIRECT_TOLERANCE } else { ITERATIVE_TOLERANCE };
    if !(residual_max <= tol) || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence {
            iterations,
            residual: residual_max,
            trace: vec![residual_max],
        });
    }
    Ok(DiscreteSolution {
        grid: system.grid.clone(),
        m: system.m,
        values,
        residual_max,
        boundary: system.description.clone(),
        solver,
        iterations,
    })
}

/// Assemble and solve with a boundary preset.
pub fn solve_preset(
    grid: &GridSpec,
    field: &dyn CoefficientField,
    g: &HTypeGroup,
    boundary: &Boundary,
) -> Result<DiscreteSolution> {
    let f = |p: &GroupPoint| boundary.eval(g, p);
    solve_dirichlet(&assemble_system(grid, field, g, &f, &boundary.describe())?)
}
