use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::assembly::{solve_dirichlet, solve_preset, assemble_system, Boundary, BoundaryData, DiscreteSolution};
use super::grid::GridSpec;
use crate::barrier;
use crate::error::{Error, Result};
use crate::gauge::{self, BallSpec, GaugeConstants};
use crate::group::{GroupPoint, HTypeGroup};
use crate::operator::{self, CoefficientField, EllipticityBounds, FieldKind, FieldSpec};

/// Undershoots above this level are clamped to zero silently.
pub const UNDERSHOOT_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct HarnackReport {
    #[serde(rename = "R")]
    pub radius: f64,
    pub quotient: f64,
    pub inf_value: f64,
    pub sup_value: f64,
    pub nodes_in_ball: usize,
    pub nodes_total: usize,
    /// Most negative raw value in the ball.
    pub min_raw: f64,
    pub clamped_nodes: usize,
    pub diagnosis: Option<String>,
    pub refinement_trace: Vec<f64>,
}

fn ball_nodes(sol: &DiscreteSolution, g: &HTypeGroup, ball: &BallSpec) -> Vec<usize> {
    (0..sol.grid.len())
        .filter(|&i| {
            let y = g.compose_unchecked(&g.inverse(&ball.center), &sol.point(i));
            gauge::gauge_norm(g, &y) <= ball.radius
        })
        .collect()
}

/// `sup / inf` of the discrete solution over the grid nodes of the ball.
pub fn harnack_quotient(sol: &DiscreteSolution, g: &HTypeGroup, ball: &BallSpec) -> Result<HarnackReport> {
    let nodes = ball_nodes(sol, g, ball);
    if nodes.is_empty() {
        return Err(Error::Domain(format!("no grid nodes inside the ball of radius {}", ball.radius)));
    }
    let mut inf = f64::INFINITY;
    let mut sup = f64::NEG_INFINITY;
    let mut min_raw = f64::INFINITY;
    let mut clamped = 0;
    for &i in &nodes {
        let raw = sol.values[i];
        min_raw = min_raw.min(raw);
        let v = if raw < 0.0 {
            clamped += 1;
            0.0
        } else {
            raw
        };
        inf = inf.min(v);
        sup = sup.max(v);
    }
    let mut diagnosis = None;
    if min_raw < -UNDERSHOOT_TOLERANCE {
        diagnosis = Some(format!("discrete solution undershoots to {min_raw:.3e} in the ball"));
    }
    let quotient = if inf > 0.0 {
        sup / inf
    } else {
        diagnosis.get_or_insert_with(|| "infimum over the ball is zero".into());
        f64::INFINITY
    };
    Ok(HarnackReport {
        radius: ball.radius,
        quotient,
        inf_value: inf,
        sup_value: sup,
        nodes_in_ball: nodes.len(),
        nodes_total: sol.grid.len(),
        min_raw,
        clamped_nodes: clamped,
        diagnosis,
        refinement_trace: Vec::new(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityReport {
    pub fraction_ge_1: f64,
    pub inf_half: f64,
    pub nodes_ball: usize,
    pub nodes_half: usize,
}

/// Node-counting fraction of `{u >= threshold}` in `B_R(center)` and the
/// infimum over `B_{half R}(center)`.
pub fn critical_density_experiment(
    sol: &DiscreteSolution,
    g: &HTypeGroup,
    center: &GroupPoint,
    radius: f64,
    threshold: f64,
    half_radius_factor: f64,
) -> Result<DensityReport> {
    let ball = BallSpec::new(center.clone(), radius)?;
    let half = BallSpec::new(center.clone(), radius * half_radius_factor)?;
    let nodes = ball_nodes(sol, g, &ball);
    let half_nodes = ball_nodes(sol, g, &half);
    if nodes.is_empty() || half_nodes.is_empty() {
        return Err(Error::Domain("ball contains no grid nodes".into()));
    }
    let above = nodes.iter().filter(|&&i| sol.values[i] >= threshold).count();
    let inf_half = half_nodes
        .iter()
        .map(|&i| sol.values[i].max(0.0))
        .fold(f64::INFINITY, f64::min);
    Ok(DensityReport {
        fraction_ge_1: above as f64 / nodes.len() as f64,
        inf_half,
        nodes_ball: nodes.len(),
        nodes_half: half_nodes.len(),
    })
}

/// One `(field, boundary data)` case of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct HarnackCase {
    pub case_id: usize,
    pub field: FieldSpec,
    pub boundary: BoundaryData,
}

/// Random fields with eigenvalues in `[1, Lambda]`, `Lambda` below the
/// ratio threshold `(Q+3)/(Q+1)`, paired with random nonnegative trigonometric
/// boundary data at random levels.
pub fn random_landis_cases(g: &HTypeGroup, count: usize, seed: u64) -> Vec<HarnackCase> {
    let m = g.m();
    let qf = g.qf();
    let cap = (qf + 3.0) / (qf + 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|case_id| {
            let big = 1.0 + rng.random::<f64>() * 0.98 * (cap - 1.0);
            let mut eig: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..=big)).collect();
            eig[0] = 1.0;
            eig[m - 1] = big;
            let field = FieldSpec {
                kind: FieldKind::Rotating {
                    eigenvalues: eig,
                    frequency: rng.random_range(0.0..4.0),
                },
                lambda: 1.0,
                big_lambda: big,
            };
            let boundary = BoundaryData::RandomTrig {
                seed: rng.random(),
                modes: rng.random_range(1..=4),
                scale: rng.random_range(0.3..3.0),
            };
            HarnackCase {
                case_id,
                field,
                boundary,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub case_id: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub sup: f64,
    pub inf: f64,
    pub quotient: f64,
    pub fraction_ge_1: f64,
    pub inf_half: f64,
    pub residual_max: f64,
    pub min_value: f64,
    /// Critical-density threshold `1 - eps` for this case's `(lambda, Lambda, delta)`.
    pub density_threshold: f64,
    pub claim_triggered: bool,
    pub counterexample: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub cases: usize,
    pub claims_triggered: usize,
    pub counterexamples: usize,
    pub undershoot_cases: usize,
    pub max_residual: f64,
}

/// Solves every case on `grid`, measures the Harnack quotient on `B_R(x0)` and
/// the density pair on `B_R(x0)` / `B_{R/2}(x0)`. The critical-density claim is
/// "fraction >= 1 - eps implies inf over the half ball >= 1/2", with `eps` from
/// the constant chain using `delta = min(2, ratio margin)`.
pub fn run_sweep(
    g: &HTypeGroup,
    cases: &[HarnackCase],
    grid: &GridSpec,
    x0: &GroupPoint,
    radius: f64,
    constants: &GaugeConstants,
) -> Result<(Vec<SweepRow>, SweepSummary)> {
    let ball = BallSpec::new(x0.clone(), radius)?;
    let rows = cases
        .par_iter()
        .map(|case| {
            let field = case.field.build(g.m())?;
            let bounds = field.bounds();
            let delta = operator::delta_from_ratio(&bounds, g.q()).min(2.0);
            let eps = if delta > 0.0 {
                barrier::constant_chain(g, constants, &bounds, delta)?.epsilon_cd
            } else {
                return Err(Error::Precondition(format!("case {} is not Landis-compliant", case.case_id)));
            };
            let boundary = Boundary::new(case.boundary.clone(), g.dim())?;
            let sol = solve_preset(grid, &field, g, &boundary)?;
            let hq = harnack_quotient(&sol, g, &ball)?;
            let dens = critical_density_experiment(&sol, g, x0, radius, 1.0, 0.5)?;
            let threshold = 1.0 - eps;
            let triggered = dens.fraction_ge_1 >= threshold;
            Ok(SweepRow {
                case_id: case.case_id,
                radius,
                sup: hq.sup_value,
                inf: hq.inf_value,
                quotient: hq.quotient,
                fraction_ge_1: dens.fraction_ge_1,
                inf_half: dens.inf_half,
                residual_max: sol.residual_max,
                min_value: sol.min_value(),
                density_threshold: threshold,
                claim_triggered: triggered,
                counterexample: triggered && dens.inf_half < 0.5,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = SweepSummary {
        cases: rows.len(),
        claims_triggered: rows.iter().filter(|r| r.claim_triggered).count(),
        counterexamples: rows.iter().filter(|r| r.counterexample).count(),
        undershoot_cases: rows.iter().filter(|r| r.min_value < -UNDERSHOOT_TOLERANCE).count(),
        max_residual: rows.iter().map(|r| r.residual_max).fold(0.0, f64::max),
    };
    Ok((rows, summary))
}

/// `A~(p) = A(x0 o delta_R(p))`.
pub struct DilatedField<'a> {
    pub inner: &'a dyn CoefficientField,
    pub group: &'a HTypeGroup,
    pub x0: GroupPoint,
    pub scale: f64,
}

impl CoefficientField for DilatedField<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn matrix(&self, p: &GroupPoint) -> DMatrix<f64> {
        let q = self.group.compose_unchecked(&self.x0, &self.group.dilate_unchecked(self.scale, p));
        self.inner.matrix(&q)
    }

    fn bounds(&self) -> EllipticityBounds {
        self.inner.bounds()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DilationEntry {
    #[serde(rename = "R")]
    pub radius: f64,
    pub discrepancy: f64,
    pub nodes_compared: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DilationReport {
    pub base_resolution: usize,
    pub physical_resolution: Option<usize>,
    pub entries: Vec<DilationEntry>,
    pub max_discrepancy: f64,
}

/// Compares `v(x0 o delta_R(p))` with `u(p)`, where `v` solves `L_A v = 0` on
/// `x0 o delta_R(box)` with data `f(delta_{1/R}(x0^{-1} o .))` and `u` solves
/// `L_{A~} u = 0` on `box` with data `f`.
///
/// With `physical_resolution = None` the scaled problem uses the image grid, so
/// only roundoff separates the two. Otherwise the scaled problem has its own
/// resolution and `v` is interpolated multilinearly, so the discrepancy
/// measures discretisation error. With `x0 != 0` the image of the box is not a
/// box, so only `x0 = 0` is supported.
pub fn dilation_consistency(
    g: &HTypeGroup,
    field: &dyn CoefficientField,
    base: &GridSpec,
    data: &Boundary,
    radii: &[f64],
    physical_resolution: Option<usize>,
) -> Result<DilationReport> {
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Domain("dilation radii must be positive".into()));
    }
    if base.center.iter().any(|&c| c != 0.0) {
        return Err(Error::Domain("dilation consistency needs a box centred at the origin".into()));
    }
    let m = g.m();
    let x0 = g.origin();
    let f = |p: &GroupPoint| data.eval(g, p);
    let mut entries = Vec::with_capacity(radii.len());
    for &r in radii {
        let dilated = DilatedField {
            inner: field,
            group: g,
            x0: x0.clone(),
            scale: r,
        };
        let u = solve_dirichlet(&assemble_system(base, &dilated, g, &f, "pullback")?)?;
        let half: Vec<f64> = base
            .half_widths
            .iter()
            .enumerate()
            .map(|(a, &h)| if a < m { h * r } else { h * r * r })
            .collect();
        let res = physical_resolution.map_or_else(|| base.resolution.clone(), |n| vec![n; base.dim()]);
        let phys_grid = GridSpec::new(base.center.clone(), half, res)?;
        let pulled = |p: &GroupPoint| data.eval(g, &g.dilate_unchecked(1.0 / r, p));
        let v = solve_dirichlet(&assemble_system(&phys_grid, field, g, &pulled, "scaled")?)?;
        let mut disc = 0.0_f64;
        let mut count = 0;
        for idx in 0..base.len() {
            if base.is_boundary(idx) {
                continue;
            }
            let image = g.dilate_unchecked(r, &u.point(idx));
            let vv = if physical_resolution.is_none() {
                v.values[idx]
            } else {
                v.value_at(&image).ok_or_else(|| Error::Consistency("image node outside the scaled grid".into()))?
            };
            disc = disc.max((vv - u.values[idx]).abs());
            count += 1;
        }
        entries.push(DilationEntry {
            radius: r,
            discrepancy: disc,
            nodes_compared: count,
        });
    }
    let max_discrepancy = entries.iter().map(|e| e.discrepancy).fold(0.0, f64::max);
    Ok(DilationReport {
        base_resolution: base.resolution[0],
        physical_resolution,
        entries,
        max_discrepancy,
    })
}

/// Harnack quotient on `B_R(0)` for the same problem at two resolutions.
pub fn quotient_refinement(
    g: &HTypeGroup,
    field: &dyn CoefficientField,
    grids: &[GridSpec],
    data: &Boundary,
    radius: f64,
) -> Result<HarnackReport> {
    let ball = BallSpec::new(g.origin(), radius)?;
    let mut trace = Vec::new();
    let mut last = None;
    for grid in grids {
        let sol = solve_preset(grid, field, g, data)?;
        let rep = harnack_quotient(&sol, g, &ball)?;
        trace.push(rep.quotient);
        last = Some(rep);
    }
    let mut rep = last.ok_or_else(|| Error::Domain("no grids given".into()))?;
    rep.refinement_trace = trace;
    Ok(rep)
}
