use std::fmt::Write as _;

use htype_core::barrier::{self, BarrierConfig, Region, Verdict};
use htype_core::gauge::{self, ConstantsBudget, ConstantsReport};
use htype_core::harnack::{self, GridSpec, HarnackCase};
use htype_core::operator;
use htype_core::{BallSpec, CoefficientField, GroupPoint, HTypeGroup};
use serde_json::{json, Value};

use crate::config::{ResolvedGroup, RunConfig};
use crate::report::{Failure, Outcome, Status};
use crate::CliError;

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub group: ResolvedGroup,
}

impl Context<'_> {
    fn build_group(&self) -> Result<HTypeGroup, CliError> {
        HTypeGroup::new(self.group.spec.clone()).map_err(|e| CliError::config(format!("group {}: {e}", self.group.label)))
    }

    fn point(&self, g: &HTypeGroup, coords: &Option<Vec<f64>>, what: &str) -> Result<GroupPoint, CliError> {
        match coords {
            None => Ok(g.origin()),
            Some(c) if c.len() == g.dim() => Ok(GroupPoint::from_coords(g.m(), c)),
            Some(c) => Err(CliError::config(format!("{what} has {} coordinates, group has {}", c.len(), g.dim()))),
        }
    }

    fn constants(&self, g: &HTypeGroup) -> Result<ConstantsReport, CliError> {
        let budget = ConstantsBudget {
            quadrature: self.cfg.constants.quadrature,
            k_samples: self.cfg.constants.k_samples,
        };
        gauge::compute_constants(g, budget, self.cfg.seed).map_err(CliError::from_core)
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serialises")
}

fn failing<'a>(command: &'static str, block: &'a Value) -> impl Fn(CliError) -> Failure + 'a {
    move |error| Failure {
        command,
        block: block.clone(),
        error,
    }
}

pub fn group_check(ctx: &Context) -> Result<Outcome, Failure> {
    let block = Value::Null;
    let fail = failing("group check", &block);
    let spec = &ctx.group.spec;
    let validation = htype_core::group::validate_htype(spec).map_err(|e| fail(CliError::config(e.to_string())))?;
    let mut passed = validation.is_ok();
    let mut self_test = None;
    if passed {
        if let Err(e) = HTypeGroup::new(spec.clone()) {
            passed = false;
            self_test = Some(e.to_string());
        }
    }
    let violations: Vec<Value> = validation
        .violations
        .iter()
        .map(|v| {
            json!({
                "kind": format!("{:?}", v.kind),
                "matrix": v.indices.0,
                "partner": v.indices.1,
                "magnitude": v.magnitude,
            })
        })
        .collect();
    let q = spec.homogeneous_dim();
    let mut text = format!("group {}: m = {}, n = {}, Q = {q}\n", ctx.group.label, spec.m, spec.n);
    if let Some(d) = &spec.rescale {
        let _ = writeln!(text, "rescale D = {d:?}");
    }
    for v in &validation.violations {
        let pair = v.indices.1.map_or(String::new(), |j| format!(", B^{}", j + 1));
        let _ = writeln!(text, "violation {:?} on B^{}{pair}: {:.3e}", v.kind, v.indices.0 + 1, v.magnitude);
    }
    if let Some(msg) = &self_test {
        let _ = writeln!(text, "self-test failed: {msg}");
    }
    let _ = writeln!(text, "structure: {}", if passed { "pass" } else { "fail" });
    Ok(Outcome {
        command: "group check",
        block: block.clone(),
        status: if passed { Status::Pass } else { Status::Fail },
        report: json!({
            "group": ctx.group.label,
            "m": spec.m,
            "n": spec.n,
            "Q": q,
            "rescale": spec.rescale,
            "passed": passed,
            "violations": violations,
            "self_test_error": self_test,
        }),
        text,
        csv: None,
    })
}

pub fn gauge_eval(ctx: &Context, raw: &str) -> Result<Outcome, Failure> {
    let block = json!({ "point": raw });
    let fail = failing("gauge eval", &block);
    let g = ctx.build_group().map_err(&fail)?;
    let coords = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| fail(CliError::config(format!("cannot parse point `{raw}`"))))?;
    if coords.len() != g.dim() {
        return Err(fail(CliError::config(format!(
            "point has {} coordinates, group has {}",
            coords.len(),
            g.dim()
        ))));
    }
    let p = GroupPoint::from_coords(g.m(), &coords);
    let field = ctx.cfg.field.build(g.m()).map_err(|e| fail(CliError::from_core(e)))?;
    let phi = gauge::phi(&g, &p);
    let d = gauge::gauge_norm(&g, &p);
    let grad = gauge::horizontal_gradient_d(&g, &p).ok().map(|v| v.iter().copied().collect::<Vec<_>>());
    let psi0 = gauge::psi0(&g, &p).ok();
    let la_d = operator::apply_la_closed_form_d(&field, &g, &p).ok();
    let la_phi = operator::apply_la_phi(&field, &g, &p);
    let residual = gauge::fundamental_solution_residual(&g, &p).ok();
    let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.12e}"));
    let mut text = format!("point {coords:?}\n");
    let _ = writeln!(text, "phi = {phi:.12e}");
    let _ = writeln!(text, "d = {d:.12e}");
    let _ = writeln!(text, "grad_H d = {}", grad.as_ref().map_or("undefined".into(), |v| format!("{v:?}")));
    let _ = writeln!(text, "psi0 = {}", opt(psi0));
    let _ = writeln!(text, "L_A d = {}", opt(la_d));
    let _ = writeln!(text, "L_A phi = {la_phi:.12e}");
    let _ = writeln!(text, "sub-Laplacian of d^(2-Q) = {}", opt(residual));
    Ok(Outcome {
        command: "gauge eval",
        block: block.clone(),
        status: Status::Pass,
        report: json!({
            "point": coords,
            "phi": phi,
            "d": d,
            "horizontal_gradient_d": grad,
            "psi0": psi0,
            "la_d": la_d,
            "la_phi": la_phi,
            "fundamental_residual": residual,
        }),
        text,
        csv: None,
    })
}

pub fn constants(ctx: &Context) -> Result<Outcome, Failure> {
    let block = to_value(&ctx.cfg.constants);
    let fail = failing("constants", &block);
    let g = ctx.build_group().map_err(&fail)?;
    let rep = ctx.constants(&g).map_err(&fail)?;
    let c = rep.constants;
    let exact = gauge::unit_ball_volume_exact(g.m(), g.n());
    let r_sigma = rep.beta.beta.sigma_distance(&rep.beta.beta_r2);
    let report = json!({
        "beta": c.beta,
        "beta_stderr": c.beta_stderr,
        "K": c.k,
        "ball_volume": c.ball_volume,
        "ball_volume_stderr": c.ball_volume_stderr,
        "seed": ctx.cfg.seed,
        "budget": block,
        "beta_r2": rep.beta.beta_r2.value,
        "beta_r2_stderr": rep.beta.beta_r2.stderr,
        "r_independence_sigma": r_sigma,
        "beta_surface": rep.beta.beta_surface.value,
        "beta_surface_stderr": rep.beta.beta_surface.stderr,
        "estimator_disagreement": rep.beta.relative_disagreement,
        "ball_volume_layered": rep.ball_volume_layered.value,
        "ball_volume_layered_stderr": rep.ball_volume_layered.stderr,
        "ball_volume_exact": exact,
        "k_sup_ratio": rep.k.sup_ratio,
    });
    let mut text = format!("group {} (Q = {})\n", ctx.group.label, g.q());
    let _ = writeln!(text, "beta        = {:.6} +- {:.2e}", c.beta, c.beta_stderr);
    let _ = writeln!(
        text,
        "beta (R=2)  = {:.6} +- {:.2e}  ({r_sigma:.2} sigma from R=1)",
        rep.beta.beta_r2.value, rep.beta.beta_r2.stderr
    );
    let _ = writeln!(text, "beta (surf) = {:.6} +- {:.2e}", rep.beta.beta_surface.value, rep.beta.beta_surface.stderr);
    let _ = writeln!(text, "K           = {:.6} (sup ratio {:.6})", c.k, rep.k.sup_ratio);
    let _ = writeln!(text, "|B_1|       = {:.6} +- {:.2e} (exact {exact:.6})", c.ball_volume, c.ball_volume_stderr);
    Ok(Outcome {
        command: "constants",
        block: block.clone(),
        status: Status::Pass,
        report,
        text,
        csv: None,
    })
}

pub fn landis_check(ctx: &Context) -> Result<Outcome, Failure> {
    let block = to_value(&ctx.cfg.landis);
    let fail = failing("landis check", &block);
    let g = ctx.build_group().map_err(&fail)?;
    let field = ctx.cfg.field.build(g.m()).map_err(|e| fail(CliError::config(e.to_string())))?;
    let l = &ctx.cfg.landis;
    if l.points == 0 || !(l.radius > 0.0) {
        return Err(fail(CliError::config("landis.points and landis.radius must be positive")));
    }
    let center = ctx.point(&g, &l.center, "landis.center").map_err(&fail)?;
    let mut points = vec![center.clone()];
    points.extend(operator::fill_points(&g, &center, l.radius, l.points));
    let ell = operator::check_ellipticity(&field, &points).map_err(|e| fail(CliError::from_core(e)))?;
    if !ell.passed() {
        let w = &ell.failures[0];
        return Err(fail(CliError {
            code: 3,
            message: format!(
                "field is not elliptic with the declared bounds: eigenvalues [{:.6}, {:.6}] at point {} ({} failures)",
                w.min_eigenvalue,
                w.max_eigenvalue,
                w.index,
                ell.failures.len()
            ),
        }));
    }
    let rep = operator::landis_delta_field(&field, &points, g.q()).map_err(|e| fail(CliError::from_core(e)))?;
    let bounds = field.bounds();
    let ratio = operator::delta_from_ratio(&bounds, g.q());
    let mut text = format!("group {} (Q = {}), {} points\n", ctx.group.label, g.q(), points.len());
    let _ = writeln!(text, "delta = {}", rep.delta);
    let _ = writeln!(text, "worst point = {:?}", rep.worst_point);
    let _ = writeln!(
        text,
        "delta from ratio (lambda = {}, Lambda = {}) = {ratio}",
        bounds.lambda, bounds.big_lambda
    );
    let _ = writeln!(text, "landis: {}", if rep.satisfied { "satisfied" } else { "violated" });
    Ok(Outcome {
        command: "landis check",
        block: block.clone(),
        status: if rep.satisfied { Status::Pass } else { Status::Fail },
        report: json!({
            "delta": rep.delta,
            "satisfied": rep.satisfied,
            "worst_point": rep.worst_point,
            "delta_from_ratio": ratio,
            "lambda": bounds.lambda,
            "Lambda": bounds.big_lambda,
            "points_checked": points.len(),
        }),
        text,
        csv: None,
    })
}

pub fn barrier_verify(ctx: &Context) -> Result<Outcome, Failure> {
    let block = json!({ "barrier": ctx.cfg.barrier, "constants": ctx.cfg.constants });
    let fail = failing("barrier verify", &block);
    let core = |e: htype_core::Error| fail(CliError::from_core(e));
    let g = ctx.build_group().map_err(&fail)?;
    let b = &ctx.cfg.barrier;
    let field = ctx.cfg.field.build(g.m()).map_err(|e| fail(CliError::config(e.to_string())))?;
    let outer = BallSpec::new(ctx.point(&g, &b.region.center, "barrier.O.center").map_err(&fail)?, b.region.radius)
        .map_err(|e| fail(CliError::config(e.to_string())))?;
    let region = match &b.region.hole {
        None => Region::Ball(outer),
        Some(h) => Region::BallWithHole {
            hole: BallSpec::new(ctx.point(&g, &h.center, "barrier.O.hole.center").map_err(&fail)?, h.radius)
                .map_err(|e| fail(CliError::config(e.to_string())))?,
            outer,
        },
    };
    let inner = BallSpec::new(
        ctx.point(&g, &b.test_region.center, "barrier.O_prime.center").map_err(&fail)?,
        b.test_region.radius,
    )
    .map_err(|e| fail(CliError::config(e.to_string())))?;
    let test_points = barrier::ball_test_points(&g, &inner, b.test_points.max(1));
    let delta = match b.delta {
        Some(d) => d,
        None => {
            let bb = region.bounding_ball();
            let mut pts = operator::fill_points(&g, &bb.center, bb.radius, 256);
            pts.extend_from_slice(&test_points);
            let landis = operator::landis_delta_field(&field, &pts, g.q()).map_err(core)?;
            if !landis.satisfied {
                return Err(fail(CliError {
                    code: 3,
                    message: format!(
                        "Landis condition fails on O: delta = {:.6} at {:?}",
                        landis.delta, landis.worst_point
                    ),
                }));
            }
            landis.delta.min(2.0)
        }
    };
    let constants = ctx.constants(&g).map_err(&fail)?.constants;
    let config = BarrierConfig {
        region,
        delta,
        eps: b.eps,
        budget: b.budget,
        seed: ctx.cfg.seed,
    };
    let rep = barrier::verify_barrier_lemma(&g, &field, &config, &test_points, &constants).map_err(core)?;
    let chain = barrier::constant_chain(&g, &constants, &field.bounds(), delta).ok();
    let mut report = to_value(&rep);
    report["chain"] = to_value(&chain);
    let mut text = format!(
        "group {} (Q = {}), delta = {delta}, eps = {}, {} test points\n",
        ctx.group.label,
        g.q(),
        b.eps,
        test_points.len()
    );
    let _ = writeln!(text, "C = {:.6}  beta = {:.6}  K = {:.6}", rep.c, rep.beta, rep.k);
    for (i, p) in rep.points.iter().enumerate() {
        let _ = writeln!(text, "  point {i}: margin {:+.4} +- {:.4}", p.margin, p.margin_stderr);
    }
    let _ = writeln!(text, "margin_min = {:+.6} +- {:.6}", rep.margin_min, rep.stderr);
    if let Some(ch) = chain {
        let _ = writeln!(text, "gamma = {:.6}, critical density eps = {:.6e}", ch.gamma, ch.epsilon_cd);
    }
    let _ = writeln!(text, "verdict: {}", rep.verdict.as_str());
    let status = match rep.verdict {
        Verdict::Pass => Status::Pass,
        Verdict::Fail => Status::Fail,
        Verdict::Inconclusive => Status::Inconclusive,
    };
    Ok(Outcome {
        command: "barrier verify",
        block: block.clone(),
        status,
        report,
        text,
        csv: None,
    })
}

/// Box around `x0 o B_{2R}`: the horizontal extent of `B_{2R}` plus the shear
/// `1/2 <B x0, y>` it picks up in the centre.
fn default_box(g: &HTypeGroup, x0: &GroupPoint, radius: f64) -> Vec<f64> {
    let base = GridSpec::for_origin_ball(g, 2.0 * radius, 1.0, harnack::grid::MIN_RESOLUTION)
        .expect("positive radius")
        .half_widths;
    let m = g.m();
    let mut half = base.clone();
    for (k, bk) in g.spec().b.iter().enumerate() {
        let shear: f64 = (0..m)
            .map(|j| (0..m).map(|i| bk[(j, i)] * x0.x[i]).sum::<f64>().abs() * base[j])
            .sum();
        half[m + k] += 0.5 * shear;
    }
    half
}

pub fn harnack_run(ctx: &Context) -> Result<Outcome, Failure> {
    let block = json!({ "harnack": ctx.cfg.harnack, "constants": ctx.cfg.constants });
    let fail = failing("harnack run", &block);
    let core = |e: htype_core::Error| fail(CliError::from_core(e));
    let g = ctx.build_group().map_err(&fail)?;
    let h = &ctx.cfg.harnack;
    if !(h.radius > 0.0) {
        return Err(fail(CliError::config("harnack.R must be positive")));
    }
    let x0 = ctx.point(&g, &h.x0, "harnack.x0").map_err(&fail)?;
    let half = match &h.half_widths {
        Some(w) => w.clone(),
        None => default_box(&g, &x0, h.radius),
    };
    let grid = GridSpec::new(x0.coords(), half, vec![h.resolution; g.dim()]).map_err(|e| fail(CliError::config(e.to_string())))?;
    let cases = if h.sweep > 0 {
        harnack::random_landis_cases(&g, h.sweep, ctx.cfg.seed)
    } else {
        ctx.cfg.field.build(g.m()).map_err(|e| fail(CliError::config(e.to_string())))?;
        vec![HarnackCase {
            case_id: 0,
            field: ctx.cfg.field.clone(),
            boundary: h.boundary.clone(),
        }]
    };
    let constants = ctx.constants(&g).map_err(&fail)?.constants;
    let (rows, summary) = harnack::run_sweep(&g, &cases, &grid, &x0, h.radius, &constants).map_err(core)?;
    let mut csv = String::from("case_id,R,sup,inf,quotient,fraction_ge_1,inf_half,residual_max\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.case_id, r.radius, r.sup, r.inf, r.quotient, r.fraction_ge_1, r.inf_half, r.residual_max
        );
    }
    let mut text = format!(
        "group {}, grid {}^{}, R = {}, {} cases\n",
        ctx.group.label,
        h.resolution,
        g.dim(),
        h.radius,
        summary.cases
    );
    let _ = writeln!(text, "density claims triggered: {}", summary.claims_triggered);
    let _ = writeln!(text, "counterexamples: {}", summary.counterexamples);
    let _ = writeln!(text, "cases with undershoot: {}", summary.undershoot_cases);
    let _ = writeln!(text, "max residual: {:.3e}", summary.max_residual);
    let status = if summary.counterexamples == 0 { Status::Pass } else { Status::Fail };
    Ok(Outcome {
        command: "harnack run",
        block: block.clone(),
        status,
        report: json!({
            "summary": summary,
            "grid": grid,
            "R": h.radius,
            "x0": x0.coords(),
            "beta": constants.beta,
            "K": constants.k,
            "cases": cases,
            "rows": rows,
        }),
        text,
        csv: Some(csv),
    })
}
