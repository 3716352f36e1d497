use htype_core::harnack::{self, Boundary, BoundaryData, GridSpec, SolverKind};
use htype_core::operator::{self, FieldKind, FieldSpec};
use htype_core::{gauge, BallSpec, GroupPoint, HTypeGroup};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn h1() -> HTypeGroup {
    HTypeGroup::preset("heisenberg:1").unwrap()
}

fn unit_grid(g: &HTypeGroup, res: usize) -> GridSpec {
    GridSpec::for_origin_ball(g, 1.0, 1.0, res).unwrap()
}

fn oracle_box(res: usize) -> GridSpec {
    GridSpec::new(vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.25], vec![res; 3]).unwrap()
}

#[test]
fn expansion_at_origin_is_padded_matrix() {
    let g = h1();
    let f = FieldSpec::diagonal(&[1.0, 1.3]).build(2).unwrap();
    let (second, first) = harnack::expand_la_coordinates(&f, &g, &g.origin());
    let mut expect = DMatrix::zeros(3, 3);
    expect[(0, 0)] = 1.0;
    expect[(1, 1)] = 1.3;
    assert_eq!(second, expect);
    assert_eq!(first.amax(), 0.0);
    let p = GroupPoint::from_slices(&[0.3, -0.7], &[0.2]);
    let id = FieldSpec::identity().build(2).unwrap();
    let (second, _) = harnack::expand_la_coordinates(&id, &g, &p);
    assert!((second[(2, 2)] - 0.25 * (0.09 + 0.49)).abs() < 1e-15);
}

#[test]
fn expansion_reproduces_closed_form_on_phi() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for name in ["heisenberg:1", "quaternion:2", "r5_example"] {
        let g = HTypeGroup::preset(name).unwrap();
        let (m, dim) = (g.m(), g.dim());
        let r = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
        let a = &r * r.transpose() + DMatrix::identity(m, m);
        let field = operator::ConstantField {
            matrix: a.clone(),
            bounds: htype_core::EllipticityBounds::new(0.1, 10.0).unwrap(),
        };
        for _ in 0..100 {
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = GroupPoint::from_coords(m, &c);
            let (second, first) = harnack::expand_la_coordinates(&field, &g, &p);
            // phi is a quartic, so one Richardson step makes the central differences exact
            let phi = |c: &[f64]| gauge::phi(&g, &GroupPoint::from_coords(m, c));
            let shifted = |a: usize, s: f64, b: usize, t: f64| {
                let mut q = c.clone();
                q[a] += s;
                q[b] += t;
                phi(&q)
            };
            let contract = |h: f64| {
                let mut total = 0.0;
                for a in 0..dim {
                    total += first[a] * (shifted(a, h, a, 0.0) - shifted(a, -h, a, 0.0)) / (2.0 * h);
                    for b in 0..dim {
                        let d2 = (shifted(a, h, b, h) - shifted(a, h, b, -h) - shifted(a, -h, b, h) + shifted(a, -h, b, -h))
                            / (4.0 * h * h);
                        total += second[(a, b)] * d2;
                    }
                }
                total
            };
            let total = (4.0 * contract(0.025) - contract(0.05)) / 3.0;
            let closed = operator::la_phi_with_matrix(&g, &a, &p);
            assert!((total - closed).abs() < 1e-10 * (1.0 + closed.abs()), "{name}: {total} vs {closed}");
        }
    }
}

#[test]
fn constants_and_affine_data_reproduced() {
    let g = h1();
    let id = FieldSpec::identity().build(2).unwrap();
    let grid = unit_grid(&g, 13);
    let one = Boundary::new(BoundaryData::Constant { value: 1.0 }, 3).unwrap();
    let sol = harnack::solve_preset(&grid, &id, &g, &one).unwrap();
    assert!(sol.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(sol.residual_max < 1e-13);
    let affine = Boundary::new(
        BoundaryData::Affine {
            offset: 0.5,
            slope: vec![1.0, -2.0, 0.0],
        },
        3,
    )
    .unwrap();
    let rot = FieldSpec {
        kind: FieldKind::Rotating {
            eigenvalues: vec![1.0, 1.3],
            frequency: 2.0,
        },
        lambda: 1.0,
        big_lambda: 1.3,
    }
    .build(2)
    .unwrap();
    for field in [&id as &dyn htype_core::CoefficientField, &rot] {
        let sol = harnack::solve_preset(&grid, field, &g, &affine).unwrap();
        for i in 0..grid.len() {
            let c = grid.coords(i);
            assert!((sol.values[i] - (0.5 + c[0] - 2.0 * c[1])).abs() < 1e-11);
        }
    }
}

#[test]
fn interior_rows_annihilate_constants() {
    let g = HTypeGroup::preset("r5_example").unwrap();
    let f = FieldSpec::diagonal(&[1.0, 1.1, 1.2, 1.05]).build(4).unwrap();
    let grid = GridSpec::for_origin_ball(&g, 1.0, 1.0, 8).unwrap();
    let sys = harnack::assemble_system(&grid, &f, &g, &|_: &GroupPoint| 0.0, "zero").unwrap();
    for i in 0..grid.len() {
        if !sys.boundary[i] {
            let s: f64 = sys.matrix.row(i).map(|e| e.1).sum();
            assert!(s.abs() < 1e-13);
        }
    }
}

#[test]
fn discrete_operator_on_phi_is_second_order() {
    let g = h1();
    let a = FieldSpec::diagonal(&[1.0, 1.25]).build(2).unwrap();
    let target = [0.5, 0.25, 0.125];
    let mut errs = Vec::new();
    for res in [17, 33] {
        let grid = unit_grid(&g, res);
        let sys = harnack::assemble_system(&grid, &a, &g, &|_: &GroupPoint| 0.0, "phi").unwrap();
        let vals: Vec<f64> = (0..grid.len()).map(|i| gauge::phi(&g, &grid.point(2, i))).collect();
        let idx = grid.node_at(&target).unwrap();
        let p = grid.point(2, idx);
        errs.push((sys.apply_row(idx, &vals) - operator::apply_la_phi(&a, &g, &p)).abs());
    }
    let order = (errs[0] / errs[1]).log2();
    assert!(order >= 1.7, "errors {errs:?}");
}

#[test]
fn fundamental_solution_oracle_converges() {
    let g = h1();
    let id = FieldSpec::identity().build(2).unwrap();
    let data = Boundary::new(BoundaryData::Fundamental, 3).unwrap();
    let mut errs = Vec::new();
    for res in [17, 33] {
        let grid = oracle_box(res);
        let sol = harnack::solve_preset(&grid, &id, &g, &data).unwrap();
        let err = (0..grid.len())
            .map(|i| (sol.values[i] - data.eval(&g, &grid.point(2, i))).abs())
            .fold(0.0, f64::max);
        errs.push(err);
        if res == 33 {
            assert_eq!(sol.solver, SolverKind::Bicgstab);
            assert!(sol.residual_max <= harnack::ITERATIVE_TOLERANCE);
        }
    }
    let order = (errs[0] / errs[1]).log2();
    assert!(order >= 1.7, "errors {errs:?}, order {order}");
}

#[test]
fn random_data_on_large_grid() {
    let g = h1();
    let id = FieldSpec::identity().build(2).unwrap();
    let data = Boundary::new(
        BoundaryData::RandomTrig {
            seed: 7,
            modes: 3,
            scale: 1.0,
        },
        3,
    )
    .unwrap();
    let sol = harnack::solve_preset(&unit_grid(&g, 33), &id, &g, &data).unwrap();
    assert!(sol.values.iter().all(|v| v.is_finite()));
    assert!(sol.residual_max <= 1e-8);
    assert!(sol.min_value() >= -1e-8, "undershoot {}", sol.min_value());
}

#[test]
fn quotient_is_stable_and_scale_invariant() {
    let g = h1();
    let id = FieldSpec::identity().build(2).unwrap();
    let data = Boundary::new(BoundaryData::SinX1, 3).unwrap();
    let grids = [unit_grid(&g, 17), unit_grid(&g, 33)];
    let rep = harnack::quotient_refinement(&g, &id, &grids, &data, 0.5).unwrap();
    let t = &rep.refinement_trace;
    assert!(t[0].is_finite() && t[1].is_finite());
    assert!((t[0] - t[1]).abs() <= 0.1 * t[1], "{t:?}");

    let mut sol = harnack::solve_preset(&grids[0], &id, &g, &data).unwrap();
    let ball = BallSpec::new(g.origin(), 0.5).unwrap();
    let q1 = harnack::harnack_quotient(&sol, &g, &ball).unwrap().quotient;
    for v in &mut sol.values {
        *v *= 8.0;
    }
    assert_eq!(harnack::harnack_quotient(&sol, &g, &ball).unwrap().quotient, q1);
}

#[test]
fn quotient_diagnostics() {
    let g = h1();
    let id = FieldSpec::identity().build(2).unwrap();
    let grid = unit_grid(&g, 9);
    let one = Boundary::new(BoundaryData::Constant { value: 1.0 }, 3).unwrap();
    let mut sol = harnack::solve_preset(&grid, &id, &g, &one).unwrap();
    let ball = BallSpec::new(g.origin(), 0.5).unwrap();
    assert!((harnack::harnack_quotient(&sol, &g, &ball).unwrap().quotient - 1.0).abs() < 1e-12);
    for v in &mut sol.values {
        *v = 1.0;
    }
    assert_eq!(harnack::harnack_quotient(&sol, &g, &ball).unwrap().quotient, 1.0);
    let d = harnack::critical_density_experiment(&sol, &g, &g.origin(), 0.5, 1.0, 0.5).unwrap();
    assert_eq!((d.fraction_ge_1, d.inf_half), (1.0, 1.0));
    for i in 0..grid.len() {
        sol.values[i] = gauge::gauge_norm(&g, &grid.point(2, i)).powi(2);
    }
    let rep = harnack::harnack_quotient(&sol, &g, &ball).unwrap();
    assert!(rep.quotient.is_infinite());
    assert!(rep.diagnosis.is_some());
    let zero = Boundary::new(BoundaryData::Constant { value: 0.0 }, 3).unwrap();
    let sol = harnack::solve_preset(&grid, &id, &g, &zero).unwrap();
    let d = harnack::critical_density_experiment(&sol, &g, &g.origin(), 0.5, 1.0, 0.5).unwrap();
    assert_eq!((d.fraction_ge_1, d.inf_half), (0.0, 0.0));
}

#[test]
fn dilation_consistency_modes() {
    let g = h1();
    let rot = FieldSpec {
        kind: FieldKind::Rotating {
            eigenvalues: vec![1.0, 1.3],
            frequency: 1.5,
        },
        lambda: 1.0,
        big_lambda: 1.3,
    }
    .build(2)
    .unwrap();
    let data = Boundary::new(BoundaryData::SinX1, 3).unwrap();
    let same = harnack::dilation_consistency(&g, &rot, &unit_grid(&g, 11), &data, &[1.0], None).unwrap();
    assert_eq!(same.max_discrepancy, 0.0);
    let matched = harnack::dilation_consistency(&g, &rot, &unit_grid(&g, 11), &data, &[2.0, 0.5], None).unwrap();
    assert!(matched.max_discrepancy < 1e-10, "{matched:?}");
    let coarse = harnack::dilation_consistency(&g, &rot, &unit_grid(&g, 13), &data, &[2.0], Some(19)).unwrap();
    let fine = harnack::dilation_consistency(&g, &rot, &unit_grid(&g, 25), &data, &[2.0], Some(37)).unwrap();
    assert!(fine.max_discrepancy < coarse.max_discrepancy, "{coarse:?} {fine:?}");
}

#[test]
fn critical_density_sweep_has_no_counterexamples() {
    let g = h1();
    let consts = gauge::compute_constants(
        &g,
        gauge::ConstantsBudget {
            quadrature: 100_000,
            k_samples: 20_000,
        },
        1,
    )
    .unwrap()
    .constants;
    let cases = harnack::random_landis_cases(&g, 50, 17);
    for case in &cases {
        let f = case.field.build(2).unwrap();
        assert!(operator::delta_from_ratio(&htype_core::CoefficientField::bounds(&f), 4) > 0.0);
    }
    // u lives on B_1 = B_{2R} for R = 1/2
    let grid = unit_grid(&g, 17);
    let (rows, summary) = harnack::run_sweep(&g, &cases, &grid, &g.origin(), 0.5, &consts).unwrap();
    println!("{summary:?}");
    assert_eq!(rows.len(), 50);
    assert_eq!(summary.counterexamples, 0);
    assert!(summary.max_residual <= harnack::DIRECT_TOLERANCE);
}
