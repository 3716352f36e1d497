use htype_core::gauge;
use htype_core::operator::{self, DEFAULT_FD_STEP};
use htype_core::{GroupPoint, HTypeGroup};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const PRESETS: [&str; 5] = ["heisenberg:1", "heisenberg:2", "quaternion:2", "quaternion:3", "r5_example"];

fn group(i: usize) -> HTypeGroup {
    HTypeGroup::preset(PRESETS[i]).unwrap()
}

fn point(g: &HTypeGroup, raw: &[f64]) -> GroupPoint {
    GroupPoint::from_coords(g.m(), &raw[..g.dim()])
}

fn spd(m: usize, raw: &[f64], floor: f64) -> DMatrix<f64> {
    let r = DMatrix::from_fn(m, m, |i, j| raw[(i * m + j) % raw.len()]);
    &r * r.transpose() + DMatrix::identity(m, m) * floor
}

fn coords() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 7)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_is_associative(gi in 0..5usize, a in coords(), b in coords(), c in coords()) {
        let g = group(gi);
        let (p, q, r) = (point(&g, &a), point(&g, &b), point(&g, &c));
        let left = g.compose(&g.compose(&p, &q).unwrap(), &r).unwrap();
        let right = g.compose(&p, &g.compose(&q, &r).unwrap()).unwrap();
        for (x, y) in left.coords().iter().zip(right.coords()) {
            prop_assert!((x - y).abs() < 1e-13);
        }
        let e = g.compose(&p, &g.inverse(&p)).unwrap();
        prop_assert!(e.max_abs() < 1e-15);
    }

    #[test]
    fn campbell_hausdorff(gi in 0..5usize, a in coords(), b in coords()) {
        let g = group(gi);
        let m = g.m();
        let v1 = DVector::from_column_slice(&a[..m]);
        let v2 = DVector::from_column_slice(&b[..m]);
        let p = g.compose(&g.exp_horizontal(&v1), &g.exp_horizontal(&v2)).unwrap();
        let expect = g.from_frame(&(&v1 + &v2), &(g.bracket(&v1, &v2).unwrap() * 0.5));
        for (x, y) in p.coords().iter().zip(expect.coords()) {
            prop_assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn j_map_properties(gi in 0..5usize, a in coords(), b in coords()) {
        let g = group(gi);
        let (m, n) = (g.m(), g.n());
        let v = DVector::from_column_slice(&a[..m]);
        let z = DVector::from_column_slice(&b[..n]);
        let jv = g.j_map(&z, &v).unwrap();
        prop_assert!(jv.dot(&v).abs() < 1e-14 * (1.0 + v.norm_squared() * z.norm()));
        prop_assert!((jv.norm() - z.norm() * v.norm()).abs() < 1e-13);
        let lam = 1.0 + b[6].abs();
        let w = DVector::from_fn(m, |i, _| a[(i + 1) % a.len()]);
        let scaled = g.bracket(&(&v * lam), &(&w * lam)).unwrap();
        let base = g.bracket(&v, &w).unwrap() * (lam * lam);
        prop_assert!((scaled - base).amax() < 1e-13 * (1.0 + lam * lam));
    }

    #[test]
    fn gauge_symmetry_invariance_homogeneity(gi in 0..5usize, a in coords(), b in coords(), c in coords(), lam in 0.1f64..4.0) {
        let g = group(gi);
        let (p, q, s) = (point(&g, &a), point(&g, &b), point(&g, &c));
        prop_assert_eq!(gauge::gauge_norm(&g, &g.inverse(&p)), gauge::gauge_norm(&g, &p));
        let d1 = gauge::quasi_distance(&g, &p, &q).unwrap();
        let d2 = gauge::quasi_distance(&g, &g.compose(&s, &p).unwrap(), &g.compose(&s, &q).unwrap()).unwrap();
        prop_assert!(rel(d1, d2) < 1e-12);
        let dp = g.dilate(lam, &p).unwrap();
        prop_assert!(rel(gauge::phi(&g, &dp), lam.powi(4) * gauge::phi(&g, &p)) < 1e-13);
    }

    #[test]
    fn gradient_identities(gi in 0..5usize, a in coords()) {
        let g = group(gi);
        let p = point(&g, &a);
        prop_assume!(gauge::gauge_norm(&g, &p) > 1e-3);
        let v2 = g.horizontal_part(&p).norm_squared();
        let gd = gauge::horizontal_gradient_d(&g, &p).unwrap();
        let d = gauge::gauge_norm(&g, &p);
        prop_assert!(rel(gd.norm_squared(), v2 / (d * d)) < 1e-12);
        let gp = gauge::horizontal_gradient_phi(&g, &p);
        prop_assert!(rel(gp.norm_squared(), 16.0 * v2 * gauge::phi(&g, &p)) < 1e-12);
    }

    #[test]
    fn skew_trace_cancels(gi in 0..5usize, raw in prop::collection::vec(-1.0f64..1.0, 16), a in coords()) {
        let g = group(gi);
        let m = g.m();
        let sym = spd(m, &raw, 0.1);
        let p = point(&g, &a);
        let full = gauge::horizontal_hessian_phi(&g, &p);
        let skew = (&full - full.transpose()) * 0.5;
        prop_assert!(operator::contract(&sym, &skew).abs() < 1e-13 * (1.0 + full.amax()));
    }

    #[test]
    fn la_d_matches_hessian_contraction_and_scales(gi in 0..5usize, raw in prop::collection::vec(-1.0f64..1.0, 16), a in coords(), lam in 0.2f64..5.0) {
        let g = group(gi);
        let p = point(&g, &a);
        prop_assume!(gauge::gauge_norm(&g, &p) > 1e-2);
        let am = spd(g.m(), &raw, 0.2);
        let closed = operator::la_d_with_matrix(&g, &am, &p).unwrap();
        let hess = gauge::horizontal_hessian_d(&g, &p).unwrap();
        let contracted = operator::contract(&am, &hess);
        prop_assert!((closed - contracted).abs() < 1e-12 * (1.0 + closed.abs()));
        let scaled = operator::la_d_with_matrix(&g, &am, &g.dilate(lam, &p).unwrap()).unwrap();
        prop_assert!((scaled - closed / lam).abs() < 1e-11 * (1.0 + closed.abs() / lam));
    }

    #[test]
    fn landis_margin_invariances(raw in prop::collection::vec(-1.0f64..1.0, 16), c in 0.01f64..100.0, theta in 0.0f64..6.3) {
        let a = spd(4, &raw, 0.3);
        let d = operator::landis_delta_pointwise(&a, 6).unwrap();
        prop_assert!((operator::landis_delta_pointwise(&(&a * c), 6).unwrap() - d).abs() < 1e-12 * (1.0 + d.abs()));
        let (s, co) = theta.sin_cos();
        let mut o = DMatrix::identity(4, 4);
        o[(1, 1)] = co; o[(1, 2)] = -s; o[(2, 1)] = s; o[(2, 2)] = co;
        let rotated = o.transpose() * &a * &o;
        let rotated = (&rotated + rotated.transpose()) * 0.5;
        prop_assert!((operator::landis_delta_pointwise(&rotated, 6).unwrap() - d).abs() < 1e-10 * (1.0 + d.abs()));
    }

    #[test]
    fn la_phi_bound_in_unit_ball(gi in 0..5usize, raw in prop::collection::vec(-1.0f64..1.0, 16), a in coords()) {
        let g = group(gi);
        let p = point(&g, &a);
        let d = gauge::gauge_norm(&g, &p);
        let p = if d >= 1.0 { g.dilate(0.999 / d, &p).unwrap() } else { p };
        let am = spd(g.m(), &raw, 0.2);
        let big = operator::eigen_range(&am).unwrap().1;
        prop_assert!(operator::la_phi_with_matrix(&g, &am, &p) <= 4.0 * (g.qf() + 2.0) * big + 1e-10);
    }
}

#[test]
fn closed_forms_match_finite_differences() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    for gi in 0..PRESETS.len() {
        let g = group(gi);
        let m = g.m();
        for _ in 0..100 {
            let c: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = point(&g, &c);
            if gauge::gauge_norm(&g, &p) < 0.2 {
                continue;
            }
            // second derivatives: Hessian of phi, entry by entry, against mixed flow differences
            let hess = gauge::horizontal_hessian_phi(&g, &p);
            for i in 0..m {
                for j in 0..m {
                    let mut e = DMatrix::zeros(m, m);
                    e[(i, j)] = 1.0;
                    let fd = operator::la_fd_with_matrix(&g, &e, &|q: &GroupPoint| gauge::phi(&g, q), &p, DEFAULT_FD_STEP).unwrap();
                    assert!(rel(fd, hess[(i, j)]) < 1e-5, "{} ({i},{j}): {fd} vs {}", PRESETS[gi], hess[(i, j)]);
                }
            }
            let id = DMatrix::identity(m, m);
            let fd = operator::la_fd_with_matrix(&g, &id, &|q: &GroupPoint| gauge::gauge_norm(&g, q), &p, DEFAULT_FD_STEP).unwrap();
            let closed = operator::la_d_with_matrix(&g, &id, &p).unwrap();
            assert!(rel(fd, closed) < 1e-5);
        }
    }
}

#[test]
fn fundamental_solution_is_harmonic() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for name in ["heisenberg:1", "quaternion:2"] {
        let g = HTypeGroup::preset(name).unwrap();
        let q = g.qf();
        let id = DMatrix::identity(g.m(), g.m());
        for _ in 0..100 {
            let c: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = point(&g, &c);
            let d = gauge::gauge_norm(&g, &p);
            if d < 0.1 {
                continue;
            }
            let res = gauge::fundamental_solution_residual(&g, &p).unwrap();
            assert!(res.abs() <= 1e-8 * d.powf(-q));
            // step proportional to d keeps roundoff at the scale of d^{-Q}
            let fd = operator::la_fd_with_matrix(&g, &id, &|x: &GroupPoint| gauge::gauge_norm(&g, x).powf(2.0 - q), &p, 1e-3 * d).unwrap();
            assert!(fd.abs() <= 1e-6 * d.powf(-q), "{name}: {fd}");
        }
    }
}

#[test]
fn ratio_margin_is_a_lower_bound() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for (m, q) in [(2usize, 4usize), (4, 6), (4, 10)] {
        for _ in 0..10_000 {
            let lambda = rng.random_range(0.2..2.0);
            let big = lambda * rng.random_range(1.0..1.5);
            let raw = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
            let o = raw.qr().q();
            let mut eig: Vec<f64> = (0..m).map(|_| rng.random_range(lambda..=big)).collect();
            eig[0] = lambda;
            let a = o.transpose() * DMatrix::from_diagonal(&DVector::from_vec(eig)) * &o;
            let a = (&a + a.transpose()) * 0.5;
            let bounds = htype_core::EllipticityBounds::new(lambda, big).unwrap();
            let pointwise = operator::landis_delta_pointwise(&a, q).unwrap();
            assert!(pointwise >= operator::delta_from_ratio(&bounds, q) - 1e-12);
        }
    }
}
