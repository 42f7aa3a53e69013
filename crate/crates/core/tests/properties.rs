mod common;

use num_complex::Complex64;
use std::f64::consts::TAU;

use proptest::prelude::*;
use qdiff::borel::{birkhoff_guenther, birkhoff_guenther_ordered, formal_fixpoint, nu_invariant, qborel};
use qdiff::io::{gen_planted_problems, gen_problem, GenSpec, ProblemFile};
use qdiff::laurent::{QContext, SeriesMatrix, WindowedLaurent};
use qdiff::linalg::{self, CMat};
use qdiff::stokes::{build_cocycle, classify_pair, Verdict};
use qdiff::summation::{gauge_residual, solve_regular, sum_gauge, sum_gauge_ordered, SampleGrid};
use qdiff::system::{coboundary, gauge_action, upper_pairs, BlockShape, GaugeElement};
use qdiff::theta::{allowed_witness, class_distance, AllowedPolicy, EqDivisor, EqPoint, SummationDivisor, ThetaGauge};
use rand::seq::SliceRandom;
use rand::Rng;

use common::{c, rand_complex, rng};

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| Complex64::new(re, im))
}

fn q_strategy() -> impl Strategy<Value = Complex64> {
    (1.5..4.0f64, -3.0..3.0f64).prop_map(|(r, t)| Complex64::from_polar(r, t))
}

fn series() -> impl Strategy<Value = WindowedLaurent> {
    (-4..4i32, prop::collection::vec(complex(), 1..8)).prop_map(|(lo, cs)| WindowedLaurent::new(lo, cs).with_bound(40))
}

/// Point with `|z|` in `[1, |q|)`.
fn annulus_point(q: Complex64, r: f64, t: f64) -> Complex64 {
    Complex64::from_polar((r * q.norm().ln()).exp(), t)
}

fn close(a: Complex64, b: Complex64, rel: f64) -> bool {
    (a - b).norm() <= rel * a.norm().max(b.norm()).max(1e-300)
}

fn spec(slopes: Vec<i32>, ranks: Vec<usize>, divisors: usize) -> GenSpec {
    GenSpec { slopes, ranks, divisors, ..GenSpec::default() }
}

/// A processing order compatible with the induction: pairs sorted by
/// `j - i`, ties shuffled.
fn shuffled_order(k: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut g = rng(seed);
    let mut out = Vec::new();
    for w in 1..k {
        let mut level: Vec<(usize, usize)> = (0..k - w).map(|i| (i, i + w)).collect();
        level.shuffle(&mut g);
        out.extend(level);
    }
    out
}

fn shape_strategy() -> impl Strategy<Value = (Vec<i32>, Vec<usize>)> {
    prop_oneof![
        Just((vec![1, 0], vec![1, 1])),
        Just((vec![2, 0], vec![1, 2])),
        Just((vec![2, 1, 0], vec![1, 1, 1])),
        Just((vec![2, 1, 0], vec![2, 1, 2])),
        Just((vec![1, 0, -2], vec![1, 2, 1])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sigma_is_a_ring_morphism(f in series(), g in series(), q in q_strategy()) {
        let lhs = f.mul(&g).sigma_q(q, 1);
        let rhs = f.sigma_q(q, 1).mul(&g.sigma_q(q, 1));
        let scale = lhs.max_abs().max(rhs.max_abs());
        for n in lhs.lo().min(rhs.lo())..=lhs.hi().max(rhs.hi()) {
            prop_assert!((lhs.coeff(n) - rhs.coeff(n)).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn evaluation_respects_products_and_sigma(f in series(), g in series(), q in q_strategy(), r in 0.0..1.0f64, t in 0.0..TAU) {
        let z = annulus_point(q, r, t);
        let fg = f.mul(&g).evaluate(z).unwrap();
        let (fz, gz) = (f.evaluate(z).unwrap(), g.evaluate(z).unwrap());
        let terms: f64 = f.iter().map(|(n, a)| a.norm() * z.norm().powi(n)).sum::<f64>()
            * g.iter().map(|(n, a)| a.norm() * z.norm().powi(n)).sum::<f64>();
        prop_assert!((fg - fz * gz).norm() <= 1e-10 * terms);
        let s = f.sigma_q(q, 1).evaluate(z).unwrap();
        let direct = f.evaluate(q * z).unwrap();
        let mag: f64 = f.iter().map(|(n, a)| a.norm() * (q * z).norm().powi(n)).sum();
        prop_assert!((s - direct).norm() <= 1e-10 * mag);
    }

    #[test]
    fn borel_intertwines_z_sigma_with_xi(f in series(), q in q_strategy()) {
        let lhs = qborel(&f.sigma_q(q, 1).shift(1), q, 1);
        let rhs = qborel(&f, q, 1).shift(1);
        for n in f.lo() + 1..=f.hi() + 1 {
            prop_assert!(close(lhs.coeff(n), rhs.coeff(n), 1e-13));
        }
    }

    #[test]
    fn nu_is_coboundary_invariant(u in series(), g in series(), q in q_strategy()) {
        let v = u.add(&coboundary(&g, q));
        let a = nu_invariant(&u, q, 1, 0, 1e-10).unwrap();
        let b = nu_invariant(&v, q, 1, 0, 1e-10).unwrap();
        prop_assert!((a - b).norm() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn divisor_evaluation_is_a_homomorphism(
        q in q_strategy(),
        xs in prop::collection::vec((0.0..1.0f64, 0.0..TAU, 1..3u32), 1..4),
        ys in prop::collection::vec((0.0..1.0f64, 0.0..TAU, 1..3u32), 1..4),
    ) {
        let pts = |v: &[(f64, f64, u32)]| -> Vec<(Complex64, u32)> { v.iter().map(|&(r, t, m)| (annulus_point(q, r, t), m)).collect() };
        let d1 = EqDivisor::new(q, &pts(&xs)).unwrap();
        let d2 = EqDivisor::new(q, &pts(&ys)).unwrap();
        let sum = d1.add(&d2, q).evaluate(q);
        let prod = EqPoint::new(q, d1.evaluate(q).rep() * d2.evaluate(q).rep()).unwrap();
        prop_assert!(sum.distance(&prod, q) < 1e-12);
        prop_assert_eq!(d1.add(&d2, q).degree(), d1.degree() + d2.degree());
    }

    #[test]
    fn multiplier_quotients(q in q_strategy(), seed in any::<u64>(), r in 0.0..1.0f64, t in 0.0..TAU) {
        let ctx = QContext::new(q, 40, 1e-10).unwrap();
        let mut g = rng(seed);
        let pts: Vec<Complex64> = (0..3).map(|_| annulus_point(q, g.gen(), g.gen_range(0.0..TAU))).collect();
        let d = SummationDivisor::from_points(q, &[3, 2, 0], &pts).unwrap();
        let th = ThetaGauge::new(&ctx, &d).unwrap();
        let z = annulus_point(q, r, t);
        let near = pts.iter().chain(std::iter::once(&c(-1.0))).any(|&a| class_distance(q, z, a) < 1e-2);
        prop_assume!(!near);
        for (i, j) in [(0, 1), (1, 2), (0, 2), (1, 1)] {
            let want = th.t(i, q * z).unwrap() / th.t(j, z).unwrap();
            prop_assert!(close(th.tij(i, j, z).unwrap(), want, 1e-9), "({}, {})", i, j);
        }
    }

    #[test]
    fn allowedness_depends_on_classes_only(q in q_strategy(), seed in any::<u64>(), m in -3..=3i32) {
        let mut g = rng(seed);
        let slopes = [2, 1, 0];
        let pts: Vec<Complex64> = (0..2).map(|_| annulus_point(q, g.gen(), g.gen_range(0.0..TAU))).collect();
        let spectra: Vec<Vec<Complex64>> = (0..3).map(|_| vec![Complex64::from_polar(g.gen_range(0.5..2.0), g.gen_range(0.0..TAU))]).collect();
        let d = SummationDivisor::from_points(q, &slopes, &pts).unwrap();
        let moved: Vec<Complex64> = pts.iter().map(|&a| a * linalg::qpow(q, m as i64)).collect();
        let e = d.with_chosen_points(&moved).unwrap();
        let (x, y) = (allowed_witness(&d, &spectra, AllowedPolicy::default()), allowed_witness(&e, &spectra, AllowedPolicy::default()));
        match (x, y) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.map(|w| (w.i, w.j)), b.map(|w| (w.i, w.j))),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn triangular_spectra_are_diagonals(diag in prop::collection::vec((0.3..3.0f64, 0.0..TAU), 1..5), seed in any::<u64>()) {
        let mut g = rng(seed);
        let n = diag.len();
        let m = CMat::from_fn(n, n, |i, j| if i == j { Complex64::from_polar(diag[i].0, diag[i].1) } else if i < j { rand_complex(&mut g, 1.0) } else { c(0.0) });
        let ev = linalg::eigenvalues(&m).unwrap();
        for (i, &(r, t)) in diag.iter().enumerate() {
            prop_assert!((ev[i] - Complex64::from_polar(r, t)).norm() <= 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gauge_action_is_a_group_action((slopes, ranks) in shape_strategy(), seed in any::<u64>()) {
        let (base, image, g) = gen_planted_problems(seed, &spec(slopes, ranks, 0)).unwrap();
        let q = base.ctx.q();
        let a = &base.system;
        let id = GaugeElement::identity(a.shape().ranks(), a.bound());
        prop_assert!(gauge_action(&id, a, q).unwrap().max_diff(a) <= 1e-10 * a.to_series().max_abs());
        let (_, _, h) = gen_planted_problems(seed.wrapping_add(1), &spec(a.shape().slopes().to_vec(), a.shape().ranks(), 0)).unwrap();
        let h = GaugeElement::from_series(a.shape().ranks(), &h.to_series());
        let two_steps = gauge_action(&g, &gauge_action(&h, a, q).unwrap(), q).unwrap();
        let at_once = gauge_action(&g.compose(&h), a, q).unwrap();
        prop_assert!(two_steps.max_diff(&at_once) <= 1e-10 * two_steps.to_series().max_abs());
        let (s1, s2) = (a.shape(), image.system.shape());
        prop_assert_eq!(s1.slopes(), s2.slopes());
        prop_assert_eq!(s1.ranks(), s2.ranks());
        for i in 0..s1.k() {
            prop_assert_eq!(s1.constant(i), s2.constant(i));
        }
    }

    #[test]
    fn formal_fixpoint_links_graded_part((slopes, ranks) in shape_strategy(), seed in any::<u64>()) {
        let p = gen_problem(seed, &GenSpec { q: c(2.0), ..spec(slopes, ranks, 0) }).unwrap();
        let order = 12;
        let f = formal_fixpoint(&p.system, p.ctx.q(), order).unwrap().to_gauge(40).unwrap().to_series();
        let q = p.ctx.q();
        let lhs = f.sigma_q(q, 1).mul(&p.system.graded_part().to_series());
        let rhs = p.system.to_series().mul(&f);
        let mu_max = p.system.shape().slope(0);
        let dims = lhs.rows();
        for n in -40..=order - mu_max {
            let (l, r) = (lhs.coeff_matrix(n), rhs.coeff_matrix(n));
            let scale = linalg::max_abs(&l).max(linalg::max_abs(&r));
            for x in 0..dims {
                for y in 0..dims {
                    prop_assert!((l[(x, y)] - r[(x, y)]).norm() <= 1e-9 * scale + 1e-14, "n = {}", n);
                }
            }
        }
    }

    #[test]
    fn normal_form_is_order_independent((slopes, ranks) in shape_strategy(), seed in any::<u64>()) {
        let p = gen_problem(seed, &spec(slopes, ranks, 0)).unwrap();
        let k = p.system.shape().k();
        let a = birkhoff_guenther(&p.ctx, &p.system).unwrap();
        let b = birkhoff_guenther_ordered(&p.ctx, &p.system, &shuffled_order(k, seed)).unwrap();
        prop_assert!(a.gauge.max_diff(&b.gauge) <= 1e-9);
        prop_assert!(a.normal.max_diff(&b.normal) <= 1e-9);
        prop_assert!(a.residual <= 1e-9);
    }

    #[test]
    fn summation_depends_on_the_divisor_only((slopes, ranks) in shape_strategy(), seed in any::<u64>(), m in -2..=2i32) {
        let (u, v, _) = gen_planted_problems(seed, &spec(slopes, ranks, 1)).unwrap();
        let d = &u.divisors[0];
        let q = u.ctx.q();
        let k = u.system.shape().k();
        let moved: Vec<Complex64> = d.chosen_points().iter().map(|&a| a * linalg::qpow(q, m as i64)).collect();
        let e = d.with_chosen_points(&moved).unwrap();
        let g1 = sum_gauge(&u.ctx, &u.system, &v.system, d).unwrap();
        let g2 = sum_gauge_ordered(&u.ctx, &u.system, &v.system, &e, &shuffled_order(k, seed)).unwrap();
        let grid = SampleGrid::standard(q, seed, d.chosen_points());
        for &z in grid.points.iter().take(10) {
            let (x, y) = (g1.evaluate(z).unwrap(), g2.evaluate(z).unwrap());
            prop_assert!(linalg::max_abs(&(&x - &y)) <= 1e-8 * linalg::max_abs(&x).max(1.0));
        }
        let same = sum_gauge(&u.ctx, &u.system, &u.system, d).unwrap();
        prop_assert!(same.is_identity(0.0));
        prop_assert!(gauge_residual(&g1, &u.system, &v.system, &grid.points).unwrap() <= 1e-7);
    }

    #[test]
    fn solve_regular_tails_decay(seed in any::<u64>()) {
        let mut g = rng(seed);
        let q = common::rand_q(&mut g);
        let ctx = QContext::new(q, 20, 1e-10).unwrap();
        let b = common::rand_invertible(&mut g, 2);
        let cm = common::rand_invertible(&mut g, 1);
        let y = common::rand_series(&mut g, 1, 2, 0, 20, 0.5, 20);
        let x = solve_regular(&ctx, &b, &cm, &y).unwrap();
        // positive side: X_n ~ Y_n / q^n, so the ratio gains at least |q|/4
        let norm = |m: &SeriesMatrix, n: i32| linalg::max_abs(&m.coeff_matrix(n));
        for n in 10..=20 {
            prop_assert!(norm(&x, n) <= 4.0 * norm(&y, n) / q.norm().powi(n) * 10.0 + 1e-300);
        }
    }

    #[test]
    fn equivalent_systems_have_the_same_cocycle(seed in any::<u64>()) {
        let (u, v, _) = gen_planted_problems(seed, &spec(vec![2, 1, 0], vec![1, 1, 1], 2)).unwrap();
        let cu = build_cocycle(&u.ctx, &u.system, &u.divisors, 8, seed).unwrap();
        let cv = build_cocycle(&v.ctx, &v.system, &u.divisors, 8, seed).unwrap();
        for &z in &cu.certificate().points {
            let (x, y) = (cu.component(0, 1, z).unwrap(), cv.component(0, 1, z).unwrap());
            prop_assert!(linalg::max_abs(&(&x - &y)) <= 1e-8 * linalg::max_abs(&x).max(1.0));
        }
    }

    #[test]
    fn classification_is_symmetric((slopes, ranks) in shape_strategy(), seed in any::<u64>()) {
        let (u, v, _) = gen_planted_problems(seed, &spec(slopes, ranks, 1)).unwrap();
        let d = &u.divisors[0];
        let fwd = classify_pair(&u.ctx, &u.system, &v.system, d, seed).unwrap();
        let bwd = classify_pair(&u.ctx, &v.system, &u.system, d, seed).unwrap();
        let (Verdict::Equivalent { gauge: f, .. }, Verdict::Equivalent { gauge: b, .. }) = (fwd, bwd) else {
            return Err(TestCaseError::fail("planted pair not equivalent"));
        };
        let refl = classify_pair(&u.ctx, &u.system, &u.system, d, seed).unwrap();
        prop_assert!(refl.is_equivalent());
        let z = annulus_point(u.ctx.q(), 0.37, 1.1);
        let prod = b.evaluate(z).unwrap() * f.evaluate(z).unwrap();
        prop_assert!(linalg::max_abs(&(prod - linalg::identity(u.system.shape().dim()))) <= 1e-8);
    }

    #[test]
    fn problem_files_round_trip((slopes, ranks) in shape_strategy(), seed in any::<u64>(), divisors in 0..3usize) {
        let p = gen_problem(seed, &spec(slopes, ranks, divisors)).unwrap();
        let file = ProblemFile::from_problem(&p);
        let text = file.to_json();
        let back = ProblemFile::from_json(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(ProblemFile::from_problem(&back.load().unwrap()), file);
    }
}

#[test]
fn shuffled_orders_respect_dependencies() {
    for seed in 0..20 {
        let order = shuffled_order(4, seed);
        assert_eq!(order.len(), upper_pairs(4).len());
        for (pos, &(i, j)) in order.iter().enumerate() {
            for l in i + 1..j {
                assert!(order[..pos].contains(&(i, l)) && order[..pos].contains(&(l, j)));
            }
        }
    }
}

#[test]
fn shapes_echo_through_generation() {
    let p = gen_problem(1, &spec(vec![1, 0, -2], vec![1, 2, 1], 1)).unwrap();
    let s: &BlockShape = p.system.shape();
    assert_eq!(s.slopes(), &[1, 0, -2]);
    assert_eq!(s.ranks(), vec![1, 2, 1]);
}
