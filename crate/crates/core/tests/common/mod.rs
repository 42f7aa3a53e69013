//! Shared helpers for integration tests: seeded random data and
//! brute-force dense solvers built straight from the coefficient
//! equations, independent of the library's recurrences.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use qdiff::laurent::{SeriesMatrix, WindowedLaurent};
use qdiff::linalg::CMat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn rand_complex(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

/// `q` with modulus in `[1.5, 4]` and a random argument.
pub fn rand_q(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(rng.gen_range(1.5..4.0), rng.gen_range(-3.0..3.0))
}

/// Dense matrix with entries of modulus at most 0.3 off the diagonal and
/// diagonal entries of modulus in `[0.5, 2]`.
pub fn rand_invertible(rng: &mut ChaCha8Rng, r: usize) -> CMat {
    CMat::from_fn(r, r, |a, b| {
        if a == b {
            Complex64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU))
        } else {
            rand_complex(rng, 0.3)
        }
    })
}

/// Random matrix series on `lo..=hi` with coefficient scale `decay^|n|`.
pub fn rand_series(rng: &mut ChaCha8Rng, r: usize, s: usize, lo: i32, hi: i32, decay: f64, bound: i32) -> SeriesMatrix {
    let cells: Vec<WindowedLaurent> = (0..r * s)
        .map(|_| WindowedLaurent::new(lo, (lo..=hi).map(|n| rand_complex(rng, decay.powi(n.abs()))).collect()).with_bound(bound))
        .collect();
    SeriesMatrix::from_fn(r, s, |a, b| cells[a * s + b].clone())
}

fn solve(m: DMatrix<Complex64>, rhs: DVector<Complex64>) -> DVector<Complex64> {
    m.lu().solve(&rhs).expect("oracle system is singular")
}

/// Dense solve of `q^{n+mu'} F_{n+mu'} A' - A F_{n+mu} - V_n = -U_n` for
/// `n` in `[-N - mu, N - mu']`, unknowns `F_m` (`|m| <= N`) and `V_n`
/// (`-mu <= n < -mu'`). Returns `(F, V)` as coefficient lists.
pub fn oracle_red(q: Complex64, n_win: i32, mu: i32, a: &CMat, mu_p: i32, ap: &CMat, u: &SeriesMatrix) -> (Vec<CMat>, Vec<CMat>) {
    let (r, s) = (a.nrows(), ap.nrows());
    let blk = r * s;
    let nf = (2 * n_win + 1) as usize;
    let nv = (mu - mu_p) as usize;
    let unknowns = (nf + nv) * blk;
    let eqs: Vec<i32> = (-n_win - mu..=n_win - mu_p).collect();
    assert_eq!(eqs.len() * blk, unknowns);
    // residual of the homogeneous part for a given unknown vector
    let apply = |x: &[Complex64]| -> Vec<Complex64> {
        let f_at = |m: i32| -> CMat {
            if m < -n_win || m > n_win {
                return CMat::zeros(r, s);
            }
            let k = (m + n_win) as usize * blk;
            CMat::from_column_slice(r, s, &x[k..k + blk])
        };
        let v_at = |n: i32| -> CMat {
            if n < -mu || n >= -mu_p {
                return CMat::zeros(r, s);
            }
            let k = (nf + (n + mu) as usize) * blk;
            CMat::from_column_slice(r, s, &x[k..k + blk])
        };
        let mut out = Vec::with_capacity(unknowns);
        for &n in &eqs {
            let qp = q.powi(n + mu_p);
            let e = f_at(n + mu_p) * ap * qp - a * f_at(n + mu) - v_at(n);
            out.extend(e.iter().copied());
        }
        out
    };
    let mut m = DMatrix::zeros(unknowns, unknowns);
    let mut unit = vec![Complex64::new(0.0, 0.0); unknowns];
    for col in 0..unknowns {
        unit[col] = c(1.0);
        let img = apply(&unit);
        unit[col] = c(0.0);
        for (row, val) in img.into_iter().enumerate() {
            m[(row, col)] = val;
        }
    }
    let rhs: Vec<Complex64> = eqs.iter().flat_map(|&n| (-u.coeff_matrix(n)).iter().copied().collect::<Vec<_>>()).collect();
    let x = solve(m, DVector::from_vec(rhs));
    let f = (0..nf).map(|k| CMat::from_column_slice(r, s, &x.as_slice()[k * blk..(k + 1) * blk])).collect();
    let v = (0..nv).map(|k| CMat::from_column_slice(r, s, &x.as_slice()[(nf + k) * blk..(nf + k + 1) * blk])).collect();
    (f, v)
}

/// Dense solve of `q^n X_n B - C X_n = Y_n` for all `|n| <= N` at once.
pub fn oracle_regular(q: Complex64, n_win: i32, b: &CMat, cm: &CMat, y: &SeriesMatrix) -> Vec<CMat> {
    let (t, s) = (cm.nrows(), b.nrows());
    let blk = t * s;
    let nf = (2 * n_win + 1) as usize;
    let unknowns = nf * blk;
    let apply = |x: &[Complex64]| -> Vec<Complex64> {
        let mut out = Vec::with_capacity(unknowns);
        for k in 0..nf {
            let n = k as i32 - n_win;
            let xn = CMat::from_column_slice(t, s, &x[k * blk..(k + 1) * blk]);
            let e = &xn * b * q.powi(n) - cm * &xn;
            out.extend(e.iter().copied());
        }
        out
    };
    let mut m = DMatrix::zeros(unknowns, unknowns);
    let mut unit = vec![c(0.0); unknowns];
    for col in 0..unknowns {
        unit[col] = c(1.0);
        for (row, val) in apply(&unit).into_iter().enumerate() {
            m[(row, col)] = val;
        }
        unit[col] = c(0.0);
    }
    let rhs: Vec<Complex64> = (-n_win..=n_win).flat_map(|n| y.coeff_matrix(n).iter().copied().collect::<Vec<_>>()).collect();
    let x = solve(m, DVector::from_vec(rhs));
    (0..nf).map(|k| CMat::from_column_slice(t, s, &x.as_slice()[k * blk..(k + 1) * blk])).collect()
}

/// `max_n |got_n - want_n| / max(1, max_n |want_n|)` over `lo..`.
pub fn rel_diff(got: impl Fn(i32) -> CMat, want: &[CMat], lo: i32) -> f64 {
    let scale = want.iter().map(|m| m.iter().map(|x| x.norm()).fold(0.0, f64::max)).fold(1.0, f64::max);
    want.iter()
        .enumerate()
        .map(|(k, w)| (got(lo + k as i32) - w).iter().map(|x| x.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
        / scale
}

/// One seeded instance of the red-pair oracle comparison; returns the
/// relative discrepancies of `F` and `V`.
pub fn red_case(seed: u64) -> (f64, f64) {
    use qdiff::borel::red_pair;
    use qdiff::laurent::QContext;
    let mut g = rng(seed);
    let q = rand_q(&mut g);
    let n_win = 12;
    let ctx = QContext::new(q, n_win, 1e-10).unwrap();
    let d = g.gen_range(1..=3);
    let mu_p = g.gen_range(-2..=1);
    let mu = mu_p + d;
    let (r, s) = (g.gen_range(1..=2), g.gen_range(1..=2));
    let a = rand_invertible(&mut g, r);
    let ap = rand_invertible(&mut g, s);
    let u = rand_series(&mut g, r, s, -3, 3, 0.7, n_win);
    let rp = red_pair(&ctx, mu, &a, mu_p, &ap, &u).unwrap();
    let (f, v) = oracle_red(q, n_win, mu, &a, mu_p, &ap, &u);
    (rel_diff(|n| rp.f.coeff_matrix(n), &f, -n_win), rel_diff(|n| rp.v.coeff_matrix(n), &v, -mu))
}

/// One seeded instance of the regular-solver oracle comparison.
pub fn regular_case(seed: u64) -> f64 {
    use qdiff::laurent::QContext;
    use qdiff::summation::solve_regular;
    let mut g = rng(seed);
    let q = rand_q(&mut g);
    let n_win = 12;
    let ctx = QContext::new(q, n_win, 1e-10).unwrap();
    let (t, s) = (g.gen_range(1..=2), g.gen_range(1..=2));
    let b = rand_invertible(&mut g, s);
    let cm = rand_invertible(&mut g, t);
    let y = rand_series(&mut g, t, s, -n_win, n_win, 0.8, n_win);
    let x = solve_regular(&ctx, &b, &cm, &y).unwrap();
    let want = oracle_regular(q, n_win, &b, &cm, &y);
    rel_diff(|n| x.coeff_matrix(n), &want, -n_win)
}
