//! Small dense complex linear algebra on top of `nalgebra`.
//!
//! Block sizes in this crate stay below a dozen rows, so everything here is
//! plain LU with partial pivoting plus a Durand-Kerner root finder for
//! characteristic polynomials.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `q^e` for a signed 64-bit exponent, by repeated squaring.
pub fn qpow(q: Complex64, e: i64) -> Complex64 {
    if e == 0 {
        return ONE;
    }
    let mut base = if e < 0 { q.inv() } else { q };
    let mut k = e.unsigned_abs();
    let mut acc = ONE;
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        k >>= 1;
        if k > 0 {
            base *= base;
        }
    }
    acc
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn from_rows(rows: &[Vec<Complex64>]) -> CMat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    CMat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn scalar(c: Complex64) -> CMat {
    CMat::from_element(1, 1, c)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, c| acc.max(c.norm()))
}

fn one_norm(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn determinant(m: &CMat) -> Complex64 {
    if m.nrows() == 0 {
        return ONE;
    }
    m.clone().lu().determinant()
}

pub fn inverse(m: &CMat) -> Option<CMat> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let inv = m.clone().lu().try_inverse()?;
    inv.iter().all(|c| c.is_finite()).then_some(inv)
}

/// Inverse together with the 1-norm condition number.
pub fn inverse_with_condition(m: &CMat) -> Option<(CMat, f64)> {
    let inv = inverse(m)?;
    let cond = one_norm(m) * one_norm(&inv);
    Some((inv, cond))
}

/// True when `|det m|` is small compared with the natural scale `||m||^n`.
pub fn is_singular(m: &CMat, tol: f64) -> bool {
    let n = m.nrows();
    if n == 0 {
        return false;
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE).powi(n as i32);
    determinant(m).norm() <= tol * scale
}

/// Column-major vectorisation.
pub fn vec_of(m: &CMat) -> Vec<Complex64> {
    m.iter().copied().collect()
}

pub fn unvec(v: &[Complex64], rows: usize, cols: usize) -> CMat {
    CMat::from_column_slice(rows, cols, v)
}

/// Matrix of the linear map `M -> M P - C M` on `t x s` matrices, acting on
/// column-major vectorisations.
pub fn sylvester_operator(p: &CMat, c: &CMat) -> CMat {
    let t = c.nrows();
    let s = p.nrows();
    p.transpose().kronecker(&identity(t)) - identity(s).kronecker(c)
}

fn is_triangular(m: &CMat) -> bool {
    let n = m.nrows();
    let upper = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == ZERO));
    let lower = (0..n).all(|i| (i + 1..n).all(|j| m[(i, j)] == ZERO));
    upper || lower
}

/// Characteristic polynomial coefficients `c_0..c_n` (monic, `c_n = 1`) of
/// `det(x I - m)`, by the Faddeev-LeVerrier recursion.
pub fn characteristic_polynomial(m: &CMat) -> Vec<Complex64> {
    let n = m.nrows();
    let mut coeffs = vec![ZERO; n + 1];
    coeffs[n] = ONE;
    let mut aux = CMat::zeros(n, n);
    let eye = identity(n);
    for k in 1..=n {
        aux = m * &aux + &eye * coeffs[n - k + 1];
        let am = m * &aux;
        coeffs[n - k] = -am.trace() / (k as f64);
    }
    coeffs
}

pub fn horner(coeffs: &[Complex64], x: Complex64) -> Complex64 {
    coeffs.iter().rev().fold(ZERO, |acc, &c| acc * x + c)
}

/// Roots of a monic polynomial (`coeffs[deg] = 1`) by Durand-Kerner
/// iteration followed by a short Newton polish.
pub fn durand_kerner(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let radius = 1.0 + coeffs[..deg].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|k| seed.powu(k as u32 + 1) * radius / seed.norm().powi(k as i32 + 1) * 0.5)
        .collect();
    for _ in 0..5000 {
        let mut delta: f64 = 0.0;
        for i in 0..deg {
            let xi = roots[i];
            let mut denom = ONE;
            for (j, &xj) in roots.iter().enumerate() {
                if j != i {
                    denom *= xi - xj;
                }
            }
            if denom == ZERO {
                denom = Complex64::new(1e-300, 0.0);
            }
            let step = horner(coeffs, xi) / denom;
            roots[i] = xi - step;
            delta = delta.max(step.norm() / (1.0 + xi.norm()));
        }
        if delta < 1e-15 {
            break;
        }
    }
    let deriv: Vec<Complex64> = (1..=deg).map(|k| coeffs[k] * k as f64).collect();
    for root in roots.iter_mut() {
        for _ in 0..3 {
            let d = horner(&deriv, *root);
            if d.norm() == 0.0 {
                break;
            }
            let next = *root - horner(coeffs, *root) / d;
            if (horner(coeffs, next)).norm() < (horner(coeffs, *root)).norm() {
                *root = next;
            } else {
                break;
            }
        }
    }
    for &root in &roots {
        let scale: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.norm() * root.norm().powi(k as i32))
            .sum();
        let resid = horner(coeffs, root).norm();
        if resid.is_nan() || resid > 1e-8 * scale.max(1.0) {
            return Err(Error::NoConvergence(format!(
                "characteristic polynomial residual {resid:.3e} at root {root}"
            )));
        }
    }
    Ok(roots)
}

/// Eigenvalues with multiplicity. Triangular matrices return their diagonal.
pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if n > 8 {
        return Err(Error::Invalid(format!("block of size {n} exceeds the supported size 8")));
    }
    if is_triangular(m) {
        return Ok((0..n).map(|i| m[(i, i)]).collect());
    }
    durand_kerner(&characteristic_polynomial(m))
}
