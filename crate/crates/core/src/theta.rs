//! Jacobi theta functions, divisors on the elliptic curve `E_q = C*/q^Z`
//! and the multiplier functions `t_i` attached to a summation divisor.
//!
//! `theta_q(z) = sum_n q^{-n(n+1)/2} z^n` satisfies `theta_q(qz) = z theta_q(z)`
//! and has simple zeros exactly on `-q^Z`. Its values grow like
//! `|q|^{m^2/2}` on the annulus `|z| ~ |q|^m`, so evaluation away from the
//! fundamental annulus goes through [`LogComplex`].

use std::fmt;

use num_complex::Complex64;

use crate::laurent::{QContext, WindowedLaurent};
use crate::linalg::{self, ONE, ZERO};
use crate::{Error, Result};

/// Relative distance under which two points of `E_q` are identified.
pub const POINT_TOL: f64 = 1e-8;
/// Default width of the refusal band for allowedness.
pub const ALLOWED_MARGIN: f64 = 1e-4;

/// `mantissa * exp(ln_scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogComplex {
    pub mantissa: Complex64,
    pub ln_scale: f64,
}

impl LogComplex {
    pub fn new(c: Complex64) -> Self {
        Self { mantissa: c, ln_scale: 0.0 }.normalized()
    }

    pub fn one() -> Self {
        Self { mantissa: ONE, ln_scale: 0.0 }
    }

    /// `exp(l)` for a complex logarithm `l`.
    pub fn exp(l: Complex64) -> Self {
        Self { mantissa: Complex64::from_polar(1.0, l.im), ln_scale: l.re }
    }

    fn normalized(self) -> Self {
        let r = self.mantissa.norm();
        if r == 0.0 || !r.is_finite() {
            return self;
        }
        Self { mantissa: self.mantissa / r, ln_scale: self.ln_scale + r.ln() }
    }

    pub fn powi(self, k: i32) -> Self {
        Self {
            mantissa: self.mantissa.powi(k),
            ln_scale: self.ln_scale * k as f64,
        }
        .normalized()
    }

    pub fn scale(self, c: Complex64) -> Self {
        self * Self::new(c)
    }

    /// `ln |value|`; `-inf` for zero.
    pub fn ln_abs(&self) -> f64 {
        let r = self.mantissa.norm();
        if r == 0.0 {
            f64::NEG_INFINITY
        } else {
            r.ln() + self.ln_scale
        }
    }

    /// Plain value; may overflow to infinity or underflow to zero.
    pub fn value(&self) -> Complex64 {
        self.mantissa * self.ln_scale.exp()
    }
}

impl std::ops::Mul for LogComplex {
    type Output = Self;

    fn mul(self, other: Self) -> Self {
        Self {
            mantissa: self.mantissa * other.mantissa,
            ln_scale: self.ln_scale + other.ln_scale,
        }
        .normalized()
    }
}

impl std::ops::Div for LogComplex {
    type Output = Self;

    fn div(self, other: Self) -> Self {
        Self {
            mantissa: self.mantissa / other.mantissa,
            ln_scale: self.ln_scale - other.ln_scale,
        }
        .normalized()
    }
}

/// `|q| < 1.5` needs `N >= 80` for theta tails to vanish below tolerance.
pub fn check_theta_window(ctx: &QContext) -> Result<()> {
    if ctx.q().norm() < 1.5 && ctx.window() < 80 {
        return Err(Error::WindowTooSmall(format!(
            "|q| = {:.4} < 1.5 requires a window half-width of at least 80, got {}",
            ctx.q().norm(),
            ctx.window()
        )));
    }
    Ok(())
}

/// Coefficients of `theta_{q,c}(z) = theta_q(z/c)` on `[-window, window]`.
pub fn theta_coeffs(ctx: &QContext, c: Complex64, window: i32) -> Result<WindowedLaurent> {
    if c == ZERO || !c.is_finite() {
        return Err(Error::Invalid("theta shift must be a finite nonzero number".into()));
    }
    check_theta_window(ctx)?;
    let q = ctx.q();
    let cinv = c.inv();
    let s = WindowedLaurent::from_fn(-window, window, |n| {
        let e = -(n as i64) * (n as i64 + 1) / 2;
        linalg::qpow(q, e) * linalg::qpow(cinv, n as i64)
    });
    Ok(s.with_bound(ctx.window()))
}

/// Integer `m` with `1 <= |z q^{-m}| < |q|`.
pub fn annulus_index(q: Complex64, z: Complex64) -> i32 {
    let lq = q.norm().ln();
    let mut m = (z.norm().ln() / lq).floor() as i32;
    let mut w = z * linalg::qpow(q, -(m as i64));
    // guard against rounding at the annulus edges
    while w.norm() < 1.0 {
        m -= 1;
        w *= q;
    }
    while w.norm() >= q.norm() {
        m += 1;
        w /= q;
    }
    m
}

/// Truncated theta sum on the fundamental annulus.
fn theta_annulus(q: Complex64, w: Complex64, window: i32) -> Complex64 {
    let mut acc = ZERO;
    for n in -window..=window {
        let e = -(n as i64) * (n as i64 + 1) / 2;
        let c = linalg::qpow(q, e);
        if c == ZERO {
            continue;
        }
        acc += c * linalg::qpow(w, n as i64);
    }
    acc
}

/// `theta_q(z)` through `theta_q(q^m w) = q^{m(m-1)/2} w^m theta_q(w)`.
pub fn theta_log(q: Complex64, z: Complex64, window: i32) -> Result<LogComplex> {
    if z == ZERO || !z.is_finite() {
        return Err(Error::Invalid("theta evaluated at 0 or infinity".into()));
    }
    let m = annulus_index(q, z);
    let w = z * linalg::qpow(q, -(m as i64));
    let base = LogComplex::new(theta_annulus(q, w, window));
    let e = (m as f64) * (m as f64 - 1.0) / 2.0;
    let ln_q = q.ln();
    let factor = LogComplex::exp(ln_q * e) * LogComplex::exp(w.ln() * m as f64);
    Ok(factor * base)
}

pub fn theta_eval(q: Complex64, z: Complex64, window: i32) -> Result<Complex64> {
    Ok(theta_log(q, z, window)?.value())
}

/// `theta_{q,c}(z) = theta_q(z / c)`.
pub fn theta_shift_log(q: Complex64, c: Complex64, z: Complex64, window: i32) -> Result<LogComplex> {
    theta_log(q, z / c, window)
}

/// A point of `E_q`, stored by its representative in `1 <= |z| < |q|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EqPoint {
    rep: Complex64,
}

impl EqPoint {
    pub fn new(q: Complex64, z: Complex64) -> Result<Self> {
        if z == ZERO || !z.is_finite() {
            return Err(Error::Invalid("points of E_q must be finite and nonzero".into()));
        }
        let m = annulus_index(q, z);
        Ok(Self { rep: z * linalg::qpow(q, -(m as i64)) })
    }

    pub fn rep(&self) -> Complex64 {
        self.rep
    }

    pub fn distance(&self, other: &Self, q: Complex64) -> f64 {
        class_distance(q, self.rep, other.rep)
    }

    pub fn same(&self, other: &Self, q: Complex64) -> bool {
        self.distance(other, q) <= POINT_TOL
    }
}

/// Relative distance between the classes of `x` and `y` in `C*/q^Z`,
/// both assumed to lie on the fundamental annulus.
pub fn class_distance(q: Complex64, x: Complex64, y: Complex64) -> f64 {
    (-1..=1)
        .map(|k| {
            let yk = y * linalg::qpow(q, k);
            (x - yk).norm() / yk.norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Positive divisor `sum n_i [alpha_i]` on `E_q`.
#[derive(Clone, Debug, PartialEq)]
pub struct EqDivisor {
    points: Vec<(EqPoint, u32)>,
}

impl EqDivisor {
    pub fn zero() -> Self {
        Self { points: Vec::new() }
    }

    /// Merges repeated classes; zero multiplicities are rejected.
    pub fn new(q: Complex64, points: &[(Complex64, u32)]) -> Result<Self> {
        let mut d = Self::zero();
        for &(z, m) in points {
            if m == 0 {
                return Err(Error::Invalid("divisor multiplicities must be positive".into()));
            }
            d.push(q, EqPoint::new(q, z)?, m);
        }
        Ok(d)
    }

    fn push(&mut self, q: Complex64, p: EqPoint, m: u32) {
        match self.points.iter_mut().find(|(x, _)| x.same(&p, q)) {
            Some(entry) => entry.1 += m,
            None => self.points.push((p, m)),
        }
    }

    pub fn points(&self) -> &[(EqPoint, u32)] {
        &self.points
    }

    pub fn degree(&self) -> u32 {
        self.points.iter().map(|(_, m)| m).sum()
    }

    pub fn add(&self, other: &Self, q: Complex64) -> Self {
        let mut d = self.clone();
        for &(p, m) in &other.points {
            d.push(q, p, m);
        }
        d
    }

    /// Support points with multiplicity, each repeated `n_i` times.
    pub fn expanded(&self) -> Vec<Complex64> {
        self.points
            .iter()
            .flat_map(|(p, m)| std::iter::repeat_n(p.rep, *m as usize))
            .collect()
    }

    /// Group-law evaluation: the class of `prod alpha_i^{n_i}`.
    pub fn evaluate(&self, q: Complex64) -> EqPoint {
        let mut acc = EqPoint { rep: ONE };
        for &(p, m) in &self.points {
            for _ in 0..m {
                acc = EqPoint::new(q, acc.rep * p.rep).expect("product of nonzero points");
            }
        }
        acc
    }
}

/// Summation divisor adapted to a block shape: the adjacent divisors
/// `D_{i,i+1}` of degree `mu_i - mu_{i+1}` and one chosen point `a_l` per
/// integer `mu_k < l <= mu_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummationDivisor {
    q: Complex64,
    slopes: Vec<i32>,
    adjacent: Vec<EqDivisor>,
    chosen: Vec<Complex64>,
}

impl SummationDivisor {
    /// Chosen points `a_l` listed for `l = mu_k + 1, ..., mu_1`.
    pub fn from_points(q: Complex64, slopes: &[i32], chosen: &[Complex64]) -> Result<Self> {
        check_slopes(slopes)?;
        let k = slopes.len();
        let expected = (slopes[0] - slopes[k - 1]) as usize;
        if chosen.len() != expected {
            return Err(Error::Invalid(format!(
                "expected {expected} chosen points, got {}",
                chosen.len()
            )));
        }
        if chosen.iter().any(|a| *a == ZERO || !a.is_finite()) {
            return Err(Error::Invalid("chosen points must be finite and nonzero".into()));
        }
        let mut adjacent = Vec::with_capacity(k.saturating_sub(1));
        for i in 0..k.saturating_sub(1) {
            let pts: Vec<(Complex64, u32)> = (slopes[i + 1] + 1..=slopes[i])
                .map(|l| (chosen[(l - slopes[k - 1] - 1) as usize], 1))
                .collect();
            adjacent.push(EqDivisor::new(q, &pts)?);
        }
        Ok(Self { q, slopes: slopes.to_vec(), adjacent, chosen: chosen.to_vec() })
    }

    /// Adjacent divisors `D_{1,2}, ..., D_{k-1,k}`; the chosen points are
    /// their expanded representatives.
    pub fn from_adjacent(q: Complex64, slopes: &[i32], adjacent: Vec<EqDivisor>) -> Result<Self> {
        check_slopes(slopes)?;
        let k = slopes.len();
        if adjacent.len() + 1 != k {
            return Err(Error::Invalid(format!(
                "{k} blocks need {} adjacent divisors, got {}",
                k - 1,
                adjacent.len()
            )));
        }
        let mut chosen = Vec::new();
        for i in (0..k - 1).rev() {
            let deg = adjacent[i].degree() as i32;
            if deg != slopes[i] - slopes[i + 1] {
                return Err(Error::Invalid(format!(
                    "divisor D_({},{}) has degree {deg}, expected {}",
                    i + 1,
                    i + 2,
                    slopes[i] - slopes[i + 1]
                )));
            }
            chosen.extend(adjacent[i].expanded());
        }
        Ok(Self { q, slopes: slopes.to_vec(), adjacent, chosen })
    }

    pub fn q(&self) -> Complex64 {
        self.q
    }

    pub fn slopes(&self) -> &[i32] {
        &self.slopes
    }

    pub fn chosen_points(&self) -> &[Complex64] {
        &self.chosen
    }

    pub fn adjacent(&self) -> &[EqDivisor] {
        &self.adjacent
    }

    /// Points `a_l` with `mu_j < l <= mu_i`.
    pub fn points_between(&self, i: usize, j: usize) -> &[Complex64] {
        let base = *self.slopes.last().unwrap();
        let lo = (self.slopes[j] - base) as usize;
        let hi = (self.slopes[i] - base) as usize;
        &self.chosen[lo..hi]
    }

    /// `D_{i,j} = D_{i,i+1} + ... + D_{j-1,j}` for `i < j`.
    pub fn divisor(&self, i: usize, j: usize) -> EqDivisor {
        assert!(i < j && j < self.slopes.len(), "divisor index ({i},{j}) out of range");
        (i..j).fold(EqDivisor::zero(), |acc, l| acc.add(&self.adjacent[l], self.q))
    }

    /// Same divisor classes with every chosen point moved into the
    /// fundamental annulus.
    pub fn normalized(&self) -> Self {
        let chosen = self
            .chosen
            .iter()
            .map(|&a| EqPoint::new(self.q, a).expect("nonzero point").rep())
            .collect::<Vec<_>>();
        Self { chosen, ..self.clone() }
    }

    pub fn with_chosen_points(&self, chosen: &[Complex64]) -> Result<Self> {
        Self::from_points(self.q, &self.slopes, chosen)
    }
}

fn check_slopes(slopes: &[i32]) -> Result<()> {
    if slopes.is_empty() {
        return Err(Error::Invalid("at least one block is required".into()));
    }
    if slopes.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Invalid(format!("slopes {slopes:?} are not strictly decreasing")));
    }
    Ok(())
}

/// A violation of allowedness: `ev(D_{i,j})` meets the class of
/// `(-1)^{mu_i - mu_j} s / t`. Block indices are zero-based.
#[derive(Clone, Debug, PartialEq)]
pub struct AllowedWitness {
    pub i: usize,
    pub j: usize,
    pub s: Complex64,
    pub t: Complex64,
    pub distance: f64,
}

impl fmt::Display for AllowedWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "blocks ({},{}) with eigenvalues s = {}, t = {} (class distance {:.3e})",
            self.i + 1,
            self.j + 1,
            self.s,
            self.t,
            self.distance
        )
    }
}

/// Thresholds for [`allowed_witness`]: below `tol` a pair is a violation,
/// in `[tol, margin)` the check refuses to decide.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllowedPolicy {
    pub tol: f64,
    pub margin: f64,
}

impl Default for AllowedPolicy {
    fn default() -> Self {
        Self { tol: POINT_TOL, margin: ALLOWED_MARGIN }
    }
}

/// `None` when the divisor is allowed for the given spectra.
pub fn allowed_witness(
    d: &SummationDivisor,
    spectra: &[Vec<Complex64>],
    policy: AllowedPolicy,
) -> Result<Option<AllowedWitness>> {
    let k = d.slopes.len();
    if spectra.len() != k {
        return Err(Error::Invalid(format!("{k} blocks but {} spectra", spectra.len())));
    }
    let q = d.q;
    let mut borderline: Option<Error> = None;
    for i in 0..k {
        for j in i + 1..k {
            let ev = d.divisor(i, j).evaluate(q);
            let sign = if (d.slopes[i] - d.slopes[j]) % 2 == 0 { 1.0 } else { -1.0 };
            for &s in &spectra[i] {
                for &t in &spectra[j] {
                    let bad = EqPoint::new(q, s / t * sign)?;
                    let distance = ev.distance(&bad, q);
                    if distance < policy.tol {
                        return Ok(Some(AllowedWitness { i, j, s, t, distance }));
                    }
                    if distance < policy.margin && borderline.is_none() {
                        borderline = Some(Error::BorderlineDivisor {
                            i: i + 1,
                            j: j + 1,
                            distance,
                            tol: policy.tol,
                            margin: policy.margin,
                        });
                    }
                }
            }
        }
    }
    match borderline {
        Some(e) => Err(e),
        None => Ok(None),
    }
}

pub fn is_allowed(d: &SummationDivisor, spectra: &[Vec<Complex64>], policy: AllowedPolicy) -> Result<bool> {
    Ok(allowed_witness(d, spectra, policy)?.is_none())
}

/// Descriptor of `t_i = theta_q^{mu_k} prod_{mu_k < l <= mu_i} theta_{q,-a_l}`,
/// which satisfies `sigma_q t_i = alpha_i z^{mu_i} t_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaGauge {
    q: Complex64,
    window: i32,
    slopes: Vec<i32>,
    alphas: Vec<Complex64>,
    factors: Vec<Vec<Complex64>>,
    theta_power: i32,
}

impl ThetaGauge {
    pub fn new(ctx: &QContext, d: &SummationDivisor) -> Result<Self> {
        check_theta_window(ctx)?;
        let k = d.slopes.len();
        let mut alphas = Vec::with_capacity(k);
        let mut factors = Vec::with_capacity(k);
        for i in 0..k {
            let f = d.points_between(i, k - 1).to_vec();
            let alpha = f.iter().fold(ONE, |acc, a| acc * (-a.inv()));
            alphas.push(alpha);
            factors.push(f);
        }
        Ok(Self {
            q: ctx.q(),
            window: ctx.window(),
            slopes: d.slopes.clone(),
            alphas,
            factors,
            theta_power: d.slopes[k - 1],
        })
    }

    pub fn k(&self) -> usize {
        self.slopes.len()
    }

    pub fn alpha(&self, i: usize) -> Complex64 {
        self.alphas[i]
    }

    pub fn slope(&self, i: usize) -> i32 {
        self.slopes[i]
    }

    pub fn factors(&self, i: usize) -> &[Complex64] {
        &self.factors[i]
    }

    pub fn theta_power(&self) -> i32 {
        self.theta_power
    }

    /// Points `a_l` with `mu_j < l <= mu_i`; `factors[j]` is a prefix of
    /// `factors[i]`.
    fn between(&self, i: usize, j: usize) -> &[Complex64] {
        &self.factors[i][self.factors[j].len()..]
    }

    fn product_log(&self, pts: &[Complex64], z: Complex64) -> Result<LogComplex> {
        let mut acc = LogComplex::one();
        for &a in pts {
            acc = acc * theta_shift_log(self.q, -a, z, self.window)?;
        }
        Ok(acc)
    }

    pub fn t_log(&self, i: usize, z: Complex64) -> Result<LogComplex> {
        let th = theta_log(self.q, z, self.window)?.powi(self.theta_power);
        Ok(th * self.product_log(&self.factors[i], z)?)
    }

    pub fn t(&self, i: usize, z: Complex64) -> Result<Complex64> {
        Ok(self.t_log(i, z)?.value())
    }

    /// `t_i / t_j = prod_{mu_j < l <= mu_i} theta_{q,-a_l}` for `i <= j`.
    pub fn ratio_log(&self, i: usize, j: usize, z: Complex64) -> Result<LogComplex> {
        assert!(i <= j);
        let extra = self.between(i, j);
        self.product_log(extra, z)
    }

    /// `t_{i,j} = (sigma_q t_i) / t_j = alpha_i z^{mu_i} t_i / t_j`.
    pub fn tij_log(&self, i: usize, j: usize, z: Complex64) -> Result<LogComplex> {
        let zm = LogComplex::exp(z.ln() * self.slopes[i] as f64);
        Ok((self.ratio_log(i, j, z)? * zm).scale(self.alphas[i]))
    }

    pub fn tij(&self, i: usize, j: usize, z: Complex64) -> Result<Complex64> {
        Ok(self.tij_log(i, j, z)?.value())
    }

    /// Laurent coefficients of `t_{i,j}` on the global window.
    pub fn tij_series(&self, ctx: &QContext, i: usize, j: usize) -> Result<WindowedLaurent> {
        assert!(i <= j);
        let extra = self.between(i, j);
        let mut acc = ctx.monomial(self.slopes[i], self.alphas[i]);
        for &a in extra {
            acc = acc.mul(&theta_coeffs(ctx, -a, ctx.window())?);
        }
        Ok(acc)
    }

    /// Poles of `t_j / t_i`: the classes `[a_l; q]` for `mu_j < l <= mu_i`.
    pub fn pole_points(&self, i: usize, j: usize) -> Vec<Complex64> {
        self.between(i, j).to_vec()
    }
}
