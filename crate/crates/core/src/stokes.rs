//! Stokes cocycles `F_{D,D'} = F_D(U)^{-1} F_{D'}(U)`, their q-Gevrey
//! flatness, level patterns, the unipotent exp/log correspondence and the
//! analytic-equivalence classifier.

use num_complex::Complex64;

use crate::laurent::{QContext, SeriesMatrix};
use crate::linalg::{self, CMat};
use crate::summation::{gauge_residual, sum_from_graded, sum_gauge, SampleGrid, SummedGauge};
use crate::system::{upper_pairs, BlockMatrix, BlockShape};
use crate::theta::{EqPoint, SummationDivisor};
use crate::{Error, Result};

/// Tolerance for cocycle certificates.
pub const COCYCLE_TOL: f64 = 1e-8;

/// Residuals of a certified cocycle at its sample points.
#[derive(Clone, Debug, PartialEq)]
pub struct CocycleCertificate {
    pub points: Vec<Complex64>,
    /// `max |F_{a,c} - F_{a,b} F_{b,c}|` over triples and points.
    pub identity_residual: f64,
    /// `max |C(qz) A_0(z) - A_0(z) C(z)| / |A_0(z)|` over components.
    pub fixing_residual: f64,
    /// `max |C_ii - I|` over diagonal blocks of components.
    pub unipotent_residual: f64,
}

/// Summed gauges `F_D(U)` for a list of divisors; components are evaluated
/// as products of their values.
#[derive(Clone, Debug)]
pub struct StokesCocycle {
    shape: BlockShape,
    gauges: Vec<SummedGauge>,
    certificate: CocycleCertificate,
}

impl StokesCocycle {
    pub fn len(&self) -> usize {
        self.gauges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gauges.is_empty()
    }

    pub fn shape(&self) -> &BlockShape {
        &self.shape
    }

    pub fn gauge(&self, a: usize) -> &SummedGauge {
        &self.gauges[a]
    }

    pub fn certificate(&self) -> &CocycleCertificate {
        &self.certificate
    }

    /// `F_{D_a, D_b}(z) = F_{D_a}(U)(z)^{-1} F_{D_b}(U)(z)`.
    pub fn component(&self, a: usize, b: usize, z: Complex64) -> Result<CMat> {
        let fa = self.gauges[a].evaluate(z)?;
        let fb = self.gauges[b].evaluate(z)?;
        let inv = linalg::inverse(&fa).ok_or_else(|| Error::Internal("summed gauge is singular".into()))?;
        Ok(inv * fb)
    }

    pub fn component_block(&self, a: usize, b: usize, i: usize, j: usize, z: Complex64) -> Result<CMat> {
        let c = self.component(a, b, z)?;
        let (oi, oj) = (self.shape.offset(i), self.shape.offset(j));
        Ok(c.view((oi, oj), (self.shape.rank(i), self.shape.rank(j))).into_owned())
    }

    /// `ln |C_ij(z_0 q^{-m})|` for `m = 1..=m_max`, transported from `z_0`
    /// through `X(z/q) = (z/q)^{mu_i - mu_j} A_i^{-1} X(z) A_j`, the
    /// equation satisfied by every block of a component that fixes `A_0`.
    /// Direct evaluation near 0 loses all digits to cancellation.
    pub fn ray_log_values(&self, a: usize, b: usize, i: usize, j: usize, z0: Complex64, m_max: usize) -> Result<Vec<f64>> {
        let x0 = self.component_block(a, b, i, j, z0)?;
        transport_log_norms(&self.shape, i, j, x0, z0, self.gauges[a].divisor().q(), m_max)
    }

    /// Same values by direct evaluation; only meaningful for small `m`.
    pub fn ray_log_values_direct(&self, a: usize, b: usize, i: usize, j: usize, z0: Complex64, m_max: usize) -> Result<Vec<f64>> {
        let q = self.gauges[a].divisor().q();
        (1..=m_max)
            .map(|m| {
                let z = z0 * linalg::qpow(q, -(m as i64));
                Ok(linalg::frobenius(&self.component_block(a, b, i, j, z)?).ln())
            })
            .collect()
    }
}

/// Log-norms of the solution of the pure block equation along the ray
/// `z_0 q^{-m}`, starting from `X(z_0) = x0`.
pub fn transport_log_norms(
    shape: &BlockShape,
    i: usize,
    j: usize,
    x0: CMat,
    z0: Complex64,
    q: Complex64,
    m_max: usize,
) -> Result<Vec<f64>> {
    let a_inv = linalg::inverse(shape.constant(i)).ok_or(Error::SingularDiagonalBlock { block: i })?;
    let aj = shape.constant(j);
    let d = shape.gap(i, j) as f64;
    let (lz, lq) = (z0.ln(), q.ln());
    let mut mant = x0;
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let w_log = (lz - lq * m as f64) * d;
        mant = &a_inv * mant * aj * Complex64::from_polar(1.0, w_log.im);
        log_scale += w_log.re;
        let s = linalg::max_abs(&mant);
        if s == 0.0 {
            return Err(Error::DegenerateFit("block vanishes along the ray".into()));
        }
        mant /= Complex64::new(s, 0.0);
        log_scale += s.ln();
        out.push(linalg::frobenius(&mant).ln() + log_scale);
    }
    Ok(out)
}

/// Builds `F_D(U)` for every divisor and certifies the cocycle identity,
/// the fixing of `A_0` and unipotence on a seeded grid of `points` points.
pub fn build_cocycle(ctx: &QContext, u: &BlockMatrix, divisors: &[SummationDivisor], points: usize, seed: u64) -> Result<StokesCocycle> {
    if divisors.is_empty() {
        return Err(Error::Invalid("at least one divisor is required".into()));
    }
    let gauges: Vec<SummedGauge> = divisors.iter().map(|d| sum_from_graded(ctx, u, d)).collect::<Result<_>>()?;
    let poles: Vec<Complex64> = divisors.iter().flat_map(|d| d.chosen_points().to_vec()).collect();
    let grid = SampleGrid::new(ctx.q(), points, 1, seed, &poles, 1e-3);
    let shape = u.shape().clone();
    let mut cocycle = StokesCocycle {
        shape,
        gauges,
        certificate: CocycleCertificate {
            points: grid.points.clone(),
            identity_residual: 0.0,
            fixing_residual: 0.0,
            unipotent_residual: 0.0,
        },
    };
    let cert = certify(&cocycle, &grid.points)?;
    let worst = cert.identity_residual.max(cert.fixing_residual).max(cert.unipotent_residual);
    cocycle.certificate = cert;
    if worst > COCYCLE_TOL {
        return Err(Error::Certification(format!(
            "cocycle residual {worst:.3e} exceeds {COCYCLE_TOL:.0e} (identity {:.3e}, fixing {:.3e}, unipotence {:.3e})",
            cocycle.certificate.identity_residual, cocycle.certificate.fixing_residual, cocycle.certificate.unipotent_residual
        )));
    }
    Ok(cocycle)
}

fn certify(c: &StokesCocycle, points: &[Complex64]) -> Result<CocycleCertificate> {
    let m = c.len();
    let q = c.gauges[0].divisor().q();
    let (mut ident, mut fixing, mut unip) = (0.0f64, 0.0f64, 0.0f64);
    for &z in points {
        let vals: Vec<CMat> = c.gauges.iter().map(|g| g.evaluate(z)).collect::<Result<_>>()?;
        let vals_q: Vec<CMat> = c.gauges.iter().map(|g| g.evaluate(q * z)).collect::<Result<_>>()?;
        let invs: Vec<CMat> = vals
            .iter()
            .map(|v| linalg::inverse(v).ok_or_else(|| Error::Internal("summed gauge is singular".into())))
            .collect::<Result<_>>()?;
        let invs_q: Vec<CMat> = vals_q
            .iter()
            .map(|v| linalg::inverse(v).ok_or_else(|| Error::Internal("summed gauge is singular".into())))
            .collect::<Result<_>>()?;
        let a0 = c.shape.diagonal_eval(z);
        let a0n = linalg::frobenius(&a0);
        for a in 0..m {
            for b in 0..m {
                let cab = &invs[a] * &vals[b];
                let cab_q = &invs_q[a] * &vals_q[b];
                fixing = fixing.max(linalg::frobenius(&(&cab_q * &a0 - &a0 * &cab)) / a0n);
                for i in 0..c.shape.k() {
                    let (o, r) = (c.shape.offset(i), c.shape.rank(i));
                    let d = cab.view((o, o), (r, r)) - linalg::identity(r);
                    unip = unip.max(linalg::max_abs(&d));
                }
                for vc in &vals[..m] {
                    let cac = &invs[a] * vc;
                    let cbc = &invs[b] * vc;
                    ident = ident.max(linalg::max_abs(&(cac - &cab * cbc)));
                }
            }
        }
    }
    Ok(CocycleCertificate { points: points.to_vec(), identity_residual: ident, fixing_residual: fixing, unipotent_residual: unip })
}

/// Fit of `ln|v_m| = -t m^2 ln|q| / 2 + b m + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatnessFit {
    pub level: f64,
    pub linear: f64,
    pub intercept: f64,
    pub rms: f64,
}

/// Least-squares q-Gevrey level of values along `z_0 q^{-m}`,
/// `m = 1..=len`, given as natural logs of their moduli.
pub fn flatness_level(log_values: &[f64], q: Complex64) -> Result<FlatnessFit> {
    let n = log_values.len();
    if n < 15 {
        return Err(Error::DegenerateFit(format!("{n} ray values, at least 15 needed")));
    }
    if log_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("ray values vanish or overflow".into()));
    }
    let lq = q.norm().ln();
    let design = nalgebra::DMatrix::<f64>::from_fn(n, 3, |r, c| {
        let m = (r + 1) as f64;
        match c {
            0 => -m * m * lq / 2.0,
            1 => m,
            _ => 1.0,
        }
    });
    let rhs = nalgebra::DVector::from_column_slice(log_values);
    let svd = design.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let resid = &design * &sol - &rhs;
    let rms = (resid.norm_squared() / n as f64).sqrt();
    Ok(FlatnessFit { level: sol[0], linear: sol[1], intercept: sol[2], rms })
}

/// Blocks `(i, j)` with `mu_i - mu_j >= t` (active) and `= t` (graded).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelPattern {
    pub level: i32,
    pub active: Vec<(usize, usize)>,
    pub graded: Vec<(usize, usize)>,
}

pub fn level_pattern(slopes: &[i32], t: i32) -> Result<LevelPattern> {
    if t < 0 {
        return Err(Error::Invalid("levels are nonnegative".into()));
    }
    let pairs = upper_pairs(slopes.len());
    let gap = |&(i, j): &(usize, usize)| slopes[i] - slopes[j];
    let active: Vec<_> = pairs.iter().copied().filter(|p| t == 0 || gap(p) >= t).collect();
    let graded: Vec<_> = pairs.iter().copied().filter(|p| gap(p) == t).collect();
    Ok(LevelPattern { level: t, active, graded })
}

/// `exp(f) = sum_{p < n} f^p / p!` for strictly upper-triangular `f`.
pub fn unipotent_exp(f: &CMat) -> CMat {
    let n = f.nrows();
    let mut acc = linalg::identity(n);
    let mut term = linalg::identity(n);
    for p in 1..n {
        term = &term * f / Complex64::new(p as f64, 0.0);
        acc += &term;
    }
    acc
}

/// `log(F) = sum_{p < n} (-1)^{p+1} (F - I)^p / p` for unipotent `F`.
pub fn unipotent_log(f: &CMat) -> CMat {
    let n = f.nrows();
    let x = f - linalg::identity(n);
    let mut acc = CMat::zeros(n, n);
    let mut pow = linalg::identity(n);
    for p in 1..n {
        pow = &pow * &x;
        let sign = if p % 2 == 1 { 1.0 } else { -1.0 };
        acc += &pow * Complex64::new(sign / p as f64, 0.0);
    }
    acc
}

/// Series version of [`unipotent_exp`].
pub fn unipotent_exp_series(f: &SeriesMatrix) -> SeriesMatrix {
    let n = f.rows();
    let bound = f.entries().first().map_or(40, |e| e.bound());
    let mut acc = SeriesMatrix::identity(n, bound);
    let mut term = SeriesMatrix::identity(n, bound);
    for p in 1..n {
        term = term.mul(f).scale(Complex64::new(1.0 / p as f64, 0.0));
        acc = acc.add(&term);
    }
    acc
}

/// Series version of [`unipotent_log`].
pub fn unipotent_log_series(f: &SeriesMatrix) -> SeriesMatrix {
    let n = f.rows();
    let bound = f.entries().first().map_or(40, |e| e.bound());
    let x = f.sub(&SeriesMatrix::identity(n, bound));
    let mut acc = SeriesMatrix::zeros(n, n, bound);
    let mut pow = SeriesMatrix::identity(n, bound);
    for p in 1..n {
        pow = pow.mul(&x);
        let sign = if p % 2 == 1 { 1.0 } else { -1.0 };
        acc = acc.add(&pow.scale(Complex64::new(sign / p as f64, 0.0)));
    }
    acc
}

/// Pole order of `F_ij` at `p`, from `|F(p(1 + eps e^{i phi}))|` at
/// `eps = 1e-2` and `1e-3`, maximised over four directions.
pub fn pole_order(g: &SummedGauge, i: usize, j: usize, p: Complex64) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for k in 0..4 {
        let dir = Complex64::from_polar(1.0, 0.3 + k as f64 * std::f64::consts::FRAC_PI_2);
        let f1 = linalg::frobenius(&g.evaluate_block(i, j, p * (dir * 1e-2 + 1.0))?);
        let f2 = linalg::frobenius(&g.evaluate_block(i, j, p * (dir * 1e-3 + 1.0))?);
        let order = if f1 == 0.0 && f2 == 0.0 { 0.0 } else { (f2 / f1).ln() / 10f64.ln() };
        worst = worst.max(order);
    }
    Ok(worst)
}

/// Outcome of [`classify_pair`]. `defect` is the normalized Taylor
/// coefficient of `F'_ij` at the witness point and `order` the measured
/// pole order there.
#[derive(Clone, Debug)]
pub enum Verdict {
    Equivalent { gauge: SummedGauge, residual: f64 },
    NotEquivalent { block: (usize, usize), point: Complex64, defect: f64, order: f64 },
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Verdict::Equivalent { .. })
    }
}

/// Defects at most this count as vanishing, roundoff being near `1e-16`.
pub const DEFECT_ZERO: f64 = 1e-9;
/// Defects at least this count as a pole; in between is inconclusive.
pub const DEFECT_POLE: f64 = 1e-6;

/// `max_{k < m} |T_k| / S_k` with `T_k = sum_n C(n, k) F'_n p^{n-k}` the
/// Taylor coefficients of the holomorphic factor of block `(i, j)` at `p`
/// and `S_k` the same sum of moduli, the roundoff scale of `T_k`.
pub fn vanishing_defect(g: &SummedGauge, i: usize, j: usize, p: Complex64, m: u32) -> f64 {
    let block = g.flat().block(i, j);
    let mut worst: f64 = 0.0;
    for e in block.entries() {
        for k in 0..m as i64 {
            let (mut t, mut s) = (Complex64::new(0.0, 0.0), 0.0);
            for (n, c) in e.iter() {
                let n = n as i64;
                let binom = (0..k).fold(1.0, |acc, r| acc * (n - r) as f64 / (r + 1) as f64);
                let term = c * binom * p.powi((n - k) as i32);
                t += term;
                s += term.norm();
            }
            if s > 0.0 {
                worst = worst.max(t.norm() / s);
            }
        }
    }
    worst
}

/// `A_U` and `A_V` are analytically equivalent iff `F_D(U, V)` has no
/// poles, that is iff every `F'_ij` vanishes to the multiplicity of each
/// support class of `D_ij`. Checking one representative per class
/// suffices: the gauge equation carries holomorphy along `q`-spirals.
pub fn classify_pair(ctx: &QContext, u: &BlockMatrix, v: &BlockMatrix, d: &SummationDivisor, seed: u64) -> Result<Verdict> {
    let g = sum_gauge(ctx, u, v, d)?;
    let q = ctx.q();
    for (i, j) in upper_pairs(u.shape().k()) {
        if g.flat().block(i, j).max_abs() == 0.0 {
            continue;
        }
        let mut classes: Vec<(EqPoint, u32)> = Vec::new();
        for p in g.pole_points(i, j) {
            let rep = EqPoint::new(q, p)?;
            match classes.iter_mut().find(|(c, _)| c.same(&rep, q)) {
                Some(entry) => entry.1 += 1,
                None => classes.push((rep, 1)),
            }
        }
        for (rep, m) in classes {
            let p = rep.rep();
            let defect = vanishing_defect(&g, i, j, p, m);
            if defect <= DEFECT_ZERO {
                continue;
            }
            if defect < DEFECT_POLE {
                return Err(Error::Inconclusive(format!(
                    "block ({},{}) at {p}: vanishing defect {defect:.2e} between {DEFECT_ZERO:.0e} and {DEFECT_POLE:.0e}",
                    i + 1,
                    j + 1
                )));
            }
            let order = pole_order(&g, i, j, p)?;
            return Ok(Verdict::NotEquivalent { block: (i, j), point: p, defect, order });
        }
    }
    let poles: Vec<Complex64> = d.chosen_points().to_vec();
    let grid = SampleGrid::standard(q, seed, &poles);
    let residual = gauge_residual(&g, u, v, &grid.points)?;
    Ok(Verdict::Equivalent { gauge: g, residual })
}
