//! Summation of the formal gauge along a divisor.
//!
//! The theta gauge `Theta_D = diag(t_i)` turns `A_U` into a system
//! `A'_{U'}` with constant diagonal blocks `alpha_i A_i` and off-diagonal
//! blocks `t_ij U_ij`. Between two such systems there is a unique gauge
//! `F'` holomorphic on `C*`, found coefficientwise, and
//! `F = Theta_D^{-1} F' Theta_D` is the summed gauge. It is stored in this
//! factored form and never expanded, since its poles accumulate at 0.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::laurent::{QContext, SeriesMatrix};
use crate::linalg::{self, CMat};
use crate::system::{pointwise_residual, upper_pairs, BlockMatrix, GaugeElement};
use crate::theta::{allowed_witness, class_distance, AllowedPolicy, EqPoint, SummationDivisor, ThetaGauge};
use crate::{Error, Result};

/// Condition number of the coefficient map above which an index counts as
/// resonant.
pub const RESONANCE_CONDITION: f64 = 1e10;
/// Relative class distance to a pole below which evaluation is refused.
pub const POLE_EXCLUSION: f64 = 1e-6;

/// System with constant diagonal blocks `A'_i` and two-sided off-diagonal
/// blocks `U'_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatSystem {
    constants: Vec<CMat>,
    blocks: BTreeMap<(usize, usize), SeriesMatrix>,
    bound: i32,
    resonance_distance: f64,
}

impl FlatSystem {
    pub fn constant(&self, i: usize) -> &CMat {
        &self.constants[i]
    }

    pub fn k(&self) -> usize {
        self.constants.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.constants.iter().map(|c| c.nrows()).collect()
    }

    pub fn block(&self, i: usize, j: usize) -> SeriesMatrix {
        self.blocks.get(&(i, j)).cloned().unwrap_or_else(|| {
            SeriesMatrix::zeros(self.constants[i].nrows(), self.constants[j].nrows(), self.bound)
        })
    }

    /// Smallest class distance between `s / t` and `1` over eigenvalues `s`
    /// of `A'_i` and `t` of `A'_j`, `i < j`.
    pub fn resonance_distance(&self) -> f64 {
        self.resonance_distance
    }
}

/// `Theta_D[A_U]`: diagonal constants `alpha_i A_i`, blocks `t_ij U_ij`.
pub fn flatten(ctx: &QContext, a: &BlockMatrix, theta: &ThetaGauge) -> Result<FlatSystem> {
    let shape = a.shape();
    if shape.k() != theta.k() || (0..shape.k()).any(|i| shape.slope(i) != theta.slope(i)) {
        return Err(Error::Invalid("divisor is not adapted to the block shape".into()));
    }
    let constants: Vec<CMat> = (0..shape.k()).map(|i| shape.constant(i) * theta.alpha(i)).collect();
    let mut blocks = BTreeMap::new();
    for (&(i, j), u) in a.blocks() {
        if u.max_abs() == 0.0 {
            continue;
        }
        let t = theta.tij_series(ctx, i, j)?;
        blocks.insert((i, j), u.map(|e| e.clone().with_bound(ctx.window()).mul(&t)));
    }
    let q = ctx.q();
    let mut resonance_distance = f64::INFINITY;
    let spectra: Vec<Vec<Complex64>> = constants.iter().map(linalg::eigenvalues).collect::<Result<_>>()?;
    for i in 0..spectra.len() {
        for j in i + 1..spectra.len() {
            for &s in &spectra[i] {
                for &t in &spectra[j] {
                    let p = EqPoint::new(q, s / t)?;
                    resonance_distance = resonance_distance.min(class_distance(q, p.rep(), linalg::ONE));
                }
            }
        }
    }
    Ok(FlatSystem { constants, blocks, bound: ctx.window(), resonance_distance })
}

/// Unique two-sided `X'` with `(sigma_q X') B - C X' = Y'`, solved per index
/// by `X'_n = Phi_n^{-1}(Y'_n)` for `Phi_n(M) = M (q^n B) - C M`.
pub fn solve_regular(ctx: &QContext, b: &CMat, c: &CMat, y: &SeriesMatrix) -> Result<SeriesMatrix> {
    let (t, s) = (c.nrows(), b.nrows());
    if (y.rows(), y.cols()) != (t, s) {
        return Err(Error::Invalid("right-hand side has the wrong shape".into()));
    }
    let n_win = ctx.window();
    let q = ctx.q();
    let mut x: Vec<CMat> = Vec::with_capacity((2 * n_win + 1) as usize);
    for n in -n_win..=n_win {
        let p = b * linalg::qpow(q, n as i64);
        let phi = linalg::sylvester_operator(&p, c);
        let (inv, cond) = linalg::inverse_with_condition(&phi).ok_or(Error::NearResonant { n, condition: f64::INFINITY })?;
        if cond > RESONANCE_CONDITION {
            return Err(Error::NearResonant { n, condition: cond });
        }
        let yn = y.coeff_matrix(n);
        if linalg::max_abs(&yn) == 0.0 {
            x.push(CMat::zeros(t, s));
            continue;
        }
        let v = inv * nalgebra::DVector::from_vec(linalg::vec_of(&yn));
        x.push(linalg::unvec(v.as_slice(), t, s));
    }
    let lossy = y.is_lossy();
    Ok(SeriesMatrix::from_fn(t, s, |i, j| {
        let e = crate::laurent::WindowedLaurent::new(-n_win, x.iter().map(|m| m[(i, j)]).collect()).with_bound(n_win);
        let e = if lossy { e.mark_truncated(-n_win, n_win) } else { e };
        e.trimmed(0.0)
    }))
}

/// Unique `F'` holomorphic on `C*` with `F'[A'_{U'}] = A'_{V'}`, by
/// induction over `j - i`:
/// `(sigma_q F'_ij) A'_j - A'_i F'_ij = V'_ij - U'_ij + sum V'_il F'_lj - sum (sigma_q F'_il) U'_lj`.
pub fn link_regular(ctx: &QContext, u: &FlatSystem, v: &FlatSystem) -> Result<GaugeElement> {
    link_regular_ordered(ctx, u, v, &upper_pairs(u.k()))
}

/// Same with a caller-chosen order compatible with the induction.
pub fn link_regular_ordered(ctx: &QContext, u: &FlatSystem, v: &FlatSystem, order: &[(usize, usize)]) -> Result<GaugeElement> {
    if u.k() != v.k() || (0..u.k()).any(|i| linalg::max_abs(&(u.constant(i) - v.constant(i))) > 1e-12 * linalg::max_abs(u.constant(i))) {
        return Err(Error::Invalid("flattened systems have different diagonal constants".into()));
    }
    let q = ctx.q();
    let mut f: BTreeMap<(usize, usize), SeriesMatrix> = BTreeMap::new();
    for &(i, j) in order {
        let mut y = v.block(i, j).sub(&u.block(i, j));
        for l in i + 1..j {
            let (Some(f_lj), Some(f_il)) = (f.get(&(l, j)), f.get(&(i, l))) else {
                return Err(Error::Invalid(format!("pair ({},{}) processed before its dependencies", i + 1, j + 1)));
            };
            y = y.add(&v.block(i, l).mul(f_lj));
            y = y.sub(&f_il.sigma_q(q, 1).mul(&u.block(l, j)));
        }
        let x = solve_regular(ctx, u.constant(j), u.constant(i), &y)?;
        f.insert((i, j), x);
    }
    let mut g = GaugeElement::identity(u.ranks(), ctx.window());
    for ((i, j), x) in f {
        g.set_block(i, j, x)?;
    }
    Ok(g)
}

/// Meromorphic gauge `F = Theta_D^{-1} F' Theta_D` linking `A_U` to `A_V`.
#[derive(Clone, Debug)]
pub struct SummedGauge {
    divisor: SummationDivisor,
    theta: ThetaGauge,
    flat: GaugeElement,
}

impl SummedGauge {
    pub fn divisor(&self) -> &SummationDivisor {
        &self.divisor
    }

    pub fn theta(&self) -> &ThetaGauge {
        &self.theta
    }

    /// The holomorphic factor `F'`.
    pub fn flat(&self) -> &GaugeElement {
        &self.flat
    }

    pub fn ranks(&self) -> &[usize] {
        self.flat.ranks()
    }

    /// Representatives on the fundamental annulus of the poles of block
    /// `(i, j)`.
    pub fn pole_points(&self, i: usize, j: usize) -> Vec<Complex64> {
        let q = self.divisor.q();
        self.theta
            .pole_points(i, j)
            .into_iter()
            .map(|a| EqPoint::new(q, a).expect("nonzero point").rep())
            .collect()
    }

    /// Smallest class distance from `z` to a pole of any block.
    pub fn pole_distance(&self, z: Complex64) -> f64 {
        let q = self.divisor.q();
        let Ok(p) = EqPoint::new(q, z) else { return 0.0 };
        self.divisor
            .chosen_points()
            .iter()
            .map(|&a| class_distance(q, p.rep(), EqPoint::new(q, a).expect("nonzero point").rep()))
            .fold(f64::INFINITY, f64::min)
    }

    /// `F_ij(z) = (t_j(z) / t_i(z)) F'_ij(z)` blockwise.
    pub fn evaluate(&self, z: Complex64) -> Result<CMat> {
        let distance = self.pole_distance(z);
        if distance < POLE_EXCLUSION {
            return Err(Error::PoleProximity { z, distance });
        }
        self.evaluate_unchecked(z)
    }

    /// Block `(i, j)` without the pole-distance guard; near a pole the
    /// value is large but finite as long as `z` is not exactly on it.
    pub fn evaluate_block(&self, i: usize, j: usize, z: Complex64) -> Result<CMat> {
        let fp = self.flat.block(i, j).evaluate(z)?;
        if i == j {
            return Ok(fp);
        }
        let ratio = self.theta.ratio_log(i, j, z)?;
        Ok(fp / ratio.value())
    }

    fn evaluate_unchecked(&self, z: Complex64) -> Result<CMat> {
        let ranks = self.flat.ranks().to_vec();
        let n: usize = ranks.iter().sum();
        let mut m = linalg::identity(n);
        let offs: Vec<usize> = (0..ranks.len()).map(|i| ranks[..i].iter().sum()).collect();
        for (&(i, j), blk) in self.flat.blocks() {
            if blk.max_abs() == 0.0 {
                continue;
            }
            let v = self.evaluate_block(i, j, z)?;
            m.view_mut((offs[i], offs[j]), (ranks[i], ranks[j])).copy_from(&v);
        }
        Ok(m)
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.flat.is_identity(tol)
    }
}

/// Shared shape check for the two sides of a summation problem.
fn check_same_shape(u: &BlockMatrix, v: &BlockMatrix) -> Result<()> {
    let (a, b) = (u.shape(), v.shape());
    let same = a.slopes() == b.slopes()
        && (0..a.k()).all(|i| {
            a.rank(i) == b.rank(i)
                && linalg::max_abs(&(a.constant(i) - b.constant(i))) <= 1e-12 * linalg::max_abs(a.constant(i))
        });
    if !same {
        return Err(Error::Invalid("the two systems do not share the same graded part".into()));
    }
    Ok(())
}

/// `F_D(U, V)`: the unique gauge with `F[A_U] = A_V` and poles bounded by
/// `D`. Fails with the violating eigenvalue pair when `D` is not allowed.
pub fn sum_gauge(ctx: &QContext, u: &BlockMatrix, v: &BlockMatrix, d: &SummationDivisor) -> Result<SummedGauge> {
    sum_gauge_ordered(ctx, u, v, d, &upper_pairs(u.shape().k()))
}

pub fn sum_gauge_ordered(
    ctx: &QContext,
    u: &BlockMatrix,
    v: &BlockMatrix,
    d: &SummationDivisor,
    order: &[(usize, usize)],
) -> Result<SummedGauge> {
    check_same_shape(u, v)?;
    if d.slopes() != u.shape().slopes() {
        return Err(Error::Invalid("divisor is not adapted to the block shape".into()));
    }
    let spectra = u.shape().spectra()?;
    if let Some(w) = allowed_witness(d, &spectra, AllowedPolicy::default())? {
        return Err(Error::NotAllowed(w));
    }
    let theta = ThetaGauge::new(ctx, d)?;
    let fu = flatten(ctx, u, &theta)?;
    let fv = flatten(ctx, v, &theta)?;
    if fu.resonance_distance() < AllowedPolicy::default().tol {
        return Err(Error::Internal(format!(
            "allowed divisor but flattened spectra meet modulo q^Z (distance {:.3e})",
            fu.resonance_distance()
        )));
    }
    let flat = link_regular_ordered(ctx, &fu, &fv, order)?;
    Ok(SummedGauge { divisor: d.clone(), theta, flat })
}

/// `F_D(U) = F_D(0, U)`, which maps `A_0` to `A_U`.
pub fn sum_from_graded(ctx: &QContext, u: &BlockMatrix, d: &SummationDivisor) -> Result<SummedGauge> {
    sum_gauge(ctx, &u.graded_part(), u, d)
}

/// Sample points `r e^{i phi}` with `r` log-uniform on `[1, |q|)` and `phi`
/// uniform, drawn from a seeded generator, keeping away from given poles.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub radii: usize,
    pub arguments: usize,
    pub seed: u64,
    pub points: Vec<Complex64>,
}

impl SampleGrid {
    /// `exclude` lists pole representatives; points closer than `margin`
    /// (relative class distance) are redrawn.
    pub fn new(q: Complex64, radii: usize, arguments: usize, seed: u64, exclude: &[Complex64], margin: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lq = q.norm().ln();
        let mut points = Vec::with_capacity(radii * arguments);
        for _ in 0..radii {
            let r = (rng.gen::<f64>() * lq).exp();
            for _ in 0..arguments {
                loop {
                    let z = Complex64::from_polar(r, rng.gen::<f64>() * TAU);
                    let p = EqPoint::new(q, z).expect("nonzero").rep();
                    let near = exclude.iter().any(|&a| {
                        let a = EqPoint::new(q, a).expect("nonzero").rep();
                        class_distance(q, p, a) < margin
                    });
                    if !near {
                        points.push(z);
                        break;
                    }
                }
            }
        }
        Self { radii, arguments, seed, points }
    }

    /// 20 radii times 3 arguments.
    pub fn standard(q: Complex64, seed: u64, exclude: &[Complex64]) -> Self {
        Self::new(q, 20, 3, seed, exclude, 1e-3)
    }
}

/// Largest relative residual `|F(qz) A_U(z) - A_V(z) F(z)| / |A_U(z)|` over
/// the grid.
pub fn gauge_residual(g: &SummedGauge, u: &BlockMatrix, v: &BlockMatrix, grid: &[Complex64]) -> Result<f64> {
    let q = g.divisor().q();
    let mut worst: f64 = 0.0;
    for &z in grid {
        let fz = g.evaluate(z)?;
        let fqz = g.evaluate(q * z)?;
        let r = pointwise_residual(&fqz, &fz, &u.evaluate(z)?, &v.evaluate(z)?);
        worst = worst.max(r);
    }
    Ok(worst)
}
