//! q-Borel transforms, the obstruction `nu`, formal fixpoint gauges and the
//! Birkhoff-Guenther polynomial normal form.
//!
//! Normal blocks `V_ij` are supported on `[-mu_i, -mu_j - 1]`: with
//! diagonal blocks written `z^{-mu} A`, the homological equation
//! `(sigma_q F) z^{-mu'} A' - z^{-mu} A F = V - U` couples the coefficients
//! `F_{n+mu'}` and `F_{n+mu}`, so each residue class of `n` modulo
//! `mu - mu'` carries exactly one free coefficient of `V`, taken in that
//! window. For the model pair of slopes `(0, -1)` this makes `V` the
//! constant `nu`.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use crate::laurent::{QContext, SeriesMatrix, WindowedLaurent};
use crate::linalg::{self, CMat, ZERO};
use crate::system::{gauge_action, upper_pairs, BlockMatrix, GaugeElement};
use crate::{Error, Result};

/// Level-`d` q-Borel transform `a_n -> q^{-d n(n-1)/2} a_n`.
pub fn qborel(f: &WindowedLaurent, q: Complex64, level: u32) -> WindowedLaurent {
    f.map_coeffs(|n, c| {
        let n = n as i64;
        c * linalg::qpow(q, -(level as i64) * n * (n - 1) / 2)
    })
}

/// Obstruction `sum_m q^{-d m(m-1)/2} q^{-r m} u_{dm+r}` of the residue
/// class `r` modulo `d`; `d = 1, r = 0` gives `B_{q,1} u (1)`.
///
/// A side of `u` that reaches the clipping bound must have a weighted edge
/// term below `tol` times the weighted sum scale.
pub fn nu_invariant(u: &WindowedLaurent, q: Complex64, d: u32, r: u32, tol: f64) -> Result<Complex64> {
    if d == 0 || r >= d {
        return Err(Error::Invalid(format!("residue {r} is not in [0, {d})")));
    }
    let (d, r) = (d as i64, r as i64);
    let weighted: Vec<(i32, Complex64)> = u
        .iter()
        .filter(|(n, _)| (*n as i64 - r).rem_euclid(d) == 0)
        .map(|(n, c)| {
            let m = (n as i64 - r).div_euclid(d);
            (n, c * linalg::qpow(q, -d * m * (m - 1) / 2 - r * m))
        })
        .collect();
    let total: Complex64 = weighted.iter().map(|(_, w)| w).sum();
    let scale = weighted.iter().fold(0.0f64, |a, (_, w)| a.max(w.norm()));
    let (exact_lo, exact_hi) = u.exact_range();
    let open_below = u.lo() <= -u.bound() || exact_lo.is_some();
    let open_above = u.hi() >= u.bound() || exact_hi.is_some();
    if let (Some(first), Some(last)) = (weighted.first(), weighted.last()) {
        if open_below && first.1.norm() > tol * scale.max(1.0) {
            return Err(Error::WindowTooSmall(format!(
                "weighted tail {:.3e} at index {} exceeds tolerance",
                first.1.norm(),
                first.0
            )));
        }
        if open_above && last.1.norm() > tol * scale.max(1.0) {
            return Err(Error::WindowTooSmall(format!(
                "weighted tail {:.3e} at index {} exceeds tolerance",
                last.1.norm(),
                last.0
            )));
        }
    }
    Ok(total)
}

/// Formal gauge `F(U)` with `F(U)[A_0] = A_U`, stored Borel-scaled: the
/// coefficient of `z^n` in block `(i, j)` is `q^{s(n)}` times the stored
/// value, with `s(n) = floor(n(n-1) / (2g))` for `n >= 2` and `0` otherwise,
/// `g` the smallest adjacent slope gap. Divergent coefficients therefore
/// stay representable far beyond the range of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct FormalGauge {
    q: Complex64,
    ranks: Vec<usize>,
    gap: i64,
    order: i32,
    scaled: BTreeMap<(usize, usize), SeriesMatrix>,
}

impl FormalGauge {
    pub fn scale_exponent(&self, n: i32) -> i64 {
        scale_exponent(n, self.gap)
    }

    pub fn order(&self) -> i32 {
        self.order
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Borel-scaled block `(i, j)`, `i < j`.
    pub fn scaled_block(&self, i: usize, j: usize) -> &SeriesMatrix {
        &self.scaled[&(i, j)]
    }

    /// True coefficient matrix of `z^n`; may overflow to infinity.
    pub fn coeff(&self, i: usize, j: usize, n: i32) -> CMat {
        self.scaled_block(i, j).coeff_matrix(n) * linalg::qpow(self.q, self.scale_exponent(n))
    }

    /// Unscaled gauge on `[-bound, bound]`; fails if a coefficient overflows.
    pub fn to_gauge(&self, bound: i32) -> Result<GaugeElement> {
        let mut g = GaugeElement::identity(self.ranks.clone(), bound);
        for (&(i, j), blk) in &self.scaled {
            let q = self.q;
            let gap = self.gap;
            let m = blk.map(|e| {
                e.map_coeffs(|n, c| if c == ZERO { c } else { c * linalg::qpow(q, scale_exponent(n, gap)) })
                    .with_bound(bound)
            });
            if let Some(bad) = m.entries().iter().find_map(|e| e.iter().find(|(_, c)| !c.is_finite())) {
                return Err(Error::EvaluationOverflow { index: bad.0 });
            }
            g.set_block(i, j, m)?;
        }
        Ok(g)
    }
}

fn scale_exponent(n: i32, gap: i64) -> i64 {
    if n < 2 {
        0
    } else {
        let n = n as i64;
        n * (n - 1) / 2 / gap
    }
}

/// Formal solution of `(sigma_q F) A_0 = A_U F` in the unipotent group,
/// through degree `order`.
///
/// Each block solves `z^d (sigma_q F_ij) A_j - A_i F_ij = R_ij` with
/// `R_ij = z^{mu_i} sum_{i<l<=j} U_il F_lj`, `d = mu_i - mu_j`, whose
/// coefficients satisfy `F_n = A_i^{-1}(q^{n-d} F_{n-d} A_j - R_n)`; blocks
/// are solved by increasing `j - i`, so every coefficient is computed once
/// and the result is the fixpoint of the contracting operator
/// `F -> A_U^{-1} (sigma_q F) A_0`.
pub fn formal_fixpoint(a: &BlockMatrix, q: Complex64, order: i32) -> Result<FormalGauge> {
    let shape = a.shape();
    let k = shape.k();
    if order < 0 {
        return Err(Error::Invalid("order must be nonnegative".into()));
    }
    if order > a.bound().max(order.min(4096)) {
        return Err(Error::Invalid(format!("order {order} exceeds the window")));
    }
    let gap = (0..k.saturating_sub(1)).map(|i| shape.gap(i, i + 1) as i64).min().unwrap_or(1);
    let mut inv = Vec::with_capacity(k);
    for i in 0..k {
        inv.push(linalg::inverse(shape.constant(i)).ok_or(Error::SingularDiagonalBlock { block: i })?);
    }
    let big = order.saturating_add(4096);
    let mut scaled: BTreeMap<(usize, usize), SeriesMatrix> = BTreeMap::new();
    for (i, j) in upper_pairs(k) {
        let d = shape.gap(i, j);
        let mu_i = shape.slope(i);
        let (ri, rj) = (shape.rank(i), shape.rank(j));
        // terms of R: (U_il, scaled F_lj or identity)
        let mut lowest = i32::MAX;
        for l in i + 1..=j {
            let u = a.block(i, l);
            if u.max_abs() == 0.0 {
                continue;
            }
            let f_lo = if l == j { 0 } else { scaled[&(l, j)].span().0 };
            lowest = lowest.min(mu_i + u.span().0 + f_lo);
        }
        if lowest == i32::MAX || lowest > order {
            scaled.insert((i, j), SeriesMatrix::zeros(ri, rj, big));
            continue;
        }
        let len = (order - lowest + 1) as usize;
        let mut phi: Vec<CMat> = vec![CMat::zeros(ri, rj); len];
        for idx in 0..len {
            let n = lowest + idx as i32;
            let s_n = scale_exponent(n, gap);
            let mut r = CMat::zeros(ri, rj);
            for l in i + 1..=j {
                let u = a.block(i, l);
                if u.max_abs() == 0.0 {
                    continue;
                }
                let (u_lo, u_hi) = u.span();
                for kk in u_lo..=u_hi {
                    let uk = u.coeff_matrix(kk);
                    if linalg::max_abs(&uk) == 0.0 {
                        continue;
                    }
                    let m = n - mu_i - kk;
                    if l == j {
                        if m == 0 {
                            r += uk * linalg::qpow(q, -s_n);
                        }
                    } else {
                        let f = scaled[&(l, j)].coeff_matrix(m);
                        if linalg::max_abs(&f) != 0.0 {
                            r += uk * f * linalg::qpow(q, scale_exponent(m, gap) - s_n);
                        }
                    }
                }
            }
            let mut next = -r;
            if idx as i32 >= d {
                let prev = &phi[idx - d as usize];
                let e = (n - d) as i64 + scale_exponent(n - d, gap) - s_n;
                next += prev * shape.constant(j) * linalg::qpow(q, e);
            }
            phi[idx] = &inv[i] * next;
        }
        let block = SeriesMatrix::from_fn(ri, rj, |x, y| {
            WindowedLaurent::new(lowest, phi.iter().map(|m| m[(x, y)]).collect()).with_bound(big)
        });
        scaled.insert((i, j), block);
    }
    Ok(FormalGauge { q, ranks: shape.ranks(), gap, order, scaled })
}

/// `F(U, V) = F(V) F(U)^{-1}`, the formal gauge with `F(U,V)[A_U] = A_V`,
/// unscaled on `[-bound, bound]`.
pub fn formal_link(a_u: &BlockMatrix, a_v: &BlockMatrix, q: Complex64, order: i32, bound: i32) -> Result<GaugeElement> {
    let fu = formal_fixpoint(a_u, q, order)?.to_gauge(bound)?;
    let fv = formal_fixpoint(a_v, q, order)?.to_gauge(bound)?;
    Ok(fv.compose(&fu.inverse()?))
}

/// Solution `(F, V)` of the homological equation for one pair of slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct RedPair {
    pub f: SeriesMatrix,
    pub v: SeriesMatrix,
}

/// `Red(mu, A, mu', A', U)`: the unique `F` on `[-N, N]` with
/// `(sigma_q F)(z^{-mu'} A') - (z^{-mu} A) F = V - U` and `V` supported on
/// `[-mu, -mu' - 1]`.
///
/// In each residue class the coefficients of `F` below the free index are
/// found from the bottom of the window upward and those above it from the
/// top downward, so both recurrences only ever multiply by small powers of
/// `q` and `F` decays on both sides; this is the solution over germs on
/// `C*` and, for convergent `U`, also the convergent one.
pub fn red_pair(ctx: &QContext, mu: i32, a: &CMat, mu_p: i32, a_p: &CMat, u: &SeriesMatrix) -> Result<RedPair> {
    let n_win = ctx.window();
    let q = ctx.q();
    let d = mu - mu_p;
    if d <= 0 {
        return Err(Error::Invalid(format!("slopes {mu} > {mu_p} required")));
    }
    if d > n_win {
        return Err(Error::WindowTooSmall(format!("slope gap {d} exceeds the window {n_win}")));
    }
    let (r, rp) = (a.nrows(), a_p.nrows());
    if (u.rows(), u.cols()) != (r, rp) {
        return Err(Error::Invalid("right-hand side has the wrong shape".into()));
    }
    let a_inv = linalg::inverse(a).ok_or(Error::SingularDiagonalBlock { block: 0 })?;
    let ap_inv = linalg::inverse(a_p).ok_or(Error::SingularDiagonalBlock { block: 1 })?;
    let (eq_lo, eq_hi) = (-n_win - mu, n_win - mu_p);
    let (u_lo, u_hi) = u.span();
    for n in u_lo..=u_hi {
        if (n < eq_lo || n > eq_hi) && linalg::max_abs(&u.coeff_matrix(n)) > 0.0 {
            return Err(Error::WindowTooSmall(format!(
                "coefficient {n} of the right-hand side lies outside the solvable range [{eq_lo}, {eq_hi}]"
            )));
        }
    }
    let width = (2 * n_win + 1) as usize;
    let mut f: Vec<CMat> = vec![CMat::zeros(r, rp); width];
    let at = |idx: i32| -> Option<usize> { (idx >= -n_win && idx <= n_win).then(|| (idx + n_win) as usize) };
    let mut v: Vec<CMat> = Vec::with_capacity(d as usize);
    for n0 in -mu..=-mu_p - 1 {
        // upward from the bottom of the window
        let mut n = n0;
        while n - d >= eq_lo {
            n -= d;
        }
        while n < n0 {
            let below = at(n + mu_p).map(|k| f[k].clone()).unwrap_or_else(|| CMat::zeros(r, rp));
            let val = &a_inv * (below * a_p * linalg::qpow(q, (n + mu_p) as i64) + u.coeff_matrix(n));
            if let Some(k) = at(n + mu) {
                f[k] = val;
            }
            n += d;
        }
        // downward from the top of the window
        let mut n = n0;
        while n + d <= eq_hi {
            n += d;
        }
        while n > n0 {
            let above = at(n + mu).map(|k| f[k].clone()).unwrap_or_else(|| CMat::zeros(r, rp));
            let val = (a * above - u.coeff_matrix(n)) * &ap_inv * linalg::qpow(q, -((n + mu_p) as i64));
            if let Some(k) = at(n + mu_p) {
                f[k] = val;
            }
            n -= d;
        }
        let lower = &f[at(n0 + mu_p).expect("inside window")];
        let upper = &f[at(n0 + mu).expect("inside window")];
        v.push(lower * a_p * linalg::qpow(q, (n0 + mu_p) as i64) - a * upper + u.coeff_matrix(n0));
    }
    let edge = f[..d as usize].iter().chain(&f[width - d as usize..]).fold(0.0f64, |m, c| m.max(linalg::max_abs(c)));
    let touched = edge > 0.0;
    let bound = n_win;
    let fm = SeriesMatrix::from_fn(r, rp, |x, y| {
        let s = WindowedLaurent::new(-n_win, f.iter().map(|m| m[(x, y)]).collect()).with_bound(bound);
        let s = if touched { s.mark_truncated(-n_win + d, n_win - d) } else { s };
        s.trimmed(0.0)
    });
    let vm = SeriesMatrix::from_fn(r, rp, |x, y| {
        WindowedLaurent::new(-mu, v.iter().map(|m| m[(x, y)]).collect()).with_bound(bound)
    });
    Ok(RedPair { f: fm, v: vm })
}

/// Result of a normal-form computation: `gauge[A_U] = A_V`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormResult {
    pub gauge: GaugeElement,
    pub normal: BlockMatrix,
    pub residual: f64,
}

/// Birkhoff-Guenther normal form by induction over `j - i`.
pub fn birkhoff_guenther(ctx: &QContext, a: &BlockMatrix) -> Result<NormalFormResult> {
    birkhoff_guenther_ordered(ctx, a, &upper_pairs(a.shape().k()))
}

/// Same with a caller-chosen processing order, which must list every pair
/// `(i, j)` after all pairs `(i, l)` and `(l, j)` with `i < l < j`.
pub fn birkhoff_guenther_ordered(ctx: &QContext, a: &BlockMatrix, order: &[(usize, usize)]) -> Result<NormalFormResult> {
    let shape = a.shape();
    let k = shape.k();
    let expected: BTreeSet<(usize, usize)> = upper_pairs(k).into_iter().collect();
    let given: BTreeSet<(usize, usize)> = order.iter().copied().collect();
    if given != expected || order.len() != expected.len() {
        return Err(Error::Invalid("processing order must list every upper pair once".into()));
    }
    let bound = ctx.window();
    let q = ctx.q();
    let mut f_blocks: BTreeMap<(usize, usize), SeriesMatrix> = BTreeMap::new();
    let mut v_blocks: BTreeMap<(usize, usize), SeriesMatrix> = BTreeMap::new();
    for &(i, j) in order {
        let mut rhs = a.block(i, j).map(|e| e.clone().with_bound(bound));
        for l in i + 1..j {
            let (Some(f_il), Some(v_il), Some(f_lj)) = (f_blocks.get(&(i, l)), v_blocks.get(&(i, l)), f_blocks.get(&(l, j)))
            else {
                return Err(Error::Invalid(format!(
                    "pair ({},{}) processed before its dependencies",
                    i + 1,
                    j + 1
                )));
            };
            rhs = rhs.add(&f_il.sigma_q(q, 1).mul(&a.block(l, j)));
            rhs = rhs.sub(&v_il.mul(f_lj));
        }
        let red = red_pair(ctx, shape.slope(i), shape.constant(i), shape.slope(j), shape.constant(j), &rhs)?;
        check_convergent(&red.f, q)?;
        f_blocks.insert((i, j), red.f);
        v_blocks.insert((i, j), red.v);
    }
    let mut gauge = GaugeElement::identity(shape.ranks(), bound);
    let mut normal = BlockMatrix::zero(shape.clone(), bound);
    for (i, j) in upper_pairs(k) {
        gauge.set_block(i, j, f_blocks.remove(&(i, j)).unwrap())?;
        normal.set_block(i, j, v_blocks.remove(&(i, j)).unwrap())?;
    }
    let image = gauge_action(&gauge, &a.with_bound(bound), q)?;
    let scale = a.blocks().values().map(|b| b.max_abs()).fold(1.0, f64::max);
    let residual = image.max_diff(&normal) / scale;
    Ok(NormalFormResult { gauge, normal, residual })
}

/// Normal form for blocks given as two-sided windows of germs on `C*`;
/// every block must decay towards both window edges.
pub fn ocstar_normalize(ctx: &QContext, a: &BlockMatrix) -> Result<NormalFormResult> {
    for (&(i, j), b) in a.blocks() {
        for e in b.entries() {
            let scale = e.max_abs();
            if scale == 0.0 {
                continue;
            }
            let n = ctx.window();
            let edge = e.coeff(-n).norm().max(e.coeff(n).norm());
            if edge > ctx.tol() * scale {
                return Err(Error::NotAGerm(format!(
                    "block ({},{}) does not decay at the window edge (relative edge coefficient {:.3e})",
                    i + 1,
                    j + 1,
                    edge / scale
                )));
            }
        }
    }
    birkhoff_guenther(ctx, a)
}

/// Geometric growth rate of the nonnegative-index coefficients over the top
/// quarter of the window, `None` when that range is negligible.
pub fn growth_rate(f: &WindowedLaurent, window: i32) -> Option<f64> {
    let scale = f.max_abs();
    if scale == 0.0 {
        return None;
    }
    let lo = (3 * window) / 4;
    let pts: Vec<(f64, f64)> = (lo..=window)
        .filter_map(|n| {
            let c = f.coeff(n).norm();
            (c > 1e-14 * scale).then(|| (n as f64, c.ln()))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    Some(((last.1 - first.1) / (last.0 - first.0)).exp())
}

/// Ratio test: coefficients growing faster than `|q|^{1/2}` per index at the
/// top of the window mean the window cannot hold the solution.
pub fn check_convergent(m: &SeriesMatrix, q: Complex64) -> Result<()> {
    let threshold = q.norm().sqrt();
    for e in m.entries() {
        if let Some(rate) = growth_rate(e, e.bound()) {
            if rate > threshold {
                return Err(Error::WindowTooSmall(format!(
                    "coefficients grow by {rate:.3} per index at the window edge (threshold {threshold:.3})"
                )));
            }
        }
    }
    Ok(())
}
