//! Complex Laurent series truncated to finite coefficient windows.
//!
//! A [`WindowedLaurent`] stores the coefficients `c_lo..=c_hi` of a finite
//! Laurent polynomial together with a clipping bound `N` (products never
//! leave `[-N, N]`) and an exactness interval. Coefficients inside the
//! exactness interval are exactly those of the untruncated computation;
//! clipping shrinks the interval and raises the `lossy` flag.

use num_complex::Complex64;

use crate::linalg::{self, CMat, ONE, ZERO};
use crate::{Error, Result};

pub const DEFAULT_WINDOW: i32 = 40;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Sentinel for an unbounded side of an exactness interval.
const UNBOUNDED: i32 = i32::MAX / 4;

/// The base `q`, the window half-width `N` and the default tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QContext {
    q: Complex64,
    window: i32,
    tol: f64,
}

impl QContext {
    pub fn new(q: Complex64, window: i32, tol: f64) -> Result<Self> {
        if !(q.is_finite() && q.norm() > 1.0 + 1e-6) {
            return Err(Error::Invalid(format!("|q| = {} must exceed 1 + 1e-6", q.norm())));
        }
        if window < 4 {
            return Err(Error::Invalid(format!("window half-width {window} must be at least 4")));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::Invalid(format!("tolerance {tol} must be positive")));
        }
        Ok(Self { q, window, tol })
    }

    /// `N = 40`, `tol = 1e-10`.
    pub fn with_q(q: Complex64) -> Result<Self> {
        Self::new(q, DEFAULT_WINDOW, DEFAULT_TOL)
    }

    pub fn q(&self) -> Complex64 {
        self.q
    }

    pub fn window(&self) -> i32 {
        self.window
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn ln_abs_q(&self) -> f64 {
        self.q.norm().ln()
    }

    pub fn with_window(&self, window: i32) -> Result<Self> {
        Self::new(self.q, window, self.tol)
    }

    pub fn with_tol(&self, tol: f64) -> Result<Self> {
        Self::new(self.q, self.window, tol)
    }

    pub fn qpow(&self, e: i64) -> Complex64 {
        linalg::qpow(self.q, e)
    }

    pub fn series(&self, lo: i32, coeffs: Vec<Complex64>) -> WindowedLaurent {
        WindowedLaurent::new(lo, coeffs).with_bound(self.window)
    }

    pub fn zero(&self) -> WindowedLaurent {
        WindowedLaurent::zero().with_bound(self.window)
    }

    pub fn constant(&self, c: Complex64) -> WindowedLaurent {
        WindowedLaurent::constant(c).with_bound(self.window)
    }

    pub fn monomial(&self, n: i32, c: Complex64) -> WindowedLaurent {
        WindowedLaurent::monomial(n, c).with_bound(self.window)
    }
}

/// Complex Laurent polynomial `sum_{n=lo}^{hi} c_n z^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedLaurent {
    lo: i32,
    coeffs: Vec<Complex64>,
    bound: i32,
    exact: (i32, i32),
    lossy: bool,
}

impl WindowedLaurent {
    /// An empty coefficient list is read as the zero series at index `lo`.
    pub fn new(lo: i32, mut coeffs: Vec<Complex64>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(ZERO);
        }
        Self {
            lo,
            coeffs,
            bound: UNBOUNDED,
            exact: (-UNBOUNDED, UNBOUNDED),
            lossy: false,
        }
    }

    pub fn from_fn(lo: i32, hi: i32, f: impl Fn(i32) -> Complex64) -> Self {
        assert!(lo <= hi, "empty window [{lo}, {hi}]");
        Self::new(lo, (lo..=hi).map(f).collect())
    }

    pub fn zero() -> Self {
        Self::new(0, vec![ZERO])
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(0, vec![c])
    }

    pub fn monomial(n: i32, c: Complex64) -> Self {
        Self::new(n, vec![c])
    }

    /// Sets the clipping bound, clipping the stored window if needed.
    pub fn with_bound(mut self, bound: i32) -> Self {
        self.bound = bound;
        if self.lo < -bound || self.hi() > bound {
            let lo = self.lo.max(-bound);
            let hi = self.hi().min(bound);
            self = self.restrict(lo, hi);
        }
        self
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.coeffs.len() as i32 - 1
    }

    pub fn bound(&self) -> i32 {
        self.bound
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of `z^n`; zero outside the window.
    pub fn coeff(&self, n: i32) -> Complex64 {
        if n < self.lo || n > self.hi() {
            ZERO
        } else {
            self.coeffs[(n - self.lo) as usize]
        }
    }

    pub fn is_lossy(&self) -> bool {
        self.lossy
    }

    /// Interval of indices whose coefficients are exact; `None` on an
    /// unbounded side.
    pub fn exact_range(&self) -> (Option<i32>, Option<i32>) {
        let lo = (self.exact.0 > -UNBOUNDED).then_some(self.exact.0);
        let hi = (self.exact.1 < UNBOUNDED).then_some(self.exact.1);
        (lo, hi)
    }

    pub fn is_exact_at(&self, n: i32) -> bool {
        self.exact.0 <= n && n <= self.exact.1
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, Complex64)> + '_ {
        self.coeffs.iter().enumerate().map(move |(k, &c)| (self.lo + k as i32, c))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, c| acc.max(c.norm()))
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    /// Least index whose coefficient exceeds `tol` times the largest one;
    /// `None` stands for valuation `+infinity`.
    pub fn valuation(&self, tol: f64) -> Option<i32> {
        let scale = self.max_abs();
        if scale == 0.0 {
            return None;
        }
        self.iter().find(|(_, c)| c.norm() > tol * scale).map(|(n, _)| n)
    }

    /// Copy of the series on `[lo, hi]`, padding with zeros. Dropping
    /// nonzero coefficients marks the result lossy.
    pub fn restrict(&self, lo: i32, hi: i32) -> Self {
        assert!(lo <= hi, "empty window [{lo}, {hi}]");
        let dropped_below = self.iter().any(|(n, c)| n < lo && c != ZERO);
        let dropped_above = self.iter().any(|(n, c)| n > hi && c != ZERO);
        let coeffs = (lo..=hi).map(|n| self.coeff(n)).collect();
        let mut exact = self.exact;
        if dropped_below {
            exact.0 = exact.0.max(lo);
        }
        if dropped_above {
            exact.1 = exact.1.min(hi);
        }
        Self {
            lo,
            coeffs,
            bound: self.bound,
            exact,
            lossy: self.lossy || dropped_below || dropped_above,
        }
    }

    /// Flags the series as a truncation of an infinite one whose stored
    /// coefficients are trusted only on `[lo, hi]`.
    pub fn mark_truncated(mut self, lo: i32, hi: i32) -> Self {
        self.lossy = true;
        self.exact = (self.exact.0.max(lo), self.exact.1.min(hi));
        self
    }

    /// Removes leading and trailing coefficients with `|c| <= eps`.
    pub fn trimmed(&self, eps: f64) -> Self {
        let keep: Vec<i32> = self.iter().filter(|(_, c)| c.norm() > eps).map(|(n, _)| n).collect();
        match (keep.first(), keep.last()) {
            (Some(&lo), Some(&hi)) => {
                let mut out = self.restrict(lo, hi);
                out.lossy = self.lossy;
                out.exact = self.exact;
                out
            }
            _ => {
                let mut out = Self::zero().with_bound(self.bound);
                out.lossy = self.lossy;
                out.exact = self.exact;
                out
            }
        }
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        let lo = self.lo.min(other.lo);
        let hi = self.hi().max(other.hi());
        let coeffs = (lo..=hi).map(|n| self.coeff(n) + other.coeff(n) * sign).collect();
        Self {
            lo,
            coeffs,
            bound: self.bound.min(other.bound),
            exact: (self.exact.0.max(other.exact.0), self.exact.1.min(other.exact.1)),
            lossy: self.lossy || other.lossy,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -1.0)
    }

    pub fn neg(&self) -> Self {
        self.scale(-ONE)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|x| *x *= c);
        out
    }

    /// Truncation-aware product: the natural window is the sumset of the
    /// two windows clipped to `[-N, N]`.
    pub fn mul(&self, other: &Self) -> Self {
        let bound = self.bound.min(other.bound);
        let full_lo = self.lo as i64 + other.lo as i64;
        let full_hi = self.hi() as i64 + other.hi() as i64;
        let lo = full_lo.max(-(bound as i64));
        let hi = full_hi.min(bound as i64);
        let clipped_below = full_lo < lo;
        let clipped_above = full_hi > hi;
        if lo > hi {
            let at = if full_lo > bound as i64 { bound } else { -bound };
            let mut out = Self::monomial(at, ZERO).with_bound(bound);
            out.lossy = true;
            out.exact = (1, 0);
            return out;
        }
        let (lo, hi) = (lo as i32, hi as i32);
        let mut coeffs = vec![ZERO; (hi - lo + 1) as usize];
        for (i, a) in self.iter() {
            if a == ZERO {
                continue;
            }
            let j_lo = (lo - i).max(other.lo);
            let j_hi = (hi - i).min(other.hi());
            for j in j_lo..=j_hi {
                coeffs[(i + j - lo) as usize] += a * other.coeff(j);
            }
        }
        let trusted = |n: i64| product_trusted(self, other, n);
        let mut run: Option<(i32, i32)> = None;
        let mut best: Option<(i32, i32)> = None;
        for n in lo..=hi {
            if trusted(n as i64) {
                run = Some(match run {
                    Some((a, _)) => (a, n),
                    None => (n, n),
                });
                let r = run.unwrap();
                if best.is_none_or(|b| r.1 - r.0 > b.1 - b.0) {
                    best = Some(r);
                }
            } else {
                run = None;
            }
        }
        let exact = match best {
            None => (1, 0),
            Some((a, b)) => {
                let below_ok = a == lo && !clipped_below && trusted(full_lo.min(lo as i64) - 1);
                let above_ok = b == hi && !clipped_above && trusted(full_hi.max(hi as i64) + 1);
                (
                    if below_ok { -UNBOUNDED } else { a },
                    if above_ok { UNBOUNDED } else { b },
                )
            }
        };
        Self {
            lo,
            coeffs,
            bound,
            exact,
            lossy: self.lossy || other.lossy || clipped_below || clipped_above,
        }
    }

    /// Multiplication by `z^k`, clipped to the bound.
    pub fn shift(&self, k: i32) -> Self {
        let mut out = self.clone();
        out.lo += k;
        if out.exact.0 > -UNBOUNDED {
            out.exact.0 += k;
        }
        if out.exact.1 < UNBOUNDED {
            out.exact.1 += k;
        }
        let bound = out.bound;
        if out.lo < -bound || out.hi() > bound {
            let lo = out.lo.max(-bound);
            let hi = out.hi().min(bound);
            if lo > hi {
                let mut z = Self::zero().with_bound(bound);
                z.lossy = true;
                z.exact = (1, 0);
                return z;
            }
            out = out.restrict(lo, hi);
        }
        out
    }

    /// `f(z) -> f(q^m z)`: coefficient `n` is multiplied by `q^{m n}`.
    pub fn sigma_q(&self, q: Complex64, m: i32) -> Self {
        let mut out = self.clone();
        if m == 0 {
            return out;
        }
        for (k, c) in out.coeffs.iter_mut().enumerate() {
            let n = self.lo as i64 + k as i64;
            *c *= linalg::qpow(q, m as i64 * n);
        }
        out
    }

    /// Coefficientwise map `c_n -> w(n) c_n`.
    pub fn map_coeffs(&self, w: impl Fn(i32, Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        for (k, c) in out.coeffs.iter_mut().enumerate() {
            *c = w(self.lo + k as i32, *c);
        }
        out
    }

    /// `sum c_n z^n`, Horner in `z` for `n >= 0` and in `1/z` for `n < 0`.
    pub fn evaluate(&self, z: Complex64) -> Result<Complex64> {
        if z == ZERO {
            return Err(Error::Invalid("evaluation at z = 0".into()));
        }
        let hi = self.hi();
        let mut pos = ZERO;
        if hi >= 0 {
            for n in (self.lo.max(0)..=hi).rev() {
                pos = pos * z + self.coeff(n);
            }
            if self.lo > 0 {
                pos *= z.powi(self.lo);
            }
        }
        let mut neg = ZERO;
        if self.lo < 0 {
            let w = z.inv();
            let top = hi.min(-1);
            for n in self.lo..=top {
                neg = neg * w + self.coeff(n);
            }
            neg *= w.powi(-top);
        }
        let value = pos + neg;
        if !value.is_finite() {
            let index = self
                .iter()
                .find(|(n, c)| !(*c * z.powi(*n)).is_finite())
                .map_or(self.lo, |(n, _)| n);
            return Err(Error::EvaluationOverflow { index });
        }
        Ok(value)
    }

    /// Largest coefficient among the `k` lowest and `k` highest indices,
    /// relative to the largest coefficient overall.
    pub fn tail_ratios(&self, k: usize) -> (f64, f64) {
        let scale = self.max_abs();
        if scale == 0.0 {
            return (0.0, 0.0);
        }
        let len = self.coeffs.len();
        let k = k.min(len);
        let low = self.coeffs[..k].iter().fold(0.0f64, |a, c| a.max(c.norm()));
        let high = self.coeffs[len - k..].iter().fold(0.0f64, |a, c| a.max(c.norm()));
        (low / scale, high / scale)
    }
}

/// Whether coefficient `n` of `f g` is free of unknown contributions.
fn product_trusted(f: &WindowedLaurent, g: &WindowedLaurent, n: i64) -> bool {
    const INF: i64 = 1 << 40;
    fn widen(e: i32) -> i64 {
        if e <= -UNBOUNDED {
            -INF
        } else if e >= UNBOUNDED {
            INF
        } else {
            e as i64
        }
    }
    fn unknown(s: &WindowedLaurent) -> Vec<(i64, i64)> {
        let (a, b) = (widen(s.exact.0), widen(s.exact.1));
        if a > b {
            return vec![(-INF, INF)];
        }
        let mut out = Vec::new();
        if a > -INF {
            out.push((-INF, a - 1));
        }
        if b < INF {
            out.push((b + 1, INF));
        }
        out
    }
    fn possible(s: &WindowedLaurent) -> Vec<(i64, i64)> {
        let mut out = unknown(s);
        out.push((s.lo as i64, s.hi() as i64));
        out
    }
    let reflect = |iv: (i64, i64)| (n - iv.1, n - iv.0);
    let meets = |a: (i64, i64), b: (i64, i64)| a.0.max(b.0) <= a.1.min(b.1);
    let (uf, ug, pf, pg) = (unknown(f), unknown(g), possible(f), possible(g));
    let bad1 = uf.iter().any(|&a| pg.iter().any(|&b| meets(a, reflect(b))));
    let bad2 = pf.iter().any(|&a| ug.iter().any(|&b| meets(a, reflect(b))));
    !(bad1 || bad2)
}

/// Dense matrix of windowed series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<WindowedLaurent>,
}

impl SeriesMatrix {
    pub fn zeros(rows: usize, cols: usize, bound: i32) -> Self {
        Self {
            rows,
            cols,
            entries: vec![WindowedLaurent::zero().with_bound(bound); rows * cols],
        }
    }

    pub fn identity(n: usize, bound: i32) -> Self {
        let mut m = Self::zeros(n, n, bound);
        for i in 0..n {
            m.set(i, i, WindowedLaurent::constant(ONE).with_bound(bound));
        }
        m
    }

    /// `z^k C` for a constant matrix `C`.
    pub fn from_constant(c: &CMat, k: i32, bound: i32) -> Self {
        let mut m = Self::zeros(c.nrows(), c.ncols(), bound);
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                if c[(i, j)] != ZERO {
                    m.set(i, j, WindowedLaurent::monomial(k, c[(i, j)]).with_bound(bound));
                }
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> WindowedLaurent) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self { rows, cols, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &WindowedLaurent {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: WindowedLaurent) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn entries(&self) -> &[WindowedLaurent] {
        &self.entries
    }

    pub fn block(&self, r0: usize, c0: usize, h: usize, w: usize) -> Self {
        Self::from_fn(h, w, |i, j| self.get(r0 + i, c0 + j).clone())
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Self) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self.set(r0 + i, c0 + j, b.get(i, j).clone());
            }
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(&WindowedLaurent, &WindowedLaurent) -> WindowedLaurent) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, WindowedLaurent::add)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, WindowedLaurent::sub)
    }

    pub fn map(&self, f: impl Fn(&WindowedLaurent) -> WindowedLaurent) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|e| e.scale(c))
    }

    pub fn sigma_q(&self, q: Complex64, m: i32) -> Self {
        self.map(|e| e.sigma_q(q, m))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "shape mismatch in product");
        let bound = self
            .entries
            .iter()
            .chain(&other.entries)
            .map(|e| e.bound())
            .min()
            .unwrap_or(UNBOUNDED);
        Self::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = WindowedLaurent::zero().with_bound(bound);
            for l in 0..self.cols {
                let a = self.get(i, l);
                let b = other.get(l, j);
                if a.max_abs() == 0.0 || b.max_abs() == 0.0 {
                    continue;
                }
                acc = acc.add(&a.mul(b));
            }
            acc
        })
    }

    /// Left multiplication by a constant matrix.
    pub fn left_constant(&self, c: &CMat) -> Self {
        assert_eq!(c.ncols(), self.rows);
        let bound = self.entries.first().map_or(UNBOUNDED, |e| e.bound());
        Self::from_fn(c.nrows(), self.cols, |i, j| {
            let mut acc = WindowedLaurent::zero().with_bound(bound);
            for l in 0..self.rows {
                if c[(i, l)] != ZERO {
                    acc = acc.add(&self.get(l, j).scale(c[(i, l)]));
                }
            }
            acc
        })
    }

    /// Right multiplication by a constant matrix.
    pub fn right_constant(&self, c: &CMat) -> Self {
        assert_eq!(c.nrows(), self.cols);
        let bound = self.entries.first().map_or(UNBOUNDED, |e| e.bound());
        Self::from_fn(self.rows, c.ncols(), |i, j| {
            let mut acc = WindowedLaurent::zero().with_bound(bound);
            for l in 0..self.cols {
                if c[(l, j)] != ZERO {
                    acc = acc.add(&self.get(i, l).scale(c[(l, j)]));
                }
            }
            acc
        })
    }

    pub fn shift(&self, k: i32) -> Self {
        self.map(|e| e.shift(k))
    }

    /// Constant matrix of the coefficients of `z^n`.
    pub fn coeff_matrix(&self, n: i32) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| self.get(i, j).coeff(n))
    }

    pub fn evaluate(&self, z: Complex64) -> Result<CMat> {
        let mut out = CMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self.get(i, j).evaluate(z)?;
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, e| a.max(e.max_abs()))
    }

    /// Smallest and largest stored index over all entries.
    pub fn span(&self) -> (i32, i32) {
        let lo = self.entries.iter().map(|e| e.lo()).min().unwrap_or(0);
        let hi = self.entries.iter().map(|e| e.hi()).max().unwrap_or(0);
        (lo, hi)
    }

    pub fn is_lossy(&self) -> bool {
        self.entries.iter().any(|e| e.is_lossy())
    }

    /// Largest coefficient-wise difference, restricted to indices where
    /// both entries are exact.
    pub fn max_diff_on_exact(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.entries.iter().zip(&other.entries) {
            let lo = a.lo().min(b.lo());
            let hi = a.hi().max(b.hi());
            for n in lo..=hi {
                if a.is_exact_at(n) && b.is_exact_at(n) {
                    worst = worst.max((a.coeff(n) - b.coeff(n)).norm());
                }
            }
        }
        worst
    }

    /// Inverse of a block upper-triangular matrix whose diagonal blocks are
    /// `z^{-mu_i} A_i` with constant invertible `A_i`, by back-substitution.
    pub fn inverse_block_upper(&self, ranks: &[usize], tol: f64) -> Result<Self> {
        let n: usize = ranks.iter().sum();
        if n != self.rows || n != self.cols {
            return Err(Error::Invalid(format!(
                "ranks sum to {n} but the matrix is {}x{}",
                self.rows, self.cols
            )));
        }
        let offsets: Vec<usize> = ranks
            .iter()
            .scan(0, |acc, &r| {
                let o = *acc;
                *acc += r;
                Some(o)
            })
            .collect();
        let k = ranks.len();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for bi in 0..k {
            for bj in 0..bi {
                let blk = self.block(offsets[bi], offsets[bj], ranks[bi], ranks[bj]);
                if blk.max_abs() > tol * scale {
                    return Err(Error::Invalid(format!("block ({bi},{bj}) below the diagonal is nonzero")));
                }
            }
        }
        let bound = self.entries.first().map_or(UNBOUNDED, |e| e.bound());
        // diagonal blocks: z^{-mu} A
        let mut diag_inv = Vec::with_capacity(k);
        for b in 0..k {
            let blk = self.block(offsets[b], offsets[b], ranks[b], ranks[b]);
            let bscale = blk.max_abs();
            if bscale == 0.0 {
                return Err(Error::SingularDiagonalBlock { block: b });
            }
            let mut degree: Option<i32> = None;
            for e in blk.entries() {
                for (idx, c) in e.iter() {
                    if c.norm() > tol * bscale {
                        match degree {
                            None => degree = Some(idx),
                            Some(d) if d != idx => {
                                return Err(Error::Invalid(format!(
                                    "diagonal block {b} is not a monomial matrix z^-mu A"
                                )))
                            }
                            _ => {}
                        }
                    }
                }
            }
            let d = degree.unwrap();
            let a = blk.coeff_matrix(d);
            if linalg::is_singular(&a, tol) {
                return Err(Error::SingularDiagonalBlock { block: b });
            }
            let a_inv = linalg::inverse(&a).ok_or(Error::SingularDiagonalBlock { block: b })?;
            diag_inv.push(SeriesMatrix::from_constant(&a_inv, -d, bound));
        }
        let mut inv = SeriesMatrix::zeros(n, n, bound);
        for j in 0..k {
            inv.set_block(offsets[j], offsets[j], &diag_inv[j]);
            for i in (0..j).rev() {
                let mut acc = SeriesMatrix::zeros(ranks[i], ranks[j], bound);
                for l in i + 1..=j {
                    let m_il = self.block(offsets[i], offsets[l], ranks[i], ranks[l]);
                    let x_lj = inv.block(offsets[l], offsets[j], ranks[l], ranks[j]);
                    acc = acc.add(&m_il.mul(&x_lj));
                }
                let x_ij = diag_inv[i].mul(&acc).scale(-ONE);
                inv.set_block(offsets[i], offsets[j], &x_ij);
            }
        }
        Ok(inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn ctx() -> QContext {
        QContext::new(c(3.0), 4, 1e-10).unwrap()
    }

    #[test]
    fn context_validation() {
        assert!(QContext::new(c(0.5), 40, 1e-10).is_err());
        assert!(QContext::new(c(1.0 + 1e-7), 40, 1e-10).is_err());
        assert!(QContext::new(c(2.0), 3, 1e-10).is_err());
        assert!(QContext::new(Complex64::new(0.0, 2.0), 40, 1e-10).is_ok());
    }

    #[test]
    fn difference_of_squares() {
        let ctx = ctx();
        let f = ctx.series(0, vec![c(1.0), c(1.0)]);
        let g = ctx.series(0, vec![c(1.0), c(-1.0)]);
        let p = f.mul(&g);
        assert_eq!(p.coeff(0), c(1.0));
        assert_eq!(p.coeff(1), c(0.0));
        assert_eq!(p.coeff(2), c(-1.0));
        assert!(!p.is_lossy());
    }

    #[test]
    fn adding_zero_is_identity() {
        let ctx = ctx();
        let f = ctx.series(-2, vec![c(1.0), c(2.0), c(3.0)]);
        let s = f.add(&ctx.zero());
        for n in -4..=4 {
            assert_eq!(s.coeff(n), f.coeff(n));
        }
    }

    #[test]
    fn clipped_product_tracks_exactness() {
        let ctx = ctx();
        let f = ctx.series(-3, vec![c(1.0); 7]);
        let z2 = ctx.monomial(2, c(1.0));
        let p = f.mul(&z2);
        assert_eq!((p.lo(), p.hi()), (-1, 4));
        assert!(p.is_lossy());
        assert_eq!(p.exact_range(), (None, Some(4)));
        assert!(p.is_exact_at(-1) && p.is_exact_at(4) && !p.is_exact_at(5));
        for n in -1..=4 {
            assert_eq!(p.coeff(n), c(1.0));
        }
    }

    #[test]
    fn sigma_q_monomial_and_inverse() {
        let q = c(3.0);
        let z2 = WindowedLaurent::monomial(2, c(1.0));
        assert_eq!(z2.sigma_q(q, 1).coeff(2), c(9.0));
        let k = WindowedLaurent::constant(c(5.0));
        assert_eq!(k.sigma_q(q, 1).coeff(0), c(5.0));
        let f = WindowedLaurent::new(-2, vec![c(1.0), c(-2.0), c(0.5), c(4.0)]);
        let back = f.sigma_q(q, 1).sigma_q(q, -1);
        for n in -2..=1 {
            assert!((back.coeff(n) - f.coeff(n)).norm() <= 1e-15 * f.coeff(n).norm());
        }
    }

    #[test]
    fn evaluation_basics() {
        let f = WindowedLaurent::new(0, vec![c(1.0), c(1.0)]);
        assert_eq!(f.evaluate(c(2.0)).unwrap(), c(3.0));
        let g = WindowedLaurent::monomial(-1, c(1.0));
        assert_eq!(g.evaluate(c(2.0)).unwrap(), c(0.5));
        let h = WindowedLaurent::new(-2, vec![c(1.0), c(2.0), c(3.0), c(4.0)]);
        let z = Complex64::new(0.7, -1.1);
        let expect = z.powi(-2) + z.powi(-1) * 2.0 + 3.0 + z * 4.0;
        assert!((h.evaluate(z).unwrap() - expect).norm() < 1e-14);
        assert!(f.evaluate(c(0.0)).is_err());
    }

    #[test]
    fn evaluation_overflow_reports_index() {
        let f = WindowedLaurent::new(0, vec![c(1.0), c(0.0), c(1e300)]);
        match f.evaluate(c(1e10)) {
            Err(Error::EvaluationOverflow { index }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn valuation_is_window_relative() {
        let f = WindowedLaurent::new(-3, vec![c(1e-14), c(0.0), c(2.0), c(1.0)]);
        assert_eq!(f.valuation(1e-10), Some(-1));
        assert_eq!(WindowedLaurent::zero().valuation(1e-10), None);
    }

    #[test]
    fn inverse_of_diagonal_monomials() {
        let bound = 10;
        let mut m = SeriesMatrix::identity(2, bound);
        m.set(1, 1, WindowedLaurent::monomial(1, c(1.0)).with_bound(bound));
        let inv = m.inverse_block_upper(&[1, 1], 1e-12).unwrap();
        assert_eq!(inv.get(1, 1).coeff(-1), c(1.0));
        assert_eq!(inv.get(0, 0).coeff(0), c(1.0));
    }

    #[test]
    fn inverse_of_two_by_two_upper() {
        let bound = 10;
        let u = WindowedLaurent::new(0, vec![c(2.0), c(-1.0), c(0.5)]).with_bound(bound);
        let mut m = SeriesMatrix::identity(2, bound);
        m.set(0, 1, u.clone());
        m.set(1, 1, WindowedLaurent::monomial(1, c(1.0)).with_bound(bound));
        let inv = m.inverse_block_upper(&[1, 1], 1e-12).unwrap();
        let expect = u.shift(-1).neg();
        for n in -2..=3 {
            assert_eq!(inv.get(0, 1).coeff(n), expect.coeff(n));
        }
        let prod = m.mul(&inv);
        let id = SeriesMatrix::identity(2, bound);
        assert!(prod.max_diff_on_exact(&id) < 1e-14);
    }

    #[test]
    fn singular_diagonal_block_is_rejected() {
        let bound = 10;
        let mut m = SeriesMatrix::identity(2, bound);
        m.set(1, 1, WindowedLaurent::constant(c(1e-20)).with_bound(bound));
        m.set(0, 0, WindowedLaurent::constant(c(1.0)).with_bound(bound));
        let mut blk = SeriesMatrix::zeros(2, 2, bound);
        blk.set(0, 0, WindowedLaurent::constant(c(1.0)).with_bound(bound));
        blk.set(0, 1, WindowedLaurent::constant(c(1.0)).with_bound(bound));
        blk.set(1, 0, WindowedLaurent::constant(c(1.0)).with_bound(bound));
        blk.set(1, 1, WindowedLaurent::constant(c(1.0)).with_bound(bound));
        assert!(matches!(
            blk.inverse_block_upper(&[2], 1e-10),
            Err(Error::SingularDiagonalBlock { block: 0 })
        ));
    }
}
