//! Block upper-triangular q-difference systems in canonical form
//! `A_U = diag(z^{-mu_i} A_i) + (U_ij)_{i<j}` and the unipotent gauge group
//! acting on them by `F[A] = (sigma_q F) A F^{-1}`.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::laurent::{SeriesMatrix, WindowedLaurent};
use crate::linalg::{self, CMat};
use crate::{Error, Result};

/// Slopes `mu_1 > ... > mu_k` and invertible constants `A_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockShape {
    slopes: Vec<i32>,
    constants: Vec<CMat>,
}

impl BlockShape {
    pub fn new(slopes: Vec<i32>, constants: Vec<CMat>, tol: f64) -> Result<Self> {
        if slopes.is_empty() || slopes.len() != constants.len() {
            return Err(Error::Invalid(format!(
                "{} slopes for {} constant blocks",
                slopes.len(),
                constants.len()
            )));
        }
        if slopes.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Invalid(format!("slopes {slopes:?} are not strictly decreasing")));
        }
        for (i, a) in constants.iter().enumerate() {
            if a.nrows() == 0 || a.nrows() != a.ncols() {
                return Err(Error::Invalid(format!("constant block {i} is not a nonempty square matrix")));
            }
            if !a.iter().all(|c| c.is_finite()) {
                return Err(Error::Invalid(format!("constant block {i} has non-finite entries")));
            }
            if linalg::is_singular(a, tol) {
                return Err(Error::SingularDiagonalBlock { block: i });
            }
        }
        Ok(Self { slopes, constants })
    }

    /// Scalar blocks `A_i = (c_i)`.
    pub fn scalar(slopes: Vec<i32>, constants: &[Complex64]) -> Result<Self> {
        Self::new(slopes, constants.iter().map(|&c| linalg::scalar(c)).collect(), 1e-14)
    }

    pub fn k(&self) -> usize {
        self.slopes.len()
    }

    pub fn slopes(&self) -> &[i32] {
        &self.slopes
    }

    pub fn slope(&self, i: usize) -> i32 {
        self.slopes[i]
    }

    /// `mu_i - mu_j`.
    pub fn gap(&self, i: usize, j: usize) -> i32 {
        self.slopes[i] - self.slopes[j]
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.constants.iter().map(|a| a.nrows()).collect()
    }

    pub fn rank(&self, i: usize) -> usize {
        self.constants[i].nrows()
    }

    pub fn dim(&self) -> usize {
        self.constants.iter().map(|a| a.nrows()).sum()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.constants[..i].iter().map(|a| a.nrows()).sum()
    }

    pub fn constant(&self, i: usize) -> &CMat {
        &self.constants[i]
    }

    pub fn constants(&self) -> &[CMat] {
        &self.constants
    }

    /// Same slopes with new constants, e.g. `alpha_i A_i`.
    pub fn with_constants(&self, constants: Vec<CMat>) -> Result<Self> {
        Self::new(self.slopes.clone(), constants, 1e-14)
    }

    /// Eigenvalues of every `A_i`, with multiplicity.
    pub fn spectra(&self) -> Result<Vec<Vec<Complex64>>> {
        self.constants.iter().map(linalg::eigenvalues).collect()
    }

    /// The graded matrix `A_0 = diag(z^{-mu_i} A_i)` as series.
    pub fn diagonal_series(&self, bound: i32) -> SeriesMatrix {
        let mut m = SeriesMatrix::zeros(self.dim(), self.dim(), bound);
        for i in 0..self.k() {
            let blk = SeriesMatrix::from_constant(&self.constants[i], -self.slopes[i], bound);
            m.set_block(self.offset(i), self.offset(i), &blk);
        }
        m
    }

    pub fn diagonal_block_eval(&self, i: usize, z: Complex64) -> CMat {
        &self.constants[i] * z.powi(-self.slopes[i])
    }

    pub fn diagonal_eval(&self, z: Complex64) -> CMat {
        let mut m = CMat::zeros(self.dim(), self.dim());
        for i in 0..self.k() {
            let o = self.offset(i);
            let r = self.rank(i);
            m.view_mut((o, o), (r, r)).copy_from(&self.diagonal_block_eval(i, z));
        }
        m
    }
}

/// Pairs `(i, j)`, `i < j`, ordered by increasing `j - i` then `i`.
pub fn upper_pairs(k: usize) -> Vec<(usize, usize)> {
    (1..k).flat_map(|g| (0..k - g).map(move |i| (i, i + g))).collect()
}

fn check_block(rows: usize, cols: usize, m: &SeriesMatrix, ij: (usize, usize)) -> Result<()> {
    if (m.rows(), m.cols()) != (rows, cols) {
        return Err(Error::Invalid(format!(
            "block ({},{}) is {}x{}, expected {rows}x{cols}",
            ij.0 + 1,
            ij.1 + 1,
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Off-diagonal data `U_ij` over a [`BlockShape`]; missing blocks are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    shape: BlockShape,
    bound: i32,
    blocks: BTreeMap<(usize, usize), SeriesMatrix>,
}

impl BlockMatrix {
    /// `A_0`: every `U_ij` zero.
    pub fn zero(shape: BlockShape, bound: i32) -> Self {
        Self { shape, bound, blocks: BTreeMap::new() }
    }

    pub fn shape(&self) -> &BlockShape {
        &self.shape
    }

    pub fn bound(&self) -> i32 {
        self.bound
    }

    pub fn set_block(&mut self, i: usize, j: usize, m: SeriesMatrix) -> Result<()> {
        if !(i < j && j < self.shape.k()) {
            return Err(Error::Invalid(format!("block ({},{}) is not strictly upper", i + 1, j + 1)));
        }
        check_block(self.shape.rank(i), self.shape.rank(j), &m, (i, j))?;
        self.blocks.insert((i, j), m.map(|e| e.clone().with_bound(self.bound)));
        Ok(())
    }

    pub fn with_block(mut self, i: usize, j: usize, m: SeriesMatrix) -> Result<Self> {
        self.set_block(i, j, m)?;
        Ok(self)
    }

    /// Scalar entry shortcut for rank-one blocks.
    pub fn with_scalar(self, i: usize, j: usize, u: WindowedLaurent) -> Result<Self> {
        self.with_block(i, j, SeriesMatrix::from_fn(1, 1, |_, _| u.clone()))
    }

    pub fn block(&self, i: usize, j: usize) -> SeriesMatrix {
        self.blocks
            .get(&(i, j))
            .cloned()
            .unwrap_or_else(|| SeriesMatrix::zeros(self.shape.rank(i), self.shape.rank(j), self.bound))
    }

    pub fn blocks(&self) -> &BTreeMap<(usize, usize), SeriesMatrix> {
        &self.blocks
    }

    pub fn is_graded(&self, tol: f64) -> bool {
        self.blocks.values().all(|b| b.max_abs() <= tol)
    }

    /// `A_U` as one series matrix.
    pub fn to_series(&self) -> SeriesMatrix {
        let mut m = self.shape.diagonal_series(self.bound);
        for (&(i, j), b) in &self.blocks {
            m.set_block(self.shape.offset(i), self.shape.offset(j), b);
        }
        m
    }

    pub fn evaluate(&self, z: Complex64) -> Result<CMat> {
        let mut m = self.shape.diagonal_eval(z);
        for (&(i, j), b) in &self.blocks {
            let v = b.evaluate(z)?;
            m.view_mut((self.shape.offset(i), self.shape.offset(j)), (v.nrows(), v.ncols()))
                .copy_from(&v);
        }
        Ok(m)
    }

    /// `A_0` with the same shape.
    pub fn graded_part(&self) -> Self {
        Self::zero(self.shape.clone(), self.bound)
    }

    /// Reads the strictly upper blocks of a full series matrix.
    pub fn from_series(shape: BlockShape, m: &SeriesMatrix) -> Self {
        let bound = m.entries().first().map_or(40, |e| e.bound());
        let mut out = Self::zero(shape, bound);
        for (i, j) in upper_pairs(out.shape.k()) {
            let b = m.block(out.shape.offset(i), out.shape.offset(j), out.shape.rank(i), out.shape.rank(j));
            out.blocks.insert((i, j), b);
        }
        out
    }

    /// Largest difference between corresponding blocks, on indices where
    /// both sides are exact.
    pub fn max_diff(&self, other: &Self) -> f64 {
        upper_pairs(self.shape.k())
            .into_iter()
            .map(|(i, j)| self.block(i, j).max_diff_on_exact(&other.block(i, j)))
            .fold(0.0, f64::max)
    }

    pub fn with_bound(&self, bound: i32) -> Self {
        Self {
            shape: self.shape.clone(),
            bound,
            blocks: self
                .blocks
                .iter()
                .map(|(&k, b)| (k, b.map(|e| e.clone().with_bound(bound))))
                .collect(),
        }
    }
}

/// Element of the unipotent group: identity diagonal blocks, blocks
/// `F_ij` above the diagonal, zero below.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeElement {
    ranks: Vec<usize>,
    bound: i32,
    blocks: BTreeMap<(usize, usize), SeriesMatrix>,
}

impl GaugeElement {
    pub fn identity(ranks: Vec<usize>, bound: i32) -> Self {
        Self { ranks, bound, blocks: BTreeMap::new() }
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn k(&self) -> usize {
        self.ranks.len()
    }

    pub fn bound(&self) -> i32 {
        self.bound
    }

    fn offset(&self, i: usize) -> usize {
        self.ranks[..i].iter().sum()
    }

    fn dim(&self) -> usize {
        self.ranks.iter().sum()
    }

    pub fn set_block(&mut self, i: usize, j: usize, m: SeriesMatrix) -> Result<()> {
        if !(i < j && j < self.k()) {
            return Err(Error::Invalid(format!("gauge block ({},{}) is not strictly upper", i + 1, j + 1)));
        }
        check_block(self.ranks[i], self.ranks[j], &m, (i, j))?;
        self.blocks.insert((i, j), m);
        Ok(())
    }

    pub fn with_block(mut self, i: usize, j: usize, m: SeriesMatrix) -> Result<Self> {
        self.set_block(i, j, m)?;
        Ok(self)
    }

    pub fn block(&self, i: usize, j: usize) -> SeriesMatrix {
        if i == j {
            return SeriesMatrix::identity(self.ranks[i], self.bound);
        }
        self.blocks
            .get(&(i, j))
            .cloned()
            .unwrap_or_else(|| SeriesMatrix::zeros(self.ranks[i], self.ranks[j], self.bound))
    }

    pub fn blocks(&self) -> &BTreeMap<(usize, usize), SeriesMatrix> {
        &self.blocks
    }

    pub fn to_series(&self) -> SeriesMatrix {
        let mut m = SeriesMatrix::identity(self.dim(), self.bound);
        for (&(i, j), b) in &self.blocks {
            m.set_block(self.offset(i), self.offset(j), b);
        }
        m
    }

    pub fn from_series(ranks: Vec<usize>, m: &SeriesMatrix) -> Self {
        let bound = m.entries().first().map_or(40, |e| e.bound());
        let mut g = Self::identity(ranks, bound);
        for (i, j) in upper_pairs(g.k()) {
            let b = m.block(g.offset(i), g.offset(j), g.ranks[i], g.ranks[j]);
            g.blocks.insert((i, j), b);
        }
        g
    }

    pub fn evaluate(&self, z: Complex64) -> Result<CMat> {
        let mut m = linalg::identity(self.dim());
        for (&(i, j), b) in &self.blocks {
            let v = b.evaluate(z)?;
            m.view_mut((self.offset(i), self.offset(j)), (v.nrows(), v.ncols())).copy_from(&v);
        }
        Ok(m)
    }

    /// Group product `self * other`.
    pub fn compose(&self, other: &Self) -> Self {
        let p = self.to_series().mul(&other.to_series());
        Self::from_series(self.ranks.clone(), &p)
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.to_series().inverse_block_upper(&self.ranks, 1e-14)?;
        Ok(Self::from_series(self.ranks.clone(), &inv))
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.blocks.values().all(|b| b.max_abs() <= tol)
    }

    pub fn max_diff(&self, other: &Self) -> f64 {
        upper_pairs(self.k())
            .into_iter()
            .map(|(i, j)| self.block(i, j).max_diff_on_exact(&other.block(i, j)))
            .fold(0.0, f64::max)
    }
}

/// `F[A] = (sigma_q F) A F^{-1}` for series matrices; `F` must be block
/// upper-triangular with monomial diagonal blocks for the given ranks.
pub fn gauge_action_series(f: &SeriesMatrix, a: &SeriesMatrix, q: Complex64, ranks: &[usize]) -> Result<SeriesMatrix> {
    let f_inv = f.inverse_block_upper(ranks, 1e-14)?;
    Ok(f.sigma_q(q, 1).mul(a).mul(&f_inv))
}

/// Action of a unipotent gauge on a canonical-form system; slopes and
/// diagonal constants are preserved.
pub fn gauge_action(f: &GaugeElement, a: &BlockMatrix, q: Complex64) -> Result<BlockMatrix> {
    if f.ranks() != a.shape().ranks().as_slice() {
        return Err(Error::Invalid("gauge and system ranks differ".into()));
    }
    let m = gauge_action_series(&f.to_series(), &a.to_series(), q, f.ranks())?;
    Ok(BlockMatrix::from_series(a.shape().clone(), &m))
}

/// Pointwise residual `F(qz) A_U(z) - A_V(z) F(z)`, relative to `|A_U(z)|`.
pub fn pointwise_residual(f_qz: &CMat, f_z: &CMat, a_u: &CMat, a_v: &CMat) -> f64 {
    let r = f_qz * a_u - a_v * f_z;
    linalg::frobenius(&r) / linalg::frobenius(a_u).max(f64::MIN_POSITIVE)
}

/// Edge of the Newton polygon: `length` horizontal steps at rational slope
/// `rise / length`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonEdge {
    pub rise: i32,
    pub length: usize,
}

impl NewtonEdge {
    pub fn slope(&self) -> f64 {
        self.rise as f64 / self.length as f64
    }
}

/// Lower convex hull of the points `(i, v(a_i))` of an operator
/// `sum_i a_i sigma_q^i`; edges are reported by descending slope. With this
/// orientation `z sigma_q - 1` has the single slope 1.
pub fn newton_polygon(coeffs: &[WindowedLaurent], tol: f64) -> Result<Vec<NewtonEdge>> {
    if coeffs.len() < 2 {
        return Err(Error::Invalid("an operator needs at least two coefficients".into()));
    }
    let pts: Vec<(i64, i64)> = coeffs
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.valuation(tol).map(|v| (i as i64, v as i64)))
        .collect();
    if pts.is_empty() {
        return Err(Error::Invalid("all operator coefficients vanish".into()));
    }
    if pts[0].0 != 0 || pts.last().unwrap().0 != coeffs.len() as i64 - 1 {
        return Err(Error::Invalid("leading and trailing coefficients must be nonzero".into()));
    }
    let mut hull: Vec<(i64, i64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut edges: Vec<NewtonEdge> = hull
        .windows(2)
        .map(|w| NewtonEdge { rise: (w[1].1 - w[0].1) as i32, length: (w[1].0 - w[0].0) as usize })
        .collect();
    edges.sort_by(|a, b| b.slope().partial_cmp(&a.slope()).unwrap());
    Ok(edges)
}

/// Scalar gauge `[[1, g], [0, 1]]` over two rank-one blocks.
pub fn scalar_gauge(g: WindowedLaurent) -> GaugeElement {
    let bound = g.bound();
    GaugeElement::identity(vec![1, 1], bound)
        .with_block(0, 1, SeriesMatrix::from_fn(1, 1, |_, _| g.clone()))
        .expect("rank-one block")
}

/// `z sigma_q g - g`, the coboundary of `g` for the model pair of slopes
/// `(0, -1)` with unit constants.
pub fn coboundary(g: &WindowedLaurent, q: Complex64) -> WindowedLaurent {
    g.sigma_q(q, 1).shift(1).sub(g)
}
