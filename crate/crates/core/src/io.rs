//! Problem files, certificates, seeded instance generation and the command
//! drivers behind the `qdiff` binary.
//!
//! Files are JSON with explicit `{re, im}` pairs and a `"format": 1` tag.
//! Block keys are one-based: `"(1,2)"` is the block between the two
//! steepest slopes.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::borel::birkhoff_guenther;
use crate::laurent::{QContext, SeriesMatrix, WindowedLaurent};
use crate::linalg::{self, CMat};
use crate::stokes::{build_cocycle, classify_pair, flatness_level, Verdict, COCYCLE_TOL};
use crate::summation::{gauge_residual, sum_from_graded, SampleGrid};
use crate::system::{gauge_action, upper_pairs, BlockMatrix, BlockShape, GaugeElement};
use crate::theta::{allowed_witness, theta_eval, AllowedPolicy, EqDivisor, SummationDivisor};
use crate::{Error, Result};

pub const FORMAT: u32 = 1;
/// Residual bound for summed gauges in certificates.
pub const SUM_TOL: f64 = 1e-7;
/// Residual bound for normal forms and idempotence in certificates.
pub const NORMAL_TOL: f64 = 1e-9;
/// Relative tolerance on fitted flatness levels.
pub const LEVEL_TOL: f64 = 0.1;
/// Number of ray steps used for flatness fits.
pub const RAY_STEPS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cplx {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Cplx {
    fn from(c: Complex64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

impl From<Cplx> for Complex64 {
    fn from(c: Cplx) -> Self {
        Complex64::new(c.re, c.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub slopes: Vec<i32>,
    pub ranks: Vec<usize>,
    /// One row-major `[re, im]` list per diagonal block.
    pub constants: Vec<Vec<[f64; 2]>>,
}

/// Coefficients `lo..=hi`, each a row-major `[re, im]` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub lo: i32,
    pub hi: i32,
    pub coeffs: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSpec {
    pub re: f64,
    pub im: f64,
    pub mult: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub format: u32,
    pub q: Cplx,
    pub window: i32,
    pub tol: f64,
    pub shape: ShapeSpec,
    pub blocks: BTreeMap<String, BlockSpec>,
    /// Each divisor lists the points of `D_{1,2}`, then `D_{2,3}`, and so
    /// on; degrees are consumed in that order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub divisors: Vec<Vec<PointSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A validated problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub ctx: QContext,
    pub system: BlockMatrix,
    pub divisors: Vec<SummationDivisor>,
    pub seed: u64,
}

/// Command-line overrides of file parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub q_re: Option<f64>,
    pub q_im: Option<f64>,
    pub window: Option<i32>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

fn pair(c: Complex64) -> [f64; 2] {
    [c.re, c.im]
}

fn unpair(p: [f64; 2]) -> Result<Complex64> {
    if !(p[0].is_finite() && p[1].is_finite()) {
        return Err(Error::Invalid("non-finite number".into()));
    }
    Ok(Complex64::new(p[0], p[1]))
}

fn matrix_from(entries: &[[f64; 2]], rows: usize, cols: usize, what: &str) -> Result<CMat> {
    if entries.len() != rows * cols {
        return Err(Error::Invalid(format!("{what}: expected {} entries, got {}", rows * cols, entries.len())));
    }
    let vals: Vec<Complex64> = entries.iter().map(|&p| unpair(p)).collect::<Result<_>>()?;
    Ok(CMat::from_row_slice(rows, cols, &vals))
}

fn matrix_to(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(pair(m[(r, c)]));
        }
    }
    out
}

/// `"(i,j)"`, one-based, to zero-based indices.
pub fn parse_block_key(key: &str) -> Result<(usize, usize)> {
    let bad = || Error::Invalid(format!("block key {key:?} is not of the form \"(i,j)\""));
    let inner = key.trim().strip_prefix('(').and_then(|s| s.strip_suffix(')')).ok_or_else(bad)?;
    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
    let i: usize = a.trim().parse().map_err(|_| bad())?;
    let j: usize = b.trim().parse().map_err(|_| bad())?;
    if i == 0 || j == 0 {
        return Err(bad());
    }
    Ok((i - 1, j - 1))
}

pub fn block_key(i: usize, j: usize) -> String {
    format!("({},{})", i + 1, j + 1)
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        if p.format != FORMAT {
            return Err(Error::Invalid(format!("unsupported format {}", p.format)));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("problem files serialize");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.q_re {
            self.q.re = v;
        }
        if let Some(v) = o.q_im {
            self.q.im = v;
        }
        if let Some(v) = o.window {
            self.window = v;
        }
        if let Some(v) = o.tol {
            self.tol = v;
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
    }

    /// Validates and builds the runtime problem.
    pub fn load(&self) -> Result<Problem> {
        if self.format != FORMAT {
            return Err(Error::Invalid(format!("unsupported format {}", self.format)));
        }
        let ctx = QContext::new(self.q.into(), self.window, self.tol)?;
        let s = &self.shape;
        let k = s.slopes.len();
        if s.ranks.len() != k || s.constants.len() != k {
            return Err(Error::Invalid(format!(
                "{k} slopes but {} ranks and {} constants",
                s.ranks.len(),
                s.constants.len()
            )));
        }
        let constants: Vec<CMat> = (0..k)
            .map(|i| matrix_from(&s.constants[i], s.ranks[i], s.ranks[i], &format!("constant A_{}", i + 1)))
            .collect::<Result<_>>()?;
        let shape = BlockShape::new(s.slopes.clone(), constants, self.tol)?;
        let n = self.window;
        let mut system = BlockMatrix::zero(shape.clone(), n);
        for (key, b) in &self.blocks {
            let (i, j) = parse_block_key(key)?;
            if !(i < j && j < k) {
                return Err(Error::Invalid(format!("block {key} is not strictly upper for {k} blocks")));
            }
            if b.lo > b.hi || b.lo < -n || b.hi > n {
                return Err(Error::Invalid(format!("block {key}: range [{}, {}] outside [-{n}, {n}]", b.lo, b.hi)));
            }
            if b.coeffs.len() != (b.hi - b.lo + 1) as usize {
                return Err(Error::Invalid(format!(
                    "block {key}: {} coefficients for range [{}, {}]",
                    b.coeffs.len(),
                    b.lo,
                    b.hi
                )));
            }
            let (ri, rj) = (shape.rank(i), shape.rank(j));
            let mats: Vec<CMat> = b
                .coeffs
                .iter()
                .enumerate()
                .map(|(t, c)| matrix_from(c, ri, rj, &format!("block {key} coefficient {}", b.lo + t as i32)))
                .collect::<Result<_>>()?;
            let m = SeriesMatrix::from_fn(ri, rj, |r, c| {
                WindowedLaurent::new(b.lo, mats.iter().map(|x| x[(r, c)]).collect()).with_bound(n)
            });
            system.set_block(i, j, m)?;
        }
        let q = ctx.q();
        let divisors = self
            .divisors
            .iter()
            .map(|pts| divisor_from_points(q, &shape, pts))
            .collect::<Result<_>>()?;
        Ok(Problem { ctx, system, divisors, seed: self.seed.unwrap_or(0) })
    }

    /// Inverse of [`ProblemFile::load`].
    pub fn from_problem(p: &Problem) -> Self {
        let shape = p.system.shape();
        let k = shape.k();
        let mut blocks = BTreeMap::new();
        for (&(i, j), m) in p.system.blocks() {
            let (lo, hi) = m.span();
            if lo > hi || m.max_abs() == 0.0 {
                continue;
            }
            let coeffs = (lo..=hi).map(|n| matrix_to(&m.coeff_matrix(n))).collect();
            blocks.insert(block_key(i, j), BlockSpec { lo, hi, coeffs });
        }
        let divisors = p.divisors.iter().map(divisor_to_points).collect();
        Self {
            format: FORMAT,
            q: p.ctx.q().into(),
            window: p.ctx.window(),
            tol: p.ctx.tol(),
            shape: ShapeSpec {
                slopes: shape.slopes().to_vec(),
                ranks: shape.ranks(),
                constants: (0..k).map(|i| matrix_to(shape.constant(i))).collect(),
            },
            blocks,
            divisors,
            seed: Some(p.seed),
        }
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("problem files serialize")))
    }
}

fn divisor_from_points(q: Complex64, shape: &BlockShape, pts: &[PointSpec]) -> Result<SummationDivisor> {
    let mut expanded = Vec::new();
    for p in pts {
        if p.mult == 0 {
            return Err(Error::Invalid("divisor multiplicities must be positive".into()));
        }
        let z = unpair([p.re, p.im])?;
        expanded.extend(std::iter::repeat_n(z, p.mult as usize));
    }
    let slopes = shape.slopes();
    let total = (slopes[0] - slopes[slopes.len() - 1]) as usize;
    if expanded.len() != total {
        return Err(Error::Invalid(format!("divisor has degree {}, expected {total}", expanded.len())));
    }
    let mut adjacent = Vec::new();
    let mut at = 0;
    for w in slopes.windows(2) {
        let deg = (w[0] - w[1]) as usize;
        let mut grouped: Vec<(Complex64, u32)> = Vec::new();
        for &z in &expanded[at..at + deg] {
            match grouped.iter_mut().find(|(y, _)| *y == z) {
                Some(e) => e.1 += 1,
                None => grouped.push((z, 1)),
            }
        }
        adjacent.push(EqDivisor::new(q, &grouped)?);
        at += deg;
    }
    SummationDivisor::from_adjacent(q, slopes, adjacent)
}

fn divisor_to_points(d: &SummationDivisor) -> Vec<PointSpec> {
    d.adjacent()
        .iter()
        .flat_map(|a| a.points().iter().map(|(p, m)| PointSpec { re: p.rep().re, im: p.rep().im, mult: *m }))
        .collect()
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= tol`.
    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value, tol, pass: value <= tol }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub radii: usize,
    pub arguments: usize,
    pub seed: u64,
    pub points: Vec<Cplx>,
}

impl From<&SampleGrid> for GridSpec {
    fn from(g: &SampleGrid) -> Self {
        Self { radii: g.radii, arguments: g.arguments, seed: g.seed, points: g.points.iter().map(|&z| z.into()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub format: u32,
    pub command: String,
    pub inputs_digest: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    pub verdicts: Vec<String>,
    pub wall_time_s: f64,
    /// Command-specific tables.
    #[serde(default)]
    pub data: serde_json::Value,
}

impl Certificate {
    fn new(command: &str, inputs: &[&ProblemFile], seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        for p in inputs {
            h.update(serde_json::to_vec(p).expect("problem files serialize"));
        }
        h.update(seed.to_le_bytes());
        Self {
            format: FORMAT,
            command: command.into(),
            inputs_digest: hex::encode(h.finalize()),
            seed,
            checks: Vec::new(),
            grid: None,
            verdicts: Vec::new(),
            wall_time_s: 0.0,
            data: serde_json::Value::Null,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("certificates serialize");
        s.push('\n');
        s
    }

    /// Residual table as CSV with header `name,value,tol,pass`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,value,tol,pass\n");
        for c in &self.checks {
            s.push_str(&format!("{},{:e},{:e},{}\n", c.name.replace(',', ";"), c.value, c.tol, c.pass));
        }
        s
    }

    /// Writes `<path>` as JSON and `<path>` with extension `csv`.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())?;
        write_atomic(&path.with_extension("csv"), self.to_csv().as_bytes())
    }
}

fn complex_json(c: Complex64) -> serde_json::Value {
    json!([c.re, c.im])
}

fn matrix_json(m: &CMat) -> serde_json::Value {
    serde_json::Value::Array(
        (0..m.nrows())
            .map(|r| serde_json::Value::Array((0..m.ncols()).map(|c| complex_json(m[(r, c)])).collect()))
            .collect(),
    )
}

/// Normal form of the problem; returns the certificate and the problem
/// file holding `A_V`.
pub fn cmd_normal_form(file: &ProblemFile) -> Result<(Certificate, ProblemFile)> {
    let start = Instant::now();
    let p = file.load()?;
    let mut cert = Certificate::new("normal-form", &[file], p.seed);
    let nf = birkhoff_guenther(&p.ctx, &p.system)?;
    cert.checks.push(Check::at_most("gauge residual", nf.residual, NORMAL_TOL));
    let again = birkhoff_guenther(&p.ctx, &nf.normal)?;
    let ident = again.gauge.max_diff(&GaugeElement::identity(nf.gauge.ranks().to_vec(), p.ctx.window()));
    cert.checks.push(Check::at_most("idempotence", ident.max(again.normal.max_diff(&nf.normal)), NORMAL_TOL));
    let mut out = p.clone();
    out.system = nf.normal.clone();
    let out_file = ProblemFile::from_problem(&out);
    for (key, b) in &out_file.blocks {
        cert.verdicts.push(format!("V{key} spans [{}, {}]", b.lo, b.hi));
    }
    if out_file.blocks.is_empty() {
        cert.verdicts.push("V = 0".into());
    }
    cert.verdicts.push(if nf.gauge.is_identity(p.ctx.tol()) { "identity gauge" } else { "nontrivial gauge" }.into());
    cert.data = json!({ "normal_form": serde_json::to_value(&out_file)? });
    cert.wall_time_s = start.elapsed().as_secs_f64();
    Ok((cert, out_file))
}

fn divisors_or_default(p: &Problem, count: usize) -> Result<Vec<SummationDivisor>> {
    if !p.divisors.is_empty() {
        return Ok(p.divisors.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out: Vec<SummationDivisor> = Vec::new();
    for _ in 0..count {
        let avoid: Vec<Complex64> = out.iter().flat_map(|d| d.chosen_points().to_vec()).collect();
        out.push(random_divisor(p.ctx.q(), p.system.shape(), &avoid, &mut rng)?);
    }
    Ok(out)
}

/// Summed gauge `F_D(U)` from `A_0` to `A_U` for divisor `index`, with a
/// table of its values on the sample grid.
pub fn cmd_sum(file: &ProblemFile, index: usize) -> Result<Certificate> {
    let start = Instant::now();
    let p = file.load()?;
    let mut cert = Certificate::new("sum", &[file], p.seed);
    let divs = divisors_or_default(&p, 1)?;
    let d = divs
        .get(index)
        .ok_or_else(|| Error::Invalid(format!("divisor {index} requested, {} available", divs.len())))?;
    let g = sum_from_graded(&p.ctx, &p.system, d)?;
    let grid = SampleGrid::standard(p.ctx.q(), p.seed, d.chosen_points());
    let residual = gauge_residual(&g, &p.system.graded_part(), &p.system, &grid.points)?;
    cert.checks.push(Check::at_most("summation residual", residual, SUM_TOL));
    let table: Vec<serde_json::Value> = grid
        .points
        .iter()
        .map(|&z| Ok(json!({ "z": complex_json(z), "F": matrix_json(&g.evaluate(z)?) })))
        .collect::<Result<_>>()?;
    cert.verdicts.push(if g.is_identity(p.ctx.tol()) { "identity gauge" } else { "nontrivial gauge" }.into());
    cert.grid = Some((&grid).into());
    cert.data = json!({ "divisor": divisor_to_points(d), "table": table });
    cert.wall_time_s = start.elapsed().as_secs_f64();
    Ok(cert)
}

/// Stokes cocycle over the problem's divisors (three seeded ones when the
/// file has none), with identity residuals and a flatness table.
pub fn cmd_cocycle(file: &ProblemFile) -> Result<Certificate> {
    let start = Instant::now();
    let p = file.load()?;
    let mut cert = Certificate::new("cocycle", &[file], p.seed);
    let divs = divisors_or_default(&p, 3)?;
    let cyc = build_cocycle(&p.ctx, &p.system, &divs, 20, p.seed)?;
    let c = cyc.certificate();
    cert.checks.push(Check::at_most("cocycle identity", c.identity_residual, COCYCLE_TOL));
    cert.checks.push(Check::at_most("fixes A_0", c.fixing_residual, COCYCLE_TOL));
    cert.checks.push(Check::at_most("unipotence", c.unipotent_residual, COCYCLE_TOL));
    let shape = p.system.shape();
    let z0 = c.points[0];
    let mut table = Vec::new();
    if cyc.len() >= 2 {
        for (i, j) in upper_pairs(shape.k()) {
            let key = block_key(i, j);
            let expected = shape.gap(i, j) as f64;
            let start_value = linalg::max_abs(&cyc.component_block(0, 1, i, j, z0)?);
            if start_value <= p.ctx.tol() {
                table.push(json!({ "block": key, "expected": expected, "level": null }));
                cert.verdicts.push(format!("block {key} of F_(1,2) vanishes"));
                continue;
            }
            let vals = cyc.ray_log_values(0, 1, i, j, z0, RAY_STEPS)?;
            let fit = flatness_level(&vals, p.ctx.q())?;
            let err = (fit.level - expected).abs() / expected;
            cert.checks.push(Check::at_most(format!("flatness level {key}"), err, LEVEL_TOL));
            table.push(json!({ "block": key, "expected": expected, "level": fit.level, "rms": fit.rms }));
        }
    }
    cert.grid = Some(GridSpec { radii: 20, arguments: 1, seed: p.seed, points: c.points.iter().map(|&z| z.into()).collect() });
    cert.verdicts.push(format!("{} divisors", cyc.len()));
    cert.data = json!({
        "divisors": divs.iter().map(divisor_to_points).collect::<Vec<_>>(),
        "flatness": table,
    });
    cert.wall_time_s = start.elapsed().as_secs_f64();
    Ok(cert)
}

/// Decides analytic equivalence of two problems with the same graded part.
pub fn cmd_classify(a: &ProblemFile, b: &ProblemFile) -> Result<Certificate> {
    let start = Instant::now();
    let pa = a.load()?;
    let pb = b.load()?;
    if pa.ctx.q() != pb.ctx.q() {
        return Err(Error::Invalid("the two problems use different q".into()));
    }
    let (sa, sb) = (pa.system.shape(), pb.system.shape());
    if sa.slopes() != sb.slopes()
        || sa.ranks() != sb.ranks()
        || (0..sa.k()).any(|i| linalg::max_abs(&(sa.constant(i) - sb.constant(i))) > pa.ctx.tol())
    {
        return Err(Error::Invalid("the two problems have different graded parts".into()));
    }
    let mut cert = Certificate::new("classify", &[a, b], pa.seed);
    let d = divisors_or_default(&pa, 1)?.remove(0);
    match classify_pair(&pa.ctx, &pa.system, &pb.system, &d, pa.seed)? {
        Verdict::Equivalent { gauge, residual } => {
            cert.checks.push(Check::at_most("gauge residual", residual, SUM_TOL));
            cert.verdicts.push("equivalent".into());
            if gauge.is_identity(pa.ctx.tol()) {
                cert.verdicts.push("identity gauge".into());
            }
        }
        Verdict::NotEquivalent { block, point, defect, order } => {
            cert.verdicts.push("not equivalent".into());
            cert.data = json!({
                "block": block_key(block.0, block.1),
                "pole": complex_json(point),
                "defect": defect,
                "order": order,
            });
        }
    }
    if cert.data.is_null() {
        cert.data = json!({ "divisor": divisor_to_points(&d) });
    }
    cert.wall_time_s = start.elapsed().as_secs_f64();
    Ok(cert)
}

/// Runs the property checks that apply to a single file.
pub fn cmd_check(file: &ProblemFile) -> Result<Certificate> {
    let start = Instant::now();
    let p = file.load()?;
    let mut cert = Certificate::new("check", &[file], p.seed);
    let round = ProblemFile::from_json(&file.to_json())?;
    cert.checks.push(Check { name: "round trip".into(), value: 0.0, tol: 0.0, pass: round == *file });
    let q = p.ctx.q();
    let grid = SampleGrid::standard(q, p.seed, &[]);
    let mut theta_err: f64 = 0.0;
    for &z in &grid.points {
        let t = theta_eval(q, z, p.ctx.window())?;
        let tq = theta_eval(q, q * z, p.ctx.window())?;
        theta_err = theta_err.max((tq - z * t).norm() / (z * t).norm());
    }
    cert.checks.push(Check::at_most("theta functional equation", theta_err, 1e-12));
    let nf = birkhoff_guenther(&p.ctx, &p.system)?;
    cert.checks.push(Check::at_most("normal form residual", nf.residual, NORMAL_TOL));
    let again = birkhoff_guenther(&p.ctx, &nf.normal)?;
    let ident = again.gauge.max_diff(&GaugeElement::identity(nf.gauge.ranks().to_vec(), p.ctx.window()));
    cert.checks.push(Check::at_most("normal form idempotence", ident, NORMAL_TOL));
    for (n, d) in divisors_or_default(&p, 1)?.iter().enumerate() {
        let g = sum_from_graded(&p.ctx, &p.system, d)?;
        let grid = SampleGrid::standard(q, p.seed, d.chosen_points());
        let r = gauge_residual(&g, &p.system.graded_part(), &p.system, &grid.points)?;
        cert.checks.push(Check::at_most(format!("summation residual D{}", n + 1), r, SUM_TOL));
    }
    cert.verdicts.push(if cert.passed() { "all checks pass" } else { "some checks fail" }.into());
    cert.wall_time_s = start.elapsed().as_secs_f64();
    Ok(cert)
}

/// Parameters of [`gen_instance`].
#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub q: Complex64,
    pub window: i32,
    pub tol: f64,
    pub slopes: Vec<i32>,
    pub ranks: Vec<usize>,
    /// Coefficient range of each generated block.
    pub lo: i32,
    pub hi: i32,
    /// Coefficient `n` is drawn with modulus at most `decay^(n - lo)`.
    pub decay: f64,
    /// Number of seeded allowed divisors to attach.
    pub divisors: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            q: Complex64::new(3.0, 0.0),
            window: crate::laurent::DEFAULT_WINDOW,
            tol: crate::laurent::DEFAULT_TOL,
            slopes: vec![1, 0],
            ranks: vec![1, 1],
            lo: -2,
            hi: 4,
            decay: 0.5,
            divisors: 1,
        }
    }
}

fn rand_complex(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

/// Seeded invertible block with eigenvalues of modulus in `[0.5, 2]`.
fn random_constant(rng: &mut ChaCha8Rng, r: usize) -> CMat {
    CMat::from_fn(r, r, |a, b| {
        if a == b {
            Complex64::from_polar(0.5 * 4f64.powf(rng.gen::<f64>()), rng.gen::<f64>() * TAU)
        } else if a < b {
            rand_complex(rng, 0.3)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Draws chosen points with log-uniform radii on `[1, |q|)` until the
/// divisor is allowed with class distance at least `1e-2`, and keeps them
/// `1e-2` away from the classes in `avoid`.
pub fn random_divisor(q: Complex64, shape: &BlockShape, avoid: &[Complex64], rng: &mut ChaCha8Rng) -> Result<SummationDivisor> {
    let slopes = shape.slopes();
    let count = (slopes[0] - slopes[slopes.len() - 1]) as usize;
    let spectra = shape.spectra()?;
    let policy = AllowedPolicy { tol: 1e-2, margin: 1e-2 };
    let lq = q.norm().ln();
    for _ in 0..1000 {
        let pts: Vec<Complex64> = (0..count)
            .map(|_| Complex64::from_polar((rng.gen::<f64>() * lq).exp(), rng.gen::<f64>() * TAU))
            .collect();
        let clash = pts.iter().enumerate().any(|(n, &a)| {
            avoid.iter().chain(&pts[..n]).any(|&b| crate::theta::class_distance(q, a, b) < 1e-2)
        });
        if clash {
            continue;
        }
        let d = SummationDivisor::from_points(q, slopes, &pts)?;
        if let Ok(None) = allowed_witness(&d, &spectra, policy) {
            return Ok(d);
        }
    }
    Err(Error::Internal("no allowed divisor found in 1000 draws".into()))
}

/// Seeded instance with geometrically decaying blocks.
pub fn gen_problem(seed: u64, spec: &GenSpec) -> Result<Problem> {
    let ctx = QContext::new(spec.q, spec.window, spec.tol)?;
    if spec.slopes.len() != spec.ranks.len() || spec.ranks.contains(&0) {
        return Err(Error::Invalid("need one positive rank per slope".into()));
    }
    if spec.lo > spec.hi || spec.lo < -spec.window || spec.hi > spec.window {
        return Err(Error::Invalid("coefficient range must lie inside the window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let constants: Vec<CMat> = spec.ranks.iter().map(|&r| random_constant(&mut rng, r)).collect();
    let shape = BlockShape::new(spec.slopes.clone(), constants, spec.tol)?;
    let mut system = BlockMatrix::zero(shape.clone(), spec.window);
    for (i, j) in upper_pairs(shape.k()) {
        let m = random_block(&mut rng, shape.rank(i), shape.rank(j), spec);
        system.set_block(i, j, m)?;
    }
    let mut divisors: Vec<SummationDivisor> = Vec::new();
    for _ in 0..spec.divisors {
        let avoid: Vec<Complex64> = divisors.iter().flat_map(|d| d.chosen_points().to_vec()).collect();
        divisors.push(random_divisor(ctx.q(), &shape, &avoid, &mut rng)?);
    }
    Ok(Problem { ctx, system, divisors, seed })
}

fn random_block(rng: &mut ChaCha8Rng, r: usize, c: usize, spec: &GenSpec) -> SeriesMatrix {
    let mut cells = Vec::with_capacity(r * c);
    for _ in 0..r * c {
        let coeffs: Vec<Complex64> = (spec.lo..=spec.hi)
            .map(|n| rand_complex(rng, spec.decay.powi(n - spec.lo)))
            .collect();
        cells.push(WindowedLaurent::new(spec.lo, coeffs).with_bound(spec.window));
    }
    SeriesMatrix::from_fn(r, c, |a, b| cells[a * c + b].clone())
}

pub fn gen_instance(seed: u64, spec: &GenSpec) -> Result<ProblemFile> {
    Ok(ProblemFile::from_problem(&gen_problem(seed, spec)?))
}

/// `(A_U, G[A_U])` for a seeded unipotent Laurent polynomial gauge `G`,
/// whose blocks have coefficients in `[-1, 2]`.
pub fn gen_planted_problems(seed: u64, spec: &GenSpec) -> Result<(Problem, Problem, GaugeElement)> {
    let base = gen_problem(seed, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = base.system.shape();
    let mut g = GaugeElement::identity(shape.ranks(), spec.window);
    let gspec = GenSpec { lo: -1, hi: 2, decay: 0.7, ..spec.clone() };
    for (i, j) in upper_pairs(shape.k()) {
        g.set_block(i, j, random_block(&mut rng, shape.rank(i), shape.rank(j), &gspec))?;
    }
    let image = gauge_action(&g, &base.system, base.ctx.q())?;
    let mut other = base.clone();
    other.system = image;
    Ok((base, other, g))
}

pub fn gen_planted(seed: u64, spec: &GenSpec) -> Result<(ProblemFile, ProblemFile)> {
    let (a, b, _) = gen_planted_problems(seed, spec)?;
    Ok((ProblemFile::from_problem(&a), ProblemFile::from_problem(&b)))
}
