//! Filtration independentisation: conditional-CDF (Rosenblatt) transforms
//! of a positive joint density on a box, their recursive composition into a
//! coordinate-wise bijection, and the regrouping of transformed coordinates
//! into independent innovation blocks that generate the same filtration.
//!
//! Densities live on a declared bounding box carrying all but at most
//! `MASS_TOL` of their mass; quadrature is composite Simpson per axis.
//! Stage `l` maps coordinate `l` through its conditional CDF given
//! coordinates `0..l`, so the map is lower-triangular and the generated
//! sigma-fields are preserved by construction.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{cholesky_factor, simpson};

/// Acceptable deviation of the box mass from one.
pub const MASS_TOL: f64 = 1e-3;

/// 0.999 quantile of a chi-square with 9 degrees of freedom, the reference
/// level for the 4x4 quantile-bin independence statistic.
pub const CHI2_9DF_999: f64 = 27.877;

/// Default sample-scale thresholds for the evidence tests at n = 10^4.
pub const DEFAULT_KS_THRESHOLD: f64 = 0.02;
pub const DEFAULT_CORR_THRESHOLD: f64 = 0.05;

type DynDensity = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum DensityEval {
    ProductNormal,
    CorrelatedNormal { chol: Vec<f64>, log_norm: f64 },
    Grid(Arc<GridDensity>),
    Custom(DynDensity),
}

/// A probability density on a box, almost-everywhere positive there, with
/// its quadrature configuration.
#[derive(Clone)]
pub struct JointDensity {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Simpson nodes per axis (odd).
    nodes: usize,
    /// Declared (never inferred) coordinate-wise factorisation.
    factorized: bool,
    eval: DensityEval,
}

impl fmt::Debug for JointDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JointDensity")
            .field("dim", &self.dim)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("nodes", &self.nodes)
            .field("factorized", &self.factorized)
            .finish()
    }
}

impl JointDensity {
    /// Product of standard normals on `[-half_width, half_width]^dim`.
    pub fn product_normal(dim: usize, half_width: f64, nodes: usize) -> Result<Self> {
        let d = JointDensity {
            dim,
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
            nodes: odd_nodes(nodes)?,
            factorized: true,
            eval: DensityEval::ProductNormal,
        };
        d.validate()?;
        Ok(d)
    }

    /// Centred normal with the given covariance on
    /// `[-half_width, half_width]^dim`.
    pub fn correlated_normal(cov: &[Vec<f64>], half_width: f64, nodes: usize) -> Result<Self> {
        let dim = cov.len();
        if dim == 0 || cov.iter().any(|row| row.len() != dim) {
            return Err(Error::Config(
                "covariance must be square and non-empty".into(),
            ));
        }
        let flat: Vec<f64> = cov.iter().flatten().copied().collect();
        let chol = cholesky_factor(&flat, dim)
            .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
        let log_det: f64 = (0..dim).map(|i| chol[i * dim + i].ln()).sum();
        let log_norm = -(dim as f64) * 0.5 * (2.0 * std::f64::consts::PI).ln() - log_det;
        let factorized = (0..dim).all(|i| (0..dim).all(|j| i == j || cov[i][j] == 0.0));
        let d = JointDensity {
            dim,
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
            nodes: odd_nodes(nodes)?,
            factorized,
            eval: DensityEval::CorrelatedNormal { chol, log_norm },
        };
        d.validate()?;
        Ok(d)
    }

    /// Arbitrary density evaluator on an explicit box. `factorized` is a
    /// declaration by the caller and is never inferred.
    pub fn custom(
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        lo: Vec<f64>,
        hi: Vec<f64>,
        nodes: usize,
        factorized: bool,
    ) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Config(
                "box bounds must be non-empty and aligned".into(),
            ));
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("box bounds must be finite".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::Config("box must have positive volume".into()));
        }
        let d = JointDensity {
            dim: lo.len(),
            lo,
            hi,
            nodes: odd_nodes(nodes)?,
            factorized,
            eval: DensityEval::Custom(Arc::new(f)),
        };
        d.validate()?;
        Ok(d)
    }

    /// Tabulated density: a plain-text file with a header declaring the
    /// box and per-axis node counts, then one value per line in row-major
    /// order (last axis fastest). Values are multilinearly interpolated.
    ///
    /// ```text
    /// dims 2
    /// axis -4 4 33
    /// axis -4 4 33
    /// 0.0001
    /// ...
    /// ```
    pub fn from_grid_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_grid_str(&text)
    }

    pub fn from_grid_str(text: &str) -> Result<Self> {
        let grid = GridDensity::parse(text)?;
        let d = JointDensity {
            dim: grid.lo.len(),
            lo: grid.lo.clone(),
            hi: grid.hi.clone(),
            nodes: 513,
            factorized: false,
            eval: DensityEval::Grid(Arc::new(grid)),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn is_factorized(&self) -> bool {
        self.factorized
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.eval {
            DensityEval::ProductNormal => {
                let q: f64 = x.iter().map(|v| v * v).sum();
                (-(0.5) * q).exp() * (2.0 * std::f64::consts::PI).powf(-(self.dim as f64) / 2.0)
            }
            DensityEval::CorrelatedNormal { chol, log_norm } => {
                // solve L y = x, then the quadratic form is |y|^2
                let n = self.dim;
                let mut y = vec![0.0; n];
                for i in 0..n {
                    let mut s = x[i];
                    for k in 0..i {
                        s -= chol[i * n + k] * y[k];
                    }
                    y[i] = s / chol[i * n + i];
                }
                let q: f64 = y.iter().map(|v| v * v).sum();
                (log_norm - 0.5 * q).exp()
            }
            DensityEval::Grid(g) => g.eval(x),
            DensityEval::Custom(f) => f(x),
        }
    }

    /// Positivity at the quadrature nodes of a coarse sub-grid and box
    /// mass within [`MASS_TOL`] of one.
    pub fn validate(&self) -> Result<()> {
        if self.dim > 5 {
            return Err(Error::Config(
                "mass validation supports at most five axes".into(),
            ));
        }
        let probe = self.nodes.min(33) | 1;
        let mut point = vec![0.0; self.dim];
        self.check_positive(&mut point, 0, probe)?;
        let mass_nodes = match self.dim {
            1 | 2 => self.nodes,
            3 => self.nodes.min(129) | 1,
            4 => self.nodes.min(65) | 1,
            _ => self.nodes.min(33) | 1,
        };
        let mass = tensor_simpson(&|x: &[f64]| self.density(x), &self.lo, &self.hi, mass_nodes);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::DensitySupport(format!(
                "box mass {mass:.6} deviates from 1 by more than {MASS_TOL}"
            )));
        }
        Ok(())
    }

    fn check_positive(&self, point: &mut Vec<f64>, axis: usize, probe: usize) -> Result<()> {
        if axis == self.dim {
            let v = self.density(point);
            if v.is_nan() || v <= 0.0 {
                return Err(Error::DensitySupport(format!(
                    "density is not strictly positive at {point:?} (value {v})"
                )));
            }
            return Ok(());
        }
        for i in 0..probe {
            point[axis] =
                self.lo[axis] + (self.hi[axis] - self.lo[axis]) * i as f64 / (probe - 1) as f64;
            self.check_positive(point, axis + 1, probe)?;
        }
        Ok(())
    }

    fn midpoint(&self, axis: usize) -> f64 {
        0.5 * (self.lo[axis] + self.hi[axis])
    }

    fn inside(&self, x: &[f64]) -> bool {
        x.len() == self.dim
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| *v >= lo - 1e-12 && *v <= hi + 1e-12)
    }
}

fn odd_nodes(nodes: usize) -> Result<usize> {
    if nodes < 9 {
        return Err(Error::Config(
            "need at least 9 quadrature nodes per axis".into(),
        ));
    }
    Ok(nodes | 1)
}

#[derive(Debug, Clone)]
struct GridDensity {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    values: Vec<f64>,
}

impl GridDensity {
    fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty grid file".into()))?;
        let mut it = header.split_whitespace();
        if it.next() != Some("dims") {
            return Err(Error::Config("grid file must start with 'dims <k>'".into()));
        }
        let dims: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Config("bad dims header".into()))?;
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut counts = Vec::new();
        for _ in 0..dims {
            let line = lines
                .next()
                .ok_or_else(|| Error::Config("missing axis line".into()))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 || toks[0] != "axis" {
                return Err(Error::Config(format!("bad axis line: {line}")));
            }
            let a: f64 = toks[1]
                .parse()
                .map_err(|_| Error::Config(format!("bad axis lower bound: {line}")))?;
            let b: f64 = toks[2]
                .parse()
                .map_err(|_| Error::Config(format!("bad axis upper bound: {line}")))?;
            let n: usize = toks[3]
                .parse()
                .map_err(|_| Error::Config(format!("bad axis count: {line}")))?;
            if !a.is_finite() || !b.is_finite() || a >= b || n < 2 {
                return Err(Error::Config(format!("degenerate axis: {line}")));
            }
            lo.push(a);
            hi.push(b);
            counts.push(n);
        }
        let expected: usize = counts.iter().product();
        let mut values = Vec::with_capacity(expected);
        for line in lines {
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad grid value: {line}")))?;
            values.push(v);
        }
        if values.len() != expected {
            return Err(Error::Config(format!(
                "grid file has {} values, expected {expected}",
                values.len()
            )));
        }
        Ok(GridDensity {
            lo,
            hi,
            counts,
            values,
        })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let dim = self.lo.len();
        let mut idx = vec![0usize; dim];
        let mut frac = vec![0.0f64; dim];
        for a in 0..dim {
            let t = ((x[a] - self.lo[a]) / (self.hi[a] - self.lo[a]) * (self.counts[a] - 1) as f64)
                .clamp(0.0, (self.counts[a] - 1) as f64);
            let i = (t.floor() as usize).min(self.counts[a] - 2);
            idx[a] = i;
            frac[a] = t - i as f64;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for a in 0..dim {
                let up = (corner >> a) & 1 == 1;
                weight *= if up { frac[a] } else { 1.0 - frac[a] };
                flat = flat * self.counts[a] + idx[a] + up as usize;
            }
            total += weight * self.values[flat];
        }
        total
    }
}

fn tensor_simpson(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], nodes: usize) -> f64 {
    let mut point = vec![0.0; lo.len()];
    tensor_rec(f, lo, hi, nodes, &mut point, 0)
}

fn tensor_rec(
    f: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    nodes: usize,
    point: &mut Vec<f64>,
    axis: usize,
) -> f64 {
    if axis == lo.len() {
        return f(point);
    }
    let m = nodes - 1;
    let h = (hi[axis] - lo[axis]) / m as f64;
    let mut s = 0.0;
    for i in 0..=m {
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        point[axis] = lo[axis] + i as f64 * h;
        s += w * tensor_rec(f, lo, hi, nodes, point, axis + 1);
    }
    s * h / 3.0
}

/// Conditional CDF of the *first* coordinate given the rest:
/// `F(x^1 | x^2..) = ∫_{lo}^{x^1} f(z, rest) dz / ∫_{lo}^{hi} f(z, rest) dz`
/// by one-dimensional Simpson quadrature along the first axis. Strictly
/// increasing in `x^1` by positivity of the density.
pub fn conditional_cdf(density: &JointDensity, point: &[f64]) -> Result<f64> {
    if !density.inside(point) {
        return Err(Error::Precondition(format!(
            "point {point:?} is outside the declared box"
        )));
    }
    let rest: Vec<f64> = point[1..].to_vec();
    let slice = |z: f64| {
        let mut buf = Vec::with_capacity(density.dim);
        buf.push(z);
        buf.extend_from_slice(&rest);
        density.density(&buf)
    };
    let denom = simpson(slice, density.lo[0], density.hi[0], density.nodes);
    if denom < 1e-300 {
        return Err(Error::DensitySupport(format!(
            "conditional slice at {rest:?} carries no mass"
        )));
    }
    let x = point[0];
    let numer = if x <= density.lo[0] {
        0.0
    } else {
        simpson(slice, density.lo[0], x.min(density.hi[0]), density.nodes)
    };
    Ok((numer / denom).clamp(0.0, 1.0))
}

/// Prefix-integral table over one axis: composite-Simpson prefix values at
/// even nodes plus exact integrals of the in-pair quadratic interpolant
/// for points between nodes.
#[derive(Debug, Clone)]
struct CdfTable {
    lo: f64,
    h: f64,
    values: Vec<f64>,
    /// Prefix integral at node `2k`.
    prefix: Vec<f64>,
    total: f64,
}

impl CdfTable {
    fn build(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        debug_assert!(n >= 3 && n % 2 == 1);
        let h = (hi - lo) / (n - 1) as f64;
        let mut prefix = Vec::with_capacity((n - 1) / 2 + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for k in 0..(n - 1) / 2 {
            let cell = h / 3.0 * (values[2 * k] + 4.0 * values[2 * k + 1] + values[2 * k + 2]);
            if cell.is_nan() || cell <= 0.0 {
                return Err(Error::DensitySupport(
                    "a quadrature cell carries non-positive mass".into(),
                ));
            }
            acc += cell;
            prefix.push(acc);
        }
        Ok(CdfTable {
            lo,
            h,
            values,
            prefix,
            total: acc,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let t = ((x - self.lo) / self.h).clamp(0.0, (n - 1) as f64);
        let pair = ((t / 2.0).floor() as usize).min((n - 3) / 2);
        let xi = t - 2.0 * pair as f64;
        let (f0, f1, f2) = (
            self.values[2 * pair],
            self.values[2 * pair + 1],
            self.values[2 * pair + 2],
        );
        // integral over [0, xi] of the quadratic through (f0, f1, f2)
        let partial = self.h
            * (f0 * xi
                + (f1 - f0) * xi * xi / 2.0
                + (f2 - 2.0 * f1 + f0) * (xi * xi * xi / 6.0 - xi * xi / 4.0));
        ((self.prefix[pair] + partial) / self.total).clamp(0.0, 1.0)
    }
}

enum StageKind {
    /// Declared-factorised density: the axis marginal with every other
    /// coordinate pinned at the box midpoint (the constant factors cancel
    /// in the CDF ratio).
    Factorized,
    /// Precomputed leading-coordinate marginal.
    Table(CdfTable),
    /// Conditional of the last coordinate given all earlier ones, using
    /// the joint density directly.
    Direct,
    /// Intermediate coordinate of a three-plus-dimensional chain: the
    /// trailing axes are integrated out at predecessors snapped to the
    /// nearest grid node, and the resulting axis profiles are cached per
    /// predecessor cell (an O(grid step) approximation).
    CachedMarginal {
        trailing_nodes: usize,
        cache: Mutex<HashMap<Vec<u32>, Arc<CdfTable>>>,
    },
}

struct Stage {
    axis: usize,
    kind: StageKind,
}

/// Ordered conditional-CDF maps realising the coordinate-wise bijection:
/// stage `l` is strictly increasing in coordinate `l` at fixed
/// predecessors and reads nothing beyond coordinate `l`.
pub struct TransformChain {
    density: JointDensity,
    stages: Vec<Stage>,
}

impl fmt::Debug for TransformChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformChain")
            .field("density", &self.density)
            .field("stages", &self.stages.len())
            .finish()
    }
}

impl TransformChain {
    pub fn dim(&self) -> usize {
        self.density.dim
    }

    pub fn density(&self) -> &JointDensity {
        &self.density
    }

    /// Highest coordinate index each stage reads: stage `l` reads
    /// coordinates `0..=l` only.
    pub fn stage_axes(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.axis).collect()
    }

    fn stage_cdf(&self, stage: &Stage, x: f64, preds: &[f64]) -> Result<f64> {
        let d = &self.density;
        let axis = stage.axis;
        match &stage.kind {
            StageKind::Factorized => {
                let slice = |z: f64| {
                    let mut buf: Vec<f64> = (0..d.dim).map(|a| d.midpoint(a)).collect();
                    buf[axis] = z;
                    d.density(&buf)
                };
                let denom = simpson(slice, d.lo[axis], d.hi[axis], d.nodes);
                if denom < 1e-300 {
                    return Err(Error::DensitySupport(
                        "factorised axis slice carries no mass".into(),
                    ));
                }
                let numer = if x <= d.lo[axis] {
                    0.0
                } else {
                    simpson(slice, d.lo[axis], x.min(d.hi[axis]), d.nodes)
                };
                Ok((numer / denom).clamp(0.0, 1.0))
            }
            StageKind::Table(t) => Ok(t.eval(x)),
            StageKind::Direct => {
                let slice = |z: f64| {
                    let mut buf = Vec::with_capacity(d.dim);
                    buf.extend_from_slice(preds);
                    buf.push(z);
                    d.density(&buf)
                };
                let denom = simpson(slice, d.lo[axis], d.hi[axis], d.nodes);
                if denom < 1e-300 {
                    return Err(Error::DensitySupport(format!(
                        "conditional slice at {preds:?} carries no mass"
                    )));
                }
                let numer = if x <= d.lo[axis] {
                    0.0
                } else {
                    simpson(slice, d.lo[axis], x.min(d.hi[axis]), d.nodes)
                };
                Ok((numer / denom).clamp(0.0, 1.0))
            }
            StageKind::CachedMarginal {
                trailing_nodes,
                cache,
            } => {
                let key: Vec<u32> = preds
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| {
                        let t = (p - d.lo[a]) / (d.hi[a] - d.lo[a]) * (d.nodes - 1) as f64;
                        t.round().clamp(0.0, (d.nodes - 1) as f64) as u32
                    })
                    .collect();
                let table = {
                    let mut guard = cache.lock().expect("cache lock");
                    if let Some(t) = guard.get(&key) {
                        t.clone()
                    } else {
                        let snapped: Vec<f64> = key
                            .iter()
                            .enumerate()
                            .map(|(a, &i)| {
                                d.lo[a] + (d.hi[a] - d.lo[a]) * i as f64 / (d.nodes - 1) as f64
                            })
                            .collect();
                        let t = Arc::new(self.marginal_table(axis, &snapped, *trailing_nodes)?);
                        guard.insert(key.clone(), t.clone());
                        t
                    }
                };
                Ok(table.eval(x))
            }
        }
    }

    fn marginal_table(
        &self,
        axis: usize,
        preds: &[f64],
        trailing_nodes: usize,
    ) -> Result<CdfTable> {
        marginal_table(&self.density, axis, preds, trailing_nodes)
    }
}

/// Axis profile of the marginal density of coordinates `0..=axis` at fixed
/// predecessors, integrated over the trailing axes, as a prefix table.
fn marginal_table(
    d: &JointDensity,
    axis: usize,
    preds: &[f64],
    trailing_nodes: usize,
) -> Result<CdfTable> {
    let trailing_lo = &d.lo[axis + 1..];
    let trailing_hi = &d.hi[axis + 1..];
    let mut values = Vec::with_capacity(d.nodes);
    for i in 0..d.nodes {
        let z = d.lo[axis] + (d.hi[axis] - d.lo[axis]) * i as f64 / (d.nodes - 1) as f64;
        let v = if trailing_lo.is_empty() {
            let mut buf = preds.to_vec();
            buf.push(z);
            d.density(&buf)
        } else {
            let f = |tail: &[f64]| {
                let mut buf = Vec::with_capacity(d.dim);
                buf.extend_from_slice(preds);
                buf.push(z);
                buf.extend_from_slice(tail);
                d.density(&buf)
            };
            tensor_simpson(&f, trailing_lo, trailing_hi, trailing_nodes)
        };
        values.push(v);
    }
    CdfTable::build(d.lo[axis], d.hi[axis], values)
}

impl TransformChain {
    /// Forward transform: coordinate `l` maps to its conditional CDF given
    /// the sample's earlier coordinates, producing mutually independent
    /// uniforms when the input follows the declared density.
    pub fn forward(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if !self.density.inside(sample) {
            return Err(Error::Precondition(format!(
                "sample {sample:?} is outside the declared box"
            )));
        }
        let mut out = Vec::with_capacity(self.dim());
        for stage in &self.stages {
            let u = self.stage_cdf(stage, sample[stage.axis], &sample[..stage.axis])?;
            out.push(u);
        }
        Ok(out)
    }

    /// Inverse transform by bisection per stage; strict monotonicity of
    /// each stage makes the inverse well defined on the box.
    pub fn inverse(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::Config(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                u.len()
            )));
        }
        let d = &self.density;
        let mut x = Vec::with_capacity(self.dim());
        for stage in &self.stages {
            let target = u[stage.axis].clamp(0.0, 1.0);
            let (mut a, mut b) = (d.lo[stage.axis], d.hi[stage.axis]);
            for _ in 0..90 {
                let mid = 0.5 * (a + b);
                if self.stage_cdf(stage, mid, &x)? < target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            x.push(0.5 * (a + b));
        }
        Ok(x)
    }
}

/// Build the conditional-CDF chain of a density, checking that every stage
/// is strictly increasing in its leading coordinate on a coarse grid.
pub fn build_chain(density: &JointDensity) -> Result<TransformChain> {
    let dim = density.dim;
    let mut stages = Vec::with_capacity(dim);
    for axis in 0..dim {
        let kind = if density.factorized {
            StageKind::Factorized
        } else if axis == dim - 1 {
            StageKind::Direct
        } else if axis == 0 {
            let trailing_nodes = if dim > 2 {
                density.nodes.min(129) | 1
            } else {
                density.nodes
            };
            StageKind::Table(marginal_table(density, 0, &[], trailing_nodes)?)
        } else {
            StageKind::CachedMarginal {
                trailing_nodes: if dim - 1 - axis >= 2 {
                    density.nodes.min(129) | 1
                } else {
                    density.nodes
                },
                cache: Mutex::new(HashMap::new()),
            }
        };
        stages.push(Stage { axis, kind });
    }
    let chain = TransformChain {
        density: density.clone(),
        stages,
    };
    // monotonicity check on a coarse grid, at midpoint predecessors
    for si in 0..chain.stages.len() {
        let axis = chain.stages[si].axis;
        let preds: Vec<f64> = (0..axis).map(|a| chain.density.midpoint(a)).collect();
        let mut prev = -1.0;
        for k in 0..9 {
            let x = chain.density.lo[axis]
                + (chain.density.hi[axis] - chain.density.lo[axis]) * (k as f64 + 0.5) / 9.0;
            let u = chain.stage_cdf(&chain.stages[si], x, &preds)?;
            if u <= prev {
                return Err(Error::DensitySupport(format!(
                    "stage {si} is not strictly increasing near x = {x}"
                )));
            }
            prev = u;
        }
    }
    Ok(chain)
}

/// Forward Rosenblatt transform of one sample.
pub fn rosenblatt(chain: &TransformChain, sample: &[f64]) -> Result<Vec<f64>> {
    chain.forward(sample)
}

/// Inverse Rosenblatt transform of one uniform vector.
pub fn rosenblatt_inverse(chain: &TransformChain, u: &[f64]) -> Result<Vec<f64>> {
    chain.inverse(u)
}

/// Innovations extracted from a joint density, regrouped into `t_blocks`
/// blocks of `block_dim` coordinates. Block `t` is a function of the first
/// `t` original blocks only, so the generated filtrations coincide.
#[derive(Debug)]
pub struct Innovations {
    pub chain: TransformChain,
    pub transformed: Vec<Vec<f64>>,
    pub t_blocks: usize,
    pub block_dim: usize,
}

impl Innovations {
    pub fn block(&self, sample: usize, t: usize) -> &[f64] {
        &self.transformed[sample][t * self.block_dim..(t + 1) * self.block_dim]
    }
}

/// Apply the full-dimensional chain to every sample and regroup the
/// coordinates into innovation blocks.
pub fn independentize(
    density: &JointDensity,
    t_blocks: usize,
    block_dim: usize,
    samples: &[Vec<f64>],
) -> Result<Innovations> {
    if t_blocks * block_dim != density.dim {
        return Err(Error::Config(format!(
            "block structure {t_blocks} x {block_dim} does not match dimension {}",
            density.dim
        )));
    }
    let chain = build_chain(density)?;
    let transformed: Result<Vec<Vec<f64>>> = samples.iter().map(|s| chain.forward(s)).collect();
    Ok(Innovations {
        chain,
        transformed: transformed?,
        t_blocks,
        block_dim,
    })
}

/// Seeded centred Gaussian samples with the given covariance, rejected
/// until they fall inside the box (the law of the declared box-truncated
/// density).
pub fn gaussian_samples(
    cov: &[Vec<f64>],
    count: usize,
    seed: u64,
    lo: &[f64],
    hi: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let dim = cov.len();
    let flat: Vec<f64> = cov.iter().flatten().copied().collect();
    let chol = cholesky_factor(&flat, dim)
        .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g: Vec<f64> = (0..dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let x: Vec<f64> = (0..dim)
            .map(|i| (0..=i).map(|k| chol[i * dim + k] * g[k]).sum())
            .collect();
        if x.iter()
            .zip(lo.iter().zip(hi))
            .all(|(v, (a, b))| v >= a && v <= b)
        {
            out.push(x);
        }
    }
    Ok(out)
}

/// Kolmogorov-style uniformity statistic: the largest gap between the
/// empirical CDF of the values and the uniform CDF on `[0, 1]`.
pub fn ks_uniform_statistic(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let lo = u - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - u;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

pub fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// 4x4 quantile-bin chi-square independence statistic for a pair of
/// uniform coordinates; compare against [`CHI2_9DF_999`]. Evidence, not
/// proof.
pub fn chi_square_uniform_4x4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut counts = [[0.0f64; 4]; 4];
    for (x, y) in a.iter().zip(b) {
        let i = ((x * 4.0).floor() as usize).min(3);
        let j = ((y * 4.0).floor() as usize).min(3);
        counts[i][j] += 1.0;
    }
    let expected = n as f64 / 16.0;
    counts
        .iter()
        .flatten()
        .map(|&o| (o - expected) * (o - expected) / expected)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
    }

    fn bivariate(rho: f64) -> JointDensity {
        JointDensity::correlated_normal(&[vec![1.0, rho], vec![rho, 1.0]], 5.0, 513).unwrap()
    }

    #[test]
    fn product_density_conditional_is_the_marginal() {
        let d = JointDensity::product_normal(2, 5.0, 257).unwrap();
        for x in [-1.5, -0.25, 0.8] {
            let f1 = conditional_cdf(&d, &[x, -2.0]).unwrap();
            let f2 = conditional_cdf(&d, &[x, 1.7]).unwrap();
            assert!((f1 - f2).abs() < 1e-12);
            assert!((f1 - phi(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn bivariate_conditional_matches_the_closed_form() {
        let d = bivariate(0.5);
        let sigma = (1.0f64 - 0.25).sqrt();
        for &w in &[-2.0, -1.0, 0.0, 1.0, 2.0] {
            for &x in &[-2.0, -0.5, 0.0, 0.5, 2.0] {
                let f = conditional_cdf(&d, &[x, w]).unwrap();
                let exact = phi((x - 0.5 * w) / sigma);
                assert!((f - exact).abs() < 1e-4, "x={x}, w={w}: {f} vs {exact}");
            }
        }
    }

    #[test]
    fn conditional_cdf_hits_the_box_edges() {
        let d = bivariate(0.5);
        assert!(conditional_cdf(&d, &[-5.0, 0.3]).unwrap() < 1e-9);
        assert!(conditional_cdf(&d, &[5.0, 0.3]).unwrap() > 1.0 - 1e-9);
        assert!(conditional_cdf(&d, &[0.0, 6.0]).is_err());
    }

    #[test]
    fn factorized_chain_is_componentwise() {
        let d = JointDensity::product_normal(2, 5.0, 257).unwrap();
        let chain = build_chain(&d).unwrap();
        let a = chain.forward(&[0.7, -1.0]).unwrap();
        let b = chain.forward(&[0.7, 2.0]).unwrap();
        // coordinate 0 ignores coordinate 1 exactly
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        // and matches the one-dimensional marginal-CDF quadrature
        let d1 = JointDensity::product_normal(1, 5.0, 257).unwrap();
        let m = conditional_cdf(&d1, &[0.7]).unwrap();
        assert!((a[0] - m).abs() < 1e-12);
    }

    #[test]
    fn transformed_samples_look_independent_uniform() {
        let cov = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
        let d = bivariate(0.5);
        let samples = gaussian_samples(&cov, 2000, 424242, d.lo(), d.hi()).unwrap();
        let inn = independentize(&d, 2, 1, &samples).unwrap();
        let u1: Vec<f64> = inn.transformed.iter().map(|u| u[0]).collect();
        let u2: Vec<f64> = inn.transformed.iter().map(|u| u[1]).collect();
        assert!(ks_uniform_statistic(&u1) < 0.04);
        assert!(ks_uniform_statistic(&u2) < 0.04);
        assert!(pearson_correlation(&u1, &u2).abs() < 0.08);
        assert!(chi_square_uniform_4x4(&u1, &u2) < 2.0 * CHI2_9DF_999);
    }

    #[test]
    fn inverse_recovers_grid_points() {
        let d = bivariate(0.5);
        let chain = build_chain(&d).unwrap();
        for &x in &[-2.0, 0.0, 1.5] {
            for &y in &[-1.0, 0.5] {
                let u = chain.forward(&[x, y]).unwrap();
                let back = chain.inverse(&u).unwrap();
                assert!((back[0] - x).abs() < 1e-6 && (back[1] - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stages_read_only_their_prefix() {
        let d = bivariate(0.5);
        let chain = build_chain(&d).unwrap();
        assert_eq!(chain.stage_axes(), vec![0, 1]);
    }

    #[test]
    fn block_structure_must_match() {
        let d = bivariate(0.5);
        assert!(independentize(&d, 3, 1, &[]).is_err());
    }

    #[test]
    fn grid_density_round_trips() {
        // crude 2d grid of a product density
        let mut text = String::from("dims 2\naxis -4 4 81\naxis -4 4 81\n");
        for i in 0..81 {
            for j in 0..81 {
                let x = -4.0 + 8.0 * i as f64 / 80.0;
                let y = -4.0 + 8.0 * j as f64 / 80.0;
                let v = (-0.5 * (x * x + y * y)).exp() / (2.0 * std::f64::consts::PI);
                text.push_str(&format!("{v:.17e}\n"));
            }
        }
        let d = JointDensity::from_grid_str(&text).unwrap();
        let exact = (-0.5f64 * (0.25 + 1.0)).exp() / (2.0 * std::f64::consts::PI);
        assert!((d.density(&[0.5, -1.0]) - exact).abs() < 1e-3);
        assert!(JointDensity::from_grid_str("dims 2\naxis 0 1 3\n").is_err());
    }

    #[test]
    fn mass_validation_rejects_leaky_boxes() {
        let r = JointDensity::product_normal(1, 1.0, 65);
        assert!(matches!(r, Err(Error::DensitySupport(_))));
    }

    #[test]
    fn three_dim_chain_transforms() {
        let cov = vec![
            vec![1.0, 0.3, 0.0],
            vec![0.3, 1.0, 0.2],
            vec![0.0, 0.2, 1.0],
        ];
        let d = JointDensity::correlated_normal(&cov, 5.0, 65).unwrap();
        let chain = build_chain(&d).unwrap();
        let u = chain.forward(&[0.5, -0.5, 1.0]).unwrap();
        assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(chain.stage_axes(), vec![0, 1, 2]);
    }
}
