//! Index space `(X, mu)` and signal space discretizations, plus weights.
//!
//! Index domains are unions of axis-aligned boxes ("sheets"). Each sheet has
//! one or two axes; an axis is linear or logarithmic and carries a density
//! factor, so the measure of a box factorizes into one-dimensional integrals.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fourier;
use crate::C64;

// ---------------------------------------------------------------------------
// Signal grid

/// Periodic sampling of `[-T, T)` with `n` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalGrid {
    half_width: f64,
    n: usize,
}

impl SignalGrid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width {half_width} must be positive")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("point count {n} must be a power of two >= 8")));
        }
        Ok(SignalGrid { half_width, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.step()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.time(k)).collect()
    }

    /// Signed frequency index of DFT bin `j`.
    pub fn signed_index(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Angular frequency of DFT bin `j`.
    pub fn freq(&self, j: usize) -> f64 {
        std::f64::consts::PI * self.signed_index(j) as f64 / self.half_width
    }

    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.step()
    }

    /// `<f, g> = h sum f conj(g)`.
    pub fn inner(&self, f: &[C64], g: &[C64]) -> C64 {
        let s: C64 = f.iter().zip(g).map(|(a, b)| a * b.conj()).sum();
        s * self.step()
    }

    pub fn norm(&self, f: &[C64]) -> f64 {
        (f.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.step()).sqrt()
    }

    pub fn integrate(&self, f: &[C64]) -> C64 {
        f.iter().sum::<C64>() * self.step()
    }

    /// Fourier coefficients `F_j = h sum_k f_k e^{-i xi_j t_k}`, so that
    /// `<f, g> = (2T)^{-1} sum_j F_j conj(G_j)`.
    pub fn spectrum(&self, f: &[C64]) -> Vec<C64> {
        let mut buf = f.to_vec();
        fourier::fft(&mut buf);
        let h = self.step();
        for (j, v) in buf.iter_mut().enumerate() {
            let sign = if self.signed_index(j).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            *v *= h * sign;
        }
        buf
    }

    /// Inverse of [`SignalGrid::spectrum`].
    pub fn from_spectrum(&self, spec: &[C64]) -> Vec<C64> {
        let mut buf: Vec<C64> = spec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let sign = if self.signed_index(j).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                v * sign
            })
            .collect();
        fourier::ifft(&mut buf);
        let scale = 1.0 / (self.n as f64 * self.step());
        for v in buf.iter_mut() {
            *v *= scale;
        }
        buf
    }
}

// ---------------------------------------------------------------------------
// Points, sheets, domains

/// A point of the index space. One-dimensional sheets ignore `c[1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub sheet: u8,
    pub c: [f64; 2],
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { sheet: 0, c: [x, y] }
    }

    pub fn line(x: f64) -> Self {
        Point { sheet: 0, c: [x, 0.0] }
    }

    pub fn on_sheet(sheet: u8, c: [f64; 2]) -> Self {
        Point { sheet, c }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    Linear,
    Log,
}

impl AxisScale {
    pub fn to_axis(self, v: f64) -> f64 {
        match self {
            AxisScale::Linear => v,
            AxisScale::Log => v.ln(),
        }
    }

    pub fn from_axis(self, u: f64) -> f64 {
        match self {
            AxisScale::Linear => u,
            AxisScale::Log => u.exp(),
        }
    }
}

/// One-dimensional density factor of the measure along an axis.
#[derive(Clone)]
pub enum AxisDensity {
    Uniform,
    /// `v^{-2}`, the scale part of `db da / a^2`.
    InverseSquare,
    /// `(1 + |v|)^{-alpha}`.
    PowerDecay(f64),
    Custom(String, Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for AxisDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisDensity::Uniform => write!(f, "uniform"),
            AxisDensity::InverseSquare => write!(f, "inverse_square"),
            AxisDensity::PowerDecay(a) => write!(f, "power_decay({a})"),
            AxisDensity::Custom(name, _) => write!(f, "custom({name})"),
        }
    }
}

impl AxisDensity {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            AxisDensity::Uniform => 1.0,
            AxisDensity::InverseSquare => 1.0 / (v * v),
            AxisDensity::PowerDecay(a) => (1.0 + v.abs()).powf(-a),
            AxisDensity::Custom(_, f) => f(v),
        }
    }

    /// `int_a^b density(v) dv` in natural coordinates.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            AxisDensity::Uniform => b - a,
            AxisDensity::InverseSquare => 1.0 / a - 1.0 / b,
            AxisDensity::PowerDecay(al) => {
                let anti = |v: f64| {
                    if (al - 1.0).abs() < 1e-14 {
                        v.signum() * (1.0 + v.abs()).ln()
                    } else {
                        v.signum() * ((1.0 + v.abs()).powf(1.0 - al) - 1.0) / (1.0 - al)
                    }
                };
                anti(b) - anti(a)
            }
            AxisDensity::Custom(_, f) => gauss_legendre(a, b, 64, |v| f(v)),
        }
    }

    fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// Composite 8-point Gauss-Legendre rule with `panels` panels.
pub fn gauss_legendre(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    const X: [f64; 4] = [0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363];
    const W: [f64; 4] = [0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763];
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for k in 0..4 {
            s += W[k] * (f(mid - half * X[k]) + f(mid + half * X[k]));
        }
        total += s * half;
    }
    total
}

/// One box of the index domain.
#[derive(Clone, Debug)]
pub struct Sheet {
    pub id: u8,
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub scale: [AxisScale; 2],
    pub density: [AxisDensity; 2],
    /// Constant factor in front of the product density.
    pub factor: f64,
    /// Metric coordinate used for the missing second axis of a 1D sheet.
    pub embed_fill: f64,
}

impl Sheet {
    pub fn density_at(&self, c: &[f64; 2]) -> f64 {
        let mut d = self.factor * self.density[0].eval(c[0]);
        if self.dim == 2 {
            d *= self.density[1].eval(c[1]);
        }
        d
    }

    /// Exact measure of the box `[lo, hi]` (natural coordinates).
    pub fn box_measure(&self, lo: &[f64; 2], hi: &[f64; 2]) -> f64 {
        let mut m = self.factor * self.density[0].integral(lo[0], hi[0]);
        if self.dim == 2 {
            m *= self.density[1].integral(lo[1], hi[1]);
        }
        m
    }

    pub fn measure(&self) -> f64 {
        self.box_measure(&self.lo, &self.hi)
    }

    /// Lattice coordinate (log for logarithmic axes).
    pub fn axis_coord(&self, axis: usize, v: f64) -> f64 {
        self.scale[axis].to_axis(v)
    }

    pub fn natural_coord(&self, axis: usize, u: f64) -> f64 {
        self.scale[axis].from_axis(u)
    }

    pub fn axis_lo(&self, axis: usize) -> f64 {
        self.axis_coord(axis, self.lo[axis])
    }

    pub fn axis_hi(&self, axis: usize) -> f64 {
        self.axis_coord(axis, self.hi[axis])
    }

    /// `int g(u) dmu_axis` over `[u1, u2]` in lattice coordinates.
    pub fn axis_integral_fn(&self, axis: usize, u1: f64, u2: f64, g: impl Fn(f64) -> f64) -> f64 {
        let sc = self.scale[axis];
        let dens = &self.density[axis];
        gauss_legendre(u1, u2, 4, |u| {
            let v = sc.from_axis(u);
            let jac = match sc {
                AxisScale::Linear => 1.0,
                AxisScale::Log => v,
            };
            g(u) * dens.eval(v) * jac
        })
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        (0..self.dim).all(|a| p.c[a] >= self.lo[a] - tol && p.c[a] <= self.hi[a] + tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    L1,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SheetDescriptor {
    pub id: u8,
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub scale: [AxisScale; 2],
    pub density: [String; 2],
    pub factor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DomainDescriptor {
    pub sheets: Vec<SheetDescriptor>,
    pub metric: MetricKind,
}

/// Truncated index domain: one or more sheets with a common metric.
#[derive(Clone, Debug)]
pub struct IndexDomain {
    sheets: Vec<Sheet>,
    metric: MetricKind,
}

impl IndexDomain {
    pub fn new(sheets: Vec<Sheet>, metric: MetricKind) -> Result<Self> {
        if sheets.is_empty() {
            return Err(Error::InvalidGrid("domain has no sheets".into()));
        }
        for (k, s) in sheets.iter().enumerate() {
            if s.id as usize != k {
                return Err(Error::InvalidGrid("sheet ids must be 0, 1, ...".into()));
            }
            if s.dim == 0 || s.dim > 2 {
                return Err(Error::InvalidGrid(format!("sheet dimension {} unsupported", s.dim)));
            }
            for a in 0..s.dim {
                if !(s.lo[a].is_finite() && s.hi[a].is_finite() && s.lo[a] < s.hi[a]) {
                    return Err(Error::InvalidGrid(format!("empty box on axis {a}")));
                }
                if s.scale[a] == AxisScale::Log && s.lo[a] <= 0.0 {
                    return Err(Error::InvalidGrid("logarithmic axis needs positive bounds".into()));
                }
            }
            if !(s.factor.is_finite() && s.factor > 0.0) {
                return Err(Error::InvalidMeasure(format!("density factor {} must be positive", s.factor)));
            }
        }
        Ok(IndexDomain { sheets, metric })
    }

    /// Lebesgue measure times `factor` on a 2D box, Euclidean metric.
    pub fn plane(lo: [f64; 2], hi: [f64; 2], factor: f64) -> Result<Self> {
        Self::new(
            vec![Sheet {
                id: 0,
                dim: 2,
                lo,
                hi,
                scale: [AxisScale::Linear; 2],
                density: [AxisDensity::Uniform, AxisDensity::Uniform],
                factor,
                embed_fill: 0.0,
            }],
            MetricKind::Euclidean,
        )
    }

    /// Lebesgue measure on an interval.
    pub fn line(lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            vec![Sheet {
                id: 0,
                dim: 1,
                lo: [lo, 0.0],
                hi: [hi, 0.0],
                scale: [AxisScale::Linear; 2],
                density: [AxisDensity::Uniform, AxisDensity::Uniform],
                factor: 1.0,
                embed_fill: 0.0,
            }],
            MetricKind::Euclidean,
        )
    }

    /// `db da / a^2` on `[b0, b1] x [a0, a1]`, cells geometric in `a`,
    /// metric `|b - b'| + |log(a/a')|`.
    pub fn wavelet_halfplane(b: [f64; 2], a: [f64; 2]) -> Result<Self> {
        Self::new(
            vec![Sheet {
                id: 0,
                dim: 2,
                lo: [b[0], a[0]],
                hi: [b[1], a[1]],
                scale: [AxisScale::Linear, AxisScale::Log],
                density: [AxisDensity::Uniform, AxisDensity::InverseSquare],
                factor: 1.0,
                embed_fill: 0.0,
            }],
            MetricKind::L1,
        )
    }

    pub fn sheets(&self) -> &[Sheet] {
        &self.sheets
    }

    pub fn sheet(&self, id: u8) -> &Sheet {
        &self.sheets[id as usize]
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn measure(&self) -> f64 {
        self.sheets.iter().map(|s| s.measure()).sum()
    }

    /// Metric coordinates of a point.
    pub fn embed(&self, p: &Point) -> [f64; 2] {
        let s = &self.sheets[p.sheet as usize];
        let u0 = s.axis_coord(0, p.c[0]);
        let u1 = if s.dim == 2 { s.axis_coord(1, p.c[1]) } else { s.embed_fill };
        [u0, u1]
    }

    pub fn dist(&self, p: &Point, q: &Point) -> f64 {
        let a = self.embed(p);
        let b = self.embed(q);
        match self.metric {
            MetricKind::Euclidean => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
            MetricKind::L1 => (a[0] - b[0]).abs() + (a[1] - b[1]).abs(),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        (p.sheet as usize) < self.sheets.len() && self.sheets[p.sheet as usize].contains(p, 1e-12)
    }

    pub fn describe(&self) -> DomainDescriptor {
        DomainDescriptor {
            sheets: self
                .sheets
                .iter()
                .map(|s| SheetDescriptor {
                    id: s.id,
                    dim: s.dim,
                    lo: s.lo,
                    hi: s.hi,
                    scale: s.scale,
                    density: [s.density[0].describe(), s.density[1].describe()],
                    factor: s.factor,
                })
                .collect(),
            metric: self.metric,
        }
    }
}

// ---------------------------------------------------------------------------
// Quadrature grid

static GRID_IDS: AtomicU64 = AtomicU64::new(1);

/// Tensor block of a quadrature grid on one sheet.
#[derive(Clone, Debug)]
pub struct GridBlock {
    pub sheet: u8,
    pub start: usize,
    /// Node coordinates per axis (natural coordinates).
    pub nodes: [Vec<f64>; 2],
    /// Cell edges per axis (natural coordinates).
    pub edges: [Vec<f64>; 2],
}

impl GridBlock {
    pub fn len(&self) -> usize {
        self.nodes[0].len() * self.nodes[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn res(&self) -> [usize; 2] {
        [self.nodes[0].len(), self.nodes[1].len()]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridDescriptor {
    pub nodes: usize,
    pub resolution: Vec<[usize; 2]>,
    pub measure: f64,
}

/// Quadrature discretization of `(X, mu)`.
#[derive(Clone, Debug)]
pub struct QuadGrid {
    id: u64,
    domain: IndexDomain,
    points: Vec<Point>,
    weights: Vec<f64>,
    blocks: Vec<GridBlock>,
}

impl QuadGrid {
    /// Tensor-product midpoint rule; `resolution[s]` per sheet (second entry
    /// ignored on 1D sheets). Logarithmic axes use geometric midpoints.
    pub fn build(domain: &IndexDomain, resolution: &[[usize; 2]]) -> Result<Self> {
        if resolution.len() != domain.sheets.len() {
            return Err(Error::InvalidGrid(format!(
                "{} resolutions for {} sheets",
                resolution.len(),
                domain.sheets.len()
            )));
        }
        let mut edges_per_sheet = Vec::new();
        for (s, res) in domain.sheets.iter().zip(resolution) {
            let mut edges: [Vec<f64>; 2] = [vec![0.0, 0.0], vec![0.0, 0.0]];
            for a in 0..s.dim {
                if res[a] < 2 {
                    return Err(Error::InvalidGrid(format!("resolution {} on axis {a} (need >= 2)", res[a])));
                }
                let (u0, u1) = (s.axis_lo(a), s.axis_hi(a));
                edges[a] = (0..=res[a])
                    .map(|k| s.natural_coord(a, u0 + (u1 - u0) * k as f64 / res[a] as f64))
                    .collect();
                edges[a][0] = s.lo[a];
                edges[a][res[a]] = s.hi[a];
            }
            edges_per_sheet.push(edges);
        }
        Self::assemble(domain, edges_per_sheet, false)
    }

    /// Grid whose cells are the boxes between consecutive `edges`; weights are
    /// exact cell measures.
    pub fn from_edges(domain: &IndexDomain, edges: Vec<[Vec<f64>; 2]>) -> Result<Self> {
        Self::assemble(domain, edges, true)
    }

    fn assemble(domain: &IndexDomain, edges: Vec<[Vec<f64>; 2]>, exact: bool) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut blocks = Vec::new();
        for (s, e) in domain.sheets.iter().zip(edges) {
            let mut nodes: [Vec<f64>; 2] = [vec![0.0], vec![0.0]];
            let mut edges = e;
            for a in 0..2 {
                if a >= s.dim {
                    edges[a] = vec![0.0, 0.0];
                    nodes[a] = vec![0.0];
                    continue;
                }
                if edges[a].len() < 2 || edges[a].windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidGrid(format!("empty or unsorted cells on axis {a}")));
                }
                nodes[a] = edges[a]
                    .windows(2)
                    .map(|w| match s.scale[a] {
                        AxisScale::Linear => 0.5 * (w[0] + w[1]),
                        AxisScale::Log => (w[0] * w[1]).sqrt(),
                    })
                    .collect();
            }
            let start = points.len();
            for i0 in 0..nodes[0].len() {
                for i1 in 0..nodes[1].len() {
                    let c = [nodes[0][i0], nodes[1][i1]];
                    let w = if exact {
                        let lo = [edges[0][i0], edges[1][i1]];
                        let hi = [edges[0][i0 + 1], edges[1][i1 + 1]];
                        s.box_measure(&lo, &hi)
                    } else {
                        let mut vol = edges[0][i0 + 1] - edges[0][i0];
                        if s.dim == 2 {
                            vol *= edges[1][i1 + 1] - edges[1][i1];
                        }
                        vol * s.density_at(&c)
                    };
                    if !(w.is_finite() && w > 0.0) {
                        return Err(Error::InvalidMeasure(format!(
                            "nonpositive density at ({}, {})",
                            c[0], c[1]
                        )));
                    }
                    points.push(Point { sheet: s.id, c });
                    weights.push(w);
                }
            }
            blocks.push(GridBlock { sheet: s.id, start, nodes, edges });
        }
        Ok(QuadGrid {
            id: GRID_IDS.fetch_add(1, Ordering::Relaxed),
            domain: domain.clone(),
            points,
            weights,
            blocks,
        })
    }

    /// Identity used to match kernel caches to grids.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn domain(&self) -> &IndexDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn blocks(&self) -> &[GridBlock] {
        &self.blocks
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn describe(&self) -> GridDescriptor {
        GridDescriptor {
            nodes: self.len(),
            resolution: self.blocks.iter().map(|b| b.res()).collect(),
            measure: self.measure(),
        }
    }

    /// `sum_k F(x_k) w_k` in index order.
    pub fn integrate(&self, values: &[C64]) -> Result<C64> {
        check_len(self.len(), values.len())?;
        Ok(values.iter().zip(&self.weights).map(|(v, w)| v * *w).sum())
    }

    pub fn integrate_real(&self, values: &[f64]) -> Result<f64> {
        check_len(self.len(), values.len())?;
        Ok(values.iter().zip(&self.weights).map(|(v, w)| v * w).sum())
    }

    /// Index of the grid node whose cell contains `p` (nearest on the
    /// boundary).
    pub fn nearest(&self, p: &Point) -> usize {
        let b = self
            .blocks
            .iter()
            .find(|b| b.sheet == p.sheet)
            .unwrap_or(&self.blocks[0]);
        let locate = |edges: &Vec<f64>, v: f64| -> usize {
            let n = edges.len() - 1;
            if n <= 1 {
                return 0;
            }
            let k = edges.partition_point(|&e| e <= v);
            k.saturating_sub(1).min(n - 1)
        };
        let i0 = locate(&b.edges[0], p.c[0]);
        let i1 = locate(&b.edges[1], p.c[1]);
        b.start + i0 * b.nodes[1].len() + i1
    }
}

// ---------------------------------------------------------------------------
// Weights

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightDescriptor {
    Trivial,
    Polynomial { s: f64 },
    ScalePower { s: f64 },
    Derived { from: Box<WeightDescriptor>, z: Point },
    Custom { name: String },
}

/// Positive weight `w` on `X`.
#[derive(Clone)]
pub enum WeightOnX {
    Trivial,
    /// `(1 + |x|)^s` with `|x|` the Euclidean norm of the coordinates.
    Polynomial { s: f64 },
    /// `a^{-s}` on the scale axis of 2D sheets, 1 on 1D sheets.
    ScalePower { s: f64 },
    Derived { m: Box<AdmissibleWeight>, z: Point },
    Custom(String, Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for WeightOnX {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.describe())
    }
}

impl WeightOnX {
    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            WeightOnX::Trivial => 1.0,
            WeightOnX::Polynomial { s } => (1.0 + (p.c[0] * p.c[0] + p.c[1] * p.c[1]).sqrt()).powf(*s),
            WeightOnX::ScalePower { s } => {
                if p.c[1] > 0.0 {
                    p.c[1].powf(-s)
                } else {
                    1.0
                }
            }
            WeightOnX::Derived { m, z } => m.eval(p, z),
            WeightOnX::Custom(_, f) => f(p),
        }
    }

    pub fn describe(&self) -> WeightDescriptor {
        match self {
            WeightOnX::Trivial => WeightDescriptor::Trivial,
            WeightOnX::Polynomial { s } => WeightDescriptor::Polynomial { s: *s },
            WeightOnX::ScalePower { s } => WeightDescriptor::ScalePower { s: *s },
            WeightOnX::Derived { m, z } => WeightDescriptor::Derived { from: Box::new(m.describe()), z: *z },
            WeightOnX::Custom(name, _) => WeightDescriptor::Custom { name: name.clone() },
        }
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, WeightOnX::Trivial)
    }
}

/// Admissible weight `m` on `X x X`.
#[derive(Clone)]
pub enum AdmissibleWeight {
    Trivial,
    FromW(WeightOnX),
    Custom(String, Arc<dyn Fn(&Point, &Point) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for AdmissibleWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.describe())
    }
}

impl AdmissibleWeight {
    pub fn eval(&self, x: &Point, y: &Point) -> f64 {
        match self {
            AdmissibleWeight::Trivial => 1.0,
            AdmissibleWeight::FromW(w) => {
                let r = w.eval(x) / w.eval(y);
                r.max(1.0 / r)
            }
            AdmissibleWeight::Custom(_, f) => f(x, y),
        }
    }

    pub fn describe(&self) -> WeightDescriptor {
        match self {
            AdmissibleWeight::Trivial => WeightDescriptor::Trivial,
            AdmissibleWeight::FromW(w) => w.describe(),
            AdmissibleWeight::Custom(name, _) => WeightDescriptor::Custom { name: name.clone() },
        }
    }

    pub fn is_trivial(&self) -> bool {
        match self {
            AdmissibleWeight::Trivial => true,
            AdmissibleWeight::FromW(w) => w.is_trivial(),
            AdmissibleWeight::Custom(..) => false,
        }
    }

    /// Evaluator specialized to a fixed node set: `w` values are cached when
    /// `m` comes from a weight on `X`.
    pub fn on_nodes<'a>(&'a self, points: &'a [Point]) -> NodeWeight<'a> {
        let w = match self {
            AdmissibleWeight::FromW(w) if !w.is_trivial() => Some(points.iter().map(|p| w.eval(p)).collect()),
            _ => None,
        };
        NodeWeight { m: self, points, w }
    }
}

/// `m` restricted to grid nodes.
pub struct NodeWeight<'a> {
    m: &'a AdmissibleWeight,
    points: &'a [Point],
    w: Option<Vec<f64>>,
}

impl NodeWeight<'_> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if let Some(w) = &self.w {
            let r = w[i] / w[j];
            return r.max(1.0 / r);
        }
        if self.m.is_trivial() {
            1.0
        } else {
            self.m.eval(&self.points[i], &self.points[j])
        }
    }

    /// `m(x_i, p)` for an arbitrary point.
    pub fn to_point(&self, i: usize, p: &Point) -> f64 {
        if self.m.is_trivial() {
            1.0
        } else {
            self.m.eval(&self.points[i], p)
        }
    }
}

/// `m(x, y) = max{w(x)/w(y), w(y)/w(x)}`.
pub fn weight_from_w(w: WeightOnX) -> AdmissibleWeight {
    if w.is_trivial() {
        AdmissibleWeight::Trivial
    } else {
        AdmissibleWeight::FromW(w)
    }
}

/// `v(x) = m(x, z)`.
pub fn derived_v(m: &AdmissibleWeight, z: Point) -> WeightOnX {
    if m.is_trivial() {
        WeightOnX::Trivial
    } else {
        WeightOnX::Derived { m: Box::new(m.clone()), z }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdmissibilityReport {
    /// Largest relative excess `(m(x,y) - m(x,z) m(z,y)) / m(x,y)`.
    pub submultiplicativity: f64,
    pub symmetry: f64,
    /// Largest `1 - m(x, y)`.
    pub lower_bound: f64,
    pub diagonal_max: f64,
    pub max_violation: f64,
    pub triples: usize,
}

/// Checks submultiplicativity on random triples and symmetry/diagonal on all
/// node pairs.
pub fn check_admissible(m: &AdmissibleWeight, grid: &QuadGrid, triple_samples: usize, seed: u64) -> Result<AdmissibilityReport> {
    if triple_samples == 0 {
        return Err(Error::InvalidParameter("triple_samples must be >= 1".into()));
    }
    let pts = grid.points();
    let n = pts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut submult: f64 = 0.0;
    for _ in 0..triple_samples {
        let (x, y, z) = (&pts[rng.gen_range(0..n)], &pts[rng.gen_range(0..n)], &pts[rng.gen_range(0..n)]);
        let mxy = m.eval(x, y);
        let excess = (mxy - m.eval(x, z) * m.eval(z, y)) / mxy;
        submult = submult.max(excess);
    }
    let mut symmetry: f64 = 0.0;
    let mut lower: f64 = 0.0;
    let mut diag: f64 = 0.0;
    for i in 0..n {
        diag = diag.max(m.eval(&pts[i], &pts[i]));
        for j in 0..n {
            let a = m.eval(&pts[i], &pts[j]);
            let b = m.eval(&pts[j], &pts[i]);
            symmetry = symmetry.max((a - b).abs() / a.max(b));
            lower = lower.max(1.0 - a);
        }
    }
    Ok(AdmissibilityReport {
        submultiplicativity: submult,
        symmetry,
        lower_bound: lower,
        diagonal_max: diag,
        max_violation: submult.max(symmetry).max(lower),
        triples: triple_samples,
    })
}
