//! Coverings of the truncated index space by boxes, their moderation
//! constants and partitions of unity.
//!
//! Lattice coverings are built per sheet in axis coordinates (logarithmic on
//! scale axes): cell `k` along an axis has centre `lo + (k + 1/2) step` and
//! length `step / (1 - overlap)`, clipped to the box. Cells are closed boxes
//! for containment queries. Neighbour sets only count intersections with
//! nonempty interior, and grid assembly uses half-open cells so a node on a
//! shared face is counted once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure_space::{AdmissibleWeight, IndexDomain, Point, QuadGrid, Sheet};

/// Closed box on one sheet, natural coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub sheet: u8,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuFlavor {
    Indicator,
    Tent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Placement {
    Center,
    Random { seed: u64 },
}

/// One axis of a lattice: clipped cell intervals in axis coordinates.
#[derive(Clone, Debug)]
struct AxisLattice {
    lo: f64,
    hi: f64,
    step: f64,
    len: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl AxisLattice {
    fn new(lo: f64, hi: f64, size: f64, overlap: f64) -> Self {
        let extent = hi - lo;
        let k = ((extent / size).round() as usize).max(1);
        let step = extent / k as f64;
        let len = step / (1.0 - overlap);
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        for i in 0..k {
            let c = lo + (i as f64 + 0.5) * step;
            a.push((c - 0.5 * len).max(lo));
            b.push((c + 0.5 * len).min(hi));
        }
        if let Some(x) = a.first_mut() {
            *x = lo;
        }
        if let Some(x) = b.last_mut() {
            *x = hi;
        }
        AxisLattice { lo, hi, step, len, a, b }
    }

    fn count(&self) -> usize {
        self.a.len()
    }

    fn centre(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.step
    }

    /// Index range of cells whose closed interval may contain `u`.
    fn candidates(&self, u: f64) -> std::ops::Range<usize> {
        let k = self.count() as i64;
        let r = (0.5 * self.len / self.step).ceil() as i64 + 1;
        let c = ((u - self.lo) / self.step - 0.5).round() as i64;
        let s = (c - r).clamp(0, k);
        let e = (c + r + 1).clamp(0, k);
        s as usize..e as usize
    }

    fn containing(&self, u: f64, tol: f64) -> Vec<usize> {
        self.candidates(u).filter(|&k| u >= self.a[k] - tol && u <= self.b[k] + tol).collect()
    }

    fn containing_half_open(&self, u: f64) -> Vec<usize> {
        self.candidates(u)
            .filter(|&k| u >= self.a[k] && (u < self.b[k] || (self.b[k] == self.hi && u <= self.hi)))
            .collect()
    }

    /// Sorted breakpoints (edges and centres).
    fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.a.iter().chain(&self.b).copied().collect();
        v.extend((0..self.count()).map(|k| self.centre(k).clamp(self.lo, self.hi)));
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        v.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
        v
    }

    fn tent(&self, k: usize, u: f64) -> f64 {
        if u < self.a[k] - 1e-12 || u > self.b[k] + 1e-12 {
            return 0.0;
        }
        (1.0 - TENT_SLOPE * (u - self.centre(k)).abs() / (0.5 * self.len)).max(0.0)
    }

    /// `phi_k(u)` for the one-dimensional partition of unity.
    fn pu(&self, flavor: PuFlavor, k: usize, u: f64) -> f64 {
        let cand = self.containing(u, 1e-12);
        if !cand.contains(&k) {
            return 0.0;
        }
        match flavor {
            PuFlavor::Indicator => 1.0 / cand.len() as f64,
            PuFlavor::Tent => {
                let tot: f64 = cand.iter().map(|&j| self.tent(j, u)).sum();
                self.tent(k, u) / tot
            }
        }
    }
}

/// Tents fall to `1 - TENT_SLOPE` at the cell edges, so they stay positive
/// on the closed cell.
const TENT_SLOPE: f64 = 0.99;

#[derive(Clone, Debug)]
struct SheetLattice {
    sheet: u8,
    dim: usize,
    start: usize,
    axes: Vec<AxisLattice>,
}

impl SheetLattice {
    fn counts(&self) -> [usize; 2] {
        [self.axes[0].count(), if self.dim == 2 { self.axes[1].count() } else { 1 }]
    }

    fn index(&self, k: [usize; 2]) -> usize {
        self.start + k[0] * self.counts()[1] + k[1]
    }

    fn unindex(&self, i: usize) -> [usize; 2] {
        let c = self.counts();
        let r = i - self.start;
        [r / c[1], r % c[1]]
    }

    fn len(&self) -> usize {
        let c = self.counts();
        c[0] * c[1]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoveringSpec {
    /// Cell size per sheet and axis, in axis coordinates (log units on
    /// logarithmic axes).
    pub cell_size: Vec<[f64; 2]>,
    pub overlap: f64,
    pub placement: Placement,
}

/// Covering `{U_i}` with sample points `x_i` and measures `a_i`.
#[derive(Clone, Debug)]
pub struct Covering {
    domain: IndexDomain,
    cells: Vec<Cell>,
    points: Vec<Point>,
    measures: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    lattice: Option<(CoveringSpec, Vec<SheetLattice>)>,
}

/// Moderation constants and the pass/fail status of each defining bullet.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModerationReport {
    pub cells: usize,
    /// `N = max_i #i*`.
    pub overlap_n: usize,
    /// `D = min_i a_i`.
    pub d_min: f64,
    /// `max a_i / a_j` over neighbours.
    pub c_tilde: f64,
    pub c_m_u: f64,
    pub covers_grid: bool,
    pub points_inside: bool,
    pub bullets: Vec<Bullet>,
    pub moderate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Bullet {
    pub name: String,
    pub pass: bool,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoveringDescriptor {
    pub cells: Vec<Cell>,
    pub points: Vec<Point>,
    pub measures: Vec<f64>,
    pub spec: Option<CoveringSpec>,
}

impl Covering {
    /// Regular lattice of boxes on every sheet.
    pub fn lattice(domain: &IndexDomain, spec: CoveringSpec) -> Result<Self> {
        if !(0.0..1.0).contains(&spec.overlap) {
            return Err(Error::InvalidParameter(format!("overlap {} must lie in [0, 1)", spec.overlap)));
        }
        if spec.cell_size.len() != domain.sheets().len() {
            return Err(Error::InvalidParameter(format!(
                "{} cell sizes for {} sheets",
                spec.cell_size.len(),
                domain.sheets().len()
            )));
        }
        let mut lattices = Vec::new();
        let mut start = 0;
        for (s, size) in domain.sheets().iter().zip(&spec.cell_size) {
            let mut axes = Vec::new();
            for a in 0..s.dim {
                if !(size[a].is_finite() && size[a] > 0.0) {
                    return Err(Error::InvalidParameter(format!("cell size {} must be positive", size[a])));
                }
                axes.push(AxisLattice::new(s.axis_lo(a), s.axis_hi(a), size[a], spec.overlap));
            }
            let l = SheetLattice { sheet: s.id, dim: s.dim, start, axes };
            start += l.len();
            lattices.push(l);
        }
        let mut cells = Vec::with_capacity(start);
        let mut points = Vec::with_capacity(start);
        for l in &lattices {
            let s = domain.sheet(l.sheet);
            for i in 0..l.len() {
                let k = l.unindex(l.start + i);
                let mut lo = [0.0; 2];
                let mut hi = [0.0; 2];
                let mut c = [0.0; 2];
                for a in 0..l.dim {
                    let ax = &l.axes[a];
                    lo[a] = s.natural_coord(a, ax.a[k[a]]);
                    hi[a] = s.natural_coord(a, ax.b[k[a]]);
                    c[a] = ax.centre(k[a]);
                }
                let idx = l.start + i;
                if let Placement::Random { seed } = spec.placement {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                    for a in 0..l.dim {
                        let ax = &l.axes[a];
                        c[a] = rng.gen_range(ax.a[k[a]]..ax.b[k[a]]);
                    }
                }
                let mut nat = [0.0; 2];
                for a in 0..l.dim {
                    nat[a] = s.natural_coord(a, c[a]).clamp(lo[a], hi[a]);
                }
                cells.push(Cell { sheet: l.sheet, lo, hi });
                points.push(Point::on_sheet(l.sheet, nat));
            }
        }
        let measures = cells.iter().map(|c| cell_measure(domain, c)).collect();
        let neighbors = lattice_neighbors(&lattices);
        Ok(Covering { domain: domain.clone(), cells, points, measures, neighbors, lattice: Some((spec, lattices)) })
    }

    /// Covering from explicit cells and points; `x_i` must lie in `U_i`.
    pub fn from_cells(domain: &IndexDomain, cells: Vec<Cell>, points: Vec<Point>) -> Result<Self> {
        if cells.len() != points.len() {
            return Err(Error::LengthMismatch { expected: cells.len(), got: points.len() });
        }
        for (i, (c, p)) in cells.iter().zip(&points).enumerate() {
            if c.sheet as usize >= domain.sheets().len() {
                return Err(Error::InvalidGrid(format!("cell {i} refers to a missing sheet")));
            }
            if !cell_contains(domain, c, p, 1e-12) {
                return Err(Error::Precondition(format!("sample point of cell {i} lies outside the cell")));
            }
        }
        let measures = cells.iter().map(|c| cell_measure(domain, c)).collect();
        let n = cells.len();
        let neighbors = (0..n)
            .into_par_iter()
            .map(|i| (0..n).filter(|&j| open_intersect(domain, &cells[i], &cells[j])).collect())
            .collect();
        Ok(Covering { domain: domain.clone(), cells, points, measures, neighbors, lattice: None })
    }

    /// One cell per quadrature node, the node's own cell of the grid.
    pub fn from_grid(grid: &QuadGrid) -> Result<Self> {
        let mut cells = Vec::with_capacity(grid.len());
        for b in grid.blocks() {
            let dim = grid.domain().sheet(b.sheet).dim;
            for i0 in 0..b.nodes[0].len() {
                for i1 in 0..b.nodes[1].len() {
                    let mut lo = [0.0; 2];
                    let mut hi = [0.0; 2];
                    lo[0] = b.edges[0][i0];
                    hi[0] = b.edges[0][i0 + 1];
                    if dim == 2 {
                        lo[1] = b.edges[1][i1];
                        hi[1] = b.edges[1][i1 + 1];
                    }
                    cells.push(Cell { sheet: b.sheet, lo, hi });
                }
            }
        }
        Self::from_cells(grid.domain(), cells, grid.points().to_vec())
    }

    /// Same lattice with all cell sides halved.
    pub fn refine(&self) -> Result<Self> {
        let (spec, _) = self
            .lattice
            .as_ref()
            .ok_or_else(|| Error::Precondition("only lattice coverings can be refined".into()))?;
        let mut s = spec.clone();
        for c in s.cell_size.iter_mut() {
            c[0] *= 0.5;
            c[1] *= 0.5;
        }
        Self::lattice(&self.domain, s)
    }

    pub fn domain(&self) -> &IndexDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    /// `i*`, including `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn spec(&self) -> Option<&CoveringSpec> {
        self.lattice.as_ref().map(|(s, _)| s)
    }

    pub fn describe(&self) -> CoveringDescriptor {
        CoveringDescriptor {
            cells: self.cells.clone(),
            points: self.points.clone(),
            measures: self.measures.clone(),
            spec: self.spec().cloned(),
        }
    }

    fn sheet_lattice(&self, sheet: u8) -> Option<&SheetLattice> {
        self.lattice.as_ref().map(|(_, ls)| &ls[sheet as usize])
    }

    /// Cells whose closed box contains `p`.
    pub fn containing(&self, p: &Point) -> Vec<usize> {
        if (p.sheet as usize) >= self.domain.sheets().len() {
            return Vec::new();
        }
        if let Some(l) = self.sheet_lattice(p.sheet) {
            let s = self.domain.sheet(p.sheet);
            let tol = |u: f64| 1e-12 * (1.0 + u.abs());
            let u0 = s.axis_coord(0, p.c[0]);
            let k0 = l.axes[0].containing(u0, tol(u0));
            let k1 = if l.dim == 2 {
                let u1 = s.axis_coord(1, p.c[1]);
                l.axes[1].containing(u1, tol(u1))
            } else {
                vec![0]
            };
            let mut out = Vec::with_capacity(k0.len() * k1.len());
            for &a in &k0 {
                for &b in &k1 {
                    out.push(l.index([a, b]));
                }
            }
            out
        } else {
            (0..self.cells.len()).filter(|&i| cell_contains(&self.domain, &self.cells[i], p, 1e-12)).collect()
        }
    }

    /// Cells containing `p` with half-open faces (upper box faces closed).
    pub fn containing_half_open(&self, p: &Point) -> Vec<usize> {
        if (p.sheet as usize) >= self.domain.sheets().len() {
            return Vec::new();
        }
        let s = self.domain.sheet(p.sheet);
        if let Some(l) = self.sheet_lattice(p.sheet) {
            let k0 = l.axes[0].containing_half_open(s.axis_coord(0, p.c[0]));
            let k1 = if l.dim == 2 { l.axes[1].containing_half_open(s.axis_coord(1, p.c[1])) } else { vec![0] };
            let mut out = Vec::with_capacity(k0.len() * k1.len());
            for &a in &k0 {
                for &b in &k1 {
                    out.push(l.index([a, b]));
                }
            }
            out
        } else {
            (0..self.cells.len())
                .filter(|&i| {
                    let c = &self.cells[i];
                    c.sheet == p.sheet
                        && (0..s.dim).all(|a| {
                            p.c[a] >= c.lo[a] && (p.c[a] < c.hi[a] || (c.hi[a] == s.hi[a] && p.c[a] <= c.hi[a]))
                        })
                })
                .collect()
        }
    }

    /// `Q_y` as the set of cells containing `y`.
    pub fn q_set(&self, y: &Point) -> Result<Vec<usize>> {
        let c = self.containing(y);
        if c.is_empty() {
            return Err(Error::OutsideCovering(format!("point ({}, {}) on sheet {}", y.c[0], y.c[1], y.sheet)));
        }
        Ok(c)
    }

    /// Half-open membership lists for every grid node.
    pub fn node_membership(&self, grid: &QuadGrid) -> Vec<Vec<usize>> {
        grid.points().par_iter().map(|p| self.containing_half_open(p)).collect()
    }

    /// Grid whose cells are the pieces of the arrangement of all cell
    /// faces, with exact measures. Every cell is a union of its cells.
    pub fn induced_grid(&self) -> Result<QuadGrid> {
        let mut edges = Vec::new();
        for s in self.domain.sheets() {
            let mut e: [Vec<f64>; 2] = [vec![0.0, 0.0], vec![0.0, 0.0]];
            for (a, ea) in e.iter_mut().enumerate().take(s.dim) {
                let mut v: Vec<f64> = vec![s.lo[a], s.hi[a]];
                for c in self.cells.iter().filter(|c| c.sheet == s.id) {
                    v.push(c.lo[a].clamp(s.lo[a], s.hi[a]));
                    v.push(c.hi[a].clamp(s.lo[a], s.hi[a]));
                }
                v.sort_by(|x, y| x.partial_cmp(y).unwrap());
                v.dedup_by(|x, y| (*x - *y).abs() <= 1e-13 * (1.0 + y.abs()));
                *ea = v;
            }
            edges.push(e);
        }
        QuadGrid::from_edges(&self.domain, edges)
    }

    /// `sup_{x,y in U_i} m(x, y)` from probe points of the cell.
    pub fn cell_sup_m(&self, i: usize, m: &AdmissibleWeight) -> f64 {
        if m.is_trivial() {
            return 1.0;
        }
        let p = probes(&self.domain, &self.cells[i]);
        let mut best: f64 = 1.0;
        for x in &p {
            for y in &p {
                best = best.max(m.eval(x, y));
            }
        }
        best
    }

    /// `C_{m,U}`.
    pub fn c_m_u(&self, m: &AdmissibleWeight) -> f64 {
        if m.is_trivial() {
            return 1.0;
        }
        (0..self.len()).into_par_iter().map(|i| self.cell_sup_m(i, m)).reduce(|| 1.0, f64::max)
    }

    pub fn overlap_n(&self) -> usize {
        self.neighbors.iter().map(|n| n.len()).max().unwrap_or(0)
    }

    pub fn c_tilde(&self) -> f64 {
        let mut c: f64 = 1.0;
        for (i, n) in self.neighbors.iter().enumerate() {
            for &j in n {
                let r = self.measures[i] / self.measures[j];
                c = c.max(if r.is_nan() { f64::INFINITY } else { r });
            }
        }
        c
    }

    pub fn d_min(&self) -> f64 {
        self.measures.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Partition of unity subordinate to the covering.
    pub fn partition_of_unity(&self, flavor: PuFlavor) -> Result<PartitionOfUnity> {
        let masses = match (&self.lattice, flavor) {
            (Some((_, ls)), _) => {
                let mut masses = vec![0.0; self.len()];
                for l in ls {
                    let s = self.domain.sheet(l.sheet);
                    let per_axis: Vec<Vec<f64>> = (0..l.dim).map(|a| axis_masses(s, a, &l.axes[a], flavor)).collect();
                    for i in 0..l.len() {
                        let k = l.unindex(l.start + i);
                        let mut m = s.factor;
                        for a in 0..l.dim {
                            m *= per_axis[a][k[a]];
                        }
                        masses[l.start + i] = m;
                    }
                }
                masses
            }
            (None, PuFlavor::Indicator) => {
                let g = self.induced_grid()?;
                let mut masses = vec![0.0; self.len()];
                for (p, w) in g.points().iter().zip(g.weights()) {
                    let c = self.containing(p);
                    for &i in &c {
                        masses[i] += w / c.len() as f64;
                    }
                }
                masses
            }
            (None, PuFlavor::Tent) => {
                return Err(Error::Precondition("tent partitions need a lattice covering".into()));
            }
        };
        Ok(PartitionOfUnity { flavor, masses })
    }

    /// `phi_i(p)` for all cells with nonzero value.
    pub fn pu_values(&self, flavor: PuFlavor, p: &Point) -> Result<Vec<(usize, f64)>> {
        let cells = self.containing(p);
        if cells.is_empty() {
            return Err(Error::OutsideCovering(format!("point ({}, {}) on sheet {}", p.c[0], p.c[1], p.sheet)));
        }
        match (self.sheet_lattice(p.sheet), flavor) {
            (Some(l), _) => {
                let s = self.domain.sheet(p.sheet);
                Ok(cells
                    .iter()
                    .map(|&i| {
                        let k = l.unindex(i);
                        let v = (0..l.dim).map(|a| l.axes[a].pu(flavor, k[a], s.axis_coord(a, p.c[a]))).product();
                        (i, v)
                    })
                    .collect())
            }
            (None, PuFlavor::Indicator) => {
                let v = 1.0 / cells.len() as f64;
                Ok(cells.iter().map(|&i| (i, v)).collect())
            }
            (None, PuFlavor::Tent) => Err(Error::Precondition("tent partitions need a lattice covering".into())),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PartitionOfUnity {
    pub flavor: PuFlavor,
    /// `c_i = int phi_i dmu`.
    pub masses: Vec<f64>,
}

fn cell_measure(domain: &IndexDomain, c: &Cell) -> f64 {
    domain.sheet(c.sheet).box_measure(&c.lo, &c.hi).max(0.0)
}

fn cell_contains(domain: &IndexDomain, c: &Cell, p: &Point, tol: f64) -> bool {
    let s = domain.sheet(c.sheet);
    c.sheet == p.sheet
        && (0..s.dim).all(|a| {
            let t = tol * (1.0 + p.c[a].abs());
            p.c[a] >= c.lo[a] - t && p.c[a] <= c.hi[a] + t
        })
}

fn open_intersect(domain: &IndexDomain, a: &Cell, b: &Cell) -> bool {
    let s = domain.sheet(a.sheet);
    a.sheet == b.sheet && (0..s.dim).all(|k| a.lo[k].max(b.lo[k]) < a.hi[k].min(b.hi[k]))
}

fn lattice_neighbors(ls: &[SheetLattice]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for l in ls {
        // per-axis open-interior neighbours
        let axis_nb: Vec<Vec<Vec<usize>>> = l
            .axes
            .iter()
            .map(|ax| {
                (0..ax.count())
                    .map(|k| {
                        let r = (ax.len / ax.step).ceil() as usize + 1;
                        let s = k.saturating_sub(r);
                        let e = (k + r + 1).min(ax.count());
                        (s..e).filter(|&j| ax.a[k].max(ax.a[j]) < ax.b[k].min(ax.b[j])).collect()
                    })
                    .collect()
            })
            .collect();
        for i in 0..l.len() {
            let k = l.unindex(l.start + i);
            let n1: Vec<usize> = if l.dim == 2 { axis_nb[1][k[1]].clone() } else { vec![0] };
            let mut nb = Vec::new();
            for &a in &axis_nb[0][k[0]] {
                for &b in &n1 {
                    nb.push(l.index([a, b]));
                }
            }
            out.push(nb);
        }
    }
    out
}

/// `int_{cell k} phi_k(u) density` along one axis, exact piecewise.
fn axis_masses(s: &Sheet, axis: usize, ax: &AxisLattice, flavor: PuFlavor) -> Vec<f64> {
    let bp = ax.breakpoints();
    let mut out = vec![0.0; ax.count()];
    for w in bp.windows(2) {
        let (u1, u2) = (w[0], w[1]);
        let mid = 0.5 * (u1 + u2);
        for k in ax.containing(mid, 0.0) {
            out[k] += match flavor {
                PuFlavor::Indicator => {
                    let n = ax.containing(mid, 0.0).len() as f64;
                    s.axis_integral_fn(axis, u1, u2, |_| 1.0) / n
                }
                PuFlavor::Tent => s.axis_integral_fn(axis, u1, u2, |u| ax.pu(PuFlavor::Tent, k, u)),
            };
        }
    }
    out
}

/// Corners, edge midpoints, centre and the point nearest the origin.
fn probes(domain: &IndexDomain, c: &Cell) -> Vec<Point> {
    let s = domain.sheet(c.sheet);
    let axis_vals = |a: usize| -> Vec<f64> {
        let mut v = vec![c.lo[a], c.hi[a], s.natural_coord(a, 0.5 * (s.axis_coord(a, c.lo[a]) + s.axis_coord(a, c.hi[a])))];
        v.push(0f64.clamp(c.lo[a], c.hi[a]));
        v
    };
    let v0 = axis_vals(0);
    let v1 = if s.dim == 2 { axis_vals(1) } else { vec![0.0] };
    let mut out = Vec::new();
    for &a in &v0 {
        for &b in &v1 {
            out.push(Point::on_sheet(c.sheet, [a, b]));
        }
    }
    out
}

/// Checks every defining property of a moderate admissible covering.
pub fn verify_moderate(cov: &Covering, m: &AdmissibleWeight, grid: &QuadGrid) -> ModerationReport {
    let covers_grid = grid.points().par_iter().all(|p| !cov.containing(p).is_empty());
    let points_inside = (0..cov.len()).all(|i| cell_contains(&cov.domain, &cov.cells[i], &cov.points[i], 1e-12));
    let n = cov.overlap_n();
    let d = cov.d_min();
    let ct = cov.c_tilde();
    let cmu = cov.c_m_u(m);
    let bullets = vec![
        Bullet { name: "covers_grid".into(), pass: covers_grid, value: if covers_grid { 1.0 } else { 0.0 } },
        Bullet { name: "points_inside".into(), pass: points_inside, value: if points_inside { 1.0 } else { 0.0 } },
        Bullet { name: "finite_overlap".into(), pass: n >= 1, value: n as f64 },
        Bullet { name: "measure_lower_bound".into(), pass: d > 0.0, value: d },
        Bullet { name: "neighbor_ratio".into(), pass: ct.is_finite(), value: ct },
        Bullet { name: "weight_on_cells".into(), pass: cmu.is_finite(), value: cmu },
    ];
    let moderate = bullets.iter().all(|b| b.pass);
    ModerationReport {
        cells: cov.len(),
        overlap_n: n,
        d_min: d,
        c_tilde: ct,
        c_m_u: cmu,
        covers_grid,
        points_inside,
        bullets,
        moderate,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MEquivalence {
    /// `min a_i^B / a_i^A`.
    pub c1: f64,
    /// `max a_i^B / a_i^A`.
    pub c2: f64,
    /// `max_i sup_{x in U_i^A, y in U_i^B} m(x, y)`.
    pub c_prime: f64,
    pub bound: f64,
    pub equivalent: bool,
}

/// Compares two equally indexed coverings; `bound` caps the accepted `C'`.
pub fn m_equivalent(a: &Covering, b: &Covering, m: &AdmissibleWeight, bound: f64) -> Result<MEquivalence> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), got: b.len() });
    }
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for (x, y) in a.measures.iter().zip(&b.measures) {
        let r = y / x;
        c1 = c1.min(r);
        c2 = c2.max(r);
    }
    let c_prime = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let pa = probes(&a.domain, &a.cells[i]);
            let pb = probes(&b.domain, &b.cells[i]);
            let mut best: f64 = 1.0;
            for x in &pa {
                for y in &pb {
                    best = best.max(m.eval(x, y));
                }
            }
            best
        })
        .reduce(|| 1.0, f64::max);
    let equivalent = c1 > 0.0 && c2.is_finite() && c_prime <= bound;
    Ok(MEquivalence { c1, c2, c_prime, bound, equivalent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_space::{weight_from_w, WeightOnX};

    fn spec(size: [f64; 2], overlap: f64) -> CoveringSpec {
        CoveringSpec { cell_size: vec![size], overlap, placement: Placement::Center }
    }

    #[test]
    fn one_dimensional_overlap_counts() {
        let dom = IndexDomain::line(0.0, 10.0).unwrap();
        let part = Covering::lattice(&dom, spec([1.0, 0.0], 0.0)).unwrap();
        assert_eq!(part.len(), 10);
        assert_eq!(part.overlap_n(), 1);
        assert!((part.c_tilde() - 1.0).abs() < 1e-12);
        // shared endpoint: both closed cells contain it
        assert_eq!(part.q_set(&Point::line(3.0)).unwrap(), vec![2, 3]);
        assert_eq!(part.containing_half_open(&Point::line(3.0)), vec![3]);
        let half = Covering::lattice(&dom, spec([1.0, 0.0], 0.5)).unwrap();
        assert_eq!(half.overlap_n(), 3);
        assert!(half.q_set(&Point::line(4.3)).unwrap().len() <= 2);
        assert!(part.q_set(&Point::line(11.0)).is_err());
    }

    #[test]
    fn partition_of_unity_properties() {
        let dom = IndexDomain::plane([-4.0, -3.0], [4.0, 3.0], 0.5).unwrap();
        let grid = QuadGrid::build(&dom, &[[40, 30]]).unwrap();
        for ov in [0.0, 0.3, 0.5] {
            let cov = Covering::lattice(&dom, spec([1.0, 1.5], ov)).unwrap();
            for flavor in [PuFlavor::Indicator, PuFlavor::Tent] {
                let pu = cov.partition_of_unity(flavor).unwrap();
                let total: f64 = pu.masses.iter().sum();
                assert!((total - dom.measure()).abs() < 1e-10, "{total}");
                for (c, a) in pu.masses.iter().zip(cov.measures()) {
                    assert!(*c <= a + 1e-12);
                }
                for p in grid.points() {
                    let v = cov.pu_values(flavor, p).unwrap();
                    let s: f64 = v.iter().map(|(_, x)| x).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    assert!(v.iter().all(|(_, x)| (0.0..=1.0).contains(x)));
                }
            }
        }
        let part = Covering::lattice(&dom, spec([1.0, 1.5], 0.0)).unwrap();
        let pu = part.partition_of_unity(PuFlavor::Indicator).unwrap();
        for (c, a) in pu.masses.iter().zip(part.measures()) {
            assert!((c - a).abs() < 1e-12);
        }
        let half = Covering::lattice(&dom, spec([1.0, 1.0], 0.5)).unwrap();
        let pu = half.partition_of_unity(PuFlavor::Indicator).unwrap();
        // a fully interior cell: every point covered twice per axis
        let i = half.containing(&Point::new(0.01, 0.01))[0];
        let ratio = pu.masses[i] / half.measures()[i];
        assert!((ratio - 0.25).abs() < 1e-12, "{ratio}");
    }

    #[test]
    fn half_overlap_one_axis_mass_is_half() {
        let dom = IndexDomain::line(0.0, 10.0).unwrap();
        let cov = Covering::lattice(&dom, spec([1.0, 0.0], 0.5)).unwrap();
        let pu = cov.partition_of_unity(PuFlavor::Indicator).unwrap();
        assert!((pu.masses[5] - 0.5 * cov.measures()[5]).abs() < 1e-12);
    }

    #[test]
    fn measures_are_exact_on_scale_axes() {
        let dom = IndexDomain::wavelet_halfplane([-1.0, 1.0], [0.25, 4.0]).unwrap();
        let cov = Covering::lattice(&dom, CoveringSpec { cell_size: vec![[0.5, 2f64.ln()]], overlap: 0.0, placement: Placement::Center }).unwrap();
        assert_eq!(cov.len(), 16);
        let total: f64 = cov.measures().iter().sum();
        assert!((total - 2.0 * (4.0 - 0.25)).abs() < 1e-12);
        // geometric centre of [0.25, 0.5]
        assert!((cov.points()[0].c[1] - (0.125f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn moderation_report() {
        let dom = IndexDomain::plane([-8.0, -8.0], [8.0, 8.0], 1.0).unwrap();
        let grid = QuadGrid::build(&dom, &[[32, 32]]).unwrap();
        let m = weight_from_w(WeightOnX::Polynomial { s: 1.0 });
        let mut prev = f64::INFINITY;
        let mut cov = Covering::lattice(&dom, spec([4.0, 4.0], 0.0)).unwrap();
        for _ in 0..3 {
            let r = verify_moderate(&cov, &m, &grid);
            assert!(r.moderate);
            assert!(r.c_m_u < prev && r.c_m_u > 1.0);
            prev = r.c_m_u;
            cov = cov.refine().unwrap();
        }
        let r = verify_moderate(&cov, &AdmissibleWeight::Trivial, &grid);
        assert_eq!(r.c_m_u, 1.0);
        // one collapsed cell
        let mut cells = cov.cells().to_vec();
        let mut pts = cov.points().to_vec();
        cells[3].hi[0] = cells[3].lo[0];
        pts[3].c[0] = cells[3].lo[0];
        let bad = Covering::from_cells(&dom, cells, pts).unwrap();
        let r = verify_moderate(&bad, &AdmissibleWeight::Trivial, &grid);
        assert!(!r.moderate);
        assert!(!r.bullets.iter().find(|b| b.name == "measure_lower_bound").unwrap().pass);
    }

    #[test]
    fn corrupt_point_rejected() {
        let dom = IndexDomain::line(0.0, 2.0).unwrap();
        let cells = vec![Cell { sheet: 0, lo: [0.0, 0.0], hi: [1.0, 0.0] }];
        assert!(Covering::from_cells(&dom, cells, vec![Point::line(1.5)]).is_err());
    }

    #[test]
    fn m_equivalence_cases() {
        let dom = IndexDomain::plane([-8.0, -8.0], [8.0, 8.0], 1.0).unwrap();
        let a = Covering::lattice(&dom, spec([2.0, 2.0], 0.0)).unwrap();
        let m = weight_from_w(WeightOnX::Polynomial { s: 1.0 });
        let same = m_equivalent(&a, &a, &m, 10.0).unwrap();
        assert!(same.equivalent && same.c1 == 1.0 && same.c2 == 1.0);
        assert!((same.c_prime - a.c_m_u(&m)).abs() < 1e-12);
        // half-cell shifted copy with equal sizes
        let cells: Vec<Cell> = a
            .cells()
            .iter()
            .map(|c| Cell { sheet: 0, lo: [c.lo[0] + 1.0, c.lo[1]], hi: [c.hi[0] + 1.0, c.hi[1]] })
            .collect();
        let pts: Vec<Point> = cells.iter().map(|c| Point::new(0.5 * (c.lo[0] + c.hi[0]), 0.5 * (c.lo[1] + c.hi[1]))).collect();
        let big = IndexDomain::plane([-8.0, -8.0], [9.0, 8.0], 1.0).unwrap();
        let b = Covering::from_cells(&big, cells, pts).unwrap();
        let r = m_equivalent(&a, &b, &AdmissibleWeight::Trivial, 1.0).unwrap();
        assert!(r.equivalent && (r.c1 - 1.0).abs() < 1e-12 && (r.c2 - 1.0).abs() < 1e-12);
        // labels rotated by half: cells near the edge pair with cells near the origin
        let mut grow = Vec::new();
        for half in [8.0, 16.0, 32.0] {
            let d = IndexDomain::plane([-half, -half], [half, half], 1.0).unwrap();
            let a = Covering::lattice(&d, spec([2.0, 2.0], 0.0)).unwrap();
            let mut cells = a.cells().to_vec();
            let mut pts = a.points().to_vec();
            let h = cells.len() / 2;
            cells.rotate_left(h);
            pts.rotate_left(h);
            let b = Covering::from_cells(&d, cells, pts).unwrap();
            let r = m_equivalent(&a, &b, &m, 10.0).unwrap();
            grow.push(r.c_prime);
        }
        assert!(grow[1] > 1.8 * grow[0] && grow[2] > 1.8 * grow[1], "{grow:?}");
        assert!(grow[2] > 10.0);
    }

    #[test]
    fn induced_grid_is_exact() {
        let dom = IndexDomain::plane([-4.0, -3.0], [4.0, 3.0], 1.0).unwrap();
        let cov = Covering::lattice(&dom, spec([1.0, 1.5], 0.5)).unwrap();
        let g = cov.induced_grid().unwrap();
        assert!((g.measure() - dom.measure()).abs() < 1e-12);
        let mut acc = vec![0.0; cov.len()];
        for (p, w) in g.points().iter().zip(g.weights()) {
            for i in cov.containing(p) {
                acc[i] += w;
            }
        }
        for (a, b) in acc.iter().zip(cov.measures()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_cells_cover_their_nodes() {
        let dom = IndexDomain::line(-2.0, 2.0).unwrap();
        let grid = QuadGrid::build(&dom, &[[8, 0]]).unwrap();
        let cov = Covering::from_grid(&grid).unwrap();
        assert_eq!(cov.overlap_n(), 1);
        for (i, p) in grid.points().iter().enumerate() {
            assert_eq!(cov.q_set(p).unwrap(), vec![i]);
        }
    }
}
