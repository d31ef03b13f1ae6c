//! Kernels on `X x X`: evaluation, composition, involution, application and
//! the weighted Schur norms `||K | A_m||`.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::CMat;
use crate::measure_space::{AdmissibleWeight, GridDescriptor, Point, QuadGrid, WeightOnX};
use crate::C64;

/// Largest grid on which kernel matrices are cached.
pub const CACHE_LIMIT: usize = 4096;

/// Columns evaluated per parallel batch when streaming.
const COLUMN_BATCH: usize = 64;

pub trait KernelFn: Send + Sync {
    fn eval(&self, x: &Point, y: &Point) -> C64;

    /// `K(x, y)` for every node `x` of `grid`.
    fn grid_column(&self, y: &Point, grid: &QuadGrid) -> Vec<C64> {
        grid.points().iter().map(|x| self.eval(x, y)).collect()
    }

    /// Unimodular factor aligning `K(., z)` with `K(., y)` before they are
    /// compared by the oscillation; identically one unless overridden.
    fn lift(&self, _y: &Point, _z: &Point) -> C64 {
        C64::new(1.0, 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gramian,
    Oscillation,
    Composed,
    Custom,
}

enum Source {
    Func(Arc<dyn KernelFn>),
    Matrix { grid: QuadGrid, mat: Arc<CMat> },
}

struct Inner {
    source: Source,
    provenance: Provenance,
    cache: Mutex<Option<(u64, Arc<CMat>)>>,
}

#[derive(Clone)]
pub struct Kernel {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Kernel({:?})", self.inner.provenance)
    }
}

struct Closure<F>(F);

impl<F: Fn(&Point, &Point) -> C64 + Send + Sync> KernelFn for Closure<F> {
    fn eval(&self, x: &Point, y: &Point) -> C64 {
        (self.0)(x, y)
    }
}

struct Adjoint(Kernel);

impl KernelFn for Adjoint {
    fn eval(&self, x: &Point, y: &Point) -> C64 {
        self.0.eval(y, x).conj()
    }
}

impl Kernel {
    pub fn new(f: Arc<dyn KernelFn>, provenance: Provenance) -> Self {
        Kernel {
            inner: Arc::new(Inner { source: Source::Func(f), provenance, cache: Mutex::new(None) }),
        }
    }

    pub fn from_fn(f: impl Fn(&Point, &Point) -> C64 + Send + Sync + 'static, provenance: Provenance) -> Self {
        Self::new(Arc::new(Closure(f)), provenance)
    }

    pub fn zero() -> Self {
        Self::from_fn(|_, _| C64::new(0.0, 0.0), Provenance::Custom)
    }

    /// Kernel sampled on `grid`; off-grid arguments use the nearest node.
    pub fn from_matrix(grid: &QuadGrid, mat: CMat, provenance: Provenance) -> Result<Self> {
        if mat.rows() != grid.len() || mat.cols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{}x{} matrix on a grid of {} nodes",
                mat.rows(),
                mat.cols(),
                grid.len()
            )));
        }
        Ok(Kernel {
            inner: Arc::new(Inner {
                source: Source::Matrix { grid: grid.clone(), mat: Arc::new(mat) },
                provenance,
                cache: Mutex::new(None),
            }),
        })
    }

    pub fn provenance(&self) -> Provenance {
        self.inner.provenance
    }

    pub fn eval(&self, x: &Point, y: &Point) -> C64 {
        match &self.inner.source {
            Source::Func(f) => f.eval(x, y),
            Source::Matrix { grid, mat } => mat[(grid.nearest(x), grid.nearest(y))],
        }
    }

    pub fn lift(&self, y: &Point, z: &Point) -> C64 {
        match &self.inner.source {
            Source::Func(f) => f.lift(y, z),
            Source::Matrix { .. } => C64::new(1.0, 0.0),
        }
    }

    fn cached(&self, grid: &QuadGrid) -> Option<Arc<CMat>> {
        if let Source::Matrix { grid: g, mat } = &self.inner.source {
            if g.id() == grid.id() {
                return Some(mat.clone());
            }
        }
        let c = self.inner.cache.lock().unwrap();
        match &*c {
            Some((id, m)) if *id == grid.id() => Some(m.clone()),
            _ => None,
        }
    }

    /// `K(x, y)` for all nodes `x`.
    pub fn column(&self, y: &Point, grid: &QuadGrid) -> Vec<C64> {
        match &self.inner.source {
            Source::Func(f) => f.grid_column(y, grid),
            Source::Matrix { .. } => grid.points().iter().map(|x| self.eval(x, y)).collect(),
        }
    }

    fn node_column(&self, j: usize, grid: &QuadGrid, cache: Option<&CMat>) -> Vec<C64> {
        match cache {
            Some(m) => m.column(j),
            None => self.column(&grid.points()[j], grid),
        }
    }

    /// Matrix `K(x_j, x_k)` on `grid`, cached when the grid has at most
    /// [`CACHE_LIMIT`] nodes.
    pub fn matrix(&self, grid: &QuadGrid) -> Arc<CMat> {
        if let Some(m) = self.cached(grid) {
            return m;
        }
        let n = grid.len();
        let cols: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|j| self.column(&grid.points()[j], grid))
            .collect();
        let mut mat = CMat::zeros(n, n);
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                mat[(i, j)] = col[i];
            }
        }
        let mat = Arc::new(mat);
        if n <= CACHE_LIMIT {
            *self.inner.cache.lock().unwrap() = Some((grid.id(), mat.clone()));
        }
        mat
    }

    /// Values `K(x_r, x_c)` for the given node indices.
    pub fn submatrix(&self, grid: &QuadGrid, rows: &[usize], cols: &[usize]) -> CMat {
        let cache = self.cached(grid);
        let picked: Vec<Vec<C64>> = cols
            .par_iter()
            .map(|&c| {
                let col = self.node_column(c, grid, cache.as_deref());
                rows.iter().map(|&r| col[r]).collect()
            })
            .collect();
        let mut out = CMat::zeros(rows.len(), cols.len());
        for (j, col) in picked.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// Streams columns in index order; `visit(j, column)` is called
    /// sequentially while columns are produced in parallel batches.
    pub fn for_each_column(&self, grid: &QuadGrid, mut visit: impl FnMut(usize, &[C64])) {
        let cache = self.cached(grid);
        let n = grid.len();
        let mut start = 0;
        while start < n {
            let end = (start + COLUMN_BATCH).min(n);
            let batch: Vec<Vec<C64>> = (start..end)
                .into_par_iter()
                .map(|j| self.node_column(j, grid, cache.as_deref()))
                .collect();
            for (off, col) in batch.iter().enumerate() {
                visit(start + off, col);
            }
            start = end;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct KernelNormReport {
    pub a1_norm: f64,
    pub am_norm: f64,
    /// `sup_x int |K(x,y)| m(x,y) dmu(y)`.
    pub row_sup: f64,
    /// `sup_y int |K(x,y)| m(x,y) dmu(x)`.
    pub col_sup: f64,
    pub grid: GridDescriptor,
}

/// Weighted Schur norms with the sup over grid nodes.
pub fn am_norm(k: &Kernel, m: &AdmissibleWeight, grid: &QuadGrid) -> Result<KernelNormReport> {
    let n = grid.len();
    let w = grid.weights();
    let mw = m.on_nodes(grid.points());
    let trivial = m.is_trivial();
    let mut rows1 = vec![0.0; n];
    let mut rowsm = vec![0.0; n];
    let mut col1: f64 = 0.0;
    let mut colm: f64 = 0.0;
    let mut bad = None;
    k.for_each_column(grid, |j, col| {
        let mut c1 = 0.0;
        let mut cm = 0.0;
        for i in 0..n {
            let a = col[i].norm();
            if !a.is_finite() {
                bad = Some((i, j));
            }
            let mij = if trivial { 1.0 } else { mw.get(i, j) };
            rows1[i] += a * w[j];
            rowsm[i] += a * mij * w[j];
            c1 += a * w[i];
            cm += a * mij * w[i];
        }
        col1 = col1.max(c1);
        colm = colm.max(cm);
    });
    if let Some((i, j)) = bad {
        return Err(Error::Numerical(format!("non-finite kernel value at node pair ({i}, {j})")));
    }
    let row1 = rows1.iter().cloned().fold(0.0, f64::max);
    let rowm = rowsm.iter().cloned().fold(0.0, f64::max);
    Ok(KernelNormReport {
        a1_norm: row1.max(col1),
        am_norm: rowm.max(colm),
        row_sup: rowm,
        col_sup: colm,
        grid: grid.describe(),
    })
}

/// `(K1 o K2)(x, y) = int K1(x,z) K2(z,y) dmu(z)` by quadrature.
pub fn compose(k1: &Kernel, k2: &Kernel, grid: &QuadGrid) -> Result<Kernel> {
    if grid.len() > CACHE_LIMIT {
        return Err(Error::Precondition(format!(
            "composition materializes matrices; grid has {} > {CACHE_LIMIT} nodes",
            grid.len()
        )));
    }
    let a = k1.matrix(grid);
    let mut b = (*k2.matrix(grid)).clone();
    b.scale_rows(grid.weights());
    Kernel::from_matrix(grid, a.matmul(&b), Provenance::Composed)
}

/// Block `(K1 o K2)(x_r, x_c)` without materializing full matrices.
pub fn compose_block(k1: &Kernel, k2: &Kernel, grid: &QuadGrid, rows: &[usize], cols: &[usize]) -> CMat {
    let all: Vec<usize> = (0..grid.len()).collect();
    let a = k1.submatrix(grid, rows, &all);
    let mut b = k2.submatrix(grid, &all, cols);
    b.scale_rows(grid.weights());
    a.matmul(&b)
}

/// `K^*(x, y) = conj(K(y, x))`.
pub fn involution(k: &Kernel) -> Kernel {
    let out = match &k.inner.source {
        Source::Matrix { grid, mat } => {
            return Kernel::from_matrix(grid, mat.conj_transpose(), k.provenance()).expect("square matrix");
        }
        Source::Func(_) => Kernel::new(Arc::new(Adjoint(k.clone())), k.provenance()),
    };
    if let Some((id, m)) = &*k.inner.cache.lock().unwrap() {
        *out.inner.cache.lock().unwrap() = Some((*id, Arc::new(m.conj_transpose())));
    }
    out
}

/// `K(F)(x) = int F(y) K(x,y) dmu(y)`.
pub fn apply(k: &Kernel, f: &[C64], grid: &QuadGrid) -> Result<Vec<C64>> {
    check_len(grid.len(), f.len())?;
    let w = grid.weights();
    if let Some(m) = k.cached(grid) {
        let fw: Vec<C64> = f.iter().zip(w).map(|(v, wi)| v * *wi).collect();
        return Ok((0..grid.len())
            .into_par_iter()
            .map(|i| m.row(i).iter().zip(&fw).map(|(a, b)| a * b).sum())
            .collect());
    }
    let mut out = vec![C64::new(0.0, 0.0); grid.len()];
    k.for_each_column(grid, |j, col| {
        let c = f[j] * w[j];
        if c != C64::new(0.0, 0.0) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += v * c;
            }
        }
    });
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PNorm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl PNorm {
    pub fn exponent(self) -> f64 {
        match self {
            PNorm::One => 1.0,
            PNorm::Two => 2.0,
            PNorm::Inf => f64::INFINITY,
        }
    }
}

/// `||F w | L^p||` by quadrature; the max over nodes for `p = inf`.
pub fn lp_w_norm(f: &[C64], p: PNorm, w: &WeightOnX, grid: &QuadGrid) -> Result<f64> {
    let vals: Vec<f64> = f.iter().map(|v| v.norm()).collect();
    lp_w_norm_real(&vals, p, w, grid)
}

pub(crate) fn lp_w_norm_real(f: &[f64], p: PNorm, w: &WeightOnX, grid: &QuadGrid) -> Result<f64> {
    check_len(grid.len(), f.len())?;
    let pts = grid.points();
    let wt = grid.weights();
    let weighted = |i: usize| f[i] * if w.is_trivial() { 1.0 } else { w.eval(&pts[i]) };
    Ok(match p {
        PNorm::Inf => (0..f.len()).map(weighted).fold(0.0, f64::max),
        PNorm::One => (0..f.len()).map(|i| weighted(i) * wt[i]).sum(),
        PNorm::Two => (0..f.len()).map(|i| weighted(i).powi(2) * wt[i]).sum::<f64>().sqrt(),
    })
}

/// Writes a kernel matrix as CSV, row-major with `re,im` cells.
pub fn write_kernel_csv(mat: &CMat, path: &std::path::Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for i in 0..mat.rows() {
        let rec: Vec<String> = mat.row(i).iter().map(|v| format!("{:e},{:e}", v.re, v.im)).collect();
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_space::{weight_from_w, IndexDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_grid(lo: f64, hi: f64, n: usize) -> QuadGrid {
        QuadGrid::build(&IndexDomain::line(lo, hi).unwrap(), &[[n, 1]]).unwrap()
    }

    fn random_kernel(grid: &QuadGrid, seed: u64) -> Kernel {
        let n = grid.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = CMat::from_vec(n, n, (0..n * n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect());
        Kernel::from_matrix(grid, mat, Provenance::Custom).unwrap()
    }

    #[test]
    fn zero_kernel_norms() {
        let g = line_grid(0.0, 1.0, 8);
        let r = am_norm(&Kernel::zero(), &AdmissibleWeight::Trivial, &g).unwrap();
        assert_eq!((r.a1_norm, r.am_norm, r.row_sup, r.col_sup), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn gaussian_kernel_a1_norm() {
        // sup_x int e^{-(x-y)^2} dy -> sqrt(pi) at interior x
        let g = line_grid(-12.0, 12.0, 960);
        let k = Kernel::from_fn(|x, y| C64::new((-(x.c[0] - y.c[0]).powi(2)).exp(), 0.0), Provenance::Custom);
        let r = am_norm(&k, &AdmissibleWeight::Trivial, &g).unwrap();
        assert!((r.a1_norm - std::f64::consts::PI.sqrt()).abs() < 1e-3, "{}", r.a1_norm);
        let m = weight_from_w(WeightOnX::Polynomial { s: 1.0 });
        let rm = am_norm(&k, &m, &g).unwrap();
        assert!(rm.am_norm >= r.a1_norm);
        assert_eq!(rm.am_norm, rm.row_sup.max(rm.col_sup));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let g = line_grid(0.0, 1.0, 4);
        let k = Kernel::from_fn(|x, _| C64::new(1.0 / (x.c[0] - 0.125), 0.0), Provenance::Custom);
        assert!(am_norm(&k, &AdmissibleWeight::Trivial, &g).is_err());
    }

    #[test]
    fn compose_apply_and_submultiplicativity() {
        let g = line_grid(-2.0, 2.0, 24);
        let m = weight_from_w(WeightOnX::Polynomial { s: 1.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 0..20 {
            let k1 = random_kernel(&g, 2 * t);
            let k2 = random_kernel(&g, 2 * t + 1);
            let c = compose(&k1, &k2, &g).unwrap();
            let (n1, n2, n12) = (
                am_norm(&k1, &m, &g).unwrap().am_norm,
                am_norm(&k2, &m, &g).unwrap().am_norm,
                am_norm(&c, &m, &g).unwrap().am_norm,
            );
            assert!(n12 <= n1 * n2 * (1.0 + 1e-10));
            let f: Vec<C64> = (0..g.len()).map(|_| C64::new(rng.gen(), rng.gen())).collect();
            let lhs = apply(&k1, &apply(&k2, &f, &g).unwrap(), &g).unwrap();
            let rhs = apply(&c, &f, &g).unwrap();
            let scale = rhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).norm() <= 1e-10 * scale);
            }
        }
        let z = compose(&random_kernel(&g, 99), &Kernel::zero(), &g).unwrap();
        assert_eq!(z.matrix(&g).max_abs(), 0.0);
    }

    #[test]
    fn involution_properties() {
        let g = line_grid(-1.0, 1.0, 16);
        let k = random_kernel(&g, 3);
        let kk = involution(&involution(&k));
        assert_eq!(*kk.matrix(&g), *k.matrix(&g));
        let m = weight_from_w(WeightOnX::Polynomial { s: 2.0 });
        let a = am_norm(&k, &m, &g).unwrap().am_norm;
        let b = am_norm(&involution(&k), &m, &g).unwrap().am_norm;
        assert!((a - b).abs() <= 1e-12 * a);
        let f = Kernel::from_fn(|x, y| C64::new(x.c[0], y.c[0] * 2.0), Provenance::Custom);
        let fs = involution(&f);
        let (p, q) = (Point::line(0.3), Point::line(-0.7));
        assert_eq!(fs.eval(&p, &q), f.eval(&q, &p).conj());
    }

    #[test]
    fn schur_bound_for_apply() {
        let g = line_grid(-3.0, 3.0, 30);
        let k = random_kernel(&g, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for s in [0.0, 1.0, 2.0] {
            let w = if s == 0.0 { WeightOnX::Trivial } else { WeightOnX::Polynomial { s } };
            let m = weight_from_w(w.clone());
            let norm = am_norm(&k, &m, &g).unwrap().am_norm;
            for p in [PNorm::One, PNorm::Two, PNorm::Inf] {
                let f: Vec<C64> = (0..g.len()).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen())).collect();
                let kf = apply(&k, &f, &g).unwrap();
                let lhs = lp_w_norm(&kf, p, &w, &g).unwrap();
                let rhs = norm * lp_w_norm(&f, p, &w, &g).unwrap();
                assert!(lhs <= rhs * (1.0 + 1e-12), "p={p:?} s={s}");
            }
        }
    }

    #[test]
    fn lp_examples() {
        let g = line_grid(0.0, 1.0, 10);
        let zero = vec![C64::new(0.0, 0.0); 10];
        assert_eq!(lp_w_norm(&zero, PNorm::Two, &WeightOnX::Trivial, &g).unwrap(), 0.0);
        let one = vec![C64::new(1.0, 0.0); 10];
        assert!((lp_w_norm(&one, PNorm::One, &WeightOnX::Trivial, &g).unwrap() - 1.0).abs() < 1e-14);
        let half: Vec<C64> = g.points().iter().map(|p| C64::new(if p.c[0] < 0.5 { 1.0 } else { 0.0 }, 0.0)).collect();
        assert!((lp_w_norm(&half, PNorm::Two, &WeightOnX::Trivial, &g).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cache_agrees_with_evaluator() {
        let g = line_grid(-1.0, 1.0, 12);
        let k = Kernel::from_fn(|x, y| C64::from_polar((-(x.c[0] - y.c[0]).abs()).exp(), x.c[0] * y.c[0]), Provenance::Custom);
        let m = k.matrix(&g);
        for (i, x) in g.points().iter().enumerate() {
            for (j, y) in g.points().iter().enumerate() {
                assert!((m[(i, j)] - k.eval(x, y)).norm() <= 1e-12);
            }
        }
        let blk = compose_block(&k, &k, &g, &[0, 3], &[1, 2, 5]);
        let full = compose(&k, &k, &g).unwrap().matrix(&g);
        for (a, &r) in [0usize, 3].iter().enumerate() {
            for (b, &c) in [1usize, 2, 5].iter().enumerate() {
                assert!((blk[(a, b)] - full[(r, c)]).norm() < 1e-12);
            }
        }
    }
}
