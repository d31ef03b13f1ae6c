//! Cross-Gramians between frames sampled on point sets, the cell-indexed
//! matrix algebra norm, the domination inequality for sampled Gramians and
//! an empirical pseudo-inverse of the continuous Gramian.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverings::Covering;
use crate::error::{Error, Result};
use crate::frames::{gram_kernel, FrameFamily, TruncatedFrame};
use crate::kernel::Kernel;
use crate::linalg::{hermitian_eigen, CMat};
use crate::measure_space::{AdmissibleWeight, IndexDomain, Point, QuadGrid};
use crate::oscillation::osc_kernel;
use crate::C64;

pub const DECAY_BUCKETS: usize = 16;

/// `matrix[(i, j)] = <psi^G_{y_j}, psi^F_{x_i}>`.
#[derive(Clone, Debug)]
pub struct CrossGramian {
    pub matrix: CMat,
    pub points_f: Vec<Point>,
    pub points_g: Vec<Point>,
    pub covering: Option<Arc<Covering>>,
}

fn check_same_signal_grid(f: &dyn FrameFamily, g: &dyn FrameFamily) -> Result<()> {
    let (a, b) = (f.signal_grid(), g.signal_grid());
    if a.n() != b.n() || a.half_width() != b.half_width() {
        return Err(Error::GridMismatch(format!(
            "signal grids differ: n={} T={} vs n={} T={}",
            a.n(),
            a.half_width(),
            b.n(),
            b.half_width()
        )));
    }
    Ok(())
}

/// Rows `conj(Psi_x(xi_j))` over all bins.
fn conj_spectra(fam: &dyn FrameFamily, points: &[Point]) -> CMat {
    let rows: Vec<Vec<C64>> = points
        .par_iter()
        .map(|p| fam.spectrum(p).into_iter().map(|v| v.conj()).collect())
        .collect();
    if rows.is_empty() {
        return CMat::zeros(0, fam.signal_grid().n());
    }
    CMat::from_rows(&rows)
}

pub fn cross_gramian(
    frame_f: &dyn FrameFamily,
    frame_g: &dyn FrameFamily,
    points_f: &[Point],
    points_g: &[Point],
) -> Result<CrossGramian> {
    check_same_signal_grid(frame_f, frame_g)?;
    let sg = frame_f.signal_grid();
    let pf = conj_spectra(frame_f, points_f);
    let pg = conj_spectra(frame_g, points_g);
    // sum_j Psi^G_y(j) conj(Psi^F_x(j)) / 2T
    let mut matrix = if points_f.is_empty() || points_g.is_empty() {
        CMat::zeros(points_f.len(), points_g.len())
    } else {
        pf.mul_adjoint(&pg)
    };
    let scale = 1.0 / (2.0 * sg.half_width());
    for i in 0..matrix.rows() {
        for v in matrix.row_mut(i) {
            *v *= scale;
        }
    }
    Ok(CrossGramian { matrix, points_f: points_f.to_vec(), points_g: points_g.to_vec(), covering: None })
}

/// Both frames sampled at the covering's points.
pub fn sampled_cross_gramian(frame_f: &dyn FrameFamily, frame_g: &dyn FrameFamily, cov: &Arc<Covering>) -> Result<CrossGramian> {
    let mut g = cross_gramian(frame_f, frame_g, cov.points(), cov.points())?;
    g.covering = Some(cov.clone());
    Ok(g)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecayBucket {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub count: usize,
    pub max_modulus: f64,
    pub weighted_sum: f64,
}

/// Geometric buckets of `d` between the smallest positive and the largest
/// distance; zero distances land in the first bucket.
#[derive(Clone, Debug)]
struct Buckets {
    edges: Vec<f64>,
}

impl Buckets {
    fn new(dists: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for d in dists {
            if d > 0.0 {
                lo = lo.min(d);
            }
            hi = hi.max(d);
        }
        if !lo.is_finite() || hi <= 0.0 {
            return None;
        }
        let hi = hi * (1.0 + 1e-12);
        let ratio = (hi / lo).max(1.0 + 1e-9);
        let edges = (0..=DECAY_BUCKETS).map(|k| lo * ratio.powf(k as f64 / DECAY_BUCKETS as f64)).collect();
        Some(Buckets { edges })
    }

    fn index(&self, d: f64) -> usize {
        let k = self.edges.partition_point(|&e| e <= d);
        k.saturating_sub(1).min(DECAY_BUCKETS - 1)
    }

    fn empty(&self) -> Vec<DecayBucket> {
        self.edges
            .windows(2)
            .map(|w| DecayBucket {
                lo: w[0],
                hi: w[1],
                center: (w[0] * w[1]).sqrt(),
                count: 0,
                max_modulus: 0.0,
                weighted_sum: 0.0,
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiscreteAlgebraReport {
    pub norm: f64,
    pub row_sup: f64,
    pub col_sup: f64,
    pub profile: Vec<DecayBucket>,
    /// Finite norm and outermost populated bucket below `1e-6` of the peak.
    pub finite: bool,
}

fn m_flat<'a>(cov: &'a Covering, m: &'a AdmissibleWeight) -> impl Fn(usize, usize) -> f64 + Sync + 'a {
    let nw = m.on_nodes(cov.points());
    move |i, j| nw.get(i, j)
}

/// `max{ sup_j sum_i |l_ij| m(i,j) a_i, sup_i sum_j |l_ij| m(i,j) a_j }`
/// with `a = mu(U_i)` and `m(i,j) = m(x_i, x_j)`.
pub fn a_flat_norm(lam: &CrossGramian, cov: &Covering, m: &AdmissibleWeight) -> Result<DiscreteAlgebraReport> {
    let n = cov.len();
    if lam.matrix.rows() != n || lam.matrix.cols() != n {
        return Err(Error::LengthMismatch { expected: n, got: lam.matrix.rows().max(lam.matrix.cols()) });
    }
    let a = cov.measures();
    let mb = m_flat(cov, m);
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| lam.matrix[(i, j)].norm() * mb(i, j) * a[j]).sum())
        .collect();
    let cols: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| (0..n).map(|i| lam.matrix[(i, j)].norm() * mb(i, j) * a[i]).sum())
        .collect();
    let row_sup = rows.iter().cloned().fold(0.0, f64::max);
    let col_sup = cols.iter().cloned().fold(0.0, f64::max);
    let norm = row_sup.max(col_sup);

    let dom = cov.domain();
    let pts = cov.points();
    let buckets = Buckets::new((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| dom.dist(&pts[i], &pts[j])));
    let mut profile = buckets.as_ref().map(|b| b.empty()).unwrap_or_default();
    if let Some(b) = &buckets {
        for i in 0..n {
            for j in 0..n {
                let v = lam.matrix[(i, j)].norm();
                let e = &mut profile[b.index(dom.dist(&pts[i], &pts[j]))];
                e.count += 1;
                e.max_modulus = e.max_modulus.max(v);
                e.weighted_sum += v * mb(i, j) * a[j];
            }
        }
    }
    let peak = profile.iter().map(|e| e.max_modulus).fold(lam.matrix.max_abs(), f64::max);
    let tail = profile.iter().rev().find(|e| e.count > 0).map(|e| e.max_modulus).unwrap_or(0.0);
    let finite = norm.is_finite() && tail <= 1e-6 * peak.max(f64::MIN_POSITIVE);
    Ok(DiscreteAlgebraReport { norm, row_sup, col_sup, profile, finite })
}

/// `(L o E)_ij = sum_k l_ik e_kj mu(U_k)`.
pub fn flat_compose(l: &CMat, e: &CMat, cov: &Covering) -> Result<CMat> {
    let n = cov.len();
    if l.rows() != n || l.cols() != n || e.rows() != n || e.cols() != n {
        return Err(Error::LengthMismatch { expected: n, got: l.rows() });
    }
    let mut le = l.clone();
    for i in 0..n {
        for (k, v) in le.row_mut(i).iter_mut().enumerate() {
            *v *= cov.measures()[k];
        }
    }
    Ok(le.matmul(e))
}

/// Pearson correlation of `log|l_ij|` with `-d(x_i, y_j)^2` over entries
/// above `floor`.
pub fn decay_correlation(lam: &CrossGramian, domain: &IndexDomain, floor: f64) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, p) in lam.points_f.iter().enumerate() {
        for (j, q) in lam.points_g.iter().enumerate() {
            let v = lam.matrix[(i, j)].norm();
            if v > floor {
                let d = domain.dist(p, q);
                xs.push(-d * d);
                ys.push(v.ln());
            }
        }
    }
    if xs.len() < 3 {
        return Err(Error::Precondition("fewer than three entries above the floor".into()));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Precondition("degenerate distance or modulus spread".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn write_decay_csv(profile: &[DecayBucket], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bucket_center", "max_modulus", "weighted_sum"])?;
    for b in profile {
        w.write_record([b.center.to_string(), b.max_modulus.to_string(), b.weighted_sum.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Domination of the sampled Gramian

#[derive(Clone, Copy, Debug)]
pub struct GabOptions {
    pub z_per_axis: usize,
    pub seed: u64,
    /// Build `T` from `|R|` alone. The inequality is then not guaranteed.
    pub drop_osc: bool,
}

impl Default for GabOptions {
    fn default() -> Self {
        GabOptions { z_per_axis: 2, seed: 0, drop_osc: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GabReport {
    pub cells: usize,
    pub nodes: usize,
    pub max_violation: f64,
    pub max_left: f64,
    pub min_slack_ratio: f64,
    pub pass: bool,
    pub drop_osc: bool,
}

pub const GAB_CELL_CAP: usize = 64;
pub const GAB_TOL: f64 = 1e-10;

/// Rows `h_i(z) w_z` with `h_i(z) = T(chi_{U_i})(z) / mu_q(U_i)`, where
/// `T = osc + |R|` and `mu_q` is the node mass of the cell.
fn averaged_t(r: &Kernel, cov: &Arc<Covering>, grid: &QuadGrid, members: &[Vec<usize>], opts: &GabOptions) -> Result<Vec<Vec<f64>>> {
    let n = grid.len();
    let w = grid.weights();
    let osc = if opts.drop_osc { None } else { Some(osc_kernel(r, cov, opts.z_per_axis, opts.seed)?) };
    let mut h = vec![vec![0.0; n]; cov.len()];
    let mut mass = vec![0.0; cov.len()];
    let mut r_cols: Vec<Vec<C64>> = Vec::with_capacity(n);
    r.for_each_column(grid, |_, c| r_cols.push(c.to_vec()));
    let mut add = |j: usize, col: &[C64], abs: bool| {
        for &i in &members[j] {
            for (hz, v) in h[i].iter_mut().zip(col) {
                *hz += w[j] * if abs { v.norm() } else { v.re };
            }
        }
    };
    for (j, c) in r_cols.iter().enumerate() {
        add(j, c, true);
    }
    if let Some(o) = &osc {
        o.for_each_column(grid, |j, c| add(j, c, false));
    }
    for (j, ms) in members.iter().enumerate() {
        for &i in ms {
            mass[i] += w[j];
        }
    }
    for (i, row) in h.iter_mut().enumerate() {
        if mass[i] <= 0.0 {
            return Err(Error::DegenerateCovering(format!("cell {i} holds no grid node")));
        }
        for (z, v) in row.iter_mut().enumerate() {
            *v *= w[z] / mass[i];
        }
    }
    Ok(h)
}

/// Brute-force check of
/// `sum_ij |G(x_i, y_j)| chi_i(x) chi_j(y) <= (H^G o |G| o (H^F)^*)(x, y)`
/// over all node pairs, where `G(x, y) = <psi^G_y, psi^F_x>` and the left
/// factor is built from `T_F`, the right one from `T_G`.
pub fn gab_domination_check(
    frame_f: &Arc<TruncatedFrame>,
    frame_g: &Arc<TruncatedFrame>,
    cov: &Arc<Covering>,
    grid: &QuadGrid,
    opts: &GabOptions,
) -> Result<GabReport> {
    if cov.len() > GAB_CELL_CAP {
        return Err(Error::Precondition(format!("brute-force domination needs at most {GAB_CELL_CAP} cells")));
    }
    if grid.len() > crate::kernel::CACHE_LIMIT {
        return Err(Error::Precondition(format!("brute-force domination needs at most {} nodes", crate::kernel::CACHE_LIMIT)));
    }
    if cov.domain().describe() != grid.domain().describe() {
        return Err(Error::GridMismatch("covering and grid live on different domains".into()));
    }
    let members = cov.node_membership(grid);
    if let Some(j) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::DegenerateCovering(format!("node {j} lies in no cell")));
    }
    let ff = frame_f.family().as_ref();
    let fg = frame_g.family().as_ref();
    let lam = cross_gramian(ff, fg, cov.points(), cov.points())?;
    let full = cross_gramian(ff, fg, grid.points(), grid.points())?;

    let hf = averaged_t(&gram_kernel(frame_f)?, cov, grid, &members, opts)?;
    let hg = averaged_t(&gram_kernel(frame_g)?, cov, grid, &members, opts)?;

    // rhs_ij = sum_{z, xi} hf_i(z) |G(z, xi)| hg_j(xi)
    let n = grid.len();
    let c = cov.len();
    let inner: Vec<Vec<f64>> = hf
        .par_iter()
        .map(|hi| {
            let mut acc = vec![0.0; n];
            for (z, &a) in hi.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, v) in acc.iter_mut().zip(full.matrix.row(z)) {
                    *o += a * v.norm();
                }
            }
            acc
        })
        .collect();
    let rhs: Vec<Vec<f64>> = inner
        .iter()
        .map(|acc| (0..c).map(|j| acc.iter().zip(&hg[j]).map(|(a, b)| a * b).sum()).collect())
        .collect();

    let mut groups: Vec<&Vec<usize>> = members.iter().collect();
    groups.sort();
    groups.dedup();
    let mut max_violation: f64 = 0.0;
    let mut max_left: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    for gx in &groups {
        for gy in &groups {
            let (mut l, mut r) = (0.0, 0.0);
            for &i in gx.iter() {
                for &j in gy.iter() {
                    l += lam.matrix[(i, j)].norm();
                    r += rhs[i][j];
                }
            }
            max_violation = max_violation.max(l - r);
            max_left = max_left.max(l);
            if l > 0.0 {
                min_ratio = min_ratio.min(r / l);
            }
        }
    }
    Ok(GabReport {
        cells: c,
        nodes: n,
        max_violation: max_violation.max(0.0),
        max_left,
        min_slack_ratio: min_ratio,
        pass: max_violation <= GAB_TOL,
        drop_osc: opts.drop_osc,
    })
}

// ---------------------------------------------------------------------------
// Empirical pseudo-inverse

pub const PINV_NODE_CAP: usize = 2048;
const PROFILE_ROWS: usize = 64;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PseudoInverseReport {
    pub nodes: usize,
    pub modes: usize,
    pub rank: usize,
    pub rank_tol: f64,
    pub lambda_max: f64,
    pub lambda_min_kept: f64,
    /// Sup over sampled rows of `|A^+ o A - P|` and `|A o A^+ - P|`.
    pub left_projection_error: f64,
    pub right_projection_error: f64,
    /// Tight families: `|P(A^+ - A)P|` and `|P(A^+ o R - A)P|` in operator norm.
    pub tight_inverse_gap: Option<f64>,
    pub tight_dual_gap: Option<f64>,
    pub profile_a: Vec<DecayBucket>,
    pub profile_pinv: Vec<DecayBucket>,
    /// Least-squares `beta` in `max|K| ~ exp(-beta d^2)` per profile.
    pub decay_a: Option<f64>,
    pub decay_pinv: Option<f64>,
    pub label: String,
}

fn fit_gaussian_decay(profile: &[DecayBucket]) -> Option<f64> {
    let peak = profile.iter().map(|b| b.max_modulus).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .filter(|b| b.count > 0 && b.max_modulus > 1e-13 * peak)
        .map(|b| (b.center * b.center, b.max_modulus.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

fn row_profile(rows: &[usize], mat: &CMat, grid: &QuadGrid, buckets: &Buckets) -> Vec<DecayBucket> {
    let dom = grid.domain();
    let pts = grid.points();
    let w = grid.weights();
    let mut out = buckets.empty();
    for (r, &i) in rows.iter().enumerate() {
        for (j, v) in mat.row(r).iter().enumerate() {
            let e = &mut out[buckets.index(dom.dist(&pts[i], &pts[j]))];
            e.count += 1;
            e.max_modulus = e.max_modulus.max(v.norm());
            e.weighted_sum += v.norm() * w[j];
        }
    }
    out
}

fn spectral_norm(m: &CMat) -> f64 {
    let (vals, _) = hermitian_eigen(&m.adjoint_mul(m));
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Spectral pseudo-inverse of the grid Gramian `A(x,y) = <psi_y, psi_x>`
/// as an operator on `L^2(grid)`, keeping eigenvalues at least
/// `rank_tol * lambda_max`.
pub fn empirical_pseudoinverse(tf: &Arc<TruncatedFrame>, rank_tol: f64) -> Result<PseudoInverseReport> {
    if rank_tol.is_nan() || rank_tol <= 0.0 {
        return Err(Error::InvalidParameter("rank_tol must be positive".into()));
    }
    let grid = tf.grid();
    let n = grid.len();
    if n > PINV_NODE_CAP {
        return Err(Error::Precondition(format!("pseudo-inverse needs at most {PINV_NODE_CAP} nodes")));
    }
    let fam = tf.family().as_ref();
    let sg = fam.signal_grid();
    let modes = fam.band(grid.domain());
    let scale = 1.0 / (2.0 * sg.half_width()).sqrt();
    // phi[x][k] = conj(Psi_x(xi_k)) / sqrt(2T), so A = phi phi^*
    let rows: Vec<Vec<C64>> = grid
        .points()
        .par_iter()
        .map(|p| modes.iter().map(|&j| fam.coeff(p, j).conj() * scale).collect())
        .collect();
    let phi = CMat::from_rows(&rows);
    let mut dphi = phi.clone();
    dphi.scale_rows(grid.weights());
    let c = phi.adjoint_mul(&dphi);
    let (vals, vecs) = hermitian_eigen(&c);
    let lmax = vals.last().copied().unwrap_or(0.0);
    let kept: Vec<usize> = (0..vals.len()).filter(|&k| lmax > 0.0 && vals[k] >= rank_tol * lmax).collect();
    if kept.is_empty() {
        return Err(Error::Numerical(format!("rank collapse: no eigenvalue above {rank_tol} x {lmax:.3e}")));
    }
    let r = kept.len();
    let lam: Vec<f64> = kept.iter().map(|&k| vals[k]).collect();
    let mut u = CMat::zeros(modes.len(), r);
    for (c_, &k) in kept.iter().enumerate() {
        for row in 0..modes.len() {
            u[(row, c_)] = vecs[(row, k)];
        }
    }
    let phi_u = phi.matmul(&u);
    // f_k = phi u_k / sqrt(l_k) orthonormal; A^+ = sum l^-1 f f^*
    let mut z = phi_u.clone();
    let mut f = phi_u;
    for i in 0..n {
        for (k, v) in z.row_mut(i).iter_mut().enumerate() {
            *v /= lam[k];
        }
        for (k, v) in f.row_mut(i).iter_mut().enumerate() {
            *v /= lam[k].sqrt();
        }
    }

    let step = n.div_ceil(PROFILE_ROWS).max(1);
    let sample: Vec<usize> = (0..n).step_by(step).collect();
    let pick = |m: &CMat| CMat::from_rows(&sample.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>());
    let a_rows = pick(&phi).mul_adjoint(&phi);
    let pinv_rows = pick(&z).mul_adjoint(&z);
    let p_rows = pick(&f).mul_adjoint(&f);

    let w = grid.weights();
    let weighted = |m: &CMat| {
        let mut o = m.clone();
        for i in 0..o.rows() {
            for (j, v) in o.row_mut(i).iter_mut().enumerate() {
                *v *= w[j];
            }
        }
        o
    };
    // (A^+ o A) rows = pinv_rows W phi phi^*
    let left = weighted(&pinv_rows).matmul(&phi).mul_adjoint(&phi);
    let right = weighted(&a_rows).matmul(&z).mul_adjoint(&z);
    let left_projection_error = left.max_abs_diff(&p_rows);
    let right_projection_error = right.max_abs_diff(&p_rows);

    let (tight_inverse_gap, tight_dual_gap) = if tf.is_tight() {
        let inv_gap = lam.iter().map(|l| (1.0 / l - l).abs()).fold(0.0, f64::max);
        let rk = gram_kernel(tf)?;
        let rmat = rk.matrix(grid);
        let mut fd = f.clone();
        fd.scale_rows(w);
        // R_c = F^* W R W F
        let rf = rmat.matmul(&fd);
        let rc = fd.adjoint_mul(&rf);
        let mut diff = CMat::zeros(r, r);
        for a in 0..r {
            for b in 0..r {
                diff[(a, b)] = rc[(a, b)] / lam[a];
            }
            diff[(a, a)] -= lam[a];
        }
        (Some(inv_gap), Some(spectral_norm(&diff)))
    } else {
        (None, None)
    };

    let dom = grid.domain();
    let pts = grid.points();
    let buckets = Buckets::new(sample.iter().flat_map(|&i| pts.iter().map(move |q| dom.dist(&pts[i], q))))
        .ok_or_else(|| Error::Precondition("grid has no distinct nodes".into()))?;
    let profile_a = row_profile(&sample, &a_rows, grid, &buckets);
    let profile_pinv = row_profile(&sample, &pinv_rows, grid, &buckets);
    Ok(PseudoInverseReport {
        nodes: n,
        modes: modes.len(),
        rank: r,
        rank_tol,
        lambda_max: lmax,
        lambda_min_kept: lam[0],
        left_projection_error,
        right_projection_error,
        tight_inverse_gap,
        tight_dual_gap,
        decay_a: fit_gaussian_decay(&profile_a),
        decay_pinv: fit_gaussian_decay(&profile_pinv),
        profile_a,
        profile_pinv,
        label: "empirical".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverings::{CoveringSpec, Placement};
    use crate::frames::{make_family, EssentialRule};
    use crate::measure_space::{SignalGrid, WeightOnX};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gabor(width: f64) -> Arc<dyn FrameFamily> {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        make_family("gabor", &serde_json::json!({ "window": { "type": "gaussian", "width": width } }), &sg).unwrap()
    }

    fn lattice(dom: &IndexDomain, size: [f64; 2]) -> Arc<Covering> {
        Arc::new(
            Covering::lattice(dom, CoveringSpec { cell_size: vec![size], overlap: 0.0, placement: Placement::Center }).unwrap(),
        )
    }

    #[test]
    fn hermitian_on_equal_samples() {
        let f = gabor(1.0);
        let dom = f.index_domain(&[[-4.0, 4.0], [-8.0, 8.0]]).unwrap();
        let cov = lattice(&dom, [1.0, 2.0]);
        let g = sampled_cross_gramian(f.as_ref(), f.as_ref(), &cov).unwrap();
        let gt = g.matrix.conj_transpose();
        assert!(g.matrix.max_abs_diff(&gt) <= 1e-10);
        // closed form |<psi_y, psi_x>| = exp(-|x-y|^2/4) for width 1
        let p = cov.points();
        for (i, j) in [(0, 1), (3, 17), (5, 40)] {
            let d2 = (p[i].c[0] - p[j].c[0]).powi(2) + (p[i].c[1] - p[j].c[1]).powi(2);
            assert!((g.matrix[(i, j)].norm() - (-d2 / 4.0).exp()).abs() <= 1e-9);
        }
    }

    #[test]
    fn swapping_frames_gives_adjoint() {
        let f = gabor(1.0);
        let g = gabor(1.5);
        let dom = f.index_domain(&[[-4.0, 4.0], [-8.0, 8.0]]).unwrap();
        let cov = lattice(&dom, [2.0, 2.0]);
        let fg = sampled_cross_gramian(f.as_ref(), g.as_ref(), &cov).unwrap();
        let gf = sampled_cross_gramian(g.as_ref(), f.as_ref(), &cov).unwrap();
        assert!(fg.matrix.conj_transpose().max_abs_diff(&gf.matrix) <= 1e-12);
    }

    #[test]
    fn signal_grid_mismatch() {
        let f = gabor(1.0);
        let g = make_family("gabor", &serde_json::json!({}), &SignalGrid::new(10.0, 256).unwrap()).unwrap();
        let p = [Point::new(0.0, 0.0)];
        assert!(matches!(cross_gramian(f.as_ref(), g.as_ref(), &p, &p), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn flat_norm_closed_forms() {
        let f = gabor(1.0);
        let dom = f.index_domain(&[[-4.0, 4.0], [-8.0, 8.0]]).unwrap();
        let cov = lattice(&dom, [1.0, 2.0]);
        let n = cov.len();
        let mk = |matrix: CMat| CrossGramian {
            matrix,
            points_f: cov.points().to_vec(),
            points_g: cov.points().to_vec(),
            covering: Some(cov.clone()),
        };
        let zero = a_flat_norm(&mk(CMat::zeros(n, n)), &cov, &AdmissibleWeight::Trivial).unwrap();
        assert_eq!(zero.norm, 0.0);
        // uniform cells of measure 2/(2 pi)
        let a = 2.0 / (2.0 * std::f64::consts::PI);
        let m = AdmissibleWeight::FromW(WeightOnX::Polynomial { s: 1.0 });
        let id = a_flat_norm(&mk(CMat::identity(n)), &cov, &m).unwrap();
        assert!((id.norm - a).abs() <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<C64> = (0..n * n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let l = CMat::from_vec(n, n, data);
        let r1 = a_flat_norm(&mk(l.clone()), &cov, &m).unwrap();
        let r2 = a_flat_norm(&mk(l.conj_transpose()), &cov, &m).unwrap();
        assert!((r1.norm - r2.norm).abs() <= 1e-12 * r1.norm);
        assert!(r1.profile.windows(2).all(|w| w[0].hi == w[1].lo && w[0].lo < w[0].hi));
    }

    #[test]
    fn flat_product_is_submultiplicative() {
        let f = gabor(1.0);
        let dom = f.index_domain(&[[-4.0, 4.0], [-8.0, 8.0]]).unwrap();
        let cov = lattice(&dom, [1.0, 2.0]);
        let n = cov.len();
        let m = AdmissibleWeight::FromW(WeightOnX::Polynomial { s: 1.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_mat = || CMat::from_vec(n, n, (0..n * n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>())).collect());
        for _ in 0..5 {
            let (l, e) = (rand_mat(), rand_mat());
            let le = flat_compose(&l, &e, &cov).unwrap();
            let wrap = |matrix: CMat| CrossGramian { matrix, points_f: vec![], points_g: vec![], covering: None };
            let nl = a_flat_norm(&wrap(l), &cov, &m).unwrap().norm;
            let ne = a_flat_norm(&wrap(e), &cov, &m).unwrap().norm;
            let nle = a_flat_norm(&wrap(le), &cov, &m).unwrap().norm;
            assert!(nle <= nl * ne * (1.0 + 1e-12));
        }
    }

    #[test]
    fn m_flat_stays_within_cmu_squared() {
        let f = gabor(1.0);
        let dom = f.index_domain(&[[-8.0, 8.0], [-16.0, 16.0]]).unwrap();
        let cov = lattice(&dom, [2.0, 4.0]);
        let m = AdmissibleWeight::FromW(WeightOnX::Polynomial { s: 1.0 });
        let c2 = cov.c_m_u(&m).powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let (i, j) = (rng.gen_range(0..cov.len()), rng.gen_range(0..cov.len()));
            let pick = |k: usize, rng: &mut ChaCha8Rng| {
                let c = &cov.cells()[k];
                Point::new(rng.gen_range(c.lo[0]..=c.hi[0]), rng.gen_range(c.lo[1]..=c.hi[1]))
            };
            let (x, y) = (pick(i, &mut rng), pick(j, &mut rng));
            let mb = m.eval(&cov.points()[i], &cov.points()[j]);
            let mxy = m.eval(&x, &y);
            assert!(mb <= c2 * mxy * (1.0 + 1e-12) && mxy <= c2 * mb * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gaussian_decay_correlates_with_squared_distance() {
        let f = gabor(1.0);
        let dom = f.index_domain(&[[-4.0, 4.0], [-8.0, 8.0]]).unwrap();
        let cov = lattice(&dom, [1.0, 2.0]);
        let g = sampled_cross_gramian(f.as_ref(), f.as_ref(), &cov).unwrap();
        assert!(decay_correlation(&g, &dom, 1e-10).unwrap() >= 0.99);
    }

    fn small_gabor_frame(res: [usize; 2]) -> Arc<TruncatedFrame> {
        let fam = gabor(1.0);
        let dom = fam.index_domain(&[[-8.0, 8.0], [-16.0, 16.0]]).unwrap();
        let grid = QuadGrid::build(&dom, &[res]).unwrap();
        Arc::new(TruncatedFrame::with_rule(fam, grid, EssentialRule::Window { tol: 1e-3 }).unwrap())
    }

    #[test]
    fn domination_holds_and_corruption_is_detected() {
        let tf = small_gabor_frame([32, 32]);
        let dom = tf.grid().domain().clone();
        let cov = lattice(&dom, [4.0, 8.0]);
        let ok = gab_domination_check(&tf, &tf, &cov, tf.grid(), &GabOptions::default()).unwrap();
        assert_eq!(ok.cells, 16);
        assert!(ok.pass, "{ok:?}");
        let bad = gab_domination_check(&tf, &tf, &cov, tf.grid(), &GabOptions { drop_osc: true, ..Default::default() }).unwrap();
        assert!(bad.max_violation > 1e-3, "{bad:?}");
    }

    #[test]
    fn tight_pseudoinverse_inverts_on_the_plateau() {
        let tf = small_gabor_frame([32, 64]);
        let rep = empirical_pseudoinverse(&tf, 1.0 - 1e-7).unwrap();
        assert!(rep.rank > 0);
        assert!(rep.left_projection_error <= 1e-8 && rep.right_projection_error <= 1e-8, "{rep:?}");
        assert!(rep.tight_inverse_gap.unwrap() <= 1e-6, "{rep:?}");
        assert!(rep.tight_dual_gap.unwrap() <= 1e-6, "{rep:?}");
        assert!(matches!(empirical_pseudoinverse(&tf, f64::INFINITY), Err(Error::Numerical(_))));
    }
}
