//! The oscillation kernel of a reproducing kernel with respect to a covering,
//! the resulting discretization threshold and a dyadic refinement driver.
//!
//! The supremum over `z in Q_y` is sampled. Each cell carries a nested list
//! of sample points (its own sample point, corners, centre, then Halton
//! points), so asking for more samples never removes one and the sampled
//! value can only grow. The estimate is a lower bound of the true
//! oscillation norm.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverings::Covering;
use crate::error::{Error, Result};
use crate::kernel::{am_norm, Kernel, KernelFn, Provenance};
use crate::measure_space::{AdmissibleWeight, Point, QuadGrid};
use crate::C64;

pub const DEFAULT_Z_PER_AXIS: usize = 8;

const CAVEAT: &str = "sup over Q_y is sampled; delta_est is a lower bound of the oscillation norm";

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Nested sample list of cell `i`: `z_per_axis^d` points.
pub fn cell_samples(cov: &Covering, i: usize, z_per_axis: usize, seed: u64) -> Vec<Point> {
    let c = &cov.cells()[i];
    let s = cov.domain().sheet(c.sheet);
    let d = s.dim;
    let want = z_per_axis.max(1).pow(d as u32);
    let lo: Vec<f64> = (0..d).map(|a| s.axis_coord(a, c.lo[a])).collect();
    let hi: Vec<f64> = (0..d).map(|a| s.axis_coord(a, c.hi[a])).collect();
    let at = |u: [f64; 2]| {
        let mut p = [0.0; 2];
        for a in 0..d {
            p[a] = s.natural_coord(a, lo[a] + u[a] * (hi[a] - lo[a])).clamp(c.lo[a], c.hi[a]);
        }
        Point::on_sheet(c.sheet, p)
    };
    let mut out = vec![cov.points()[i]];
    let corners: &[[f64; 2]] = if d == 2 {
        &[[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]
    } else {
        &[[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]]
    };
    for u in corners {
        out.push(at(*u));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    let mut k: u64 = 1 + rng.gen_range(0..4096);
    while out.len() < want {
        let u = [radical_inverse(k, 2), if d == 2 { radical_inverse(k, 3) } else { 0.0 }];
        out.push(at(u));
        k += 1;
    }
    out.truncate(want);
    out
}

struct OscFn {
    r: Kernel,
    cov: Arc<Covering>,
    samples: Vec<Vec<Point>>,
}

impl OscFn {
    fn zs(&self, y: &Point) -> Vec<Point> {
        let mut z = Vec::new();
        for i in self.cov.containing(y) {
            z.extend_from_slice(&self.samples[i]);
        }
        z
    }
}

impl KernelFn for OscFn {
    fn eval(&self, x: &Point, y: &Point) -> C64 {
        let ry = self.r.eval(x, y);
        let v = self
            .zs(y)
            .iter()
            .map(|z| (ry - self.r.lift(y, z) * self.r.eval(x, z)).norm())
            .fold(0.0, f64::max);
        C64::new(v, 0.0)
    }

    fn grid_column(&self, y: &Point, grid: &QuadGrid) -> Vec<C64> {
        let ry = self.r.column(y, grid);
        let mut out = vec![0.0f64; grid.len()];
        for z in self.zs(y) {
            let g = self.r.lift(y, &z);
            let rz = self.r.column(&z, grid);
            for ((o, a), b) in out.iter_mut().zip(&ry).zip(&rz) {
                *o = o.max((a - g * b).norm_sqr());
            }
        }
        out.into_iter().map(|v| C64::new(v.sqrt(), 0.0)).collect()
    }
}

/// `osc(x, y) = max_{z} |R(x,y) - lift(y,z) R(x,z)|` over the sampled
/// points of the cells containing `y`.
pub fn osc_kernel(r: &Kernel, cov: &Arc<Covering>, z_per_axis: usize, seed: u64) -> Result<Kernel> {
    if z_per_axis == 0 {
        return Err(Error::InvalidParameter("z_per_cell must be at least 1".into()));
    }
    let samples = (0..cov.len()).map(|i| cell_samples(cov, i, z_per_axis, seed)).collect();
    Ok(Kernel::new(Arc::new(OscFn { r: r.clone(), cov: cov.clone(), samples }), Provenance::Oscillation))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct OscFlags {
    /// `cond_value <= 1`.
    pub full: bool,
    /// `delta <= 1`.
    pub atomic_only: bool,
    /// `delta <= 1 / ||R|A_m||`.
    pub banach_only: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OscReport {
    pub delta_est: f64,
    pub r_norm: f64,
    pub c_m_u: f64,
    pub sigma: f64,
    pub cond_value: f64,
    pub flags: OscFlags,
    pub cells: usize,
    pub cell_size: Option<Vec<[f64; 2]>>,
    pub overlap: Option<f64>,
    pub z_per_axis: usize,
    pub z_per_cell: usize,
    pub seed: u64,
    pub caveat: String,
}

impl OscReport {
    /// Assembles the thresholds from the three measured constants.
    pub fn from_constants(delta: f64, r_norm: f64, c_m_u: f64) -> (f64, f64, OscFlags) {
        let sigma = (c_m_u * r_norm).max(r_norm + delta);
        let cond = delta * (r_norm + sigma);
        let flags = OscFlags { full: cond <= 1.0, atomic_only: delta <= 1.0, banach_only: delta * r_norm <= 1.0 };
        (sigma, cond, flags)
    }

    pub fn passes(&self, target: Target) -> bool {
        match target {
            Target::Full => self.flags.full,
            Target::Atomic => self.flags.atomic_only,
            Target::Banach => self.flags.banach_only,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Full,
    Atomic,
    Banach,
}

impl Target {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Target::Full),
            "atomic" => Ok(Target::Atomic),
            "banach" => Ok(Target::Banach),
            _ => Err(Error::InvalidParameter(format!("unknown target `{s}`"))),
        }
    }
}

/// `||R|A_m||` on `grid`, rejecting non-finite values.
pub fn r_norm(r: &Kernel, m: &AdmissibleWeight, grid: &QuadGrid) -> Result<f64> {
    let n = am_norm(r, m, grid)?.am_norm;
    if !n.is_finite() {
        return Err(Error::Numerical("||R|A_m|| is not finite; the weight is too strong for the truncation".into()));
    }
    Ok(n)
}

/// Measures `delta_est` and assembles the report. `r_norm` may be passed in
/// when it is already known for this grid and weight.
pub fn property_d_check(
    r: &Kernel,
    cov: &Arc<Covering>,
    m: &AdmissibleWeight,
    grid: &QuadGrid,
    z_per_axis: usize,
    seed: u64,
    r_norm_known: Option<f64>,
) -> Result<OscReport> {
    if let Some(p) = grid.points().iter().find(|p| cov.containing(p).is_empty()) {
        return Err(Error::DegenerateCovering(format!("node ({}, {}) lies in no cell", p.c[0], p.c[1])));
    }
    let rn = match r_norm_known {
        Some(v) => v,
        None => r_norm(r, m, grid)?,
    };
    let osc = osc_kernel(r, cov, z_per_axis, seed)?;
    let delta = am_norm(&osc, m, grid)?.am_norm;
    let c_m_u = cov.c_m_u(m);
    let (sigma, cond_value, flags) = OscReport::from_constants(delta, rn, c_m_u);
    let spec = cov.spec();
    let d = cov.domain().sheets().iter().map(|s| s.dim).max().unwrap_or(1);
    Ok(OscReport {
        delta_est: delta,
        r_norm: rn,
        c_m_u,
        sigma,
        cond_value,
        flags,
        cells: cov.len(),
        cell_size: spec.map(|s| s.cell_size.clone()),
        overlap: spec.map(|s| s.overlap),
        z_per_axis,
        z_per_cell: z_per_axis.max(1).pow(d as u32),
        seed,
        caveat: CAVEAT.into(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    pub cells: usize,
    pub delta_est: f64,
    pub sigma: f64,
    pub cond_value: f64,
    pub full: bool,
    pub atomic_only: bool,
    pub banach_only: bool,
}

impl LevelRecord {
    pub fn new(level: usize, r: &OscReport) -> Self {
        LevelRecord {
            level,
            cells: r.cells,
            delta_est: r.delta_est,
            sigma: r.sigma,
            cond_value: r.cond_value,
            full: r.flags.full,
            atomic_only: r.flags.atomic_only,
            banach_only: r.flags.banach_only,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Refinement {
    /// Level of the returned covering; level 0 is the starting covering.
    pub level: usize,
    pub covering: Arc<Covering>,
    pub report: OscReport,
    pub trajectory: Vec<LevelRecord>,
}

/// Halves cell sides until `target` holds, checking at most `max_levels`
/// coverings (the start included).
pub fn refine_until(
    r: &Kernel,
    start: &Covering,
    m: &AdmissibleWeight,
    grid: &QuadGrid,
    target: Target,
    max_levels: usize,
    z_per_axis: usize,
    seed: u64,
) -> Result<Refinement> {
    if max_levels == 0 {
        return Err(Error::InvalidParameter("max_levels must be at least 1".into()));
    }
    let rn = r_norm(r, m, grid)?;
    let mut cov = Arc::new(start.clone());
    let mut trajectory = Vec::new();
    for level in 0..max_levels {
        let rep = property_d_check(r, &cov, m, grid, z_per_axis, seed, Some(rn))?;
        trajectory.push(LevelRecord::new(level, &rep));
        if rep.passes(target) {
            return Ok(Refinement { level, covering: cov, report: rep, trajectory });
        }
        if level + 1 < max_levels {
            cov = Arc::new(cov.refine()?);
        }
    }
    let deltas: Vec<String> = trajectory.iter().map(|t| format!("{:.4e}", t.delta_est)).collect();
    Err(Error::NotConverged(format!(
        "target {target:?} not reached in {max_levels} levels; delta_est trajectory [{}]",
        deltas.join(", ")
    )))
}

/// Reports for `levels` successive dyadic refinements of `start`.
pub fn refinement_trajectory(
    r: &Kernel,
    start: &Covering,
    m: &AdmissibleWeight,
    grid: &QuadGrid,
    levels: usize,
    z_per_axis: usize,
    seed: u64,
) -> Result<Vec<(Arc<Covering>, OscReport)>> {
    let rn = r_norm(r, m, grid)?;
    let mut cov = Arc::new(start.clone());
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        let rep = property_d_check(r, &cov, m, grid, z_per_axis, seed, Some(rn))?;
        out.push((cov.clone(), rep));
        if level + 1 < levels {
            cov = Arc::new(cov.refine()?);
        }
    }
    Ok(out)
}

pub fn write_trajectory_csv(records: &[LevelRecord], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverings::{CoveringSpec, Placement};
    use crate::frames::tests::reference_gabor;
    use crate::frames::{gram_kernel, TruncatedFrame};
    use crate::measure_space::IndexDomain;

    fn lattice(dom: &IndexDomain, size: [f64; 2]) -> Covering {
        Covering::lattice(dom, CoveringSpec { cell_size: vec![size], overlap: 0.0, placement: Placement::Center }).unwrap()
    }

    #[test]
    fn constant_kernel_has_no_oscillation() {
        let dom = IndexDomain::plane([-2.0, -2.0], [2.0, 2.0], 1.0).unwrap();
        let grid = QuadGrid::build(&dom, &[[8, 8]]).unwrap();
        let cov = Arc::new(lattice(&dom, [1.0, 1.0]));
        let r = Kernel::from_fn(|_, _| C64::new(0.7, -0.2), Provenance::Custom);
        let rep = property_d_check(&r, &cov, &AdmissibleWeight::Trivial, &grid, 4, 1, None).unwrap();
        assert_eq!(rep.delta_est, 0.0);
        assert!(rep.flags.full && rep.cond_value == 0.0);
    }

    #[test]
    fn single_node_cells_give_zero() {
        let dom = IndexDomain::plane([-2.0, -2.0], [2.0, 2.0], 1.0).unwrap();
        let grid = QuadGrid::build(&dom, &[[6, 6]]).unwrap();
        let pts: Vec<Point> = grid.points().to_vec();
        let cells = pts
            .iter()
            .map(|p| crate::coverings::Cell { sheet: 0, lo: p.c, hi: p.c })
            .collect();
        let cov = Arc::new(Covering::from_cells(&dom, cells, pts).unwrap());
        let r = Kernel::from_fn(|x, y| C64::from_polar((-(x.c[0] - y.c[0]).powi(2)).exp(), x.c[1] * y.c[1]), Provenance::Custom);
        let osc = osc_kernel(&r, &cov, 3, 0).unwrap();
        assert!(osc.matrix(&grid).max_abs() == 0.0);
    }

    #[test]
    fn samples_are_nested_and_inside() {
        let dom = IndexDomain::wavelet_halfplane([-1.0, 1.0], [0.25, 4.0]).unwrap();
        let cov = Covering::lattice(&dom, CoveringSpec { cell_size: vec![[0.5, 0.7]], overlap: 0.2, placement: Placement::Center }).unwrap();
        for i in [0, 5, cov.len() - 1] {
            let a = cell_samples(&cov, i, 3, 9);
            let b = cell_samples(&cov, i, 5, 9);
            assert_eq!(a.len(), 9);
            assert_eq!(&b[..9], &a[..]);
            assert!(b.iter().all(|p| cov.containing(p).contains(&i)));
        }
    }

    #[test]
    fn thresholds_follow_formula() {
        let (sigma, cond, flags) = OscReport::from_constants(0.2, 2.0, 1.5);
        assert_eq!(sigma, 3.0);
        assert!((cond - 0.2 * 5.0).abs() < 1e-15);
        assert!(flags.full && flags.atomic_only && flags.banach_only);
        let (sigma, _, flags) = OscReport::from_constants(0.6, 2.0, 1.0);
        assert_eq!(sigma, 2.6);
        assert!(!flags.full && flags.atomic_only && !flags.banach_only);
    }

    #[test]
    fn gabor_oscillation_decreases_and_monotone_in_z() {
        let (fam, grid) = reference_gabor();
        let tf = Arc::new(TruncatedFrame::new(fam, grid.clone()).unwrap());
        let r = gram_kernel(&tf).unwrap();
        let start = lattice(grid.domain(), [4.0, 8.0]);
        let traj = refinement_trajectory(&r, &start, &AdmissibleWeight::Trivial, &grid, 3, 4, 7).unwrap();
        for w in traj.windows(2) {
            assert!(w[1].1.delta_est < w[0].1.delta_est);
        }
        let lo = property_d_check(&r, &traj[1].0, &AdmissibleWeight::Trivial, &grid, 2, 7, None).unwrap();
        assert!(lo.delta_est <= traj[1].1.delta_est);
        assert!(refine_until(&r, &start, &AdmissibleWeight::Trivial, &grid, Target::Full, 0, 4, 7).is_err());
    }
}
