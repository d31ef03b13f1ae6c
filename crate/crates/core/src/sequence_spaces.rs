//! Covering-indexed sequence spaces built from a weighted `L^p` space on
//! the index space: the flat space (sequences measured through
//! `sum |l_i| chi_{U_i}`) and the natural space (with `mu(U_i)^{-1}`
//! scaling), their closed forms on partitions, the neighbour sum and
//! decomposition norms.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverings::Covering;
use crate::error::{check_len, Result};
use crate::kernel::{lp_w_norm_real, PNorm};
use crate::measure_space::{AdmissibleWeight, QuadGrid, WeightOnX};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqFlavor {
    Flat,
    Natural,
}

/// A covering together with the grid on which its indicator sums are
/// assembled. The default grid is the covering's induced grid, on which
/// cellwise-constant functions integrate exactly.
#[derive(Clone, Debug)]
pub struct SeqContext {
    cov: Arc<Covering>,
    grid: QuadGrid,
    /// Cells containing each node (half-open faces).
    membership: Vec<Vec<usize>>,
}

impl SeqContext {
    pub fn new(cov: Arc<Covering>) -> Result<Self> {
        let grid = cov.induced_grid()?;
        Ok(Self::with_grid(cov, grid))
    }

    pub fn with_grid(cov: Arc<Covering>, grid: QuadGrid) -> Self {
        let membership = cov.node_membership(&grid);
        SeqContext { cov, grid, membership }
    }

    pub fn covering(&self) -> &Arc<Covering> {
        &self.cov
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    fn assemble(&self, coef: &[f64]) -> Vec<f64> {
        self.membership.iter().map(|m| m.iter().map(|&i| coef[i]).sum()).collect()
    }

    /// `w~(i)`: the largest value of `w` over the nodes in `U_i`.
    pub fn w_tilde(&self, w: &WeightOnX) -> Vec<f64> {
        let mut out = vec![0.0f64; self.cov.len()];
        for (p, m) in self.grid.points().iter().zip(&self.membership) {
            let v = w.eval(p);
            for &i in m {
                out[i] = out[i].max(v);
            }
        }
        out
    }
}

fn check(ctx: &SeqContext, lam: &[C64]) -> Result<()> {
    check_len(ctx.cov.len(), lam.len())
}

/// `|| sum_i |l_i| chi_{U_i} | L^p_w ||`.
pub fn flat_norm(lam: &[C64], ctx: &SeqContext, p: PNorm, w: &WeightOnX) -> Result<f64> {
    check(ctx, lam)?;
    let coef: Vec<f64> = lam.iter().map(|v| v.norm()).collect();
    lp_w_norm_real(&ctx.assemble(&coef), p, w, &ctx.grid)
}

/// `|| sum_i |l_i| mu(U_i)^{-1} chi_{U_i} | L^p_w ||`.
pub fn natural_norm(lam: &[C64], ctx: &SeqContext, p: PNorm, w: &WeightOnX) -> Result<f64> {
    check(ctx, lam)?;
    let coef: Vec<f64> = lam.iter().zip(ctx.cov.measures()).map(|(v, a)| v.norm() / a).collect();
    lp_w_norm_real(&ctx.assemble(&coef), p, w, &ctx.grid)
}

pub fn seq_norm(lam: &[C64], ctx: &SeqContext, p: PNorm, w: &WeightOnX, flavor: SeqFlavor) -> Result<f64> {
    match flavor {
        SeqFlavor::Flat => flat_norm(lam, ctx, p, w),
        SeqFlavor::Natural => natural_norm(lam, ctx, p, w),
    }
}

/// Weights `a_i^{1/p} w~(i)` (flat) or `a_i^{1/p - 1} w~(i)` (natural).
pub fn closed_form_weights(ctx: &SeqContext, p: PNorm, w: &WeightOnX, flavor: SeqFlavor) -> Vec<f64> {
    let inv_p = 1.0 / p.exponent();
    let shift = match flavor {
        SeqFlavor::Flat => 0.0,
        SeqFlavor::Natural => -1.0,
    };
    ctx.w_tilde(w)
        .iter()
        .zip(ctx.cov.measures())
        .map(|(wt, a)| a.powf(inv_p + shift) * wt)
        .collect()
}

/// Weighted `l^p` norm `|| (l_i b_i) ||_p`.
pub fn weighted_lp(lam: &[C64], b: &[f64], p: PNorm) -> Result<f64> {
    check_len(b.len(), lam.len())?;
    let it = lam.iter().zip(b).map(|(v, w)| v.norm() * w);
    Ok(match p {
        PNorm::One => it.sum(),
        PNorm::Two => it.map(|v| v * v).sum::<f64>().sqrt(),
        PNorm::Inf => it.fold(0.0, f64::max),
    })
}

/// `l+_i = sum_{j in i*} l_j`.
pub fn plus_operator(lam: &[C64], cov: &Covering) -> Result<Vec<C64>> {
    check_len(cov.len(), lam.len())?;
    Ok((0..cov.len()).map(|i| cov.neighbors(i).iter().map(|&j| lam[j]).sum()).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlusReport {
    /// `||l+|| / ||l||` in the natural space.
    pub ratio: f64,
    /// `N C~ C_{m,U}^2`.
    pub bound: f64,
}

pub fn plus_report(lam: &[C64], ctx: &SeqContext, p: PNorm, w: &WeightOnX, m: &AdmissibleWeight) -> Result<PlusReport> {
    let plus = plus_operator(lam, &ctx.cov)?;
    let num = natural_norm(&plus, ctx, p, w)?;
    let den = natural_norm(lam, ctx, p, w)?;
    let cmu = ctx.cov.c_m_u(m);
    Ok(PlusReport {
        ratio: if den == 0.0 { 0.0 } else { num / den },
        bound: ctx.cov.overlap_n() as f64 * ctx.cov.c_tilde() * cmu * cmu,
    })
}

/// `(int_{U_i} |F| dmu)_i` from values on `grid`.
pub fn local_integrals(f: &[C64], cov: &Covering, grid: &QuadGrid) -> Result<Vec<f64>> {
    check_len(grid.len(), f.len())?;
    let membership = cov.node_membership(grid);
    let mut out = vec![0.0; cov.len()];
    for ((v, wt), m) in f.iter().zip(grid.weights()).zip(&membership) {
        let a = v.norm() * wt;
        for &i in m {
            out[i] += a;
        }
    }
    Ok(out)
}

/// Natural norm of the local `L^1` integrals of `F`.
pub fn decomposition_norm(f: &[C64], grid: &QuadGrid, ctx: &SeqContext, p: PNorm, w: &WeightOnX) -> Result<f64> {
    let loc: Vec<C64> = local_integrals(f, &ctx.cov, grid)?.into_iter().map(|v| C64::new(v, 0.0)).collect();
    natural_norm(&loc, ctx, p, w)
}

/// `max_i |l_i| / r(i)` with `r(i) = v~(i) a_i`, divided by the natural
/// norm: the measured constant of the embedding into `l^inf_{1/r}`.
pub fn linf_embedding_constant(lam: &[C64], ctx: &SeqContext, p: PNorm, w: &WeightOnX, v: &WeightOnX) -> Result<f64> {
    let nat = natural_norm(lam, ctx, p, w)?;
    if nat == 0.0 {
        return Ok(0.0);
    }
    let vt = ctx.w_tilde(v);
    let sup = lam
        .par_iter()
        .zip(vt.par_iter().zip(ctx.cov.measures()))
        .map(|(l, (vv, a))| l.norm() / (vv * a))
        .reduce(|| 0.0, f64::max);
    Ok(sup / nat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverings::{CoveringSpec, Placement};
    use crate::measure_space::{weight_from_w, IndexDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cov(dom: &IndexDomain, size: [f64; 2], overlap: f64) -> Arc<Covering> {
        Arc::new(Covering::lattice(dom, CoveringSpec { cell_size: vec![size], overlap, placement: Placement::Center }).unwrap())
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect()
    }

    #[test]
    fn closed_forms_on_partition() {
        let dom = IndexDomain::plane([-3.0, -2.0], [3.0, 2.0], 0.5).unwrap();
        let c = cov(&dom, [1.0, 0.5], 0.0);
        let ctx = SeqContext::new(c.clone()).unwrap();
        // weight constant on each cell: a step function of the cell index
        let step = WeightOnX::Custom("step".into(), Arc::new(|p| 1.0 + (p.c[0] + 3.0).floor() + 0.5 * (p.c[1] + 2.0).div_euclid(0.5)));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lam = random(c.len(), &mut rng);
        for w in [WeightOnX::Trivial, step] {
            for p in [PNorm::One, PNorm::Two, PNorm::Inf] {
                for flavor in [SeqFlavor::Flat, SeqFlavor::Natural] {
                    let got = seq_norm(&lam, &ctx, p, &w, flavor).unwrap();
                    let b = closed_form_weights(&ctx, p, &w, flavor);
                    // independent evaluation: sum over cells of |l|^p w^p a
                    let want = weighted_lp(&lam, &b, p).unwrap();
                    assert!((got - want).abs() <= 1e-12 * want, "{p:?} {flavor:?} {got} {want}");
                }
            }
        }
        let zero = vec![C64::new(0.0, 0.0); c.len()];
        assert_eq!(flat_norm(&zero, &ctx, PNorm::Two, &WeightOnX::Trivial).unwrap(), 0.0);
        let inf = flat_norm(&lam, &ctx, PNorm::Inf, &WeightOnX::Trivial).unwrap();
        assert_eq!(inf, lam.iter().map(|v| v.norm()).fold(0.0, f64::max));
        let one = natural_norm(&lam, &ctx, PNorm::One, &WeightOnX::Trivial).unwrap();
        let sum: f64 = lam.iter().map(|v| v.norm()).sum();
        assert!((one - sum).abs() <= 1e-12 * sum);
        // uniform cells: natural = flat / a
        let a = c.measures()[0];
        let f2 = flat_norm(&lam, &ctx, PNorm::Two, &WeightOnX::Trivial).unwrap();
        let n2 = natural_norm(&lam, &ctx, PNorm::Two, &WeightOnX::Trivial).unwrap();
        assert!((n2 - f2 / a).abs() <= 1e-12 * n2);
        assert!(flat_norm(&lam[1..], &ctx, PNorm::Two, &WeightOnX::Trivial).is_err());
    }

    #[test]
    fn solidity_and_inclusion() {
        let dom = IndexDomain::plane([-2.0, -2.0], [2.0, 2.0], 1.0).unwrap();
        let c = cov(&dom, [0.5, 0.5], 0.3);
        let ctx = SeqContext::new(c.clone()).unwrap();
        let w = WeightOnX::Polynomial { s: 1.0 };
        let d = c.d_min();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = random(c.len(), &mut rng);
            let l: Vec<C64> = k.iter().map(|v| v * rng.gen::<f64>()).collect();
            for p in [PNorm::One, PNorm::Two, PNorm::Inf] {
                assert!(flat_norm(&l, &ctx, p, &w).unwrap() <= flat_norm(&k, &ctx, p, &w).unwrap());
                let r = natural_norm(&k, &ctx, p, &w).unwrap() / flat_norm(&k, &ctx, p, &w).unwrap();
                assert!(r <= 1.0 / d * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn plus_operator_cases() {
        let dom = IndexDomain::line(0.0, 10.0).unwrap();
        let part = cov(&dom, [1.0, 0.0], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lam = random(part.len(), &mut rng);
        assert_eq!(plus_operator(&lam, &part).unwrap(), lam);
        let half = cov(&dom, [1.0, 0.0], 0.5);
        let ones = vec![C64::new(1.0, 0.0); half.len()];
        let plus = plus_operator(&ones, &half).unwrap();
        assert_eq!(plus[5], C64::new(3.0, 0.0));
        assert_eq!(plus[0], C64::new(2.0, 0.0));
        let dom2 = IndexDomain::plane([-4.0, -4.0], [4.0, 4.0], 1.0).unwrap();
        let c = cov(&dom2, [1.0, 1.0], 0.4);
        let ctx = SeqContext::new(c.clone()).unwrap();
        let w = WeightOnX::Polynomial { s: 1.0 };
        let m = weight_from_w(w.clone());
        for _ in 0..10 {
            let l = random(c.len(), &mut rng);
            let r = plus_report(&l, &ctx, PNorm::Two, &w, &m).unwrap();
            assert!(r.ratio <= r.bound);
        }
    }

    #[test]
    fn decomposition_norm_of_indicator() {
        let dom = IndexDomain::plane([0.0, 0.0], [4.0, 2.0], 1.0).unwrap();
        let c = cov(&dom, [1.0, 1.0], 0.0);
        let ctx = SeqContext::new(c.clone()).unwrap();
        let grid = QuadGrid::build(&dom, &[[16, 8]]).unwrap();
        let k = 5;
        let f: Vec<C64> = grid
            .points()
            .iter()
            .map(|p| C64::new(if c.containing_half_open(p) == vec![k] { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let loc = local_integrals(&f, &c, &grid).unwrap();
        assert!((loc[k] - 1.0).abs() < 1e-12);
        let d = decomposition_norm(&f, &grid, &ctx, PNorm::One, &WeightOnX::Trivial).unwrap();
        assert!((d - c.measures()[k]).abs() < 1e-12);
        let zero = vec![C64::new(0.0, 0.0); grid.len()];
        assert_eq!(decomposition_norm(&zero, &grid, &ctx, PNorm::Two, &WeightOnX::Trivial).unwrap(), 0.0);
    }

    #[test]
    fn embedding_into_weighted_linf() {
        let dom = IndexDomain::plane([-3.0, -3.0], [3.0, 3.0], 1.0).unwrap();
        let c = cov(&dom, [0.75, 0.75], 0.25);
        let ctx = SeqContext::new(c.clone()).unwrap();
        let w = WeightOnX::Polynomial { s: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let l = random(c.len(), &mut rng);
            worst = worst.max(linf_embedding_constant(&l, &ctx, PNorm::Inf, &w, &w).unwrap());
        }
        // p = inf: each |l_i| / a_i is bounded by the assembled sum at a node of U_i
        assert!(worst <= 1.0 + 1e-12, "{worst}");
    }
}
