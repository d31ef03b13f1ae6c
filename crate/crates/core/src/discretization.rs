//! Sampling a continuous frame along a covering: the discretized reproducing
//! operator `U_Phi`, its inversion, atomic coefficients, the discrete dual
//! frame, reconstruction from samples and Hilbert frame bounds.
//!
//! Everything acts on the essential subspace `E` of the truncated frame.
//! With `A` the analysis map `u -> (<u, psi_x>)_x` and `S = A^* W A`, an
//! element `F = A u` of the range of `V` satisfies `U_Phi A u = A T u` with
//! `T = S^{-1} S_d` and `S_d = sum_i c_i c_{x_i} c_{x_i}^*`. The `L^2(X)` norm
//! of `A u` is the `S`-norm of `u`, so operator norms on the range of `V`
//! are `S`-norms of coordinate maps.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverings::{Covering, PuFlavor};
use crate::error::{check_len, Error, Result};
use crate::frames::TruncatedFrame;
use crate::kernel::Kernel;
use crate::linalg::{conjugate_gradient, dot, hermitian_eigen, power_norm, CMat, Cholesky};
use crate::measure_space::{Point, QuadGrid};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Hard cap on Neumann terms.
pub const NEUMANN_CAP: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Neumann,
    Solve,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "neumann" => Ok(Method::Neumann),
            "solve" => Ok(Method::Solve),
            _ => Err(Error::InvalidParameter(format!("unknown inversion method `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertOptions {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions { method: Method::Solve, tol: 1e-12, max_iter: 10_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReconstructionReport {
    pub method: Method,
    /// Relative `L^2` error on the signal grid.
    pub relative_error: f64,
    /// Relative error of the `E` components.
    pub relative_error_e: f64,
    pub iterations: usize,
    pub defect: f64,
}

#[derive(Clone, Debug)]
pub struct Inverted {
    pub x: Vec<C64>,
    pub iterations: usize,
}

/// Covering-sampled frame `{psi_{x_i}}` with PU masses `c_i`.
pub struct SampledFrame {
    tf: Arc<TruncatedFrame>,
    cov: Arc<Covering>,
    flavor: PuFlavor,
    masses: Vec<f64>,
    /// Rows `conj(c_{x_i})`.
    rows: CMat,
    s_d: CMat,
    s_chol: Cholesky,
    sd_chol: Option<Cholesky>,
    defect: Mutex<Option<f64>>,
}

impl std::fmt::Debug for SampledFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SampledFrame({} atoms, dim E = {})", self.cov.len(), self.dim())
    }
}

/// Atoms at the covering's sample points, with masses from the partition
/// of unity of the given flavor.
pub fn sample_frame(tf: &Arc<TruncatedFrame>, cov: &Arc<Covering>, flavor: PuFlavor) -> Result<SampledFrame> {
    if cov.domain().describe() != tf.grid().domain().describe() {
        return Err(Error::GridMismatch("covering and frame live on different index domains".into()));
    }
    for (i, (c, p)) in cov.cells().iter().zip(cov.points()).enumerate() {
        let inside = c.sheet == p.sheet
            && (0..2).all(|a| p.c[a] >= c.lo[a] - 1e-12 * (1.0 + p.c[a].abs()) && p.c[a] <= c.hi[a] + 1e-12 * (1.0 + p.c[a].abs()));
        if !inside {
            return Err(Error::Precondition(format!("sample point {i} lies outside its cell")));
        }
    }
    let masses = cov.partition_of_unity(flavor)?.masses;
    let rows_v: Vec<Vec<C64>> =
        cov.points().par_iter().map(|x| tf.coords(x).iter().map(|v| v.conj()).collect()).collect();
    let k = tf.space().dim();
    let rows = if rows_v.is_empty() { CMat::zeros(0, k) } else { CMat::from_rows(&rows_v) };
    let mut scaled = rows.clone();
    scaled.scale_rows(&masses);
    let s_d = rows.adjoint_mul(&scaled);
    let s_chol = Cholesky::new(tf.frame_matrix())?;
    let sd_chol = Cholesky::new(&s_d).ok();
    Ok(SampledFrame {
        tf: tf.clone(),
        cov: cov.clone(),
        flavor,
        masses,
        rows,
        s_d,
        s_chol,
        sd_chol,
        defect: Mutex::new(None),
    })
}

impl SampledFrame {
    pub fn frame(&self) -> &Arc<TruncatedFrame> {
        &self.tf
    }

    pub fn covering(&self) -> &Arc<Covering> {
        &self.cov
    }

    pub fn flavor(&self) -> PuFlavor {
        self.flavor
    }

    pub fn len(&self) -> usize {
        self.cov.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cov.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tf.space().dim()
    }

    pub fn points(&self) -> &[Point] {
        self.cov.points()
    }

    pub fn measures(&self) -> &[f64] {
        self.cov.measures()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `S_d = sum_i c_i c_{x_i} c_{x_i}^*`.
    pub fn sampled_operator(&self) -> &CMat {
        &self.s_d
    }

    /// `psi_{x_i}` on the signal grid.
    pub fn atom(&self, i: usize) -> Vec<C64> {
        self.tf.family().atom(&self.cov.points()[i])
    }

    /// `sqrt(a_i) psi_{x_i}`.
    pub fn renormalized_atom(&self, i: usize) -> Vec<C64> {
        let s = self.measures()[i].sqrt();
        self.atom(i).into_iter().map(|v| v * s).collect()
    }

    /// `sum_i coef_i psi_{x_i}` with full atoms on the signal grid.
    pub fn synthesize(&self, coef: &[C64]) -> Result<Vec<C64>> {
        check_len(self.len(), coef.len())?;
        let fam = self.tf.family();
        let sg = fam.signal_grid();
        let n = sg.n();
        let chunks: Vec<Vec<C64>> = coef
            .par_chunks(256)
            .enumerate()
            .map(|(ci, cs)| {
                let mut spec = vec![ZERO; n];
                for (off, c) in cs.iter().enumerate() {
                    if *c == ZERO {
                        continue;
                    }
                    let x = &self.cov.points()[ci * 256 + off];
                    for (j, s) in spec.iter_mut().enumerate() {
                        *s += c * fam.coeff(x, j);
                    }
                }
                spec
            })
            .collect();
        let mut spec = vec![ZERO; n];
        for c in &chunks {
            for (s, v) in spec.iter_mut().zip(c) {
                *s += v;
            }
        }
        Ok(sg.from_spectrum(&spec))
    }

    fn s_apply(&self, u: &[C64]) -> Vec<C64> {
        self.tf.frame_matrix().matvec(u)
    }

    fn s_solve(&self, b: &[C64]) -> Vec<C64> {
        self.s_chol.solve(b)
    }

    fn s_norm(&self, u: &[C64]) -> f64 {
        dot(u, &self.s_apply(u)).re.max(0.0).sqrt()
    }

    /// `T u = S^{-1} S_d u`, the coordinate form of `U_Phi` on the range of `V`.
    pub fn uphi_coords(&self, u: &[C64]) -> Vec<C64> {
        self.s_solve(&self.s_d.matvec(u))
    }

    fn defect_apply(&self, u: &[C64]) -> Vec<C64> {
        let t = self.uphi_coords(u);
        u.iter().zip(&t).map(|(a, b)| a - b).collect()
    }

    /// Power-iteration estimate of `||P (Id - U_Phi) P||` on `L^2(X)`.
    /// Every value it can return is a lower bound of the true norm.
    pub fn defect_norm(&self, iters: usize, seed: u64) -> Result<f64> {
        let out = power_norm(
            |u| self.defect_apply(u),
            |a, b| dot(a, &self.s_apply(b)).re,
            self.dim(),
            iters,
            1e-10,
            seed,
        )?;
        // at the rounding floor the ratio test cannot settle
        if !out.converged && out.estimate > 1e-12 {
            return Err(Error::NotConverged(format!(
                "power iteration for the defect did not settle in {iters} steps (last {:.6e})",
                out.estimate
            )));
        }
        *self.defect.lock().unwrap() = Some(out.estimate);
        Ok(out.estimate)
    }

    /// Cached defect, measured with default settings on first use.
    pub fn defect(&self) -> Result<f64> {
        if let Some(d) = *self.defect.lock().unwrap() {
            return Ok(d);
        }
        self.defect_norm(100_000, 0xdefec7)
    }

    /// Solves `T x = g`.
    pub fn invert(&self, g: &[C64], opts: &InvertOptions) -> Result<Inverted> {
        check_len(self.dim(), g.len())?;
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidParameter("inversion tolerance must be positive".into()));
        }
        match opts.method {
            Method::Neumann => {
                let d = self.defect()?;
                if d >= 1.0 {
                    return Err(Error::Numerical(format!(
                        "Neumann series needs defect < 1, measured {d:.4}"
                    )));
                }
                let gn = self.s_norm(g);
                let mut x = g.to_vec();
                if gn == 0.0 {
                    return Ok(Inverted { x, iterations: 0 });
                }
                let mut inc = g.to_vec();
                let cap = opts.max_iter.min(NEUMANN_CAP);
                for it in 1..=cap {
                    inc = self.defect_apply(&inc);
                    for (a, b) in x.iter_mut().zip(&inc) {
                        *a += b;
                    }
                    if self.s_norm(&inc) <= opts.tol * (1.0 - d) * gn {
                        return Ok(Inverted { x, iterations: it });
                    }
                }
                Err(Error::NotConverged(format!("Neumann series did not reach tolerance in {cap} terms")))
            }
            Method::Solve => {
                let b = self.s_apply(g);
                let out = conjugate_gradient(|v| self.s_d.matvec(v), &b, None, opts.tol, opts.max_iter)?;
                Ok(Inverted { x: out.x, iterations: out.iterations })
            }
        }
    }

    /// `(<u, psi_{x_i}>)_i` for coordinates `u` in `E`.
    pub fn samples_of_coords(&self, u: &[C64]) -> Vec<C64> {
        self.rows.matvec(u)
    }

    /// `(<P_E f, psi_{x_i}>)_i`.
    pub fn samples(&self, f: &[C64]) -> Vec<C64> {
        self.samples_of_coords(&self.tf.space().coords(f))
    }

    fn relative(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a
        } else {
            a / b
        }
    }

    /// `l_i(f) = c_i (U_Phi^{-1} W f)(x_i)` and the round-trip report.
    pub fn atomic_coefficients(&self, f: &[C64], opts: &InvertOptions) -> Result<(Vec<C64>, ReconstructionReport)> {
        let sg = self.tf.signal_grid();
        check_len(sg.n(), f.len())?;
        let fe = self.tf.space().coords(f);
        let g = self.s_solve(&fe);
        let inv = self.invert(&g, opts)?;
        let lam: Vec<C64> = self.rows.matvec(&inv.x).iter().zip(&self.masses).map(|(v, c)| v * *c).collect();
        let rec = self.synthesize(&lam)?;
        let diff: Vec<C64> = f.iter().zip(&rec).map(|(a, b)| a - b).collect();
        let rec_e = self.rows.adjoint_matvec(&lam);
        let diff_e: f64 = fe.iter().zip(&rec_e).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let fe_norm = fe.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let report = ReconstructionReport {
            method: opts.method,
            relative_error: Self::relative(sg.norm(&diff), sg.norm(f)),
            relative_error_e: Self::relative(diff_e, fe_norm),
            iterations: inv.iterations,
            defect: self.defect()?,
        };
        Ok((lam, report))
    }

    /// Coordinates of the dual atoms `e_i = c_i S_d^{-1} c_{x_i}`, with
    /// `V e_i = c_i U_Phi^{-1}(W psi_{x_i})`, as rows.
    pub fn dual_frame(&self) -> Result<CMat> {
        let chol = self
            .sd_chol
            .as_ref()
            .ok_or_else(|| Error::Numerical("sampled frame operator is singular on E".into()))?;
        let rows: Vec<Vec<C64>> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let c: Vec<C64> = self.rows.row(i).iter().map(|v| v.conj()).collect();
                chol.solve(&c).into_iter().map(|v| v * self.masses[i]).collect()
            })
            .collect();
        Ok(if rows.is_empty() { CMat::zeros(0, self.dim()) } else { CMat::from_rows(&rows) })
    }

    /// Recovers `f` from `(Vf(x_i))_i`: `U_Phi^{-1}` applied to
    /// `sum_i c_i s_i W psi_{x_i}`, then `W^*`.
    pub fn banach_reconstruct(
        &self,
        samples: &[C64],
        opts: &InvertOptions,
        truth: Option<&[C64]>,
    ) -> Result<(Vec<C64>, ReconstructionReport)> {
        check_len(self.len(), samples.len())?;
        let cs: Vec<C64> = samples.iter().zip(&self.masses).map(|(s, c)| s * *c).collect();
        let b = self.rows.adjoint_matvec(&cs);
        let g = self.s_solve(&b);
        let inv = self.invert(&g, opts)?;
        let sig = self.tf.space().synth(&inv.x);
        let sg = self.tf.signal_grid();
        let (err, err_e) = match truth {
            Some(t) => {
                check_len(sg.n(), t.len())?;
                let diff: Vec<C64> = t.iter().zip(&sig).map(|(a, b)| a - b).collect();
                let te = self.tf.space().coords(t);
                let de: f64 = te.iter().zip(&inv.x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
                let ten = te.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                (Self::relative(sg.norm(&diff), sg.norm(t)), Self::relative(de, ten))
            }
            None => (f64::NAN, f64::NAN),
        };
        let report = ReconstructionReport {
            method: opts.method,
            relative_error: err,
            relative_error_e: err_e,
            iterations: inv.iterations,
            defect: self.defect()?,
        };
        Ok((sig, report))
    }

    /// Extreme nonzero eigenvalues of `sum_i a_i psi_{x_i} psi_{x_i}^*`
    /// compressed to `E`.
    pub fn hilbert_frame_bounds(&self) -> Result<HilbertBounds> {
        if self.is_empty() {
            return Err(Error::Precondition("no sample points".into()));
        }
        let mut scaled = self.rows.clone();
        scaled.scale_rows(self.measures());
        let sa = self.rows.adjoint_mul(&scaled);
        let (vals, _) = hermitian_eigen(&sa);
        let top = vals.last().copied().unwrap_or(0.0);
        if !(top > 0.0) {
            return Err(Error::Numerical("all sampled atoms vanish on E".into()));
        }
        let nz: Vec<f64> = vals.iter().copied().filter(|&v| v > 1e-12 * top).collect();
        Ok(HilbertBounds {
            c1: nz[0],
            c2: top,
            rank: nz.len(),
            dim: vals.len(),
            subspace: "essential subspace E".into(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HilbertBounds {
    pub c1: f64,
    pub c2: f64,
    /// Number of nonzero eigenvalues kept.
    pub rank: usize,
    pub dim: usize,
    pub subspace: String,
}

/// Test signals: random combinations of eight atoms centred in the middle
/// half of the first sheet, projected to `E` and normalized.
pub fn signal_battery(tf: &TruncatedFrame, count: usize, seed: u64) -> Vec<Vec<C64>> {
    use rand::{Rng, SeedableRng};
    let dom = tf.grid().domain();
    let s = &dom.sheets()[0];
    let sg = tf.signal_grid();
    (0..count)
        .map(|k| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64).wrapping_mul(0x9e37_79b9));
            let mut spec = vec![ZERO; sg.n()];
            for _ in 0..8 {
                let mut c = [0.0; 2];
                for a in 0..s.dim {
                    let (lo, hi) = (s.axis_lo(a), s.axis_hi(a));
                    let u = lo + (hi - lo) * (0.25 + 0.5 * rng.gen::<f64>());
                    c[a] = s.natural_coord(a, u);
                }
                let y = Point::on_sheet(s.id, c);
                let w = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                for (j, v) in spec.iter_mut().enumerate() {
                    *v += w * tf.family().coeff(&y, j);
                }
            }
            let f = tf.space().project(&sg.from_spectrum(&spec));
            let n = sg.norm(&f);
            f.into_iter().map(|v| v / n).collect()
        })
        .collect()
}

/// `U_Phi F(x) = sum_i c_i F(x_i) R(x, x_i)` evaluated on grid nodes from
/// kernel columns.
pub struct UPhiOperator {
    r: Kernel,
    points: Vec<Point>,
    masses: Vec<f64>,
}

pub fn build_uphi(r: &Kernel, cov: &Covering, masses: &[f64]) -> Result<UPhiOperator> {
    check_len(cov.len(), masses.len())?;
    Ok(UPhiOperator { r: r.clone(), points: cov.points().to_vec(), masses: masses.to_vec() })
}

impl UPhiOperator {
    /// `F` is given by its values at the sample points.
    pub fn apply(&self, f_at_points: &[C64], grid: &QuadGrid) -> Result<Vec<C64>> {
        check_len(self.points.len(), f_at_points.len())?;
        let active: Vec<usize> = (0..self.points.len()).filter(|&i| f_at_points[i] * self.masses[i] != ZERO).collect();
        let parts: Vec<Result<Vec<C64>>> = active
            .par_chunks(64)
            .map(|chunk| {
                let mut acc = vec![ZERO; grid.len()];
                for &i in chunk {
                    let col = self.r.column(&self.points[i], grid);
                    if col.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                        return Err(Error::Numerical(format!("kernel column at sample point {i} is not finite")));
                    }
                    let c = f_at_points[i] * self.masses[i];
                    for (a, v) in acc.iter_mut().zip(&col) {
                        *a += c * v;
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut out = vec![ZERO; grid.len()];
        for p in parts {
            for (o, v) in out.iter_mut().zip(&p?) {
                *o += v;
            }
        }
        Ok(out)
    }

    pub fn apply_fn(&self, f: impl Fn(&Point) -> C64 + Sync, grid: &QuadGrid) -> Result<Vec<C64>> {
        let vals: Vec<C64> = self.points.par_iter().map(&f).collect();
        self.apply(&vals, grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverings::{CoveringSpec, Placement};
    use crate::frames::tests::{random_in, reference_gabor};
    use crate::frames::{essential_gram_kernel, frame_bounds_continuous};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> Arc<TruncatedFrame> {
        let (fam, grid) = reference_gabor();
        Arc::new(TruncatedFrame::new(fam, grid).unwrap())
    }

    fn lattice(tf: &TruncatedFrame, size: [f64; 2]) -> Arc<Covering> {
        Arc::new(
            Covering::lattice(tf.grid().domain(), CoveringSpec { cell_size: vec![size], overlap: 0.0, placement: Placement::Center })
                .unwrap(),
        )
    }

    fn rel(a: &[C64], b: &[C64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        d / b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn single_node_cells_reproduce_the_continuous_frame() {
        let tf = setup();
        let cov = Arc::new(Covering::from_grid(tf.grid()).unwrap());
        let sf = sample_frame(&tf, &cov, PuFlavor::Indicator).unwrap();
        assert_eq!(sf.len(), tf.grid().len());
        for (c, w) in sf.masses().iter().zip(tf.grid().weights()) {
            assert!((c - w).abs() <= 1e-12 * w);
        }
        assert!(sf.sampled_operator().max_abs_diff(tf.frame_matrix()) <= 1e-10);
        assert!(sf.defect().unwrap() <= 1e-8);
        let hb = sf.hilbert_frame_bounds().unwrap();
        let (c1, c2) = frame_bounds_continuous(&tf).unwrap();
        assert!((hb.c1 - c1).abs() <= 1e-8 && (hb.c2 - c2).abs() <= 1e-8);
        // dual atoms: a_i S^{-1} c_{x_i}
        let dual = sf.dual_frame().unwrap();
        for i in [0, 777, 2048] {
            let c: Vec<C64> = sf.rows.row(i).iter().map(|v| v.conj()).collect();
            let want: Vec<C64> = sf.s_solve(&c).into_iter().map(|v| v * sf.measures()[i]).collect();
            assert!(rel(dual.row(i), &want) <= 1e-8);
        }
    }

    #[test]
    fn inversion_methods_agree_and_reconstruct() {
        let tf = setup();
        let cov = lattice(&tf, [16.0 / 48.0, 32.0 / 48.0]);
        let sf = sample_frame(&tf, &cov, PuFlavor::Indicator).unwrap();
        let d = sf.defect().unwrap();
        assert!(d < 1.0, "{d}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_in(tf.space(), &mut rng);
        let neu = InvertOptions { method: Method::Neumann, tol: 1e-13, max_iter: 10_000 };
        let sol = InvertOptions { method: Method::Solve, tol: 1e-13, max_iter: 10_000 };
        let (l1, r1) = sf.atomic_coefficients(&f, &neu).unwrap();
        let (l2, r2) = sf.atomic_coefficients(&f, &sol).unwrap();
        assert!(rel(&l1, &l2) <= 1e-8);
        assert!(r1.relative_error_e <= 1e-8 && r2.relative_error_e <= 1e-8);
        // <f, e_i> = l_i
        let dual = sf.dual_frame().unwrap();
        let fe = tf.space().coords(&f);
        let via_dual: Vec<C64> = (0..sf.len()).map(|i| dot(dual.row(i), &fe)).collect();
        assert!(rel(&via_dual, &l2) <= 1e-6);
        let s = sf.samples(&f);
        let (rec, rep) = sf.banach_reconstruct(&s, &sol, Some(&f)).unwrap();
        assert!(rep.relative_error <= 1e-8, "{}", rep.relative_error);
        assert!(rel(&rec, &f) <= 1e-8);
        let zero = vec![ZERO; sf.len()];
        let (z, _) = sf.banach_reconstruct(&zero, &sol, None).unwrap();
        assert!(z.iter().all(|v| *v == ZERO));
        let (lz, _) = sf.atomic_coefficients(&vec![ZERO; f.len()], &sol).unwrap();
        assert!(lz.iter().all(|v| *v == ZERO));
        assert!(sf.invert(&fe, &InvertOptions { tol: 0.0, ..sol }).is_err());
        let hb = sf.hilbert_frame_bounds().unwrap();
        assert!(hb.c1 <= hb.c2 && hb.c1 > 0.0);
    }

    #[test]
    fn coarse_covering_refuses_neumann() {
        let tf = setup();
        let cov = lattice(&tf, [4.0, 8.0]);
        let sf = sample_frame(&tf, &cov, PuFlavor::Indicator).unwrap();
        assert!(sf.defect().unwrap() >= 1.0);
        let g = vec![C64::new(1.0, 0.0); sf.dim()];
        let err = sf.invert(&g, &InvertOptions { method: Method::Neumann, tol: 1e-10, max_iter: 100 }).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn kernel_form_matches_coordinates_and_commutes() {
        let tf = setup();
        let cov = lattice(&tf, [1.0, 2.0]);
        let sf = sample_frame(&tf, &cov, PuFlavor::Tent).unwrap();
        let r = essential_gram_kernel(&tf).unwrap();
        let op = build_uphi(&r, &cov, sf.masses()).unwrap();
        let grid = tf.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u: Vec<C64> = tf.space().coords(&random_in(tf.space(), &mut rng));
        let v: Vec<C64> = tf.space().coords(&random_in(tf.space(), &mut rng));
        // F = A u evaluated at the sample points and on the grid
        let fu = sf.samples_of_coords(&u);
        let lhs = op.apply(&fu, grid).unwrap();
        let want = tf.analysis().matvec(&sf.uphi_coords(&u));
        assert!(rel(&lhs, &want) <= 1e-9);
        let fv = sf.samples_of_coords(&v);
        let rhs = op.apply(&fv, grid).unwrap();
        let av = tf.analysis().matvec(&v);
        let au = tf.analysis().matvec(&u);
        let ip = |a: &[C64], b: &[C64]| -> C64 { a.iter().zip(b).zip(grid.weights()).map(|((x, y), w)| x * y.conj() * *w).sum() };
        let (p, q) = (ip(&lhs, &av), ip(&au, &rhs));
        assert!((p - q).norm() <= 1e-8 * p.norm().max(1e-300), "{p} {q}");
        assert!(op.apply(&vec![ZERO; sf.len()], grid).unwrap().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn corrupt_and_mismatched_inputs() {
        let tf = setup();
        let other = crate::measure_space::IndexDomain::plane([-1.0, -1.0], [1.0, 1.0], 1.0).unwrap();
        let cov = Arc::new(
            Covering::lattice(&other, CoveringSpec { cell_size: vec![[1.0, 1.0]], overlap: 0.0, placement: Placement::Center }).unwrap(),
        );
        assert!(matches!(sample_frame(&tf, &cov, PuFlavor::Indicator), Err(Error::GridMismatch(_))));
    }
}
