//! Continuous frames `{psi_x}` over grid-represented index spaces, the
//! transforms `V` and `W`, the frame operator and the Gramian kernel.
//!
//! Operator-level work (inverting `S`, frame bounds) happens on an
//! essential subspace `E` of the signal space: the span of signals whose
//! transforms live well inside the truncated index box. See [`Subspace`].

mod modulation;
mod sinc;
mod wavelet;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fourier;
use crate::kernel::{Kernel, KernelFn, Provenance};
use crate::linalg::{conjugate_gradient, hermitian_eigen, lanczos_extremes, CMat};
use crate::measure_space::{IndexDomain, Point, QuadGrid, SignalGrid};
use crate::C64;

pub use modulation::{alpha_admissibility, AlphaAdmissibility, Modulation, Window};
pub use sinc::Sinc;
pub use wavelet::{Cwt, InhomWavelet};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Nodes per parallel chunk in synthesis; fixed so sums do not depend on
/// the thread count.
const SYNTH_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Gabor,
    Cwt,
    SincRkhs,
    InhomWavelet,
    AlphaMod,
}

impl FamilyTag {
    pub fn parse(tag: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(tag.to_string()))
            .map_err(|_| Error::UnknownFamily(tag.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::Gabor => "gabor",
            FamilyTag::Cwt => "cwt",
            FamilyTag::SincRkhs => "sinc_rkhs",
            FamilyTag::InhomWavelet => "inhom_wavelet",
            FamilyTag::AlphaMod => "alpha_mod",
        }
    }
}

/// How the essential subspace is selected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EssentialRule {
    /// Eigenvectors of the frame operator restricted to nodes at distance
    /// `margin` (in atom widths) from the box boundary, eigenvalue at least
    /// half the largest.
    Localized { margin: f64 },
    /// Eigenvectors of the full truncated frame operator with eigenvalue
    /// within `tol` of one.
    Window { tol: f64 },
}

/// A continuous frame whose atoms are given by their Fourier coefficients
/// `Psi_x(xi_j)` on the signal grid (the atom is the periodization of the
/// continuum atom).
pub trait FrameFamily: Send + Sync {
    fn tag(&self) -> FamilyTag;
    fn signal_grid(&self) -> &SignalGrid;
    fn is_tight(&self) -> bool;
    fn params(&self) -> serde_json::Value;

    /// The index space with the family's measure on the given bounds.
    fn index_domain(&self, bounds: &[[f64; 2]]) -> Result<IndexDomain>;

    /// Fourier coefficient of `psi_x` at DFT bin `j`.
    fn coeff(&self, x: &Point, j: usize) -> C64;

    /// Signal-grid modes that can carry essential signals.
    fn band(&self, domain: &IndexDomain) -> Vec<usize>;

    fn essential_rule(&self) -> EssentialRule;

    /// Whether node `p` sits `margin` atom widths inside the domain.
    fn is_inner(&self, _p: &Point, _domain: &IndexDomain, _margin: f64) -> bool {
        true
    }

    /// Closed-form Gramian `<psi_y, psi_x>`, if the family has one.
    fn gram(&self, _x: &Point, _y: &Point) -> Option<C64> {
        None
    }

    /// Closed-form Gramian column `<psi_y, psi_x>` over all nodes `x`.
    fn gram_column(&self, _y: &Point, _grid: &QuadGrid) -> Option<Vec<C64>> {
        None
    }

    /// Unimodular phase aligning `<psi_z, .>` with `<psi_y, .>`.
    fn lift(&self, _y: &Point, _z: &Point) -> C64 {
        C64::new(1.0, 0.0)
    }

    /// `Vf` on all grid nodes; families override this with FFT paths.
    fn analyze(&self, f: &[C64], grid: &QuadGrid) -> Vec<C64> {
        self.analyze_direct(f, grid)
    }

    fn spectrum(&self, x: &Point) -> Vec<C64> {
        (0..self.signal_grid().n()).map(|j| self.coeff(x, j)).collect()
    }

    fn atom(&self, x: &Point) -> Vec<C64> {
        self.signal_grid().from_spectrum(&self.spectrum(x))
    }

    /// `Vf(x) = <f, psi_x>` by signal-grid quadrature, node by node.
    fn analyze_direct(&self, f: &[C64], grid: &QuadGrid) -> Vec<C64> {
        let sg = self.signal_grid();
        grid.points().par_iter().map(|x| sg.inner(f, &self.atom(x))).collect()
    }
}

/// `sum_j c_j e^{i xi_j (x0 + l dx)}` for `l < count`, via chirp-z.
pub(crate) fn band_sum(sg: &SignalGrid, c: &[C64], x0: f64, dx: f64, count: usize) -> Vec<C64> {
    let n = sg.n();
    let t = sg.half_width();
    let half = n / 2;
    let a: Vec<C64> = (0..n)
        .map(|m| {
            let j = (m + n - half) % n;
            c[j] * C64::from_polar(1.0, sg.freq(j) * x0)
        })
        .collect();
    let theta = std::f64::consts::PI * dx / t;
    let mut out = fourier::czt(&a, theta, count);
    for (l, v) in out.iter_mut().enumerate() {
        *v *= C64::from_polar(1.0, -theta * (half * l) as f64);
    }
    out
}

/// Equispaced spacing of a node list, if it is equispaced.
pub(crate) fn uniform_step(nodes: &[f64]) -> Option<f64> {
    if nodes.len() < 2 {
        return Some(1.0);
    }
    let d = nodes[1] - nodes[0];
    let ok = nodes.windows(2).all(|w| ((w[1] - w[0]) - d).abs() <= 1e-10 * d.abs().max(1e-300));
    ok.then_some(d)
}

/// Fast `V` for families whose atoms on a block row are `m_j e^{-i s xi_j x}`
/// times a row phase. `row(r)` returns `(conj multiplier per bin, s, phase
/// rate)` for row `r` of the second axis, giving
/// `Vf(x, r) = (2T)^{-1} e^{-i rate x} sum_j F_j m_j e^{i xi_j s x}`.
pub(crate) fn analyze_rows(
    sg: &SignalGrid,
    f: &[C64],
    grid: &QuadGrid,
    row: impl Fn(u8, f64) -> (Vec<C64>, f64, f64) + Sync,
) -> Option<Vec<C64>> {
    let spec = sg.spectrum(f);
    let scale = 1.0 / (2.0 * sg.half_width());
    let mut out = vec![ZERO; grid.len()];
    for b in grid.blocks() {
        let xs = &b.nodes[0];
        let dx = uniform_step(xs)?;
        let rows: Vec<Vec<C64>> = b.nodes[1]
            .par_iter()
            .map(|&r| {
                let (m, s, rate) = row(b.sheet, r);
                let c: Vec<C64> = spec.iter().zip(&m).map(|(a, b)| a * b).collect();
                let sums = band_sum(sg, &c, s * xs[0], s * dx, xs.len());
                sums.iter()
                    .zip(xs)
                    .map(|(v, &x)| v * C64::from_polar(scale, -rate * x))
                    .collect()
            })
            .collect();
        let r1 = b.nodes[1].len();
        for (i1, vals) in rows.iter().enumerate() {
            for (i0, v) in vals.iter().enumerate() {
                out[b.start + i0 * r1 + i1] = *v;
            }
        }
    }
    Some(out)
}

pub fn make_family(tag: &str, params: &serde_json::Value, sg: &SignalGrid) -> Result<Arc<dyn FrameFamily>> {
    let t = FamilyTag::parse(tag)?;
    let p = if params.is_null() { serde_json::json!({}) } else { params.clone() };
    Ok(match t {
        FamilyTag::Gabor => Arc::new(Modulation::from_params(sg, &p, false)?),
        FamilyTag::AlphaMod => Arc::new(Modulation::from_params(sg, &p, true)?),
        FamilyTag::Cwt => Arc::new(Cwt::from_params(sg, &p)?),
        FamilyTag::SincRkhs => Arc::new(Sinc::from_params(sg, &p)?),
        FamilyTag::InhomWavelet => Arc::new(InhomWavelet::from_params(sg, &p)?),
    })
}

pub(crate) fn param_f64(p: &serde_json::Value, key: &str, default: Option<f64>) -> Result<f64> {
    match p.get(key) {
        None | Some(serde_json::Value::Null) => {
            default.ok_or_else(|| Error::InvalidParameter(format!("missing parameter `{key}`")))
        }
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::InvalidParameter(format!("parameter `{key}` must be a number"))),
    }
}

pub(crate) fn reject_unknown(p: &serde_json::Value, allowed: &[&str]) -> Result<()> {
    if let Some(obj) = p.as_object() {
        for k in obj.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::InvalidParameter(format!("unknown parameter `{k}`")));
            }
        }
        Ok(())
    } else {
        Err(Error::InvalidParameter("family parameters must be an object".into()))
    }
}

// ---------------------------------------------------------------------------
// Essential subspace

/// Subspace `E` of the signal space, spanned by orthonormal combinations of
/// band modes `q_j(t) = e^{i xi_j t} / sqrt(2T)`.
#[derive(Clone, Debug)]
pub struct Subspace {
    sg: SignalGrid,
    modes: Vec<usize>,
    /// `|modes| x k`, orthonormal columns.
    basis: CMat,
}

impl Subspace {
    pub fn from_modes(sg: &SignalGrid, modes: Vec<usize>) -> Self {
        let k = modes.len();
        Subspace { sg: sg.clone(), modes, basis: CMat::identity(k) }
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    fn mode_scale(&self) -> f64 {
        (2.0 * self.sg.half_width()).sqrt()
    }

    /// Coordinates `<f, e_l>` from a full spectrum.
    pub fn coords_from_spectrum(&self, spec: &[C64]) -> Vec<C64> {
        let s = 1.0 / self.mode_scale();
        let b: Vec<C64> = self.modes.iter().map(|&j| spec[j] * s).collect();
        self.basis.adjoint_matvec(&b)
    }

    fn coords_from_band(&self, band: &[C64]) -> Vec<C64> {
        let s = 1.0 / self.mode_scale();
        let b: Vec<C64> = band.iter().map(|v| v * s).collect();
        self.basis.adjoint_matvec(&b)
    }

    pub fn coords(&self, f: &[C64]) -> Vec<C64> {
        self.coords_from_spectrum(&self.sg.spectrum(f))
    }

    pub fn synth(&self, u: &[C64]) -> Vec<C64> {
        let b = self.basis.matvec(u);
        let mut spec = vec![ZERO; self.sg.n()];
        let s = self.mode_scale();
        for (&j, v) in self.modes.iter().zip(&b) {
            spec[j] = v * s;
        }
        self.sg.from_spectrum(&spec)
    }

    pub fn project(&self, f: &[C64]) -> Vec<C64> {
        self.synth(&self.coords(f))
    }

    /// Coordinates `c_x = (<psi_x, e_l>)_l` of an atom.
    pub fn atom_coords(&self, fam: &dyn FrameFamily, x: &Point) -> Vec<C64> {
        let band: Vec<C64> = self.modes.iter().map(|&j| fam.coeff(x, j)).collect();
        self.coords_from_band(&band)
    }
}

/// Band coordinates of atoms at `points`, rows `conj(b_x)` scaled by
/// `sqrt(weight)`.
fn weighted_band_rows(fam: &dyn FrameFamily, modes: &[usize], points: &[Point], weights: &[f64]) -> CMat {
    let s = 1.0 / (2.0 * fam.signal_grid().half_width()).sqrt();
    let rows: Vec<Vec<C64>> = points
        .par_iter()
        .zip(weights)
        .map(|(x, w)| {
            let sw = w.sqrt() * s;
            modes.iter().map(|&j| fam.coeff(x, j).conj() * sw).collect()
        })
        .collect();
    CMat::from_rows(&rows)
}

pub fn essential_subspace(fam: &dyn FrameFamily, grid: &QuadGrid, rule: EssentialRule) -> Result<Subspace> {
    let sg = fam.signal_grid();
    let modes = fam.band(grid.domain());
    if modes.is_empty() {
        return Err(Error::Precondition("family band is empty on this domain".into()));
    }
    let (pts, wts): (Vec<Point>, Vec<f64>) = match rule {
        EssentialRule::Localized { margin } => grid
            .points()
            .iter()
            .zip(grid.weights())
            .filter(|(p, _)| fam.is_inner(p, grid.domain(), margin))
            .map(|(p, w)| (*p, *w))
            .unzip(),
        EssentialRule::Window { .. } => (grid.points().to_vec(), grid.weights().to_vec()),
    };
    if pts.is_empty() {
        return Err(Error::Precondition(
            "no grid node lies inside the margin; enlarge the index box".into(),
        ));
    }
    let m = weighted_band_rows(fam, &modes, &pts, &wts);
    // L[j,l] = sum_x w_x b_{x,j} conj(b_{x,l})
    let l = m.adjoint_mul(&m).conj();
    let (vals, vecs) = hermitian_eigen(&l);
    let top = vals.last().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..vals.len())
        .filter(|&i| match rule {
            EssentialRule::Localized { .. } => vals[i] >= 0.5 * top && vals[i] > 0.0,
            EssentialRule::Window { tol } => (vals[i] - 1.0).abs() <= tol,
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::Precondition("essential subspace is empty at this truncation".into()));
    }
    let mut basis = CMat::zeros(modes.len(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        for r in 0..modes.len() {
            basis[(r, c)] = vecs[(r, i)];
        }
    }
    Ok(Subspace { sg: sg.clone(), modes, basis })
}

// ---------------------------------------------------------------------------
// Truncated frame

/// A family together with an index grid and its essential subspace.
pub struct TruncatedFrame {
    family: Arc<dyn FrameFamily>,
    grid: QuadGrid,
    space: Subspace,
    /// Rows `conj(c_x)`, so that `(A u)_x = V(sum u_l e_l)(x)`.
    analysis: CMat,
    /// `A^* W A`.
    s_e: CMat,
}

impl std::fmt::Debug for TruncatedFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TruncatedFrame({}, {} nodes, dim E = {})", self.family.tag().name(), self.grid.len(), self.space.dim())
    }
}

impl TruncatedFrame {
    pub fn new(family: Arc<dyn FrameFamily>, grid: QuadGrid) -> Result<Self> {
        let rule = family.essential_rule();
        Self::with_rule(family, grid, rule)
    }

    pub fn with_rule(family: Arc<dyn FrameFamily>, grid: QuadGrid, rule: EssentialRule) -> Result<Self> {
        let space = essential_subspace(family.as_ref(), &grid, rule)?;
        Ok(Self::with_space(family, grid, space))
    }

    pub fn with_space(family: Arc<dyn FrameFamily>, grid: QuadGrid, space: Subspace) -> Self {
        let rows: Vec<Vec<C64>> = grid
            .points()
            .par_iter()
            .map(|x| space.atom_coords(family.as_ref(), x).iter().map(|v| v.conj()).collect())
            .collect();
        let analysis = if rows.is_empty() { CMat::zeros(0, space.dim()) } else { CMat::from_rows(&rows) };
        let mut wa = analysis.clone();
        wa.scale_rows(grid.weights());
        let s_e = analysis.adjoint_mul(&wa);
        TruncatedFrame { family, grid, space, analysis, s_e }
    }

    pub fn family(&self) -> &Arc<dyn FrameFamily> {
        &self.family
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    pub fn space(&self) -> &Subspace {
        &self.space
    }

    pub fn signal_grid(&self) -> &SignalGrid {
        self.family.signal_grid()
    }

    pub fn is_tight(&self) -> bool {
        self.family.is_tight()
    }

    pub fn analysis(&self) -> &CMat {
        &self.analysis
    }

    /// Compressed frame operator `P_E S P_E` in coordinates.
    pub fn frame_matrix(&self) -> &CMat {
        &self.s_e
    }

    pub fn coords(&self, x: &Point) -> Vec<C64> {
        self.space.atom_coords(self.family.as_ref(), x)
    }

    /// `S_E^{-1} b` by conjugate gradients.
    pub fn solve_frame(&self, b: &[C64], x0: Option<&[C64]>, tol: f64, max_iter: usize) -> Result<crate::linalg::CgOutcome> {
        conjugate_gradient(|v| self.s_e.matvec(v), b, x0, tol, max_iter)
    }
}

/// Values of `Vf` or `Wf` on an index grid.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TransformField {
    pub tag: TransformTag,
    pub values: Vec<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformTag {
    V,
    W,
}

fn check_signal(sg: &SignalGrid, f: &[C64]) -> Result<()> {
    if f.len() != sg.n() {
        return Err(Error::GridMismatch(format!("signal of length {} on a grid of {}", f.len(), sg.n())));
    }
    Ok(())
}

pub fn analyze_v(fam: &dyn FrameFamily, f: &[C64], grid: &QuadGrid) -> Result<TransformField> {
    check_signal(fam.signal_grid(), f)?;
    Ok(TransformField { tag: TransformTag::V, values: fam.analyze(f, grid) })
}

/// `V^* F = int F(x) psi_x dmu(x)` by quadrature.
pub fn synthesize(fam: &dyn FrameFamily, coeffs: &[C64], grid: &QuadGrid) -> Result<Vec<C64>> {
    check_len(grid.len(), coeffs.len())?;
    let sg = fam.signal_grid();
    let n = sg.n();
    let pts = grid.points();
    let w = grid.weights();
    let partial: Vec<Vec<C64>> = (0..grid.len())
        .collect::<Vec<_>>()
        .par_chunks(SYNTH_CHUNK)
        .map(|chunk| {
            let mut acc = vec![ZERO; n];
            for &i in chunk {
                let c = coeffs[i] * w[i];
                if c == ZERO {
                    continue;
                }
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += fam.coeff(&pts[i], j) * c;
                }
            }
            acc
        })
        .collect();
    let mut spec = vec![ZERO; n];
    for p in &partial {
        for (s, v) in spec.iter_mut().zip(p) {
            *s += v;
        }
    }
    Ok(sg.from_spectrum(&spec))
}

pub fn frame_operator_apply(fam: &dyn FrameFamily, f: &[C64], grid: &QuadGrid) -> Result<Vec<C64>> {
    let v = analyze_v(fam, f, grid)?;
    synthesize(fam, &v.values, grid)
}

#[derive(Clone, Debug)]
pub struct InverseOutcome {
    pub signal: Vec<C64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// `S^{-1} f` for `f` projected to the essential subspace.
pub fn inv_frame_operator_apply(tf: &TruncatedFrame, f: &[C64], tol: f64, max_iter: usize) -> Result<InverseOutcome> {
    check_signal(tf.signal_grid(), f)?;
    let b = tf.space.coords(f);
    let out = tf.solve_frame(&b, None, tol, max_iter)?;
    Ok(InverseOutcome {
        signal: tf.space.synth(&out.x),
        iterations: out.iterations,
        relative_residual: out.relative_residual,
    })
}

pub fn analyze_w(tf: &TruncatedFrame, f: &[C64], tol: f64, max_iter: usize) -> Result<TransformField> {
    let u = inv_frame_operator_apply(tf, f, tol, max_iter)?;
    Ok(TransformField { tag: TransformTag::W, values: tf.family.analyze(&u.signal, &tf.grid) })
}

/// Extreme eigenvalues of the compressed frame operator.
pub fn frame_bounds_continuous(tf: &TruncatedFrame) -> Result<(f64, f64)> {
    let k = tf.space.dim();
    if k == 0 || tf.grid.is_empty() {
        return Err(Error::Numerical("frame has no atoms or an empty essential subspace".into()));
    }
    if tf.analysis.max_abs() == 0.0 {
        return Err(Error::Numerical("all atoms vanish on the essential subspace".into()));
    }
    lanczos_extremes(|v| tf.s_e.matvec(v), k, k, 0x5eed)
}

/// Energy share of an atom in the outer tenth of the signal interval, the
/// largest over grid nodes; a size hint for the signal box.
pub fn truncation_leakage(fam: &dyn FrameFamily, grid: &QuadGrid) -> f64 {
    let sg = fam.signal_grid();
    let t = sg.half_width();
    let times = sg.times();
    let stride = (grid.len() / 256).max(1);
    grid.points()
        .par_iter()
        .step_by(stride)
        .map(|x| {
            let a = fam.atom(x);
            let tot: f64 = a.iter().map(|v| v.norm_sqr()).sum();
            let edge: f64 = a.iter().zip(&times).filter(|(_, &tk)| tk.abs() > 0.9 * t).map(|(v, _)| v.norm_sqr()).sum();
            if tot > 0.0 { edge / tot } else { 0.0 }
        })
        .reduce(|| 0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Gramian

struct SpectralGram {
    family: Arc<dyn FrameFamily>,
}

impl KernelFn for SpectralGram {
    fn eval(&self, x: &Point, y: &Point) -> C64 {
        if let Some(v) = self.family.gram(x, y) {
            return v;
        }
        let sg = self.family.signal_grid();
        let s: C64 = (0..sg.n()).map(|j| self.family.coeff(y, j) * self.family.coeff(x, j).conj()).sum();
        s / (2.0 * sg.half_width())
    }

    fn grid_column(&self, y: &Point, grid: &QuadGrid) -> Vec<C64> {
        if let Some(c) = self.family.gram_column(y, grid) {
            return c;
        }
        if self.family.gram(y, y).is_some() {
            return grid.points().iter().map(|x| self.family.gram(x, y).unwrap()).collect();
        }
        self.family.analyze(&self.family.atom(y), grid)
    }

    fn lift(&self, y: &Point, z: &Point) -> C64 {
        self.family.lift(y, z)
    }
}

/// `R(x,y) = (S_E^{-1} c_x)^* c_y` for non-tight families.
struct EssentialGram {
    tf: Arc<TruncatedFrame>,
    grid_id: u64,
    /// Rows `conj(S_E^{-1} c_x)` for the grid nodes.
    dual_rows: CMat,
}

impl EssentialGram {
    fn dual_row(&self, x: &Point) -> Vec<C64> {
        let c = self.tf.coords(x);
        match self.tf.solve_frame(&c, None, 1e-13, 10 * c.len().max(10)) {
            Ok(o) => o.x.iter().map(|v| v.conj()).collect(),
            Err(_) => vec![C64::new(f64::NAN, 0.0); c.len()],
        }
    }
}

impl KernelFn for EssentialGram {
    fn eval(&self, x: &Point, y: &Point) -> C64 {
        let d = self.dual_row(x);
        let c = self.tf.coords(y);
        d.iter().zip(&c).map(|(a, b)| a * b).sum()
    }

    fn grid_column(&self, y: &Point, grid: &QuadGrid) -> Vec<C64> {
        let c = self.tf.coords(y);
        if grid.id() == self.grid_id {
            self.dual_rows.matvec(&c)
        } else {
            grid.points().iter().map(|x| {
                let d = self.dual_row(x);
                d.iter().zip(&c).map(|(a, b)| a * b).sum()
            }).collect()
        }
    }

    fn lift(&self, y: &Point, z: &Point) -> C64 {
        self.tf.family.lift(y, z)
    }
}

/// The Gramian kernel `R(x,y) = <psi_y, S^{-1} psi_x>`. Tight families use
/// `S = Id`; otherwise one CG solve per grid node, warm-started along the
/// node order.
pub fn gram_kernel(tf: &Arc<TruncatedFrame>) -> Result<Kernel> {
    if tf.is_tight() {
        return Ok(Kernel::new(Arc::new(SpectralGram { family: tf.family.clone() }), Provenance::Gramian));
    }
    essential_gram_kernel(tf)
}

/// `R_E(x,y) = (S_E^{-1} c_x)^* c_y`, the Gramian of the compressed frame.
/// It is exactly idempotent under grid quadrature on every family.
pub fn essential_gram_kernel(tf: &Arc<TruncatedFrame>) -> Result<Kernel> {
    if tf.grid.len() > crate::kernel::CACHE_LIMIT {
        return Err(Error::Precondition(format!(
            "non-tight Gramian assembly is capped at {} rows",
            crate::kernel::CACHE_LIMIT
        )));
    }
    let k = tf.space.dim();
    let mut rows: Vec<Vec<C64>> = Vec::with_capacity(tf.grid.len());
    let mut prev: Option<Vec<C64>> = None;
    for i in 0..tf.grid.len() {
        let c: Vec<C64> = tf.analysis.row(i).iter().map(|v| v.conj()).collect();
        let out = tf.solve_frame(&c, prev.as_deref(), 1e-13, 10 * k.max(10))?;
        rows.push(out.x.iter().map(|v| v.conj()).collect());
        prev = Some(out.x);
    }
    let dual_rows = CMat::from_rows(&rows);
    Ok(Kernel::new(
        Arc::new(EssentialGram { tf: tf.clone(), grid_id: tf.grid.id(), dual_rows }),
        Provenance::Gramian,
    ))
}
