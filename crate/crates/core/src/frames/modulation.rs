//! Gabor (short-time Fourier) and alpha-modulation frames.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{analyze_rows, param_f64, reject_unknown, EssentialRule, FamilyTag, FrameFamily};
use crate::error::{Error, Result};
use crate::fourier;
use crate::measure_space::{gauss_legendre, AxisDensity, AxisScale, IndexDomain, MetricKind, Point, QuadGrid, Sheet, SignalGrid};
use crate::C64;

/// Window `g` through its Fourier transform `g_hat(nu) = int g(t) e^{-i nu t} dt`.
#[derive(Clone, Debug)]
pub enum Window {
    /// `(pi w^2)^{-1/4} e^{-t^2 / (2 w^2)}`.
    Gaussian { width: f64 },
    /// Transform tabulated on `nu0 + l dnu` from grid samples.
    Sampled { samples: Vec<C64>, nu0: f64, dnu: f64, table: Arc<Vec<C64>>, cutoff: f64, spread: f64 },
}

impl Window {
    pub fn gaussian(width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidParameter(format!("window width {width} must be positive")));
        }
        Ok(Window::Gaussian { width })
    }

    /// Tabulates `g_hat` on `[-nyquist, nyquist]` with spacing `pi / (32 T)`.
    pub fn sampled(sg: &SignalGrid, samples: Vec<C64>) -> Result<Self> {
        if samples.len() != sg.n() {
            return Err(Error::GridMismatch(format!("window has {} samples, grid has {}", samples.len(), sg.n())));
        }
        let h = sg.step();
        let nyq = sg.nyquist();
        let dnu = PI / (32.0 * sg.half_width());
        let len = (2.0 * nyq / dnu).round() as usize + 1;
        let nu0 = -nyq;
        let t0 = sg.time(0);
        let a: Vec<C64> = samples
            .iter()
            .enumerate()
            .map(|(k, g)| g * C64::from_polar(h, -nu0 * sg.time(k)))
            .collect();
        let mut table = fourier::czt(&a, -dnu * h, len);
        for (l, v) in table.iter_mut().enumerate() {
            *v *= C64::from_polar(1.0, -(l as f64) * dnu * t0);
        }
        let peak = table.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        let mut cutoff: f64 = 0.0;
        for (l, v) in table.iter().enumerate() {
            if v.norm_sqr() > 1e-16 * peak {
                cutoff = cutoff.max((nu0 + l as f64 * dnu).abs());
            }
        }
        // sqrt(2) times the RMS duration, which is the width for a Gaussian
        let e: f64 = samples.iter().map(|v| v.norm_sqr()).sum();
        let m2: f64 = samples.iter().enumerate().map(|(k, v)| v.norm_sqr() * sg.time(k).powi(2)).sum();
        let spread = if e > 0.0 { (2.0 * m2 / e).sqrt() } else { 0.0 };
        Ok(Window::Sampled { samples, nu0, dnu, table: Arc::new(table), cutoff: cutoff + dnu, spread })
    }

    pub fn hat(&self, nu: f64) -> C64 {
        match self {
            Window::Gaussian { width } => {
                C64::new((4.0 * PI * width * width).powf(0.25) * (-0.5 * width * width * nu * nu).exp(), 0.0)
            }
            Window::Sampled { nu0, dnu, table, .. } => lagrange6(table, (nu - nu0) / dnu),
        }
    }

    /// Frequency beyond which `|g_hat|^2` is negligible.
    pub fn cutoff(&self) -> f64 {
        match self {
            Window::Gaussian { width } => 8.0 / width,
            Window::Sampled { cutoff, .. } => *cutoff,
        }
    }

    /// Time spread used for margins.
    pub fn spread(&self) -> f64 {
        match self {
            Window::Gaussian { width } => *width,
            Window::Sampled { spread, .. } => *spread,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Window::Gaussian { width } => serde_json::json!({"type": "gaussian", "width": width}),
            Window::Sampled { samples, .. } => serde_json::json!({
                "type": "samples",
                "re": samples.iter().map(|v| v.re).collect::<Vec<_>>(),
                "im": samples.iter().map(|v| v.im).collect::<Vec<_>>(),
            }),
        }
    }

    fn from_json(sg: &SignalGrid, p: Option<&serde_json::Value>) -> Result<Self> {
        let Some(p) = p else { return Window::gaussian(1.0) };
        match p.get("type").and_then(|t| t.as_str()).unwrap_or("gaussian") {
            "gaussian" => {
                reject_unknown(p, &["type", "width"])?;
                Window::gaussian(param_f64(p, "width", Some(1.0))?)
            }
            "samples" => {
                reject_unknown(p, &["type", "re", "im"])?;
                let read = |k: &str| -> Result<Vec<f64>> {
                    match p.get(k) {
                        None => Ok(vec![0.0; sg.n()]),
                        Some(v) => serde_json::from_value(v.clone())
                            .map_err(|_| Error::InvalidParameter(format!("window `{k}` must be a number array"))),
                    }
                };
                let re = read("re")?;
                let im = read("im")?;
                if re.len() != im.len() {
                    return Err(Error::InvalidParameter("window `re` and `im` lengths differ".into()));
                }
                let s: Vec<C64> = re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect();
                let nrm = if s.len() == sg.n() { sg.norm(&s) } else { f64::NAN };
                if s.len() == sg.n() && (nrm - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidParameter(format!("window norm {nrm} is not 1")));
                }
                Window::sampled(sg, s)
            }
            other => Err(Error::InvalidParameter(format!("unknown window type `{other}`"))),
        }
    }
}

/// Six-point Lagrange interpolation on a unit-spaced table; zero outside.
fn lagrange6(table: &[C64], u: f64) -> C64 {
    let n = table.len();
    if !(u >= 0.0 && u <= (n - 1) as f64) {
        return C64::new(0.0, 0.0);
    }
    let base = (u.floor() as i64 - 2).clamp(0, n as i64 - 6) as usize;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..6 {
        let xi = (base + i) as f64;
        let mut l = 1.0;
        for j in 0..6 {
            if j != i {
                let xj = (base + j) as f64;
                l *= (u - xj) / (xi - xj);
            }
        }
        acc += table[base + i] * l;
    }
    acc
}

/// `psi_{(x,w)} = M_w D_s T_x g` with `s = (1 + |w|)^{-alpha}`; `alpha = 0`
/// is the Gabor system. Measure `dx dw (1+|w|)^{-alpha} / (2 pi)`.
pub struct Modulation {
    sg: SignalGrid,
    window: Window,
    alpha: f64,
    tag: FamilyTag,
    /// `e^{-i w x / 2}` over the last separable grid seen.
    phase_cache: Mutex<Option<(u64, Arc<Vec<C64>>)>>,
}

impl std::fmt::Debug for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Modulation({:?}, alpha = {})", self.window, self.alpha)
    }
}

impl Modulation {
    pub fn gabor(sg: &SignalGrid, window: Window) -> Self {
        Self::build(sg, window, 0.0, FamilyTag::Gabor)
    }

    pub fn alpha_mod(sg: &SignalGrid, window: Window, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in [0, 1)")));
        }
        Ok(Self::build(sg, window, alpha, FamilyTag::AlphaMod))
    }

    fn build(sg: &SignalGrid, window: Window, alpha: f64, tag: FamilyTag) -> Self {
        Modulation { sg: sg.clone(), window, alpha, tag, phase_cache: Mutex::new(None) }
    }

    pub(crate) fn from_params(sg: &SignalGrid, p: &serde_json::Value, alpha_mod: bool) -> Result<Self> {
        if alpha_mod {
            reject_unknown(p, &["alpha", "window"])?;
            let w = Window::from_json(sg, p.get("window"))?;
            Self::alpha_mod(sg, w, param_f64(p, "alpha", None)?)
        } else {
            reject_unknown(p, &["window"])?;
            Ok(Self::gabor(sg, Window::from_json(sg, p.get("window"))?))
        }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    fn dilation(&self, w: f64) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else {
            (1.0 + w.abs()).powf(-self.alpha)
        }
    }

    fn gaussian_width(&self) -> Option<f64> {
        match (&self.window, self.alpha) {
            (Window::Gaussian { width }, a) if a == 0.0 => Some(*width),
            _ => None,
        }
    }

    fn phase_table(&self, grid: &QuadGrid) -> Arc<Vec<C64>> {
        let mut guard = self.phase_cache.lock().unwrap();
        if let Some((id, t)) = guard.as_ref() {
            if *id == grid.id() {
                return t.clone();
            }
        }
        let b = &grid.blocks()[0];
        let mut t = Vec::with_capacity(b.len());
        for &x in &b.nodes[0] {
            for &w in &b.nodes[1] {
                t.push(C64::from_polar(1.0, -0.5 * w * x));
            }
        }
        let t = Arc::new(t);
        *guard = Some((grid.id(), t.clone()));
        t
    }
}

impl FrameFamily for Modulation {
    fn tag(&self) -> FamilyTag {
        self.tag
    }

    fn signal_grid(&self) -> &SignalGrid {
        &self.sg
    }

    fn is_tight(&self) -> bool {
        self.alpha == 0.0
    }

    fn params(&self) -> serde_json::Value {
        if self.tag == FamilyTag::Gabor {
            serde_json::json!({"window": self.window.to_json()})
        } else {
            serde_json::json!({"alpha": self.alpha, "window": self.window.to_json()})
        }
    }

    fn index_domain(&self, bounds: &[[f64; 2]]) -> Result<IndexDomain> {
        if bounds.len() != 2 {
            return Err(Error::InvalidGrid(format!("time-frequency domain needs 2 axes, got {}", bounds.len())));
        }
        let density = if self.alpha == 0.0 { AxisDensity::Uniform } else { AxisDensity::PowerDecay(self.alpha) };
        IndexDomain::new(
            vec![Sheet {
                id: 0,
                dim: 2,
                lo: [bounds[0][0], bounds[1][0]],
                hi: [bounds[0][1], bounds[1][1]],
                scale: [AxisScale::Linear; 2],
                density: [AxisDensity::Uniform, density],
                factor: 1.0 / (2.0 * PI),
                embed_fill: 0.0,
            }],
            MetricKind::Euclidean,
        )
    }

    fn coeff(&self, p: &Point, j: usize) -> C64 {
        let (x, w) = (p.c[0], p.c[1]);
        let s = self.dilation(w);
        let d = s * (self.sg.freq(j) - w);
        self.window.hat(d) * C64::from_polar(s.sqrt(), -x * d)
    }

    fn band(&self, domain: &IndexDomain) -> Vec<usize> {
        let sh = domain.sheet(0);
        let top = sh.lo[1].abs().max(sh.hi[1].abs()) + 2.0;
        (0..self.sg.n()).filter(|&j| self.sg.freq(j).abs() <= top).collect()
    }

    fn essential_rule(&self) -> EssentialRule {
        // the box frame operator has a clean unit plateau only without dilation
        if self.alpha == 0.0 {
            EssentialRule::Window { tol: 1e-3 }
        } else {
            EssentialRule::Localized { margin: 4.0 }
        }
    }

    fn is_inner(&self, p: &Point, domain: &IndexDomain, margin: f64) -> bool {
        let sh = domain.sheet(0);
        let sp = self.window.spread();
        let (x, w) = (p.c[0], p.c[1]);
        let dw = margin * (1.0 + w.abs()).powf(self.alpha) / sp;
        x >= sh.lo[0] + margin * sp && x <= sh.hi[0] - margin * sp && w - dw >= sh.lo[1] && w + dw <= sh.hi[1]
    }

    fn gram(&self, p: &Point, q: &Point) -> Option<C64> {
        let sig = self.gaussian_width()?;
        let (x, w) = (p.c[0], p.c[1]);
        let (a, b) = (q.c[0], q.c[1]);
        let m = (-(a - x).powi(2) / (4.0 * sig * sig) - sig * sig * (b - w).powi(2) / 4.0).exp();
        Some(C64::from_polar(m, 0.5 * (b - w) * (a + x)))
    }

    fn gram_column(&self, q: &Point, grid: &QuadGrid) -> Option<Vec<C64>> {
        let sig = self.gaussian_width()?;
        if grid.blocks().len() != 1 {
            return None;
        }
        let blk = &grid.blocks()[0];
        let (a, b) = (q.c[0], q.c[1]);
        let ex: Vec<C64> = blk.nodes[0]
            .iter()
            .map(|&x| C64::from_polar((-(a - x).powi(2) / (4.0 * sig * sig)).exp(), 0.5 * b * x))
            .collect();
        let ew: Vec<C64> = blk.nodes[1]
            .iter()
            .map(|&w| C64::from_polar((-sig * sig * (b - w).powi(2) / 4.0).exp(), -0.5 * w * a))
            .collect();
        let c = C64::from_polar(1.0, 0.5 * a * b);
        let ph = self.phase_table(grid);
        let r1 = ew.len();
        let mut out = Vec::with_capacity(grid.len());
        for (i0, ex) in ex.iter().enumerate() {
            let cx = c * ex;
            for (i1, ew) in ew.iter().enumerate() {
                out.push(cx * ew * ph[i0 * r1 + i1]);
            }
        }
        Some(out)
    }

    fn lift(&self, y: &Point, z: &Point) -> C64 {
        let t = self.dilation(y.c[1]) * y.c[0];
        C64::from_polar(1.0, -(z.c[1] - y.c[1]) * t)
    }

    fn analyze(&self, f: &[C64], grid: &QuadGrid) -> Vec<C64> {
        let n = self.sg.n();
        let fast = analyze_rows(&self.sg, f, grid, |_, w| {
            let s = self.dilation(w);
            let m: Vec<C64> = (0..n).map(|j| self.window.hat(s * (self.sg.freq(j) - w)).conj() * s.sqrt()).collect();
            (m, s, s * w)
        });
        fast.unwrap_or_else(|| self.analyze_direct(f, grid))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AlphaAdmissibility {
    pub xi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `max(sigma_max, 1 / sigma_min)`.
    pub a_const: f64,
    /// `(sigma_max - sigma_min) / mean`.
    pub relative_variation: f64,
}

/// `sigma(xi) = int |g_hat((xi - w) / (1+|w|)^alpha)|^2 (1+|w|)^{-alpha} dw`.
pub fn alpha_admissibility(sg: &SignalGrid, g: &[C64], alpha: f64, xi: &[f64]) -> Result<AlphaAdmissibility> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    if xi.is_empty() {
        return Err(Error::InvalidParameter("empty frequency grid".into()));
    }
    let win = Window::sampled(sg, g.to_vec())?;
    alpha_sigma(&win, alpha, xi)
}

pub(crate) fn alpha_sigma(win: &Window, alpha: f64, xi: &[f64]) -> Result<AlphaAdmissibility> {
    let cut = win.cutoff();
    let s = |w: f64| (1.0 + w.abs()).powf(-alpha);
    let sigma: Vec<f64> = xi
        .iter()
        .map(|&x| {
            let reach = |dir: f64| {
                let mut d = cut;
                while (d * s(x + dir * d)) < cut {
                    d *= 1.5;
                }
                x + dir * d
            };
            let (lo, hi) = (reach(-1.0), reach(1.0));
            let f = |w: f64| win.hat(s(w) * (x - w)).norm_sqr() * s(w);
            let panels = |a: f64, b: f64| (((b - a) / cut * 16.0).ceil() as usize).clamp(8, 4096);
            if lo < 0.0 && hi > 0.0 {
                gauss_legendre(lo, 0.0, panels(lo, 0.0), f) + gauss_legendre(0.0, hi, panels(0.0, hi), f)
            } else {
                gauss_legendre(lo, hi, panels(lo, hi), f)
            }
        })
        .collect();
    let smin = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = sigma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(smin > 0.0) {
        return Err(Error::Numerical(format!("alpha-admissibility fails: sigma_min = {smin:.3e}")));
    }
    let mean = sigma.iter().sum::<f64>() / sigma.len() as f64;
    Ok(AlphaAdmissibility {
        xi: xi.to_vec(),
        sigma_min: smin,
        sigma_max: smax,
        a_const: smax.max(1.0 / smin),
        relative_variation: (smax - smin) / mean,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{frame_bounds_continuous, gram_kernel, TruncatedFrame};

    fn gaussian_samples(sg: &SignalGrid, w: f64) -> Vec<C64> {
        sg.times()
            .iter()
            .map(|t| C64::new((PI * w * w).powf(-0.25) * (-t * t / (2.0 * w * w)).exp(), 0.0))
            .collect()
    }

    #[test]
    fn sampled_transform_matches_closed_form() {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        let s = Window::sampled(&sg, gaussian_samples(&sg, 1.3)).unwrap();
        let g = Window::gaussian(1.3).unwrap();
        for nu in [-7.3, -1.01, 0.0, 0.37, 2.9, 5.55] {
            assert!((s.hat(nu) - g.hat(nu)).norm() < 1e-9, "{nu}");
        }
    }

    #[test]
    fn sampled_gabor_matches_gaussian_gabor() {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        let a = Modulation::gabor(&sg, Window::sampled(&sg, gaussian_samples(&sg, 1.0)).unwrap());
        let b = Modulation::gabor(&sg, Window::gaussian(1.0).unwrap());
        let p = Point::new(1.5, -3.25);
        let d: f64 = (0..512).map(|j| (a.coeff(&p, j) - b.coeff(&p, j)).norm()).fold(0.0, f64::max);
        assert!(d < 1e-9);
    }

    #[test]
    fn window_validation() {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        let mut g = gaussian_samples(&sg, 1.0);
        g.iter_mut().for_each(|v| *v *= 2.0);
        let re: Vec<f64> = g.iter().map(|v| v.re).collect();
        let p = serde_json::json!({"window": {"type": "samples", "re": re}});
        assert!(Modulation::from_params(&sg, &p, false).is_err());
        assert!(Modulation::from_params(&sg, &serde_json::json!({"alpha": 1.0}), true).is_err());
        assert!(Modulation::from_params(&sg, &serde_json::json!({"alpha": -0.1}), true).is_err());
        assert!(Modulation::from_params(&sg, &serde_json::json!({"alpha": 0.5}), true).is_ok());
    }

    #[test]
    fn alpha_zero_sigma_is_constant() {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        let xi: Vec<f64> = (0..=80).map(|i| -20.0 + 0.5 * i as f64).collect();
        let r = alpha_admissibility(&sg, &gaussian_samples(&sg, 1.0), 0.0, &xi).unwrap();
        assert!(r.relative_variation <= 1e-3, "{}", r.relative_variation);
        // convolution of |g_hat|^2 with Lebesgue measure: 2 pi ||g||^2
        assert!((r.sigma_min - 2.0 * PI).abs() < 1e-6, "{}", r.sigma_min);
        let r = alpha_admissibility(&sg, &gaussian_samples(&sg, 1.0), 0.5, &xi).unwrap();
        assert!(r.sigma_min > 0.0 && r.a_const.is_finite());
        assert!(alpha_admissibility(&sg, &vec![C64::new(0.0, 0.0); 512], 0.5, &xi).is_err());
    }

    #[test]
    fn alpha_mod_fast_path_and_inverse() {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        let fam: Arc<dyn FrameFamily> = Arc::new(Modulation::alpha_mod(&sg, Window::gaussian(1.0).unwrap(), 0.5).unwrap());
        let dom = fam.index_domain(&[[-8.0, 8.0], [-16.0, 16.0]]).unwrap();
        let grid = QuadGrid::build(&dom, &[[48, 64]]).unwrap();
        let f: Vec<C64> = sg.times().iter().map(|t| C64::new((-(t - 0.5) * (t - 0.5)).exp(), (2.0 * t).sin() * (-t * t).exp())).collect();
        let a = fam.analyze(&f, &grid);
        let b = fam.analyze_direct(&f, &grid);
        let e = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(e < 1e-10, "{e}");

        let tf = TruncatedFrame::new(fam.clone(), grid.clone()).unwrap();
        let (c1, c2) = frame_bounds_continuous(&tf).unwrap();
        assert!(c1 > 0.0 && c2 >= c1);
        let u = tf.space().coords(&f);
        let out = tf.solve_frame(&u, None, 1e-12, 500).unwrap();
        let back = tf.frame_matrix().matvec(&out.x);
        let err = back.iter().zip(&u).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        let nu = u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * nu);

        let tf = Arc::new(tf);
        let r = gram_kernel(&tf).unwrap();
        let m = r.matrix(&grid);
        assert!(m.max_abs_diff(&m.conj_transpose()) <= 1e-8);
    }

    #[test]
    fn gabor_gram_column_matches_pointwise() {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        let fam = Modulation::gabor(&sg, Window::gaussian(0.8).unwrap());
        let dom = fam.index_domain(&[[-8.0, 8.0], [-16.0, 16.0]]).unwrap();
        let grid = QuadGrid::build(&dom, &[[16, 20]]).unwrap();
        let y = Point::new(-2.2, 5.1);
        let col = fam.gram_column(&y, &grid).unwrap();
        for (x, c) in grid.points().iter().zip(&col) {
            assert!((fam.gram(x, &y).unwrap() - c).norm() < 1e-13);
        }
        // closed form agrees with the grid inner product for interior atoms
        let x = Point::new(1.0, 4.0);
        let ip = sg.inner(&fam.atom(&y), &fam.atom(&x));
        assert!((ip - fam.gram(&x, &y).unwrap()).norm() < 1e-10);
    }
}
