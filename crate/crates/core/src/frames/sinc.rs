//! Band-limited reproducing kernels `K_x`, periodized on the signal grid.

use super::{param_f64, reject_unknown, EssentialRule, FamilyTag, FrameFamily};
use crate::error::{Error, Result};
use crate::measure_space::{IndexDomain, Point, QuadGrid, SignalGrid};
use crate::C64;

/// `K_x(t) = (2T)^{-1} sum_{|xi_j| <= bandlimit} e^{i xi_j (t - x)}` over
/// the real line with Lebesgue measure.
#[derive(Debug)]
pub struct Sinc {
    sg: SignalGrid,
    bandlimit: f64,
}

impl Sinc {
    pub fn new(sg: &SignalGrid, bandlimit: f64) -> Result<Self> {
        if !(bandlimit > 0.0 && bandlimit < sg.nyquist()) {
            return Err(Error::InvalidParameter(format!(
                "bandlimit {bandlimit} must lie in (0, {:.4})",
                sg.nyquist()
            )));
        }
        Ok(Sinc { sg: sg.clone(), bandlimit })
    }

    pub(crate) fn from_params(sg: &SignalGrid, p: &serde_json::Value) -> Result<Self> {
        reject_unknown(p, &["bandlimit"])?;
        Self::new(sg, param_f64(p, "bandlimit", None)?)
    }

    pub fn bandlimit(&self) -> f64 {
        self.bandlimit
    }

    fn in_band(&self, j: usize) -> bool {
        self.sg.freq(j).abs() <= self.bandlimit + 1e-12
    }

    /// Modes of the band-limited space.
    pub fn modes(&self) -> Vec<usize> {
        (0..self.sg.n()).filter(|&j| self.in_band(j)).collect()
    }
}

impl FrameFamily for Sinc {
    fn tag(&self) -> FamilyTag {
        FamilyTag::SincRkhs
    }

    fn signal_grid(&self) -> &SignalGrid {
        &self.sg
    }

    fn is_tight(&self) -> bool {
        true
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({"bandlimit": self.bandlimit})
    }

    fn index_domain(&self, bounds: &[[f64; 2]]) -> Result<IndexDomain> {
        if bounds.len() != 1 {
            return Err(Error::InvalidGrid(format!("sampling domain needs 1 axis, got {}", bounds.len())));
        }
        IndexDomain::line(bounds[0][0], bounds[0][1])
    }

    fn coeff(&self, p: &Point, j: usize) -> C64 {
        if self.in_band(j) {
            C64::from_polar(1.0, -p.c[0] * self.sg.freq(j))
        } else {
            C64::new(0.0, 0.0)
        }
    }

    fn band(&self, _domain: &IndexDomain) -> Vec<usize> {
        self.modes()
    }

    fn essential_rule(&self) -> EssentialRule {
        EssentialRule::Window { tol: 1e-6 }
    }

    fn gram(&self, x: &Point, y: &Point) -> Option<C64> {
        let s: C64 = self.modes().iter().map(|&j| C64::from_polar(1.0, (x.c[0] - y.c[0]) * self.sg.freq(j))).sum();
        Some(s / (2.0 * self.sg.half_width()))
    }

    fn analyze(&self, f: &[C64], grid: &QuadGrid) -> Vec<C64> {
        let spec = self.sg.spectrum(f);
        let modes = self.modes();
        let scale = 1.0 / (2.0 * self.sg.half_width());
        grid.points()
            .iter()
            .map(|x| modes.iter().map(|&j| spec[j] * C64::from_polar(scale, x.c[0] * self.sg.freq(j))).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{frame_bounds_continuous, TruncatedFrame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    #[test]
    fn v_is_identity_on_band() {
        let sg = SignalGrid::new(10.0, 512).unwrap();
        let fam = Sinc::new(&sg, PI / 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // random trig polynomial in the band, evaluated pointwise
        let ks: Vec<(f64, C64)> = (-5i32..=5)
            .map(|k| (PI * k as f64 / 10.0, C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)))
            .collect();
        let eval = |t: f64| -> C64 { ks.iter().map(|(w, c)| c * C64::from_polar(1.0, w * t)).sum() };
        let f: Vec<C64> = sg.times().iter().map(|&t| eval(t)).collect();
        let dom = fam.index_domain(&[[-10.0, 10.0]]).unwrap();
        let grid = QuadGrid::build(&dom, &[[64, 0]]).unwrap();
        let v = fam.analyze(&f, &grid);
        let d = fam.analyze_direct(&f, &grid);
        for ((x, a), b) in grid.points().iter().zip(&v).zip(&d) {
            assert!((a - eval(x.c[0])).norm() <= 1e-10);
            assert!((a - b).norm() <= 1e-10);
        }
        let tf = TruncatedFrame::new(Arc::new(fam), grid).unwrap();
        let (c1, c2) = frame_bounds_continuous(&tf).unwrap();
        assert!((c1 - 1.0).abs() <= 1e-6 && (c2 - 1.0).abs() <= 1e-6, "{c1} {c2}");
    }

    #[test]
    fn rejects_band_above_nyquist() {
        let sg = SignalGrid::new(10.0, 64).unwrap();
        assert!(Sinc::new(&sg, sg.nyquist() + 0.1).is_err());
        assert!(Sinc::new(&sg, 0.0).is_err());
    }
}
