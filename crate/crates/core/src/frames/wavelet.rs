//! Continuous wavelet frames: the affine frame on the half plane and the
//! inhomogeneous frame with a separate low-pass sheet.

use std::f64::consts::PI;

use super::{analyze_rows, param_f64, reject_unknown, EssentialRule, FamilyTag, FrameFamily};
use crate::error::{Error, Result};
use crate::measure_space::{gauss_legendre, AxisDensity, AxisScale, IndexDomain, MetricKind, Point, QuadGrid, Sheet, SignalGrid};
use crate::C64;

/// Mexican hat `amp pi^{-1/2} (1 - t^2) e^{-t^2/2}`, `psi_hat(u) = amp sqrt(2) u^2 e^{-u^2/2}`.
#[derive(Clone, Copy, Debug)]
pub struct MexicanHat {
    pub amplitude: f64,
}

impl MexicanHat {
    pub fn hat(&self, u: f64) -> f64 {
        self.amplitude * 2f64.sqrt() * u * u * (-0.5 * u * u).exp()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude / PI.sqrt() * (1.0 - t * t) * (-0.5 * t * t).exp()
    }

    /// `int_0^inf |psi_hat(u)|^2 du / u`.
    pub fn admissibility(&self) -> f64 {
        gauss_legendre(0.0, 12.0, 64, |u| if u > 0.0 { self.hat(u).powi(2) / u } else { 0.0 })
    }

    fn from_json(p: Option<&serde_json::Value>) -> Result<Self> {
        let Some(p) = p else { return Self::checked(1.0) };
        reject_unknown(p, &["type", "amplitude"])?;
        match p.get("type").and_then(|t| t.as_str()).unwrap_or("mexican_hat") {
            "mexican_hat" => Self::checked(param_f64(p, "amplitude", Some(1.0))?),
            other => Err(Error::InvalidParameter(format!("unknown wavelet `{other}`"))),
        }
    }

    fn checked(amplitude: f64) -> Result<Self> {
        let w = MexicanHat { amplitude };
        let c = w.admissibility();
        if !(c.is_finite() && (c - 1.0).abs() <= 1e-3) {
            return Err(Error::InvalidParameter(format!("wavelet admissibility constant {c:.6} is not 1")));
        }
        Ok(w)
    }
}

/// `psi_{(b,a)} = T_b D_a psi` with measure `db da / a^2`.
#[derive(Debug)]
pub struct Cwt {
    sg: SignalGrid,
    wavelet: MexicanHat,
}

impl Cwt {
    pub fn new(sg: &SignalGrid, wavelet: MexicanHat) -> Result<Self> {
        let w = MexicanHat::checked(wavelet.amplitude)?;
        Ok(Cwt { sg: sg.clone(), wavelet: w })
    }

    pub(crate) fn from_params(sg: &SignalGrid, p: &serde_json::Value) -> Result<Self> {
        reject_unknown(p, &["wavelet"])?;
        Ok(Cwt { sg: sg.clone(), wavelet: MexicanHat::from_json(p.get("wavelet"))? })
    }

    pub fn wavelet(&self) -> &MexicanHat {
        &self.wavelet
    }
}

fn window_band(sg: &SignalGrid, cap: f64) -> Vec<usize> {
    (0..sg.n()).filter(|&j| sg.freq(j).abs() <= cap.min(sg.nyquist())).collect()
}

impl FrameFamily for Cwt {
    fn tag(&self) -> FamilyTag {
        FamilyTag::Cwt
    }

    fn signal_grid(&self) -> &SignalGrid {
        &self.sg
    }

    fn is_tight(&self) -> bool {
        true
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({"wavelet": {"type": "mexican_hat", "amplitude": self.wavelet.amplitude}})
    }

    fn index_domain(&self, bounds: &[[f64; 2]]) -> Result<IndexDomain> {
        if bounds.len() != 2 {
            return Err(Error::InvalidGrid(format!("wavelet domain needs 2 axes, got {}", bounds.len())));
        }
        IndexDomain::wavelet_halfplane(bounds[0], bounds[1])
    }

    fn coeff(&self, p: &Point, j: usize) -> C64 {
        let (b, a) = (p.c[0], p.c[1]);
        let xi = self.sg.freq(j);
        C64::from_polar(a.sqrt() * self.wavelet.hat(a * xi), -b * xi)
    }

    fn band(&self, domain: &IndexDomain) -> Vec<usize> {
        window_band(&self.sg, 0.5 / domain.sheet(0).lo[1])
    }

    fn essential_rule(&self) -> EssentialRule {
        EssentialRule::Window { tol: 1e-3 }
    }

    fn analyze(&self, f: &[C64], grid: &QuadGrid) -> Vec<C64> {
        let n = self.sg.n();
        analyze_rows(&self.sg, f, grid, |_, a| {
            let m = (0..n).map(|j| C64::new(a.sqrt() * self.wavelet.hat(a * self.sg.freq(j)), 0.0)).collect();
            (m, 1.0, 0.0)
        })
        .unwrap_or_else(|| self.analyze_direct(f, grid))
    }
}

/// Frame over `({inf} u (0,1]) x R`: sheet 0 holds `T_x phi`, sheet 1 holds
/// `T_x D_t psi` on axes `(x, t)` with measure `dx dt / t^2`.
#[derive(Debug)]
pub struct InhomWavelet {
    sg: SignalGrid,
    wavelet: MexicanHat,
}

impl InhomWavelet {
    pub fn new(sg: &SignalGrid, wavelet: MexicanHat) -> Result<Self> {
        let w = MexicanHat::checked(wavelet.amplitude)?;
        Ok(InhomWavelet { sg: sg.clone(), wavelet: w })
    }

    pub(crate) fn from_params(sg: &SignalGrid, p: &serde_json::Value) -> Result<Self> {
        reject_unknown(p, &["wavelet"])?;
        Ok(InhomWavelet { sg: sg.clone(), wavelet: MexicanHat::from_json(p.get("wavelet"))? })
    }

    /// `phi_hat(xi) = (1 - int_0^1 |psi_hat(t xi)|^2 dt/t)^{1/2}`, clamped.
    pub fn phi_hat(&self, xi: f64) -> f64 {
        let u = xi.abs();
        let inner = if u == 0.0 {
            0.0
        } else {
            // substitute v = t u
            gauss_legendre(0.0, u, 16, |v| if v > 0.0 { self.wavelet.hat(v).powi(2) / v } else { 0.0 })
        };
        (1.0 - inner).clamp(0.0, 1.0).sqrt()
    }
}

impl FrameFamily for InhomWavelet {
    fn tag(&self) -> FamilyTag {
        FamilyTag::InhomWavelet
    }

    fn signal_grid(&self) -> &SignalGrid {
        &self.sg
    }

    fn is_tight(&self) -> bool {
        true
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({"wavelet": {"type": "mexican_hat", "amplitude": self.wavelet.amplitude}})
    }

    /// `bounds = [[x0, x1], [t_min, t_max]]` with `t_max <= 1`.
    fn index_domain(&self, bounds: &[[f64; 2]]) -> Result<IndexDomain> {
        if bounds.len() != 2 {
            return Err(Error::InvalidGrid(format!("inhomogeneous domain needs 2 axes, got {}", bounds.len())));
        }
        if bounds[1][1] > 1.0 {
            return Err(Error::InvalidGrid("scale axis must stay within (0, 1]".into()));
        }
        let [x0, x1] = bounds[0];
        let [t0, t1] = bounds[1];
        IndexDomain::new(
            vec![
                Sheet {
                    id: 0,
                    dim: 1,
                    lo: [x0, 0.0],
                    hi: [x1, 0.0],
                    scale: [AxisScale::Linear; 2],
                    density: [AxisDensity::Uniform, AxisDensity::Uniform],
                    factor: 1.0,
                    embed_fill: 1.0,
                },
                Sheet {
                    id: 1,
                    dim: 2,
                    lo: [x0, t0],
                    hi: [x1, t1],
                    scale: [AxisScale::Linear, AxisScale::Log],
                    density: [AxisDensity::Uniform, AxisDensity::InverseSquare],
                    factor: 1.0,
                    embed_fill: 0.0,
                },
            ],
            MetricKind::L1,
        )
    }

    fn coeff(&self, p: &Point, j: usize) -> C64 {
        let xi = self.sg.freq(j);
        let x = p.c[0];
        let m = if p.sheet == 0 {
            self.phi_hat(xi)
        } else {
            let t = p.c[1];
            t.sqrt() * self.wavelet.hat(t * xi)
        };
        C64::from_polar(m, -x * xi)
    }

    fn band(&self, domain: &IndexDomain) -> Vec<usize> {
        let tmin = domain.sheets().get(1).map_or(1.0, |s| s.lo[1]);
        window_band(&self.sg, 0.5 / tmin)
    }

    fn essential_rule(&self) -> EssentialRule {
        EssentialRule::Window { tol: 1e-3 }
    }

    fn analyze(&self, f: &[C64], grid: &QuadGrid) -> Vec<C64> {
        let n = self.sg.n();
        let phi: Vec<C64> = (0..n).map(|j| C64::new(self.phi_hat(self.sg.freq(j)), 0.0)).collect();
        analyze_rows(&self.sg, f, grid, |sheet, t| {
            if sheet == 0 {
                (phi.clone(), 1.0, 0.0)
            } else {
                let m = (0..n).map(|j| C64::new(t.sqrt() * self.wavelet.hat(t * self.sg.freq(j)), 0.0)).collect();
                (m, 1.0, 0.0)
            }
        })
        .unwrap_or_else(|| self.analyze_direct(f, grid))
    }
}
