//! Run configuration: JSON schema, defaults and validation.

use std::path::Path;

use coorbit::coverings::{Placement, PuFlavor};
use coorbit::discretization::Method;
use coorbit::frames::{make_family, FamilyTag};
use coorbit::measure_space::{AdmissibleWeight, SignalGrid, WeightOnX};
use coorbit::oscillation::Target;
use serde::{Deserialize, Serialize};

pub const TASKS: [&str; 6] = ["frame-info", "property-d", "discretize", "reconstruct", "localize", "norms"];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilyConfig,
    pub signal_grid: SignalGridConfig,
    pub index_domain: IndexDomainConfig,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub covering: Option<CoveringConfig>,
    pub tasks: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub frame_info: FrameInfoConfig,
    #[serde(default)]
    pub discretize: DiscretizeConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub localize: LocalizeConfig,
    #[serde(default)]
    pub norms: NormsConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub tag: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalGridConfig {
    #[serde(rename = "T")]
    pub t: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexDomainConfig {
    pub bounds: Vec<[f64; 2]>,
    /// Nodes per axis and sheet; 1D sheets use `[n, 0]`.
    pub resolution: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(rename = "type", default = "default_weight")]
    pub kind: String,
    #[serde(default)]
    pub s: f64,
}

fn default_weight() -> String {
    "trivial".into()
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { kind: default_weight(), s: 0.0 }
    }
}

impl WeightConfig {
    pub fn on_x(&self) -> Option<WeightOnX> {
        match self.kind.as_str() {
            "trivial" => Some(WeightOnX::Trivial),
            "polynomial" => Some(WeightOnX::Polynomial { s: self.s }),
            "scale_power" => Some(WeightOnX::ScalePower { s: self.s }),
            _ => None,
        }
    }

    pub fn admissible(&self) -> Option<AdmissibleWeight> {
        self.on_x().map(|w| if w.is_trivial() { AdmissibleWeight::Trivial } else { AdmissibleWeight::FromW(w) })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringConfig {
    pub cell_size: Vec<[f64; 2]>,
    #[serde(default)]
    pub overlap: f64,
    #[serde(default = "default_placement")]
    pub placement: Placement,
    #[serde(default = "default_pu")]
    pub pu: PuFlavor,
    #[serde(default = "default_z")]
    pub z_per_axis: usize,
    #[serde(default)]
    pub refine: Option<RefineConfig>,
}

fn default_placement() -> Placement {
    Placement::Center
}

fn default_pu() -> PuFlavor {
    PuFlavor::Indicator
}

fn default_z() -> usize {
    coorbit::oscillation::DEFAULT_Z_PER_AXIS
}

/// With a target, refinement stops at the first passing level and fails
/// if none passes; without one, all `max_levels` levels are measured.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    #[serde(default)]
    pub target: Option<Target>,
    pub max_levels: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameInfoConfig {
    pub reproducing_signals: usize,
    /// Frequency range for the alpha-admissibility function.
    pub admissibility_range: [f64; 2],
    pub admissibility_points: usize,
}

impl Default for FrameInfoConfig {
    fn default() -> Self {
        FrameInfoConfig { reproducing_signals: 5, admissibility_range: [-20.0, 20.0], admissibility_points: 401 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizeConfig {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DiscretizeConfig {
    fn default() -> Self {
        DiscretizeConfig { method: Method::Solve, tol: 1e-12, max_iter: 10_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub signals: usize,
    /// Also measure the sample-norm bracket on the next dyadic level.
    pub bracket_next_level: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig { signals: 10, bracket_next_level: true }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    /// Covering for the cross-Gramian; the run covering when absent.
    pub cell_size: Option<Vec<[f64; 2]>>,
    /// Restrict the decay correlation to points with `|x_0| <= radius`.
    pub decay_radius: Option<f64>,
    pub decay_floor: Option<f64>,
    pub gab: Option<GabConfig>,
    pub pinv: Option<PinvConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GabConfig {
    pub cell_size: Vec<[f64; 2]>,
    pub resolution: Vec<[usize; 2]>,
    #[serde(default = "default_gab_z")]
    pub z_per_axis: usize,
}

fn default_gab_z() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinvConfig {
    pub resolution: Vec<[usize; 2]>,
    pub rank_tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsConfig {
    pub sequences: usize,
    /// Exponent of the cellwise-constant weight `(1 + |x_i|)^s`.
    pub cell_weight_s: f64,
}

impl Default for NormsConfig {
    fn default() -> Self {
        NormsConfig { sequences: 100, cell_weight_s: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Parses the file into the raw JSON value and the typed config.
pub fn load(path: &Path) -> Result<(serde_json::Value, RunConfig), Vec<Diagnostic>> {
    let diag = |field: &str, message: String| vec![Diagnostic { field: field.into(), message }];
    let text = std::fs::read_to_string(path).map_err(|e| diag("config", format!("cannot read {}: {e}", path.display())))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| diag("config", format!("malformed JSON: {e}")))?;
    let cfg: RunConfig = serde_json::from_value(raw.clone()).map_err(|e| diag("config", format!("schema: {e}")))?;
    Ok((raw, cfg))
}

/// Schema and cross-field checks. Nothing is computed beyond building the
/// family object.
pub fn validate_config(cfg: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: String| out.push(Diagnostic { field: field.into(), message });

    let sg = match SignalGrid::new(cfg.signal_grid.t, cfg.signal_grid.n) {
        Ok(sg) => Some(sg),
        Err(e) => {
            push("signal_grid", e.to_string());
            None
        }
    };
    let tag = FamilyTag::parse(&cfg.family.tag);
    if tag.is_err() {
        push("family.tag", format!("unknown family tag `{}`", cfg.family.tag));
    }
    if let (Ok(tag), Some(sg)) = (tag, &sg) {
        let mut band_reported = false;
        if tag == FamilyTag::SincRkhs {
            if let Some(b) = cfg.family.params.get("bandlimit").and_then(|v| v.as_f64()) {
                if b > sg.nyquist() {
                    push("family.params.bandlimit", format!("bandlimit {b} exceeds the Nyquist frequency {}", sg.nyquist()));
                    band_reported = true;
                }
            }
        }
        match make_family(&cfg.family.tag, &cfg.family.params, sg) {
            Ok(fam) => {
                if let Err(e) = fam.index_domain(&cfg.index_domain.bounds) {
                    push("index_domain.bounds", e.to_string());
                } else if cfg.index_domain.resolution.is_empty() {
                    push("index_domain.resolution", "at least one sheet resolution is required".into());
                }
            }
            Err(_) if band_reported => {}
            Err(e) => push("family.params", e.to_string()),
        }
    }
    if cfg.weight.on_x().is_none() {
        push("weight.type", format!("unknown weight `{}`", cfg.weight.kind));
    } else if !(cfg.weight.s.is_finite() && cfg.weight.s >= 0.0) {
        push("weight.s", "weight exponent must be finite and non-negative".into());
    }
    if cfg.tasks.is_empty() {
        push("tasks", "at least one task is required".into());
    }
    for t in &cfg.tasks {
        if !TASKS.contains(&t.as_str()) {
            push("tasks", format!("unknown task `{t}`"));
        }
    }
    let needs_covering = cfg.tasks.iter().any(|t| t != "frame-info");
    match &cfg.covering {
        None if needs_covering => push("covering", "tasks other than frame-info need a covering".into()),
        None => {}
        Some(c) => {
            if c.cell_size.is_empty() || c.cell_size.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                push("covering.cell_size", "cell sizes must be finite and non-negative, one pair per sheet".into());
            }
            if !(0.0..1.0).contains(&c.overlap) {
                push("covering.overlap", "overlap must lie in [0, 1)".into());
            }
            if c.z_per_axis == 0 {
                push("covering.z_per_axis", "at least one sample per axis".into());
            }
            if let Some(r) = &c.refine {
                if r.max_levels == 0 {
                    push("covering.refine.max_levels", "must be at least 1".into());
                }
            }
        }
    }
    if !(cfg.discretize.tol > 0.0) {
        push("discretize.tol", "tolerance must be positive".into());
    }
    if cfg.tasks.iter().any(|t| t == "reconstruct") && cfg.reconstruct.signals == 0 {
        push("reconstruct.signals", "battery must hold at least one signal".into());
    }
    if let Some(p) = &cfg.localize.pinv {
        if !(p.rank_tol > 0.0) {
            push("localize.pinv.rank_tol", "must be positive".into());
        }
    }
    if cfg.discretize.method == Method::Neumann && cfg.discretize.max_iter > coorbit::discretization::NEUMANN_CAP {
        push("discretize.max_iter", format!("Neumann iterations are capped at {}", coorbit::discretization::NEUMANN_CAP));
    }
    out
}

/// Diagnostics for a config file, empty when it is valid.
pub fn validate(path: &Path) -> Vec<Diagnostic> {
    match load(path) {
        Ok((_, cfg)) => validate_config(&cfg),
        Err(d) => d,
    }
}
