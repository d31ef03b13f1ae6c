//! Executes the tasks of a run configuration and writes the report.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use coorbit::coverings::{Covering, CoveringSpec};
use coorbit::discretization::{sample_frame, signal_battery, InvertOptions, Method, SampledFrame};
use coorbit::frames::{analyze_v, frame_bounds_continuous, gram_kernel, make_family, truncation_leakage, FrameFamily, TruncatedFrame};
use coorbit::kernel::{am_norm, apply, Kernel, PNorm};
use coorbit::localization::{
    a_flat_norm, cross_gramian, decay_correlation, empirical_pseudoinverse, gab_domination_check, sampled_cross_gramian,
    write_decay_csv, GabOptions,
};
use coorbit::measure_space::{AdmissibleWeight, IndexDomain, Point, QuadGrid, SignalGrid, WeightOnX};
use coorbit::oscillation::{property_d_check, r_norm, write_trajectory_csv, LevelRecord, OscReport};
use coorbit::sequence_spaces::{closed_form_weights, flat_norm, plus_report, weighted_lp, SeqContext, SeqFlavor};
use coorbit::{Error, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{load, validate_config, Diagnostic, RunConfig};

#[derive(Debug)]
pub enum RunError {
    Validation(Vec<Diagnostic>),
    Numerical(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(d) => {
                writeln!(f, "invalid configuration:")?;
                for x in d {
                    writeln!(f, "  {x}")?;
                }
                Ok(())
            }
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
            RunError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            RunError::Validation(vec![Diagnostic { field: "run".into(), message: e.to_string() }])
        } else if matches!(e, Error::Io(_) | Error::Csv(_) | Error::Json(_)) {
            RunError::Io(e.to_string())
        } else {
            RunError::Numerical(e.to_string())
        }
    }
}

fn io(e: impl std::fmt::Display) -> RunError {
    RunError::Io(e.to_string())
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub report: Value,
}

/// Loads, validates and runs a config file.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let (raw, cfg) = load(path).map_err(RunError::Validation)?;
    let diags = validate_config(&cfg);
    if !diags.is_empty() {
        return Err(RunError::Validation(diags));
    }
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("coorbit-out"));
    run_config(raw, cfg, &out_dir, opts.seed)
}

struct TaskTiming {
    task: String,
    seconds: f64,
}

/// Runs a validated config. `report.json` holds no wall times so that it
/// is reproducible; they go to `timings.json`.
pub fn run_config(raw: Value, cfg: RunConfig, out_dir: &Path, seed: Option<u64>) -> Result<RunSummary, RunError> {
    let seed = seed.unwrap_or(cfg.seed);
    std::fs::create_dir_all(out_dir).map_err(io)?;
    let mut ctx = Ctx::new(cfg, seed, out_dir.to_path_buf())?;
    let mut blocks = Vec::new();
    let mut timings = Vec::new();
    let mut failure = None;
    let tasks = ctx.cfg.tasks.clone();
    for t in &tasks {
        let start = Instant::now();
        let res = match t.as_str() {
            "frame-info" => ctx.frame_info(),
            "property-d" => ctx.property_d(),
            "discretize" => ctx.discretize(),
            "reconstruct" => ctx.reconstruct(),
            "localize" => ctx.localize(),
            "norms" => ctx.norms(),
            other => Err(RunError::Validation(vec![Diagnostic { field: "tasks".into(), message: format!("unknown task `{other}`") }])),
        };
        timings.push(TaskTiming { task: t.clone(), seconds: start.elapsed().as_secs_f64() });
        match res {
            Ok(v) => blocks.push(json!({ "task": t, "result": v })),
            Err(e) => {
                failure = Some((t.clone(), e));
                break;
            }
        }
    }
    let mut report = json!({
        "tool": { "name": "coorbit", "version": env!("CARGO_PKG_VERSION") },
        "seed": seed,
        "config": raw,
        "tasks": blocks,
    });
    if let Some((t, e)) = &failure {
        report["failure"] = json!({ "task": t, "exit_code": e.exit_code(), "message": e.to_string() });
    }
    write_json(&out_dir.join("report.json"), &report)?;
    let tj: Vec<Value> = timings.iter().map(|t| json!({ "task": t.task, "seconds": t.seconds })).collect();
    write_json(&out_dir.join("timings.json"), &json!({ "tasks": tj }))?;
    match failure {
        Some((_, e)) => Err(e),
        None => Ok(RunSummary { out_dir: out_dir.to_path_buf(), report }),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(v).map_err(io)?;
    std::fs::write(path, text + "\n").map_err(io)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    fam: Arc<dyn FrameFamily>,
    dom: IndexDomain,
    tf: Arc<TruncatedFrame>,
    m: AdmissibleWeight,
    w: WeightOnX,
    r: Option<Kernel>,
    covering: Option<Arc<Covering>>,
    level: usize,
    osc: Option<OscReport>,
    sampled: Option<SampledFrame>,
}

impl Ctx {
    fn new(cfg: RunConfig, seed: u64, out: PathBuf) -> Result<Self, RunError> {
        let sg = SignalGrid::new(cfg.signal_grid.t, cfg.signal_grid.n)?;
        let fam = make_family(&cfg.family.tag, &cfg.family.params, &sg)?;
        let dom = fam.index_domain(&cfg.index_domain.bounds)?;
        let grid = QuadGrid::build(&dom, &cfg.index_domain.resolution)?;
        let tf = Arc::new(TruncatedFrame::new(fam.clone(), grid)?);
        let m = cfg.weight.admissible().unwrap_or(AdmissibleWeight::Trivial);
        let w = cfg.weight.on_x().unwrap_or(WeightOnX::Trivial);
        let covering = match &cfg.covering {
            Some(c) => Some(Arc::new(Covering::lattice(
                &dom,
                CoveringSpec { cell_size: c.cell_size.clone(), overlap: c.overlap, placement: c.placement },
            )?)),
            None => None,
        };
        Ok(Ctx { cfg, seed, out, fam, dom, tf, m, w, r: None, covering, level: 0, osc: None, sampled: None })
    }

    fn grid(&self) -> &QuadGrid {
        self.tf.grid()
    }

    fn r(&mut self) -> Result<Kernel, RunError> {
        if self.r.is_none() {
            self.r = Some(gram_kernel(&self.tf)?);
        }
        Ok(self.r.clone().unwrap())
    }

    fn covering(&self) -> Result<Arc<Covering>, RunError> {
        self.covering
            .clone()
            .ok_or_else(|| RunError::Validation(vec![Diagnostic { field: "covering".into(), message: "missing".into() }]))
    }

    fn frame_info(&mut self) -> Result<Value, RunError> {
        let (c1, c2) = frame_bounds_continuous(&self.tf)?;
        let r = self.r()?;
        let norms = am_norm(&r, &self.m, self.grid())?;
        let space = self.tf.space();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut errors = Vec::new();
        for _ in 0..self.cfg.frame_info.reproducing_signals {
            let u: Vec<C64> = (0..space.dim()).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
            let f = space.synth(&u);
            let vf = analyze_v(self.fam.as_ref(), &f, self.grid())?.values;
            let rv = apply(&r, &vf, self.grid())?;
            let s = vf.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let e = rv.iter().zip(&vf).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            errors.push(if s > 0.0 { e / s } else { e });
        }
        let mut out = json!({
            "family": self.fam.tag(),
            "params": self.fam.params(),
            "tight": self.fam.is_tight(),
            "essential_dim": space.dim(),
            "frame_bounds": { "c1": c1, "c2": c2, "subspace": "essential subspace E" },
            "truncation_leakage": truncation_leakage(self.fam.as_ref(), self.grid()),
            "gramian_norms": to_value(&norms),
            "reproducing": {
                "signals": errors.len(),
                "sup_relative_errors": errors,
                "max_sup_relative_error": errors.iter().cloned().fold(0.0, f64::max),
            },
        });
        if let Some(alpha) = self.fam.params().get("alpha").and_then(|a| a.as_f64()) {
            let g = self.fam.atom(&Point::new(0.0, 0.0));
            let fi = &self.cfg.frame_info;
            let k = fi.admissibility_points.max(2);
            let [a, b] = fi.admissibility_range;
            let xi: Vec<f64> = (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect();
            let adm = coorbit::frames::alpha_admissibility(self.tf.signal_grid(), &g, alpha, &xi)?;
            out["alpha_admissibility"] = json!({
                "alpha": alpha,
                "range": fi.admissibility_range,
                "points": k,
                "sigma_min": adm.sigma_min,
                "sigma_max": adm.sigma_max,
                "a_const": adm.a_const,
                "relative_variation": adm.relative_variation,
            });
        }
        Ok(out)
    }

    fn property_d(&mut self) -> Result<Value, RunError> {
        let ccfg = self.cfg.covering.clone().expect("validated");
        let r = self.r()?;
        let grid = self.grid().clone();
        let rn = r_norm(&r, &self.m, &grid)?;
        let (target, levels) = match &ccfg.refine {
            Some(rf) => (rf.target, rf.max_levels),
            None => (None, 1),
        };
        let mut cov = self.covering()?;
        let mut reports: Vec<OscReport> = Vec::new();
        let mut records = Vec::new();
        let mut passing = None;
        let mut last = cov.clone();
        for level in 0..levels {
            let rep = property_d_check(&r, &cov, &self.m, &grid, ccfg.z_per_axis, self.seed, Some(rn))?;
            records.push(LevelRecord::new(level, &rep));
            let pass = target.map(|t| rep.passes(t)).unwrap_or(false);
            reports.push(rep);
            last = cov.clone();
            if pass {
                passing = Some(level);
                break;
            }
            if level + 1 < levels {
                cov = Arc::new(cov.refine()?);
            }
        }
        write_trajectory_csv(&records, &self.out.join("property_d_trajectory.csv"))?;
        let chosen = passing.unwrap_or(reports.len() - 1);
        self.covering = Some(last);
        self.level = chosen;
        self.osc = reports.last().cloned();
        self.sampled = None;
        let out = json!({
            "target": target,
            "passing_level": passing,
            "level_used": chosen,
            "r_norm": rn,
            "trajectory": to_value(&reports),
        });
        if let (Some(t), None) = (target, passing) {
            return Err(RunError::Numerical(format!(
                "refinement target {t:?} not reached in {levels} levels; trajectory in property_d_trajectory.csv"
            )));
        }
        Ok(out)
    }

    fn invert_options(&self) -> InvertOptions {
        let d = &self.cfg.discretize;
        InvertOptions { method: d.method, tol: d.tol, max_iter: d.max_iter }
    }

    fn sampled(&mut self) -> Result<&SampledFrame, RunError> {
        if self.sampled.is_none() {
            let cov = self.covering()?;
            let pu = self.cfg.covering.as_ref().map(|c| c.pu).expect("validated");
            self.sampled = Some(sample_frame(&self.tf, &cov, pu)?);
        }
        Ok(self.sampled.as_ref().unwrap())
    }

    fn discretize(&mut self) -> Result<Value, RunError> {
        let osc = self.osc.clone();
        let level = self.level;
        let method = self.cfg.discretize.method;
        let sf = self.sampled()?;
        let defect = sf.defect()?;
        let hb = sf.hilbert_frame_bounds()?;
        let bound = osc.as_ref().map(|o| {
            let b = o.delta_est * (o.r_norm + o.sigma);
            json!({ "delta_bound": b, "holds": defect <= b + 1e-6 })
        });
        let out = json!({
            "level": level,
            "cells": sf.len(),
            "essential_dim": sf.dim(),
            "defect": defect,
            "defect_bound": bound,
            "hilbert_bounds": to_value(&hb),
            "method": method,
        });
        if method == Method::Neumann && defect >= 1.0 {
            return Err(RunError::Numerical(format!("defect {defect:.4e} >= 1, the Neumann series diverges")));
        }
        Ok(out)
    }

    fn reconstruct(&mut self) -> Result<Value, RunError> {
        let opts = self.invert_options();
        let count = self.cfg.reconstruct.signals;
        let battery = signal_battery(&self.tf, count, self.seed);
        let sg = self.tf.signal_grid().clone();
        let cov = self.covering()?;
        let sf = self.sampled()?;
        let defect = sf.defect()?;
        let other = match opts.method {
            Method::Solve if defect < 1.0 => Some(InvertOptions { method: Method::Neumann, ..opts }),
            Method::Neumann => Some(InvertOptions { method: Method::Solve, ..opts }),
            _ => None,
        };
        let ctx = SeqContext::new(cov.clone())?;
        let mut rows = Vec::new();
        let mut ratios = Vec::new();
        let mut agreement: f64 = 0.0;
        for (k, f) in battery.iter().enumerate() {
            let (lam, atomic) = sf.atomic_coefficients(f, &opts)?;
            if let Some(o) = &other {
                let (lam2, _) = sf.atomic_coefficients(f, o)?;
                let num = lam.iter().zip(&lam2).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
                let den = lam.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
                agreement = agreement.max(if den > 0.0 { num / den } else { num });
            }
            let samples = sf.samples(f);
            let (_, banach) = sf.banach_reconstruct(&samples, &opts, Some(f))?;
            let ratio = flat_norm(&samples, &ctx, PNorm::Two, &WeightOnX::Trivial)? / sg.norm(f);
            ratios.push(ratio);
            rows.push((k, atomic, banach, ratio));
        }
        let mut w = csv::Writer::from_path(self.out.join("reconstruction.csv")).map_err(io)?;
        w.write_record(["signal", "atomic_residual", "atomic_residual_e", "banach_error", "banach_error_e", "sample_norm_ratio"])
            .map_err(io)?;
        for (k, a, b, r) in &rows {
            w.write_record([
                k.to_string(),
                a.relative_error.to_string(),
                a.relative_error_e.to_string(),
                b.relative_error.to_string(),
                b.relative_error_e.to_string(),
                r.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(io)?;

        let bracket = |r: &[f64]| json!([r.iter().cloned().fold(f64::INFINITY, f64::min), r.iter().cloned().fold(0.0, f64::max)]);
        let mut next = Value::Null;
        if self.cfg.reconstruct.bracket_next_level {
            let fine = Arc::new(cov.refine()?);
            let ctx2 = SeqContext::new(fine.clone())?;
            let space = self.tf.space();
            let mut r2 = Vec::new();
            for f in &battery {
                let u = space.coords(f);
                let s: Vec<C64> = fine
                    .points()
                    .iter()
                    .map(|p| self.tf.coords(p).iter().zip(&u).map(|(c, v)| c.conj() * v).sum())
                    .collect();
                r2.push(flat_norm(&s, &ctx2, PNorm::Two, &WeightOnX::Trivial)? / sg.norm(f));
            }
            next = json!({ "cells": fine.len(), "bracket": bracket(&r2) });
        }
        let max = |f: &dyn Fn(&(usize, coorbit::discretization::ReconstructionReport, coorbit::discretization::ReconstructionReport, f64)) -> f64| {
            rows.iter().map(f).fold(0.0, f64::max)
        };
        Ok(json!({
            "signals": count,
            "method": opts.method,
            "defect": defect,
            "atomic": {
                "max_relative_residual": max(&|r| r.1.relative_error),
                "max_relative_residual_e": max(&|r| r.1.relative_error_e),
                "max_iterations": rows.iter().map(|r| r.1.iterations).max().unwrap_or(0),
                "method_agreement": other.map(|_| agreement),
            },
            "banach": {
                "max_relative_error": max(&|r| r.2.relative_error),
                "max_relative_error_e": max(&|r| r.2.relative_error_e),
            },
            "norm_equivalence": {
                "space": "L2",
                "bracket": bracket(&ratios),
                "next_level": next,
            },
        }))
    }

    fn localize(&mut self) -> Result<Value, RunError> {
        let lc = self.cfg.localize.clone();
        let base = match &lc.cell_size {
            Some(cs) => Arc::new(Covering::lattice(
                &self.dom,
                CoveringSpec { cell_size: cs.clone(), overlap: 0.0, placement: coorbit::coverings::Placement::Center },
            )?),
            None => self.covering()?,
        };
        let fam = self.fam.as_ref();
        let mut levels = Vec::new();
        let mut cov = base.clone();
        for level in 0..2 {
            let g = sampled_cross_gramian(fam, fam, &cov)?;
            let rep = a_flat_norm(&g, &cov, &self.m)?;
            write_decay_csv(&rep.profile, &self.out.join(format!("decay_profile_level{level}.csv")))?;
            levels.push(json!({ "cells": cov.len(), "report": to_value(&rep) }));
            if level == 0 {
                cov = Arc::new(cov.refine()?);
            }
        }
        let n0 = levels[0]["report"]["norm"].as_f64().unwrap_or(f64::NAN);
        let n1 = levels[1]["report"]["norm"].as_f64().unwrap_or(f64::NAN);

        let radius = lc.decay_radius.unwrap_or(f64::INFINITY);
        let pts: Vec<Point> = base.points().iter().copied().filter(|p| p.c[0].abs() <= radius).collect();
        let sub = cross_gramian(fam, fam, &pts, &pts)?;
        let corr = decay_correlation(&sub, &self.dom, lc.decay_floor.unwrap_or(1e-10))?;

        let mut out = json!({
            "a_flat": levels,
            "a_flat_relative_change": (n1 - n0).abs() / n0,
            "decay_correlation": { "points": pts.len(), "radius": lc.decay_radius, "correlation": corr },
        });
        if let Some(gc) = &lc.gab {
            let grid = QuadGrid::build(&self.dom, &gc.resolution)?;
            let tf = Arc::new(TruncatedFrame::new(self.fam.clone(), grid)?);
            let gcov = Arc::new(Covering::lattice(
                &self.dom,
                CoveringSpec { cell_size: gc.cell_size.clone(), overlap: 0.0, placement: coorbit::coverings::Placement::Center },
            )?);
            let opts = GabOptions { z_per_axis: gc.z_per_axis, seed: self.seed, drop_osc: false };
            let ok = gab_domination_check(&tf, &tf, &gcov, tf.grid(), &opts)?;
            let bad = gab_domination_check(&tf, &tf, &gcov, tf.grid(), &GabOptions { drop_osc: true, ..opts })?;
            out["gab"] = json!({ "check": to_value(&ok), "without_osc": to_value(&bad) });
        }
        if let Some(pc) = &lc.pinv {
            let grid = QuadGrid::build(&self.dom, &pc.resolution)?;
            let tf = Arc::new(TruncatedFrame::new(self.fam.clone(), grid)?);
            let rep = empirical_pseudoinverse(&tf, pc.rank_tol)?;
            write_decay_csv(&rep.profile_a, &self.out.join("pinv_profile_a.csv"))?;
            write_decay_csv(&rep.profile_pinv, &self.out.join("pinv_profile_pinv.csv"))?;
            out["pseudo_inverse"] = to_value(&rep);
        }
        Ok(out)
    }

    fn norms(&mut self) -> Result<Value, RunError> {
        let cov = self.covering()?;
        let ctx = SeqContext::new(cov.clone())?;
        let s = self.cfg.norms.cell_weight_s;
        let pts: Vec<Point> = cov.points().to_vec();
        let cells = cov.clone();
        // (1 + |x_i|)^s on the half-open cell containing the point
        let cellwise = WeightOnX::Custom(
            format!("cellwise (1+|x_i|)^{s}"),
            Arc::new(move |p: &Point| {
                let i = cells.containing_half_open(p).first().copied().or_else(|| cells.containing(p).first().copied());
                let q = i.map(|i| pts[i]).unwrap_or(*p);
                (1.0 + (q.c[0] * q.c[0] + q.c[1] * q.c[1]).sqrt()).powf(s)
            }),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = cov.len();
        let mut closed = Vec::new();
        for p in [PNorm::One, PNorm::Two, PNorm::Inf] {
            let b = closed_form_weights(&ctx, p, &cellwise, SeqFlavor::Flat);
            let mut worst: f64 = 0.0;
            for _ in 0..5 {
                let lam: Vec<C64> = (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
                let a = flat_norm(&lam, &ctx, p, &cellwise)?;
                let c = weighted_lp(&lam, &b, p)?;
                worst = worst.max((a - c).abs() / c);
            }
            closed.push(json!({ "p": p, "max_relative_gap": worst }));
        }
        let mut ratio: f64 = 0.0;
        let mut bound = 0.0;
        for _ in 0..self.cfg.norms.sequences {
            let lam: Vec<C64> = (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
            let r = plus_report(&lam, &ctx, PNorm::Two, &self.w, &self.m)?;
            ratio = ratio.max(r.ratio);
            bound = r.bound;
        }
        Ok(json!({
            "cells": n,
            "closed_form": closed,
            "plus_operator": { "sequences": self.cfg.norms.sequences, "max_ratio": ratio, "bound": bound, "holds": ratio <= bound },
        }))
    }
}
