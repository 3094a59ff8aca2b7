//! Experiment spec files.
//!
//! A spec is a TOML document with a `[system]` table, optional `[solver]` and
//! `[integrator]` tables, and exactly one command payload table named after
//! the command (`[minimize]`, `[flow]`, `[classify]`, `[fit-bounds]`,
//! `[verify-bounds]`, `[sweep]`). Bodies are numbered from 0.

use std::ops::Range;
use std::path::{Path, PathBuf};

use nbody_core::dynamics::IntegrateOptions;
use nbody_core::{ClusterPartition, Configuration, MassSystem, SolveOptions};
use serde::Deserialize;
use toml::Spanned;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    seed: Option<u64>,
    out: Option<String>,
    system: Spanned<RawSystem>,
    solver: Option<Spanned<RawSolver>>,
    integrator: Option<Spanned<RawIntegrator>>,
    minimize: Option<Spanned<MinimizePayload>>,
    flow: Option<Spanned<FlowPayload>>,
    classify: Option<Spanned<ClassifyPayload>>,
    #[serde(rename = "fit-bounds")]
    fit_bounds: Option<Spanned<FitBoundsPayload>>,
    #[serde(rename = "verify-bounds")]
    verify_bounds: Option<Spanned<VerifyBoundsPayload>>,
    sweep: Option<Spanned<SweepPayload>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    masses: Option<Vec<f64>>,
    grav_const: Option<f64>,
    dim: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    segments: Option<usize>,
    grad_tol: Option<f64>,
    max_iters: Option<usize>,
    collision_floor: Option<f64>,
    tau_rel_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    tol: Option<f64>,
    samples_per_decade: Option<usize>,
    first_sample: Option<f64>,
    max_retries: Option<usize>,
}

/// `[minimize]`: free-time solve, or fixed-time when `tau` is given.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizePayload {
    pub h: f64,
    pub start: Vec<Vec<f64>>,
    pub end: Vec<Vec<f64>>,
    pub tau: Option<f64>,
}

/// Initial data of `[flow]` and `[classify]`: explicit positions and
/// velocities, or a `path.csv` whose first segment supplies them.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowPayload {
    pub horizon: f64,
    pub start: Option<Vec<Vec<f64>>>,
    pub velocity: Option<Vec<Vec<f64>>>,
    pub path: Option<String>,
}

/// `[classify]`: as `[flow]`, or a stored `traj.csv`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyPayload {
    pub horizon: Option<f64>,
    pub start: Option<Vec<Vec<f64>>>,
    pub velocity: Option<Vec<Vec<f64>>>,
    pub path: Option<String>,
    pub trajectory: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBoundsPayload {
    pub samples: usize,
    pub radius: Option<[f64; 2]>,
    pub tau: Option<[f64; 2]>,
    pub min_separation: Option<f64>,
    pub partition: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBoundsPayload {
    /// Fitting sample size (ignored when `alpha` and `beta` are given).
    pub samples: usize,
    pub holdout: Option<usize>,
    pub partition: Vec<Vec<usize>>,
    pub h_range: Option<[f64; 2]>,
    pub r_grid: Option<usize>,
    pub chain_instances: Option<usize>,
    pub radius: Option<[f64; 2]>,
    pub tau: Option<[f64; 2]>,
    pub min_separation: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPayload {
    pub count: usize,
    pub h_values: Vec<f64>,
    pub bodies: [usize; 2],
    pub ring_radius: Option<f64>,
    pub displacement: Option<f64>,
    pub mass_range: Option<[f64; 2]>,
    pub refine_segments: Option<usize>,
}

/// The validated command payload.
#[derive(Debug, Clone)]
pub enum Payload {
    Minimize(MinimizePayload),
    Flow(FlowPayload),
    Classify(ClassifyPayload),
    FitBounds(FitBoundsPayload),
    VerifyBounds(VerifyBoundsPayload),
    Sweep(SweepPayload),
}

impl Payload {
    pub fn command(&self) -> &'static str {
        match self {
            Payload::Minimize(_) => "minimize",
            Payload::Flow(_) => "flow",
            Payload::Classify(_) => "classify",
            Payload::FitBounds(_) => "fit-bounds",
            Payload::VerifyBounds(_) => "verify-bounds",
            Payload::Sweep(_) => "sweep",
        }
    }
}

/// A parsed and validated spec.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// `None` only for `sweep`, which draws its own masses.
    pub system: Option<MassSystem>,
    pub grav_const: f64,
    pub dim: usize,
    pub solve: SolveOptions,
    pub integrate: IntegrateOptions,
    pub payload: Payload,
    /// Directory against which relative file references are resolved.
    pub base_dir: PathBuf,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn at(text: &str, span: Range<usize>, msg: impl std::fmt::Display) -> CliError {
    CliError::Spec(format!("line {}: {msg}", line_of(text, span.start)))
}

impl ExperimentSpec {
    /// Parses `text`; relative file references are checked against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            CliError::Spec(format!("line {line}: {}", e.message()))
        })?;

        let mut payloads: Vec<(Range<usize>, Payload)> = Vec::new();
        if let Some(p) = raw.minimize {
            payloads.push((p.span(), Payload::Minimize(p.into_inner())));
        }
        if let Some(p) = raw.flow {
            payloads.push((p.span(), Payload::Flow(p.into_inner())));
        }
        if let Some(p) = raw.classify {
            payloads.push((p.span(), Payload::Classify(p.into_inner())));
        }
        if let Some(p) = raw.fit_bounds {
            payloads.push((p.span(), Payload::FitBounds(p.into_inner())));
        }
        if let Some(p) = raw.verify_bounds {
            payloads.push((p.span(), Payload::VerifyBounds(p.into_inner())));
        }
        if let Some(p) = raw.sweep {
            payloads.push((p.span(), Payload::Sweep(p.into_inner())));
        }
        payloads.sort_by_key(|(s, _)| s.start);
        let (pspan, payload) = match payloads.len() {
            0 => {
                return Err(CliError::Spec(format!(
                    "line {}: no command payload table",
                    line_of(text, text.len())
                )))
            }
            1 => payloads.pop().expect("one payload"),
            _ => {
                let (s, p) = &payloads[1];
                return Err(at(
                    text,
                    s.clone(),
                    format!(
                        "second command payload [{}]; a spec holds exactly one",
                        p.command()
                    ),
                ));
            }
        };

        let sys_span = raw.system.span();
        let rs = raw.system.into_inner();
        let grav_const = rs.grav_const.unwrap_or(1.0);
        let dim = rs.dim.unwrap_or(2);
        let system = match (&rs.masses, &payload) {
            (None, Payload::Sweep(_)) => None,
            (None, _) => return Err(at(text, sys_span, "[system] needs masses")),
            (Some(m), _) => Some(
                MassSystem::new(m.clone(), grav_const, dim)
                    .map_err(|e| at(text, sys_span.clone(), e))?,
            ),
        };
        if !(grav_const > 0.0) || dim < 2 {
            return Err(at(text, sys_span, "grav_const must be positive and dim ≥ 2"));
        }

        let mut solve = SolveOptions::default().with_seed(raw.seed.unwrap_or(0));
        if let Some(s) = raw.solver {
            let span = s.span();
            let s = s.into_inner();
            if let Some(v) = s.segments {
                solve.segments = v;
            }
            if let Some(v) = s.grad_tol {
                solve.grad_tol = v;
            }
            if let Some(v) = s.max_iters {
                solve.max_iters = v;
            }
            if let Some(v) = s.tau_rel_tol {
                solve.tau_rel_tol = v;
            }
            solve.collision_floor = s.collision_floor;
            solve.validate().map_err(|e| at(text, span, e))?;
        }
        let mut integrate = IntegrateOptions::default();
        if let Some(s) = raw.integrator {
            let span = s.span();
            let s = s.into_inner();
            if let Some(v) = s.tol {
                integrate.tol = v;
            }
            if let Some(v) = s.samples_per_decade {
                integrate.samples_per_decade = v;
            }
            if let Some(v) = s.max_retries {
                integrate.max_retries = v;
            }
            integrate.first_sample = s.first_sample;
            if !(integrate.tol > 0.0) || integrate.samples_per_decade == 0 {
                return Err(at(text, span, "tol and samples_per_decade must be positive"));
            }
        }

        let spec = Self {
            seed: raw.seed.unwrap_or(0),
            out: raw.out.map(PathBuf::from),
            system,
            grav_const,
            dim,
            solve,
            integrate,
            payload,
            base_dir: base_dir.to_path_buf(),
        };
        spec.validate_payload()
            .map_err(|m| at(text, pspan, m))?;
        Ok(spec)
    }

    /// Resolves a file reference relative to the spec's directory.
    pub fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn n_bodies(&self) -> usize {
        self.system.as_ref().map_or(0, |s| s.n_bodies())
    }

    fn check_file(&self, file: &str) -> Result<(), String> {
        if self.resolve(file).is_file() {
            Ok(())
        } else {
            Err(format!("referenced file {file:?} does not exist"))
        }
    }

    fn check_partition(&self, classes: &[Vec<usize>]) -> Result<(), String> {
        ClusterPartition::new(self.n_bodies(), classes.to_vec())
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn check_range(name: &str, r: Option<[f64; 2]>, positive: bool) -> Result<(), String> {
        if let Some([a, b]) = r {
            let lo_ok = if positive { a > 0.0 } else { a >= 0.0 };
            if !(lo_ok && b >= a && b.is_finite()) {
                return Err(format!("{name} must be an increasing range, got [{a}, {b}]"));
            }
        }
        Ok(())
    }

    fn validate_payload(&self) -> Result<(), String> {
        let n = self.n_bodies();
        let d = self.dim;
        match &self.payload {
            Payload::Minimize(p) => {
                if !(p.h >= 0.0) || !p.h.is_finite() {
                    return Err(format!("h must be finite and nonnegative, got {}", p.h));
                }
                points("start", &p.start, n, d)?;
                points("end", &p.end, n, d)?;
                if let Some(t) = p.tau {
                    if !(t > 0.0 && t.is_finite()) {
                        return Err(format!("tau must be positive, got {t}"));
                    }
                }
            }
            Payload::Flow(p) => {
                if !(p.horizon > 0.0 && p.horizon.is_finite()) {
                    return Err(format!("horizon must be positive, got {}", p.horizon));
                }
                self.check_initial(&p.start, &p.velocity, &p.path)?;
            }
            Payload::Classify(p) => {
                match (&p.trajectory, p.horizon) {
                    (Some(f), None) => {
                        if p.start.is_some() || p.velocity.is_some() || p.path.is_some() {
                            return Err(
                                "trajectory excludes start, velocity and path".to_string()
                            );
                        }
                        self.check_file(f)?;
                    }
                    (Some(_), Some(_)) => {
                        return Err("trajectory excludes horizon".to_string());
                    }
                    (None, Some(h)) => {
                        if !(h > 0.0 && h.is_finite()) {
                            return Err(format!("horizon must be positive, got {h}"));
                        }
                        self.check_initial(&p.start, &p.velocity, &p.path)?;
                    }
                    (None, None) => {
                        return Err("classify needs a trajectory file or a horizon".to_string());
                    }
                }
            }
            Payload::FitBounds(p) => {
                if p.samples == 0 {
                    return Err("samples must be positive".to_string());
                }
                if let Some(c) = &p.partition {
                    self.check_partition(c)?;
                }
                Self::check_range("radius", p.radius, true)?;
                Self::check_range("tau", p.tau, true)?;
            }
            Payload::VerifyBounds(p) => {
                if p.samples == 0 && (p.alpha.is_none() || p.beta.is_none()) {
                    return Err("samples must be positive unless alpha and beta are given".into());
                }
                if p.alpha.is_some() != p.beta.is_some() {
                    return Err("alpha and beta must be given together".to_string());
                }
                self.check_partition(&p.partition)?;
                Self::check_range("h_range", p.h_range, false)?;
                Self::check_range("radius", p.radius, true)?;
                Self::check_range("tau", p.tau, true)?;
            }
            Payload::Sweep(p) => {
                let [lo, hi] = p.bodies;
                if lo < 1 || hi < lo {
                    return Err(format!("bodies must be a range of counts ≥ 1, got [{lo}, {hi}]"));
                }
                if p.count == 0 || p.h_values.is_empty() {
                    return Err("count and h_values must be nonempty".to_string());
                }
                if p.h_values.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
                    return Err("h_values must be finite and nonnegative".to_string());
                }
                Self::check_range("mass_range", p.mass_range, true)?;
            }
        }
        Ok(())
    }

    fn check_initial(
        &self,
        start: &Option<Vec<Vec<f64>>>,
        velocity: &Option<Vec<Vec<f64>>>,
        path: &Option<String>,
    ) -> Result<(), String> {
        match (start, velocity, path) {
            (Some(x), Some(v), None) => {
                points("start", x, self.n_bodies(), self.dim)?;
                points("velocity", v, self.n_bodies(), self.dim)
            }
            (None, None, Some(f)) => self.check_file(f),
            _ => Err("give either start and velocity, or path".to_string()),
        }
    }
}

fn points(name: &str, pts: &[Vec<f64>], n: usize, d: usize) -> Result<(), String> {
    if pts.len() != n {
        return Err(format!("{name} has {} points, expected {n}", pts.len()));
    }
    if let Some(p) = pts.iter().find(|p| p.len() != d) {
        return Err(format!("{name} has a point with {} coordinates, expected {d}", p.len()));
    }
    if pts.iter().flatten().any(|c| !c.is_finite()) {
        return Err(format!("{name} has non-finite coordinates"));
    }
    Ok(())
}

/// Configuration from validated point lists.
pub fn configuration(pts: &[Vec<f64>]) -> Configuration {
    Configuration::from_points(pts).expect("validated points")
}
