//! Direct-method minimization of the discrete action.
//!
//! * [`minimize_fixed_time`] approximates `φ_h(x, x', τ)` by descending from a
//!   straight path with the endpoints held fixed.
//! * [`minimize_free_time`] approximates `φ_h(x, x') = inf_τ φ_h(x, x', τ)` by a
//!   bracketing plus golden-section search on `ln τ`.
//! * [`phi_no_interaction`] evaluates the same objects with the inter-cluster
//!   interaction switched off; the cluster centers then move on straight lines
//!   and only the internal cluster problems need a solve.
//!
//! The solvers certify local minimality only. Every value returned is the
//! action of an explicit path, hence an upper bound for the infimum up to
//! discretization error.

mod newton;
mod search;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{action_unchecked, DiscretePath};
use crate::error::{usage, Error, Result};
use crate::system::{
    mass_norm_unchecked, min_pair_distance, potential_unchecked, split_unchecked, ClusterPartition,
    Configuration, MassSystem,
};

use newton::{descend, NewtonSettings, Problem};
use search::{search_tau, SearchEnd};

/// Options shared by all solves.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Number of path segments.
    pub segments: usize,
    /// Convergence threshold on the dual mass norm of the action gradient.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Minimum admissible mutual distance at quadrature nodes during descent.
    /// `None` uses `1e-6` times the mean pairwise distance of the endpoints.
    pub collision_floor: Option<f64>,
    /// Relative width at which the `τ` search stops.
    pub tau_rel_tol: f64,
    /// Seed of the deflection pattern applied to initial paths near collisions.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            segments: 64,
            grad_tol: 1e-8,
            max_iters: 500,
            collision_floor: None,
            tau_rel_tol: 1e-8,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn with_segments(mut self, segments: usize) -> Self {
        self.segments = segments;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments < 2 {
            return usage("at least two segments are required");
        }
        if !(self.grad_tol > 0.0) || !(self.tau_rel_tol > 0.0) || self.max_iters == 0 {
            return usage("solver tolerances and iteration limits must be positive");
        }
        if let Some(f) = self.collision_floor {
            if !(f > 0.0) {
                return usage("collision floor must be positive");
            }
        }
        Ok(())
    }
}

/// A computed (local) minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub path: DiscretePath,
    /// Action of `path` at the requested `h`.
    pub value: f64,
    pub tau: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest mutual distance at interior quadrature samples.
    pub interior_min_distance: f64,
    /// Collision floor in force at the start of the solve.
    pub collision_floor: f64,
}

fn mean_pair_distance(x: &Configuration) -> f64 {
    let n = x.n_bodies();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    let mut count = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += x.distance(i, j);
            count += 1.0;
        }
    }
    s / count
}

fn check_endpoints(sys: &MassSystem, x: &Configuration, y: &Configuration, h: f64) -> Result<()> {
    sys.check(x)?;
    sys.check(y)?;
    if !(h >= 0.0) || !h.is_finite() {
        return usage(format!(
            "energy level h must be finite and nonnegative, got {h}"
        ));
    }
    if !x.is_finite() || !y.is_finite() {
        return usage("endpoint coordinates must be finite");
    }
    let n = sys.n_bodies();
    let d = sys.dim();
    if min_pair_distance(n, d, x.as_slice()) == 0.0 || min_pair_distance(n, d, y.as_slice()) == 0.0
    {
        return Err(Error::EndpointCollision);
    }
    Ok(())
}

fn collision_floor(opts: &SolveOptions, x: &Configuration, y: &Configuration) -> f64 {
    opts.collision_floor
        .unwrap_or_else(|| 1e-6 * 0.5 * (mean_pair_distance(x) + mean_pair_distance(y)))
}

/// Straight path, bent away from collisions by a seeded sine bump if needed.
fn initial_path(
    sys: &MassSystem,
    x: &Configuration,
    y: &Configuration,
    tau: f64,
    segments: usize,
    floor: f64,
    seed: u64,
) -> Result<DiscretePath> {
    let straight = DiscretePath::straight(x, y, tau, segments)?;
    let problem = Problem::new(sys, 0.0, straight.times());
    let as_vecs = |p: &DiscretePath| -> Vec<Vec<f64>> {
        p.nodes().iter().map(|c| c.as_slice().to_vec()).collect()
    };
    if sys.n_bodies() < 2 || problem.interior_min_distance(&as_vecs(&straight)) > floor {
        return Ok(straight);
    }
    let d = sys.dim();
    let n = sys.n_bodies();
    let amplitude = 0.25 * 0.5 * (mean_pair_distance(x) + mean_pair_distance(y));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidate = straight.clone();
    for _ in 0..16 {
        // per-body directions orthogonal to the body's displacement, zero mass-weighted mean
        let mut bump = vec![0.0; n * d];
        for i in 0..n {
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let disp: Vec<f64> = (0..d).map(|k| y.point(i)[k] - x.point(i)[k]).collect();
            let dd: f64 = disp.iter().map(|c| c * c).sum();
            let proj = if dd > 0.0 {
                w.iter().zip(&disp).map(|(a, b)| a * b).sum::<f64>() / dd
            } else {
                0.0
            };
            for k in 0..d {
                bump[i * d + k] = w[k] - proj * disp[k];
            }
        }
        let total = sys.total_mass();
        for k in 0..d {
            let mean: f64 = (0..n).map(|i| sys.mass(i) * bump[i * d + k]).sum::<f64>() / total;
            for i in 0..n {
                bump[i * d + k] -= mean;
            }
        }
        let norm = (bump.iter().map(|c| c * c).sum::<f64>() / n as f64).sqrt();
        if norm == 0.0 {
            continue;
        }
        let nodes: Vec<Configuration> = straight
            .nodes()
            .iter()
            .enumerate()
            .map(|(k, node)| {
                let s = (std::f64::consts::PI * k as f64 / segments as f64).sin();
                let mut c = node.clone();
                for (v, b) in c.as_mut_slice().iter_mut().zip(&bump) {
                    *v += s * amplitude * b / norm;
                }
                c
            })
            .collect();
        candidate = DiscretePath::new(straight.times().to_vec(), nodes)?;
        if problem.interior_min_distance(&as_vecs(&candidate)) > floor {
            return Ok(candidate);
        }
    }
    Ok(candidate)
}

fn finish(sys: &MassSystem, h: f64, outcome: newton::NewtonOutcome, floor: f64) -> MinimizeResult {
    let problem = Problem::new(sys, h, outcome.path.times());
    let nodes: Vec<Vec<f64>> = outcome
        .path
        .nodes()
        .iter()
        .map(|c| c.as_slice().to_vec())
        .collect();
    let margin = if sys.n_bodies() < 2 {
        f64::INFINITY
    } else {
        problem.interior_min_distance(&nodes)
    };
    MinimizeResult {
        tau: outcome.path.duration(),
        value: action_unchecked(sys, &outcome.path, h),
        path: outcome.path,
        grad_norm: outcome.grad_norm,
        iterations: outcome.iterations,
        converged: outcome.converged,
        interior_min_distance: margin,
        collision_floor: floor,
    }
}

/// Approximates `φ_h(x, x', τ)` starting from the straight path.
pub fn minimize_fixed_time(
    sys: &MassSystem,
    x: &Configuration,
    y: &Configuration,
    tau: f64,
    h: f64,
    opts: &SolveOptions,
) -> Result<MinimizeResult> {
    opts.validate()?;
    check_endpoints(sys, x, y, h)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return usage(format!("duration must be positive, got {tau}"));
    }
    let floor = collision_floor(opts, x, y);
    let start = initial_path(sys, x, y, tau, opts.segments, floor, opts.seed)?;
    Ok(run_descent(sys, h, &start, opts, floor))
}

/// Fixed-time descent from a caller-supplied initial path (its endpoints and
/// time grid are kept).
pub fn minimize_fixed_time_from(
    sys: &MassSystem,
    initial: &DiscretePath,
    h: f64,
    opts: &SolveOptions,
) -> Result<MinimizeResult> {
    opts.validate()?;
    initial.check(sys)?;
    check_endpoints(sys, initial.first(), initial.last(), h)?;
    let floor = collision_floor(opts, initial.first(), initial.last());
    Ok(run_descent(sys, h, initial, opts, floor))
}

fn run_descent(
    sys: &MassSystem,
    h: f64,
    start: &DiscretePath,
    opts: &SolveOptions,
    floor: f64,
) -> MinimizeResult {
    let settings = NewtonSettings {
        grad_tol: opts.grad_tol,
        max_iters: opts.max_iters,
        collision_floor: floor,
    };
    finish(sys, h, descend(sys, h, start, &settings), floor)
}

/// Gradient of the discrete action with respect to the interior nodes,
/// flattened node by node (`(segments − 1) · N · dim` entries).
pub fn action_gradient(sys: &MassSystem, path: &DiscretePath, h: f64) -> Result<Vec<f64>> {
    path.check(sys)?;
    if !(h >= 0.0) {
        return usage("energy level h must be nonnegative");
    }
    let nodes: Vec<Vec<f64>> = path.nodes().iter().map(|c| c.as_slice().to_vec()).collect();
    Ok(Problem::new(sys, h, path.times()).gradient(&nodes))
}

/// Outcome class of a free-time solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeTimeOutcome {
    /// A bracketed minimum over `τ` was refined.
    Minimized,
    /// `x = x'`: the infimum is 0, approached by constant paths as `τ → 0`.
    TrivialEndpoint,
    /// The action kept decreasing along the `τ` search; the infimum may not
    /// be attained at finite `τ` (typical for `h = 0`).
    SearchNotClosed,
}

/// One evaluated duration of the outer search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauProbe {
    pub tau: f64,
    pub value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeTimeSolution {
    pub outcome: FreeTimeOutcome,
    /// Best action found (0 for the trivial endpoint case).
    pub value: f64,
    /// The fixed-time result realizing `value`, if any.
    pub best: Option<MinimizeResult>,
    pub trace: Vec<TauProbe>,
    pub diagnostic: Option<String>,
}

impl FreeTimeSolution {
    pub fn converged(&self) -> bool {
        self.outcome == FreeTimeOutcome::Minimized
            && self.best.as_ref().map_or(false, |b| b.converged)
    }

    pub fn tau(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.tau)
    }
}

/// Initial guess of the optimal duration: the free-particle value
/// `‖x − x'‖ / √(2h)`, or with `h = 0` the speed `√(2Ū)` of a zero-energy motion.
fn tau_guess(sys: &MassSystem, x: &Configuration, y: &Configuration, h: f64) -> f64 {
    let l = mass_norm_unchecked(sys, y.sub(x).as_slice());
    let speed_sq = if h > 0.0 {
        2.0 * h
    } else {
        potential_unchecked(sys, x.as_slice()) + potential_unchecked(sys, y.as_slice())
    };
    let t = l / speed_sq.sqrt();
    if t.is_finite() && t > 0.0 {
        t
    } else {
        1.0
    }
}

const MAX_EXPANSIONS_POSITIVE_H: usize = 60;
const MAX_EXPANSIONS_ZERO_H: usize = 30;

/// Approximates `φ_h(x, x')` by minimizing fixed-time values over `τ`.
pub fn minimize_free_time(
    sys: &MassSystem,
    x: &Configuration,
    y: &Configuration,
    h: f64,
    opts: &SolveOptions,
) -> Result<FreeTimeSolution> {
    opts.validate()?;
    check_endpoints(sys, x, y, h)?;
    if x == y {
        return Ok(trivial_endpoint());
    }
    let tau0 = tau_guess(sys, x, y, h);
    let floor = collision_floor(opts, x, y);
    let start = initial_path(sys, x, y, tau0, opts.segments, floor, opts.seed)?;
    free_time_search(sys, &start, h, opts, floor)
}

/// Free-time search whose first probe descends from `initial` (resampled to
/// `opts.segments` and with its own duration as the first `τ`).
pub fn minimize_free_time_from(
    sys: &MassSystem,
    initial: &DiscretePath,
    h: f64,
    opts: &SolveOptions,
) -> Result<FreeTimeSolution> {
    opts.validate()?;
    initial.check(sys)?;
    check_endpoints(sys, initial.first(), initial.last(), h)?;
    if initial.first() == initial.last() {
        return Ok(trivial_endpoint());
    }
    let start = initial
        .resampled(opts.segments)?
        .with_duration(initial.duration())?;
    let floor = collision_floor(opts, initial.first(), initial.last());
    free_time_search(sys, &start, h, opts, floor)
}

fn trivial_endpoint() -> FreeTimeSolution {
    FreeTimeSolution {
        outcome: FreeTimeOutcome::TrivialEndpoint,
        value: 0.0,
        best: None,
        trace: Vec::new(),
        diagnostic: Some("trivial endpoint: x = x', constant path rejected as degenerate".into()),
    }
}

fn free_time_search(
    sys: &MassSystem,
    start: &DiscretePath,
    h: f64,
    opts: &SolveOptions,
    floor: f64,
) -> Result<FreeTimeSolution> {
    let settings = NewtonSettings {
        grad_tol: opts.grad_tol,
        max_iters: opts.max_iters,
        collision_floor: floor,
    };
    let mut probes: Vec<MinimizeResult> = Vec::new();
    let search = search_tau(
        start.duration(),
        opts.tau_rel_tol,
        if h > 0.0 {
            MAX_EXPANSIONS_POSITIVE_H
        } else {
            MAX_EXPANSIONS_ZERO_H
        },
        |tau| probe_at(sys, h, &settings, start, &mut probes, tau),
    );
    if search.end == SearchEnd::Closed {
        polish_tau(sys, h, &settings, start, &mut probes);
    }
    let trace: Vec<TauProbe> = probes
        .iter()
        .map(|p| TauProbe {
            tau: p.tau,
            value: p.value,
            converged: p.converged,
        })
        .collect();
    let best = select_best(sys, h, probes);
    let (outcome, diagnostic) = match search.end {
        SearchEnd::Closed => (FreeTimeOutcome::Minimized, None),
        SearchEnd::Unbounded if h == 0.0 => (
            FreeTimeOutcome::SearchNotClosed,
            Some("h=0 free-time search did not close".to_string()),
        ),
        SearchEnd::Unbounded => (
            FreeTimeOutcome::SearchNotClosed,
            Some(format!(
                "free-time search did not close (best tau {:.6e})",
                search.best_tau
            )),
        ),
    };
    Ok(FreeTimeSolution {
        outcome,
        value: best.as_ref().map_or(f64::INFINITY, |b| b.value),
        best,
        trace,
        diagnostic,
    })
}

/// Fixed-time solve at `tau`, warm started from the probe nearest in `ln τ`.
fn probe_at(
    sys: &MassSystem,
    h: f64,
    settings: &NewtonSettings,
    start: &DiscretePath,
    probes: &mut Vec<MinimizeResult>,
    tau: f64,
) -> f64 {
    let warm = probes
        .iter()
        .min_by(|a, b| {
            let da = (a.tau.ln() - tau.ln()).abs();
            let db = (b.tau.ln() - tau.ln()).abs();
            da.total_cmp(&db)
        })
        .map(|p| &p.path)
        .unwrap_or(start);
    let init = warm.with_duration(tau).expect("positive duration");
    let r = finish(
        sys,
        h,
        descend(sys, h, &init, settings),
        settings.collision_floor,
    );
    let v = r.value;
    probes.push(r);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Derivative of the fixed-time minimum with respect to `τ` (grid rescaled
/// uniformly, envelope theorem): `h − Σ_k (Δt_k/τ) (T_k − Ū_k)`, where `Ū_k`
/// is the Simpson mean of `U` on segment `k`. It vanishes where the
/// time-averaged discrete energy equals `h`.
pub(crate) fn tau_slope(sys: &MassSystem, path: &DiscretePath, h: f64) -> f64 {
    let tau = path.duration();
    let times = path.times();
    let nodes = path.nodes();
    let mut avg = 0.0;
    for k in 0..path.segments() {
        let dt = times[k + 1] - times[k];
        let a = nodes[k].as_slice();
        let b = nodes[k + 1].as_slice();
        let v: Vec<f64> = a.iter().zip(b).map(|(p, q)| (q - p) / dt).collect();
        let mid: Vec<f64> = a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
        let kin = 0.5 * crate::system::mass_norm_sq(sys, &v);
        let u = (potential_unchecked(sys, a)
            + 4.0 * potential_unchecked(sys, &mid)
            + potential_unchecked(sys, b))
            / 6.0;
        avg += dt / tau * (kin - u);
    }
    h - avg
}

/// Secant iterations on [`tau_slope`] around the best probe. The golden
/// section alone resolves `τ` only to about the square root of the value
/// precision.
fn polish_tau(
    sys: &MassSystem,
    h: f64,
    settings: &NewtonSettings,
    start: &DiscretePath,
    probes: &mut Vec<MinimizeResult>,
) {
    let mut order: Vec<usize> = (0..probes.len())
        .filter(|&i| probes[i].value.is_finite())
        .collect();
    order.sort_by(|&a, &b| probes[a].value.total_cmp(&probes[b].value));
    if order.len() < 2 {
        return;
    }
    let (ia, ib) = (order[1], order[0]);
    let (mut ta, mut ga) = (probes[ia].tau, tau_slope(sys, &probes[ia].path, h));
    let (mut tb, mut gb) = (probes[ib].tau, tau_slope(sys, &probes[ib].path, h));
    let center = tb;
    for _ in 0..8 {
        if gb == ga || gb == 0.0 {
            break;
        }
        let next = tb - gb * (tb - ta) / (gb - ga);
        if !next.is_finite() || (next / center - 1.0).abs() > 0.1 || next == tb {
            break;
        }
        probe_at(sys, h, settings, start, probes, next);
        let last = probes.last().expect("just pushed");
        if !last.value.is_finite() {
            break;
        }
        let gn = tau_slope(sys, &last.path, h);
        ta = tb;
        ga = gb;
        tb = next;
        gb = gn;
        if gb.abs() <= 1e-14 * (1.0 + h + last.value / last.tau) {
            break;
        }
    }
}

/// The lowest-value probe; among probes tied with it to round-off, the one
/// closest to stationarity in `τ`.
fn select_best(sys: &MassSystem, h: f64, probes: Vec<MinimizeResult>) -> Option<MinimizeResult> {
    let min = probes
        .iter()
        .map(|p| p.value)
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let slack = 1e-14 * min.abs();
    probes
        .into_iter()
        .filter(|p| p.value <= min + slack)
        .min_by(|a, b| {
            tau_slope(sys, &a.path, h)
                .abs()
                .total_cmp(&tau_slope(sys, &b.path, h).abs())
        })
}

/// Smallest mutual distance at interior samples of a computed path; `INFINITY`
/// when there is no pair of bodies.
pub fn interior_collision_margin(result: &MinimizeResult) -> f64 {
    path_interior_margin(&result.path)
}

/// Same as [`interior_collision_margin`] for an arbitrary path: nodes other
/// than the endpoints and all segment midpoints are inspected.
pub fn path_interior_margin(path: &DiscretePath) -> f64 {
    let (n, d) = (path.n_bodies(), path.dim());
    if n < 2 {
        return f64::INFINITY;
    }
    let nodes = path.nodes();
    let mut r = f64::INFINITY;
    for k in 0..path.segments() {
        if k > 0 {
            r = r.min(min_pair_distance(n, d, nodes[k].as_slice()));
        }
        let mid = Configuration::lerp(&nodes[k], &nodes[k + 1], 0.5);
        r = r.min(min_pair_distance(n, d, mid.as_slice()));
    }
    r
}

/// `φ_{h,I=0}` with its closed-form center part and per-block parts.
#[derive(Debug, Clone, PartialEq)]
pub struct NoInteractionValue {
    pub value: f64,
    /// `h τ + ‖y − y'‖² / (2τ)` in the block-mass norm.
    pub center_value: f64,
    /// Per block, the internal fixed-time minimum (0 for singletons).
    pub cluster_values: Vec<f64>,
    pub tau: f64,
    /// The assembled no-interaction minimizer: straight-line centers plus the
    /// internal cluster paths.
    pub path: DiscretePath,
    /// All internal solves converged (and, when `τ` was searched, the search closed).
    pub converged: bool,
    pub trace: Vec<TauProbe>,
}

struct ClusterProblems {
    dy_sq: f64,
    blocks: Vec<Option<(MassSystem, Configuration, Configuration)>>,
}

impl ClusterProblems {
    fn new(
        sys: &MassSystem,
        x: &Configuration,
        y: &Configuration,
        p: &ClusterPartition,
    ) -> Result<Self> {
        let sx = split_unchecked(sys, x.as_slice(), p);
        let sy = split_unchecked(sys, y.as_slice(), p);
        let center_sys = p.center_system(sys);
        let dy = sy.centers.sub(&sx.centers);
        let dy_sq = mass_norm_unchecked(&center_sys, dy.as_slice()).powi(2);
        let blocks = p
            .classes()
            .iter()
            .enumerate()
            .map(|(k, class)| {
                if class.len() < 2 {
                    Ok(None)
                } else {
                    Ok(Some((
                        sys.subsystem(class)?,
                        sx.relatives[k].clone(),
                        sy.relatives[k].clone(),
                    )))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { dy_sq, blocks })
    }
}

/// `φ_{h,I=0}(x, x', τ)` when `tau` is given, else `φ_{h,I=0}(x, x')`.
///
/// The center part is `h τ + ‖y − y'‖²/(2τ)`; each block contributes its own
/// fixed-time minimum at zero energy offset (the `h τ` term appears once).
pub fn phi_no_interaction(
    sys: &MassSystem,
    x: &Configuration,
    y: &Configuration,
    partition: &ClusterPartition,
    h: f64,
    tau: Option<f64>,
    opts: &SolveOptions,
) -> Result<NoInteractionValue> {
    opts.validate()?;
    check_endpoints(sys, x, y, h)?;
    partition.check(sys)?;
    let problems = ClusterProblems::new(sys, x, y, partition)?;
    let solve_blocks = |tau: f64,
                        warm: Option<&Vec<Option<MinimizeResult>>>|
     -> Result<Vec<Option<MinimizeResult>>> {
        problems
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| match b {
                None => Ok(None),
                Some((bsys, z0, z1)) => {
                    let warm_path = warm.and_then(|w| w[k].as_ref()).map(|r| &r.path);
                    let r = match warm_path {
                        Some(p) => {
                            minimize_fixed_time_from(bsys, &p.with_duration(tau)?, 0.0, opts)?
                        }
                        None => minimize_fixed_time(bsys, z0, z1, tau, 0.0, opts)?,
                    };
                    Ok(Some(r))
                }
            })
            .collect()
    };
    let total = |tau: f64, blocks: &[Option<MinimizeResult>]| -> f64 {
        h * tau
            + problems.dy_sq / (2.0 * tau)
            + blocks.iter().flatten().map(|r| r.value).sum::<f64>()
    };

    let (tau, blocks, trace, search_closed) = match tau {
        Some(t) => {
            if !(t > 0.0) || !t.is_finite() {
                return usage(format!("duration must be positive, got {t}"));
            }
            (t, solve_blocks(t, None)?, Vec::new(), true)
        }
        None => {
            if x == y {
                return usage("phi_no_interaction over free time needs distinct endpoints");
            }
            let mut probes: Vec<(f64, Vec<Option<MinimizeResult>>)> = Vec::new();
            let mut failure: Option<Error> = None;
            let search = search_tau(
                tau_guess(sys, x, y, h),
                opts.tau_rel_tol,
                if h > 0.0 {
                    MAX_EXPANSIONS_POSITIVE_H
                } else {
                    MAX_EXPANSIONS_ZERO_H
                },
                |t| {
                    let warm = probes
                        .iter()
                        .min_by(|a, b| {
                            (a.0.ln() - t.ln())
                                .abs()
                                .total_cmp(&(b.0.ln() - t.ln()).abs())
                        })
                        .map(|p| &p.1);
                    match solve_blocks(t, warm) {
                        Ok(b) => {
                            let v = total(t, &b);
                            probes.push((t, b));
                            v
                        }
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::INFINITY
                        }
                    }
                },
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let trace = probes
                .iter()
                .map(|(t, b)| TauProbe {
                    tau: *t,
                    value: total(*t, b),
                    converged: b.iter().flatten().all(|r| r.converged),
                })
                .collect();
            let (t, b) = probes
                .into_iter()
                .min_by(|a, b| total(a.0, &a.1).total_cmp(&total(b.0, &b.1)))
                .expect("search evaluates at least one probe");
            (t, b, trace, search.end == SearchEnd::Closed)
        }
    };

    let center_value = h * tau + problems.dy_sq / (2.0 * tau);
    let cluster_values: Vec<f64> = blocks
        .iter()
        .map(|b| b.as_ref().map_or(0.0, |r| r.value))
        .collect();
    let converged = search_closed && blocks.iter().flatten().all(|r| r.converged);
    let path = assemble_path(sys, x, y, partition, tau, opts.segments, &blocks)?;
    Ok(NoInteractionValue {
        value: center_value + cluster_values.iter().sum::<f64>(),
        center_value,
        cluster_values,
        tau,
        path,
        converged,
        trace,
    })
}

fn assemble_path(
    sys: &MassSystem,
    x: &Configuration,
    y: &Configuration,
    partition: &ClusterPartition,
    tau: f64,
    segments: usize,
    blocks: &[Option<MinimizeResult>],
) -> Result<DiscretePath> {
    let sx = split_unchecked(sys, x.as_slice(), partition);
    let sy = split_unchecked(sys, y.as_slice(), partition);
    let d = sys.dim();
    let nodes = (0..=segments)
        .map(|k| {
            let s = k as f64 / segments as f64;
            let centers = Configuration::lerp(&sx.centers, &sy.centers, s);
            let mut node = Configuration::zeros(sys.n_bodies(), d);
            for (blk, class) in partition.classes().iter().enumerate() {
                for (slot, &i) in class.iter().enumerate() {
                    let rel: Vec<f64> = match &blocks[blk] {
                        Some(r) => r.path.nodes()[k].point(slot).to_vec(),
                        None => vec![0.0; d],
                    };
                    for c in 0..d {
                        node.point_mut(i)[c] = centers.point(blk)[c] + rel[c];
                    }
                }
            }
            node
        })
        .collect::<Vec<_>>();
    let mut nodes = nodes;
    nodes[0] = x.clone();
    nodes[segments] = y.clone();
    DiscretePath::uniform(0.0, tau, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::action;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn free_particle_fixed_time_closed_form() {
        let sys = MassSystem::unit(1, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[3.0, 4.0]]).unwrap();
        let r = minimize_fixed_time(&sys, &x, &y, 2.0, 0.7, &SolveOptions::default()).unwrap();
        assert!(r.converged);
        assert!(rel(r.value, 25.0 / 4.0 + 1.4) < 1e-12);
        assert_eq!(interior_collision_margin(&r), f64::INFINITY);
    }

    #[test]
    fn free_particle_free_time_closed_form() {
        let sys = MassSystem::new(vec![2.0], 1.0, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[3.0, 0.0]]).unwrap();
        let s = minimize_free_time(&sys, &x, &y, 2.0, &SolveOptions::default()).unwrap();
        assert!(s.converged());
        assert!(rel(s.value, 8f64.sqrt() * 3.0) < 1e-9);
        assert!(rel(s.tau().unwrap(), 3.0 * 0.5f64.sqrt()) < 1e-6);
        for p in &s.trace {
            assert!(s.value <= p.value);
        }
    }

    #[test]
    fn trivial_endpoint_outcome() {
        let sys = MassSystem::new(vec![3.0], 1.0, 2).unwrap();
        let x = Configuration::from_points(&[[1.0, 1.0]]).unwrap();
        let s = minimize_free_time(&sys, &x, &x, 0.4, &SolveOptions::default()).unwrap();
        assert_eq!(s.outcome, FreeTimeOutcome::TrivialEndpoint);
        assert_eq!(s.value, 0.0);
        assert!(s.best.is_none());
    }

    #[test]
    fn zero_energy_free_particle_does_not_close() {
        let sys = MassSystem::unit(1, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[1.0, 0.0]]).unwrap();
        let s = minimize_free_time(&sys, &x, &y, 0.0, &SolveOptions::default()).unwrap();
        assert_eq!(s.outcome, FreeTimeOutcome::SearchNotClosed);
        assert!(!s.converged());
        assert_eq!(
            s.diagnostic.as_deref(),
            Some("h=0 free-time search did not close")
        );
    }

    #[test]
    fn endpoint_collision_is_rejected() {
        let sys = MassSystem::unit(2, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(
            minimize_fixed_time(&sys, &x, &y, 1.0, 0.0, &SolveOptions::default()),
            Err(Error::EndpointCollision)
        );
        assert!(matches!(
            minimize_fixed_time(&sys, &y, &y, 1.0, -1.0, &SolveOptions::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn head_on_swap_is_deflected() {
        // the straight path runs both bodies through each other at mid-time
        let sys = MassSystem::unit(2, 2).unwrap();
        let x = Configuration::from_points(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let r = minimize_fixed_time(&sys, &x, &y, 3.0, 0.0, &SolveOptions::default()).unwrap();
        assert!(r.value.is_finite());
        assert!(r.interior_min_distance > r.collision_floor);
        assert!(r.converged);
    }

    #[test]
    fn descent_never_exceeds_initial_action() {
        let sys = MassSystem::new(vec![1.0, 0.5, 2.0], 1.0, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]]).unwrap();
        let y = Configuration::from_points(&[[1.0, 1.0], [3.0, -1.0], [-1.0, 3.5]]).unwrap();
        let straight = DiscretePath::straight(&x, &y, 1.5, 64).unwrap();
        let r = minimize_fixed_time(&sys, &x, &y, 1.5, 0.2, &SolveOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.value <= action(&sys, &straight, 0.2).unwrap());
        assert_eq!(r.path.first(), &x);
        assert_eq!(r.path.last(), &y);
        assert!(rel(r.value, action(&sys, &r.path, 0.2).unwrap()) < 1e-15);
    }

    #[test]
    fn two_singletons_no_interaction_is_closed_form() {
        let sys = MassSystem::new(vec![1.0, 3.0], 1.0, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[1.0, 1.0], [2.0, 3.0]]).unwrap();
        let p = ClusterPartition::singletons(2);
        let v =
            phi_no_interaction(&sys, &x, &y, &p, 0.5, Some(2.0), &SolveOptions::default()).unwrap();
        let dy_sq = 1.0 * 2.0 + 3.0 * 9.0;
        assert!(rel(v.value, 0.5 * 2.0 + dy_sq / 4.0) < 1e-14);
        assert_eq!(v.cluster_values, vec![0.0, 0.0]);
    }
}
