//! Long-time integration of Newton's equations and asymptotic classification.
//!
//! Every detector here looks at a finite window of a finite trajectory, so
//! the flags are tri-state and their thresholds are fixed constants of this
//! module:
//!
//! * pair exponents: log-log slope over the last decade ([`DEFAULT_WINDOW`]);
//! * partition: `p_ij ≤ 2/3 + δ` with `δ = 0.1` ([`DEFAULT_DELTA`]);
//! * superhyperbolic: windowed max of `R(t)/t` grows by at least
//!   [`SUPERHYPERBOLIC_RATIO`] over each of the last three dyadic steps;
//! * expansive: every window mean of `r_ij` increases over the last four
//!   dyadic windows and the smallest distance grows by [`EXPANSIVE_RATIO`]
//!   between `T/2` and `T`.

use nalgebra::{DMatrix, DVector};

use crate::action::DiscretePath;
use crate::error::{usage, Error, Result};
use crate::system::{
    add_potential_gradient, mass_norm_sq, min_pair_distance, potential_unchecked, ClusterPartition,
    Configuration, MassSystem,
};

/// Default fitting window, as a fraction of the horizon: the last decade.
pub const DEFAULT_WINDOW: f64 = 0.1;
/// Default exponent margin of [`detect_partition`].
pub const DEFAULT_DELTA: f64 = 0.1;
/// Growth of the windowed max of `R(t)/t` per dyadic window counted as superhyperbolic.
pub const SUPERHYPERBOLIC_RATIO: f64 = 1.5;
/// Required growth of the smallest mutual distance from `T/2` to `T`. A
/// `t^{2/3}` cluster grows by `2^{2/3}`, so this accepts it with margin.
pub const EXPANSIVE_RATIO: f64 = 1.259_921_049_894_873_2; // 2^{1/3}
/// Relative changes below this count as no growth (round-off on bounded motion).
const GROWTH_FLOOR: f64 = 1e-6;
/// Relative RMS residual below which a drift fit counts as small.
pub const DRIFT_RESIDUAL_SMALL: f64 = 1e-3;

/// Tri-state outcome of a finite-data detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    Yes,
    No,
    Indeterminate,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Yes => "yes",
            Flag::No => "no",
            Flag::Indeterminate => "indeterminate",
        }
    }
}

/// Integrator bookkeeping attached to a [`Trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorStats {
    /// `max |E(t) − E(0)| / (T(0) + U(0))` over the samples.
    pub energy_drift: f64,
    /// Energy-drift tolerance requested.
    pub tol: f64,
    /// Local error tolerance of the final attempt.
    pub local_tol: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// Set when the step size fell below its floor; the trajectory then ends
    /// at the last sample reached.
    pub close_encounter: bool,
    pub diagnostic: Option<String>,
}

impl IntegratorStats {
    fn synthetic() -> Self {
        Self {
            energy_drift: 0.0,
            tol: 0.0,
            local_tol: 0.0,
            accepted: 0,
            rejected: 0,
            close_encounter: false,
            diagnostic: None,
        }
    }
}

/// Sampled motion: times with positions and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    positions: Vec<Configuration>,
    velocities: Vec<Configuration>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    /// Builds a trajectory from samples, e.g. a closed-form motion.
    pub fn new(
        times: Vec<f64>,
        positions: Vec<Configuration>,
        velocities: Vec<Configuration>,
    ) -> Result<Self> {
        if times.is_empty() {
            return usage("a trajectory needs at least one sample");
        }
        if positions.len() != times.len() || velocities.len() != times.len() {
            return usage("times, positions and velocities must have equal lengths");
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return usage("sample times must be finite and strictly increasing");
        }
        let (n, d) = (positions[0].n_bodies(), positions[0].dim());
        for c in positions.iter().chain(&velocities) {
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.dim(),
                });
            }
            if c.n_bodies() != n {
                return Err(Error::DimensionMismatch {
                    expected: n * d,
                    got: c.as_slice().len(),
                });
            }
        }
        Ok(Self {
            times,
            positions,
            velocities,
            stats: IntegratorStats::synthetic(),
        })
    }

    /// Builds a trajectory from positions alone; velocities are difference
    /// quotients (one-sided at the ends).
    pub fn from_positions(times: Vec<f64>, positions: Vec<Configuration>) -> Result<Self> {
        let m = positions.len();
        if m < 2 {
            return usage("velocities from positions need at least two samples");
        }
        let velocities = (0..m)
            .map(|k| {
                let (a, b) = if k == 0 {
                    (0, 1)
                } else if k == m - 1 {
                    (m - 2, m - 1)
                } else {
                    (k - 1, k + 1)
                };
                positions[b]
                    .sub(&positions[a])
                    .scaled(1.0 / (times[b] - times[a]))
            })
            .collect();
        Self::new(times, positions, velocities)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[Configuration] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Configuration] {
        &self.velocities
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_bodies(&self) -> usize {
        self.positions[0].n_bodies()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].dim()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    fn check(&self, sys: &MassSystem) -> Result<()> {
        if self.n_bodies() != sys.n_bodies() || self.dim() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.len(),
                got: self.n_bodies() * self.dim(),
            });
        }
        Ok(())
    }
}

// Verner's efficient 6(5) pair, 9 stages, the last one evaluated at the new
// point (first same as last).
const RK_A: [[f64; 8]; 9] = [
    [0.0; 8],
    [0.06, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        0.019_239_962_962_962_962,
        0.076_693_370_370_370_37,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [0.035_975, 0.0, 0.107_925, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        1.318_683_415_233_148_4,
        0.0,
        -5.042_058_063_628_562,
        4.220_674_648_395_414,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        -41.872_591_664_327_516,
        0.0,
        159.432_562_163_137_5,
        -122.119_213_565_010_03,
        5.531_743_066_200_054,
        0.0,
        0.0,
        0.0,
    ],
    [
        -54.430_156_935_316_504,
        0.0,
        207.067_251_365_018_48,
        -158.610_813_784_59,
        6.991_816_585_950_242,
        -0.018_597_231_062_203_234,
        0.0,
        0.0,
    ],
    [
        -54.663_741_787_281_98,
        0.0,
        207.952_806_255_389_36,
        -159.288_957_474_499_5,
        7.018_743_740_796_944,
        -0.018_338_785_905_045_722,
        -0.000_511_948_499_788_209_9,
        0.0,
    ],
    [
        0.034_389_578_683_570_36,
        0.0,
        0.0,
        0.258_262_455_563_350_3,
        0.420_937_118_967_353_7,
        4.405_396_469_669_31,
        -176.483_119_024_298_65,
        172.364_133_401_415_07,
    ],
];
/// Sixth-order weights (equal to the last row of `RK_A`).
const RK_B6: [f64; 9] = [
    0.034_389_578_683_570_36,
    0.0,
    0.0,
    0.258_262_455_563_350_3,
    0.420_937_118_967_353_7,
    4.405_396_469_669_31,
    -176.483_119_024_298_65,
    172.364_133_401_415_07,
    0.0,
];
/// Embedded fifth-order weights.
const RK_B5: [f64; 9] = [
    0.049_099_676_483_824_9,
    0.0,
    0.0,
    0.225_111_222_951_652_42,
    0.469_468_225_302_956_2,
    0.806_579_224_998_886_8,
    0.0,
    -0.607_119_489_177_796,
    0.056_861_139_440_475_696,
];

/// Options of [`integrate_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    /// Allowed relative energy drift.
    pub tol: f64,
    /// Output samples per decade of time on the geometric grid.
    pub samples_per_decade: usize,
    /// First positive output time; defaults to `horizon · 10⁻⁴`.
    pub first_sample: Option<f64>,
    /// Attempts with a ten times tighter local tolerance when the drift is
    /// above `tol`.
    pub max_retries: usize,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            samples_per_decade: 50,
            first_sample: None,
            max_retries: 4,
            max_steps: 20_000_000,
        }
    }
}

/// Output times: 0, then a geometric grid from `first` to `horizon`.
pub fn geometric_grid(first: f64, horizon: f64, per_decade: usize) -> Vec<f64> {
    let decades = (horizon / first).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    let mut t = vec![0.0];
    for k in 0..=n {
        let v = if k == n {
            horizon
        } else {
            first * 10f64.powf(decades * k as f64 / n as f64)
        };
        t.push(v);
    }
    t
}

struct Field<'a> {
    sys: &'a MassSystem,
    grad: Vec<f64>,
}

impl Field<'_> {
    /// `dy/dt` for `y = (x, v)`.
    fn eval(&mut self, y: &[f64], out: &mut [f64]) {
        let len = self.sys.len();
        let d = self.sys.dim();
        out[..len].copy_from_slice(&y[len..]);
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        add_potential_gradient(self.sys, &y[..len], 1.0, &mut self.grad);
        for (k, (o, g)) in out[len..].iter_mut().zip(&self.grad).enumerate() {
            *o = g / self.sys.mass(k / d);
        }
    }
}

fn energy(sys: &MassSystem, x: &[f64], v: &[f64]) -> (f64, f64) {
    (0.5 * mass_norm_sq(sys, v), potential_unchecked(sys, x))
}

/// Integrates from `(x0, v0)` at `t = 0` to `horizon` with energy drift at
/// most `tol` and default sampling.
pub fn integrate(
    sys: &MassSystem,
    x0: &Configuration,
    v0: &Configuration,
    horizon: f64,
    tol: f64,
) -> Result<Trajectory> {
    integrate_with(
        sys,
        x0,
        v0,
        horizon,
        &IntegrateOptions {
            tol,
            ..IntegrateOptions::default()
        },
    )
}

/// Integrates with explicit options. The local error tolerance starts at
/// `tol / 10` and is tightened tenfold while the energy drift exceeds `tol`.
pub fn integrate_with(
    sys: &MassSystem,
    x0: &Configuration,
    v0: &Configuration,
    horizon: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    sys.check(x0)?;
    sys.check(v0)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return usage(format!("horizon must be positive, got {horizon}"));
    }
    if !(opts.tol > 0.0) || opts.samples_per_decade == 0 {
        return usage("tolerance and samples per decade must be positive");
    }
    if !x0.is_finite() || !v0.is_finite() {
        return usage("initial data must be finite");
    }
    if sys.n_bodies() > 1 && min_pair_distance(sys.n_bodies(), sys.dim(), x0.as_slice()) == 0.0 {
        return Err(Error::EndpointCollision);
    }
    let first = opts.first_sample.unwrap_or(horizon * 1e-4);
    if !(first > 0.0 && first <= horizon) {
        return usage(format!(
            "first sample time must lie in (0, horizon], got {first}"
        ));
    }
    let grid = geometric_grid(first, horizon, opts.samples_per_decade);
    let mut local = opts.tol * 0.1;
    let mut attempt = 0;
    loop {
        let mut traj = run(sys, x0, v0, &grid, local, opts.max_steps);
        traj.stats.tol = opts.tol;
        if traj.stats.energy_drift <= opts.tol
            || traj.stats.close_encounter
            || attempt >= opts.max_retries
        {
            if traj.stats.energy_drift > opts.tol && traj.stats.diagnostic.is_none() {
                traj.stats.diagnostic = Some(format!(
                    "energy drift {:.3e} above tolerance {:.3e}",
                    traj.stats.energy_drift, opts.tol
                ));
            }
            return Ok(traj);
        }
        attempt += 1;
        local *= 0.1;
    }
}

fn run(
    sys: &MassSystem,
    x0: &Configuration,
    v0: &Configuration,
    grid: &[f64],
    tol: f64,
    max_steps: usize,
) -> Trajectory {
    let len = sys.len();
    let dim = 2 * len;
    let mut field = Field {
        sys,
        grad: vec![0.0; len],
    };
    let mut y: Vec<f64> = x0.as_slice().iter().chain(v0.as_slice()).copied().collect();
    let (t0e, u0e) = energy(sys, &y[..len], &y[len..]);
    let e0 = t0e - u0e;
    let escale = if t0e + u0e > 0.0 { t0e + u0e } else { 1.0 };

    let d = sys.dim();
    let split = |y: &[f64]| {
        (
            Configuration::new(d, y[..len].to_vec()).expect("dim ≥ 2"),
            Configuration::new(d, y[len..].to_vec()).expect("dim ≥ 2"),
        )
    };
    let (px, pv) = split(&y);
    let mut times = vec![0.0];
    let mut positions = vec![px];
    let mut velocities = vec![pv];
    let mut drift: f64 = 0.0;

    // initial step from the free-fall and crossing times of the closest pair
    let time_scale = if u0e > 0.0 {
        let r = min_pair_distance(sys.n_bodies(), d, &y[..len]);
        let free_fall = (r * r * r / (sys.grav_const() * sys.total_mass())).sqrt();
        let speed = (2.0 * t0e / sys.total_mass()).sqrt();
        if speed > 0.0 {
            free_fall.min(r / speed)
        } else {
            free_fall
        }
    } else {
        grid[grid.len() - 1]
    };
    let mut step = 1e-3 * time_scale * tol.powf(1.0 / 6.0);
    let mut k = vec![vec![0.0; dim]; 9];
    field.eval(&y, &mut k[0]);
    let mut stage = vec![0.0; dim];
    let mut y6 = vec![0.0; dim];
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut t = 0.0;
    let mut diagnostic = None;
    let mut close = false;

    'outer: for &target in &grid[1..] {
        while t < target {
            if accepted + rejected >= max_steps {
                diagnostic = Some(format!("step budget exhausted at t = {t:.6e}"));
                break 'outer;
            }
            let floor = 1e-13 * t.abs().max(time_scale);
            let last = target - t <= step;
            let hstep = if last { target - t } else { step };
            for s in 1..9 {
                for i in 0..dim {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += RK_A[s][j] * kj[i];
                    }
                    stage[i] = y[i] + hstep * acc;
                }
                field.eval(&stage, &mut k[s]);
            }
            // stage 9 was evaluated at y + h Σ b6 k, which is the new point
            y6.copy_from_slice(&stage);
            let mut err: f64 = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for (s, ks) in k.iter().enumerate() {
                    e += (RK_B6[s] - RK_B5[s]) * ks[i];
                }
                let sc = tol * (1.0 + y[i].abs().max(y6[i].abs()));
                err = err.max((hstep * e).abs() / sc);
            }
            if !err.is_finite() {
                err = 1e10;
            }
            if err <= 1.0 {
                t = if last { target } else { t + hstep };
                y.copy_from_slice(&y6);
                k.swap(0, 8);
                accepted += 1;
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-1.0 / 6.0)).min(5.0)
                };
                if !last || hstep >= step {
                    step = hstep * grow.max(1.0);
                }
            } else {
                rejected += 1;
                step = hstep * (0.9 * err.powf(-1.0 / 6.0)).max(0.2);
            }
            if step < floor {
                close = true;
                diagnostic = Some(format!(
                    "close encounter: step {step:.3e} below floor at t = {t:.6e}, min distance {:.3e}",
                    min_pair_distance(sys.n_bodies(), d, &y[..len])
                ));
                break 'outer;
            }
        }
        let (te, ue) = energy(sys, &y[..len], &y[len..]);
        drift = drift.max(((te - ue) - e0).abs() / escale);
        let (px, pv) = split(&y);
        times.push(target);
        positions.push(px);
        velocities.push(pv);
    }
    Trajectory {
        times,
        positions,
        velocities,
        stats: IntegratorStats {
            energy_drift: drift,
            tol: 0.0,
            local_tol: tol,
            accepted,
            rejected,
            close_encounter: close,
            diagnostic,
        },
    }
}

/// Initial data for integrating a computed path: its first node and the
/// difference quotient of its first segment.
pub fn flow_from_path(path: &DiscretePath) -> (Configuration, Configuration) {
    let t = path.times();
    let v = path.nodes()[1]
        .sub(&path.nodes()[0])
        .scaled(1.0 / (t[1] - t[0]));
    (path.first().clone(), v)
}

/// Least-squares power law `y ≈ c · t^p` fitted in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    pub exponent: f64,
    pub std_err: f64,
    pub prefactor: f64,
    pub samples: usize,
}

/// Fits `log y = log c + p log t`. Needs at least three points with `t, y > 0`.
pub fn power_fit(ts: &[f64], ys: &[f64]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(ys)
        .filter(|(t, y)| **t > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(t, y)| (t.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1 - icept - slope * p.0).powi(2))
        .sum();
    Some(PowerFit {
        exponent: slope,
        std_err: (ssr / (nf - 2.0) / sxx).sqrt(),
        prefactor: icept.exp(),
        samples: n,
    })
}

/// Fitted growth exponent of one mutual distance; `None` when indeterminate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairExponent {
    pub i: usize,
    pub j: usize,
    pub fit: Option<PowerFit>,
}

/// Exponents for all unordered pairs `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentTable {
    pub n_bodies: usize,
    pub pairs: Vec<PairExponent>,
    /// Window actually used, `[t_lo, t_hi]`.
    pub window: (f64, f64),
}

impl ExponentTable {
    /// Table from given exponents (standard error 0); `None` marks an
    /// indeterminate pair.
    pub fn from_exponents(n_bodies: usize, exps: &[((usize, usize), Option<f64>)]) -> Result<Self> {
        let mut pairs = Vec::new();
        for i in 0..n_bodies {
            for j in i + 1..n_bodies {
                let e = exps
                    .iter()
                    .find(|((a, b), _)| (*a, *b) == (i, j) || (*a, *b) == (j, i))
                    .ok_or_else(|| Error::Usage(format!("no exponent for pair ({i}, {j})")))?;
                pairs.push(PairExponent {
                    i,
                    j,
                    fit: e.1.map(|p| PowerFit {
                        exponent: p,
                        std_err: 0.0,
                        prefactor: 1.0,
                        samples: 0,
                    }),
                });
            }
        }
        Ok(Self {
            n_bodies,
            pairs,
            window: (f64::NAN, f64::NAN),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&PairExponent> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pairs.iter().find(|p| p.i == a && p.j == b)
    }
}

fn window_indices(traj: &Trajectory, lo: f64) -> Vec<usize> {
    (0..traj.len())
        .filter(|&k| traj.times[k] >= lo && traj.times[k] > 0.0)
        .collect()
}

/// Whether the positive sample times span at least two decades.
fn spans_two_decades(traj: &Trajectory) -> bool {
    let first = traj.times.iter().copied().find(|&t| t > 0.0);
    first.is_some_and(|f| traj.horizon() >= 100.0 * f)
}

/// Log-log slope of every `r_ij` over `[window · T, T]`.
///
/// Pairs are indeterminate when the positive sample times span less than two
/// decades or the window holds fewer than three samples.
pub fn fit_pair_exponents(traj: &Trajectory, window: f64) -> Result<ExponentTable> {
    if !(window > 0.0 && window < 1.0) {
        return usage(format!("window must lie in (0, 1), got {window}"));
    }
    let horizon = traj.horizon();
    let lo = window * horizon;
    let idx = window_indices(traj, lo);
    let ok = spans_two_decades(traj) && idx.len() >= 3;
    let ts: Vec<f64> = idx.iter().map(|&k| traj.times[k]).collect();
    let n = traj.n_bodies();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let fit = if ok {
                let rs: Vec<f64> = idx
                    .iter()
                    .map(|&k| traj.positions[k].distance(i, j))
                    .collect();
                power_fit(&ts, &rs)
            } else {
                None
            };
            pairs.push(PairExponent { i, j, fit });
        }
    }
    Ok(ExponentTable {
        n_bodies: n,
        pairs,
        window: (lo, horizon),
    })
}

/// Result of [`detect_partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionDetection {
    pub partition: ClusterPartition,
    /// The transitive closure related some pair with exponent `≥ 1 − δ`.
    pub inconsistent: bool,
    /// Pairs left out because their exponent is indeterminate.
    pub excluded: Vec<(usize, usize)>,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Relates `i ∼ j` when `p_ij ≤ 2/3 + δ` and returns the transitive closure.
pub fn detect_partition(table: &ExponentTable, delta: f64) -> Result<PartitionDetection> {
    if !(delta >= 0.0 && delta < 1.0 / 3.0) {
        return usage(format!("delta must lie in [0, 1/3), got {delta}"));
    }
    let n = table.n_bodies;
    let mut parent: Vec<usize> = (0..n).collect();
    let mut excluded = Vec::new();
    for p in &table.pairs {
        match p.fit {
            None => excluded.push((p.i, p.j)),
            Some(f) if f.exponent <= 2.0 / 3.0 + delta => {
                let (a, b) = (find(&mut parent, p.i), find(&mut parent, p.j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
            Some(_) => {}
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for r in 0..n {
        let c: Vec<usize> = (0..n).filter(|&i| roots[i] == r).collect();
        if !c.is_empty() {
            classes.push(c);
        }
    }
    let inconsistent = table
        .pairs
        .iter()
        .any(|p| roots[p.i] == roots[p.j] && p.fit.is_some_and(|f| f.exponent >= 1.0 - delta));
    Ok(PartitionDetection {
        partition: ClusterPartition::new(n, classes)?,
        inconsistent,
        excluded,
    })
}

/// Per-body drift velocity fitted over the last decade.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftFit {
    /// The configuration `a` of per-body velocities.
    pub drift: Configuration,
    /// Per body, the standard error of `a_i` (Euclidean over coordinates).
    pub std_err: Vec<f64>,
    /// RMS fit residual over RMS position, over the window.
    pub relative_residual: f64,
}

/// Fits `x_i(t) = c₋₁ t^{-1/3} + c₀ + c₁ t^{1/3} + c₂ t^{2/3} + a_i t` per body
/// and coordinate over `[window · T, T]` by linear least squares. The extra
/// powers absorb the `O(t^{2/3})` part of the expansion (and its first
/// correction) so that bodies of a parabolic cluster get the same `a`.
///
/// The reported standard error is the larger of the statistical one and the
/// change in `a` when refitting on the later half (in `log t`) of the window,
/// which catches model bias that the residuals do not show.
pub fn fit_drift(traj: &Trajectory, window: f64) -> Option<DriftFit> {
    let horizon = traj.horizon();
    let full = drift_least_squares(traj, window * horizon)?;
    let half = drift_least_squares(traj, window.sqrt() * horizon);
    let n = traj.n_bodies();
    let mut std_err = full.1;
    if let Some((h, _, _)) = &half {
        for (i, se) in std_err.iter_mut().enumerate() {
            let shift = full
                .0
                .point(i)
                .iter()
                .zip(h.point(i))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            *se = se.max(shift);
        }
    }
    let (drift, _, (ssr, norm, m)) = full;
    let scale = (0..n)
        .map(|i| drift.point(i).iter().map(|c| c * c).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        + (norm / m as f64).sqrt() / horizon;
    for s in &mut std_err {
        *s = s.max(1e-9 * scale);
    }
    Some(DriftFit {
        drift,
        std_err,
        relative_residual: if norm > 0.0 { (ssr / norm).sqrt() } else { 0.0 },
    })
}

type DriftParts = (Configuration, Vec<f64>, (f64, f64, usize));

fn drift_least_squares(traj: &Trajectory, lo: f64) -> Option<DriftParts> {
    const P: usize = 5;
    let horizon = traj.horizon();
    let idx = window_indices(traj, lo);
    let m = idx.len();
    if m < 2 * P {
        return None;
    }
    let mut basis = DMatrix::zeros(m, P);
    for (r, &k) in idx.iter().enumerate() {
        let s = (traj.times[k] / horizon).cbrt();
        for c in 0..P {
            basis[(r, c)] = s.powi(c as i32 - 1);
        }
    }
    let inv = (basis.transpose() * &basis).try_inverse()?;
    let (n, d) = (traj.n_bodies(), traj.dim());
    let mut drift = Configuration::zeros(n, d);
    let mut se = vec![0.0; n];
    let (mut ssr_all, mut norm_all) = (0.0, 0.0);
    for i in 0..n {
        let mut var_sum = 0.0;
        for c in 0..d {
            let y = DVector::from_iterator(m, idx.iter().map(|&k| traj.positions[k].point(i)[c]));
            let coef = &inv * (basis.transpose() * &y);
            let ssr = (&y - &basis * &coef).norm_squared();
            ssr_all += ssr;
            norm_all += y.norm_squared();
            drift.point_mut(i)[c] = coef[P - 1] / horizon;
            var_sum += ssr / (m - P) as f64 * inv[(P - 1, P - 1)] / (horizon * horizon);
        }
        se[i] = var_sum.sqrt();
    }
    Some((drift, se, (ssr_all, norm_all, m)))
}

/// Everything [`classify`] reports.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticsReport {
    pub exponents: ExponentTable,
    pub partition: ClusterPartition,
    pub inconsistent: bool,
    pub excluded_pairs: Vec<(usize, usize)>,
    /// `None` when the window is too short or the motion is superhyperbolic.
    pub drift: Option<DriftFit>,
    /// A drift fit exists and its relative residual is small.
    pub drift_conclusive: bool,
    pub superhyperbolic: Flag,
    /// Growth ratios of the windowed max of `R(t)/t`, oldest first.
    pub superhyperbolic_ratios: Vec<f64>,
    pub expansive: Flag,
    /// Per block of `partition`, the log-log slope of `U(ξ_A(t))`; `None` for
    /// singletons or too little data.
    pub cluster_potential_exponents: Vec<Option<PowerFit>>,
}

/// Dyadic windows `[T/2^{k+1}, T/2^k]`, `k = count−1, …, 0` (oldest first),
/// as sample index lists. `None` when some window is empty or reaches `t ≤ 0`.
fn dyadic_windows(traj: &Trajectory, count: usize) -> Option<Vec<Vec<usize>>> {
    let horizon = traj.horizon();
    let mut out = Vec::with_capacity(count);
    for k in (0..count).rev() {
        let hi = horizon / 2f64.powi(k as i32);
        let lo = hi / 2.0;
        let idx: Vec<usize> = (0..traj.len())
            .filter(|&s| traj.times[s] > 0.0 && traj.times[s] >= lo && traj.times[s] <= hi)
            .collect();
        if idx.is_empty() || traj.times.iter().all(|&t| t > lo || t <= 0.0) {
            return None;
        }
        out.push(idx);
    }
    Some(out)
}

fn superhyperbolic_flag(traj: &Trajectory) -> (Flag, Vec<f64>) {
    let n = traj.n_bodies();
    if n < 2 {
        return (Flag::Indeterminate, Vec::new());
    }
    let Some(windows) = dyadic_windows(traj, 4) else {
        return (Flag::Indeterminate, Vec::new());
    };
    let peaks: Vec<f64> = windows
        .iter()
        .map(|w| {
            w.iter()
                .map(|&k| {
                    let x = &traj.positions[k];
                    let mut r: f64 = 0.0;
                    for i in 0..n {
                        for j in i + 1..n {
                            r = r.max(x.distance(i, j));
                        }
                    }
                    r / traj.times[k]
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let ratios: Vec<f64> = peaks.windows(2).map(|p| p[1] / p[0]).collect();
    let flag = if ratios.iter().all(|&r| r >= SUPERHYPERBOLIC_RATIO) {
        Flag::Yes
    } else if ratios.iter().all(|&r| r < SUPERHYPERBOLIC_RATIO) {
        Flag::No
    } else {
        Flag::Indeterminate
    };
    (flag, ratios)
}

fn expansive_flag(traj: &Trajectory) -> Flag {
    let n = traj.n_bodies();
    if n < 2 {
        return Flag::Indeterminate;
    }
    let Some(windows) = dyadic_windows(traj, 4) else {
        return Flag::Indeterminate;
    };
    let mut all_increase = true;
    for i in 0..n {
        for j in i + 1..n {
            let means: Vec<f64> = windows
                .iter()
                .map(|w| {
                    w.iter()
                        .map(|&k| traj.positions[k].distance(i, j))
                        .sum::<f64>()
                        / w.len() as f64
                })
                .collect();
            if means.windows(2).any(|m| m[1] <= m[0] * (1.0 + GROWTH_FLOOR)) {
                all_increase = false;
            }
        }
    }
    let horizon = traj.horizon();
    let half = (0..traj.len())
        .min_by(|&a, &b| {
            (traj.times[a] - horizon / 2.0)
                .abs()
                .total_cmp(&(traj.times[b] - horizon / 2.0).abs())
        })
        .expect("nonempty");
    let d = traj.dim();
    let r_half = min_pair_distance(n, d, traj.positions[half].as_slice());
    let r_end = min_pair_distance(n, d, traj.positions[traj.len() - 1].as_slice());
    if !all_increase || r_end <= r_half * (1.0 + GROWTH_FLOOR) {
        Flag::No
    } else if r_end >= EXPANSIVE_RATIO * r_half {
        Flag::Yes
    } else {
        Flag::Indeterminate
    }
}

/// Classifies the tail of a trajectory. See the module docs for thresholds.
pub fn classify(sys: &MassSystem, traj: &Trajectory) -> Result<AsymptoticsReport> {
    traj.check(sys)?;
    let exponents = fit_pair_exponents(traj, DEFAULT_WINDOW)?;
    let det = detect_partition(&exponents, DEFAULT_DELTA)?;
    let (superhyperbolic, superhyperbolic_ratios) = superhyperbolic_flag(traj);
    // A superhyperbolic motion has no linear drift; a fit over one decade
    // can still look good, so none is reported.
    let drift = match superhyperbolic {
        Flag::Yes => None,
        _ => fit_drift(traj, DEFAULT_WINDOW),
    };
    let expansive = expansive_flag(traj);
    let drift_conclusive = drift
        .as_ref()
        .is_some_and(|f| f.relative_residual <= DRIFT_RESIDUAL_SMALL);

    let horizon = traj.horizon();
    let idx = window_indices(traj, DEFAULT_WINDOW * horizon);
    let ts: Vec<f64> = idx.iter().map(|&k| traj.times[k]).collect();
    let usable = spans_two_decades(traj);
    let cluster_potential_exponents = det
        .partition
        .classes()
        .iter()
        .map(|class| {
            if class.len() < 2 || !usable {
                return Ok(None);
            }
            let bsys = sys.subsystem(class)?;
            let us: Vec<f64> = idx
                .iter()
                .map(|&k| {
                    let x = &traj.positions[k];
                    let coords: Vec<f64> = class
                        .iter()
                        .flat_map(|&i| x.point(i).iter().copied())
                        .collect();
                    potential_unchecked(&bsys, &coords)
                })
                .collect();
            Ok(power_fit(&ts, &us))
        })
        .collect::<Result<_>>()?;

    Ok(AsymptoticsReport {
        exponents,
        partition: det.partition,
        inconsistent: det.inconsistent,
        excluded_pairs: det.excluded,
        drift,
        drift_conclusive,
        superhyperbolic,
        superhyperbolic_ratios,
        expansive,
        cluster_potential_exponents,
    })
}
