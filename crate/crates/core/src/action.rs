//! Discretized Lagrangian action on piecewise-linear paths.
//!
//! A [`DiscretePath`] is a list of configurations on a strictly increasing time
//! grid, joined by straight segments. On a segment `[t_k, t_{k+1}]` the action
//! of `L + h = T + U + h` is
//!
//! ```text
//! ½‖x_{k+1} − x_k‖² / Δt  +  Δt/6 · (U(x_k) + 4 U(x_mid) + U(x_{k+1}))  +  h Δt
//! ```
//!
//! i.e. the kinetic part is exact for the linear segment and the potential is
//! integrated with Simpson's rule. All cluster-split quantities below use the
//! same per-segment rule, so the splitting identity holds to round-off.

use crate::error::{usage, Error, Result};
use crate::system::{
    mass_norm_sq, potential_filtered, potential_unchecked, split_unchecked, ClusterPartition,
    Configuration, MassSystem,
};

/// A time-gridded piecewise-linear curve in configuration space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    times: Vec<f64>,
    nodes: Vec<Configuration>,
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, nodes: Vec<Configuration>) -> Result<Self> {
        if times.len() < 2 {
            return usage("a path needs at least two nodes");
        }
        if times.len() != nodes.len() {
            return usage(format!("{} times but {} nodes", times.len(), nodes.len()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return usage("path times must be finite and strictly increasing");
        }
        let (n, d) = (nodes[0].n_bodies(), nodes[0].dim());
        for node in &nodes {
            if node.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: node.dim(),
                });
            }
            if node.n_bodies() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: node.n_bodies(),
                });
            }
        }
        Ok(Self { times, nodes })
    }

    /// Uniform grid of `nodes.len() − 1` segments on `[t0, t0 + tau]`.
    pub fn uniform(t0: f64, tau: f64, nodes: Vec<Configuration>) -> Result<Self> {
        if !(tau > 0.0) {
            return usage("duration must be positive");
        }
        let n = nodes.len().saturating_sub(1).max(1);
        let times = uniform_times(t0, tau, n);
        Self::new(times, nodes)
    }

    /// The straight segment from `a` to `b`, uniformly divided.
    pub fn straight(
        a: &Configuration,
        b: &Configuration,
        tau: f64,
        segments: usize,
    ) -> Result<Self> {
        if segments == 0 {
            return usage("need at least one segment");
        }
        if a.as_slice().len() != b.as_slice().len() || a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.as_slice().len(),
                got: b.as_slice().len(),
            });
        }
        let nodes = (0..=segments)
            .map(|k| Configuration::lerp(a, b, k as f64 / segments as f64))
            .collect();
        Self::uniform(0.0, tau, nodes)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[Configuration] {
        &self.nodes
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    pub fn first(&self) -> &Configuration {
        &self.nodes[0]
    }

    pub fn last(&self) -> &Configuration {
        self.nodes.last().unwrap()
    }

    pub fn n_bodies(&self) -> usize {
        self.nodes[0].n_bodies()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }

    /// Linear interpolation at time `t` (clamped to the path's span).
    pub fn position_at(&self, t: f64) -> Configuration {
        if t <= self.start_time() {
            return self.nodes[0].clone();
        }
        if t >= self.end_time() {
            return self.last().clone();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        Configuration::lerp(&self.nodes[k], &self.nodes[k + 1], s)
    }

    /// The same curve with its time axis affinely mapped onto `[0, tau]`.
    pub fn with_duration(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return usage("duration must be positive");
        }
        let t0 = self.start_time();
        let scale = tau / self.duration();
        let times = self.times.iter().map(|t| (t - t0) * scale).collect();
        Self::new(times, self.nodes.clone())
    }

    /// Resamples the curve on a uniform grid of `segments` segments over its span.
    pub fn resampled(&self, segments: usize) -> Result<Self> {
        if segments == 0 {
            return usage("need at least one segment");
        }
        let times = uniform_times(self.start_time(), self.duration(), segments);
        let mut nodes: Vec<Configuration> = times.iter().map(|&t| self.position_at(t)).collect();
        nodes[0] = self.first().clone();
        nodes[segments] = self.last().clone();
        Self::new(times, nodes)
    }

    /// The sub-arc on `[t, t + tau]`, with interpolated end nodes and every
    /// original node strictly inside.
    pub fn restrict(&self, t: f64, tau: f64) -> Result<Self> {
        let end = t + tau;
        let span_tol = 1e-12 * (1.0 + self.end_time().abs());
        if !(tau > 0.0) || t < self.start_time() - span_tol || end > self.end_time() + span_tol {
            return usage(format!(
                "restriction [{t}, {end}] is outside the path span [{}, {}]",
                self.start_time(),
                self.end_time()
            ));
        }
        let mut times = vec![t];
        let mut nodes = vec![self.position_at(t)];
        for (s, x) in self.times.iter().zip(&self.nodes) {
            if *s > t && *s < end {
                times.push(*s);
                nodes.push(x.clone());
            }
        }
        times.push(end);
        nodes.push(self.position_at(end));
        Self::new(times, nodes)
    }

    pub(crate) fn check(&self, sys: &MassSystem) -> Result<()> {
        sys.check(&self.nodes[0])
    }
}

pub(crate) fn uniform_times(t0: f64, tau: f64, segments: usize) -> Vec<f64> {
    let mut times: Vec<f64> = (0..=segments)
        .map(|k| t0 + tau * k as f64 / segments as f64)
        .collect();
    times[segments] = t0 + tau;
    times
}

fn check_h(h: f64) -> Result<()> {
    if !(h >= 0.0) || !h.is_finite() {
        return usage(format!(
            "energy level h must be finite and nonnegative, got {h}"
        ));
    }
    Ok(())
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect()
}

fn difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter().zip(a).map(|(p, q)| p - q).collect()
}

fn simpson(f: impl Fn(&[f64]) -> f64, a: &[f64], b: &[f64], dt: f64) -> f64 {
    let mid = midpoint(a, b);
    dt / 6.0 * (f(a) + 4.0 * f(&mid) + f(b))
}

/// The discrete action `A_{L+h}` of a path, or `f64::INFINITY` if a
/// quadrature node is a collision.
pub fn action(sys: &MassSystem, path: &DiscretePath, h: f64) -> Result<f64> {
    check_h(h)?;
    path.check(sys)?;
    Ok(action_unchecked(sys, path, h))
}

pub(crate) fn action_unchecked(sys: &MassSystem, path: &DiscretePath, h: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..path.segments() {
        let dt = path.times[k + 1] - path.times[k];
        let a = path.nodes[k].as_slice();
        let b = path.nodes[k + 1].as_slice();
        let dx = difference(a, b);
        total += 0.5 * mass_norm_sq(sys, &dx) / dt
            + simpson(|x| potential_unchecked(sys, x), a, b, dt)
            + h * dt;
    }
    total
}

/// The action split along a cluster partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSplit {
    /// `h τ`.
    pub h_term: f64,
    /// Kinetic action of the curve of block centers.
    pub center_kinetic: f64,
    /// Per block, the action of its relative motion under its own internal Lagrangian.
    pub cluster_actions: Vec<f64>,
    /// Time integral of the cross-block potential.
    pub interaction: f64,
    pub total: f64,
}

impl ActionSplit {
    /// The action with the interaction term removed.
    pub fn without_interaction(&self) -> f64 {
        self.h_term + self.center_kinetic + self.cluster_actions.iter().sum::<f64>()
    }
}

/// Evaluates every term of the cluster splitting of the action.
pub fn split_action(
    sys: &MassSystem,
    path: &DiscretePath,
    partition: &ClusterPartition,
    h: f64,
) -> Result<ActionSplit> {
    check_h(h)?;
    path.check(sys)?;
    partition.check(sys)?;
    let centers_sys = partition.center_system(sys);
    let block_sys: Vec<MassSystem> = partition
        .classes()
        .iter()
        .map(|c| sys.subsystem(c))
        .collect::<Result<_>>()?;

    let splits: Vec<_> = path
        .nodes
        .iter()
        .map(|x| split_unchecked(sys, x.as_slice(), partition))
        .collect();

    let mut center_kinetic = 0.0;
    let mut cluster_actions = vec![0.0; partition.n_blocks()];
    let mut interaction = 0.0;
    for k in 0..path.segments() {
        let dt = path.times[k + 1] - path.times[k];
        let (sa, sb) = (&splits[k], &splits[k + 1]);
        let dy = difference(sa.centers.as_slice(), sb.centers.as_slice());
        center_kinetic += 0.5 * mass_norm_sq(&centers_sys, &dy) / dt;
        for (blk, bsys) in block_sys.iter().enumerate() {
            let za = sa.relatives[blk].as_slice();
            let zb = sb.relatives[blk].as_slice();
            let dz = difference(za, zb);
            cluster_actions[blk] += 0.5 * mass_norm_sq(bsys, &dz) / dt
                + simpson(|z| potential_unchecked(bsys, z), za, zb, dt);
        }
        interaction += simpson(
            |x| potential_filtered(sys, x, |i, j| !partition.same_block(i, j)),
            path.nodes[k].as_slice(),
            path.nodes[k + 1].as_slice(),
            dt,
        );
    }
    let h_term = h * path.duration();
    let total = h_term + center_kinetic + cluster_actions.iter().sum::<f64>() + interaction;
    Ok(ActionSplit {
        h_term,
        center_kinetic,
        cluster_actions,
        interaction,
        total,
    })
}

/// `∫ Σ_{i,j in different blocks} G m_i m_j / r_ij dt` along the path.
pub fn interaction_integral(
    sys: &MassSystem,
    path: &DiscretePath,
    partition: &ClusterPartition,
) -> Result<f64> {
    path.check(sys)?;
    partition.check(sys)?;
    let mut total = 0.0;
    for k in 0..path.segments() {
        let dt = path.times[k + 1] - path.times[k];
        total += simpson(
            |x| potential_filtered(sys, x, |i, j| !partition.same_block(i, j)),
            path.nodes[k].as_slice(),
            path.nodes[k + 1].as_slice(),
            dt,
        );
    }
    Ok(total)
}

/// Energy `½‖v‖² − U` sampled at segment midpoints, with the segment's constant velocity.
pub fn energy_profile(sys: &MassSystem, path: &DiscretePath) -> Result<Vec<(f64, f64)>> {
    path.check(sys)?;
    Ok((0..path.segments())
        .map(|k| {
            let dt = path.times[k + 1] - path.times[k];
            let a = path.nodes[k].as_slice();
            let b = path.nodes[k + 1].as_slice();
            let v: Vec<f64> = difference(a, b).into_iter().map(|c| c / dt).collect();
            let mid = midpoint(a, b);
            let t = 0.5 * (path.times[k] + path.times[k + 1]);
            (
                t,
                0.5 * mass_norm_sq(sys, &v) - potential_unchecked(sys, &mid),
            )
        })
        .collect())
}

/// `max_k |E(t_k+½) − h|`.
pub fn max_energy_deviation(sys: &MassSystem, path: &DiscretePath, h: f64) -> Result<f64> {
    Ok(energy_profile(sys, path)?
        .into_iter()
        .map(|(_, e)| (e - h).abs())
        .fold(0.0, f64::max))
}
