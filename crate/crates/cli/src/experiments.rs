//! Batch experiments shared by the `sweep` and `verify-bounds` commands.
//!
//! Every instance draws from its own ChaCha stream of the run seed, so results
//! do not depend on scheduling and instances run in parallel.

use nbody_core::action::max_energy_deviation;
use nbody_core::bounds::{
    center_distance, no_interaction_bound, r_z, sample_configuration, PhiConstants,
};
use nbody_core::minimize::{minimize_free_time_from, path_interior_margin};
use nbody_core::{
    action, interaction_integral, minimize_free_time, phi_no_interaction, ClusterPartition,
    Configuration, MassSystem, Result, SolveOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Stream offsets keeping the experiments' draws apart from the fitting
/// sweep (which uses streams `0..2·count`).
const NO_INTERACTION_STREAMS: u64 = 1 << 32;
const CHAIN_STREAMS: u64 = 2 << 32;
const SWEEP_STREAMS: u64 = 3 << 32;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Parameters of the energy sweep.
#[derive(Debug, Clone)]
pub struct SweepParams {
    pub count: usize,
    pub h_values: Vec<f64>,
    pub bodies: (usize, usize),
    pub ring_radius: f64,
    pub displacement: f64,
    pub mass_range: (f64, f64),
    pub refine_segments: usize,
    pub grav_const: f64,
    pub dim: usize,
    pub seed: u64,
}

impl SweepParams {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            h_values: vec![0.1, 1.0, 10.0],
            bodies: (2, 4),
            ring_radius: 3.0,
            displacement: 2.0,
            mass_range: (0.5, 1.5),
            refine_segments: 256,
            grav_const: 1.0,
            dim: 2,
            seed,
        }
    }
}

/// One free-time solve of the sweep and its refinement.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub instance: usize,
    pub n_bodies: usize,
    pub h: f64,
    pub converged: bool,
    pub tau: f64,
    pub value: f64,
    /// `max |E − h|` at the base resolution.
    pub energy_dev: f64,
    /// The same after re-solving at `refine_segments`.
    pub energy_dev_fine: f64,
    pub fine_converged: bool,
    pub interior_margin: f64,
    pub collision_floor: f64,
}

impl SweepRow {
    pub fn reduction(&self) -> f64 {
        self.energy_dev / self.energy_dev_fine
    }
}

/// Endpoints of sweep instance `i`: bodies near a ring, each displaced by up
/// to `displacement` per coordinate.
pub fn sweep_instance(
    p: &SweepParams,
    i: usize,
) -> Result<(MassSystem, Configuration, Configuration, f64)> {
    let mut r = rng(p.seed, SWEEP_STREAMS + i as u64);
    let h = p.h_values[i % p.h_values.len()];
    let span = p.bodies.1 - p.bodies.0 + 1;
    let n = p.bodies.0 + (i / p.h_values.len()) % span;
    let masses: Vec<f64> = (0..n)
        .map(|_| {
            if p.mass_range.1 > p.mass_range.0 {
                r.gen_range(p.mass_range.0..p.mass_range.1)
            } else {
                p.mass_range.0
            }
        })
        .collect();
    let sys = MassSystem::new(masses, p.grav_const, p.dim)?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for k in 0..n {
        let ang = std::f64::consts::TAU * (k as f64 + 0.3 * r.gen::<f64>()) / n as f64;
        let mut a = vec![0.0; p.dim];
        a[0] = p.ring_radius * ang.cos();
        a[1] = p.ring_radius * ang.sin();
        let b: Vec<f64> = a
            .iter()
            .map(|c| c + p.displacement * (2.0 * r.gen::<f64>() - 1.0))
            .collect();
        x.push(a);
        y.push(b);
    }
    Ok((
        sys,
        Configuration::from_points(&x)?,
        Configuration::from_points(&y)?,
        h,
    ))
}

/// Runs the sweep: a free-time solve per instance, then a warm-started
/// re-solve at `refine_segments` to measure how the energy error shrinks.
pub fn energy_sweep(p: &SweepParams, opts: &SolveOptions) -> Result<Vec<SweepRow>> {
    (0..p.count)
        .into_par_iter()
        .map(|i| {
            let (sys, x, y, h) = sweep_instance(p, i)?;
            let o = opts.clone().with_seed(opts.seed.wrapping_add(i as u64));
            let sol = minimize_free_time(&sys, &x, &y, h, &o)?;
            let mut row = SweepRow {
                instance: i,
                n_bodies: sys.n_bodies(),
                h,
                converged: sol.converged(),
                tau: sol.tau().unwrap_or(f64::NAN),
                value: sol.value,
                energy_dev: f64::NAN,
                energy_dev_fine: f64::NAN,
                fine_converged: false,
                interior_margin: f64::NAN,
                collision_floor: f64::NAN,
            };
            if let Some(b) = &sol.best {
                row.energy_dev = max_energy_deviation(&sys, &b.path, h)?;
                row.interior_margin = path_interior_margin(&b.path);
                row.collision_floor = b.collision_floor;
                let fine =
                    minimize_free_time_from(&sys, &b.path, h, &o.clone().with_segments(p.refine_segments))?;
                row.fine_converged = fine.converged();
                if let Some(fb) = &fine.best {
                    row.energy_dev_fine = max_energy_deviation(&sys, &fb.path, h)?;
                }
            }
            Ok(row)
        })
        .collect()
}

/// Parameters shared by the no-interaction and chain checks.
#[derive(Debug, Clone)]
pub struct BoundCheckParams {
    pub count: usize,
    pub seed: u64,
    pub h_range: (f64, f64),
    pub radius: (f64, f64),
    pub min_separation: f64,
    /// Number of `R` values on `(R_z, 10 R_z + 1]`.
    pub r_grid: usize,
}

/// One held-out sample of the no-interaction check.
#[derive(Debug, Clone)]
pub struct NoInteractionRow {
    pub sample: usize,
    pub h: f64,
    pub r_z: f64,
    pub y_dist: f64,
    pub phi_no_interaction: f64,
    pub converged: bool,
    /// Smallest right-hand side over the `R` grid.
    pub min_rhs: f64,
}

impl NoInteractionRow {
    pub fn holds(&self) -> bool {
        self.phi_no_interaction <= self.min_rhs
    }
}

fn draw_pair(r: &mut ChaCha8Rng, sys: &MassSystem, p: &BoundCheckParams) -> (Configuration, Configuration, f64) {
    let x = sample_configuration(r, sys.n_bodies(), sys.dim(), p.radius, p.min_separation);
    let y = sample_configuration(r, sys.n_bodies(), sys.dim(), p.radius, p.min_separation);
    let h = if p.h_range.1 > p.h_range.0 {
        r.gen_range(p.h_range.0..p.h_range.1)
    } else {
        p.h_range.0
    };
    (x, y, h)
}

/// Compares the computed `φ_{h,I=0}(x, x')` with the no-interaction bound at every
/// admissible `R` of the grid, on samples independent of the fit.
pub fn no_interaction_check(
    sys: &MassSystem,
    constants: &PhiConstants,
    partition: &ClusterPartition,
    p: &BoundCheckParams,
    opts: &SolveOptions,
) -> Result<Vec<NoInteractionRow>> {
    (0..p.count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(p.seed, NO_INTERACTION_STREAMS + i as u64);
            let (x, y, h) = draw_pair(&mut r, sys, p);
            let ni = phi_no_interaction(sys, &x, &y, partition, h, None, opts)?;
            let rz = r_z(sys, &x, &y, partition)?;
            let yd = center_distance(sys, &x, &y, partition)?;
            let mut min_rhs = f64::INFINITY;
            for j in 1..=p.r_grid {
                let big_r = rz + (9.0 * rz + 1.0) * j as f64 / p.r_grid as f64;
                min_rhs = min_rhs.min(no_interaction_bound(h, constants, yd, big_r, rz)?);
            }
            Ok(NoInteractionRow {
                sample: i,
                h,
                r_z: rz,
                y_dist: yd,
                phi_no_interaction: ni.value,
                converged: ni.converged,
                min_rhs,
            })
        })
        .collect()
}

/// One instance of the comparison chain
/// `φ_h(x, x') ≤ φ_{h,I=0}(x, x') + I(γ̃)`.
#[derive(Debug, Clone)]
pub struct ChainRow {
    pub instance: usize,
    pub h: f64,
    pub no_interaction: f64,
    pub interaction: f64,
    /// `action(γ̃) − (no_interaction + interaction)`: zero up to round-off.
    pub splitting_gap: f64,
    /// Free-time minimum of the full action, warm started from `γ̃`.
    pub phi_upper: f64,
    pub converged: bool,
}

impl ChainRow {
    pub fn rhs(&self) -> f64 {
        self.no_interaction + self.interaction
    }

    pub fn holds(&self, rel_tol: f64) -> bool {
        self.phi_upper <= self.rhs() + rel_tol * (1.0 + self.rhs().abs())
    }
}

/// Runs the comparison chain on random instances.
pub fn chain_check(
    sys: &MassSystem,
    partition: &ClusterPartition,
    p: &BoundCheckParams,
    opts: &SolveOptions,
) -> Result<Vec<ChainRow>> {
    (0..p.count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(p.seed, CHAIN_STREAMS + i as u64);
            let (x, y, h) = draw_pair(&mut r, sys, p);
            let ni = phi_no_interaction(sys, &x, &y, partition, h, None, opts)?;
            let inter = interaction_integral(sys, &ni.path, partition)?;
            let full_action = action(sys, &ni.path, h)?;
            let full = minimize_free_time_from(sys, &ni.path, h, opts)?;
            Ok(ChainRow {
                instance: i,
                h,
                no_interaction: ni.value,
                interaction: inter,
                splitting_gap: full_action - (ni.value + inter),
                phi_upper: full.value,
                converged: ni.converged && full.converged(),
            })
        })
        .collect()
}
