//! Upper and lower bounds on minimal actions.
//!
//! The constants in these bounds are only known to exist, so they are fitted
//! by domination over sampled minimizers ([`fit_phi_constants`],
//! [`fit_interaction_constants`]) and every fit carries a [`Provenance`]
//! record saying how it was obtained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::action::{action_unchecked, interaction_integral, DiscretePath};
use crate::error::{usage, Error, Result};
use crate::minimize::{
    minimize_fixed_time, minimize_free_time_from, phi_no_interaction, SolveOptions,
};
use crate::system::{
    mass_norm_unchecked, min_pair_distance, potential_unchecked, split_unchecked, ClusterPartition,
    Configuration, MassSystem,
};

/// How a set of constants was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// Short description of the sample source.
    pub source: String,
    pub samples: usize,
    pub dropped: usize,
    pub seed: Option<u64>,
    pub masses: Vec<f64>,
    pub grav_const: f64,
    pub dim: usize,
    pub holdout_samples: usize,
    pub holdout_dropped: usize,
    /// Largest ratio measured / bound over the held-out sample (≤ 1 when dominated).
    pub holdout_max_ratio: f64,
}

impl Provenance {
    /// Provenance of constants supplied by hand.
    pub fn manual() -> Self {
        Self {
            source: "manual".to_string(),
            samples: 0,
            dropped: 0,
            seed: None,
            masses: Vec::new(),
            grav_const: 0.0,
            dim: 0,
            holdout_samples: 0,
            holdout_dropped: 0,
            holdout_max_ratio: f64::NAN,
        }
    }
}

/// Constants of the bound `φ(x, y, τ) ≤ α r²/τ + β τ/r` for `r > ‖x − y‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiConstants {
    pub alpha: f64,
    pub beta: f64,
    pub provenance: Provenance,
}

impl PhiConstants {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("beta", beta)?;
        Ok(Self {
            alpha,
            beta,
            provenance: Provenance::manual(),
        })
    }
}

/// Constants of the interaction bound `I ≤ α₁ log(1 + β₁ τ/t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionConstants {
    pub alpha1: f64,
    pub beta1: f64,
    pub provenance: Provenance,
}

impl InteractionConstants {
    pub fn new(alpha1: f64, beta1: f64) -> Result<Self> {
        check_positive("alpha1", alpha1)?;
        check_positive("beta1", beta1)?;
        Ok(Self {
            alpha1,
            beta1,
            provenance: Provenance::manual(),
        })
    }
}

/// All four constants. The two pairs are fitted by different sweeps, hence
/// kept as separate records.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    pub phi: PhiConstants,
    pub interaction: InteractionConstants,
}

impl BoundConstants {
    pub fn new(alpha: f64, beta: f64, alpha1: f64, beta1: f64) -> Result<Self> {
        Ok(Self {
            phi: PhiConstants::new(alpha, beta)?,
            interaction: InteractionConstants::new(alpha1, beta1)?,
        })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        usage(format!("{name} must be positive and finite, got {v}"))
    }
}

/// `α r²/τ + β τ/r`.
pub fn phi_bound(c: &PhiConstants, r: f64, tau: f64) -> Result<f64> {
    check_positive("r", r)?;
    check_positive("tau", tau)?;
    Ok(c.alpha * r * r / tau + c.beta * tau / r)
}

/// `(2‖y − y'‖² + 4αR²)^{1/2} (h + β/R)^{1/2}`, valid for `R > R_z`.
///
/// `r_z` is the value returned by [`r_z`] for the same endpoints and partition.
pub fn no_interaction_bound(h: f64, c: &PhiConstants, y_dist: f64, big_r: f64, r_z: f64) -> Result<f64> {
    if !(h >= 0.0) || !h.is_finite() {
        return usage(format!(
            "energy level h must be finite and nonnegative, got {h}"
        ));
    }
    if !(y_dist >= 0.0) || !y_dist.is_finite() {
        return usage(format!("center distance must be nonnegative, got {y_dist}"));
    }
    check_positive("R", big_r)?;
    if big_r <= r_z {
        return Err(Error::Precondition(format!(
            "R = {big_r} must exceed R_z = {r_z}"
        )));
    }
    Ok(((2.0 * y_dist * y_dist + 4.0 * c.alpha * big_r * big_r) * (h + c.beta / big_r)).sqrt())
}

/// Largest block-relative displacement `‖z_A − z'_A‖`, each measured in the
/// mass norm of its own block. Zero when every block is a singleton.
pub fn r_z(
    sys: &MassSystem,
    x: &Configuration,
    x2: &Configuration,
    partition: &ClusterPartition,
) -> Result<f64> {
    sys.check(x)?;
    sys.check(x2)?;
    partition.check(sys)?;
    let a = split_unchecked(sys, x.as_slice(), partition);
    let b = split_unchecked(sys, x2.as_slice(), partition);
    let mut best: f64 = 0.0;
    for (k, class) in partition.classes().iter().enumerate() {
        let bsys = sys.subsystem(class)?;
        let dz = b.relatives[k].sub(&a.relatives[k]);
        best = best.max(mass_norm_unchecked(&bsys, dz.as_slice()));
    }
    Ok(best)
}

/// Distance between the block-center tuples of `x` and `x2` in the
/// block-mass norm.
pub fn center_distance(
    sys: &MassSystem,
    x: &Configuration,
    x2: &Configuration,
    partition: &ClusterPartition,
) -> Result<f64> {
    sys.check(x)?;
    sys.check(x2)?;
    partition.check(sys)?;
    let a = split_unchecked(sys, x.as_slice(), partition);
    let b = split_unchecked(sys, x2.as_slice(), partition);
    let dy = b.centers.sub(&a.centers);
    Ok(mass_norm_unchecked(
        &partition.center_system(sys),
        dy.as_slice(),
    ))
}

/// `α₁ log(1 + β₁ τ/t)`.
pub fn interaction_log_rhs(c: &InteractionConstants, t: f64, tau: f64) -> Result<f64> {
    check_positive("t", t)?;
    check_positive("tau", tau)?;
    Ok(c.alpha1 * (c.beta1 * tau / t).ln_1p())
}

/// Endpoint sampling for [`fit_phi_constants`].
///
/// Each sample draws two configurations independently: a radius uniformly in
/// `radius`, then bodies uniformly in the ball of that radius, redrawn until
/// every pair is at least `min_separation · radius` apart. The duration is
/// log-uniform in `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
    pub radius: (f64, f64),
    pub tau: (f64, f64),
    pub min_separation: f64,
    /// When set, the measured quantity is `Σ_A φ_A(z_A, z'_A, τ)` over the
    /// blocks with distance `R_z`; otherwise it is `φ(x, x', τ)` for the whole
    /// system with distance `‖x − x'‖`.
    pub partition: Option<ClusterPartition>,
    pub solve: SolveOptions,
}

impl SampleSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            radius: (0.5, 2.0),
            tau: (0.05, 50.0),
            min_separation: 0.25,
            partition: None,
            solve: SolveOptions::default(),
        }
    }

    fn validate(&self, sys: &MassSystem) -> Result<()> {
        if self.count == 0 {
            return Err(Error::FitRejected("empty sample".to_string()));
        }
        let (r0, r1) = self.radius;
        let (t0, t1) = self.tau;
        if !(r0 > 0.0 && r1 >= r0 && r1.is_finite()) {
            return usage(format!("invalid radius range ({r0}, {r1})"));
        }
        if !(t0 > 0.0 && t1 >= t0 && t1.is_finite()) {
            return usage(format!("invalid tau range ({t0}, {t1})"));
        }
        if !(self.min_separation >= 0.0 && self.min_separation < 1.0) {
            return usage("min_separation must lie in [0, 1)");
        }
        if let Some(p) = &self.partition {
            p.check(sys)?;
        }
        self.solve.validate()
    }
}

/// One measured point of a domination fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiSample {
    pub r: f64,
    pub tau: f64,
    pub value: f64,
}

/// Draws a configuration as described in [`SampleSpec`].
pub fn sample_configuration(
    rng: &mut impl Rng,
    n_bodies: usize,
    dim: usize,
    radius: (f64, f64),
    min_separation: f64,
) -> Configuration {
    let rho = if radius.1 > radius.0 {
        rng.gen_range(radius.0..radius.1)
    } else {
        radius.0
    };
    loop {
        let mut coords = Vec::with_capacity(n_bodies * dim);
        for _ in 0..n_bodies {
            let p = loop {
                let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if p.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                    break p;
                }
            };
            coords.extend(p.into_iter().map(|c| c * rho));
        }
        if n_bodies < 2 || min_pair_distance(n_bodies, dim, &coords) >= min_separation * rho {
            return Configuration::new(dim, coords).expect("dim ≥ 2");
        }
    }
}

fn measure_phi(sys: &MassSystem, spec: &SampleSpec, stream: u64) -> Result<Option<PhiSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let (n, d) = (sys.n_bodies(), sys.dim());
    let x = sample_configuration(&mut rng, n, d, spec.radius, spec.min_separation);
    let x2 = sample_configuration(&mut rng, n, d, spec.radius, spec.min_separation);
    let tau = (rng.gen_range(spec.tau.0.ln()..=spec.tau.1.ln())).exp();
    match &spec.partition {
        None => {
            let r = mass_norm_unchecked(sys, x2.sub(&x).as_slice());
            let m = minimize_fixed_time(sys, &x, &x2, tau, 0.0, &spec.solve)?;
            Ok((m.converged && m.value.is_finite()).then_some(PhiSample {
                r,
                tau,
                value: m.value,
            }))
        }
        Some(p) => {
            let r = r_z(sys, &x, &x2, p)?;
            let sa = split_unchecked(sys, x.as_slice(), p);
            let sb = split_unchecked(sys, x2.as_slice(), p);
            let mut value = 0.0;
            for (k, class) in p.classes().iter().enumerate() {
                if class.len() < 2 {
                    continue;
                }
                let bsys = sys.subsystem(class)?;
                let m = minimize_fixed_time(
                    &bsys,
                    &sa.relatives[k],
                    &sb.relatives[k],
                    tau,
                    0.0,
                    &spec.solve,
                )?;
                if !m.converged || !m.value.is_finite() {
                    return Ok(None);
                }
                value += m.value;
            }
            Ok(Some(PhiSample { r, tau, value }))
        }
    }
}

fn collect_samples(
    sys: &MassSystem,
    spec: &SampleSpec,
    first_stream: u64,
) -> Result<(Vec<PhiSample>, usize)> {
    let results: Vec<Result<Option<PhiSample>>> = (0..spec.count as u64)
        .into_par_iter()
        .map(|i| measure_phi(sys, spec, first_stream + i))
        .collect();
    let mut kept = Vec::with_capacity(spec.count);
    let mut dropped = 0;
    for r in results {
        match r? {
            Some(s) => kept.push(s),
            None => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

/// `inf_{r' > r} (α r'²/τ + β τ/r')`: the bound holds for every admissible
/// distance, so this is what a measured value must stay under.
pub fn admissible_phi_bound(alpha: f64, beta: f64, r: f64, tau: f64) -> f64 {
    let r_star = (beta * tau * tau / (2.0 * alpha)).cbrt();
    let rr = r_star.max(r);
    alpha * rr * rr / tau + beta * tau / rr
}

/// Smallest `α` with `α r'²/τ + β τ/r' ≥ v` for all `r' > r`.
fn alpha_required(v: f64, beta: f64, r: f64, tau: f64) -> f64 {
    // with s = 1/r': α ≥ τ (v s² − β τ s³) on (0, 1/r]
    let s_max = if r > 0.0 { 1.0 / r } else { f64::INFINITY };
    let s = if beta > 0.0 {
        (2.0 * v / (3.0 * beta * tau)).min(s_max)
    } else {
        s_max
    };
    (tau * (v * s * s - beta * tau * s * s * s)).max(0.0)
}

/// Headroom factor applied to measured values during fitting.
pub const FIT_HEADROOM: f64 = 1.1;

/// Log grid used for the constant search: `10^(k/20)`, `k = -120..=80`.
fn constant_grid() -> Vec<f64> {
    (-120..=80).map(|k| 10f64.powf(k as f64 / 20.0)).collect()
}

/// Grid pair `(α, β)` with the smallest `α + β` such that the bound dominates
/// `FIT_HEADROOM` times every sample. Samples with `r = 0` and value 0 carry
/// no constraint.
pub fn fit_domination(samples: &[PhiSample]) -> Result<(f64, f64)> {
    let grid = constant_grid();
    let mut best: Option<(f64, f64)> = None;
    for &beta in &grid {
        let need = samples
            .iter()
            .filter(|s| s.value > 0.0)
            .map(|s| {
                if s.r == 0.0 {
                    f64::INFINITY
                } else {
                    alpha_required(FIT_HEADROOM * s.value, beta, s.r, s.tau)
                }
            })
            .fold(0.0, f64::max);
        let Some(&alpha) = grid.iter().find(|&&a| a >= need) else {
            continue;
        };
        if best.is_none_or(|(a, b)| alpha + beta < a + b) {
            best = Some((alpha, beta));
        }
    }
    best.ok_or_else(|| Error::FitRejected("no grid pair dominates the sample".to_string()))
}

/// Fits `α, β` by domination over minimal actions on sampled endpoints, then
/// checks the fit against a held-out sample of the same size (drawn from
/// disjoint RNG streams).
///
/// Non-converged solves are dropped; more than 20% drops in either sample
/// rejects the fit, as does any held-out sample above the fitted bound.
pub fn fit_phi_constants(sys: &MassSystem, spec: &SampleSpec) -> Result<PhiConstants> {
    spec.validate(sys)?;
    let count = spec.count as u64;
    let (fit, dropped) = collect_samples(sys, spec, 0)?;
    check_drops("fit", dropped, spec.count)?;
    let (alpha, beta) = fit_domination(&fit)?;
    let (held, held_dropped) = collect_samples(sys, spec, count)?;
    check_drops("held-out", held_dropped, spec.count)?;
    let max_ratio = held
        .iter()
        .filter(|s| s.value > 0.0)
        .map(|s| s.value / admissible_phi_bound(alpha, beta, s.r, s.tau))
        .fold(0.0, f64::max);
    if max_ratio > 1.0 {
        return Err(Error::FitRejected(format!(
            "held-out sample exceeds the fitted bound by a factor {max_ratio:.4}"
        )));
    }
    let source = match &spec.partition {
        None => "fixed-time minima, whole system".to_string(),
        Some(p) => format!("fixed-time block minima, partition {:?}", p.classes()),
    };
    Ok(PhiConstants {
        alpha,
        beta,
        provenance: Provenance {
            source,
            samples: fit.len(),
            dropped,
            seed: Some(spec.seed),
            masses: sys.masses().to_vec(),
            grav_const: sys.grav_const(),
            dim: sys.dim(),
            holdout_samples: held.len(),
            holdout_dropped: held_dropped,
            holdout_max_ratio: max_ratio,
        },
    })
}

fn check_drops(which: &str, dropped: usize, count: usize) -> Result<()> {
    if 5 * dropped > count {
        Err(Error::FitRejected(format!(
            "{dropped} of {count} {which} solves did not converge"
        )))
    } else {
        Ok(())
    }
}

/// One point of an interaction fit: the no-interaction minimizer from
/// `γ(t)` to `γ(t + τ)` and its interaction integral.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSample {
    pub tau: f64,
    pub interaction: f64,
    pub no_interaction_value: f64,
    pub converged: bool,
}

/// Fits `α₁, β₁` so that `α₁ log(1 + β₁ τ/t)` dominates, with the usual
/// headroom, the interaction integral along the no-interaction minimizers
/// from `path(t)` to `path(t + τ)` for each `τ` in `taus`.
pub fn fit_interaction_constants(
    sys: &MassSystem,
    path: &DiscretePath,
    partition: &ClusterPartition,
    t: f64,
    taus: &[f64],
    h: f64,
    opts: &SolveOptions,
) -> Result<(InteractionConstants, Vec<InteractionSample>)> {
    path.check(sys)?;
    partition.check(sys)?;
    if taus.is_empty() {
        return Err(Error::FitRejected("empty sample".to_string()));
    }
    check_positive("t", t)?;
    let x = path.position_at(t);
    let results: Vec<Result<InteractionSample>> = taus
        .par_iter()
        .map(|&tau| {
            check_positive("tau", tau)?;
            if t < path.start_time() || t + tau > path.end_time() {
                return usage(format!(
                    "[{t}, {}] is outside the path span [{}, {}]",
                    t + tau,
                    path.start_time(),
                    path.end_time()
                ));
            }
            let x2 = path.position_at(t + tau);
            let ni = phi_no_interaction(sys, &x, &x2, partition, h, None, opts)?;
            Ok(InteractionSample {
                tau,
                interaction: interaction_integral(sys, &ni.path, partition)?,
                no_interaction_value: ni.value,
                converged: ni.converged,
            })
        })
        .collect();
    let samples: Vec<InteractionSample> = results.into_iter().collect::<Result<_>>()?;
    let dropped = samples
        .iter()
        .filter(|s| !s.converged || !s.interaction.is_finite())
        .count();
    check_drops("interaction", dropped, samples.len())?;
    let grid = constant_grid();
    let mut best: Option<(f64, f64)> = None;
    for &beta1 in &grid {
        let need = samples
            .iter()
            .filter(|s| s.converged && s.interaction.is_finite())
            .map(|s| FIT_HEADROOM * s.interaction / (beta1 * s.tau / t).ln_1p())
            .fold(0.0, f64::max);
        let Some(&alpha1) = grid.iter().find(|&&a| a >= need) else {
            continue;
        };
        if best.is_none_or(|(a, b)| alpha1 + beta1 < a + b) {
            best = Some((alpha1, beta1));
        }
    }
    let (alpha1, beta1) =
        best.ok_or_else(|| Error::FitRejected("no grid pair dominates the sample".to_string()))?;
    let constants = InteractionConstants {
        alpha1,
        beta1,
        provenance: Provenance {
            source: format!(
                "interaction along no-interaction minimizers from t = {t}, partition {:?}",
                partition.classes()
            ),
            samples: samples.len() - dropped,
            dropped,
            seed: None,
            masses: sys.masses().to_vec(),
            grav_const: sys.grav_const(),
            dim: sys.dim(),
            holdout_samples: 0,
            holdout_dropped: 0,
            holdout_max_ratio: f64::NAN,
        },
    };
    Ok((constants, samples))
}

/// Output of [`defect_lower_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct DefectReport {
    /// Action of the restricted path.
    pub action: f64,
    /// Free-time minimum between the restricted endpoints (an upper bound for
    /// `φ_h`, so `defect` below understates the true defect).
    pub phi_upper: f64,
    /// `action − phi_upper`.
    pub defect: f64,
    /// `τ · Σ_A min{U(ξ_A(t)), U(ξ_A(t + τ))}`.
    pub bound: f64,
    /// `defect − bound`; the remainder whose growth is compared with `τ^{1/3}`.
    pub residual: f64,
    pub converged: bool,
}

/// `Σ_A min{U(ξ_A(a)), U(ξ_A(b))}`, with `U` of each block evaluated on its
/// relative configuration (0 for singletons).
pub fn block_potential_floor(
    sys: &MassSystem,
    a: &Configuration,
    b: &Configuration,
    partition: &ClusterPartition,
) -> Result<f64> {
    sys.check(a)?;
    sys.check(b)?;
    partition.check(sys)?;
    let sa = split_unchecked(sys, a.as_slice(), partition);
    let sb = split_unchecked(sys, b.as_slice(), partition);
    let mut u = 0.0;
    for (k, class) in partition.classes().iter().enumerate() {
        if class.len() < 2 {
            continue;
        }
        let bsys = sys.subsystem(class)?;
        u += potential_unchecked(&bsys, sa.relatives[k].as_slice())
            .min(potential_unchecked(&bsys, sb.relatives[k].as_slice()));
    }
    Ok(u)
}

/// Compares the action defect of `path` on `[t, t + τ]` with
/// `τ · Σ_A min{U(ξ_A(t)), U(ξ_A(t + τ))}`.
///
/// The free-time minimum is warm started from the restricted path, so
/// `phi_upper ≤ action` and the reported defect is nonnegative up to round-off.
pub fn defect_lower_bound(
    sys: &MassSystem,
    path: &DiscretePath,
    t: f64,
    tau: f64,
    partition: &ClusterPartition,
    h: f64,
    opts: &SolveOptions,
) -> Result<DefectReport> {
    if !(h > 0.0) || !h.is_finite() {
        return usage(format!("the defect bound needs h > 0, got {h}"));
    }
    path.check(sys)?;
    partition.check(sys)?;
    let piece = path.restrict(t, tau)?;
    let action = action_unchecked(sys, &piece, h);
    let sol = minimize_free_time_from(sys, &piece, h, opts)?;
    let phi_upper = sol.value.min(action);
    let defect = action - phi_upper;
    let bound = tau * block_potential_floor(sys, piece.first(), piece.last(), partition)?;
    Ok(DefectReport {
        action,
        phi_upper,
        defect,
        bound,
        residual: defect - bound,
        converged: sol.converged(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(alpha: f64, beta: f64) -> PhiConstants {
        PhiConstants::new(alpha, beta).unwrap()
    }

    #[test]
    fn phi_bound_substitution() {
        assert!((phi_bound(&c(1.0, 1.0), 2.0, 1.0).unwrap() - 4.5).abs() < 1e-15);
        assert!((phi_bound(&c(2.0, 3.0), 1.0, 3.0).unwrap() - 29.0 / 3.0).abs() < 1e-14);
        assert!((phi_bound(&c(1.0, 1.0), 1.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(phi_bound(&c(1.0, 1.0), 0.0, 1.0).is_err());
        assert!(phi_bound(&c(1.0, 1.0), 1.0, -1.0).is_err());
    }

    #[test]
    fn phi_bound_first_order_condition() {
        let k = c(0.7, 1.9);
        let r: f64 = 2.3;
        let tau_star = r.powf(1.5) * (k.alpha / k.beta).sqrt();
        let e = 1e-5;
        let d = (phi_bound(&k, r, tau_star + e).unwrap()
            - phi_bound(&k, r, tau_star - e).unwrap())
            / (2.0 * e);
        assert!(d.abs() < 1e-8, "{d}");
    }

    #[test]
    fn no_interaction_bound_substitution() {
        let v = no_interaction_bound(0.0, &c(1.0, 1.0), 1.0, 1.0, 0.0).unwrap();
        assert!((v - 6f64.sqrt()).abs() < 1e-15);
        let v = no_interaction_bound(1.0, &c(1.0, 1e-300), 0.0, 1.0, 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!(matches!(
            no_interaction_bound(1.0, &c(1.0, 1.0), 1.0, 0.5, 0.5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn singleton_blocks_have_zero_r_z() {
        let sys = MassSystem::new(vec![1.0, 2.0, 3.0], 1.0, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let y = Configuration::from_points(&[[5.0, 1.0], [-1.0, 2.0], [0.0, 3.0]]).unwrap();
        assert_eq!(
            r_z(&sys, &x, &y, &ClusterPartition::singletons(3)).unwrap(),
            0.0
        );
        let p = ClusterPartition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        assert!(r_z(&sys, &x, &y, &p).unwrap() > 0.0);
    }

    #[test]
    fn r_z_ignores_block_translation() {
        let sys = MassSystem::unit(2, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = x.translated(&[3.0, -2.0]);
        let p = ClusterPartition::single_block(2);
        assert!(r_z(&sys, &x, &y, &p).unwrap() < 1e-15);
        assert!(
            (center_distance(&sys, &x, &y, &p).unwrap() - 2f64.sqrt() * 13f64.sqrt()).abs() < 1e-12
        );
    }

    #[test]
    fn interaction_log_substitution() {
        let k = InteractionConstants::new(1.0, 1.0).unwrap();
        assert!((interaction_log_rhs(&k, 1.0, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let k = InteractionConstants::new(2.0, 3.0).unwrap();
        assert!((interaction_log_rhs(&k, 2.0, 2.0).unwrap() - 2.0 * 4f64.ln()).abs() < 1e-14);
        assert!(interaction_log_rhs(&k, 1.0, 1e-300).unwrap() < 1e-290);
        assert!(interaction_log_rhs(&k, 0.0, 1.0).is_err());
    }

    #[test]
    fn evaluators_increase_with_constants() {
        for &(a, b) in &[(0.5, 0.5), (1.0, 2.0), (3.0, 0.1)] {
            let lo = c(a, b);
            let hi_a = c(a * 1.5, b);
            let hi_b = c(a, b * 1.5);
            for &r in &[0.3, 1.0, 4.0] {
                for &t in &[0.1, 1.0, 10.0] {
                    let base = phi_bound(&lo, r, t).unwrap();
                    assert!(phi_bound(&hi_a, r, t).unwrap() > base);
                    assert!(phi_bound(&hi_b, r, t).unwrap() > base);
                    let base = no_interaction_bound(0.5, &lo, r, t, 0.0).unwrap();
                    assert!(no_interaction_bound(0.5, &hi_a, r, t, 0.0).unwrap() > base);
                    assert!(no_interaction_bound(0.5, &hi_b, r, t, 0.0).unwrap() > base);
                    let il = InteractionConstants::new(a, b).unwrap();
                    let base = interaction_log_rhs(&il, r, t).unwrap();
                    let ia = InteractionConstants::new(a * 1.5, b).unwrap();
                    let ib = InteractionConstants::new(a, b * 1.5).unwrap();
                    assert!(interaction_log_rhs(&ia, r, t).unwrap() > base);
                    assert!(interaction_log_rhs(&ib, r, t).unwrap() > base);
                }
            }
        }
    }

    #[test]
    fn alpha_required_is_tight() {
        let (v, beta, r, tau) = (3.0, 0.4, 1.2, 0.9);
        let a = alpha_required(v, beta, r, tau);
        let inf = admissible_phi_bound(a, beta, r, tau);
        assert!((inf - v).abs() < 1e-12 * v, "{inf} vs {v}");
    }

    #[test]
    fn admissible_bound_is_an_infimum() {
        let (a, b, r, tau) = (0.3, 2.0, 0.5, 3.0);
        let inf = admissible_phi_bound(a, b, r, tau);
        for k in 0..2000 {
            let rr = r * (1.0 + k as f64 * 0.01);
            assert!(a * rr * rr / tau + b * tau / rr >= inf * (1.0 - 1e-14));
        }
    }

    #[test]
    fn one_body_fit_matches_closed_form() {
        // φ = r²/(2τ) exactly, so α lands on the first grid point above 0.55
        // and β at the grid floor
        let sys = MassSystem::new(vec![2.0], 1.0, 2).unwrap();
        let mut spec = SampleSpec::new(20, 3);
        spec.solve = spec.solve.with_segments(8);
        let k = fit_phi_constants(&sys, &spec).unwrap();
        assert!(
            k.alpha >= 0.55 && k.alpha < 0.55 * 10f64.powf(0.05),
            "{}",
            k.alpha
        );
        assert!(k.beta <= 1e-5, "{}", k.beta);
        assert_eq!(k.provenance.samples, 20);
        assert_eq!(k.provenance.seed, Some(3));
        assert!(k.provenance.holdout_max_ratio <= 1.0);
    }

    #[test]
    fn empty_sample_is_rejected() {
        let sys = MassSystem::unit(2, 2).unwrap();
        assert!(matches!(
            fit_phi_constants(&sys, &SampleSpec::new(0, 1)),
            Err(Error::FitRejected(_))
        ));
    }

    #[test]
    fn singleton_blocks_give_no_floor() {
        let sys = MassSystem::unit(2, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[0.0, 1.0], [2.0, 0.0]]).unwrap();
        let u = block_potential_floor(&sys, &x, &y, &ClusterPartition::singletons(2)).unwrap();
        assert_eq!(u, 0.0);
        let u = block_potential_floor(&sys, &x, &y, &ClusterPartition::single_block(2)).unwrap();
        assert!((u - 1.0 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn defect_needs_positive_h_and_span() {
        let sys = MassSystem::unit(2, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = Configuration::from_points(&[[0.0, 1.0], [2.0, 0.0]]).unwrap();
        let path = DiscretePath::straight(&x, &y, 1.0, 8).unwrap();
        let p = ClusterPartition::single_block(2);
        let o = SolveOptions::default().with_segments(8);
        assert!(defect_lower_bound(&sys, &path, 0.0, 0.5, &p, 0.0, &o).is_err());
        assert!(defect_lower_bound(&sys, &path, 0.75, 0.5, &p, 1.0, &o).is_err());
        let r = defect_lower_bound(&sys, &path, 0.25, 0.5, &p, 1.0, &o).unwrap();
        assert!(r.defect >= 0.0);
        assert!((r.residual - (r.defect - r.bound)).abs() < 1e-15);
    }
}
