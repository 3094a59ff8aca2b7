//! Command execution. Each command fills the summary, returns its files, and
//! reports non-convergence separately so that outputs are still written.

use std::fmt::Write as _;

use nbody_core::action::max_energy_deviation;
use nbody_core::bounds::{fit_phi_constants, PhiConstants, Provenance, SampleSpec};
use nbody_core::dynamics::{classify, flow_from_path, integrate_with, AsymptoticsReport, Trajectory};
use nbody_core::minimize::path_interior_margin;
use nbody_core::{
    minimize_fixed_time, minimize_free_time, ClusterPartition, Configuration, Error, MassSystem,
    MinimizeResult,
};

use crate::experiments::{
    chain_check, energy_sweep, no_interaction_check, BoundCheckParams, SweepParams,
};
use crate::report::{load_path, load_trajectory, num, path_csv, traj_csv, Artifacts, Summary};
use crate::spec::{configuration, ExperimentSpec, Payload};
use crate::CliError;

type Outcome = Result<(), CliError>;

pub(crate) fn execute(
    spec: &ExperimentSpec,
    summary: &mut Summary,
) -> Result<(Artifacts, Outcome), CliError> {
    let mut files = Artifacts::default();
    let outcome = match &spec.payload {
        Payload::Minimize(p) => {
            let sys = system(spec);
            let (x, y) = (configuration(&p.start), configuration(&p.end));
            minimize(spec, sys, &x, &y, p.h, p.tau, summary, &mut files)?
        }
        Payload::Flow(p) => {
            let sys = system(spec);
            let (x, v) = initial_data(spec, &p.start, &p.velocity, &p.path)?;
            let traj = integrate_with(sys, &x, &v, p.horizon, &spec.integrate)?;
            files.add("traj.csv", traj_csv(&traj));
            integration_summary(&traj, summary)
        }
        Payload::Classify(p) => {
            let sys = system(spec);
            let (traj, outcome) = match &p.trajectory {
                Some(f) => {
                    let traj = load_trajectory(&spec.resolve(f))?;
                    summary.put("source", "file");
                    (traj, Ok(()))
                }
                None => {
                    let (x, v) = initial_data(spec, &p.start, &p.velocity, &p.path)?;
                    let horizon = p.horizon.expect("validated");
                    let traj = integrate_with(sys, &x, &v, horizon, &spec.integrate)?;
                    files.add("traj.csv", traj_csv(&traj));
                    summary.put("source", "integrated");
                    let outcome = integration_summary(&traj, summary);
                    (traj, outcome)
                }
            };
            let report = classify(sys, &traj)?;
            classification_summary(&report, summary);
            outcome
        }
        Payload::FitBounds(p) => {
            let sys = system(spec);
            let mut s = SampleSpec::new(p.samples, spec.seed);
            if let Some([a, b]) = p.radius {
                s.radius = (a, b);
            }
            if let Some([a, b]) = p.tau {
                s.tau = (a, b);
            }
            if let Some(m) = p.min_separation {
                s.min_separation = m;
            }
            if let Some(c) = &p.partition {
                s.partition = Some(ClusterPartition::new(sys.n_bodies(), c.clone())?);
            }
            s.solve = spec.solve.clone();
            match fit_phi_constants(sys, &s) {
                Ok(k) => {
                    constants_summary(&k, summary);
                    Ok(())
                }
                Err(Error::FitRejected(m)) => {
                    summary.put("fit_rejected", &m);
                    Err(CliError::NonConvergence(format!("fit rejected: {m}")))
                }
                Err(e) => return Err(e.into()),
            }
        }
        Payload::VerifyBounds(p) => {
            let sys = system(spec);
            let partition = ClusterPartition::new(sys.n_bodies(), p.partition.clone())?;
            let radius = p.radius.map_or((0.5, 2.0), |[a, b]| (a, b));
            let min_sep = p.min_separation.unwrap_or(0.25);
            let constants = match (p.alpha, p.beta) {
                (Some(a), Some(b)) => PhiConstants::new(a, b)?,
                _ => {
                    let mut s = SampleSpec::new(p.samples, spec.seed);
                    s.radius = radius;
                    s.min_separation = min_sep;
                    if let Some([a, b]) = p.tau {
                        s.tau = (a, b);
                    }
                    s.partition = Some(partition.clone());
                    s.solve = spec.solve.clone();
                    match fit_phi_constants(sys, &s) {
                        Ok(k) => k,
                        Err(Error::FitRejected(m)) => {
                            summary.put("fit_rejected", &m);
                            return Ok((
                                files,
                                Err(CliError::NonConvergence(format!("fit rejected: {m}"))),
                            ));
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            constants_summary(&constants, summary);
            let params = BoundCheckParams {
                count: p.holdout.unwrap_or(p.samples.max(1)),
                seed: spec.seed,
                h_range: p.h_range.map_or((0.0, 2.0), |[a, b]| (a, b)),
                radius,
                min_separation: min_sep,
                r_grid: p.r_grid.unwrap_or(20).max(1),
            };
            let no_interaction = no_interaction_check(sys, &constants, &partition, &params, &spec.solve)?;
            let chain = chain_check(
                sys,
                &partition,
                &BoundCheckParams {
                    count: p.chain_instances.unwrap_or(30),
                    ..params.clone()
                },
                &spec.solve,
            )?;
            verification_outputs(&no_interaction, &chain, summary, &mut files)
        }
        Payload::Sweep(p) => {
            let mut params = SweepParams::new(p.count, spec.seed);
            params.h_values = p.h_values.clone();
            params.bodies = (p.bodies[0], p.bodies[1]);
            if let Some(r) = p.ring_radius {
                params.ring_radius = r;
            }
            if let Some(d) = p.displacement {
                params.displacement = d;
            }
            if let Some([a, b]) = p.mass_range {
                params.mass_range = (a, b);
            }
            if let Some(s) = p.refine_segments {
                params.refine_segments = s;
            }
            params.grav_const = spec.grav_const;
            params.dim = spec.dim;
            let rows = energy_sweep(&params, &spec.solve)?;
            sweep_outputs(&rows, &params, summary, &mut files)
        }
    };
    Ok((files, outcome))
}

fn system(spec: &ExperimentSpec) -> &MassSystem {
    spec.system.as_ref().expect("validated: only sweep lacks masses")
}

fn initial_data(
    spec: &ExperimentSpec,
    start: &Option<Vec<Vec<f64>>>,
    velocity: &Option<Vec<Vec<f64>>>,
    path: &Option<String>,
) -> Result<(Configuration, Configuration), CliError> {
    match (start, velocity, path) {
        (Some(x), Some(v), _) => Ok((configuration(x), configuration(v))),
        (_, _, Some(f)) => {
            let p = load_path(&spec.resolve(f))?;
            let sys = system(spec);
            if p.n_bodies() != sys.n_bodies() || p.dim() != sys.dim() {
                return Err(CliError::Spec(format!(
                    "{f}: path has {} bodies in dimension {}, system has {} in {}",
                    p.n_bodies(),
                    p.dim(),
                    sys.n_bodies(),
                    sys.dim()
                )));
            }
            Ok(flow_from_path(&p))
        }
        _ => unreachable!("validated initial data"),
    }
}

#[allow(clippy::too_many_arguments)]
fn minimize(
    spec: &ExperimentSpec,
    sys: &MassSystem,
    x: &Configuration,
    y: &Configuration,
    h: f64,
    tau: Option<f64>,
    summary: &mut Summary,
    files: &mut Artifacts,
) -> Result<Outcome, CliError> {
    summary.put("n_bodies", sys.n_bodies());
    summary.put("dim", sys.dim());
    summary.put_num("h", h);
    summary.put("segments", spec.solve.segments);
    let result_fields = |r: &MinimizeResult, summary: &mut Summary| -> Result<(), CliError> {
        summary.put_num("value", r.value);
        summary.put_num("tau", r.tau);
        summary.put_num("grad_norm", r.grad_norm);
        summary.put("converged", r.converged);
        summary.put("iterations", r.iterations);
        summary.put_num("interior_min_distance", path_interior_margin(&r.path));
        summary.put_num("collision_floor", r.collision_floor);
        summary.put_num("max_energy_deviation", max_energy_deviation(sys, &r.path, h)?);
        Ok(())
    };
    match tau {
        Some(t) => {
            summary.put("mode", "fixed");
            let r = minimize_fixed_time(sys, x, y, t, h, &spec.solve)?;
            result_fields(&r, summary)?;
            files.add("path.csv", path_csv(&r.path));
            Ok(if r.converged {
                Ok(())
            } else {
                Err(CliError::NonConvergence(format!(
                    "fixed-time descent stopped with gradient norm {:.3e}",
                    r.grad_norm
                )))
            })
        }
        None => {
            summary.put("mode", "free");
            let sol = minimize_free_time(sys, x, y, h, &spec.solve)?;
            summary.put("outcome", format!("{:?}", sol.outcome));
            summary.put("probes", sol.trace.len());
            if let Some(d) = &sol.diagnostic {
                summary.put("diagnostic", d);
            }
            match &sol.best {
                Some(b) => {
                    result_fields(b, summary)?;
                    files.add("path.csv", path_csv(&b.path));
                }
                None => summary.put_num("value", sol.value),
            }
            let mut trace = String::from("tau,value,converged\n");
            for p in &sol.trace {
                let _ = writeln!(trace, "{},{},{}", num(p.tau), num(p.value), p.converged);
            }
            files.add("trace.csv", trace);
            Ok(if sol.converged() {
                Ok(())
            } else {
                Err(CliError::NonConvergence(
                    sol.diagnostic.unwrap_or_else(|| "free-time search did not converge".into()),
                ))
            })
        }
    }
}

fn integration_summary(traj: &Trajectory, summary: &mut Summary) -> Outcome {
    let s = &traj.stats;
    summary.put_num("horizon", traj.horizon());
    summary.put("samples", traj.len());
    summary.put_num("energy_drift", s.energy_drift);
    summary.put_num("tol", s.tol);
    summary.put_num("local_tol", s.local_tol);
    summary.put("accepted_steps", s.accepted);
    summary.put("rejected_steps", s.rejected);
    summary.put("close_encounter", s.close_encounter);
    if let Some(d) = &s.diagnostic {
        summary.put("diagnostic", d);
    }
    if s.close_encounter || s.energy_drift > s.tol {
        Err(CliError::NonConvergence(
            s.diagnostic.clone().unwrap_or_else(|| "integration failed".into()),
        ))
    } else {
        Ok(())
    }
}

fn classes_string(p: &ClusterPartition) -> String {
    p.classes()
        .iter()
        .map(|c| {
            let inner: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            format!("{{{}}}", inner.join(","))
        })
        .collect()
}

fn classification_summary(r: &AsymptoticsReport, summary: &mut Summary) {
    summary.put_num("window_start", r.exponents.window.0);
    summary.put_num("window_end", r.exponents.window.1);
    for p in &r.exponents.pairs {
        let key = format!("{}-{}", p.i, p.j);
        match p.fit {
            Some(f) => {
                summary.put_num(format!("exponent.{key}"), f.exponent);
                summary.put_num(format!("exponent_se.{key}"), f.std_err);
            }
            None => summary.put(format!("exponent.{key}"), "indeterminate"),
        }
    }
    summary.put("partition", classes_string(&r.partition));
    summary.put("inconsistent", r.inconsistent);
    let excluded: Vec<String> = r
        .excluded_pairs
        .iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect();
    summary.put("excluded_pairs", excluded.join(","));
    summary.put("superhyperbolic", r.superhyperbolic.as_str());
    let ratios: Vec<String> = r.superhyperbolic_ratios.iter().map(|x| num(*x)).collect();
    summary.put("superhyperbolic_ratios", ratios.join(","));
    summary.put("expansive", r.expansive.as_str());
    match &r.drift {
        Some(d) => {
            for i in 0..d.drift.n_bodies() {
                let v: Vec<String> = d.drift.point(i).iter().map(|c| num(*c)).collect();
                summary.put(format!("drift.{i}"), v.join(","));
                summary.put_num(format!("drift_se.{i}"), d.std_err[i]);
            }
            summary.put_num("drift_residual", d.relative_residual);
        }
        None => summary.put("drift", "indeterminate"),
    }
    summary.put("drift_conclusive", r.drift_conclusive);
    for (k, e) in r.cluster_potential_exponents.iter().enumerate() {
        match e {
            Some(f) => summary.put_num(format!("cluster_potential_exponent.{k}"), f.exponent),
            None => summary.put(format!("cluster_potential_exponent.{k}"), "none"),
        }
    }
}

fn provenance_summary(p: &Provenance, summary: &mut Summary) {
    summary.put("fit_source", &p.source);
    summary.put("fit_samples", p.samples);
    summary.put("fit_dropped", p.dropped);
    summary.put(
        "fit_seed",
        p.seed.map_or_else(|| "none".to_string(), |s| s.to_string()),
    );
    summary.put("fit_holdout_samples", p.holdout_samples);
    summary.put("fit_holdout_dropped", p.holdout_dropped);
    summary.put_num("fit_holdout_max_ratio", p.holdout_max_ratio);
}

fn constants_summary(k: &PhiConstants, summary: &mut Summary) {
    summary.put_num("alpha", k.alpha);
    summary.put_num("beta", k.beta);
    provenance_summary(&k.provenance, summary);
}

fn verification_outputs(
    no_interaction: &[crate::experiments::NoInteractionRow],
    chain: &[crate::experiments::ChainRow],
    summary: &mut Summary,
    files: &mut Artifacts,
) -> Outcome {
    let mut csv = String::from("sample,h,r_z,y_dist,phi_no_interaction,min_rhs,holds,converged\n");
    for r in no_interaction {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.sample,
            num(r.h),
            num(r.r_z),
            num(r.y_dist),
            num(r.phi_no_interaction),
            num(r.min_rhs),
            r.holds(),
            r.converged
        );
    }
    files.add("no_interaction.csv", csv);
    let mut csv = String::from(
        "instance,h,no_interaction,interaction,splitting_gap,phi_upper,holds,converged\n",
    );
    for r in chain {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.instance,
            num(r.h),
            num(r.no_interaction),
            num(r.interaction),
            num(r.splitting_gap),
            num(r.phi_upper),
            r.holds(CHAIN_TOL),
            r.converged
        );
    }
    files.add("chain.csv", csv);
    let worst = no_interaction
        .iter()
        .map(|r| r.phi_no_interaction / r.min_rhs)
        .fold(0.0, f64::max);
    summary.put("no_interaction_samples", no_interaction.len());
    summary.put("no_interaction_holds", no_interaction.iter().filter(|r| r.holds()).count());
    summary.put_num("no_interaction_worst_ratio", worst);
    summary.put("chain_instances", chain.len());
    summary.put("chain_holds", chain.iter().filter(|r| r.holds(CHAIN_TOL)).count());
    let unconverged = no_interaction.iter().filter(|r| !r.converged).count()
        + chain.iter().filter(|r| !r.converged).count();
    summary.put("unconverged", unconverged);
    if unconverged > 0 {
        Err(CliError::NonConvergence(format!("{unconverged} solves did not converge")))
    } else {
        Ok(())
    }
}

/// Relative slack of the comparison chain.
const CHAIN_TOL: f64 = 1e-6;

fn sweep_outputs(
    rows: &[crate::experiments::SweepRow],
    params: &SweepParams,
    summary: &mut Summary,
    files: &mut Artifacts,
) -> Outcome {
    let mut csv = String::from(
        "instance,n_bodies,h,converged,tau,value,energy_dev,energy_dev_fine,reduction,fine_converged,interior_margin,collision_floor\n",
    );
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.instance,
            r.n_bodies,
            num(r.h),
            r.converged,
            num(r.tau),
            num(r.value),
            num(r.energy_dev),
            num(r.energy_dev_fine),
            num(r.reduction()),
            r.fine_converged,
            num(r.interior_margin),
            num(r.collision_floor)
        );
    }
    files.add("sweep.csv", csv);
    let conv: Vec<_> = rows.iter().filter(|r| r.converged).collect();
    summary.put("instances", rows.len());
    summary.put("refine_segments", params.refine_segments);
    summary.put("converged", conv.len());
    summary.put(
        "energy_within_tolerance",
        conv.iter().filter(|r| r.energy_dev <= 1e-3 * (1.0 + r.h)).count(),
    );
    summary.put(
        "reduction_at_least_4",
        conv.iter().filter(|r| r.reduction() >= 4.0).count(),
    );
    summary.put(
        "interior_above_floor",
        conv.iter().filter(|r| r.interior_margin > r.collision_floor).count(),
    );
    if conv.len() < rows.len() {
        Err(CliError::NonConvergence(format!(
            "{} of {} instances did not converge",
            rows.len() - conv.len(),
            rows.len()
        )))
    } else {
        Ok(())
    }
}
