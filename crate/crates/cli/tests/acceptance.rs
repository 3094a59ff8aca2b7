//! Acceptance experiments. Runs every criterion, prints one PASS/FAIL line
//! each, and exits nonzero if any fails.

use std::f64::consts::TAU;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nbody_cli::experiments::{chain_check, energy_sweep, no_interaction_check, BoundCheckParams, SweepParams};
use nbody_cli::{parse_path_csv, Summary};
use nbody_core::bounds::{fit_phi_constants, SampleSpec};
use nbody_core::dynamics::{
    classify, geometric_grid, integrate, AsymptoticsReport, Flag, Trajectory,
};
use nbody_core::minimize::action_gradient;
use nbody_core::{
    action, minimize_fixed_time, minimize_free_time, split_action, ClusterPartition,
    Configuration, DiscretePath, MassSystem, SolveOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    limit: Option<Duration>,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, limit: None }
}

fn within(limit_secs: u64, o: Outcome) -> Outcome {
    Outcome { limit: Some(Duration::from_secs(limit_secs)), ..o }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn cfg<P: AsRef<[f64]>>(points: &[P]) -> Configuration {
    Configuration::from_points(points).unwrap()
}

fn random_cfg(rng: &mut ChaCha8Rng, n: usize, dim: usize, spread: f64) -> Configuration {
    let coords = (0..n * dim).map(|_| rng.gen_range(-spread..spread)).collect();
    Configuration::new(dim, coords).unwrap()
}

fn free_particle() -> Outcome {
    let sys = MassSystem::new(vec![2.0], 1.0, 2).unwrap();
    let x = cfg(&[[0.0, 0.0]]);
    let y = cfg(&[[3.0, 0.0]]);
    let sol = minimize_free_time(&sys, &x, &y, 2.0, &SolveOptions::default()).unwrap();
    // min over τ of m ℓ²/(2τ) + hτ
    let (m, h, l) = (2.0f64, 2.0f64, 3.0f64);
    let value = l * (2.0 * h * m).sqrt();
    let tau = l * (m / (2.0 * h)).sqrt();
    let ev = rel(sol.value, value);
    let et = rel(sol.tau().unwrap_or(f64::NAN), tau);
    within(
        1,
        outcome(
            sol.converged() && ev <= 1e-6 && et <= 1e-6,
            format!("value {:.10} (rel err {ev:.1e}), tau rel err {et:.1e}", sol.value),
        ),
    )
}

fn kepler() -> Outcome {
    // Unit masses, G = 1, relative orbit with a = 1, e = 0.3 (GM = 2).
    // Along the orbit r = a(1 − e cos E) and dt = r dE/(a n), so
    // ∫U dt = G m₁m₂ ΔE/(a n) and ∫(T + U) = E_tot τ + 2 G m₁m₂ ΔE/(a n).
    let sys = MassSystem::unit(2, 2).unwrap();
    let (a, e) = (1.0f64, 0.3f64);
    let n = (2.0 / a.powi(3)).sqrt();
    let at = |ea: f64| {
        let r = [a * (ea.cos() - e), a * (1.0 - e * e).sqrt() * ea.sin()];
        cfg(&[[-0.5 * r[0], -0.5 * r[1]], [0.5 * r[0], 0.5 * r[1]]])
    };
    let mean = |ea: f64| ea - e * ea.sin();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (e1, e2) in [(-0.5, 1.0), (0.5, 2.0), (-1.0, 1.0)] {
        let tau = (mean(e2) - mean(e1)) / n;
        let oracle = -tau / (2.0 * a) + 2.0 * (e2 - e1) / (a * n);
        let opts = SolveOptions::default().with_segments(256);
        let r = minimize_fixed_time(&sys, &at(e1), &at(e2), tau, 0.0, &opts).unwrap();
        let err = rel(r.value, oracle);
        worst = worst.max(err);
        ok &= r.converged && err <= 1e-5;
    }
    within(30, outcome(ok, format!("3 arcs, worst rel err {worst:.2e}")))
}

fn splitting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut held = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let masses = (0..4).map(|_| rng.gen_range(0.3..3.0)).collect();
        let sys = MassSystem::new(masses, rng.gen_range(0.5..2.0), 2).unwrap();
        let segs = rng.gen_range(4..20);
        let nodes = (0..=segs).map(|_| random_cfg(&mut rng, 4, 2, 3.0)).collect();
        let path = DiscretePath::uniform(0.0, rng.gen_range(0.1..5.0), nodes).unwrap();
        let mask = rng.gen_range(1..15u32);
        let (a, b): (Vec<usize>, Vec<usize>) = (0..4).partition(|i| mask & (1 << i) != 0);
        let p = ClusterPartition::new(4, vec![a, b]).unwrap();
        let h = rng.gen_range(0.0..3.0);
        let s = split_action(&sys, &path, &p, h).unwrap();
        let act = action(&sys, &path, h).unwrap();
        let gap = (s.total - act).abs() / (1.0 + act.abs());
        worst = worst.max(gap);
        if gap <= 1e-10 {
            held += 1;
        }
    }
    within(10, outcome(held == 100, format!("{held}/100, worst scaled gap {worst:.1e}")))
}

fn energy_and_margin() -> (Outcome, Outcome) {
    let params = SweepParams::new(50, 2024);
    let rows = energy_sweep(&params, &SolveOptions::default()).unwrap();
    let conv: Vec<_> = rows.iter().filter(|r| r.converged).collect();
    let energy_ok = conv
        .iter()
        .filter(|r| r.energy_dev <= 1e-3 * (1.0 + r.h) && r.reduction() >= 4.0)
        .count();
    let min_reduction = conv.iter().map(|r| r.reduction()).fold(f64::INFINITY, f64::min);
    let margin_ok = conv
        .iter()
        .filter(|r| r.interior_margin > r.collision_floor)
        .count();
    let min_margin = conv
        .iter()
        .map(|r| r.interior_margin / r.collision_floor)
        .fold(f64::INFINITY, f64::min);
    let energy = within(
        600,
        outcome(
            !conv.is_empty() && energy_ok == conv.len(),
            format!(
                "{energy_ok}/{} converged solves ({} cases) within tolerance, min reduction {min_reduction:.1}x",
                conv.len(),
                rows.len()
            ),
        ),
    );
    let margin = outcome(
        !conv.is_empty() && margin_ok == conv.len(),
        format!(
            "{margin_ok}/{} interior margins above the floor, min margin/floor {min_margin:.2e}",
            conv.len()
        ),
    );
    (energy, margin)
}

fn scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sys = MassSystem::new(vec![1.0, 2.0, 0.7], 1.0, 2).unwrap();
    let opts = SolveOptions::default().with_segments(48);
    let mut held = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = random_cfg(&mut rng, 3, 2, 2.0);
        let y = random_cfg(&mut rng, 3, 2, 2.0);
        let tau = rng.gen_range(0.5..3.0);
        let h = rng.gen_range(0.1..2.0);
        let base = minimize_fixed_time(&sys, &x, &y, tau, h, &opts).unwrap();
        for lam in [0.5f64, 2.0, 10.0] {
            let r = minimize_fixed_time(
                &sys,
                &x.scaled(lam),
                &y.scaled(lam),
                lam.powf(1.5) * tau,
                h / lam,
                &opts,
            )
            .unwrap();
            let err = rel(r.value, lam.sqrt() * base.value);
            worst = worst.max(err);
            if base.converged && r.converged && err <= 1e-6 {
                held += 1;
            }
        }
    }
    outcome(held == 30, format!("{held}/30, worst rel err {worst:.1e}"))
}

fn no_interaction_bound_check() -> Outcome {
    let sys = MassSystem::new(vec![1.0, 2.0, 1.5], 1.0, 2).unwrap();
    let partition = ClusterPartition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
    let mut spec = SampleSpec::new(200, 7);
    spec.partition = Some(partition.clone());
    let constants = match fit_phi_constants(&sys, &spec) {
        Ok(k) => k,
        Err(e) => return within(600, outcome(false, format!("fit failed: {e}"))),
    };
    let params = BoundCheckParams {
        count: 200,
        seed: 7,
        h_range: (0.0, 2.0),
        radius: spec.radius,
        min_separation: spec.min_separation,
        r_grid: 20,
    };
    let rows = no_interaction_check(&sys, &constants, &partition, &params, &SolveOptions::default()).unwrap();
    let held = rows.iter().filter(|r| r.holds()).count();
    let unconverged = rows.iter().filter(|r| !r.converged).count();
    let worst = rows
        .iter()
        .map(|r| r.phi_no_interaction / r.min_rhs)
        .fold(0.0, f64::max);
    within(
        600,
        outcome(
            held == rows.len(),
            format!(
                "alpha {:.3} beta {:.3} (seed 7), {held}/{} held out, worst ratio {worst:.3}, {unconverged} unconverged",
                constants.alpha,
                constants.beta,
                rows.len()
            ),
        ),
    )
}

fn chain() -> Outcome {
    let sys = MassSystem::unit(3, 2).unwrap();
    let partition = ClusterPartition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
    let params = BoundCheckParams {
        count: 30,
        seed: 5,
        h_range: (0.1, 2.0),
        radius: (0.5, 2.0),
        min_separation: 0.25,
        r_grid: 1,
    };
    let rows = chain_check(&sys, &partition, &params, &SolveOptions::default()).unwrap();
    let held = rows.iter().filter(|r| r.holds(1e-6)).count();
    let min_margin = rows
        .iter()
        .map(|r| r.rhs() - r.phi_upper)
        .fold(f64::INFINITY, f64::min);
    outcome(held == 30, format!("{held}/30, min margin {min_margin:.2e}"))
}

/// Two parabolic pairs whose centers separate at speeds ±V: a closed-form
/// four-body motion with partition {{0,1},{2,3}}.
fn two_escaping_pairs(horizon: f64) -> Trajectory {
    // Radial parabolic relative motion with GM = 2: r = (9 GM/2)^{1/3} t^{2/3}.
    let c = 9f64.cbrt();
    let speed = 1.0;
    let times = geometric_grid(horizon * 1e-4, horizon, 50);
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for &t in &times {
        let s = t + 1.0;
        let r = c * s.powf(2.0 / 3.0);
        let dr = 2.0 / 3.0 * c * s.powf(-1.0 / 3.0);
        let (ya, yb) = (-10.0 - speed * t, 10.0 + speed * t);
        xs.push(cfg(&[[ya, -0.5 * r], [ya, 0.5 * r], [yb, -0.5 * r], [yb, 0.5 * r]]));
        vs.push(cfg(&[
            [-speed, -0.5 * dr],
            [-speed, 0.5 * dr],
            [speed, -0.5 * dr],
            [speed, 0.5 * dr],
        ]));
    }
    Trajectory::new(times, xs, vs).unwrap()
}

fn quadratic_spread(horizon: f64) -> Trajectory {
    let times = geometric_grid(horizon * 1e-4, horizon, 50);
    let xs = times
        .iter()
        .map(|t| cfg(&[[-0.5 * (1.0 + t * t), 0.0], [0.5 * (1.0 + t * t), 0.0]]))
        .collect();
    let vs = times.iter().map(|t| cfg(&[[-t, 0.0], [*t, 0.0]])).collect();
    Trajectory::new(times, xs, vs).unwrap()
}

fn pair_exponent(r: &AsymptoticsReport) -> f64 {
    r.exponents.get(0, 1).and_then(|p| p.fit).map_or(f64::NAN, |f| f.exponent)
}

struct Fixtures {
    parabolic: AsymptoticsReport,
    hyperbolic: AsymptoticsReport,
    pairs: AsymptoticsReport,
    circular: AsymptoticsReport,
    quadratic: AsymptoticsReport,
}

fn fixtures() -> Fixtures {
    let two = MassSystem::unit(2, 2).unwrap();
    let x0 = cfg(&[[-0.5, 0.0], [0.5, 0.0]]);
    // GM = 2 at r = 1: parabolic relative speed 2.
    let v = cfg(&[[-1.0, 0.0], [1.0, 0.0]]);
    let parabolic = classify(&two, &integrate(&two, &x0, &v, 1e4, 1e-10).unwrap()).unwrap();
    let vr = 8f64.sqrt();
    let v = cfg(&[[-0.5 * vr, 0.1], [0.5 * vr, -0.1]]);
    let hyperbolic = classify(&two, &integrate(&two, &x0, &v, 1e4, 1e-10).unwrap()).unwrap();
    let four = MassSystem::unit(4, 2).unwrap();
    let pairs = classify(&four, &two_escaping_pairs(1e4)).unwrap();
    let w = 2f64.sqrt();
    let v = cfg(&[[0.0, -0.5 * w], [0.0, 0.5 * w]]);
    let circ = integrate(&two, &x0, &v, 100.0 * TAU / w, 1e-9).unwrap();
    let circular = classify(&two, &circ).unwrap();
    let quadratic = classify(&two, &quadratic_spread(1e4)).unwrap();
    Fixtures { parabolic, hyperbolic, pairs, circular, quadratic }
}

fn dichotomy(f: &Fixtures) -> Outcome {
    let p = pair_exponent(&f.parabolic);
    let u = f.parabolic.cluster_potential_exponents[0].map_or(f64::NAN, |e| e.exponent);
    let hyp = pair_exponent(&f.hyperbolic);
    let expected = ClusterPartition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
    let part = f.pairs.partition == expected && !f.pairs.inconsistent;
    within(
        300,
        outcome(
            (p - 2.0 / 3.0).abs() <= 0.02
                && (u + 2.0 / 3.0).abs() <= 0.02
                && (hyp - 1.0).abs() <= 0.01
                && part,
            format!(
                "parabolic {p:.5}, U {u:.5}, hyperbolic {hyp:.5}, four-body partition {:?}",
                f.pairs.partition.classes()
            ),
        ),
    )
}

fn classifier(f: &Fixtures) -> Outcome {
    let all = [&f.parabolic, &f.hyperbolic, &f.pairs, &f.circular, &f.quadratic];
    let contradictory = all
        .iter()
        .filter(|r| {
            r.superhyperbolic == Flag::Yes
                && (r.drift_conclusive
                    || r.drift.as_ref().is_some_and(|d| d.relative_residual <= 1e-3))
        })
        .count();
    let ok = f.circular.expansive == Flag::No
        && f.circular.superhyperbolic == Flag::No
        && f.quadratic.superhyperbolic == Flag::Yes
        && contradictory == 0;
    outcome(
        ok,
        format!(
            "circular expansive {} superhyperbolic {}, R = t^2 superhyperbolic {}, {contradictory}/{} contradictory reports",
            f.circular.expansive.as_str(),
            f.circular.superhyperbolic.as_str(),
            f.quadratic.superhyperbolic.as_str(),
            all.len()
        ),
    )
}

fn gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut held = 0;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let masses = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
        let sys = MassSystem::new(masses, 1.0, 2).unwrap();
        let segs = 12;
        let a = random_cfg(&mut rng, 3, 2, 2.0);
        let b = random_cfg(&mut rng, 3, 2, 2.0);
        let nodes: Vec<Configuration> = (0..=segs)
            .map(|k| {
                let mut c = Configuration::lerp(&a, &b, k as f64 / segs as f64);
                for v in c.as_mut_slice() {
                    *v += rng.gen_range(-0.3..0.3);
                }
                c
            })
            .collect();
        let path = DiscretePath::uniform(0.0, rng.gen_range(0.5..3.0), nodes.clone()).unwrap();
        let h = rng.gen_range(0.0..2.0);
        let g = action_gradient(&sys, &path, h).unwrap();
        let width = 3 * 2;
        for _ in 0..5 {
            let k = rng.gen_range(1..segs);
            let mut fd = vec![0.0; width];
            for (c, d) in fd.iter_mut().enumerate() {
                let eps = 1e-5;
                let shifted = |s: f64| {
                    let mut ns = nodes.clone();
                    ns[k].as_mut_slice()[c] += s;
                    action(&sys, &DiscretePath::new(path.times().to_vec(), ns).unwrap(), h).unwrap()
                };
                *d = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            }
            let an = &g[(k - 1) * width..k * width];
            let diff: f64 = an.iter().zip(&fd).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = an.iter().map(|p| p * p).sum::<f64>().sqrt();
            let err = diff / norm;
            worst = worst.max(err);
            checked += 1;
            if err <= 1e-6 {
                held += 1;
            }
        }
    }
    outcome(
        held == 50,
        format!("{held}/{checked} nodes, worst rel err {worst:.1e}"),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_nbody"))
        .args(args)
        .arg("--quiet")
        .current_dir(dir)
        .status()
        .unwrap()
        .code()
        .unwrap_or(-1)
}

fn cli_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("min.toml"),
        "seed = 5\n\n[system]\nmasses = [1.0, 2.0, 1.5]\n\n[minimize]\nh = 0.5\n\
         start = [[1.0, 0.0], [-0.5, 0.9], [-0.5, -0.9]]\nend = [[2.5, 1.0], [-1.0, 2.0], [-2.0, -1.5]]\n",
    )
    .unwrap();
    std::fs::write(
        d.join("sweep.toml"),
        "seed = 9\n\n[system]\n\n[sweep]\ncount = 6\nh_values = [0.1, 1.0, 10.0]\nbodies = [2, 4]\n",
    )
    .unwrap();
    let mut codes = Vec::new();
    for out in ["a", "b"] {
        codes.push(run_cli(&["minimize", "--spec", "min.toml", "--out", &format!("min-{out}")], d));
        codes.push(run_cli(&["sweep", "--spec", "sweep.toml", "--out", &format!("sweep-{out}")], d));
    }
    let read = |p: &str| std::fs::read(d.join(p)).unwrap_or_default();
    let identical = ["min-{}/path.csv", "min-{}/trace.csv", "sweep-{}/sweep.csv"]
        .iter()
        .all(|f| {
            let a = read(&f.replace("{}", "a"));
            !a.is_empty() && a == read(&f.replace("{}", "b"))
        });
    let summary = Summary::parse(&String::from_utf8(read("min-a/summary.txt")).unwrap());
    let reported: f64 = summary.get("value").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
    let path = parse_path_csv(&String::from_utf8(read("min-a/path.csv")).unwrap()).unwrap();
    let sys = MassSystem::new(vec![1.0, 2.0, 1.5], 1.0, 2).unwrap();
    let recomputed = action(&sys, &path, 0.5).unwrap();
    let err = rel(recomputed, reported);
    outcome(
        codes.iter().all(|c| *c == 0) && identical && err <= 1e-12,
        format!("exit codes {codes:?}, byte-identical {identical}, reloaded action rel err {err:.1e}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = o.limit.is_none_or(|l| took <= l);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = o.limit.map_or(String::new(), |l| format!(" / limit {} s", l.as_secs()));
        let late = if in_time { "" } else { " [over time limit]" };
        println!(
            "{} {id:>2} {name} ({:.2} s{limit}){late}: {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
    };
    report(1, "free-particle closed form", &mut free_particle);
    report(2, "Kepler arc action", &mut kepler);
    report(3, "splitting identity", &mut splitting);
    let mut margin = None;
    report(4, "energy of free-time minimizers", &mut || {
        let (e, m) = energy_and_margin();
        margin = Some(m);
        e
    });
    report(5, "interior collision margin", &mut || margin.take().unwrap());
    report(6, "scaling covariance", &mut scaling);
    report(7, "no-interaction bound on held-out samples", &mut no_interaction_bound_check);
    report(8, "comparison chain", &mut chain);
    let mut fx = None;
    report(9, "asymptotic dichotomy", &mut || {
        let f = fixtures();
        let o = dichotomy(&f);
        fx = Some(f);
        o
    });
    report(10, "classifier sanity", &mut || classifier(fx.as_ref().unwrap()));
    report(11, "action gradient", &mut gradient);
    report(12, "CLI determinism and round trip", &mut cli_round_trip);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
