//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use ristl_core::barrier::{BarrierFunction, Component, Offset, Shape};
use ristl_core::control::{min_norm_control, slack_control, Constraint};
use ristl_core::determinize::{check_inclusion, minimal_c, synthesize, DomainBox};
use ristl_core::logic::{parse_formula, Interpretation};
use ristl_core::monitor::{Mode, Monitor, Trajectory};
use ristl_core::scenario::Scenario;
use ristl_core::sim::{run_scenario, Disturbance, NoiseSignal, RunOptions};
use ristl_core::stochastics::{pushforward, GaussianVector, Method, PredicateFunction, RiskSpec};
use std::path::PathBuf;
use std::time::{Duration, Instant};
use support::{gaussian_risk_at, qp_min_norm, qp_slack, std_quantile};

const C1_TOL: f64 = 1e-3;
const C1_RUNTIME: Duration = Duration::from_millis(100);
const C2_VAR_TOL: f64 = 1e-3;
const C2_C_TOL: f64 = 2e-3;
const C3_INSTANCES: usize = 100;
const C3_SAMPLES: usize = 1_000_000;
const C3_TOL_CHANCE: f64 = 5e-3;
const C3_TOL_VAR: f64 = 5e-3;
const C3_TOL_CVAR: f64 = 1e-2;
const C3_RUNTIME: Duration = Duration::from_secs(30);
const C4_INSTANCES: usize = 100;
const C4_GRID: usize = 200;
const C5_TRAJECTORIES: usize = 1000;
const C6_SEEDS: u64 = 20;
const C6_RUNTIME: Duration = Duration::from_secs(60);
const C7_INSTANCES: usize = 10_000;
const C7_TOL: f64 = 1e-8;
const C8_INSTANCES: usize = 1000;
const C8_STEP: f64 = 1e-5;
const C8_TOL: f64 = 1e-6;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn one_dim_box() -> DomainBox {
    DomainBox::new(vec![-5.0], vec![5.0]).unwrap()
}

fn criterion_1() -> Verdict {
    let env = GaussianVector::diagonal(vec![0.0], &[1.0]).unwrap();
    let spec = RiskSpec::Chance { delta: 0.9 };
    let pred = PredicateFunction::affine("h", vec![-1.0], vec![1.0], 0.0, spec);
    let start = Instant::now();
    let c = minimal_c(&pred, &spec, &one_dim_box(), &env, 1e-6, Method::ClosedForm);
    let elapsed = start.elapsed();
    match c {
        Ok(c) => {
            let err = (c - 1.2816).abs();
            verdict(
                err <= C1_TOL && elapsed < C1_RUNTIME,
                format!("c = {c:.6} (|c - 1.2816| = {err:.2e} <= {C1_TOL:e}), {:.3} ms", elapsed.as_secs_f64() * 1e3),
            )
        }
        Err(e) => verdict(false, format!("error: {e}")),
    }
}

fn criterion_2() -> Verdict {
    let env = GaussianVector::diagonal(vec![0.0], &[1.0]).unwrap();
    let spec = RiskSpec::Var { beta: 0.8, gamma: 0.842 };
    let pred = PredicateFunction::affine("h", vec![-1.0], vec![1.0], 0.0, spec);
    let run = || -> Result<(f64, f64), String> {
        let d = pushforward(&pred, &[0.0], &env, Method::ClosedForm).map_err(|e| e.to_string())?;
        let var = d.var_beta(0.8).map_err(|e| e.to_string())?;
        let c = minimal_c(&pred, &spec, &one_dim_box(), &env, 1e-6, Method::ClosedForm).map_err(|e| e.to_string())?;
        Ok((var, c))
    };
    match run() {
        Ok((var, c)) => verdict(
            (var - 0.8416).abs() <= C2_VAR_TOL && c.abs() <= C2_C_TOL,
            format!("VaR_0.8 = {var:.6} (ref 0.8416 ± {C2_VAR_TOL:e}), c at gamma = 0.842: {c:.2e} (ref 0 ± {C2_C_TOL:e})"),
        ),
        Err(e) => verdict(false, format!("error: {e}")),
    }
}

/// Empirical chance, VaR and CVaR of `−h` from raw draws of `h`.
fn empirical_risk(mut h: Vec<f64>, beta: f64) -> (f64, f64, f64) {
    let n = h.len();
    let chance = h.iter().filter(|v| **v >= 0.0).count() as f64 / n as f64;
    let mut loss: Vec<f64> = h.drain(..).map(|v| -v).collect();
    let k = ((beta * n as f64).ceil() as usize).min(n - 1);
    let (_, var, upper) = loss.select_nth_unstable_by(k, f64::total_cmp);
    let var = *var;
    let tail: f64 = upper.iter().sum::<f64>() + var;
    let cvar = tail / (upper.len() + 1) as f64;
    (chance, var, cvar)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    for i in 0..C3_INSTANCES {
        let m = 3;
        let a: Vec<Vec<f64>> = (0..m).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut cov = vec![vec![0.0; m]; m];
        for r in 0..m {
            for c in 0..m {
                cov[r][c] = (0..m).map(|k| a[r][k] * a[c][k]).sum::<f64>() + if r == c { 0.1 } else { 0.0 };
            }
        }
        let mean: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let env = GaussianVector::new(mean.clone(), cov.clone()).unwrap();
        let mut w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let var_h: f64 = (0..m).map(|r| (0..m).map(|c| w[r] * cov[r][c] * w[c]).sum::<f64>()).sum();
        let scale = rng.random_range(0.2..0.6) / var_h.sqrt();
        w.iter_mut().for_each(|v| *v *= scale);
        let v = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let b0 = rng.random_range(-1.0..1.0);
        let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let beta = rng.random_range(0.5..0.95);
        let pred = PredicateFunction::affine("h", v.clone(), w.clone(), b0, RiskSpec::Chance { delta: 0.5 });
        let d = pushforward(&pred, &x, &env, Method::ClosedForm).unwrap();
        let closed = (d.chance(), d.var_beta(beta).unwrap(), d.cvar_beta(beta).unwrap());

        // Sampling oracle with its own Cholesky factor and generator.
        let mut l = vec![vec![0.0; m]; m];
        for r in 0..m {
            for c in 0..=r {
                let s: f64 = (0..c).map(|k| l[r][k] * l[c][k]).sum();
                l[r][c] = if r == c { (cov[r][r] - s).sqrt() } else { (cov[r][c] - s) / l[c][c] };
            }
        }
        let det = v[0] * x[0] + v[1] * x[1] + b0;
        let mut srng = ChaCha20Rng::seed_from_u64(1000 + i as u64);
        let mut z = vec![0.0; m];
        let draws: Vec<f64> = (0..C3_SAMPLES)
            .map(|_| {
                z.iter_mut().for_each(|zi| *zi = srng.sample(StandardNormal));
                let env_draw = (0..m).map(|r| mean[r] + (0..=r).map(|k| l[r][k] * z[k]).sum::<f64>());
                det + env_draw.zip(&w).map(|(e, wi)| e * wi).sum::<f64>()
            })
            .collect();
        let (ch, var, cvar) = empirical_risk(draws, beta);
        worst[0] = worst[0].max((ch - closed.0).abs());
        worst[1] = worst[1].max((var - closed.1).abs());
        worst[2] = worst[2].max((cvar - closed.2).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        worst[0] <= C3_TOL_CHANCE && worst[1] <= C3_TOL_VAR && worst[2] <= C3_TOL_CVAR && elapsed < C3_RUNTIME,
        format!(
            "max |closed - MC| chance {:.2e} / VaR {:.2e} / CVaR {:.2e} over {C3_INSTANCES} instances, {:.1} s",
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut disagreements = 0;
    let mut held = 0;
    let mut checked = 0;
    for _ in 0..C4_INSTANCES {
        let lo = [rng.random_range(-3.0..0.0), rng.random_range(-3.0..0.0)];
        let hi = [lo[0] + rng.random_range(0.5..4.0), lo[1] + rng.random_range(0.5..4.0)];
        let domain = DomainBox::new(lo.to_vec(), hi.to_vec()).unwrap();
        let mean = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let env = GaussianVector::diagonal(mean.clone(), &[rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)])
            .unwrap();
        let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let w = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let b0 = rng.random_range(-1.0..1.0);
        let sigma = (w[0] * w[0] * env.cov()[0][0] + w[1] * w[1] * env.cov()[1][1]).sqrt();
        let beta = rng.random_range(0.55..0.95);
        let z = std_quantile(beta);
        let risk = |m: f64| gaussian_risk_at(m, sigma, beta, z);
        let grid: Vec<[f64; 2]> = (0..C4_GRID)
            .flat_map(|i| {
                (0..C4_GRID).map(move |j| {
                    [
                        lo[0] + (hi[0] - lo[0]) * i as f64 / (C4_GRID - 1) as f64,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / (C4_GRID - 1) as f64,
                    ]
                })
            })
            .collect();
        let h_mean = |x: [f64; 2]| v[0] * x[0] + v[1] * x[1] + w[0] * mean[0] + w[1] * mean[1] + b0;
        // The level set passes through a grid point, or the whole box is kept.
        let c = if rng.random_bool(0.8) {
            h_mean(grid[rng.random_range(0..grid.len())])
        } else {
            grid.iter().map(|x| h_mean(*x)).fold(f64::INFINITY, f64::min) - 1.0
        };
        let inside: Vec<f64> = grid.iter().map(|x| h_mean(*x)).filter(|m| *m >= c - 1e-9).collect();
        for kind in 0..4 {
            let worst = |f: &dyn Fn(f64) -> f64, lower_is_worse: bool| {
                let vals = inside.iter().map(|m| f(*m));
                if lower_is_worse {
                    vals.fold(f64::INFINITY, f64::min)
                } else {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                }
            };
            let offset = rng.random_range(0.01..0.3) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let (spec, oracle_holds) = match kind {
                0 => {
                    let p = worst(&|m| risk(m).chance, true);
                    let delta = (p - offset).clamp(1e-3, 1.0 - 1e-3);
                    (RiskSpec::Chance { delta }, p >= delta)
                }
                1 => {
                    let r = worst(&|m| risk(m).ev, false);
                    (RiskSpec::Ev { gamma: r + offset }, r <= r + offset)
                }
                2 => {
                    let r = worst(&|m| risk(m).var, false);
                    (RiskSpec::Var { beta, gamma: r + offset }, r <= r + offset)
                }
                _ => {
                    let r = worst(&|m| risk(m).cvar, false);
                    (RiskSpec::Cvar { beta, gamma: r + offset }, r <= r + offset)
                }
            };
            let pred = PredicateFunction::affine("h", v.to_vec(), w.to_vec(), b0, spec);
            match check_inclusion(&pred, &spec, c, &domain, &env, Method::ClosedForm) {
                Ok(inc) => {
                    checked += 1;
                    held += usize::from(inc.holds);
                    disagreements += usize::from(inc.holds != oracle_holds);
                }
                Err(_) => disagreements += 1,
            }
        }
    }
    verdict(
        disagreements == 0 && checked == 4 * C4_INSTANCES,
        format!(
            "{disagreements} disagreements with the {C4_GRID}x{C4_GRID} grid over {checked} checks ({held} inclusions hold)"
        ),
    )
}

fn smooth_noise(rng: &mut ChaCha20Rng) -> impl Fn(f64) -> [f64; 2] {
    let terms: Vec<[(f64, f64, f64); 2]> = (0..4)
        .map(|_| {
            let mut axis = || (rng.random_range(-1.0..1.0), rng.random_range(0.3..3.0), rng.random_range(0.0..6.3));
            [axis(), axis()]
        })
        .collect();
    move |t| {
        let mut out = [0.0; 2];
        for term in &terms {
            for a in 0..2 {
                out[a] += 0.5 * term[a].0 * (term[a].1 * t + term[a].2).sin();
            }
        }
        out
    }
}

fn criterion_5() -> Verdict {
    let run = || -> Result<(usize, usize, usize), String> {
        let s = Scenario::load(&scenario_path("case_study.toml")).map_err(|e| e.to_string())?;
        let nominal = run_scenario(&s, &RunOptions::default())
            .map_err(|e| e.to_string())?
            .map_err(|_| "assumptions failed".to_string())?;
        let det = &nominal.determinization;
        let (phi, phi_bar) = (det.phi.clone().unwrap(), det.phi_bar.clone().unwrap());
        let formula = s.formula().map_err(|e| e.to_string())?;
        let env = s.environment().map_err(|e| e.to_string())?;
        let preds = s.predicates().map_err(|e| e.to_string())?;
        let domain = s.domain().map_err(|e| e.to_string())?;
        let dt = s.integrator.as_ref().unwrap().dt;
        let stride = (0.1 / dt).round() as usize;
        let base: Vec<(f64, [f64; 2])> =
            nominal.outcome.samples.iter().step_by(stride).map(|smp| (smp.t, smp.x)).collect();

        let det_mon = Monitor::new(&preds, Mode::Deterministic { mean: env.mean() });
        let stoch = Monitor::new(&preds, Mode::Stochastic { env: &env, method: Method::ClosedForm });
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (mut sat_bar, mut violations, mut sat_any) = (0, 0, 0);
        for k in 0..C5_TRAJECTORIES {
            let noise = smooth_noise(&mut rng);
            let amp = rng.random_range(0.0..1.0f64).powi(2) * 3.0;
            let states: Vec<Vec<f64>> = if k % 10 == 9 {
                // Free random walk inside the box.
                let mut x = [rng.random_range(domain.lower[0]..domain.upper[0]), rng.random_range(domain.lower[1]..domain.upper[1])];
                base.iter()
                    .map(|_| {
                        x[0] = (x[0] + rng.random_range(-0.4..0.4)).clamp(domain.lower[0], domain.upper[0]);
                        x[1] = (x[1] + rng.random_range(-0.4..0.4)).clamp(domain.lower[1], domain.upper[1]);
                        x.to_vec()
                    })
                    .collect()
            } else {
                base.iter()
                    .map(|(t, x)| {
                        let n = noise(*t);
                        vec![x[0] + amp * n[0], x[1] + amp * n[1]]
                    })
                    .collect()
            };
            let traj = Trajectory::new(base.iter().map(|b| b.0).collect(), states).map_err(|e| e.to_string())?;
            let r_bar = det_mon.rho(&phi_bar, &traj, 0.0).map_err(|e| e.to_string())?.value;
            let r_phi = det_mon.rho(&phi, &traj, 0.0).map_err(|e| e.to_string())?.value;
            let r_risk = stoch.rho(&formula, &traj, 0.0).map_err(|e| e.to_string())?.value;
            if r_bar >= 0.0 {
                sat_bar += 1;
                if r_phi < 0.0 || r_risk < 0.0 {
                    violations += 1;
                }
            }
            sat_any += usize::from(r_risk >= 0.0);
        }
        Ok((sat_bar, violations, sat_any))
    };
    match run() {
        Ok((sat_bar, violations, sat_any)) => verdict(
            violations == 0 && sat_bar > 0,
            format!(
                "{violations} violations; {sat_bar} of {C5_TRAJECTORIES} trajectories satisfy the tightened formula, {sat_any} the risk formula"
            ),
        ),
        Err(e) => verdict(false, format!("error: {e}")),
    }
}

fn criterion_6() -> Verdict {
    let run = || -> Result<Verdict, String> {
        let s = Scenario::load(&scenario_path("case_study.toml")).map_err(|e| e.to_string())?;
        let dyn_sec = s.dynamics.as_ref().ok_or("no dynamics")?;
        let c_bound = dyn_sec.disturbance_bound;
        let start = Instant::now();
        let mut failures = Vec::new();
        let mut eps_min = f64::INFINITY;
        let mut margin_min = f64::INFINITY;
        for seed in 1..=C6_SEEDS {
            let opts = RunOptions {
                disturbance: Some(vec![Disturbance::Noise(NoiseSignal::new(c_bound, seed, 8))]),
                ..RunOptions::default()
            };
            let run = run_scenario(&s, &opts)
                .map_err(|e| format!("seed {seed}: {e}"))?
                .map_err(|_| format!("seed {seed}: assumptions failed"))?;
            let out = &run.outcome;
            let all_reached = out.subtasks.len() == s.subtask.len() && out.subtasks.iter().all(|r| r.reached);
            let tol = 10.0 * s.integrator.as_ref().unwrap().dt;
            let margin = out
                .samples
                .iter()
                .map(|smp| smp.b - (out.eps_r / out.subtasks[smp.subtask - 1].alpha - tol))
                .fold(f64::INFINITY, f64::min);
            eps_min = eps_min.min(out.eps_r);
            margin_min = margin_min.min(margin);
            if !(all_reached && margin >= 0.0 && out.eps_r > 0.0) {
                failures.push(seed);
            }
        }
        let elapsed = start.elapsed();
        Ok(verdict(
            failures.is_empty() && elapsed < C6_RUNTIME,
            format!(
                "{} of {C6_SEEDS} seeds complete every subtask with eps_r > 0 (min eps_r {eps_min:.3}, min b - (eps_r/alpha - 10 dt) {margin_min:.3}), C = {c_bound}, {:.1} s{}",
                C6_SEEDS as usize - failures.len(),
                elapsed.as_secs_f64(),
                if failures.is_empty() { String::new() } else { format!("; failing seeds {failures:?}") }
            ),
        ))
    };
    run().unwrap_or_else(|e| verdict(false, format!("error: {e}")))
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut worst_u: f64 = 0.0;
    let mut worst_eps: f64 = 0.0;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    for _ in 0..C7_INSTANCES {
        let a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let q = rng.random_range(-10.0..10.0);
        let con = Constraint { a, q };
        let u_ref = qp_min_norm(a, q);
        let u = min_norm_control(&con).expect("nonzero a").u;
        worst_u = worst_u.max(rel(u[0], u_ref[0])).max(rel(u[1], u_ref[1]));
        let (u_ref, eps_ref) = qp_slack(a, q);
        let out = slack_control(&con);
        worst_u = worst_u.max(rel(out.u[0], u_ref[0])).max(rel(out.u[1], u_ref[1]));
        worst_eps = worst_eps.max(rel(out.epsilon, eps_ref));
    }
    verdict(
        worst_u <= C7_TOL && worst_eps <= C7_TOL,
        format!("max deviation from the generic QP solver: u {worst_u:.2e}, eps {worst_eps:.2e} over {C7_INSTANCES} instances"),
    )
}

fn random_barrier(rng: &mut ChaCha20Rng) -> BarrierFunction {
    let t0 = rng.random_range(0.0..2.0);
    let t_star = t0 + rng.random_range(0.5..3.0);
    let gain = rng.random_range(0.5..3.0);
    let components = (0..rng.random_range(2..7))
        .map(|k| {
            let shape = if rng.random_bool(0.7) {
                let ang: f64 = rng.random_range(0.0..6.3);
                Shape::Affine { v: [ang.cos(), ang.sin()], k: rng.random_range(-1.0..3.0) }
            } else {
                Shape::Ball {
                    center: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    radius: rng.random_range(0.5..3.0),
                }
            };
            let offset = if rng.random_bool(0.5) {
                Offset::Zero
            } else {
                Offset::Ramp {
                    g0: rng.random_range(0.0..2.0),
                    g_end: -rng.random_range(0.0..0.2),
                    t0,
                    t_star,
                    excess: rng.random_range(0.0..2.0),
                    decay: rng.random_range(0.5..5.0),
                }
            };
            Component { label: format!("c{k}"), shape, offset }
        })
        .collect();
    BarrierFunction { components, eta: rng.random_range(1.0..20.0) / gain, gain, start: t0, end: t_star + 2.0 }
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < C8_INSTANCES {
        let b = random_barrier(&mut rng);
        let p = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let t = rng.random_range(b.start..b.end);
        let near_kink = b.components.iter().any(|c| {
            let near_center = matches!(c.shape, Shape::Ball { center, .. } if (p[0] - center[0]).hypot(p[1] - center[1]) < 0.1);
            let near_switch = matches!(c.offset, Offset::Ramp { t0, t_star, .. } if (t - t_star).abs() < 1e-3 || (t - t0).abs() < 1e-3);
            near_center || near_switch
        });
        if near_kink {
            continue;
        }
        n += 1;
        let ev = b.eval_all(p, t).unwrap();
        let f = |p: [f64; 2], t: f64| b.eval(p, t).unwrap();
        let h = C8_STEP;
        let fd = [
            (f([p[0] + h, p[1]], t) - f([p[0] - h, p[1]], t)) / (2.0 * h),
            (f([p[0], p[1] + h], t) - f([p[0], p[1] - h], t)) / (2.0 * h),
            (f(p, t + h) - f(p, t - h)) / (2.0 * h),
        ];
        let an = [ev.grad[0], ev.grad[1], ev.ddt];
        for k in 0..3 {
            worst = worst.max((an[k] - fd[k]).abs() / an[k].abs().max(1.0));
        }
    }
    verdict(
        worst <= C8_TOL,
        format!("max relative gap between analytic and central differences (step {C8_STEP:e}): {worst:.2e} over {C8_INSTANCES} instances"),
    )
}

/// Piecewise-linear path through `points` at constant speed over `[0, t_end]`,
/// then held.
fn polyline(points: &[[f64; 2]], t_move: f64, t_end: f64, dt: f64) -> Trajectory {
    let lengths: Vec<f64> = points.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    let total: f64 = lengths.iter().sum();
    let n = (t_end / dt).round() as usize;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for k in 0..=n {
        let t = k as f64 * dt;
        let mut s = (t / t_move).min(1.0) * total;
        let mut x = *points.last().unwrap();
        for (i, len) in lengths.iter().enumerate() {
            if s <= *len {
                let r = s / len;
                x = [points[i][0] + r * (points[i + 1][0] - points[i][0]), points[i][1] + r * (points[i + 1][1] - points[i][1])];
                break;
            }
            s -= len;
        }
        times.push(t);
        states.push(x.to_vec());
    }
    Trajectory::new(times, states).unwrap()
}

/// Avoid two square obstacles, reach a square region. Rows of `(w index,
/// state axis, sign)` give `h = sign·(X_w − x_axis) − ε` for avoidance and
/// `h = sign·(X_w − x_axis) + ε` for reaching.
fn two_obstacle_predicates(spec: RiskSpec) -> Vec<PredicateFunction> {
    let eps = 0.5;
    let mut preds = Vec::new();
    let mut add = |id: usize, widx: usize, axis: usize, sign: f64, offset: f64| {
        let mut v = vec![0.0; 2];
        let mut w = vec![0.0; 6];
        v[axis] = -sign;
        w[widx] = sign;
        preds.push(PredicateFunction::affine(&format!("mu{id}"), v, w, offset, spec));
    };
    for (o, base) in [(0usize, 1usize), (2, 5)] {
        add(base, o, 0, 1.0, -eps);
        add(base + 1, o, 0, -1.0, -eps);
        add(base + 2, o + 1, 1, 1.0, -eps);
        add(base + 3, o + 1, 1, -1.0, -eps);
    }
    add(9, 4, 0, 1.0, eps);
    add(10, 4, 0, -1.0, eps);
    add(11, 5, 1, 1.0, eps);
    add(12, 5, 1, -1.0, eps);
    preds
}

fn criterion_9() -> Verdict {
    let text = "G[0,6]((mu1 | mu2 | mu3 | mu4) & (mu5 | mu6 | mu7 | mu8)) & F[0,6](mu9 & mu10 & mu11 & mu12)";
    let mean = vec![0.75, 2.0, -0.75, 2.0, 0.0, 4.0];
    let low = GaussianVector::diagonal(mean.clone(), &[0.75; 6]).unwrap();
    let high = GaussianVector::diagonal(mean, &[1.5, 1.5, 1.5, 1.5, 0.75, 0.75]).unwrap();
    // x2 threads the gap and stops at the region centre; x1 goes around the
    // left obstacle and stops just inside the region.
    let x1 = polyline(&[[0.0, 0.0], [-2.0, 0.5], [-2.0, 3.5], [-0.35, 4.0]], 5.0, 6.0, 0.1);
    let x2 = polyline(&[[0.0, 0.0], [0.0, 4.0]], 5.0, 6.0, 0.1);
    let rho = |env: &GaussianVector, spec: RiskSpec, interp: Interpretation, method: Method| -> [f64; 2] {
        let preds = two_obstacle_predicates(spec);
        let f = parse_formula(text, |_| Some(interp)).unwrap();
        let mon = Monitor::new(&preds, Mode::Stochastic { env, method });
        [mon.rho(&f, &x1, 0.0).unwrap().value, mon.rho(&f, &x2, 0.0).unwrap().value]
    };
    let chance = RiskSpec::Chance { delta: 0.5 };
    let cvar = RiskSpec::Cvar { beta: 0.8, gamma: 1.5 };
    let mut lines = Vec::new();
    let mut pass = true;
    for (label, method) in [("closed form", Method::ClosedForm), ("Monte Carlo", Method::MonteCarlo { n: 100_000, seed: 9 })] {
        let ch_lo = rho(&low, chance, Interpretation::Chance, method);
        let ri_lo = rho(&low, cvar, Interpretation::Risk, method);
        let ch_hi = rho(&high, chance, Interpretation::Chance, method);
        let ri_hi = rho(&high, cvar, Interpretation::Risk, method);
        let ok = ch_lo[1] > ch_lo[0] && ri_lo[1] > ri_lo[0] && ch_hi[1] > ch_hi[0] && ri_hi[0] > ri_hi[1];
        pass &= ok;
        lines.push(format!(
            "{label}: low Ch {:.4}/{:.4} Ri {:.4}/{:.4}, inflated Ch {:.4}/{:.4} Ri {:.4}/{:.4}",
            ch_lo[0], ch_lo[1], ri_lo[0], ri_lo[1], ch_hi[0], ch_hi[1], ri_hi[0], ri_hi[1]
        ));
    }
    verdict(pass, format!("rho(x1)/rho(x2) {}", lines.join("; ")))
}

fn criterion_10() -> Verdict {
    let run = || -> Result<String, String> {
        let text = std::fs::read_to_string(scenario_path("case_study.toml")).map_err(|e| e.to_string())?;
        let variance = Scenario::parse(&text).map_err(|e| e.to_string())?;
        let mut std_dev = variance.clone();
        std_dev.gaussian.variances = variance.gaussian.variances.as_ref().map(|v| v.iter().map(|s| s * s).collect());
        let mut parts = Vec::new();
        for (label, s) in [("variance", &variance), ("std-dev", &std_dev)] {
            let env = s.environment().map_err(|e| e.to_string())?;
            let preds = s.predicates().map_err(|e| e.to_string())?;
            let f = s.formula().map_err(|e| e.to_string())?;
            let domain = s.domain().map_err(|e| e.to_string())?;
            let det = synthesize(&f, &preds, &env, &domain, &s.determinize_options(None, None), &[])
                .map_err(|e| e.to_string())?;
            if det.thresholds.len() != 7 || det.thresholds.iter().any(|t| !t.minimal_c.is_finite()) {
                return Err(format!("{label}: incomplete thresholds"));
            }
            let cmp: Vec<String> = det
                .thresholds
                .iter()
                .map(|t| {
                    let reference = s.predicate.iter().find(|p| p.id == t.id).and_then(|p| p.reference_c).unwrap_or(f64::NAN);
                    format!("{} {:.4} (ref {reference}, {:+.4})", t.id, t.minimal_c, t.minimal_c - reference)
                })
                .collect();
            parts.push(format!("{label} reading: {}", cmp.join(", ")));
        }
        Ok(parts.join("; "))
    };
    match run() {
        Ok(detail) => verdict(true, detail),
        Err(e) => verdict(false, format!("error: {e}")),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("scalar chance threshold", criterion_1),
        ("scalar VaR boundary", criterion_2),
        ("closed-form risk metrics vs Monte Carlo", criterion_3),
        ("vertex inclusion check vs exhaustive grid", criterion_4),
        ("soundness chain on random trajectories", criterion_5),
        ("closed-loop invariance under 20 disturbances", criterion_6),
        ("QP closed forms vs generic solver", criterion_7),
        ("barrier gradients vs finite differences", criterion_8),
        ("two-obstacle chance/CVaR ordering flip", criterion_9),
        ("case-study thresholds under both covariance readings", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "criterion {:>2} {} {name} [{:.2} s]: {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
