//! Closed-loop simulation of a disturbed unicycle under the subtask barriers.

use crate::barrier::{
    build_barrier, check_switch_containment, choose_alpha, domination_sample, BarrierError, BarrierFunction,
    BuildOptions, Containment, Shape, SubtaskSpec,
};
use crate::control::{diffeo, min_norm_control, slack_control, ControlError, Constraint};
use crate::determinize::{
    maximize_state_formula, robustness_bound_r, state_dnf, synthesize, DeterminizationResult, DeterminizeError,
    DomainBox, Literal, Witness,
};
use crate::logic::{Formula, Interpretation};
use crate::monitor::{Mode, Monitor, MonitorError, Trajectory};
use crate::scenario::{DisturbanceSection, Law, Scenario, ScenarioError};
use crate::stochastics::{Method, PredicateFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("subtask {subtask}: {source}")]
    Barrier { subtask: usize, source: BarrierError },
    #[error("switch into subtask {subtask}: ({x}, {y}) lies in the previous safe set but not the next")]
    Containment { subtask: usize, x: f64, y: f64 },
    #[error("t = {t}: {source}")]
    Control { t: f64, source: ControlError },
    #[error("t = {t}: control magnitude {norm} exceeds {limit}")]
    Diverged { t: f64, norm: f64, limit: f64 },
    #[error("disturbance bound {bound} exceeds the declared C = {c}")]
    DisturbanceBound { bound: f64, c: f64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Determinize(#[from] DeterminizeError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}

impl SimError {
    /// Errors that come from violated standing assumptions rather than from
    /// the closed loop itself.
    pub fn is_assumption(&self) -> bool {
        matches!(self, SimError::Barrier { source: BarrierError::InvariantViolated { .. }, .. })
    }
}

type Result<T> = std::result::Result<T, SimError>;

/// Sum of sines with random frequencies and phases, scaled so each axis stays
/// within `amplitude/√2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSignal {
    pub amplitude: f64,
    terms: Vec<[(f64, f64, f64); 2]>,
}

impl NoiseSignal {
    pub fn new(amplitude: f64, seed: u64, modes: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut terms: Vec<[(f64, f64, f64); 2]> = (0..modes.max(1))
            .map(|_| {
                let mut axis = || (rng.random::<f64>(), rng.random_range(0.2..3.0), rng.random_range(0.0..2.0 * PI));
                [axis(), axis()]
            })
            .collect();
        for a in 0..2 {
            let total: f64 = terms.iter().map(|t| t[a].0).sum();
            for t in &mut terms {
                t[a].0 *= amplitude / SQRT_2 / total;
            }
        }
        Self { amplitude, terms }
    }

    pub fn value(&self, t: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for term in &self.terms {
            for a in 0..2 {
                let (w, omega, phase) = term[a];
                out[a] += w * (omega * t + phase).sin();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Disturbance {
    Constant([f64; 2]),
    Spring(f64),
    Noise(NoiseSignal),
}

impl Disturbance {
    pub fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match self {
            Disturbance::Constant(v) => *v,
            Disturbance::Spring(k) => [-k * x[0].clamp(-1.0, 1.0), -k * x[1].clamp(-1.0, 1.0)],
            Disturbance::Noise(n) => n.value(t),
        }
    }

    /// Upper bound on `‖c(x, t)‖`.
    pub fn bound(&self) -> f64 {
        match self {
            Disturbance::Constant(v) => v[0].hypot(v[1]),
            Disturbance::Spring(k) => k.abs() * SQRT_2,
            Disturbance::Noise(n) => n.amplitude.abs(),
        }
    }

    pub fn from_section(s: &DisturbanceSection) -> Self {
        match *s {
            DisturbanceSection::Constant { value } => Disturbance::Constant(value),
            DisturbanceSection::Spring { gain } => Disturbance::Spring(gain),
            DisturbanceSection::Noise { amplitude, seed, modes } => {
                Disturbance::Noise(NoiseSignal::new(amplitude, seed, modes.unwrap_or(8)))
            }
        }
    }
}

fn disturbance_at(parts: &[Disturbance], x: [f64; 2], t: f64) -> [f64; 2] {
    parts.iter().fold([0.0; 2], |acc, d| {
        let c = d.eval(x, t);
        [acc[0] + c[0], acc[1] + c[1]]
    })
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub law: Law,
    pub l: f64,
    pub build: BuildOptions,
    pub alpha: Option<f64>,
    pub safety_chi: f64,
    pub max_control: f64,
    pub containment_grid: usize,
    pub dt: f64,
    pub t_end: f64,
    pub initial_state: [f64; 3],
    pub f_x: [f64; 2],
    pub f_theta: f64,
    pub disturbance_bound: f64,
    pub disturbance: Vec<Disturbance>,
}

pub struct Subtask<'a> {
    pub invariant: Vec<Literal<'a>>,
    pub reach: Vec<Literal<'a>>,
    pub deadline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: [f64; 2],
    pub theta: f64,
    pub p: [f64; 2],
    pub u: [f64; 2],
    pub b: f64,
    pub eps: f64,
    pub subtask: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtaskReport {
    pub index: usize,
    pub start: f64,
    pub deadline: f64,
    pub alpha: f64,
    pub gamma0: Vec<f64>,
    /// Smallest reach literal `h̄` at the deadline.
    pub reach_value: f64,
    pub reached: bool,
    pub min_b: f64,
    pub containment_checked: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub samples: Vec<Sample>,
    pub subtasks: Vec<SubtaskReport>,
    pub barriers: Vec<BarrierFunction>,
    /// `min_k ε_k`; zero for the min-norm law.
    pub eps_r: f64,
    pub alpha_max: f64,
    /// `10·dt`.
    pub tol_num: f64,
    /// Every sample satisfies `b ≥ ε_r/α − tol_num`.
    pub invariant_ok: bool,
}

impl SimOutcome {
    pub fn success(&self) -> bool {
        self.invariant_ok && self.subtasks.iter().all(|s| s.reached)
    }

    pub fn x_trajectory(&self) -> std::result::Result<Trajectory, MonitorError> {
        Trajectory::new(self.samples.iter().map(|s| s.t).collect(), self.samples.iter().map(|s| s.x.to_vec()).collect())
    }

    pub fn p_trajectory(&self) -> std::result::Result<Trajectory, MonitorError> {
        Trajectory::new(self.samples.iter().map(|s| s.t).collect(), self.samples.iter().map(|s| s.p.to_vec()).collect())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

fn rk4_step(z: [f64; 3], u: [f64; 2], t: f64, dt: f64, cfg: &SimConfig) -> [f64; 3] {
    let f = |z: [f64; 3], t: f64| {
        let c = disturbance_at(&cfg.disturbance, [z[0], z[1]], t);
        let (s, co) = z[2].sin_cos();
        [cfg.f_x[0] + co * u[0] + c[0], cfg.f_x[1] + s * u[0] + c[1], cfg.f_theta + u[1]]
    };
    let add = |z: [f64; 3], k: [f64; 3], h: f64| [z[0] + h * k[0], z[1] + h * k[1], z[2] + h * k[2]];
    let k1 = f(z, t);
    let k2 = f(add(z, k1, 0.5 * dt), t + 0.5 * dt);
    let k3 = f(add(z, k2, 0.5 * dt), t + 0.5 * dt);
    let k4 = f(add(z, k3, dt), t + dt);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = z[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out[2] = wrap_angle(out[2]);
    out
}

fn steps_of(t: f64, dt: f64, what: &str) -> Result<usize> {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * (1.0 + t.abs()) {
        return Err(SimError::Config(format!("{what} {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

/// Runs the subtask sequence. Subtask `i` is active on `[b_{i−1}, b_i)`; the
/// last barrier is held until `t_end`.
pub fn simulate(subtasks: &[Subtask], mean: &[f64], domain: &DomainBox, cfg: &SimConfig) -> Result<SimOutcome> {
    run_loop(subtasks, mean, domain, cfg, None)
}

/// Recomputes barriers, inputs and slacks along recorded states `[x, y, θ]`
/// sampled at `k·dt`, rebuilding every barrier from the recorded switch points.
pub fn replay(
    subtasks: &[Subtask],
    mean: &[f64],
    domain: &DomainBox,
    cfg: &SimConfig,
    states: &[[f64; 3]],
) -> Result<SimOutcome> {
    run_loop(subtasks, mean, domain, cfg, Some(states))
}

fn run_loop(
    subtasks: &[Subtask],
    mean: &[f64],
    domain: &DomainBox,
    cfg: &SimConfig,
    recorded: Option<&[[f64; 3]]>,
) -> Result<SimOutcome> {
    if subtasks.is_empty() {
        return Err(SimError::Config("no subtasks".into()));
    }
    if domain.dim() != 2 {
        return Err(SimError::Config("the unicycle needs a planar domain".into()));
    }
    let bound: f64 = cfg.disturbance.iter().map(Disturbance::bound).sum();
    if bound > cfg.disturbance_bound + 1e-12 {
        return Err(SimError::DisturbanceBound { bound, c: cfg.disturbance_bound });
    }
    let n_steps = steps_of(cfg.t_end, cfg.dt, "t_end")?;
    let deadline_steps = subtasks
        .iter()
        .map(|s| steps_of(s.deadline, cfg.dt, "deadline"))
        .collect::<Result<Vec<_>>>()?;
    if deadline_steps.windows(2).any(|w| w[1] <= w[0]) || deadline_steps[0] == 0 {
        return Err(SimError::Config("deadlines must be positive and increasing".into()));
    }
    if *deadline_steps.last().unwrap() > n_steps {
        return Err(SimError::Config("last deadline is after t_end".into()));
    }
    if let Some(r) = recorded {
        if r.len() != n_steps + 1 {
            return Err(SimError::Config(format!("trace has {} rows, expected {}", r.len(), n_steps + 1)));
        }
    }
    let time = |k: usize| k as f64 * cfg.dt;

    let build = |i: usize, p0: [f64; 2], dominate: &[([f64; 2], f64)]| -> Result<(BarrierFunction, f64)> {
        let task = &subtasks[i];
        let start = if i == 0 { 0.0 } else { subtasks[i - 1].deadline };
        let end = if i + 1 == subtasks.len() { cfg.t_end } else { task.deadline };
        let spec = SubtaskSpec { invariant: &task.invariant, reach: &task.reach, t0: start, t_star: task.deadline, end };
        let wrap = |source| SimError::Barrier { subtask: i + 1, source };
        let b = build_barrier(&spec, mean, domain, p0, dominate, &cfg.build).map_err(wrap)?;
        let alpha = match cfg.alpha {
            Some(a) => a,
            None => choose_alpha(&b, domain, cfg.safety_chi).map_err(wrap)?,
        };
        Ok((b, alpha))
    };

    let mut z = recorded.map_or(cfg.initial_state, |r| r[0]);
    z[2] = wrap_angle(z[2]);
    let p0 = diffeo([z[0], z[1]], z[2], cfg.l);
    let (b0, a0) = build(0, p0, &[])?;
    let mut barriers = vec![b0];
    let mut alphas = vec![a0];
    let mut reports: Vec<SubtaskReport> = Vec::new();
    let mut containment_checked = vec![0usize];
    let mut samples = Vec::with_capacity(n_steps + 1);
    let mut active = 0usize;

    for k in 0..=n_steps {
        let t = time(k);
        let x = [z[0], z[1]];
        let p = diffeo(x, z[2], cfg.l);
        if active < subtasks.len() && k == deadline_steps[active] {
            let reach_value = subtasks[active]
                .reach
                .iter()
                .map(|lit| Shape::from_literal(lit, mean).map(|s| s.value(p)))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|source| SimError::Barrier { subtask: active + 1, source })?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            reports.push(SubtaskReport {
                index: active + 1,
                start: if active == 0 { 0.0 } else { subtasks[active - 1].deadline },
                deadline: subtasks[active].deadline,
                alpha: alphas[active],
                gamma0: gamma0_of(&barriers[active]),
                reach_value,
                reached: reach_value >= 0.0,
                min_b: f64::INFINITY,
                containment_checked: containment_checked[active],
            });
            if active + 1 < subtasks.len() {
                let prev = &barriers[active];
                let grid = cfg.containment_grid;
                let dominate = domination_sample(prev, t, domain, grid)
                    .map_err(|source| SimError::Barrier { subtask: active + 1, source })?;
                let (next, alpha) = build(active + 1, p, &dominate)?;
                let check: Containment = check_switch_containment(prev, &next, t, domain, 2 * grid - 1)
                    .map_err(|source| SimError::Barrier { subtask: active + 2, source })?;
                if let Some(w) = check.counterexample {
                    return Err(SimError::Containment { subtask: active + 2, x: w[0], y: w[1] });
                }
                containment_checked.push(check.checked);
                barriers.push(next);
                alphas.push(alpha);
                active += 1;
            } else {
                active += 1;
            }
        }
        let bi = active.min(subtasks.len() - 1);
        let barrier = &barriers[bi];
        let alpha = alphas[bi];
        let ev = barrier
            .eval_all_perturbed(p, t)
            .map_err(|source| SimError::Barrier { subtask: bi + 1, source })?;
        let (s, c) = z[2].sin_cos();
        let f_p = [cfg.f_x[0] - cfg.l * s * cfg.f_theta, cfg.f_x[1] + cfg.l * c * cfg.f_theta];
        let d = ev.grad[0] * f_p[0] + ev.grad[1] * f_p[1] + ev.ddt;
        let con = Constraint::new(ev.grad, z[2], cfg.l, alpha, ev.value, cfg.disturbance_bound, d);
        let out = match cfg.law {
            Law::MinNorm => min_norm_control(&con).map_err(|source| SimError::Control { t, source })?,
            Law::Slack => slack_control(&con),
        };
        let norm = out.u[0].hypot(out.u[1]);
        if !(norm <= cfg.max_control) {
            return Err(SimError::Diverged { t, norm, limit: cfg.max_control });
        }
        samples.push(Sample { t, x, theta: z[2], p, u: out.u, b: ev.value, eps: out.epsilon, subtask: bi + 1 });
        if k < n_steps {
            z = match recorded {
                Some(r) => r[k + 1],
                None => rk4_step(z, out.u, t, cfg.dt, cfg),
            };
        }
    }

    for r in &mut reports {
        r.min_b = samples
            .iter()
            .filter(|s| s.subtask == r.index)
            .map(|s| s.b)
            .fold(f64::INFINITY, f64::min);
    }
    let eps_r = match cfg.law {
        Law::MinNorm => 0.0,
        Law::Slack => samples.iter().map(|s| s.eps).fold(f64::INFINITY, f64::min),
    };
    let tol_num = 10.0 * cfg.dt;
    let invariant_ok = samples.iter().all(|s| s.b >= eps_r / alphas[s.subtask - 1] - tol_num);
    Ok(SimOutcome {
        samples,
        subtasks: reports,
        barriers,
        eps_r,
        alpha_max: alphas.iter().copied().fold(1.0, f64::max),
        tol_num,
        invariant_ok,
    })
}

fn gamma0_of(b: &BarrierFunction) -> Vec<f64> {
    b.components
        .iter()
        .filter_map(|c| match c.offset {
            crate::barrier::Offset::Ramp { .. } => Some(c.offset.initial()),
            crate::barrier::Offset::Zero => None,
        })
        .collect()
}

/// Replaces every chance or risk leaf by its deterministic version with
/// threshold `c + χ`.
pub fn modified_formula(f: &Formula, det: &DeterminizationResult) -> std::result::Result<Formula, DeterminizeError> {
    f.map_atoms(&mut |a| {
        let t = det
            .threshold(&a.id)
            .ok_or_else(|| DeterminizeError::MissingThreshold(a.id.clone()))?;
        Ok(crate::logic::Atom { id: a.id.clone(), interp: Interpretation::Deterministic { threshold: t.c + t.chi } })
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub mc_samples: Option<usize>,
    pub seed: Option<u64>,
    /// Replaces the scenario's disturbance list.
    pub disturbance: Option<Vec<Disturbance>>,
    pub alpha: Option<f64>,
    pub disturbance_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub determinization: DeterminizationResult,
    pub outcome: SimOutcome,
    /// `ρ^{φ̄}` of the look-ahead trace at `t = 0`.
    pub rho_bar_p: f64,
    /// `ρ^{φ}` of the state trace at `t = 0`.
    pub rho_phi_x: f64,
    /// Chance/risk robustness of the state trace at `t = 0`.
    pub rho_risk_x: f64,
    /// `ε_r / (α κ)`.
    pub level: f64,
    /// `None` when no state of the box reaches `level` above some threshold.
    pub r_bound: Option<f64>,
}

impl ScenarioRun {
    pub fn success(&self) -> bool {
        self.outcome.success()
    }
}

pub fn sim_config(s: &Scenario, run: &RunOptions) -> Result<SimConfig> {
    let missing = |what: &str| SimError::Config(format!("scenario has no [{what}] section"));
    let dynamics = s.dynamics.as_ref().ok_or_else(|| missing("dynamics"))?;
    let ctl = s.controller.as_ref().ok_or_else(|| missing("controller"))?;
    let integ = s.integrator.as_ref().ok_or_else(|| missing("integrator"))?;
    Ok(SimConfig {
        law: ctl.law,
        l: ctl.l,
        build: BuildOptions {
            eta: ctl.eta,
            gain: ctl.gain,
            reach_margin: ctl.reach_margin,
            excess_decay: ctl.excess_decay,
            start_margin: ctl.start_margin,
            ..BuildOptions::default()
        },
        alpha: run.alpha.or(ctl.alpha),
        safety_chi: ctl.safety_chi,
        max_control: ctl.max_control,
        containment_grid: ctl.containment_grid,
        dt: integ.dt,
        t_end: integ.t_end,
        initial_state: dynamics.initial_state,
        f_x: dynamics.f_x,
        f_theta: dynamics.f_theta,
        disturbance_bound: run.disturbance_bound.unwrap_or(dynamics.disturbance_bound),
        disturbance: run
            .disturbance
            .clone()
            .unwrap_or_else(|| dynamics.disturbance.iter().map(Disturbance::from_section).collect()),
    })
}

/// Checks the unicycle offset against every predicate: `l ≤ χ_m / L_m`.
pub fn check_offset(l: f64, preds: &[PredicateFunction], det: &DeterminizationResult) -> Result<()> {
    for t in &det.thresholds {
        let pred = preds.iter().find(|p| p.id == t.id).expect("threshold of a known predicate");
        let lip = pred.lipschitz();
        if lip > 0.0 && l > t.chi / lip + 1e-12 {
            return Err(SimError::Config(format!(
                "offset l = {l} exceeds chi/L = {} for `{}`",
                t.chi / lip,
                t.id
            )));
        }
    }
    Ok(())
}

/// Determinizes, checks the standing assumptions, simulates and evaluates
/// every robustness figure of a scenario. Assumption failures are returned
/// inside the determinization result with no simulation.
pub fn run_scenario(s: &Scenario, run: &RunOptions) -> Result<std::result::Result<ScenarioRun, DeterminizationResult>> {
    scenario_inner(s, run, None)
}

/// [`run_scenario`] on recorded states instead of a fresh integration.
pub fn replay_scenario(
    s: &Scenario,
    run: &RunOptions,
    states: &[[f64; 3]],
) -> Result<std::result::Result<ScenarioRun, DeterminizationResult>> {
    scenario_inner(s, run, Some(states))
}

fn scenario_inner(
    s: &Scenario,
    run: &RunOptions,
    recorded: Option<&[[f64; 3]]>,
) -> Result<std::result::Result<ScenarioRun, DeterminizationResult>> {
    let env = s.environment()?;
    let preds = s.predicates()?;
    let formula = s.formula()?;
    let domain = s.domain()?;
    let opts = s.determinize_options(run.mc_samples, run.seed);
    let mut det = synthesize(&formula, &preds, &env, &domain, &opts, &[])?;
    let conj = s.subtask_conjunctions()?;
    for f in &conj {
        let g = modified_formula(f, &det)?;
        let (value, point) = maximize_state_formula(&g, &preds, env.mean(), &domain)?;
        det.witnesses.push(Witness { formula: g.to_string(), value, point, ok: value > 0.0 });
        det.assumption1_ok &= value > 0.0;
    }
    if !det.ok() {
        return Ok(Err(det));
    }
    let cfg = sim_config(s, run)?;
    check_offset(cfg.l, &preds, &det)?;

    let mut subtasks = Vec::new();
    for sec in &s.subtask {
        let literals = |text: &str| -> Result<Vec<Literal>> {
            let f = modified_formula(&s.literal_formula(text)?, &det)?;
            let mut dnf = state_dnf(&f, &preds)?;
            Ok(dnf.pop().unwrap_or_default())
        };
        subtasks.push(Subtask { invariant: literals(&sec.invariant)?, reach: literals(&sec.reach)?, deadline: sec.deadline });
    }
    let outcome = run_loop(&subtasks, env.mean(), &domain, &cfg, recorded)?;

    let phi = det.phi.clone().expect("synthesized formula");
    let phi_bar = det.phi_bar.clone().expect("synthesized formula");
    let ptraj = outcome.p_trajectory()?;
    let xtraj = outcome.x_trajectory()?;
    let det_mon = Monitor::new(&preds, Mode::Deterministic { mean: env.mean() });
    let rho_bar_p = det_mon.rho(&phi_bar, &ptraj, 0.0)?.value;
    let rho_phi_x = det_mon.rho(&phi, &xtraj, 0.0)?.value;
    let method = match opts.fallback {
        Method::MonteCarlo { .. } if run.mc_samples.is_none() => Method::ClosedForm,
        m => m,
    };
    let stoch = Monitor::new(&preds, Mode::Stochastic { env: &env, method });
    let rho_risk_x = stoch.rho(&formula, &xtraj, 0.0)?.value;

    let level = outcome.eps_r / (outcome.alpha_max * cfg.build.gain);
    let ids: Vec<&str> = det.thresholds.iter().map(|t| t.id.as_str()).collect();
    let used: Vec<PredicateFunction> = ids
        .iter()
        .map(|id| preds.iter().find(|p| p.id == *id).cloned().expect("known predicate"))
        .collect();
    let cs: Vec<f64> = det.thresholds.iter().map(|t| t.c).collect();
    let r_bound = match robustness_bound_r(&used, &cs, level, &domain, &env, opts.fallback) {
        Ok(r) => Some(r),
        Err(DeterminizeError::EmptySet { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Ok(ScenarioRun { determinization: det, outcome, rho_bar_p, rho_phi_x, rho_risk_x, level, r_bound }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::RiskSpec;

    #[test]
    fn noise_respects_amplitude() {
        let n = NoiseSignal::new(0.75, 3, 8);
        for k in 0..2000 {
            let v = n.value(k as f64 * 0.013);
            assert!(v[0].hypot(v[1]) <= 0.75 + 1e-12);
        }
        assert_eq!(n, NoiseSignal::new(0.75, 3, 8));
        assert_ne!(n, NoiseSignal::new(0.75, 4, 8));
    }

    #[test]
    fn angle_wrap_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rk4_straight_line() {
        let cfg = SimConfig {
            law: Law::Slack,
            l: 0.1,
            build: BuildOptions::default(),
            alpha: None,
            safety_chi: 0.05,
            max_control: 1e4,
            containment_grid: 11,
            dt: 0.1,
            t_end: 1.0,
            initial_state: [0.0, 0.0, 0.0],
            f_x: [0.0, 0.0],
            f_theta: 0.0,
            disturbance_bound: 0.0,
            disturbance: vec![],
        };
        let z = rk4_step([0.0, 0.0, 0.0], [2.0, 0.0], 0.0, 0.1, &cfg);
        assert!((z[0] - 0.2).abs() < 1e-15 && z[1] == 0.0);
        // Constant turn rate: exact arc.
        let z = rk4_step([0.0, 0.0, 0.0], [1.0, 1.0], 0.0, 0.1, &cfg);
        assert!((z[0] - 0.1f64.sin()).abs() < 1e-8 && (z[1] - (1.0 - 0.1f64.cos())).abs() < 1e-8);
    }

    #[test]
    fn single_reach_task() {
        let reach = PredicateFunction::norm_ball("goal", [0, 1], 0.5, RiskSpec::Chance { delta: 0.5 });
        let lit = Literal { pred: &reach, threshold: 0.0, negated: false };
        let domain = DomainBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let cfg = SimConfig {
            law: Law::Slack,
            l: 0.1,
            build: BuildOptions { reach_margin: 0.1, ..Default::default() },
            alpha: None,
            safety_chi: 0.05,
            max_control: 1e4,
            containment_grid: 21,
            dt: 0.01,
            t_end: 3.0,
            initial_state: [-2.0, -1.0, 0.3],
            f_x: [0.0, 0.0],
            f_theta: 0.0,
            disturbance_bound: 0.2,
            disturbance: vec![Disturbance::Constant([0.0, 0.2])],
        };
        let tasks = [Subtask { invariant: vec![], reach: vec![lit], deadline: 2.0 }];
        let out = simulate(&tasks, &[1.0, 0.5], &domain, &cfg).unwrap();
        assert!(out.success(), "{:?}", out.subtasks);
        assert_eq!(out.samples.len(), 301);
        assert!(out.subtasks[0].reach_value >= 0.1 - out.tol_num);
    }

    #[test]
    fn disturbance_over_bound_is_rejected() {
        let domain = DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let cfg = SimConfig {
            law: Law::MinNorm,
            l: 0.1,
            build: BuildOptions::default(),
            alpha: Some(1.0),
            safety_chi: 0.05,
            max_control: 1e4,
            containment_grid: 11,
            dt: 0.1,
            t_end: 1.0,
            initial_state: [0.0, 0.0, 0.0],
            f_x: [0.0, 0.0],
            f_theta: 0.0,
            disturbance_bound: 0.1,
            disturbance: vec![Disturbance::Spring(0.5)],
        };
        let tasks = [Subtask { invariant: vec![], reach: vec![], deadline: 1.0 }];
        assert!(matches!(simulate(&tasks, &[], &domain, &cfg), Err(SimError::DisturbanceBound { .. })));
    }
}
