//! Quantitative semantics over sampled trajectories.
//!
//! Interval endpoints are snapped to the nearest trace sample, so every window
//! extremum is taken over sample points only.

use crate::logic::{Formula, Interpretation, Interval};
use crate::stochastics::{
    exact_method, pushforward, pushforward_samples, sample, GaussianVector, Method,
    PredicateFunction, StochasticsError,
};
use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("trace ends at t = {have} but the formula needs samples up to t = {need}")]
    Horizon { need: f64, have: f64 },
    #[error("evaluation time {0} is not on the trace")]
    Time(f64),
    #[error("predicate `{0}` is not defined")]
    UnknownPredicate(String),
    #[error("predicate `{0}` has no deterministic threshold")]
    NoThreshold(String),
    #[error(transparent)]
    Stochastics(#[from] StochasticsError),
    #[error("trace file: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace file: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, MonitorError>;

/// A sampled signal `t ↦ x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(MonitorError::Trajectory("no samples".into()));
        }
        if times.len() != states.len() {
            return Err(MonitorError::Trajectory(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MonitorError::Trajectory("times must be finite and strictly increasing".into()));
        }
        Ok(Self { times, states, theta: None })
    }

    /// Reads a CSV trace, taking the state from the named columns.
    pub fn from_csv<R: Read>(reader: R, state_cols: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let t_col = col("t").ok_or_else(|| MonitorError::Trajectory("missing column `t`".into()))?;
        let cols = state_cols
            .iter()
            .map(|c| col(c).ok_or_else(|| MonitorError::Trajectory(format!("missing column `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        let theta_col = col("theta");
        let (mut times, mut states, mut theta) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
                    MonitorError::Trajectory(format!("row {}: bad number in column {}", line + 2, i + 1))
                })
            };
            times.push(num(t_col)?);
            states.push(cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?);
            if let Some(c) = theta_col {
                theta.push(num(c)?);
            }
        }
        let mut traj = Self::new(times, states)?;
        if theta_col.is_some() {
            traj.theta = Some(theta);
        }
        Ok(traj)
    }

    pub fn from_csv_path(path: &Path, state_cols: &[&str]) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?, state_cols)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn end_tolerance(&self) -> f64 {
        let n = self.times.len();
        let last_step = if n > 1 { self.times[n - 1] - self.times[n - 2] } else { 0.0 };
        0.5 * last_step + 1e-9
    }

    /// Index of the sample nearest to `t` (earlier sample on ties).
    pub fn nearest(&self, t: f64) -> usize {
        let k = self.times.partition_point(|s| *s < t);
        if k == 0 {
            0
        } else if k == self.times.len() {
            k - 1
        } else if t - self.times[k - 1] <= self.times[k] - t {
            k - 1
        } else {
            k
        }
    }
}

/// How leaves are evaluated.
pub enum Mode<'a> {
    /// Chance and risk leaves through their risk annotation. Monte Carlo draws
    /// one sample set shared by every leaf and time point; any other method
    /// picks the exact evaluation for each predicate family.
    Stochastic { env: &'a GaussianVector, method: Method },
    /// Deterministic leaves `h(x, μ̃) − c`.
    Deterministic { mean: &'a [f64] },
}

pub struct Monitor<'a> {
    predicates: &'a [PredicateFunction],
    mode: Mode<'a>,
    draws: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeValue {
    pub path: String,
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessResult {
    pub value: f64,
    pub strict: bool,
    pub weak: bool,
    pub breakdown: Vec<NodeValue>,
}

/// Robustness of a chance or risk predicate at state `x`.
pub fn rho_predicate(
    pred: &PredicateFunction,
    x: &[f64],
    env: &GaussianVector,
    method: Method,
) -> std::result::Result<f64, StochasticsError> {
    pred.risk.robustness(&pushforward(pred, x, env, method)?)
}

/// Robustness of the deterministic leaf `h(x, μ̃) − c ≥ 0`.
pub fn rho_stl_predicate(pred: &PredicateFunction, x: &[f64], mean: &[f64], c: f64) -> f64 {
    pred.eval(x, mean) - c
}

/// `(ρ > 0, ρ ≥ 0)`.
pub fn sat(value: f64) -> (bool, bool) {
    (value > 0.0, value >= 0.0)
}

/// Per-node signal, defined on the sample prefix `0..values.len()`.
struct Signal {
    values: Vec<f64>,
}

impl<'a> Monitor<'a> {
    pub fn new(predicates: &'a [PredicateFunction], mode: Mode<'a>) -> Self {
        let draws = match &mode {
            Mode::Stochastic { env, method: Method::MonteCarlo { n, seed } } => {
                Some(sample(env, (*n).max(1), *seed))
            }
            _ => None,
        };
        Self { predicates, mode, draws }
    }

    fn lookup(&self, id: &str) -> Result<&'a PredicateFunction> {
        self.predicates
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| MonitorError::UnknownPredicate(id.into()))
    }

    fn leaf(&self, pred: &PredicateFunction, interp: Interpretation, x: &[f64]) -> Result<f64> {
        match (interp, &self.mode) {
            (Interpretation::Deterministic { threshold }, Mode::Deterministic { mean }) => {
                Ok(rho_stl_predicate(pred, x, mean, threshold))
            }
            (Interpretation::Deterministic { threshold }, Mode::Stochastic { env, .. }) => {
                Ok(rho_stl_predicate(pred, x, env.mean(), threshold))
            }
            (_, Mode::Deterministic { .. }) => Err(MonitorError::NoThreshold(pred.id.clone())),
            (_, Mode::Stochastic { env, method }) => {
                let dist = match &self.draws {
                    Some(draws) => pushforward_samples(pred, x, draws),
                    None => pushforward(pred, x, env, exact_method(pred, env, *method))?,
                };
                Ok(pred.risk.robustness(&dist)?)
            }
        }
    }

    /// `ρ^f(x, ·, t)` with both satisfaction readings and a per-node breakdown.
    pub fn rho(&self, f: &Formula, traj: &Trajectory, t: f64) -> Result<RobustnessResult> {
        let i0 = traj.nearest(t);
        if (traj.times[i0] - t).abs() > 1e-9 + 1e-6 * traj.end_tolerance() {
            return Err(MonitorError::Time(t));
        }
        let mut breakdown = Vec::new();
        let root = self.signal(f, traj, "root", i0, &mut breakdown)?;
        if i0 >= root.values.len() {
            return Err(MonitorError::Horizon {
                need: t + f.horizon(),
                have: *traj.times.last().unwrap(),
            });
        }
        let value = root.values[i0];
        let (strict, weak) = sat(value);
        breakdown.reverse();
        Ok(RobustnessResult { value, strict, weak, breakdown })
    }

    /// Robustness signal of `f` at every sample where it is defined.
    pub fn signal_values(&self, f: &Formula, traj: &Trajectory) -> Result<Vec<f64>> {
        Ok(self.signal(f, traj, "root", 0, &mut Vec::new())?.values)
    }

    fn signal(
        &self,
        f: &Formula,
        traj: &Trajectory,
        path: &str,
        i0: usize,
        out: &mut Vec<NodeValue>,
    ) -> Result<Signal> {
        let n = traj.len();
        let sub = |k: usize| format!("{path}.{k}");
        let (label, values) = match f {
            Formula::True => ("true".to_string(), vec![f64::INFINITY; n]),
            Formula::Pred(a) => {
                let pred = self.lookup(&a.id)?;
                let values = traj
                    .states
                    .iter()
                    .map(|x| self.leaf(pred, a.interp, x))
                    .collect::<Result<Vec<_>>>()?;
                (f.to_string(), values)
            }
            Formula::Not(c) => {
                let s = self.signal(c, traj, &sub(0), i0, out)?;
                ("not".into(), s.values.iter().map(|v| -v).collect())
            }
            Formula::And(l, r) | Formula::Or(l, r) => {
                let a = self.signal(l, traj, &sub(0), i0, out)?;
                let b = self.signal(r, traj, &sub(1), i0, out)?;
                let is_and = matches!(f, Formula::And(..));
                let v = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| if is_and { x.min(*y) } else { x.max(*y) })
                    .collect();
                ((if is_and { "and" } else { "or" }).into(), v)
            }
            Formula::Eventually(c, i) | Formula::Always(c, i) => {
                let s = self.signal(c, traj, &sub(0), i0, out)?;
                let is_max = matches!(f, Formula::Eventually(..));
                // Window bounds are nondecreasing in k, so a monotone deque
                // gives every extremum in one pass.
                let better = |a: f64, b: f64| if is_max { a >= b } else { a <= b };
                let mut v = Vec::new();
                let mut dq: VecDeque<usize> = VecDeque::new();
                let mut next = 0usize;
                for k in 0..n {
                    let Some((lo, hi)) = window(traj, k, i, s.values.len()) else { break };
                    while next <= hi {
                        while dq.back().is_some_and(|&j| better(s.values[next], s.values[j])) {
                            dq.pop_back();
                        }
                        dq.push_back(next);
                        next += 1;
                    }
                    while dq.front().is_some_and(|&j| j < lo) {
                        dq.pop_front();
                    }
                    v.push(s.values[*dq.front().expect("nonempty window")]);
                }
                (format!("{}{}", if is_max { "F" } else { "G" }, i), v)
            }
            Formula::Until(l, r, i) => {
                let a = self.signal(l, traj, &sub(0), i0, out)?;
                let b = self.signal(r, traj, &sub(1), i0, out)?;
                let avail = a.values.len().min(b.values.len());
                let mut v = Vec::new();
                for k in 0..n {
                    let Some((lo, hi)) = window(traj, k, i, avail) else { break };
                    let mut left = a.values[k..lo].iter().copied().fold(f64::INFINITY, f64::min);
                    let mut best = f64::NEG_INFINITY;
                    for j in lo..=hi {
                        left = left.min(a.values[j]);
                        best = best.max(b.values[j].min(left));
                    }
                    v.push(best);
                }
                (format!("U{i}"), v)
            }
        };
        if let Some(value) = values.get(i0) {
            out.push(NodeValue { path: path.into(), label, value: *value });
        }
        Ok(Signal { values })
    }
}

/// Snapped sample window `[lo, hi]` of `t_k + I`, if covered by the first
/// `avail` samples.
fn window(traj: &Trajectory, k: usize, i: &Interval, avail: usize) -> Option<(usize, usize)> {
    let t = traj.times[k];
    let last = *traj.times.last().unwrap();
    if t + i.b > last + traj.end_tolerance() {
        return None;
    }
    let lo = traj.nearest(t + i.a).max(k);
    let hi = traj.nearest(t + i.b).max(lo);
    (hi < avail).then_some((lo, hi))
}
