//! TOML scenario files.

use crate::determinize::{DomainBox, Options, ThresholdChoice};
use crate::logic::{parse_formula, Formula, Interpretation, LogicError};
use crate::stochastics::{GaussianVector, Method, PredicateFunction, RiskSpec, StochasticsError};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Stochastics(#[from] StochasticsError),
    #[error("formula: {0}")]
    Logic(#[from] LogicError),
}

type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSection {
    pub mean: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Affine,
    NormBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    Chance,
    Ev,
    Var,
    Cvar,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSection {
    pub id: String,
    pub family: FamilyKind,
    pub v: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub b0: Option<f64>,
    pub selector: Option<[usize; 2]>,
    pub epsilon: Option<f64>,
    pub risk: RiskKind,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// Threshold override.
    pub c: Option<f64>,
    pub chi: Option<f64>,
    /// Published threshold kept for comparison in reports.
    pub reference_c: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaSection {
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskSection {
    pub invariant: String,
    pub reach: String,
    /// Absolute deadline.
    pub deadline: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSection {
    Constant { value: [f64; 2] },
    /// `−gain·sat(x)` componentwise.
    Spring { gain: f64 },
    /// Smooth random signal with `‖c‖ ≤ amplitude`.
    Noise { amplitude: f64, seed: u64, modes: Option<usize> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// `[x, y, θ]`
    pub initial_state: [f64; 3],
    #[serde(default)]
    pub f_x: [f64; 2],
    #[serde(default)]
    pub f_theta: f64,
    /// Bound on the position disturbance norm.
    pub disturbance_bound: f64,
    #[serde(default)]
    pub disturbance: Vec<DisturbanceSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    MinNorm,
    Slack,
}

fn default_eta() -> f64 {
    20.0
}
fn default_gain() -> f64 {
    1.0
}
fn default_safety_chi() -> f64 {
    0.05
}
fn default_max_control() -> f64 {
    1e4
}
fn default_grid() -> usize {
    201
}
fn default_excess_decay() -> f64 {
    5.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub law: Law,
    pub l: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_gain")]
    pub gain: f64,
    pub alpha: Option<f64>,
    #[serde(default = "default_safety_chi")]
    pub safety_chi: f64,
    #[serde(default)]
    pub reach_margin: f64,
    /// Decay rate of the transient part of each reach offset.
    #[serde(default = "default_excess_decay")]
    pub excess_decay: f64,
    /// Requested initial barrier value of each subtask, in predicate units.
    #[serde(default)]
    pub start_margin: f64,
    #[serde(default = "default_max_control")]
    pub max_control: f64,
    /// Grid resolution per axis for switch containment.
    #[serde(default = "default_grid")]
    pub containment_grid: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default)]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub gaussian: GaussianSection,
    pub predicate: Vec<PredicateSection>,
    pub formula: FormulaSection,
    #[serde(default)]
    pub subtask: Vec<SubtaskSection>,
    pub dynamics: Option<DynamicsSection>,
    pub controller: Option<ControllerSection>,
    pub integrator: Option<IntegratorSection>,
    pub domain: Option<DomainSection>,
    pub monitor: Option<MonitorSection>,
}

fn need<T: Copy>(v: Option<T>, id: &str, field: &str) -> Result<T> {
    v.ok_or_else(|| ScenarioError::Invalid(format!("predicate `{id}`: missing `{field}`")))
}

impl PredicateSection {
    pub fn risk_spec(&self) -> Result<RiskSpec> {
        let id = &self.id;
        let spec = match self.risk {
            RiskKind::Chance => RiskSpec::Chance { delta: need(self.delta, id, "delta")? },
            RiskKind::Ev => RiskSpec::Ev { gamma: need(self.gamma, id, "gamma")? },
            RiskKind::Var => RiskSpec::Var { beta: need(self.beta, id, "beta")?, gamma: need(self.gamma, id, "gamma")? },
            RiskKind::Cvar => {
                RiskSpec::Cvar { beta: need(self.beta, id, "beta")?, gamma: need(self.gamma, id, "gamma")? }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_predicate(&self) -> Result<PredicateFunction> {
        let risk = self.risk_spec()?;
        Ok(match self.family {
            FamilyKind::Affine => PredicateFunction::affine(
                &self.id,
                self.v.clone().ok_or_else(|| ScenarioError::Invalid(format!("predicate `{}`: missing `v`", self.id)))?,
                self.w.clone().ok_or_else(|| ScenarioError::Invalid(format!("predicate `{}`: missing `w`", self.id)))?,
                self.b0.unwrap_or(0.0),
                risk,
            ),
            FamilyKind::NormBall => PredicateFunction::norm_ball(
                &self.id,
                need(self.selector, &self.id, "selector")?,
                need(self.epsilon, &self.id, "epsilon")?,
                risk,
            ),
        })
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let env = self.environment()?;
        let n = self.state_dim()?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.predicate {
            if !seen.insert(p.id.as_str()) {
                return Err(ScenarioError::Invalid(format!("duplicate predicate `{}`", p.id)));
            }
            p.to_predicate()?.validate(n, env.dim())?;
        }
        self.formula()?;
        self.domain()?;
        let mut last = 0.0;
        for (i, s) in self.subtask.iter().enumerate() {
            if !(s.deadline > last) {
                return Err(ScenarioError::Invalid(format!("subtask {} deadline must exceed {last}", i + 1)));
            }
            last = s.deadline;
            self.literal_formula(&s.invariant)?;
            self.literal_formula(&s.reach)?;
        }
        if let Some(i) = &self.integrator {
            if !(i.dt > 0.0 && i.t_end > 0.0) {
                return Err(ScenarioError::Invalid("integrator dt and t_end must be positive".into()));
            }
            if !self.subtask.is_empty() && last > i.t_end + 1e-12 {
                return Err(ScenarioError::Invalid("last deadline is after t_end".into()));
            }
        }
        if let Some(d) = &self.dynamics {
            if !(d.disturbance_bound >= 0.0) {
                return Err(ScenarioError::Invalid("disturbance_bound must be nonnegative".into()));
            }
        }
        if let Some(c) = &self.controller {
            if !(c.l > 0.0 && c.eta > 0.0 && c.gain > 0.0 && c.reach_margin >= 0.0 && c.excess_decay > 0.0 && c.start_margin >= 0.0 && c.containment_grid >= 2) {
                return Err(ScenarioError::Invalid("controller parameters out of range".into()));
            }
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<GaussianVector> {
        let g = &self.gaussian;
        Ok(match (&g.covariance, &g.variances) {
            (Some(c), None) => GaussianVector::new(g.mean.clone(), c.clone())?,
            (None, Some(v)) => GaussianVector::diagonal(g.mean.clone(), v)?,
            _ => return Err(ScenarioError::Invalid("gaussian needs exactly one of covariance, variances".into())),
        })
    }

    pub fn predicates(&self) -> Result<Vec<PredicateFunction>> {
        self.predicate.iter().map(|p| p.to_predicate()).collect()
    }

    pub fn state_dim(&self) -> Result<usize> {
        if let Some(d) = &self.domain {
            return Ok(d.lower.len());
        }
        for p in &self.predicate {
            match p.family {
                FamilyKind::Affine => return Ok(p.v.as_ref().map_or(0, |v| v.len())),
                FamilyKind::NormBall => return Ok(2),
            }
        }
        Err(ScenarioError::Invalid("cannot infer the state dimension".into()))
    }

    fn lookup(&self) -> impl Fn(&str) -> Option<Interpretation> + '_ {
        move |id| {
            self.predicate.iter().find(|p| p.id == id).map(|p| {
                if p.risk == RiskKind::Chance {
                    Interpretation::Chance
                } else {
                    Interpretation::Risk
                }
            })
        }
    }

    pub fn formula(&self) -> Result<Formula> {
        Ok(parse_formula(&self.formula.text, self.lookup())?)
    }

    /// Parses a conjunction of possibly negated predicate names.
    pub fn literal_formula(&self, text: &str) -> Result<Formula> {
        let f = parse_formula(text, self.lookup())?;
        fn check(f: &Formula) -> bool {
            match f {
                Formula::Pred(_) => true,
                Formula::Not(g) => matches!(**g, Formula::Pred(_)),
                Formula::And(a, b) => check(a) && check(b),
                _ => false,
            }
        }
        if !check(&f) {
            return Err(ScenarioError::Invalid(format!("`{text}` is not a conjunction of literals")));
        }
        Ok(f)
    }

    /// Domain box, or the bounding box of the initial state and environment
    /// mean inflated by 20% when none is given.
    pub fn domain(&self) -> Result<DomainBox> {
        let n = self.state_dim()?;
        if let Some(d) = &self.domain {
            if d.lower.len() != n || d.upper.len() != n {
                return Err(ScenarioError::Invalid("domain dimensions differ".into()));
            }
            return DomainBox::new(d.lower.clone(), d.upper.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()));
        }
        let mut pts: Vec<Vec<f64>> = Vec::new();
        if let Some(d) = &self.dynamics {
            pts.push(d.initial_state[..2].to_vec());
        }
        for p in &self.predicate {
            if let Some(s) = p.selector {
                pts.push(vec![self.gaussian.mean[s[0]], self.gaussian.mean[s[1]]]);
            }
        }
        if pts.is_empty() || pts.iter().any(|p| p.len() != n) {
            return Err(ScenarioError::Invalid("no [domain] given and none can be inferred".into()));
        }
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in &pts {
            for i in 0..n {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in 0..n {
            let pad = 0.2 * (hi[i] - lo[i]).max(1.0);
            lo[i] -= pad;
            hi[i] += pad;
        }
        DomainBox::new(lo, hi).map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn determinize_options(&self, mc_samples: Option<usize>, seed: Option<u64>) -> Options {
        let mut choices = BTreeMap::new();
        for p in &self.predicate {
            choices.insert(p.id.clone(), ThresholdChoice { c: p.c, chi: p.chi });
        }
        Options {
            fallback: Method::MonteCarlo {
                n: mc_samples.or(self.monitor.as_ref().and_then(|m| m.mc_samples)).unwrap_or(100_000),
                seed: seed.unwrap_or(self.seed),
            },
            choices,
            ..Options::default()
        }
    }

    /// `invariant ∧ reach` of every subtask, for the nonemptiness check.
    pub fn subtask_conjunctions(&self) -> Result<Vec<Formula>> {
        self.subtask
            .iter()
            .map(|s| Ok(Formula::and(self.literal_formula(&s.invariant)?, self.literal_formula(&s.reach)?)))
            .collect()
    }
}
