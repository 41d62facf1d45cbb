//! Gaussian environment model, predicate functions and risk metrics.

use crate::normal;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::OnceLock;
use thiserror::Error;

const PIVOT_TOL: f64 = 1e-12;
const QUAD_NODES: usize = 256;
const QUAD_SPAN: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochasticsError {
    #[error("probability {name} = {value} must lie strictly inside (0, 1)")]
    Probability { name: &'static str, value: f64 },
    #[error("covariance is not symmetric positive semidefinite ({0})")]
    NotPsd(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("selector index {index} out of range for environment of dimension {dim}")]
    Selector { index: usize, dim: usize },
    #[error("closed form is only available for affine predicates")]
    ClosedFormUnavailable,
    #[error("quadrature needs a norm-ball predicate with an isotropic covariance block")]
    QuadratureUnavailable,
    #[error("empirical distribution has no samples")]
    NoSamples,
    #[error("empirical tail above VaR is empty; CVaR undefined")]
    EmptyTail,
    #[error("invalid predicate {id}: {reason}")]
    Predicate { id: String, reason: String },
}

type Result<T> = std::result::Result<T, StochasticsError>;

/// The random environment vector `X ~ N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianVector {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
}

impl GaussianVector {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let n = mean.len();
        if cov.len() != n || cov.iter().any(|r| r.len() != n) {
            return Err(StochasticsError::Dimension(format!(
                "mean has {n} entries but covariance is not {n}x{n}"
            )));
        }
        if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(StochasticsError::NotPsd("non-finite entry".into()));
        }
        for i in 0..n {
            for j in 0..i {
                let scale = cov[i][j].abs().max(cov[j][i].abs()).max(1.0);
                if (cov[i][j] - cov[j][i]).abs() > 1e-12 * scale {
                    return Err(StochasticsError::NotPsd(format!("entry ({i},{j}) is asymmetric")));
                }
            }
        }
        let chol = cholesky(&cov)?;
        Ok(Self { mean, cov, chol })
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let n = variances.len();
        let mut cov = vec![vec![0.0; n]; n];
        for (i, v) in variances.iter().enumerate() {
            cov[i][i] = *v;
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    /// Lower-triangular factor `L` with `L Lᵀ = cov`.
    pub fn cholesky_factor(&self) -> &[Vec<f64>] {
        &self.chol
    }

    /// `wᵀ Σ w`.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, wi) in w.iter().enumerate() {
            for (j, wj) in w.iter().enumerate() {
                s += wi * self.cov[i][j] * wj;
            }
        }
        s.max(0.0)
    }

    /// Common variance of the 2x2 block at `sel` if the block is `σ²I`.
    pub fn isotropic_variance(&self, sel: [usize; 2]) -> Option<f64> {
        let a = self.cov[sel[0]][sel[0]];
        let b = self.cov[sel[1]][sel[1]];
        let c = self.cov[sel[0]][sel[1]];
        let scale = a.abs().max(b.abs()).max(1e-300);
        if (a - b).abs() <= 1e-12 * scale && c.abs() <= 1e-12 * scale {
            Some(a)
        } else {
            None
        }
    }
}

fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1.0);
    let tol = PIVOT_TOL * scale;
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d < -tol {
            return Err(StochasticsError::NotPsd(format!("negative pivot {d:.3e} at {j}")));
        }
        if d <= tol {
            // Rank-deficient direction: the remaining column must vanish too.
            for i in j + 1..n {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if s.abs() > tol.sqrt() * scale {
                    return Err(StochasticsError::NotPsd(format!("zero pivot with coupling at {j}")));
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / djj;
        }
    }
    Ok(l)
}

/// Draws `n` rows of `X` from a ChaCha stream seeded with `seed`.
pub fn sample(x: &GaussianVector, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = x.dim();
    let mut z = vec![0.0; d];
    (0..n)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            (0..d)
                .map(|i| x.mean[i] + (0..=i).map(|k| x.chol[i][k] * z[k]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Risk annotation turning a predicate function into a chance or risk predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskSpec {
    Chance { delta: f64 },
    Ev { gamma: f64 },
    Var { beta: f64, gamma: f64 },
    Cvar { beta: f64, gamma: f64 },
}

impl RiskSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RiskSpec::Chance { delta } => check_prob("delta", delta),
            RiskSpec::Var { beta, gamma } | RiskSpec::Cvar { beta, gamma } => {
                check_prob("beta", beta)?;
                finite("gamma", gamma)
            }
            RiskSpec::Ev { gamma } => finite("gamma", gamma),
        }
    }

    pub fn is_chance(&self) -> bool {
        matches!(self, RiskSpec::Chance { .. })
    }

    /// `P(h ≥ 0)` for chance predicates, `R(-h)` for risk predicates.
    pub fn metric(&self, d: &ScalarDistribution) -> Result<f64> {
        match *self {
            RiskSpec::Chance { .. } => Ok(d.chance()),
            RiskSpec::Ev { .. } => Ok(d.ev_neg()),
            RiskSpec::Var { beta, .. } => d.var_beta(beta),
            RiskSpec::Cvar { beta, .. } => d.cvar_beta(beta),
        }
    }

    /// Signed margin of the predicate: `P - δ` or `γ - R(-h)`.
    pub fn margin(&self, metric: f64) -> f64 {
        match *self {
            RiskSpec::Chance { delta } => metric - delta,
            RiskSpec::Ev { gamma } | RiskSpec::Var { gamma, .. } | RiskSpec::Cvar { gamma, .. } => {
                gamma - metric
            }
        }
    }

    pub fn robustness(&self, d: &ScalarDistribution) -> Result<f64> {
        Ok(self.margin(self.metric(d)?))
    }

    /// The same spec with its requirement tightened by `r` (δ + r or γ − r).
    pub fn tightened(&self, r: f64) -> RiskSpec {
        match *self {
            RiskSpec::Chance { delta } => RiskSpec::Chance { delta: delta + r },
            RiskSpec::Ev { gamma } => RiskSpec::Ev { gamma: gamma - r },
            RiskSpec::Var { beta, gamma } => RiskSpec::Var { beta, gamma: gamma - r },
            RiskSpec::Cvar { beta, gamma } => RiskSpec::Cvar { beta, gamma: gamma - r },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RiskSpec::Chance { .. } => "chance",
            RiskSpec::Ev { .. } => "ev",
            RiskSpec::Var { .. } => "var",
            RiskSpec::Cvar { .. } => "cvar",
        }
    }
}

fn check_prob(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(StochasticsError::Probability { name, value })
    }
}

fn finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(StochasticsError::Predicate { id: name.into(), reason: "not finite".into() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `h(x, X) = vᵀx + wᵀX + b0`
    Affine { v: Vec<f64>, w: Vec<f64>, b0: f64 },
    /// `h(x, X) = ε − ‖x − X_sel‖`
    NormBall { selector: [usize; 2], epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateFunction {
    pub id: String,
    pub family: Family,
    pub risk: RiskSpec,
}

impl PredicateFunction {
    pub fn affine(id: &str, v: Vec<f64>, w: Vec<f64>, b0: f64, risk: RiskSpec) -> Self {
        Self { id: id.into(), family: Family::Affine { v, w, b0 }, risk }
    }

    pub fn norm_ball(id: &str, selector: [usize; 2], epsilon: f64, risk: RiskSpec) -> Self {
        Self { id: id.into(), family: Family::NormBall { selector, epsilon }, risk }
    }

    /// Checks the family against state dimension `n` and environment dimension `m`.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let bad = |reason: String| StochasticsError::Predicate { id: self.id.clone(), reason };
        self.risk.validate().map_err(|e| bad(e.to_string()))?;
        match &self.family {
            Family::Affine { v, w, b0 } => {
                if v.len() != n || w.len() != m {
                    return Err(bad(format!(
                        "expected |v| = {n} and |w| = {m}, got {} and {}",
                        v.len(),
                        w.len()
                    )));
                }
                if v.iter().chain(w).all(|c| *c == 0.0) {
                    return Err(bad("v and w are both zero".into()));
                }
                if !b0.is_finite() || v.iter().chain(w).any(|c| !c.is_finite()) {
                    return Err(bad("non-finite coefficient".into()));
                }
            }
            Family::NormBall { selector, epsilon } => {
                if n != 2 {
                    return Err(bad("norm-ball predicates need a planar state".into()));
                }
                for &index in selector {
                    if index >= m {
                        return Err(StochasticsError::Selector { index, dim: m });
                    }
                }
                if !(*epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(bad("epsilon must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// `h(x, env)` for one realization `env` of the environment.
    pub fn eval(&self, x: &[f64], env: &[f64]) -> f64 {
        match &self.family {
            Family::Affine { v, w, b0 } => dot(v, x) + dot(w, env) + b0,
            Family::NormBall { selector, epsilon } => {
                let dx = x[0] - env[selector[0]];
                let dy = x[1] - env[selector[1]];
                epsilon - dx.hypot(dy)
            }
        }
    }

    /// Gradient of `h` in `x`; `None` at the centre of a norm ball.
    pub fn grad_x(&self, x: &[f64], env: &[f64]) -> Option<Vec<f64>> {
        match &self.family {
            Family::Affine { v, .. } => Some(v.clone()),
            Family::NormBall { selector, .. } => {
                let dx = x[0] - env[selector[0]];
                let dy = x[1] - env[selector[1]];
                let r = dx.hypot(dy);
                if r == 0.0 {
                    None
                } else {
                    Some(vec![-dx / r, -dy / r])
                }
            }
        }
    }

    /// Lipschitz constant of `h` in `x`.
    pub fn lipschitz(&self) -> f64 {
        match &self.family {
            Family::Affine { v, .. } => dot(v, v).sqrt(),
            Family::NormBall { .. } => 1.0,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Affine { .. } => "affine",
            Family::NormBall { .. } => "norm_ball",
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// How to obtain the distribution of `h(x, X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo { n: usize, seed: u64 },
}

/// The exact method for a predicate when one exists, Monte Carlo otherwise.
pub fn exact_method(h: &PredicateFunction, x: &GaussianVector, fallback: Method) -> Method {
    match h.family {
        Family::Affine { .. } => Method::ClosedForm,
        Family::NormBall { selector, .. } if x.isotropic_variance(selector).is_some() => {
            Method::Quadrature
        }
        _ => fallback,
    }
}

/// Law of the scalar `h(x, X)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarDistribution {
    Gaussian { mu: f64, sigma: f64 },
    /// Samples of `h`, sorted ascending.
    Empirical { samples: Vec<f64> },
    /// `h = ε − d` with `d` Rice-distributed: the distance from a fixed point to
    /// a planar Gaussian with isotropic deviation `sigma` centred `distance` away.
    Radial { epsilon: f64, distance: f64, sigma: f64 },
}

pub fn pushforward(
    h: &PredicateFunction,
    x: &[f64],
    env: &GaussianVector,
    method: Method,
) -> Result<ScalarDistribution> {
    if let Family::NormBall { selector, .. } = h.family {
        for index in selector {
            if index >= env.dim() {
                return Err(StochasticsError::Selector { index, dim: env.dim() });
            }
        }
    }
    match method {
        Method::ClosedForm => match &h.family {
            Family::Affine { w, .. } => Ok(ScalarDistribution::Gaussian {
                mu: h.eval(x, env.mean()),
                sigma: env.quadratic_form(w).sqrt(),
            }),
            Family::NormBall { .. } => Err(StochasticsError::ClosedFormUnavailable),
        },
        Method::Quadrature => match h.family {
            Family::NormBall { selector, epsilon } => {
                let var = env
                    .isotropic_variance(selector)
                    .ok_or(StochasticsError::QuadratureUnavailable)?;
                let m = env.mean();
                Ok(ScalarDistribution::Radial {
                    epsilon,
                    distance: (x[0] - m[selector[0]]).hypot(x[1] - m[selector[1]]),
                    sigma: var.sqrt(),
                })
            }
            Family::Affine { .. } => Err(StochasticsError::QuadratureUnavailable),
        },
        Method::MonteCarlo { n, seed } => {
            let draws = sample(env, n.max(1), seed);
            Ok(pushforward_samples(h, x, &draws))
        }
    }
}

/// Empirical law of `h(x, ·)` over pre-drawn environment samples.
pub fn pushforward_samples(h: &PredicateFunction, x: &[f64], draws: &[Vec<f64>]) -> ScalarDistribution {
    let mut samples: Vec<f64> = draws.iter().map(|e| h.eval(x, e)).collect();
    samples.sort_by(f64::total_cmp);
    ScalarDistribution::Empirical { samples }
}

pub fn risk_value(
    h: &PredicateFunction,
    x: &[f64],
    env: &GaussianVector,
    spec: &RiskSpec,
    method: Method,
) -> Result<f64> {
    spec.metric(&pushforward(h, x, env, method)?)
}

impl ScalarDistribution {
    pub fn empirical(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(StochasticsError::NoSamples);
        }
        samples.sort_by(f64::total_cmp);
        Ok(ScalarDistribution::Empirical { samples })
    }

    /// `P(h ≥ 0)`.
    pub fn chance(&self) -> f64 {
        match self {
            ScalarDistribution::Gaussian { mu, sigma } => {
                if *sigma == 0.0 {
                    if *mu >= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal::cdf(mu / sigma)
                }
            }
            ScalarDistribution::Empirical { samples } => {
                let below = samples.partition_point(|s| *s < 0.0);
                (samples.len() - below) as f64 / samples.len() as f64
            }
            ScalarDistribution::Radial { epsilon, distance, sigma } => {
                if *epsilon <= 0.0 {
                    0.0
                } else if *sigma == 0.0 {
                    if distance <= epsilon {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    Rice::new(*distance, *sigma).cdf(*epsilon)
                }
            }
        }
    }

    /// `E[-h]`.
    pub fn ev_neg(&self) -> f64 {
        match self {
            ScalarDistribution::Gaussian { mu, .. } => -mu,
            ScalarDistribution::Empirical { samples } => {
                -samples.iter().sum::<f64>() / samples.len() as f64
            }
            ScalarDistribution::Radial { epsilon, distance, sigma } => {
                if *sigma == 0.0 {
                    distance - epsilon
                } else {
                    Rice::new(*distance, *sigma).partial_mean(0.0) - epsilon
                }
            }
        }
    }

    /// `VaR_β(-h)`, the smallest `d` with `P(-h ≤ d) ≥ β`.
    pub fn var_beta(&self, beta: f64) -> Result<f64> {
        check_prob("beta", beta)?;
        Ok(match self {
            ScalarDistribution::Gaussian { mu, sigma } => -mu + sigma * normal::quantile(beta),
            ScalarDistribution::Empirical { samples } => {
                let n = samples.len();
                let k = empirical_var_index(beta, n);
                -samples[n - 1 - k]
            }
            ScalarDistribution::Radial { epsilon, distance, sigma } => {
                if *sigma == 0.0 {
                    distance - epsilon
                } else {
                    Rice::new(*distance, *sigma).quantile(beta) - epsilon
                }
            }
        })
    }

    /// `CVaR_β(-h) = E[-h | -h > VaR_β(-h)]`.
    pub fn cvar_beta(&self, beta: f64) -> Result<f64> {
        check_prob("beta", beta)?;
        match self {
            ScalarDistribution::Gaussian { mu, sigma } => {
                Ok(-mu + sigma * normal::pdf(normal::quantile(beta)) / (1.0 - beta))
            }
            ScalarDistribution::Empirical { samples } => {
                let n = samples.len();
                let var = -samples[n - 1 - empirical_var_index(beta, n)];
                // Losses −h strictly above VaR are the samples h strictly below −VaR.
                let cut = samples.partition_point(|s| -s > var);
                if cut == 0 {
                    return Err(StochasticsError::EmptyTail);
                }
                Ok(-samples[..cut].iter().sum::<f64>() / cut as f64)
            }
            ScalarDistribution::Radial { epsilon, distance, sigma } => {
                if *sigma == 0.0 {
                    return Ok(distance - epsilon);
                }
                let rice = Rice::new(*distance, *sigma);
                let q = rice.quantile(beta);
                Ok(rice.partial_mean(q) / (1.0 - beta) - epsilon)
            }
        }
    }
}

fn empirical_var_index(beta: f64, n: usize) -> usize {
    let k = (beta * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n) - 1
}

/// Rice law of `‖Y‖` for `Y ~ N(c, σ²I₂)` with `‖c‖ = nu`.
struct Rice {
    nu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
}

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| normal::gauss_legendre(QUAD_NODES))
}

impl Rice {
    fn new(nu: f64, sigma: f64) -> Self {
        let lo = (nu - QUAD_SPAN * sigma).max(0.0);
        let hi = nu + QUAD_SPAN * sigma;
        Self { nu, sigma, lo, hi }
    }

    fn pdf(&self, r: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let z = (r - self.nu) / self.sigma;
        r / s2 * (-0.5 * z * z).exp() * normal::bessel_i0e(r * self.nu / s2)
    }

    fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if b <= a {
            return 0.0;
        }
        let (x, w) = gl_rule();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        x.iter().zip(w).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
    }

    fn cdf(&self, r: f64) -> f64 {
        if r >= self.hi {
            return 1.0;
        }
        if r <= self.lo {
            return 0.0;
        }
        // Integrate whichever side is shorter relative to the mode.
        if r - self.lo <= self.hi - r {
            self.integrate(self.lo, r, |t| self.pdf(t)).clamp(0.0, 1.0)
        } else {
            (1.0 - self.integrate(r, self.hi, |t| self.pdf(t))).clamp(0.0, 1.0)
        }
    }

    /// `∫_q^∞ r f(r) dr`.
    fn partial_mean(&self, q: f64) -> f64 {
        self.integrate(q, self.hi, |t| t * self.pdf(t))
    }

    fn quantile(&self, p: f64) -> f64 {
        let (mut a, mut b) = (self.lo, self.hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if self.cdf(m) >= p {
                b = m;
            } else {
                a = m;
            }
            if b - a < 1e-13 * self.hi.max(1.0) {
                break;
            }
        }
        b
    }
}
