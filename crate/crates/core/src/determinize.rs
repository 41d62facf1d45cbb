//! Threshold synthesis: replace chance and risk leaves by deterministic
//! inequalities `h(x, μ̃) − c ≥ 0` whose solution sets lie inside the
//! chance/risk sets.

use crate::logic::{Formula, Interpretation};
use crate::normal;
use crate::stochastics::{
    dot, exact_method, pushforward, pushforward_samples, sample, Family, GaussianVector, Method,
    PredicateFunction, RiskSpec, ScalarDistribution, StochasticsError,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use thiserror::Error;

/// Slack allowed when comparing a risk margin against zero.
pub const INCLUSION_TOL: f64 = 1e-12;
const BOUNDARY_POINTS: usize = 720;

#[derive(Debug, Error)]
pub enum DeterminizeError {
    #[error("invalid domain box: {0}")]
    Box(String),
    #[error("predicate `{id}`: the set {{x in box | h(x, mean) >= {c}}} is empty")]
    EmptySet { id: String, c: f64 },
    #[error("predicate `{0}`: no threshold makes the deterministic set a subset of the risk set")]
    NoFeasibleC(String),
    #[error("predicate `{0}` has no state dependence")]
    NoStateDependence(String),
    #[error("predicate `{0}` is already deterministic")]
    AlreadyDeterministic(String),
    #[error("predicate `{0}` is not defined")]
    UnknownPredicate(String),
    #[error("predicate `{0}` has no synthesized threshold")]
    MissingThreshold(String),
    #[error("assumptions do not hold: {0}")]
    Assumptions(String),
    #[error(transparent)]
    Stochastics(#[from] StochasticsError),
}

type Result<T> = std::result::Result<T, DeterminizeError>;

/// Axis-aligned compact domain for the state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(DeterminizeError::Box("bounds must have equal nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(DeterminizeError::Box("need finite lower < upper in every coordinate".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| *x >= l - tol && *x <= u + tol)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.lower).zip(&self.upper).map(|((x, l), u)| x.clamp(*l, *u)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Corners of a planar box, counter-clockwise from the lower-left.
    pub fn corners2(&self) -> [[f64; 2]; 4] {
        let (l, u) = (&self.lower, &self.upper);
        [[l[0], l[1]], [u[0], l[1]], [u[0], u[1]], [l[0], u[1]]]
    }

    /// `min` and `max` of `vᵀx` over the box.
    fn linear_range(&self, v: &[f64]) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for ((vi, l), u) in v.iter().zip(&self.lower).zip(&self.upper) {
            lo += (vi * l).min(vi * u);
            hi += (vi * l).max(vi * u);
        }
        (lo, hi)
    }
}

/// `h(x, μ̃)` split as `vᵀx + k`.
fn affine_parts<'a>(pred: &'a PredicateFunction, mean: &[f64]) -> Option<(&'a [f64], f64, &'a [f64])> {
    match &pred.family {
        Family::Affine { v, w, b0 } => Some((v, dot(w, mean) + b0, w)),
        Family::NormBall { .. } => None,
    }
}

/// `argmin vᵀx` over `{x ∈ box | h(x, μ̃) ≥ c}` for an affine predicate, with
/// ties broken towards the lexicographically smallest point.
pub fn worst_point_affine(
    pred: &PredicateFunction,
    c: f64,
    mean: &[f64],
    domain: &DomainBox,
) -> Result<Vec<f64>> {
    let (v, k, _) = affine_parts(pred, mean).expect("affine predicate");
    if v.iter().all(|vi| *vi == 0.0) {
        return Err(DeterminizeError::NoStateDependence(pred.id.clone()));
    }
    let (lo, hi) = domain.linear_range(v);
    let tau = c - k;
    if hi < tau - 1e-12 * (1.0 + tau.abs()) {
        return Err(DeterminizeError::EmptySet { id: pred.id.clone(), c });
    }
    Ok(lex_smallest_on_level(v, tau.clamp(lo, hi), domain))
}

/// Lexicographically smallest `x` in the box with `vᵀx = s`.
fn lex_smallest_on_level(v: &[f64], mut s: f64, domain: &DomainBox) -> Vec<f64> {
    let n = v.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let (mut rlo, mut rhi) = (0.0, 0.0);
        for j in i + 1..n {
            rlo += (v[j] * domain.lower[j]).min(v[j] * domain.upper[j]);
            rhi += (v[j] * domain.lower[j]).max(v[j] * domain.upper[j]);
        }
        let xi = if v[i] > 0.0 {
            (s - rhi) / v[i]
        } else if v[i] < 0.0 {
            (s - rlo) / v[i]
        } else {
            domain.lower[i]
        };
        x[i] = xi.clamp(domain.lower[i], domain.upper[i]);
        s -= v[i] * x[i];
    }
    x
}

/// Result of an inclusion check at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inclusion {
    pub holds: bool,
    pub worst_point: Vec<f64>,
    /// `P(h ≥ 0)` or `R(−h)` at the worst point.
    pub worst_value: f64,
    /// Signed margin of the risk requirement at the worst point.
    pub margin: f64,
}

/// Decides `{x ∈ box | h(x, μ̃) − c ≥ 0} ⊆ {x | spec holds at x}` by locating
/// the worst point of the deterministic set.
pub fn check_inclusion(
    pred: &PredicateFunction,
    spec: &RiskSpec,
    c: f64,
    domain: &DomainBox,
    env: &GaussianVector,
    fallback: Method,
) -> Result<Inclusion> {
    let (worst_point, worst_value) = match &pred.family {
        Family::Affine { .. } => {
            let x = worst_point_affine(pred, c, env.mean(), domain)?;
            let d = pushforward(pred, &x, env, Method::ClosedForm)?;
            let value = spec.metric(&d)?;
            (x, value)
        }
        Family::NormBall { selector, epsilon } => {
            let center = [env.mean()[selector[0]], env.mean()[selector[1]]];
            let candidates = ball_box_boundary(center, epsilon - c, domain)
                .ok_or_else(|| DeterminizeError::EmptySet { id: pred.id.clone(), c })?;
            let method = exact_method(pred, env, fallback);
            match method {
                Method::Quadrature => {
                    // Rotational symmetry: the worst point is the one farthest from the centre.
                    let far = candidates
                        .iter()
                        .copied()
                        .max_by(|a, b| dist(*a, center).total_cmp(&dist(*b, center)))
                        .expect("nonempty");
                    let d = pushforward(pred, &far, env, method)?;
                    (far.to_vec(), spec.metric(&d)?)
                }
                _ => anisotropic_worst(pred, spec, center, epsilon - c, &candidates, domain, env, method)?,
            }
        }
    };
    let margin = spec.margin(worst_value);
    Ok(Inclusion { holds: margin >= -INCLUSION_TOL, worst_point, worst_value, margin })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Candidate worst points of `ball(center, radius) ∩ box`: circle samples and
/// circle/edge crossings inside the box plus box corners inside the ball.
/// `None` when the intersection is empty.
fn ball_box_boundary(center: [f64; 2], radius: f64, domain: &DomainBox) -> Option<Vec<[f64; 2]>> {
    if radius < 0.0 {
        return None;
    }
    let mut out = Vec::new();
    let tol = 1e-12 * (1.0 + radius);
    for k in 0..BOUNDARY_POINTS {
        let a = TAU * k as f64 / BOUNDARY_POINTS as f64;
        let p = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
        if domain.contains(&p, tol) {
            out.push(p);
        }
    }
    for axis in 0..2 {
        for bound in [domain.lower[axis], domain.upper[axis]] {
            let off = bound - center[axis];
            let rem = radius * radius - off * off;
            if rem < 0.0 {
                continue;
            }
            for s in [-1.0, 1.0] {
                let mut p = [0.0; 2];
                p[axis] = bound;
                p[1 - axis] = center[1 - axis] + s * rem.sqrt();
                if domain.contains(&p, tol) {
                    out.push(p);
                }
            }
        }
    }
    for corner in domain.corners2() {
        if dist(corner, center) <= radius + tol {
            out.push(corner);
        }
    }
    (!out.is_empty()).then_some(out)
}

#[allow(clippy::too_many_arguments)]
fn anisotropic_worst(
    pred: &PredicateFunction,
    spec: &RiskSpec,
    center: [f64; 2],
    radius: f64,
    candidates: &[[f64; 2]],
    domain: &DomainBox,
    env: &GaussianVector,
    method: Method,
) -> Result<(Vec<f64>, f64)> {
    let (n, seed) = match method {
        Method::MonteCarlo { n, seed } => (n, seed),
        _ => (100_000, 0),
    };
    let draws = sample(env, n, seed);
    let margin_at = |p: [f64; 2]| -> Result<(f64, f64)> {
        let m = spec.metric(&pushforward_samples(pred, &p, &draws))?;
        Ok((spec.margin(m), m))
    };
    let mut best = (f64::INFINITY, 0.0, candidates[0]);
    for &p in candidates {
        let (margin, m) = margin_at(p)?;
        if margin < best.0 {
            best = (margin, m, p);
        }
    }
    // Golden-section refinement along the circle around the best sample.
    let on_circle = (dist(best.2, center) - radius).abs() <= 1e-9 * (1.0 + radius);
    if on_circle && radius > 0.0 {
        let a0 = (best.2[1] - center[1]).atan2(best.2[0] - center[0]);
        let step = TAU / BOUNDARY_POINTS as f64;
        let point = |a: f64| [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (a0 - step, a0 + step);
        for _ in 0..40 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            let (p1, p2) = (point(m1), point(m2));
            let f1 = if domain.contains(&p1, 0.0) { margin_at(p1)?.0 } else { f64::INFINITY };
            let f2 = if domain.contains(&p2, 0.0) { margin_at(p2)?.0 } else { f64::INFINITY };
            if f1 < f2 {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let p = point(0.5 * (lo + hi));
        if domain.contains(&p, 0.0) {
            let (margin, m) = margin_at(p)?;
            if margin < best.0 {
                best = (margin, m, p);
            }
        }
    }
    Ok((best.2.to_vec(), best.1))
}

/// `max_{x ∈ box} h(x, μ̃)` with its maximizer.
pub fn max_over_box(pred: &PredicateFunction, mean: &[f64], domain: &DomainBox) -> (f64, Vec<f64>) {
    match &pred.family {
        Family::Affine { v, .. } => {
            let x: Vec<f64> = v
                .iter()
                .zip(&domain.lower)
                .zip(&domain.upper)
                .map(|((vi, l), u)| if *vi > 0.0 { *u } else { *l })
                .collect();
            (pred.eval(&x, mean), x)
        }
        Family::NormBall { selector, .. } => {
            let x = domain.clamp(&[mean[selector[0]], mean[selector[1]]]);
            (pred.eval(&x, mean), x)
        }
    }
}

fn min_over_box(pred: &PredicateFunction, mean: &[f64], domain: &DomainBox) -> f64 {
    match &pred.family {
        Family::Affine { v, .. } => {
            let k = pred.eval(&vec![0.0; v.len()], mean);
            domain.linear_range(v).0 + k
        }
        Family::NormBall { selector, epsilon } => {
            let c = [mean[selector[0]], mean[selector[1]]];
            epsilon - domain.corners2().iter().map(|p| dist(*p, c)).fold(0.0, f64::max)
        }
    }
}

/// Smallest threshold whose deterministic set is included in the risk set.
///
/// Affine predicates use level-set alignment: at the worst point `h(x*, μ̃) = c`
/// and `h(x*, X) ~ N(c, σ)`, so the requirement reduces to a bound on `c`.
/// When the requirement holds on the whole box, the threshold at which the set
/// starts to shrink is returned.
pub fn minimal_c(
    pred: &PredicateFunction,
    spec: &RiskSpec,
    domain: &DomainBox,
    env: &GaussianVector,
    tol: f64,
    fallback: Method,
) -> Result<f64> {
    spec.validate()?;
    match &pred.family {
        Family::Affine { .. } => {
            let (_, _, w) = affine_parts(pred, env.mean()).expect("affine");
            let sigma = env.quadratic_form(w).sqrt();
            let required = match *spec {
                RiskSpec::Chance { delta } => sigma * normal::quantile(delta),
                RiskSpec::Ev { gamma } => -gamma,
                RiskSpec::Var { beta, gamma } => sigma * normal::quantile(beta) - gamma,
                RiskSpec::Cvar { beta, gamma } => {
                    sigma * normal::pdf(normal::quantile(beta)) / (1.0 - beta) - gamma
                }
            };
            let (hmax, _) = max_over_box(pred, env.mean(), domain);
            if required > hmax {
                return Err(DeterminizeError::NoFeasibleC(pred.id.clone()));
            }
            Ok(required.max(min_over_box(pred, env.mean(), domain)))
        }
        Family::NormBall { .. } => minimal_c_bisection(pred, spec, domain, env, tol, fallback),
    }
}

/// Bisection on `c` with [`check_inclusion`]; valid for any family.
pub fn minimal_c_bisection(
    pred: &PredicateFunction,
    spec: &RiskSpec,
    domain: &DomainBox,
    env: &GaussianVector,
    tol: f64,
    fallback: Method,
) -> Result<f64> {
    let (mut hi, _) = max_over_box(pred, env.mean(), domain);
    let mut lo = min_over_box(pred, env.mean(), domain);
    if !check_inclusion(pred, spec, hi, domain, env, fallback)?.holds {
        return Err(DeterminizeError::NoFeasibleC(pred.id.clone()));
    }
    if check_inclusion(pred, spec, lo, domain, env, fallback)?.holds {
        return Ok(lo);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if check_inclusion(pred, spec, mid, domain, env, fallback)?.holds {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Largest tightening `r` of the risk requirement that still contains
/// `{x ∈ box | h(x, μ̃) − c ≥ level}`, where `level = ε_r / α`.
pub fn robustness_bound_r_single(
    pred: &PredicateFunction,
    c: f64,
    level: f64,
    domain: &DomainBox,
    env: &GaussianVector,
    fallback: Method,
) -> Result<f64> {
    // The tightened spec holds iff its margin at the worst point is ≥ r, so the
    // supremum is that margin itself.
    Ok(check_inclusion(pred, &pred.risk, c + level, domain, env, fallback)?.margin)
}

/// `min_m r_m` over the predicates with thresholds `cs`.
pub fn robustness_bound_r(
    preds: &[PredicateFunction],
    cs: &[f64],
    level: f64,
    domain: &DomainBox,
    env: &GaussianVector,
    fallback: Method,
) -> Result<f64> {
    let mut r = f64::INFINITY;
    for (p, c) in preds.iter().zip(cs) {
        r = r.min(robustness_bound_r_single(p, *c, level, domain, env, fallback)?);
    }
    Ok(r)
}

/// A literal `±(h(x, μ̃) − threshold)` of a state formula.
#[derive(Debug, Clone, PartialEq)]
pub struct Literal<'a> {
    pub pred: &'a PredicateFunction,
    pub threshold: f64,
    pub negated: bool,
}

impl Literal<'_> {
    pub fn value(&self, x: &[f64], mean: &[f64]) -> f64 {
        let v = self.pred.eval(x, mean) - self.threshold;
        if self.negated {
            -v
        } else {
            v
        }
    }

    fn grad(&self, x: &[f64], mean: &[f64]) -> Vec<f64> {
        let g = self.pred.grad_x(x, mean).unwrap_or_else(|| vec![0.0; x.len()]);
        if self.negated {
            g.iter().map(|v| -v).collect()
        } else {
            g
        }
    }
}

/// Disjunctive normal form of a state formula over deterministic leaves.
pub fn state_dnf<'a>(f: &Formula, preds: &'a [PredicateFunction]) -> Result<Vec<Vec<Literal<'a>>>> {
    fn go<'a>(
        f: &Formula,
        neg: bool,
        preds: &'a [PredicateFunction],
    ) -> Result<Vec<Vec<Literal<'a>>>> {
        Ok(match f {
            Formula::True => {
                if neg {
                    vec![]
                } else {
                    vec![vec![]]
                }
            }
            Formula::Pred(a) => {
                let pred = preds
                    .iter()
                    .find(|p| p.id == a.id)
                    .ok_or_else(|| DeterminizeError::UnknownPredicate(a.id.clone()))?;
                let Interpretation::Deterministic { threshold } = a.interp else {
                    return Err(DeterminizeError::MissingThreshold(a.id.clone()));
                };
                vec![vec![Literal { pred, threshold, negated: neg }]]
            }
            Formula::Not(c) => go(c, !neg, preds)?,
            Formula::And(l, r) | Formula::Or(l, r) => {
                let a = go(l, neg, preds)?;
                let b = go(r, neg, preds)?;
                let conj = matches!(f, Formula::And(..)) != neg;
                if conj {
                    let mut out = Vec::new();
                    for x in &a {
                        for y in &b {
                            out.push(x.iter().chain(y).cloned().collect());
                        }
                    }
                    out
                } else {
                    a.into_iter().chain(b).collect()
                }
            }
            _ => return Err(DeterminizeError::Assumptions("temporal operator inside a state formula".into())),
        })
    }
    go(f, false, preds)
}

/// `max_{x ∈ box} min_k literal_k(x)` by smooth-min ascent with a sharpness
/// continuation followed by compass search on the exact minimum.
pub fn maximize_conjunction(lits: &[Literal], mean: &[f64], domain: &DomainBox) -> (f64, Vec<f64>) {
    let n = domain.dim();
    if lits.is_empty() {
        return (f64::INFINITY, domain.center());
    }
    let exact = |x: &[f64]| lits.iter().map(|l| l.value(x, mean)).fold(f64::INFINITY, f64::min);
    let mut starts = vec![domain.center()];
    if n == 2 {
        for i in 0..5 {
            for j in 0..5 {
                let fx = (i as f64 + 0.5) / 5.0;
                let fy = (j as f64 + 0.5) / 5.0;
                starts.push(vec![
                    domain.lower[0] + fx * (domain.upper[0] - domain.lower[0]),
                    domain.lower[1] + fy * (domain.upper[1] - domain.lower[1]),
                ]);
            }
        }
    }
    for l in lits {
        if let Family::NormBall { selector, .. } = l.pred.family {
            starts.push(domain.clamp(&[mean[selector[0]], mean[selector[1]]]));
        }
    }
    let width = domain.lower.iter().zip(&domain.upper).map(|(l, u)| u - l).fold(0.0, f64::max);
    let mut best = (f64::NEG_INFINITY, domain.center());
    for x0 in starts {
        let mut x = x0;
        for eta in [1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0] {
            let eta = eta / width.max(1e-9) * 10.0;
            let smooth = |x: &[f64]| {
                let vals: Vec<f64> = lits.iter().map(|l| l.value(x, mean)).collect();
                let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
                m - vals.iter().map(|v| (-eta * (v - m)).exp()).sum::<f64>().ln() / eta
            };
            let mut step = 0.1 * width;
            for _ in 0..200 {
                let vals: Vec<f64> = lits.iter().map(|l| l.value(&x, mean)).collect();
                let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let ws: Vec<f64> = vals.iter().map(|v| (-eta * (v - m)).exp()).collect();
                let total: f64 = ws.iter().sum();
                let mut g = vec![0.0; n];
                for (l, w) in lits.iter().zip(&ws) {
                    for (gi, di) in g.iter_mut().zip(l.grad(&x, mean)) {
                        *gi += w / total * di;
                    }
                }
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if gn < 1e-12 {
                    break;
                }
                let f0 = smooth(&x);
                let mut moved = false;
                while step > 1e-12 * width.max(1.0) {
                    let y = domain.clamp(&x.iter().zip(&g).map(|(x, g)| x + step * g / gn).collect::<Vec<_>>());
                    if smooth(&y) > f0 {
                        x = y;
                        moved = true;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                }
                if !moved {
                    break;
                }
            }
        }
        let (v, x) = compass(&exact, x, domain, 0.01 * width);
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}

fn compass(f: &impl Fn(&[f64]) -> f64, mut x: Vec<f64>, domain: &DomainBox, mut step: f64) -> (f64, Vec<f64>) {
    let n = x.len();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let mut d = vec![0.0; n];
            d[i] = s;
            dirs.push(d);
        }
    }
    if n == 2 {
        for k in 0..16 {
            let a = TAU * (k as f64 + 0.5) / 16.0;
            dirs.push(vec![a.cos(), a.sin()]);
        }
    }
    let mut fx = f(&x);
    while step > 1e-10 {
        let mut improved = false;
        for d in &dirs {
            let y = domain.clamp(&x.iter().zip(d).map(|(x, d)| x + step * d).collect::<Vec<_>>());
            let fy = f(&y);
            if fy > fx {
                x = y;
                fx = fy;
                improved = true;
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (fx, x)
}

/// Maximum robustness of a state formula over the box, with a witness.
pub fn maximize_state_formula(
    f: &Formula,
    preds: &[PredicateFunction],
    mean: &[f64],
    domain: &DomainBox,
) -> Result<(f64, Vec<f64>)> {
    let mut best = (f64::NEG_INFINITY, domain.center());
    for conj in state_dnf(f, preds)? {
        let cand = maximize_conjunction(&conj, mean, domain);
        if cand.0 > best.0 {
            best = cand;
        }
    }
    Ok(best)
}

/// Maximal temporal-free subformulas of `f`.
pub fn state_subformulas(f: &Formula) -> Vec<&Formula> {
    fn go<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
        if !crate::logic::any_node(f, &Formula::is_temporal) {
            out.push(f);
            return;
        }
        match f {
            Formula::Not(c) | Formula::Eventually(c, _) | Formula::Always(c, _) => go(c, out),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Until(l, r, _) => {
                go(l, out);
                go(r, out);
            }
            Formula::True | Formula::Pred(_) => out.push(f),
        }
    }
    let mut out = Vec::new();
    go(f, &mut out);
    out
}

/// Satisfiability witness for one state formula.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub formula: String,
    pub value: f64,
    pub point: Vec<f64>,
    pub ok: bool,
}

/// Checks that each predicate and each state subformula of `bar` can be
/// strictly satisfied somewhere in the box.
pub fn check_assumption1(
    bar: &Formula,
    preds: &[PredicateFunction],
    mean: &[f64],
    domain: &DomainBox,
    extra: &[Formula],
) -> Result<(bool, Vec<Witness>)> {
    let mut witnesses = Vec::new();
    let mut leaves = Vec::new();
    bar.map_atoms(&mut |a| {
        if !leaves.iter().any(|l: &Formula| matches!(l, Formula::Pred(b) if b.id == a.id)) {
            leaves.push(Formula::Pred(a.clone()));
        }
        Ok::<_, DeterminizeError>(a.clone())
    })?;
    let subs = state_subformulas(bar);
    for f in leaves.iter().chain(subs.into_iter().filter(|f| !matches!(f, Formula::Pred(_)))).chain(extra) {
        let (value, point) = maximize_state_formula(f, preds, mean, domain)?;
        witnesses.push(Witness { formula: f.to_string(), value, ok: value > 0.0, point });
    }
    Ok((witnesses.iter().all(|w| w.ok), witnesses))
}

/// Replaces each chance/risk leaf by `h − c ≥ 0` (first formula) and
/// `h − c − χ ≥ 0` (second formula).
pub fn determinize(f: &Formula, thresholds: &BTreeMap<String, (f64, f64)>) -> Result<(Formula, Formula)> {
    let rewrite = |with_chi: bool| {
        f.map_atoms(&mut |a| match a.interp {
            Interpretation::Deterministic { .. } => Err(DeterminizeError::AlreadyDeterministic(a.id.clone())),
            _ => {
                let (c, chi) = thresholds
                    .get(&a.id)
                    .ok_or_else(|| DeterminizeError::MissingThreshold(a.id.clone()))?;
                let threshold = if with_chi { c + chi } else { *c };
                Ok(crate::logic::Atom { id: a.id.clone(), interp: Interpretation::Deterministic { threshold } })
            }
        })
    };
    Ok((rewrite(false)?, rewrite(true)?))
}

/// Per-predicate synthesis outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredicateThreshold {
    pub id: String,
    pub family: String,
    pub spec: String,
    pub c: f64,
    pub chi: f64,
    pub minimal_c: f64,
    /// `max_{x ∈ box} h(x, μ̃) − c`.
    pub slack: f64,
    pub inclusion: Inclusion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterminizationResult {
    pub thresholds: Vec<PredicateThreshold>,
    pub assumption1_ok: bool,
    pub assumption2_ok: bool,
    pub witnesses: Vec<Witness>,
    #[serde(skip)]
    pub phi: Option<Formula>,
    #[serde(skip)]
    pub phi_bar: Option<Formula>,
    pub phi_text: Option<String>,
    pub phi_bar_text: Option<String>,
}

impl DeterminizationResult {
    pub fn threshold(&self, id: &str) -> Option<&PredicateThreshold> {
        self.thresholds.iter().find(|t| t.id == id)
    }

    pub fn ok(&self) -> bool {
        self.assumption1_ok && self.assumption2_ok
    }
}

/// User overrides for one predicate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThresholdChoice {
    pub c: Option<f64>,
    pub chi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub tol: f64,
    /// `χ` as a fraction of the per-predicate slack when not given explicitly.
    pub chi_fraction: f64,
    pub fallback: Method,
    pub choices: BTreeMap<String, ThresholdChoice>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            chi_fraction: 0.05,
            fallback: Method::MonteCarlo { n: 100_000, seed: 0 },
            choices: BTreeMap::new(),
        }
    }
}

/// Full pipeline: thresholds, margins, inclusion certificates, assumption
/// checks and both rewritten formulas.
pub fn synthesize(
    f: &Formula,
    preds: &[PredicateFunction],
    env: &GaussianVector,
    domain: &DomainBox,
    opts: &Options,
    extra: &[Formula],
) -> Result<DeterminizationResult> {
    let mut thresholds = Vec::new();
    let mut table = BTreeMap::new();
    let mut inclusion_ok = true;
    for id in crate::logic::predicates_of(f) {
        let pred = preds
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| DeterminizeError::UnknownPredicate(id.clone()))?;
        let choice = opts.choices.get(&id).copied().unwrap_or_default();
        let min_c = minimal_c(pred, &pred.risk, domain, env, opts.tol, opts.fallback);
        let (hmax, _) = max_over_box(pred, env.mean(), domain);
        // Without a feasible threshold the tightest nonempty set is reported
        // and its failed inclusion certificate marks the assumption.
        let (minimal, c) = match (min_c, choice.c) {
            (Ok(m), Some(c)) => (m, c),
            (Ok(m), None) => (m, m),
            (Err(DeterminizeError::NoFeasibleC(_)), Some(c)) => (f64::NAN, c),
            (Err(DeterminizeError::NoFeasibleC(_)), None) => (f64::NAN, hmax),
            (Err(e), _) => return Err(e),
        };
        let slack = hmax - c;
        let chi = choice.chi.unwrap_or(opts.chi_fraction * slack.max(0.0));
        let inclusion = match check_inclusion(pred, &pred.risk, c, domain, env, opts.fallback) {
            Ok(i) => i,
            Err(DeterminizeError::EmptySet { .. }) => Inclusion {
                holds: false,
                worst_point: vec![],
                worst_value: f64::NAN,
                margin: f64::NAN,
            },
            Err(e) => return Err(e),
        };
        inclusion_ok &= inclusion.holds;
        table.insert(id.clone(), (c, chi));
        thresholds.push(PredicateThreshold {
            id: id.clone(),
            family: pred.family_name().into(),
            spec: spec_text(&pred.risk),
            c,
            chi,
            minimal_c: minimal,
            slack,
            inclusion,
        });
    }
    let (phi, phi_bar) = determinize(f, &table)?;
    let (a1, witnesses) = check_assumption1(&phi_bar, preds, env.mean(), domain, extra)?;
    let chi_ok = thresholds.iter().all(|t| t.chi > 0.0);
    Ok(DeterminizationResult {
        assumption1_ok: a1 && chi_ok,
        assumption2_ok: inclusion_ok,
        witnesses,
        phi_text: Some(phi.to_string()),
        phi_bar_text: Some(phi_bar.to_string()),
        phi: Some(phi),
        phi_bar: Some(phi_bar),
        thresholds,
    })
}

pub fn spec_text(spec: &RiskSpec) -> String {
    match *spec {
        RiskSpec::Chance { delta } => format!("P(h>=0) >= {delta}"),
        RiskSpec::Ev { gamma } => format!("EV(-h) <= {gamma}"),
        RiskSpec::Var { beta, gamma } => format!("VaR_{beta}(-h) <= {gamma}"),
        RiskSpec::Cvar { beta, gamma } => format!("CVaR_{beta}(-h) <= {gamma}"),
    }
}

/// Distribution of `h` at the worst point, for reporting.
pub fn worst_distribution(
    pred: &PredicateFunction,
    inc: &Inclusion,
    env: &GaussianVector,
    fallback: Method,
) -> Result<ScalarDistribution> {
    Ok(pushforward(pred, &inc.worst_point, env, exact_method(pred, env, fallback))?)
}
