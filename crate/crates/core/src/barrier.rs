//! Time-varying barrier functions for planar subtasks `G ψ_inv ∧ F ψ_reach`.
//!
//! Each component is `κ·(h̄_k(p) + γ_k(t))` with a nonincreasing offset `γ_k`;
//! the barrier is their log-sum-exp smooth minimum with sharpness `η`.

use crate::determinize::{DomainBox, Literal};
use crate::stochastics::Family;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("time {t} outside the barrier span [{start}, {end}]")]
    Span { t: f64, start: f64, end: f64 },
    #[error("gradient undefined at the centre of component `{0}`")]
    Nondifferentiable(String),
    #[error("negated norm-ball literal `{0}` is not concave")]
    NotConcave(String),
    #[error("invariance literal `{label}` is violated at activation point ({x}, {y})")]
    InvariantViolated { label: String, x: f64, y: f64 },
    #[error("no reach offset makes the barrier feasible on the activation set")]
    InfeasibleActivation,
    #[error("barrier maximum {value} at t = {t} is not positive")]
    NoInterior { t: f64, value: f64 },
    #[error("literal `{0}` needs a planar state")]
    Dimension(String),
}

type Result<T> = std::result::Result<T, BarrierError>;

/// Concave planar function `h̄(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// `v·p + k`
    Affine { v: [f64; 2], k: f64 },
    /// `radius − ‖p − center‖`
    Ball { center: [f64; 2], radius: f64 },
}

impl Shape {
    pub fn value(&self, p: [f64; 2]) -> f64 {
        match *self {
            Shape::Affine { v, k } => v[0] * p[0] + v[1] * p[1] + k,
            Shape::Ball { center, radius } => radius - (p[0] - center[0]).hypot(p[1] - center[1]),
        }
    }

    pub fn grad(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        match *self {
            Shape::Affine { v, .. } => Some(v),
            Shape::Ball { center, .. } => {
                let d = [p[0] - center[0], p[1] - center[1]];
                let r = d[0].hypot(d[1]);
                (r > 0.0).then(|| [-d[0] / r, -d[1] / r])
            }
        }
    }

    /// Shape of a deterministic literal evaluated at the environment mean.
    pub fn from_literal(lit: &Literal, mean: &[f64]) -> Result<Shape> {
        let shape = match &lit.pred.family {
            Family::Affine { v, w, b0 } => {
                if v.len() != 2 {
                    return Err(BarrierError::Dimension(lit.pred.id.clone()));
                }
                let k: f64 = w.iter().zip(mean).map(|(a, b)| a * b).sum::<f64>() + b0 - lit.threshold;
                Shape::Affine { v: [v[0], v[1]], k }
            }
            Family::NormBall { selector, epsilon } => Shape::Ball {
                center: [mean[selector[0]], mean[selector[1]]],
                radius: epsilon - lit.threshold,
            },
        };
        if !lit.negated {
            return Ok(shape);
        }
        match shape {
            Shape::Affine { v, k } => Ok(Shape::Affine { v: [-v[0], -v[1]], k: -k }),
            Shape::Ball { .. } => Err(BarrierError::NotConcave(lit.pred.id.clone())),
        }
    }
}

/// `γ(t)` of a component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Offset {
    Zero,
    /// Linear from `g0` at `t0` to `g_end` at `t_star`, plus an excess that
    /// starts at `excess` and decays like `exp(−decay·(t − t0)/(t_star − t0))`,
    /// shifted to vanish at `t_star`. Constant `g_end` afterwards.
    Ramp { g0: f64, g_end: f64, t0: f64, t_star: f64, excess: f64, decay: f64 },
}

impl Offset {
    pub fn linear(g0: f64, g_end: f64, t0: f64, t_star: f64) -> Self {
        Offset::Ramp { g0, g_end, t0, t_star, excess: 0.0, decay: 1.0 }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Offset::Zero => 0.0,
            Offset::Ramp { g0, g_end, t0, t_star, excess, decay } => {
                if t_star <= t0 || t >= t_star {
                    return g_end;
                }
                let s = ((t - t0) / (t_star - t0)).max(0.0);
                let tail = (-decay).exp();
                g0 + (g_end - g0) * s + excess * ((-decay * s).exp() - tail) / (1.0 - tail)
            }
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            Offset::Zero => 0.0,
            Offset::Ramp { g0, g_end, t0, t_star, excess, decay } => {
                if t_star <= t0 || t >= t_star || t < t0 {
                    return 0.0;
                }
                let span = t_star - t0;
                let s = ((t - t0) / span).max(0.0);
                let tail = (-decay).exp();
                (g_end - g0) / span - excess * decay * (-decay * s).exp() / ((1.0 - tail) * span)
            }
        }
    }

    pub fn initial(&self) -> f64 {
        match *self {
            Offset::Zero => 0.0,
            Offset::Ramp { g0, excess, .. } => g0 + excess,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: String,
    pub shape: Shape,
    pub offset: Offset,
}

impl Component {
    pub fn value(&self, p: [f64; 2], t: f64) -> f64 {
        self.shape.value(p) + self.offset.value(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierFunction {
    pub components: Vec<Component>,
    pub eta: f64,
    pub gain: f64,
    pub start: f64,
    pub end: f64,
}

/// Value, gradient and time derivative at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub grad: [f64; 2],
    pub ddt: f64,
}

impl BarrierFunction {
    fn check_span(&self, t: f64) -> Result<()> {
        let tol = 1e-9 * (1.0 + self.end.abs());
        if t < self.start - tol || t > self.end + tol {
            Err(BarrierError::Span { t, start: self.start, end: self.end })
        } else {
            Ok(())
        }
    }

    fn scaled(&self, p: [f64; 2], t: f64) -> Vec<f64> {
        self.components.iter().map(|c| self.gain * c.value(p, t)).collect()
    }

    fn weights(&self, vals: &[f64]) -> (f64, Vec<f64>) {
        let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = vals.iter().map(|v| (-self.eta * (v - m)).exp()).collect();
        let s: f64 = e.iter().sum();
        (m - s.ln() / self.eta, e.iter().map(|x| x / s).collect())
    }

    pub fn eval(&self, p: [f64; 2], t: f64) -> Result<f64> {
        self.check_span(t)?;
        Ok(self.weights(&self.scaled(p, t)).0)
    }

    /// Smallest scaled component value.
    pub fn min_component(&self, p: [f64; 2], t: f64) -> f64 {
        self.scaled(p, t).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn grad_p(&self, p: [f64; 2], t: f64) -> Result<[f64; 2]> {
        Ok(self.eval_all(p, t)?.grad)
    }

    pub fn ddt(&self, p: [f64; 2], t: f64) -> Result<f64> {
        Ok(self.eval_all(p, t)?.ddt)
    }

    pub fn eval_all(&self, p: [f64; 2], t: f64) -> Result<BarrierEval> {
        self.check_span(t)?;
        let (value, w) = self.weights(&self.scaled(p, t));
        let mut grad = [0.0; 2];
        let mut ddt = 0.0;
        for (c, wk) in self.components.iter().zip(&w) {
            let g = c.shape.grad(p).ok_or_else(|| BarrierError::Nondifferentiable(c.label.clone()))?;
            grad[0] += wk * self.gain * g[0];
            grad[1] += wk * self.gain * g[1];
            ddt += wk * self.gain * c.offset.rate(t);
        }
        Ok(BarrierEval { value, grad, ddt })
    }

    /// [`Self::eval_all`], nudging `p` by 1e-9 off a ball centre.
    pub fn eval_all_perturbed(&self, p: [f64; 2], t: f64) -> Result<BarrierEval> {
        match self.eval_all(p, t) {
            Err(BarrierError::Nondifferentiable(_)) => self.eval_all([p[0] + 1e-9, p[1]], t),
            r => r,
        }
    }

    /// Central finite-difference gradient and time derivative.
    pub fn finite_difference(&self, p: [f64; 2], t: f64, h: f64) -> Result<([f64; 2], f64)> {
        let gx = (self.eval([p[0] + h, p[1]], t)? - self.eval([p[0] - h, p[1]], t)?) / (2.0 * h);
        let gy = (self.eval([p[0], p[1] + h], t)? - self.eval([p[0], p[1] - h], t)?) / (2.0 * h);
        let gt = (self.eval(p, t + h)? - self.eval(p, t - h)?) / (2.0 * h);
        Ok(([gx, gy], gt))
    }

    /// Maximizes `b(·, t)` over the box by projected gradient ascent.
    pub fn argmax(&self, t: f64, domain: &DomainBox, start: [f64; 2]) -> Result<([f64; 2], f64)> {
        let clamp = |p: [f64; 2]| {
            [p[0].clamp(domain.lower[0], domain.upper[0]), p[1].clamp(domain.lower[1], domain.upper[1])]
        };
        let width = (domain.upper[0] - domain.lower[0]).max(domain.upper[1] - domain.lower[1]);
        let mut p = clamp(start);
        let mut f = self.eval(p, t)?;
        let mut step = 0.05 * width;
        for _ in 0..2000 {
            let g = self.eval_all_perturbed(p, t)?.grad;
            let gn = g[0].hypot(g[1]);
            if gn < 1e-12 {
                break;
            }
            let mut moved = false;
            while step > 1e-12 * width {
                let q = clamp([p[0] + step * g[0] / gn, p[1] + step * g[1] / gn]);
                let fq = self.eval(q, t)?;
                if fq > f {
                    p = q;
                    f = fq;
                    step *= 1.5;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Ok((p, f))
    }
}

/// Subtask description in terms of literals on the modified predicates.
pub struct SubtaskSpec<'a, 'b> {
    pub invariant: &'b [Literal<'a>],
    pub reach: &'b [Literal<'a>],
    pub t0: f64,
    pub t_star: f64,
    /// Span end; at least `t_star`, larger to hold the last barrier.
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub eta: f64,
    pub gain: f64,
    /// Final reach offset is `−reach_margin`.
    pub reach_margin: f64,
    /// Relative inflation of the initial reach gap.
    pub inflation: f64,
    /// Decay of the activation excess over one subtask span.
    pub excess_decay: f64,
    /// Requested `b(p0, t0) / gain`, capped at half of what the invariance part allows.
    pub start_margin: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { eta: 20.0, gain: 1.0, reach_margin: 0.0, inflation: 0.1, excess_decay: 5.0, start_margin: 0.0 }
    }
}

fn face_components(domain: &DomainBox) -> Vec<Component> {
    let (l, u) = (&domain.lower, &domain.upper);
    [
        ("box x >= lower", [1.0, 0.0], -l[0]),
        ("box x <= upper", [-1.0, 0.0], u[0]),
        ("box y >= lower", [0.0, 1.0], -l[1]),
        ("box y <= upper", [0.0, -1.0], u[1]),
    ]
    .into_iter()
    .map(|(label, v, k)| Component { label: label.into(), shape: Shape::Affine { v, k }, offset: Offset::Zero })
    .collect()
}

fn literal_label(lit: &Literal) -> String {
    if lit.negated {
        format!("!{}", lit.pred.id)
    } else {
        lit.pred.id.clone()
    }
}

/// Builds the barrier of one subtask. Invariance literals and the box faces get
/// no offset. Each reach literal gets a linear offset from the inflated gap at
/// `p0` down to `−reach_margin` at `t_star`. A common decaying excess is then
/// raised until `b(p0, t0) ≥ 0` and `b(p, t0) ≥ v` for each `(p, v)` in
/// `dominate`. Passing the previous barrier's values on a sample around its
/// safe set makes the switch keep that set.
pub fn build_barrier(
    task: &SubtaskSpec,
    mean: &[f64],
    domain: &DomainBox,
    p0: [f64; 2],
    dominate: &[([f64; 2], f64)],
    opts: &BuildOptions,
) -> Result<BarrierFunction> {
    let mut components = face_components(domain);
    for lit in task.invariant {
        components.push(Component {
            label: literal_label(lit),
            shape: Shape::from_literal(lit, mean)?,
            offset: Offset::Zero,
        });
    }
    for c in &components {
        if c.shape.value(p0) <= 0.0 {
            return Err(BarrierError::InvariantViolated { label: c.label.clone(), x: p0[0], y: p0[1] });
        }
    }
    let first_reach = components.len();
    let g_end = -opts.reach_margin;
    for lit in task.reach {
        let shape = Shape::from_literal(lit, mean)?;
        let g0 = ((1.0 + opts.inflation) * (-shape.value(p0)).max(0.0)).max(g_end);
        components.push(Component {
            label: literal_label(lit),
            shape,
            offset: Offset::Ramp {
                g0,
                g_end,
                t0: task.t0,
                t_star: task.t_star,
                excess: 0.0,
                decay: opts.excess_decay,
            },
        });
    }
    let mut b = BarrierFunction {
        components,
        eta: opts.eta,
        gain: opts.gain,
        start: task.t0,
        end: task.end.max(task.t_star),
    };
    let set_excess = |b: &mut BarrierFunction, e: f64| {
        for c in &mut b.components[first_reach..] {
            if let Offset::Ramp { excess, .. } = &mut c.offset {
                *excess = e;
            }
        }
    };
    let invariant_only = BarrierFunction { components: b.components[..first_reach].to_vec(), ..b.clone() };
    let start_level = (opts.gain * opts.start_margin).min(0.5 * invariant_only.eval(p0, task.t0)?).max(0.0);
    let feasible = |b: &BarrierFunction| -> Result<bool> {
        if b.eval(p0, task.t0)? < start_level {
            return Ok(false);
        }
        for (p, v) in dominate {
            if b.eval(*p, task.t0)? < *v {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if feasible(&b)? {
        return Ok(b);
    }
    if first_reach == b.components.len() {
        return Err(BarrierError::InfeasibleActivation);
    }
    let diameter = (domain.upper[0] - domain.lower[0]).hypot(domain.upper[1] - domain.lower[1]);
    let (mut lo, mut hi) = (0.0, 1e-3 * diameter);
    loop {
        set_excess(&mut b, hi);
        if feasible(&b)? {
            break;
        }
        if hi > 4.0 * diameter {
            return Err(BarrierError::InfeasibleActivation);
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        set_excess(&mut b, mid);
        if feasible(&b)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Grid points only sample the set; leave room between them.
    set_excess(&mut b, 1.05 * hi + 1e-3 * diameter);
    Ok(b)
}

/// `max(1, (χ − ∂b/∂t) / b)` for samples `(∂b/∂t, b)` taken at the maximizer.
pub fn alpha_from_samples(safety_chi: f64, samples: &[(f64, f64)]) -> f64 {
    samples.iter().map(|(ddt, b)| (safety_chi - ddt) / b).fold(1.0, f64::max)
}

/// Decay rate `α` so that `−α b(p*, t) + ∂b/∂t(p*, t) ≤ −χ` along the
/// maximizer `p*(t)` on a time grid.
pub fn choose_alpha(b: &BarrierFunction, domain: &DomainBox, safety_chi: f64) -> Result<f64> {
    let steps = 50;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut p = [0.5 * (domain.lower[0] + domain.upper[0]), 0.5 * (domain.lower[1] + domain.upper[1])];
    for k in 0..=steps {
        let t = b.start + (b.end - b.start) * k as f64 / steps as f64;
        let (q, value) = b.argmax(t, domain, p)?;
        if value <= 0.0 {
            return Err(BarrierError::NoInterior { t, value });
        }
        p = q;
        samples.push((b.eval_all_perturbed(p, t)?.ddt, value));
    }
    Ok(alpha_from_samples(safety_chi, &samples))
}

/// Result of checking `{b_prev(·, s) ≥ 0} ⊆ {b_next(·, s) ≥ 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Containment {
    pub ok: bool,
    pub counterexample: Option<[f64; 2]>,
    pub checked: usize,
}

/// Grid points of the box where `b(·, t) ≥ 0`.
pub fn superlevel_grid(b: &BarrierFunction, t: f64, domain: &DomainBox, n: usize) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let p = [
                domain.lower[0] + (domain.upper[0] - domain.lower[0]) * i as f64 / (n - 1) as f64,
                domain.lower[1] + (domain.upper[1] - domain.lower[1]) * j as f64 / (n - 1) as f64,
            ];
            if b.eval(p, t)? >= 0.0 {
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Grid points where `b(·, t) ≥ −L·d` with `L` the gain and `d` the cell
/// half-diagonal, paired with their barrier values.
pub fn domination_sample(
    b: &BarrierFunction,
    t: f64,
    domain: &DomainBox,
    n: usize,
) -> Result<Vec<([f64; 2], f64)>> {
    let hx = (domain.upper[0] - domain.lower[0]) / (n - 1) as f64;
    let hy = (domain.upper[1] - domain.lower[1]) / (n - 1) as f64;
    let zeta = b.gain * 0.5 * hx.hypot(hy);
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let p = [domain.lower[0] + hx * i as f64, domain.lower[1] + hy * j as f64];
            let v = b.eval(p, t)?;
            if v >= -zeta {
                out.push((p, v));
            }
        }
    }
    Ok(out)
}

pub fn check_switch_containment(
    prev: &BarrierFunction,
    next: &BarrierFunction,
    s: f64,
    domain: &DomainBox,
    n: usize,
) -> Result<Containment> {
    let pts = superlevel_grid(prev, s, domain, n)?;
    for p in &pts {
        if next.eval(*p, s)? < 0.0 {
            return Ok(Containment { ok: false, counterexample: Some(*p), checked: pts.len() });
        }
    }
    Ok(Containment { ok: true, counterexample: None, checked: pts.len() })
}
