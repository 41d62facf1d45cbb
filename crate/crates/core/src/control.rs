//! Unicycle near-identity diffeomorphism and closed-form barrier QP laws.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("constraint requires a·u ≥ {q} but the barrier gradient vanishes")]
    Infeasible { q: f64 },
}

/// Gradient norms below this are treated as zero.
pub const ZERO_GRADIENT: f64 = 1e-10;

/// Look-ahead point `p = x + l (cos θ, sin θ)`.
pub fn diffeo(x: [f64; 2], theta: f64, l: f64) -> [f64; 2] {
    [x[0] + l * theta.cos(), x[1] + l * theta.sin()]
}

/// Input matrix of `p`: `ṗ = f_p + g_p(θ) u`.
pub fn g_p_matrix(theta: f64, l: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -l * s], [s, l * c]]
}

/// Barrier constraint `aᵀu ≥ q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub a: [f64; 2],
    pub q: f64,
}

impl Constraint {
    /// `a = ∇b g_p`, `q = −α b + ‖∇b‖ C − d` with `d = ∇b·f_p + ∂b/∂t`.
    pub fn new(grad: [f64; 2], theta: f64, l: f64, alpha: f64, b: f64, disturbance_bound: f64, d: f64) -> Self {
        let g = g_p_matrix(theta, l);
        let a = [grad[0] * g[0][0] + grad[1] * g[1][0], grad[0] * g[0][1] + grad[1] * g[1][1]];
        let q = -alpha * b + grad[0].hypot(grad[1]) * disturbance_bound - d;
        Self { a, q }
    }

    fn a_norm2(&self) -> f64 {
        self.a[0] * self.a[0] + self.a[1] * self.a[1]
    }

    pub fn residual(&self, u: [f64; 2]) -> f64 {
        self.a[0] * u[0] + self.a[1] * u[1] - self.q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub u: [f64; 2],
    pub epsilon: f64,
    /// `aᵀu − q`; nonnegative for a feasible solution.
    pub constraint_residual: f64,
}

/// `min ‖u‖²` s.t. `aᵀu ≥ q`.
pub fn min_norm_control(con: &Constraint) -> Result<ControlOutput, ControlError> {
    let n2 = con.a_norm2();
    let u = if con.q <= 0.0 {
        [0.0, 0.0]
    } else if n2.sqrt() < ZERO_GRADIENT {
        return Err(ControlError::Infeasible { q: con.q });
    } else {
        [con.q * con.a[0] / n2, con.q * con.a[1] / n2]
    };
    Ok(ControlOutput { u, epsilon: 0.0, constraint_residual: con.residual(u) })
}

/// `min ‖u‖² − ε` s.t. `aᵀu ≥ q + ε`, `ε ≥ 0`.
pub fn slack_control(con: &Constraint) -> ControlOutput {
    let n2 = con.a_norm2();
    if n2.sqrt() < ZERO_GRADIENT {
        let u = [0.0, 0.0];
        let epsilon = (-con.q).max(0.0);
        return ControlOutput { u, epsilon, constraint_residual: con.residual(u) };
    }
    let eps_star = 0.5 * n2 - con.q;
    let (u, epsilon) = if eps_star >= 0.0 {
        ([0.5 * con.a[0], 0.5 * con.a[1]], eps_star)
    } else {
        ([con.q * con.a[0] / n2, con.q * con.a[1] / n2], 0.0)
    };
    ControlOutput { u, epsilon, constraint_residual: con.residual(u) }
}
