//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};

pub fn std_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile by bisection on [`std_cdf`].
pub fn std_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if std_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Risk figures of `h ~ N(m, s²)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianRisk {
    pub chance: f64,
    pub ev: f64,
    pub var: f64,
    pub cvar: f64,
}

pub fn gaussian_risk(m: f64, s: f64, beta: f64) -> GaussianRisk {
    gaussian_risk_at(m, s, beta, std_quantile(beta))
}

/// [`gaussian_risk`] with the `beta` quantile `z` supplied.
pub fn gaussian_risk_at(m: f64, s: f64, beta: f64, z: f64) -> GaussianRisk {
    GaussianRisk {
        chance: std_cdf(m / s),
        ev: -m,
        var: -m + s * z,
        cvar: -m + s * std_pdf(z) / (1.0 - beta),
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Dense convex QP `min ½zᵀHz + fᵀz` s.t. `G z ≥ g`.
pub struct Qp {
    pub h: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub g_rows: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Qp {
    fn objective(&self, z: &[f64]) -> f64 {
        let hz: Vec<f64> = self.h.iter().map(|r| dot(r, z)).collect();
        0.5 * dot(z, &hz) + dot(&self.f, z)
    }

    fn slacks(&self, z: &[f64]) -> Vec<f64> {
        self.g_rows.iter().zip(&self.g).map(|(r, gi)| dot(r, z) - gi).collect()
    }

    fn barrier(&self, z: &[f64], t: f64) -> f64 {
        let s = self.slacks(z);
        if s.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        t * self.objective(z) - s.iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Log-barrier path following from the strictly feasible `z0`, then an
    /// equality-constrained KKT solve on the constraints the barrier
    /// multipliers mark active.
    pub fn solve(&self, z0: &[f64]) -> Vec<f64> {
        let n = z0.len();
        let m = self.g.len();
        let mut z = z0.to_vec();
        assert!(self.slacks(&z).iter().all(|s| *s > 0.0), "start must be strictly feasible");
        let mut t = 1.0;
        while t < 1e14 {
            for _ in 0..200 {
                let s = self.slacks(&z);
                let mut grad: Vec<f64> = (0..n).map(|i| t * (dot(&self.h[i], &z) + self.f[i])).collect();
                let mut hess: Vec<Vec<f64>> = self.h.iter().map(|r| r.iter().map(|v| t * v).collect()).collect();
                for (r, si) in self.g_rows.iter().zip(&s) {
                    for i in 0..n {
                        grad[i] -= r[i] / si;
                        for j in 0..n {
                            hess[i][j] += r[i] * r[j] / (si * si);
                        }
                    }
                }
                let Some(step) = solve_linear(hess, grad.iter().map(|g| -g).collect()) else { break };
                let decrement = -dot(&grad, &step);
                if decrement < 1e-14 {
                    break;
                }
                let f0 = self.barrier(&z, t);
                let mut alpha = 1.0;
                let mut moved = false;
                while alpha > 1e-20 {
                    let trial: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
                    if self.barrier(&trial, t) <= f0 - 0.25 * alpha * decrement {
                        z = trial;
                        moved = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            t *= 10.0;
        }
        let s = self.slacks(&z);
        let lambda: Vec<f64> = s.iter().map(|si| 1.0 / (t / 10.0 * si)).collect();
        let active: Vec<usize> = (0..m).filter(|&i| lambda[i] > s[i]).collect();
        self.polish(&active).unwrap_or(z)
    }

    fn polish(&self, active: &[usize]) -> Option<Vec<f64>> {
        let n = self.f.len();
        let k = active.len();
        let mut a = vec![vec![0.0; n + k]; n + k];
        let mut rhs = vec![0.0; n + k];
        for i in 0..n {
            a[i][..n].copy_from_slice(&self.h[i]);
            rhs[i] = -self.f[i];
        }
        for (c, &i) in active.iter().enumerate() {
            for j in 0..n {
                a[j][n + c] = -self.g_rows[i][j];
                a[n + c][j] = self.g_rows[i][j];
            }
            rhs[n + c] = self.g[i];
        }
        let sol = solve_linear(a, rhs)?;
        let z = sol[..n].to_vec();
        let feasible = self.slacks(&z).iter().all(|s| *s >= -1e-12);
        let dual_ok = sol[n..].iter().all(|l| *l >= -1e-12);
        (feasible && dual_ok).then_some(z)
    }
}

/// Generic-solver reference for `min ‖u‖²` s.t. `aᵀu ≥ q`.
pub fn qp_min_norm(a: [f64; 2], q: f64) -> [f64; 2] {
    let n2 = a[0] * a[0] + a[1] * a[1];
    let s = q.abs() + 1.0;
    let qp = Qp {
        h: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
        f: vec![0.0, 0.0],
        g_rows: vec![a.to_vec()],
        g: vec![q],
    };
    let z = qp.solve(&[s * a[0] / n2, s * a[1] / n2]);
    [z[0], z[1]]
}

/// Generic-solver reference for `min ‖u‖² − ε` s.t. `aᵀu − ε ≥ q`, `ε ≥ 0`.
pub fn qp_slack(a: [f64; 2], q: f64) -> ([f64; 2], f64) {
    let n2 = a[0] * a[0] + a[1] * a[1];
    let s = q.abs() + 2.0;
    let qp = Qp {
        h: vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 0.0]],
        f: vec![0.0, 0.0, -1.0],
        g_rows: vec![vec![a[0], a[1], -1.0], vec![0.0, 0.0, 1.0]],
        g: vec![q, 0.0],
    };
    let z = qp.solve(&[s * a[0] / n2, s * a[1] / n2, 1.0]);
    ([z[0], z[1]], z[2])
}
