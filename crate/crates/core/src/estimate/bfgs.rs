//! BFGS with backtracking Armijo line search.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsSettings {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfgsStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    /// The starting point itself was infeasible.
    BadStart,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub status: BfgsStatus,
}

impl BfgsOutcome {
    pub fn grad_norm(&self) -> f64 {
        norm(&self.grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

/// Minimizes `value`, using `value_grad` at accepted points. Either closure
/// returns `None` (or a non-finite value) for infeasible points.
pub fn minimize<V, G>(value: V, value_grad: G, x0: &[f64], settings: &BfgsSettings) -> BfgsOutcome
where
    V: Fn(&[f64]) -> Option<f64>,
    G: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let Some((mut f, mut g)) = value_grad(&x).filter(|(f, _)| f.is_finite()) else {
        return BfgsOutcome {
            x,
            value: f64::INFINITY,
            grad: vec![f64::NAN; n],
            iterations: 0,
            status: BfgsStatus::BadStart,
        };
    };
    let mut h = identity(n);
    let mut fresh = true;
    let mut status = BfgsStatus::MaxIterations;
    let mut iterations = 0;

    for it in 0..settings.max_iter {
        if norm(&g) < settings.grad_tol {
            status = BfgsStatus::Converged;
            break;
        }
        let mut dir: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some(ft) = value(&trial).filter(|v| v.is_finite()) {
                if ft <= f + ARMIJO_C1 * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(x_new) = accepted else {
            status = BfgsStatus::LineSearchFailed;
            break;
        };
        let Some((f_new, g_new)) = value_grad(&x_new).filter(|(v, _)| v.is_finite()) else {
            status = BfgsStatus::LineSearchFailed;
            break;
        };
        iterations = it + 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
                fresh = false;
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
        } else {
            // curvature condition violated
            h = identity(n);
            fresh = true;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    if status == BfgsStatus::MaxIterations && norm(&g) < settings.grad_tol {
        status = BfgsStatus::Converged;
    }
    BfgsOutcome { x, value: f, grad: g, iterations, status }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            row
        })
        .collect()
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / sᵀy`.
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
