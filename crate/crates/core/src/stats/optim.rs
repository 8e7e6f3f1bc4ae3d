//! Minimal deterministic L-BFGS minimizer with Armijo backtracking.
//!
//! Shared by the mixed-model outer optimization (2 parameters) and the
//! sentence classifier (thousands of parameters). No stochasticity anywhere:
//! identical inputs give identical iterates.

/// Options for [`lbfgs`].
#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iters: usize,
    /// Convergence: Euclidean norm of the gradient.
    pub grad_tol: f64,
    /// Number of (s, y) correction pairs kept.
    pub memory: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_iters: 500, grad_tol: 1e-6, memory: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimize `fg` (which returns the value and gradient at a point) starting
/// from `x0`. Line search is Armijo backtracking from unit step; if the
/// L-BFGS direction fails to descend, one steepest-descent restart is tried
/// before giving up.
pub fn lbfgs<F>(mut fg: F, x0: &[f64], opts: &OptimOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const ARMIJO_C1: f64 = 1e-4;
    const SHRINK: f64 = 0.5;
    const MAX_BACKTRACKS: usize = 60;

    let mut x = x0.to_vec();
    let (mut value, mut grad) = fg(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();

    let mut iterations = 0;
    while iterations < opts.max_iters {
        let grad_norm = norm(&grad);
        if grad_norm <= opts.grad_tol {
            return OptimResult { x, value, grad_norm, iterations, converged: true };
        }

        // Two-loop recursion for the quasi-Newton direction.
        let mut direction = grad.iter().map(|g| -g).collect::<Vec<f64>>();
        let pairs = s_hist.len();
        let mut alphas = vec![0.0; pairs];
        for i in (0..pairs).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let alpha = rho * dot(&s_hist[i], &direction);
            alphas[i] = alpha;
            for (d, y) in direction.iter_mut().zip(&y_hist[i]) {
                *d -= alpha * y;
            }
        }
        if pairs > 0 {
            let last = pairs - 1;
            let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            for d in direction.iter_mut() {
                *d *= gamma;
            }
        }
        for i in 0..pairs {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &direction);
            for (d, s) in direction.iter_mut().zip(&s_hist[i]) {
                *d += (alphas[i] - beta) * s;
            }
        }

        let mut slope = dot(&grad, &direction);
        if !slope.is_finite() || slope >= 0.0 {
            // Fall back to steepest descent and drop stale curvature.
            direction = grad.iter().map(|g| -g).collect();
            slope = -grad_norm * grad_norm;
            s_hist.clear();
            y_hist.clear();
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> =
                x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
            let (trial_value, trial_grad) = fg(&trial);
            if trial_value.is_finite() && trial_value <= value + ARMIJO_C1 * step * slope {
                accepted = Some((trial, trial_value, trial_grad));
                break;
            }
            step *= SHRINK;
        }
        let Some((new_x, new_value, new_grad)) = accepted else {
            // No decrease possible along this direction: report where we are.
            return OptimResult {
                grad_norm: norm(&grad),
                converged: norm(&grad) <= opts.grad_tol,
                x,
                value,
                iterations,
            };
        };

        let s: Vec<f64> = new_x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = new_x;
        value = new_value;
        grad = new_grad;
        iterations += 1;
    }

    let grad_norm = norm(&grad);
    OptimResult { converged: grad_norm <= opts.grad_tol, x, value, grad_norm, iterations }
}
