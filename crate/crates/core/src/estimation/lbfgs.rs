//! Limited-memory BFGS with box projection and central-difference gradients.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when |Δf| / max(1, |f|) falls below this.
    pub rel_tol: f64,
    /// Stop when the projected gradient norm falls below this.
    pub grad_tol: f64,
    /// Finite-difference step is `fd_step · max(1, |x_i|)`.
    pub fd_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            rel_tol: 1e-9,
            grad_tol: 1e-6,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub evaluations: usize,
    pub at_bound: bool,
}

struct Problem<'a, F> {
    f: &'a F,
    lower: &'a [f64],
    upper: &'a [f64],
    fd_step: f64,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Problem<'_, F> {
    fn clamp(&self, x: &mut [f64]) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = xi.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Central differences; one-sided at bounds or next to infeasible points.
    fn gradient(&self, x: &[f64], fx: f64) -> Vec<f64> {
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let h = self.fd_step * x[i].abs().max(1.0);
                let up = (x[i] + h <= self.upper[i]).then(|| {
                    let mut xp = x.to_vec();
                    xp[i] += h;
                    self.eval(&xp)
                });
                let down = (x[i] - h >= self.lower[i]).then(|| {
                    let mut xm = x.to_vec();
                    xm[i] -= h;
                    self.eval(&xm)
                });
                match (up.filter(|v| v.is_finite()), down.filter(|v| v.is_finite())) {
                    (Some(fp), Some(fm)) => (fp - fm) / (2.0 * h),
                    (Some(fp), None) => (fp - fx) / h,
                    (None, Some(fm)) => (fx - fm) / h,
                    (None, None) => 0.0,
                }
            })
            .collect()
    }

    fn projected(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (&xi, &gi))| {
                if (xi <= self.lower[i] && gi > 0.0) || (xi >= self.upper[i] && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimize `f` over the box `[lower, upper]` starting from `x0`.
///
/// Non-finite objective values are treated as +∞ and rejected by the line search.
pub fn minimize<F>(f: &F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LbfgsOptions) -> OptimResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);
    let prob = Problem {
        f,
        lower,
        upper,
        fd_step: opts.fd_step,
    };
    let mut x = x0.to_vec();
    prob.clamp(&mut x);
    let mut fx = prob.eval(&x);
    let mut evaluations = 1usize;
    let at_bound = |x: &[f64]| {
        x.iter()
            .enumerate()
            .any(|(i, &xi)| xi <= lower[i] || xi >= upper[i])
    };
    if !fx.is_finite() || n == 0 {
        return OptimResult {
            at_bound: at_bound(&x),
            x,
            f: fx,
            converged: n == 0 && fx.is_finite(),
            iterations: 0,
            grad_norm: 0.0,
            evaluations,
        };
    }

    let mut g = prob.gradient(&x, fx);
    evaluations += 2 * n;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let pg = prob.projected(&x, &g);
        if norm(&pg) < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        for i in 0..n {
            if (x[i] <= lower[i] && dir[i] < 0.0) || (x[i] >= upper[i] && dir[i] > 0.0) {
                dir[i] = 0.0;
            }
        }
        if dot(&dir, &g) >= 0.0 || dir.iter().all(|&v| v == 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = pg.iter().map(|v| -v).collect();
        }

        let mut step = if s_hist.is_empty() {
            (1.0 / norm(&dir)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            prob.clamp(&mut trial);
            let ft = prob.eval(&trial);
            evaluations += 1;
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if ft.is_finite() && ft <= fx + 1e-4 * dot(&g, &moved) {
                accepted = Some((trial, ft, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, s)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };

        let g_new = prob.gradient(&x_new, f_new);
        evaluations += 2 * n;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let rel = (fx - f_new).abs() / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel < opts.rel_tol {
            converged = true;
            break;
        }
    }

    let grad_norm = norm(&prob.projected(&x, &g));
    OptimResult {
        at_bound: at_bound(&x),
        x,
        f: fx,
        converged,
        iterations,
        grad_norm,
        evaluations,
    }
}
