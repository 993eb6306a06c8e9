//! Graphical lasso for the forecast-error covariance.
//!
//! Minimizes `−log|Ω| + tr(ΩS) + λ Σ_{j,k} |Ω(j,k)|` (diagonal included) by
//! block coordinate descent over the columns of Ω. Each column update is an
//! exact minimization over (ω₁₂, ω₂₂) with Ω₁₁ held fixed:
//!
//! ```text
//! ω₂₂ − ω₁₂ᵀ Ω₁₁⁻¹ ω₁₂ = 1 / (S₂₂ + λ)
//! ω₁₂ = argmin ½ γᵀ (S₂₂+λ) Ω₁₁⁻¹ γ + s₁₂ᵀ γ + λ‖γ‖₁
//! ```
//!
//! The lasso sub-problem is solved by cyclic coordinate descent. Working on
//! Ω directly keeps every iterate positive definite and the objective
//! non-increasing; W = Ω⁻¹ is carried along with rank-one block updates.

use nalgebra::DMatrix;

use crate::error::{Result, SutseError};
use crate::linalg::{cholesky, symmetrize};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_SWEEPS: usize = 500;
/// |Ω(i,j)| above this counts as an edge in the BIC.
pub const EDGE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoResult {
    pub omega: DMatrix<f64>,
    /// Ω̂⁻¹.
    pub v_glasso: DMatrix<f64>,
    pub lambda: f64,
    /// Objective at the start and after every sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl GlassoResult {
    /// Nonzero strictly-upper-triangular entries of Ω̂.
    pub fn edge_count(&self) -> usize {
        let d = self.omega.nrows();
        (0..d)
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .filter(|&(i, j)| self.omega[(i, j)].abs() > EDGE_THRESHOLD)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

/// `−log|Ω| + tr(ΩS) + λ Σ|Ω(j,k)|`, or `None` if Ω is not PD.
pub fn glasso_objective(omega: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64) -> Option<f64> {
    let chol = cholesky(omega)?;
    let log_det: f64 = chol.ln_determinant();
    let trace = omega.component_mul(s).sum();
    let l1: f64 = omega.iter().map(|x| x.abs()).sum();
    Some(-log_det + trace + lambda * l1)
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

fn validate_input(s: &DMatrix<f64>, lambda: f64) -> Result<()> {
    let d = s.nrows();
    if d == 0 || s.ncols() != d {
        return Err(SutseError::input("S must be a non-empty square matrix"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SutseError::input(format!("lambda must be >= 0, got {lambda}")));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(SutseError::input("S has non-finite entries"));
    }
    let scale = s.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    for j in 0..d {
        for i in 0..j {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 * scale {
                return Err(SutseError::input("S must be symmetric"));
            }
        }
        if s[(j, j)] + lambda <= 0.0 {
            return Err(SutseError::input(format!(
                "S({j},{j}) + lambda must be positive"
            )));
        }
    }
    if lambda == 0.0 && cholesky(s).is_none() {
        return Err(SutseError::Singular(
            "lambda = 0 requires a positive definite S".into(),
        ));
    }
    Ok(())
}

pub fn graphical_lasso(s: &DMatrix<f64>, lambda: f64) -> Result<GlassoResult> {
    graphical_lasso_with(s, lambda, &GlassoOptions::default(), None)
}

/// As [`graphical_lasso`], optionally warm-started from a PD precision matrix.
pub fn graphical_lasso_with(
    s: &DMatrix<f64>,
    lambda: f64,
    options: &GlassoOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<GlassoResult> {
    validate_input(s, lambda)?;
    let d = s.nrows();
    let mut s = s.clone();
    symmetrize(&mut s);

    let (mut omega, mut w) = match warm_start.and_then(|o| cholesky(o).map(|c| (o.clone(), c.inverse()))) {
        Some((o, w)) if o.shape() == (d, d) => (o, w),
        _ => {
            let diag = s.diagonal().map(|x| x + lambda);
            (
                DMatrix::from_diagonal(&diag.map(|x| 1.0 / x)),
                DMatrix::from_diagonal(&diag),
            )
        }
    };

    let mean_diag = s.diagonal().iter().map(|x| x.abs()).sum::<f64>() / d as f64;
    let threshold = options.tol * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut trace = vec![glasso_objective(&omega, &s, lambda).ok_or_else(|| {
        SutseError::Numerical("initial precision matrix is not positive definite".into())
    })?];

    for sweep in 1..=options.max_sweeps {
        let previous = omega.clone();
        for j in 0..d {
            column_update(&s, lambda, j, &mut omega, &mut w);
        }
        symmetrize(&mut omega);
        let objective = glasso_objective(&omega, &s, lambda).ok_or_else(|| {
            SutseError::Numerical(format!("precision estimate lost definiteness in sweep {sweep}"))
        })?;
        trace.push(objective);
        let change = omega
            .as_slice()
            .iter()
            .zip(previous.as_slice())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        if change < threshold {
            let v_glasso = cholesky(&omega)
                .map(|c| c.inverse())
                .ok_or_else(|| SutseError::Numerical("final precision matrix is singular".into()))?;
            let mut v_glasso = v_glasso;
            symmetrize(&mut v_glasso);
            return Ok(GlassoResult {
                omega,
                v_glasso,
                lambda,
                objective_trace: trace,
                iterations: sweep,
            });
        }
    }
    Err(SutseError::NoConvergence {
        what: format!("graphical lasso (lambda={lambda})"),
        iterations: options.max_sweeps,
        trace,
    })
}

fn column_update(s: &DMatrix<f64>, lambda: f64, j: usize, omega: &mut DMatrix<f64>, w: &mut DMatrix<f64>) {
    let d = s.nrows();
    if d == 1 {
        omega[(0, 0)] = 1.0 / (s[(0, 0)] + lambda);
        w[(0, 0)] = s[(0, 0)] + lambda;
        return;
    }
    let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
    let m = others.len();
    let w22 = w[(j, j)];
    // Ω₁₁⁻¹ = W₁₁ − w₁₂ w₁₂ᵀ / w₂₂
    let omega11_inv = DMatrix::from_fn(m, m, |a, b| {
        let (ia, ib) = (others[a], others[b]);
        w[(ia, ib)] - w[(ia, j)] * w[(ib, j)] / w22
    });
    let s22 = s[(j, j)] + lambda;
    let a = &omega11_inv * s22;
    let s12: Vec<f64> = others.iter().map(|&k| s[(k, j)]).collect();
    let mut gamma: Vec<f64> = others.iter().map(|&k| omega[(k, j)]).collect();

    for _ in 0..1000 {
        let mut max_delta = 0.0_f64;
        let mut max_abs = 0.0_f64;
        for k in 0..m {
            let mut r = s12[k];
            for l in 0..m {
                if l != k {
                    r += a[(k, l)] * gamma[l];
                }
            }
            let new = -soft_threshold(r, lambda) / a[(k, k)];
            max_delta = max_delta.max((new - gamma[k]).abs());
            max_abs = max_abs.max(new.abs());
            gamma[k] = new;
        }
        if max_delta <= 1e-12 * max_abs.max(1e-300) || max_delta == 0.0 {
            break;
        }
    }

    let gamma_v = nalgebra::DVector::from_vec(gamma);
    let u = &omega11_inv * &gamma_v;
    let c = 1.0 / s22;
    let omega22 = c + gamma_v.dot(&u);
    for (a_idx, &k) in others.iter().enumerate() {
        omega[(k, j)] = gamma_v[a_idx];
        omega[(j, k)] = gamma_v[a_idx];
    }
    omega[(j, j)] = omega22;

    // W = Ω⁻¹ by the partitioned inverse.
    for (ai, &ka) in others.iter().enumerate() {
        for (bi, &kb) in others.iter().enumerate() {
            w[(ka, kb)] = omega11_inv[(ai, bi)] + u[ai] * u[bi] / c;
        }
        w[(ka, j)] = -u[ai] / c;
        w[(j, ka)] = -u[ai] / c;
    }
    w[(j, j)] = 1.0 / c;
}

/// `count` log-spaced values over [1e-3, max off-diagonal |S|], descending.
pub fn default_lambda_grid(s: &DMatrix<f64>, count: usize) -> Vec<f64> {
    let d = s.nrows();
    let lo: f64 = 1e-3;
    let hi = (0..d)
        .flat_map(|j| (0..j).map(move |i| (i, j)))
        .fold(0.0_f64, |acc, (i, j)| acc.max(s[(i, j)].abs()));
    if hi <= lo || count < 2 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (lhi - (lhi - llo) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicRow {
    pub lambda: f64,
    /// NaN when the fit failed.
    pub bic: f64,
    pub log_likelihood: f64,
    pub edges: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicSelection {
    pub lambda_star: f64,
    /// One row per grid value, in the order evaluated (descending λ).
    pub table: Vec<BicRow>,
    pub best: GlassoResult,
}

/// `−m(log|Ω̂| − tr(Ω̂S)) + log(m)·(d + edges)`.
pub fn bic(result: &GlassoResult, s: &DMatrix<f64>, m: usize) -> (f64, f64) {
    let d = s.nrows();
    let chol = cholesky(&result.omega).expect("glasso output is PD");
    let log_det: f64 = chol.ln_determinant();
    let ll = log_det - result.omega.component_mul(s).sum();
    let k = d + result.edge_count();
    (-(m as f64) * ll + (m as f64).ln() * k as f64, ll)
}

/// Fit along the grid with warm starts (largest λ first), pick the minimal BIC.
/// Ties go to the larger λ.
pub fn select_lambda_bic(s: &DMatrix<f64>, m: usize, grid: &[f64]) -> Result<BicSelection> {
    if grid.is_empty() {
        return Err(SutseError::input("lambda grid is empty"));
    }
    if m < 2 {
        return Err(SutseError::input("BIC needs at least 2 samples"));
    }
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    order.dedup();

    let mut table = Vec::with_capacity(order.len());
    let mut best: Option<(f64, GlassoResult)> = None;
    let mut warm: Option<DMatrix<f64>> = None;
    let mut last_err = None;
    for &lambda in &order {
        match graphical_lasso_with(s, lambda, &GlassoOptions::default(), warm.as_ref()) {
            Ok(res) => {
                let (score, ll) = bic(&res, s, m);
                table.push(BicRow {
                    lambda,
                    bic: score,
                    log_likelihood: ll,
                    edges: res.edge_count(),
                    iterations: res.iterations,
                });
                warm = Some(res.omega.clone());
                if best.as_ref().is_none_or(|(b, _)| score < *b) {
                    best = Some((score, res));
                }
            }
            Err(e) => {
                log::warn!("glasso failed at lambda={lambda}: {e}");
                table.push(BicRow {
                    lambda,
                    bic: f64::NAN,
                    log_likelihood: f64::NAN,
                    edges: 0,
                    iterations: 0,
                });
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((_, res)) => Ok(BicSelection {
            lambda_star: res.lambda,
            table,
            best: res,
        }),
        None => Err(last_err.unwrap_or_else(|| SutseError::Numerical("no lambda succeeded".into()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.3, 0.6, 1.5, 0.4, -0.3, 0.4, 1.0])
    }

    #[test]
    fn unpenalized_recovers_inverse() {
        let s = s3();
        let res = graphical_lasso(&s, 0.0).unwrap();
        let inv = s.clone().try_inverse().unwrap();
        assert!((&res.omega - inv).amax() < 1e-6);
        assert!((&res.v_glasso * &res.omega - DMatrix::identity(3, 3)).amax() < 1e-6);
    }

    #[test]
    fn scalar_case() {
        for &lambda in &[0.0, 0.3, 5.0] {
            let res = graphical_lasso(&DMatrix::from_element(1, 1, 2.0), lambda).unwrap();
            assert!((res.omega[(0, 0)] - 1.0 / (2.0 + lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn large_penalty_gives_diagonal() {
        let s = s3();
        let lambda = 0.7;
        let res = graphical_lasso(&s, lambda).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 / (s[(i, i)] + lambda) } else { 0.0 };
                assert!((res.omega[(i, j)] - expected).abs() < 1e-6);
            }
            assert!((res.v_glasso[(i, i)] - (s[(i, i)] + lambda)).abs() < 1e-6);
        }
        assert_eq!(res.edge_count(), 0);
    }

    #[test]
    fn singular_s_without_penalty_fails() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(graphical_lasso(&s, 0.0), Err(SutseError::Singular(_))));
        assert!(graphical_lasso(&s, 0.1).is_ok());
        assert!(graphical_lasso(&s, -0.1).is_err());
    }

    #[test]
    fn sweep_limit_reports_trace() {
        let opts = GlassoOptions {
            tol: 0.0,
            max_sweeps: 3,
        };
        match graphical_lasso_with(&s3(), 0.05, &opts, None) {
            Err(SutseError::NoConvergence { trace, iterations, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(trace.len(), 4);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_shape_and_single_element() {
        let grid = default_lambda_grid(&s3(), 20);
        assert_eq!(grid.len(), 20);
        assert!((grid[0] - 0.6).abs() < 1e-12);
        assert!((grid[19] - 1e-3).abs() < 1e-15);
        assert!(grid.windows(2).all(|w| w[0] > w[1]));
        let sel = select_lambda_bic(&s3(), 50, &[0.2]).unwrap();
        assert_eq!(sel.lambda_star, 0.2);
        assert_eq!(sel.table.len(), 1);
    }
}
