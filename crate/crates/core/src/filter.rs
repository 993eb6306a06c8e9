//! Kalman filter recursion with measurement-subset handling of missing cells.
//!
//! One step, on the observed coordinates O of y_t:
//!
//! ```text
//! v_t = y_t − Z a_t            F_t = Z P_t Zᵀ + Σε
//! K_t = P_t Zᵀ F_t⁻¹           L_t = I − K_t Z
//! a_{t+1} = T a_t + T K_t v_t  P_{t+1} = T P_t L_tᵀ Tᵀ + Ση
//! ```
//!
//! Rows of Z and rows/columns of Σε outside O are dropped. The log-likelihood
//! increment is `−½ vᵀF⁻¹v − ½ log|F|` (the `−(|O|/2) log 2π` constant is omitted).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, SutseError};
use crate::linalg::{submatrix, symmetrize, SparseRows};
use crate::model::{KalmanState, ObservationSeries, StateSpaceModel};

/// Which per-step quantities a filter run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    /// v, F, a, P, K, L.
    Full,
    /// v, F and a only (enough for one-step and same-step forecasts).
    Forecast,
    /// Final state and log-likelihood only.
    LoglikOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub storage: Storage,
    /// Once `max|P_{t+1} − P_t| ≤ tol · max(1, max|P_t|)` on two consecutive
    /// fully-observed rows, P, F and K are frozen until the next row with a
    /// missing cell. `None` runs the full Riccati update at every step.
    pub steady_state_tol: Option<f64>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            storage: Storage::Full,
            steady_state_tol: None,
        }
    }
}

impl FilterOptions {
    pub fn loglik_only() -> Self {
        Self {
            storage: Storage::LoglikOnly,
            steady_state_tol: None,
        }
    }

    pub fn with_storage(mut self, storage: Storage) -> Self {
        self.storage = storage;
        self
    }

    pub fn with_steady_state(mut self, tol: f64) -> Self {
        self.steady_state_tol = Some(tol);
        self
    }
}

/// Everything produced by one `kalman_step`.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub next: KalmanState,
    /// Innovation on all d coordinates; NaN where y_t was missing.
    pub v: DVector<f64>,
    /// Observed coordinates, ascending.
    pub observed: Vec<usize>,
    /// F_t restricted to `observed`.
    pub f: DMatrix<f64>,
    /// p × |observed|.
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Innovations v_t, with the observation mask.
    pub v: ObservationSeries,
    /// F_t on the observed coordinates of row t.
    pub f: Vec<DMatrix<f64>>,
    pub observed: Vec<Vec<usize>>,
    /// a_1 .. a_{n+1}.
    pub a: Vec<DVector<f64>>,
    /// P_1 .. P_{n+1}; empty unless `Storage::Full`.
    pub p: Vec<DMatrix<f64>>,
    /// Empty unless `Storage::Full`.
    pub k: Vec<DMatrix<f64>>,
    /// Empty unless `Storage::Full`.
    pub l: Vec<DMatrix<f64>>,
    pub final_state: KalmanState,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

struct Kernel<'m> {
    model: &'m StateSpaceModel,
    t: SparseRows,
    z: SparseRows,
    all: Vec<usize>,
}

struct Update {
    a: DVector<f64>,
    p: DMatrix<f64>,
    v: DVector<f64>,
    observed: Vec<usize>,
    f: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    k: DMatrix<f64>,
    loglik: f64,
}

impl<'m> Kernel<'m> {
    fn new(model: &'m StateSpaceModel) -> Self {
        Self {
            model,
            t: SparseRows::from_dense(&model.t),
            z: SparseRows::from_dense(&model.z),
            all: (0..model.obs_dim()).collect(),
        }
    }

    fn observed(&self, mask: &[bool]) -> Vec<usize> {
        if mask.iter().any(|&m| m) {
            (0..mask.len()).filter(|&j| !mask[j]).collect()
        } else {
            self.all.clone()
        }
    }

    fn update(
        &self,
        a: &DVector<f64>,
        p: &DMatrix<f64>,
        y: &DVector<f64>,
        mask: &[bool],
        t_index: usize,
    ) -> Result<Update> {
        let m = self.model;
        let observed = self.observed(mask);
        let d = m.obs_dim();
        let mut v = DVector::from_element(d, f64::NAN);

        if observed.is_empty() {
            let mut p_next = self.predict_cov(p);
            symmetrize(&mut p_next);
            return Ok(Update {
                a: self.t.mul_vec(a),
                p: p_next,
                v,
                observed,
                f: DMatrix::zeros(0, 0),
                chol: None,
                k: DMatrix::zeros(m.state_dim(), 0),
                loglik: 0.0,
            });
        }

        let full = observed.len() == d;
        let z_obs;
        let z = if full {
            &self.z
        } else {
            z_obs = self.z.select_rows(&observed);
            &z_obs
        };
        // P Zᵀ, p × |O|
        let pzt = z.mul_transpose_right(p);
        let mut f = z.mul(&pzt);
        if full {
            f += &m.sigma_eps;
        } else {
            f += submatrix(&m.sigma_eps, &observed, &observed);
        }
        symmetrize(&mut f);
        let chol = Cholesky::new(f.clone()).ok_or_else(|| SutseError::Divergence {
            t: t_index,
            dim: None,
            detail: "F_t is not positive definite".into(),
        })?;

        let za = z.mul_vec(a);
        let mut v_obs = DVector::zeros(observed.len());
        for (i, &j) in observed.iter().enumerate() {
            v_obs[i] = y[j] - za[i];
            v[j] = v_obs[i];
        }

        // Kᵀ = F⁻¹ (P Zᵀ)ᵀ
        let kt = chol.solve(&pzt.transpose());
        let log_det: f64 = chol.ln_determinant();
        let loglik = -0.5 * v_obs.dot(&chol.solve(&v_obs)) - 0.5 * log_det;

        // P Lᵀ = P − P Zᵀ Kᵀ
        let mut filtered_p = p.clone();
        filtered_p.gemm(-1.0, &pzt, &kt, 1.0);
        let mut p_next = self.predict_cov(&filtered_p);
        symmetrize(&mut p_next);
        let k = kt.transpose();
        let a_next = self.t.mul_vec(&(a + &k * &v_obs));

        if !loglik.is_finite() || p_next.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(SutseError::Divergence {
                t: t_index,
                dim: None,
                detail: "non-finite filter quantities".into(),
            });
        }

        Ok(Update {
            a: a_next,
            p: p_next,
            v,
            observed,
            f,
            chol: Some(chol),
            k,
            loglik,
        })
    }

    /// T P Tᵀ + Ση, built from two contiguous `X Tᵀ` products.
    fn predict_cov(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let ptt = self.t.mul_transpose_right(p);
        self.t.mul_transpose_right(&ptt.transpose()) + &self.model.sigma_eta
    }

    fn gain_complement(&self, k: &DMatrix<f64>, observed: &[usize]) -> DMatrix<f64> {
        let p = self.model.state_dim();
        let z_obs = submatrix(&self.model.z, observed, &(0..p).collect::<Vec<_>>());
        DMatrix::identity(p, p) - k * z_obs
    }
}

fn check_row(model: &StateSpaceModel, y: &DVector<f64>, mask: &[bool]) -> Result<()> {
    let d = model.obs_dim();
    if y.len() != d || mask.len() != d {
        return Err(SutseError::input(format!(
            "observation row has length {} (mask {}), model expects {d}",
            y.len(),
            mask.len()
        )));
    }
    Ok(())
}

fn check_state(model: &StateSpaceModel, state: &KalmanState) -> Result<()> {
    let p = model.state_dim();
    if state.a.len() != p || state.p.shape() != (p, p) {
        return Err(SutseError::input(format!(
            "state has dimension {} / {:?}, model expects {p}",
            state.a.len(),
            state.p.shape()
        )));
    }
    Ok(())
}

/// One prediction/update step. `mask[j] == true` marks y_j as missing.
pub fn kalman_step(
    model: &StateSpaceModel,
    state: &KalmanState,
    y: &DVector<f64>,
    mask: &[bool],
) -> Result<StepOutput> {
    check_row(model, y, mask)?;
    check_state(model, state)?;
    let kernel = Kernel::new(model);
    let u = kernel.update(&state.a, &state.p, y, mask, state.t)?;
    let l = kernel.gain_complement(&u.k, &u.observed);
    Ok(StepOutput {
        next: KalmanState {
            a: u.a,
            p: u.p,
            t: state.t + 1,
        },
        v: u.v,
        observed: u.observed,
        f: u.f,
        k: u.k,
        l,
        loglik: u.loglik,
    })
}

/// Filter the whole series from (a₁, P₁) with full storage.
pub fn kalman_filter(model: &StateSpaceModel, series: &ObservationSeries) -> Result<FilterOutput> {
    kalman_filter_with(model, series, &FilterOptions::default())
}

pub fn kalman_filter_with(
    model: &StateSpaceModel,
    series: &ObservationSeries,
    options: &FilterOptions,
) -> Result<FilterOutput> {
    filter_from(model, &model.initial_state(), series, options)
}

/// Total log-likelihood (constant term omitted).
pub fn log_likelihood(model: &StateSpaceModel, series: &ObservationSeries) -> Result<f64> {
    Ok(kalman_filter_with(model, series, &FilterOptions::loglik_only())?.loglik)
}

struct Frozen {
    f: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    k: DMatrix<f64>,
    log_det: f64,
}

fn sparse_rows(m: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).filter(|&j| m[(i, j)] != 0.0).map(|j| (j, m[(i, j)])).collect())
        .collect()
}

/// Likelihood-only run for a scalar observation. Same recursion and freeze
/// rule as the general path, on flat buffers with no per-step allocation.
fn scalar_loglik(
    model: &StateSpaceModel,
    start: &KalmanState,
    series: &ObservationSeries,
    steady_state_tol: Option<f64>,
) -> Result<(f64, KalmanState)> {
    let np = model.state_dim();
    let n = series.len();
    let t_rows = sparse_rows(&model.t);
    let z: Vec<(usize, f64)> = sparse_rows(&model.z).remove(0);
    let h = model.sigma_eps[(0, 0)];
    let q: Vec<(usize, f64)> = model
        .sigma_eta
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, x)| (i, *x))
        .collect();
    let ys = series.values();
    let missing = series.missing_mask();

    // Column-major p × p, matching nalgebra.
    let mut a = start.a.as_slice().to_vec();
    let mut p = start.p.as_slice().to_vec();
    let mut pz = vec![0.0; np];
    let mut af = vec![0.0; np];
    let mut pf = vec![0.0; np * np];
    let mut tp = vec![0.0; np * np];
    let mut pn = vec![0.0; np * np];
    let mut loglik = 0.0;
    let mut frozen: Option<(f64, Vec<f64>)> = None;
    let mut prev_full_row = false;

    for t in 0..n {
        let observed = !missing[t];
        let y = ys[(t, 0)];
        let za: f64 = z.iter().map(|&(j, w)| w * a[j]).sum();
        if let (Some((f, k)), true) = (&frozen, observed) {
            let v = y - za;
            loglik += -0.5 * v * v / f - 0.5 * f.ln();
            for i in 0..np {
                af[i] = a[i] + k[i] * v;
            }
            for (i, row) in t_rows.iter().enumerate() {
                a[i] = row.iter().map(|&(j, w)| w * af[j]).sum();
            }
            continue;
        }
        frozen = None;
        let mut f = 0.0;
        if observed {
            for i in 0..np {
                pz[i] = z.iter().map(|&(j, w)| p[i + j * np] * w).sum();
            }
            f = z.iter().map(|&(j, w)| w * pz[j]).sum::<f64>() + h;
            if !(f > 0.0) {
                return Err(SutseError::Divergence {
                    t: start.t + t,
                    dim: None,
                    detail: "F_t is not positive definite".into(),
                });
            }
            let v = y - za;
            loglik += -0.5 * v * v / f - 0.5 * f.ln();
            for i in 0..np {
                af[i] = a[i] + pz[i] / f * v;
            }
            for c in 0..np {
                for r in 0..np {
                    pf[r + c * np] = p[r + c * np] - pz[r] * pz[c] / f;
                }
            }
        } else {
            af.copy_from_slice(&a);
            pf.copy_from_slice(&p);
        }
        for (i, row) in t_rows.iter().enumerate() {
            a[i] = row.iter().map(|&(j, w)| w * af[j]).sum();
        }
        // T Pf, then (T Pf) Tᵀ
        for c in 0..np {
            for (i, row) in t_rows.iter().enumerate() {
                tp[i + c * np] = row.iter().map(|&(j, w)| w * pf[j + c * np]).sum();
            }
        }
        for (c, row) in t_rows.iter().enumerate() {
            for r in 0..np {
                pn[r + c * np] = row.iter().map(|&(j, w)| tp[r + j * np] * w).sum();
            }
        }
        for &(i, x) in &q {
            pn[i] += x;
        }
        for c in 0..np {
            for r in 0..c {
                let s = 0.5 * (pn[r + c * np] + pn[c + r * np]);
                pn[r + c * np] = s;
                pn[c + r * np] = s;
            }
        }
        if !loglik.is_finite() || pn.iter().any(|x| !x.is_finite()) {
            return Err(SutseError::Divergence {
                t: start.t + t,
                dim: None,
                detail: "non-finite filter quantities".into(),
            });
        }
        if let (Some(tol), true, true) = (steady_state_tol, observed, prev_full_row) {
            let scale = (0..np).fold(1.0_f64, |acc, i| acc.max(p[i + i * np].abs()));
            let bound = tol * scale;
            if pn.iter().zip(&p).all(|(x, y)| (x - y).abs() <= bound) {
                frozen = Some((f, pz.iter().map(|x| x / f).collect()));
            }
        }
        prev_full_row = observed;
        if frozen.is_none() {
            std::mem::swap(&mut p, &mut pn);
        }
    }
    Ok((
        loglik,
        KalmanState {
            a: DVector::from_vec(a),
            p: DMatrix::from_vec(np, np, p),
            t: start.t + n,
        },
    ))
}

/// Filter `series` starting from an arbitrary carried state.
pub fn filter_from(
    model: &StateSpaceModel,
    start: &KalmanState,
    series: &ObservationSeries,
    options: &FilterOptions,
) -> Result<FilterOutput> {
    check_state(model, start)?;
    let d = model.obs_dim();
    if series.dim() != d {
        return Err(SutseError::input(format!(
            "series has {} columns, model expects {d}",
            series.dim()
        )));
    }
    let n = series.len();
    if d == 1 && options.storage == Storage::LoglikOnly {
        let (loglik, final_state) = scalar_loglik(model, start, series, options.steady_state_tol)?;
        return Ok(FilterOutput {
            v: ObservationSeries::empty(1),
            f: Vec::new(),
            observed: Vec::new(),
            a: Vec::new(),
            p: Vec::new(),
            k: Vec::new(),
            l: Vec::new(),
            final_state,
            loglik,
        });
    }
    let kernel = Kernel::new(model);
    let keep_forecast = options.storage != Storage::LoglikOnly;
    let keep_full = options.storage == Storage::Full;

    let mut v_values = DMatrix::from_element(if keep_forecast { n } else { 0 }, d, f64::NAN);
    let mut f_seq = Vec::new();
    let mut observed_seq = Vec::new();
    let mut a_seq = Vec::new();
    let mut p_seq = Vec::new();
    let mut k_seq = Vec::new();
    let mut l_seq = Vec::new();

    let mut a = start.a.clone();
    let mut p = start.p.clone();
    if keep_forecast {
        a_seq.push(a.clone());
    }
    if keep_full {
        p_seq.push(p.clone());
    }
    let mut loglik = 0.0;
    let mut frozen: Option<Frozen> = None;
    let mut prev_full_row = false;

    for t in 0..n {
        let t_index = start.t + t;
        let mask = series.row_mask(t);
        let y = series.row_values(t);
        let complete = !mask.iter().any(|&m| m);

        let (observed, f, k) = match (&frozen, complete) {
            (Some(fr), true) => {
                let v = &y - kernel.z.mul_vec(&a);
                loglik += -0.5 * v.dot(&fr.chol.solve(&v)) - 0.5 * fr.log_det;
                a = kernel.t.mul_vec(&(&a + &fr.k * &v));
                if keep_forecast {
                    v_values.set_row(t, &v.transpose());
                }
                (kernel.all.clone(), fr.f.clone(), fr.k.clone())
            }
            _ => {
                frozen = None;
                let u = kernel.update(&a, &p, &y, mask, t_index)?;
                loglik += u.loglik;
                if let (Some(tol), true, true) = (options.steady_state_tol, complete, prev_full_row) {
                    // P is PSD, so its largest entry sits on the diagonal.
                    let scale = p.diagonal().iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
                    let bound = tol * scale;
                    let settled = u.p.as_slice().iter().zip(p.as_slice()).all(|(x, y)| (x - y).abs() <= bound);
                    if settled {
                        let chol = u.chol.clone().expect("complete row has a factor");
                        let log_det = chol.ln_determinant();
                        // P_{t+1} ≈ P_t: reuse this step's F and K from now on.
                        frozen = Some(Frozen {
                            f: u.f.clone(),
                            chol,
                            k: u.k.clone(),
                            log_det,
                        });
                    }
                }
                prev_full_row = complete;
                a = u.a;
                if frozen.is_none() {
                    p = u.p;
                }
                if keep_forecast {
                    v_values.set_row(t, &u.v.transpose());
                }
                (u.observed, u.f, u.k)
            }
        };

        if keep_forecast {
            a_seq.push(a.clone());
            if keep_full {
                p_seq.push(p.clone());
                l_seq.push(kernel.gain_complement(&k, &observed));
                k_seq.push(k);
            }
            f_seq.push(f);
            observed_seq.push(observed);
        }
    }

    let v = if keep_forecast {
        ObservationSeries::new(v_values, series.missing_mask().to_vec())?
    } else {
        ObservationSeries::empty(d)
    };

    Ok(FilterOutput {
        v,
        f: f_seq,
        observed: observed_seq,
        a: a_seq,
        p: p_seq,
        k: k_seq,
        l: l_seq,
        final_state: KalmanState {
            a,
            p,
            t: start.t + n,
        },
        loglik,
    })
}
