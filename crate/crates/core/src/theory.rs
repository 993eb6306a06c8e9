//! Limiting filter, assumption checks and exact moments of v′_t.
//!
//! v′_t are the forecast errors of a filter run with a misspecified Σε
//! (typically its diagonal) on data from the true model. With e_t = a_t − a′_t,
//!
//!   E e_{t+1} = T L′_t E e_t,
//!   M_{t+1}   = T (K_t − K′_t) F_t (K_t − K′_t)ᵀ Tᵀ + T L′_t M_t L′_tᵀ Tᵀ,
//!   E v′_t    = Z E e_t,   V(v′_t) = F_t + Z M_t Zᵀ − E v′_t E v′_tᵀ,
//!
//! where M_t = E(e_t e_tᵀ) and the unprimed quantities come from the true model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SutseError};
use crate::linalg::{cholesky, numerical_rank, spectral_radius, symmetrize};
use crate::model::StateSpaceModel;
use crate::sutse::{compose, SutseSpec};

/// One Riccati step: F, K, L and the next P.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiStep {
    pub f: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub p_next: DMatrix<f64>,
}

/// F = ZPZᵀ + H, K = PZᵀF⁻¹, L = I − KZ, P' = T(P − KFKᵀ)Tᵀ + Q.
pub fn riccati_step(
    z: &DMatrix<f64>,
    t: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<RiccatiStep> {
    let pzt = p * z.transpose();
    let mut f = z * &pzt + h;
    symmetrize(&mut f);
    let chol = cholesky(&f)?;
    let k = chol.solve(&pzt.transpose()).transpose();
    let l = DMatrix::identity(p.nrows(), p.ncols()) - &k * z;
    let mut p_next = t * (p - &k * &pzt.transpose()) * t.transpose() + q;
    symmetrize(&mut p_next);
    Some(RiccatiStep { f, k, l, p_next })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitingFilter {
    pub p: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub iterations: usize,
    /// Final ‖P_{t+1} − P_t‖_F.
    pub residual: f64,
    /// ‖P_{t+1} − P_t‖_F for every iteration.
    pub residual_trace: Vec<f64>,
}

pub const DEFAULT_LIMIT_TOL: f64 = 1e-10;
pub const DEFAULT_LIMIT_MAX_ITER: usize = 100_000;

/// Iterate the Riccati recursion from P₁ until ‖ΔP‖_F < tol.
pub fn limiting_filter(model: &StateSpaceModel, tol: f64, max_iter: usize) -> Result<LimitingFilter> {
    model.validate()?;
    let mut p = model.p1.clone();
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        let step = riccati_step(&model.z, &model.t, &model.sigma_eps, &model.sigma_eta, &p).ok_or_else(|| {
            SutseError::Divergence {
                t: it - 1,
                dim: None,
                detail: "F not positive definite in Riccati iteration".into(),
            }
        })?;
        let residual = (&step.p_next - &p).norm();
        trace.push(residual);
        p = step.p_next;
        if residual < tol {
            let last = riccati_step(&model.z, &model.t, &model.sigma_eps, &model.sigma_eta, &p)
                .ok_or_else(|| SutseError::Numerical("limiting F not positive definite".into()))?;
            return Ok(LimitingFilter {
                p,
                f: last.f,
                k: last.k,
                l: last.l,
                iterations: it,
                residual,
                residual_trace: trace,
            });
        }
    }
    Err(SutseError::NoConvergence {
        what: "Riccati recursion".into(),
        iterations: max_iter,
        trace,
    })
}

/// Columns of R in Ση = R Q Rᵀ: eigenvectors with eigenvalue > 1e-12.
pub fn noise_factor(sigma_eta: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sigma_eta.clone());
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12)
        .collect();
    DMatrix::from_fn(sigma_eta.nrows(), keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

/// (Zᵀ, (ZT)ᵀ, …, (ZT^{p−1})ᵀ)ᵀ.
pub fn observability_matrix(z: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    let p = t.nrows();
    let d = z.nrows();
    let mut out = DMatrix::zeros(d * p, p);
    let mut block = z.clone();
    for i in 0..p {
        out.view_mut((i * d, 0), (d, p)).copy_from(&block);
        block = &block * t;
    }
    out
}

/// (R, TR, …, T^{p−1}R).
pub fn controllability_matrix(t: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let p = t.nrows();
    let k = r.ncols();
    let mut out = DMatrix::zeros(p, k * p);
    let mut block = r.clone();
    for i in 0..p {
        out.view_mut((0, i * k), (p, k)).copy_from(&block);
        block = t * &block;
    }
    out
}

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub state_dim: usize,
    pub sigma_eps_pd: bool,
    pub sigma_eps_prime_pd: bool,
    pub observability_rank: usize,
    pub controllability_rank: usize,
    pub controllability_rank_prime: usize,
    /// ρ(T L′) at the limiting misspecified filter (NaN if it did not converge).
    pub spectral_radius_tl_prime: f64,
    /// max over windows k ≤ l ≤ t ≤ horizon of ‖Π_{i=k}^{l} T L′_{t−i}‖_F.
    /// Only finite windows can be checked; this is evidence, not proof.
    pub product_norm_bound: f64,
    pub product_norm_horizon: usize,
}

impl AssumptionReport {
    pub fn observable(&self) -> bool {
        self.observability_rank == self.state_dim
    }

    pub fn controllable(&self) -> bool {
        self.controllability_rank == self.state_dim && self.controllability_rank_prime == self.state_dim
    }

    pub fn stable(&self) -> bool {
        self.spectral_radius_tl_prime < 1.0
    }
}

pub const DEFAULT_WINDOW_HORIZON: usize = 64;

fn same_system(a: &StateSpaceModel, b: &StateSpaceModel) -> Result<()> {
    if a.z != b.z || a.t != b.t {
        return Err(SutseError::input("true and misspecified models must share Z and T"));
    }
    Ok(())
}

pub fn check_assumptions(true_model: &StateSpaceModel, misspec: &StateSpaceModel) -> Result<AssumptionReport> {
    check_assumptions_with(true_model, misspec, DEFAULT_WINDOW_HORIZON)
}

pub fn check_assumptions_with(
    true_model: &StateSpaceModel,
    misspec: &StateSpaceModel,
    horizon: usize,
) -> Result<AssumptionReport> {
    true_model.validate()?;
    misspec.validate()?;
    same_system(true_model, misspec)?;
    let p = true_model.state_dim();
    let t = &true_model.t;
    let r = noise_factor(&true_model.sigma_eta);
    let r_prime = noise_factor(&misspec.sigma_eta);
    let rank_of = |m: DMatrix<f64>| if m.ncols() == 0 { 0 } else { numerical_rank(&m, RANK_TOL) };

    let spectral_radius_tl_prime = match limiting_filter(misspec, DEFAULT_LIMIT_TOL, DEFAULT_LIMIT_MAX_ITER) {
        Ok(lim) => spectral_radius(&(t * &lim.l)),
        Err(e) => {
            log::warn!("limiting misspecified filter unavailable: {e}");
            f64::NAN
        }
    };

    // Time-varying T L′_t from the misspecified Riccati recursion.
    let mut tl = Vec::with_capacity(horizon);
    let mut pp = misspec.p1.clone();
    for step in 0..horizon {
        let s = riccati_step(&misspec.z, t, &misspec.sigma_eps, &misspec.sigma_eta, &pp).ok_or(
            SutseError::Divergence {
                t: step,
                dim: None,
                detail: "misspecified F not positive definite".into(),
            },
        )?;
        tl.push(t * &s.l);
        pp = s.p_next;
    }
    let mut bound = 0.0_f64;
    for end in 0..tl.len() {
        // Products T L′_{end} T L′_{end−1} … for every window ending at `end`.
        let mut prod = tl[end].clone();
        bound = bound.max(prod.norm());
        for i in (0..end).rev() {
            prod = &prod * &tl[i];
            bound = bound.max(prod.norm());
        }
    }

    Ok(AssumptionReport {
        state_dim: p,
        sigma_eps_pd: cholesky(&true_model.sigma_eps).is_some(),
        sigma_eps_prime_pd: cholesky(&misspec.sigma_eps).is_some(),
        observability_rank: numerical_rank(&observability_matrix(&true_model.z, t), RANK_TOL),
        controllability_rank: rank_of(controllability_matrix(t, &r)),
        controllability_rank_prime: rank_of(controllability_matrix(t, &r_prime)),
        spectral_radius_tl_prime,
        product_norm_bound: bound,
        product_norm_horizon: horizon,
    })
}

/// Exact E(v′_t), V(v′_t), E(e_t), E(e_t e_tᵀ) for t = 1..=t_max (index 0 is t = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrace {
    pub ev: Vec<DVector<f64>>,
    pub vv: Vec<DMatrix<f64>>,
    pub ea: Vec<DVector<f64>>,
    pub ma: Vec<DMatrix<f64>>,
}

impl MomentTrace {
    pub fn len(&self) -> usize {
        self.ev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ev.is_empty()
    }

    /// V(v′_{t_max}), the finite-horizon stand-in for V_{v′}.
    pub fn tail_cov(&self) -> Option<&DMatrix<f64>> {
        self.vv.last()
    }

    /// ‖V(v′_{t_max}) − V(v′_{t_max − 1})‖_F.
    pub fn tail_step(&self) -> f64 {
        match self.vv.len() {
            0 | 1 => f64::NAN,
            n => (&self.vv[n - 1] - &self.vv[n - 2]).norm(),
        }
    }
}

pub fn exact_error_moments(true_spec: &SutseSpec, misspec: &SutseSpec, t_max: usize) -> Result<MomentTrace> {
    exact_error_moments_models(&compose(true_spec)?, &compose(misspec)?, t_max)
}

pub fn exact_error_moments_models(
    true_model: &StateSpaceModel,
    misspec: &StateSpaceModel,
    t_max: usize,
) -> Result<MomentTrace> {
    true_model.validate()?;
    misspec.validate()?;
    same_system(true_model, misspec)?;
    let (z, t) = (&true_model.z, &true_model.t);
    let mut p = true_model.p1.clone();
    let mut pp = misspec.p1.clone();
    let mut ea = &true_model.a1 - &misspec.a1;
    let mut ma = &ea * ea.transpose();
    let mut out = MomentTrace {
        ev: Vec::with_capacity(t_max),
        vv: Vec::with_capacity(t_max),
        ea: Vec::with_capacity(t_max),
        ma: Vec::with_capacity(t_max),
    };
    let diverged = |step: usize, which: &str| SutseError::Divergence {
        t: step,
        dim: None,
        detail: format!("{which} F not positive definite"),
    };
    for step in 0..t_max {
        let s = riccati_step(z, t, &true_model.sigma_eps, &true_model.sigma_eta, &p)
            .ok_or_else(|| diverged(step, "true"))?;
        let sp = riccati_step(z, t, &misspec.sigma_eps, &misspec.sigma_eta, &pp)
            .ok_or_else(|| diverged(step, "misspecified"))?;
        let ev = z * &ea;
        let mut vv = &s.f + z * &ma * z.transpose() - &ev * ev.transpose();
        symmetrize(&mut vv);
        out.ev.push(ev);
        out.vv.push(vv);
        out.ea.push(ea.clone());
        out.ma.push(ma.clone());

        let tl = t * &sp.l;
        let tdk = t * (&s.k - &sp.k);
        ea = &tl * &ea;
        ma = &tdk * &s.f * tdk.transpose() + &tl * &ma * tl.transpose();
        symmetrize(&mut ma);
        p = s.p_next;
        pp = sp.p_next;
    }
    Ok(out)
}

/// ‖Aⁿ‖_F for n = 1..n_max and the envelope M rⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricEnvelope {
    pub m: f64,
    pub r: f64,
    pub spectral_radius: f64,
    /// Entry n−1 is ‖Aⁿ‖_F.
    pub norms: Vec<f64>,
    pub holds: bool,
}

const ENVELOPE_R_FLOOR: f64 = 1e-3;

/// Fit r from the spectral radius and the observed tail decay, then M as
/// the smallest constant with ‖Aⁿ‖_F ≤ M rⁿ over the range.
pub fn geometric_norm_check(a: &DMatrix<f64>, n_max: usize) -> Result<GeometricEnvelope> {
    if !a.is_square() {
        return Err(SutseError::input("matrix must be square"));
    }
    if n_max == 0 {
        return Err(SutseError::input("n_max must be positive"));
    }
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(SutseError::input(format!("spectral radius {rho} is not below 1")));
    }
    let mut norms = Vec::with_capacity(n_max);
    let mut power = a.clone();
    for _ in 0..n_max {
        norms.push(power.norm());
        power = &power * a;
    }
    let half = n_max / 2;
    let tail = if half >= 1 && norms[half - 1] > 0.0 && norms[n_max - 1] > 0.0 && n_max > half {
        (norms[n_max - 1] / norms[half - 1]).powf(1.0 / (n_max - half) as f64)
    } else {
        0.0
    };
    let r = rho.max(tail).max(ENVELOPE_R_FLOOR);
    let m = norms
        .iter()
        .enumerate()
        .map(|(i, &x)| x / r.powi(i as i32 + 1))
        .fold(0.0_f64, f64::max);
    let holds = r < 1.0
        && m.is_finite()
        && norms
            .iter()
            .enumerate()
            .all(|(i, &x)| x <= m * r.powi(i as i32 + 1) * (1.0 + 1e-12));
    Ok(GeometricEnvelope {
        m,
        r,
        spectral_radius: rho,
        norms,
        holds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// ‖E(v′_t)‖ for t = 1..t_max.
    pub ev_norms: Vec<f64>,
    /// ‖T_t L′_t ⋯ T_1 L′_1‖_F for t = 1..t_max.
    pub product_norms: Vec<f64>,
    pub ev: Vec<DVector<f64>>,
    /// Final product norm below the tolerance.
    pub decays: bool,
}

/// E(v′_t) under time-varying Z_t, T_t. Noise covariances and initial
/// conditions come from `true_model` and `misspec`; their Z, T are unused.
pub fn time_varying_ev_check(
    z_seq: &[DMatrix<f64>],
    t_seq: &[DMatrix<f64>],
    true_model: &StateSpaceModel,
    misspec: &StateSpaceModel,
    decay_tol: f64,
) -> Result<DecayReport> {
    if z_seq.len() != t_seq.len() {
        return Err(SutseError::input("Z and T sequences differ in length"));
    }
    let p = true_model.state_dim();
    let d = true_model.obs_dim();
    for (zt, tt) in z_seq.iter().zip(t_seq) {
        if zt.shape() != (d, p) || tt.shape() != (p, p) {
            return Err(SutseError::input("time-varying matrix has the wrong shape"));
        }
    }
    let mut pt = true_model.p1.clone();
    let mut pp = misspec.p1.clone();
    let mut ea = &true_model.a1 - &misspec.a1;
    let mut prod = DMatrix::<f64>::identity(p, p);
    let mut report = DecayReport {
        ev_norms: Vec::new(),
        product_norms: Vec::new(),
        ev: Vec::new(),
        decays: false,
    };
    for (step, (zt, tt)) in z_seq.iter().zip(t_seq).enumerate() {
        let s = riccati_step(zt, tt, &true_model.sigma_eps, &true_model.sigma_eta, &pt);
        let sp = riccati_step(zt, tt, &misspec.sigma_eps, &misspec.sigma_eta, &pp);
        let (Some(s), Some(sp)) = (s, sp) else {
            return Err(SutseError::Divergence {
                t: step,
                dim: None,
                detail: "F not positive definite".into(),
            });
        };
        let ev = zt * &ea;
        report.ev_norms.push(ev.norm());
        report.ev.push(ev);
        let tl = tt * &sp.l;
        ea = &tl * &ea;
        prod = &tl * &prod;
        report.product_norms.push(prod.norm());
        pt = s.p_next;
        pp = sp.p_next;
    }
    report.decays = report.product_norms.last().is_some_and(|&x| x < decay_tol);
    Ok(report)
}
