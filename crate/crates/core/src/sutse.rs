//! Composition of d univariate state-space blocks into one SUTSE model.
//!
//! Each block j contributes `y_j = Z⁽ʲ⁾ α⁽ʲ⁾ + ε_j`, `α⁽ʲ⁾' = T⁽ʲ⁾ α⁽ʲ⁾ + η⁽ʲ⁾`.
//! The stacked model has block-diagonal Z, T, Ση and P₁ and a full Σε.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SutseError};
use crate::linalg::{check_covariance, cholesky};
use crate::model::{StateSpaceModel, DIFFUSE_KAPPA};

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBlock {
    /// Design row Z⁽ʲ⁾ (length pⱼ).
    pub z: DVector<f64>,
    pub t: DMatrix<f64>,
    /// State-noise covariance Ση⁽ʲ⁾.
    pub q: DMatrix<f64>,
    pub a1: DVector<f64>,
    pub p1: DMatrix<f64>,
}

impl SeriesBlock {
    pub fn state_dim(&self) -> usize {
        self.z.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.z.len();
        if p == 0 {
            return Err(SutseError::input("block has empty design row"));
        }
        if self.t.shape() != (p, p) || self.q.shape() != (p, p) || self.p1.shape() != (p, p) {
            return Err(SutseError::input(format!(
                "block matrices must be {p}x{p} (T {:?}, Q {:?}, P1 {:?})",
                self.t.shape(),
                self.q.shape(),
                self.p1.shape()
            )));
        }
        if self.a1.len() != p {
            return Err(SutseError::input(format!("block a1 must have length {p}")));
        }
        check_covariance("block Q", &self.q)?;
        check_covariance("block P1", &self.p1)
    }

    pub fn with_diffuse_prior(mut self, kappa: f64) -> Self {
        let p = self.state_dim();
        self.a1 = DVector::zeros(p);
        self.p1 = DMatrix::from_diagonal_element(p, p, kappa);
        self
    }

    /// The univariate model for this block with observation variance `sigma2`.
    pub fn to_model(&self, sigma2: f64) -> Result<StateSpaceModel> {
        StateSpaceModel::new(
            DMatrix::from_row_slice(1, self.z.len(), self.z.as_slice()),
            self.t.clone(),
            DMatrix::from_element(1, 1, sigma2),
            self.q.clone(),
            self.a1.clone(),
            self.p1.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SutseSpec {
    pub blocks: Vec<SeriesBlock>,
    pub sigma_eps: DMatrix<f64>,
}

impl SutseSpec {
    pub fn dim(&self) -> usize {
        self.blocks.len()
    }

    pub fn state_dim(&self) -> usize {
        self.blocks.iter().map(SeriesBlock::state_dim).sum()
    }

    /// Start index of each block in the stacked state.
    pub fn offsets(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(0, |acc, b| {
                let start = *acc;
                *acc += b.state_dim();
                Some(start)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(SutseError::input("SUTSE spec needs at least one block"));
        }
        let d = self.blocks.len();
        if self.sigma_eps.shape() != (d, d) {
            return Err(SutseError::input(format!(
                "sigma_eps must be {d}x{d}, got {:?}",
                self.sigma_eps.shape()
            )));
        }
        for (j, b) in self.blocks.iter().enumerate() {
            b.validate()
                .map_err(|e| SutseError::input(format!("block {j}: {e}")))?;
        }
        check_covariance("sigma_eps", &self.sigma_eps)
    }

    /// The univariate model of dimension j, ignoring cross-correlation.
    pub fn dimension_model(&self, j: usize) -> Result<StateSpaceModel> {
        self.blocks[j].to_model(self.sigma_eps[(j, j)])
    }

    /// Same blocks with the off-diagonal of Σε zeroed.
    pub fn diagonalized(&self) -> SutseSpec {
        SutseSpec {
            blocks: self.blocks.clone(),
            sigma_eps: DMatrix::from_diagonal(&self.sigma_eps.diagonal()),
        }
    }
}

fn block_diag<'a>(parts: impl Iterator<Item = &'a DMatrix<f64>>, p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p, p);
    let mut off = 0;
    for m in parts {
        let k = m.nrows();
        out.view_mut((off, off), (k, k)).copy_from(m);
        off += k;
    }
    out
}

/// Stack the blocks into the multivariate model.
pub fn compose(spec: &SutseSpec) -> Result<StateSpaceModel> {
    spec.validate()?;
    let d = spec.dim();
    let p = spec.state_dim();
    let mut z = DMatrix::zeros(d, p);
    let mut a1 = DVector::zeros(p);
    for (j, (b, off)) in spec.blocks.iter().zip(spec.offsets()).enumerate() {
        for (i, &x) in b.z.iter().enumerate() {
            z[(j, off + i)] = x;
        }
        a1.rows_mut(off, b.state_dim()).copy_from(&b.a1);
    }
    StateSpaceModel::new(
        z,
        block_diag(spec.blocks.iter().map(|b| &b.t), p),
        spec.sigma_eps.clone(),
        block_diag(spec.blocks.iter().map(|b| &b.q), p),
        a1,
        block_diag(spec.blocks.iter().map(|b| &b.p1), p),
    )
}

/// Recover block j (and Σε(j,j)) from a composed model.
pub fn slice_block(model: &StateSpaceModel, offsets: &[usize], j: usize) -> (SeriesBlock, f64) {
    let start = offsets[j];
    let end = offsets.get(j + 1).copied().unwrap_or(model.state_dim());
    let k = end - start;
    (
        SeriesBlock {
            z: DVector::from_fn(k, |i, _| model.z[(j, start + i)]),
            t: model.t.view((start, start), (k, k)).into_owned(),
            q: model.sigma_eta.view((start, start), (k, k)).into_owned(),
            a1: model.a1.rows(start, k).into_owned(),
            p1: model.p1.view((start, start), (k, k)).into_owned(),
        },
        model.sigma_eps[(j, j)],
    )
}

/// AR(q) + local level block with state (μ_t, x_t, x_{t−1}, …, x_{t−q+1}).
///
/// Z = (1, 1, 0, …, 0); T has 1 at (0,0), the AR coefficients in row 1 and
/// a unit sub-diagonal shift in rows 2..q; Q = diag(q1, q2, 0, …, 0).
/// α₁ is fixed at 0 (P₁ = 0); see [`SeriesBlock::with_diffuse_prior`].
pub fn ar_local_level_block(phi: &[f64], q1: f64, q2: f64) -> Result<SeriesBlock> {
    let q = phi.len();
    if q == 0 {
        return Err(SutseError::input("AR order must be at least 1"));
    }
    if !(q1 >= 0.0 && q2 >= 0.0) {
        return Err(SutseError::input("block variances must be non-negative"));
    }
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(SutseError::input("AR coefficients must be finite"));
    }
    let p = q + 1;
    let mut z = DVector::zeros(p);
    z[0] = 1.0;
    z[1] = 1.0;
    let mut t = DMatrix::zeros(p, p);
    t[(0, 0)] = 1.0;
    for (i, &c) in phi.iter().enumerate() {
        t[(1, 1 + i)] = c;
    }
    for i in 2..p {
        t[(i, i - 1)] = 1.0;
    }
    let mut qm = DMatrix::zeros(p, p);
    qm[(0, 0)] = q1;
    qm[(1, 1)] = q2;
    Ok(SeriesBlock {
        z,
        t,
        q: qm,
        a1: DVector::zeros(p),
        p1: DMatrix::zeros(p, p),
    })
}

/// Σε with the given diagonal and a constant off-diagonal; must be PD.
pub fn equicorrelation_sigma_eps(diag: &[f64], offdiag: f64) -> Result<DMatrix<f64>> {
    let d = diag.len();
    if d == 0 {
        return Err(SutseError::input("empty diagonal"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| if i == j { diag[i] } else { offdiag });
    if cholesky(&m).is_none() {
        return Err(SutseError::input(format!(
            "equicorrelation matrix with off-diagonal {offdiag} is not positive definite"
        )));
    }
    Ok(m)
}

/// AR coefficients of the Monte Carlo design.
pub const SIM_PHI: [f64; 7] = [-0.4, -0.1, 0.0, 0.0, 0.0, 0.2, 0.5];
pub const SIM_LEVEL_VAR: f64 = 0.01;
pub const SIM_AR_VAR: f64 = 1.0;
pub const SIM_RHO: f64 = 0.5;

/// True parameters behind [`simulation_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth {
    pub phi: Vec<f64>,
    pub q1: f64,
    pub q2: f64,
    /// θ₁..θ_d.
    pub sigma_eps_diag: Vec<f64>,
    /// θ_{d+1}.
    pub sigma_eps_offdiag: f64,
}

/// d identical AR(7)+local-level blocks, unit observation variances and
/// common observation covariance 0.5, α₁ = 0.
pub fn simulation_model(d: usize) -> Result<(SutseSpec, SimulationTruth)> {
    simulation_model_with_rho(d, SIM_RHO)
}

pub fn simulation_model_with_rho(d: usize, rho: f64) -> Result<(SutseSpec, SimulationTruth)> {
    if d < 2 {
        return Err(SutseError::input("simulation model needs d >= 2"));
    }
    if !(rho > -1.0 / (d as f64 - 1.0) && rho < 1.0) {
        return Err(SutseError::input(format!(
            "equicorrelation {rho} outside (-1/(d-1), 1) for d={d}"
        )));
    }
    let block = ar_local_level_block(&SIM_PHI, SIM_LEVEL_VAR, SIM_AR_VAR)?;
    let diag = vec![1.0; d];
    let spec = SutseSpec {
        blocks: vec![block; d],
        sigma_eps: equicorrelation_sigma_eps(&diag, rho)?,
    };
    Ok((
        spec,
        SimulationTruth {
            phi: SIM_PHI.to_vec(),
            q1: SIM_LEVEL_VAR,
            q2: SIM_AR_VAR,
            sigma_eps_diag: diag,
            sigma_eps_offdiag: rho,
        },
    ))
}

/// Shapes of the 32-series AR(5)+local-level application model with a diffuse prior.
pub fn diffuse_ar_spec(phis: &[Vec<f64>], q1: &[f64], q2: &[f64], sigma_eps: DMatrix<f64>) -> Result<SutseSpec> {
    if phis.len() != q1.len() || phis.len() != q2.len() {
        return Err(SutseError::input("per-series parameter lists differ in length"));
    }
    let blocks = phis
        .iter()
        .zip(q1.iter().zip(q2))
        .map(|(phi, (&a, &b))| Ok(ar_local_level_block(phi, a, b)?.with_diffuse_prior(DIFFUSE_KAPPA)))
        .collect::<Result<Vec<_>>>()?;
    let spec = SutseSpec { blocks, sigma_eps };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_block_placement() {
        let b = |x: f64| SeriesBlock {
            z: DVector::from_vec(vec![x, 2.0 * x]),
            t: DMatrix::identity(2, 2) * x,
            q: DMatrix::identity(2, 2),
            a1: DVector::from_vec(vec![x, -x]),
            p1: DMatrix::identity(2, 2) * 3.0,
        };
        let spec = SutseSpec {
            blocks: vec![b(1.0), b(3.0)],
            sigma_eps: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]),
        };
        let m = compose(&spec).unwrap();
        assert_eq!(m.z.shape(), (2, 4));
        assert_eq!(m.z.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(m.z.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 3.0, 6.0]);
        assert_eq!(m.t[(2, 2)], 3.0);
        assert_eq!(m.t[(0, 2)], 0.0);
        assert_eq!(m.a1.as_slice(), &[1.0, -1.0, 3.0, -3.0]);
        let offsets = spec.offsets();
        for j in 0..2 {
            let (blk, s) = slice_block(&m, &offsets, j);
            assert_eq!(blk, spec.blocks[j]);
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn single_block_is_identity_composition() {
        let blk = ar_local_level_block(&[0.3, 0.1], 0.5, 1.0).unwrap();
        let spec = SutseSpec {
            blocks: vec![blk.clone()],
            sigma_eps: DMatrix::from_element(1, 1, 2.0),
        };
        assert_eq!(compose(&spec).unwrap(), blk.to_model(2.0).unwrap());
    }

    #[test]
    fn ar7_block_matches_simulation_transition() {
        let blk = ar_local_level_block(&SIM_PHI, 0.01, 1.0).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(8, 8, &[
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, -0.4, -0.1, 0.0, 0.0, 0.0, 0.2, 0.5,
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
        ]);
        assert_eq!(blk.t, expected);
        assert_eq!(blk.z.as_slice(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(blk.q[(0, 0)], 0.01);
        assert_eq!(blk.q[(1, 1)], 1.0);
        assert_eq!(blk.q.sum(), 1.01);
    }

    #[test]
    fn ar5_block_shape() {
        let phi = [0.1, 0.2, 0.3, 0.4, 0.5];
        let blk = ar_local_level_block(&phi, 0.1, 0.2).unwrap();
        assert_eq!(blk.t.shape(), (6, 6));
        assert_eq!(blk.t.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        for i in 2..6 {
            assert_eq!(blk.t[(i, i - 1)], 1.0);
            assert_eq!(blk.t.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn constant_level_block() {
        let blk = ar_local_level_block(&[0.0], 0.0, 0.0).unwrap();
        assert_eq!(blk.z.as_slice(), &[1.0, 1.0]);
        assert_eq!(blk.q, DMatrix::zeros(2, 2));
        assert_eq!(blk.t, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn simulation_factory_shapes() {
        let (spec, truth) = simulation_model(4).unwrap();
        let m = compose(&spec).unwrap();
        assert_eq!(m.z.shape(), (4, 32));
        assert_eq!(m.t.shape(), (32, 32));
        assert_eq!(m.p1, DMatrix::zeros(32, 32));
        assert_eq!(m.a1, DVector::zeros(32));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(spec.sigma_eps[(i, j)], if i == j { 1.0 } else { 0.5 });
            }
        }
        assert_eq!(truth.sigma_eps_offdiag, 0.5);

        let (spec2, _) = simulation_model(2).unwrap();
        let mut eig = nalgebra::SymmetricEigen::new(spec2.sigma_eps).eigenvalues.as_slice().to_vec();
        eig.sort_by(f64::total_cmp);
        assert!((eig[0] - 0.5).abs() < 1e-12 && (eig[1] - 1.5).abs() < 1e-12);

        for d in 2..10 {
            let (s, _) = simulation_model(d).unwrap();
            assert!(compose(&s).is_ok());
        }
        assert!(simulation_model(1).is_err());
        assert!(simulation_model_with_rho(4, -0.4).is_err());
        assert!(simulation_model_with_rho(4, 1.0).is_err());
    }

    #[test]
    fn equicorrelation_examples() {
        let m = equicorrelation_sigma_eps(&[1.0, 1.0], 0.5).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let diag = equicorrelation_sigma_eps(&[2.0, 3.0, 4.0], 0.0).unwrap();
        assert_eq!(diag, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0])));
        assert!(equicorrelation_sigma_eps(&[1.0; 4], -0.4).is_err());
    }
}
