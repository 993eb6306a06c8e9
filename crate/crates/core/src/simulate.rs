use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SutseError};
use crate::linalg::{psd_factor, SparseRows};
use crate::model::{ObservationSeries, StateSpaceModel};

/// Deterministic generator for a root seed and a replication stream.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn standard_normal(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws paths from a state-space model. Factors are computed once.
#[derive(Debug, Clone)]
pub struct Simulator {
    z: SparseRows,
    t: SparseRows,
    eps_factor: SparseRows,
    eta_factor: SparseRows,
    p1_factor: Option<DMatrix<f64>>,
    a1: DVector<f64>,
}

impl Simulator {
    pub fn new(model: &StateSpaceModel) -> Result<Self> {
        model.validate()?;
        let p1_factor = (model.p1.iter().any(|&x| x != 0.0)).then(|| psd_factor(&model.p1));
        Ok(Self {
            z: SparseRows::from_dense(&model.z),
            t: SparseRows::from_dense(&model.t),
            eps_factor: SparseRows::from_dense(&clean(psd_factor(&model.sigma_eps))),
            eta_factor: SparseRows::from_dense(&clean(psd_factor(&model.sigma_eta))),
            p1_factor,
            a1: model.a1.clone(),
        })
    }

    /// Draw n rows, also returning the state path α_1..α_n.
    pub fn draw_with_states(
        &self,
        n: usize,
        rng: &mut impl Rng,
    ) -> (ObservationSeries, Vec<DVector<f64>>) {
        let d = self.z.nrows();
        let p = self.t.nrows();
        let mut alpha = self.a1.clone();
        if let Some(b) = &self.p1_factor {
            alpha += b * standard_normal(rng, p);
        }
        let mut values = DMatrix::zeros(n, d);
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let y = self.z.mul_vec(&alpha) + self.eps_factor.mul_vec(&standard_normal(rng, d));
            values.set_row(t, &y.transpose());
            let next =
                self.t.mul_vec(&alpha) + self.eta_factor.mul_vec(&standard_normal(rng, p));
            states.push(std::mem::replace(&mut alpha, next));
        }
        (ObservationSeries::from_matrix(values), states)
    }

    pub fn draw(&self, n: usize, rng: &mut impl Rng) -> ObservationSeries {
        self.draw_with_states(n, rng).0
    }
}

// Eigen-factors of diagonal matrices carry round-off fill-in; drop it so the
// sparse products stay sparse.
fn clean(mut b: DMatrix<f64>) -> DMatrix<f64> {
    let scale = b.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    b.iter_mut().for_each(|x| {
        if x.abs() <= 1e-15 * scale {
            *x = 0.0
        }
    });
    b
}

/// Simulate n observations; deterministic given `seed`.
pub fn simulate(model: &StateSpaceModel, n: usize, seed: u64) -> Result<ObservationSeries> {
    if n == 0 {
        return Err(SutseError::input("simulate needs n >= 1"));
    }
    let sim = Simulator::new(model)?;
    Ok(sim.draw(n, &mut rng_for(seed, 0)))
}
