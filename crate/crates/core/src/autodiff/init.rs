use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Real, Tensor};
use crate::error::Result;

/// Xavier-uniform sample for a `fan_in x fan_out` matrix.
pub fn xavier_uniform<F: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::of(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive dims")
}

/// Uniform sample in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform<F: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, shape: &[usize]) -> Tensor<F> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.gen_range(-limit..limit))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

/// Seeded parameter builder. Draws happen in call order, so a fixed sequence
/// of calls with a fixed seed always yields the same parameters.
pub struct Init<F> {
    rng: ChaCha8Rng,
    params: ParamSet<F>,
}

impl<F: Real> Init<F> {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ParamSet::new(),
        }
    }

    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        let t = xavier_uniform(&mut self.rng, rows, cols);
        self.params.insert(name, t)
    }

    pub fn zeros(&mut self, name: &str, n: usize) -> Result<()> {
        self.params.insert(name, Tensor::zeros(&[n]))
    }

    pub fn ones(&mut self, name: &str, n: usize) -> Result<()> {
        self.params.insert(name, Tensor::full(&[n], F::one()))
    }

    /// Weight `rows x cols` and bias of length `cols`, both drawn from
    /// [`fan_in_uniform`] with `fan_in = rows`.
    pub fn linear(&mut self, prefix: &str, rows: usize, cols: usize) -> Result<()> {
        let w = fan_in_uniform(&mut self.rng, rows, &[rows, cols]);
        self.params.insert(format!("{prefix}.w"), w)?;
        let b = fan_in_uniform(&mut self.rng, rows, &[cols]);
        self.params.insert(format!("{prefix}.b"), b)
    }

    /// Unit gain and zero bias of width `n`.
    pub fn layer_norm(&mut self, prefix: &str, n: usize) -> Result<()> {
        self.ones(&format!("{prefix}.gain"), n)?;
        self.zeros(&format!("{prefix}.bias"), n)
    }

    pub fn finish(self) -> ParamSet<F> {
        self.params
    }
}
