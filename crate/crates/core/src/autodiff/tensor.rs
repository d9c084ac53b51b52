//! Dense tensors and parameter initialization.

use std::fmt::{Debug, Display};

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// Element type for all differentiable computation.
///
/// Training defaults to `f32`; gradient and oracle checks run at `f64`.
pub trait Scalar:
    Float + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense numeric array. Rank 0 (shape `[]`) is a scalar with one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel(shape)],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64s(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single element of a rank-0 tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// How a parameter tensor gets its starting values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initializer {
    Zeros,
    Constant(f64),
    /// Uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
    HeUniform { fan_in: usize },
    /// Standard normal draw, one per component.
    UnitNormal,
}

impl Initializer {
    pub fn sample<T: Scalar, R: Rng>(&self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let n = numel(shape);
        let data: Vec<T> = match *self {
            Initializer::Zeros => vec![T::zero(); n],
            Initializer::Constant(c) => vec![T::from_f64(c); n],
            Initializer::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64(rng.random::<f64>() * 2.0 * bound - bound))
                    .collect()
            }
            Initializer::UnitNormal => (0..n)
                .map(|_| T::from_f64(rng.sample::<f64, _>(rand_distr::StandardNormal)))
                .collect(),
        };
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub init: Initializer,
}

impl<T: Scalar> Parameter<T> {
    pub fn new<R: Rng>(name: impl Into<String>, shape: &[usize], init: Initializer, rng: &mut R) -> Self {
        Self {
            name: name.into(),
            tensor: init.sample(shape, rng),
            init,
        }
    }

    pub fn from_tensor(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            tensor,
            init: Initializer::Zeros,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_shape_product_must_match() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn rank0_scalar_has_one_element() {
        let t = Tensor::<f64>::scalar(4.5);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t.item(), 4.5);
    }

    #[test]
    fn he_uniform_bounds_and_mean() {
        let fan_in = 24;
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let t: Tensor<f64> =
            Initializer::HeUniform { fan_in }.sample(&[n], &mut rng);
        let mut sum = 0.0;
        for &v in t.data() {
            assert!(v >= -bound && v <= bound, "sample {v} outside [-{bound}, {bound}]");
            sum += v;
        }
        let mean = sum / n as f64;
        // std of the sample mean for U(-b, b) is b/sqrt(3n)
        let sigma = bound / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} beyond 3 sigma {sigma}");
    }

    #[test]
    fn he_uniform_deterministic_in_seed() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            Initializer::HeUniform { fan_in: 8 }.sample::<f64, _>(&[16], &mut rng)
        };
        assert_eq!(mk().data(), mk().data());
    }
}
