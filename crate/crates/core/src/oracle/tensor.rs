use std::fmt;

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("data length {got} does not match dims {dims:?}")]
    Length { dims: Vec<usize>, got: usize },
    #[error("tensors have at most 4 dims, got {0}")]
    Rank(usize),
    #[error("{0}")]
    Mismatch(String),
}

/// Dense row-major tensor of up to four dimensions.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self, ShapeError> {
        if dims.len() > 4 {
            return Err(ShapeError::Rank(dims.len()));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(ShapeError::Length { dims: dims.to_vec(), got: data.len() });
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::from_fn(dims, |_| T::zero())
    }

    /// Builds a tensor by calling `f` with every multi-index in row-major order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        assert!(dims.len() <= 4, "tensors have at most 4 dims");
        let n = dims.iter().product::<usize>();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self { dims: dims.to_vec(), data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.dims.len(), "index rank");
        idx.iter().zip(&self.dims).fold(0, |off, (&i, &d)| {
            assert!(i < d, "index {i} out of bounds for dim {d}");
            off * d + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self, ShapeError> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from(*v).expect("float cast")).collect(),
        }
    }

    /// Bit-for-bit equality: `-0.0 != 0.0`, equal NaN payloads match.
    pub fn bit_eq(&self, other: &Self) -> bool
    where
        T: BitPattern,
    {
        self.dims == other.dims
            && self.data.iter().zip(&other.data).all(|(a, b)| a.bit_pattern() == b.bit_pattern())
    }
}

pub trait BitPattern {
    fn bit_pattern(&self) -> u64;
}

impl BitPattern for f32 {
    fn bit_pattern(&self) -> u64 {
        self.to_bits() as u64
    }
}

impl BitPattern for f64 {
    fn bit_pattern(&self) -> u64 {
        self.to_bits()
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} {:?}", self.dims, self.data)
    }
}
