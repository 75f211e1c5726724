//! Dense row-major tensors and the scalar types they hold.

use std::fmt::Debug;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Element type of a tensor. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// How [`Tensor::create`] fills a new buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Uniform { seed: u64, lo: f64, hi: f64 },
    Normal { seed: u64, mean: f64, std: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        check_extents(shape)?;
        let n = numel(shape);
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Constant(c) => vec![T::from_f64(c); n],
            Init::Uniform { seed, lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::invalid(format!("uniform bounds {lo} >= {hi}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Uniform::new(lo, hi);
                (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect()
            }
            Init::Normal { seed, mean, std } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Normal::new(mean, std)
                    .map_err(|e| Error::invalid(format!("normal init: {e}")))?;
                (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect()
            }
        };
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Zeros)
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_extents(shape)?;
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {} elements, buffer has {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![v] }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!("item() on shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        check_extents(shape)?;
        if numel(shape) != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        // non-short-circuiting so the scan vectorizes
        self.data.iter().fold(true, |ok, v| ok & v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constant() {
        let z = Tensor::<f32>::create(&[2, 2], Init::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::<f32>::create(&[3], Init::Constant(1.5)).unwrap();
        assert_eq!(c.data(), &[1.5, 1.5, 1.5]);
        assert!(!c.is_empty());
    }

    #[test]
    fn seeded_init_repeats() {
        let init = Init::Uniform { seed: 7, lo: -1.0, hi: 1.0 };
        let a = Tensor::<f32>::create(&[16], init).unwrap();
        let b = Tensor::<f32>::create(&[16], init).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
        let n = Tensor::<f64>::create(&[8], Init::Normal { seed: 3, mean: 0.0, std: 1.0 }).unwrap();
        let m = Tensor::<f64>::create(&[8], Init::Normal { seed: 3, mean: 0.0, std: 1.0 }).unwrap();
        assert_eq!(n, m);
    }

    #[test]
    fn rejects_zero_extent() {
        assert!(Tensor::<f32>::create(&[2, 0], Init::Zeros).is_err());
        assert!(Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn reshape_keeps_row_major_order() {
        let t = Tensor::<f32>::from_f64s(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.reshaped(&[6]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4]).is_err());
    }
}
