//! Dense rank-4 tensors in `(N, C, H, W)` row-major order.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;

/// Extent of a rank-4 tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    /// Elements in one `(H, W)` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    /// Elements in one sample.
    pub fn sample(&self) -> usize {
        self.c() * self.plane()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total element count, rejecting zero dims and overflow.
    pub fn checked_len(&self) -> Result<usize> {
        if self.0.contains(&0) {
            return Err(Error::Alloc(format!("zero dimension in shape {self}")));
        }
        self.0
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= isize::MAX as usize)
            .ok_or_else(|| Error::Alloc(format!("shape {self} overflows")))
    }

    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c() + c) * self.h() + h) * self.w() + w
    }

    pub fn with_batch(&self, n: usize) -> Shape {
        Shape([n, self.c(), self.h(), self.w()])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Result<Self> {
        let shape = shape.into();
        let len = shape.checked_len()?;
        let mut data = Vec::new();
        data.try_reserve_exact(len)
            .map_err(|e| Error::Alloc(format!("{shape}: {e}")))?;
        data.resize(len, value);
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = shape.checked_len()?;
        if data.len() != len {
            return Err(shape_err!("{} values for shape {shape} ({len} expected)", data.len()));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// He-normal initialization: i.i.d. `N(0, 2 / fan_in)`.
    pub fn kaiming_init(shape: impl Into<Shape>, fan_in: usize, rng: &mut Rng) -> Result<Self> {
        if fan_in == 0 {
            return Err(Error::Domain("kaiming_init: fan_in must be positive".into()));
        }
        let mut t = Self::zeros(shape)?;
        let std = (2.0 / fan_in as f64).sqrt();
        for v in &mut t.data {
            *v = T::from_f64_lossy(rng.normal() * std);
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous slice holding sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape.sample();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape.sample();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(T::zero());
        }
    }

    /// Value and gradient buffers borrowed together.
    pub fn value_and_grad_mut(&mut self) -> (&mut [T], &mut [T]) {
        let len = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![T::zero(); len]);
        (&mut self.data, grad)
    }

    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.checked_len()? != self.data.len() {
            return Err(shape_err!("cannot reshape {} into {shape}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn same_shape(&self, other: &Tensor<T>, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("{what}: {} vs {}", self.shape, other.shape));
        }
        Ok(())
    }

    /// Concatenates samples of identical shape along the batch axis.
    pub fn stack(samples: &[&Tensor<T>]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| shape_err!("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * samples.len());
        let mut n = 0;
        for s in samples {
            first.same_shape_ignoring_batch(s)?;
            data.extend_from_slice(&s.data);
            n += s.shape.n();
        }
        Self::from_vec(first.shape.with_batch(n), data)
    }

    fn same_shape_ignoring_batch(&self, other: &Tensor<T>) -> Result<()> {
        if self.shape.0[1..] != other.shape.0[1..] {
            return Err(shape_err!("stack: {} vs {}", self.shape, other.shape));
        }
        Ok(())
    }
}

/// `a + b` elementwise.
pub fn elementwise_add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.same_shape(b, "elementwise_add")?;
    Ok(Tensor {
        shape: a.shape,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
        grad: None,
    })
}

/// Backward of [`elementwise_add`]: the upstream gradient flows unchanged
/// to both operands.
pub fn elementwise_add_backward<T: Real>(upstream: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (upstream.clone(), upstream.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_examples() {
        let t = Tensor::<f32>::zeros([1, 1, 1, 1]).unwrap();
        assert_eq!(t.data(), &[0.0]);
        assert!(t.grad().is_none());
        let t = Tensor::<f32>::zeros([1, 2, 2, 2]).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert!(matches!(Tensor::<f32>::zeros([0, 1, 1, 1]), Err(Error::Alloc(_))));
        assert!(matches!(
            Tensor::<f32>::zeros([usize::MAX, 2, 1, 1]),
            Err(Error::Alloc(_))
        ));
    }

    #[test]
    fn kaiming_statistics() {
        let mut rng = Rng::new(11);
        let t = Tensor::<f64>::kaiming_init([1, 1, 1, 100_000], 8, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.01, "std {}", var.sqrt());

        let a = Tensor::<f32>::kaiming_init([2, 3, 3, 3], 27, &mut Rng::new(5)).unwrap();
        let b = Tensor::<f32>::kaiming_init([2, 3, 3, 3], 27, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            Tensor::<f32>::kaiming_init([1, 1, 1, 1], 0, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn add_forward_backward() {
        let a = Tensor::<f32>::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec([1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(elementwise_add(&a, &b).unwrap().data(), &[4.0, 6.0]);
        let z = Tensor::zeros([1, 1, 1, 2]).unwrap();
        assert_eq!(elementwise_add(&a, &z).unwrap(), a);
        let up = Tensor::<f32>::from_vec([1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
        let (ga, gb) = elementwise_add_backward(&up);
        assert_eq!(ga.data(), &[1.0, 1.0]);
        assert_eq!(gb.data(), &[1.0, 1.0]);
        let c = Tensor::<f32>::zeros([1, 1, 2, 1]).unwrap();
        assert!(matches!(elementwise_add(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn grad_buffer_matches_data() {
        let mut t = Tensor::<f32>::zeros([2, 1, 2, 2]).unwrap();
        assert_eq!(t.grad_mut().len(), t.len());
    }
}
