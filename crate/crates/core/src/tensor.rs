use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

/// Dense NCHW tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::Config(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; numel(shape)],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: Shape, bound: f64, rng: &mut SeededRng) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.uniform(-bound, bound)))
            .collect();
        Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
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

    /// Single value of a `1×1×1×1` tensor (or the first element otherwise).
    pub fn item(&self) -> T {
        self.data[0]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        assert_eq!(g.len(), self.data.len(), "gradient shape mismatch");
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(buf) = &mut self.grad {
            buf.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Converts element type, e.g. to run an `f32` network in `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// Copies channel `c` of batch item `n` as a `1×1×H×W` tensor.
    pub fn channel(&self, n: usize, c: usize) -> Self {
        let plane = self.shape[2] * self.shape[3];
        let start = self.index(n, c, 0, 0);
        Self {
            shape: [1, 1, self.shape[2], self.shape[3]],
            data: self.data[start..start + plane].to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Mirror about the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let [n, c, h, w] = self.shape;
        let mut out = self.data.clone();
        for plane in 0..n * c {
            for y in 0..h {
                let row = (plane * h + y) * w;
                out[row..row + w].reverse();
            }
        }
        Self {
            shape: self.shape,
            data: out,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Config(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
