use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `N x C x H x W` extent of a dense tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major `N x C x H x W` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape} ({} expected)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape,
            data: (0..shape.numel()).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.data.len(),
            1,
            "item() on a tensor of shape {}",
            self.shape
        );
        self.data[0]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::c(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of channels `[c0, c0 + count)`.
    pub fn slice_channels(&self, c0: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if c0 + count > s.c {
            return Err(Error::Shape(format!(
                "channel slice {c0}..{} of {s}",
                c0 + count
            )));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * count * plane);
        for n in 0..s.n {
            let start = (n * s.c + c0) * plane;
            data.extend_from_slice(&self.data[start..start + count * plane]);
        }
        Ok(Tensor {
            shape: Shape::new(s.n, count, s.h, s.w),
            data,
        })
    }

    /// Stack single-sample tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                return Err(Error::Shape(format!("stack {ts} onto {s}")));
            }
            n += ts.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, s.c, s.h, s.w),
            data,
        })
    }

    /// Sample `i` as a `1 x C x H x W` tensor.
    pub fn sample(&self, i: usize) -> Self {
        let s = self.shape;
        let len = s.c * s.plane();
        Tensor {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}
