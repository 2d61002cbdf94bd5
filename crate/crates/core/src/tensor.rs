//! Dense NCHW tensors and the scalar trait the autograd engine is generic over.
//!
//! Training runs in `f32`. The engine is also instantiated with `f64`, which is
//! what the finite-difference gradient checks use.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Real: Float + FromPrimitive + NumAssign + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a · b + beta * c` for an `m×k` by `k×n` product, with
    /// arbitrary row/column strides on every operand.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );

    /// `a · b` into a fresh row-major `m×n` buffer.
    fn gemm_new(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize)) -> Vec<Self>;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                check_extent(a.0.len(), m, k, a.1, a.2);
                check_extent(b.0.len(), k, n, b.1, b.2);
                check_extent(c.0.len(), m, n, c.1, c.2);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand's extent was checked against its slice.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }

            fn gemm_new(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize)) -> Vec<Self> {
                check_extent(a.0.len(), m, k, a.1, a.2);
                check_extent(b.0.len(), k, n, b.1, b.2);
                let mut c = Vec::with_capacity(m * n);
                if m == 0 || n == 0 {
                    return c;
                }
                if k == 0 {
                    c.resize(m * n, 0.0);
                    return c;
                }
                // SAFETY: operand extents were checked, `c` has room for m·n
                // values, and with beta = 0 the kernel writes every element of
                // C without reading it.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                    c.set_len(m * n);
                }
                c
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Shape `[batch, channels, height, width]`. Lower-rank tensors use leading ones.
pub type Shape = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::config(alloc::format!(
                "tensor of shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise conversion to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
        assert!(matches!(
            Tensor::<f32>::from_vec([1, 2, 2, 2], vec![0.0; 7]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gemm_matches_naive_product() {
        // 2x3 · 3x2, with b read transposed through its strides
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, (&a, 3, 1), (&bt, 1, 3), 0.0, (&mut c, 2, 1));
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }
}
