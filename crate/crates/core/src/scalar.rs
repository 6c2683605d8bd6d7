//! Floating-point abstraction shared by the tensor core, losses and metrics.
//!
//! Training runs in `f32`; gradient checks run the identical code paths in
//! `f64`, where central differences are accurate enough to compare against.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Size in bytes of one value.
    const BYTES: usize;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }

    /// General matrix multiply `C <- alpha * A * B + beta * C` over strided
    /// row/column layouts. `A` is `m x k`, `B` is `k x n`, `C` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a.len() >= span(m, k, a_strides), "gemm: A too short");
                assert!(b.len() >= span(k, n, b_strides), "gemm: B too short");
                assert!(c.len() >= span(m, n, c_strides), "gemm: C too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the three asserts above guarantee every strided
                // access stays inside its slice, and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
