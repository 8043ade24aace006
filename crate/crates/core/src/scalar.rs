//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! The market math is written once over [`Scalar`]; `f32` and `f64` are the
//! provided instantiations. The simulation engine and the file formats use
//! `f64` through the aliases exported at the crate root.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every value used this way is representable
    /// (possibly rounded) in both provided scalar types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `out = xᵀ x` for a row-major `rows × cols` matrix; `out` is `cols × cols`.
    fn gram(x: &[Self], rows: usize, cols: usize, out: &mut [Self]);
}

impl Scalar for f64 {
    fn gram(x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
        assert_eq!(x.len(), rows * cols);
        assert_eq!(out.len(), cols * cols);
        if rows == 0 || cols == 0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        // SAFETY: slice lengths checked above; strides describe xᵀ (cols×rows),
        // x (rows×cols) and out (cols×cols) in row-major layout.
        unsafe {
            matrixmultiply::dgemm(
                cols,
                rows,
                cols,
                1.0,
                x.as_ptr(),
                1,
                cols as isize,
                x.as_ptr(),
                cols as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
    }
}

impl Scalar for f32 {
    fn gram(x: &[f32], rows: usize, cols: usize, out: &mut [f32]) {
        assert_eq!(x.len(), rows * cols);
        assert_eq!(out.len(), cols * cols);
        if rows == 0 || cols == 0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        // SAFETY: see the f64 implementation.
        unsafe {
            matrixmultiply::sgemm(
                cols,
                rows,
                cols,
                1.0,
                x.as_ptr(),
                1,
                cols as isize,
                x.as_ptr(),
                cols as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
