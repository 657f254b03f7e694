//! The scalar abstraction every tensor kernel is written against.
//!
//! Networks train in `f32`; `f64` exists so gradient checks and reference
//! computations can run the exact same kernels with more headroom.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type of a [`Tensor`](crate::Tensor).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Tag written into checkpoint files.
    const DTYPE: u8;
    /// Width in bytes of one serialized element.
    const BYTES: usize;

    /// `c = alpha * a * b + beta * c` with arbitrary row/column strides.
    ///
    /// # Safety contract
    /// The strides must describe in-bounds views of the three slices. The
    /// wrapper checks the extents before handing raw pointers to the kernel.
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

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any float")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn max_offset(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    debug_assert!(rs >= 0 && cs >= 0, "negative strides are not used");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE: u8 = $dtype;
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
                assert!(a.len() >= max_offset(m, k, a_strides), "gemm: lhs too short");
                assert!(b.len() >= max_offset(k, n, b_strides), "gemm: rhs too short");
                assert!(c.len() >= max_offset(m, n, c_strides), "gemm: output too short");
                // SAFETY: extents checked above; `c` does not alias `a` or `b`
                // because it is borrowed mutably.
                unsafe {
                    $kernel(
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
                    )
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, 0, matrixmultiply::sgemm);
impl_scalar!(f64, 1, matrixmultiply::dgemm);

/// Row-major `c = a * b` (+ `c` when `accumulate`).
pub(crate) fn matmul_into<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    accumulate: bool,
) {
    let a_strides = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let b_strides = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, a_strides, b, b_strides, beta, c, (n as isize, 1));
}
