//! Scalars the engine can run on: [`Scalar`] plus a dense matrix product.

use grounding_core::Scalar;

pub trait Real: Scalar {
    /// `c += A * B` for row/column-strided operands (`m x k` times `k x n`).
    #[allow(clippy::too_many_arguments)]
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
    );
}

macro_rules! strided_gemm {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm_acc(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                c: &mut [Self],
            ) {
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
                    }
                };
                assert!(a.len() as isize >= last(m, k, rsa, csa), "gemm: A too short");
                assert!(b.len() as isize >= last(k, n, rsb, csb), "gemm: B too short");
                assert!(c.len() >= m * n, "gemm: C too short");
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every index the kernel
                // touches; `c` is exclusively borrowed and does not alias.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        1.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

strided_gemm!(f32, matrixmultiply::sgemm);
strided_gemm!(f64, matrixmultiply::dgemm);
