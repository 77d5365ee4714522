//! Floating-point element type of network tensors.

use std::fmt::{Debug, Display};

use num_traits::Float;

use crate::format::Dtype;

pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    const DTYPE: Dtype;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Raw GEMM with explicit strides (see `matrixmultiply`).
    ///
    /// # Safety
    /// The strides must describe in-bounds views of the pointed-to buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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
    const DTYPE: Dtype = Dtype::F32;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
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
    const DTYPE: Dtype = Dtype::F64;

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
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

/// `C = alpha * op(A) * op(B) + beta * C` on row-major buffers, where `op(A)`
/// is `m x k` and `op(B)` is `k x n`. A transposed operand is stored with its
/// dimensions swapped. When `beta` is zero `C` is not read.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand too short"
    );
    if m == 0 || n == 0 {
        return;
    }
    if m <= SMALL_M && !trans_a && !trans_b {
        small_m(m, k, n, alpha, a, b, beta, c);
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the length assertion above covers every index reachable through
    // the strides chosen for row-major storage.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

// Below this many rows the packing done by `matrixmultiply` costs more than
// it saves: a single-sample dense layer would copy its whole weight matrix on
// every call.
const SMALL_M: usize = 4;

#[allow(clippy::too_many_arguments)]
fn small_m<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        if beta == T::zero() {
            row.fill(T::zero());
        } else if beta != T::one() {
            row.iter_mut().for_each(|v| *v = *v * beta);
        }
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let s = alpha * av;
            for (cv, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv = *cv + s * bv;
            }
        }
    }
}
