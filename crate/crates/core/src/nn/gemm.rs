//! Blocked matrix products with transposes expressed as strides.

use nalgebra::DMatrix;

/// Row and column strides of `m` (column-major), swapped when `trans`.
fn view(m: &DMatrix<f64>, trans: bool) -> (usize, usize, isize, isize) {
    let (r, c) = m.shape();
    if trans {
        (c, r, r as isize, 1)
    } else {
        (r, c, 1, r as isize)
    }
}

/// `op(a) * op(b)` where `op` transposes when the flag is set.
pub(crate) fn matmul(a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool) -> DMatrix<f64> {
    let (m, k, rsa, csa) = view(a, ta);
    let (kb, n, rsb, csb) = view(b, tb);
    assert_eq!(k, kb, "inner dimensions differ");
    let mut c = DMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: the strides describe exactly the m x k, k x n and m x n
    // column-major buffers owned by `a`, `b` and `c`, which do not alias.
    unsafe {
        matrixmultiply::dgemm(
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
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}
