//! Thin safe wrapper over `matrixmultiply::dgemm` for row-major matrices.

/// C = alpha * A(m×k) * B(k×n) + beta * C(m×n), all row-major.
///
/// `trans_a` / `trans_b` reinterpret the buffer as the transpose of a
/// row-major (k×m) / (n×k) matrix without copying.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: A buffer size");
    assert_eq!(b.len(), k * n, "gemm: B buffer size");
    assert_eq!(c.len(), m * n, "gemm: C buffer size");
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
    unsafe {
        matrixmultiply::dgemm(
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
        );
    }
}

#[cfg(test)]
mod tests {
    use super::dgemm;

    #[test]
    fn matches_naive_product() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        dgemm(2, 3, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_views() {
        // A^T where A buffer is 3x2 row-major equals the 2x3 matrix used above.
        let a_t = vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2, columns are rows of A
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = vec![0.0; 4];
        dgemm(2, 3, 2, 1.0, &a_t, true, &b, false, 0.0, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn beta_accumulates() {
        let a = vec![1.0, 0.0, 0.0, 1.0];
        let b = vec![2.0, 0.0, 0.0, 2.0];
        let mut c = vec![1.0, 1.0, 1.0, 1.0];
        dgemm(2, 2, 2, 1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c, vec![3.0, 1.0, 1.0, 3.0]);
    }
}
