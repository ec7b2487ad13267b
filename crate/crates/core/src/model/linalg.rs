//! Thin safe wrappers over `matrixmultiply`.

/// A strided view: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f32],
    pub rs: usize,
    pub cs: usize,
}

pub(crate) fn rows(data: &[f32], cols: usize) -> View<'_> {
    View { data, rs: cols, cs: 1 }
}

/// Transposed view of a row-major matrix with `cols` columns.
pub(crate) fn trans(data: &[f32], cols: usize) -> View<'_> {
    View { data, rs: 1, cs: cols }
}

fn fits(len: usize, r: usize, c: usize, rs: usize, cs: usize) -> bool {
    r == 0 || c == 0 || (r - 1) * rs + (c - 1) * cs < len
}

/// `C = A B + beta C` for `A: m x k`, `B: k x n`, `C` strided `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: View<'_>,
    b: View<'_>,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
) {
    assert!(fits(a.data.len(), m, k, a.rs, a.cs), "gemm: A out of bounds");
    assert!(fits(b.data.len(), k, n, b.rs, b.cs), "gemm: B out of bounds");
    assert!(fits(c.len(), m, n, rsc, csc), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index reachable through the strides was bounds-checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major `C (m x n) = A B + beta C`.
pub(crate) fn matmul(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f32, c: &mut [f32]) {
    gemm(m, k, n, a, b, beta, c, n, 1);
}
