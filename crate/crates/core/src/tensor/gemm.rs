//! Bounds-checked strided GEMM on top of `matrixmultiply`.

/// Read-only strided matrix view: element `(i, j)` lives at
/// `data[offset + i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], offset: usize, rs: usize, cs: usize) -> Self {
        MatRef { data, offset, rs, cs }
    }

    /// Row-major contiguous `rows x cols` matrix starting at `offset`.
    pub fn rows(data: &'a [f64], offset: usize, cols: usize) -> Self {
        MatRef { data, offset, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` matrix.
    pub fn rows_t(data: &'a [f64], offset: usize, cols: usize) -> Self {
        MatRef { data, offset, rs: 1, cs: cols }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs;
        assert!(last < self.data.len(), "gemm operand out of bounds");
    }
}

pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn rows(data: &'a mut [f64], offset: usize, cols: usize) -> Self {
        MatMut { data, offset, rs: cols, cs: 1 }
    }

    pub fn new(data: &'a mut [f64], offset: usize, rs: usize, cs: usize) -> Self {
        MatMut { data, offset, rs, cs }
    }
}

/// `c = a · b + beta · c` with `a: m x k`, `b: k x n`, `c: m x n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    if m == 0 || n == 0 {
        return;
    }
    let c_last = c.offset + (m - 1) * c.rs + (n - 1) * c.cs;
    assert!(c_last < c.data.len(), "gemm output out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c.data[c.offset + i * c.rs + j * c.cs];
                *x *= beta;
            }
        }
        return;
    }
    a.check(m, k);
    b.check(k, n);
    // SAFETY: every index reachable from the three views was bounds-checked
    // above, strides are non-negative, and `c` is uniquely borrowed so it
    // cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_loops_with_strides() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(2, 3, 4, MatRef::rows(&a, 0, 3), MatRef::rows(&b, 0, 4), 1.0, MatMut::rows(&mut c, 0, 4));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum::<f64>();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        // aᵀ (3x2) times a (2x3)
        let mut d = vec![0.0; 9];
        gemm(3, 2, 3, MatRef::rows_t(&a, 0, 3), MatRef::rows(&a, 0, 3), 0.0, MatMut::rows(&mut d, 0, 3));
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|p| a[p * 3 + i] * a[p * 3 + j]).sum();
                assert!((d[i * 3 + j] - want).abs() < 1e-12);
            }
        }
    }
}
