//! Bounds-checked front end for the `matrixmultiply` single-precision kernel.

/// Strided read-only matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(
        data: &'a [f32],
        rows: usize,
        cols: usize,
        row_stride: usize,
        col_stride: usize,
    ) -> Self {
        let view = Self {
            data,
            rows,
            cols,
            row_stride,
            col_stride,
        };
        assert!(
            view.extent() <= data.len(),
            "matrix view {rows}x{cols} (strides {row_stride},{col_stride}) exceeds buffer of {}",
            data.len()
        );
        view
    }

    pub fn row_major(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols, 1)
    }

    /// Transposed view of the same storage.
    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = alpha * a * b + beta * c` where `c` is `a.rows() x b.cols()` with the
/// given strides. With `beta == 0` the previous contents of `c` are ignored.
pub fn gemm(
    alpha: f32,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f32,
    c: &mut [f32],
    c_row_stride: usize,
    c_col_stride: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions disagree");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    let c_extent = (m - 1) * c_row_stride + (n - 1) * c_col_stride + 1;
    assert!(c_extent <= c.len(), "gemm output view exceeds buffer");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c[i * c_row_stride + j * c_col_stride];
                *v = if beta == 0.0 { 0.0 } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: every view was checked above to stay within its backing slice,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            c_row_stride as isize,
            c_col_stride as isize,
        );
    }
}
