/// Row-major matrix operand, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    /// Row stride of the stored (untransposed) matrix.
    pub ld: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, ld: cols, transposed: false }
    }

    /// Strided view: row `i` starts at `data[i * ld]`.
    pub fn view(data: &'a [f64], rows: usize, cols: usize, ld: usize) -> Self {
        assert!(ld >= cols && (rows == 0 || data.len() >= (rows - 1) * ld + cols), "matrix view out of bounds");
        Self { data, rows, cols, ld, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }
}

/// `out = a · b + beta · out`, `out` row-major `[m × n]` with row stride `ldc`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, out: &mut [f64], ldc: usize) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert!(ldc >= n && (m == 0 || out.len() >= (m - 1) * ldc + n), "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            out[r * ldc..r * ldc + n].iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: `Mat::new`/`Mat::view` guarantee each operand slice covers
    // `(rows - 1) * ld + cols` elements, the range addressed by its strides;
    // the assert above does the same for `out`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
