//! Numeric kernels shared by the tape ops.

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> MatRef<'a> {
    /// Row-major matrix with `cols` columns (row stride may exceed `cols`).
    pub fn rows(data: &'a [f64], row_stride: usize) -> Self {
        Self { data, rs: row_stride as isize, cs: 1 }
    }

    /// Transpose of a row-major matrix whose rows have stride `row_stride`.
    pub fn transposed(data: &'a [f64], row_stride: usize) -> Self {
        Self { data, rs: 1, cs: row_stride as isize }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = (rows as isize - 1) * self.rs + (cols as isize - 1) * self.cs;
        assert!((last as usize) < self.data.len(), "matrix view out of bounds");
    }
}

/// `C ← α·A·B + β·C` with `A: m×k`, `B: k×n` and `C` row-major with stride `ldc`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!((m - 1) * ldc + n <= c.len(), "output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched by dgemm was bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Geometry of a same-padded stride-1 2-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Unfolds one `[C, H, W]` image into `[C·kh·kw, H·W]` columns.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let plane = self.plane();
        for c in 0..self.c_in {
            for di in 0..self.kh {
                for dj in 0..self.kw {
                    let row = (c * self.kh + di) * self.kw + dj;
                    let out = &mut cols[row * plane..(row + 1) * plane];
                    for y in 0..self.height {
                        let sy = y as isize + di as isize - ph as isize;
                        for x in 0..self.width {
                            let sx = x as isize + dj as isize - pw as isize;
                            out[y * self.width + x] =
                                if sy >= 0 && sx >= 0 && (sy as usize) < self.height && (sx as usize) < self.width {
                                    image[(c * self.height + sy as usize) * self.width + sx as usize]
                                } else {
                                    0.0
                                };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back onto an image, accumulating.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let plane = self.plane();
        for c in 0..self.c_in {
            for di in 0..self.kh {
                for dj in 0..self.kw {
                    let row = (c * self.kh + di) * self.kw + dj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for y in 0..self.height {
                        let sy = y as isize + di as isize - ph as isize;
                        if sy < 0 || sy as usize >= self.height {
                            continue;
                        }
                        for x in 0..self.width {
                            let sx = x as isize + dj as isize - pw as isize;
                            if sx < 0 || sx as usize >= self.width {
                                continue;
                            }
                            image[(c * self.height + sy as usize) * self.width + sx as usize] +=
                                src[y * self.width + x];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
