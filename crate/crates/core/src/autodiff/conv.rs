//! Dense 3-D convolution kernels.
//!
//! A strided convolution relates a "small" grid (conv output / transposed-conv
//! input) to a "big" grid (conv input / transposed-conv output) through the tap
//! map `big = small * stride + k - pad`. Forward and backward passes of both
//! layers reduce to three single-channel primitives over that map.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub small: [usize; 3],
    pub big: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    pub fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    /// Half-open range of small indices whose tap `k` lands inside the big axis.
    fn axis_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let (small, big) = (self.small[axis], self.big[axis]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if big + p < k + 1 {
            0
        } else {
            ((big - 1 + p - k) / s + 1).min(small)
        };
        (lo, hi.max(lo))
    }

    #[inline(always)]
    fn visit(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let k = self.kernel;
        let [_, sh, sw] = self.small;
        let [_, bh, bw] = self.big;
        let (s, p) = (self.stride, self.pad);
        for kz in 0..k {
            let (z0, z1) = self.axis_range(0, kz);
            for ky in 0..k {
                let (y0, y1) = self.axis_range(1, ky);
                for kx in 0..k {
                    let (x0, x1) = self.axis_range(2, kx);
                    if x0 >= x1 {
                        continue;
                    }
                    let tap = (kz * k + ky) * k + kx;
                    for oz in z0..z1 {
                        let iz = oz * s + kz - p;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let srow = (oz * sh + oy) * sw;
                            let brow = (iz * bh + iy) * bw + kx;
                            f(tap, srow, brow, x0, x1);
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds `channels` big grids into a `(channels * k³, small_len)` column
/// matrix: `cols[(c, k), o] = big_c[o*s + k - p]`, zero where the tap falls
/// in the padding.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, channels: usize, big: &[T], cols: &mut [T]) {
    let (s, p) = (g.stride, g.pad);
    let (sl, bl, kl) = (g.small_len(), g.big_len(), g.kernel_len());
    cols.fill(T::zero());
    for c in 0..channels {
        let src = &big[c * bl..(c + 1) * bl];
        let dst = &mut cols[c * kl * sl..(c + 1) * kl * sl];
        g.visit(|tap, srow, brow, x0, x1| {
            let row = &mut dst[tap * sl + srow..];
            for ox in x0..x1 {
                row[ox] = src[brow + ox * s - p];
            }
        });
    }
}

/// Adjoint of [`im2col`]: folds columns back, summing overlapping taps.
pub(crate) fn col2im_add<T: Scalar>(g: &ConvGeom, channels: usize, cols: &[T], big: &mut [T]) {
    let (s, p) = (g.stride, g.pad);
    let (sl, bl, kl) = (g.small_len(), g.big_len(), g.kernel_len());
    for c in 0..channels {
        let src = &cols[c * kl * sl..(c + 1) * kl * sl];
        let dst = &mut big[c * bl..(c + 1) * bl];
        g.visit(|tap, srow, brow, x0, x1| {
            let row = &src[tap * sl + srow..];
            for ox in x0..x1 {
                dst[brow + ox * s - p] += row[ox];
            }
        });
    }
}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c (m×n, row-major) += a · b`.
pub(crate) fn matmul_add<T: Scalar>(a: Mat<'_, T>, b: Mat<'_, T>, c: &mut [T]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "matmul inner dimensions");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above bound every access implied by the shapes and strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            c.as_mut_ptr(),
            n as isize,
        )
    }
}
