//! Dense row-major 2-D tensors and the numeric kernels behind the autodiff
//! graph: GEMM (row-block parallel), im2col/col2im, elementwise maps.
//!
//! Convolutional activations use an NHWC layout flattened to
//! `[batch * height * width, channels]`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

use hilbyte_core::par;
use serde::{Deserialize, Serialize};

/// Floating-point element type. Training runs in `f32`; gradient checks use
/// `f64`.
pub trait Real:
    Copy
    + Send
    + Sync
    + Default
    + PartialOrd
    + Debug
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + MulAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn powf(self, p: Self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// `C = alpha·A·B + beta·C` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (for C) matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn powf(self, p: Self) -> Self {
                <$t>::powf(self, p)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::filled(rows, cols, T::ZERO)
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor::filled(1, 1, v)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn reshaped(&self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.len(), "reshape changes element count");
        Tensor {
            rows,
            cols,
            data: self.data.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// Rows per parallel GEMM block. Fixed so results never depend on the
/// number of worker threads.
const GEMM_ROW_BLOCK: usize = 128;

/// `op(A) · op(B)` where `op` optionally transposes.
pub fn matmul<T: Real>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Tensor<T> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "matmul inner dimensions differ: {k} vs {k2}");
    let mut c = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    let (ad, bd) = (&a.data, &b.data);
    par::for_each_chunk_mut(&mut c.data, GEMM_ROW_BLOCK * n, |blk, out| {
        let r0 = blk * GEMM_ROW_BLOCK;
        let rows = out.len() / n;
        // SAFETY: row block [r0, r0 + rows) of op(A) lies inside `ad`, B is
        // whole, and `out` is exactly `rows × n` and exclusively borrowed.
        unsafe {
            T::gemm(
                rows,
                k,
                n,
                ad.as_ptr().offset(r0 as isize * rsa),
                rsa,
                csa,
                bd.as_ptr(),
                rsb,
                csb,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
    c
}

/// Geometry shared by im2col (image → patch rows) and col2im (patch rows →
/// image, summing overlaps).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub batch: usize,
    /// Image side (height = width).
    pub size: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Patch-grid side.
    pub out: usize,
}

impl ConvGeom {
    pub fn new(batch: usize, size: usize, channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(size + 2 * pad >= kernel, "kernel larger than padded input");
        let out = (size + 2 * pad - kernel) / stride + 1;
        ConvGeom {
            batch,
            size,
            channels,
            kernel,
            stride,
            pad,
            out,
        }
    }

    /// Geometry whose patch grid is `grid` and whose image is the transposed
    /// convolution output.
    pub fn transposed(batch: usize, grid: usize, channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let size = (grid - 1) * stride + kernel - 2 * pad;
        let g = ConvGeom::new(batch, size, channels, kernel, stride, pad);
        assert_eq!(g.out, grid, "transposed geometry does not invert");
        g
    }

    pub fn image_rows(&self) -> usize {
        self.batch * self.size * self.size
    }

    pub fn patch_rows(&self) -> usize {
        self.batch * self.out * self.out
    }

    pub fn patch_cols(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Source pixel for patch position, or `None` in the padding.
    #[inline]
    fn source(&self, o: usize, k: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < self.size).then_some(p as usize)
    }
}

pub fn im2col<T: Real>(x: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    assert_eq!(x.shape(), (g.image_rows(), g.channels), "im2col input shape");
    let cols = g.patch_cols();
    let mut out = Tensor::zeros(g.patch_rows(), cols);
    let per_sample_in = g.size * g.size * g.channels;
    let per_sample_out = g.out * g.out * cols;
    par::zip_chunks_mut(&x.data, per_sample_in, &mut out.data, per_sample_out, |src, dst| {
        for oy in 0..g.out {
            for ox in 0..g.out {
                let row = &mut dst[(oy * g.out + ox) * cols..][..cols];
                for ky in 0..g.kernel {
                    let Some(iy) = g.source(oy, ky) else { continue };
                    for kx in 0..g.kernel {
                        let Some(ix) = g.source(ox, kx) else { continue };
                        let s = (iy * g.size + ix) * g.channels;
                        let d = (ky * g.kernel + kx) * g.channels;
                        row[d..d + g.channels].copy_from_slice(&src[s..s + g.channels]);
                    }
                }
            }
        }
    });
    out
}

pub fn col2im<T: Real>(cols_t: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let cols = g.patch_cols();
    assert_eq!(cols_t.shape(), (g.patch_rows(), cols), "col2im input shape");
    let mut out = Tensor::zeros(g.image_rows(), g.channels);
    let per_sample_in = g.out * g.out * cols;
    let per_sample_out = g.size * g.size * g.channels;
    par::zip_chunks_mut(&cols_t.data, per_sample_in, &mut out.data, per_sample_out, |src, dst| {
        for oy in 0..g.out {
            for ox in 0..g.out {
                let row = &src[(oy * g.out + ox) * cols..][..cols];
                for ky in 0..g.kernel {
                    let Some(iy) = g.source(oy, ky) else { continue };
                    for kx in 0..g.kernel {
                        let Some(ix) = g.source(ox, kx) else { continue };
                        let d = (iy * g.size + ix) * g.channels;
                        let s = (ky * g.kernel + kx) * g.channels;
                        for (o, &v) in dst[d..d + g.channels].iter_mut().zip(&row[s..s + g.channels]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn naive(a: &Tensor<f64>, ta: bool, b: &Tensor<f64>, tb: bool) -> Tensor<f64> {
        let get_a = |i: usize, p: usize| if ta { a.data[p * a.cols + i] } else { a.data[i * a.cols + p] };
        let get_b = |p: usize, j: usize| if tb { b.data[j * b.cols + p] } else { b.data[p * b.cols + j] };
        let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let n = if tb { b.rows } else { b.cols };
        let mut c = Tensor::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                c.data[i * n + j] = (0..k).map(|p| get_a(i, p) * get_b(p, j)).sum();
            }
        }
        c
    }

    #[test]
    fn matmul_all_transpose_flags() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        // 300 rows spans several row blocks
        let (m, k, n) = (300, 7, 5);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = if ta { random(k, m, &mut rng) } else { random(m, k, &mut rng) };
            let b = if tb { random(n, k, &mut rng) } else { random(k, n, &mut rng) };
            let c = matmul(&a, ta, &b, tb);
            let r = naive(&a, ta, &b, tb);
            assert_eq!(c.shape(), (m, n));
            for (x, y) in c.data.iter().zip(&r.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for (size, k, s, p) in [(8, 4, 2, 1), (16, 4, 4, 0), (5, 3, 1, 1), (4, 1, 1, 0)] {
            let g = ConvGeom::new(3, size, 2, k, s, p);
            let x = random(g.image_rows(), g.channels, &mut rng);
            let y = random(g.patch_rows(), g.patch_cols(), &mut rng);
            let lhs: f64 = im2col(&x, &g).data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&col2im(&y, &g).data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{size} {k} {s} {p}");
        }
    }

    #[test]
    fn im2col_places_pixels() {
        // 1 sample, 2x2 single-channel image, 2x2 kernel, stride 1, no pad -> one patch
        let x = Tensor::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let g = ConvGeom::new(1, 2, 1, 2, 1, 0);
        assert_eq!(g.out, 1);
        assert_eq!(im2col(&x, &g).data, vec![1.0, 2.0, 3.0, 4.0]);
        let t = ConvGeom::transposed(2, 4, 3, 4, 4, 0);
        assert_eq!(t.size, 16);
    }
}
