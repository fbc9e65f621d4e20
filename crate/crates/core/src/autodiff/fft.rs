//! Planned 2D complex DFT over row-major `h x w` grids.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::tensor::Real;

/// Forward 2D transform (unnormalized, `exp(-2*pi*i*k*x/n)` kernel) for one grid size.
/// Supports any extents, including mixed-radix sizes such as 96 or 48.
pub struct Fft2<T: Real> {
    h: usize,
    w: usize,
    rows: Arc<dyn Fft<T>>,
    cols: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            rows: planner.plan_fft_forward(w),
            cols: planner.plan_fft_forward(h),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// In-place forward transform of `buf` (length `h * w`).
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        let (h, w) = (self.h, self.w);
        assert_eq!(buf.len(), h * w, "fft buffer size");
        self.rows.process(buf);
        let mut t = vec![Complex::new(T::zero(), T::zero()); h * w];
        transpose(buf, &mut t, h, w);
        self.cols.process(&mut t);
        transpose(&t, buf, w, h);
    }

    pub fn forward_real(&self, x: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward(&mut buf);
        buf
    }
}

impl<T: Real> fmt::Debug for Fft2<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], h: usize, w: usize) {
    for y in 0..h {
        for x in 0..w {
            dst[x * h + y] = src[y * w + x];
        }
    }
}
