//! Raw forward/adjoint kernels shared by the tape ops.
//!
//! Spatial ops pad by one pixel with half-sample symmetric reflection: the
//! mirror axis is the outer cell edge, so the ghost row equals the boundary
//! row. Its adjoint folds each ghost back onto the boundary cell, which keeps
//! every stencil whose weights sum to zero exactly flux-conserving.

use crate::tensor::Real;

#[inline]
fn src_index(p: usize, n: usize) -> usize {
    // padded coordinate p in 0..n+2 -> source coordinate
    p.saturating_sub(1).min(n - 1)
}

/// Pads `channels` planes of `h x w` to `(h+2) x (w+2)`.
pub(crate) fn pad_reflect<T: Real>(x: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![T::zero(); channels * ph * pw];
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for py in 0..ph {
            let row = &src[src_index(py, h) * w..][..w];
            let drow = &mut dst[py * pw..(py + 1) * pw];
            drow[1..=w].copy_from_slice(row);
            drow[0] = row[0];
            drow[w + 1] = row[w - 1];
        }
    }
    out
}

/// Adjoint of [`pad_reflect`]: accumulates padded gradients into `grad`.
pub(crate) fn fold_reflect<T: Real>(
    padded: &[T],
    grad: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
) {
    let (ph, pw) = (h + 2, w + 2);
    for c in 0..channels {
        let src = &padded[c * ph * pw..(c + 1) * ph * pw];
        let dst = &mut grad[c * h * w..(c + 1) * h * w];
        for py in 0..ph {
            let y = src_index(py, h);
            let prow = &src[py * pw..(py + 1) * pw];
            let drow = &mut dst[y * w..(y + 1) * w];
            for (d, s) in drow.iter_mut().zip(&prow[1..=w]) {
                *d = *d + *s;
            }
            drow[0] = drow[0] + prow[0];
            drow[w - 1] = drow[w - 1] + prow[w + 1];
        }
    }
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (a, b)| acc + *a * *b)
}

/// Accumulates `weight * shifted(padded plane)` into `out` for one tap.
#[inline]
fn tap_forward<T: Real>(
    weight: T,
    plane: &[T],
    out: &mut [T],
    ky: usize,
    kx: usize,
    h: usize,
    w: usize,
) {
    if weight == T::zero() {
        return;
    }
    let pw = w + 2;
    for y in 0..h {
        axpy(
            weight,
            &plane[(y + ky) * pw + kx..][..w],
            &mut out[y * w..(y + 1) * w],
        );
    }
}

#[inline]
fn tap_adjoint<T: Real>(
    weight: T,
    gout: &[T],
    gplane: &mut [T],
    ky: usize,
    kx: usize,
    h: usize,
    w: usize,
) {
    if weight == T::zero() {
        return;
    }
    let pw = w + 2;
    for y in 0..h {
        axpy(
            weight,
            &gout[y * w..(y + 1) * w],
            &mut gplane[(y + ky) * pw + kx..][..w],
        );
    }
}

#[inline]
fn tap_correlate<T: Real>(gout: &[T], plane: &[T], ky: usize, kx: usize, h: usize, w: usize) -> T {
    let pw = w + 2;
    (0..h).fold(T::zero(), |acc, y| {
        acc + dot(&gout[y * w..(y + 1) * w], &plane[(y + ky) * pw + kx..][..w])
    })
}

/// Accumulates `weight * (neighbour - centre)` into `out` for one tap.
#[inline]
fn tap_diff_forward<T: Real>(
    weight: T,
    plane: &[T],
    out: &mut [T],
    ky: usize,
    kx: usize,
    h: usize,
    w: usize,
) {
    if weight == T::zero() {
        return;
    }
    let pw = w + 2;
    for y in 0..h {
        let nb = &plane[(y + ky) * pw + kx..][..w];
        let centre = &plane[(y + 1) * pw + 1..][..w];
        for ((o, &n), &c) in out[y * w..(y + 1) * w].iter_mut().zip(nb).zip(centre) {
            *o = *o + weight * (n - c);
        }
    }
}

/// True when the centre weight cancels the others, as for a Laplacian.
fn is_zero_sum<T: Real>(weights: &[T; 9]) -> bool {
    let w: Vec<f64> = weights.iter().map(|x| x.to_f64_lossy()).collect();
    let scale: f64 = w.iter().map(|x| x.abs()).sum();
    scale > 0.0 && w.iter().sum::<f64>().abs() <= 1e-12 * scale
}

/// Fixed 3x3 stencil applied independently to each `h x w` plane. Zero-sum
/// stencils are evaluated as weighted neighbour differences, so constant
/// fields map to exactly zero.
pub(crate) fn stencil_forward<T: Real>(
    x: &[T],
    weights: &[T; 9],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let padded = pad_reflect(x, planes, h, w);
    let plane_len = (h + 2) * (w + 2);
    let mut out = vec![T::zero(); planes * h * w];
    let diff = is_zero_sum(weights);
    for c in 0..planes {
        let plane = &padded[c * plane_len..(c + 1) * plane_len];
        let o = &mut out[c * h * w..(c + 1) * h * w];
        for (k, &wt) in weights.iter().enumerate() {
            match (diff, k) {
                (true, 4) => {}
                (true, _) => tap_diff_forward(wt, plane, o, k / 3, k % 3, h, w),
                (false, _) => tap_forward(wt, plane, o, k / 3, k % 3, h, w),
            }
        }
    }
    out
}

pub(crate) fn stencil_adjoint<T: Real>(
    gout: &[T],
    weights: &[T; 9],
    planes: usize,
    h: usize,
    w: usize,
    gin: &mut [T],
) {
    let plane_len = (h + 2) * (w + 2);
    let mut gpad = vec![T::zero(); planes * plane_len];
    for c in 0..planes {
        let gp = &mut gpad[c * plane_len..(c + 1) * plane_len];
        let g = &gout[c * h * w..(c + 1) * h * w];
        for (k, &wt) in weights.iter().enumerate() {
            tap_adjoint(wt, g, gp, k / 3, k % 3, h, w);
        }
    }
    fold_reflect(&gpad, gin, planes, h, w);
}

/// Geometry of a 3x3 "same" convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

/// `out[co] = bias[co] + sum_ci kernel[co, ci] * pad(input[ci])` (cross-correlation).
pub(crate) fn conv2d_forward<T: Real>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    d: ConvDims,
) -> Vec<T> {
    let ConvDims { c_in, c_out, h, w } = d;
    let padded = pad_reflect(input, c_in, h, w);
    let plane_len = (h + 2) * (w + 2);
    let mut out = vec![T::zero(); c_out * h * w];
    for co in 0..c_out {
        let o = &mut out[co * h * w..(co + 1) * h * w];
        o.fill(bias[co]);
        for ci in 0..c_in {
            let plane = &padded[ci * plane_len..(ci + 1) * plane_len];
            let k = &kernel[(co * c_in + ci) * 9..][..9];
            for (t, &wt) in k.iter().enumerate() {
                tap_forward(wt, plane, o, t / 3, t % 3, h, w);
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to whichever of input, kernel
/// and bias are requested.
pub(crate) fn conv2d_adjoint<T: Real>(
    input: &[T],
    kernel: &[T],
    gout: &[T],
    d: ConvDims,
    gin: Option<&mut [T]>,
    gkernel: Option<&mut [T]>,
    gbias: Option<&mut [T]>,
) {
    let ConvDims { c_in, c_out, h, w } = d;
    let plane_len = (h + 2) * (w + 2);
    if let Some(gb) = gbias {
        for co in 0..c_out {
            gb[co] = gb[co] + gout[co * h * w..(co + 1) * h * w].iter().copied().sum();
        }
    }
    if let Some(gk) = gkernel {
        let padded = pad_reflect(input, c_in, h, w);
        for co in 0..c_out {
            let g = &gout[co * h * w..(co + 1) * h * w];
            for ci in 0..c_in {
                let plane = &padded[ci * plane_len..(ci + 1) * plane_len];
                let base = (co * c_in + ci) * 9;
                for t in 0..9 {
                    gk[base + t] = gk[base + t] + tap_correlate(g, plane, t / 3, t % 3, h, w);
                }
            }
        }
    }
    if let Some(gi) = gin {
        let mut gpad = vec![T::zero(); c_in * plane_len];
        for co in 0..c_out {
            let g = &gout[co * h * w..(co + 1) * h * w];
            for ci in 0..c_in {
                let gp = &mut gpad[ci * plane_len..(ci + 1) * plane_len];
                let k = &kernel[(co * c_in + ci) * 9..][..9];
                for (t, &wt) in k.iter().enumerate() {
                    tap_adjoint(wt, g, gp, t / 3, t % 3, h, w);
                }
            }
        }
        fold_reflect(&gpad, gi, c_in, h, w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_replicates_edges() {
        // 2x3 plane
        let x = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = pad_reflect(&x, 1, 2, 3);
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 3.0, 3.0,
            1.0, 1.0, 2.0, 3.0, 3.0,
            4.0, 4.0, 5.0, 6.0, 6.0,
            4.0, 4.0, 5.0, 6.0, 6.0,
        ];
        assert_eq!(p, expected);
    }

    #[test]
    fn fold_is_adjoint_of_pad() {
        // <pad(x), y> == <x, fold(y)>
        let (c, h, w) = (2, 3, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * (h + 2) * (w + 2))
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs = dot(&pad_reflect(&x, c, h, w), &y);
        let mut fy = vec![0.0; x.len()];
        fold_reflect(&y, &mut fy, c, h, w);
        let rhs = dot(&x, &fy);
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
