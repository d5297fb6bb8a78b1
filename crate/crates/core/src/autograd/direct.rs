//! Direct stride-1 convolution for thin layers at high resolution, where a
//! gemm with only a handful of output channels is badly shaped.

use super::conv::ConvGeom;
use crate::tensor::Scalar;

/// Whether the direct kernels are expected to beat im2col + gemm.
pub(crate) fn preferred(g: &ConvGeom, h: usize, w: usize) -> bool {
    g.stride == 1 && g.kernel > 1 && g.out_channels <= 16 && h * w >= 64 * 64
}

// Range of output coordinates whose tap `offset` stays inside `[0, size)`.
fn valid_range(offset: isize, out: usize, size: usize) -> (usize, usize) {
    let lo = (-offset).clamp(0, out as isize) as usize;
    let hi = (size as isize - offset).clamp(0, out as isize) as usize;
    (lo, hi.max(lo))
}

#[inline(always)]
fn forward_impl<T: Scalar>(x: &[T], h: usize, w: usize, weight: &[T], g: &ConvGeom, out: &mut [T]) {
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    let c = g.in_channels;
    let plane = oh * ow;
    let mut o = 0;
    while o < g.out_channels {
        let block = (g.out_channels - o).min(4);
        for ic in 0..c {
            let xin = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let dy = (ky * g.dilation) as isize - g.padding as isize;
                let (ylo, yhi) = valid_range(dy, oh, h);
                for kx in 0..k {
                    let dx = (kx * g.dilation) as isize - g.padding as isize;
                    let (xlo, xhi) = valid_range(dx, ow, w);
                    if xhi == xlo {
                        continue;
                    }
                    let wv = |b: usize| weight[(((o + b) * c + ic) * k + ky) * k + kx];
                    let s0 = (xlo as isize + dx) as usize;
                    let len = xhi - xlo;
                    for oy in ylo..yhi {
                        let iy = (oy as isize + dy) as usize;
                        let src = &xin[iy * w + s0..iy * w + s0 + len];
                        let base = oy * ow + xlo;
                        match block {
                            4 => {
                                let (w0, w1, w2, w3) = (wv(0), wv(1), wv(2), wv(3));
                                let (a, rest) = out[o * plane..].split_at_mut(plane);
                                let (b, rest) = rest.split_at_mut(plane);
                                let (cc, rest) = rest.split_at_mut(plane);
                                let d = &mut rest[..plane];
                                let (a, b) = (&mut a[base..base + len], &mut b[base..base + len]);
                                let (cc, d) = (&mut cc[base..base + len], &mut d[base..base + len]);
                                for i in 0..len {
                                    let v = src[i];
                                    a[i] += w0 * v;
                                    b[i] += w1 * v;
                                    cc[i] += w2 * v;
                                    d[i] += w3 * v;
                                }
                            }
                            _ => {
                                for bi in 0..block {
                                    let wb = wv(bi);
                                    let dst = &mut out[(o + bi) * plane + base..(o + bi) * plane + base + len];
                                    for (dv, &v) in dst.iter_mut().zip(src) {
                                        *dv += wb * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        o += block;
    }
}

const LANES: usize = 8;

// Accumulates `sum_i g_b[i] * x[i]` for up to four gradient rows sharing one input row.
#[inline(always)]
fn dot_block<T: Scalar>(gs: &[&[T]], x: &[T], acc: &mut [[T; LANES]; 4], tail: &mut [T; 4]) {
    let chunks = x.len() / LANES;
    for i in 0..chunks {
        let xv = &x[i * LANES..(i + 1) * LANES];
        for (b, g) in gs.iter().enumerate() {
            let gv = &g[i * LANES..(i + 1) * LANES];
            for l in 0..LANES {
                acc[b][l] += gv[l] * xv[l];
            }
        }
    }
    for i in chunks * LANES..x.len() {
        for (b, g) in gs.iter().enumerate() {
            tail[b] += g[i] * x[i];
        }
    }
}

#[inline(always)]
fn weight_grad_impl<T: Scalar>(x: &[T], h: usize, w: usize, go: &[T], g: &ConvGeom, dw: &mut [T]) {
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    let c = g.in_channels;
    let plane = oh * ow;
    let mut o = 0;
    while o < g.out_channels {
        let block = (g.out_channels - o).min(4);
        for ic in 0..c {
            let xin = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let dy = (ky * g.dilation) as isize - g.padding as isize;
                let (ylo, yhi) = valid_range(dy, oh, h);
                for kx in 0..k {
                    let dx = (kx * g.dilation) as isize - g.padding as isize;
                    let (xlo, xhi) = valid_range(dx, ow, w);
                    let s0 = (xlo as isize + dx) as usize;
                    let len = xhi - xlo;
                    let mut acc = [[T::zero(); LANES]; 4];
                    let mut tail = [T::zero(); 4];
                    for oy in ylo..yhi {
                        let iy = (oy as isize + dy) as usize;
                        let row = oy * ow + xlo;
                        let mut rows: [&[T]; 4] = [&[]; 4];
                        for (b, r) in rows.iter_mut().enumerate().take(block) {
                            *r = &go[(o + b) * plane + row..(o + b) * plane + row + len];
                        }
                        dot_block(&rows[..block], &xin[iy * w + s0..iy * w + s0 + len], &mut acc, &mut tail);
                    }
                    for b in 0..block {
                        let total = acc[b].iter().fold(tail[b], |t, &v| t + v);
                        dw[(((o + b) * c + ic) * k + ky) * k + kx] += total;
                    }
                }
            }
        }
        o += block;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn forward_avx2<T: Scalar>(x: &[T], h: usize, w: usize, weight: &[T], g: &ConvGeom, out: &mut [T]) {
    forward_impl(x, h, w, weight, g, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn weight_grad_avx2<T: Scalar>(x: &[T], h: usize, w: usize, go: &[T], g: &ConvGeom, dw: &mut [T]) {
    weight_grad_impl(x, h, w, go, g, dw)
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Accumulates one sample's stride-1 convolution into `out` (pre-filled with bias).
pub(crate) fn forward_sample<T: Scalar>(x: &[T], h: usize, w: usize, weight: &[T], g: &ConvGeom, out: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports the enabled feature set.
        return unsafe { forward_avx2(x, h, w, weight, g, out) };
    }
    forward_impl(x, h, w, weight, g, out)
}

/// Accumulates one sample's weight gradient into `dw`.
pub(crate) fn weight_grad_sample<T: Scalar>(x: &[T], h: usize, w: usize, go: &[T], g: &ConvGeom, dw: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: as above.
        return unsafe { weight_grad_avx2(x, h, w, go, g, dw) };
    }
    weight_grad_impl(x, h, w, go, g, dw)
}
