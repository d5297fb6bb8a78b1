//! 2-D convolution via im2col + gemm, channels-first.

use super::direct;
use crate::tensor::{Scalar, Tensor};

/// Static description of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn out_size(&self, size: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (size + 2 * self.padding - span) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn macs(&self, h: usize, w: usize) -> usize {
        self.out_size(h) * self.out_size(w) * self.patch_len() * self.out_channels
    }
}

fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let p = oh * ow;
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let dy = (ky * g.dilation) as isize - g.padding as isize;
                let dx = (kx * g.dilation) as isize - g.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + dy;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if g.stride == 1 {
                        // valid ox range: 0 <= ox + dx < w
                        let lo = (-dx).clamp(0, ow as isize) as usize;
                        let hi = (w as isize - dx).clamp(0, ow as isize) as usize;
                        line[..lo].fill(T::zero());
                        if hi > lo {
                            let s0 = (lo as isize + dx) as usize;
                            line[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                        line[hi.max(lo)..].fill(T::zero());
                    } else {
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * g.stride) as isize + dx;
                            *v = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, g: &ConvGeom, dx_out: &mut [T]) {
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let p = oh * ow;
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &mut dx_out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let dy = (ky * g.dilation) as isize - g.padding as isize;
                let dx = (kx * g.dilation) as isize - g.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &src[oy * ow..(oy + 1) * ow];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride) as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `weight` is `O×C×K×K`, `bias` has `O` entries.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert_eq!(c, g.in_channels, "conv input channels");
    assert_eq!(
        weight.shape(),
        &[g.out_channels, g.in_channels, g.kernel, g.kernel]
    );
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let p = oh * ow;
    let kk = g.patch_len();
    let mut out = Tensor::zeros(&[n, g.out_channels, oh, ow]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    let out_len = g.out_channels * p;
    for i in 0..n {
        let xs = x.sample(i);
        let dst = &mut out.data_mut()[i * out_len..(i + 1) * out_len];
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        if direct::preferred(g, h, w) {
            direct::forward_sample(xs, h, w, weight.data(), g, dst);
            continue;
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, h, w, g, &mut cols);
            &cols
        };
        T::gemm(
            g.out_channels,
            kk,
            p,
            T::one(),
            weight.data(),
            false,
            rhs,
            false,
            beta,
            dst,
        );
    }
    out
}

/// Gradients of a convolution w.r.t. its input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeom,
    need_input_grad: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, _, h, w) = x.dims4();
    let (_, _, oh, ow) = grad_out.dims4();
    let p = oh * ow;
    let kk = g.patch_len();
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.out_channels]);
    let flip_path = need_input_grad && g.stride == 1 && !g.is_pointwise() && g.padding <= g.dilation * (g.kernel - 1);
    let mut dx = if flip_path {
        Some(transposed_conv_stride1(grad_out, weight, g))
    } else {
        need_input_grad.then(|| Tensor::zeros(x.shape()))
    };
    let direct_dw = direct::preferred(g, h, w);
    let mut cols = vec![T::zero(); if g.is_pointwise() || direct_dw { 0 } else { kk * p }];
    let mut dcols = vec![T::zero(); if flip_path || !need_input_grad { 0 } else { kk * p }];
    let out_len = g.out_channels * p;
    let in_len = x.len() / n.max(1);
    for i in 0..n {
        let go = &grad_out.data()[i * out_len..(i + 1) * out_len];
        for (o, chunk) in go.chunks(p).enumerate() {
            db.data_mut()[o] += chunk.iter().copied().sum();
        }
        let xs = x.sample(i);
        if direct_dw {
            direct::weight_grad_sample(xs, h, w, go, g, dw.data_mut());
        } else {
            let rhs: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, h, w, g, &mut cols);
                &cols
            };
            T::gemm(
                g.out_channels,
                p,
                kk,
                T::one(),
                go,
                false,
                rhs,
                true,
                T::one(),
                dw.data_mut(),
            );
        }
        if let (Some(dx), false) = (dx.as_mut(), flip_path) {
            let dst = &mut dx.data_mut()[i * in_len..(i + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(kk, g.out_channels, p, T::one(), weight.data(), true, go, false, T::one(), dst);
            } else {
                T::gemm(
                    kk,
                    g.out_channels,
                    p,
                    T::one(),
                    weight.data(),
                    true,
                    go,
                    false,
                    T::zero(),
                    &mut dcols,
                );
                col2im(&dcols, h, w, g, dst);
            }
        }
    }
    (dx, dw, db)
}

// Stride-1 input gradient: correlate grad_out with the spatially flipped,
// channel-transposed kernel and complementary padding.
fn transposed_conv_stride1<T: Scalar>(grad_out: &Tensor<T>, weight: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let k = g.kernel;
    let (o, c) = (g.out_channels, g.in_channels);
    let mut flipped = Tensor::zeros(&[c, o, k, k]);
    for oc in 0..o {
        for ic in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    flipped.data_mut()[((ic * o + oc) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                        weight.data()[((oc * c + ic) * k + ky) * k + kx];
                }
            }
        }
    }
    let tg = ConvGeom {
        in_channels: o,
        out_channels: c,
        kernel: k,
        stride: 1,
        padding: g.dilation * (k - 1) - g.padding,
        dilation: g.dilation,
    };
    conv2d_forward(grad_out, &flipped, None, &tg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor<f64>, wt: &Tensor<f64>, g: &ConvGeom) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (g.out_size(h), g.out_size(w));
        let mut out = Tensor::zeros(&[n, g.out_channels, oh, ow]);
        for b in 0..n {
            for o in 0..g.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                        * wt.data()[((o * c + ci) * g.kernel + ky) * g.kernel + kx];
                                }
                            }
                        }
                        out.data_mut()[((b * g.out_channels + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn filled(shape: &[usize], seed: f64) -> Tensor<f64> {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| ((i as f64 + seed) * 0.7311).sin()).collect())
    }

    #[test]
    fn matches_naive_for_strides_and_dilations() {
        for &(k, s, p, d) in &[(3, 1, 1, 1), (3, 2, 1, 1), (3, 1, 2, 2), (3, 2, 2, 2), (1, 1, 0, 1), (1, 2, 0, 1)] {
            let g = ConvGeom { in_channels: 2, out_channels: 3, kernel: k, stride: s, padding: p, dilation: d };
            let x = filled(&[2, 2, 7, 6], 0.3);
            let wt = filled(&[3, 2, k, k], 1.9);
            let got = conv2d_forward(&x, &wt, None, &g);
            let want = naive(&x, &wt, &g);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{k} {s} {p} {d}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), gy> = <x, dx> = <w, dw> for a linear map without bias
        for &(k, s, p, d) in &[(3, 1, 1, 1), (3, 2, 1, 1), (3, 1, 2, 2), (1, 1, 0, 1)] {
            let g = ConvGeom { in_channels: 3, out_channels: 2, kernel: k, stride: s, padding: p, dilation: d };
            let x = filled(&[2, 3, 6, 5], 0.1);
            let wt = filled(&[2, 3, k, k], 4.2);
            let y = conv2d_forward(&x, &wt, None, &g);
            let gy = filled(y.shape(), 9.9);
            let (dx, dw, db) = conv2d_backward(&x, &wt, &gy, &g, true);
            let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
            let rx: f64 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
            let rw: f64 = wt.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rx).abs() < 1e-9);
            assert!((lhs - rw).abs() < 1e-9);
            assert!((db.sum() - gy.sum()).abs() < 1e-9);
        }
    }

    #[test]
    fn direct_kernels_match_naive_at_full_resolution() {
        for &(cin, cout, d) in &[(3, 4, 2), (4, 6, 1), (5, 3, 1)] {
            let g = ConvGeom { in_channels: cin, out_channels: cout, kernel: 3, stride: 1, padding: d, dilation: d };
            assert!(direct::preferred(&g, 64, 64));
            let x = filled(&[2, cin, 64, 64], 0.5);
            let wt = filled(&[cout, cin, 3, 3], 2.7);
            let y = conv2d_forward(&x, &wt, None, &g);
            let want = naive(&x, &wt, &g);
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            let gy = filled(y.shape(), 3.3);
            let (dx, dw, _) = conv2d_backward(&x, &wt, &gy, &g, true);
            let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
            let rx: f64 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
            let rw: f64 = wt.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rx).abs() < 1e-8 * lhs.abs().max(1.0));
            assert!((lhs - rw).abs() < 1e-8 * lhs.abs().max(1.0));
        }
    }
}
