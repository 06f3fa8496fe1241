//! Raw numeric kernels shared by the forward and backward passes.
//!
//! Feature maps are single images laid out as `[channels, height, width]`.

/// `c = op(a) * op(b) + beta * c` for row-major operands, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // exactly those buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = oh * ow;
    let mut cols = vec![0.0; g.col_rows() * plane];
    for c in 0..g.channels {
        let src = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeom, x_grad: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = oh * ow;
    for c in 0..g.channels {
        let dst = &mut x_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation of one feature map with `out_channels`
/// filters of shape `[channels, kernel, kernel]`.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], out_channels: usize, g: &ConvGeom) -> Vec<f64> {
    let plane = g.out_height() * g.out_width();
    let mut out = vec![0.0; out_channels * plane];
    if g.is_pointwise() {
        gemm(out_channels, g.channels, plane, w, false, x, false, 0.0, &mut out);
    } else {
        let cols = im2col(x, g);
        gemm(out_channels, g.col_rows(), plane, w, false, &cols, false, 0.0, &mut out);
    }
    out
}

/// Returns `(grad_input, grad_weight)`; either may be skipped.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    out_channels: usize,
    g: &ConvGeom,
    want_input: bool,
    want_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.out_height() * g.out_width();
    let rows = g.col_rows();
    if g.is_pointwise() {
        let gx = want_input.then(|| {
            let mut gx = vec![0.0; g.channels * plane];
            gemm(g.channels, out_channels, plane, w, true, grad_out, false, 0.0, &mut gx);
            gx
        });
        let gw = want_weight.then(|| {
            let mut gw = vec![0.0; out_channels * rows];
            gemm(out_channels, plane, rows, grad_out, false, x, true, 0.0, &mut gw);
            gw
        });
        return (gx, gw);
    }
    let gw = want_weight.then(|| {
        let cols = im2col(x, g);
        let mut gw = vec![0.0; out_channels * rows];
        gemm(out_channels, plane, rows, grad_out, false, &cols, true, 0.0, &mut gw);
        gw
    });
    let gx = want_input.then(|| {
        let mut gcols = vec![0.0; rows * plane];
        gemm(rows, out_channels, plane, w, true, grad_out, false, 0.0, &mut gcols);
        let mut gx = vec![0.0; g.channels * g.height * g.width];
        col2im_add(&gcols, g, &mut gx);
        gx
    });
    (gx, gw)
}

/// Bilinear x2 upsampling with half-pixel centers and edge clamping.
pub(crate) fn upsample2x(x: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut tmp = vec![0.0; h * ow];
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let dst = &mut tmp[y * ow..(y + 1) * ow];
            for i in 0..w {
                let prev = row[i.saturating_sub(1)];
                let next = row[(i + 1).min(w - 1)];
                dst[2 * i] = 0.75 * row[i] + 0.25 * prev;
                dst[2 * i + 1] = 0.75 * row[i] + 0.25 * next;
            }
        }
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for i in 0..h {
            let cur = &tmp[i * ow..(i + 1) * ow];
            let prev = &tmp[i.saturating_sub(1) * ow..(i.saturating_sub(1) + 1) * ow];
            let n = (i + 1).min(h - 1);
            let next = &tmp[n * ow..(n + 1) * ow];
            for x in 0..ow {
                dst[2 * i * ow + x] = 0.75 * cur[x] + 0.25 * prev[x];
                dst[(2 * i + 1) * ow + x] = 0.75 * cur[x] + 0.25 * next[x];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`].
pub(crate) fn upsample2x_adjoint(g: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut tmp = vec![0.0; h * ow];
    let mut out = vec![0.0; channels * h * w];
    for c in 0..channels {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        let src = &g[c * oh * ow..(c + 1) * oh * ow];
        for i in 0..h {
            let p = i.saturating_sub(1);
            let n = (i + 1).min(h - 1);
            for x in 0..ow {
                let even = src[2 * i * ow + x];
                let odd = src[(2 * i + 1) * ow + x];
                tmp[i * ow + x] += 0.75 * (even + odd);
                tmp[p * ow + x] += 0.25 * even;
                tmp[n * ow + x] += 0.25 * odd;
            }
        }
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let row = &tmp[y * ow..(y + 1) * ow];
            let d = &mut dst[y * w..(y + 1) * w];
            for i in 0..w {
                let even = row[2 * i];
                let odd = row[2 * i + 1];
                d[i] += 0.75 * (even + odd);
                d[i.saturating_sub(1)] += 0.25 * even;
                d[(i + 1).min(w - 1)] += 0.25 * odd;
            }
        }
    }
    out
}

/// 2x2 box average; `h` and `w` must be even.
pub(crate) fn avg_pool2x(x: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out[(c * oh + y) * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2x_adjoint(g: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * h * w];
    for c in 0..channels {
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let v = 0.25 * g[(c * oh + y) * ow + xx];
                let i = 2 * y * w + 2 * xx;
                dst[i] += v;
                dst[i + 1] += v;
                dst[i + w] += v;
                dst[i + w + 1] += v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], o: usize, g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..g.channels {
                        for ki in 0..g.kernel {
                            for kj in 0..g.kernel {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                    continue;
                                }
                                acc += x[(c * g.height + iy as usize) * g.width + ix as usize]
                                    * w[((oc * g.channels + c) * g.kernel + ki) * g.kernel + kj];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(c, h, w, k, s, p, o) in &[(2, 5, 6, 3, 1, 1, 3), (3, 8, 8, 3, 2, 1, 2), (4, 4, 4, 1, 1, 0, 5), (1, 7, 5, 3, 2, 0, 1)] {
            let g = ConvGeom { channels: c, height: h, width: w, kernel: k, stride: s, pad: p };
            let x = pseudo(c * h * w, 1);
            let wt = pseudo(o * c * k * k, 2);
            let fast = conv2d_forward(&x, &wt, o, &g);
            let slow = naive_conv(&x, &wt, o, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let g = ConvGeom { channels: 3, height: 6, width: 5, kernel: 3, stride: 2, pad: 1 };
        let o = 2;
        let x = pseudo(3 * 30, 3);
        let w = pseudo(o * 27, 4);
        let gy = pseudo(o * g.out_height() * g.out_width(), 5);
        let (gx, gw) = conv2d_backward(&x, &w, &gy, o, &g, true, true);
        // <conv(x, w), gy> is bilinear, so it equals <x, gx> and <w, gw>.
        let y = conv2d_forward(&x, &w, o, &g);
        let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.iter().zip(&gx.unwrap()).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.iter().zip(&gw.unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-12);
        assert!((lhs - via_w).abs() < 1e-12);
    }

    #[test]
    fn upsample_adjoint_identity() {
        let (c, h, w) = (2, 3, 4);
        let x = pseudo(c * h * w, 7);
        let g = pseudo(c * 4 * h * w, 8);
        let y = upsample2x(&x, c, h, w);
        let gx = upsample2x_adjoint(&g, c, h, w);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_preserves_constants() {
        let y = upsample2x(&[0.3; 12], 1, 3, 4);
        assert!(y.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn avg_pool_adjoint_identity() {
        let (c, h, w) = (2, 4, 6);
        let x = pseudo(c * h * w, 9);
        let g = pseudo(c * h * w / 4, 10);
        let y = avg_pool2x(&x, c, h, w);
        let gx = avg_pool2x_adjoint(&g, c, h, w);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
