//! 2-D cross-correlation (no kernel flip) over `channels × height × width` maps.

use super::{check_finite, Tensor, TensorError, TensorResult};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `k / 2` on each side; odd kernels only. Preserves extent.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

/// Resolved sizes for one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_y: usize,
    pub pad_x: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], padding: Padding) -> TensorResult<Self> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            left: input.to_vec(),
            right: kernels.to_vec(),
        };
        if input.len() != 3 || kernels.len() != 4 || kernels[1] != input[0] {
            return Err(mismatch());
        }
        let (cin, h, w) = (input[0], input[1], input[2]);
        let (cout, kh, kw) = (kernels[0], kernels[2], kernels[3]);
        if kh == 0 || kw == 0 {
            return Err(mismatch());
        }
        let (pad_y, pad_x, out_h, out_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(TensorError::Invalid(format!(
                        "same padding needs odd kernel sizes, got {kh}x{kw}"
                    )));
                }
                (kh / 2, kw / 2, h, w)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(mismatch());
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self {
            in_channels: cin,
            height: h,
            width: w,
            out_channels: cout,
            kernel_h: kh,
            kernel_w: kw,
            pad_y,
            pad_x,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_h, self.out_w]
    }

    /// Output index range along one axis for which `o + k - pad` lands inside `[0, extent)`.
    #[inline]
    fn span(out: usize, extent: usize, pad: usize, k: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k);
        let hi = (extent + pad).saturating_sub(k).min(out);
        (lo, hi.max(lo))
    }

    /// `out += input ⋆ kernels`.
    pub(crate) fn forward_acc(&self, input: &[f64], kernels: &[f64], out: &mut [f64]) {
        let g = self;
        let (ih, iw, oh, ow) = (g.height, g.width, g.out_h, g.out_w);
        for co in 0..g.out_channels {
            let out_c = &mut out[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..g.in_channels {
                let in_c = &input[ci * ih * iw..(ci + 1) * ih * iw];
                let kbase = (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
                for ky in 0..g.kernel_h {
                    let (y0, y1) = Self::span(oh, ih, g.pad_y, ky);
                    for kx in 0..g.kernel_w {
                        let wv = kernels[kbase + ky * g.kernel_w + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = Self::span(ow, iw, g.pad_x, kx);
                        for oy in y0..y1 {
                            let iy = oy + ky - g.pad_y;
                            let src = &in_c[iy * iw + x0 + kx - g.pad_x..iy * iw + x1 + kx - g.pad_x];
                            let dst = &mut out_c[oy * ow + x0..oy * ow + x1];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `d_input += kernelsᵀ ⋆ d_out` (gradient with respect to the input map).
    pub(crate) fn backward_input_acc(&self, d_out: &[f64], kernels: &[f64], d_input: &mut [f64]) {
        let g = self;
        let (ih, iw, oh, ow) = (g.height, g.width, g.out_h, g.out_w);
        for co in 0..g.out_channels {
            let dout_c = &d_out[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..g.in_channels {
                let din_c = &mut d_input[ci * ih * iw..(ci + 1) * ih * iw];
                let kbase = (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
                for ky in 0..g.kernel_h {
                    let (y0, y1) = Self::span(oh, ih, g.pad_y, ky);
                    for kx in 0..g.kernel_w {
                        let wv = kernels[kbase + ky * g.kernel_w + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = Self::span(ow, iw, g.pad_x, kx);
                        for oy in y0..y1 {
                            let iy = oy + ky - g.pad_y;
                            let src = &dout_c[oy * ow + x0..oy * ow + x1];
                            let dst = &mut din_c[iy * iw + x0 + kx - g.pad_x..iy * iw + x1 + kx - g.pad_x];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `d_kernels += d_out ⋆ input` (gradient with respect to the kernel bank).
    pub(crate) fn backward_kernel_acc(&self, d_out: &[f64], input: &[f64], d_kernels: &mut [f64]) {
        let g = self;
        let (ih, iw, oh, ow) = (g.height, g.width, g.out_h, g.out_w);
        for co in 0..g.out_channels {
            let dout_c = &d_out[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..g.in_channels {
                let in_c = &input[ci * ih * iw..(ci + 1) * ih * iw];
                let kbase = (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
                for ky in 0..g.kernel_h {
                    let (y0, y1) = Self::span(oh, ih, g.pad_y, ky);
                    for kx in 0..g.kernel_w {
                        let (x0, x1) = Self::span(ow, iw, g.pad_x, kx);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy + ky - g.pad_y;
                            let a = &dout_c[oy * ow + x0..oy * ow + x1];
                            let b = &in_c[iy * iw + x0 + kx - g.pad_x..iy * iw + x1 + kx - g.pad_x];
                            acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                        }
                        d_kernels[kbase + ky * g.kernel_w + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input` (`c_in × h × w`) with `kernels`
/// (`c_out × c_in × kh × kw`), zero padded according to `padding`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, padding: Padding) -> TensorResult<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernels.shape(), padding)?;
    let mut out = vec![0.0; g.out_channels * g.out_h * g.out_w];
    g.forward_acc(input.data(), kernels.data(), &mut out);
    check_finite("conv2d", &out)?;
    Ok(Tensor::from_parts(g.output_shape().to_vec(), out))
}

/// Gradient of `sum(d_out ⊙ conv2d(x, kernels))` with respect to `x`.
pub fn conv2d_backward_input(
    d_out: &Tensor,
    kernels: &Tensor,
    input_shape: &[usize],
    padding: Padding,
) -> TensorResult<Tensor> {
    let g = ConvGeometry::new(input_shape, kernels.shape(), padding)?;
    if d_out.shape() != g.output_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward_input",
            left: d_out.shape().to_vec(),
            right: g.output_shape().to_vec(),
        });
    }
    let mut d_in = vec![0.0; input_shape.iter().product()];
    g.backward_input_acc(d_out.data(), kernels.data(), &mut d_in);
    check_finite("conv2d_backward_input", &d_in)?;
    Ok(Tensor::from_parts(input_shape.to_vec(), d_in))
}

/// Gradient of `sum(d_out ⊙ conv2d(input, k))` with respect to `k`.
pub fn conv2d_backward_kernel(
    d_out: &Tensor,
    input: &Tensor,
    kernel_shape: &[usize],
    padding: Padding,
) -> TensorResult<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernel_shape, padding)?;
    if d_out.shape() != g.output_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward_kernel",
            left: d_out.shape().to_vec(),
            right: g.output_shape().to_vec(),
        });
    }
    let mut dk = vec![0.0; kernel_shape.iter().product()];
    g.backward_kernel_acc(d_out.data(), input.data(), &mut dk);
    check_finite("conv2d_backward_kernel", &dk)?;
    Ok(Tensor::from_parts(kernel_shape.to_vec(), dk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_normal, Rng};

    /// Direct six-loop cross-correlation with explicit bounds checks.
    fn direct(input: &Tensor, k: &Tensor, padding: Padding) -> Tensor {
        let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let (py, px, oh, ow) = match padding {
            Padding::Same => (kh / 2, kw / 2, h, w),
            Padding::Valid => (0, 0, h - kh + 1, w - kw + 1),
        };
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - py as isize;
                                let ix = ox as isize + kx as isize - px as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += k.at(&[co, ci, ky, kx]) * input.at(&[ci, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        Tensor::new(vec![cout, oh, ow], out).unwrap()
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn identity_kernel_is_noop() {
        let mut rng = Rng::new(3);
        let x = sample_normal(&mut rng, &[1, 5, 4], 0.0, 1.0).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, Padding::Same).unwrap(), x);
        assert_eq!(conv2d(&x, &k, Padding::Valid).unwrap(), x);
    }

    #[test]
    fn valid_ones_sum() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = Rng::new(5);
        let x = sample_normal(&mut rng, &[2, 8, 8], 0.0, 1.0).unwrap();
        let k = sample_normal(&mut rng, &[4, 2, 3, 3], 0.0, 1.0).unwrap();
        for padding in [Padding::Same, Padding::Valid] {
            assert_close(&conv2d(&x, &k, padding).unwrap(), &direct(&x, &k, padding), 1e-12);
        }
    }

    #[test]
    fn same_padding_rejects_even_kernels() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(conv2d(&x, &k, Padding::Same), Err(TensorError::Invalid(_))));
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), Padding::Same).is_err());
    }

    #[test]
    fn backward_passes_are_adjoint() {
        // <conv(x, k), d> == <x, conv_backward_input(d, k)> == <k, conv_backward_kernel(d, x)>
        let mut rng = Rng::new(8);
        for padding in [Padding::Same, Padding::Valid] {
            let x = sample_normal(&mut rng, &[3, 6, 7], 0.0, 1.0).unwrap();
            let k = sample_normal(&mut rng, &[2, 3, 3, 5], 0.0, 1.0).unwrap();
            let y = conv2d(&x, &k, padding).unwrap();
            let d = sample_normal(&mut rng, y.shape(), 0.0, 1.0).unwrap();
            let lhs: f64 = y.data().iter().zip(d.data()).map(|(a, b)| a * b).sum();
            let dx = conv2d_backward_input(&d, &k, x.shape(), padding).unwrap();
            let via_x: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            let dk = conv2d_backward_kernel(&d, &x, k.shape(), padding).unwrap();
            let via_k: f64 = k.data().iter().zip(dk.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10 * lhs.abs().max(1.0));
            assert!((lhs - via_k).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }
}
