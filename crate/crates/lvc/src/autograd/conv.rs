//! im2col-based 2-d convolution used by the tape's `conv2d` op.

use ndarray::{s, Array2, Axis};

use super::Arr;

/// Static description of a convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Output spatial dims for an input of `(h, w)`.
pub fn conv2d_shape(spec: Conv2dSpec, h: usize, w: usize) -> (usize, usize) {
    let ho = (h + 2 * spec.pad - spec.kernel) / spec.stride + 1;
    let wo = (w + 2 * spec.pad - spec.kernel) / spec.stride + 1;
    (ho, wo)
}

fn pad_zero(x: &Arr, p: usize) -> Arr {
    if p == 0 {
        return x.clone();
    }
    let (c, h, w) = x.dim();
    let mut out = Arr::zeros((c, h + 2 * p, w + 2 * p));
    out.slice_mut(s![.., p..p + h, p..p + w]).assign(x);
    out
}

/// Unfold `(c, hp, wp)` into a `(c*k*k, ho*wo)` matrix of patches.
fn im2col(xp: &Arr, k: usize, stride: usize, ho: usize, wo: usize) -> Array2<f64> {
    let (c, _, _) = xp.dim();
    let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let mut dst = cols.row_mut(row);
                for oi in 0..ho {
                    for oj in 0..wo {
                        dst[oi * wo + oj] = xp[(ch, oi * stride + ki, oj * stride + kj)];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter a `(c*k*k, ho*wo)` matrix back onto the padded input grid.
fn col2im(
    cols: &Array2<f64>,
    c: usize,
    hp: usize,
    wp: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Arr {
    let mut out = Arr::zeros((c, hp, wp));
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = cols.row(row);
                for oi in 0..ho {
                    for oj in 0..wo {
                        out[(ch, oi * stride + ki, oj * stride + kj)] += src[oi * wo + oj];
                    }
                }
            }
        }
    }
    out
}

/// Forward pass; returns the output and the im2col matrix kept for backward.
pub(super) fn conv2d_forward(x: &Arr, w: &Arr, b: &Arr, spec: Conv2dSpec) -> (Arr, Array2<f64>) {
    let (c, h, width) = x.dim();
    assert_eq!(c, spec.in_channels, "conv2d input channel mismatch");
    assert_eq!(
        w.dim(),
        (spec.out_channels, spec.in_channels * spec.kernel * spec.kernel, 1),
        "conv2d weight shape mismatch"
    );
    let (ho, wo) = conv2d_shape(spec, h, width);
    let xp = pad_zero(x, spec.pad);
    let cols = im2col(&xp, spec.kernel, spec.stride, ho, wo);
    let wmat = w.index_axis(Axis(2), 0);
    let mut out_mat = Array2::<f64>::zeros((spec.out_channels, ho * wo));
    ndarray::linalg::general_mat_mul(1.0, &wmat, &cols, 0.0, &mut out_mat);
    let mut out = out_mat
        .into_shape_with_order((spec.out_channels, ho, wo))
        .expect("conv2d reshape");
    for ch in 0..spec.out_channels {
        let bias = b[(ch, 0, 0)];
        out.index_axis_mut(Axis(0), ch).mapv_inplace(|v| v + bias);
    }
    (out, cols)
}

/// Gradients with respect to input, weights and bias.
pub(super) fn conv2d_backward(
    g: &Arr,
    x: &Arr,
    w: &Arr,
    cols: &Array2<f64>,
    spec: Conv2dSpec,
) -> (Arr, Arr, Arr) {
    let (_, h, width) = x.dim();
    let (ho, wo) = conv2d_shape(spec, h, width);
    let gmat = g
        .view()
        .into_shape_with_order((spec.out_channels, ho * wo))
        .expect("conv2d grad reshape");

    let mut gw_mat = Array2::<f64>::zeros((spec.out_channels, spec.in_channels * spec.kernel * spec.kernel));
    ndarray::linalg::general_mat_mul(1.0, &gmat, &cols.t(), 0.0, &mut gw_mat);
    let gw = gw_mat
        .insert_axis(Axis(2))
        .into_dimensionality()
        .expect("gw shape");

    let mut gb = Arr::zeros((spec.out_channels, 1, 1));
    for ch in 0..spec.out_channels {
        gb[(ch, 0, 0)] = gmat.row(ch).sum();
    }

    let wmat = w.index_axis(Axis(2), 0);
    let mut gcols = Array2::<f64>::zeros(cols.raw_dim());
    ndarray::linalg::general_mat_mul(1.0, &wmat.t(), &gmat, 0.0, &mut gcols);
    let gxp = col2im(
        &gcols,
        spec.in_channels,
        h + 2 * spec.pad,
        width + 2 * spec.pad,
        spec.kernel,
        spec.stride,
        ho,
        wo,
    );
    let gx = gxp
        .slice(s![.., spec.pad..spec.pad + h, spec.pad..spec.pad + width])
        .to_owned();
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_stride_and_padding() {
        let spec = Conv2dSpec {
            in_channels: 3,
            out_channels: 8,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!(conv2d_shape(spec, 64, 64), (32, 32));
        assert_eq!(conv2d_shape(spec, 5, 5), (3, 3));
        assert_eq!(conv2d_shape(spec, 3, 3), (2, 2));
    }

    #[test]
    fn forward_matches_direct_convolution() {
        // 1x1 output reduces to a dot product over the receptive field.
        let spec = Conv2dSpec {
            in_channels: 2,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            pad: 0,
        };
        let x = Arr::from_shape_fn((2, 3, 3), |(c, i, j)| (c * 9 + i * 3 + j) as f64);
        let w = Arr::from_shape_fn((1, 18, 1), |(_, r, _)| (r % 5) as f64 * 0.1);
        let b = Arr::from_elem((1, 1, 1), 0.5);
        let (out, _) = conv2d_forward(&x, &w, &b, spec);
        let mut expect = 0.5;
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    expect += x[(c, i, j)] * w[(0, (c * 3 + i) * 3 + j, 0)];
                }
            }
        }
        assert!((out[(0, 0, 0)] - expect).abs() < 1e-12);
    }
}
