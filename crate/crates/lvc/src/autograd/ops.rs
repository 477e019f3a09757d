//! Tape operations: elementwise math, reductions, shape ops, convolutions,
//! pooling, separable blurs and bilinear warping.

use std::rc::Rc;

use ndarray::{s, Axis};

use super::conv::{self, Conv2dSpec};
use super::{dims, reduce_to, zip_broadcast, Arr, Tape, Var};

impl Tape {
    // ---- elementwise binary ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let out = zip_broadcast(&av, &bv, |x, y| x + y);
        let (sa, sb) = (dims(&av), dims(&bv));
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(a, reduce_to(g, sa));
                sink.add(b, reduce_to(g, sb));
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let out = zip_broadcast(&av, &bv, |x, y| x - y);
        let (sa, sb) = (dims(&av), dims(&bv));
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(a, reduce_to(g, sa));
                sink.add(b, reduce_to(&g.mapv(|v| -v), sb));
            })),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let out = zip_broadcast(&av, &bv, |x, y| x * y);
        let (sa, sb) = (dims(&av), dims(&bv));
        let (ac, bc) = (Rc::clone(&av), Rc::clone(&bv));
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(a, reduce_to(&zip_broadcast(g, &bc, |gv, y| gv * y), sa));
                sink.add(b, reduce_to(&zip_broadcast(g, &ac, |gv, x| gv * x), sb));
            })),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let out = zip_broadcast(&av, &bv, |x, y| x / y);
        let (sa, sb) = (dims(&av), dims(&bv));
        let (ac, bc) = (Rc::clone(&av), Rc::clone(&bv));
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(a, reduce_to(&zip_broadcast(g, &bc, |gv, y| gv / y), sa));
                let gb = {
                    let num = zip_broadcast(&ac, &bc, |x, y| -x / (y * y));
                    zip_broadcast(g, &num, |gv, d| gv * d)
                };
                sink.add(b, reduce_to(&gb, sb));
            })),
        )
    }

    // ---- elementwise with constants ----

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        self.push(
            Rc::new(av.mapv(|x| x * c)),
            Some(Box::new(move |g, sink| sink.add(a, g.mapv(|v| v * c)))),
        )
    }

    pub fn add_const(&self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        self.push(
            Rc::new(av.mapv(|x| x + c)),
            Some(Box::new(move |g, sink| sink.add(a, g.clone()))),
        )
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    // ---- elementwise unary ----

    pub fn exp(&self, a: Var) -> Var {
        let out = Rc::new(self.value(a).mapv(f64::exp));
        let oc = Rc::clone(&out);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a, zip_broadcast(g, &oc, |gv, y| gv * y));
            })),
        )
    }

    /// Natural log; the caller guarantees positive inputs.
    pub fn ln(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.mapv(f64::ln);
        let ac = Rc::clone(&av);
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(a, zip_broadcast(g, &ac, |gv, x| gv / x));
            })),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = Rc::new(self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp())));
        let oc = Rc::clone(&out);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a, zip_broadcast(g, &oc, |gv, y| gv * y * (1.0 - y)));
            })),
        )
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let av = self.value(a);
        let out = av.mapv(|x| if x > 0.0 { x } else { slope * x });
        let ac = Rc::clone(&av);
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(
                    a,
                    zip_broadcast(g, &ac, |gv, x| if x > 0.0 { gv } else { gv * slope }),
                );
            })),
        )
    }

    /// Clamp to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        let av = self.value(a);
        let out = av.mapv(|x| x.clamp(lo, hi));
        let ac = Rc::clone(&av);
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(
                    a,
                    zip_broadcast(g, &ac, |gv, x| if x >= lo && x <= hi { gv } else { 0.0 }),
                );
            })),
        )
    }

    /// `x^p` for constant `p`; the caller guarantees positive inputs.
    pub fn powf(&self, a: Var, p: f64) -> Var {
        let av = self.value(a);
        let out = av.mapv(|x| x.powf(p));
        let ac = Rc::clone(&av);
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(a, zip_broadcast(g, &ac, |gv, x| gv * p * x.powf(p - 1.0)));
            })),
        )
    }

    /// Standard normal CDF, elementwise.
    pub fn norm_cdf(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.mapv(crate::coder::entropy::std_normal_cdf);
        let ac = Rc::clone(&av);
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                sink.add(
                    a,
                    zip_broadcast(g, &ac, |gv, x| gv * crate::coder::entropy::std_normal_pdf(x)),
                );
            })),
        )
    }

    /// Forward rounds to the nearest integer, backward passes the gradient
    /// through unchanged (straight-through estimator).
    pub fn round_ste(&self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::round);
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| sink.add(a, g.clone()))),
        )
    }

    /// A constant copy of `a`'s value; gradients stop here.
    pub fn detach(&self, a: Var) -> Var {
        let av = self.value(a);
        self.leaf_shared(av)
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let av = self.value(a);
        let total = av.sum();
        let sh = dims(&av);
        self.push(
            Rc::new(ndarray::arr3(&[[[total]]])),
            Some(Box::new(move |g, sink| {
                let gv = g[(0, 0, 0)];
                sink.add(a, Arr::from_elem((sh[0], sh[1], sh[2]), gv));
            })),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    // ---- shape ops ----

    /// Concatenate along the channel axis.
    pub fn concat_c(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let vals: Vec<_> = parts.iter().map(|&v| self.value(v)).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_c shape mismatch");
        let chans: Vec<usize> = vals.iter().map(|v| v.len_of(Axis(0))).collect();
        let parts_owned: Vec<Var> = parts.to_vec();
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let mut start = 0;
                for (&p, &c) in parts_owned.iter().zip(&chans) {
                    sink.add(p, g.slice(s![start..start + c, .., ..]).to_owned());
                    start += c;
                }
            })),
        )
    }

    /// Channel slice `[start, start+len)`.
    pub fn slice_c(&self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let sh = dims(&av);
        assert!(start + len <= sh[0], "slice_c out of range");
        let out = av.slice(s![start..start + len, .., ..]).to_owned();
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let mut full = Arr::zeros((sh[0], sh[1], sh[2]));
                full.slice_mut(s![start..start + len, .., ..]).assign(g);
                sink.add(a, full);
            })),
        )
    }

    /// Top-left spatial crop to `(h, w)`.
    pub fn crop_spatial(&self, a: Var, h: usize, w: usize) -> Var {
        let av = self.value(a);
        let [c, ih, iw] = dims(&av);
        assert!(h <= ih && w <= iw, "crop_spatial out of range");
        let out = av.slice(s![.., 0..h, 0..w]).to_owned();
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let mut full = Arr::zeros((c, ih, iw));
                full.slice_mut(s![.., 0..h, 0..w]).assign(g);
                sink.add(a, full);
            })),
        )
    }

    /// Rearrange `(4C, H, W)` to `(C, 2H, 2W)`.
    pub fn pixel_shuffle2(&self, a: Var) -> Var {
        let av = self.value(a);
        let [c4, h, w] = dims(&av);
        assert_eq!(c4 % 4, 0, "pixel_shuffle2 needs a multiple of 4 channels");
        let c = c4 / 4;
        let mut out = Arr::zeros((c, 2 * h, 2 * w));
        for ch in 0..c {
            for di in 0..2 {
                for dj in 0..2 {
                    let src = av.index_axis(Axis(0), ch * 4 + di * 2 + dj);
                    let mut dst = out.slice_mut(s![ch, di..; 2, dj..; 2]);
                    dst.assign(&src);
                }
            }
        }
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let mut gi = Arr::zeros((c4, h, w));
                for ch in 0..c {
                    for di in 0..2 {
                        for dj in 0..2 {
                            let src = g.slice(s![ch, di..; 2, dj..; 2]);
                            gi.index_axis_mut(Axis(0), ch * 4 + di * 2 + dj).assign(&src);
                        }
                    }
                }
                sink.add(a, gi);
            })),
        )
    }

    /// 2×2 average pooling; height and width must be even.
    pub fn avg_pool2(&self, a: Var) -> Var {
        let av = self.value(a);
        let [c, h, w] = dims(&av);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let mut out = Arr::zeros((c, h / 2, w / 2));
        for ch in 0..c {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    out[(ch, i, j)] = 0.25
                        * (av[(ch, 2 * i, 2 * j)]
                            + av[(ch, 2 * i, 2 * j + 1)]
                            + av[(ch, 2 * i + 1, 2 * j)]
                            + av[(ch, 2 * i + 1, 2 * j + 1)]);
                }
            }
        }
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let mut gi = Arr::zeros((c, h, w));
                for ch in 0..c {
                    for i in 0..h / 2 {
                        for j in 0..w / 2 {
                            let gv = 0.25 * g[(ch, i, j)];
                            gi[(ch, 2 * i, 2 * j)] += gv;
                            gi[(ch, 2 * i, 2 * j + 1)] += gv;
                            gi[(ch, 2 * i + 1, 2 * j)] += gv;
                            gi[(ch, 2 * i + 1, 2 * j + 1)] += gv;
                        }
                    }
                }
                sink.add(a, gi);
            })),
        )
    }

    // ---- convolution ----

    /// 2-d convolution with zero padding. `w` is stored `(c_out, c_in*k*k, 1)`
    /// and `b` is `(c_out, 1, 1)`.
    pub fn conv2d(&self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (out, cols) = conv::conv2d_forward(&xv, &wv, &bv, spec);
        let cols = Rc::new(cols);
        let (xc, wc) = (Rc::clone(&xv), Rc::clone(&wv));
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let (gx, gw, gb) = conv::conv2d_backward(g, &xc, &wc, &cols, spec);
                sink.add(x, gx);
                sink.add(w, gw);
                sink.add(b, gb);
            })),
        )
    }

    // ---- separable blur (valid mode) ----

    /// Separable valid-mode correlation with a 1-d kernel applied along both
    /// axes. Output is `(C, H-k+1, W-k+1)`. The kernel is a constant.
    pub fn blur_valid(&self, a: Var, kernel: Rc<Vec<f64>>) -> Var {
        let av = self.value(a);
        let tmp = corr_h_valid(&av, &kernel);
        let out = corr_v_valid(&tmp, &kernel);
        let kb = Rc::clone(&kernel);
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let flipped: Vec<f64> = kb.iter().rev().copied().collect();
                let t = corr_v_full(g, &flipped);
                sink.add(a, corr_h_full(&t, &flipped));
            })),
        )
    }

    // ---- bilinear warp ----

    /// Backward-warp `frame` by `flow` (2×H×W: dx then dy), sampling with
    /// border clamp. Differentiable in both inputs.
    pub fn warp(&self, frame: Var, flow: Var) -> Var {
        let (fv, flv) = (self.value(frame), self.value(flow));
        let out = crate::motion::warp_arrays(&fv, &flv);
        let (fc, flc) = (Rc::clone(&fv), Rc::clone(&flv));
        self.push(
            Rc::new(out),
            Some(Box::new(move |g, sink| {
                let (gf, gfl) = warp_backward(g, &fc, &flc);
                sink.add(frame, gf);
                sink.add(flow, gfl);
            })),
        )
    }
}

// ---- plain-array helpers ----

fn corr_h_valid(x: &Arr, k: &[f64]) -> Arr {
    let [c, h, w] = dims(x);
    let kl = k.len();
    let wo = w - kl + 1;
    let mut out = Arr::zeros((c, h, wo));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..wo {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    acc += x[(ch, i, j + t)] * kv;
                }
                out[(ch, i, j)] = acc;
            }
        }
    }
    out
}

fn corr_v_valid(x: &Arr, k: &[f64]) -> Arr {
    let [c, h, w] = dims(x);
    let kl = k.len();
    let ho = h - kl + 1;
    let mut out = Arr::zeros((c, ho, w));
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    acc += x[(ch, i + t, j)] * kv;
                }
                out[(ch, i, j)] = acc;
            }
        }
    }
    out
}

fn corr_h_full(x: &Arr, k: &[f64]) -> Arr {
    let [c, h, w] = dims(x);
    let kl = k.len();
    let wo = w + kl - 1;
    let mut out = Arr::zeros((c, h, wo));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let xv = x[(ch, i, j)];
                for t in 0..kl {
                    out[(ch, i, j + t)] += xv * k[kl - 1 - t];
                }
            }
        }
    }
    out
}

fn corr_v_full(x: &Arr, k: &[f64]) -> Arr {
    let [c, h, w] = dims(x);
    let kl = k.len();
    let ho = h + kl - 1;
    let mut out = Arr::zeros((c, ho, w));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let xv = x[(ch, i, j)];
                for t in 0..kl {
                    out[(ch, i + t, j)] += xv * k[kl - 1 - t];
                }
            }
        }
    }
    out
}

/// Gradients of the bilinear warp with respect to frame and flow.
fn warp_backward(g: &Arr, frame: &Arr, flow: &Arr) -> (Arr, Arr) {
    let [c, h, w] = dims(frame);
    let mut gframe = Arr::zeros((c, h, w));
    let mut gflow = Arr::zeros((2, h, w));
    let (hm, wm) = ((h - 1) as f64, (w - 1) as f64);
    for i in 0..h {
        for j in 0..w {
            let dx = flow[(0, i, j)];
            let dy = flow[(1, i, j)];
            let x = j as f64 + dx;
            let y = i as f64 + dy;
            let xc = x.clamp(0.0, wm);
            let yc = y.clamp(0.0, hm);
            let x0 = xc.floor();
            let y0 = yc.floor();
            let fx = xc - x0;
            let fy = yc - y0;
            let (x0i, y0i) = (x0 as usize, y0 as usize);
            let x1i = (x0i + 1).min(w - 1);
            let y1i = (y0i + 1).min(h - 1);
            // Clamped coordinates have zero derivative outside the image.
            let dxc = if x > 0.0 && x < wm { 1.0 } else { 0.0 };
            let dyc = if y > 0.0 && y < hm { 1.0 } else { 0.0 };
            let mut gx = 0.0;
            let mut gy = 0.0;
            for ch in 0..c {
                let gv = g[(ch, i, j)];
                if gv == 0.0 {
                    continue;
                }
                let v00 = frame[(ch, y0i, x0i)];
                let v01 = frame[(ch, y0i, x1i)];
                let v10 = frame[(ch, y1i, x0i)];
                let v11 = frame[(ch, y1i, x1i)];
                gframe[(ch, y0i, x0i)] += gv * (1.0 - fy) * (1.0 - fx);
                gframe[(ch, y0i, x1i)] += gv * (1.0 - fy) * fx;
                gframe[(ch, y1i, x0i)] += gv * fy * (1.0 - fx);
                gframe[(ch, y1i, x1i)] += gv * fy * fx;
                gx += gv * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                gy += gv * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            gflow[(0, i, j)] = gx * dxc;
            gflow[(1, i, j)] = gy * dyc;
        }
    }
    (gframe, gflow)
}

#[cfg(test)]
mod tests {
    use super::super::{max_relative_error, numeric_gradient, Tape};
    use super::*;

    fn randn(c: usize, h: usize, w: usize, seed: u64) -> Arr {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_fn((c, h, w), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn check_unary(build: impl Fn(&Tape, Var) -> Var, x: &Arr, tol: f64) {
        let f = |x: &Arr| {
            let t = Tape::new();
            let v = t.leaf(x.clone());
            let y = build(&t, v);
            t.scalar(t.mean_all(y))
        };
        let t = Tape::new();
        let v = t.leaf(x.clone());
        let y = build(&t, v);
        let loss = t.mean_all(y);
        let grads = t.backward(loss);
        let analytic = grads.get(v).unwrap();
        let numeric = numeric_gradient(f, x, 1e-6);
        let err = max_relative_error(analytic, &numeric, 1e-8);
        assert!(err < tol, "gradient error {err} exceeds {tol}");
    }

    #[test]
    fn unary_gradients_match_finite_differences() {
        let x = randn(2, 4, 4, 7);
        check_unary(|t, v| t.exp(v), &x, 1e-6);
        check_unary(|t, v| t.sigmoid(v), &x, 1e-6);
        check_unary(|t, v| t.leaky_relu(v, 0.2), &x, 1e-5);
        let pos = x.mapv(|v| v.abs() + 0.5);
        check_unary(|t, v| t.ln(v), &pos, 1e-6);
        check_unary(|t, v| t.powf(v, 1.7), &pos, 1e-6);
        check_unary(|t, v| t.norm_cdf(v), &x, 1e-6);
    }

    #[test]
    fn shape_op_gradients() {
        let x = randn(4, 4, 4, 9);
        check_unary(|t, v| t.pixel_shuffle2(v), &x, 1e-6);
        check_unary(|t, v| t.avg_pool2(v), &x, 1e-6);
        check_unary(|t, v| t.slice_c(v, 1, 2), &x, 1e-6);
        check_unary(
            |t, v| {
                let a = t.slice_c(v, 0, 2);
                let b = t.slice_c(v, 2, 2);
                let c = t.concat_c(&[b, a]);
                t.mul(c, c)
            },
            &x,
            1e-6,
        );
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let spec = Conv2dSpec {
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x = randn(3, 6, 6, 11);
        let w = randn(4, 3 * 9, 1, 12);
        let b = randn(4, 1, 1, 13);

        let f = |x: &Arr, w: &Arr, b: &Arr| {
            let t = Tape::new();
            let (vx, vw, vb) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
            let y = t.conv2d(vx, vw, vb, spec);
            let sq = t.mul(y, y);
            t.scalar(t.mean_all(sq))
        };

        let t = Tape::new();
        let (vx, vw, vb) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
        let y = t.conv2d(vx, vw, vb, spec);
        let sq = t.mul(y, y);
        let loss = t.mean_all(sq);
        let grads = t.backward(loss);

        let nx = numeric_gradient(|p| f(p, &w, &b), &x, 1e-6);
        let nw = numeric_gradient(|p| f(&x, p, &b), &w, 1e-6);
        let nb = numeric_gradient(|p| f(&x, &w, p), &b, 1e-6);
        assert!(max_relative_error(grads.get(vx).unwrap(), &nx, 1e-8) < 1e-6);
        assert!(max_relative_error(grads.get(vw).unwrap(), &nw, 1e-8) < 1e-6);
        assert!(max_relative_error(grads.get(vb).unwrap(), &nb, 1e-8) < 1e-6);
    }

    #[test]
    fn blur_valid_gradient() {
        let x = randn(2, 8, 8, 21);
        let k = Rc::new(vec![0.25, 0.5, 0.25]);
        let kc = Rc::clone(&k);
        check_unary(move |t, v| t.blur_valid(v, Rc::clone(&kc)), &x, 1e-6);
        let _ = k;
    }

    #[test]
    fn warp_gradient_matches_finite_differences() {
        // Fractional flows keep sampling away from integer lattice points
        // where the interpolant is non-smooth.
        let frame = randn(2, 6, 6, 31);
        let mut flow = randn(2, 6, 6, 32);
        flow.mapv_inplace(|v| 0.3 + 0.2 * v);

        let f = |fr: &Arr, fl: &Arr| {
            let t = Tape::new();
            let (vf, vl) = (t.leaf(fr.clone()), t.leaf(fl.clone()));
            let y = t.warp(vf, vl);
            let sq = t.mul(y, y);
            t.scalar(t.mean_all(sq))
        };
        let t = Tape::new();
        let (vf, vl) = (t.leaf(frame.clone()), t.leaf(flow.clone()));
        let y = t.warp(vf, vl);
        let sq = t.mul(y, y);
        let loss = t.mean_all(sq);
        let grads = t.backward(loss);

        let nf = numeric_gradient(|p| f(p, &flow), &frame, 1e-5);
        let nl = numeric_gradient(|p| f(&frame, p), &flow, 1e-5);
        assert!(max_relative_error(grads.get(vf).unwrap(), &nf, 1e-8) < 1e-5);
        assert!(max_relative_error(grads.get(vl).unwrap(), &nl, 1e-8) < 1e-5);
    }

    #[test]
    fn round_ste_forward_backward() {
        let t = Tape::new();
        let v = t.leaf(ndarray::arr3(&[[[0.4, 1.6, -0.7]]]));
        let r = t.round_ste(v);
        assert_eq!(*t.value(r), ndarray::arr3(&[[[0.0, 2.0, -1.0]]]));
        let loss = t.sum_all(r);
        let grads = t.backward(loss);
        assert_eq!(*grads.get(v).unwrap(), Arr::from_elem((1, 1, 3), 1.0));
    }
}
