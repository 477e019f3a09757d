//! Bilinear backward warping and bi-directional motion-compensated
//! prediction.
//!
//! The prediction blends two warped references with a pixel-wise weight:
//! `pred = beta * warp(past, v_p) + (1 - beta) * warp(future, v_f)`.
//! Warping samples with border clamp, so outputs stay inside the convex hull
//! of the input values and the zero-flow warp is an exact identity.

use ndarray::Zip;
use thiserror::Error;

use crate::autograd::Arr;
use crate::video::Frame;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("flow shape {got:?} does not match frame {want:?}")]
    FlowShape { got: (usize, usize, usize), want: (usize, usize, usize) },
    #[error("shape mismatch between inputs: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("prediction weights must be 1xHxW in [0,1]")]
    BadWeights,
}

/// A pixel-wise displacement field. Channel 0 is the horizontal displacement
/// `dx`, channel 1 the vertical displacement `dy`, both in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    data: Arr,
}

impl MotionField {
    pub fn new(data: Arr) -> Result<Self, MotionError> {
        let (c, _, _) = data.dim();
        if c != 2 || data.iter().any(|v| !v.is_finite()) {
            return Err(MotionError::FlowShape { got: data.dim(), want: (2, 0, 0) });
        }
        Ok(MotionField { data })
    }

    pub fn zero(h: usize, w: usize) -> Self {
        MotionField { data: Arr::zeros((2, h, w)) }
    }

    pub fn data(&self) -> &Arr {
        &self.data
    }
}

/// Pixel-wise blending weights in `[0, 1]`, broadcast over color channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionWeights {
    data: Arr,
}

impl PredictionWeights {
    pub fn new(data: Arr) -> Result<Self, MotionError> {
        let (c, _, _) = data.dim();
        if c != 1 || data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(MotionError::BadWeights);
        }
        Ok(PredictionWeights { data })
    }

    pub fn constant(value: f64, h: usize, w: usize) -> Self {
        assert!((0.0..=1.0).contains(&value));
        PredictionWeights { data: Arr::from_elem((1, h, w), value) }
    }

    pub fn data(&self) -> &Arr {
        &self.data
    }
}

/// Backward-warp a tensor by a flow field, sampling bilinearly with border
/// clamp: `out(c, i, j) = sample(in_c, i + dy(i,j), j + dx(i,j))`.
///
/// Shared by the frame-level API below and the autograd warp op.
pub fn warp_arrays(frame: &Arr, flow: &Arr) -> Arr {
    let (c, h, w) = frame.dim();
    assert_eq!(flow.dim(), (2, h, w), "flow must be 2xHxW matching the frame");
    let mut out = Arr::zeros((c, h, w));
    let (hm, wm) = ((h - 1) as f64, (w - 1) as f64);
    for i in 0..h {
        for j in 0..w {
            let x = (j as f64 + flow[(0, i, j)]).clamp(0.0, wm);
            let y = (i as f64 + flow[(1, i, j)]).clamp(0.0, hm);
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let (x0i, y0i) = (x0 as usize, y0 as usize);
            let x1i = (x0i + 1).min(w - 1);
            let y1i = (y0i + 1).min(h - 1);
            for ch in 0..c {
                out[(ch, i, j)] = (1.0 - fy)
                    * ((1.0 - fx) * frame[(ch, y0i, x0i)] + fx * frame[(ch, y0i, x1i)])
                    + fy * ((1.0 - fx) * frame[(ch, y1i, x0i)] + fx * frame[(ch, y1i, x1i)]);
            }
        }
    }
    out
}

/// Warp a frame by a motion field.
pub fn warp(frame: &Frame, flow: &MotionField) -> Result<Frame, MotionError> {
    let want = frame.data().dim();
    let got = flow.data().dim();
    if (got.1, got.2) != (want.1, want.2) {
        return Err(MotionError::FlowShape { got, want });
    }
    Ok(Frame::new(
        warp_arrays(frame.data(), flow.data()),
        frame.color_space(),
    ))
}

/// Bi-directional motion-compensated prediction:
/// `beta * warp(past, v_p) + (1 - beta) * warp(future, v_f)`.
pub fn predict(
    past: &Frame,
    future: &Frame,
    v_p: &MotionField,
    v_f: &MotionField,
    beta: &PredictionWeights,
) -> Result<Frame, MotionError> {
    let shape = past.data().dim();
    if future.data().dim() != shape {
        return Err(MotionError::ShapeMismatch(shape, future.data().dim()));
    }
    let bd = beta.data().dim();
    if (bd.1, bd.2) != (shape.1, shape.2) {
        return Err(MotionError::ShapeMismatch(shape, bd));
    }
    let wp = warp(past, v_p)?;
    let wf = warp(future, v_f)?;
    let mut out = Arr::zeros(shape);
    for c in 0..shape.0 {
        Zip::from(out.index_axis_mut(ndarray::Axis(0), c))
            .and(wp.data().index_axis(ndarray::Axis(0), c))
            .and(wf.data().index_axis(ndarray::Axis(0), c))
            .and(beta.data().index_axis(ndarray::Axis(0), 0))
            .for_each(|o, &p, &f, &b| *o = b * p + (1.0 - b) * f);
    }
    Ok(Frame::new(out, past.color_space()))
}

/// Map a flow field to an RGB visualization: hue encodes direction,
/// saturation encodes magnitude relative to the field maximum.
pub fn flow_to_rgb(flow: &MotionField) -> Frame {
    let (_, h, w) = flow.data().dim();
    let max_mag = flow
        .data()
        .indexed_iter()
        .fold(1e-9f64, |m, ((_, i, j), _)| {
            let dx = flow.data()[(0, i, j)];
            let dy = flow.data()[(1, i, j)];
            m.max((dx * dx + dy * dy).sqrt())
        });
    let mut out = Arr::zeros((3, h, w));
    for i in 0..h {
        for j in 0..w {
            let dx = flow.data()[(0, i, j)];
            let dy = flow.data()[(1, i, j)];
            let mag = (dx * dx + dy * dy).sqrt() / max_mag;
            let hue = (dy.atan2(dx) / std::f64::consts::TAU).rem_euclid(1.0);
            let (r, g, b) = hsv_to_rgb(hue, mag, 1.0);
            out[(0, i, j)] = r;
            out[(1, i, j)] = g;
            out[(2, i, j)] = b;
        }
    }
    Frame::new(out, crate::video::ColorSpace::Rgb)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
