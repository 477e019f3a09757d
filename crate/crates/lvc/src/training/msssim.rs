//! Multi-scale structural similarity, differentiable on the tape.
//!
//! Standard construction: 11-tap Gaussian window (sigma 1.5), valid-mode
//! correlation, contrast-structure terms at every scale, luminance at the
//! coarsest, dyadic average-pool downsampling between scales. Per-scale means
//! are clamped to a tiny positive floor before the weighted geometric
//! product, which keeps the score in `(0, 1]`.

use std::rc::Rc;

use thiserror::Error;

use crate::autograd::{Arr, Tape, Var};

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const SCALE_FLOOR: f64 = 1e-8;

/// Canonical per-scale weights for the 5-scale metric.
pub const CANONICAL_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Error, PartialEq)]
pub enum MsSsimError {
    #[error("input {h}x{w} too small for {scales} scales (needs min dim >= {need})")]
    TooSmall { h: usize, w: usize, scales: usize, need: usize },
    #[error("invalid scale count {0} (must be 1..=5)")]
    BadScales(usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
}

/// Scale count and weights for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimConfig {
    pub scales: usize,
    pub weights: Vec<f64>,
}

impl MsSsimConfig {
    /// The canonical first `scales` weights, renormalized to sum to 1.
    pub fn canonical(scales: usize) -> Result<Self, MsSsimError> {
        if scales == 0 || scales > 5 {
            return Err(MsSsimError::BadScales(scales));
        }
        let raw = &CANONICAL_WEIGHTS[..scales];
        let sum: f64 = raw.iter().sum();
        Ok(MsSsimConfig {
            scales,
            weights: raw.iter().map(|w| w / sum).collect(),
        })
    }

    /// The deepest feasible configuration for the given dims, capped at
    /// `max_scales`. Each scale halves dims and the window needs 11 pixels.
    pub fn auto_for(h: usize, w: usize, max_scales: usize) -> Result<Self, MsSsimError> {
        let mut feasible = 0;
        for m in 1..=max_scales.min(5) {
            if h.min(w) >> (m - 1) >= WINDOW {
                feasible = m;
            }
        }
        if feasible == 0 {
            return Err(MsSsimError::TooSmall { h, w, scales: 1, need: WINDOW });
        }
        Self::canonical(feasible)
    }

    /// Smallest input dim this config accepts.
    pub fn min_dim(&self) -> usize {
        WINDOW << (self.scales - 1)
    }

    pub fn check_dims(&self, h: usize, w: usize) -> Result<(), MsSsimError> {
        if h.min(w) < self.min_dim() {
            return Err(MsSsimError::TooSmall {
                h,
                w,
                scales: self.scales,
                need: self.min_dim(),
            });
        }
        Ok(())
    }
}

fn gaussian_window() -> Vec<f64> {
    let half = (WINDOW / 2) as f64;
    let mut k: Vec<f64> = (0..WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

struct ScaleTerms {
    cs: Var,
    luminance_cs: Var,
}

/// One SSIM scale: returns mean cs and mean l*cs over the valid region.
fn ssim_scale(t: &Tape, x: Var, y: Var, kernel: &Rc<Vec<f64>>) -> ScaleTerms {
    let mu_x = t.blur_valid(x, Rc::clone(kernel));
    let mu_y = t.blur_valid(y, Rc::clone(kernel));
    let xx = t.blur_valid(t.mul(x, x), Rc::clone(kernel));
    let yy = t.blur_valid(t.mul(y, y), Rc::clone(kernel));
    let xy = t.blur_valid(t.mul(x, y), Rc::clone(kernel));
    let mu_xx = t.mul(mu_x, mu_x);
    let mu_yy = t.mul(mu_y, mu_y);
    let mu_xy = t.mul(mu_x, mu_y);
    let sxx = t.sub(xx, mu_xx);
    let syy = t.sub(yy, mu_yy);
    let sxy = t.sub(xy, mu_xy);

    let cs_num = t.add_const(t.scale(sxy, 2.0), C2);
    let cs_den = t.add_const(t.add(sxx, syy), C2);
    let cs_map = t.div(cs_num, cs_den);

    let l_num = t.add_const(t.scale(mu_xy, 2.0), C1);
    let l_den = t.add_const(t.add(mu_xx, mu_yy), C1);
    let l_map = t.div(l_num, l_den);

    ScaleTerms {
        cs: t.mean_all(cs_map),
        luminance_cs: t.mean_all(t.mul(l_map, cs_map)),
    }
}

fn halve(t: &Tape, v: Var) -> Var {
    let [_, h, w] = t.shape(v);
    let (eh, ew) = (h & !1, w & !1);
    let v = if (eh, ew) == (h, w) { v } else { t.crop_spatial(v, eh, ew) };
    t.avg_pool2(v)
}

/// MS-SSIM between two same-shaped tensors on the tape; scalar in `(0, 1]`.
pub fn ms_ssim_tape(t: &Tape, x: Var, y: Var, cfg: &MsSsimConfig) -> Result<Var, MsSsimError> {
    let sx = t.shape(x);
    let sy = t.shape(y);
    if sx != sy {
        return Err(MsSsimError::ShapeMismatch(
            (sx[0], sx[1], sx[2]),
            (sy[0], sy[1], sy[2]),
        ));
    }
    cfg.check_dims(sx[1], sx[2])?;
    let kernel = Rc::new(gaussian_window());

    let mut score: Option<Var> = None;
    let (mut cx, mut cy) = (x, y);
    for (level, &weight) in cfg.weights.iter().enumerate() {
        let terms = ssim_scale(t, cx, cy, &kernel);
        let last = level + 1 == cfg.scales;
        let value = if last { terms.luminance_cs } else { terms.cs };
        let value = t.clamp(value, SCALE_FLOOR, f64::INFINITY);
        let powed = t.powf(value, weight);
        score = Some(match score {
            None => powed,
            Some(acc) => t.mul(acc, powed),
        });
        if !last {
            cx = halve(t, cx);
            cy = halve(t, cy);
        }
    }
    Ok(score.expect("at least one scale"))
}

/// MS-SSIM between two plain tensors (inference tape inside).
pub fn ms_ssim(x: &Arr, y: &Arr, cfg: &MsSsimConfig) -> Result<f64, MsSsimError> {
    let t = Tape::inference();
    let vx = t.leaf(x.clone());
    let vy = t.leaf(y.clone());
    let s = ms_ssim_tape(&t, vx, vy, cfg)?;
    Ok(t.scalar(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Arr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arr::from_shape_fn((c, h, w), |_| rng.random::<f64>())
    }

    // ---- independent oracle: direct per-pixel, per-scale summation ----

    fn oracle_window() -> [[f64; WINDOW]; WINDOW] {
        let mut k1 = [0.0f64; WINDOW];
        let mut sum = 0.0;
        for (i, v) in k1.iter_mut().enumerate() {
            let d = i as f64 - 5.0;
            *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
            sum += *v;
        }
        for v in &mut k1 {
            *v /= sum;
        }
        let mut k2 = [[0.0f64; WINDOW]; WINDOW];
        for i in 0..WINDOW {
            for j in 0..WINDOW {
                k2[i][j] = k1[i] * k1[j];
            }
        }
        k2
    }

    /// Direct scalar implementation: explicit 2-d window sums at every valid
    /// pixel, explicit 2x2 mean downsampling, f64 accumulation.
    fn oracle_ms_ssim(x: &Arr, y: &Arr, weights: &[f64]) -> f64 {
        let k2 = oracle_window();
        let mut xs = x.clone();
        let mut ys = y.clone();
        let mut score = 1.0;
        for (level, &w) in weights.iter().enumerate() {
            let (c, h, wd) = xs.dim();
            let (vh, vw) = (h - WINDOW + 1, wd - WINDOW + 1);
            let mut cs_sum = 0.0;
            let mut lcs_sum = 0.0;
            let mut count = 0usize;
            for ch in 0..c {
                for i in 0..vh {
                    for j in 0..vw {
                        let (mut mx, mut my, mut mxx, mut myy, mut mxy) =
                            (0.0, 0.0, 0.0, 0.0, 0.0);
                        for (di, krow) in k2.iter().enumerate() {
                            for (dj, &kv) in krow.iter().enumerate() {
                                let xv = xs[(ch, i + di, j + dj)];
                                let yv = ys[(ch, i + di, j + dj)];
                                mx += kv * xv;
                                my += kv * yv;
                                mxx += kv * xv * xv;
                                myy += kv * yv * yv;
                                mxy += kv * xv * yv;
                            }
                        }
                        let sxx = mxx - mx * mx;
                        let syy = myy - my * my;
                        let sxy = mxy - mx * my;
                        let cs = (2.0 * sxy + C2) / (sxx + syy + C2);
                        let l = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
                        cs_sum += cs;
                        lcs_sum += l * cs;
                        count += 1;
                    }
                }
            }
            let last = level + 1 == weights.len();
            let v = if last { lcs_sum } else { cs_sum } / count as f64;
            score *= v.max(SCALE_FLOOR).powf(w);
            if !last {
                let (nh, nw) = (h / 2, wd / 2);
                let mut nx = Arr::zeros((c, nh, nw));
                let mut ny = Arr::zeros((c, nh, nw));
                for ch in 0..c {
                    for i in 0..nh {
                        for j in 0..nw {
                            nx[(ch, i, j)] = 0.25
                                * (xs[(ch, 2 * i, 2 * j)]
                                    + xs[(ch, 2 * i, 2 * j + 1)]
                                    + xs[(ch, 2 * i + 1, 2 * j)]
                                    + xs[(ch, 2 * i + 1, 2 * j + 1)]);
                            ny[(ch, i, j)] = 0.25
                                * (ys[(ch, 2 * i, 2 * j)]
                                    + ys[(ch, 2 * i, 2 * j + 1)]
                                    + ys[(ch, 2 * i + 1, 2 * j)]
                                    + ys[(ch, 2 * i + 1, 2 * j + 1)]);
                        }
                    }
                }
                xs = nx;
                ys = ny;
            }
        }
        score
    }

    #[test]
    fn self_similarity_is_one() {
        let x = random_image(3, 64, 64, 1);
        let cfg = MsSsimConfig::canonical(3).unwrap();
        let s = ms_ssim(&x, &x, &cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-7, "got {s}");
    }

    #[test]
    fn symmetry_holds() {
        let x = random_image(3, 64, 64, 2);
        let y = random_image(3, 64, 64, 3);
        let cfg = MsSsimConfig::canonical(3).unwrap();
        let a = ms_ssim(&x, &y, &cfg).unwrap();
        let b = ms_ssim(&y, &x, &cfg).unwrap();
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn matches_direct_summation_oracle() {
        let cfg = MsSsimConfig::canonical(3).unwrap();
        for seed in 0..6u64 {
            let x = random_image(3, 64, 64, 100 + seed);
            let y = random_image(3, 64, 64, 200 + seed);
            let got = ms_ssim(&x, &y, &cfg).unwrap();
            let want = oracle_ms_ssim(&x, &y, &cfg.weights);
            assert!(
                (got - want).abs() < 1e-6,
                "seed {seed}: {got} vs oracle {want}"
            );
        }
    }

    #[test]
    fn score_is_in_unit_interval_and_below_one_for_noise() {
        let x = random_image(3, 48, 48, 11);
        let y = random_image(3, 48, 48, 12);
        let cfg = MsSsimConfig::canonical(2).unwrap();
        let s = ms_ssim(&x, &y, &cfg).unwrap();
        assert!(s > 0.0 && s < 1.0, "got {s}");
    }

    #[test]
    fn too_small_input_is_a_configuration_error() {
        let cfg = MsSsimConfig::canonical(5).unwrap();
        let x = random_image(3, 64, 64, 21);
        assert!(matches!(
            ms_ssim(&x, &x, &cfg),
            Err(MsSsimError::TooSmall { .. })
        ));
    }

    #[test]
    fn auto_config_picks_three_scales_at_64() {
        let cfg = MsSsimConfig::auto_for(64, 64, 5).unwrap();
        assert_eq!(cfg.scales, 3);
        let sum: f64 = cfg.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Full-resolution frames keep the canonical five scales.
        let cfg5 = MsSsimConfig::auto_for(1080, 1920, 5).unwrap();
        assert_eq!(cfg5.scales, 5);
    }

    #[test]
    fn gradient_flows_through_the_metric() {
        use crate::autograd::{max_relative_error, numeric_gradient};
        let x = random_image(1, 22, 22, 31);
        let y = random_image(1, 22, 22, 32);
        let cfg = MsSsimConfig::canonical(1).unwrap();
        let f = |p: &Arr| {
            let t = Tape::new();
            let vx = t.leaf(p.clone());
            let vy = t.leaf(y.clone());
            t.scalar(ms_ssim_tape(&t, vx, vy, &cfg).unwrap())
        };
        let t = Tape::new();
        let vx = t.leaf(x.clone());
        let vy = t.leaf(y.clone());
        let s = ms_ssim_tape(&t, vx, vy, &cfg).unwrap();
        let grads = t.backward(s);
        let numeric = numeric_gradient(f, &x, 1e-5);
        // The floor keeps near-zero entries from amplifying finite-difference
        // noise; the metric's gradient entries are O(1e-3).
        let err = max_relative_error(grads.get(vx).unwrap(), &numeric, 1e-6);
        assert!(err < 1e-3, "gradient error {err}");
    }
}
