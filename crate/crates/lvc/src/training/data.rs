//! Synthetic training clips: smooth textured patterns translating at a
//! controllable subpixel velocity.
//!
//! Each channel is a sum of random 2-d sinusoids, so translation is an exact
//! phase shift and frames can be evaluated analytically at any offset. The
//! smooth texture keeps warp gradients informative at desk scale.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Arr;
use crate::video::{ColorSpace, Frame, RawVideo};

struct Sinusoid {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

/// Parameters of the synthetic clip generator.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    /// Per-clip velocity magnitude cap, pixels per frame.
    pub max_speed: f64,
    pub fps: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_frames: 12,
            height: 64,
            width: 64,
            max_speed: 2.0,
            fps: 25.0,
        }
    }
}

/// Deterministically generate one translating-texture clip.
pub fn synthetic_clip(spec: &SyntheticSpec, seed: u64) -> RawVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vx = (rng.random::<f64>() * 2.0 - 1.0) * spec.max_speed;
    let vy = (rng.random::<f64>() * 2.0 - 1.0) * spec.max_speed;

    // Low spatial frequencies dominate so the warp gradient basin is wide.
    let channels: Vec<Vec<Sinusoid>> = (0..3)
        .map(|_| {
            let n_waves = 6;
            let mut amp_total = 0.0;
            let mut waves: Vec<Sinusoid> = (0..n_waves)
                .map(|k| {
                    let cycles = 0.5 + rng.random::<f64>() * (2.0 + k as f64);
                    let angle = rng.random::<f64>() * std::f64::consts::TAU;
                    let amp = 1.0 / (1.0 + k as f64);
                    amp_total += amp;
                    Sinusoid {
                        amp,
                        fx: cycles * angle.cos() / spec.width as f64,
                        fy: cycles * angle.sin() / spec.height as f64,
                        phase: rng.random::<f64>() * std::f64::consts::TAU,
                    }
                })
                .collect();
            for wave in &mut waves {
                wave.amp *= 0.45 / amp_total;
            }
            waves
        })
        .collect();

    let frames = (0..spec.n_frames)
        .map(|fidx| {
            let (ox, oy) = (fidx as f64 * vx, fidx as f64 * vy);
            let data = Arr::from_shape_fn((3, spec.height, spec.width), |(c, i, j)| {
                let (x, y) = (j as f64 + ox, i as f64 + oy);
                let mut v = 0.5;
                for wave in &channels[c] {
                    v += wave.amp
                        * (std::f64::consts::TAU * (wave.fx * x + wave.fy * y) + wave.phase)
                            .sin();
                }
                v
            });
            Frame::new(data, ColorSpace::Rgb)
        })
        .collect();
    RawVideo::new(frames, spec.fps)
}

/// A small deterministic dataset of synthetic clips.
pub fn synthetic_dataset(spec: &SyntheticSpec, n_clips: usize, seed: u64) -> Vec<RawVideo> {
    (0..n_clips)
        .map(|i| synthetic_clip(spec, seed.wrapping_add(i as u64)))
        .collect()
}

/// Constant-color clips, used by degenerate-content smoke tests.
pub fn constant_clip(value: f64, spec: &SyntheticSpec) -> RawVideo {
    let frames = (0..spec.n_frames)
        .map(|_| {
            Frame::new(
                Arr::from_elem((3, spec.height, spec.width), value),
                ColorSpace::Rgb,
            )
        })
        .collect();
    RawVideo::new(frames, spec.fps)
}

/// Random square crop of three consecutive frames.
pub fn sample_triplet(
    clip: &RawVideo,
    crop: usize,
    rng: &mut ChaCha8Rng,
) -> [Arr; 3] {
    assert!(clip.len() >= 3, "clips must hold at least 3 frames");
    assert!(crop <= clip.height() && crop <= clip.width());
    let start = rng.random_range(0..=clip.len() - 3);
    let oi = rng.random_range(0..=clip.height() - crop);
    let oj = rng.random_range(0..=clip.width() - crop);
    [0, 1, 2].map(|k| {
        clip.frames()[start + k]
            .data()
            .slice(ndarray::s![.., oi..oi + crop, oj..oj + crop])
            .to_owned()
    })
}
