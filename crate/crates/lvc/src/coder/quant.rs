//! Frame-type quantization gains around a unitary quantizer.
//!
//! A learned per-channel gain pair `(enc, dec)` is kept for each frame type.
//! Inference quantizes `round(y * enc)` and reconstructs `k * dec`; training
//! replaces rounding with additive uniform noise on `(-0.5, 0.5)` (or a
//! straight-through round, configurable).

use ndarray::Axis;
use thiserror::Error;

use crate::autograd::Arr;
use crate::video::FrameType;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("no quantization gains defined for frame type {0}")]
    MissingGains(FrameType),
    #[error("gain vector length {got} does not match {want} latent channels")]
    GainLength { got: usize, want: usize },
}

/// Per-frame-type encoder/decoder gain vectors, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGains {
    pairs: [Option<GainPair>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainPair {
    pub enc: Vec<f64>,
    pub dec: Vec<f64>,
}

impl QuantGains {
    pub fn empty() -> Self {
        QuantGains { pairs: [None, None, None] }
    }

    /// Unity gains for all three frame types.
    pub fn unity(channels: usize) -> Self {
        let mut g = QuantGains::empty();
        for ft in [FrameType::I, FrameType::P, FrameType::B] {
            g.set(
                ft,
                GainPair {
                    enc: vec![1.0; channels],
                    dec: vec![1.0; channels],
                },
            );
        }
        g
    }

    pub fn set(&mut self, ft: FrameType, pair: GainPair) {
        assert!(pair.enc.iter().chain(&pair.dec).all(|&g| g > 0.0));
        assert_eq!(pair.enc.len(), pair.dec.len());
        self.pairs[ft.index()] = Some(pair);
    }

    pub fn for_type(&self, ft: FrameType) -> Result<&GainPair, QuantError> {
        self.pairs[ft.index()].as_ref().ok_or(QuantError::MissingGains(ft))
    }
}

/// Quantization behavior: hard rounding or a differentiable surrogate.
pub enum QuantizeMode<'a> {
    Infer,
    /// Additive noise drawn i.i.d. uniform on `(-0.5, 0.5)`, supplied by the
    /// caller so training (and tests) control the draw.
    Train(&'a Arr),
}

/// Apply frame-type gains around the unitary quantizer.
///
/// Infer: `out[f, ..] = round(y[f, ..] * enc[f]) * dec[f]`.
/// Train: `out[f, ..] = (y[f, ..] * enc[f] + u) * dec[f]`.
pub fn quantize_with_gains(
    y: &Arr,
    gains: &QuantGains,
    ft: FrameType,
    mode: QuantizeMode,
) -> Result<Arr, QuantError> {
    let pair = gains.for_type(ft)?;
    let channels = y.len_of(Axis(0));
    if pair.enc.len() != channels {
        return Err(QuantError::GainLength { got: pair.enc.len(), want: channels });
    }
    let mut out = y.clone();
    match mode {
        QuantizeMode::Infer => {
            for (f, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
                let (e, d) = (pair.enc[f], pair.dec[f]);
                plane.mapv_inplace(|v| (v * e).round() * d);
            }
        }
        QuantizeMode::Train(noise) => {
            assert_eq!(noise.dim(), y.dim(), "noise must match the latent shape");
            for (f, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
                let (e, d) = (pair.enc[f], pair.dec[f]);
                let n = noise.index_axis(Axis(0), f);
                ndarray::Zip::from(&mut plane).and(&n).for_each(|v, &u| {
                    debug_assert!((-0.5..=0.5).contains(&u));
                    *v = (*v * e + u) * d;
                });
            }
        }
    }
    Ok(out)
}

/// Integer lattice indices produced by the encoder-side gain + rounding.
pub fn lattice_indices(y: &Arr, enc: &[f64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(y.len());
    for (f, plane) in y.axis_iter(Axis(0)).enumerate() {
        for &v in plane.iter() {
            out.push((v * enc[f]).round() as i64);
        }
    }
    out
}

/// Rebuild the decoded latent `k * dec` from lattice indices.
pub fn latent_from_indices(indices: &[i64], dec: &[f64], h: usize, w: usize) -> Arr {
    let channels = dec.len();
    assert_eq!(indices.len(), channels * h * w);
    let mut out = Arr::zeros((channels, h, w));
    let mut it = indices.iter();
    for f in 0..channels {
        for i in 0..h {
            for j in 0..w {
                out[(f, i, j)] = *it.next().unwrap() as f64 * dec[f];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unity_gains_fix_integer_latents() {
        let gains = QuantGains::unity(2);
        let y = ndarray::arr3(&[[[1.0, -3.0]], [[0.0, 7.0]]]);
        let out = quantize_with_gains(&y, &gains, FrameType::I, QuantizeMode::Infer).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn hand_forced_gain_arithmetic() {
        // enc = 2, dec = 0.5, y = 0.3: round(0.6) = 1, out = 0.5.
        let mut gains = QuantGains::empty();
        gains.set(
            FrameType::P,
            GainPair { enc: vec![2.0], dec: vec![0.5] },
        );
        let y = ndarray::arr3(&[[[0.3]]]);
        let out = quantize_with_gains(&y, &gains, FrameType::P, QuantizeMode::Infer).unwrap();
        assert_eq!(out[(0, 0, 0)], 0.5);
    }

    #[test]
    fn train_mode_noise_is_bounded() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let gains = {
            let mut g = QuantGains::empty();
            g.set(
                FrameType::B,
                GainPair { enc: vec![1.7, 0.4], dec: vec![0.6, 2.5] },
            );
            g
        };
        let y = Arr::from_shape_fn((2, 3, 3), |_| rng.random::<f64>() * 4.0 - 2.0);
        let noise = Arr::from_shape_fn((2, 3, 3), |_| rng.random::<f64>() - 0.5);
        let out =
            quantize_with_gains(&y, &gains, FrameType::B, QuantizeMode::Train(&noise)).unwrap();
        let pair = gains.for_type(FrameType::B).unwrap();
        for f in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let recon = out[(f, i, j)] / pair.dec[f];
                    let gained = y[(f, i, j)] * pair.enc[f];
                    assert!((recon - gained).abs() <= 0.5 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn missing_frame_type_is_a_configuration_error() {
        let gains = QuantGains::empty();
        let y = Arr::zeros((1, 2, 2));
        assert!(matches!(
            quantize_with_gains(&y, &gains, FrameType::I, QuantizeMode::Infer),
            Err(QuantError::MissingGains(FrameType::I))
        ));
    }

    #[test]
    fn indices_round_trip_through_the_lattice() {
        let enc = [2.0, 0.5];
        let dec = [0.5, 2.0];
        let y = ndarray::arr3(&[[[0.3, -1.2]], [[4.0, -7.9]]]);
        let ks = lattice_indices(&y, &enc);
        assert_eq!(ks, vec![1, -2, 2, -4]);
        let latent = latent_from_indices(&ks, &dec, 1, 2);
        assert_eq!(latent, ndarray::arr3(&[[[0.5, -1.0]], [[4.0, -8.0]]]));
    }
}
