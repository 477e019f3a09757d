//! The per-frame coding pipeline: MNet, motion compensation, CNet and Skip,
//! plus the four ablation configurations.
//!
//! One frame is coded as follows. MNet transmits two motion fields, a
//! prediction weight `beta` and (when Skip is enabled) a mode-selection field
//! `alpha`. A bi-directional motion compensation builds the temporal
//! prediction, CNet codes the frame conditioned on that prediction, and the
//! reconstruction mixes CNet output with the prediction pixel-wise:
//! `recon = alpha * cnet_out + (1 - alpha) * prediction`.
//!
//! Unavailable references are passed as all-zero frames, so every frame type
//! runs the identical pipeline. The encoder always reconstructs through the
//! same decode path the decoder runs, which keeps both sides bit-identical.

mod bitstream;

pub use bitstream::{
    decode_video, encode_video, stream_payload_bytes, BitstreamError, DecodedVideo, EncodedVideo,
    FrameBitstream, FrameStats, SequenceHeader, VideoStats,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::rc::Rc;

use thiserror::Error;

use crate::autograd::{Arr, Tape, Var};
use crate::coder::entropy::gaussian_bits_sum;
use crate::coder::params::{
    read_checkpoint, save_checkpoint, CheckpointError, CheckpointManifest, ParamBinding,
    ParamStore,
};
use crate::coder::quant::{lattice_indices, latent_from_indices};
use crate::coder::range::{
    decode_gaussian_symbols, encode_gaussian_symbols, RangeCodingError,
};
use crate::coder::transforms::{ArchConfig, CondCoder, CondCoderLayout};
use crate::motion::{MotionField, PredictionWeights};
use crate::video::{ColorSpace, Frame, FrameType};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("inconsistent codec flags for mode {mode}: {detail}")]
    BadConfig { mode: CodecMode, detail: String },
    #[error("frame shape {got:?} does not match expected {want:?}")]
    ShapeMismatch { got: (usize, usize, usize), want: (usize, usize, usize) },
    #[error("missing {which} reference for a {ft} frame")]
    MissingReference { which: &'static str, ft: FrameType },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Range(#[from] RangeCodingError),
}

/// The four named configurations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    Aivc,
    Motion,
    Conditional,
    Residual,
}

impl CodecMode {
    pub fn label(self) -> &'static str {
        match self {
            CodecMode::Aivc => "aivc",
            CodecMode::Motion => "motion",
            CodecMode::Conditional => "conditional",
            CodecMode::Residual => "residual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aivc" => Some(CodecMode::Aivc),
            "motion" => Some(CodecMode::Motion),
            "conditional" => Some(CodecMode::Conditional),
            "residual" => Some(CodecMode::Residual),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            CodecMode::Aivc => 0,
            CodecMode::Motion => 1,
            CodecMode::Conditional => 2,
            CodecMode::Residual => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(CodecMode::Aivc),
            1 => Some(CodecMode::Motion),
            2 => Some(CodecMode::Conditional),
            3 => Some(CodecMode::Residual),
            _ => None,
        }
    }

    pub fn all() -> [CodecMode; 4] {
        [
            CodecMode::Aivc,
            CodecMode::Motion,
            CodecMode::Conditional,
            CodecMode::Residual,
        ]
    }
}

impl std::fmt::Display for CodecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Flag matrix for a codec mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    pub mode: CodecMode,
    pub cnet_conditional: bool,
    pub mnet_present: bool,
    pub mnet_conditional: bool,
    pub motion_comp: bool,
    pub skip: bool,
    pub quant_gains: bool,
    /// Variant: additionally mask CNet's encoder-side input by alpha.
    /// Off by default; the reconstruction mix alone realizes Skip.
    pub alpha_masks_cnet_input: bool,
}

impl CodecConfig {
    /// The named row of the ablation table.
    pub fn for_mode(mode: CodecMode) -> Self {
        match mode {
            CodecMode::Aivc => CodecConfig {
                mode,
                cnet_conditional: true,
                mnet_present: true,
                mnet_conditional: true,
                motion_comp: true,
                skip: true,
                quant_gains: true,
                alpha_masks_cnet_input: false,
            },
            CodecMode::Motion => CodecConfig {
                mode,
                cnet_conditional: true,
                mnet_present: true,
                mnet_conditional: false,
                motion_comp: true,
                skip: false,
                quant_gains: true,
                alpha_masks_cnet_input: false,
            },
            CodecMode::Conditional => CodecConfig {
                mode,
                cnet_conditional: true,
                mnet_present: false,
                mnet_conditional: false,
                motion_comp: false,
                skip: false,
                quant_gains: true,
                alpha_masks_cnet_input: false,
            },
            CodecMode::Residual => CodecConfig {
                mode,
                cnet_conditional: false,
                mnet_present: false,
                mnet_conditional: false,
                motion_comp: false,
                skip: false,
                quant_gains: false,
                alpha_masks_cnet_input: false,
            },
        }
    }

    /// Reject flag combinations that do not match the mode's table row.
    pub fn validate(&self) -> Result<(), CodecError> {
        let want = CodecConfig {
            alpha_masks_cnet_input: self.alpha_masks_cnet_input,
            ..CodecConfig::for_mode(self.mode)
        };
        if *self != want {
            return Err(CodecError::BadConfig {
                mode: self.mode,
                detail: format!("{self:?} does not match the mode's flag pattern"),
            });
        }
        if self.alpha_masks_cnet_input && !self.skip {
            return Err(CodecError::BadConfig {
                mode: self.mode,
                detail: "alpha input masking requires Skip".into(),
            });
        }
        Ok(())
    }
}

/// MNet outputs for one frame.
#[derive(Clone, Debug)]
pub struct MotionBundle {
    pub v_p: MotionField,
    pub v_f: MotionField,
    pub beta: PredictionWeights,
    /// Mode selection in `[0, 1]`; 1 everywhere when Skip is disabled.
    pub alpha: Arr,
}

/// Per-frame outcome on the inference path.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub reconstruction: Frame,
    pub rate_motion_bits: f64,
    pub rate_texture_bits: f64,
    pub bundle: Option<MotionBundle>,
    pub prediction: Frame,
}

/// The coded payloads of one frame, in bitstream order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FramePayloads {
    pub mnet_hyper: Vec<u8>,
    pub mnet_latent: Vec<u8>,
    pub cnet_hyper: Vec<u8>,
    pub cnet_latent: Vec<u8>,
}

impl FramePayloads {
    pub fn total_bytes(&self) -> usize {
        self.mnet_hyper.len() + self.mnet_latent.len() + self.cnet_hyper.len()
            + self.cnet_latent.len()
    }
}

/// Training-time quantization surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantSurrogate {
    /// Additive uniform noise on `(-0.5, 0.5)`.
    Noise,
    /// Straight-through rounding.
    Ste,
}

/// Differentiable per-frame outputs on the training path.
pub struct TrainFrameOut {
    /// Clamped reconstruction, usable as a reference for later frames.
    pub recon: Var,
    pub prediction: Var,
    /// Scalar rate estimates in bits.
    pub rate_motion: Var,
    pub rate_texture: Var,
    pub alpha: Option<Var>,
}

/// A full codec instance: configuration, architecture and parameters.
pub struct Codec {
    pub config: CodecConfig,
    pub arch: ArchConfig,
    pub store: ParamStore,
    mnet: Option<CondCoder>,
    cnet: CondCoder,
}

impl Codec {
    /// Deterministically initialize a codec from a seed.
    pub fn new(config: CodecConfig, arch: ArchConfig, seed: u64) -> Result<Codec, CodecError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mnet = config.mnet_present.then(|| {
            let out_channels = if config.skip { 6 } else { 5 };
            let layout = if config.mnet_conditional {
                CondCoderLayout {
                    encoder_side_channels: 3,
                    decoder_side_channels: Some(6),
                    output_channels: out_channels,
                    with_gains: config.quant_gains,
                    output_scale: 0.1,
                    output_bias: 0.0,
                }
            } else {
                CondCoderLayout {
                    encoder_side_channels: 9,
                    decoder_side_channels: None,
                    output_channels: out_channels,
                    with_gains: config.quant_gains,
                    output_scale: 0.1,
                    output_bias: 0.0,
                }
            };
            CondCoder::define(&mut store, &mut rng, "mnet", &layout, arch)
        });
        // Residual mode codes a zero-centered signal; the conditional modes
        // output pixels and start near mid-gray.
        let cnet_layout = CondCoderLayout {
            encoder_side_channels: 3,
            decoder_side_channels: config.cnet_conditional.then_some(3),
            output_channels: 3,
            with_gains: config.quant_gains,
            output_scale: 0.1,
            output_bias: if config.cnet_conditional { 0.5 } else { 0.0 },
        };
        let cnet = CondCoder::define(&mut store, &mut rng, "cnet", &cnet_layout, arch);
        if config.skip {
            // Bias the mode selection toward CNet at init; Skip takes over
            // pixel-wise once the prediction earns it.
            let d = arch.downsample_log2;
            let bias = store
                .id_of(&format!("mnet.synthesis.u{}.b", d - 1))
                .expect("mnet synthesis bias");
            store.update(bias, |b| {
                for slot in ALPHA_CHANNEL * 4..(ALPHA_CHANNEL + 1) * 4 {
                    b[(slot, 0, 0)] = ALPHA_BIAS_INIT;
                }
            });
        }
        Ok(Codec { config, arch, store, mnet, cnet })
    }

    pub fn mnet(&self) -> Option<&CondCoder> {
        self.mnet.as_ref()
    }

    pub fn cnet(&self) -> &CondCoder {
        &self.cnet
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CodecError> {
        let manifest =
            CheckpointManifest::describe(self.config.mode.label(), self.arch, &self.store);
        save_checkpoint(path, &manifest, &self.store)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Codec, CodecError> {
        let (manifest, blob) = read_checkpoint(path)?;
        let mode = CodecMode::parse(&manifest.mode).ok_or_else(|| {
            CodecError::Checkpoint(CheckpointError::BadManifest(format!(
                "unknown mode {}",
                manifest.mode
            )))
        })?;
        let mut codec = Codec::new(CodecConfig::for_mode(mode), manifest.arch, 0)?;
        codec.store.load_blob(&blob)?;
        Ok(codec)
    }

    /// Pad dims up to the codec's total downsampling factor.
    pub fn padded_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.arch.total_downsample();
        (h.div_ceil(s) * s, w.div_ceil(s) * s)
    }
}

/// Reflect-pad `x` on the bottom/right up to `(th, tw)`. Padding larger than
/// the input keeps mirroring (triangle-wave indexing).
pub fn pad_reflect(x: &Arr, th: usize, tw: usize) -> Arr {
    let (c, h, w) = x.dim();
    assert!(th >= h && tw >= w);
    if th == h && tw == w {
        return x.clone();
    }
    let mirror = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i % period;
        if m < n { m } else { period - m }
    };
    Arr::from_shape_fn((c, th, tw), |(ch, i, j)| {
        x[(ch, mirror(i, h), mirror(j, w))]
    })
}

fn crop(x: &Arr, h: usize, w: usize) -> Arr {
    x.slice(ndarray::s![.., 0..h, 0..w]).to_owned()
}

/// References for one frame, zeroed when absent.
struct RefPair {
    past: Rc<Arr>,
    future: Rc<Arr>,
}

fn resolve_refs(
    ft: FrameType,
    past: Option<&Rc<Arr>>,
    future: Option<&Rc<Arr>>,
    shape: (usize, usize, usize),
) -> Result<RefPair, CodecError> {
    let zero = || Rc::new(Arr::zeros(shape));
    let need = |r: Option<&Rc<Arr>>, which| {
        r.cloned().ok_or(CodecError::MissingReference { which, ft })
    };
    let (past, future) = match ft {
        FrameType::I => (zero(), zero()),
        FrameType::P => (need(past, "past")?, zero()),
        FrameType::B => (need(past, "past")?, need(future, "future")?),
    };
    for r in [&past, &future] {
        if r.dim() != shape {
            return Err(CodecError::ShapeMismatch { got: r.dim(), want: shape });
        }
    }
    Ok(RefPair { past, future })
}

/// Channel index of the mode selection in MNet's synthesis output.
const ALPHA_CHANNEL: usize = 5;
/// Initial logit of the mode selection (sigmoid(2) is about 0.88).
const ALPHA_BIAS_INIT: f64 = 2.0;

/// MNet decode-path outputs shared by encoder and decoder.
struct MnetOutputs {
    v_p: Var,
    v_f: Var,
    beta: Var,
    alpha: Option<Var>,
}

fn split_mnet_synthesis(t: &Tape, out: Var, skip: bool) -> MnetOutputs {
    let v_p = t.slice_c(out, 0, 2);
    let v_f = t.slice_c(out, 2, 2);
    let beta = t.sigmoid(t.slice_c(out, 4, 1));
    let alpha = skip.then(|| t.sigmoid(t.slice_c(out, 5, 1)));
    MnetOutputs { v_p, v_f, beta, alpha }
}

/// `beta * warp(past, v_p) + (1 - beta) * warp(future, v_f)` on the tape.
fn motion_compensate(t: &Tape, refs: (Var, Var), m: &MnetOutputs) -> Var {
    let warped_p = t.warp(refs.0, m.v_p);
    let warped_f = t.warp(refs.1, m.v_f);
    let one_minus = t.add_const(t.neg(m.beta), 1.0);
    t.add(t.mul(m.beta, warped_p), t.mul(one_minus, warped_f))
}

/// Average of the available references (zero for I frames).
fn reference_average(t: &Tape, ft: FrameType, past: Var, future: Var) -> Var {
    match ft {
        FrameType::I => t.scale(past, 0.0),
        FrameType::P => past,
        FrameType::B => t.scale(t.add(past, future), 0.5),
    }
}

/// Mix CNet output into the prediction through alpha.
fn mix_reconstruction(t: &Tape, alpha: Var, cnet_out: Var, prediction: Var) -> Var {
    let one_minus = t.add_const(t.neg(alpha), 1.0);
    t.add(t.mul(alpha, cnet_out), t.mul(one_minus, prediction))
}

// ---- training path ----

struct TrainNetOut {
    out: Var,
    rate_bits: Var,
}

fn net_forward_train(
    t: &Tape,
    bind: &ParamBinding,
    coder: &CondCoder,
    enc_side: Var,
    dec_side: Option<Var>,
    ft: FrameType,
    rng: &mut ChaCha8Rng,
    surrogate: QuantSurrogate,
) -> TrainNetOut {
    let y = coder.analyze(t, bind, enc_side, dec_side);

    // Hyper branch: unit-step quantization, factorized prior rate.
    let z = coder.hyper_analysis.forward(t, bind, y);
    let z_hat = apply_surrogate(t, z, rng, surrogate);
    let (pz_mu, pz_sigma) = coder.prior.vars(t, bind);
    let rate_z = gaussian_bits_sum(t, z_hat, pz_mu, pz_sigma);
    let (mu, sigma) = coder.hyper_params(t, bind, z_hat);

    // Main latent: gains around the quantizer, hyperprior rate.
    let (y_lattice, y_hat) = match &coder.gains {
        Some(gains) => {
            let (enc, dec) = gains.vars(t, bind, ft);
            let gained = t.mul(y, enc);
            let lattice = apply_surrogate(t, gained, rng, surrogate);
            (lattice, t.mul(lattice, dec))
        }
        _ => {
            let lattice = apply_surrogate(t, y, rng, surrogate);
            (lattice, lattice)
        }
    };
    let rate_y = gaussian_bits_sum(t, y_lattice, mu, sigma);

    let cond = dec_side.and_then(|d| coder.condition(t, bind, d));
    let out = coder.synthesize(t, bind, y_hat, cond);
    TrainNetOut { out, rate_bits: t.add(rate_z, rate_y) }
}

fn apply_surrogate(t: &Tape, x: Var, rng: &mut ChaCha8Rng, surrogate: QuantSurrogate) -> Var {
    match surrogate {
        QuantSurrogate::Noise => {
            let sh = t.shape(x);
            let noise = Arr::from_shape_fn((sh[0], sh[1], sh[2]), |_| rng.random::<f64>() - 0.5);
            t.add(x, t.leaf(noise))
        }
        QuantSurrogate::Ste => t.round_ste(x),
    }
}

impl Codec {
    /// Code one frame differentiably. References are tape vars carrying
    /// gradients from earlier frames; `None` references are zeroed.
    #[allow(clippy::too_many_arguments)]
    pub fn code_frame_train(
        &self,
        t: &Tape,
        bind: &ParamBinding,
        x_t: Var,
        past: Option<Var>,
        future: Option<Var>,
        ft: FrameType,
        rng: &mut ChaCha8Rng,
        surrogate: QuantSurrogate,
        alpha_override: Option<&Arr>,
    ) -> TrainFrameOut {
        let sh = t.shape(x_t);
        let zero = || t.leaf(Arr::zeros((sh[0], sh[1], sh[2])));
        let past = match ft {
            FrameType::I => zero(),
            _ => past.expect("past reference required"),
        };
        let future = match ft {
            FrameType::B => future.expect("future reference required"),
            _ => zero(),
        };

        let (prediction, alpha, rate_motion) = if self.config.mnet_present {
            let mnet = self.mnet.as_ref().unwrap();
            let (enc_side, dec_side) = if self.config.mnet_conditional {
                (x_t, Some(t.concat_c(&[past, future])))
            } else {
                (t.concat_c(&[x_t, past, future]), None)
            };
            let net = net_forward_train(t, bind, mnet, enc_side, dec_side, ft, rng, surrogate);
            let m = split_mnet_synthesis(t, net.out, self.config.skip);
            let prediction = motion_compensate(t, (past, future), &m);
            (prediction, m.alpha, net.rate_bits)
        } else {
            let pred = reference_average(t, ft, past, future);
            (pred, None, t.leaf(ndarray::arr3(&[[[0.0]]])))
        };

        let alpha = match (alpha_override, alpha) {
            (Some(field), _) => Some(t.leaf(field.clone())),
            (None, a) => a,
        };

        let (raw_recon, rate_texture) = if self.config.cnet_conditional {
            let enc_side = match (&alpha, self.config.alpha_masks_cnet_input) {
                (Some(a), true) => t.mul(*a, x_t),
                _ => x_t,
            };
            let net = net_forward_train(
                t,
                bind,
                &self.cnet,
                enc_side,
                Some(prediction),
                ft,
                rng,
                surrogate,
            );
            let mixed = match &alpha {
                Some(a) => mix_reconstruction(t, *a, net.out, prediction),
                None => net.out,
            };
            (mixed, net.rate_bits)
        } else {
            // Plain autoencoder conveying the prediction error.
            let residual = t.sub(x_t, prediction);
            let net = net_forward_train(t, bind, &self.cnet, residual, None, ft, rng, surrogate);
            (t.add(prediction, net.out), net.rate_bits)
        };

        TrainFrameOut {
            recon: t.clamp(raw_recon, 0.0, 1.0),
            prediction,
            rate_motion,
            rate_texture,
            alpha,
        }
    }
}

// ---- inference path ----

struct InferNetOut {
    out: Var,
    hyper_payload: Vec<u8>,
    latent_payload: Vec<u8>,
}

impl Codec {
    fn prior_params_for(&self, coder: &CondCoder, n_spatial: usize) -> (Vec<f64>, Vec<f64>) {
        let (mu_c, sigma_c) = coder.prior.values(&self.store);
        let mut mu = Vec::with_capacity(mu_c.len() * n_spatial);
        let mut sigma = Vec::with_capacity(mu_c.len() * n_spatial);
        for ch in 0..mu_c.len() {
            mu.extend(std::iter::repeat_n(mu_c[ch], n_spatial));
            sigma.extend(std::iter::repeat_n(sigma_c[ch], n_spatial));
        }
        (mu, sigma)
    }

    fn gain_values(&self, coder: &CondCoder, ft: FrameType) -> (Vec<f64>, Vec<f64>) {
        match &coder.gains {
            Some(g) => g.values(&self.store, ft),
            None => (
                vec![1.0; self.arch.latent_channels],
                vec![1.0; self.arch.latent_channels],
            ),
        }
    }

    /// Encoder side of one network: analyze, quantize, range-code, then run
    /// the decoder-matched reconstruction from the coded values.
    fn net_encode(
        &self,
        t: &Tape,
        bind: &ParamBinding,
        coder: &CondCoder,
        enc_side: Var,
        dec_side: Option<Var>,
        ft: FrameType,
    ) -> InferNetOut {
        let y = coder.analyze(t, bind, enc_side, dec_side);
        let z = coder.hyper_analysis.forward(t, bind, y);

        let z_arr = t.value(z);
        let (zh, zw) = (z_arr.dim().1, z_arr.dim().2);
        let k_z: Vec<i64> = z_arr.iter().map(|&v| v.round() as i64).collect();
        let (pz_mu, pz_sigma) = self.prior_params_for(coder, zh * zw);
        let hyper_payload = encode_gaussian_symbols(&k_z, &pz_mu, &pz_sigma);

        let unit = vec![1.0; self.arch.hyper_channels];
        let z_hat = t.leaf(latent_from_indices(&k_z, &unit, zh, zw));
        let (mu, sigma) = coder.hyper_params(t, bind, z_hat);

        let (enc_g, dec_g) = self.gain_values(coder, ft);
        let y_arr = t.value(y);
        let (yh, yw) = (y_arr.dim().1, y_arr.dim().2);
        let k_y = lattice_indices(&y_arr, &enc_g);
        let mu_flat: Vec<f64> = t.value(mu).iter().copied().collect();
        let sigma_flat: Vec<f64> = t.value(sigma).iter().copied().collect();
        let latent_payload = encode_gaussian_symbols(&k_y, &mu_flat, &sigma_flat);

        let y_hat = t.leaf(latent_from_indices(&k_y, &dec_g, yh, yw));
        let cond = dec_side.and_then(|d| coder.condition(t, bind, d));
        let out = coder.synthesize(t, bind, y_hat, cond);
        InferNetOut { out, hyper_payload, latent_payload }
    }

    /// Decoder side of one network, mirroring [`Codec::net_encode`].
    fn net_decode(
        &self,
        t: &Tape,
        bind: &ParamBinding,
        coder: &CondCoder,
        dec_side: Option<Var>,
        ft: FrameType,
        hyper_payload: &[u8],
        latent_payload: &[u8],
        latent_dims: (usize, usize),
    ) -> Result<Var, CodecError> {
        let (yh, yw) = latent_dims;
        let (zh, zw) = (
            yh.div_ceil(1 << crate::coder::transforms::HYPER_DOWNSAMPLE_LOG2),
            yw.div_ceil(1 << crate::coder::transforms::HYPER_DOWNSAMPLE_LOG2),
        );
        let (pz_mu, pz_sigma) = self.prior_params_for(coder, zh * zw);
        let k_z = decode_gaussian_symbols(hyper_payload, &pz_mu, &pz_sigma)?;
        let unit = vec![1.0; self.arch.hyper_channels];
        let z_hat = t.leaf(latent_from_indices(&k_z, &unit, zh, zw));
        let (mu, sigma) = coder.hyper_params(t, bind, z_hat);

        let mu_flat: Vec<f64> = t.value(mu).iter().copied().collect();
        let sigma_flat: Vec<f64> = t.value(sigma).iter().copied().collect();
        let k_y = decode_gaussian_symbols(latent_payload, &mu_flat, &sigma_flat)?;
        let (_, dec_g) = self.gain_values(coder, ft);
        let y_hat = t.leaf(latent_from_indices(&k_y, &dec_g, yh, yw));
        let cond = dec_side.and_then(|d| coder.condition(t, bind, d));
        Ok(coder.synthesize(t, bind, y_hat, cond))
    }

    /// Dims of the main latent for a padded frame.
    fn latent_dims(&self, ph: usize, pw: usize) -> (usize, usize) {
        let s = self.arch.main_downsample();
        (ph / s, pw / s)
    }

    /// Shared decoder-side pipeline from the MNet synthesis output to the
    /// prediction and mode selection.
    fn frame_pipeline_infer(
        &self,
        t: &Tape,
        refs: &RefPair,
        ft: FrameType,
        alpha_override: Option<&Arr>,
        mnet_out: Option<Var>,
    ) -> (Var, Option<MnetOutputs>, Option<Var>) {
        let past = t.leaf_shared(Rc::clone(&refs.past));
        let future = t.leaf_shared(Rc::clone(&refs.future));
        let (prediction, m) = match mnet_out {
            Some(out) => {
                let m = split_mnet_synthesis(t, out, self.config.skip);
                let pred = motion_compensate(t, (past, future), &m);
                (pred, Some(m))
            }
            None => (reference_average(t, ft, past, future), None),
        };
        let alpha = match (alpha_override, m.as_ref().and_then(|m| m.alpha)) {
            (Some(field), _) => Some(t.leaf(field.clone())),
            (None, a) => a,
        };
        (prediction, m, alpha)
    }

    /// Encode one frame. References are reconstructions at padded dims.
    pub fn code_frame(
        &self,
        x_t: &Frame,
        past: Option<&Rc<Arr>>,
        future: Option<&Rc<Arr>>,
        ft: FrameType,
        alpha_override: Option<&Arr>,
    ) -> Result<(FrameResult, FramePayloads, Rc<Arr>), CodecError> {
        let (h, w) = (x_t.height(), x_t.width());
        let (ph, pw) = self.padded_dims(h, w);
        let x_padded = pad_reflect(x_t.data(), ph, pw);
        let refs = resolve_refs(ft, past, future, (3, ph, pw))?;

        let t = Tape::inference();
        let bind = self.store.bind(&t);
        let x = t.leaf(x_padded);

        // MNet encode.
        let (mnet_out, m_hyper, m_latent) = if self.config.mnet_present {
            let mnet = self.mnet.as_ref().unwrap();
            let past_v = t.leaf_shared(Rc::clone(&refs.past));
            let future_v = t.leaf_shared(Rc::clone(&refs.future));
            let (enc_side, dec_side) = if self.config.mnet_conditional {
                (x, Some(t.concat_c(&[past_v, future_v])))
            } else {
                (t.concat_c(&[x, past_v, future_v]), None)
            };
            let net = self.net_encode(&t, &bind, mnet, enc_side, dec_side, ft);
            (Some(net.out), net.hyper_payload, net.latent_payload)
        } else {
            (None, Vec::new(), Vec::new())
        };

        let (prediction, m, alpha) =
            self.frame_pipeline_infer(&t, &refs, ft, alpha_override, mnet_out);

        // CNet encode.
        let (raw_recon, c_hyper, c_latent) = if self.config.cnet_conditional {
            let enc_side = match (&alpha, self.config.alpha_masks_cnet_input) {
                (Some(a), true) => t.mul(*a, x),
                _ => x,
            };
            let net = self.net_encode(&t, &bind, &self.cnet, enc_side, Some(prediction), ft);
            let mixed = match &alpha {
                Some(a) => mix_reconstruction(&t, *a, net.out, prediction),
                None => net.out,
            };
            (mixed, net.hyper_payload, net.latent_payload)
        } else {
            let residual = t.sub(x, prediction);
            let net = self.net_encode(&t, &bind, &self.cnet, residual, None, ft);
            (t.add(prediction, net.out), net.hyper_payload, net.latent_payload)
        };

        let recon = t.clamp(raw_recon, 0.0, 1.0);
        let recon_arr = t.value(recon);
        let payloads = FramePayloads {
            mnet_hyper: m_hyper,
            mnet_latent: m_latent,
            cnet_hyper: c_hyper,
            cnet_latent: c_latent,
        };
        let result = self.build_result(&t, x_t, recon, prediction, m.as_ref(), alpha, &payloads, h, w)?;
        Ok((result, payloads, recon_arr))
    }

    /// Decode one frame from its payloads.
    pub fn decode_frame(
        &self,
        payloads: &FramePayloads,
        ft: FrameType,
        past: Option<&Rc<Arr>>,
        future: Option<&Rc<Arr>>,
        dims: (usize, usize),
        color_space: ColorSpace,
    ) -> Result<(Frame, Rc<Arr>), CodecError> {
        let (h, w) = dims;
        let (ph, pw) = self.padded_dims(h, w);
        let refs = resolve_refs(ft, past, future, (3, ph, pw))?;
        let t = Tape::inference();
        let bind = self.store.bind(&t);

        let mnet_out = if self.config.mnet_present {
            let mnet = self.mnet.as_ref().unwrap();
            let past_v = t.leaf_shared(Rc::clone(&refs.past));
            let future_v = t.leaf_shared(Rc::clone(&refs.future));
            let dec_side = if self.config.mnet_conditional {
                Some(t.concat_c(&[past_v, future_v]))
            } else {
                None
            };
            Some(self.net_decode(
                &t,
                &bind,
                mnet,
                dec_side,
                ft,
                &payloads.mnet_hyper,
                &payloads.mnet_latent,
                self.latent_dims(ph, pw),
            )?)
        } else {
            None
        };

        let (prediction, _m, alpha) =
            self.frame_pipeline_infer(&t, &refs, ft, None, mnet_out);

        let raw_recon = if self.config.cnet_conditional {
            let out = self.net_decode(
                &t,
                &bind,
                &self.cnet,
                Some(prediction),
                ft,
                &payloads.cnet_hyper,
                &payloads.cnet_latent,
                self.latent_dims(ph, pw),
            )?;
            match &alpha {
                Some(a) => mix_reconstruction(&t, *a, out, prediction),
                None => out,
            }
        } else {
            let out = self.net_decode(
                &t,
                &bind,
                &self.cnet,
                None,
                ft,
                &payloads.cnet_hyper,
                &payloads.cnet_latent,
                self.latent_dims(ph, pw),
            )?;
            t.add(prediction, out)
        };
        let recon = t.clamp(raw_recon, 0.0, 1.0);
        let recon_arr = t.value(recon);
        let frame = Frame::new(crop(&recon_arr, h, w), color_space);
        Ok((frame, recon_arr))
    }

    #[allow(clippy::too_many_arguments)]
    fn build_result(
        &self,
        t: &Tape,
        x_t: &Frame,
        recon: Var,
        prediction: Var,
        m: Option<&MnetOutputs>,
        alpha: Option<Var>,
        payloads: &FramePayloads,
        h: usize,
        w: usize,
    ) -> Result<FrameResult, CodecError> {
        let recon_frame = Frame::new(crop(&t.value(recon), h, w), x_t.color_space());
        let pred_frame = Frame::new(crop(&t.value(prediction), h, w), x_t.color_space());
        let bundle = m.map(|m| {
            let alpha_arr = match &alpha {
                Some(a) => crop(&t.value(*a), h, w),
                None => Arr::from_elem((1, h, w), 1.0),
            };
            MotionBundle {
                v_p: MotionField::new(crop(&t.value(m.v_p), h, w)).expect("finite flow"),
                v_f: MotionField::new(crop(&t.value(m.v_f), h, w)).expect("finite flow"),
                beta: PredictionWeights::new(crop(&t.value(m.beta), h, w))
                    .expect("beta in [0,1]"),
                alpha: alpha_arr,
            }
        });
        Ok(FrameResult {
            reconstruction: recon_frame,
            rate_motion_bits: 8.0 * (payloads.mnet_hyper.len() + payloads.mnet_latent.len()) as f64,
            rate_texture_bits: 8.0 * (payloads.cnet_hyper.len() + payloads.cnet_latent.len()) as f64,
            bundle,
            prediction: pred_frame,
        })
    }

    /// Run MNet alone on one frame (inference path): returns the motion
    /// bundle and the actual coded motion bits.
    pub fn mnet_forward(
        &self,
        x_t: &Frame,
        past: Option<&Rc<Arr>>,
        future: Option<&Rc<Arr>>,
        ft: FrameType,
    ) -> Result<(MotionBundle, f64), CodecError> {
        if !self.config.mnet_present {
            return Err(CodecError::BadConfig {
                mode: self.config.mode,
                detail: "mnet_forward requires an MNet".into(),
            });
        }
        let (result, _, _) = self.code_frame(x_t, past, future, ft, None)?;
        let bundle = result.bundle.expect("MNet present implies a bundle");
        Ok((bundle, result.rate_motion_bits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_codec(mode: CodecMode, seed: u64) -> Codec {
        Codec::new(CodecConfig::for_mode(mode), ArchConfig::desk(), seed).unwrap()
    }

    fn random_frame(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(
            Arr::from_shape_fn((3, h, w), |_| rng.random::<f64>()),
            ColorSpace::Rgb,
        )
    }

    #[test]
    fn table_flag_matrix_is_exact() {
        let rows = [
            (CodecMode::Aivc, true, true, true, true, true, true),
            (CodecMode::Motion, true, true, false, true, false, true),
            (CodecMode::Conditional, true, false, false, false, false, true),
            (CodecMode::Residual, false, false, false, false, false, false),
        ];
        for (mode, cnet_cc, mnet, mnet_cc, mc, skip, gains) in rows {
            let c = CodecConfig::for_mode(mode);
            assert_eq!(
                (
                    c.cnet_conditional,
                    c.mnet_present,
                    c.mnet_conditional,
                    c.motion_comp,
                    c.skip,
                    c.quant_gains
                ),
                (cnet_cc, mnet, mnet_cc, mc, skip, gains),
                "{mode}"
            );
            c.validate().unwrap();
        }
        let mut bad = CodecConfig::for_mode(CodecMode::Aivc);
        bad.skip = false;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mnet_outputs_have_contract_shapes_and_ranges() {
        let codec = desk_codec(CodecMode::Aivc, 5);
        let x = random_frame(64, 64, 1);
        let past = Rc::new(random_frame(64, 64, 2).into_data());
        let future = Rc::new(random_frame(64, 64, 3).into_data());
        let (bundle, rate) = codec
            .mnet_forward(&x, Some(&past), Some(&future), FrameType::B)
            .unwrap();
        assert_eq!(bundle.v_p.data().dim(), (2, 64, 64));
        assert_eq!(bundle.v_f.data().dim(), (2, 64, 64));
        assert_eq!(bundle.beta.data().dim(), (1, 64, 64));
        assert_eq!(bundle.alpha.dim(), (1, 64, 64));
        assert!(bundle.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        assert!(rate > 0.0);

        // Determinism.
        let (b2, r2) = codec
            .mnet_forward(&x, Some(&past), Some(&future), FrameType::B)
            .unwrap();
        assert_eq!(bundle.v_p.data(), b2.v_p.data());
        assert_eq!(bundle.alpha, b2.alpha);
        assert_eq!(rate, r2);
    }

    #[test]
    fn skip_identity_alpha_zero_returns_the_prediction_bit_exactly() {
        let codec = desk_codec(CodecMode::Aivc, 7);
        let x = random_frame(64, 64, 11);
        let past = Rc::new(random_frame(64, 64, 12).into_data());
        let future = Rc::new(random_frame(64, 64, 13).into_data());
        let zeros = Arr::zeros((1, 64, 64));
        let (result, _, _) = codec
            .code_frame(&x, Some(&past), Some(&future), FrameType::B, Some(&zeros))
            .unwrap();
        assert_eq!(
            result.reconstruction.data(),
            result.prediction.data(),
            "alpha = 0 must copy the prediction"
        );
    }

    #[test]
    fn residual_mode_codes_the_frame_itself_for_i_frames() {
        // With zero references the prediction is zero, so the coded signal is
        // x_t and the reconstruction is prediction + decoded residual.
        let codec = desk_codec(CodecMode::Residual, 9);
        let x = random_frame(64, 64, 21);
        let (result, payloads, _) = codec
            .code_frame(&x, None, None, FrameType::I, None)
            .unwrap();
        assert!(result.prediction.data().iter().all(|&v| v == 0.0));
        assert!(result.bundle.is_none());
        assert_eq!(result.rate_motion_bits, 0.0);
        assert!(payloads.mnet_hyper.is_empty() && payloads.mnet_latent.is_empty());
        assert_eq!(
            result.rate_texture_bits,
            8.0 * (payloads.cnet_hyper.len() + payloads.cnet_latent.len()) as f64
        );
    }

    #[test]
    fn residual_mode_with_perfect_prediction_codes_a_zero_signal() {
        let codec = desk_codec(CodecMode::Residual, 31);
        let x = random_frame(64, 64, 22);
        let past = Rc::new(x.data().clone());
        // P frame with past == x_t: residual is exactly zero, so the payload
        // must equal that of coding an all-zero input.
        let (_, payloads, _) = codec
            .code_frame(&x, Some(&past), None, FrameType::P, None)
            .unwrap();
        let zero_frame = Frame::new(Arr::zeros((3, 64, 64)), ColorSpace::Rgb);
        let zero_ref = Rc::new(Arr::zeros((3, 64, 64)));
        let (_, zero_payloads, _) = codec
            .code_frame(&zero_frame, Some(&zero_ref), None, FrameType::P, None)
            .unwrap();
        assert_eq!(payloads.cnet_latent, zero_payloads.cnet_latent);
        assert_eq!(payloads.cnet_hyper, zero_payloads.cnet_hyper);
    }

    #[test]
    fn every_mode_round_trips_one_frame_bit_exactly() {
        for (i, mode) in CodecMode::all().into_iter().enumerate() {
            let codec = desk_codec(mode, 100 + i as u64);
            let x = random_frame(64, 64, 40 + i as u64);
            let past = Rc::new(random_frame(64, 64, 50 + i as u64).into_data());
            let (result, payloads, enc_recon) = codec
                .code_frame(&x, Some(&past), None, FrameType::P, None)
                .unwrap();
            let (frame, dec_recon) = codec
                .decode_frame(
                    &payloads,
                    FrameType::P,
                    Some(&past),
                    None,
                    (64, 64),
                    ColorSpace::Rgb,
                )
                .unwrap();
            assert_eq!(*enc_recon, *dec_recon, "{mode}: padded recon differs");
            assert_eq!(
                result.reconstruction.data(),
                frame.data(),
                "{mode}: output frame differs"
            );
        }
    }

    #[test]
    fn padding_round_trips_non_divisible_dims() {
        let codec = desk_codec(CodecMode::Conditional, 77);
        let x = random_frame(40, 24, 61);
        let (result, payloads, _) = codec.code_frame(&x, None, None, FrameType::I, None).unwrap();
        assert_eq!(result.reconstruction.data().dim(), (3, 40, 24));
        let (frame, _) = codec
            .decode_frame(&payloads, FrameType::I, None, None, (40, 24), ColorSpace::Rgb)
            .unwrap();
        assert_eq!(frame.data(), result.reconstruction.data());
    }

    #[test]
    fn coder_gradients_flow_end_to_end() {
        // Finite-difference check through analyze -> quantize(train) ->
        // rate and -> synthesize on a 16x16 input. A shallow stack keeps
        // 16x16 divisible by the full transform depth.
        let arch = ArchConfig {
            latent_channels: 4,
            hyper_channels: 4,
            width: 8,
            downsample_log2: 2,
            attention: false,
        };
        let codec =
            Codec::new(CodecConfig::for_mode(CodecMode::Conditional), arch, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = Arr::from_shape_fn((3, 16, 16), |_| rng.random::<f64>());
        let past0 = Arr::from_shape_fn((3, 16, 16), |_| rng.random::<f64>());

        let eval = |x: &Arr| -> (Tape, Var, Var, f64) {
            let t = Tape::new();
            let bind = codec.store.bind(&t);
            let vx = t.leaf(x.clone());
            let past = t.leaf(past0.clone());
            // Fixed noise: reseeding makes every evaluation identical.
            let mut noise_rng = ChaCha8Rng::seed_from_u64(55);
            let out = codec.code_frame_train(
                &t,
                &bind,
                vx,
                Some(past),
                None,
                FrameType::P,
                &mut noise_rng,
                QuantSurrogate::Noise,
                None,
            );
            let sq = t.mul(out.recon, out.recon);
            let loss = t.add(t.mean_all(sq), t.scale(out.rate_texture, 1e-3));
            let value = t.scalar(loss);
            (t, loss, vx, value)
        };

        let (t, loss, vx, _) = eval(&x0);
        let grads = t.backward(loss);
        let analytic = grads.get(vx).expect("input gradient").clone();
        let numeric = crate::autograd::numeric_gradient(|p| eval(p).3, &x0, 1e-4);
        let err = crate::autograd::max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err <= 1e-3, "end-to-end gradient error {err}");
    }

    #[test]
    fn missing_reference_is_reported() {
        let codec = desk_codec(CodecMode::Conditional, 88);
        let x = random_frame(64, 64, 71);
        assert!(matches!(
            codec.code_frame(&x, None, None, FrameType::P, None),
            Err(CodecError::MissingReference { which: "past", .. })
        ));
    }
}
