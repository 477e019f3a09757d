//! The conditional-coding building block: strided convolutional analysis and
//! conditioning transforms, subpixel synthesis, and the hyperprior pair.
//!
//! The conditioning transform replicates the analysis architecture with
//! independent parameters and consumes only decoder-available inputs. The
//! synthesis transform consumes the quantized analysis latent concatenated
//! with the conditioning latent. A lightweight gated attention block can be
//! switched on per config; it is off by default at this scale.

use rand::Rng;

use crate::autograd::{Arr, Conv2dSpec, Tape, Var};
use crate::coder::entropy::{SIGMA_MAX, SIGMA_MIN};
use crate::coder::params::{ParamBinding, ParamId, ParamStore};
use crate::video::FrameType;

const LEAKY_SLOPE: f64 = 0.2;

/// Hyper transforms add two more stride-2 stages on top of the main latent.
pub const HYPER_DOWNSAMPLE_LOG2: usize = 2;

/// Architecture dims shared by MNet and CNet.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchConfig {
    /// Channels of the analysis latent (`F`).
    pub latent_channels: usize,
    /// Channels of the hyper latent.
    pub hyper_channels: usize,
    /// Internal conv width.
    pub width: usize,
    /// Stride-2 stages in the main transforms; spatial factor is `2^this`.
    pub downsample_log2: usize,
    /// Enable the simplified gated attention block.
    pub attention: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_channels: 32,
            hyper_channels: 16,
            width: 32,
            downsample_log2: 4,
            attention: false,
        }
    }
}

impl ArchConfig {
    /// A small preset for fast desk-scale training runs.
    pub fn desk() -> Self {
        ArchConfig {
            latent_channels: 16,
            hyper_channels: 8,
            width: 16,
            downsample_log2: 4,
            attention: false,
        }
    }

    /// Spatial factor of the main transforms.
    pub fn main_downsample(&self) -> usize {
        1 << self.downsample_log2
    }

    /// Spatial factor the codec must pad inputs to (main × hyper).
    pub fn total_downsample(&self) -> usize {
        1 << (self.downsample_log2 + HYPER_DOWNSAMPLE_LOG2)
    }
}

fn he_normal(rng: &mut impl Rng, fan_in: usize, scale: f64) -> impl FnMut() -> f64 + '_ {
    let std = scale * (2.0 / fan_in as f64).sqrt();
    move || {
        // Box-Muller keeps us off distribution crates.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random::<f64>();
        std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// One conv layer: weights `(c_out, c_in*k*k, 1)` plus bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    spec: Conv2dSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn define(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        weight_scale: f64,
        bias_init: f64,
    ) -> Conv {
        let fan_in = c_in * kernel * kernel;
        let mut sample = he_normal(rng, fan_in, weight_scale);
        let w = Arr::from_shape_fn((c_out, fan_in, 1), |_| sample());
        drop(sample);
        let b = Arr::from_elem((c_out, 1, 1), bias_init);
        Conv {
            w: store.define(&format!("{name}.w"), w),
            b: store.define(&format!("{name}.b"), b),
            spec: Conv2dSpec {
                in_channels: c_in,
                out_channels: c_out,
                kernel,
                stride,
                pad: kernel / 2,
            },
        }
    }

    fn forward(&self, t: &Tape, bind: &ParamBinding, x: Var) -> Var {
        t.conv2d(x, bind.var(self.w), bind.var(self.b), self.spec)
    }
}

#[derive(Clone, Copy, Debug)]
struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    fn define(store: &mut ParamStore, rng: &mut impl Rng, name: &str, ch: usize) -> ResBlock {
        ResBlock {
            c1: Conv::define(store, rng, &format!("{name}.c1"), ch, ch, 3, 1, 1.0, 0.0),
            c2: Conv::define(store, rng, &format!("{name}.c2"), ch, ch, 3, 1, 1.0, 0.0),
        }
    }

    fn forward(&self, t: &Tape, bind: &ParamBinding, x: Var) -> Var {
        let h = self.c1.forward(t, bind, x);
        let h = t.leaky_relu(h, LEAKY_SLOPE);
        let h = self.c2.forward(t, bind, h);
        t.add(x, h)
    }
}

/// Sigmoid-gated 1×1 branch: `x * sigmoid(conv1x1(x))`.
#[derive(Clone, Copy, Debug)]
struct AttnGate {
    c: Conv,
}

impl AttnGate {
    fn define(store: &mut ParamStore, rng: &mut impl Rng, name: &str, ch: usize) -> AttnGate {
        AttnGate {
            c: Conv::define(store, rng, &format!("{name}.gate"), ch, ch, 1, 1, 1.0, 0.0),
        }
    }

    fn forward(&self, t: &Tape, bind: &ParamBinding, x: Var) -> Var {
        let g = t.sigmoid(self.c.forward(t, bind, x));
        t.mul(x, g)
    }
}

struct EncStage {
    conv: Conv,
    act: bool,
    res: Option<ResBlock>,
    attn: Option<AttnGate>,
}

/// A stack of stride-2 conv stages (used for analysis, conditioning and
/// hyper-analysis).
pub struct EncoderNet {
    stages: Vec<EncStage>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl EncoderNet {
    pub fn define(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        n_stages: usize,
        res_at: &[usize],
        attention: bool,
    ) -> EncoderNet {
        let mut stages = Vec::with_capacity(n_stages);
        let mut c_in = in_channels;
        for i in 0..n_stages {
            let last = i + 1 == n_stages;
            let c_out = if last { out_channels } else { width };
            let conv = Conv::define(store, rng, &format!("{name}.s{i}"), c_in, c_out, 3, 2, 1.0, 0.0);
            let res = res_at
                .contains(&i)
                .then(|| ResBlock::define(store, rng, &format!("{name}.res{i}"), c_out));
            let attn = (attention && last)
                .then(|| AttnGate::define(store, rng, &format!("{name}.attn"), c_out));
            stages.push(EncStage { conv, act: !last, res, attn });
            c_in = c_out;
        }
        EncoderNet { stages, in_channels, out_channels }
    }

    pub fn forward(&self, t: &Tape, bind: &ParamBinding, x: Var) -> Var {
        let mut h = x;
        for stage in &self.stages {
            h = stage.conv.forward(t, bind, h);
            if stage.act {
                h = t.leaky_relu(h, LEAKY_SLOPE);
            }
            if let Some(res) = &stage.res {
                h = res.forward(t, bind, h);
            }
            if let Some(attn) = &stage.attn {
                h = attn.forward(t, bind, h);
            }
        }
        h
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }
}

struct DecStage {
    conv: Conv,
    act: bool,
    res: Option<ResBlock>,
}

/// A stack of conv + 2× pixel-shuffle stages (synthesis, hyper-synthesis).
pub struct DecoderNet {
    stages: Vec<DecStage>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DecoderNet {
    #[allow(clippy::too_many_arguments)]
    pub fn define(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        n_stages: usize,
        res_at: &[usize],
        final_scale: f64,
        output_bias: f64,
    ) -> DecoderNet {
        let mut stages = Vec::with_capacity(n_stages);
        let mut c_in = in_channels;
        for i in 0..n_stages {
            let last = i + 1 == n_stages;
            let c_out = if last { out_channels } else { width };
            let scale = if last { final_scale } else { 1.0 };
            let conv = Conv::define(
                store,
                rng,
                &format!("{name}.u{i}"),
                c_in,
                4 * c_out,
                3,
                1,
                scale,
                if last { output_bias } else { 0.0 },
            );
            let res = res_at
                .contains(&i)
                .then(|| ResBlock::define(store, rng, &format!("{name}.res{i}"), c_out));
            stages.push(DecStage { conv, act: !last, res });
            c_in = c_out;
        }
        DecoderNet { stages, in_channels, out_channels }
    }

    pub fn forward(&self, t: &Tape, bind: &ParamBinding, x: Var) -> Var {
        let mut h = x;
        for stage in &self.stages {
            h = stage.conv.forward(t, bind, h);
            h = t.pixel_shuffle2(h);
            if stage.act {
                h = t.leaky_relu(h, LEAKY_SLOPE);
            }
            if let Some(res) = &stage.res {
                h = res.forward(t, bind, h);
            }
        }
        h
    }
}

/// Log-parametrized per-frame-type gain pairs; positivity by construction.
pub struct GainParams {
    log_enc: [ParamId; 3],
    log_dec: [ParamId; 3],
    channels: usize,
}

impl GainParams {
    pub fn define(store: &mut ParamStore, name: &str, channels: usize) -> GainParams {
        let mk = |store: &mut ParamStore, tag: &str, ft: char| {
            store.define(&format!("{name}.{tag}.{ft}"), Arr::zeros((channels, 1, 1)))
        };
        GainParams {
            log_enc: [
                mk(store, "log_gain_enc", 'I'),
                mk(store, "log_gain_enc", 'P'),
                mk(store, "log_gain_enc", 'B'),
            ],
            log_dec: [
                mk(store, "log_gain_dec", 'I'),
                mk(store, "log_gain_dec", 'P'),
                mk(store, "log_gain_dec", 'B'),
            ],
            channels,
        }
    }

    /// Gain vars on the tape for one frame type, shaped `(F, 1, 1)`.
    pub fn vars(&self, t: &Tape, bind: &ParamBinding, ft: FrameType) -> (Var, Var) {
        let enc = t.exp(bind.var(self.log_enc[ft.index()]));
        let dec = t.exp(bind.var(self.log_dec[ft.index()]));
        (enc, dec)
    }

    /// Concrete gain values for the inference path.
    pub fn values(&self, store: &ParamStore, ft: FrameType) -> (Vec<f64>, Vec<f64>) {
        let read = |id: ParamId| -> Vec<f64> {
            store.value(id).iter().map(|&v| v.exp()).collect()
        };
        (read(self.log_enc[ft.index()]), read(self.log_dec[ft.index()]))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_ids(&self, ft: FrameType) -> (ParamId, ParamId) {
        (self.log_enc[ft.index()], self.log_dec[ft.index()])
    }
}

/// Learned factorized prior over the hyper latent: per-channel mean and
/// log-scale of a Gaussian evaluated on unit intervals.
pub struct FactorizedPrior {
    pub mean: ParamId,
    pub log_scale: ParamId,
    pub channels: usize,
}

impl FactorizedPrior {
    pub fn define(store: &mut ParamStore, name: &str, channels: usize) -> FactorizedPrior {
        FactorizedPrior {
            mean: store.define(&format!("{name}.prior_mean"), Arr::zeros((channels, 1, 1))),
            log_scale: store.define(&format!("{name}.prior_log_scale"), Arr::zeros((channels, 1, 1))),
            channels,
        }
    }

    /// Per-channel (mu, sigma) vars, `(C, 1, 1)`, sigma clamped.
    pub fn vars(&self, t: &Tape, bind: &ParamBinding) -> (Var, Var) {
        let mu = bind.var(self.mean);
        let sigma = t.clamp(t.exp(bind.var(self.log_scale)), SIGMA_MIN, SIGMA_MAX);
        (mu, sigma)
    }

    /// Per-channel (mu, sigma) values for the inference path.
    pub fn values(&self, store: &ParamStore) -> (Vec<f64>, Vec<f64>) {
        let mu = store.value(self.mean).iter().copied().collect();
        let sigma = store
            .value(self.log_scale)
            .iter()
            .map(|&v| v.exp().clamp(SIGMA_MIN, SIGMA_MAX))
            .collect();
        (mu, sigma)
    }
}

/// One conditional coder: MNet and CNet are both instances of this.
pub struct CondCoder {
    pub analysis: EncoderNet,
    pub conditioning: Option<EncoderNet>,
    pub synthesis: DecoderNet,
    pub hyper_analysis: EncoderNet,
    pub hyper_synthesis: DecoderNet,
    pub prior: FactorizedPrior,
    pub gains: Option<GainParams>,
    pub arch: ArchConfig,
}

/// Construction-time description of one conditional coder.
pub struct CondCoderLayout {
    /// Channels fed to the analysis transform from the encoder side.
    pub encoder_side_channels: usize,
    /// Channels of decoder-available inputs; `None` removes the conditioning
    /// transform (plain autoencoder ablations).
    pub decoder_side_channels: Option<usize>,
    /// Channels produced by the synthesis transform.
    pub output_channels: usize,
    /// Learn frame-type quantization gains.
    pub with_gains: bool,
    /// Init scale of the final synthesis conv (small for motion output).
    pub output_scale: f64,
    /// Bias init of the final synthesis conv (mid-gray for image output).
    pub output_bias: f64,
}

impl CondCoder {
    pub fn define(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        layout: &CondCoderLayout,
        arch: ArchConfig,
    ) -> CondCoder {
        let d = arch.downsample_log2;
        // Residual blocks sit at the two lowest-resolution encoder stages and
        // the two earliest decoder stages.
        let enc_res: Vec<usize> = if d >= 2 { vec![d - 2, d - 1] } else { vec![0] };
        let dec_res: Vec<usize> = if d >= 2 { vec![0, 1] } else { vec![0] };

        let analysis_in = layout.encoder_side_channels
            + layout.decoder_side_channels.unwrap_or(0);
        let analysis = EncoderNet::define(
            store,
            rng,
            &format!("{name}.analysis"),
            analysis_in,
            arch.latent_channels,
            arch.width,
            d,
            &enc_res,
            arch.attention,
        );
        let conditioning = layout.decoder_side_channels.map(|cond_in| {
            EncoderNet::define(
                store,
                rng,
                &format!("{name}.conditioning"),
                cond_in,
                arch.latent_channels,
                arch.width,
                d,
                &enc_res,
                arch.attention,
            )
        });
        let synthesis_in = arch.latent_channels
            + conditioning.as_ref().map_or(0, |_| arch.latent_channels);
        let synthesis = DecoderNet::define(
            store,
            rng,
            &format!("{name}.synthesis"),
            synthesis_in,
            layout.output_channels,
            arch.width,
            d,
            &dec_res,
            layout.output_scale,
            layout.output_bias,
        );
        let hyper_analysis = EncoderNet::define(
            store,
            rng,
            &format!("{name}.hyper_analysis"),
            arch.latent_channels,
            arch.hyper_channels,
            arch.hyper_channels.max(arch.width / 2),
            HYPER_DOWNSAMPLE_LOG2,
            &[],
            false,
        );
        let hyper_synthesis = DecoderNet::define(
            store,
            rng,
            &format!("{name}.hyper_synthesis"),
            arch.hyper_channels,
            2 * arch.latent_channels,
            arch.width,
            HYPER_DOWNSAMPLE_LOG2,
            &[],
            1.0,
            0.0,
        );
        let prior = FactorizedPrior::define(store, name, arch.hyper_channels);
        let gains = layout
            .with_gains
            .then(|| GainParams::define(store, name, arch.latent_channels));
        CondCoder {
            analysis,
            conditioning,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            prior,
            gains,
            arch,
        }
    }

    /// Analysis transform over encoder-side plus decoder-side inputs.
    pub fn analyze(
        &self,
        t: &Tape,
        bind: &ParamBinding,
        encoder_side: Var,
        decoder_side: Option<Var>,
    ) -> Var {
        let x = match decoder_side {
            Some(d) => t.concat_c(&[encoder_side, d]),
            None => encoder_side,
        };
        self.analysis.forward(t, bind, x)
    }

    /// Conditioning transform over decoder-available inputs only.
    pub fn condition(&self, t: &Tape, bind: &ParamBinding, decoder_side: Var) -> Option<Var> {
        self.conditioning
            .as_ref()
            .map(|net| net.forward(t, bind, decoder_side))
    }

    /// Synthesis transform over the quantized latent and conditioning latent.
    pub fn synthesize(&self, t: &Tape, bind: &ParamBinding, y_hat: Var, cond: Option<Var>) -> Var {
        let x = match cond {
            Some(c) => t.concat_c(&[y_hat, c]),
            None => y_hat,
        };
        self.synthesis.forward(t, bind, x)
    }

    /// Hyper-synthesis output split into (mu, sigma), sigma clamped to the
    /// stability floor.
    pub fn hyper_params(&self, t: &Tape, bind: &ParamBinding, z_hat: Var) -> (Var, Var) {
        let out = self.hyper_synthesis.forward(t, bind, z_hat);
        let f = self.arch.latent_channels;
        let mu = t.slice_c(out, 0, f);
        let sigma = t.clamp(t.exp(t.slice_c(out, f, f)), SIGMA_MIN, SIGMA_MAX);
        (mu, sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_coder(with_cond: bool) -> (ParamStore, CondCoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let coder = CondCoder::define(
            &mut store,
            &mut rng,
            "net",
            &CondCoderLayout {
                encoder_side_channels: 3,
                decoder_side_channels: with_cond.then_some(3),
                output_channels: 3,
                with_gains: true,
                output_scale: 1.0,
                output_bias: 0.5,
            },
            ArchConfig::default(),
        );
        (store, coder)
    }

    #[test]
    fn latent_shapes_follow_the_downsampling_contract() {
        let (store, coder) = test_coder(true);
        let t = Tape::inference();
        let bind = store.bind(&t);
        let x = t.leaf(Arr::zeros((3, 64, 64)));
        let d = t.leaf(Arr::zeros((3, 64, 64)));
        let y = coder.analyze(&t, &bind, x, Some(d));
        assert_eq!(t.shape(y), [32, 4, 4]);
        let c = coder.condition(&t, &bind, d).unwrap();
        assert_eq!(t.shape(c), [32, 4, 4]);
        let out = coder.synthesize(&t, &bind, y, Some(c));
        assert_eq!(t.shape(out), [3, 64, 64]);
        let z = coder.hyper_analysis.forward(&t, &bind, y);
        assert_eq!(t.shape(z), [16, 1, 1]);
        let (mu, sigma) = coder.hyper_params(&t, &bind, z);
        assert_eq!(t.shape(mu), [32, 4, 4]);
        assert_eq!(t.shape(sigma), [32, 4, 4]);
        assert!(t.value(sigma).iter().all(|&s| s >= SIGMA_MIN));
    }

    #[test]
    fn forward_is_deterministic_and_finite_on_zero_inputs() {
        let (store, coder) = test_coder(true);
        let run = || {
            let t = Tape::inference();
            let bind = store.bind(&t);
            let x = t.leaf(Arr::from_elem((3, 32, 32), 0.3));
            let d = t.leaf(Arr::zeros((3, 32, 32)));
            let y = coder.analyze(&t, &bind, x, Some(d));
            let c = coder.condition(&t, &bind, d).unwrap();
            let out = coder.synthesize(&t, &bind, y, Some(c));
            (*t.value(y)).clone()
                .into_iter()
                .chain((*t.value(out)).clone())
                .collect::<Vec<f64>>()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "two identical calls must agree exactly");
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn plain_autoencoder_has_no_conditioning_transform() {
        let (store, coder) = test_coder(false);
        let t = Tape::inference();
        let bind = store.bind(&t);
        let d = t.leaf(Arr::zeros((3, 64, 64)));
        assert!(coder.condition(&t, &bind, d).is_none());
        let x = t.leaf(Arr::zeros((3, 64, 64)));
        let y = coder.analyze(&t, &bind, x, None);
        let out = coder.synthesize(&t, &bind, y, None);
        assert_eq!(t.shape(out), [3, 64, 64]);
    }

    #[test]
    fn conditioning_params_are_independent_of_analysis_params() {
        let (store, _) = test_coder(true);
        let names: Vec<&str> = store.names().collect();
        assert!(names.iter().any(|n| n.starts_with("net.analysis.")));
        assert!(names.iter().any(|n| n.starts_with("net.conditioning.")));
        // Same layer shapes, distinct parameters.
        let a = store.id_of("net.analysis.s1.w").unwrap();
        let c = store.id_of("net.conditioning.s1.w").unwrap();
        assert_ne!(a, c);
        assert_eq!(store.value(a).dim(), store.value(c).dim());
    }
}
