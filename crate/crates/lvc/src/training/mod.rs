//! Rate-distortion training: MS-SSIM distortion, the scalarized objective
//! `sum_t D(x_t, recon_t) + lambda * (R_m + R_c)`, the 3-frame I/P/B training
//! configuration, alpha forcing, and the optimization loop.

mod config;
mod data;
mod msssim;
mod optim;

pub use config::{ClipSpec, DatasetSpec, TrainConfig, TrainConfigError};
pub use data::{constant_clip, sample_triplet, synthetic_clip, synthetic_dataset, SyntheticSpec};
pub use msssim::{ms_ssim, ms_ssim_tape, MsSsimConfig, MsSsimError, CANONICAL_WEIGHTS};
pub use optim::Adam;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Arr, Tape, Var};
use crate::codec::{Codec, FrameResult, QuantSurrogate, TrainFrameOut};
use crate::video::{Frame, FrameType, RawVideo};

/// Rate-distortion objective configuration. Distortion is `1 - MS-SSIM`;
/// rates enter in bits per pixel.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub lambda: f64,
    pub msssim: MsSsimConfig,
}

impl LossConfig {
    pub fn new(lambda: f64, msssim: MsSsimConfig) -> Self {
        assert!(lambda >= 0.0);
        LossConfig { lambda, msssim }
    }

    /// Auto-select the scale count for the given dims.
    pub fn auto(lambda: f64, h: usize, w: usize) -> Result<Self, MsSsimError> {
        Ok(LossConfig::new(lambda, MsSsimConfig::auto_for(h, w, 5)?))
    }
}

/// The fixed 3-frame training configuration: every frame type appears once.
/// Entries are (display offset, frame type, past offset, future offset).
pub const TRAIN_STEP_ORDER: [(usize, FrameType, Option<usize>, Option<usize>); 3] = [
    (0, FrameType::I, None, None),
    (2, FrameType::P, Some(0), None),
    (1, FrameType::B, Some(0), Some(2)),
];

/// Alpha-forcing warm-up: for the first `active_iterations`, alpha is
/// overridden by `layout` (a field of 0s and 1s covering the frame), with
/// gradients stopped through the overridden values.
#[derive(Debug, Clone)]
pub struct AlphaForcing {
    pub active_iterations: usize,
    pub layout: Arr,
}

impl AlphaForcing {
    /// Left half forced to 0 (Skip), right half to 1 (CNet).
    pub fn vertical_split(h: usize, w: usize, active_iterations: usize) -> Self {
        let layout = Arr::from_shape_fn((1, h, w), |(_, _, j)| {
            if j < w / 2 { 0.0 } else { 1.0 }
        });
        AlphaForcing { active_iterations, layout }
    }

    pub fn field_for(&self, iteration: usize) -> Option<&Arr> {
        (iteration < self.active_iterations).then_some(&self.layout)
    }
}

/// Apply alpha forcing to a concrete alpha field.
pub fn force_alpha(alpha: &Arr, iteration: usize, forcing: &AlphaForcing) -> Arr {
    match forcing.field_for(iteration) {
        Some(layout) => {
            assert_eq!(layout.dim(), alpha.dim());
            layout.clone()
        }
        None => alpha.clone(),
    }
}

/// Scalarized objective over coded frames (inference-side values).
pub fn rd_loss(
    results: &[FrameResult],
    originals: &[Frame],
    cfg: &LossConfig,
) -> Result<f64, MsSsimError> {
    assert_eq!(results.len(), originals.len());
    let mut total = 0.0;
    for (r, x) in results.iter().zip(originals) {
        let score = ms_ssim(x.data(), r.reconstruction.data(), &cfg.msssim)?;
        let pixels = (x.height() * x.width()) as f64;
        total += (1.0 - score)
            + cfg.lambda * (r.rate_motion_bits + r.rate_texture_bits) / pixels;
    }
    Ok(total)
}

/// Tape version of the objective for one coded frame.
fn frame_loss_terms(
    t: &Tape,
    original: Var,
    out: &TrainFrameOut,
    cfg: &LossConfig,
) -> Result<(Var, Var, Var), MsSsimError> {
    let score = ms_ssim_tape(t, original, out.recon, &cfg.msssim)?;
    let d = t.add_const(t.neg(score), 1.0);
    let sh = t.shape(original);
    let pixels = (sh[1] * sh[2]) as f64;
    let rm_bpp = t.scale(out.rate_motion, 1.0 / pixels);
    let rc_bpp = t.scale(out.rate_texture, 1.0 / pixels);
    Ok((d, rm_bpp, rc_bpp))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainHyperparams {
    pub iterations: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
    pub alpha_force_iters: usize,
    pub surrogate: QuantSurrogate,
    pub log_every: usize,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        TrainHyperparams {
            iterations: 2000,
            lr: 1e-3,
            batch_size: 1,
            crop: 64,
            seed: 0,
            alpha_force_iters: 2000,
            surrogate: QuantSurrogate::Noise,
            log_every: 10,
        }
    }
}

/// One CSV log row: per-frame distortion and rates plus the iteration loss.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub d: f64,
    pub r_m_bpp: f64,
    pub r_c_bpp: f64,
    pub frame_type: FrameType,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    /// Iteration at which a non-finite loss aborted the run, if any.
    pub aborted_at: Option<usize>,
    pub final_loss: f64,
}

/// Train one codec on a clip dataset with a fixed lambda.
///
/// Every iteration samples a random 3-frame crop, codes it I -> P -> B with
/// the just-decoded frames as references, applies alpha forcing, and takes
/// one optimizer step. A non-finite loss aborts and restores the parameters
/// of the last finite step.
pub fn train_single(
    codec: &mut Codec,
    dataset: &[RawVideo],
    cfg: &LossConfig,
    hp: &TrainHyperparams,
) -> Result<TrainOutcome, MsSsimError> {
    assert!(!dataset.is_empty(), "training needs at least one clip");
    for clip in dataset {
        assert!(clip.len() >= 3, "clips must hold at least 3 frames");
    }
    let factor = codec.arch.total_downsample();
    assert!(
        hp.crop % factor == 0,
        "training crop {} must be a multiple of the codec's downsampling factor {factor}",
        hp.crop
    );
    cfg.msssim.check_dims(hp.crop, hp.crop)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let forcing = AlphaForcing::vertical_split(hp.crop, hp.crop, hp.alpha_force_iters);
    let mut opt = Adam::new(&codec.store, hp.lr);
    let mut log = Vec::new();
    let mut last_finite = codec.store.snapshot();
    let mut final_loss = f64::NAN;

    for iteration in 0..hp.iterations {
        let mut grad_acc: Vec<Option<Arr>> = (0..codec.store.len()).map(|_| None).collect();
        let mut iter_loss = 0.0;
        let mut rows: Vec<LogRow> = Vec::new();
        let mut diverged = false;

        for _ in 0..hp.batch_size {
            let clip = &dataset[rng.random_range(0..dataset.len())];
            let triplet = data::sample_triplet(clip, hp.crop, &mut rng);
            let t = Tape::new();
            let bind = codec.store.bind(&t);
            let xs: Vec<Var> = triplet.iter().map(|a| t.leaf(a.clone())).collect();
            let alpha_field = forcing.field_for(iteration);

            let mut outs: Vec<(usize, TrainFrameOut)> = Vec::with_capacity(3);
            let mut recon_of = [None::<Var>; 3];
            for &(display, ft, past, future) in &TRAIN_STEP_ORDER {
                let past = past.map(|d| recon_of[d].expect("coded earlier"));
                let future = future.map(|d| recon_of[d].expect("coded earlier"));
                let out = codec.code_frame_train(
                    &t,
                    &bind,
                    xs[display],
                    past,
                    future,
                    ft,
                    &mut rng,
                    hp.surrogate,
                    alpha_field,
                );
                recon_of[display] = Some(out.recon);
                outs.push((display, out));
            }

            let mut loss: Option<Var> = None;
            for (k, (display, out)) in outs.iter().enumerate() {
                let (d, rm, rc) = frame_loss_terms(&t, xs[*display], out, cfg)?;
                let rate = t.scale(t.add(rm, rc), cfg.lambda);
                let term = t.add(d, rate);
                loss = Some(match loss {
                    None => term,
                    Some(acc) => t.add(acc, term),
                });
                rows.push(LogRow {
                    iteration,
                    loss: 0.0, // total filled in once the batch completes
                    d: t.scalar(d),
                    r_m_bpp: t.scalar(rm),
                    r_c_bpp: t.scalar(rc),
                    frame_type: TRAIN_STEP_ORDER[k].1,
                });
            }
            let loss = loss.expect("three frames coded");
            let loss_value = t.scalar(loss);
            if !loss_value.is_finite() {
                diverged = true;
                break;
            }

            let grads = t.backward(loss);
            let scale = 1.0 / hp.batch_size as f64;
            for (idx, var) in bind.vars().iter().enumerate() {
                if let Some(g) = grads.get(*var) {
                    match &mut grad_acc[idx] {
                        Some(acc) => *acc += &g.mapv(|v| v * scale),
                        slot @ None => *slot = Some(g.mapv(|v| v * scale)),
                    }
                }
            }
            iter_loss += loss_value * scale;
        }

        if diverged {
            codec.store.restore(&last_finite);
            return Ok(TrainOutcome { log, aborted_at: Some(iteration), final_loss });
        }

        for row in &mut rows {
            row.loss = iter_loss;
        }
        if iteration % hp.log_every == 0 || iteration + 1 == hp.iterations {
            log.extend(rows);
        }
        final_loss = iter_loss;
        last_finite = codec.store.snapshot();
        opt.step(&mut codec.store, &grad_acc);
    }

    Ok(TrainOutcome { log, aborted_at: None, final_loss })
}

/// Deterministic RD loss of a codec on held-out clips: the first 3 frames of
/// each clip are coded along the training configuration with hard
/// quantization and real coded bits.
pub fn evaluate_rd(
    codec: &Codec,
    clips: &[RawVideo],
    cfg: &LossConfig,
) -> Result<f64, crate::codec::CodecError> {
    let mut total = 0.0;
    for clip in clips {
        let frames = clip.frames();
        let mut recon_of: [Option<std::rc::Rc<Arr>>; 3] = [None, None, None];
        let mut results = Vec::with_capacity(3);
        let mut originals = Vec::with_capacity(3);
        for &(display, ft, past, future) in &TRAIN_STEP_ORDER {
            let past = past.and_then(|d| recon_of[d].as_ref());
            let future = future.and_then(|d| recon_of[d].as_ref());
            let (result, _, recon) =
                codec.code_frame(&frames[display], past, future, ft, None)?;
            recon_of[display] = Some(recon);
            results.push(result);
            originals.push(frames[display].clone());
        }
        total += rd_loss(&results, &originals, cfg).expect("eval dims checked");
    }
    Ok(total / clips.len() as f64)
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] TrainConfigError),
    #[error(transparent)]
    MsSsim(#[from] MsSsimError),
    #[error(transparent)]
    Video(#[from] crate::video::VideoIoError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Outcome of one lambda's run inside a sweep.
#[derive(Debug, serde::Serialize)]
pub struct SweepRun {
    pub lambda: f64,
    pub checkpoint: String,
    pub log_csv: String,
    pub final_loss: f64,
    pub aborted_at: Option<usize>,
}

/// Train one model per lambda, saving checkpoints and CSV logs to
/// `cfg.out_dir`.
pub fn train_sweep(cfg: &TrainConfig) -> Result<Vec<SweepRun>, TrainError> {
    let dataset: Vec<RawVideo> = match &cfg.dataset {
        DatasetSpec::Synthetic { clips, frames, size, speed } => {
            let spec = SyntheticSpec {
                n_frames: *frames,
                height: *size,
                width: *size,
                max_speed: *speed,
                fps: 25.0,
            };
            synthetic_dataset(&spec, *clips, cfg.seed)
        }
        DatasetSpec::Clips(specs) => specs
            .iter()
            .map(|c| {
                crate::video::load_raw_video(&c.path, c.width, c.height, c.format, c.fps)
                    .map_err(TrainError::from)
            })
            .collect::<Result<_, _>>()?,
    };

    let msssim = if cfg.msssim_scales == 0 {
        MsSsimConfig::auto_for(cfg.crop, cfg.crop, 5)?
    } else {
        let c = MsSsimConfig::canonical(cfg.msssim_scales)?;
        c.check_dims(cfg.crop, cfg.crop)?;
        c
    };
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| TrainError::Io {
        path: cfg.out_dir.display().to_string(),
        source,
    })?;

    let mut runs = Vec::new();
    for (idx, &lambda) in cfg.lambdas.iter().enumerate() {
        let mut codec = crate::codec::Codec::new(
            crate::codec::CodecConfig::for_mode(cfg.mode),
            cfg.arch,
            cfg.seed.wrapping_add(idx as u64),
        )?;
        let hp = TrainHyperparams {
            iterations: cfg.iterations,
            lr: cfg.lr,
            batch_size: cfg.batch,
            crop: cfg.crop,
            seed: cfg.seed.wrapping_add(1000 + idx as u64),
            alpha_force_iters: cfg.alpha_force_iters,
            surrogate: cfg.surrogate,
            log_every: cfg.log_every,
        };
        let loss_cfg = LossConfig::new(lambda, msssim.clone());
        let outcome = train_single(&mut codec, &dataset, &loss_cfg, &hp)?;

        let tag = format!("{}_lambda{}", cfg.mode, lambda);
        let ckpt_path = cfg.out_dir.join(format!("ckpt_{tag}.lvck"));
        codec.save(&ckpt_path)?;
        let csv_path = cfg.out_dir.join(format!("train_{tag}.csv"));
        std::fs::write(&csv_path, log_to_csv(&outcome.log)).map_err(|source| {
            TrainError::Io { path: csv_path.display().to_string(), source }
        })?;
        runs.push(SweepRun {
            lambda,
            checkpoint: ckpt_path.display().to_string(),
            log_csv: csv_path.display().to_string(),
            final_loss: outcome.final_loss,
            aborted_at: outcome.aborted_at,
        });
    }
    Ok(runs)
}

/// Serialize log rows as CSV with the documented column order.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("iteration,loss,D,R_m_bpp,R_c_bpp,frame_type\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.iteration, r.loss, r.d, r.r_m_bpp, r.r_c_bpp, r.frame_type
        ));
    }
    out
}
