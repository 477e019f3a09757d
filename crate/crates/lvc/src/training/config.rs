//! Key-value training configuration files.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are rejected
//! so typos fail loudly. `clip` may repeat to list raw video files as
//! `path:WxH:fps:pix_fmt`; without clips a synthetic dataset is generated.

use std::path::PathBuf;

use thiserror::Error;

use crate::codec::{CodecMode, QuantSurrogate};
use crate::coder::transforms::ArchConfig;
use crate::video::PixelFormat;

#[derive(Debug, Error)]
pub enum TrainConfigError {
    #[error("line {line}: expected `key = value`, got \"{text}\"")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key \"{key}\"")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {detail}")]
    BadValue { line: usize, key: String, detail: String },
    #[error("config has no lambdas")]
    NoLambdas,
}

/// One raw clip entry: `path:WxH:fps:pix_fmt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSpec {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub format: PixelFormat,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        clips: usize,
        frames: usize,
        size: usize,
        speed: f64,
    },
    Clips(Vec<ClipSpec>),
}

/// Parsed training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: CodecMode,
    pub lambdas: Vec<f64>,
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    pub alpha_force_iters: usize,
    pub surrogate: QuantSurrogate,
    pub arch: ArchConfig,
    /// 0 selects the deepest feasible scale count for the crop.
    pub msssim_scales: usize,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: CodecMode::Aivc,
            lambdas: vec![1.0],
            iterations: 2000,
            lr: 1e-3,
            batch: 1,
            crop: 64,
            seed: 0,
            alpha_force_iters: 2000,
            surrogate: QuantSurrogate::Noise,
            arch: ArchConfig::default(),
            msssim_scales: 0,
            out_dir: PathBuf::from("runs"),
            dataset: DatasetSpec::Synthetic {
                clips: 8,
                frames: 12,
                size: 64,
                speed: 2.0,
            },
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<TrainConfig, TrainConfigError> {
        let mut cfg = TrainConfig::default();
        let mut clips: Vec<ClipSpec> = Vec::new();
        let mut synthetic = (8usize, 12usize, 64usize, 2.0f64);

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| {
                TrainConfigError::Syntax { line, text: raw.to_string() }
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |detail: &str| TrainConfigError::BadValue {
                line,
                key: key.to_string(),
                detail: detail.to_string(),
            };
            match key {
                "mode" => {
                    cfg.mode = CodecMode::parse(value).ok_or_else(|| bad("unknown mode"))?;
                }
                "lambdas" | "lambda" => {
                    cfg.lambdas = value
                        .split([',', ' '])
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<f64>().map_err(|e| bad(&e.to_string())))
                        .collect::<Result<_, _>>()?;
                }
                "iterations" => cfg.iterations = parse_num(value).map_err(|e| bad(&e))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("not a number"))?,
                "batch" => cfg.batch = parse_num(value).map_err(|e| bad(&e))?,
                "crop" => cfg.crop = parse_num(value).map_err(|e| bad(&e))?,
                "seed" => cfg.seed = parse_num(value).map_err(|e| bad(&e))?,
                "alpha_force_iters" => {
                    cfg.alpha_force_iters = parse_num(value).map_err(|e| bad(&e))?
                }
                "surrogate" => {
                    cfg.surrogate = match value {
                        "noise" => QuantSurrogate::Noise,
                        "ste" => QuantSurrogate::Ste,
                        _ => return Err(bad("expected noise|ste")),
                    }
                }
                "latent_channels" => {
                    cfg.arch.latent_channels = parse_num(value).map_err(|e| bad(&e))?
                }
                "hyper_channels" => {
                    cfg.arch.hyper_channels = parse_num(value).map_err(|e| bad(&e))?
                }
                "width" => cfg.arch.width = parse_num(value).map_err(|e| bad(&e))?,
                "downsample_log2" => {
                    cfg.arch.downsample_log2 = parse_num(value).map_err(|e| bad(&e))?
                }
                "attention" => {
                    cfg.arch.attention = value.parse().map_err(|_| bad("expected true|false"))?
                }
                "msssim_scales" => cfg.msssim_scales = parse_num(value).map_err(|e| bad(&e))?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "log_every" => cfg.log_every = parse_num(value).map_err(|e| bad(&e))?,
                "dataset" => {
                    if value != "synthetic" {
                        return Err(bad("expected synthetic (or use clip entries)"));
                    }
                }
                "synthetic_clips" => synthetic.0 = parse_num(value).map_err(|e| bad(&e))?,
                "synthetic_frames" => synthetic.1 = parse_num(value).map_err(|e| bad(&e))?,
                "synthetic_size" => synthetic.2 = parse_num(value).map_err(|e| bad(&e))?,
                "synthetic_speed" => {
                    synthetic.3 = value.parse().map_err(|_| bad("not a number"))?
                }
                "clip" => clips.push(parse_clip(value).map_err(|e| bad(&e))?),
                _ => {
                    return Err(TrainConfigError::UnknownKey { line, key: key.to_string() })
                }
            }
        }
        if cfg.lambdas.is_empty() {
            return Err(TrainConfigError::NoLambdas);
        }
        cfg.dataset = if clips.is_empty() {
            DatasetSpec::Synthetic {
                clips: synthetic.0,
                frames: synthetic.1,
                size: synthetic.2,
                speed: synthetic.3,
            }
        } else {
            DatasetSpec::Clips(clips)
        };
        Ok(cfg)
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value.parse::<T>().map_err(|_| format!("cannot parse \"{value}\""))
}

fn parse_clip(value: &str) -> Result<ClipSpec, String> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 4 {
        return Err("expected path:WxH:fps:pix_fmt".into());
    }
    let (w, h) = parts[1]
        .split_once('x')
        .ok_or_else(|| "dims must be WxH".to_string())?;
    Ok(ClipSpec {
        path: PathBuf::from(parts[0]),
        width: parse_num(w)?,
        height: parse_num(h)?,
        fps: parts[2].parse().map_err(|_| "bad fps".to_string())?,
        format: PixelFormat::parse(parts[3]).map_err(|e| e.to_string())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# desk run
mode = conditional
lambdas = 0.5, 2.0, 8.0
iterations = 500
lr = 3e-4
crop = 48
seed = 11
alpha_force_iters = 100
surrogate = ste
latent_channels = 16
hyper_channels = 8
width = 16
out_dir = runs/demo
synthetic_clips = 4
";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.mode, CodecMode::Conditional);
        assert_eq!(cfg.lambdas, vec![0.5, 2.0, 8.0]);
        assert_eq!(cfg.iterations, 500);
        assert_eq!(cfg.crop, 48);
        assert_eq!(cfg.surrogate, QuantSurrogate::Ste);
        assert_eq!(cfg.arch.latent_channels, 16);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/demo"));
        assert!(matches!(cfg.dataset, DatasetSpec::Synthetic { clips: 4, .. }));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_syntax() {
        assert!(matches!(
            TrainConfig::parse("fps = 25"),
            Err(TrainConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            TrainConfig::parse("just some words"),
            Err(TrainConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn clip_entries_build_a_clip_dataset() {
        let cfg = TrainConfig::parse("clip = a.rgb:64x48:25:rgb24\nclip = b.yuv:32x32:30:yuv420p8\n")
            .unwrap();
        match cfg.dataset {
            DatasetSpec::Clips(clips) => {
                assert_eq!(clips.len(), 2);
                assert_eq!(clips[0].width, 64);
                assert_eq!(clips[0].height, 48);
                assert_eq!(clips[1].format, PixelFormat::Yuv420p8);
            }
            other => panic!("expected clips, got {other:?}"),
        }
    }
}
