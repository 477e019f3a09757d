//! Command-line front end: train, encode, decode, eval and ablate.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 decode/bitstream
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lvc::codec::{decode_video, encode_video, BitstreamError};
use lvc::eval::{msssim_db, rates, run_ablation, AblationManifest, RDRecord};
use lvc::training::{ms_ssim, train_sweep, MsSsimConfig, TrainConfig, TrainError};
use lvc::video::{build_schedule, load_raw_video, save_raw_video, PixelFormat, ScheduleConfig};
use lvc::Codec;

#[derive(Parser)]
#[command(name = "lvc", about = "A toy-scale learned video codec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train models from a key-value config file (one checkpoint per lambda).
    Train {
        /// Path to the training configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Encode a headerless raw video into a bitstream.
    Encode {
        #[command(flatten)]
        raw: RawArgs,
        /// Input raw video file.
        #[arg(long)]
        input: PathBuf,
        /// Coding configuration.
        #[arg(long = "config", value_parser = parse_schedule)]
        schedule: ScheduleConfig,
        /// I-frame period (default: round(fps)).
        #[arg(long)]
        intra_period: Option<usize>,
        /// GOP size for Random Access (power of two).
        #[arg(long, default_value_t = 4)]
        gop: usize,
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output bitstream path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a bitstream back to raw video.
    Decode {
        /// Input bitstream.
        #[arg(long)]
        bitstream: PathBuf,
        /// Model checkpoint (must match the stream's manifest hash).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output raw video path (rgb24 or planar yuv444p, per the stream).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a reconstruction against the original: RD record as JSON.
    Eval {
        #[command(flatten)]
        raw: RawArgs,
        /// Reconstructed raw video.
        #[arg(long)]
        recon: PathBuf,
        /// Original raw video.
        #[arg(long)]
        orig: PathBuf,
        /// Bitstream whose size provides the rate (otherwise rate is 0).
        #[arg(long)]
        bitstream: Option<PathBuf>,
    },
    /// Run the ablation report from a JSON manifest.
    Ablate {
        /// Manifest file: eval videos, schedule, checkpoints per (mode, lambda).
        #[arg(long)]
        manifest: PathBuf,
        /// Report output directory.
        #[arg(long, default_value = "ablation_report")]
        out: PathBuf,
    },
}

/// Dimensions and format of headerless raw video inputs.
#[derive(Args)]
struct RawArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
    #[arg(long = "pix-fmt", value_parser = parse_pix_fmt, default_value = "rgb24")]
    pix_fmt: PixelFormat,
}

fn parse_schedule(s: &str) -> Result<ScheduleConfig, String> {
    ScheduleConfig::parse(s).ok_or_else(|| format!("unknown config \"{s}\" (ai|ldp|ra)"))
}

fn parse_pix_fmt(s: &str) -> Result<PixelFormat, String> {
    PixelFormat::parse(s).map_err(|e| e.to_string())
}

/// Failures mapped to documented exit codes.
enum CliError {
    Data(String),
    Decode(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Decode(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Decode(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<BitstreamError> for CliError {
    fn from(e: BitstreamError) -> Self {
        CliError::Decode(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes, anything else is usage.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| data_err(format!("{}: {e}", config.display())))?;
            let cfg = TrainConfig::parse(&text).map_err(data_err)?;
            let runs = train_sweep(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&runs).unwrap());
        }
        Command::Encode { raw, input, schedule, intra_period, gop, checkpoint, out } => {
            let codec = Codec::load(&checkpoint).map_err(data_err)?;
            let video = load_raw_video(&input, raw.width, raw.height, raw.pix_fmt, raw.fps)
                .map_err(data_err)?;
            let intra = intra_period.unwrap_or_else(|| (raw.fps.round() as usize).max(1));
            let plan = build_schedule(schedule, video.len(), intra, gop).map_err(data_err)?;
            let encoded = encode_video(&codec, &video, &plan)?;
            std::fs::write(&out, &encoded.bytes)
                .map_err(|e| data_err(format!("{}: {e}", out.display())))?;
            let (bpp, mbps) = rates(
                encoded.stats.total_bits(),
                video.len(),
                video.height(),
                video.width(),
                video.fps(),
            );
            let summary = serde_json::json!({
                "bitstream": out.display().to_string(),
                "bytes": encoded.bytes.len(),
                "rate_bpp": bpp,
                "rate_mbps": mbps,
                "motion_bits": encoded.stats.motion_bits(),
                "texture_bits": encoded.stats.texture_bits(),
                "frames": encoded.stats.frames,
            });
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        }
        Command::Decode { bitstream, checkpoint, out } => {
            let codec = Codec::load(&checkpoint).map_err(data_err)?;
            let bytes = std::fs::read(&bitstream)
                .map_err(|e| data_err(format!("{}: {e}", bitstream.display())))?;
            let decoded = decode_video(&codec, &bytes)?;
            let header = decoded.header.clone();
            let video = decoded.into_raw_video()?;
            save_raw_video(&video, &out).map_err(data_err)?;
            let summary = serde_json::json!({
                "output": out.display().to_string(),
                "frames": video.len(),
                "width": header.width,
                "height": header.height,
                "fps": header.fps,
            });
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        }
        Command::Eval { raw, recon, orig, bitstream } => {
            let recon_video = load_raw_video(&recon, raw.width, raw.height, raw.pix_fmt, raw.fps)
                .map_err(data_err)?;
            let orig_video = load_raw_video(&orig, raw.width, raw.height, raw.pix_fmt, raw.fps)
                .map_err(data_err)?;
            if recon_video.len() != orig_video.len() {
                return Err(data_err(format!(
                    "frame count mismatch: {} vs {}",
                    recon_video.len(),
                    orig_video.len()
                )));
            }
            let cfg = MsSsimConfig::auto_for(raw.height, raw.width, 5).map_err(data_err)?;
            let mut acc = 0.0;
            for (r, o) in recon_video.frames().iter().zip(orig_video.frames()) {
                acc += ms_ssim(o.data(), r.data(), &cfg).map_err(data_err)?;
            }
            let score = acc / recon_video.len() as f64;
            let total_bits = match bitstream {
                Some(path) => {
                    let len = std::fs::metadata(&path)
                        .map_err(|e| data_err(format!("{}: {e}", path.display())))?
                        .len();
                    8.0 * len as f64
                }
                None => 0.0,
            };
            let (rate_bpp, rate_mbps) =
                rates(total_bits, orig_video.len(), raw.height, raw.width, raw.fps);
            let record = RDRecord {
                rate_bpp,
                rate_mbps,
                msssim: score,
                msssim_db: msssim_db(score).map_err(data_err)?,
                config_label: String::new(),
                lambda_label: String::new(),
            };
            println!("{}", serde_json::to_string_pretty(&record).unwrap());
        }
        Command::Ablate { manifest, out } => {
            let text = std::fs::read_to_string(&manifest)
                .map_err(|e| data_err(format!("{}: {e}", manifest.display())))?;
            let spec = AblationManifest::from_json(&text).map_err(data_err)?;
            let report = run_ablation(&spec, &out).map_err(data_err)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
    }
    Ok(())
}
