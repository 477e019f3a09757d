//! The ablation runner: encode an evaluation set with every (mode, lambda)
//! checkpoint under one schedule configuration, emit RD curves, CSV/JSON
//! tables, an SVG plot and BD-rates against the residual baseline.

use std::collections::BTreeMap;
use std::path::Path;

use super::{bd_rate, msssim_db, rates, render_rd_svg, EvalError, RDCurve, RDRecord};
use crate::codec::{encode_video, Codec, CodecMode};
use crate::training::MsSsimConfig;
use crate::video::{build_schedule, load_raw_video, PixelFormat, RawVideo, ScheduleConfig};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalVideoSpec {
    pub path: String,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub pix_fmt: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScheduleSpec {
    pub config: String,
    pub intra_period: usize,
    pub gop_size: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointSpec {
    pub mode: String,
    pub lambda: f64,
    pub path: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationManifest {
    pub eval_videos: Vec<EvalVideoSpec>,
    pub schedule: ScheduleSpec,
    pub checkpoints: Vec<CheckpointSpec>,
}

impl AblationManifest {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Manifest(e.to_string()))
    }
}

/// One (mode, lambda) evaluation outcome. Absent checkpoints carry an error
/// string and no record.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ReportCell {
    pub mode: String,
    pub lambda: f64,
    pub record: Option<RDRecord>,
    pub error: Option<String>,
    /// Total MNet / CNet bits over the evaluation set.
    pub rate_motion_bits: f64,
    pub rate_texture_bits: f64,
    /// 8 x payload bytes actually written to the streams.
    pub payload_bits: f64,
    /// Per-sequence rows: (video path, bpp, mbps, msssim).
    pub per_sequence: Vec<(String, f64, f64, f64)>,
}

#[derive(Debug, serde::Serialize)]
pub struct AblationReport {
    pub cells: Vec<ReportCell>,
    pub curves: Vec<RDCurve>,
    /// (mode, bd-rate percent vs the residual baseline curve).
    pub bd_vs_residual: Vec<(String, f64)>,
}

fn load_eval_video(spec: &EvalVideoSpec) -> Result<RawVideo, EvalError> {
    let format =
        PixelFormat::parse(&spec.pix_fmt).map_err(|e| EvalError::Manifest(e.to_string()))?;
    load_raw_video(&spec.path, spec.width, spec.height, format, spec.fps)
        .map_err(|e| EvalError::Manifest(e.to_string()))
}

/// Mean MS-SSIM over all frames of the reconstruction against the original.
fn video_msssim(original: &RawVideo, recon_frames: &[crate::video::Frame]) -> f64 {
    let cfg = MsSsimConfig::auto_for(original.height(), original.width(), 5)
        .expect("eval videos are large enough for one scale");
    let mut acc = 0.0;
    for (orig, recon) in original.frames().iter().zip(recon_frames) {
        acc += crate::training::ms_ssim(orig.data(), recon.data(), &cfg)
            .expect("dims validated by auto config");
    }
    acc / original.len() as f64
}

/// Encode every manifest checkpoint over the evaluation set.
pub fn run_ablation(
    manifest: &AblationManifest,
    out_dir: &Path,
) -> Result<AblationReport, EvalError> {
    let schedule_config = ScheduleConfig::parse(&manifest.schedule.config)
        .ok_or_else(|| EvalError::Manifest(format!("bad schedule {}", manifest.schedule.config)))?;
    let videos: Vec<(String, RawVideo)> = manifest
        .eval_videos
        .iter()
        .map(|spec| Ok((spec.path.clone(), load_eval_video(spec)?)))
        .collect::<Result<_, EvalError>>()?;
    if videos.is_empty() {
        return Err(EvalError::Manifest("no eval videos".into()));
    }

    let mut cells = Vec::new();
    for ckpt in &manifest.checkpoints {
        cells.push(evaluate_cell(ckpt, &videos, schedule_config, &manifest.schedule));
    }

    // Curves per mode over lambda points.
    let mut by_mode: BTreeMap<String, Vec<RDRecord>> = BTreeMap::new();
    for cell in &cells {
        if let Some(rec) = &cell.record {
            by_mode.entry(cell.mode.clone()).or_default().push(rec.clone());
        }
    }
    let mut curves = Vec::new();
    for (mode, points) in &by_mode {
        if let Ok(curve) = RDCurve::new(mode.clone(), points.clone()) {
            curves.push(curve);
        }
    }

    let residual_label = CodecMode::Residual.label().to_string();
    let mut bd_vs_residual = Vec::new();
    if let Some(residual) = curves.iter().find(|c| c.label == residual_label) {
        for curve in &curves {
            if let Ok(bd) = bd_rate(residual, curve) {
                bd_vs_residual.push((curve.label.clone(), bd));
            }
        }
    }

    let report = AblationReport { cells, curves, bd_vs_residual };
    write_report(&report, out_dir)?;
    Ok(report)
}

fn evaluate_cell(
    ckpt: &CheckpointSpec,
    videos: &[(String, RawVideo)],
    schedule_config: ScheduleConfig,
    spec: &ScheduleSpec,
) -> ReportCell {
    let mut cell = ReportCell {
        mode: ckpt.mode.clone(),
        lambda: ckpt.lambda,
        record: None,
        error: None,
        rate_motion_bits: 0.0,
        rate_texture_bits: 0.0,
        payload_bits: 0.0,
        per_sequence: Vec::new(),
    };
    let codec = match Codec::load(&ckpt.path) {
        Ok(c) => c,
        Err(e) => {
            cell.error = Some(format!("checkpoint unavailable: {e}"));
            return cell;
        }
    };
    if codec.config.mode.label() != ckpt.mode {
        cell.error = Some(format!(
            "checkpoint mode {} does not match manifest {}",
            codec.config.mode, ckpt.mode
        ));
        return cell;
    }

    let mut total_bits = 0.0;
    let mut total_pixels = 0.0;
    let mut total_seconds = 0.0;
    let mut msssim_sum = 0.0;
    for (path, video) in videos {
        let schedule = match build_schedule(
            schedule_config,
            video.len(),
            spec.intra_period,
            spec.gop_size,
        ) {
            Ok(s) => s,
            Err(e) => {
                cell.error = Some(e.to_string());
                return cell;
            }
        };
        let encoded = match encode_video(&codec, video, &schedule) {
            Ok(e) => e,
            Err(e) => {
                cell.error = Some(e.to_string());
                return cell;
            }
        };
        // Reconstructions in display order from the encoder-side results.
        let mut recon: Vec<Option<crate::video::Frame>> = vec![None; video.len()];
        for (step, result) in schedule.steps.iter().zip(&encoded.results) {
            recon[step.display_index] = Some(result.reconstruction.clone());
        }
        let recon: Vec<crate::video::Frame> =
            recon.into_iter().map(|f| f.expect("schedule covers video")).collect();

        let bits = encoded.stats.total_bits();
        let msssim = video_msssim(video, &recon);
        let (bpp, mbps) = rates(bits, video.len(), video.height(), video.width(), video.fps());
        cell.per_sequence.push((path.clone(), bpp, mbps, msssim));
        cell.rate_motion_bits += encoded.stats.motion_bits();
        cell.rate_texture_bits += encoded.stats.texture_bits();
        let payload = crate::codec::stream_payload_bytes(&encoded.bytes)
            .expect("freshly encoded stream parses");
        cell.payload_bits += 8.0 * payload as f64;
        total_bits += bits;
        total_pixels += (video.len() * video.height() * video.width()) as f64;
        total_seconds += video.len() as f64 / video.fps();
        msssim_sum += msssim * video.len() as f64;
    }
    let n_total: usize = videos.iter().map(|(_, v)| v.len()).sum();
    let pooled_msssim = msssim_sum / n_total as f64;
    let pooled_bpp = total_bits / total_pixels;
    let pooled_mbps = total_bits / total_seconds / 1e6;
    match msssim_db(pooled_msssim) {
        Ok(db) => {
            cell.record = Some(RDRecord {
                rate_bpp: pooled_bpp,
                rate_mbps: pooled_mbps,
                msssim: pooled_msssim,
                msssim_db: db,
                config_label: ckpt.mode.clone(),
                lambda_label: format!("{}", ckpt.lambda),
            });
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

fn write_report(report: &AblationReport, out_dir: &Path) -> Result<(), EvalError> {
    let io_err = |source: std::io::Error, path: &Path| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(e, out_dir))?;

    let mut csv = String::from(
        "mode,lambda,rate_bpp,rate_mbps,msssim,msssim_db,r_m_bits,r_c_bits,payload_bits,status\n",
    );
    for cell in &report.cells {
        match &cell.record {
            Some(r) => csv.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.4},{},{},{},ok\n",
                cell.mode,
                cell.lambda,
                r.rate_bpp,
                r.rate_mbps,
                r.msssim,
                r.msssim_db,
                cell.rate_motion_bits,
                cell.rate_texture_bits,
                cell.payload_bits,
            )),
            None => csv.push_str(&format!(
                "{},{},,,,,,,,absent: {}\n",
                cell.mode,
                cell.lambda,
                cell.error.as_deref().unwrap_or("unknown")
            )),
        }
    }
    let path = out_dir.join("report.csv");
    std::fs::write(&path, csv).map_err(|e| io_err(e, &path))?;

    let mut per_seq = String::from("mode,lambda,video,rate_bpp,rate_mbps,msssim\n");
    for cell in &report.cells {
        for (video, bpp, mbps, msssim) in &cell.per_sequence {
            per_seq.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                cell.mode, cell.lambda, video, bpp, mbps, msssim
            ));
        }
    }
    let path = out_dir.join("per_sequence.csv");
    std::fs::write(&path, per_seq).map_err(|e| io_err(e, &path))?;

    let json = serde_json::to_string_pretty(report)
        .map_err(|e| EvalError::Manifest(e.to_string()))?;
    let path = out_dir.join("report.json");
    std::fs::write(&path, json).map_err(|e| io_err(e, &path))?;

    let curve_refs: Vec<&RDCurve> = report.curves.iter().collect();
    let svg = render_rd_svg(&curve_refs, "Ablation (pooled over the evaluation set)");
    let path = out_dir.join("curves.svg");
    std::fs::write(&path, svg).map_err(|e| io_err(e, &path))?;
    Ok(())
}
