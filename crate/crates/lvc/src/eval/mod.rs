//! Metrics aggregation: rate-quality records, dB-scale MS-SSIM, BD-rate and
//! the ablation runner.

mod ablation;
mod bdrate;
mod svg;

pub use ablation::{
    run_ablation, AblationManifest, AblationReport, CheckpointSpec, EvalVideoSpec, ReportCell,
    ScheduleSpec,
};
pub use bdrate::bd_rate;
pub use svg::render_rd_svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ms-ssim {0} outside [0, 1]")]
    BadMsSsim(f64),
    #[error("an RD curve needs at least 2 points with finite quality, got {0}")]
    TooFewPoints(usize),
    #[error("curve rates must be strictly increasing (found {0} after {1})")]
    NonIncreasingRates(f64, f64),
    #[error("no overlapping quality range between the curves")]
    NoOverlap,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

/// MS-SSIM in dB: `-10 * log10(1 - msssim)`. A score of exactly 1 maps to
/// the positive infinity sentinel.
pub fn msssim_db(msssim: f64) -> Result<f64, EvalError> {
    if !(0.0..=1.0).contains(&msssim) {
        return Err(EvalError::BadMsSsim(msssim));
    }
    if msssim == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * (1.0 - msssim).log10())
}

/// Normalize a bit count to bits-per-pixel and Mbit/s.
pub fn rates(total_bits: f64, n_frames: usize, h: usize, w: usize, fps: f64) -> (f64, f64) {
    let bpp = total_bits / (n_frames as f64 * h as f64 * w as f64);
    let mbps = total_bits * fps / (n_frames as f64 * 1e6);
    (bpp, mbps)
}

/// One rate-quality measurement.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RDRecord {
    pub rate_bpp: f64,
    pub rate_mbps: f64,
    pub msssim: f64,
    pub msssim_db: f64,
    pub config_label: String,
    pub lambda_label: String,
}

impl RDRecord {
    pub fn new(
        total_bits: f64,
        n_frames: usize,
        h: usize,
        w: usize,
        fps: f64,
        msssim: f64,
        config_label: impl Into<String>,
        lambda_label: impl Into<String>,
    ) -> Result<RDRecord, EvalError> {
        let (rate_bpp, rate_mbps) = rates(total_bits, n_frames, h, w, fps);
        Ok(RDRecord {
            rate_bpp,
            rate_mbps,
            msssim,
            msssim_db: msssim_db(msssim)?,
            config_label: config_label.into(),
            lambda_label: lambda_label.into(),
        })
    }
}

/// An RD curve: records ordered by ascending rate, strictly increasing.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RDCurve {
    pub points: Vec<RDRecord>,
    pub label: String,
}

impl RDCurve {
    /// Sort by rate and validate the curve invariants.
    pub fn new(label: impl Into<String>, mut points: Vec<RDRecord>) -> Result<RDCurve, EvalError> {
        points.sort_by(|a, b| a.rate_bpp.total_cmp(&b.rate_bpp));
        let finite = points.iter().filter(|p| p.msssim_db.is_finite()).count();
        if finite < 2 {
            return Err(EvalError::TooFewPoints(finite));
        }
        for w in points.windows(2) {
            if w[1].rate_bpp <= w[0].rate_bpp {
                return Err(EvalError::NonIncreasingRates(w[1].rate_bpp, w[0].rate_bpp));
            }
        }
        Ok(RDCurve { points, label: label.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msssim_db_formula_values() {
        assert_eq!(msssim_db(0.9).unwrap(), 10.0);
        assert_eq!(msssim_db(0.0).unwrap(), 0.0);
        let v = msssim_db(0.99).unwrap();
        assert!((v - 20.0).abs() < 1e-12, "got {v}");
        assert!(msssim_db(1.0).unwrap().is_infinite());
        assert!(msssim_db(1.5).is_err());
        assert!(msssim_db(-0.1).is_err());
    }

    #[test]
    fn msssim_db_is_strictly_increasing() {
        let mut prev = msssim_db(0.0).unwrap();
        for i in 1..100 {
            let v = msssim_db(i as f64 / 100.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn rate_normalization_arithmetic() {
        // 1e5 bits over 10 frames of 100x100 at 10 fps is 1 bpp; the same
        // stream carries 1e5 bits per second, i.e. 0.1 Mbit/s.
        let (bpp, mbps) = rates(1e5, 10, 100, 100, 10.0);
        assert_eq!(bpp, 1.0);
        assert_eq!(mbps, 0.1);
        // 1e6 bits at the same settings: 1 Mbit/s.
        let (_, mbps1) = rates(1e6, 10, 100, 100, 10.0);
        assert_eq!(mbps1, 1.0);
        let (bpp0, mbps0) = rates(0.0, 10, 100, 100, 10.0);
        assert_eq!((bpp0, mbps0), (0.0, 0.0));
        // Doubling fps doubles Mbit/s and leaves bpp unchanged.
        let (bpp2, mbps2) = rates(1e5, 10, 100, 100, 20.0);
        assert_eq!(bpp2, bpp);
        assert_eq!(mbps2, 2.0 * mbps);
    }

    #[test]
    fn curves_sort_and_enforce_strict_rates() {
        let mk = |bpp: f64, m: f64| RDRecord {
            rate_bpp: bpp,
            rate_mbps: bpp * 2.0,
            msssim: m,
            msssim_db: msssim_db(m).unwrap(),
            config_label: "x".into(),
            lambda_label: "l".into(),
        };
        let c = RDCurve::new("c", vec![mk(0.4, 0.95), mk(0.1, 0.8), mk(0.2, 0.9)]).unwrap();
        assert_eq!(c.points[0].rate_bpp, 0.1);
        assert_eq!(c.points[2].rate_bpp, 0.4);
        assert!(RDCurve::new("dup", vec![mk(0.1, 0.8), mk(0.1, 0.9)]).is_err());
        assert!(RDCurve::new("single", vec![mk(0.1, 0.8)]).is_err());
    }
}
