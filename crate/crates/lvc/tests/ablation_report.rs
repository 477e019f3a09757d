//! End-to-end ablation runner check: four modes x three checkpoints each,
//! report files on disk, rate accounting cross-checked against the streams.

use lvc::codec::{Codec, CodecConfig, CodecMode};
use lvc::coder::transforms::ArchConfig;
use lvc::eval::{run_ablation, AblationManifest, CheckpointSpec, EvalVideoSpec, ScheduleSpec};
use lvc::training::{synthetic_clip, SyntheticSpec};
use lvc::video::save_raw_video;

fn unique_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "lvc_{tag}_{}_{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn ablation_report_is_complete_and_consistent() {
    let dir = unique_dir("ablation");

    // Two small evaluation sequences.
    let spec = SyntheticSpec { n_frames: 5, ..Default::default() };
    let mut eval_videos = Vec::new();
    for seed in [1u64, 2] {
        let clip = synthetic_clip(&spec, seed);
        let path = dir.join(format!("eval{seed}.rgb"));
        save_raw_video(&clip, &path).unwrap();
        eval_videos.push(EvalVideoSpec {
            path: path.display().to_string(),
            width: 64,
            height: 64,
            fps: 25.0,
            pix_fmt: "rgb24".into(),
        });
    }

    // Three differently-seeded checkpoints per mode stand in for a lambda
    // sweep; their rates differ, which is all the curve machinery needs.
    let mut checkpoints = Vec::new();
    for mode in CodecMode::all() {
        for (i, lambda) in [0.5, 2.0, 8.0].into_iter().enumerate() {
            let codec = Codec::new(
                CodecConfig::for_mode(mode),
                ArchConfig::desk(),
                1000 + 17 * mode.tag() as u64 + i as u64,
            )
            .unwrap();
            let path = dir.join(format!("ckpt_{mode}_{i}.lvck"));
            codec.save(&path).unwrap();
            checkpoints.push(CheckpointSpec {
                mode: mode.label().into(),
                lambda,
                path: path.display().to_string(),
            });
        }
    }
    // One missing checkpoint: the report must mark the cell and continue.
    checkpoints.push(CheckpointSpec {
        mode: "aivc".into(),
        lambda: 99.0,
        path: dir.join("missing.lvck").display().to_string(),
    });

    let manifest = AblationManifest {
        eval_videos,
        schedule: ScheduleSpec { config: "ra".into(), intra_period: 4, gop_size: 4 },
        checkpoints,
    };
    let out = dir.join("report");
    let report = run_ablation(&manifest, &out).unwrap();

    assert_eq!(report.cells.len(), 13);
    let absent: Vec<_> = report.cells.iter().filter(|c| c.record.is_none()).collect();
    assert_eq!(absent.len(), 1);
    assert!(absent[0].error.as_deref().unwrap().contains("checkpoint unavailable"));

    // Rate accounting: reported per-net bits sum to the stream payloads.
    for cell in report.cells.iter().filter(|c| c.record.is_some()) {
        assert_eq!(
            cell.rate_motion_bits + cell.rate_texture_bits,
            cell.payload_bits,
            "{} lambda {}",
            cell.mode,
            cell.lambda
        );
        assert_eq!(cell.per_sequence.len(), 2);
    }

    // Residual vs residual BD-rate is zero.
    let res = report
        .bd_vs_residual
        .iter()
        .find(|(m, _)| m == "residual")
        .expect("residual baseline present");
    assert!(res.1.abs() < 1e-9, "residual vs residual: {}", res.1);

    for file in ["report.csv", "per_sequence.csv", "report.json", "curves.svg"] {
        let path = out.join(file);
        assert!(path.exists(), "{file} missing");
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }

    std::fs::remove_dir_all(&dir).ok();
}
