//! Dev probe: evaluate checkpoints on a fixed held-out synthetic set.

use lvc::training::{evaluate_rd, synthetic_dataset, LossConfig, SyntheticSpec};
use lvc::Codec;

fn main() {
    let spec = SyntheticSpec {
        n_frames: 10,
        height: 64,
        width: 64,
        max_speed: 1.5,
        fps: 25.0,
    };
    let eval_seed: u64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(424242);
    let eval_clips = synthetic_dataset(&spec, 4, eval_seed);
    let cfg = LossConfig::auto(2.0, 64, 64).unwrap();
    for path in std::env::args().skip(2) {
        let codec = Codec::load(&path).unwrap();
        let rd = evaluate_rd(&codec, &eval_clips, &cfg).unwrap();
        println!("{path}: eval RD = {rd:.4}");
    }
}
