//! A toy-scale learned video codec built around two conditional
//! autoencoders: one transmits motion (flows, prediction weights and a
//! pixel-wise Skip/texture mode selection), the other transmits texture
//! conditioned on the motion-compensated prediction. Every frame type (I, P,
//! B) runs the same pipeline with unavailable references zeroed.
//!
//! The crate covers the full loop: raw video ingestion, GOP scheduling for
//! All Intra / Low-delay P / Random Access, differentiable rate-distortion
//! training against MS-SSIM, real range-coded bitstreams that decode
//! bit-exactly, and an evaluation kit (RD curves, BD-rate, ablations).

pub mod autograd;
pub mod codec;
pub mod coder;
pub mod eval;
pub mod motion;
pub mod training;
pub mod video;

pub use codec::{Codec, CodecConfig, CodecError, CodecMode};
pub use video::{Frame, FrameType, RawVideo};
