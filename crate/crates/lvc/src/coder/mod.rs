//! The conditional-coding stack: transforms, quantization gains, entropy
//! model and range coder, plus parameter storage and checkpoints.

pub mod entropy;
pub mod params;
pub mod quant;
pub mod range;
pub mod transforms;

pub use entropy::{gaussian_bits, rate_estimate, SymbolTable, CDF_PRECISION, SIGMA_MIN};
pub use params::{CheckpointError, CheckpointManifest, ParamBinding, ParamId, ParamStore};
pub use quant::{quantize_with_gains, GainPair, QuantError, QuantGains, QuantizeMode};
pub use range::{
    decode_gaussian_symbols, encode_gaussian_symbols, RangeCodingError, RangeDecoder,
    RangeEncoder, STREAM_FLUSH_BYTES,
};
pub use transforms::{ArchConfig, CondCoder, CondCoderLayout, DecoderNet, EncoderNet};
