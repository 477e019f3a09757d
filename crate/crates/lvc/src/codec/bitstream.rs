//! Bitstream format and video-level encode/decode.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! sequence header:
//!   magic "LVCB" | version u16 | mode u8 | schedule u8
//!   intra_period u32 | gop_size u32 | width u32 | height u32
//!   n_frames u32 | fps f64 | color_space u8 | checkpoint hash [32]
//! per frame (coding order):
//!   frame_type u8 | display_index u32
//!   | len(mnet_hyper) u32 | len(mnet_latent) u32
//!   | len(cnet_hyper) u32 | len(cnet_latent) u32
//!   | payload bytes in that order
//! ```
//!
//! The decoder is payload-driven: frames decode from their own headers, with
//! references looked up in the decoded-picture buffer. Reading a
//! reconstruction that has not been produced is an error, which enforces
//! reference causality at runtime. The buffer is evicted as soon as the
//! schedule no longer needs an entry.

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use super::{Codec, CodecError, CodecMode, FramePayloads, FrameResult};
use crate::autograd::Arr;
use crate::video::{
    build_schedule, validate_schedule, ColorSpace, FrameType, RawVideo, ScheduleConfig,
};

const MAGIC: &[u8; 4] = b"LVCB";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum BitstreamError {
    #[error("not a bitstream (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    BadVersion(u16),
    #[error("bitstream needs codec mode {want} but checkpoint is {got}")]
    ModeMismatch { want: CodecMode, got: CodecMode },
    #[error("checkpoint hash does not match the stream's sequence header")]
    ChecksumMismatch,
    #[error("schedule does not cover the video: {n_steps} steps for {n_frames} frames")]
    ScheduleMismatch { n_steps: usize, n_frames: usize },
    #[error("schedule is invalid: {0}")]
    InvalidSchedule(String),
    #[error("bitstream truncated while reading frame {frame_index}")]
    Truncated { frame_index: usize },
    #[error("corrupt sequence header field {0}")]
    BadHeader(&'static str),
    #[error("frame {frame_index}: reference {reference} not yet decoded")]
    MissingReference { frame_index: usize, reference: usize },
    #[error("frame {frame_index}: {source}")]
    Frame {
        frame_index: usize,
        #[source]
        source: CodecError,
    },
    #[error("decoded stream is missing display index {0}")]
    IncompleteVideo(usize),
}

/// Parsed sequence header.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceHeader {
    pub mode: CodecMode,
    pub schedule_config: ScheduleConfig,
    pub intra_period: usize,
    pub gop_size: usize,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub fps: f64,
    pub color_space: ColorSpace,
    pub checkpoint_hash: [u8; 32],
}

impl SequenceHeader {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        out.push(self.mode.tag());
        out.push(self.schedule_config.tag());
        out.extend_from_slice(&(self.intra_period as u32).to_be_bytes());
        out.extend_from_slice(&(self.gop_size as u32).to_be_bytes());
        out.extend_from_slice(&(self.width as u32).to_be_bytes());
        out.extend_from_slice(&(self.height as u32).to_be_bytes());
        out.extend_from_slice(&(self.n_frames as u32).to_be_bytes());
        out.extend_from_slice(&self.fps.to_bits().to_be_bytes());
        out.push(match self.color_space {
            ColorSpace::Rgb => 0,
            ColorSpace::Yuv444 => 1,
        });
        out.extend_from_slice(&self.checkpoint_hash);
    }

    pub fn parse(r: &mut Reader<'_>) -> Result<SequenceHeader, BitstreamError> {
        let magic = r.take(4).ok_or(BitstreamError::BadMagic)?;
        if magic != MAGIC {
            return Err(BitstreamError::BadMagic);
        }
        let version = u16::from_be_bytes(r.arr()?);
        if version != FORMAT_VERSION {
            return Err(BitstreamError::BadVersion(version));
        }
        let mode = CodecMode::from_tag(r.byte()?).ok_or(BitstreamError::BadHeader("mode"))?;
        let schedule_config = ScheduleConfig::from_tag(r.byte()?)
            .ok_or(BitstreamError::BadHeader("schedule"))?;
        let intra_period = u32::from_be_bytes(r.arr()?) as usize;
        let gop_size = u32::from_be_bytes(r.arr()?) as usize;
        let width = u32::from_be_bytes(r.arr()?) as usize;
        let height = u32::from_be_bytes(r.arr()?) as usize;
        let n_frames = u32::from_be_bytes(r.arr()?) as usize;
        let fps = f64::from_bits(u64::from_be_bytes(r.arr()?));
        let color_space = match r.byte()? {
            0 => ColorSpace::Rgb,
            1 => ColorSpace::Yuv444,
            _ => return Err(BitstreamError::BadHeader("color_space")),
        };
        let hash_slice = r.take(32).ok_or(BitstreamError::BadHeader("hash"))?;
        let mut checkpoint_hash = [0u8; 32];
        checkpoint_hash.copy_from_slice(hash_slice);
        Ok(SequenceHeader {
            mode,
            schedule_config,
            intra_period,
            gop_size,
            width,
            height,
            n_frames,
            fps,
            color_space,
            checkpoint_hash,
        })
    }
}

/// One frame's slice of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBitstream {
    pub frame_type: FrameType,
    pub display_index: usize,
    pub payloads: FramePayloads,
}

impl FrameBitstream {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.push(self.frame_type.tag());
        out.extend_from_slice(&(self.display_index as u32).to_be_bytes());
        for payload in [
            &self.payloads.mnet_hyper,
            &self.payloads.mnet_latent,
            &self.payloads.cnet_hyper,
            &self.payloads.cnet_latent,
        ] {
            out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payloads.mnet_hyper);
        out.extend_from_slice(&self.payloads.mnet_latent);
        out.extend_from_slice(&self.payloads.cnet_hyper);
        out.extend_from_slice(&self.payloads.cnet_latent);
    }

    pub fn byte_len(&self) -> usize {
        1 + 4 + 16 + self.payloads.total_bytes()
    }

    fn parse(r: &mut Reader<'_>, ordinal: usize) -> Result<FrameBitstream, BitstreamError> {
        let truncated = |_| BitstreamError::Truncated { frame_index: ordinal };
        let frame_type = FrameType::from_tag(r.byte().map_err(truncated)?)
            .ok_or(BitstreamError::BadHeader("frame_type"))?;
        let display_index = u32::from_be_bytes(r.arr().map_err(truncated)?) as usize;
        let named = |_| BitstreamError::Truncated { frame_index: display_index };
        let mut lens = [0usize; 4];
        for len in &mut lens {
            *len = u32::from_be_bytes(r.arr().map_err(named)?) as usize;
        }
        let mut read_payload = |len: usize| -> Result<Vec<u8>, BitstreamError> {
            r.take(len)
                .map(|s| s.to_vec())
                .ok_or(BitstreamError::Truncated { frame_index: display_index })
        };
        Ok(FrameBitstream {
            frame_type,
            display_index,
            payloads: FramePayloads {
                mnet_hyper: read_payload(lens[0])?,
                mnet_latent: read_payload(lens[1])?,
                cnet_hyper: read_payload(lens[2])?,
                cnet_latent: read_payload(lens[3])?,
            },
        })
    }
}

/// Byte cursor with bounds checking.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn byte(&mut self) -> Result<u8, BitstreamError> {
        self.take(1)
            .map(|s| s[0])
            .ok_or(BitstreamError::BadHeader("eof"))
    }

    fn arr<const N: usize>(&mut self) -> Result<[u8; N], BitstreamError> {
        let s = self.take(N).ok_or(BitstreamError::BadHeader("eof"))?;
        Ok(s.try_into().unwrap())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Per-frame rate statistics emitted alongside the stream.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VideoStats {
    pub frames: Vec<FrameStats>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FrameStats {
    pub display_index: usize,
    pub frame_type: FrameType,
    pub rate_motion_bits: f64,
    pub rate_texture_bits: f64,
}

impl VideoStats {
    pub fn total_bits(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| f.rate_motion_bits + f.rate_texture_bits)
            .sum()
    }

    pub fn motion_bits(&self) -> f64 {
        self.frames.iter().map(|f| f.rate_motion_bits).sum()
    }

    pub fn texture_bits(&self) -> f64 {
        self.frames.iter().map(|f| f.rate_texture_bits).sum()
    }
}

/// An encoded video: the stream plus encoder-side results and statistics.
pub struct EncodedVideo {
    pub bytes: Vec<u8>,
    pub stats: VideoStats,
    /// Encoder-side per-frame results, in coding order.
    pub results: Vec<FrameResult>,
}

/// Which display indices are still needed by steps at or after `from`.
fn needed_after(
    steps: &[crate::video::CodingStep],
    from: usize,
) -> std::collections::HashSet<usize> {
    steps[from..]
        .iter()
        .flat_map(|s| [s.past_ref, s.future_ref])
        .flatten()
        .collect()
}

/// Encode a video along a schedule. The decoded-frame buffer holds the
/// codec's own reconstructions, never originals.
pub fn encode_video(
    codec: &Codec,
    video: &RawVideo,
    schedule: &crate::video::CodingSchedule,
) -> Result<EncodedVideo, BitstreamError> {
    if schedule.n_frames() != video.len() {
        return Err(BitstreamError::ScheduleMismatch {
            n_steps: schedule.n_frames(),
            n_frames: video.len(),
        });
    }
    let violations = validate_schedule(schedule);
    if !violations.is_empty() {
        return Err(BitstreamError::InvalidSchedule(violations[0].to_string()));
    }

    let header = SequenceHeader {
        mode: codec.config.mode,
        schedule_config: schedule.config,
        intra_period: schedule.intra_period,
        gop_size: schedule.gop_size,
        width: video.width(),
        height: video.height(),
        n_frames: video.len(),
        fps: video.fps(),
        color_space: video.color_space(),
        checkpoint_hash: codec.store.content_hash(),
    };
    let mut bytes = Vec::new();
    header.write(&mut bytes);

    let mut buffer: HashMap<usize, Rc<Arr>> = HashMap::new();
    let mut stats = Vec::with_capacity(video.len());
    let mut results = Vec::with_capacity(video.len());
    for (pos, step) in schedule.steps.iter().enumerate() {
        let past = step.past_ref.map(|r| buffer.get(&r).expect("validated schedule"));
        let future = step.future_ref.map(|r| buffer.get(&r).expect("validated schedule"));
        let (result, payloads, recon) = codec
            .code_frame(
                &video.frames()[step.display_index],
                past,
                future,
                step.frame_type,
                None,
            )
            .map_err(|source| BitstreamError::Frame {
                frame_index: step.display_index,
                source,
            })?;
        FrameBitstream {
            frame_type: step.frame_type,
            display_index: step.display_index,
            payloads,
        }
        .write(&mut bytes);
        buffer.insert(step.display_index, recon);
        let needed = needed_after(&schedule.steps, pos + 1);
        buffer.retain(|k, _| needed.contains(k));
        stats.push(FrameStats {
            display_index: step.display_index,
            frame_type: step.frame_type,
            rate_motion_bits: result.rate_motion_bits,
            rate_texture_bits: result.rate_texture_bits,
        });
        results.push(result);
    }
    Ok(EncodedVideo {
        bytes,
        stats: VideoStats { frames: stats },
        results,
    })
}

/// Total payload bytes in a stream (headers excluded), for rate accounting
/// cross-checks.
pub fn stream_payload_bytes(bytes: &[u8]) -> Result<usize, BitstreamError> {
    let mut r = Reader::new(bytes);
    let _ = SequenceHeader::parse(&mut r)?;
    let mut total = 0usize;
    let mut ordinal = 0usize;
    while r.remaining() > 0 {
        let fb = FrameBitstream::parse(&mut r, ordinal)?;
        total += fb.payloads.total_bytes();
        ordinal += 1;
    }
    Ok(total)
}

/// A decoded stream: frames present, sorted by display index.
pub struct DecodedVideo {
    pub header: SequenceHeader,
    pub frames: Vec<(usize, crate::video::Frame)>,
}

impl DecodedVideo {
    /// All frames in display order; errors if any display index is missing.
    pub fn into_raw_video(self) -> Result<RawVideo, BitstreamError> {
        let mut slots: Vec<Option<crate::video::Frame>> = vec![None; self.header.n_frames];
        for (idx, frame) in self.frames {
            slots[idx] = Some(frame);
        }
        let mut frames = Vec::with_capacity(slots.len());
        for (idx, slot) in slots.into_iter().enumerate() {
            frames.push(slot.ok_or(BitstreamError::IncompleteVideo(idx))?);
        }
        Ok(RawVideo::new(frames, self.header.fps))
    }
}

/// Decode a stream with a loaded codec. The checkpoint hash in the sequence
/// header must match the codec parameters.
pub fn decode_video(codec: &Codec, bytes: &[u8]) -> Result<DecodedVideo, BitstreamError> {
    let mut r = Reader::new(bytes);
    let header = SequenceHeader::parse(&mut r)?;
    if header.mode != codec.config.mode {
        return Err(BitstreamError::ModeMismatch {
            want: header.mode,
            got: codec.config.mode,
        });
    }
    if header.checkpoint_hash != codec.store.content_hash() {
        return Err(BitstreamError::ChecksumMismatch);
    }

    // The schedule is reproducible from the header; used only for eviction.
    let schedule = build_schedule(
        header.schedule_config,
        header.n_frames,
        header.intra_period,
        header.gop_size,
    )
    .map_err(|e| BitstreamError::InvalidSchedule(e.to_string()))?;

    let mut buffer: HashMap<usize, Rc<Arr>> = HashMap::new();
    let mut frames = Vec::new();
    let mut ordinal = 0usize;
    while r.remaining() > 0 && ordinal < header.n_frames {
        let fb = FrameBitstream::parse(&mut r, ordinal)?;
        let lookup = |reference: Option<usize>| -> Result<Option<&Rc<Arr>>, BitstreamError> {
            match reference {
                None => Ok(None),
                Some(idx) => buffer
                    .get(&idx)
                    .map(Some)
                    .ok_or(BitstreamError::MissingReference {
                        frame_index: fb.display_index,
                        reference: idx,
                    }),
            }
        };
        let step = schedule
            .steps
            .iter()
            .position(|s| s.display_index == fb.display_index);
        let (past_ref, future_ref) = match step {
            Some(pos) => (
                schedule.steps[pos].past_ref,
                schedule.steps[pos].future_ref,
            ),
            None => (None, None),
        };
        let past = lookup(past_ref)?;
        let future = lookup(future_ref)?;
        let (frame, recon) = codec
            .decode_frame(
                &fb.payloads,
                fb.frame_type,
                past,
                future,
                (header.height, header.width),
                header.color_space,
            )
            .map_err(|source| BitstreamError::Frame {
                frame_index: fb.display_index,
                source,
            })?;
        buffer.insert(fb.display_index, recon);
        if let Some(pos) = step {
            let needed = needed_after(&schedule.steps, pos + 1);
            buffer.retain(|k, _| needed.contains(k));
        }
        frames.push((fb.display_index, frame));
        ordinal += 1;
    }
    frames.sort_by_key(|(idx, _)| *idx);
    Ok(DecodedVideo { header, frames })
}
