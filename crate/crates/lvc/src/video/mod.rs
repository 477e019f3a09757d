//! Video data model: frames, raw sequences and frame types.

mod raw;
mod schedule;

pub use raw::{load_raw_video, save_raw_video, upsample_chroma, PixelFormat, VideoIoError};
pub use schedule::{
    build_schedule, validate_schedule, CodingSchedule, CodingStep, ScheduleConfig, ScheduleError,
    ScheduleViolation,
};

use crate::autograd::Arr;

/// Color space tag for a [`Frame`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ColorSpace {
    Rgb,
    Yuv444,
}

/// Frame type: I uses no references, P one past reference, B one past and
/// one future reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FrameType {
    I,
    P,
    B,
}

impl FrameType {
    pub fn tag(self) -> u8 {
        match self {
            FrameType::I => 0,
            FrameType::P => 1,
            FrameType::B => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FrameType::I),
            1 => Some(FrameType::P),
            2 => Some(FrameType::B),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            FrameType::I => 'I',
            FrameType::P => 'P',
            FrameType::B => 'B',
        }
    }

    /// Index into per-frame-type parameter tables.
    pub fn index(self) -> usize {
        match self {
            FrameType::I => 0,
            FrameType::P => 1,
            FrameType::B => 2,
        }
    }
}

impl std::fmt::Display for FrameType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A single 3×H×W frame with values in `[0, 1]`, clamped at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    data: Arr,
    color_space: ColorSpace,
}

pub const MIN_FRAME_DIM: usize = 16;

impl Frame {
    /// Build a frame, clamping values into `[0, 1]`.
    ///
    /// Panics if the tensor is not 3-channel or smaller than 16×16.
    pub fn new(mut data: Arr, color_space: ColorSpace) -> Self {
        let (c, h, w) = data.dim();
        assert_eq!(c, 3, "Frame expects 3 channels, got {c}");
        assert!(
            h >= MIN_FRAME_DIM && w >= MIN_FRAME_DIM,
            "Frame dims {h}x{w} below minimum {MIN_FRAME_DIM}"
        );
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Frame { data, color_space }
    }

    pub fn data(&self) -> &Arr {
        &self.data
    }

    pub fn into_data(self) -> Arr {
        self.data
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// An ordered frame sequence with a frame rate.
#[derive(Clone, Debug)]
pub struct RawVideo {
    frames: Vec<Frame>,
    fps: f64,
}

impl RawVideo {
    /// Panics if frames disagree on shape/color space or `fps <= 0`.
    pub fn new(frames: Vec<Frame>, fps: f64) -> Self {
        assert!(fps > 0.0, "fps must be positive");
        assert!(!frames.is_empty(), "RawVideo needs at least one frame");
        let (h, w, cs) = (frames[0].height(), frames[0].width(), frames[0].color_space());
        for f in &frames {
            assert_eq!((f.height(), f.width(), f.color_space()), (h, w, cs));
        }
        RawVideo { frames, fps }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn color_space(&self) -> ColorSpace {
        self.frames[0].color_space()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_clamps_values_at_construction() {
        let mut data = Arr::zeros((3, 16, 16));
        data[(0, 0, 0)] = 1.5;
        data[(1, 2, 3)] = -0.25;
        let f = Frame::new(data, ColorSpace::Rgb);
        assert_eq!(f.data()[(0, 0, 0)], 1.0);
        assert_eq!(f.data()[(1, 2, 3)], 0.0);
    }

    #[test]
    #[should_panic]
    fn frame_rejects_small_dims() {
        let _ = Frame::new(Arr::zeros((3, 8, 16)), ColorSpace::Rgb);
    }
}
