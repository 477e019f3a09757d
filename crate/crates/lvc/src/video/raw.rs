//! Headerless raw video ingestion (rgb24, yuv420p) and chroma upsampling.

use std::path::Path;

use ndarray::{s, Array2};
use thiserror::Error;

use super::{ColorSpace, Frame, RawVideo};
use crate::autograd::Arr;

#[derive(Debug, Error)]
pub enum VideoIoError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "file size {size} is not a multiple of the {frame_bytes}-byte frame \
         ({width}x{height} {format:?}); {trailing} trailing bytes start at offset {offset}"
    )]
    TruncatedFile {
        size: usize,
        frame_bytes: usize,
        width: usize,
        height: usize,
        format: PixelFormat,
        trailing: usize,
        offset: usize,
    },
    #[error("empty input file {path}")]
    EmptyFile { path: String },
    #[error("unknown pixel format \"{0}\"")]
    UnknownFormat(String),
    #[error("chroma plane {got_h}x{got_w} does not match target {want_h}x{want_w} (expected half resolution)")]
    ChromaDims {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("target dims {0}x{1} must be even for 4:2:0 upsampling")]
    OddTarget(usize, usize),
}

/// Supported raw pixel formats: 8-bit packed RGB and planar YUV 4:2:0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PixelFormat {
    Rgb24,
    Yuv420p8,
}

impl PixelFormat {
    pub fn parse(s: &str) -> Result<Self, VideoIoError> {
        match s {
            "rgb24" => Ok(PixelFormat::Rgb24),
            "yuv420p" | "yuv420p8" => Ok(PixelFormat::Yuv420p8),
            other => Err(VideoIoError::UnknownFormat(other.to_string())),
        }
    }

    pub fn frame_bytes(self, width: usize, height: usize) -> usize {
        match self {
            PixelFormat::Rgb24 => 3 * width * height,
            PixelFormat::Yuv420p8 => width * height + 2 * ((width / 2) * (height / 2)),
        }
    }
}

/// Bilinearly upsample half-resolution chroma planes to `height`×`width`.
///
/// Chroma samples are co-sited with the top-left luma sample of each 2×2
/// block, so the source coordinate of output pixel `(i, j)` is `(i/2, j/2)`,
/// sampled with border clamp.
pub fn upsample_chroma(
    u_plane: &Array2<f64>,
    v_plane: &Array2<f64>,
    height: usize,
    width: usize,
) -> Result<(Array2<f64>, Array2<f64>), VideoIoError> {
    if height % 2 != 0 || width % 2 != 0 {
        return Err(VideoIoError::OddTarget(height, width));
    }
    let (ch, cw) = (height / 2, width / 2);
    for plane in [u_plane, v_plane] {
        let (gh, gw) = plane.dim();
        if (gh, gw) != (ch, cw) {
            return Err(VideoIoError::ChromaDims {
                got_h: gh,
                got_w: gw,
                want_h: height,
                want_w: width,
            });
        }
    }
    Ok((
        bilinear_upsample2(u_plane, height, width),
        bilinear_upsample2(v_plane, height, width),
    ))
}

fn bilinear_upsample2(plane: &Array2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (sh, sw) = plane.dim();
    let mut out = Array2::<f64>::zeros((height, width));
    for i in 0..height {
        let y = (i as f64 / 2.0).min((sh - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = y - y0 as f64;
        for j in 0..width {
            let x = (j as f64 / 2.0).min((sw - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = x - x0 as f64;
            out[(i, j)] = (1.0 - fy) * ((1.0 - fx) * plane[(y0, x0)] + fx * plane[(y0, x1)])
                + fy * ((1.0 - fx) * plane[(y1, x0)] + fx * plane[(y1, x1)]);
        }
    }
    out
}

/// Load a headerless raw video file. Samples are normalized to `[0, 1]` by
/// dividing by 255; 4:2:0 chroma is bilinearly upsampled to 4:4:4.
pub fn load_raw_video(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    format: PixelFormat,
    fps: f64,
) -> Result<RawVideo, VideoIoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| VideoIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_raw_bytes(&bytes, width, height, format, fps).map_err(|e| match e {
        VideoIoError::EmptyFile { .. } => VideoIoError::EmptyFile {
            path: path.display().to_string(),
        },
        other => other,
    })
}

/// Decode raw bytes; see [`load_raw_video`].
pub fn decode_raw_bytes(
    bytes: &[u8],
    width: usize,
    height: usize,
    format: PixelFormat,
    fps: f64,
) -> Result<RawVideo, VideoIoError> {
    let frame_bytes = format.frame_bytes(width, height);
    if bytes.is_empty() {
        return Err(VideoIoError::EmptyFile { path: String::new() });
    }
    if bytes.len() % frame_bytes != 0 {
        let trailing = bytes.len() % frame_bytes;
        return Err(VideoIoError::TruncatedFile {
            size: bytes.len(),
            frame_bytes,
            width,
            height,
            format,
            trailing,
            offset: bytes.len() - trailing,
        });
    }
    let n_frames = bytes.len() / frame_bytes;
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let chunk = &bytes[f * frame_bytes..(f + 1) * frame_bytes];
        frames.push(decode_frame(chunk, width, height, format)?);
    }
    Ok(RawVideo::new(frames, fps))
}

fn decode_frame(
    chunk: &[u8],
    width: usize,
    height: usize,
    format: PixelFormat,
) -> Result<Frame, VideoIoError> {
    match format {
        PixelFormat::Rgb24 => {
            let mut data = Arr::zeros((3, height, width));
            for i in 0..height {
                for j in 0..width {
                    let base = 3 * (i * width + j);
                    for c in 0..3 {
                        data[(c, i, j)] = chunk[base + c] as f64 / 255.0;
                    }
                }
            }
            Ok(Frame::new(data, ColorSpace::Rgb))
        }
        PixelFormat::Yuv420p8 => {
            let (ch, cw) = (height / 2, width / 2);
            let y_len = width * height;
            let c_len = ch * cw;
            let y = Array2::from_shape_fn((height, width), |(i, j)| {
                chunk[i * width + j] as f64 / 255.0
            });
            let u = Array2::from_shape_fn((ch, cw), |(i, j)| {
                chunk[y_len + i * cw + j] as f64 / 255.0
            });
            let v = Array2::from_shape_fn((ch, cw), |(i, j)| {
                chunk[y_len + c_len + i * cw + j] as f64 / 255.0
            });
            let (u_full, v_full) = upsample_chroma(&u, &v, height, width)?;
            let mut data = Arr::zeros((3, height, width));
            data.slice_mut(s![0, .., ..]).assign(&y);
            data.slice_mut(s![1, .., ..]).assign(&u_full);
            data.slice_mut(s![2, .., ..]).assign(&v_full);
            Ok(Frame::new(data, ColorSpace::Yuv444))
        }
    }
}

/// Serialize a video to headerless 8-bit bytes: packed rgb24 for RGB content,
/// planar yuv444p for YUV content.
pub fn save_raw_video(video: &RawVideo, path: impl AsRef<Path>) -> Result<(), VideoIoError> {
    let path = path.as_ref();
    let bytes = encode_raw_bytes(video);
    std::fs::write(path, bytes).map_err(|source| VideoIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// See [`save_raw_video`].
pub fn encode_raw_bytes(video: &RawVideo) -> Vec<u8> {
    let (h, w) = (video.height(), video.width());
    let mut out = Vec::with_capacity(video.len() * 3 * h * w);
    for frame in video.frames() {
        match video.color_space() {
            ColorSpace::Rgb => {
                for i in 0..h {
                    for j in 0..w {
                        for c in 0..3 {
                            out.push(to_u8(frame.data()[(c, i, j)]));
                        }
                    }
                }
            }
            ColorSpace::Yuv444 => {
                for c in 0..3 {
                    for i in 0..h {
                        for j in 0..w {
                            out.push(to_u8(frame.data()[(c, i, j)]));
                        }
                    }
                }
            }
        }
    }
    out
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_plane_upsamples_to_constant() {
        let u = Array2::from_elem((8, 8), 0.5);
        let v = Array2::from_elem((8, 8), 0.25);
        let (uu, vv) = upsample_chroma(&u, &v, 16, 16).unwrap();
        assert!(uu.iter().all(|&x| x == 0.5));
        assert!(vv.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn single_sample_upsamples_to_constant() {
        let p = Array2::from_elem((1, 1), 0.7);
        let (uu, _) = upsample_chroma(&p, &p, 2, 2).unwrap();
        assert!(uu.iter().all(|&x| x == 0.7));
    }

    #[test]
    fn two_by_two_matches_direct_interpolation_oracle() {
        let plane = array![[0.0, 1.0], [0.0, 1.0]];
        let (up, _) = upsample_chroma(&plane, &plane, 4, 4).unwrap();
        // Independent oracle: evaluate the bilinear interpolant directly at
        // each output coordinate (source coordinate j/2, border-clamped).
        let clamp = |x: f64, hi: f64| x.min(hi).max(0.0);
        for i in 0..4 {
            for j in 0..4 {
                let y = clamp(i as f64 / 2.0, 1.0);
                let x = clamp(j as f64 / 2.0, 1.0);
                let (y0, x0) = (y.floor(), x.floor());
                let (y1, x1) = ((y0 + 1.0).min(1.0), (x0 + 1.0).min(1.0));
                let (fy, fx) = (y - y0, x - x0);
                let sample = |yy: f64, xx: f64| plane[(yy as usize, xx as usize)];
                let want = (1.0 - fy) * ((1.0 - fx) * sample(y0, x0) + fx * sample(y0, x1))
                    + fy * ((1.0 - fx) * sample(y1, x0) + fx * sample(y1, x1));
                assert!((up[(i, j)] - want).abs() < 1e-15, "mismatch at ({i},{j})");
            }
        }
        // Spot values for the first row: interpolation of [0, 1] at 4 sites.
        assert_eq!(up[(0, 0)], 0.0);
        assert_eq!(up[(0, 1)], 0.5);
        assert_eq!(up[(0, 2)], 1.0);
        assert_eq!(up[(0, 3)], 1.0);
    }

    #[test]
    fn upsample_never_exceeds_input_range() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let plane = Array2::from_shape_fn((6, 7), |_| rng.random::<f64>());
        let (lo, hi) = plane.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
        let (up, _) = upsample_chroma(&plane, &plane, 12, 14).unwrap();
        assert!(up.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn rejects_mismatched_chroma_dims() {
        let p = Array2::zeros((4, 4));
        assert!(matches!(
            upsample_chroma(&p, &p, 16, 16),
            Err(VideoIoError::ChromaDims { .. })
        ));
    }

    #[test]
    fn rgb24_all_zero_bytes() {
        let bytes = vec![0u8; 2 * 3 * 16 * 16];
        let video = decode_raw_bytes(&bytes, 16, 16, PixelFormat::Rgb24, 25.0).unwrap();
        assert_eq!(video.len(), 2);
        assert!(video.frames()[0].data().iter().all(|&v| v == 0.0));
        assert!(video.frames()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn yuv420_constant_planes_survive_upsampling() {
        let bytes = vec![128u8; PixelFormat::Yuv420p8.frame_bytes(16, 16)];
        let video = decode_raw_bytes(&bytes, 16, 16, PixelFormat::Yuv420p8, 30.0).unwrap();
        assert_eq!(video.len(), 1);
        let want = 128.0 / 255.0;
        assert!(video.frames()[0]
            .data()
            .iter()
            .all(|&v| (v - want).abs() < 1e-15));
        assert_eq!(video.color_space(), ColorSpace::Yuv444);
    }

    #[test]
    fn non_multiple_size_is_an_ingestion_error() {
        let bytes = vec![0u8; 3 * 16 * 16 + 7];
        let err = decode_raw_bytes(&bytes, 16, 16, PixelFormat::Rgb24, 25.0).unwrap_err();
        match err {
            VideoIoError::TruncatedFile { offset, trailing, .. } => {
                assert_eq!(trailing, 7);
                assert_eq!(offset, 3 * 16 * 16);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rgb_ingestion_is_lossless() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let bytes: Vec<u8> = (0..3 * 16 * 16 * 3).map(|_| rng.random()).collect();
        let video = decode_raw_bytes(&bytes, 16, 16, PixelFormat::Rgb24, 24.0).unwrap();
        assert_eq!(encode_raw_bytes(&video), bytes);
    }
}
