//! 8-bit PPM/PGM and 32-bit PFM frames. Channel `c` of a 3-channel tensor is
//! R, G, B in that order; 1-channel tensors use the greyscale variants.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Dims, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    /// `P6` (RGB) or `P5` (grey), 8 bits, values scaled from [0, 1].
    Ppm,
    /// `PF` (RGB) or `Pf` (grey), little-endian floats, bottom row first.
    Pfm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Ppm => "ppm",
            FrameFormat::Pfm => "pfm",
        }
    }
}

fn check_channels(c: usize) -> Result<()> {
    if c != 1 && c != 3 {
        return Err(Error::Format(format!("frames need 1 or 3 channels, got {c}")));
    }
    Ok(())
}

/// Round half away from zero, clamped to 0..=255.
fn to_byte(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(v: &VideoTensor, frame: usize) -> Result<Vec<u8>> {
    let d = v.dims();
    check_channels(d.channels)?;
    let magic = if d.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", d.width, d.height).into_bytes();
    for y in 0..d.height {
        for x in 0..d.width {
            for c in 0..d.channels {
                out.push(to_byte(v.get(frame, c, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn encode_pfm(v: &VideoTensor, frame: usize) -> Result<Vec<u8>> {
    let d = v.dims();
    check_channels(d.channels)?;
    let magic = if d.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", d.width, d.height).into_bytes();
    for y in (0..d.height).rev() {
        for x in 0..d.width {
            for c in 0..d.channels {
                out.extend_from_slice(&v.get(frame, c, y, x).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Splits `count` whitespace-separated header tokens off the front of
/// `bytes`, skipping `#` comments, and returns them with the payload that
/// follows the single whitespace byte after the last token.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, &[u8])> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated image header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(Error::Format("image has no payload".into()));
    }
    Ok((tokens, &bytes[i + 1..]))
}

fn parse_size(t: &[String]) -> Result<(usize, usize)> {
    let p = |s: &String| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Format(format!("bad image size '{s}'")))
    };
    Ok((p(&t[1])?, p(&t[2])?))
}

/// One frame as a `1 × C × H × W` tensor.
pub fn decode_ppm(bytes: &[u8]) -> Result<VideoTensor> {
    let (t, payload) = header_tokens(bytes, 4)?;
    let channels = match t[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(Error::Format(format!("unsupported PPM magic '{m}'"))),
    };
    let (w, h) = parse_size(&t)?;
    if t[3] != "255" {
        return Err(Error::Format(format!("only 8-bit PPM is supported (maxval {})", t[3])));
    }
    if payload.len() != w * h * channels {
        return Err(Error::Format(format!(
            "PPM payload has {} bytes, expected {}",
            payload.len(),
            w * h * channels
        )));
    }
    let dims = Dims::new(1, channels, h, w);
    Ok(VideoTensor::from_fn(dims, |_, c, y, x| {
        payload[(y * w + x) * channels + c] as f32 / 255.0
    }))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<VideoTensor> {
    let (t, payload) = header_tokens(bytes, 4)?;
    let channels = match t[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(Error::Format(format!("unsupported PFM magic '{m}'"))),
    };
    let (w, h) = parse_size(&t)?;
    let scale: f64 = t[3]
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale '{}'", t[3])))?;
    let big_endian = scale > 0.0;
    if payload.len() != w * h * channels * 4 {
        return Err(Error::Format(format!(
            "PFM payload has {} bytes, expected {}",
            payload.len(),
            w * h * channels * 4
        )));
    }
    let dims = Dims::new(1, channels, h, w);
    let mut data = vec![0.0f32; dims.len()];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if big_endian { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) };
        let c = k % channels;
        let px = k / channels;
        let (row, x) = (px / w, px % w);
        let y = h - 1 - row;
        data[(c * h + y) * w + x] = v;
    }
    VideoTensor::new(dims, data)
}

fn frame_path(dir: &Path, i: usize, fmt: FrameFormat) -> PathBuf {
    dir.join(format!("frame_{i:04}.{}", fmt.extension()))
}

/// Writes `frame_0000.ext`, `frame_0001.ext`, ... into `dir`.
pub fn write_frames(dir: &Path, v: &VideoTensor, fmt: FrameFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..v.dims().frames)
        .map(|i| {
            let bytes = match fmt {
                FrameFormat::Ppm => encode_ppm(v, i)?,
                FrameFormat::Pfm => encode_pfm(v, i)?,
            };
            let p = frame_path(dir, i, fmt);
            super::write_atomic(&p, &bytes)?;
            Ok(p)
        })
        .collect()
}

/// Reads every `.ppm`/`.pgm`/`.pfm` file of `dir` in file-name order.
pub fn read_frames(dir: &Path) -> Result<VideoTensor> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("pgm") | Some("pfm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format(format!("no frames in {}", dir.display())));
    }
    let frames = paths
        .iter()
        .map(|p| {
            let bytes = super::read_bytes(p)?;
            if p.extension().and_then(|e| e.to_str()) == Some("pfm") {
                decode_pfm(&bytes)
            } else {
                decode_ppm(&bytes)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    VideoTensor::concat_frames(&frames)
}
