//! Clip decoding. Two sources are supported so the pipeline has no codec
//! dependency: directories of numbered image files, and uncompressed
//! YUV4MPEG2 (`.y4m`) streams.

use crate::error::{Error, Result};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

/// An 8-bit RGB frame, pixel-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbFrame {
    /// `data` is `height * width * 3` interleaved RGB bytes.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "RGB frame needs {}x{}x3 = {} bytes, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    /// Grayscale frame expanded to RGB (r = g = b = y).
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "gray frame needs {} bytes, got {}",
                height * width,
                gray.len()
            )));
        }
        let mut data = Vec::with_capacity(gray.len() * 3);
        for &y in gray {
            data.extend_from_slice(&[y, y, y]);
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, r: usize, c: usize) -> (u8, u8, u8) {
        let i = (r * self.width + c) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }
}

/// Decodes a clip into presentation-ordered RGB frames.
///
/// `path` may be a directory of image files (ordered by the first integer in
/// each file name, then lexically) or a `.y4m` file. Clips with fewer than
/// `min_frames` frames are rejected.
pub fn decode_video(path: &Path, min_frames: usize) -> Result<Vec<RgbFrame>> {
    let frames = if path.is_dir() {
        decode_image_dir(path)?
    } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")) {
        decode_y4m(path)?
    } else {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            msg: "unsupported clip source (expected an image directory or a .y4m file)".into(),
        });
    };
    if frames.is_empty() {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            msg: "zero frames".into(),
        });
    }
    if frames.len() < min_frames {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            msg: format!(
                "insufficient frames: got {}, need at least {min_frames}",
                frames.len()
            ),
        });
    }
    Ok(frames)
}

const IMAGE_EXTS: &[&str] = &["png", "jpg", "jpeg", "pgm", "ppm", "pnm", "bmp"];

fn decode_image_dir(dir: &Path) -> Result<Vec<RgbFrame>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    entries.sort_by_key(|p| frame_sort_key(p));

    let mut frames = Vec::with_capacity(entries.len());
    for p in entries {
        let img = image::open(&p).map_err(|e| Error::Decode {
            path: p.clone(),
            msg: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        frames.push(RgbFrame::new(
            rgb.height() as usize,
            rgb.width() as usize,
            rgb.into_raw(),
        )?);
    }
    Ok(frames)
}

/// Numeric-aware ordering: `frame9.png` sorts before `frame10.png`.
fn frame_sort_key(p: &Path) -> (u64, String) {
    let name = p
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let digits: String = name.chars().filter(|c| c.is_ascii_digit()).collect();
    (digits.parse::<u64>().unwrap_or(u64::MAX), name)
}

/// Minimal YUV4MPEG2 reader. Only the luma plane is kept; chroma is skipped
/// according to the declared colorspace. Frames come back as gray RGB.
fn decode_y4m(path: &Path) -> Result<Vec<RgbFrame>> {
    let bad = |msg: &str| Error::Decode {
        path: path.to_path_buf(),
        msg: msg.into(),
    };
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;

    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing stream header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| bad("stream header is not ASCII"))?;
    if !header.starts_with("YUV4MPEG2") {
        return Err(bad("not a YUV4MPEG2 stream"));
    }

    let mut width = 0usize;
    let mut height = 0usize;
    let mut colorspace = "420".to_string();
    for tok in header.split_ascii_whitespace().skip(1) {
        match tok.as_bytes().first() {
            Some(b'W') => width = tok[1..].parse().map_err(|_| bad("bad W token"))?,
            Some(b'H') => height = tok[1..].parse().map_err(|_| bad("bad H token"))?,
            Some(b'C') => colorspace = tok[1..].to_string(),
            _ => {}
        }
    }
    if width == 0 || height == 0 {
        return Err(bad("missing frame dimensions"));
    }
    let luma_len = width * height;
    let chroma_len = if colorspace.starts_with("420") {
        luma_len / 2
    } else if colorspace.starts_with("422") {
        luma_len
    } else if colorspace.starts_with("444") {
        luma_len * 2
    } else if colorspace.starts_with("mono") {
        0
    } else {
        return Err(bad(&format!("unsupported colorspace C{colorspace}")));
    };

    let mut frames = Vec::new();
    let mut pos = header_end + 1;
    while pos < bytes.len() {
        let line_end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| bad("truncated frame header"))?;
        if !bytes[pos..].starts_with(b"FRAME") {
            return Err(bad("expected FRAME marker"));
        }
        let data_start = line_end + 1;
        let data_end = data_start + luma_len + chroma_len;
        if data_end > bytes.len() {
            return Err(bad("truncated frame payload"));
        }
        frames.push(RgbFrame::from_gray(
            height,
            width,
            &bytes[data_start..data_start + luma_len],
        )?);
        pos = data_end;
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn image_dir_in_numeric_order() {
        let dir = tempfile::tempdir().unwrap();
        // Deliberately unpadded names: 2 must come before 10.
        for (i, v) in [(1u32, 10u8), (2, 20), (10, 30)] {
            let img = image::GrayImage::from_pixel(8, 8, image::Luma([v]));
            img.save(dir.path().join(format!("f{i}.png"))).unwrap();
        }
        let frames = decode_video(dir.path(), 1).unwrap();
        assert_eq!(frames.len(), 3);
        let lumas: Vec<u8> = frames.iter().map(|f| f.pixel(0, 0).0).collect();
        assert_eq!(lumas, vec![10, 20, 30]);
    }

    #[test]
    fn empty_dir_is_zero_frames() {
        let dir = tempfile::tempdir().unwrap();
        let err = decode_video(dir.path(), 1).unwrap_err().to_string();
        assert!(err.contains("zero frames"), "{err}");
    }

    #[test]
    fn short_clip_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..7 {
            let img = image::GrayImage::from_pixel(4, 4, image::Luma([i as u8]));
            img.save(dir.path().join(format!("{i:03}.png"))).unwrap();
        }
        let err = decode_video(dir.path(), 10).unwrap_err().to_string();
        assert!(err.contains("insufficient frames"), "{err}");
        assert!(decode_video(dir.path(), 7).is_ok());
    }

    #[test]
    fn y4m_mono_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.y4m");
        let mut f = std::fs::File::create(&path).unwrap();
        write!(f, "YUV4MPEG2 W4 H2 F25:1 Ip A1:1 Cmono\n").unwrap();
        for frame in 0..3u8 {
            write!(f, "FRAME\n").unwrap();
            f.write_all(&[frame; 8]).unwrap();
        }
        drop(f);
        let frames = decode_video(&path, 3).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[1].pixel(1, 3), (1, 1, 1));
        assert_eq!(frames[2].height(), 2);
        assert_eq!(frames[2].width(), 4);
    }

    #[test]
    fn y4m_420_skips_chroma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.y4m");
        let mut f = std::fs::File::create(&path).unwrap();
        write!(f, "YUV4MPEG2 W4 H4 F30:1 C420jpeg\n").unwrap();
        for frame in 0..2u8 {
            write!(f, "FRAME\n").unwrap();
            f.write_all(&[frame * 100; 16]).unwrap(); // Y
            f.write_all(&[128u8; 8]).unwrap(); // U+V at quarter size
        }
        drop(f);
        let frames = decode_video(&path, 2).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].pixel(3, 3), (100, 100, 100));
    }
}
