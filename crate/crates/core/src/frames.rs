//! Mask sequences on disk: a directory of `frame_%06d.pgm|png` images
//! (gray > 127 is foreground) or a packed FMSK stream.
//!
//! FMSK layout: `"FMSK"`, then width, height and frame count as u32
//! little-endian, then each frame's bits MSB-first, row-major, every row
//! padded to a whole byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::mask::FrameMask;

pub const FOREGROUND_THRESHOLD: u8 = 127;
const MAGIC: &[u8; 4] = b"FMSK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    fn ext(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

pub fn frame_file_name(index: u64, format: ImageFormat) -> String {
    format!("frame_{index:06}.{}", format.ext())
}

fn parse_frame_name(name: &str) -> Option<u64> {
    let stem = name.strip_prefix("frame_")?;
    let (num, ext) = stem.split_once('.')?;
    if !matches!(ext.to_ascii_lowercase().as_str(), "pgm" | "png") || num.len() < 6 {
        return None;
    }
    num.parse().ok()
}

/// Reads one grayscale image and thresholds it.
pub fn read_frame_image(path: &Path, index: u64) -> Result<FrameMask> {
    let bad = |reason: String| Error::Frame {
        path: path.to_path_buf(),
        reason,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| bad(e.to_string()))?
        .to_luma8();
    FrameMask::from_gray(
        img.width(),
        img.height(),
        index,
        img.as_raw(),
        FOREGROUND_THRESHOLD,
    )
    .map_err(|e| bad(e.to_string()))
}

pub fn write_frame_image(path: &Path, mask: &FrameMask, format: ImageFormat) -> Result<()> {
    let gray: Vec<u8> = mask
        .pixels
        .iter()
        .map(|&p| if p != 0 { 255 } else { 0 })
        .collect();
    match format {
        ImageFormat::Pgm => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            write!(w, "P5\n{} {}\n255\n", mask.width, mask.height)
                .and_then(|_| w.write_all(&gray))
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path, e))
        }
        ImageFormat::Png => {
            let img: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(mask.width, mask.height, gray)
                    .expect("buffer matches mask size");
            img.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| Error::Frame {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })
        }
    }
}

/// Where a mask sequence comes from.
#[derive(Debug, Clone)]
pub enum FrameSource {
    /// Image files in frame order, with their indices.
    Images(Vec<(u64, PathBuf)>),
    /// A packed FMSK file.
    Packed(PathBuf),
}

impl FrameSource {
    /// A directory of frame images or a single FMSK file. Frame numbers in
    /// a directory must run without gaps from the first one.
    pub fn open(path: &Path) -> Result<Self> {
        if path.is_file() {
            return Ok(FrameSource::Packed(path.to_path_buf()));
        }
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let mut frames = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let name = entry.file_name();
            if let Some(i) = name.to_str().and_then(parse_frame_name) {
                frames.push((i, entry.path()));
            }
        }
        frames.sort();
        if frames.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no frame_NNNNNN.pgm/png files in {}",
                path.display()
            )));
        }
        let first = frames[0].0;
        for (k, (i, p)) in frames.iter().enumerate() {
            let expected = first + k as u64;
            if *i < expected {
                return Err(Error::Frame {
                    path: p.clone(),
                    reason: format!("duplicate frame {i}"),
                });
            }
            if *i > expected {
                return Err(Error::MissingFrame(expected));
            }
        }
        Ok(FrameSource::Images(frames))
    }

    /// Frames in order. Read errors surface as the iterator reaches them.
    pub fn frames(&self) -> Result<Box<dyn Iterator<Item = Result<FrameMask>> + Send + '_>> {
        match self {
            FrameSource::Images(list) => {
                Ok(Box::new(list.iter().map(|(i, p)| read_frame_image(p, *i))))
            }
            FrameSource::Packed(path) => Ok(Box::new(PackedReader::open(path)?)),
        }
    }

    pub fn len(&self) -> Result<u64> {
        match self {
            FrameSource::Images(list) => Ok(list.len() as u64),
            FrameSource::Packed(path) => Ok(PackedReader::open(path)?.count),
        }
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }
}

/// Streaming FMSK reader.
pub struct PackedReader {
    input: BufReader<File>,
    pub width: u32,
    pub height: u32,
    pub count: u64,
    next: u64,
}

impl PackedReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut header = [0u8; 16];
        input.read_exact(&mut header).map_err(|_| Error::Frame {
            path: path.to_path_buf(),
            reason: "truncated FMSK header".into(),
        })?;
        if &header[..4] != MAGIC {
            return Err(Error::Frame {
                path: path.to_path_buf(),
                reason: "not an FMSK file".into(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        Ok(PackedReader {
            input,
            width: word(4),
            height: word(8),
            count: word(12) as u64,
            next: 0,
        })
    }

    fn row_bytes(&self) -> usize {
        (self.width as usize).div_ceil(8)
    }
}

impl Iterator for PackedReader {
    type Item = Result<FrameMask>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let mut buf = vec![0u8; self.row_bytes() * self.height as usize];
        if self.input.read_exact(&mut buf).is_err() {
            self.next = self.count;
            return Some(Err(Error::MissingFrame(index)));
        }
        Some(Ok(unpack(&buf, self.width, self.height, index)))
    }
}

fn unpack(buf: &[u8], width: u32, height: u32, index: u64) -> FrameMask {
    let rb = (width as usize).div_ceil(8);
    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height as usize {
        for x in 0..width as usize {
            pixels.push((buf[y * rb + x / 8] >> (7 - x % 8)) & 1);
        }
    }
    FrameMask {
        width,
        height,
        frame_index: index,
        pixels,
    }
}

pub fn write_packed<W: Write>(mut out: W, masks: &[FrameMask]) -> std::io::Result<()> {
    let (w, h) = masks.first().map_or((0, 0), |m| (m.width, m.height));
    out.write_all(MAGIC)?;
    out.write_all(&w.to_le_bytes())?;
    out.write_all(&h.to_le_bytes())?;
    out.write_all(&(masks.len() as u32).to_le_bytes())?;
    let rb = (w as usize).div_ceil(8);
    for m in masks {
        assert_eq!(
            (m.width, m.height),
            (w, h),
            "all frames must share one size"
        );
        let mut buf = vec![0u8; rb * h as usize];
        for y in 0..h as usize {
            for x in 0..w as usize {
                if m.pixels[y * w as usize + x] != 0 {
                    buf[y * rb + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

/// Writes a sequence as FMSK (`path` ending in `.fmsk`) or as images in a
/// directory.
pub fn save_masks(path: &Path, masks: &[FrameMask], format: Option<ImageFormat>) -> Result<()> {
    match format {
        None => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            write_packed(BufWriter::new(f), masks).map_err(|e| Error::io(path, e))
        }
        Some(fmt) => {
            std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            for m in masks {
                write_frame_image(&path.join(frame_file_name(m.frame_index, fmt)), m, fmt)?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(index: u64) -> FrameMask {
        let mut m = FrameMask::empty(13, 5, index);
        for (x, y) in [(0, 0), (7, 1), (8, 1), (12, 4), (3, 2)] {
            m.set(x, y, index.is_multiple_of(2) || x > 5);
        }
        m
    }

    #[test]
    fn packed_round_trip() {
        let masks: Vec<FrameMask> = (0..3).map(sample).collect();
        let mut buf = Vec::new();
        write_packed(&mut buf, &masks).unwrap();
        assert_eq!(buf.len(), 16 + 3 * 2 * 5);
        assert_eq!(&buf[..4], b"FMSK");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fmsk");
        std::fs::write(&p, &buf).unwrap();
        let back: Vec<FrameMask> = PackedReader::open(&p)
            .unwrap()
            .map(Result::unwrap)
            .collect();
        assert_eq!(back, masks);
    }

    #[test]
    fn truncated_packed_reports_frame() {
        let masks: Vec<FrameMask> = (0..3).map(sample).collect();
        let mut buf = Vec::new();
        write_packed(&mut buf, &masks).unwrap();
        buf.truncate(buf.len() - 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fmsk");
        std::fs::write(&p, &buf).unwrap();
        let out: Vec<Result<FrameMask>> = PackedReader::open(&p).unwrap().collect();
        assert!(matches!(out[2], Err(Error::MissingFrame(2))));
    }

    #[test]
    fn image_dirs_round_trip() {
        for fmt in [ImageFormat::Pgm, ImageFormat::Png] {
            let dir = tempfile::tempdir().unwrap();
            let masks: Vec<FrameMask> = (0..3).map(sample).collect();
            save_masks(dir.path(), &masks, Some(fmt)).unwrap();
            let src = FrameSource::open(dir.path()).unwrap();
            assert_eq!(src.len().unwrap(), 3);
            let back: Vec<FrameMask> = src.frames().unwrap().map(Result::unwrap).collect();
            assert_eq!(back, masks);
        }
    }

    #[test]
    fn gap_is_missing_frame() {
        let dir = tempfile::tempdir().unwrap();
        for i in [0, 1, 3] {
            write_frame_image(
                &dir.path().join(frame_file_name(i, ImageFormat::Pgm)),
                &sample(i),
                ImageFormat::Pgm,
            )
            .unwrap();
        }
        assert!(matches!(
            FrameSource::open(dir.path()),
            Err(Error::MissingFrame(2))
        ));
    }

    #[test]
    fn corrupt_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_image(
            &dir.path().join("frame_000000.pgm"),
            &sample(0),
            ImageFormat::Pgm,
        )
        .unwrap();
        let bad = dir.path().join("frame_000001.pgm");
        std::fs::write(&bad, b"P5\n13 5\n255\nxx").unwrap();
        let src = FrameSource::open(dir.path()).unwrap();
        let out: Vec<Result<FrameMask>> = src.frames().unwrap().collect();
        match &out[1] {
            Err(Error::Frame { path, .. }) => assert_eq!(path, &bad),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn threshold_is_strict() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frame_000000.pgm");
        std::fs::write(
            &p,
            [b"P5\n3 1\n255\n".as_slice(), &[127, 128, 255]].concat(),
        )
        .unwrap();
        let m = read_frame_image(&p, 0).unwrap();
        assert_eq!(m.pixels, vec![0, 1, 1]);
    }
}
