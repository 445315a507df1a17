//! Binary foreground frames and read-only views over them.

use crate::error::{Error, Result};

/// A binary foreground image: 1 marks fish pixels, 0 background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    pub width: u32,
    pub height: u32,
    pub frame_index: u64,
    /// Row-major, one byte per pixel, values 0 or 1.
    pub pixels: Vec<u8>,
}

impl FrameMask {
    pub fn new(width: u32, height: u32, frame_index: u64, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "mask buffer holds {} pixels, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        let pixels = pixels.into_iter().map(|p| (p != 0) as u8).collect();
        Ok(FrameMask {
            width,
            height,
            frame_index,
            pixels,
        })
    }

    pub fn empty(width: u32, height: u32, frame_index: u64) -> Self {
        FrameMask {
            width,
            height,
            frame_index,
            pixels: vec![0; width as usize * height as usize],
        }
    }

    /// Global threshold of an 8-bit grayscale buffer: `value > threshold`
    /// becomes foreground.
    pub fn from_gray(
        width: u32,
        height: u32,
        frame_index: u64,
        gray: &[u8],
        threshold: u8,
    ) -> Result<Self> {
        let pixels = gray.iter().map(|&g| (g > threshold) as u8).collect();
        FrameMask::new(width, height, frame_index, pixels)
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.pixels[self.index(x, y)] != 0
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = self.index(x, y);
        self.pixels[i] = on as u8;
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }
}

/// Anything that answers "is this pixel foreground?".
pub trait Foreground: Sync {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    fn is_foreground(&self, x: u32, y: u32) -> bool;
}

impl Foreground for FrameMask {
    fn width(&self) -> u32 {
        self.width
    }
    fn height(&self) -> u32 {
        self.height
    }
    #[inline]
    fn is_foreground(&self, x: u32, y: u32) -> bool {
        self.get(x, y)
    }
}

/// Per-pixel blob labels: 0 is background, `k + 1` belongs to blob `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
}

impl LabelImage {
    pub fn from_components(width: u32, height: u32, components: &[Vec<(u32, u32)>]) -> Self {
        let mut labels = vec![0u32; width as usize * height as usize];
        for (k, comp) in components.iter().enumerate() {
            for &(x, y) in comp {
                labels[y as usize * width as usize + x as usize] = k as u32 + 1;
            }
        }
        LabelImage {
            width,
            height,
            labels,
        }
    }

    /// Blob id at a pixel, if any.
    #[inline]
    pub fn blob_at(&self, x: u32, y: u32) -> Option<usize> {
        match self.labels[y as usize * self.width as usize + x as usize] {
            0 => None,
            l => Some(l as usize - 1),
        }
    }

    /// A view where only the listed blobs are foreground; every other blob
    /// is erased to background.
    pub fn isolate<'a>(&'a self, blob_ids: &'a [usize]) -> BlobView<'a> {
        BlobView {
            labels: self,
            blob_ids,
        }
    }
}

/// Foreground restricted to a subset of labeled blobs.
#[derive(Debug, Clone, Copy)]
pub struct BlobView<'a> {
    labels: &'a LabelImage,
    blob_ids: &'a [usize],
}

impl Foreground for BlobView<'_> {
    fn width(&self) -> u32 {
        self.labels.width
    }
    fn height(&self) -> u32 {
        self.labels.height
    }
    #[inline]
    fn is_foreground(&self, x: u32, y: u32) -> bool {
        match self.labels.blob_at(x, y) {
            Some(id) => self.blob_ids.contains(&id),
            None => false,
        }
    }
}
