//! Blob extraction: 8-connected labeling followed by a PCA ellipse fit per
//! component.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mask::{FrameMask, LabelImage};
use crate::types::{axis, Ellipse, Observation};

/// Default speckle rejection threshold, in pixels.
pub const DEFAULT_MIN_BLOB_AREA: usize = 20;

/// Semi-axis scale applied to the square roots of the covariance eigenvalues
/// (a 2-sigma ellipse).
pub const AXIS_SCALE: f64 = 2.0;

/// Blobs found in one frame, with the label image used to isolate them.
#[derive(Debug, Clone)]
pub struct Detections {
    pub observations: Vec<Observation>,
    pub labels: LabelImage,
}

/// Maximal 8-connected foreground components with at least `min_blob_area`
/// pixels, ordered by their topmost-then-leftmost pixel.
pub fn label_components(mask: &FrameMask, min_blob_area: usize) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || mask.pixels[start] == 0 {
            continue;
        }
        // Row-major scan: the first unseen pixel is the component's
        // topmost-then-leftmost one.
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            comp.push((x as u32, y as u32));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.pixels[j] != 0 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if comp.len() >= min_blob_area.max(1) {
            out.push(comp);
        }
    }
    out
}

/// Centroid of pixel centers, rounded once from the exact mean.
pub fn centroid(pixels: &[(u32, u32)]) -> (f64, f64) {
    let n = pixels.len() as u64;
    let (sx, sy) = pixels.iter().fold((0u64, 0u64), |(sx, sy), &(x, y)| {
        (sx + x as u64, sy + y as u64)
    });
    let den = (2 * n) as f64;
    ((2 * sx + n) as f64 / den, (2 * sy + n) as f64 / den)
}

/// Fits an ellipse to a pixel set by principal component analysis of the
/// pixel-center coordinates.
///
/// Semi-axes are `AXIS_SCALE * sqrt(eigenvalue)`. Collinear pixel sets have
/// no second principal direction; they get `a` equal to half the pixel span
/// along the line and `b = 0.5`.
pub fn fit_ellipse_pca(component: &[(u32, u32)]) -> Result<Ellipse> {
    if component.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit an empty component".into(),
        ));
    }
    let (cx, cy) = centroid(component);
    // Moments in integers, so the shape does not depend on where the
    // component sits.
    let (x0, y0) = component
        .iter()
        .fold((u32::MAX, u32::MAX), |(a, b), &(x, y)| (a.min(x), b.min(y)));
    let (mut s1x, mut s1y, mut s2x, mut s2y, mut s2xy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for &(x, y) in component {
        let (x, y) = ((x - x0) as i128, (y - y0) as i128);
        s1x += x;
        s1y += y;
        s2x += x * x;
        s2y += y * y;
        s2xy += x * y;
    }
    let k = component.len() as i128;
    let n2 = (k * k) as f64;
    let sxx = (k * s2x - s1x * s1x) as f64 / n2;
    let syy = (k * s2y - s1y * s1y) as f64 / n2;
    let sxy = (k * s2xy - s1x * s1y) as f64 / n2;

    let half_trace = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let l1 = half_trace + disc;
    let l2 = (half_trace - disc).max(0.0);
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let delta = axis(theta.to_degrees());

    if l2 <= 1e-9 * l1.max(1e-12) {
        let (c, s) = (theta.cos(), theta.sin());
        let (mx, my) = (s1x as f64 / k as f64, s1y as f64 / k as f64);
        let (lo, hi) = component
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &(x, y)| {
                let p = ((x - x0) as f64 - mx) * c + ((y - y0) as f64 - my) * s;
                (lo.min(p), hi.max(p))
            });
        let a = (0.5 * (hi - lo + 1.0)).max(0.5);
        return Ellipse::new(cx, cy, a, 0.5, delta);
    }

    let a = AXIS_SCALE * l1.sqrt();
    let b = (AXIS_SCALE * l2.sqrt()).max(0.5);
    Ellipse::new(cx, cy, a.max(b), b, delta)
}

/// Labels the mask and fits one observation per component; blob ids follow
/// labeling order.
pub fn detect(mask: &FrameMask, min_blob_area: usize) -> Result<Detections> {
    let components = label_components(mask, min_blob_area);
    let labels = LabelImage::from_components(mask.width, mask.height, &components);
    let observations = components
        .into_iter()
        .enumerate()
        .map(|(blob_id, pixels)| {
            let ellipse = fit_ellipse_pca(&pixels)?;
            Ok(Observation {
                x: ellipse.cx,
                y: ellipse.cy,
                ellipse,
                pixel_count: pixels.len(),
                blob_id,
                pixels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Detections {
        observations,
        labels,
    })
}
