//! Deterministic pixel-statistics embedders used when no model server is
//! attached.

use crate::pixels::{luma, ImagePixels};

/// 4x4x4 RGB histogram with bins of width 64, l1-normalized.
/// Component index is `16 * r_bin + 4 * g_bin + b_bin`.
pub fn color_histogram64(image: &ImagePixels) -> Vec<f32> {
    let mut counts = [0u64; 64];
    for [r, g, b] in image.pixels() {
        let idx = usize::from(r / 64) * 16 + usize::from(g / 64) * 4 + usize::from(b / 64);
        counts[idx] += 1;
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| (c as f64 / total as f64) as f32)
        .collect()
}

/// Mean BT.601 luma (scaled to `[0, 1]`) of each cell of an 8x8 grid,
/// row-major. Pixel `(x, y)` belongs to cell `(8x / w, 8y / h)`; cells that
/// receive no pixel (images narrower than 8) are 0.
pub fn grid_intensity64(image: &ImagePixels) -> Vec<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut sums = [0f64; 64];
    let mut counts = [0u64; 64];
    for y in 0..h {
        let row = y * 8 / h;
        for x in 0..w {
            let col = x * 8 / w;
            sums[row * 8 + col] += image.luminance(x as u32, y as u32) / 255.0;
            counts[row * 8 + col] += 1;
        }
    }
    sums.iter()
        .zip(counts)
        .map(|(&s, c)| if c == 0 { 0.0 } else { (s / c as f64) as f32 })
        .collect()
}

/// Magnitude-weighted histogram of Sobel gradient directions over 36 bins of
/// 10 degrees, l1-normalized. Directions are `atan2(gy, gx)` with y pointing
/// down the image, mapped to `[0, 360)`. Border pixels are skipped; an image
/// without gradient yields the zero vector.
pub fn edge_orientation36(image: &ImagePixels) -> Vec<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut hist = [0f64; 36];
    if w < 3 || h < 3 {
        return vec![0.0; 36];
    }
    let lum: Vec<f64> = image.pixels().map(luma).collect();
    let at = |x: usize, y: usize| lum[y * w + x];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let deg = gy.atan2(gx).to_degrees().rem_euclid(360.0);
            let bin = ((deg / 10.0).floor() as usize) % 36;
            hist[bin] += mag;
        }
    }
    let total: f64 = hist.iter().sum();
    if total == 0.0 {
        return vec![0.0; 36];
    }
    hist.iter().map(|&v| (v / total) as f32).collect()
}
