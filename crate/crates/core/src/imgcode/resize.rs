use serde::{Deserialize, Serialize};

use super::{ByteplotImage, ImageError};
use crate::par;

/// Network-facing image: `resolution × resolution × 3` floats in `[-1, 1]`,
/// stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub resolution: usize,
    pub values: Vec<f32>,
}

impl ModelInput {
    pub const CHANNELS: usize = 3;

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-output-sample source taps: (first source index, weights).
fn axis_weights(n: usize, m: usize) -> Vec<(usize, Vec<f64>)> {
    if n >= m {
        // area average over the source interval covered by each output cell
        let scale = n as f64 / m as f64;
        (0..m)
            .map(|i| {
                let lo = i as f64 * scale;
                let hi = lo + scale;
                let start = lo.floor() as usize;
                let end = (hi.ceil() as usize).min(n);
                let w = (start..end)
                    .map(|j| {
                        let overlap = hi.min(j as f64 + 1.0) - lo.max(j as f64);
                        overlap.max(0.0) / scale
                    })
                    .collect();
                (start, w)
            })
            .collect()
    } else {
        // bilinear, pixel centres aligned
        let scale = n as f64 / m as f64;
        (0..m)
            .map(|i| {
                let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
                let j0 = c.floor() as usize;
                let f = c - j0 as f64;
                if j0 + 1 < n && f > 0.0 {
                    (j0, vec![1.0 - f, f])
                } else {
                    (j0, vec![1.0])
                }
            })
            .collect()
    }
}

fn resample_with<F>(get: F, w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let wx = axis_weights(w, out_w);
    let wy = axis_weights(h, out_h);
    let rows: Vec<Vec<f64>> = par::map_range(h, |y| {
        wx.iter()
            .map(|(start, ws)| {
                ws.iter()
                    .enumerate()
                    .map(|(k, &wt)| wt * get(y, start + k))
                    .sum()
            })
            .collect()
    });
    let mut out = vec![0.0; out_w * out_h];
    for (oy, (start, ws)) in wy.iter().enumerate() {
        let dst = &mut out[oy * out_w..(oy + 1) * out_w];
        for (k, &wt) in ws.iter().enumerate() {
            for (d, s) in dst.iter_mut().zip(&rows[start + k]) {
                *d += wt * s;
            }
        }
    }
    out
}

/// Resamples a single-channel `w × h` plane to `out_w × out_h`: area
/// averaging along axes that shrink, bilinear along axes that grow.
pub fn resample_plane(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    assert_eq!(src.len(), w * h, "plane size mismatch");
    resample_with(|y, x| src[y * w + x], w, h, out_w, out_h)
}

/// Resizes to `resolution × resolution`, replicates greyscale to three
/// channels and maps `[0, 255]` onto `[-1, 1]`.
pub fn resize_normalize(img: &ByteplotImage, resolution: usize) -> Result<ModelInput, ImageError> {
    if resolution < 8 || !resolution.is_power_of_two() {
        return Err(ImageError::InvalidResolution(resolution));
    }
    if img.width == 0 || img.height == 0 || img.pixels.len() != img.width * img.height * img.channels
    {
        return Err(ImageError::Corrupt("pixel buffer size mismatch".into()));
    }
    let ch = img.channels;
    let planes: Vec<Vec<f64>> = (0..ch)
        .map(|c| {
            resample_with(
                |y, x| img.pixels[(y * img.width + x) * ch + c] as f64,
                img.width,
                img.height,
                resolution,
                resolution,
            )
        })
        .collect();
    let mut values = Vec::with_capacity(resolution * resolution * 3);
    for i in 0..resolution * resolution {
        for c in 0..3 {
            let v = planes[if ch == 1 { 0 } else { c }][i];
            values.push(((v / 127.5 - 1.0) as f32).clamp(-1.0, 1.0));
        }
    }
    Ok(ModelInput { resolution, values })
}
