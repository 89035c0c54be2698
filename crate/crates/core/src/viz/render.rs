use serde::{Deserialize, Serialize};

use super::RgbImage;
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    /// Black at zero, white at full magnitude.
    Grayscale,
    /// White at zero, red for positive, blue for negative.
    #[default]
    Signed,
    /// Black, red, yellow, white with increasing magnitude.
    Hot,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the largest magnitude.
    #[default]
    AbsMax,
    /// Divide by the `q`-th percentile of magnitudes (nearest rank) and clamp.
    PercentileClip { q: f32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Upsample {
    #[default]
    None,
    Nearest {
        factor: usize,
    },
    Bilinear {
        factor: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub colormap: Colormap,
    pub normalization: Normalization,
    pub upsample: Upsample,
}

/// Collapses channels to one signed value per pixel by keeping the entry with
/// the largest magnitude (first channel on ties). Returns `(h, w, values)`.
pub fn reduce_channels(map: &Tensor) -> Result<(usize, usize, Vec<f32>)> {
    let s = map.shape();
    if s.n != 1 || s.c == 0 {
        return Err(Error::shape("rendered map", "(1, c, h, w) with c >= 1", s));
    }
    let values = (0..s.h * s.w)
        .map(|p| {
            let (y, x) = (p / s.w, p % s.w);
            (1..s.c).fold(map.get(0, 0, y, x), |best, c| {
                let v = map.get(0, c, y, x);
                if v.abs() > best.abs() {
                    v
                } else {
                    best
                }
            })
        })
        .collect();
    Ok((s.h, s.w, values))
}

/// Nearest-rank `q`-th percentile of `|v|`.
pub fn percentile_abs(values: &[f32], q: f32) -> Result<f32> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::Config(format!(
            "percentile must be in (0, 100], got {q}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Config("percentile of an empty map".into()));
    }
    let mut mags: Vec<f32> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f32::total_cmp);
    let rank = ((q as f64 / 100.0) * mags.len() as f64).ceil() as usize;
    Ok(mags[rank.clamp(1, mags.len()) - 1])
}

fn upsample(
    h: usize,
    w: usize,
    values: Vec<f32>,
    mode: Upsample,
) -> Result<(usize, usize, Vec<f32>)> {
    let factor = match mode {
        Upsample::None => return Ok((h, w, values)),
        Upsample::Nearest { factor } | Upsample::Bilinear { factor } => factor,
    };
    if factor == 0 {
        return Err(Error::Config("upsampling factor must be at least 1".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let at = |y: usize, x: usize| values[y * w + x] as f64;
    let out = match mode {
        Upsample::Nearest { .. } => (0..oh * ow)
            .map(|i| values[(i / ow / factor) * w + (i % ow) / factor])
            .collect(),
        _ => {
            // Pixel-centre aligned, clamped at the borders.
            let source = |dst: usize, extent: usize| -> (usize, usize, f64) {
                let pos =
                    ((dst as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (extent - 1) as f64);
                let lo = pos.floor() as usize;
                (lo, (lo + 1).min(extent - 1), pos - lo as f64)
            };
            (0..oh * ow)
                .map(|i| {
                    let (y0, y1, fy) = source(i / ow, h);
                    let (x0, x1, fx) = source(i % ow, w);
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    (top * (1.0 - fy) + bottom * fy) as f32
                })
                .collect()
        }
    };
    Ok((oh, ow, out))
}

fn channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn color(colormap: Colormap, t: f64) -> [u8; 3] {
    match colormap {
        Colormap::Grayscale => {
            let g = channel(t.abs());
            [g, g, g]
        }
        Colormap::Signed => {
            let fade = channel(1.0 - t.abs());
            if t >= 0.0 {
                [255, fade, fade]
            } else {
                [fade, fade, 255]
            }
        }
        Colormap::Hot => {
            let m = t.abs();
            [
                channel(3.0 * m),
                channel(3.0 * m - 1.0),
                channel(3.0 * m - 2.0),
            ]
        }
    }
}

fn render_plane(h: usize, w: usize, values: Vec<f32>, spec: &RenderSpec) -> Result<RgbImage> {
    if h == 0 || w == 0 {
        return Err(Error::Config("cannot render an empty map".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("cannot render non-finite values".into()));
    }
    let (h, w, values) = upsample(h, w, values, spec.upsample)?;
    let scale = match spec.normalization {
        Normalization::AbsMax => values.iter().fold(0.0f32, |m, v| m.max(v.abs())),
        Normalization::PercentileClip { q } => percentile_abs(&values, q)?,
    } as f64;
    let mut data = Vec::with_capacity(h * w * 3);
    for &v in &values {
        let t = if scale > 0.0 {
            (v as f64 / scale).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        data.extend_from_slice(&color(spec.colormap, t));
    }
    RgbImage::new(w, h, data)
}

/// Renders a `(1, c, h, w)` map to RGB.
pub fn render(map: &Tensor, spec: &RenderSpec) -> Result<RgbImage> {
    let (h, w, values) = reduce_channels(map)?;
    render_plane(h, w, values, spec)
}

pub fn render_heatmap(heatmap: &Heatmap, spec: &RenderSpec) -> Result<RgbImage> {
    render_plane(
        heatmap.height(),
        heatmap.width(),
        heatmap.values().to_vec(),
        spec,
    )
}
