//! Deterministic reference rendering: the perspective road mask colored with
//! the class palette, objects painted as flat category-colored boxes in
//! painter's order, and a fixed weather transform on top.

use super::*;
use crate::camera::{project_map, projected_boxes, CameraPose, IMG_H, IMG_W};
use crate::prompt::Weather;

/// A rendered street-view image: 112x64 (WxH) RGB with values in [0, 1],
/// stored row-major as H x W x 3.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImage {
    pub data: Vec<f64>,
}

impl ReferenceImage {
    pub fn width(&self) -> usize {
        IMG_W
    }

    pub fn height(&self) -> usize {
        IMG_H
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * IMG_W + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (v * IMG_W + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(bytes: &[u8]) -> ReferenceImage {
        assert_eq!(bytes.len(), IMG_W * IMG_H * 3);
        ReferenceImage {
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Channel-major [-1, 1] tensor (3 x H x W) for the image diffusion model.
    pub fn to_chw_norm(&self) -> Vec<f64> {
        let plane = IMG_W * IMG_H;
        let mut out = vec![0.0; 3 * plane];
        for i in 0..plane {
            for ch in 0..3 {
                out[ch * plane + i] = self.data[i * 3 + ch] * 2.0 - 1.0;
            }
        }
        out
    }

    pub fn from_chw_norm(data: &[f64]) -> ReferenceImage {
        let plane = IMG_W * IMG_H;
        assert_eq!(data.len(), 3 * plane);
        let mut out = vec![0.0; plane * 3];
        for i in 0..plane {
            for ch in 0..3 {
                out[i * 3 + ch] = ((data[ch * plane + i] + 1.0) / 2.0).clamp(0.0, 1.0);
            }
        }
        ReferenceImage { data: out }
    }

    pub fn mean_luminance(&self) -> f64 {
        let mut sum = 0.0;
        for px in self.data.chunks_exact(3) {
            sum += 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
        sum / (IMG_W * IMG_H) as f64
    }
}

/// Applies the fixed weather transform in place. Rain reduces contrast to
/// 0.8, tints toward a gray-blue hue and adds deterministic diagonal streaks;
/// night multiplies all channels by exactly 0.35. Geometry never changes.
pub fn apply_weather(img: &mut ReferenceImage, weather: Weather) {
    const RAIN_TINT: [f64; 3] = [0.55, 0.58, 0.62];
    if weather.is_rainy() {
        for v in 0..IMG_H {
            for u in 0..IMG_W {
                let mut px = img.pixel(u, v);
                for ch in 0..3 {
                    let contrasted = 0.5 + 0.8 * (px[ch] - 0.5);
                    px[ch] = 0.85 * contrasted + 0.15 * RAIN_TINT[ch];
                }
                if (3 * u + 7 * v) % 23 == 0 {
                    for ch in &mut px {
                        *ch += 0.12;
                    }
                }
                img.set_pixel(u, v, px);
            }
        }
    }
    if weather.is_night() {
        for x in &mut img.data {
            *x *= 0.35;
        }
    }
    for x in &mut img.data {
        *x = x.clamp(0.0, 1.0);
    }
}

/// Renders the reference image for a scene: road mask colored by the class
/// palette below the analytic horizon, sky above, objects painted far to
/// near as flat boxes with a darker one-pixel border, then weather applied.
pub fn render_reference(
    map: &SemanticMap,
    layout: &ObjectLayout,
    pose: &CameraPose,
    weather: Weather,
) -> ReferenceImage {
    let mask = project_map(map, pose);
    let horizon = pose.horizon_row();
    let sky = [
        SKY_COLOR[0] as f64 / 255.0,
        SKY_COLOR[1] as f64 / 255.0,
        SKY_COLOR[2] as f64 / 255.0,
    ];
    let mut img = ReferenceImage {
        data: vec![0.0; IMG_W * IMG_H * 3],
    };
    for v in 0..IMG_H {
        for u in 0..IMG_W {
            let rgb = if v < horizon {
                sky
            } else {
                class_color_f64(mask.class_at(u, v))
            };
            img.set_pixel(u, v, rgb);
        }
    }

    for pb in projected_boxes(layout, pose) {
        let (u1, v1, u2, v2) = pb.px_rect;
        let fill = category_color_f64(pb.boxed.category);
        let border = [fill[0] * 0.55, fill[1] * 0.55, fill[2] * 0.55];
        for v in v1..v2 {
            for u in u1..u2 {
                let on_border = v == v1 || v + 1 == v2 || u == u1 || u + 1 == u2;
                img.set_pixel(u, v, if on_border { border } else { fill });
            }
        }
    }

    apply_weather(&mut img, weather);
    img
}
