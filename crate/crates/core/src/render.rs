//! Rasterizes canvas entities over a base chart image.
//!
//! No anti-aliasing: a pixel is painted when its center lies within the
//! stroke. Normalized `(x, y)` maps to pixel `(round(x·(W−1)), round(y·(H−1)))`.
//! Circle radii are measured in image-width units.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use image::{ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::canvas::{Canvas, Geometry, Pt, RenderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub stroke_width_px: u32,
    pub point_radius_px: u32,
    pub arrowhead_len_px: u32,
    pub arrowhead_angle_deg: f64,
    pub strict_coords: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            stroke_width_px: 3,
            point_radius_px: 5,
            arrowhead_len_px: 12,
            arrowhead_angle_deg: 28.0,
            strict_coords: true,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.stroke_width_px < 1 || self.point_radius_px < 1 || self.arrowhead_len_px < 1 {
            return Err("render pixel sizes must be at least 1".into());
        }
        if !self.arrowhead_angle_deg.is_finite() {
            return Err("arrowhead angle must be finite".into());
        }
        Ok(())
    }
}

/// Decoded base chart image, shared cheaply between sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseImage {
    pixels: Arc<RgbaImage>,
}

impl BaseImage {
    pub fn from_rgba(img: RgbaImage) -> Self {
        BaseImage { pixels: Arc::new(img) }
    }

    /// A solid white image.
    pub fn blank(width: u32, height: u32) -> Self {
        Self::from_rgba(RgbaImage::from_pixel(width, height, Rgba([255, 255, 255, 255])))
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, RenderError> {
        let img = image::load_from_memory(bytes).map_err(image_err)?;
        Ok(Self::from_rgba(img.to_rgba8()))
    }

    pub fn open(path: &Path) -> Result<Self, RenderError> {
        let bytes = std::fs::read(path).map_err(|e| RenderError::Image {
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_png_bytes(&bytes)
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn pixels(&self) -> &RgbaImage {
        &self.pixels
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        encode_png(&self.pixels)
    }
}

fn image_err(e: image::ImageError) -> RenderError {
    RenderError::Image { message: e.to_string() }
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, RenderError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(image_err)?;
    Ok(buf.into_inner())
}

/// Draws every entity, in creation order, over a copy of `base`.
pub fn rasterize(canvas: &Canvas, base: &BaseImage, cfg: &RenderConfig) -> RgbaImage {
    let mut img = (*base.pixels).clone();
    let mut pen = Pen { img: &mut img, cfg };
    for entity in canvas.entities.values() {
        let [r, g, b] = entity.color.rgb();
        pen.draw(&entity.geometry, Rgba([r, g, b, 255]));
    }
    img
}

/// Rasterizes and PNG-encodes in one step.
pub fn render_png(canvas: &Canvas, base: &BaseImage, cfg: &RenderConfig) -> Result<Vec<u8>, RenderError> {
    encode_png(&rasterize(canvas, base, cfg))
}

struct Pen<'a> {
    img: &'a mut RgbaImage,
    cfg: &'a RenderConfig,
}

impl Pen<'_> {
    fn to_px(&self, p: Pt) -> (f64, f64) {
        let w = f64::from(self.img.width().saturating_sub(1));
        let h = f64::from(self.img.height().saturating_sub(1));
        ((p.x * w).round(), (p.y * h).round())
    }

    fn half_stroke(&self) -> f64 {
        f64::from(self.cfg.stroke_width_px) / 2.0
    }

    fn draw(&mut self, geometry: &Geometry, color: Rgba<u8>) {
        match geometry {
            Geometry::Point { at } => {
                let c = self.to_px(*at);
                let r = f64::from(self.cfg.point_radius_px);
                self.fill(c, (r, r), color, |x, y| (x - c.0).powi(2) + (y - c.1).powi(2) <= r * r);
            }
            Geometry::Line { from, to } => {
                let (a, b) = (self.to_px(*from), self.to_px(*to));
                self.segment(a, b, color);
            }
            Geometry::Circle { center, radius } => {
                let c = self.to_px(*center);
                let r = (radius * f64::from(self.img.width().saturating_sub(1))).round();
                let hw = self.half_stroke();
                let reach = r + hw;
                self.fill(c, (reach, reach), color, |x, y| {
                    let d = ((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt();
                    (d - r).abs() <= hw
                });
            }
            Geometry::Rect { corners } => {
                let px: Vec<_> = corners.iter().map(|p| self.to_px(*p)).collect();
                for i in 0..4 {
                    self.segment(px[i], px[(i + 1) % 4], color);
                }
            }
            Geometry::Arrow { tail, head } => {
                let (t, h) = (self.to_px(*tail), self.to_px(*head));
                self.segment(t, h, color);
                let (dx, dy) = (t.0 - h.0, t.1 - h.1);
                let len = dx.hypot(dy);
                if len == 0.0 {
                    return;
                }
                let (ux, uy) = (dx / len, dy / len);
                let head_len = f64::from(self.cfg.arrowhead_len_px);
                for sign in [1.0, -1.0] {
                    let (s, c) = (sign * self.cfg.arrowhead_angle_deg).to_radians().sin_cos();
                    let wing = (h.0 + head_len * (c * ux - s * uy), h.1 + head_len * (s * ux + c * uy));
                    self.segment(h, wing, color);
                }
            }
        }
    }

    fn segment(&mut self, a: (f64, f64), b: (f64, f64), color: Rgba<u8>) {
        let hw = self.half_stroke();
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let extent = ((a.0 - b.0).abs() / 2.0 + hw, (a.1 - b.1).abs() / 2.0 + hw);
        self.fill(mid, extent, color, |x, y| {
            let t = if len2 == 0.0 { 0.0 } else { (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0) };
            let (px, py) = (a.0 + t * dx, a.1 + t * dy);
            (x - px).powi(2) + (y - py).powi(2) <= hw * hw
        });
    }

    /// Paints pixels inside the box `center ± extent` (clipped to the image)
    /// for which `inside` holds.
    fn fill(&mut self, center: (f64, f64), extent: (f64, f64), color: Rgba<u8>, inside: impl Fn(f64, f64) -> bool) {
        let (w, h) = (i64::from(self.img.width()), i64::from(self.img.height()));
        let clip = |v: f64, max: i64| -> i64 {
            if v.is_nan() {
                0
            } else {
                (v as i64).clamp(0, max)
            }
        };
        let x0 = clip((center.0 - extent.0).floor(), w);
        let x1 = clip((center.0 + extent.0).ceil() + 1.0, w);
        let y0 = clip((center.1 - extent.1).floor(), h);
        let y1 = clip((center.1 + extent.1).ceil() + 1.0, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(x as f64, y as f64) {
                    self.img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{extract_blocks, parse_script, CoordMode, EXAMPLE_PROGRAM};

    fn canvas(text: &str) -> Canvas {
        Canvas::new().apply(&parse_script(text, CoordMode::Strict).unwrap()).unwrap()
    }

    #[test]
    fn empty_canvas_reproduces_base() {
        let mut base = RgbaImage::from_pixel(40, 30, Rgba([10, 20, 30, 255]));
        base.put_pixel(3, 4, Rgba([200, 100, 0, 255]));
        let base = BaseImage::from_rgba(base);
        assert_eq!(&rasterize(&Canvas::new(), &base, &RenderConfig::default()), base.pixels());
    }

    #[test]
    fn point_is_disk_at_mapped_pixel() {
        let base = BaseImage::blank(101, 101);
        let img = rasterize(&canvas("create_point p 0.5 0.5 red"), &base, &RenderConfig::default());
        let red = Rgba([255, 0, 0, 255]);
        let white = Rgba([255, 255, 255, 255]);
        let r = 5i32;
        for y in 0..101i32 {
            for x in 0..101i32 {
                let inside = (x - 50).pow(2) + (y - 50).pow(2) <= r * r;
                let expected = if inside { red } else { white };
                assert_eq!(*img.get_pixel(x as u32, y as u32), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn line_covers_its_endpoints_and_stays_thin() {
        let base = BaseImage::blank(101, 101);
        let img = rasterize(&canvas("create_line l 0.1 0.5 0.9 0.5 blue"), &base, &RenderConfig::default());
        let blue = Rgba([0, 0, 255, 255]);
        assert_eq!(*img.get_pixel(10, 50), blue);
        assert_eq!(*img.get_pixel(90, 50), blue);
        assert_eq!(*img.get_pixel(50, 49), blue);
        assert_ne!(*img.get_pixel(50, 52), blue);
        assert_ne!(*img.get_pixel(5, 50), blue);
    }

    #[test]
    fn offscreen_geometry_is_clipped() {
        let base = BaseImage::blank(50, 50);
        let c = canvas("create_line l 0.5 0.5 1 1 green\ntranslate l 1000 -1000");
        assert_eq!(&rasterize(&c, &base, &RenderConfig::default()), base.pixels());
    }

    #[test]
    fn example_program_renders_deterministically() {
        let ex = extract_blocks(EXAMPLE_PROGRAM, CoordMode::Strict);
        let c = Canvas::new().apply(&ex.scripts[0]).unwrap();
        let base = BaseImage::blank(200, 150);
        let a = render_png(&c, &base, &RenderConfig::default()).unwrap();
        let b = render_png(&c, &base, &RenderConfig::default()).unwrap();
        assert_eq!(a, b);
        let decoded = BaseImage::from_png_bytes(&a).unwrap();
        assert_eq!(decoded.pixels(), &rasterize(&c, &base, &RenderConfig::default()));
    }

    #[test]
    fn later_entities_paint_over_earlier() {
        let base = BaseImage::blank(21, 21);
        let img = rasterize(
            &canvas("create_point a 0.5 0.5 red\ncreate_point b 0.5 0.5 green"),
            &base,
            &RenderConfig::default(),
        );
        assert_eq!(img.get_pixel(10, 10).0[..3], crate::dsl::Color::Green.rgb());
    }

    #[test]
    fn config_validation() {
        assert!(RenderConfig::default().validate().is_ok());
        assert!(RenderConfig { stroke_width_px: 0, ..Default::default() }.validate().is_err());
    }
}
