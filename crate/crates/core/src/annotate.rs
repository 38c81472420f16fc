//! Draws detections, event markers and the gate banner onto a frame.

use crate::detect::demosaic_rg8;
use crate::error::Result;
use crate::live::LiveSnapshot;
use crate::types::{DetectionClass, PixelFormat};

const CANVAS: [u8; 3] = [40, 40, 40];
const WHITE: [u8; 3] = [255, 255, 255];
const BANNER: [u8; 3] = [200, 0, 0];
const MARKER: [u8; 3] = [255, 40, 40];

/// Packed RGB8 image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&color);
        }
        RgbImage { width, height, data }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        for y in y0.max(0)..y1.min(self.height as i64) {
            for x in x0.max(0)..x1.min(self.width as i64) {
                self.put(x, y, color);
            }
        }
    }

    pub fn stroke_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, thickness: i64, color: [u8; 3]) {
        self.fill_rect(x0, y0, x1, y0 + thickness, color);
        self.fill_rect(x0, y1 - thickness, x1, y1, color);
        self.fill_rect(x0, y0, x0 + thickness, y1, color);
        self.fill_rect(x1 - thickness, y0, x1, y1, color);
    }

    /// 5x7 bitmap text, `scale` pixels per font dot. Returns the end x.
    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, color: [u8; 3]) -> i64 {
        let mut cx = x;
        for c in s.chars() {
            let rows = glyph(c);
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if bits & (0x10 >> rx) != 0 {
                        let px = cx + rx * scale;
                        let py = y + ry as i64 * scale;
                        self.fill_rect(px, py, px + scale, py + scale, color);
                    }
                }
            }
            cx += 6 * scale;
        }
        cx
    }
}

fn class_color(class: DetectionClass) -> [u8; 3] {
    match class {
        DetectionClass::Rod => [0, 255, 0],
        DetectionClass::Flapper => [255, 220, 0],
        DetectionClass::Diverter => [0, 200, 255],
    }
}

fn base_image(snapshot: &LiveSnapshot) -> Result<RgbImage> {
    let frame = &snapshot.frame;
    let rgb = match (frame.pixel_format(), frame.data()) {
        (_, None) => return Ok(RgbImage::filled(frame.width(), frame.height(), CANVAS)),
        (PixelFormat::RGB8, Some(_)) => frame.clone(),
        (PixelFormat::BayerRG8, Some(_)) => demosaic_rg8(frame)?,
    };
    Ok(RgbImage {
        width: rgb.width(),
        height: rgb.height(),
        data: rgb.data().map(|d| d.to_vec()).unwrap_or_default(),
    })
}

/// Renders the operator view of one snapshot. Descriptor-only frames are
/// drawn on a plain canvas of the frame's size.
pub fn annotate(snapshot: &LiveSnapshot) -> Result<RgbImage> {
    let mut img = base_image(snapshot)?;
    for d in &snapshot.detections {
        let b = d.bbox();
        let color = class_color(d.class());
        let (x0, y0) = (b.x_min().round() as i64, b.y_min().round() as i64);
        img.stroke_rect(x0, y0, b.x_max().round() as i64, b.y_max().round() as i64, 2, color);
        img.text(x0, y0 - 9, d.class().name(), 1, color);
    }

    let mut y = img.height as i64 - 12;
    for e in snapshot.recent_events.iter().rev().take(6) {
        img.fill_rect(4, y, 12, y + 8, MARKER);
        img.text(16, y, &format!("{} {:.1}", e.kind, e.magnitude), 1, MARKER);
        y -= 11;
    }

    let header = format!("{} #{}", snapshot.frame.camera_id(), snapshot.frame.seq());
    if snapshot.gate.is_paused() {
        img.fill_rect(0, 0, img.width as i64, 22, BANNER);
        let end = img.text(4, 4, "PAUSED", 2, WHITE);
        img.text(end + 8, 8, &format!("{:?} {header}", snapshot.gate.reason), 1, WHITE);
    } else {
        img.text(4, 4, &header, 1, WHITE);
    }
    Ok(img)
}

fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '#' => [0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A],
        ' ' => [0; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}
