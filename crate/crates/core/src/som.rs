//! Set-of-Mark screenshot annotation: one rectangle and numeric label per
//! interactable element, box stroke and label sharing a color from a fixed
//! 12-color palette cycled by id.
//!
//! Labels are digit glyphs from a built-in 5x7 bitmap font, so rendering
//! needs no font files and is identical everywhere. Label placement (top-left
//! corner, shifted inside the image at the edges) is non-normative.

use image::{Rgba, RgbaImage};

use crate::model::EnvironmentState;
use crate::observe::ObserveError;
use crate::ordering::OrderedView;

/// Mark colors, cycled by id: id 1 and id 13 share the first entry.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],   // red
    [60, 180, 75],   // green
    [0, 130, 200],   // blue
    [245, 130, 48],  // orange
    [145, 30, 180],  // purple
    [66, 212, 244],  // cyan
    [240, 50, 230],  // magenta
    [191, 239, 69],  // lime
    [154, 99, 36],   // brown
    [0, 128, 128],   // teal
    [255, 190, 0],   // amber
    [220, 190, 255], // lavender
];

pub fn palette_color(id: u32) -> Rgba<u8> {
    let [r, g, b] = PALETTE[((id - 1) % 12) as usize];
    Rgba([r, g, b, 255])
}

/// 5x7 digit bitmaps, one 5-bit row mask per scanline, MSB left.
const DIGITS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

const GLYPH_SCALE: u32 = 2;
const GLYPH_W: u32 = 5 * GLYPH_SCALE;
const GLYPH_H: u32 = 7 * GLYPH_SCALE;
const GLYPH_GAP: u32 = 2;
const LABEL_PAD: u32 = 2;
const STROKE: u32 = 2;

fn put(image: &mut RgbaImage, x: i64, y: i64, color: Rgba<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < image.width() && (y as u32) < image.height() {
        image.put_pixel(x as u32, y as u32, color);
    }
}

fn fill_rect(image: &mut RgbaImage, x: i64, y: i64, w: u32, h: u32, color: Rgba<u8>) {
    for dy in 0..i64::from(h) {
        for dx in 0..i64::from(w) {
            put(image, x + dx, y + dy, color);
        }
    }
}

/// Hollow rectangle over `[x1, x2) x [y1, y2)` with a 2 px stroke drawn
/// inside the box.
fn stroke_rect(image: &mut RgbaImage, x1: i64, y1: i64, x2: i64, y2: i64, color: Rgba<u8>) {
    let w = (x2 - x1).max(0) as u32;
    let h = (y2 - y1).max(0) as u32;
    let s = i64::from(STROKE);
    fill_rect(image, x1, y1, w, STROKE.min(h), color); // top
    fill_rect(image, x1, (y2 - s).max(y1), w, STROKE.min(h), color); // bottom
    fill_rect(image, x1, y1, STROKE.min(w), h, color); // left
    fill_rect(image, (x2 - s).max(x1), y1, STROKE.min(w), h, color); // right
}

fn draw_label(image: &mut RgbaImage, x: i64, y: i64, id: u32, color: Rgba<u8>) {
    let digits: Vec<u32> = id
        .to_string()
        .bytes()
        .map(|b| u32::from(b - b'0'))
        .collect();
    let n = digits.len() as u32;
    let patch_w = 2 * LABEL_PAD + n * GLYPH_W + (n - 1) * GLYPH_GAP;
    let patch_h = 2 * LABEL_PAD + GLYPH_H;

    // shift inside the image if the label would overflow
    let x = x
        .min(i64::from(image.width()) - i64::from(patch_w))
        .max(0);
    let y = y
        .min(i64::from(image.height()) - i64::from(patch_h))
        .max(0);

    fill_rect(image, x, y, patch_w, patch_h, color);
    let white = Rgba([255, 255, 255, 255]);
    for (k, &digit) in digits.iter().enumerate() {
        let gx = x + i64::from(LABEL_PAD + k as u32 * (GLYPH_W + GLYPH_GAP));
        let gy = y + i64::from(LABEL_PAD);
        for (row, mask) in DIGITS[digit as usize].iter().enumerate() {
            for col in 0..5u32 {
                if mask & (1 << (4 - col)) != 0 {
                    fill_rect(
                        image,
                        gx + i64::from(col * GLYPH_SCALE),
                        gy + i64::from(row as u32 * GLYPH_SCALE),
                        GLYPH_SCALE,
                        GLYPH_SCALE,
                        white,
                    );
                }
            }
        }
    }
}

/// Draws one box and id label per interactable element on a copy of the
/// screenshot. The screenshot must match the state's viewport.
pub fn render_som(
    screenshot: &RgbaImage,
    view: &OrderedView,
    state: &EnvironmentState,
) -> Result<RgbaImage, ObserveError> {
    if screenshot.width() != state.viewport.width || screenshot.height() != state.viewport.height {
        return Err(ObserveError::DimensionMismatch {
            got_w: screenshot.width(),
            got_h: screenshot.height(),
            want_w: state.viewport.width,
            want_h: state.viewport.height,
        });
    }
    let mut out = screenshot.clone();
    for index in view.permutation.iter() {
        let Some(&id) = view.ids.get(&index) else {
            continue;
        };
        let bbox = &state.elements[index].bbox;
        let color = palette_color(id);
        let (x1, y1) = (bbox.x1().round() as i64, bbox.y1().round() as i64);
        let (x2, y2) = (bbox.x2().round() as i64, bbox.y2().round() as i64);
        stroke_rect(&mut out, x1, y1, x2, y2, color);
        draw_label(&mut out, x1, y1, id, color);
    }
    Ok(out)
}
