use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::attributes::AttributeVector;
use crate::gradcore::Rng;

pub const PANEL_SIDE: usize = 32;
pub const PANEL_PIXELS: usize = PANEL_SIDE * PANEL_SIDE;

/// Circumradius in pixels, by size index.
pub const RADII: [f64; 4] = [4.0, 6.0, 8.0, 10.0];
/// Foreground gray level, by shade index.
pub const GRAY_LEVELS: [u8; 4] = [64, 128, 192, 255];
/// Object centers of the 2x2 layout, filled in this order.
const SLOTS: [(f64, f64); 4] = [(8.0, 8.0), (24.0, 8.0), (8.0, 24.0), (24.0, 24.0)];

/// A rendered panel together with the attributes that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panel {
    pub attributes: AttributeVector,
    /// Row-major 32x32 grayscale, 0 is background.
    pub pixels: Vec<u8>,
}

impl Panel {
    /// Pixels scaled to `[0, 1]`.
    pub fn unit_pixels(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0)
    }
}

fn inside(shape_type: u8, radius: f64, dx: f64, dy: f64) -> bool {
    let sides = match shape_type {
        0 => 3,
        1 => 4,
        2 => 5,
        _ => return dx * dx + dy * dy <= radius * radius,
    };
    // squares sit axis-aligned, the odd polygons point up
    let phase = if sides == 4 { -PI / 4.0 } else { -PI / 2.0 };
    let vertex = |k: usize| {
        let a = phase + 2.0 * PI * k as f64 / sides as f64;
        (radius * a.cos(), radius * a.sin())
    };
    (0..sides).all(|k| {
        let (x0, y0) = vertex(k);
        let (x1, y1) = vertex((k + 1) % sides);
        (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0) >= 0.0
    })
}

/// Draws with explicit per-object pixel offsets.
pub fn render_with_offsets(attrs: &AttributeVector, offsets: &[(i32, i32)]) -> Panel {
    let mut pixels = vec![0u8; PANEL_PIXELS];
    let radius = RADII[attrs.size as usize];
    let gray = GRAY_LEVELS[attrs.shade as usize];
    for (slot, &(ox, oy)) in SLOTS.iter().zip(offsets).take(attrs.number as usize) {
        let cx = slot.0 + f64::from(ox);
        let cy = slot.1 + f64::from(oy);
        for y in 0..PANEL_SIDE {
            for x in 0..PANEL_SIDE {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if inside(attrs.shape_type, radius, dx, dy) {
                    pixels[y * PANEL_SIDE + x] = gray;
                }
            }
        }
    }
    Panel {
        attributes: *attrs,
        pixels,
    }
}

/// Renders `number` copies of the shape with ±1 px jitter per object.
pub fn render_panel(attrs: &AttributeVector, jitter: &mut Rng) -> Panel {
    let offsets: Vec<(i32, i32)> = (0..SLOTS.len())
        .map(|_| (jitter.gen_range(-1..=1), jitter.gen_range(-1..=1)))
        .collect();
    render_with_offsets(attrs, &offsets)
}

/// Renders without jitter.
pub fn render_exact(attrs: &AttributeVector) -> Panel {
    render_with_offsets(attrs, &[(0, 0); 4])
}
