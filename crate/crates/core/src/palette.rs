//! Display colours shared by the command-line renderer and the browser demo.

use crate::scene::NUM_CLASSES;

/// Part palette, indexed by category id.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [128, 0, 0],
    [255, 0, 0],
    [0, 85, 0],
    [170, 0, 51],
    [255, 85, 0],
    [0, 0, 85],
    [0, 119, 221],
    [85, 85, 0],
    [0, 85, 85],
    [85, 51, 0],
    [52, 86, 128],
    [0, 128, 0],
    [0, 0, 255],
    [51, 170, 221],
    [0, 255, 255],
    [85, 255, 170],
    [170, 255, 85],
    [255, 255, 0],
];

/// Fully saturated colour for instance `id ≥ 1`, hues spread by the golden
/// angle so neighbouring ids differ strongly.
pub fn instance_color(id: u16) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let h = ((id - 1) as f64 * 137.507_764) % 360.0 / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let v = if id > 12 { 160.0 } else { 255.0 };
    [(r * v) as u8, (g * v) as u8, (b * v) as u8]
}

/// RGBA bytes of `p`, coloured per instance or per part.
pub fn rgba(p: &crate::instance::InstanceParsing, by_instance: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(p.instance_ids.len() * 4);
    for (&id, &c) in p.instance_ids.data().iter().zip(p.categories.data()) {
        let [r, g, b] = if by_instance { instance_color(id) } else { PALETTE[c as usize] };
        out.extend([r, g, b, 255]);
    }
    out
}
