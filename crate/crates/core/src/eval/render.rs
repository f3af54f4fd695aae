//! Side-by-side match visualization.

use crate::image::Image;

use super::{MatchSet, PointSet};

const POINT_COLOUR: [f64; 3] = [1.0, 0.0, 0.0];
const LINE_COLOUR: [f64; 3] = [0.0, 1.0, 0.0];

fn put(img: &mut Image, x: i64, y: i64, rgb: [f64; 3]) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    for (c, v) in rgb.iter().enumerate() {
        img.set(c, x as usize, y as usize, *v);
    }
}

/// Pixels of the Bresenham segment from `a` to `b`, endpoints included.
pub fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((x, y));
        if (x, y) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Composite of `img_a` and `img_b` side by side (height of the taller, width
/// the sum). Every extracted point is marked; matches flagged in `correct`
/// are joined by a line.
pub fn render_matches(
    img_a: &Image,
    img_b: &Image,
    a: &PointSet,
    b: &PointSet,
    matches: &MatchSet,
    correct: &[bool],
) -> Image {
    let (ra, rb) = (img_a.with_channels(3), img_b.with_channels(3));
    let wa = ra.width();
    let w = wa + rb.width();
    let h = ra.height().max(rb.height());
    let mut out = Image::from_fn(w, h, 3, |c, x, y| {
        if x < wa {
            if y < ra.height() { ra.get(c, x, y) } else { 0.0 }
        } else if y < rb.height() {
            rb.get(c, x - wa, y)
        } else {
            0.0
        }
    });
    for (m, &ok) in matches.matches.iter().zip(correct) {
        if !ok {
            continue;
        }
        let pa = &a.points[m.a];
        let pb = &b.points[m.b];
        for (x, y) in line_pixels((pa.x as i64, pa.y as i64), ((pb.x + wa) as i64, pb.y as i64)) {
            put(&mut out, x, y, LINE_COLOUR);
        }
    }
    for (set, off) in [(a, 0usize), (b, wa)] {
        for p in &set.points {
            put(&mut out, (p.x + off) as i64, p.y as i64, POINT_COLOUR);
        }
    }
    out
}
