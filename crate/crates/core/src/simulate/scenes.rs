//! Procedural scenes with plenty of corners for training and tests.

use rand::Rng;

use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Checkerboard,
    Polygons,
    Blobs,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::Checkerboard, SceneKind::Polygons, SceneKind::Blobs];
}

fn colour(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn contrasting(rng: &mut impl Rng, base: [f64; 3]) -> [f64; 3] {
    loop {
        let c = colour(rng);
        let d: f64 = c.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum();
        if d > 0.9 {
            return c;
        }
    }
}

pub fn synthetic_scene(rng: &mut impl Rng, kind: SceneKind, width: usize, height: usize, channels: usize) -> Image {
    let mut rgb = vec![[0.0; 3]; width * height];
    match kind {
        SceneKind::Checkerboard => {
            let cell: f64 = rng.random_range(6.0..14.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let (s, c) = angle.sin_cos();
            let (ox, oy): (f64, f64) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            let a = colour(rng);
            let b = contrasting(rng, a);
            for y in 0..height {
                for x in 0..width {
                    let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                    let ru = (c * u + s * v + ox) / cell;
                    let rv = (-s * u + c * v + oy) / cell;
                    let parity = (ru.floor() as i64 + rv.floor() as i64).rem_euclid(2);
                    rgb[y * width + x] = if parity == 0 { a } else { b };
                }
            }
        }
        SceneKind::Polygons => {
            let bg = colour(rng);
            rgb.fill(bg);
            let n = rng.random_range(4..=9);
            for _ in 0..n {
                let fill = contrasting(rng, bg);
                let cx = rng.random_range(0.0..width as f64);
                let cy = rng.random_range(0.0..height as f64);
                let r = rng.random_range(0.08..0.25) * width.min(height) as f64;
                let k = rng.random_range(3..=5);
                let mut angles: Vec<f64> = (0..k)
                    .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                    .collect();
                angles.sort_by(f64::total_cmp);
                let verts: Vec<(f64, f64)> = angles
                    .iter()
                    .map(|a| (cx + r * a.cos(), cy + r * a.sin()))
                    .collect();
                for y in 0..height {
                    for x in 0..width {
                        if inside_convex(&verts, x as f64 + 0.5, y as f64 + 0.5) {
                            rgb[y * width + x] = fill;
                        }
                    }
                }
            }
        }
        SceneKind::Blobs => {
            let bg = colour(rng);
            rgb.fill(bg);
            let n = rng.random_range(5..=12);
            for _ in 0..n {
                let fill = contrasting(rng, bg);
                let cx = rng.random_range(0.0..width as f64);
                let cy = rng.random_range(0.0..height as f64);
                let sx = rng.random_range(2.0..7.0);
                let sy = rng.random_range(2.0..7.0);
                for y in 0..height {
                    for x in 0..width {
                        let (dx, dy) = ((x as f64 - cx) / sx, (y as f64 - cy) / sy);
                        let a = (-(dx * dx + dy * dy) / 2.0).exp();
                        let px = &mut rgb[y * width + x];
                        for ch in 0..3 {
                            px[ch] = (1.0 - a) * px[ch] + a * fill[ch];
                        }
                    }
                }
            }
        }
    }
    let img = Image::from_fn(width, height, 3, |c, x, y| rgb[y * width + x][c]);
    img.with_channels(channels)
}

fn inside_convex(verts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let n = verts.len();
    (0..n).all(|k| {
        let (ax, ay) = verts[k];
        let (bx, by) = verts[(k + 1) % n];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
    })
}

/// `count` scenes cycling through the three kinds.
pub fn synthetic_scenes(rng: &mut impl Rng, count: usize, width: usize, height: usize, channels: usize) -> Vec<Image> {
    (0..count)
        .map(|k| synthetic_scene(rng, SceneKind::ALL[k % 3], width, height, channels))
        .collect()
}
