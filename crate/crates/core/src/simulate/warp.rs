//! Geometric warping and ground-truth correspondence.

use crate::geometry::Homography;
use crate::grid::Grid;
use crate::image::Image;
use crate::properties::Correspondence;

/// Warps `image` by `h` (source to target) with inverse-mapped bilinear
/// sampling. Pixels whose source falls outside the input are zero and
/// marked invalid.
pub fn warp_image(image: &Image, h: &Homography) -> (Image, Grid<bool>) {
    let (w, ht, c) = (image.width(), image.height(), image.channels());
    let inv = h.inverse();
    let sources: Vec<Option<(f64, f64)>> = (0..w * ht)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            inv.apply(x as f64, y as f64).filter(|&(u, v)| {
                u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (ht - 1) as f64
            })
        })
        .collect();
    let out = Image::from_fn(w, ht, c, |ch, x, y| match sources[y * w + x] {
        Some((u, v)) => image.sample_bilinear(ch, u, v).unwrap_or(0.0),
        None => 0.0,
    });
    let mask = Grid::from_vec(w, ht, sources.iter().map(Option::is_some).collect());
    (out, mask)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappedPoint {
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

/// Projects points through `h`; a point is valid when it lands inside
/// `[0, width−1] × [0, height−1]`.
pub fn map_points(points: &[(f64, f64)], h: &Homography, width: usize, height: usize) -> Vec<MappedPoint> {
    points
        .iter()
        .map(|&(x, y)| match h.apply(x, y) {
            Some((u, v)) => MappedPoint {
                x: u,
                y: v,
                valid: u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64,
            },
            None => MappedPoint {
                x: f64::NAN,
                y: f64::NAN,
                valid: false,
            },
        })
        .collect()
}

/// Canonical pixel to view pixel: the mapped location rounded to the nearest
/// pixel, kept when inside the view and on a valid warp pixel.
pub fn build_correspondence(
    width: usize,
    height: usize,
    homographies: &[Homography],
    masks: &[Grid<bool>],
) -> Correspondence {
    let views = homographies.len();
    let mut target = vec![None; width * height * views];
    for (j, (h, mask)) in homographies.iter().zip(masks).enumerate() {
        for y in 0..height {
            for x in 0..width {
                let Some((u, v)) = h.apply(x as f64, y as f64) else { continue };
                let (ur, vr) = (u.round(), v.round());
                if ur < 0.0 || vr < 0.0 || ur > (width - 1) as f64 || vr > (height - 1) as f64 {
                    continue;
                }
                let (ux, vy) = (ur as usize, vr as usize);
                if *mask.get(ux, vy) {
                    target[(y * width + x) * views + j] = Some((vy * width + ux) as u32);
                }
            }
        }
    }
    Correspondence::new(width, height, views, target).expect("consistent correspondence shape")
}
