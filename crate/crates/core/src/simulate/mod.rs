//! Training and evaluation views: photometric perturbations, random
//! homographies, warping and the resulting point correspondence.
//!
//! A scene image defines the canonical pixel grid. Each view applies a
//! homography to it and then a photometric spec to the warped result.

mod homography;
mod photometric;
mod scenes;
mod warp;

pub use homography::{sample_homography, HomographySampler, MAX_REJECTIONS};
pub use photometric::{
    apply_photometric, sample_photometric, BlurKind, IlluminationLevel, Photometric, PhotometricKind,
    PhotometricSpec, ShadowPolygon, BLUR_RADIUS, CONTRAST_STRENGTH, MAX_TRANSFORMS, SALT_PEPPER_MAX,
    SHADOW_ATTENUATION, SHADOW_COUNT,
};
pub use scenes::{synthetic_scene, synthetic_scenes, SceneKind};
pub use warp::{build_correspondence, map_points, warp_image, MappedPoint};

use crate::error::Result;
use crate::geometry::Homography;
use crate::grid::Grid;
use crate::image::Image;
use crate::properties::Correspondence;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulateConfig {
    pub illumination: IlluminationLevel,
    pub viewpoint: HomographySampler,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            illumination: IlluminationLevel::Full,
            viewpoint: HomographySampler::MEDIUM,
        }
    }
}

#[derive(Clone, Debug)]
pub struct View {
    pub image: Image,
    pub mask: Grid<bool>,
    pub homography: Homography,
    pub photometric: PhotometricSpec,
}

/// Generates `count` views of `scene`. View `j` draws from its own stream
/// keyed by `(seed, scene_id, j)`, so views are independent of each other
/// and of the order in which they are built.
pub fn make_views(
    scene: &Image,
    count: usize,
    seed: u64,
    scene_id: u64,
    cfg: &SimulateConfig,
) -> Result<(Vec<View>, Correspondence)> {
    let (w, h) = (scene.width(), scene.height());
    let views = (0..count)
        .map(|j| {
            let mut rng = rng::stream(seed, &[0x5173, scene_id, j as u64]);
            let homography = cfg.viewpoint.sample(&mut rng, w, h)?;
            let photometric = sample_photometric(&mut rng, cfg.illumination);
            let (warped, mask) = warp_image(scene, &homography);
            Ok(View {
                image: apply_photometric(&warped, &photometric),
                mask,
                homography,
                photometric,
            })
        })
        .collect::<Result<Vec<View>>>()?;
    let hs: Vec<Homography> = views.iter().map(|v| v.homography).collect();
    let masks: Vec<Grid<bool>> = views.iter().map(|v| v.mask.clone()).collect();
    let corr = build_correspondence(w, h, &hs, &masks);
    Ok((views, corr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_warp_is_exact() {
        let img = Image::from_fn(9, 7, 2, |c, x, y| ((x * 3 + y + c) % 5) as f64 / 4.0);
        let (out, mask) = warp_image(&img, &Homography::identity());
        assert_eq!(out.data(), img.data());
        assert_eq!(mask.count_true(), 63);
    }

    #[test]
    fn integer_translation_shifts_columns() {
        let img = Image::from_fn(12, 5, 1, |_, x, y| (x * 7 + y) as f64 / 100.0);
        let (out, mask) = warp_image(&img, &Homography::translation(5.0, 0.0));
        for y in 0..5 {
            for x in 0..12 {
                assert_eq!(*mask.get(x, y), x >= 5);
                if x >= 5 {
                    assert_eq!(out.get(0, x, y), img.get(0, x - 5, y));
                }
            }
        }
    }

    #[test]
    fn map_points_bounds() {
        let m = map_points(&[(5.0, 3.0)], &Homography::translation(-10.0, 0.0), 640, 480);
        assert_eq!(m[0].x, -5.0);
        assert!(!m[0].valid);
    }

    #[test]
    fn degenerate_sampler_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = sample_homography(&mut rng, 0.0, 0.0, 32, 32).unwrap();
        assert_eq!(h, Homography::identity());
    }

    #[test]
    fn views_are_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = synthetic_scene(&mut rng, SceneKind::Checkerboard, 32, 32, 3);
        let (a, ca) = make_views(&scene, 3, 9, 1, &SimulateConfig::default()).unwrap();
        let (b, cb) = make_views(&scene, 3, 9, 1, &SimulateConfig::default()).unwrap();
        assert_eq!(ca, cb);
        for (va, vb) in a.iter().zip(&b) {
            assert_eq!(va.image, vb.image);
            assert_eq!(va.photometric, vb.photometric);
        }
    }
}
