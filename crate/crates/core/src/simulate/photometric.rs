//! Illumination perturbations applied after the geometric warp.
//!
//! A [`PhotometricSpec`] is a short ordered list of transform records. Its
//! `Display` form is a one-line text record that `FromStr` reads back
//! exactly, so the transforms used at any iteration can be logged and
//! replayed.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

pub const MAX_TRANSFORMS: usize = 4;
pub const BLUR_RADIUS: (usize, usize) = (1, 3);
pub const CONTRAST_STRENGTH: f64 = 0.5;
pub const SALT_PEPPER_MAX: f64 = 0.02;
pub const SHADOW_COUNT: (usize, usize) = (1, 3);
pub const SHADOW_ATTENUATION: (f64, f64) = (0.3, 0.7);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlurKind {
    Gaussian,
    Average,
    Median,
}

impl BlurKind {
    fn name(self) -> &'static str {
        match self {
            BlurKind::Gaussian => "gaussian",
            BlurKind::Average => "average",
            BlurKind::Median => "median",
        }
    }
}

/// Convex polygon in normalized image coordinates (`[0,1]²`), darkening the
/// pixels it covers by `attenuation`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowPolygon {
    pub attenuation: f64,
    pub vertices: Vec<(f64, f64)>,
}

impl ShadowPolygon {
    fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut sign = 0.0;
        for k in 0..n {
            let (ax, ay) = self.vertices[k];
            let (bx, by) = self.vertices[(k + 1) % n];
            let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            if cross == 0.0 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Photometric {
    Blur { kind: BlurKind, radius: usize },
    ChannelShuffle { permutation: [usize; 3] },
    /// `v ← 0.5 + (1 + strength)(v − 0.5)`.
    Contrast { strength: f64 },
    /// `v ← w·gray + (1 − w)·v`.
    GrayscaleMix { weight: f64 },
    Invert,
    SaltPepper { fraction: f64, seed: u64 },
    Shadow { polygons: Vec<ShadowPolygon> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhotometricKind {
    Blur,
    ChannelShuffle,
    Contrast,
    GrayscaleMix,
    Invert,
    SaltPepper,
    Shadow,
}

impl Photometric {
    pub fn kind(&self) -> PhotometricKind {
        match self {
            Photometric::Blur { .. } => PhotometricKind::Blur,
            Photometric::ChannelShuffle { .. } => PhotometricKind::ChannelShuffle,
            Photometric::Contrast { .. } => PhotometricKind::Contrast,
            Photometric::GrayscaleMix { .. } => PhotometricKind::GrayscaleMix,
            Photometric::Invert => PhotometricKind::Invert,
            Photometric::SaltPepper { .. } => PhotometricKind::SaltPepper,
            Photometric::Shadow { .. } => PhotometricKind::Shadow,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IlluminationLevel {
    /// All seven transform kinds.
    Full,
    /// Blur, contrast and shadow only.
    Mild,
}

impl IlluminationLevel {
    pub fn kinds(self) -> &'static [PhotometricKind] {
        use PhotometricKind::*;
        match self {
            IlluminationLevel::Full => &[
                Blur,
                ChannelShuffle,
                Contrast,
                GrayscaleMix,
                Invert,
                SaltPepper,
                Shadow,
            ],
            IlluminationLevel::Mild => &[Blur, Contrast, Shadow],
        }
    }
}

impl FromStr for IlluminationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "illum_full" => Ok(IlluminationLevel::Full),
            "illum_mild" => Ok(IlluminationLevel::Mild),
            _ => Err(Error::Parse(format!("unknown illumination level {s:?}"))),
        }
    }
}

impl fmt::Display for IlluminationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IlluminationLevel::Full => "illum_full",
            IlluminationLevel::Mild => "illum_mild",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhotometricSpec {
    pub transforms: Vec<Photometric>,
}

impl PhotometricSpec {
    pub fn new(transforms: Vec<Photometric>) -> Result<Self> {
        let spec = Self { transforms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.transforms.len() > MAX_TRANSFORMS {
            return bad(format!("{} transforms, at most {MAX_TRANSFORMS}", self.transforms.len()));
        }
        for t in &self.transforms {
            match t {
                Photometric::Blur { radius, .. } if *radius == 0 => return bad("blur radius 0".into()),
                Photometric::ChannelShuffle { permutation } => {
                    let mut p = *permutation;
                    p.sort_unstable();
                    if p != [0, 1, 2] {
                        return bad(format!("{permutation:?} is not a permutation"));
                    }
                }
                Photometric::Contrast { strength } if strength.is_nan() || strength.abs() >= 1.0 => {
                    return bad(format!("contrast strength {strength}"));
                }
                Photometric::GrayscaleMix { weight } if !(0.0..=1.0).contains(weight) => {
                    return bad(format!("grayscale weight {weight}"));
                }
                Photometric::SaltPepper { fraction, .. } if !(0.0..=1.0).contains(fraction) => {
                    return bad(format!("salt-pepper fraction {fraction}"));
                }
                Photometric::Shadow { polygons } => {
                    for p in polygons {
                        if p.vertices.len() < 3 || !(0.0..=1.0).contains(&p.attenuation) {
                            return bad("malformed shadow polygon".into());
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn sample_kind(rng: &mut impl Rng, kind: PhotometricKind) -> Photometric {
    match kind {
        PhotometricKind::Blur => {
            let kind = [BlurKind::Gaussian, BlurKind::Average, BlurKind::Median][rng.random_range(0..3)];
            Photometric::Blur {
                kind,
                radius: rng.random_range(BLUR_RADIUS.0..=BLUR_RADIUS.1),
            }
        }
        PhotometricKind::ChannelShuffle => {
            let mut permutation = [0, 1, 2];
            while permutation == [0, 1, 2] {
                permutation.shuffle(rng);
            }
            Photometric::ChannelShuffle { permutation }
        }
        PhotometricKind::Contrast => Photometric::Contrast {
            strength: rng.random_range(-CONTRAST_STRENGTH..=CONTRAST_STRENGTH),
        },
        PhotometricKind::GrayscaleMix => Photometric::GrayscaleMix {
            weight: rng.random_range(0.0..=1.0),
        },
        PhotometricKind::Invert => Photometric::Invert,
        PhotometricKind::SaltPepper => Photometric::SaltPepper {
            fraction: rng.random_range(0.0..=SALT_PEPPER_MAX),
            seed: rng.random(),
        },
        PhotometricKind::Shadow => {
            let n = rng.random_range(SHADOW_COUNT.0..=SHADOW_COUNT.1);
            let polygons = (0..n).map(|_| sample_shadow(rng)).collect();
            Photometric::Shadow { polygons }
        }
    }
}

/// Vertices on an ellipse at sorted angles, hence convex.
fn sample_shadow(rng: &mut impl Rng) -> ShadowPolygon {
    let cx: f64 = rng.random_range(0.0..1.0);
    let cy: f64 = rng.random_range(0.0..1.0);
    let rx: f64 = rng.random_range(0.1..0.4);
    let ry: f64 = rng.random_range(0.1..0.4);
    let k = rng.random_range(3..=6);
    let mut angles: Vec<f64> = (0..k)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    ShadowPolygon {
        attenuation: rng.random_range(SHADOW_ATTENUATION.0..=SHADOW_ATTENUATION.1),
        vertices: angles
            .iter()
            .map(|a| (cx + rx * a.cos(), cy + ry * a.sin()))
            .collect(),
    }
}

/// Draws between one and four distinct transform kinds from the level's pool,
/// in random order, with uniformly sampled parameters.
pub fn sample_photometric(rng: &mut impl Rng, level: IlluminationLevel) -> PhotometricSpec {
    let mut pool = level.kinds().to_vec();
    pool.shuffle(rng);
    let n = rng.random_range(1..=pool.len().min(MAX_TRANSFORMS));
    PhotometricSpec {
        transforms: pool[..n].iter().map(|&k| sample_kind(rng, k)).collect(),
    }
}

pub fn apply_photometric(image: &Image, spec: &PhotometricSpec) -> Image {
    let mut out = image.clone();
    for t in &spec.transforms {
        out = apply_one(&out, t);
        out.clamp_unit();
    }
    out
}

fn apply_one(img: &Image, t: &Photometric) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    match t {
        Photometric::Blur { kind, radius } => blur(img, *kind, *radius),
        Photometric::ChannelShuffle { permutation } => {
            if c != 3 {
                return img.clone();
            }
            Image::from_fn(w, h, c, |ch, x, y| img.get(permutation[ch], x, y))
        }
        Photometric::Contrast { strength } => {
            let mut out = img.clone();
            for v in out.data_mut() {
                *v = 0.5 + (1.0 + strength) * (*v - 0.5);
            }
            out
        }
        Photometric::GrayscaleMix { weight } => {
            if c == 1 {
                return img.clone();
            }
            let gray = img.luma();
            Image::from_fn(w, h, c, |ch, x, y| {
                weight * gray[y * w + x] + (1.0 - weight) * img.get(ch, x, y)
            })
        }
        Photometric::Invert => {
            let mut out = img.clone();
            for v in out.data_mut() {
                *v = 1.0 - *v;
            }
            out
        }
        Photometric::SaltPepper { fraction, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    if rng.random::<f64>() < *fraction {
                        let v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                        for ch in 0..c {
                            out.set(ch, x, y, v);
                        }
                    }
                }
            }
            out
        }
        Photometric::Shadow { polygons } => {
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                    let factor: f64 = polygons
                        .iter()
                        .filter(|p| p.contains(u, v))
                        .map(|p| 1.0 - p.attenuation)
                        .product();
                    if factor != 1.0 {
                        for ch in 0..c {
                            out.set(ch, x, y, img.get(ch, x, y) * factor);
                        }
                    }
                }
            }
            out
        }
    }
}

fn blur(img: &Image, kind: BlurKind, radius: usize) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = radius as isize;
    let at = |p: &[f64], x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        p[yc * w + xc]
    };
    match kind {
        BlurKind::Median => {
            let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
            Image::from_fn(w, h, c, |ch, x, y| {
                let p = img.plane(ch);
                window.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        window.push(at(p, x as isize + dx, y as isize + dy));
                    }
                }
                let mid = window.len() / 2;
                *window.select_nth_unstable_by(mid, f64::total_cmp).1
            })
        }
        BlurKind::Gaussian | BlurKind::Average => {
            let taps: Vec<f64> = if kind == BlurKind::Average {
                vec![1.0; 2 * radius + 1]
            } else {
                let sigma = radius as f64 / 2.0 + 0.5;
                (-r..=r)
                    .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
                    .collect()
            };
            let norm: f64 = taps.iter().sum();
            let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
            let mut out = Image::new(w, h, c);
            for ch in 0..c {
                let p = img.plane(ch);
                let mut tmp = vec![0.0; w * h];
                for y in 0..h {
                    for x in 0..w {
                        tmp[y * w + x] = (-r..=r)
                            .zip(&taps)
                            .map(|(k, t)| t * at(p, x as isize + k, y as isize))
                            .sum();
                    }
                }
                let dst = out.plane_mut(ch);
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] = (-r..=r)
                            .zip(&taps)
                            .map(|(k, t)| t * at(&tmp, x as isize, y as isize + k))
                            .sum();
                    }
                }
            }
            out
        }
    }
}

impl fmt::Display for Photometric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Photometric::Blur { kind, radius } => write!(f, "blur({},{radius})", kind.name()),
            Photometric::ChannelShuffle { permutation: [a, b, c] } => {
                write!(f, "channel_shuffle({a},{b},{c})")
            }
            Photometric::Contrast { strength } => write!(f, "contrast({strength:?})"),
            Photometric::GrayscaleMix { weight } => write!(f, "grayscale_mix({weight:?})"),
            Photometric::Invert => write!(f, "invert"),
            Photometric::SaltPepper { fraction, seed } => write!(f, "salt_pepper({fraction:?},{seed})"),
            Photometric::Shadow { polygons } => {
                write!(f, "shadow(")?;
                for (k, p) in polygons.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{:?}", p.attenuation)?;
                    for (x, y) in &p.vertices {
                        write!(f, "/{x:?} {y:?}")?;
                    }
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for PhotometricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.transforms.is_empty() {
            return f.write_str("none");
        }
        for (k, t) in self.transforms.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad number {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad integer {s:?}")))
}

impl FromStr for Photometric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "invert" {
            return Ok(Photometric::Invert);
        }
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| Error::Parse(format!("bad transform record {s:?}")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::Parse(format!("unterminated record {s:?}")))?;
        let parts: Vec<&str> = args.split(',').collect();
        let arity = |n: usize| {
            if parts.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("{name} expects {n} arguments")))
            }
        };
        match name {
            "blur" => {
                arity(2)?;
                let kind = match parts[0] {
                    "gaussian" => BlurKind::Gaussian,
                    "average" => BlurKind::Average,
                    "median" => BlurKind::Median,
                    k => return Err(Error::Parse(format!("unknown blur kind {k:?}"))),
                };
                Ok(Photometric::Blur {
                    kind,
                    radius: parse_usize(parts[1])?,
                })
            }
            "channel_shuffle" => {
                arity(3)?;
                Ok(Photometric::ChannelShuffle {
                    permutation: [parse_usize(parts[0])?, parse_usize(parts[1])?, parse_usize(parts[2])?],
                })
            }
            "contrast" => {
                arity(1)?;
                Ok(Photometric::Contrast {
                    strength: parse_f64(parts[0])?,
                })
            }
            "grayscale_mix" => {
                arity(1)?;
                Ok(Photometric::GrayscaleMix {
                    weight: parse_f64(parts[0])?,
                })
            }
            "salt_pepper" => {
                arity(2)?;
                Ok(Photometric::SaltPepper {
                    fraction: parse_f64(parts[0])?,
                    seed: parts[1]
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad seed {:?}", parts[1])))?,
                })
            }
            "shadow" => {
                let polygons = parts
                    .iter()
                    .map(|poly| {
                        let mut fields = poly.split('/');
                        let attenuation = parse_f64(fields.next().unwrap_or(""))?;
                        let vertices = fields
                            .map(|v| {
                                let (x, y) = v
                                    .trim()
                                    .split_once(' ')
                                    .ok_or_else(|| Error::Parse(format!("bad vertex {v:?}")))?;
                                Ok((parse_f64(x)?, parse_f64(y)?))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(ShadowPolygon {
                            attenuation,
                            vertices,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Photometric::Shadow { polygons })
            }
            _ => Err(Error::Parse(format!("unknown transform {name:?}"))),
        }
    }
}

impl FromStr for PhotometricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(Self::default());
        }
        let transforms = s.split(';').map(str::parse).collect::<Result<Vec<_>>>()?;
        Self::new(transforms)
    }
}
