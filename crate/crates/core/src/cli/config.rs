//! Run configuration: a TOML file with one table per concern.
//!
//! Values are resolved in three layers. Built-in defaults come first, the
//! selected preset overrides some of them, and keys present in the file
//! override both. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::em::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, RansacConfig};
use crate::model::Adam;
use crate::properties::PropertyConfig;
use crate::simulate::{HomographySampler, IlluminationLevel, SimulateConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Strong illumination changes, rotation capped at 45°, d = 64.
    PnI,
    /// Mild illumination, unrestricted rotation, d = 64.
    PnV,
    /// Strong illumination, unrestricted rotation, d = 128.
    PnFull,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pn-i" => Ok(Preset::PnI),
            "pn-v" => Ok(Preset::PnV),
            "pn-full" => Ok(Preset::PnFull),
            _ => Err(Error::InvalidConfig(format!(
                "unknown preset {s:?} (expected pn-i, pn-v or pn-full)"
            ))),
        }
    }
}

impl Preset {
    fn overrides(self) -> toml::Table {
        let (illum, view, d) = match self {
            Preset::PnI => ("illum_full", "viewpoint_medium", 64),
            Preset::PnV => ("illum_mild", "viewpoint_full", 64),
            Preset::PnFull => ("illum_full", "viewpoint_full", 128),
        };
        let text = format!(
            "[model]\ndesc_len = {d}\n[simulate]\nillumination = \"{illum}\"\nviewpoint = \"{view}\"\n"
        );
        text.parse().expect("preset table is valid TOML")
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub desc_len: usize,
    pub in_channels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            desc_len: 64,
            in_channels: 3,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_scenes: usize,
    pub views: usize,
    /// Fixed iteration count; when absent, `epochs` passes over the scenes.
    pub iterations: Option<usize>,
    pub epochs: usize,
    pub width: usize,
    pub height: usize,
    /// Number of procedural scenes used when no image directory is given.
    pub synthetic_scenes: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = Adam::default();
        Self {
            batch_scenes: 2,
            views: 10,
            iterations: None,
            epochs: 2,
            width: 320,
            height: 240,
            synthetic_scenes: 0,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PropertiesSection {
    pub rad: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub m_p: f64,
    pub m_n: f64,
    /// Defaults to `10 / n_max`.
    pub lambda: Option<f64>,
    pub alpha: f64,
}

impl Default for PropertiesSection {
    fn default() -> Self {
        let p = PropertyConfig::training_defaults();
        Self {
            rad: p.rad,
            n_min: p.n_min,
            n_max: p.n_max,
            m_p: p.m_p,
            m_n: p.m_n,
            lambda: None,
            alpha: p.alpha,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub illumination: String,
    pub viewpoint: String,
    pub max_rotation_deg: Option<f64>,
    pub perturb: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            illumination: "illum_full".into(),
            viewpoint: "viewpoint_medium".into(),
            max_rotation_deg: None,
            perturb: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pt: f64,
    pub rad: usize,
    pub max_k: usize,
    pub epsilon: f64,
    pub ransac_iterations: usize,
    pub ransac_confidence: f64,
    pub ransac_threshold: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            pt: e.pt,
            rad: e.rad,
            max_k: e.max_k,
            epsilon: e.epsilon,
            ransac_iterations: e.ransac.max_iterations,
            ransac_confidence: e.ransac.confidence,
            ransac_threshold: e.ransac.threshold,
            width: 320,
            height: 240,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub images: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Pair list file, or a directory of images paired with simulated views.
    pub pairs: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub visualize_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub preset: Option<String>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub properties: PropertiesSection,
    pub simulate: SimulateSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Resolves defaults, preset and file contents. `preset` (from the
    /// command line) wins over a `preset` key in the file.
    pub fn from_toml(text: &str, preset: Option<&str>) -> Result<Self> {
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let chosen = match preset {
            Some(p) => Some(p.to_string()),
            None => file.get("preset").and_then(|v| v.as_str()).map(str::to_string),
        };
        let mut table = toml::Table::new();
        if let Some(p) = &chosen {
            table = p.parse::<Preset>()?.overrides();
        }
        merge(&mut table, file);
        if let Some(p) = chosen {
            table.insert("preset".into(), toml::Value::String(p));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, preset: Option<&str>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, preset)
    }

    pub fn property_config(&self) -> PropertyConfig {
        let p = &self.properties;
        PropertyConfig {
            rad: p.rad,
            n_min: p.n_min,
            n_max: p.n_max,
            m_p: p.m_p,
            m_n: p.m_n,
            lambda: p.lambda.unwrap_or(10.0 / p.n_max as f64),
            alpha: p.alpha,
        }
    }

    pub fn simulate_config(&self) -> Result<SimulateConfig> {
        let s = &self.simulate;
        let illumination: IlluminationLevel = s
            .illumination
            .parse()
            .map_err(|e: Error| Error::InvalidConfig(e.to_string()))?;
        let mut viewpoint: HomographySampler = s
            .viewpoint
            .parse()
            .map_err(|e: Error| Error::InvalidConfig(e.to_string()))?;
        if let Some(r) = s.max_rotation_deg {
            viewpoint.max_rotation_deg = r;
        }
        if let Some(p) = s.perturb {
            viewpoint.perturb = p;
        }
        viewpoint.validate()?;
        Ok(SimulateConfig {
            illumination,
            viewpoint,
        })
    }

    pub fn eval_config(&self) -> EvalConfig {
        let e = &self.eval;
        EvalConfig {
            pt: e.pt,
            rad: e.rad,
            max_k: e.max_k,
            epsilon: e.epsilon,
            ransac: RansacConfig {
                max_iterations: e.ransac_iterations,
                confidence: e.ransac_confidence,
                threshold: e.ransac_threshold,
                seed: self.seed,
            },
        }
    }

    /// Training configuration for `scene_count` scenes.
    pub fn train_config(&self, scene_count: usize) -> Result<TrainConfig> {
        let t = &self.train;
        let iterations = t
            .iterations
            .unwrap_or_else(|| (t.epochs * scene_count).div_ceil(t.batch_scenes.max(1)));
        let cfg = TrainConfig {
            batch_scenes: t.batch_scenes,
            views: t.views,
            iterations,
            properties: self.property_config(),
            optimizer: Adam {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            simulate: self.simulate_config()?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.model.desc_len < 2 {
            return bad(format!("model.desc_len {} must be at least 2", self.model.desc_len));
        }
        if self.model.in_channels == 0 {
            return bad("model.in_channels must be positive".into());
        }
        let t = &self.train;
        if t.batch_scenes == 0 {
            return bad("train.batch_scenes must be at least 1".into());
        }
        if t.views < 2 {
            return bad(format!("train.views {} must be at least 2", t.views));
        }
        if t.iterations.is_none() && t.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        for (name, v) in [("train", (t.width, t.height)), ("eval", (self.eval.width, self.eval.height))] {
            if v.0 < 8 || v.1 < 8 {
                return bad(format!("{name} image size {}x{} is below 8x8", v.0, v.1));
            }
        }
        self.property_config().validate()?;
        self.simulate_config()?;
        self.eval_config().validate()?;
        Adam {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        }
        .validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_setup() {
        let c = RunConfig::from_toml("", None).unwrap();
        let p = c.property_config();
        assert_eq!((p.rad, p.n_min, p.n_max), (4, 200, 400));
        assert!((p.lambda - 10.0 / 400.0).abs() < 1e-15);
        assert_eq!((c.train.batch_scenes, c.train.views), (2, 10));
        assert_eq!(c.train_config(10).unwrap().iterations, 10);
    }

    #[test]
    fn presets_and_file_layers() {
        let c = RunConfig::from_toml("[model]\nin_channels = 1\n", Some("pn-full")).unwrap();
        assert_eq!((c.model.desc_len, c.model.in_channels), (128, 1));
        assert_eq!(c.simulate_config().unwrap().viewpoint, HomographySampler::FULL);
        let c = RunConfig::from_toml("preset = \"pn-v\"\n[model]\ndesc_len = 32\n", None).unwrap();
        assert_eq!(c.model.desc_len, 32);
        assert_eq!(c.simulate_config().unwrap().illumination, IlluminationLevel::Mild);
    }

    #[test]
    fn rejects_invalid_settings() {
        for text in [
            "[properties]\nn_min = 400\nn_max = 400\n",
            "[properties]\nm_n = 1.0\n",
            "[train]\nviews = 1\n",
            "[properties]\nrad = 0\n",
            "[train]\nunknown_key = 3\n",
            "bogus = 1\n",
        ] {
            assert!(RunConfig::from_toml(text, None).is_err(), "{text}");
        }
        assert!(RunConfig::from_toml("", Some("pn-x")).is_err());
    }
}
