//! Command-line front end: `train`, `eval`, `oracle-check` and `visualize`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures, 3 when the oracle suite reports a failed check.

mod config;
mod oracle_check;

pub use config::{
    EvalSection, ModelSection, PathsSection, Preset, PropertiesSection, RunConfig, SimulateSection,
    TrainSection,
};
pub use oracle_check::{
    posterior_approximation_gap, run_oracle_suite, CheckResult, CountFormula, OracleReport,
};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::em::{self, log_to_csv, TrainLogRow};
use crate::error::{Error, Result};
use crate::eval::{evaluate_pair, render_matches, EvalConfig, PairEvaluation, PairMetrics};
use crate::geometry::Homography;
use crate::image::{floor_to_multiple_of_4, Image};
use crate::model::{load_checkpoint, save_checkpoint, ModelParams};
use crate::rng;
use crate::simulate::{make_views, synthetic_scenes, SimulateConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_ORACLE: u8 = 3;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Exit code for an error escaping a command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

#[derive(Debug, Parser)]
#[command(name = "pointprops", version, about = "Unsupervised interest-point learning")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = automatic).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Training regime: pn-i, pn-v or pn-full.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and a CSV log.
    Train,
    /// Evaluate a checkpoint on image pairs and write a metrics CSV.
    Eval,
    /// Validate the approximations against exact references.
    OracleCheck {
        /// Negative control: use a wrong sample-space count formula.
        #[arg(long, hide = true)]
        corrupt_counts: bool,
    },
    /// Draw the matches between two images.
    Visualize {
        image_a: PathBuf,
        image_b: PathBuf,
        /// Ground-truth homography as nine numbers (row-major); identity when
        /// absent.
        #[arg(long, num_args = 9, allow_negative_numbers = true)]
        homography: Option<Vec<f64>>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut cfg = match RunConfig::load(cli.config.as_deref(), cli.preset.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Train => cmd_train(&cfg).map(|s| {
            println!("{s}");
            EXIT_OK
        }),
        Command::Eval => cmd_eval(&cfg).map(|s| {
            println!("{s}");
            EXIT_OK
        }),
        Command::OracleCheck { corrupt_counts } => {
            let formula = if *corrupt_counts {
                CountFormula::corrupted()
            } else {
                CountFormula::default()
            };
            cmd_oracle_check(&cfg, &formula).map(|r| {
                println!("{r}");
                if r.passed() {
                    EXIT_OK
                } else {
                    EXIT_ORACLE
                }
            })
        }
        Command::Visualize {
            image_a,
            image_b,
            homography,
        } => {
            let h = match homography {
                Some(v) => match Homography::from_row_slice(v) {
                    Ok(h) => Some(h),
                    Err(e) => return Err(Error::InvalidConfig(format!("--homography: {e}"))),
                },
                None => None,
            };
            cmd_visualize(&cfg, image_a, image_b, h.as_ref()).map(|s| {
                println!("{s}");
                EXIT_OK
            })
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Image files of `dir` in file-name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every readable image of `dir`, resized to the given size rounded
/// down to multiples of four. Unreadable files are skipped with a warning.
pub fn load_image_dir(dir: &Path, width: usize, height: usize, channels: usize) -> Result<Vec<(String, Image)>> {
    let (w, h) = (floor_to_multiple_of_4(width), floor_to_multiple_of_4(height));
    let mut out = Vec::new();
    for p in list_images(dir)? {
        match Image::load(&p) {
            Ok(img) => {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                out.push((name, img.resize_bilinear(w, h).with_channels(channels)));
            }
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    Ok(out)
}

/// Crops to dimensions divisible by four, which leaves pixel coordinates
/// (and therefore any homography) unchanged.
fn crop_to_stride(img: &Image, channels: usize) -> Result<Image> {
    let (w, h) = (floor_to_multiple_of_4(img.width()), floor_to_multiple_of_4(img.height()));
    if w == 0 || h == 0 {
        return Err(Error::Shape(format!("{}x{} image is too small", img.width(), img.height())));
    }
    let c = img.with_channels(channels);
    Ok(Image::from_fn(w, h, channels, |ch, x, y| c.get(ch, x, y)))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub scenes: usize,
    pub rows: Vec<TrainLogRow>,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let last = self.rows.last().map(|r| r.expected_log_likelihood).unwrap_or(f64::NAN);
        write!(
            f,
            "trained {} iterations on {} scenes (final E_y_L {last:.4}); checkpoint {} log {}",
            self.rows.len(),
            self.scenes,
            self.checkpoint.display(),
            self.log.display()
        )
    }
}

pub fn training_scenes(cfg: &RunConfig) -> Result<Vec<Image>> {
    let t = &cfg.train;
    let channels = cfg.model.in_channels;
    match &cfg.paths.images {
        Some(dir) => {
            let imgs = load_image_dir(dir, t.width, t.height, channels)?;
            if imgs.is_empty() {
                return Err(Error::Io {
                    path: dir.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no usable images"),
                });
            }
            if imgs.len() < t.batch_scenes {
                log::warn!("{} images for batches of {}; scenes will repeat", imgs.len(), t.batch_scenes);
            }
            Ok(imgs.into_iter().map(|(_, i)| i).collect())
        }
        None if t.synthetic_scenes > 0 => {
            let mut r = rng::stream(cfg.seed, &[0x5ce0]);
            let (w, h) = (floor_to_multiple_of_4(t.width), floor_to_multiple_of_4(t.height));
            Ok(synthetic_scenes(&mut r, t.synthetic_scenes, w, h, channels))
        }
        None => Err(Error::InvalidConfig(
            "paths.images is required unless train.synthetic_scenes is set".into(),
        )),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let scenes = training_scenes(cfg)?;
    let tcfg = cfg.train_config(scenes.len())?;
    let init = ModelParams::init(cfg.seed, cfg.model.in_channels, cfg.model.desc_len)?;
    let outcome = em::train(&scenes, init, &tcfg)?;
    let checkpoint = cfg.paths.checkpoint.clone().unwrap_or_else(|| "model.ckpt".into());
    let log = cfg.paths.log.clone().unwrap_or_else(|| "train_log.csv".into());
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_checkpoint(&outcome.params, &checkpoint)?;
    write_file(&log, &log_to_csv(&outcome.log))?;
    Ok(TrainSummary {
        checkpoint,
        log,
        scenes: scenes.len(),
        rows: outcome.log,
    })
}

/// One image pair with its ground-truth homography.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub id: String,
    pub a: Image,
    pub b: Image,
    pub h_gt: Homography,
}

/// Parses one pair-list line: `imgA imgB h11 … h33`.
pub fn parse_pair_line(line: &str, base: &Path) -> Result<(PathBuf, PathBuf, Homography)> {
    let tok: Vec<&str> = line.split_whitespace().collect();
    if tok.len() != 11 {
        return Err(Error::Parse(format!("expected 11 fields, found {}", tok.len())));
    }
    let h: Vec<f64> = tok[2..]
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    Ok((base.join(tok[0]), base.join(tok[1]), Homography::from_row_slice(&h)?))
}

/// Pairs from a pair-list file or a directory of self-paired images, plus
/// the number of pairs that had to be skipped.
pub fn eval_pairs(cfg: &RunConfig, sim: &SimulateConfig) -> Result<(Vec<EvalPair>, usize)> {
    let source = cfg
        .paths
        .pairs
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("paths.pairs is required for eval".into()))?;
    let channels = cfg.model.in_channels;
    if source.is_dir() {
        let imgs = load_image_dir(source, cfg.eval.width, cfg.eval.height, channels)?;
        let pairs = imgs
            .into_par_iter()
            .enumerate()
            .map(|(k, (id, a))| {
                let (mut views, _) = make_views(&a, 1, cfg.seed, k as u64, sim)?;
                let v = views.remove(0);
                Ok(EvalPair {
                    id,
                    b: v.image,
                    h_gt: v.homography,
                    a,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((pairs, 0));
    }
    let text = fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    let base = source.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loaded = parse_pair_line(line, base).and_then(|(pa, pb, h)| {
            let a = crop_to_stride(&Image::load(&pa)?, channels)?;
            let b = crop_to_stride(&Image::load(&pb)?, channels)?;
            Ok((pa, a, b, h))
        });
        match loaded {
            Ok((pa, a, b, h_gt)) => {
                let stem = pa.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                pairs.push(EvalPair {
                    id: format!("{}_{stem}", lineno + 1),
                    a,
                    b,
                    h_gt,
                });
            }
            Err(e) => {
                log::warn!("{}:{}: skipping pair: {e}", source.display(), lineno + 1);
                skipped += 1;
            }
        }
    }
    Ok((pairs, skipped))
}

/// Per-pair evaluations with RANSAC streams keyed by pair index.
pub fn evaluate_pairs(params: &ModelParams, pairs: &[EvalPair], ecfg: &EvalConfig) -> Result<Vec<PairEvaluation>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut c = *ecfg;
            c.ransac.seed = rng::derive_seed(ecfg.ransac.seed, &[k as u64]);
            evaluate_pair(params, &p.a, &p.b, &p.h_gt, &c)
        })
        .collect()
}

pub fn metrics_csv(ids: &[String], metrics: &[PairMetrics]) -> String {
    let mut s = String::from(PairMetrics::CSV_HEADER);
    s.push('\n');
    for (id, m) in ids.iter().zip(metrics) {
        s.push_str(&m.to_csv(id));
        s.push('\n');
    }
    if !metrics.is_empty() {
        let n = metrics.len() as f64;
        let mean = |f: &dyn Fn(&PairMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
        s.push_str(&format!(
            "mean,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            mean(&|m| m.m_score),
            mean(&|m| m.homography_error),
            mean(&|m| f64::from(u8::from(m.he))),
            mean(&|m| m.num_points_a as f64),
            mean(&|m| m.num_points_b as f64),
            mean(&|m| m.num_matches as f64),
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub metrics_path: PathBuf,
    pub pairs: usize,
    pub skipped: usize,
    pub mean_m_score: f64,
    pub mean_he: f64,
}

impl std::fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "evaluated {} pairs ({} skipped): mean M-score {:.4}, HE {:.4}; metrics {}",
            self.pairs,
            self.skipped,
            self.mean_m_score,
            self.mean_he,
            self.metrics_path.display()
        )
    }
}

fn load_model(cfg: &RunConfig) -> Result<ModelParams> {
    let path = cfg.paths.checkpoint.clone().unwrap_or_else(|| "model.ckpt".into());
    let params = load_checkpoint(&path)?;
    if params.topology().in_channels != cfg.model.in_channels {
        log::warn!(
            "checkpoint expects {} channels; images are converted accordingly",
            params.topology().in_channels
        );
    }
    Ok(params)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    let params = load_model(cfg)?;
    let mut cfg = cfg.clone();
    cfg.model.in_channels = params.topology().in_channels;
    let sim = cfg.simulate_config()?;
    let (pairs, skipped) = eval_pairs(&cfg, &sim)?;
    let ecfg = cfg.eval_config();
    let evals = evaluate_pairs(&params, &pairs, &ecfg)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let metrics: Vec<PairMetrics> = evals.iter().map(|e| e.metrics.clone()).collect();
    let metrics_path = cfg.paths.metrics.clone().unwrap_or_else(|| "metrics.csv".into());
    write_file(&metrics_path, &metrics_csv(&ids, &metrics))?;
    if let Some(dir) = &cfg.paths.visualize_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (p, e) in pairs.iter().zip(&evals) {
            let img = render_matches(&p.a, &p.b, &e.a, &e.b, &e.matches, &e.check.forward);
            img.save(&dir.join(format!("{}.png", p.id)))?;
        }
    }
    let n = metrics.len().max(1) as f64;
    Ok(EvalSummary {
        metrics_path,
        pairs: metrics.len(),
        skipped,
        mean_m_score: metrics.iter().map(|m| m.m_score).sum::<f64>() / n,
        mean_he: metrics.iter().map(|m| f64::from(u8::from(m.he))).sum::<f64>() / n,
    })
}

pub fn cmd_oracle_check(cfg: &RunConfig, formula: &CountFormula) -> Result<OracleReport> {
    run_oracle_suite(cfg.seed, formula)
}

#[derive(Clone, Debug)]
pub struct VisualizeSummary {
    pub image: PathBuf,
    pub sidecar: PathBuf,
    pub metrics: PairMetrics,
}

impl std::fmt::Display for VisualizeSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "wrote {} (M-score {:.4}, {} matches); details in {}",
            self.image.display(),
            self.metrics.m_score,
            self.metrics.num_matches,
            self.sidecar.display()
        )
    }
}

/// Sidecar text for a visualization.
pub fn visualize_report(m: &PairMetrics) -> String {
    let homography = match &m.estimate {
        Some(h) => format!("homography_error={:.6}\nHE={}\nestimate={h}\n", m.homography_error, u8::from(m.he)),
        None => "homography_error=failed\nHE=0\nestimate=failed\n".to_string(),
    };
    format!(
        "m_score={:.6}\nnum_points_A={}\nnum_points_B={}\nnum_matches={}\n{homography}",
        m.m_score, m.num_points_a, m.num_points_b, m.num_matches
    )
}

pub fn cmd_visualize(cfg: &RunConfig, a: &Path, b: &Path, h_gt: Option<&Homography>) -> Result<VisualizeSummary> {
    let params = load_model(cfg)?;
    let c = params.topology().in_channels;
    let img_a = crop_to_stride(&Image::load(a)?, c)?;
    let img_b = crop_to_stride(&Image::load(b)?, c)?;
    let identity = Homography::identity();
    let h = h_gt.unwrap_or(&identity);
    let e = evaluate_pair(&params, &img_a, &img_b, h, &cfg.eval_config())?;
    let image = cfg.paths.output.clone().unwrap_or_else(|| "matches.png".into());
    if let Some(parent) = image.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    render_matches(&img_a, &img_b, &e.a, &e.b, &e.matches, &e.check.forward).save(&image)?;
    let mut sidecar = image.clone().into_os_string();
    sidecar.push(".txt");
    let sidecar = PathBuf::from(sidecar);
    write_file(&sidecar, &visualize_report(&e.metrics))?;
    Ok(VisualizeSummary {
        image,
        sidecar,
        metrics: e.metrics,
    })
}
