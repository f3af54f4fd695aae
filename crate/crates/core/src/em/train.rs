//! The mini-batch training loop: one E-step and one parameter update per
//! iteration.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{descriptor_gradient_coefficients, detector_gradient_coefficients, e_step};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{self, Adam, AdamState, ModelOutput, ModelParams};
use crate::properties::{Correspondence, PropertyConfig, SceneBatch};
use crate::rng;
use crate::simulate::{make_views, SimulateConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Scenes per mini-batch.
    pub batch_scenes: usize,
    /// Transformed views per scene.
    pub views: usize,
    pub iterations: usize,
    pub properties: PropertyConfig,
    pub optimizer: Adam,
    pub simulate: SimulateConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_scenes == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.views < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 views per scene, got {}",
                self.views
            )));
        }
        self.properties.validate()?;
        self.optimizer.validate()?;
        self.simulate.viewpoint.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    /// Expected log-likelihood summed over the scenes that were not skipped;
    /// NaN when every scene was skipped.
    pub expected_log_likelihood: f64,
    pub mean_num_yhat: f64,
    pub skipped_scenes: usize,
    /// Wall time since the start of training.
    pub seconds: f64,
}

impl TrainLogRow {
    pub const CSV_HEADER: &'static str = "iteration,E_y_L,mean_num_yhat,skipped_scenes,seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.10e},{:.4},{},{:.3}",
            self.iteration, self.expected_log_likelihood, self.mean_num_yhat, self.skipped_scenes, self.seconds
        )
    }
}

pub fn log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from(TrainLogRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<TrainLogRow>,
}

/// Index of the scene drawn at position `pos` of the cycled stream, which
/// visits every scene once per epoch in a freshly shuffled order.
fn scene_at(order_cache: &mut Vec<(usize, Vec<usize>)>, seed: u64, count: usize, pos: usize) -> usize {
    let epoch = pos / count;
    if let Some((_, order)) = order_cache.iter().find(|(e, _)| *e == epoch) {
        return order[pos % count];
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng::stream(seed, &[0x0e90, epoch as u64]));
    let v = order[pos % count];
    order_cache.retain(|(e, _)| *e + 1 >= epoch);
    order_cache.push((epoch, order));
    v
}

struct Prepared {
    outputs: Vec<ModelOutput>,
    correspondence: Correspondence,
}

/// Trains `initial` on views simulated from `scenes`. The same
/// `(scenes, initial, cfg)` always produces the same parameters.
pub fn train(scenes: &[Image], initial: ModelParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = initial;
    let mut log = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { params, log });
    }
    if scenes.is_empty() {
        return Err(Error::InvalidConfig("no training scenes".into()));
    }
    let channels = params.topology().in_channels;
    let scenes: Vec<Image> = scenes.iter().map(|s| s.with_channels(channels)).collect();
    let mut state = AdamState::new(&params);
    let mut orders = Vec::new();
    let start = Instant::now();

    for t in 0..cfg.iterations {
        let draws: Vec<(u64, usize)> = (0..cfg.batch_scenes)
            .map(|b| {
                let pos = t * cfg.batch_scenes + b;
                (pos as u64, scene_at(&mut orders, cfg.seed, scenes.len(), pos))
            })
            .collect();
        let prepared: Vec<Prepared> = draws
            .par_iter()
            .map(|&(draw, idx)| {
                let (views, correspondence) = make_views(&scenes[idx], cfg.views, cfg.seed, draw, &cfg.simulate)?;
                let outputs = views
                    .par_iter()
                    .map(|v| model::forward(&params, &v.image))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Prepared {
                    outputs,
                    correspondence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let batches: Vec<SceneBatch<'_>> = prepared
            .iter()
            .map(|p| SceneBatch::new(&p.outputs, &p.correspondence))
            .collect::<Result<Vec<_>>>()?;
        let (states, total) = e_step(&batches, &cfg.properties)?;

        let active: Vec<(usize, &super::LatentState)> = states
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.as_ref().map(|s| (k, s)))
            .collect();
        let skipped = states.len() - active.len();
        let mean_num_yhat = if active.is_empty() {
            0.0
        } else {
            active.iter().map(|(_, s)| s.num_selected() as f64).sum::<f64>() / active.len() as f64
        };

        if !active.is_empty() {
            let jobs: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = active
                .iter()
                .map(|&(k, st)| {
                    let det = detector_gradient_coefficients(st, &batches[k]);
                    let desc = descriptor_gradient_coefficients(st, &batches[k], &cfg.properties)?;
                    Ok(det
                        .into_iter()
                        .zip(desc)
                        .enumerate()
                        .map(|(j, (gp, gd))| (k, j, gp, gd))
                        .collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let grads = jobs
                .par_iter()
                .map(|(k, j, gp, gd)| model::backward(&params, &prepared[*k].outputs[*j], Some(gp), Some(gd)))
                .collect::<Result<Vec<_>>>()?;
            // Sequential reduction in (scene, view) order keeps the sum
            // independent of thread scheduling.
            let mut ascent = grads[0].clone();
            for g in &grads[1..] {
                ascent.add_assign(g);
            }
            ascent.scale(-1.0);
            cfg.optimizer.step(&mut params, &ascent, &mut state)?;
        }

        let row = TrainLogRow {
            iteration: t + 1,
            expected_log_likelihood: if active.is_empty() { f64::NAN } else { total },
            mean_num_yhat,
            skipped_scenes: skipped,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", row.to_csv());
        log.push(row);
    }
    Ok(TrainOutcome { params, log })
}
