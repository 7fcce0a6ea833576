//! The ablation grid: train each configuration on identical data and seeds,
//! evaluate synthetic AP, and tabulate. Configurations run in parallel;
//! each one is single-threaded and deterministic.

use rayon::prelude::*;

use crate::error::Result;
use crate::net::{HeadConfig, ModelConfig};
use crate::synth::train::{evaluate, train, validation_scenes, ExperimentConfig};
use crate::synth::SceneConfig;
use crate::transforms::Interp;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub seed: u64,
    pub ap50: f64,
    pub ap75: f64,
    pub final_loss: f64,
}

impl AblationRow {
    pub fn csv_header() -> &'static str {
        "name,seed,ap50,ap75,final_loss"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.name, self.seed, self.ap50, self.ap75, self.final_loss
        )
    }
}

/// Train and evaluate one configuration.
pub fn run_one(cfg: &ExperimentConfig) -> Result<AblationRow> {
    let out = train(cfg)?;
    let scenes = validation_scenes(cfg);
    let (ap, _) = evaluate(&out.model, &scenes, cfg, &[0.5, 0.75])?;
    Ok(AblationRow {
        name: cfg.name.clone(),
        seed: cfg.seed,
        ap50: ap.at(0.5).unwrap_or(0.0),
        ap75: ap.at(0.75).unwrap_or(0.0),
        final_loss: out.loss_curve.last().copied().unwrap_or(f64::NAN),
    })
}

/// Run every configuration, in parallel across configs, preserving input
/// order in the output.
pub fn run_ablation(configs: &[ExperimentConfig]) -> Result<Vec<AblationRow>> {
    configs.par_iter().map(run_one).collect()
}

/// The upscale-head comparison setting: one stride-4 level with 15x15
/// windows and an upscaling factor of 5, on scenes whose objects fit the
/// single 60 px window size.
fn upscale_setting(name: &str, head: HeadConfig, seed: u64, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        model: ModelConfig {
            levels: 1,
            window_sizes: vec![(15, 15)],
            head,
            ..ModelConfig::default()
        },
        scene: SceneConfig {
            instances: (1, 2),
            size_range: (32.0, 50.0),
            ..SceneConfig::default()
        },
        epochs,
        seed,
        ..ExperimentConfig::default()
    }
}

/// The pyramid-vs-bipyramid setting: two levels with 5x5 base windows
/// (20/40 px); scene sizes route every object to the coarser level, where
/// the representations differ most.
fn pyramid_setting(name: &str, head: HeadConfig, seed: u64, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        model: ModelConfig {
            levels: 2,
            window_sizes: vec![(5, 5)],
            head,
            ..ModelConfig::default()
        },
        scene: SceneConfig {
            instances: (1, 2),
            size_range: (22.0, 34.0),
            ..SceneConfig::default()
        },
        epochs,
        seed,
        ..ExperimentConfig::default()
    }
}

/// The directional comparison grid: per seed, the upscale-head pair (a),
/// the interpolation pair (b) sharing the bilinear run, and the
/// pyramid-vs-bipyramid trio (c).
pub fn standard_grid(seeds: &[u64], epochs: usize) -> Vec<ExperimentConfig> {
    let mut grid = Vec::new();
    for &seed in seeds {
        grid.push(upscale_setting(
            "upscale-aligned-bilinear-l5",
            HeadConfig::upscale_aligned(5, Interp::Bilinear),
            seed,
            epochs,
        ));
        grid.push(upscale_setting(
            "upscale-natural-l5",
            HeadConfig::upscale_natural(5),
            seed,
            epochs,
        ));
        grid.push(upscale_setting(
            "upscale-aligned-nearest-l5",
            HeadConfig::upscale_aligned(5, Interp::NearestNeighbor),
            seed,
            epochs,
        ));
        grid.push(pyramid_setting(
            "pyramid-simple-aligned",
            HeadConfig::simple_aligned(),
            seed,
            epochs,
        ));
        grid.push(pyramid_setting(
            "pyramid-simple-natural",
            HeadConfig::simple_natural(),
            seed,
            epochs,
        ));
        grid.push(pyramid_setting(
            "bipyramid",
            HeadConfig::bipyramid(),
            seed,
            epochs,
        ));
    }
    grid
}

/// Mean AP@0.5 of the rows whose name matches, across seeds.
pub fn mean_ap50(rows: &[AblationRow], name: &str) -> f64 {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.name == name)
        .map(|r| r.ap50)
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}
