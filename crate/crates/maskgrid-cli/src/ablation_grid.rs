//! The CLI's view of the standard ablation grid.

use maskgrid::synth::ablate::standard_grid;
use maskgrid::synth::train::ExperimentConfig;

pub fn build_grid(seeds: &[u64], quick: bool) -> Vec<ExperimentConfig> {
    let epochs = if quick { 4 } else { 24 };
    let mut grid = standard_grid(seeds, epochs);
    if quick {
        for cfg in &mut grid {
            cfg.train_scenes = 8;
            cfg.val_scenes = 8;
        }
    }
    grid
}
