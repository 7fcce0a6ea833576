//! The toy training loop: generate scenes, assign windows once per scene,
//! then iterate forward / losses / backward / SGD. Single-threaded and
//! deterministic given the experiment seed.

use serde::{Deserialize, Serialize};

use crate::assign::{
    assign, box_l1_loss, enumerate_windows, focal_cls_loss, mask_loss, total_loss, AssignConfig,
    Assignment, FocalConfig, LevelGeometry,
};
use crate::error::Result;
use crate::infer::ap::MatchKind;
use crate::infer::{decode, eval_ap, nms, paste_all, ApResult, DecodeConfig, Detection, NmsMode};
use crate::net::{HeadKind, LevelGrad, Model, ModelConfig, Sgd};
use crate::rng::SplitMix64;
use crate::synth::{generate_scene, scene_seed, Scene, SceneConfig};
use crate::tensor::{FeatureMap, StructuredTensor, Units};

/// Everything one training run needs, reproducible from `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub scene: SceneConfig,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// (mask, classification, box) loss weights; a zero box weight is the
    /// mask-only mode.
    pub loss_weights: (f64, f64, f64),
    pub fg_weight: f64,
    pub focal: FocalConfig,
    pub assign: AssignConfig,
    pub decode: DecodeConfig,
    pub nms_iou: f64,
    pub nms_mode: NmsMode,
    pub mask_bin_thresh: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            model: ModelConfig::default(),
            scene: SceneConfig::default(),
            train_scenes: 48,
            val_scenes: 24,
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            loss_weights: (1.0, 1.0, 1.0),
            fg_weight: 1.5,
            focal: FocalConfig::default(),
            assign: AssignConfig::default(),
            decode: DecodeConfig::default(),
            nms_iou: 0.5,
            nms_mode: NmsMode::RegressedBox,
            mask_bin_thresh: 0.5,
            seed: 1,
        }
    }
}

/// The window grid the model's predictions imply for an image of the given
/// size: one geometry per level, one (shape, units) entry per window size.
pub fn level_geometry(cfg: &ModelConfig, image_h: usize, image_w: usize) -> Vec<LevelGeometry> {
    (0..cfg.levels)
        .map(|k| {
            let stride = cfg.base_stride << k;
            let sizes = cfg
                .window_sizes
                .iter()
                .map(|&(v, u)| match cfg.head.kind {
                    HeadKind::Bipyramid => (
                        (v << k, u << k),
                        Units::new(cfg.base_stride as f64, stride as f64).unwrap(),
                    ),
                    _ => ((v, u), Units::new(stride as f64, stride as f64).unwrap()),
                })
                .collect();
            LevelGeometry {
                grid_h: image_h / stride,
                grid_w: image_w / stride,
                sizes,
            }
        })
        .collect()
}

pub struct TrainOutput {
    pub model: Model,
    /// Mean total loss per epoch.
    pub loss_curve: Vec<f64>,
}

fn scale_tensor(t: &StructuredTensor, s: f64) -> StructuredTensor {
    StructuredTensor::from_vec(
        t.shape(),
        t.units(),
        t.repr(),
        t.data().iter().map(|v| v * s).collect(),
    )
    .expect("same shape")
}

fn scale_map(m: &FeatureMap, s: f64) -> FeatureMap {
    let mut out = m.clone();
    for v in out.data_mut() {
        *v *= s;
    }
    out
}

/// One optimization step on one scene; returns the total loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut Sgd,
    scene: &Scene,
    assignments: &[Assignment],
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let (w_mask, w_cls, w_box) = cfg.loss_weights;
    model.zero_grad();
    let (cache, preds) = model.forward(&scene.image)?;
    let mut mask_preds: Vec<Vec<StructuredTensor>> = Vec::with_capacity(preds.len());
    let mut cls_logits: Vec<FeatureMap> = Vec::with_capacity(preds.len());
    let mut box_deltas: Vec<FeatureMap> = Vec::with_capacity(preds.len());
    for p in preds {
        mask_preds.push(p.masks);
        cls_logits.push(p.cls_logits);
        box_deltas.push(p.box_deltas);
    }
    let ml = mask_loss(&mask_preds, assignments, cfg.fg_weight)?;
    let (cls_l, cls_g) = focal_cls_loss(&cls_logits, assignments, cfg.model.num_classes, &cfg.focal)?;
    let bl = if w_box != 0.0 {
        Some(box_l1_loss(&box_deltas, assignments)?)
    } else {
        None
    };
    let total = total_loss(
        ml.loss,
        cls_l,
        bl.as_ref().map_or(0.0, |b| b.loss),
        cfg.loss_weights,
    );
    let grads: Vec<LevelGrad> = (0..mask_preds.len())
        .map(|k| LevelGrad {
            masks: ml.grads[k]
                .iter()
                .map(|g| (w_mask != 0.0 && ml.positives > 0).then(|| scale_tensor(g, w_mask)))
                .collect(),
            cls_logits: (w_cls != 0.0).then(|| scale_map(&cls_g[k], w_cls)),
            box_deltas: bl.as_ref().map(|b| scale_map(&b.grads[k], w_box)),
        })
        .collect();
    model.backward(&cache, &grads)?;
    opt.step(model.params().into_iter().map(|p| (p.values, &*p.grads)));
    Ok(total)
}

/// Train a model from scratch on `cfg.train_scenes` generated scenes.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    let scenes: Vec<Scene> = (0..cfg.train_scenes)
        .map(|i| generate_scene(&cfg.scene, scene_seed(cfg.seed, i)))
        .collect();
    // Model initialization gets its own stream derived from the seed.
    let model_seed = SplitMix64::new(cfg.seed ^ 0x6d6f_64656c).next_u64();
    let mut model = Model::new(ModelConfig {
        seed: model_seed,
        ..cfg.model.clone()
    })?;
    let geometry = level_geometry(&cfg.model, cfg.scene.height, cfg.scene.width);
    let windows = enumerate_windows(&geometry);
    let assignments: Vec<Vec<Assignment>> = scenes
        .iter()
        .map(|s| assign(&windows, &s.instances, &cfg.assign))
        .collect();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut epoch_total = 0.0;
        for (scene, asg) in scenes.iter().zip(&assignments) {
            epoch_total += train_step(&mut model, &mut opt, scene, asg, cfg)?;
        }
        loss_curve.push(epoch_total / scenes.len().max(1) as f64);
    }
    Ok(TrainOutput { model, loss_curve })
}

/// The validation scenes of an experiment (disjoint seed stream).
pub fn validation_scenes(cfg: &ExperimentConfig) -> Vec<Scene> {
    let val_root = SplitMix64::new(cfg.seed ^ 0x76616c).next_u64();
    (0..cfg.val_scenes)
        .map(|i| generate_scene(&cfg.scene, scene_seed(val_root, i)))
        .collect()
}

/// Run the full inference pipeline on one scene.
pub fn infer_scene(model: &Model, scene: &Scene, cfg: &ExperimentConfig) -> Result<Vec<Detection>> {
    let (_, preds) = model.forward(&scene.image)?;
    let mut dets = decode(&preds, &cfg.decode)?;
    paste_all(
        &mut dets,
        scene.image.height(),
        scene.image.width(),
        cfg.mask_bin_thresh,
    );
    nms(&dets, cfg.nms_iou, cfg.nms_mode)
}

/// Mask AP of a model over a scene set.
pub fn evaluate(
    model: &Model,
    scenes: &[Scene],
    cfg: &ExperimentConfig,
    iou_thresholds: &[f64],
) -> Result<(ApResult, Vec<Vec<Detection>>)> {
    let mut all_dets = Vec::with_capacity(scenes.len());
    for scene in scenes {
        all_dets.push(infer_scene(model, scene, cfg)?);
    }
    let gts: Vec<_> = scenes.iter().map(|s| s.instances.clone()).collect();
    let ap = eval_ap(&all_dets, &gts, iou_thresholds, MatchKind::Mask);
    Ok((ap, all_dets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::checkpoint;

    fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                image_channels: 3,
                width: 4,
                tower_depth: 1,
                levels: 1,
                base_stride: 4,
                window_sizes: vec![(5, 5)],
                num_classes: 3,
                ..ModelConfig::default()
            },
            scene: SceneConfig {
                height: 32,
                width: 32,
                instances: (1, 1),
                size_range: (12.0, 18.0),
                noise: 0.01,
            },
            train_scenes: 3,
            val_scenes: 2,
            epochs: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_gives_a_flat_curve() {
        let cfg = ExperimentConfig {
            lr: 0.0,
            epochs: 3,
            ..tiny_cfg()
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.loss_curve.len(), 3);
        for pair in out.loss_curve.windows(2) {
            assert!((pair[0] - pair[1]).abs() < 1e-12, "{:?}", out.loss_curve);
        }
    }

    #[test]
    fn training_is_deterministic_given_the_seed() {
        let cfg = tiny_cfg();
        let mut a = train(&cfg).unwrap();
        let mut b = train(&cfg).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        let mut buf_a = Vec::new();
        checkpoint::write_params(&mut buf_a, &mut a.model).unwrap();
        let mut buf_b = Vec::new();
        checkpoint::write_params(&mut buf_b, &mut b.model).unwrap();
        assert_eq!(buf_a, buf_b, "checkpoints must be bit-identical");
    }

    #[test]
    fn mask_only_mode_trains_without_a_box_loss() {
        let cfg = ExperimentConfig {
            loss_weights: (1.0, 1.0, 0.0),
            nms_mode: NmsMode::MaskBB,
            ..tiny_cfg()
        };
        let out = train(&cfg).unwrap();
        assert!(out.loss_curve.iter().all(|l| l.is_finite()));
        // The box head received no gradient, so its momentum never moved it;
        // evaluation still runs via mask-derived boxes.
        let scenes = validation_scenes(&cfg);
        let (_ap, dets) = evaluate(&out.model, &scenes, &cfg, &[0.5]).unwrap();
        assert_eq!(dets.len(), scenes.len());
    }

    #[test]
    fn geometry_matches_forward_shapes() {
        let cfg = tiny_cfg();
        let geom = level_geometry(&cfg.model, 32, 32);
        assert_eq!(geom.len(), 1);
        assert_eq!((geom[0].grid_h, geom[0].grid_w), (8, 8));
        let model = Model::new(cfg.model.clone()).unwrap();
        let scene = generate_scene(&cfg.scene, 1);
        let (_, preds) = model.forward(&scene.image).unwrap();
        assert_eq!(preds[0].masks[0].shape().h, geom[0].grid_h);
        let (vu, units) = geom[0].sizes[0];
        assert_eq!(vu, (preds[0].masks[0].shape().v, preds[0].masks[0].shape().u));
        assert_eq!(units, preds[0].masks[0].units());
    }

    #[test]
    fn bipyramid_geometry_tracks_levels() {
        let mcfg = ModelConfig {
            levels: 2,
            window_sizes: vec![(5, 5)],
            ..ModelConfig::default()
        };
        let geom = level_geometry(&mcfg, 64, 64);
        assert_eq!(geom[0].sizes[0].0, (5, 5));
        assert_eq!(geom[1].sizes[0].0, (10, 10));
        assert_eq!(geom[1].sizes[0].1.sigma_vu(), 4.0);
        assert_eq!(geom[1].sizes[0].1.sigma_hw(), 8.0);
    }
}
