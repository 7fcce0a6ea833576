//! The toy dense-mask model: a small strided backbone, a feature pyramid (or
//! the converted fine-resolution maps for the bipyramid head), and the three
//! prediction branches. Branch weights are shared across levels, not between
//! tasks.

use crate::bipyramid::{FpnConvert, FpnConvertCache};
use crate::error::{Error, Result};
use crate::net::heads::{
    BoxHead, BoxHeadCache, ClsHead, ClsHeadCache, HeadConfig, HeadKind, MaskHead, MaskHeadCache,
    Tower, TowerCache,
};
use crate::net::layers::{avg_pool2, avg_pool2_backward, relu, relu_backward, Conv2d};
use crate::rng::SplitMix64;
use crate::tensor::{FeatureMap, StructuredTensor};

/// Architecture and initialization parameters. Everything is derived
/// deterministically from `seed`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub image_channels: usize,
    /// Channel width of every conv in the network.
    pub width: usize,
    /// Depth of the mask/cls/box towers.
    pub tower_depth: usize,
    /// Number of pyramid levels; level k has stride `base_stride * 2^k`.
    pub levels: usize,
    /// Stride of the finest level. Must be a power of two.
    pub base_stride: usize,
    pub head: HeadConfig,
    /// Window sizes in VU samples at level 0 (one mask head per size).
    pub window_sizes: Vec<(usize, usize)>,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_channels: 3,
            width: 16,
            tower_depth: 4,
            levels: 2,
            base_stride: 4,
            head: HeadConfig::bipyramid(),
            window_sizes: vec![(9, 9)],
            num_classes: 3,
            seed: 1,
        }
    }
}

/// Mutable view of one parameter array and its gradient buffer.
pub struct ParamRef<'a> {
    pub name: String,
    pub values: &'a mut Vec<f64>,
    pub grads: &'a mut Vec<f64>,
}

fn conv_params<'a>(name: &str, conv: &'a mut Conv2d, out: &mut Vec<ParamRef<'a>>) {
    out.push(ParamRef {
        name: format!("{name}.w"),
        values: &mut conv.w,
        grads: &mut conv.gw,
    });
    out.push(ParamRef {
        name: format!("{name}.b"),
        values: &mut conv.b,
        grads: &mut conv.gb,
    });
}

/// Strided stem producing per-level feature maps at strides
/// `base_stride * 2^k`.
#[derive(Debug, Clone)]
pub struct Backbone {
    convs: Vec<Conv2d>,
    downsamples: usize,
    levels: usize,
}

pub struct BackboneCache {
    conv_inputs: Vec<FeatureMap>,
    conv_outputs: Vec<FeatureMap>,
    pool_inputs: Vec<FeatureMap>,
}

impl Backbone {
    fn new(cfg: &ModelConfig, rng: &mut SplitMix64) -> Result<Backbone> {
        if !cfg.base_stride.is_power_of_two() {
            return Err(Error::pre(format!(
                "base stride must be a power of two, got {}",
                cfg.base_stride
            )));
        }
        let downsamples = cfg.base_stride.trailing_zeros() as usize;
        let mut convs = vec![Conv2d::new(cfg.image_channels, cfg.width, 3, rng)];
        for _ in 0..downsamples + cfg.levels - 1 {
            convs.push(Conv2d::new(cfg.width, cfg.width, 3, rng));
        }
        Ok(Backbone {
            convs,
            downsamples,
            levels: cfg.levels,
        })
    }

    /// Returns the cache and the per-level maps (finest first).
    fn forward(&self, image: &FeatureMap) -> (BackboneCache, Vec<FeatureMap>) {
        let mut cache = BackboneCache {
            conv_inputs: Vec::new(),
            conv_outputs: Vec::new(),
            pool_inputs: Vec::new(),
        };
        let mut levels = Vec::with_capacity(self.levels);
        let mut cur = image.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                cache.pool_inputs.push(cur.clone());
                cur = avg_pool2(&cur);
            }
            cache.conv_inputs.push(cur.clone());
            cur = relu(&conv.forward(&cur));
            cache.conv_outputs.push(cur.clone());
            if i >= self.downsamples {
                levels.push(cur.clone());
            }
        }
        (cache, levels)
    }

    /// `d_levels` must hold one gradient per level (zeros allowed). Returns
    /// the gradient with respect to the input image.
    fn backward(&mut self, cache: &BackboneCache, d_levels: &[FeatureMap]) -> FeatureMap {
        let mut grad: Option<FeatureMap> = None;
        for i in (0..self.convs.len()).rev() {
            if i >= self.downsamples {
                let d_level = &d_levels[i - self.downsamples];
                grad = Some(match grad {
                    None => d_level.clone(),
                    Some(mut g) => {
                        for (a, b) in g.data_mut().iter_mut().zip(d_level.data()) {
                            *a += b;
                        }
                        g
                    }
                });
            }
            let g = grad.take().expect("gradient present from coarser level");
            let d_pre = relu_backward(&cache.conv_outputs[i], &g);
            let mut d_in = self.convs[i].backward(&cache.conv_inputs[i], &d_pre);
            if i > 0 {
                d_in = avg_pool2_backward(&cache.pool_inputs[i - 1], &d_in);
            }
            grad = Some(d_in);
        }
        grad.expect("at least one conv")
    }
}

/// Dense predictions for one pyramid level.
pub struct LevelPrediction {
    /// Natural mask logits, one tensor per window size.
    pub masks: Vec<StructuredTensor>,
    /// `(sizes * classes, Hk, Wk)` logits.
    pub cls_logits: FeatureMap,
    /// `(sizes * 4, Hk, Wk)` box deltas.
    pub box_deltas: FeatureMap,
}

/// Upstream gradients for one level; `None` entries contribute nothing.
#[derive(Default)]
pub struct LevelGrad {
    pub masks: Vec<Option<StructuredTensor>>,
    pub cls_logits: Option<FeatureMap>,
    pub box_deltas: Option<FeatureMap>,
}

pub struct ModelCache {
    backbone: BackboneCache,
    levels: Vec<FeatureMap>,
    convert: Option<(FpnConvertCache, Vec<FeatureMap>)>,
    mask_towers: Vec<TowerCache>,
    mask_tower_outs: Vec<FeatureMap>,
    mask_heads: Vec<Vec<MaskHeadCache>>,
    cls: Vec<ClsHeadCache>,
    boxh: Vec<BoxHeadCache>,
}

pub struct Model {
    pub cfg: ModelConfig,
    backbone: Backbone,
    fpn_convert: Option<FpnConvert>,
    mask_tower: Tower,
    mask_heads: Vec<MaskHead>,
    cls: ClsHead,
    boxh: BoxHead,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Model> {
        let mut rng = SplitMix64::new(cfg.seed);
        let backbone = Backbone::new(&cfg, &mut rng)?;
        let fpn_convert = match cfg.head.kind {
            HeadKind::Bipyramid => Some(FpnConvert::new(cfg.width, &mut rng)),
            _ => None,
        };
        let mask_tower = Tower::new(cfg.width, cfg.tower_depth, &mut rng);
        let mask_heads = cfg
            .window_sizes
            .iter()
            .map(|&vu| MaskHead::new(cfg.width, vu, cfg.head, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let cls = ClsHead::new(
            cfg.width,
            cfg.tower_depth,
            cfg.window_sizes.len(),
            cfg.num_classes,
            &mut rng,
        );
        let boxh = BoxHead::new(cfg.width, cfg.tower_depth, cfg.window_sizes.len(), &mut rng);
        Ok(Model {
            cfg,
            backbone,
            fpn_convert,
            mask_tower,
            mask_heads,
            cls,
            boxh,
        })
    }

    pub fn num_sizes(&self) -> usize {
        self.cfg.window_sizes.len()
    }

    pub fn forward(&self, image: &FeatureMap) -> Result<(ModelCache, Vec<LevelPrediction>)> {
        let (backbone_cache, levels) = self.backbone.forward(image);
        // The mask branch sees the converted fine maps in bipyramid mode,
        // otherwise the pyramid maps themselves.
        let convert = match &self.fpn_convert {
            Some(converter) => {
                let finest = levels[0].clone();
                let (cache, maps) = converter.forward(&levels, &finest)?;
                Some((cache, maps))
            }
            None => None,
        };
        let mut cache = ModelCache {
            backbone: backbone_cache,
            levels: levels.clone(),
            convert,
            mask_towers: Vec::new(),
            mask_tower_outs: Vec::new(),
            mask_heads: Vec::new(),
            cls: Vec::new(),
            boxh: Vec::new(),
        };
        let mask_inputs: Vec<FeatureMap> = match &cache.convert {
            Some((_, maps)) => maps.clone(),
            None => levels.clone(),
        };
        let mut preds = Vec::with_capacity(levels.len());
        for (k, level_map) in levels.iter().enumerate() {
            let (tower_cache, tower_out) = self.mask_tower.forward(&mask_inputs[k]);
            let head_level = match self.cfg.head.kind {
                HeadKind::Bipyramid => k,
                _ => 0,
            };
            let mut head_caches = Vec::with_capacity(self.mask_heads.len());
            let mut masks = Vec::with_capacity(self.mask_heads.len());
            for head in &self.mask_heads {
                let (hc, mask) = head.forward(&tower_out, head_level)?;
                head_caches.push(hc);
                masks.push(mask);
            }
            let (cls_cache, cls_logits) = self.cls.forward(level_map);
            let (box_cache, box_deltas) = self.boxh.forward(level_map);
            cache.mask_towers.push(tower_cache);
            cache.mask_tower_outs.push(tower_out);
            cache.mask_heads.push(head_caches);
            cache.cls.push(cls_cache);
            cache.boxh.push(box_cache);
            preds.push(LevelPrediction {
                masks,
                cls_logits,
                box_deltas,
            });
        }
        Ok((cache, preds))
    }

    /// Accumulate parameter gradients from per-level upstream gradients and
    /// return the gradient with respect to the input image.
    pub fn backward(&mut self, cache: &ModelCache, grads: &[LevelGrad]) -> Result<FeatureMap> {
        let num_levels = cache.levels.len();
        assert_eq!(grads.len(), num_levels, "one LevelGrad per level");
        let mut d_levels: Vec<FeatureMap> =
            cache.levels.iter().map(FeatureMap::zeros_like).collect();
        // Gradients flowing into the mask-branch inputs (converted maps in
        // bipyramid mode, pyramid maps otherwise).
        let mask_inputs: Vec<&FeatureMap> = match &cache.convert {
            Some((_, maps)) => maps.iter().collect(),
            None => cache.levels.iter().collect(),
        };
        let mut d_mask_inputs: Vec<FeatureMap> =
            mask_inputs.iter().map(|m| m.zeros_like()).collect();

        for k in 0..num_levels {
            let g = &grads[k];
            let mut d_tower_out: Option<FeatureMap> = None;
            for (i, d_mask) in g.masks.iter().enumerate() {
                let Some(d_mask) = d_mask else { continue };
                let head = &mut self.mask_heads[i];
                let d_in = head.backward(
                    &cache.mask_tower_outs[k],
                    &cache.mask_heads[k][i],
                    d_mask,
                )?;
                d_tower_out = Some(match d_tower_out.take() {
                    None => d_in,
                    Some(mut acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(d_in.data()) {
                            *a += b;
                        }
                        acc
                    }
                });
            }
            if let Some(d_tower_out) = d_tower_out {
                let d_in = self.mask_tower.backward(&cache.mask_towers[k], &d_tower_out);
                for (a, b) in d_mask_inputs[k].data_mut().iter_mut().zip(d_in.data()) {
                    *a += b;
                }
            }
            if let Some(d_cls) = &g.cls_logits {
                let d_in = self.cls.backward(&cache.cls[k], d_cls);
                for (a, b) in d_levels[k].data_mut().iter_mut().zip(d_in.data()) {
                    *a += b;
                }
            }
            if let Some(d_box) = &g.box_deltas {
                let d_in = self.boxh.backward(&cache.boxh[k], d_box);
                for (a, b) in d_levels[k].data_mut().iter_mut().zip(d_in.data()) {
                    *a += b;
                }
            }
        }

        match (&mut self.fpn_convert, &cache.convert) {
            (Some(converter), Some((convert_cache, _))) => {
                let (d_conv_levels, d_finest) =
                    converter.backward(convert_cache, &d_mask_inputs)?;
                for (acc, d) in d_levels.iter_mut().zip(&d_conv_levels) {
                    for (a, b) in acc.data_mut().iter_mut().zip(d.data()) {
                        *a += b;
                    }
                }
                // The finest pyramid map also feeds the converter directly.
                for (a, b) in d_levels[0].data_mut().iter_mut().zip(d_finest.data()) {
                    *a += b;
                }
            }
            (None, None) => {
                for (acc, d) in d_levels.iter_mut().zip(&d_mask_inputs) {
                    for (a, b) in acc.data_mut().iter_mut().zip(d.data()) {
                        *a += b;
                    }
                }
            }
            _ => unreachable!("converter presence matches cache"),
        }
        Ok(self.backbone.backward(&cache.backbone, &d_levels))
    }

    /// Every parameter array with its gradient, in a stable order.
    pub fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, conv) in self.backbone.convs.iter_mut().enumerate() {
            conv_params(&format!("backbone.conv{i}"), conv, &mut out);
        }
        if let Some(converter) = &mut self.fpn_convert {
            conv_params("fpn_convert.conv", &mut converter.conv, &mut out);
        }
        for (i, conv) in self.mask_tower.convs.iter_mut().enumerate() {
            conv_params(&format!("mask.tower{i}"), conv, &mut out);
        }
        for (i, head) in self.mask_heads.iter_mut().enumerate() {
            conv_params(&format!("mask.head{i}.proj"), &mut head.proj, &mut out);
        }
        for (i, conv) in self.cls.tower.convs.iter_mut().enumerate() {
            conv_params(&format!("cls.tower{i}"), conv, &mut out);
        }
        conv_params("cls.out", &mut self.cls.out, &mut out);
        for (i, conv) in self.boxh.tower.convs.iter_mut().enumerate() {
            conv_params(&format!("box.tower{i}"), conv, &mut out);
        }
        conv_params("box.out", &mut self.boxh.out, &mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params() {
            p.grads.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::Interp;

    fn tiny_config(head: HeadConfig) -> ModelConfig {
        ModelConfig {
            image_channels: 2,
            width: 4,
            tower_depth: 1,
            levels: 2,
            base_stride: 2,
            head,
            window_sizes: vec![(3, 3)],
            num_classes: 2,
            seed: 5,
        }
    }

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        FeatureMap::from_fn(c, h, w, 1.0, |_, _, _| rng.next_range(0.0, 1.0))
    }

    #[test]
    fn forward_shapes_per_level() {
        for head in [
            HeadConfig::simple_aligned(),
            HeadConfig::upscale_aligned(3, Interp::Bilinear),
            HeadConfig::bipyramid(),
        ] {
            let model = Model::new(tiny_config(head)).unwrap();
            let image = random_image(2, 16, 16, 3);
            let (_, preds) = model.forward(&image).unwrap();
            assert_eq!(preds.len(), 2);
            // Level grids: 8x8 at stride 2, 4x4 at stride 4.
            assert_eq!(preds[0].cls_logits.height(), 8);
            assert_eq!(preds[1].cls_logits.height(), 4);
            assert_eq!(preds[0].cls_logits.channels(), 2);
            assert_eq!(preds[0].box_deltas.channels(), 4);
            let m0 = preds[0].masks[0].shape();
            let m1 = preds[1].masks[0].shape();
            assert_eq!((m0.h, m0.w), (8, 8));
            assert_eq!((m1.h, m1.w), (4, 4));
            if head.kind == HeadKind::Bipyramid {
                assert_eq!((m1.v, m1.u), (6, 6));
                assert_eq!(preds[1].masks[0].units().sigma_vu(), 2.0);
            } else {
                assert_eq!((m1.v, m1.u), (3, 3));
                assert_eq!(preds[1].masks[0].units().sigma_vu(), 4.0);
            }
        }
    }

    #[test]
    fn shared_heads_accumulate_gradients_across_levels() {
        let mut model = Model::new(tiny_config(HeadConfig::simple_aligned())).unwrap();
        let image = random_image(2, 16, 16, 4);
        let (cache, preds) = model.forward(&image).unwrap();
        model.zero_grad();
        let grads: Vec<LevelGrad> = preds
            .iter()
            .map(|p| LevelGrad {
                masks: vec![Some(StructuredTensor::from_fn(
                    p.masks[0].shape(),
                    p.masks[0].units(),
                    p.masks[0].repr(),
                    |_, _, _, _| 1.0,
                ))],
                cls_logits: None,
                box_deltas: None,
            })
            .collect();
        model.backward(&cache, &grads).unwrap();
        // The shared projection saw contributions from both levels.
        let gnorm: f64 = model.mask_heads[0].proj.gw.iter().map(|g| g.abs()).sum();
        assert!(gnorm > 0.0);
    }

    #[test]
    fn full_model_gradient_check_through_mask_output() {
        for head in [
            HeadConfig::simple_aligned(),
            HeadConfig::upscale_natural(3),
            HeadConfig::bipyramid(),
        ] {
            let mut model = Model::new(tiny_config(head)).unwrap();
            let image = random_image(2, 8, 8, 9);
            let mut rng = SplitMix64::new(100);
            let (cache, preds) = model.forward(&image).unwrap();
            // Random linear objective over every output of the model.
            let weights: Vec<Vec<f64>> = preds
                .iter()
                .map(|p| {
                    (0..p.masks[0].len() + p.cls_logits.data().len() + p.box_deltas.data().len())
                        .map(|_| rng.next_range(0.5, 1.5))
                        .collect()
                })
                .collect();
            let grads: Vec<LevelGrad> = preds
                .iter()
                .zip(&weights)
                .map(|(p, w)| {
                    let nm = p.masks[0].len();
                    let nc = p.cls_logits.data().len();
                    LevelGrad {
                        masks: vec![Some(
                            StructuredTensor::from_vec(
                                p.masks[0].shape(),
                                p.masks[0].units(),
                                p.masks[0].repr(),
                                w[..nm].to_vec(),
                            )
                            .unwrap(),
                        )],
                        cls_logits: Some(
                            FeatureMap::from_vec(
                                p.cls_logits.channels(),
                                p.cls_logits.height(),
                                p.cls_logits.width(),
                                p.cls_logits.stride(),
                                w[nm..nm + nc].to_vec(),
                            )
                            .unwrap(),
                        ),
                        box_deltas: Some(
                            FeatureMap::from_vec(
                                p.box_deltas.channels(),
                                p.box_deltas.height(),
                                p.box_deltas.width(),
                                p.box_deltas.stride(),
                                w[nm + nc..].to_vec(),
                            )
                            .unwrap(),
                        ),
                    }
                })
                .collect();
            model.zero_grad();
            let d_image = model.backward(&cache, &grads).unwrap();
            let cfg = model.cfg.clone();
            let weights_f = weights.clone();
            let objective = move |flat: &[f64]| {
                let img = FeatureMap::from_vec(2, 8, 8, 1.0, flat.to_vec()).unwrap();
                let m = Model::new(cfg.clone()).unwrap();
                let (_, preds) = m.forward(&img).unwrap();
                preds
                    .iter()
                    .zip(&weights_f)
                    .map(|(p, w)| {
                        p.masks[0]
                            .data()
                            .iter()
                            .chain(p.cls_logits.data())
                            .chain(p.box_deltas.data())
                            .zip(w)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                    })
                    .sum()
            };
            let err =
                crate::gradcheck::check_grad(objective, image.data(), d_image.data(), 1e-5);
            assert!(err < 1e-4, "{:?}: image grad err {err}", head.kind);
        }
    }
}
