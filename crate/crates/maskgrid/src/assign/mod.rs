//! Sliding-window enumeration and mask-driven label assignment.
//!
//! A window is positive for a ground-truth mask `m` when (i) the window
//! fully contains `m` and `m`'s longer side is at least half the window's
//! longer side, (ii) the center of `m`'s bounding box lies within one unit
//! of the window center, and (iii) no other mask satisfies (i) and (ii).
//! Masks too small to pass the half-size floor anywhere are still assignable
//! to windows of the smallest size (the floor is waived there). No IoU
//! anywhere: the rule is mask-driven.

pub mod loss;

pub use loss::{
    box_l1_loss, focal_cls_loss, mask_loss, total_loss, BoxLoss, FocalConfig, FocalVariant,
    MaskLoss,
};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Rect};
use crate::tensor::{centered_min, Units};

/// A ground-truth instance: binary mask, its tight bounding box, category.
#[derive(Debug, Clone)]
pub struct GroundTruthInstance {
    pub mask: BinaryMask,
    pub bbox: Rect,
    pub category: usize,
}

impl GroundTruthInstance {
    /// Derives the bounding box from the mask; the mask must be nonempty.
    pub fn new(mask: BinaryMask, category: usize) -> Result<GroundTruthInstance> {
        let bbox = mask
            .bbox()
            .ok_or_else(|| Error::pre("ground-truth mask is empty"))?;
        Ok(GroundTruthInstance {
            mask,
            bbox,
            category,
        })
    }
}

/// One sliding-window site: level, grid position, window size, units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub level: usize,
    pub size_index: usize,
    pub grid_y: usize,
    pub grid_x: usize,
    /// Window extent in VU samples.
    pub vu: (usize, usize),
    /// sigma_vu: image pixels per mask sample; sigma_hw: grid step.
    pub units: Units,
}

impl WindowSpec {
    /// Window center on the image, `(y, x)` pixels.
    pub fn center_px(&self) -> (f64, f64) {
        (
            self.grid_y as f64 * self.units.sigma_hw(),
            self.grid_x as f64 * self.units.sigma_hw(),
        )
    }

    /// Window sides in image pixels: `(V * sigma_vu, U * sigma_vu)`.
    pub fn side_px(&self) -> (f64, f64) {
        (
            self.vu.0 as f64 * self.units.sigma_vu(),
            self.vu.1 as f64 * self.units.sigma_vu(),
        )
    }

    pub fn longer_side_px(&self) -> f64 {
        let (sy, sx) = self.side_px();
        sy.max(sx)
    }

    /// The image-pixel rectangle covered by the window's sample cells: cell
    /// `v` is centered on `center + v * sigma_vu`, so the footprint runs from
    /// the lowest cell edge to the highest.
    pub fn footprint(&self) -> Rect {
        let (cy, cx) = self.center_px();
        let s = self.units.sigma_vu();
        let v0 = centered_min(self.vu.0) as f64 - 0.5;
        let u0 = centered_min(self.vu.1) as f64 - 0.5;
        Rect::new(
            cy + v0 * s,
            cx + u0 * s,
            cy + (v0 + self.vu.0 as f64) * s,
            cx + (u0 + self.vu.1 as f64) * s,
        )
    }
}

/// Grid geometry of one pyramid level: the window grid plus per-size window
/// shapes and units.
#[derive(Debug, Clone)]
pub struct LevelGeometry {
    pub grid_h: usize,
    pub grid_w: usize,
    /// One entry per window size: (VU samples, units).
    pub sizes: Vec<((usize, usize), Units)>,
}

/// One window per (level, size, grid location), enumerated level-major then
/// size, then row-major over the grid.
pub fn enumerate_windows(levels: &[LevelGeometry]) -> Vec<WindowSpec> {
    let mut out = Vec::new();
    for (level, geom) in levels.iter().enumerate() {
        for (size_index, &(vu, units)) in geom.sizes.iter().enumerate() {
            for grid_y in 0..geom.grid_h {
                for grid_x in 0..geom.grid_w {
                    out.push(WindowSpec {
                        level,
                        size_index,
                        grid_y,
                        grid_x,
                        vu,
                        units,
                    });
                }
            }
        }
    }
    out
}

/// Which unit the centrality test measures against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum CentralityUnit {
    /// The window grid step (sigma_hw). Equals sigma_vu for the baseline
    /// heads; keeps every image point coverable when windows are sparser
    /// than their sample unit (bipyramid levels k >= 1).
    #[default]
    GridStep,
    /// The literal mask sample unit (sigma_vu).
    SigmaVu,
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct AssignConfig {
    pub centrality_unit: CentralityUnit,
}

/// Label and regression targets of one window.
#[derive(Debug, Clone)]
pub enum WindowLabel {
    Positive {
        /// Area-averaged soft mask target, `V*U` row-major values in [0, 1].
        target_mask: Vec<f64>,
        category: usize,
        /// `(dy, dx, log dh, log dw)` relative to window center and side.
        target_box: [f64; 4],
    },
    Negative,
}

#[derive(Debug, Clone)]
pub struct Assignment {
    pub window: WindowSpec,
    pub label: WindowLabel,
}

impl Assignment {
    pub fn is_positive(&self) -> bool {
        matches!(self.label, WindowLabel::Positive { .. })
    }
}

fn centrality_radius(w: &WindowSpec, cfg: &AssignConfig) -> f64 {
    match cfg.centrality_unit {
        CentralityUnit::GridStep => w.units.sigma_hw(),
        CentralityUnit::SigmaVu => w.units.sigma_vu(),
    }
}

/// The three positive conditions for mask `m` against window `w`, with the
/// small-mask fallback threshold `min_assignable` (half the longer side of
/// the smallest window) and that smallest side itself.
fn qualifies(
    m: &GroundTruthInstance,
    w: &WindowSpec,
    cfg: &AssignConfig,
    min_assignable: f64,
    smallest_side: f64,
) -> bool {
    // (i) containment plus the half-size floor (waived for sub-minimum masks
    // on smallest-size windows).
    if !w.footprint().contains(&m.bbox) {
        return false;
    }
    let longer = m.bbox.longer_side();
    let size_ok = longer >= 0.5 * w.longer_side_px()
        || (longer < min_assignable && w.longer_side_px() <= smallest_side);
    if !size_ok {
        return false;
    }
    // (ii) centrality in l2 distance.
    let (wy, wx) = w.center_px();
    let (by, bx) = m.bbox.center();
    let dist = ((wy - by).powi(2) + (wx - bx).powi(2)).sqrt();
    dist <= centrality_radius(w, cfg)
}

/// Label every window against the scene's instances.
pub fn assign(
    windows: &[WindowSpec],
    instances: &[GroundTruthInstance],
    cfg: &AssignConfig,
) -> Vec<Assignment> {
    let smallest_side = windows
        .iter()
        .map(WindowSpec::longer_side_px)
        .fold(f64::INFINITY, f64::min);
    let min_assignable = 0.5 * smallest_side;
    windows
        .iter()
        .map(|w| {
            let mut qualifying = instances
                .iter()
                .filter(|m| qualifies(m, w, cfg, min_assignable, smallest_side));
            let label = match (qualifying.next(), qualifying.next()) {
                // (iii) uniqueness: exactly one qualifying mask.
                (Some(m), None) => WindowLabel::Positive {
                    target_mask: rasterize_target(&m.mask, w),
                    category: m.category,
                    target_box: box_deltas(&m.bbox, w),
                },
                _ => WindowLabel::Negative,
            };
            Assignment { window: *w, label }
        })
        .collect()
}

/// `(dy, dx, log dh, log dw)` of a box relative to the window.
pub fn box_deltas(bbox: &Rect, w: &WindowSpec) -> [f64; 4] {
    let (wy, wx) = w.center_px();
    let (sy, sx) = w.side_px();
    let (by, bx) = bbox.center();
    [
        (by - wy) / sy,
        (bx - wx) / sx,
        (bbox.height() / sy).ln(),
        (bbox.width() / sx).ln(),
    ]
}

/// Invert [`box_deltas`]: decode predicted deltas into an image rectangle.
pub fn decode_box_deltas(deltas: [f64; 4], w: &WindowSpec) -> Rect {
    let (wy, wx) = w.center_px();
    let (sy, sx) = w.side_px();
    let cy = wy + deltas[0] * sy;
    let cx = wx + deltas[1] * sx;
    let h = deltas[2].exp() * sy;
    let bw = deltas[3].exp() * sx;
    Rect::new(cy - h / 2.0, cx - bw / 2.0, cy + h / 2.0, cx + bw / 2.0)
}

/// Area-averaged rasterization of a binary mask into the window's `V x U`
/// cell grid: each cell value is the fraction of its image-pixel footprint
/// covered by the mask. Regions outside the image count as background.
pub fn rasterize_target(mask: &BinaryMask, w: &WindowSpec) -> Vec<f64> {
    let f = w.footprint();
    let s = w.units.sigma_vu();
    let (v, u) = w.vu;
    // Per-axis overlap weights between cell spans and pixel rows/columns.
    let axis = |start: f64, n_cells: usize, limit: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n_cells)
            .map(|i| {
                let lo = start + i as f64 * s;
                let hi = lo + s;
                let p0 = lo.floor().max(0.0) as usize;
                let p1 = (hi.ceil().min(limit as f64) as usize).max(p0);
                (p0..p1)
                    .map(|p| {
                        let ov = (hi.min((p + 1) as f64) - lo.max(p as f64)).max(0.0);
                        (p, ov)
                    })
                    .collect()
            })
            .collect()
    };
    let rows = axis(f.y0, v, mask.height());
    let cols = axis(f.x0, u, mask.width());
    let mut out = Vec::with_capacity(v * u);
    for rw in &rows {
        for cw in &cols {
            let mut covered = 0.0;
            for &(py, wy) in rw {
                for &(px, wx) in cw {
                    if mask.get(py, px) {
                        covered += wy * wx;
                    }
                }
            }
            out.push(covered / (s * s));
        }
    }
    out
}
