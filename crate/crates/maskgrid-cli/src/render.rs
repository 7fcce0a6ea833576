//! Debug output: PGM renders of scenes and pasted masks, detection JSON,
//! and the calibration table format.

use std::io::Write;
use std::path::Path;

use maskgrid::error::{Error, Result};
use maskgrid::infer::{Calibration, Detection};
use maskgrid::rle::{DetectionJson, DetectionsJson, RleMask};
use maskgrid::synth::Scene;

/// Binary PGM (P5), 8-bit grayscale.
pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != height * width {
        return Err(Error::shape(format!(
            "pgm pixel count {} != {height}x{width}",
            pixels.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

/// Write the scene (grayscale), each detection's pasted mask, and the
/// detection JSON into `dir`.
pub fn render_scene(dir: &Path, seed: u64, scene: &Scene, dets: &[Detection]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (h, w) = (scene.image.height(), scene.image.width());
    let gray: Vec<u8> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let mean = (scene.image.at(0, y, x) + scene.image.at(1, y, x)
                + scene.image.at(2, y, x))
                / 3.0;
            (mean.clamp(0.0, 1.0) * 255.0) as u8
        })
        .collect();
    write_pgm(&dir.join(format!("scene_{seed}.pgm")), h, w, &gray)?;
    for (i, d) in dets.iter().enumerate() {
        if let Some(mask) = &d.binary_mask {
            let pixels: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
            write_pgm(
                &dir.join(format!("scene_{seed}_det{i}_cat{}_mask.pgm", d.category)),
                h,
                w,
                &pixels,
            )?;
        }
    }
    let json = DetectionsJson {
        height: h,
        width: w,
        detections: dets
            .iter()
            .map(|d| DetectionJson {
                category: d.category,
                score: d.score,
                calibrated: d.calibrated,
                bbox: [d.box_px.y0, d.box_px.x0, d.box_px.y1, d.box_px.x1],
                mask: d.binary_mask.as_ref().map(RleMask::from_mask).unwrap_or(RleMask {
                    size: [h, w],
                    counts: vec![(h * w) as u32],
                }),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&json)?;
    std::fs::write(dir.join(format!("scene_{seed}_detections.json")), text)?;
    Ok(())
}

/// Calibration tables as JSON: `{ "<category>": [[score, precision], ...] }`.
pub fn write_calibration(path: &Path, cal: &Calibration) -> Result<()> {
    let mut map = serde_json::Map::new();
    for c in cal.categories() {
        let rows: Vec<serde_json::Value> = cal
            .table(c)
            .unwrap_or(&[])
            .iter()
            .map(|(s, p)| serde_json::json!([s, p]))
            .collect();
        map.insert(c.to_string(), serde_json::Value::Array(rows));
    }
    std::fs::write(path, serde_json::to_string_pretty(&map)?)?;
    Ok(())
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = std::fs::read_to_string(path)?;
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)?;
    let mut tables = std::collections::BTreeMap::new();
    for (k, v) in map {
        let category: usize = k
            .parse()
            .map_err(|_| Error::Format(format!("bad category key {k}")))?;
        let rows: Vec<(f64, f64)> = serde_json::from_value(v)?;
        tables.insert(category, rows);
    }
    Ok(Calibration::from_tables(tables))
}
