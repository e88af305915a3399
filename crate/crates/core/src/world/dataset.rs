//! Dataset building and loading. Each record directory holds the full tuple
//! for one scene: scene.json, map.png (indexed, palette index = class id),
//! layout.json, pose.json, and the per-pose image.png, mask.png,
//! layout_map.png and boxes.json. manifest.json lists every record with its
//! seeds; identical (n, seed) runs produce byte-identical trees.

use super::*;
use crate::camera::{project_objects, sample_pose, Box2D, CameraPose, IMG_H, IMG_W};
use crate::pngio;
use crate::prompt::SceneSpec;
use crate::seeds;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordEntry {
    pub index: usize,
    pub dir: String,
    pub record_seed: u64,
    pub pose_seed: u64,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<RecordEntry>,
}

/// Everything one record contributes, loaded back into memory. The image is
/// kept as u8 and converted per use to keep 2,000-record datasets small.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub spec: SceneSpec,
    pub map: SemanticMap,
    pub layout: ObjectLayout,
    pub pose: CameraPose,
    pub image: Vec<u8>,
    pub mask: Vec<u8>,
    pub layout_map: Vec<u8>,
    pub boxes: Vec<Box2D>,
}

impl LoadedRecord {
    pub fn image_f64(&self) -> ReferenceImage {
        ReferenceImage::from_u8(&self.image)
    }
}

fn boxes_to_rows(boxes: &[Box2D]) -> Vec<(f64, f64, f64, f64, u8)> {
    boxes
        .iter()
        .map(|b| (b.x1, b.y1, b.x2, b.y2, b.category.id() as u8))
        .collect()
}

fn rows_to_boxes(rows: &[(f64, f64, f64, f64, u8)]) -> Result<Vec<Box2D>, WorldError> {
    rows.iter()
        .map(|&(x1, y1, x2, y2, c)| {
            let category = crate::prompt::Category::from_id(c as usize)
                .ok_or_else(|| WorldError::Corrupt(format!("bad category id {c}")))?;
            Ok(Box2D { x1, y1, x2, y2, category })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorldError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, WorldError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

const LAYOUT_MAP_PNG_PALETTE: [[u8; 3]; 4] = LAYOUT_MAP_PALETTE;

/// Writes one fully rendered record into `dir`.
pub fn write_record(
    dir: &Path,
    spec: &SceneSpec,
    map: &SemanticMap,
    layout: &ObjectLayout,
    pose: &CameraPose,
) -> Result<(), WorldError> {
    fs::create_dir_all(dir)?;
    let (mask, boxes) = {
        let mask = crate::camera::project_map(map, pose);
        let (layout_map, boxes) = project_objects(layout, pose);
        ((mask, layout_map), boxes)
    };
    let (road_mask, layout_map) = mask;
    let image = render_reference(map, layout, pose, spec.weather);

    write_json(&dir.join("scene.json"), spec)?;
    write_json(&dir.join("layout.json"), layout)?;
    write_json(&dir.join("pose.json"), pose)?;
    write_json(&dir.join("boxes.json"), &boxes_to_rows(&boxes))?;
    pngio::write_indexed(&dir.join("map.png"), MAP_SIZE, MAP_SIZE, map.grid(), &CLASS_PALETTE)?;
    pngio::write_indexed(
        &dir.join("mask.png"),
        IMG_W,
        IMG_H,
        &road_mask.classes,
        &CLASS_PALETTE,
    )?;
    pngio::write_indexed(
        &dir.join("layout_map.png"),
        IMG_W,
        IMG_H,
        &layout_map.cells,
        &LAYOUT_MAP_PNG_PALETTE,
    )?;
    pngio::write_rgb(&dir.join("image.png"), IMG_W, IMG_H, &image.to_u8())?;
    Ok(())
}

/// Builds `n` records under `out_dir`. Record generation is parallel per
/// record seed but the resulting bytes match a sequential run exactly.
pub fn build_dataset(
    n: usize,
    seed: u64,
    out_dir: &Path,
    config_hash: &str,
) -> Result<DatasetManifest, WorldError> {
    assert!(n >= 1);
    let records_dir = out_dir.join("records");
    fs::create_dir_all(&records_dir)?;

    let entries: Vec<RecordEntry> = (0..n)
        .into_par_iter()
        .map(|index| -> Result<RecordEntry, WorldError> {
            let record_seed = seeds::derive(seed, "record", index as u64);
            let pose_seed = seeds::derive(seed, "pose", index as u64);
            let (spec, map, layout) = sample_scene(record_seed, None)?;
            let pose = sample_pose(pose_seed);
            let dir = records_dir.join(format!("{index:05}"));
            write_record(&dir, &spec, &map, &layout, &pose)?;
            Ok(RecordEntry {
                index,
                dir: format!("records/{index:05}"),
                record_seed,
                pose_seed,
                spec,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let manifest = DatasetManifest {
        n,
        seed,
        config_hash: config_hash.to_string(),
        records: entries,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, WorldError> {
    read_json(&dir.join("manifest.json"))
}

pub fn load_record(root: &Path, entry: &RecordEntry) -> Result<LoadedRecord, WorldError> {
    let dir: PathBuf = root.join(&entry.dir);
    let spec: SceneSpec = read_json(&dir.join("scene.json"))?;
    let layout: ObjectLayout = read_json(&dir.join("layout.json"))?;
    let pose: CameraPose = read_json(&dir.join("pose.json"))?;
    let rows: Vec<(f64, f64, f64, f64, u8)> = read_json(&dir.join("boxes.json"))?;
    let boxes = rows_to_boxes(&rows)?;

    let (w, h, map_idx) = pngio::read_indexed(&dir.join("map.png"))?;
    if (w, h) != (MAP_SIZE, MAP_SIZE) {
        return Err(WorldError::Corrupt(format!("map.png is {w}x{h}")));
    }
    let (w, h, mask) = pngio::read_indexed(&dir.join("mask.png"))?;
    if (w, h) != (IMG_W, IMG_H) {
        return Err(WorldError::Corrupt(format!("mask.png is {w}x{h}")));
    }
    let (w, h, layout_map) = pngio::read_indexed(&dir.join("layout_map.png"))?;
    if (w, h) != (IMG_W, IMG_H) {
        return Err(WorldError::Corrupt(format!("layout_map.png is {w}x{h}")));
    }
    let (w, h, image) = pngio::read_rgb(&dir.join("image.png"))?;
    if (w, h) != (IMG_W, IMG_H) {
        return Err(WorldError::Corrupt(format!("image.png is {w}x{h}")));
    }

    Ok(LoadedRecord {
        spec,
        map: SemanticMap::from_grid(map_idx),
        layout,
        pose,
        image,
        mask,
        layout_map,
        boxes,
    })
}

/// Loads every record of a dataset (parallel, order-preserving).
pub fn load_dataset(dir: &Path) -> Result<Vec<LoadedRecord>, WorldError> {
    let manifest = load_manifest(dir)?;
    manifest
        .records
        .par_iter()
        .map(|entry| load_record(dir, entry))
        .collect()
}
