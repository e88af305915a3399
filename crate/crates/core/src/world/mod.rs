//! The synthetic street world: procedurally generated (scene spec, semantic
//! map, object layout, reference image) tuples that provide the supervised
//! targets for all three generators and for the attribute probes.
//!
//! The world is deliberately low-entropy — flat palette, straight corridors,
//! rejection-sampled object placement — so that small diffusion models can
//! fit it on a CPU while still exercising every road-topology concept.

mod dataset;
mod render;
mod scene;

pub use dataset::{build_dataset, load_dataset, load_manifest, load_record, DatasetManifest, LoadedRecord, RecordEntry};
pub use render::{render_reference, ReferenceImage};
pub use scene::sample_scene;

use crate::prompt::Category;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the square BEV semantic map, in cells.
pub const MAP_SIZE: usize = 64;
/// Metric size of one map cell.
pub const CELL_M: f64 = 0.5;
/// Half extent of the map in meters (the map covers [-16, 16) on both axes).
pub const HALF_EXTENT_M: f64 = MAP_SIZE as f64 * CELL_M / 2.0;
/// Maximum number of objects in a layout.
pub const MAX_OBJECTS: usize = 8;
/// Number of semantic classes.
pub const NUM_CLASSES: usize = 6;

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_DRIVABLE: u8 = 1;
pub const CLASS_INTERSECTION: u8 = 2;
pub const CLASS_SIDEWALK: u8 = 3;
pub const CLASS_ZEBRA: u8 = 4;
pub const CLASS_LANE_LINE: u8 = 5;

/// Fixed per-class palette (also the indexed-PNG palette for map.png and
/// mask.png).
pub const CLASS_PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [84, 128, 51],   // background: verge green
    [64, 64, 69],    // drivable: asphalt
    [99, 92, 99],    // intersection: worn asphalt
    [158, 153, 143], // sidewalk: pale concrete
    [235, 235, 230], // zebra: near white
    [242, 214, 66],  // lane line: yellow
];

/// Sky color used above the horizon in reference images.
pub const SKY_COLOR: [u8; 3] = [135, 196, 235];

/// Per-category colors for painted objects and layout_map.png.
pub const CATEGORY_PALETTE: [[u8; 3]; 3] = [
    [214, 39, 40],  // car: red
    [31, 98, 204],  // truck: blue
    [245, 143, 31], // pedestrian: orange
];

/// Palette for layout_map.png: index 0 = none, then the categories.
pub const LAYOUT_MAP_PALETTE: [[u8; 3]; 4] = [
    [0, 0, 0],
    CATEGORY_PALETTE[0],
    CATEGORY_PALETTE[1],
    CATEGORY_PALETTE[2],
];

pub fn class_color_f64(class: u8) -> [f64; 3] {
    let c = CLASS_PALETTE[class as usize];
    [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
}

pub fn category_color_f64(cat: Category) -> [f64; 3] {
    let c = CATEGORY_PALETTE[cat.id()];
    [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("could not place object {index} ({category}) after {attempts} attempts")]
    Placement {
        index: usize,
        category: Category,
        attempts: usize,
    },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Png(#[from] crate::pngio::PngError),
    #[error("dataset json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset layout mismatch: {0}")]
    Corrupt(String),
}

/// Bird's-eye-view semantic map. Ego sits at cell (32, 32); +row is the
/// ego-forward direction (+x), +column is to the right (+y).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    grid: Vec<u8>,
}

impl SemanticMap {
    pub fn filled(class: u8) -> SemanticMap {
        SemanticMap {
            grid: vec![class; MAP_SIZE * MAP_SIZE],
        }
    }

    pub fn from_grid(grid: Vec<u8>) -> SemanticMap {
        assert_eq!(grid.len(), MAP_SIZE * MAP_SIZE);
        SemanticMap { grid }
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn class_at(&self, row: usize, col: usize) -> u8 {
        self.grid[row * MAP_SIZE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        self.grid[row * MAP_SIZE + col] = class;
    }

    /// Map cell containing a world point, if inside the extent.
    pub fn cell_of_world(x: f64, y: f64) -> Option<(usize, usize)> {
        let r = (x / CELL_M).floor() + (MAP_SIZE / 2) as f64;
        let c = (y / CELL_M).floor() + (MAP_SIZE / 2) as f64;
        if r < 0.0 || c < 0.0 || r >= MAP_SIZE as f64 || c >= MAP_SIZE as f64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    /// World coordinates of a cell center.
    pub fn world_of_cell(row: usize, col: usize) -> (f64, f64) {
        (
            (row as f64 - (MAP_SIZE / 2) as f64 + 0.5) * CELL_M,
            (col as f64 - (MAP_SIZE / 2) as f64 + 0.5) * CELL_M,
        )
    }

    pub fn class_at_world(&self, x: f64, y: f64) -> Option<u8> {
        Self::cell_of_world(x, y).map(|(r, c)| self.class_at(r, c))
    }

    /// Renders the map as a 3xHxW palette image with values in [-1, 1]
    /// (channel-major), the form diffused by the topology generator.
    pub fn to_rgb_norm(&self) -> Vec<f64> {
        let mut out = vec![0.0; 3 * MAP_SIZE * MAP_SIZE];
        for (i, &class) in self.grid.iter().enumerate() {
            let color = class_color_f64(class.min((NUM_CLASSES - 1) as u8));
            for ch in 0..3 {
                out[ch * MAP_SIZE * MAP_SIZE + i] = color[ch] * 2.0 - 1.0;
            }
        }
        out
    }

    /// Decodes a 3xHxW [-1, 1] palette image back to classes by nearest
    /// palette color. Exact palette images decode losslessly.
    pub fn from_rgb_norm(data: &[f64]) -> SemanticMap {
        assert_eq!(data.len(), 3 * MAP_SIZE * MAP_SIZE);
        let plane = MAP_SIZE * MAP_SIZE;
        let mut grid = vec![0u8; plane];
        for i in 0..plane {
            let px = [
                (data[i] + 1.0) / 2.0,
                (data[plane + i] + 1.0) / 2.0,
                (data[2 * plane + i] + 1.0) / 2.0,
            ];
            let mut best = 0u8;
            let mut best_d = f64::INFINITY;
            for class in 0..NUM_CLASSES as u8 {
                let c = class_color_f64(class);
                let d = (0..3).map(|k| (px[k] - c[k]).powi(2)).sum::<f64>();
                if d < best_d {
                    best_d = d;
                    best = class;
                }
            }
            grid[i] = best;
        }
        SemanticMap { grid }
    }

    /// Counts the lane-line runs crossed by each "plain" corridor row (rows
    /// containing neither intersection nor zebra cells) and returns the
    /// per-row counts. This is the independent lane-count oracle.
    pub fn lane_runs_per_plain_row(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        for r in 0..MAP_SIZE {
            let row = &self.grid[r * MAP_SIZE..(r + 1) * MAP_SIZE];
            if row
                .iter()
                .any(|&c| c == CLASS_INTERSECTION || c == CLASS_ZEBRA)
            {
                continue;
            }
            if !row.iter().any(|&c| c == CLASS_DRIVABLE) {
                continue;
            }
            let mut runs = 0;
            let mut inside = false;
            for &c in row {
                if c == CLASS_LANE_LINE {
                    if !inside {
                        runs += 1;
                        inside = true;
                    }
                } else {
                    inside = false;
                }
            }
            counts.push(runs);
        }
        counts
    }

    /// Majority lane-run count over plain rows; the rule-based lane estimate
    /// used when scoring generated maps.
    pub fn lane_count_estimate(&self) -> u8 {
        let counts = self.lane_runs_per_plain_row();
        if counts.is_empty() {
            return 0;
        }
        let mut hist = [0usize; 16];
        for &c in &counts {
            hist[c.min(15)] += 1;
        }
        let mode = hist
            .iter()
            .enumerate()
            .max_by_key(|&(i, &n)| (n, usize::MAX - i))
            .map(|(i, _)| i)
            .unwrap_or(0);
        mode.min(crate::prompt::MAX_LANE_CLASS as usize) as u8
    }

    /// Rule-based road-kind estimate: a map reads as a crossing when it has a
    /// substantial intersection patch.
    pub fn road_kind_estimate(&self) -> crate::prompt::RoadKind {
        let n = self
            .grid
            .iter()
            .filter(|&&c| c == CLASS_INTERSECTION)
            .count();
        if n >= 40 {
            crate::prompt::RoadKind::Crossing
        } else {
            crate::prompt::RoadKind::Straight
        }
    }
}

/// Pose vector of one traffic object: position, size, yaw and category.
/// Real objects sit on the ground plane (z = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub category: Category,
}

impl ObjectPose3D {
    /// Footprint corners (x, y) of the rotated rectangle, counterclockwise.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let rot = |dx: f64, dy: f64| (self.x + dx * c - dy * s, self.y + dx * s + dy * c);
        [rot(-hl, -hw), rot(hl, -hw), rot(hl, hw), rot(-hl, hw)]
    }
}

/// An ordered set of at most [`MAX_OBJECTS`] objects. Padding up to the fixed
/// diffusion width is handled by the layout generator's normalizer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectLayout {
    objects: Vec<ObjectPose3D>,
}

impl ObjectLayout {
    pub fn empty() -> ObjectLayout {
        ObjectLayout::default()
    }

    pub fn from_objects(objects: Vec<ObjectPose3D>) -> ObjectLayout {
        assert!(objects.len() <= MAX_OBJECTS);
        ObjectLayout { objects }
    }

    pub fn push(&mut self, obj: ObjectPose3D) {
        assert!(self.objects.len() < MAX_OBJECTS);
        self.objects.push(obj);
    }

    pub fn objects(&self) -> &[ObjectPose3D] {
        &self.objects
    }

    pub fn count(&self) -> usize {
        self.objects.len()
    }

    pub fn count_of(&self, cat: Category) -> usize {
        self.objects.iter().filter(|o| o.category == cat).count()
    }
}

/// Separating-axis overlap test for two rotated rectangles, with a safety
/// margin in meters.
pub(crate) fn footprints_overlap(a: &ObjectPose3D, b: &ObjectPose3D, margin: f64) -> bool {
    let ca = a.footprint();
    let cb = b.footprint();
    let axes = |o: &ObjectPose3D| {
        let (s, c) = o.yaw.sin_cos();
        [(c, s), (-s, c)]
    };
    for (ax, ay) in axes(a).into_iter().chain(axes(b)) {
        let proj = |pts: &[(f64, f64); 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &(x, y) in pts {
                let p = x * ax + y * ay;
                lo = lo.min(p);
                hi = hi.max(p);
            }
            (lo, hi)
        };
        let (a_lo, a_hi) = proj(&ca);
        let (b_lo, b_hi) = proj(&cb);
        if a_hi + margin <= b_lo || b_hi + margin <= a_lo {
            return false;
        }
    }
    true
}
