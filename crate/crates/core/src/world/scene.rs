//! Procedural scene sampling: road corridors, counted lane lines, sidewalks,
//! zebra crossings and rejection-sampled object placement.

use super::*;
use crate::prompt::{sample_spec, Category, RoadKind, SceneSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane width in cells (3.5 m); lane lines sit every `LANE_W` columns.
const LANE_W: usize = 7;
/// Sidewalk width in cells.
const WALK_W: usize = 3;
/// Zebra band depth in cells.
const ZEBRA_D: usize = 2;
/// Rejection-sampling attempts per object before giving up.
const MAX_ATTEMPTS: usize = 1000;

struct RoadPlan {
    /// Ego corridor columns [c0, c1).
    c0: usize,
    c1: usize,
    /// Cross corridor rows [r0, r1) for crossings.
    cross: Option<(usize, usize)>,
}

fn plan_road(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> RoadPlan {
    let lanes = spec.lane_count as usize;
    let width = LANE_W * (lanes + 1);
    // The ego column (32) must lie inside the corridor but not on a lane
    // line, and sidewalks must fit inside the map.
    let mut candidates = Vec::new();
    let lo = WALK_W;
    let hi = MAP_SIZE - WALK_W - width;
    for c0 in lo..=hi {
        let mid = MAP_SIZE / 2;
        if mid < c0 || mid >= c0 + width {
            continue;
        }
        let off = mid - c0;
        if off % LANE_W == 0 && off != 0 && off / LANE_W <= lanes {
            continue; // ego would sit on a lane line
        }
        // Keep the corridor roughly centered on the ego so most of the road
        // falls inside the camera frustum.
        let center2 = 2 * c0 + width;
        if center2.abs_diff(2 * mid) > 2 * LANE_W {
            continue;
        }
        candidates.push(c0);
    }
    let c0 = candidates[rng.gen_range(0..candidates.len())];
    let cross = if spec.road_kind == RoadKind::Crossing {
        let cw = rng.gen_range(12..=14usize);
        let r0 = rng.gen_range(40..=44usize);
        Some((r0, r0 + cw))
    } else {
        None
    };
    RoadPlan {
        c0,
        c1: c0 + width,
        cross,
    }
}

fn paint_map(spec: &SceneSpec, plan: &RoadPlan) -> SemanticMap {
    let mut map = SemanticMap::filled(CLASS_BACKGROUND);
    let (c0, c1) = (plan.c0, plan.c1);

    // Ego corridor with flanking sidewalks, full length.
    for r in 0..MAP_SIZE {
        for c in c0..c1 {
            map.set(r, c, CLASS_DRIVABLE);
        }
        for c in (c0 - WALK_W)..c0 {
            map.set(r, c, CLASS_SIDEWALK);
        }
        for c in c1..(c1 + WALK_W).min(MAP_SIZE) {
            map.set(r, c, CLASS_SIDEWALK);
        }
    }

    if let Some((r0, r1)) = plan.cross {
        // Cross corridor across the full map width, with its own sidewalks.
        for r in r0..r1 {
            for c in 0..MAP_SIZE {
                map.set(r, c, CLASS_DRIVABLE);
            }
        }
        for c in 0..MAP_SIZE {
            for r in (r0 - WALK_W)..r0 {
                if map.class_at(r, c) != CLASS_DRIVABLE || c < c0 || c >= c1 {
                    if map.class_at(r, c) != CLASS_DRIVABLE {
                        map.set(r, c, CLASS_SIDEWALK);
                    }
                }
            }
            for r in r1..(r1 + WALK_W).min(MAP_SIZE) {
                if map.class_at(r, c) != CLASS_DRIVABLE {
                    map.set(r, c, CLASS_SIDEWALK);
                }
            }
        }

        // The overlap of the two corridors is the intersection patch.
        for r in r0..r1 {
            for c in c0..c1 {
                map.set(r, c, CLASS_INTERSECTION);
            }
        }

        // Zebra bands on all four approaches, striped every two cells.
        for band_r in [r0 as isize - ZEBRA_D as isize, r1 as isize] {
            for dr in 0..ZEBRA_D as isize {
                let r = band_r + dr;
                if !(0..MAP_SIZE as isize).contains(&r) {
                    continue;
                }
                for c in c0..c1 {
                    if (c - c0) / 2 % 2 == 0 {
                        map.set(r as usize, c, CLASS_ZEBRA);
                    }
                }
            }
        }
        for band_c in [c0 as isize - ZEBRA_D as isize, c1 as isize] {
            for dc in 0..ZEBRA_D as isize {
                let c = band_c + dc;
                if !(0..MAP_SIZE as isize).contains(&c) {
                    continue;
                }
                for r in r0..r1 {
                    if (r - r0) / 2 % 2 == 0 {
                        map.set(r, c as usize, CLASS_ZEBRA);
                    }
                }
            }
        }
    }

    // Lane lines on the ego corridor, broken around the crossing so they stay
    // on plain drivable cells.
    let lanes = spec.lane_count as usize;
    let (skip_lo, skip_hi) = match plan.cross {
        Some((r0, r1)) => (r0 as isize - ZEBRA_D as isize, (r1 + ZEBRA_D) as isize),
        None => (isize::MAX, isize::MIN),
    };
    for k in 1..=lanes {
        let c = c0 + k * LANE_W;
        for r in 0..MAP_SIZE {
            let ri = r as isize;
            if ri >= skip_lo && ri < skip_hi {
                continue;
            }
            if map.class_at(r, c) == CLASS_DRIVABLE {
                map.set(r, c, CLASS_LANE_LINE);
            }
        }
    }
    map
}

/// Direction of the corridor under a map cell, for yaw alignment.
fn corridor_dir(plan: &RoadPlan, row: usize, col: usize, rng: &mut ChaCha8Rng) -> f64 {
    let along_ego = [0.0, std::f64::consts::PI];
    let along_cross = [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2];
    match plan.cross {
        Some((r0, r1)) if row >= r0 && row < r1 => {
            if col >= plan.c0 && col < plan.c1 {
                // On the intersection patch either heading is legal.
                if rng.gen_bool(0.5) {
                    along_cross[rng.gen_range(0..2)]
                } else {
                    along_ego[rng.gen_range(0..2)]
                }
            } else {
                along_cross[rng.gen_range(0..2)]
            }
        }
        _ => along_ego[rng.gen_range(0..2)],
    }
}

fn size_for(cat: Category, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    match cat {
        Category::Car => (
            4.2 * rng.gen_range(0.95..1.05),
            1.9 * rng.gen_range(0.95..1.05),
            1.5 * rng.gen_range(0.9..1.1),
        ),
        Category::Truck => (
            7.0 * rng.gen_range(0.95..1.05),
            2.5 * rng.gen_range(0.95..1.05),
            3.0 * rng.gen_range(0.9..1.1),
        ),
        Category::Pedestrian => (0.5, 0.5, 1.7 * rng.gen_range(0.9..1.1)),
    }
}

/// The whole footprint must sit on drivable or intersection cells.
fn footprint_on_road(map: &SemanticMap, obj: &ObjectPose3D) -> bool {
    let corners = obj.footprint();
    let steps = 8;
    for i in 0..=steps {
        for j in 0..=steps {
            let a = i as f64 / steps as f64;
            let b = j as f64 / steps as f64;
            let x = corners[0].0 * (1.0 - a) * (1.0 - b)
                + corners[1].0 * a * (1.0 - b)
                + corners[3].0 * (1.0 - a) * b
                + corners[2].0 * a * b;
            let y = corners[0].1 * (1.0 - a) * (1.0 - b)
                + corners[1].1 * a * (1.0 - b)
                + corners[3].1 * (1.0 - a) * b
                + corners[2].1 * a * b;
            match map.class_at_world(x, y) {
                Some(CLASS_DRIVABLE) | Some(CLASS_INTERSECTION) => {}
                _ => return false,
            }
        }
    }
    true
}

/// Candidate placement cells: drivable or intersection, ahead of the ego and
/// inside the camera frustum so every placed object is visible from the
/// sampled FRONT poses.
fn candidate_cells(map: &SemanticMap) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for r in 0..MAP_SIZE {
        for c in 0..MAP_SIZE {
            let class = map.class_at(r, c);
            if class != CLASS_DRIVABLE && class != CLASS_INTERSECTION {
                continue;
            }
            let (x, y) = SemanticMap::world_of_cell(r, c);
            if x < 2.8 || x > 15.0 {
                continue;
            }
            // Keep centers inside the camera frustum (half-FOV tan 56/64)
            // with a margin so most of the box stays in frame.
            if y.abs() > 0.875 * x - 0.5 {
                continue;
            }
            cells.push((r, c));
        }
    }
    cells
}

fn try_place(
    map: &SemanticMap,
    plan: &RoadPlan,
    cells: &[(usize, usize)],
    placed: &[ObjectPose3D],
    cat: Category,
    rng: &mut ChaCha8Rng,
) -> Option<ObjectPose3D> {
    for _ in 0..MAX_ATTEMPTS {
        let (r, c) = cells[rng.gen_range(0..cells.len())];
        let (cx, cy) = SemanticMap::world_of_cell(r, c);
        let x = cx + rng.gen_range(-0.25..0.25);
        let y = cy + rng.gen_range(-0.25..0.25);
        let dir = corridor_dir(plan, r, c, rng);
        // Vehicles get a tighter heading jitter than pedestrians so they can
        // still fit a single lane between lane lines.
        let jitter_deg: f64 = match cat {
            Category::Truck => 3.0,
            Category::Car => 6.0,
            Category::Pedestrian => 10.0,
        };
        let jitter = rng.gen_range(-jitter_deg..jitter_deg).to_radians();
        let mut yaw = dir + jitter;
        if yaw > std::f64::consts::PI {
            yaw -= 2.0 * std::f64::consts::PI;
        } else if yaw <= -std::f64::consts::PI {
            yaw += 2.0 * std::f64::consts::PI;
        }
        let (l, w, h) = size_for(cat, rng);
        let obj = ObjectPose3D {
            x,
            y,
            z: 0.0,
            l,
            w,
            h,
            yaw,
            category: cat,
        };
        if !footprint_on_road(map, &obj) {
            continue;
        }
        if placed.iter().any(|p| footprints_overlap(p, &obj, 0.25)) {
            continue;
        }
        return Some(obj);
    }
    None
}

/// Expands a spec's counts into placement order: biggest first, so trucks
/// claim the scarce long open stretches before cars crowd them out.
fn requested_categories(spec: &SceneSpec) -> Vec<Category> {
    let mut cats = Vec::new();
    for cat in [Category::Truck, Category::Car, Category::Pedestrian] {
        for _ in 0..spec.count(cat) {
            cats.push(cat);
        }
    }
    cats
}

/// Generates a scene. With an explicit `spec`, the exact requested objects
/// are placed ([`WorldError::Placement`] if impossible). Without one, the
/// spec is sampled uniformly and any object that cannot be placed is dropped
/// from the returned spec, so unconstrained sampling never fails.
pub fn sample_scene(
    seed: u64,
    spec: Option<&SceneSpec>,
) -> Result<(SceneSpec, SemanticMap, ObjectLayout), WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strict = spec.is_some();
    let mut spec = match spec {
        Some(s) => s.clone(),
        None => sample_spec(&mut rng),
    };
    let plan = plan_road(&spec, &mut rng);
    let map = paint_map(&spec, &plan);
    let cells = candidate_cells(&map);

    let mut layout = ObjectLayout::empty();
    let mut placed_counts = std::collections::BTreeMap::new();
    for (index, cat) in requested_categories(&spec).into_iter().enumerate() {
        match try_place(&map, &plan, &cells, layout.objects(), cat, &mut rng) {
            Some(obj) => {
                layout.push(obj);
                *placed_counts.entry(cat).or_insert(0u8) += 1;
            }
            None if strict => {
                return Err(WorldError::Placement {
                    index,
                    category: cat,
                    attempts: MAX_ATTEMPTS,
                });
            }
            None => {}
        }
    }
    if !strict {
        spec.object_counts = placed_counts;
    }
    // Entries in canonical category order (cars, trucks, pedestrians).
    let mut objects = layout.objects().to_vec();
    objects.sort_by_key(|o| o.category.id());
    Ok((spec, map, ObjectLayout::from_objects(objects)))
}
