//! Camera pose sampling and pinhole projection of the bird's-eye-view world
//! into the perspective view: the 2D road semantic mask, the 2D object layout
//! map, and normalized 2D boxes.
//!
//! World frame: x forward, y right, z up, origin at the ego vehicle on the
//! ground. Camera frame: x right, y down, z forward. The camera sits at
//! (0, 0, height), looks along +x, and may pitch about its right axis.
//! No lens distortion is modelled.

use crate::prompt::Category;
use crate::world::{ObjectLayout, SemanticMap};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Output image width in pixels.
pub const IMG_W: usize = 112;
/// Output image height in pixels.
pub const IMG_H: usize = 64;

/// Pinhole camera with fixed intrinsics and a sampled extrinsic pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera height above the ground plane, meters.
    pub height: f64,
    /// Pitch about the right axis, radians; positive tilts the view down.
    pub pitch: f64,
    /// Yaw about the up axis, radians; 0 is the forward-facing camera.
    pub yaw: f64,
}

impl CameraPose {
    pub fn with_extrinsics(height: f64, pitch: f64, yaw: f64) -> CameraPose {
        CameraPose {
            fx: 64.0,
            fy: 64.0,
            cx: 56.0,
            cy: 32.0,
            height,
            pitch,
            yaw,
        }
    }

    /// Camera basis vectors (right, down, forward) in world coordinates.
    fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        // Yaw rotates forward/right about +z; pitch then tilts forward/down
        // about the right axis.
        let right = Vector3::new(sy, cy, 0.0);
        let forward = Vector3::new(cp * cy, -cp * sy, -sp);
        let down = Vector3::new(-sp * cy, sp * sy, -cp);
        (right, down, forward)
    }

    /// Projects a world point to continuous pixel coordinates (u, v) and
    /// camera depth; `None` when the point is not in front of the camera.
    pub fn project_point(&self, p: Vector3<f64>) -> Option<(f64, f64, f64)> {
        let (right, down, forward) = self.basis();
        let rel = p - Vector3::new(0.0, 0.0, self.height);
        let depth = rel.dot(&forward);
        if depth <= 1e-9 {
            return None;
        }
        let u = self.fx * rel.dot(&right) / depth + self.cx;
        let v = self.fy * rel.dot(&down) / depth + self.cy;
        Some((u, v, depth))
    }

    /// Intersects the ray through pixel center (u+0.5, v+0.5) with the ground
    /// plane z = 0; returns the world hit point.
    pub fn ground_hit(&self, u: usize, v: usize) -> Option<(f64, f64)> {
        let (right, down, forward) = self.basis();
        let du = (u as f64 + 0.5 - self.cx) / self.fx;
        let dv = (v as f64 + 0.5 - self.cy) / self.fy;
        let dir = forward + right * du + down * dv;
        if dir.z >= -1e-12 {
            return None; // at or above the horizon
        }
        let t = self.height / -dir.z;
        Some((t * dir.x, t * dir.y))
    }

    /// First image row that can see the ground, from the analytic horizon.
    pub fn horizon_row(&self) -> usize {
        // Rows with (v + 0.5 - cy)/fy * cos(pitch) + sin(pitch) <= 0 are sky.
        let v_h = self.cy - self.fy * self.pitch.tan() - 0.5;
        if v_h < 0.0 {
            0
        } else {
            (v_h.floor() as usize + 1).min(IMG_H)
        }
    }
}

/// Perspective road mask: per-pixel semantic class ids (same classes as the
/// bird's-eye-view map). Row-major, `IMG_H` rows of `IMG_W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadMask2D {
    pub classes: Vec<u8>,
}

impl RoadMask2D {
    pub fn class_at(&self, u: usize, v: usize) -> u8 {
        self.classes[v * IMG_W + u]
    }
}

/// Perspective object layout map: 0 = none, 1..=3 = category id + 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutMap2D {
    pub cells: Vec<u8>,
}

impl LayoutMap2D {
    pub fn empty() -> LayoutMap2D {
        LayoutMap2D {
            cells: vec![0; IMG_W * IMG_H],
        }
    }

    pub fn value_at(&self, u: usize, v: usize) -> u8 {
        self.cells[v * IMG_W + u]
    }
}

/// Normalized 2D bounding box with category, clipped to the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub category: Category,
}

/// Samples a forward-facing camera pose near the prior height of 1.5 m with
/// up to two degrees of pitch. Deterministic for a given seed.
pub fn sample_pose(seed: u64) -> CameraPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = rng.gen_range(1.35..=1.65);
    let pitch = rng.gen_range(-2.0f64..=2.0).to_radians();
    CameraPose::with_extrinsics(height, pitch, 0.0)
}

/// Projects the BEV semantic map into the camera perspective by casting a ray
/// through every below-horizon pixel to the ground plane and copying the map
/// class at the hit point. Rays leaving the map extent give background.
pub fn project_map(map: &SemanticMap, pose: &CameraPose) -> RoadMask2D {
    let mut classes = vec![0u8; IMG_W * IMG_H];
    let start = pose.horizon_row();
    for v in start..IMG_H {
        for u in 0..IMG_W {
            if let Some((x, y)) = pose.ground_hit(u, v) {
                classes[v * IMG_W + u] = map.class_at_world(x, y).unwrap_or(0);
            }
        }
    }
    RoadMask2D { classes }
}

/// One projected object: its pixel rectangle (u1, v1, u2, v2; end-exclusive),
/// mean corner depth and the normalized box. Sorted far to near.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedBox {
    pub px_rect: (usize, usize, usize, usize),
    pub depth: f64,
    pub boxed: Box2D,
}

/// Projects all 8 cuboid corners of each object and returns the visible
/// boxes sorted far to near (painter's order).
pub fn projected_boxes(layout: &ObjectLayout, pose: &CameraPose) -> Vec<ProjectedBox> {
    let mut projected: Vec<ProjectedBox> = Vec::new();
    for obj in layout.objects() {
        let (s, c) = obj.yaw.sin_cos();
        let (hl, hw) = (obj.l / 2.0, obj.w / 2.0);
        let mut min_u = f64::INFINITY;
        let mut max_u = f64::NEG_INFINITY;
        let mut min_v = f64::INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        let mut depth_sum = 0.0;
        let mut visible = 0usize;
        for &dx in &[-hl, hl] {
            for &dy in &[-hw, hw] {
                // Heading 0 points along +x; the footprint rotates with yaw.
                let wx = obj.x + dx * c - dy * s;
                let wy = obj.y + dx * s + dy * c;
                for &wz in &[obj.z, obj.z + obj.h] {
                    if let Some((u, v, d)) = pose.project_point(Vector3::new(wx, wy, wz)) {
                        min_u = min_u.min(u);
                        max_u = max_u.max(u);
                        min_v = min_v.min(v);
                        max_v = max_v.max(v);
                        depth_sum += d;
                        visible += 1;
                    }
                }
            }
        }
        if visible == 0 {
            continue; // entirely behind the camera
        }
        let x1 = (min_u / IMG_W as f64).clamp(0.0, 1.0);
        let x2 = (max_u / IMG_W as f64).clamp(0.0, 1.0);
        let y1 = (min_v / IMG_H as f64).clamp(0.0, 1.0);
        let y2 = (max_v / IMG_H as f64).clamp(0.0, 1.0);
        if x2 - x1 <= f64::EPSILON || y2 - y1 <= f64::EPSILON {
            continue; // clipped away entirely
        }
        let u1 = (x1 * IMG_W as f64).floor() as usize;
        let u2 = ((x2 * IMG_W as f64).ceil() as usize).min(IMG_W);
        let v1 = (y1 * IMG_H as f64).floor() as usize;
        let v2 = ((y2 * IMG_H as f64).ceil() as usize).min(IMG_H);
        projected.push(ProjectedBox {
            px_rect: (u1, v1, u2, v2),
            depth: depth_sum / visible as f64,
            boxed: Box2D {
                x1,
                y1,
                x2,
                y2,
                category: obj.category,
            },
        });
    }
    projected.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    projected
}

/// Projects the object layout into the perspective layout map and the list of
/// normalized 2D boxes. Objects entirely behind the camera or outside the
/// frame are dropped; the map is painted far to near so closer objects win.
pub fn project_objects(layout: &ObjectLayout, pose: &CameraPose) -> (LayoutMap2D, Vec<Box2D>) {
    let projected = projected_boxes(layout, pose);
    let mut map2d = LayoutMap2D::empty();
    for p in &projected {
        let (u1, v1, u2, v2) = p.px_rect;
        let code = p.boxed.category.id() as u8 + 1;
        for v in v1..v2 {
            for u in u1..u2 {
                map2d.cells[v * IMG_W + u] = code;
            }
        }
    }
    // Box list reported near to far.
    let boxes = projected.iter().rev().map(|p| p.boxed).collect();
    (map2d, boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{ObjectLayout, ObjectPose3D, SemanticMap};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar projection: plain trigonometry, no shared code with
    /// the vector-based implementation above.
    fn oracle_project(
        pose: &CameraPose,
        (px, py, pz): (f64, f64, f64),
    ) -> Option<(f64, f64, f64)> {
        let sp = pose.pitch.sin();
        let cp = pose.pitch.cos();
        let sy = pose.yaw.sin();
        let cy = pose.yaw.cos();
        let rx = px;
        let ry = py;
        let rz = pz - pose.height;
        let x_cam = rx * sy + ry * cy;
        let y_cam = rx * (-sp * cy) + ry * (sp * sy) + rz * (-cp);
        let z_cam = rx * (cp * cy) + ry * (-cp * sy) + rz * (-sp);
        if z_cam <= 1e-9 {
            return None;
        }
        Some((
            pose.fx * x_cam / z_cam + pose.cx,
            pose.fy * y_cam / z_cam + pose.cy,
            z_cam,
        ))
    }

    #[test]
    fn hand_computed_pixel_row() {
        // Ground point 10 m ahead on the camera axis, height 1.5, pitch 0:
        // v = 32 + 64 * 1.5 / 10 = 41.6, so it lands in pixel row 41.
        let pose = CameraPose::with_extrinsics(1.5, 0.0, 0.0);
        let (u, v, _) = pose.project_point(Vector3::new(10.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(u, 56.0, epsilon = 1e-12);
        assert_relative_eq!(v, 41.6, epsilon = 1e-12);
        assert_eq!(v.floor() as usize, 41);
    }

    #[test]
    fn projection_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..100 {
            let pose = CameraPose::with_extrinsics(
                rng.gen_range(1.0..2.0),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.3..0.3),
            );
            let p = (
                rng.gen_range(1.0..30.0),
                rng.gen_range(-15.0..15.0),
                rng.gen_range(0.0..4.0),
            );
            let got = pose.project_point(Vector3::new(p.0, p.1, p.2));
            let want = oracle_project(&pose, p);
            match (got, want) {
                (Some((u, v, d)), Some((ou, ov, od))) => {
                    assert_relative_eq!(u, ou, epsilon = 1e-9);
                    assert_relative_eq!(v, ov, epsilon = 1e-9);
                    assert_relative_eq!(d, od, epsilon = 1e-9);
                }
                (None, None) => {}
                other => panic!("visibility mismatch at case {i}: {other:?}"),
            }
        }
    }

    #[test]
    fn pose_sampling_bounds_and_mean() {
        let mut sum = 0.0;
        for seed in 0..10_000u64 {
            let pose = sample_pose(seed);
            assert!(pose.height >= 1.35 && pose.height <= 1.65);
            assert!(pose.pitch.abs() <= 0.1);
            assert_eq!(pose.yaw, 0.0);
            sum += pose.height;
        }
        let mean = sum / 10_000.0;
        assert!((mean - 1.5).abs() < 0.01, "mean height {mean}");
    }

    #[test]
    fn pose_sampling_deterministic() {
        assert_eq!(sample_pose(42), sample_pose(42));
    }

    #[test]
    fn empty_map_projects_to_background() {
        let map = SemanticMap::filled(0);
        let pose = CameraPose::with_extrinsics(1.5, 0.0, 0.0);
        let mask = project_map(&map, &pose);
        assert!(mask.classes.iter().all(|&c| c == 0));
    }

    #[test]
    fn projected_lane_line_is_collinear() {
        // A lane line along the forward axis must project onto a straight
        // image line (pinhole maps lines to lines). Fit v = a*u + b through
        // the projected pixel centers of the line's ground points.
        let pose = CameraPose::with_extrinsics(1.5, 0.02, 0.0);
        let y_line = 1.75;
        let mut pts = Vec::new();
        for i in 0..40 {
            let x = 4.0 + i as f64 * 0.5;
            if let Some((u, v, _)) = pose.project_point(Vector3::new(x, y_line, 0.0)) {
                pts.push((u, v));
            }
        }
        assert!(pts.len() > 30);
        let n = pts.len() as f64;
        let (su, sv) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
        let (mu, mv) = (su / n, sv / n);
        let mut num = 0.0;
        let mut den = 0.0;
        for (u, v) in &pts {
            num += (u - mu) * (v - mv);
            den += (u - mu) * (u - mu);
        }
        let a = num / den;
        let b = mv - a * mu;
        for (u, v) in &pts {
            assert!((a * u + b - v).abs() < 0.5, "residual too large");
        }
    }

    #[test]
    fn empty_layout_projects_empty() {
        let pose = CameraPose::with_extrinsics(1.5, 0.0, 0.0);
        let (map2d, boxes) = project_objects(&ObjectLayout::empty(), &pose);
        assert!(boxes.is_empty());
        assert!(map2d.cells.iter().all(|&c| c == 0));
    }

    #[test]
    fn unit_cube_ahead_is_centered() {
        let pose = CameraPose::with_extrinsics(1.5, 0.0, 0.0);
        let mut layout = ObjectLayout::empty();
        layout.push(ObjectPose3D {
            x: 10.0,
            y: 0.0,
            z: 0.0,
            l: 1.0,
            w: 1.0,
            h: 1.0,
            yaw: 0.0,
            category: Category::Car,
        });
        let (_, boxes) = project_objects(&layout, &pose);
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        let center_x = (b.x1 + b.x2) / 2.0;
        assert_relative_eq!(center_x, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn painter_order_near_wins() {
        let pose = CameraPose::with_extrinsics(1.5, 0.0, 0.0);
        let mut layout = ObjectLayout::empty();
        layout.push(ObjectPose3D {
            x: 15.0,
            y: 0.0,
            z: 0.0,
            l: 4.0,
            w: 2.0,
            h: 1.5,
            yaw: 0.0,
            category: Category::Truck, // far
        });
        layout.push(ObjectPose3D {
            x: 5.0,
            y: 0.0,
            z: 0.0,
            l: 4.0,
            w: 2.0,
            h: 1.5,
            yaw: 0.0,
            category: Category::Car, // near
        });
        let (map2d, boxes) = project_objects(&layout, &pose);
        assert_eq!(boxes.len(), 2);
        // In the overlap the near car (code 1) must have overwritten the truck.
        let near = boxes.iter().find(|b| b.category == Category::Car).unwrap();
        let cu = (((near.x1 + near.x2) / 2.0) * IMG_W as f64) as usize;
        let cv = (((near.y1 + near.y2) / 2.0) * IMG_H as f64) as usize;
        assert_eq!(map2d.value_at(cu, cv), 1);
    }

    #[test]
    fn depth_monotonicity() {
        let pose = CameraPose::with_extrinsics(1.5, 0.0, 0.0);
        let mut last_height = f64::INFINITY;
        for dist in [6.0, 10.0, 14.0, 20.0] {
            let mut layout = ObjectLayout::empty();
            layout.push(ObjectPose3D {
                x: dist,
                y: 0.0,
                z: 0.0,
                l: 4.0,
                w: 2.0,
                h: 1.5,
                yaw: 0.0,
                category: Category::Car,
            });
            let (_, boxes) = project_objects(&layout, &pose);
            let h = boxes[0].y2 - boxes[0].y1;
            assert!(h < last_height, "box height must shrink with distance");
            last_height = h;
        }
    }

    #[test]
    fn behind_camera_is_culled() {
        let pose = CameraPose::with_extrinsics(1.5, 0.0, 0.0);
        let mut layout = ObjectLayout::empty();
        layout.push(ObjectPose3D {
            x: -10.0,
            y: 0.0,
            z: 0.0,
            l: 4.0,
            w: 2.0,
            h: 1.5,
            yaw: 0.0,
            category: Category::Car,
        });
        let (map2d, boxes) = project_objects(&layout, &pose);
        assert!(boxes.is_empty());
        assert!(map2d.cells.iter().all(|&c| c == 0));
    }

    #[test]
    fn painted_pixels_lie_inside_their_box() {
        let pose = CameraPose::with_extrinsics(1.55, 0.015, 0.0);
        let mut layout = ObjectLayout::empty();
        layout.push(ObjectPose3D {
            x: 8.0,
            y: 2.0,
            z: 0.0,
            l: 4.4,
            w: 1.9,
            h: 1.6,
            yaw: 0.2,
            category: Category::Pedestrian,
        });
        let (map2d, boxes) = project_objects(&layout, &pose);
        let b = boxes[0];
        for v in 0..IMG_H {
            for u in 0..IMG_W {
                if map2d.value_at(u, v) != 0 {
                    let (uf, vf) = (u as f64 / IMG_W as f64, v as f64 / IMG_H as f64);
                    assert!(uf >= b.x1 - 1.0 / IMG_W as f64 && uf <= b.x2);
                    assert!(vf >= b.y1 - 1.0 / IMG_H as f64 && vf <= b.y2);
                }
            }
        }
    }
}
