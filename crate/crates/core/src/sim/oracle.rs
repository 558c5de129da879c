//! Per-pixel ray casting, kept apart from the rasterizer on purpose: it
//! touches only mesh vertices and poses.

use nalgebra::{Point3, Vector3};

use super::{Scene, SimError};
use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::image::{DepthImage, Mask};
use crate::model::Mesh;

const PARALLEL_EPS: f64 = 1e-12;

/// A mesh baked into world coordinates.
struct Body {
    /// Step index, 0 for the desk and props (they win depth ties).
    id: u32,
    tris: Vec<[Point3<f64>; 3]>,
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Body {
    fn new(id: u32, mesh: &Mesh, to_world: &Pose6DoF) -> Self {
        let v: Vec<Point3<f64>> = mesh.vertices.iter().map(|p| to_world.transform_point(p)).collect();
        let mut min = Point3::from(Vector3::repeat(f64::INFINITY));
        let mut max = Point3::from(Vector3::repeat(f64::NEG_INFINITY));
        for p in &v {
            min = min.inf(p);
            max = max.sup(p);
        }
        let tris = mesh.triangles.iter().map(|t| [v[t[0] as usize], v[t[1] as usize], v[t[2] as usize]]).collect();
        Self { id, tris, min, max }
    }

    /// Entry distance of the ray into the bounding box, if it hits.
    fn box_entry(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < PARALLEL_EPS {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (t0, t1) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
        // Slack so grazing hits on box faces are not lost to rounding.
        (lo <= hi * (1.0 + 1e-9) + 1e-9).then_some(lo)
    }

    fn nearest_hit(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        self.box_entry(o, d)?;
        self.tris.iter().filter_map(|t| moller_trumbore(o, d, t)).min_by(f64::total_cmp)
    }
}

/// Two-sided ray/triangle intersection; returns the ray parameter.
fn moller_trumbore(o: &Point3<f64>, d: &Vector3<f64>, t: &[Point3<f64>; 3]) -> Option<f64> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < PARALLEL_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - t[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let dist = e2.dot(&q) * inv;
    (dist > 0.0).then_some(dist)
}

/// Camera centre and world ray through the centre of pixel `(x, y)`, scaled
/// so that the ray parameter equals camera depth.
fn pixel_ray(camera: &Pose6DoF, k: &CameraIntrinsics, x: u32, y: u32) -> (Point3<f64>, Vector3<f64>) {
    let dir_cam = Vector3::new((x as f64 + 0.5 - k.cx) / k.fx, (y as f64 + 0.5 - k.cy) / k.fy, 1.0);
    (camera.camera_center(), camera.rotation.transpose() * dir_cam)
}

fn plane_hit(o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
    (d.z.abs() > PARALLEL_EPS).then(|| -o.z / d.z).filter(|&t| t > 0.0)
}

/// Pixels where brick `target_step` is the nearest surface among the desk,
/// the props present, the bricks built at frame `t` and the target itself.
/// Exact depth ties go to the lower step (desk and props count as step 0).
pub fn visibility_oracle(scene: &Scene, t: u32, target_step: u32) -> Result<Mask, SimError> {
    let truth = &scene.truth;
    truth.check_frame(t)?;
    let model = &scene.model;
    let target = model
        .brick(target_step)
        .ok_or_else(|| SimError::Scene(format!("no brick for step {target_step}")))?;
    let camera = truth.camera_pose(t);
    let built = truth.built_through_at(t);
    let target_body = Body::new(target_step, &model.part_of(target).mesh, &model.brick_to_marker(target));
    let mut others: Vec<Body> = model
        .bricks()
        .iter()
        .filter(|b| b.step_index <= built && b.step_index != target_step)
        .map(|b| Body::new(b.step_index, &model.part_of(b).mesh, &model.brick_to_marker(b)))
        .collect();
    let props: Vec<Mesh> = truth.props.iter().filter(|p| p.present_at(t)).map(|p| p.mesh()).collect();
    others.extend(props.iter().map(|m| Body::new(0, m, &Pose6DoF::identity())));

    let k = &truth.intrinsics;
    let mut mask = Mask::new(k.width, k.height);
    for y in 0..k.height {
        for x in 0..k.width {
            let (o, d) = pixel_ray(&camera, k, x, y);
            let Some(hit) = target_body.nearest_hit(&o, &d) else { continue };
            if plane_hit(&o, &d).is_some_and(|p| p <= hit) {
                continue;
            }
            let blocked = others.iter().any(|b| {
                b.box_entry(&o, &d).is_some_and(|e| e <= hit)
                    && b.nearest_hit(&o, &d).is_some_and(|h| h < hit || (h == hit && b.id < target_step))
            });
            if !blocked {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Nearest camera depth per pixel over `meshes` (no desk plane).
pub fn ray_cast_depth(meshes: &[(&Mesh, Pose6DoF)], camera: &Pose6DoF, k: &CameraIntrinsics) -> DepthImage {
    let bodies: Vec<Body> = meshes.iter().map(|(m, p)| Body::new(0, m, p)).collect();
    let mut out = DepthImage::empty(k.width, k.height);
    for y in 0..k.height {
        for x in 0..k.width {
            let (o, d) = pixel_ray(camera, k, x, y);
            if let Some(h) = bodies.iter().filter_map(|b| b.nearest_hit(&o, &d)).filter(|&h| h >= k.near_mm).min_by(f64::total_cmp) {
                out.data[(y * k.width + x) as usize] = h as f32;
            }
        }
    }
    out
}

/// Exact pixel-centre mask of the synthetic hand at frame `t`.
pub fn hand_truth_mask(scene: &Scene, t: u32) -> Result<Mask, SimError> {
    let truth = &scene.truth;
    truth.check_frame(t)?;
    let k = &truth.intrinsics;
    let mut mask = Mask::new(k.width, k.height);
    let Some(hand) = truth.hand.as_ref().filter(|h| h.active_at(t)) else { return Ok(mask) };
    for y in 0..k.height {
        for x in 0..k.width {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            if hand.blobs.iter().any(|b| b.contains(t, u, v)) {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}
