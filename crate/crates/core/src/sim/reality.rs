//! Camera-feed frames of the synthetic desk.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{HandSpec, Scene, SimError};
use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::hand::CbCrFrame;
use crate::image::{clamp_u8, ycbcr_to_rgb, ColorImage};
use crate::marker::MarkerSpec;
use crate::model::Mesh;
use crate::render::{composite, rasterize, GuideStyle, RenderItem};

pub const MARKER_WHITE: u8 = 235;
pub const MARKER_BLACK: u8 = 20;
pub const DESK_GRAY: u8 = 140;

/// Chroma frames are this many times coarser than the colour frame.
pub const CBCR_DOWNSAMPLE: u32 = 2;

const SUPERSAMPLE: u32 = 4;

/// Renders frame `t` of the scene from its true camera.
pub fn render_reality_frame(scene: &Scene, t: u32) -> Result<(ColorImage, CbCrFrame), SimError> {
    scene.truth.check_frame(t)?;
    Ok(render_reality_view(scene, &scene.truth.camera_pose(t), scene.truth.built_through_at(t), t))
}

/// Renders the scene from an arbitrary camera with `built` bricks standing;
/// `t` selects props, hand position and noise.
pub fn render_reality_view(scene: &Scene, camera: &Pose6DoF, built: u32, t: u32) -> (ColorImage, CbCrFrame) {
    let truth = &scene.truth;
    let k = &truth.intrinsics;
    let background = desk_plane(&truth.marker, camera, k);

    let model = &scene.model;
    let prop_meshes: Vec<(Mesh, [u8; 3])> =
        truth.props.iter().filter(|p| p.present_at(t)).map(|p| (p.mesh(), p.rgb)).collect();
    let solid = |rgb| GuideStyle::Shaded { rgb, opacity: 1.0 };
    let mut items: Vec<RenderItem> = model
        .bricks()
        .iter()
        .take_while(|b| b.step_index <= built)
        .map(|b| {
            let part = model.part_of(b);
            RenderItem::guide(&part.mesh, model.brick_to_marker(b), solid(part.color_rgb))
        })
        .collect();
    items.extend(prop_meshes.iter().map(|(m, rgb)| RenderItem::guide(m, Pose6DoF::identity(), solid(*rgb))));
    let mut img = composite(&background, &rasterize(&items, camera, k)).expect("same intrinsics").composed;

    if let Some(hand) = truth.hand.as_ref().filter(|h| h.active_at(t)) {
        paint_hand(&mut img, hand, t);
    }
    if truth.noise.pixel_sigma > 0.0 {
        add_noise(&mut img, truth.noise.pixel_sigma, truth.noise.seed, t);
    }
    let cbcr = CbCrFrame::from_color(&img, CBCR_DOWNSAMPLE).expect("non-empty frame");
    (img, cbcr)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Surface {
    Desk,
    Black,
    White,
}

impl Surface {
    fn level(self) -> u8 {
        match self {
            Surface::Desk => DESK_GRAY,
            Surface::Black => MARKER_BLACK,
            Surface::White => MARKER_WHITE,
        }
    }
}

/// Ray against the `z = 0` plane, classified by the marker print.
struct PlaneCaster<'a> {
    marker: &'a MarkerSpec,
    rt: Matrix3<f64>,
    center: Point3<f64>,
    k: &'a CameraIntrinsics,
}

impl PlaneCaster<'_> {
    fn surface(&self, u: f64, v: f64) -> Surface {
        let d = self.rt * Vector3::new((u - self.k.cx) / self.k.fx, (v - self.k.cy) / self.k.fy, 1.0);
        if self.center.z <= 0.0 || d.z >= 0.0 {
            return Surface::Desk;
        }
        let s = -self.center.z / d.z;
        let p = nalgebra::Point2::new(self.center.x + s * d.x, self.center.y + s * d.y);
        match self.marker.is_white(&p) {
            Some(true) => Surface::White,
            Some(false) => Surface::Black,
            None => Surface::Desk,
        }
    }
}

/// Desk and marker print, supersampled where a pixel straddles a boundary.
fn desk_plane(marker: &MarkerSpec, camera: &Pose6DoF, k: &CameraIntrinsics) -> ColorImage {
    let caster = PlaneCaster { marker, rt: camera.rotation.transpose(), center: camera.camera_center(), k };
    let (w, h) = (k.width, k.height);
    let cw = w as usize + 1;
    let mut corners = Vec::with_capacity(cw * (h as usize + 1));
    for y in 0..=h {
        for x in 0..=w {
            corners.push(caster.surface(x as f64, y as f64));
        }
    }
    let mut img = ColorImage::new(w, h);
    for y in 0..h as usize {
        for x in 0..w as usize {
            let c = [corners[y * cw + x], corners[y * cw + x + 1], corners[(y + 1) * cw + x], corners[(y + 1) * cw + x + 1]];
            let level = if c.iter().all(|&s| s == c[0]) {
                c[0].level()
            } else {
                let mut sum = 0u32;
                for j in 0..SUPERSAMPLE {
                    for i in 0..SUPERSAMPLE {
                        let u = x as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64;
                        let v = y as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64;
                        sum += caster.surface(u, v).level() as u32;
                    }
                }
                let n = SUPERSAMPLE * SUPERSAMPLE;
                ((sum + n / 2) / n) as u8
            };
            img.put(x as u32, y as u32, [level; 3]);
        }
    }
    img
}

fn frame_rng(seed: u64, t: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Hand pixels: a chroma offset drawn once per hand from the skin
/// distribution, plus a gentle linear gradient across the first blob.
fn paint_hand(img: &mut ColorImage, hand: &HandSpec, t: u32) {
    let Some(first) = hand.blobs.first() else { return };
    let mut rng = frame_rng(hand.seed, 0);
    let sigma = hand.cbcr_sigma.max(0.0);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let offset = [0, 1].map(|_| normal.sample(&mut rng).clamp(-sigma, sigma));
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dir_x, dir_y) = (theta.cos(), theta.sin());
    let c0 = first.center_at(t);
    let r0 = first.semi_axes_px[0].max(first.semi_axes_px[1]);

    for blob in &hand.blobs {
        let [cx, cy] = blob.center_at(t);
        let r = blob.semi_axes_px[0].max(blob.semi_axes_px[1]);
        let x0 = (cx - r).floor().max(0.0) as u32;
        let y0 = (cy - r).floor().max(0.0) as u32;
        let x1 = ((cx + r).ceil().max(0.0) as u32).min(img.width);
        let y1 = ((cy + r).ceil().max(0.0) as u32).min(img.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                if !blob.contains(t, u, v) {
                    continue;
                }
                let g = (((u - c0[0]) * dir_x + (v - c0[1]) * dir_y) / r0).clamp(-1.0, 1.0);
                let cb = hand.cbcr_mean[0] + offset[0] + 0.5 * sigma * g;
                let cr = hand.cbcr_mean[1] + offset[1] + 0.5 * sigma * g;
                img.put(x, y, ycbcr_to_rgb(hand.luma + 15.0 * g, cb, cr));
            }
        }
    }
}

fn add_noise(img: &mut ColorImage, sigma: f64, seed: u64, t: u32) {
    let mut rng = frame_rng(seed.wrapping_add(0x5EED), t);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for c in img.data.iter_mut() {
        *c = clamp_u8(*c as f64 + normal.sample(&mut rng));
    }
}
