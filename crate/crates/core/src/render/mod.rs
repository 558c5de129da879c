//! Software rasterizer and AR compositor.
//!
//! Two materials share one depth buffer. Occluders write depth only, so the
//! camera feed stays visible where they are but virtual content behind them
//! is hidden. Guides are drawn afterwards and write colour where they pass a
//! strict depth test.

mod raster;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::image::{ColorImage, DepthImage, Mask};
use crate::model::Mesh;
use raster::{clip_near, headlight, raster_line, raster_triangle, ScreenVertex};

/// Crease angle above which a shared edge is drawn in wireframe mode.
pub const WIREFRAME_CREASE_DEG: f64 = 20.0;

/// Relative depth slack for wireframe lines lying on a surface.
const LINE_DEPTH_BIAS: f32 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("dimension mismatch: feed {0}x{1}, overlay {2}x{3}")]
    Size(u32, u32, u32, u32),
    #[error("guide opacity must lie in (0, 1], got {0}")]
    Opacity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum GuideStyle {
    Shaded { rgb: [u8; 3], opacity: f64 },
    Wireframe { edge_rgb: [u8; 3] },
}

impl GuideStyle {
    pub fn shaded(rgb: [u8; 3], opacity: f64) -> Result<Self, RenderError> {
        if opacity > 0.0 && opacity <= 1.0 {
            Ok(Self::Shaded { rgb, opacity })
        } else {
            Err(RenderError::Opacity(opacity))
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        match *self {
            Self::Shaded { rgb, opacity } => Self::shaded(rgb, opacity).map(|_| ()),
            Self::Wireframe { .. } => Ok(()),
        }
    }
}

impl Default for GuideStyle {
    fn default() -> Self {
        Self::Shaded { rgb: [40, 200, 90], opacity: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Material {
    Guide(GuideStyle),
    Occluder,
}

/// A mesh placed in the world for one draw call.
#[derive(Debug, Clone, Copy)]
pub struct RenderItem<'a> {
    pub mesh: &'a Mesh,
    /// Mesh → world.
    pub transform: Pose6DoF,
    pub material: Material,
}

impl<'a> RenderItem<'a> {
    pub fn occluder(mesh: &'a Mesh, transform: Pose6DoF) -> Self {
        Self { mesh, transform, material: Material::Occluder }
    }

    pub fn guide(mesh: &'a Mesh, transform: Pose6DoF, style: GuideStyle) -> Self {
        Self { mesh, transform, material: Material::Guide(style) }
    }
}

/// Rasterizer output: guide colour over a transparent background.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub color: ColorImage,
    /// Per-pixel opacity; zero where nothing was written.
    pub alpha: Vec<f32>,
    pub depth: DepthImage,
    pub guide_mask: Mask,
}

impl Overlay {
    pub fn transparent(width: u32, height: u32) -> Self {
        Self {
            color: ColorImage::new(width, height),
            alpha: vec![0.0; width as usize * height as usize],
            depth: DepthImage::empty(width, height),
            guide_mask: Mask::new(width, height),
        }
    }

    pub fn width(&self) -> u32 {
        self.color.width
    }

    pub fn height(&self) -> u32 {
        self.color.height
    }
}

/// Composed AR image.
#[derive(Debug, Clone, PartialEq)]
pub struct ARFrame {
    pub composed: ColorImage,
    pub depth: DepthImage,
    pub guide_mask: Mask,
}

/// Mesh vertices in the camera frame, ready for clipping.
fn camera_vertices(item: &RenderItem, camera_pose: &Pose6DoF) -> Vec<Point3<f64>> {
    let cam_from_mesh = camera_pose.compose(&item.transform);
    item.mesh.vertices.iter().map(|v| cam_from_mesh.transform_point(v)).collect()
}

/// Rasterizes every front-facing triangle, calling `frag(x, y, depth, shade)`.
fn draw_triangles(
    mesh: &Mesh,
    cam: &[Point3<f64>],
    k: &CameraIntrinsics,
    mut frag: impl FnMut(u32, u32, f32, f64),
) {
    let mut clipped = Vec::with_capacity(4);
    for t in &mesh.triangles {
        let p = [cam[t[0] as usize], cam[t[1] as usize], cam[t[2] as usize]];
        let near = k.near_mm;
        if p.iter().all(|q| q.z < near) {
            continue;
        }
        let shade = headlight(&p[0], &p[1], &p[2]);
        if p.iter().all(|q| q.z >= near) {
            let sv = p.map(|q| ScreenVertex::project(&q, k));
            raster_triangle(sv, k.width, k.height, |x, y, z| frag(x, y, z, shade));
        } else {
            clip_near(&p, near, &mut clipped);
            let sv: Vec<ScreenVertex> = clipped.iter().map(|q| ScreenVertex::project(q, k)).collect();
            for i in 1..sv.len().saturating_sub(1) {
                raster_triangle([sv[0], sv[i], sv[i + 1]], k.width, k.height, |x, y, z| frag(x, y, z, shade));
            }
        }
    }
}

fn is_front_facing(cam: &[Point3<f64>], tri: &[u32; 3]) -> bool {
    let (a, b, c) = (cam[tri[0] as usize], cam[tri[1] as usize], cam[tri[2] as usize]);
    (b - a).cross(&(c - a)).dot(&a.coords) < 0.0
}

fn shade_rgb(rgb: [u8; 3], shade: f64) -> [u8; 3] {
    rgb.map(|c| (c as f64 * shade).round().clamp(0.0, 255.0) as u8)
}

/// Draws the scene: occluders (depth only) first, then guides.
pub fn rasterize(items: &[RenderItem], camera_pose: &Pose6DoF, k: &CameraIntrinsics) -> Overlay {
    let (w, h) = (k.width, k.height);
    let mut out = Overlay::transparent(w, h);

    for item in items.iter().filter(|i| i.material == Material::Occluder) {
        let cam = camera_vertices(item, camera_pose);
        let depth = &mut out.depth.data;
        draw_triangles(item.mesh, &cam, k, |x, y, z, _| {
            let i = (y * w + x) as usize;
            if z < depth[i] {
                depth[i] = z;
            }
        });
    }

    for item in items {
        let Material::Guide(style) = item.material else { continue };
        let cam = camera_vertices(item, camera_pose);
        match style {
            GuideStyle::Shaded { rgb, opacity } => {
                let Overlay { color, alpha, depth, guide_mask } = &mut out;
                draw_triangles(item.mesh, &cam, k, |x, y, z, shade| {
                    let i = (y * w + x) as usize;
                    if z < depth.data[i] {
                        depth.data[i] = z;
                        color.put(x, y, shade_rgb(rgb, shade));
                        alpha[i] = opacity as f32;
                        guide_mask.data[i] = true;
                    }
                });
            }
            GuideStyle::Wireframe { edge_rgb } => draw_wireframe(item.mesh, &cam, k, edge_rgb, &mut out),
        }
    }
    out
}

fn draw_wireframe(mesh: &Mesh, cam: &[Point3<f64>], k: &CameraIntrinsics, rgb: [u8; 3], out: &mut Overlay) {
    let w = k.width;
    let mut clipped = Vec::with_capacity(2);
    for edge in mesh.feature_edges(WIREFRAME_CREASE_DEG) {
        if !edge.faces.iter().any(|&f| is_front_facing(cam, &mesh.triangles[f])) {
            continue;
        }
        let (a, b) = (cam[edge.vertices[0] as usize], cam[edge.vertices[1] as usize]);
        clipped.clear();
        match (a.z >= k.near_mm, b.z >= k.near_mm) {
            (false, false) => continue,
            (true, true) => clipped.extend([a, b]),
            _ => {
                let t = (k.near_mm - a.z) / (b.z - a.z);
                let mut m = a + (b - a) * t;
                m.z = k.near_mm;
                clipped.extend(if a.z >= k.near_mm { [a, m] } else { [m, b] });
            }
        }
        let (sa, sb) = (ScreenVertex::project(&clipped[0], k), ScreenVertex::project(&clipped[1], k));
        let Overlay { color, alpha, depth, guide_mask } = &mut *out;
        raster_line(sa, sb, w, k.height, |x, y, z| {
            let i = (y * w + x) as usize;
            if z < depth.data[i] * (1.0 + LINE_DEPTH_BIAS) {
                depth.data[i] = depth.data[i].min(z);
                color.put(x, y, rgb);
                alpha[i] = 1.0;
                guide_mask.data[i] = true;
            }
        });
    }
}

/// Blends the overlay over the feed wherever a guide was drawn.
pub fn composite(feed: &ColorImage, overlay: &Overlay) -> Result<ARFrame, RenderError> {
    if feed.width != overlay.width() || feed.height != overlay.height() {
        return Err(RenderError::Size(feed.width, feed.height, overlay.width(), overlay.height()));
    }
    let mut composed = feed.clone();
    for (i, _) in overlay.guide_mask.data.iter().enumerate().filter(|(_, &m)| m) {
        let a = overlay.alpha[i] as f64;
        for c in 0..3 {
            let j = i * 3 + c;
            let v = a * overlay.color.data[j] as f64 + (1.0 - a) * feed.data[j] as f64;
            composed.data[j] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(ARFrame { composed, depth: overlay.depth.clone(), guide_mask: overlay.guide_mask.clone() })
}

/// Pixels where `target` is the nearest surface among itself and `occluders`.
pub fn visibility_mask(
    target: (&Mesh, Pose6DoF),
    occluders: &[(&Mesh, Pose6DoF)],
    camera_pose: &Pose6DoF,
    k: &CameraIntrinsics,
) -> Mask {
    let mut items: Vec<RenderItem> = occluders.iter().map(|&(m, t)| RenderItem::occluder(m, t)).collect();
    items.push(RenderItem::guide(target.0, target.1, GuideStyle::default()));
    rasterize(&items, camera_pose, k).guide_mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mesh::box_mesh;
    use nalgebra::Vector3;

    fn small_k() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 32.0, 32.0, 64, 64, 10.0).unwrap()
    }

    fn cube(c: Point3<f64>, half: f64) -> Mesh {
        box_mesh(c - Vector3::repeat(half), c + Vector3::repeat(half))
    }

    #[test]
    fn empty_scene_is_transparent() {
        let k = small_k();
        let o = rasterize(&[], &Pose6DoF::identity(), &k);
        assert!(o.alpha.iter().all(|&a| a == 0.0));
        assert!(o.depth.data.iter().all(|d| d.is_infinite()));
        assert!(o.guide_mask.is_empty());
    }

    #[test]
    fn guide_in_front_shows_full_footprint() {
        let k = small_k();
        let guide = cube(Point3::new(0.0, 0.0, 200.0), 20.0);
        let occ = cube(Point3::new(0.0, 0.0, 400.0), 30.0);
        let style = GuideStyle::default();
        let alone = rasterize(&[RenderItem::guide(&guide, Pose6DoF::identity(), style)], &Pose6DoF::identity(), &k);
        let both = rasterize(
            &[
                RenderItem::occluder(&occ, Pose6DoF::identity()),
                RenderItem::guide(&guide, Pose6DoF::identity(), style),
            ],
            &Pose6DoF::identity(),
            &k,
        );
        assert!(alone.guide_mask.count() > 100);
        assert_eq!(alone.guide_mask, both.guide_mask);
    }

    #[test]
    fn hidden_guide_is_empty() {
        let k = small_k();
        let guide = cube(Point3::new(0.0, 0.0, 400.0), 10.0);
        let occ = cube(Point3::new(0.0, 0.0, 200.0), 30.0);
        let m = visibility_mask((&guide, Pose6DoF::identity()), &[(&occ, Pose6DoF::identity())], &Pose6DoF::identity(), &k);
        assert!(m.is_empty());
    }

    #[test]
    fn occluders_never_touch_colour() {
        let k = small_k();
        let occ = cube(Point3::new(0.0, 0.0, 200.0), 30.0);
        let o = rasterize(&[RenderItem::occluder(&occ, Pose6DoF::identity())], &Pose6DoF::identity(), &k);
        assert!(o.depth.data.iter().any(|d| d.is_finite()));
        let feed = ColorImage::filled(64, 64, [12, 34, 56]);
        assert_eq!(composite(&feed, &o).unwrap().composed, feed);
    }

    #[test]
    fn composite_blend_rules() {
        let k = small_k();
        let guide = cube(Point3::new(0.0, 0.0, 200.0), 20.0);
        let feed = ColorImage::filled(64, 64, [10, 21, 200]);
        let opaque = GuideStyle::shaded([255, 255, 255], 1.0).unwrap();
        let o = rasterize(&[RenderItem::guide(&guide, Pose6DoF::identity(), opaque)], &Pose6DoF::identity(), &k);
        let f = composite(&feed, &o).unwrap();
        for i in 0..feed.pixel_count() {
            let px = &f.composed.data[i * 3..i * 3 + 3];
            if o.guide_mask.data[i] {
                assert_eq!(px, &o.color.data[i * 3..i * 3 + 3]);
            } else {
                assert_eq!(px, &feed.data[i * 3..i * 3 + 3]);
            }
        }
        let half = GuideStyle::shaded([255, 255, 255], 0.5).unwrap();
        let o = rasterize(&[RenderItem::guide(&guide, Pose6DoF::identity(), half)], &Pose6DoF::identity(), &k);
        let f = composite(&feed, &o).unwrap();
        for i in (0..feed.pixel_count()).filter(|&i| o.guide_mask.data[i]) {
            for c in 0..3 {
                let j = i * 3 + c;
                let mid = ((o.color.data[j] as u32 + feed.data[j] as u32) as f64 / 2.0).round() as u8;
                assert_eq!(f.composed.data[j], mid);
            }
        }
    }

    #[test]
    fn composite_size_mismatch() {
        let o = Overlay::transparent(4, 4);
        assert!(matches!(composite(&ColorImage::new(5, 4), &o), Err(RenderError::Size(5, 4, 4, 4))));
    }

    #[test]
    fn opacity_range() {
        assert!(GuideStyle::shaded([0; 3], 0.0).is_err());
        assert!(GuideStyle::shaded([0; 3], 1.01).is_err());
        assert!(GuideStyle::shaded([0; 3], f64::NAN).is_err());
        assert!(GuideStyle::shaded([0; 3], 1.0).is_ok());
    }

    #[test]
    fn wireframe_draws_outline_only() {
        let k = small_k();
        let guide = cube(Point3::new(0.0, 0.0, 200.0), 20.0);
        let style = GuideStyle::Wireframe { edge_rgb: [255, 0, 0] };
        let wire = rasterize(&[RenderItem::guide(&guide, Pose6DoF::identity(), style)], &Pose6DoF::identity(), &k);
        let solid = rasterize(&[RenderItem::guide(&guide, Pose6DoF::identity(), GuideStyle::default())], &Pose6DoF::identity(), &k);
        assert!(wire.guide_mask.count() > 0);
        assert!(wire.guide_mask.count() < solid.guide_mask.count() / 2);
        // Square centre (inside the front face) stays transparent.
        assert!(!wire.guide_mask.get(32, 32));
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        let k = small_k();
        // Box straddling the near plane: the far part must still render.
        let occ = box_mesh(Point3::new(5.0, -5.0, 2.0), Point3::new(30.0, 5.0, 50.0));
        let o = rasterize(&[RenderItem::occluder(&occ, Pose6DoF::identity())], &Pose6DoF::identity(), &k);
        assert!(o.depth.data.iter().all(|d| d.is_infinite() || *d >= 10.0 - 1e-3));
        assert!(o.depth.data.iter().any(|d| d.is_finite()));
    }
}
