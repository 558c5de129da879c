//! Triangle and line scan conversion shared by every draw call.
//!
//! Screen coordinates: x right, y down, pixel centres at `+0.5`. A pixel is
//! covered when its centre is strictly inside the triangle, or lies exactly
//! on a top or left edge.

use nalgebra::{Point3, Vector3};

use crate::geometry::CameraIntrinsics;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    /// 1 / camera depth.
    pub w: f64,
}

impl ScreenVertex {
    pub fn project(p: &Point3<f64>, k: &CameraIntrinsics) -> Self {
        let w = 1.0 / p.z;
        Self { x: k.fx * p.x * w + k.cx, y: k.fy * p.y * w + k.cy, w }
    }
}

/// Sutherland-Hodgman clip of a camera-space polygon against `z >= near`.
pub(crate) fn clip_near(poly: &[Point3<f64>], near: f64, out: &mut Vec<Point3<f64>>) {
    out.clear();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (ia, ib) = (a.z >= near, b.z >= near);
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (near - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = near;
            out.push(p);
        }
    }
}

/// Signed doubled area in screen space; negative means front-facing.
#[inline]
pub(crate) fn screen_area(a: &ScreenVertex, b: &ScreenVertex, c: &ScreenVertex) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

#[inline]
fn is_top_left(dx: f64, dy: f64) -> bool {
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Calls `frag(x, y, depth)` for every covered pixel of a front-facing
/// triangle. Back-facing and degenerate triangles produce nothing.
pub(crate) fn raster_triangle(
    v: [ScreenVertex; 3],
    width: u32,
    height: u32,
    mut frag: impl FnMut(u32, u32, f32),
) {
    let area = screen_area(&v[0], &v[1], &v[2]);
    if !(area < 0.0) {
        return;
    }
    // Reorder to positive orientation so every edge function is >= 0 inside.
    let (a, b, c) = (v[0], v[2], v[1]);
    let area = -area;
    let min_x = a.x.min(b.x).min(c.x);
    let max_x = a.x.max(b.x).max(c.x);
    let min_y = a.y.min(b.y).min(c.y);
    let max_y = a.y.max(b.y).max(c.y);
    if max_x < 0.0 || max_y < 0.0 || min_x >= width as f64 || min_y >= height as f64 {
        return;
    }
    let x0 = ((min_x - 0.5).ceil().max(0.0)) as i64;
    let x1 = ((max_x - 0.5).floor().min(width as f64 - 1.0)) as i64;
    let y0 = ((min_y - 0.5).ceil().max(0.0)) as i64;
    let y1 = ((max_y - 0.5).floor().min(height as f64 - 1.0)) as i64;
    if x0 > x1 || y0 > y1 {
        return;
    }
    let edges = [(b, c), (c, a), (a, b)];
    let bias: [bool; 3] = edges.map(|(p, q)| is_top_left(q.x - p.x, q.y - p.y));
    // E(p) = (q - p0) x (p - p0): A * px + B * py + C.
    let coef: [(f64, f64, f64); 3] = edges.map(|(p, q)| {
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        (-dy, dx, dy * p.x - dx * p.y)
    });
    let inv_area = 1.0 / area;
    let ws = [a.w, b.w, c.w];
    for y in y0..=y1 {
        let py = y as f64 + 0.5;
        for x in x0..=x1 {
            let px = x as f64 + 0.5;
            let mut e = [0.0; 3];
            let mut inside = true;
            for i in 0..3 {
                let (ca, cb, cc) = coef[i];
                e[i] = ca * px + cb * py + cc;
                if e[i] < 0.0 || (e[i] == 0.0 && !bias[i]) {
                    inside = false;
                    break;
                }
            }
            if !inside {
                continue;
            }
            // e[i] weights the vertex opposite edge i.
            let w = (e[0] * ws[0] + e[1] * ws[1] + e[2] * ws[2]) * inv_area;
            if w > 0.0 {
                frag(x as u32, y as u32, (1.0 / w) as f32);
            }
        }
    }
}

/// Walks a screen-space segment one pixel per major-axis step, calling
/// `frag(x, y, depth)` with perspective-correct depth.
pub(crate) fn raster_line(a: ScreenVertex, b: ScreenVertex, width: u32, height: u32, mut frag: impl FnMut(u32, u32, f32)) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let steps = dx.abs().max(dy.abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (a.x + dx * t, a.y + dy * t);
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            continue;
        }
        let w = a.w + (b.w - a.w) * t;
        if w > 0.0 {
            frag(x as u32, y as u32, (1.0 / w) as f32);
        }
    }
}

/// Flat headlight intensity for a camera-space face.
pub(crate) fn headlight(p0: &Point3<f64>, p1: &Point3<f64>, p2: &Point3<f64>) -> f64 {
    let n: Vector3<f64> = (p1 - p0).cross(&(p2 - p0));
    let to_cam = -(p0.coords + p1.coords + p2.coords) / 3.0;
    let denom = n.norm() * to_cam.norm();
    let lambert = if denom > 0.0 { (n.dot(&to_cam) / denom).max(0.0) } else { 0.0 };
    0.35 + 0.65 * lambert
}
