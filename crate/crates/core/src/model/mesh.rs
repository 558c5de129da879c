use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose6DoF;

/// Axis-aligned box (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::from([f64::INFINITY; 3]),
            max: Point3::from([f64::NEG_INFINITY; 3]),
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.include(p);
        }
        b
    }

    pub fn include(&mut self, p: &Point3<f64>) {
        for i in 0..3 {
            self.min[i] = self.min[i].min(p[i]);
            self.max[i] = self.max[i].max(p[i]);
        }
    }

    pub fn contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        [
            Point3::new(a.x, a.y, a.z),
            Point3::new(b.x, a.y, a.z),
            Point3::new(b.x, b.y, a.z),
            Point3::new(a.x, b.y, a.z),
            Point3::new(a.x, a.y, b.z),
            Point3::new(b.x, a.y, b.z),
            Point3::new(b.x, b.y, b.z),
            Point3::new(a.x, b.y, b.z),
        ]
    }

    /// Bounds of this box after a rigid transform.
    pub fn transformed(&self, pose: &Pose6DoF) -> Aabb {
        let c = self.corners();
        let moved: Vec<Point3<f64>> = c.iter().map(|p| pose.transform_point(p)).collect();
        Aabb::from_points(moved.iter())
    }
}

/// Indexed triangle mesh. Triangles wind counter-clockwise when seen from
/// outside the solid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn push_vertex(&mut self, p: Point3<f64>) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    /// Appends two triangles for a planar quad given counter-clockwise.
    pub fn push_quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.triangles.push([a, b, c]);
        self.triangles.push([a, c, d]);
    }

    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    /// Unnormalized face normal (`(b − a) × (c − a)`).
    pub fn face_normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a))
    }

    pub fn transformed(&self, pose: &Pose6DoF) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|p| pose.transform_point(p)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Enclosed volume; positive for outward-facing winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.coords.dot(&b.coords.cross(&c.coords))
            })
            .sum::<f64>()
            / 6.0
    }

    fn edge_faces(&self) -> HashMap<(u32, u32), Vec<usize>> {
        let mut map: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        for (fi, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_faces().values().all(|f| f.len() == 2)
    }

    /// Boundary edges plus edges whose two faces' normals differ by more
    /// than `crease_deg`. Each entry carries the adjacent face indices.
    pub fn feature_edges(&self, crease_deg: f64) -> Vec<FeatureEdge> {
        let cos_limit = crease_deg.to_radians().cos();
        let mut out: Vec<FeatureEdge> = self
            .edge_faces()
            .into_iter()
            .filter_map(|((a, b), faces)| {
                let keep = match faces.as_slice() {
                    [_] => true,
                    [f0, f1] => {
                        let n0 = self.face_normal(*f0);
                        let n1 = self.face_normal(*f1);
                        let denom = n0.norm() * n1.norm();
                        denom == 0.0 || n0.dot(&n1) / denom < cos_limit
                    }
                    _ => true,
                };
                keep.then_some(FeatureEdge {
                    vertices: [a, b],
                    faces,
                })
            })
            .collect();
        out.sort_by_key(|e| e.vertices);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEdge {
    pub vertices: [u32; 2],
    pub faces: Vec<usize>,
}

/// Closed axis-aligned box mesh.
pub fn box_mesh(min: Point3<f64>, max: Point3<f64>) -> Mesh {
    let mut m = Mesh::new();
    let (a, b) = (min, max);
    let v = [
        m.push_vertex(Point3::new(a.x, a.y, a.z)),
        m.push_vertex(Point3::new(b.x, a.y, a.z)),
        m.push_vertex(Point3::new(b.x, b.y, a.z)),
        m.push_vertex(Point3::new(a.x, b.y, a.z)),
        m.push_vertex(Point3::new(a.x, a.y, b.z)),
        m.push_vertex(Point3::new(b.x, a.y, b.z)),
        m.push_vertex(Point3::new(b.x, b.y, b.z)),
        m.push_vertex(Point3::new(a.x, b.y, b.z)),
    ];
    m.push_quad(v[0], v[3], v[2], v[1]); // bottom, -z
    m.push_quad(v[4], v[5], v[6], v[7]); // top, +z
    m.push_quad(v[0], v[1], v[5], v[4]); // -y
    m.push_quad(v[1], v[2], v[6], v[5]); // +x
    m.push_quad(v[2], v[3], v[7], v[6]); // +y
    m.push_quad(v[3], v[0], v[4], v[7]); // -x
    m
}

/// Closed vertical cylinder approximated by an n-gon prism with fan caps.
pub fn cylinder_mesh(center: Point3<f64>, radius: f64, height: f64, segments: usize) -> Mesh {
    let mut m = Mesh::new();
    let bottom_c = m.push_vertex(center);
    let top_c = m.push_vertex(center + Vector3::new(0.0, 0.0, height));
    let mut bottom = Vec::with_capacity(segments);
    let mut top = Vec::with_capacity(segments);
    for i in 0..segments {
        let a = std::f64::consts::TAU * i as f64 / segments as f64;
        let off = Vector3::new(radius * a.cos(), radius * a.sin(), 0.0);
        bottom.push(m.push_vertex(center + off));
        top.push(m.push_vertex(center + off + Vector3::new(0.0, 0.0, height)));
    }
    for i in 0..segments {
        let j = (i + 1) % segments;
        m.push_quad(bottom[i], bottom[j], top[j], top[i]);
        m.triangles.push([top_c, top[i], top[j]]);
        m.triangles.push([bottom_c, bottom[j], bottom[i]]);
    }
    m
}
