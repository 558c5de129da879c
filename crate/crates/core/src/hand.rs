//! Hand occlusion: chroma seed segmentation on a screen grid, hole filling,
//! small-blob removal and hexagon billboard occluders.

use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::image::{rgb_to_cbcr, ColorImage, ImageError, Mask};
use crate::model::Mesh;

/// Seeds retained per session; older touches are dropped.
pub const MAX_SEEDS: usize = 2;
/// Hexagon depth when no guide brick is in view (mm).
pub const DEFAULT_HEX_DEPTH_MM: f64 = 100.0;

#[derive(Debug, Error)]
pub enum HandError {
    #[error("touch ({0:.1}, {1:.1}) outside the {2}x{3} frame")]
    Bounds(f64, f64, u32, u32),
    #[error("no colour seeds set")]
    NoSeed,
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid chroma frame: {0}")]
    Frame(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Per-pixel (Cb, Cr), possibly at a lower resolution than the screen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbCrFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[u8; 2]>,
}

impl CbCrFrame {
    pub fn new(width: u32, height: u32, data: Vec<[u8; 2]>) -> Result<Self, HandError> {
        if width == 0 || height == 0 {
            return Err(HandError::Frame(format!("{width}x{height}")));
        }
        if data.len() != width as usize * height as usize {
            return Err(HandError::Frame(format!("{} samples for {width}x{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, cbcr: [u8; 2]) -> Result<Self, HandError> {
        Self::new(width, height, vec![cbcr; width as usize * height as usize])
    }

    /// Full-range chroma of `img`, averaged over `factor`×`factor` blocks.
    pub fn from_color(img: &ColorImage, factor: u32) -> Result<Self, HandError> {
        let f = factor.max(1);
        let (w, h) = (img.width.div_ceil(f), img.height.div_ceil(f));
        let mut data = Vec::with_capacity(w as usize * h as usize);
        for by in 0..h {
            for bx in 0..w {
                let (mut cb, mut cr, mut n) = (0.0, 0.0, 0.0);
                for y in by * f..((by + 1) * f).min(img.height) {
                    for x in bx * f..((bx + 1) * f).min(img.width) {
                        let (b, r) = rgb_to_cbcr(img.get(x, y));
                        cb += b;
                        cr += r;
                        n += 1.0;
                    }
                }
                data.push([(cb / n).round().clamp(0.0, 255.0) as u8, (cr / n).round().clamp(0.0, 255.0) as u8]);
            }
        }
        Self::new(w, h, data)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 2] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Sample under screen pixel `(u, v)` of a `screen_w`×`screen_h` view.
    pub fn sample_screen(&self, u: f64, v: f64, screen_w: u32, screen_h: u32) -> Option<[u8; 2]> {
        if !(u >= 0.0 && v >= 0.0 && u < screen_w as f64 && v < screen_h as f64) {
            return None;
        }
        let x = ((u * self.width as f64 / screen_w as f64) as u32).min(self.width - 1);
        let y = ((v * self.height as f64 / screen_h as f64) as u32).min(self.height - 1);
        Some(self.get(x, y))
    }

    /// Raw file: `width: u32, height: u32` little-endian, then interleaved Cb, Cr bytes.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<(), HandError> {
        w.write_all(&self.width.to_le_bytes()).map_err(ImageError::from)?;
        w.write_all(&self.height.to_le_bytes()).map_err(ImageError::from)?;
        let bytes: Vec<u8> = self.data.iter().flatten().copied().collect();
        w.write_all(&bytes).map_err(ImageError::from)?;
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self, HandError> {
        let mut hdr = [0u8; 8];
        r.read_exact(&mut hdr).map_err(ImageError::from)?;
        let w = u32::from_le_bytes(hdr[..4].try_into().expect("4 bytes"));
        let h = u32::from_le_bytes(hdr[4..].try_into().expect("4 bytes"));
        let mut bytes = vec![0u8; w as usize * h as usize * 2];
        r.read_exact(&mut bytes).map_err(ImageError::from)?;
        Self::new(w, h, bytes.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorSeed {
    pub cb: u8,
    pub cr: u8,
    pub tol_cb: u8,
    pub tol_cr: u8,
}

impl ColorSeed {
    #[inline]
    pub fn matches(&self, cbcr: [u8; 2]) -> bool {
        cbcr[0].abs_diff(self.cb) <= self.tol_cb && cbcr[1].abs_diff(self.cr) <= self.tol_cr
    }
}

/// Tunables for the hand pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandConfig {
    pub tol_cb: u8,
    pub tol_cr: u8,
    pub cell_px: u32,
    /// `None`: `max(4, ceil(0.5% of cells))`.
    pub min_blob_cells: Option<u32>,
}

impl Default for HandConfig {
    fn default() -> Self {
        Self { tol_cb: 12, tol_cr: 12, cell_px: 10, min_blob_cells: None }
    }
}

impl HandConfig {
    pub fn min_blob_for(&self, grid: &HandGrid) -> u32 {
        self.min_blob_cells.unwrap_or_else(|| default_min_blob(grid.cols * grid.rows))
    }
}

pub fn default_min_blob(cells: u32) -> u32 {
    (cells as f64 * 0.005).ceil().max(4.0) as u32
}

/// Appends a seed taken under the touch point and keeps the newest two.
pub fn add_seed(
    seeds: &[ColorSeed],
    touch: (f64, f64),
    screen: (u32, u32),
    frame: &CbCrFrame,
    cfg: &HandConfig,
) -> Result<Vec<ColorSeed>, HandError> {
    let [cb, cr] = frame
        .sample_screen(touch.0, touch.1, screen.0, screen.1)
        .ok_or(HandError::Bounds(touch.0, touch.1, screen.0, screen.1))?;
    let mut out: Vec<ColorSeed> = seeds.to_vec();
    out.push(ColorSeed { cb, cr, tol_cb: cfg.tol_cb, tol_cr: cfg.tol_cr });
    let skip = out.len().saturating_sub(MAX_SEEDS);
    Ok(out.split_off(skip))
}

/// Occupancy lattice over the screen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandGrid {
    pub width: u32,
    pub height: u32,
    pub cell_px: u32,
    pub cols: u32,
    pub rows: u32,
    pub occupancy: Vec<bool>,
}

impl HandGrid {
    pub fn new(width: u32, height: u32, cell_px: u32) -> Result<Self, HandError> {
        if cell_px == 0 || width == 0 || height == 0 {
            return Err(HandError::Grid(format!("cell {cell_px} px over {width}x{height}")));
        }
        let (cols, rows) = (width.div_ceil(cell_px), height.div_ceil(cell_px));
        Ok(Self { width, height, cell_px, cols, rows, occupancy: vec![false; (cols * rows) as usize] })
    }

    #[inline]
    pub fn get(&self, c: u32, r: u32) -> bool {
        self.occupancy[(r * self.cols + c) as usize]
    }

    #[inline]
    pub fn set(&mut self, c: u32, r: u32, v: bool) {
        self.occupancy[(r * self.cols + c) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// Screen rectangle `[x0, x1) × [y0, y1)` of a cell, clipped to the screen.
    pub fn cell_rect(&self, c: u32, r: u32) -> (u32, u32, u32, u32) {
        let s = self.cell_px;
        (c * s, r * s, ((c + 1) * s).min(self.width), ((r + 1) * s).min(self.height))
    }

    /// Centre of the clipped cell in continuous screen coordinates.
    pub fn cell_center(&self, c: u32, r: u32) -> Point2<f64> {
        let (x0, y0, x1, y1) = self.cell_rect(c, r);
        Point2::new((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0)
    }

    /// Pixel whose colour labels the cell.
    pub fn sample_pixel(&self, c: u32, r: u32) -> (u32, u32) {
        let (x0, y0, x1, y1) = self.cell_rect(c, r);
        ((x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2)
    }

    /// Screen mask covering every occupied cell.
    pub fn to_mask(&self) -> Mask {
        let mut m = Mask::new(self.width, self.height);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(c, r) {
                    let (x0, y0, x1, y1) = self.cell_rect(c, r);
                    for y in y0..y1 {
                        m.data[(y * self.width + x0) as usize..(y * self.width + x1) as usize].fill(true);
                    }
                }
            }
        }
        m
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> {
        let (cols, rows) = (self.cols as usize, self.rows as usize);
        let (c, r) = (i % cols, i / cols);
        [
            (c > 0).then(|| i - 1),
            (c + 1 < cols).then(|| i + 1),
            (r > 0).then(|| i - cols),
            (r + 1 < rows).then(|| i + cols),
        ]
        .into_iter()
        .flatten()
    }
}

/// Labels each cell by its sample pixel against every seed.
pub fn segment(frame: &CbCrFrame, seeds: &[ColorSeed], grid: &HandGrid) -> Result<HandGrid, HandError> {
    if seeds.is_empty() {
        return Err(HandError::NoSeed);
    }
    let mut out = grid.clone();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (x, y) = grid.sample_pixel(c, r);
            let s = frame
                .sample_screen(x as f64 + 0.5, y as f64 + 0.5, grid.width, grid.height)
                .expect("sample pixel lies on screen");
            out.set(c, r, seeds.iter().any(|seed| seed.matches(s)));
        }
    }
    Ok(out)
}

/// Fills enclosed holes, then clears components smaller than `min_blob_cells`.
/// Both passes use 4-connectivity.
pub fn refine_mask(grid: &HandGrid, min_blob_cells: u32) -> HandGrid {
    let mut out = grid.clone();
    let n = out.occupancy.len();
    let (cols, rows) = (out.cols as usize, out.rows as usize);

    // Background reachable from the border stays empty; everything else fills.
    let mut outside = vec![false; n];
    let mut queue = VecDeque::new();
    for (i, (o, &occupied)) in outside.iter_mut().zip(&out.occupancy).enumerate() {
        let (c, r) = (i % cols, i / cols);
        let border = c == 0 || r == 0 || c + 1 == cols || r + 1 == rows;
        if border && !occupied {
            *o = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in out.neighbours(i).collect::<Vec<_>>() {
            if !out.occupancy[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    for (o, out_i) in out.occupancy.iter_mut().zip(&outside) {
        *o = !out_i;
    }

    let mut seen = vec![false; n];
    let mut comp = Vec::new();
    for start in 0..n {
        if !out.occupancy[start] || seen[start] {
            continue;
        }
        comp.clear();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for j in out.neighbours(i).collect::<Vec<_>>() {
                if out.occupancy[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if (comp.len() as u32) < min_blob_cells {
            for &i in &comp {
                out.occupancy[i] = false;
            }
        }
    }
    out
}

/// Camera-facing hexagon placed in front of the virtual bricks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexOccluder {
    pub center_px: [f64; 2],
    pub circumradius_px: f64,
    pub depth_mm: f64,
}

/// Depth for hexagons: halfway between twice the near plane and the nearest
/// guide surface, pulled closer to the near plane if the guide is very close.
pub fn hex_depth(k: &CameraIntrinsics, min_guide_depth_mm: Option<f64>) -> f64 {
    let near = k.near_mm;
    match min_guide_depth_mm {
        Some(g) if g > 2.0 * near => (2.0 * near + g) / 2.0,
        Some(g) if g > near => (near + g) / 2.0,
        Some(_) => near * (1.0 + 1e-6),
        None => DEFAULT_HEX_DEPTH_MM,
    }
}

/// One hexagon per occupied cell, overlapping its neighbours.
pub fn generate_hex_occluders(grid: &HandGrid, k: &CameraIntrinsics, min_guide_depth_mm: Option<f64>) -> Vec<HexOccluder> {
    let depth = hex_depth(k, min_guide_depth_mm);
    let radius = 0.75 * grid.cell_px as f64 * std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(grid.count());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if grid.get(c, r) {
                let p = grid.cell_center(c, r);
                out.push(HexOccluder { center_px: [p.x, p.y], circumradius_px: radius, depth_mm: depth });
            }
        }
    }
    out
}

/// World-space mesh of all hexagons, for rendering as occluders.
pub fn hex_mesh(hexes: &[HexOccluder], camera_pose: &Pose6DoF, k: &CameraIntrinsics) -> Mesh {
    let world_from_cam = camera_pose.inverse();
    let mut mesh = Mesh::default();
    let lift = |u: f64, v: f64, d: f64| -> Point3<f64> {
        let p = Point3::new((u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d);
        world_from_cam.transform_point(&p)
    };
    for h in hexes {
        let [u, v] = h.center_px;
        let centre = mesh.push_vertex(lift(u, v, h.depth_mm));
        let ring: Vec<u32> = (0..6)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_3;
                mesh.push_vertex(lift(u + h.circumradius_px * a.cos(), v + h.circumradius_px * a.sin(), h.depth_mm))
            })
            .collect();
        for i in 0..6 {
            // Reverse fan order faces the camera under the culling convention.
            mesh.triangles.push([centre, ring[(i + 1) % 6], ring[i]]);
        }
    }
    mesh
}
