//! Marker feature detection.
//!
//! Pipeline: luminance → adaptive mean threshold → 4-connected white blobs →
//! quadrilaterals → quads chained corner-to-corner into a checker grid →
//! grid matched against the block templates → every feature of the matched
//! block predicted through the fitted homography, refined to sub-pixel
//! accuracy and kept only if its four quadrants show the expected contrast.

use std::collections::{HashMap, VecDeque};

use nalgebra::{Matrix2, Matrix3, Point2, Vector2};

use super::pose::{apply_homography, fit_homography};
use super::spec::{MarkerSpec, PatternBlock};
use super::Correspondence;
use crate::geometry::CameraIntrinsics;
use crate::image::{luma, ColorImage};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Side of the square window used for the local mean (px).
    pub threshold_window_px: u32,
    /// A pixel is white when brighter than the local mean by this much.
    pub threshold_offset: f32,
    pub min_quad_area_px: usize,
    /// Corner-to-corner linking distance as a fraction of the quad side.
    pub link_tolerance: f64,
    pub min_component_quads: usize,
    /// Fraction of sampled cells that must agree with the block template.
    pub min_match_rate: f64,
    /// Minimum gap between the darkest white and brightest black quadrant.
    pub min_contrast: f32,
    pub refine_iterations: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold_window_px: 61,
            threshold_offset: 5.0,
            min_quad_area_px: 20,
            link_tolerance: 0.35,
            min_component_quads: 3,
            min_match_rate: 0.8,
            min_contrast: 40.0,
            refine_iterations: 12,
        }
    }
}

struct Gray {
    w: usize,
    h: usize,
    v: Vec<f32>,
}

impl Gray {
    fn from_color(img: &ColorImage) -> Self {
        let v = img.data.chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();
        Self { w: img.width as usize, h: img.height as usize, v }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.v[y * self.w + x]
    }

    /// Bilinear sample at continuous image coordinates (pixel centres at +0.5).
    fn sample(&self, p: &Point2<f64>) -> Option<f32> {
        let (fx, fy) = (p.x - 0.5, p.y - 0.5);
        if !(fx >= 0.0 && fy >= 0.0 && fx < (self.w - 1) as f64 && fy < (self.h - 1) as f64) {
            return None;
        }
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (ax, ay) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
        let top = self.at(x0, y0) * (1.0 - ax) + self.at(x0 + 1, y0) * ax;
        let bot = self.at(x0, y0 + 1) * (1.0 - ax) + self.at(x0 + 1, y0 + 1) * ax;
        Some(top * (1.0 - ay) + bot * ay)
    }
}

/// Local mean over a clipped square window, via a summed-area table.
fn local_mean(g: &Gray, window: u32) -> Vec<f32> {
    let (w, h) = (g.w, g.h);
    let mut sat = vec![0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0f64;
        for x in 0..w {
            row += g.at(x, y) as f64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let r = (window / 2) as usize;
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
            out[y * w + x] = (s / ((y1 - y0) * (x1 - x0)) as f64) as f32;
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Quad {
    /// Clockwise on screen (image y points down).
    corners: [Point2<f64>; 4],
    center: Point2<f64>,
    side: f64,
}

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn convex_hull(mut pts: Vec<Point2<f64>>) -> Vec<Point2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn polygon_area(p: &[Point2<f64>]) -> f64 {
    (0..p.len()).map(|i| cross(&Point2::origin(), &p[i], &p[(i + 1) % p.len()])).sum::<f64>() / 2.0
}

fn segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Fits a quadrilateral to a blob given the outer corners of its boundary
/// pixels; `None` when the blob is not convincingly four-sided.
fn fit_quad(boundary: Vec<Point2<f64>>, pixel_count: usize) -> Option<Quad> {
    let hull = convex_hull(boundary);
    if hull.len() < 4 {
        return None;
    }
    let mut best = (0.0, 0, 0);
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            let d = (hull[i] - hull[j]).norm_squared();
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    let (a, c) = (hull[best.1], hull[best.2]);
    let side = |p: &Point2<f64>| cross(&a, &c, p);
    let b = *hull.iter().max_by(|p, q| side(p).total_cmp(&side(q)))?;
    let d = *hull.iter().min_by(|p, q| side(p).total_cmp(&side(q)))?;
    if side(&b) <= 0.0 || side(&d) >= 0.0 {
        return None;
    }
    // With d on the negative side, a-d-c-b runs clockwise on screen.
    let corners = [a, d, c, b];
    let area = polygon_area(&corners).abs();
    let hull_area = polygon_area(&hull).abs();
    let sides: Vec<f64> = (0..4).map(|i| (corners[(i + 1) % 4] - corners[i]).norm()).collect();
    let (smin, smax) = sides.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let perimeter: f64 = sides.iter().sum();
    // Hull vertices sit on pixel corners, up to a pixel outside the true edges.
    if smin < 3.0 || smax > 6.0 * smin || hull_area - area > (0.1 * hull_area).max(perimeter) {
        return None;
    }
    let fill = pixel_count as f64 / area;
    if !(0.75..=1.25).contains(&fill) {
        return None;
    }
    let tol = (0.08 * smin).max(1.5);
    let edge_dist = |p: &Point2<f64>| (0..4).map(|i| segment_distance(p, &corners[i], &corners[(i + 1) % 4])).fold(f64::MAX, f64::min);
    if hull.iter().any(|p| edge_dist(p) > tol) {
        return None;
    }
    for i in 0..4 {
        let (p, q, r) = (corners[(i + 3) % 4], corners[i], corners[(i + 1) % 4]);
        let cos = (p - q).normalize().dot(&(r - q).normalize());
        if cos.abs() > 0.87 {
            return None;
        }
    }
    let center = Point2::from((corners[0].coords + corners[1].coords + corners[2].coords + corners[3].coords) / 4.0);
    Some(Quad { corners, center, side: sides.iter().sum::<f64>() / 4.0 })
}

/// 3×3 erosion. Diagonally touching checker cells share anti-aliased corner
/// pixels that would otherwise merge them into one blob.
fn erode(binary: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            out[y * w + x] = (y - 1..=y + 1).all(|yy| binary[yy * w + x - 1..=yy * w + x + 1].iter().all(|&b| b));
        }
    }
    out
}

/// White 4-connected blobs of the eroded mask that look like quadrilaterals,
/// grown back by the eroded pixel.
fn find_quads(binary: &[bool], w: usize, h: usize, cfg: &DetectorConfig) -> Vec<Quad> {
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut pixels: Vec<usize> = Vec::new();
    let mut quads = Vec::new();
    let max_area = w * h / 8;
    for start in 0..w * h {
        if !binary[start] || seen[start] {
            continue;
        }
        pixels.clear();
        seen[start] = true;
        stack.push(start);
        let mut touches_border = false;
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                touches_border = true;
            }
            let mut visit = |j: usize| {
                if binary[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if touches_border || pixels.len() < cfg.min_quad_area_px || pixels.len() > max_area {
            continue;
        }
        let mut boundary = Vec::new();
        for &i in &pixels {
            let (x, y) = (i % w, i / w);
            let outside = |j: usize| !binary[j];
            if outside(i - 1) || outside(i + 1) || outside(i - w) || outside(i + w) {
                let (fx, fy) = (x as f64, y as f64);
                boundary.extend_from_slice(&[
                    Point2::new(fx, fy),
                    Point2::new(fx + 1.0, fy),
                    Point2::new(fx + 1.0, fy + 1.0),
                    Point2::new(fx, fy + 1.0),
                ]);
            }
        }
        if let Some(mut q) = fit_quad(boundary, pixels.len()) {
            let grow = (q.side + 2.0) / q.side;
            q.corners = q.corners.map(|c| q.center + (c - q.center) * grow);
            q.side += 2.0;
            quads.push(q);
        }
    }
    quads
}

/// For each quad, `(corner index, neighbour)` pairs: the neighbour's corner
/// nearest to that corner lies within `tolerance × side`.
fn link_quads(quads: &[Quad], tolerance: f64) -> Vec<Vec<(usize, usize)>> {
    let mut best: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    for a in 0..quads.len() {
        for b in a + 1..quads.len() {
            let (qa, qb) = (&quads[a], &quads[b]);
            if (qa.center - qb.center).norm() > 2.5 * qa.side.max(qb.side) {
                continue;
            }
            let tol = tolerance * qa.side.min(qb.side);
            for ka in 0..4 {
                for kb in 0..4 {
                    let d = (qa.corners[ka] - qb.corners[kb]).norm();
                    if d > tol {
                        continue;
                    }
                    for (key, other) in [((a, ka), b), ((b, kb), a)] {
                        let e = best.entry(key).or_insert((f64::MAX, other));
                        if d < e.0 {
                            *e = (d, other);
                        }
                    }
                }
            }
        }
    }
    let mut links: Vec<Vec<(usize, usize)>> = vec![Vec::new(); quads.len()];
    for ((a, ka), (_, b)) in best {
        links[a].push((ka, b));
    }
    for l in &mut links {
        l.sort_unstable();
    }
    links
}

/// Quad placed on the integer checker grid; `corner_grid[k]` is the grid
/// coordinate of `corners[k]`.
struct GridQuad {
    quad: usize,
    cell: (i32, i32),
    corner_grid: [(i32, i32); 4],
}

/// Sign pattern of each corner in the (e1, e2) basis; `None` if the corners
/// do not occupy all four quadrants.
fn corner_signs(q: &Quad, e1: &Vector2<f64>, e2: &Vector2<f64>) -> Option<[(i32, i32); 4]> {
    let m = Matrix2::from_columns(&[*e1, *e2]).try_inverse()?;
    let mut out = [(0, 0); 4];
    for (k, c) in q.corners.iter().enumerate() {
        let ab = m * (c - q.center);
        out[k] = (if ab.x >= 0.0 { 1 } else { 0 }, if ab.y >= 0.0 { 1 } else { 0 });
    }
    let mut seen = [false; 4];
    for (sx, sy) in out {
        seen[(sx * 2 + sy) as usize] = true;
    }
    seen.iter().all(|&s| s).then_some(out)
}

/// Basis of `q` aligned with the parent basis.
fn aligned_basis(q: &Quad, e1: &Vector2<f64>, e2: &Vector2<f64>) -> (Vector2<f64>, Vector2<f64>) {
    let c = &q.corners;
    let pair_a = (c[1] - c[0]) + (c[2] - c[3]);
    let pair_b = (c[2] - c[1]) + (c[3] - c[0]);
    let align = |v: Vector2<f64>, to: &Vector2<f64>| if v.dot(to) >= 0.0 { v } else { -v };
    let cos = |v: &Vector2<f64>, to: &Vector2<f64>| (v.dot(to) / (v.norm() * to.norm())).abs();
    if cos(&pair_a, e1) + cos(&pair_b, e2) >= cos(&pair_b, e1) + cos(&pair_a, e2) {
        (align(pair_a, e1), align(pair_b, e2))
    } else {
        (align(pair_b, e1), align(pair_a, e2))
    }
}

/// Breadth-first grid assignment over one linked component.
fn assign_grid(quads: &[Quad], links: &[Vec<(usize, usize)>], root: usize, visited: &mut [bool]) -> Option<Vec<GridQuad>> {
    let rq = &quads[root];
    let e1 = rq.corners[1] - rq.corners[0];
    let e2 = rq.corners[3] - rq.corners[0];
    let mut out = Vec::new();
    let mut pos: HashMap<usize, (i32, i32)> = HashMap::new();
    let mut consistent = true;
    let mut queue = VecDeque::from([(root, (0i32, 0i32), e1, e2)]);
    pos.insert(root, (0, 0));
    visited[root] = true;
    while let Some((qi, cell, e1, e2)) = queue.pop_front() {
        let q = &quads[qi];
        let (b1, b2) = if qi == root { (e1, e2) } else { aligned_basis(q, &e1, &e2) };
        let Some(signs) = corner_signs(q, &b1, &b2) else { continue };
        out.push(GridQuad {
            quad: qi,
            cell,
            corner_grid: signs.map(|(sx, sy)| (cell.0 + sx, cell.1 + sy)),
        });
        for &(k, other) in &links[qi] {
            let (sx, sy) = signs[k];
            let next = (cell.0 + 2 * sx - 1, cell.1 + 2 * sy - 1);
            match pos.get(&other) {
                Some(&p) if p != next => consistent = false,
                Some(_) => {}
                None => {
                    pos.insert(other, next);
                    visited[other] = true;
                    queue.push_back((other, next, b1, b2));
                }
            }
        }
    }
    consistent.then_some(out)
}

/// Rotation of grid coordinates by `rot` quarter turns.
fn rotate(rot: u8, x: f64, y: f64) -> (f64, f64) {
    match rot & 3 {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    }
}

#[derive(Debug, Clone)]
struct BlockMatch {
    block: usize,
    rate: f64,
    /// Marker mm → image.
    homography: Matrix3<f64>,
}

/// Tries every block, rotation and offset; returns the best template match.
fn decode(
    grid: &[GridQuad],
    quads: &[Quad],
    spec: &MarkerSpec,
    gray: &Gray,
    mean: &[f32],
    cfg: &DetectorConfig,
) -> Option<BlockMatch> {
    let mut candidates: Vec<BlockMatch> = Vec::new();
    for (b, blk) in spec.blocks.iter().enumerate() {
        let n = blk.n() as i32;
        for rot in 0..4u8 {
            let anchor = &grid[0];
            let (ax, ay) = rotate(rot, anchor.cell.0 as f64 + 0.5, anchor.cell.1 as f64 + 0.5);
            for r in 0..n {
                for c in 0..n {
                    if !blk.bits[r as usize][c as usize] {
                        continue;
                    }
                    let off = (c as f64 + 0.5 - ax, r as f64 + 0.5 - ay);
                    let to_block = |x: f64, y: f64| {
                        let (u, v) = rotate(rot, x, y);
                        (u + off.0, v + off.1)
                    };
                    let misses = grid
                        .iter()
                        .filter(|g| {
                            let (u, v) = to_block(g.cell.0 as f64 + 0.5, g.cell.1 as f64 + 0.5);
                            let (cc, rr) = (u.floor() as i32, v.floor() as i32);
                            !(cc >= 0 && rr >= 0 && cc < n && rr < n && blk.bits[rr as usize][cc as usize])
                        })
                        .count();
                    if misses * 10 > grid.len() {
                        continue;
                    }
                    let mut src = Vec::with_capacity(grid.len() * 4);
                    let mut dst = Vec::with_capacity(grid.len() * 4);
                    for g in grid {
                        for k in 0..4 {
                            let (u, v) = to_block(g.corner_grid[k].0 as f64, g.corner_grid[k].1 as f64);
                            src.push(blk.grid_point(u, v));
                            dst.push(quads[g.quad].corners[k]);
                        }
                    }
                    let Some(h) = fit_homography(&src, &dst) else { continue };
                    if let Some(rate) = template_agreement(spec, blk, &h, gray, mean, cfg) {
                        candidates.push(BlockMatch { block: b, rate, homography: h });
                    }
                }
            }
        }
    }
    candidates.sort_by(|a, b| b.rate.total_cmp(&a.rate));
    let best = candidates.first()?;
    let runner_up = candidates.get(1).map_or(0.0, |c| c.rate);
    (best.rate >= cfg.min_match_rate && best.rate - runner_up >= 0.05).then(|| best.clone())
}

/// Fraction of the block's cells and surrounding ring whose thresholded
/// colour matches the print.
fn template_agreement(
    spec: &MarkerSpec,
    blk: &PatternBlock,
    h: &Matrix3<f64>,
    gray: &Gray,
    mean: &[f32],
    cfg: &DetectorConfig,
) -> Option<f64> {
    let n = blk.n() as i32;
    let (mut sampled, mut agree) = (0usize, 0usize);
    for r in -1..=n {
        for c in -1..=n {
            let p = blk.grid_point(c as f64 + 0.5, r as f64 + 0.5);
            let Some(expected) = spec.is_white(&p) else { continue };
            let Some(img) = apply_homography(h, &p) else { continue };
            let Some(v) = gray.sample(&img) else { continue };
            let (x, y) = (img.x as usize, img.y as usize);
            let white = v > mean[y * gray.w + x] + cfg.threshold_offset;
            sampled += 1;
            agree += usize::from(white == expected);
        }
    }
    (sampled >= 12).then(|| agree as f64 / sampled as f64)
}

/// Gradient-orthogonality corner refinement: the corner is the point that
/// every image gradient in the window points away from (least squares).
fn refine_corner(gray: &Gray, start: Point2<f64>, half: i32, iterations: usize) -> Option<Point2<f64>> {
    let mut p = start;
    for _ in 0..iterations {
        let (cx, cy) = ((p.x - 0.5).round() as i32, (p.y - 0.5).round() as i32);
        if cx - half < 1 || cy - half < 1 || cx + half + 1 >= gray.w as i32 || cy + half + 1 >= gray.h as i32 {
            return None;
        }
        let mut a = Matrix2::zeros();
        let mut b = Vector2::zeros();
        let sigma2 = (half as f64 * 0.7).powi(2);
        for y in cy - half..=cy + half {
            for x in cx - half..=cx + half {
                let (xu, yu) = (x as usize, y as usize);
                let gx = 0.5 * (gray.at(xu + 1, yu) - gray.at(xu - 1, yu)) as f64;
                let gy = 0.5 * (gray.at(xu, yu + 1) - gray.at(xu, yu - 1)) as f64;
                let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let d2 = (q - p.coords).norm_squared();
                let wgt = (-d2 / (2.0 * sigma2)).exp();
                let g = Vector2::new(gx, gy);
                let ggt = g * g.transpose() * wgt;
                a += ggt;
                b += ggt * q;
            }
        }
        if a.determinant() < 1e-6 * a.norm_squared() {
            return None;
        }
        let next = Point2::from(a.try_inverse()? * b);
        let step = (next - p).norm();
        p = next;
        if step < 0.005 {
            break;
        }
    }
    ((p - start).norm() <= half as f64).then_some(p)
}

/// Detects marker features in a frame. Features of a block are reported only
/// when the block is decoded and the feature passes the contrast test.
pub fn detect_features(
    frame: &ColorImage,
    spec: &MarkerSpec,
    k: &CameraIntrinsics,
    cfg: &DetectorConfig,
) -> Vec<Correspondence> {
    if frame.width != k.width || frame.height != k.height || frame.width < 8 || frame.height < 8 {
        return Vec::new();
    }
    let gray = Gray::from_color(frame);
    let mean = local_mean(&gray, cfg.threshold_window_px);
    let binary: Vec<bool> = gray.v.iter().zip(&mean).map(|(&v, &m)| v > m + cfg.threshold_offset).collect();
    let quads = find_quads(&erode(&binary, gray.w, gray.h), gray.w, gray.h, cfg);
    let links = link_quads(&quads, cfg.link_tolerance);

    let mut visited = vec![false; quads.len()];
    let mut matches: Vec<BlockMatch> = Vec::new();
    for root in 0..quads.len() {
        if visited[root] || links[root].is_empty() {
            continue;
        }
        let Some(grid) = assign_grid(&quads, &links, root, &mut visited) else { continue };
        if grid.len() < cfg.min_component_quads {
            continue;
        }
        if let Some(m) = decode(&grid, &quads, spec, &gray, &mean, cfg) {
            matches.push(m);
        }
    }
    // One match per block: keep the strongest.
    matches.sort_by(|a, b| b.rate.total_cmp(&a.rate));
    let mut seen_block = vec![false; spec.blocks.len()];
    let mut out = Vec::new();
    for m in matches {
        if std::mem::replace(&mut seen_block[m.block], true) {
            continue;
        }
        let blk = &spec.blocks[m.block];
        // Quad corners extrapolate poorly to the far side of a partly hidden
        // block; refit the homography on a loose first pass, then locate
        // every feature strictly against the refit.
        let loose: Vec<(Point2<f64>, Point2<f64>)> = spec
            .block_features(m.block)
            .filter_map(|f| locate_feature(spec, blk, &m.homography, &f.point, &gray, cfg, LOOSE_SHIFT).map(|c| (f.point, c)))
            .collect();
        let h = refit_homography(&loose).unwrap_or(m.homography);
        for f in spec.block_features(m.block) {
            if let Some(c) = locate_feature(spec, blk, &h, &f.point, &gray, cfg, STRICT_SHIFT) {
                out.push(Correspondence { feature_id: f.id, image_point: c, marker_point: f.point });
            }
        }
    }
    out.sort_by_key(|c| c.feature_id);
    out
}

/// Largest corner pull accepted, as (fraction of a cell, floor in px).
const LOOSE_SHIFT: (f64, f64) = (0.35, 3.0);
const STRICT_SHIFT: (f64, f64) = (0.05, 1.0);

/// Homography through the loosely located features, refit once without
/// those more than 2 px off the first fit.
fn refit_homography(pairs: &[(Point2<f64>, Point2<f64>)]) -> Option<Matrix3<f64>> {
    if pairs.len() < 8 {
        return None;
    }
    let (src, dst): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
    let h = fit_homography(&src, &dst)?;
    let (src, dst): (Vec<_>, Vec<_>) = pairs
        .iter()
        .filter(|(m, i)| apply_homography(&h, m).is_some_and(|p| (p - i).norm() <= 2.0))
        .copied()
        .unzip();
    if src.len() < 8 {
        return Some(h);
    }
    fit_homography(&src, &dst)
}

fn locate_feature(
    spec: &MarkerSpec,
    blk: &PatternBlock,
    h: &Matrix3<f64>,
    point: &Point2<f64>,
    gray: &Gray,
    cfg: &DetectorConfig,
    max_shift: (f64, f64),
) -> Option<Point2<f64>> {
    let predicted = apply_homography(h, point)?;
    let step = apply_homography(h, &(point + Vector2::new(blk.cell_mm, 0.0)))?;
    let step2 = apply_homography(h, &(point + Vector2::new(0.0, blk.cell_mm)))?;
    let cell_px = (step - predicted).norm().min((step2 - predicted).norm());
    if cell_px < 5.0 {
        return None;
    }
    let half = ((0.3 * cell_px).round() as i32).clamp(2, 6);
    let refined = refine_corner(gray, predicted, half, cfg.refine_iterations)?;
    let shift = refined - predicted;
    // A long pull means the window latched onto some other edge, typically
    // an occluder's.
    if shift.norm() > (max_shift.0 * cell_px).max(max_shift.1) {
        return None;
    }
    let e = 0.3 * blk.cell_mm;
    let (mut lo_white, mut hi_black) = (f32::MAX, f32::MIN);
    for (dx, dy) in [(-e, e), (e, e), (e, -e), (-e, -e)] {
        let q = point + Vector2::new(dx, dy);
        let Some(white) = spec.is_white(&q) else { continue };
        let v = gray.sample(&(apply_homography(h, &q)? + shift))?;
        if white {
            lo_white = lo_white.min(v);
        } else {
            hi_black = hi_black.max(v);
        }
    }
    (lo_white != f32::MAX && hi_black != f32::MIN && lo_white - hi_black >= cfg.min_contrast).then_some(refined)
}
