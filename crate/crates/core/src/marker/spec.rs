use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::MarkerError;
use crate::image::ColorImage;

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

/// Square bit grid placed on the marker plane. `origin_mm` is the block's
/// top-left corner (minimum x, maximum y); row 0 is the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternBlock {
    pub origin_mm: Point2<f64>,
    pub cell_mm: f64,
    /// `bits[row][col]`, `true` = white.
    pub bits: Vec<Vec<bool>>,
}

impl PatternBlock {
    pub fn n(&self) -> usize {
        self.bits.len()
    }

    pub fn side_mm(&self) -> f64 {
        self.cell_mm * self.n() as f64
    }

    /// Marker-plane position of grid corner (col `i`, row `j`), `0..=n`.
    pub fn grid_point(&self, i: f64, j: f64) -> Point2<f64> {
        Point2::new(self.origin_mm.x + i * self.cell_mm, self.origin_mm.y - j * self.cell_mm)
    }

    /// Cell (row, col) containing the marker-plane point, if inside.
    pub fn cell_at(&self, p: &Point2<f64>) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin_mm.x) / self.cell_mm).floor();
        let r = ((self.origin_mm.y - p.y) / self.cell_mm).floor();
        let n = self.n() as f64;
        (c >= 0.0 && r >= 0.0 && c < n && r < n).then_some((r as usize, c as usize))
    }

    fn overlaps(&self, other: &PatternBlock) -> bool {
        let (a0, a1) = (self.origin_mm, self.grid_point(self.n() as f64, self.n() as f64));
        let (b0, b1) = (other.origin_mm, other.grid_point(other.n() as f64, other.n() as f64));
        a0.x < b1.x && b0.x < a1.x && a1.y < b0.y && b1.y < a0.y
    }
}

/// Corner-like marker feature on the `z = 0` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerFeature {
    pub id: u32,
    pub block: usize,
    pub point: Point2<f64>,
}

/// Composite two-block fiducial, centred on the origin, black outside the
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSpec {
    pub width_mm: f64,
    pub height_mm: f64,
    pub blocks: Vec<PatternBlock>,
    features: Vec<MarkerFeature>,
}

/// 6×6 checker with white corner cells, plus two cells inverted to make the
/// block identity and orientation unambiguous.
fn block_bits(flips: [(usize, usize); 2]) -> Vec<Vec<bool>> {
    let mut bits: Vec<Vec<bool>> = (0..6).map(|r| (0..6).map(|c| (r + c) % 2 == 0).collect()).collect();
    bits[0][5] = true;
    bits[5][0] = true;
    for (r, c) in flips {
        bits[r][c] = !bits[r][c];
    }
    bits
}

impl Default for MarkerSpec {
    /// 200 × 150 mm, two 6×6 blocks of 12 mm cells on a diagonal, each a
    /// cell away from the print edge.
    fn default() -> Self {
        let cell = 12.0;
        let blocks = vec![
            PatternBlock {
                origin_mm: Point2::new(-88.0, 63.0),
                cell_mm: cell,
                bits: block_bits([(1, 1), (3, 3)]),
            },
            PatternBlock {
                origin_mm: Point2::new(16.0, 9.0),
                cell_mm: cell,
                bits: block_bits([(1, 3), (3, 1)]),
            },
        ];
        Self::new(200.0, 150.0, blocks).expect("default marker is valid")
    }
}

impl MarkerSpec {
    pub fn new(width_mm: f64, height_mm: f64, blocks: Vec<PatternBlock>) -> Result<Self, MarkerError> {
        let bad = |m: String| Err(MarkerError::Spec(m));
        if !(width_mm > 0.0 && height_mm > 0.0 && width_mm.is_finite() && height_mm.is_finite()) {
            return bad(format!("marker size must be positive, got {width_mm} x {height_mm}"));
        }
        if blocks.len() != 2 {
            return bad(format!("exactly 2 blocks required, got {}", blocks.len()));
        }
        for (b, blk) in blocks.iter().enumerate() {
            let n = blk.n();
            if n < 3 || blk.bits.iter().any(|row| row.len() != n) {
                return bad(format!("block {b} must be an n×n grid with n >= 3"));
            }
            if !(blk.cell_mm > 0.0 && blk.cell_mm.is_finite()) {
                return bad(format!("block {b} cell size must be positive"));
            }
            let far = blk.grid_point(n as f64, n as f64);
            let inside = |p: &Point2<f64>| p.x.abs() <= width_mm / 2.0 && p.y.abs() <= height_mm / 2.0;
            if !inside(&blk.origin_mm) || !inside(&far) {
                return bad(format!("block {b} extends beyond the marker"));
            }
        }
        if blocks[0].overlaps(&blocks[1]) {
            return bad("blocks overlap".into());
        }
        let features = blocks
            .iter()
            .enumerate()
            .scan(0u32, |next_id, (b, blk)| {
                let n = blk.n() as f64;
                let outer = [(0.0, 0.0), (n, 0.0), (n, n), (0.0, n)];
                let inner = (1..blk.n()).flat_map(|j| (1..blk.n()).map(move |i| (i as f64, j as f64)));
                let pts: Vec<MarkerFeature> = outer
                    .into_iter()
                    .chain(inner)
                    .enumerate()
                    .map(|(k, (i, j))| MarkerFeature { id: *next_id + k as u32, block: b, point: blk.grid_point(i, j) })
                    .collect();
                *next_id += pts.len() as u32;
                Some(pts)
            })
            .flatten()
            .collect();
        Ok(Self { width_mm, height_mm, blocks, features })
    }

    /// Outer corners (TL, TR, BR, BL) then interior junctions row-major,
    /// block 0 first.
    pub fn features(&self) -> &[MarkerFeature] {
        &self.features
    }

    pub fn feature(&self, id: u32) -> Option<&MarkerFeature> {
        self.features.get(id as usize)
    }

    pub fn block_features(&self, block: usize) -> impl Iterator<Item = &MarkerFeature> {
        self.features.iter().filter(move |f| f.block == block)
    }

    /// Uniformly scaled copy (for claimed-size calibration and size sweeps).
    pub fn scaled(&self, factor: f64) -> Result<Self, MarkerError> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| PatternBlock {
                origin_mm: b.origin_mm * factor,
                cell_mm: b.cell_mm * factor,
                bits: b.bits.clone(),
            })
            .collect();
        Self::new(self.width_mm * factor, self.height_mm * factor, blocks)
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x.abs() <= self.width_mm / 2.0 && p.y.abs() <= self.height_mm / 2.0
    }

    /// Colour of the printed marker at a marker-plane point; `None` outside
    /// the marker.
    pub fn is_white(&self, p: &Point2<f64>) -> Option<bool> {
        if !self.contains(p) {
            return None;
        }
        Some(
            self.blocks
                .iter()
                .find_map(|b| b.cell_at(p).map(|(r, c)| b.bits[r][c]))
                .unwrap_or(false),
        )
    }
}

/// Printable raster at `px_per_mm`.
pub fn render_marker_image(spec: &MarkerSpec, px_per_mm: f64) -> Result<ColorImage, MarkerError> {
    if !(px_per_mm > 0.0 && px_per_mm.is_finite()) {
        return Err(MarkerError::Resolution(format!("px_per_mm must be positive, got {px_per_mm}")));
    }
    let w = (spec.width_mm * px_per_mm).ceil();
    let h = (spec.height_mm * px_per_mm).ceil();
    if w < 1.0 || h < 1.0 || w * h > 1e9 {
        return Err(MarkerError::Resolution(format!("output would be {w} x {h} px")));
    }
    let mut img = ColorImage::new(w as u32, h as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = Point2::new(
                -spec.width_mm / 2.0 + (x as f64 + 0.5) / px_per_mm,
                spec.height_mm / 2.0 - (y as f64 + 0.5) / px_per_mm,
            );
            let white = spec.is_white(&p).unwrap_or(false);
            img.put(x, y, if white { WHITE } else { BLACK });
        }
    }
    Ok(img)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkerDoc {
    width_mm: f64,
    height_mm: f64,
    blocks: Vec<BlockDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    origin_mm: [f64; 2],
    cell_mm: f64,
    /// Rows top to bottom, `1` = white.
    bits: Vec<String>,
}

impl Serialize for MarkerSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MarkerDoc {
            width_mm: self.width_mm,
            height_mm: self.height_mm,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDoc {
                    origin_mm: [b.origin_mm.x, b.origin_mm.y],
                    cell_mm: b.cell_mm,
                    bits: b.bits.iter().map(|row| row.iter().map(|&w| if w { '1' } else { '0' }).collect()).collect(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MarkerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = MarkerDoc::deserialize(d)?;
        let blocks = doc
            .blocks
            .into_iter()
            .map(|b| {
                let bits = b
                    .bits
                    .iter()
                    .map(|row| {
                        row.chars()
                            .map(|ch| match ch {
                                '1' => Ok(true),
                                '0' => Ok(false),
                                other => Err(D::Error::custom(format!("bad bit `{other}`"))),
                            })
                            .collect()
                    })
                    .collect::<Result<_, _>>()?;
                Ok(PatternBlock { origin_mm: Point2::from(b.origin_mm), cell_mm: b.cell_mm, bits })
            })
            .collect::<Result<Vec<_>, D::Error>>()?;
        MarkerSpec::new(doc.width_mm, doc.height_mm, blocks).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let m = MarkerSpec::default();
        assert_eq!(m.features().len(), 58);
        assert_eq!(m.block_features(1).count(), 29);
        assert!(m.features().iter().all(|f| m.contains(&f.point)));
        assert_eq!(m.feature(29).unwrap().block, 1);
        assert_eq!(m.feature(0).unwrap().point, m.blocks[0].origin_mm);
    }

    #[test]
    fn rejects_invalid_layouts() {
        let m = MarkerSpec::default();
        let mut overlapping = m.blocks.clone();
        overlapping[1].origin_mm = overlapping[0].origin_mm + nalgebra::Vector2::new(10.0, -10.0);
        assert!(MarkerSpec::new(200.0, 150.0, overlapping).is_err());
        assert!(MarkerSpec::new(200.0, 150.0, m.blocks[..1].to_vec()).is_err());
        assert!(MarkerSpec::new(100.0, 150.0, m.blocks.clone()).is_err());
    }

    #[test]
    fn image_size_and_black_fill() {
        let m = MarkerSpec::default();
        let img = render_marker_image(&m, 0.75).unwrap();
        assert_eq!((img.width, img.height), (150, 113));
        assert_eq!(img.get(0, 0), BLACK);
        assert!(render_marker_image(&m, 0.0).is_err());
        assert!(render_marker_image(&m, f64::NAN).is_err());
        let tiny = render_marker_image(&m, 1e-4).unwrap();
        assert_eq!((tiny.width, tiny.height), (1, 1));
    }

    #[test]
    fn all_black_blocks_render_black() {
        let m = MarkerSpec::default();
        let blocks = m
            .blocks
            .iter()
            .map(|b| PatternBlock { bits: vec![vec![false; 6]; 6], ..b.clone() })
            .collect();
        let black = MarkerSpec::new(200.0, 150.0, blocks).unwrap();
        let img = render_marker_image(&black, 1.0).unwrap();
        assert!(img.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn junctions_sampled_from_pixels() {
        // At 4 px/mm every junction sits on a pixel boundary; the four
        // pixels touching it must reproduce the bits of the four cells.
        let m = MarkerSpec::default();
        let ppm = 4.0;
        let img = render_marker_image(&m, ppm).unwrap();
        for blk in &m.blocks {
            for j in 1..6 {
                for i in 1..6 {
                    let p = blk.grid_point(i as f64, j as f64);
                    let x = ((p.x + m.width_mm / 2.0) * ppm).round() as u32;
                    let y = ((m.height_mm / 2.0 - p.y) * ppm).round() as u32;
                    let px = |dx: u32, dy: u32| img.get(x + dx - 1, y + dy - 1) == WHITE;
                    assert_eq!(px(0, 0), blk.bits[j - 1][i - 1]);
                    assert_eq!(px(1, 0), blk.bits[j - 1][i]);
                    assert_eq!(px(0, 1), blk.bits[j][i - 1]);
                    assert_eq!(px(1, 1), blk.bits[j][i]);
                }
            }
        }
    }

    #[test]
    fn every_feature_is_a_corner() {
        // Each feature must see both colours among its four neighbouring
        // cells, and not as a straight edge (two-and-two side by side).
        let m = MarkerSpec::default();
        let e = 0.25 * m.blocks[0].cell_mm;
        for f in m.features() {
            let q = |dx: f64, dy: f64| m.is_white(&(f.point + nalgebra::Vector2::new(dx, dy))).unwrap();
            let (tl, tr, bl, br) = (q(-e, e), q(e, e), q(-e, -e), q(e, -e));
            let whites = [tl, tr, bl, br].iter().filter(|&&w| w).count();
            assert!(whites > 0 && whites < 4, "feature {} is flat", f.id);
            if whites == 2 {
                assert!(tl == br, "feature {} is an edge", f.id);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let m = MarkerSpec::default();
        let s = serde_json::to_string(&m).unwrap();
        let back: MarkerSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<MarkerSpec>(&s.replace("\"1", "\"2")).is_err());
    }

    #[test]
    fn scaling() {
        let m = MarkerSpec::default().scaled(0.5).unwrap();
        assert_eq!(m.width_mm, 100.0);
        assert_eq!(m.blocks[1].cell_mm, 6.0);
    }
}
