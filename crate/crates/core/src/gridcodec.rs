//! Grid labelling: boxes become per-cell coverage, corner offsets relative
//! to the cell centre, and a don't-care mask; predictions decode back into
//! scored candidate boxes.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("degenerate box {0}")]
    DegenerateBox(BBox),
    #[error("grid {grid_w}x{grid_h} at stride {stride} does not tile a {width}x{height} image")]
    BadGrid {
        stride: usize,
        grid_w: usize,
        grid_h: usize,
        width: usize,
        height: usize,
    },
}

/// Axis-aligned box in continuous pixel coordinates; pixel `i` spans
/// `[i, i + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Checked constructor enforcing `x1 < x2`, `y1 < y2` and finiteness.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GridError> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GridError::DegenerateBox(b))
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of overlap, 0 when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Half-open containment `x1 <= x < x2`, `y1 <= y < y2`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x1 <= x && x < self.x2 && self.y1 <= y && y < self.y2
    }

    /// Intersection with the `[0, w] x [0, h]` frame; `None` if nothing
    /// non-degenerate remains.
    pub fn clamp_to(&self, w: f64, h: f64) -> Option<BBox> {
        let b = BBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        };
        b.is_valid().then_some(b)
    }

    pub fn within(&self, w: f64, h: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= w && self.y2 <= h
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Cell geometry: `stride * grid_w` by `stride * grid_h` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub stride: usize,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl GridSpec {
    /// Grid for an image of the given size; dimensions must be multiples of
    /// `stride`.
    pub fn for_image(width: usize, height: usize, stride: usize) -> Result<Self, GridError> {
        if stride == 0 || width == 0 || height == 0 || width % stride != 0 || height % stride != 0
        {
            return Err(GridError::BadGrid {
                stride,
                grid_w: if stride > 0 { width / stride } else { 0 },
                grid_h: if stride > 0 { height / stride } else { 0 },
                width,
                height,
            });
        }
        Ok(Self {
            stride,
            grid_w: width / stride,
            grid_h: height / stride,
        })
    }

    pub fn cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn image_width(&self) -> usize {
        self.stride * self.grid_w
    }

    pub fn image_height(&self) -> usize {
        self.stride * self.grid_h
    }

    /// Centre of cell `(row, col)` in pixel coordinates.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    fn cell_square(&self, row: usize, col: usize) -> BBox {
        let s = self.stride as f64;
        BBox {
            x1: col as f64 * s,
            y1: row as f64 * s,
            x2: (col + 1) as f64 * s,
            y2: (row + 1) as f64 * s,
        }
    }
}

/// Training target on the grid. All planes are row-major; `offsets` holds
/// four values per cell: `(x1, y1, x2, y2)` minus the cell centre.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub spec: GridSpec,
    pub coverage: Vec<f64>,
    pub offsets: Vec<[f64; 4]>,
    pub dontcare: Vec<bool>,
}

impl LabelGrid {
    pub fn covered_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.coverage.len()).filter(|i| !self.dontcare[*i])
    }

    /// One line per cell: `i j coverage dc x1off y1off x2off y2off`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for i in 0..self.spec.grid_h {
            for j in 0..self.spec.grid_w {
                let k = i * self.spec.grid_w + j;
                let o = self.offsets[k];
                out.push_str(&format!(
                    "{i} {j} {} {} {} {} {} {}\n",
                    self.coverage[k],
                    u8::from(self.dontcare[k]),
                    o[0],
                    o[1],
                    o[2],
                    o[3]
                ));
            }
        }
        out
    }
}

/// A decoded box with the coverage of the cell that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub bbox: BBox,
    pub score: f64,
}

/// Labels each cell whose centre falls inside a box. Competing boxes are
/// resolved by the larger overlap with the cell square, then list order.
pub fn encode(boxes: &[BBox], grid: GridSpec) -> Result<LabelGrid, GridError> {
    if let Some(bad) = boxes.iter().find(|b| !b.is_valid()) {
        return Err(GridError::DegenerateBox(*bad));
    }
    let n = grid.cells();
    let mut label = LabelGrid {
        spec: grid,
        coverage: vec![0.0; n],
        offsets: vec![[0.0; 4]; n],
        dontcare: vec![true; n],
    };
    for row in 0..grid.grid_h {
        for col in 0..grid.grid_w {
            let (cx, cy) = grid.center(row, col);
            let square = grid.cell_square(row, col);
            let mut best: Option<(f64, &BBox)> = None;
            for b in boxes.iter().filter(|b| b.contains(cx, cy)) {
                let area = b.intersection_area(&square);
                if best.is_none_or(|(a, _)| area > a) {
                    best = Some((area, b));
                }
            }
            if let Some((_, b)) = best {
                let k = row * grid.grid_w + col;
                label.coverage[k] = 1.0;
                label.dontcare[k] = false;
                label.offsets[k] = [b.x1 - cx, b.y1 - cy, b.x2 - cx, b.y2 - cy];
            }
        }
    }
    Ok(label)
}

/// Emits a candidate for every cell with `coverage >= threshold`, row-major.
/// Boxes are clamped to the frame; cells whose box collapses are skipped.
pub fn decode(
    coverage: &[f64],
    offsets: &[[f64; 4]],
    grid: GridSpec,
    threshold: f64,
) -> Vec<Candidate> {
    assert_eq!(coverage.len(), grid.cells(), "coverage map does not match grid");
    assert_eq!(offsets.len(), grid.cells(), "offset map does not match grid");
    let (w, h) = (grid.image_width() as f64, grid.image_height() as f64);
    let mut out = Vec::new();
    for row in 0..grid.grid_h {
        for col in 0..grid.grid_w {
            let k = row * grid.grid_w + col;
            if !(coverage[k] >= threshold) {
                continue;
            }
            let (cx, cy) = grid.center(row, col);
            let o = offsets[k];
            let raw = BBox {
                x1: cx + o[0],
                y1: cy + o[1],
                x2: cx + o[2],
                y2: cy + o[3],
            };
            if let Some(bbox) = raw.clamp_to(w, h) {
                out.push(Candidate {
                    bbox,
                    score: coverage[k],
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid4() -> GridSpec {
        GridSpec::for_image(64, 64, 16).unwrap()
    }

    #[test]
    fn empty_box_list_is_all_dontcare() {
        let g = encode(&[], grid4()).unwrap();
        assert!(g.coverage.iter().all(|c| *c == 0.0));
        assert!(g.dontcare.iter().all(|d| *d));
    }

    #[test]
    fn hand_enumerated_cells() {
        let b = BBox::new(10.0, 10.0, 40.0, 60.0).unwrap();
        let g = encode(&[b], grid4()).unwrap();
        let covered: Vec<(f64, f64)> = g
            .covered_cells()
            .map(|k| grid4().center(k / 4, k % 4))
            .collect();
        assert_eq!(covered, vec![(24.0, 24.0), (24.0, 40.0), (24.0, 56.0)]);
        assert_eq!(g.offsets[5], [-14.0, -14.0, 16.0, 36.0]);
    }

    #[test]
    fn overlap_tie_break_prefers_larger_intersection() {
        // Cell (0,0) spans [0,16)^2 with centre (8,8); both boxes contain it.
        let a = BBox::new(0.0, 0.0, 10.0, 12.0).unwrap();
        let b = BBox::new(3.5, 0.0, 16.0, 16.0).unwrap();
        assert_eq!(a.intersection_area(&grid4().cell_square(0, 0)), 120.0);
        assert_eq!(b.intersection_area(&grid4().cell_square(0, 0)), 200.0);
        let g = encode(&[a, b], grid4()).unwrap();
        assert_eq!(g.offsets[0], [3.5 - 8.0, -8.0, 8.0, 8.0]);
        // Equal overlap: earlier box wins.
        let g = encode(&[b, b], grid4()).unwrap();
        assert_eq!(g.offsets[0], [3.5 - 8.0, -8.0, 8.0, 8.0]);
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        let bad = BBox {
            x1: 5.0,
            y1: 5.0,
            x2: 5.0,
            y2: 9.0,
        };
        assert!(matches!(encode(&[bad], grid4()), Err(GridError::DegenerateBox(_))));
        assert!(BBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn decode_examples() {
        let g = grid4();
        assert!(decode(&[0.1; 16], &[[0.0; 4]; 16], g, 0.5).is_empty());
        let mut cov = vec![0.0; 16];
        let mut off = vec![[0.0; 4]; 16];
        cov[5] = 0.9;
        off[5] = [-14.0, -14.0, 16.0, 36.0];
        let c = decode(&cov, &off, g, 0.6);
        assert_eq!(
            c,
            vec![Candidate {
                bbox: BBox::new(10.0, 10.0, 40.0, 60.0).unwrap(),
                score: 0.9
            }]
        );
    }

    #[test]
    fn decode_clamps_and_skips_collapsed_boxes() {
        let g = grid4();
        let mut cov = vec![0.0; 16];
        let mut off = vec![[0.0; 4]; 16];
        cov[0] = 1.0;
        off[0] = [-20.0, -20.0, 4.0, 4.0];
        cov[1] = 1.0;
        off[1] = [-40.0, -4.0, -30.0, 4.0];
        let c = decode(&cov, &off, g, 0.5);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].bbox, BBox::new(0.0, 0.0, 12.0, 12.0).unwrap());
    }

    #[test]
    fn decode_inverts_encode() {
        let b = BBox::new(10.0, 10.0, 40.0, 60.0).unwrap();
        let g = encode(&[b], grid4()).unwrap();
        let c = decode(&g.coverage, &g.offsets, grid4(), 0.5);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|c| c.bbox == b && c.score == 1.0));
    }

    #[test]
    fn grid_must_tile_image() {
        assert!(GridSpec::for_image(60, 64, 16).is_err());
        assert!(GridSpec::for_image(64, 64, 0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..60, 0u32..60, 1u32..40, 1u32..40).prop_map(|(x, y, w, h)| BBox {
            x1: x as f64,
            y1: y as f64,
            x2: (x + w).min(64) as f64,
            y2: (y + h).min(64) as f64,
        })
    }

    proptest! {
        #[test]
        fn encode_respects_label_invariants(boxes in proptest::collection::vec(arb_box(), 0..6)) {
            let g = encode(&boxes, grid4()).unwrap();
            for k in 0..16 {
                prop_assert_eq!(g.dontcare[k], g.coverage[k] == 0.0);
                if !g.dontcare[k] {
                    let (cx, cy) = grid4().center(k / 4, k % 4);
                    let o = g.offsets[k];
                    prop_assert!(BBox::new(cx + o[0], cy + o[1], cx + o[2], cy + o[3]).is_ok());
                }
            }
        }

        #[test]
        fn enlarging_a_box_never_loses_cells(b in arb_box(), grow in 0u32..20) {
            let g = grow as f64;
            let big = BBox { x1: (b.x1 - g).max(0.0), y1: (b.y1 - g).max(0.0), x2: b.x2 + g, y2: b.y2 + g };
            let count = |bb: BBox| encode(&[bb], grid4()).unwrap().covered_cells().count();
            prop_assert!(count(big) >= count(b));
        }
    }
}
