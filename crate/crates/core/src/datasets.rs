//! Annotation parsers (Penn-Fudan text files and IDL lists), split manifests,
//! and a seeded generator of synthetic pedestrian-like scenes.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::gridcodec::BBox;
use crate::raster::Image;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("line {line}: malformed box line: {text}")]
    MalformedBoxLine { line: usize, text: String },
    #[error("annotation has no `Image filename` line")]
    MissingFilename,
    #[error("line {line}: malformed IDL record: {text}")]
    MalformedRecord { line: usize, text: String },
    #[error("split fractions must be non-negative and sum to 1, got {0}")]
    BadFractions(String),
    #[error("bad synthetic config: {0}")]
    BadConfig(String),
    #[error("manifest line {line}: {msg}")]
    BadManifest { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    PennFudan,
    Idl,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_path: String,
    pub boxes: Vec<BBox>,
    pub source: Source,
}

static PF_BOX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"^Bounding box for object (\d+) "([^"]*)" \(Xmin, Ymin\) - \(Xmax, Ymax\) : \(\s*(-?\d+)\s*,\s*(-?\d+)\s*\) - \(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*$"#,
    )
    .expect("valid regex")
});

static PF_FILENAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^Image filename\s*:\s*"([^"]+)"\s*$"#).expect("valid regex"));

/// Parses one Penn-Fudan (PASCAL v1.00 style) annotation file.
pub fn parse_pennfudan(text: &str) -> Result<Annotation, DatasetError> {
    let mut image_path = None;
    let mut boxes = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(c) = PF_FILENAME.captures(line) {
            image_path = Some(c[1].to_string());
        } else if line.starts_with("Bounding box for object") {
            let malformed = || DatasetError::MalformedBoxLine {
                line: n + 1,
                text: line.to_string(),
            };
            let c = PF_BOX.captures(line).ok_or_else(malformed)?;
            let v: Vec<f64> = (3..=6)
                .map(|i| c[i].parse::<i64>().map(|v| v as f64))
                .collect::<Result<_, _>>()
                .map_err(|_| malformed())?;
            boxes.push(BBox::new(v[0], v[1], v[2], v[3]).map_err(|_| malformed())?);
        }
    }
    Ok(Annotation {
        image_path: image_path.ok_or(DatasetError::MissingFilename)?,
        boxes,
        source: Source::PennFudan,
    })
}

/// Writes the Penn-Fudan grammar; coordinates are rounded to integers.
pub fn serialize_pennfudan(ann: &Annotation, width: usize, height: usize, channels: usize) -> String {
    let mut out = String::new();
    let labels = vec!["\"PASpersonWalking\""; ann.boxes.len()].join(" ");
    let _ = writeln!(out, "# Compatible with PASCAL Annotation Version 1.00");
    let _ = writeln!(out, "Image filename : \"{}\"", ann.image_path);
    let _ = writeln!(out, "Image size (X x Y x C) : {width} x {height} x {channels}");
    let _ = writeln!(out, "Database : \"The Penn-Fudan-Pedestrian Database\"");
    let _ = writeln!(
        out,
        "Objects with ground truth : {} {{ {} }}",
        ann.boxes.len(),
        labels
    );
    let _ = writeln!(out, "# Top left pixel co-ordinates : (0, 0)");
    for (i, b) in ann.boxes.iter().enumerate() {
        let k = i + 1;
        let _ = writeln!(out, "# Details for pedestrian {k} (\"PASpersonWalking\")");
        let _ = writeln!(
            out,
            "Original label for object {k} \"PASpersonWalking\" : \"PennFudanPed\""
        );
        let _ = writeln!(
            out,
            "Bounding box for object {k} \"PASpersonWalking\" (Xmin, Ymin) - (Xmax, Ymax) : ({}, {}) - ({}, {})",
            b.x1.round() as i64,
            b.y1.round() as i64,
            b.x2.round() as i64,
            b.y2.round() as i64
        );
    }
    out
}

static IDL_RECORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^"([^"]+)"\s*(?::\s*(.*?))?\s*[;.]\s*$"#).expect("valid regex")
});

static IDL_TUPLE: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"(-?\d+(?:\.\d+)?)";
    Regex::new(&format!(
        r"^\(\s*{num}\s*,\s*{num}\s*,\s*{num}\s*,\s*{num}\s*\)$"
    ))
    .expect("valid regex")
});

/// Parses an IDL list: one `"path": (x1, y1, x2, y2), ...;` record per line.
/// Corner order is canonicalized.
pub fn parse_idl(text: &str) -> Result<Vec<Annotation>, DatasetError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = || DatasetError::MalformedRecord {
            line: n + 1,
            text: line.to_string(),
        };
        let c = IDL_RECORD.captures(line).ok_or_else(malformed)?;
        let mut boxes = Vec::new();
        if let Some(list) = c.get(2).map(|m| m.as_str().trim()).filter(|s| !s.is_empty()) {
            for tuple in split_tuples(list).ok_or_else(malformed)? {
                let t = IDL_TUPLE.captures(tuple).ok_or_else(malformed)?;
                let v: Vec<f64> = (1..=4)
                    .map(|i| t[i].parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| malformed())?;
                let b = BBox::new(v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]), v[1].max(v[3]))
                    .map_err(|_| malformed())?;
                boxes.push(b);
            }
        }
        out.push(Annotation {
            image_path: c[1].to_string(),
            boxes,
            source: Source::Idl,
        });
    }
    Ok(out)
}

/// Splits `(..), (..)` into its parenthesized tuples.
fn split_tuples(list: &str) -> Option<Vec<&str>> {
    let mut out = Vec::new();
    let mut rest = list;
    loop {
        rest = rest.trim_start();
        if !rest.starts_with('(') {
            return None;
        }
        let end = rest.find(')')?;
        out.push(&rest[..=end]);
        rest = rest[end + 1..].trim_start();
        if rest.is_empty() {
            return Some(out);
        }
        rest = rest.strip_prefix(',')?;
    }
}

pub fn serialize_idl(anns: &[Annotation]) -> String {
    let mut out = String::new();
    for a in anns {
        if a.boxes.is_empty() {
            let _ = writeln!(out, "\"{}\";", a.image_path);
        } else {
            let tuples: Vec<String> = a
                .boxes
                .iter()
                .map(|b| format!("({}, {}, {}, {})", b.x1, b.y1, b.x2, b.y2))
                .collect();
            let _ = writeln!(out, "\"{}\": {};", a.image_path, tuples.join(", "));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One split's entries, as indices into the annotation list it was built
/// from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub split: Split,
    pub entries: Vec<usize>,
}

/// Shuffles with `seed` and partitions by `fractions` (train, val, test).
/// Each split gets `floor(n * f)`, and leftovers go to the splits with the
/// largest fractional parts (earlier split on ties).
pub fn split_manifest(
    n: usize,
    fractions: [f64; 3],
    seed: u64,
) -> Result<[Manifest; 3], DatasetError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(format!("{fractions:?}")));
    }
    let exact = fractions.map(|f| n as f64 * f);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut remainder = n.saturating_sub(sizes.iter().sum());
    let mut by_fraction = [0usize, 1, 2];
    by_fraction.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in by_fraction.iter().cycle() {
        if remainder == 0 {
            break;
        }
        if fractions[k] > 0.0 {
            sizes[k] += 1;
            remainder -= 1;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut start = 0;
    Ok(std::array::from_fn(|k| {
        let entries = order[start..start + sizes[k]].to_vec();
        start += sizes[k];
        Manifest {
            split: Split::ALL[k],
            entries,
        }
    }))
}

/// A row of a manifest file: `<image_path>\t<annotation_path>\t<split>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_path: String,
    pub annotation_path: String,
    pub split: Split,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>, DatasetError> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| DatasetError::BadManifest { line: n + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let split = fields[2].trim().parse::<Split>().map_err(bad)?;
        if !seen.insert(fields[0].to_string()) {
            return Err(bad(format!("image {} listed twice", fields[0])));
        }
        rows.push(ManifestRow {
            image_path: fields[0].to_string(),
            annotation_path: fields[1].to_string(),
            split,
        });
    }
    Ok(rows)
}

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\n", r.image_path, r.annotation_path, r.split.as_str()))
        .collect()
}

/// Synthetic scene generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCfg {
    pub image_size: usize,
    pub count: usize,
    /// Inclusive range of people per image.
    pub humans_per_image: (usize, usize),
    pub clutter_density: f64,
    pub occlusion_prob: f64,
    /// Grid stride the scenes must be labelable at.
    pub stride: usize,
    pub seed: u64,
}

impl Default for SynthCfg {
    fn default() -> Self {
        Self {
            image_size: 64,
            count: 360,
            humans_per_image: (1, 2),
            clutter_density: 0.3,
            occlusion_prob: 0.1,
            stride: 16,
            seed: 42,
        }
    }
}

impl SynthCfg {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::BadConfig(m));
        if self.stride == 0 || self.image_size % self.stride != 0 {
            return bad(format!(
                "image_size {} is not a multiple of stride {}",
                self.image_size, self.stride
            ));
        }
        if self.image_size < 3 * self.stride.max(12) {
            return bad(format!("image_size {} too small for people of stride {}", self.image_size, self.stride));
        }
        let (lo, hi) = self.humans_per_image;
        if lo == 0 || lo > hi {
            return bad(format!("humans_per_image range {lo}..={hi}"));
        }
        for (name, v) in [("clutter_density", self.clutter_density), ("occlusion_prob", self.occlusion_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0,1]"));
            }
        }
        Ok(())
    }
}

/// Clutter rectangles drawn at full density.
const MAX_CLUTTER: usize = 24;

fn paint_rect(img: &mut Image, x0: usize, y0: usize, x1: usize, y1: usize, color: [f64; 3]) {
    for y in y0..y1 {
        for x in x0..x1 {
            for (c, v) in color.iter().enumerate() {
                img.set(x, y, c, *v);
            }
        }
    }
}

/// Draws seeded scenes of bright, textured vertical ellipses ("people") over
/// a dim background with low-contrast clutter rectangles. Ground truth is
/// each ellipse's tight pixel bounding box. Every person spans at least one
/// stride in each direction, and no two share a grid-cell centre.
pub fn synth_generate(cfg: &SynthCfg) -> Result<Vec<(Image, Annotation)>, DatasetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.image_size;
    let s = cfg.stride as f64;
    let mut out = Vec::with_capacity(cfg.count);
    for idx in 0..cfg.count {
        let base: f64 = rng.random_range(0.2..0.4);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
        let mut img = Image::filled(size, size, 3, 0.0);
        for y in 0..size {
            for x in 0..size {
                for c in 0..3 {
                    let noise: f64 = rng.random_range(-0.03..0.03);
                    img.set(x, y, c, base + tint[c] + noise);
                }
            }
        }
        let clutter_color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
            let shift: f64 = rng.random_range(-0.12..0.12);
            std::array::from_fn(|c| base + tint[c] + shift + rng.random_range(-0.04..0.04))
        };
        let random_rect = |rng: &mut ChaCha8Rng| {
            let w = rng.random_range(4..=size / 3);
            let h = rng.random_range(4..=size / 3);
            let x = rng.random_range(0..=size - w);
            let y = rng.random_range(0..=size - h);
            (x, y, w, h)
        };
        let n_clutter = (cfg.clutter_density * MAX_CLUTTER as f64).round() as usize;
        for _ in 0..n_clutter {
            let (x, y, w, h) = random_rect(&mut rng);
            let color = clutter_color(&mut rng);
            paint_rect(&mut img, x, y, x + w, y + h, color);
        }

        let wanted = rng.random_range(cfg.humans_per_image.0..=cfg.humans_per_image.1);
        let mut boxes: Vec<BBox> = Vec::new();
        let mut attempts = 0;
        while boxes.len() < wanted && attempts < 200 {
            attempts += 1;
            let min_w = cfg.stride.max(12);
            let w = rng.random_range(min_w..=min_w + cfg.stride / 2);
            let h = rng.random_range((2 * w).min(size - 2)..=(3 * w).min(size - 2));
            let x = rng.random_range(0..=size - w);
            let y = rng.random_range(0..=size - h);
            let b = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)
                .expect("positive extent");
            if boxes.iter().any(|o| o.intersection_area(&b) > 0.0) {
                continue;
            }
            let covers_a_center = (0..size / cfg.stride).any(|r| {
                (0..size / cfg.stride)
                    .any(|c| b.contains((c as f64 + 0.5) * s, (r as f64 + 0.5) * s))
            });
            if !covers_a_center {
                continue;
            }
            boxes.push(b);
        }
        if boxes.is_empty() {
            return Err(DatasetError::BadConfig(format!(
                "could not place a person in image {idx}"
            )));
        }

        for b in &boxes {
            let bright: f64 = rng.random_range(0.75..0.95);
            let hue: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.08..0.05));
            let stripe = rng.random_range(2..5usize);
            let (cx, cy) = ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
            let (rx, ry) = (b.width() / 2.0, b.height() / 2.0);
            let mut filled = BBox {
                x1: f64::INFINITY,
                y1: f64::INFINITY,
                x2: f64::NEG_INFINITY,
                y2: f64::NEG_INFINITY,
            };
            for y in b.y1 as usize..b.y2 as usize {
                for x in b.x1 as usize..b.x2 as usize {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    if dx * dx + dy * dy > 1.0 {
                        continue;
                    }
                    let texture = if (y / stripe) % 2 == 0 { 0.0 } else { -0.07 };
                    for c in 0..3 {
                        img.set(x, y, c, bright + hue[c] + texture);
                    }
                    filled.x1 = filled.x1.min(x as f64);
                    filled.y1 = filled.y1.min(y as f64);
                    filled.x2 = filled.x2.max(x as f64 + 1.0);
                    filled.y2 = filled.y2.max(y as f64 + 1.0);
                }
            }
            debug_assert_eq!(filled, *b);
        }

        if rng.random_bool(cfg.occlusion_prob) {
            let target = boxes[rng.random_range(0..boxes.len())];
            let ow = ((target.width() * rng.random_range(0.4..0.8)) as usize).max(3);
            let oh = ((target.height() * rng.random_range(0.2..0.4)) as usize).max(3);
            let ox = (target.x1 as usize + rng.random_range(0..=target.width() as usize / 2))
                .min(size - ow);
            let oy = (target.y1 as usize
                + rng.random_range(0..=(target.height() as usize).saturating_sub(oh)))
            .min(size - oh);
            let color = clutter_color(&mut rng);
            paint_rect(&mut img, ox, oy, ox + ow, oy + oh, color);
        }

        out.push((
            img,
            Annotation {
                image_path: format!("synth_{idx:05}.ppm"),
                boxes,
                source: Source::Synthetic,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PF_SAMPLE: &str = r#"# Compatible with PASCAL Annotation Version 1.00
Image filename : "PennFudanPed/PNGImages/FudanPed00001.png"
Image size (X x Y x C) : 559 x 536 x 3
Database : "The Penn-Fudan-Pedestrian Database"
Objects with ground truth : 2 { "PASpersonWalking" "PASpersonWalking" }
# Note there may be some objects not included in the ground truth list for they are severe-occluded
# or have very small size.
# Top left pixel co-ordinates : (1, 1)
# Details for pedestrian 1 ("PASpersonWalking")
Original label for object 1 "PASpersonWalking" : "PennFudanPed"
Bounding box for object 1 "PASpersonWalking" (Xmin, Ymin) - (Xmax, Ymax) : (160, 182) - (302, 431)
Pixel mask for object 1 "PASpersonWalking" : "PennFudanPed/PedMasks/FudanPed00001_mask.png"

# Details for pedestrian 2 ("PASpersonWalking")
Original label for object 2 "PASpersonWalking" : "PennFudanPed"
Bounding box for object 2 "PASpersonWalking" (Xmin, Ymin) - (Xmax, Ymax) : (420, 171) - (535, 486)
Pixel mask for object 2 "PASpersonWalking" : "PennFudanPed/PedMasks/FudanPed00001_mask.png"
"#;

    #[test]
    fn pennfudan_sample() {
        let a = parse_pennfudan(PF_SAMPLE).unwrap();
        assert_eq!(a.image_path, "PennFudanPed/PNGImages/FudanPed00001.png");
        assert_eq!(
            a.boxes,
            vec![
                BBox::new(160.0, 182.0, 302.0, 431.0).unwrap(),
                BBox::new(420.0, 171.0, 535.0, 486.0).unwrap()
            ]
        );
    }

    #[test]
    fn pennfudan_edge_cases() {
        let empty = parse_pennfudan("Image filename : \"a.png\"\nDatabase : \"x\"\n").unwrap();
        assert!(empty.boxes.is_empty());
        assert_eq!(parse_pennfudan("Database : \"x\"\n"), Err(DatasetError::MissingFilename));
        let inverted = "Image filename : \"a.png\"\nBounding box for object 1 \"PASpersonWalking\" (Xmin, Ymin) - (Xmax, Ymax) : (302, 431) - (160, 182)\n";
        assert!(matches!(
            parse_pennfudan(inverted),
            Err(DatasetError::MalformedBoxLine { line: 2, .. })
        ));
        let garbled = "Image filename : \"a.png\"\nBounding box for object 1 \"P\" (Xmin, Ymin) - (Xmax, Ymax) : (1, 2) - (3)\n";
        assert!(matches!(parse_pennfudan(garbled), Err(DatasetError::MalformedBoxLine { .. })));
    }

    #[test]
    fn idl_records() {
        let anns = parse_idl(
            "\"left/img_0001.png\": (10, 20, 30, 60);\n\"left/img_0002.png\";\n\"left/img_0003.png\": (30, 60, 10, 20), (1.5, 2, 7, 9.25).\n",
        )
        .unwrap();
        assert_eq!(anns.len(), 3);
        assert_eq!(anns[0].boxes, vec![BBox::new(10.0, 20.0, 30.0, 60.0).unwrap()]);
        assert!(anns[1].boxes.is_empty());
        assert_eq!(anns[2].boxes[0], BBox::new(10.0, 20.0, 30.0, 60.0).unwrap());
        assert_eq!(anns[2].boxes[1], BBox::new(1.5, 2.0, 7.0, 9.25).unwrap());
        for bad in ["left/x.png: (1, 2, 3, 4);", "\"a\": (1, 2, 3);", "\"a\": (1, 2, 3, 4)", "\"a\": (1, 1, 1, 4);"] {
            assert!(matches!(parse_idl(bad), Err(DatasetError::MalformedRecord { .. })), "{bad}");
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let [tr, va, te] = split_manifest(10, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!((tr.entries.len(), va.entries.len(), te.entries.len()), (10, 0, 0));
        let a = split_manifest(10, [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(a.iter().map(|m| m.entries.len()).collect::<Vec<_>>(), vec![6, 2, 2]);
        assert_eq!(a, split_manifest(10, [0.6, 0.2, 0.2], 3).unwrap());
        let b = split_manifest(360, [5.0 / 6.0, 0.0, 1.0 / 6.0], 42).unwrap();
        assert_eq!(b.iter().map(|m| m.entries.len()).collect::<Vec<_>>(), vec![300, 0, 60]);
        let c = split_manifest(7, [0.5, 0.25, 0.25], 1).unwrap();
        assert_eq!(c.iter().map(|m| m.entries.len()).collect::<Vec<_>>(), vec![3, 2, 2]);
        assert!(matches!(split_manifest(4, [0.5, 0.4, 0.0], 0), Err(DatasetError::BadFractions(_))));
    }

    #[test]
    fn manifest_text() {
        let rows = vec![
            ManifestRow { image_path: "a.ppm".into(), annotation_path: "a.txt".into(), split: Split::Train },
            ManifestRow { image_path: "b.ppm".into(), annotation_path: "b.txt".into(), split: Split::Test },
        ];
        assert_eq!(parse_manifest(&format_manifest(&rows)).unwrap(), rows);
        assert!(parse_manifest("a.ppm\ta.txt\ttrain\na.ppm\tb.txt\ttest\n").is_err());
        assert!(parse_manifest("a.ppm a.txt train\n").is_err());
        assert!(parse_manifest("a.ppm\ta.txt\tholdout\n").is_err());
    }

    #[test]
    fn synth_determinism_and_constraints() {
        let cfg = SynthCfg { count: 40, ..SynthCfg::default() };
        let a = synth_generate(&cfg).unwrap();
        assert_eq!(a, synth_generate(&cfg).unwrap());
        assert!(synth_generate(&SynthCfg { count: 0, ..cfg.clone() }).unwrap().is_empty());
        assert!(synth_generate(&SynthCfg { image_size: 60, ..cfg.clone() }).is_err());
        assert!(synth_generate(&SynthCfg { humans_per_image: (2, 1), ..cfg.clone() }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn synthetic_truth_is_valid(seed in 0u64..10_000, clutter in 0.0f64..=1.0, occ in 0.0f64..=1.0) {
            let cfg = SynthCfg { count: 4, seed, clutter_density: clutter, occlusion_prob: occ, humans_per_image: (1, 3), ..SynthCfg::default() };
            for (img, ann) in synth_generate(&cfg).unwrap() {
                prop_assert!(!ann.boxes.is_empty());
                for b in &ann.boxes {
                    prop_assert!(b.is_valid() && b.within(64.0, 64.0));
                    prop_assert!(b.area() >= 64.0);
                }
                let label = crate::gridcodec::encode(&ann.boxes, crate::gridcodec::GridSpec::for_image(64, 64, 16).unwrap()).unwrap();
                prop_assert!(label.covered_cells().count() >= ann.boxes.len());
                prop_assert_eq!(img.width(), 64);
            }
        }

        #[test]
        fn splits_are_disjoint(n in 0usize..200, a in 0.0f64..1.0, seed in 0u64..1000) {
            let b = (1.0 - a) / 2.0;
            let parts = split_manifest(n, [a, b, 1.0 - a - b], seed).unwrap();
            let mut all: Vec<usize> = parts.iter().flat_map(|m| m.entries.clone()).collect();
            prop_assert_eq!(all.len(), n);
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), n);
        }

        #[test]
        fn idl_round_trip(coords in proptest::collection::vec((0u32..500, 0u32..500, 1u32..100, 1u32..100), 0..5), quarter in any::<bool>()) {
            let boxes: Vec<BBox> = coords.iter().map(|&(x, y, w, h)| {
                let q = if quarter { 0.25 } else { 0.0 };
                BBox::new(x as f64 + q, y as f64, (x + w) as f64, (y + h) as f64 + q).unwrap()
            }).collect();
            let anns = vec![
                Annotation { image_path: "seq/a.png".into(), boxes: boxes.clone(), source: Source::Idl },
                Annotation { image_path: "seq/b.png".into(), boxes: vec![], source: Source::Idl },
            ];
            prop_assert_eq!(parse_idl(&serialize_idl(&anns)).unwrap(), anns);
        }

        #[test]
        fn pennfudan_round_trip(coords in proptest::collection::vec((0u32..500, 0u32..500, 1u32..100, 1u32..100), 0..5)) {
            let boxes = coords.iter().map(|&(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap()).collect();
            let ann = Annotation { image_path: "PennFudanPed/PNGImages/FudanPed00042.png".into(), boxes, source: Source::PennFudan };
            prop_assert_eq!(parse_pennfudan(&serialize_pennfudan(&ann, 640, 480, 3)).unwrap(), ann);
        }
    }
}
