//! Test-time path: modulate, run the network in eval mode, threshold and
//! decode the coverage grid, then cluster overlapping candidates.

use std::cmp::Ordering;

use crate::gridcodec::{self, BBox, Candidate};
use crate::network::{self, NetConfig, NetError, NetParams};
use crate::raster::Image;
use crate::saliency::{SaliencyError, SaliencyMap, SaliencySettings};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("saliency: {0}")]
    Saliency(#[from] SaliencyError),
    #[error("network: {0}")]
    Net(#[from] NetError),
}

impl From<DetectError> for crate::training::TrainError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Saliency(e) => e.into(),
            DetectError::Net(e) => e.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub cluster_size: usize,
}

/// How a cluster's score is formed from its members' coverages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterScore {
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterCfg {
    pub iou_threshold: f64,
    pub min_cluster_size: usize,
    pub coverage_threshold: f64,
    pub score: ClusterScore,
}

impl Default for ClusterCfg {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            min_cluster_size: 1,
            coverage_threshold: 0.5,
            score: ClusterScore::Sum,
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Score descending, then smaller `x1`, then smaller `y1`.
pub(crate) fn rank(a_score: f64, a: &BBox, b_score: f64, b: &BBox) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a.x1.total_cmp(&b.x1))
        .then(a.y1.total_cmp(&b.y1))
}

/// Greedy grouping: the best remaining candidate seeds a cluster and absorbs
/// every remaining candidate overlapping it by at least `iou_threshold`.
/// Each cluster becomes one detection with the score-weighted mean box.
pub fn cluster(candidates: &[Candidate], cfg: &ClusterCfg) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&candidates[i], &candidates[j]);
        rank(a.score, &a.bbox, b.score, &b.bbox).then(i.cmp(&j))
    });
    let mut taken = vec![false; candidates.len()];
    let mut out = Vec::new();
    for (pos, &seed) in order.iter().enumerate() {
        if taken[seed] {
            continue;
        }
        taken[seed] = true;
        let mut members = vec![seed];
        for &other in &order[pos + 1..] {
            if !taken[other] && iou(&candidates[seed].bbox, &candidates[other].bbox) >= cfg.iou_threshold {
                taken[other] = true;
                members.push(other);
            }
        }
        if members.len() < cfg.min_cluster_size {
            continue;
        }
        out.push(merge(candidates, &members, cfg.score));
    }
    out.sort_by(|a, b| rank(a.score, &a.bbox, b.score, &b.bbox));
    out
}

fn merge(candidates: &[Candidate], members: &[usize], mode: ClusterScore) -> Detection {
    let total: f64 = members.iter().map(|&m| candidates[m].score).sum();
    let mut corners = [0.0; 4];
    for &m in members {
        let c = &candidates[m];
        let w = c.score / total;
        corners[0] += w * c.bbox.x1;
        corners[1] += w * c.bbox.y1;
        corners[2] += w * c.bbox.x2;
        corners[3] += w * c.bbox.y2;
    }
    let score = match mode {
        ClusterScore::Sum => total,
        ClusterScore::Max => members
            .iter()
            .map(|&m| candidates[m].score)
            .fold(f64::MIN, f64::max),
    };
    let bbox = if members.len() == 1 {
        candidates[members[0]].bbox
    } else {
        BBox {
            x1: corners[0],
            y1: corners[1],
            x2: corners[2],
            y2: corners[3],
        }
    };
    Detection {
        bbox,
        score,
        cluster_size: members.len(),
    }
}

/// Forward (eval mode), decode and cluster an already-prepared input.
pub fn detect_prepared(
    params: &NetParams,
    net_cfg: &NetConfig,
    input: &Image,
    cfg: &ClusterCfg,
) -> Result<Vec<Detection>, NetError> {
    let (pred, _) = network::forward(params, net_cfg, input, false, 0)?;
    let candidates = gridcodec::decode(
        &pred.coverage,
        &pred.bbox,
        net_cfg.grid(),
        cfg.coverage_threshold,
    );
    Ok(cluster(&candidates, cfg))
}

/// Full test-time pipeline for one image.
pub fn detect(
    params: &NetParams,
    net_cfg: &NetConfig,
    img: &Image,
    sal: &SaliencySettings,
    external: Option<&SaliencyMap>,
    cfg: &ClusterCfg,
) -> Result<Vec<Detection>, DetectError> {
    let input = sal.apply(img, external)?;
    Ok(detect_prepared(params, net_cfg, &input, cfg)?)
}

/// `image_id x1 y1 x2 y2 score`, coordinates to two decimals.
pub fn format_detections<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a [Detection])>,
) -> String {
    let mut out = String::new();
    for (id, dets) in rows {
        for d in dets {
            out.push_str(&format!(
                "{id} {:.2} {:.2} {:.2} {:.2} {}\n",
                d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.score
            ));
        }
    }
    out
}

/// Parses a detections file into `(image_id, detection)` rows, in file
/// order. `cluster_size` is not stored and reads back as 1.
pub fn parse_detections(text: &str) -> Result<Vec<(String, Detection)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(format!("line {}: expected 6 fields, found {}", n + 1, fields.len()));
        }
        let nums: Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let nums = nums.map_err(|e| format!("line {}: {e}", n + 1))?;
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| format!("line {}: {e}", n + 1))?;
        out.push((
            fields[0].to_string(),
            Detection {
                bbox,
                score: nums[4],
                cluster_size: 1,
            },
        ));
    }
    Ok(out)
}
