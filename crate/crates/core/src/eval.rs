//! Detection scoring: greedy IoU matching, per-human detection accuracy,
//! the miss-rate versus false-positives-per-image curve, and its log-average
//! miss rate over nine log-spaced FPPI references in `[1e-2, 1]`.

use std::fmt::Write as _;

use crate::gridcodec::BBox;
use crate::inference::{iou, rank, Detection};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no ground-truth boxes to evaluate against")]
    NoGroundTruth,
    #[error("empty curve")]
    EmptyCurve,
    #[error("no images to evaluate")]
    NoImages,
}

pub const DEFAULT_IOU: f64 = 0.5;

/// Lower clamp applied to sampled miss rates before averaging.
pub const MISS_RATE_FLOOR: f64 = 1e-4;

/// Matching outcome for one image; indices refer to the inputs of [`match_detections`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub matches: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub misses: Vec<usize>,
}

/// Detection indices in evaluation order: score descending, then `x1`, then
/// `y1`, then input position.
fn eval_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&detections[i], &detections[j]);
        rank(a.score, &a.bbox, b.score, &b.bbox).then(i.cmp(&j))
    });
    order
}

/// Greedy matching: each detection, best first, claims the unmatched ground
/// truth it overlaps most, provided the IoU reaches `iou_threshold`.
pub fn match_detections(detections: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut claimed = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for d in eval_order(detections) {
        let best = (0..gts.len())
            .filter(|&g| !claimed[g])
            .map(|g| (g, iou(&detections[d].bbox, &gts[g])))
            .fold(None::<(usize, f64)>, |acc, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        match best {
            Some((g, v)) if v >= iou_threshold => {
                claimed[g] = true;
                result.matches.push((d, g));
            }
            _ => result.false_positives.push(d),
        }
    }
    result.misses = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub fppi: f64,
    pub miss_rate: f64,
    /// Minimum score kept; `+inf` stands for "no detections".
    pub score_threshold: f64,
}

/// One image's detections paired with its ground truth.
pub type ImageResult = (Vec<Detection>, Vec<BBox>);

/// Miss rate against FPPI, one point per distinct score threshold, sorted by
/// FPPI; points sharing an FPPI keep the lowest miss rate.
pub fn curve(per_image: &[ImageResult], iou_threshold: f64) -> Result<Vec<CurvePoint>, EvalError> {
    if per_image.is_empty() {
        return Err(EvalError::NoImages);
    }
    let total_gt: usize = per_image.iter().map(|(_, g)| g.len()).sum();
    if total_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let n_images = per_image.len() as f64;

    // Greedy matching in score order means the matches among detections
    // scoring >= s are exactly the full-run matches restricted to that set.
    let mut events: Vec<(f64, bool)> = Vec::new();
    for (dets, gts) in per_image {
        let m = match_detections(dets, gts, iou_threshold);
        events.extend(m.matches.iter().map(|&(d, _)| (dets[d].score, true)));
        events.extend(m.false_positives.iter().map(|&d| (dets[d].score, false)));
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![CurvePoint {
        fppi: 0.0,
        miss_rate: 1.0,
        score_threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let s = events[i].0;
        while i < events.len() && events[i].0 == s {
            if events[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(CurvePoint {
            fppi: fp as f64 / n_images,
            miss_rate: (total_gt - tp) as f64 / total_gt as f64,
            score_threshold: s,
        });
    }
    points.sort_by(|a, b| {
        a.fppi
            .total_cmp(&b.fppi)
            .then(a.miss_rate.total_cmp(&b.miss_rate))
    });
    points.dedup_by(|later, kept| later.fppi == kept.fppi);
    Ok(points)
}

/// FPPI references `10^(-2 + k/4)`, `k = 0..=8`.
pub fn reference_fppi() -> [f64; 9] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + k as f64 / 4.0))
}

/// Geometric mean of the miss rates sampled at the nine references. Each
/// sample is the miss rate of the point with the largest FPPI not above the
/// reference (1.0 if none), floored at [`MISS_RATE_FLOOR`].
pub fn lamr(curve: &[CurvePoint]) -> Result<f64, EvalError> {
    if curve.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    let refs = reference_fppi();
    let log_sum: f64 = refs
        .iter()
        .map(|&r| {
            let limit = r * (1.0 + 1e-12);
            let sample = curve
                .iter()
                .filter(|p| p.fppi <= limit)
                .max_by(|a, b| a.fppi.total_cmp(&b.fppi).then(b.miss_rate.total_cmp(&a.miss_rate)))
                .map_or(1.0, |p| p.miss_rate);
            sample.max(MISS_RATE_FLOOR).ln()
        })
        .sum();
    Ok((log_sum / refs.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub detection_accuracy: f64,
    pub matched_count: usize,
    pub total_gt: usize,
    pub false_positives: usize,
    pub curve: Vec<CurvePoint>,
    pub lamr: f64,
}

impl EvalReport {
    pub fn misses(&self) -> usize {
        self.total_gt - self.matched_count
    }

    /// `key = value` lines: accuracy, lamr, tp, fp, miss.
    pub fn to_text(&self) -> String {
        format!(
            "accuracy = {}\nlamr = {}\ntp = {}\nfp = {}\nmiss = {}\n",
            sig6(self.detection_accuracy),
            sig6(self.lamr),
            self.matched_count,
            self.false_positives,
            self.misses()
        )
    }
}

/// Accuracy over every detection: matched ground truths / all ground truths.
/// The curve and LAMR fields are left empty; see [`evaluate`].
pub fn accuracy(per_image: &[ImageResult], iou_threshold: f64) -> Result<EvalReport, EvalError> {
    let mut matched = 0;
    let mut total = 0;
    let mut fps = 0;
    for (dets, gts) in per_image {
        let m = match_detections(dets, gts, iou_threshold);
        matched += m.matches.len();
        fps += m.false_positives.len();
        total += gts.len();
    }
    if total == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(EvalReport {
        detection_accuracy: matched as f64 / total as f64,
        matched_count: matched,
        total_gt: total,
        false_positives: fps,
        curve: Vec::new(),
        lamr: 1.0,
    })
}

/// Accuracy, curve and LAMR in one report.
pub fn evaluate(per_image: &[ImageResult], iou_threshold: f64) -> Result<EvalReport, EvalError> {
    let mut report = accuracy(per_image, iou_threshold)?;
    report.curve = curve(per_image, iou_threshold)?;
    report.lamr = lamr(&report.curve)?;
    Ok(report)
}

/// `fppi,miss_rate,threshold` lines, six significant digits.
pub fn format_curve(curve: &[CurvePoint]) -> String {
    let mut out = String::new();
    for p in curve {
        let _ = writeln!(
            out,
            "{},{},{}",
            sig6(p.fppi),
            sig6(p.miss_rate),
            sig6(p.score_threshold)
        );
    }
    out
}

fn sig6(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = 5 - v.abs().log10().floor() as i32;
    if (0..=17).contains(&digits) {
        let s = format!("{:.*}", digits as usize, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.5e}")
    }
}
