//! Independent reference implementations used as test oracles. They are
//! written from the definitions, favouring directness over speed, and share
//! no code with the library beyond its data types.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vishud::gridcodec::{BBox, Candidate, LabelGrid};
use vishud::inference::{ClusterScore, Detection};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter)
}

/// Literal `(1/2N) * sum_i sum_cells (t - p)^2`.
pub fn oracle_coverage_loss(truth: &[LabelGrid], pred: &[Vec<f64>]) -> f64 {
    let n = truth.len();
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..truth[i].coverage.len() {
            let d = truth[i].coverage[k] - pred[i][k];
            total += d * d;
        }
    }
    total / (2 * n) as f64
}

/// Literal `(1/2N) * sum_i sum_{covered cells} sum_corners |t - p|`.
pub fn oracle_bbox_loss(truth: &[LabelGrid], pred: &[Vec<[f64; 4]>]) -> f64 {
    let n = truth.len();
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..truth[i].offsets.len() {
            if truth[i].dontcare[k] {
                continue;
            }
            for c in 0..4 {
                total += (truth[i].offsets[k][c] - pred[i][k][c]).abs();
            }
        }
    }
    total / (2 * n) as f64
}

/// True when `a` should come before `b`: higher score, then smaller x1,
/// then smaller y1, then lower index.
fn precedes(a: (f64, &BBox, usize), b: (f64, &BBox, usize)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1.x1 != b.1.x1 {
        return a.1.x1 < b.1.x1;
    }
    if a.1.y1 != b.1.y1 {
        return a.1.y1 < b.1.y1;
    }
    a.2 < b.2
}

/// Greedy clustering by repeated selection of the best unassigned candidate.
/// Returns detections and their member index lists.
pub fn oracle_cluster(
    cands: &[Candidate],
    iou_thr: f64,
    min_size: usize,
    mode: ClusterScore,
) -> Vec<(Detection, Vec<usize>)> {
    let mut free: Vec<bool> = vec![true; cands.len()];
    let better = |i: usize, j: usize| precedes((cands[i].score, &cands[i].bbox, i), (cands[j].score, &cands[j].bbox, j));
    let mut clusters = Vec::new();
    loop {
        let mut seed = None;
        for i in 0..cands.len() {
            if free[i] && seed.is_none_or(|s| better(i, s)) {
                seed = Some(i);
            }
        }
        let Some(s) = seed else { break };
        free[s] = false;
        let mut members = vec![s];
        // Absorb in rank order so the member list matches greedy traversal.
        loop {
            let mut next = None;
            for i in 0..cands.len() {
                if free[i]
                    && oracle_iou(&cands[s].bbox, &cands[i].bbox) >= iou_thr
                    && next.is_none_or(|n| better(i, n))
                {
                    next = Some(i);
                }
            }
            match next {
                Some(i) => {
                    free[i] = false;
                    members.push(i);
                }
                None => break,
            }
        }
        if members.len() < min_size {
            continue;
        }
        let wsum: f64 = members.iter().map(|&m| cands[m].score).sum();
        let mean = |f: fn(&BBox) -> f64| members.iter().map(|&m| cands[m].score * f(&cands[m].bbox)).sum::<f64>() / wsum;
        let bbox = BBox {
            x1: mean(|b| b.x1),
            y1: mean(|b| b.y1),
            x2: mean(|b| b.x2),
            y2: mean(|b| b.y2),
        };
        let score = match mode {
            ClusterScore::Sum => wsum,
            ClusterScore::Max => members.iter().map(|&m| cands[m].score).fold(f64::MIN, f64::max),
        };
        clusters.push((
            Detection {
                bbox,
                score,
                cluster_size: members.len(),
            },
            members,
        ));
    }
    // Final order: score desc, x1, y1; full ties keep creation order.
    let mut out: Vec<(Detection, Vec<usize>)> = Vec::new();
    for c in clusters {
        let pos = out
            .iter()
            .position(|(d, _)| precedes((c.0.score, &c.0.bbox, 1), (d.score, &d.bbox, 0)))
            .unwrap_or(out.len());
        out.insert(pos, c);
    }
    out
}

/// Greedy matching of one image's detections with score `>= thr`; returns
/// (true positives, false positives).
pub fn oracle_match_at(dets: &[Detection], gts: &[BBox], iou_thr: f64, thr: f64) -> (usize, usize) {
    let mut kept: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= thr).collect();
    // Insertion sort into evaluation order.
    for a in 1..kept.len() {
        let mut b = a;
        while b > 0 {
            let (x, y) = (kept[b], kept[b - 1]);
            if precedes((dets[x].score, &dets[x].bbox, x), (dets[y].score, &dets[y].bbox, y)) {
                kept.swap(b, b - 1);
                b -= 1;
            } else {
                break;
            }
        }
    }
    let mut used = vec![false; gts.len()];
    let (mut tp, mut fp) = (0, 0);
    for &d in &kept {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gts.len() {
            if used[g] {
                continue;
            }
            let v = oracle_iou(&dets[d].bbox, &gts[g]);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) if v >= iou_thr => {
                used[g] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    (tp, fp)
}

/// Miss rate and FPPI after re-matching from scratch at threshold `thr`.
pub fn oracle_point(per_image: &[(Vec<Detection>, Vec<BBox>)], iou_thr: f64, thr: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut gt) = (0, 0, 0);
    for (d, g) in per_image {
        let (t, f) = oracle_match_at(d, g, iou_thr, thr);
        tp += t;
        fp += f;
        gt += g.len();
    }
    (fp as f64 / per_image.len() as f64, (gt - tp) as f64 / gt as f64)
}

pub fn random_candidates(r: &mut ChaCha8Rng, max: usize) -> Vec<Candidate> {
    let n = r.random_range(0..=max);
    (0..n)
        .map(|_| {
            let x = r.random_range(0..12) as f64 * 2.0;
            let y = r.random_range(0..12) as f64 * 2.0;
            let w = r.random_range(2..14) as f64;
            let h = r.random_range(2..14) as f64;
            Candidate {
                bbox: BBox::new(x, y, x + w, y + h).unwrap(),
                score: r.random_range(1..6) as f64 / 8.0,
            }
        })
        .collect()
}

pub fn same_detection(a: &Detection, b: &Detection, tol: f64) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs()));
    a.cluster_size == b.cluster_size
        && close(a.score, b.score)
        && close(a.bbox.x1, b.bbox.x1)
        && close(a.bbox.y1, b.bbox.y1)
        && close(a.bbox.x2, b.bbox.x2)
        && close(a.bbox.y2, b.bbox.y2)
}
