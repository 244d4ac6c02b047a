//! Losses, optimizer, learning-rate schedule, augmentation and the training
//! loop.
//!
//! The coverage loss is half the mean (over the batch) squared error of the
//! coverage grid; the box loss is half the mean L1 corner error over covered
//! cells. Their weighted sum is minimized with Adam.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use thiserror::Error;

use crate::eval;
use crate::gridcodec::{self, BBox, GridError, LabelGrid};
use crate::inference::{self, ClusterCfg};
use crate::network::{self, Gradients, NetConfig, NetError, NetParams};
use crate::raster::{self, Image};
use crate::saliency::{SaliencyError, SaliencyMap, SaliencySettings};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty training set")]
    EmptyDataset,
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("labels: {0}")]
    Grid(#[from] GridError),
    #[error("saliency: {0}")]
    Saliency(#[from] SaliencyError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_cov: f64,
    pub w_box: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_cov: 1.0,
            w_box: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub base_lr: f64,
    pub lr_decay_start_epoch: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    /// Coverage threshold used by the per-epoch validation decode.
    pub coverage_threshold: f64,
    /// Expand the training set with the 13 flip/rotation variants per image.
    pub augment: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-size schedule: 90 epochs of 500 iterations, lr 1e-4, divided by
    /// 10 every 10 epochs from epoch 60.
    pub fn full() -> Self {
        Self {
            epochs: 90,
            iterations_per_epoch: 500,
            base_lr: 1e-4,
            lr_decay_start_epoch: 60,
            lr_decay_every: 10,
            lr_decay_factor: 10.0,
            batch_size: 4,
            coverage_threshold: 0.5,
            augment: false,
            seed: 42,
        }
    }

    /// Desk-scale schedule: 30 epochs of 20 iterations. With 75x fewer steps
    /// the base rate is raised to 1e-3 and the decay points shrink to match.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            iterations_per_epoch: 20,
            base_lr: 1e-3,
            lr_decay_start_epoch: 20,
            lr_decay_every: 5,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor > 0.0) {
            return bad("lr decay period and factor must be positive");
        }
        if self.lr_decay_start_epoch > self.epochs {
            return bad("lr_decay_start_epoch exceeds epochs");
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return bad("coverage_threshold outside [0,1]");
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Step-decay schedule: `base_lr` until the decay start, then divided by
/// `lr_decay_factor` once immediately and again every `lr_decay_every`
/// epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_decay_start_epoch {
        return cfg.base_lr;
    }
    let drops = (epoch - cfg.lr_decay_start_epoch) / cfg.lr_decay_every + 1;
    cfg.base_lr / cfg.lr_decay_factor.powi(drops as i32)
}

fn check_batch(n_true: usize, n_pred: usize) -> Result<(), TrainError> {
    if n_true == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if n_true != n_pred {
        return Err(TrainError::ShapeMismatch(format!(
            "{n_true} label grids vs {n_pred} predictions"
        )));
    }
    Ok(())
}

/// `(1 / 2N) * sum_i || cov_true_i - cov_pred_i ||^2`, with gradient
/// `(pred - true) / N` per cell.
pub fn coverage_loss(
    truth: &[LabelGrid],
    pred: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    check_batch(truth.len(), pred.len())?;
    let n = truth.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (t, p) in truth.iter().zip(pred) {
        if t.coverage.len() != p.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "coverage grid of {} cells vs {} predicted",
                t.coverage.len(),
                p.len()
            )));
        }
        let mut g = Vec::with_capacity(p.len());
        for (tv, pv) in t.coverage.iter().zip(p) {
            let d = pv - tv;
            loss += d * d;
            g.push(d / n);
        }
        grads.push(g);
    }
    Ok((loss / (2.0 * n), grads))
}

/// `(1 / 2N) * sum` of absolute corner errors over covered cells; don't-care
/// cells contribute neither loss nor gradient.
pub fn bbox_loss(
    truth: &[LabelGrid],
    pred: &[Vec<[f64; 4]>],
) -> Result<(f64, Vec<Vec<[f64; 4]>>), TrainError> {
    check_batch(truth.len(), pred.len())?;
    let n = truth.len() as f64;
    let scale = 1.0 / (2.0 * n);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (t, p) in truth.iter().zip(pred) {
        if t.offsets.len() != p.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "box grid of {} cells vs {} predicted",
                t.offsets.len(),
                p.len()
            )));
        }
        let mut g = vec![[0.0; 4]; p.len()];
        for k in t.covered_cells() {
            for c in 0..4 {
                let d = p[k][c] - t.offsets[k][c];
                loss += d.abs();
                g[k][c] = if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
        }
        grads.push(g);
    }
    Ok((loss * scale, grads))
}

/// Weighted batch loss with per-sample output gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub coverage: f64,
    pub bbox: f64,
    pub grad_coverage: Vec<Vec<f64>>,
    pub grad_bbox: Vec<Vec<[f64; 4]>>,
}

pub fn total_loss(
    cov: (f64, Vec<Vec<f64>>),
    bbox: (f64, Vec<Vec<[f64; 4]>>),
    w: LossWeights,
) -> LossTerms {
    let (l1, mut g1) = cov;
    let (l2, mut g2) = bbox;
    g1.iter_mut()
        .flatten()
        .for_each(|g| *g *= w.w_cov);
    g2.iter_mut()
        .flatten()
        .flatten()
        .for_each(|g| *g *= w.w_box);
    LossTerms {
        total: w.w_cov * l1 + w.w_box * l2,
        coverage: l1,
        bbox: l2,
        grad_coverage: g1,
        grad_bbox: g2,
    }
}

/// Adam moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &NetParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut NetParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v)
    {
        return Err(TrainError::ShapeMismatch(
            "gradients or optimizer state do not match parameters".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - AdamState::BETA1.powi(t);
    let c2 = 1.0 - AdamState::BETA2.powi(t);
    let buffers = params
        .buffers_mut()
        .zip(grads.buffers())
        .zip(state.m.buffers_mut().zip(state.v.buffers_mut()));
    for ((p, g), (m, v)) in buffers {
        for i in 0..p.len() {
            m[i] = AdamState::BETA1 * m[i] + (1.0 - AdamState::BETA1) * g[i];
            v[i] = AdamState::BETA2 * v[i] + (1.0 - AdamState::BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + AdamState::EPS);
        }
    }
    Ok(())
}

/// Rotation angles, in degrees, used for augmentation.
pub const AUGMENT_ANGLES: [f64; 6] = [-7.0, -5.0, -3.0, 3.0, 5.0, 7.0];

/// Boxes keeping less than this fraction of their area after rotation and
/// clipping are dropped from a variant.
pub const MIN_KEPT_AREA: f64 = 0.25;

pub fn hflip_box(b: &BBox, width: usize) -> BBox {
    let w = width as f64;
    BBox {
        x1: w - b.x2,
        y1: b.y1,
        x2: w - b.x1,
        y2: b.y2,
    }
}

/// Axis-aligned hull of the rotated corners, clipped to the frame; `None`
/// when too little of the box survives.
pub fn rotate_box(b: &BBox, width: usize, height: usize, theta_deg: f64) -> Option<BBox> {
    if theta_deg == 0.0 {
        return Some(*b);
    }
    let corners = [(b.x1, b.y1), (b.x2, b.y1), (b.x1, b.y2), (b.x2, b.y2)]
        .map(|(x, y)| raster::rotate_point(x, y, width, height, theta_deg));
    let hull = BBox {
        x1: corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min),
        y1: corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min),
        x2: corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max),
        y2: corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max),
    };
    let clipped = hull.clamp_to(width as f64, height as f64)?;
    (clipped.area() >= MIN_KEPT_AREA * b.area()).then_some(clipped)
}

/// Original, mirror, then for each angle a rotation, then for each angle
/// the mirrored rotation.
pub fn augment_with_angles(
    img: &Image,
    boxes: &[BBox],
    angles: &[f64],
) -> Result<Vec<(Image, Vec<BBox>)>, TrainError> {
    let (w, h) = (img.width(), img.height());
    let flip_all = |bs: &[BBox]| bs.iter().map(|b| hflip_box(b, w)).collect::<Vec<_>>();
    let mut out = Vec::with_capacity(2 + 2 * angles.len());
    out.push((img.clone(), boxes.to_vec()));
    out.push((raster::hflip(img), flip_all(boxes)));
    let mut rotated = Vec::with_capacity(angles.len());
    for &a in angles {
        let r = raster::rotate(img, a)
            .map_err(|e| TrainError::BadConfig(format!("augmentation angle: {e}")))?;
        let rb: Vec<BBox> = boxes.iter().filter_map(|b| rotate_box(b, w, h, a)).collect();
        rotated.push((r, rb));
    }
    let mirrored: Vec<_> = rotated
        .iter()
        .map(|(r, rb)| (raster::hflip(r), flip_all(rb)))
        .collect();
    out.extend(rotated);
    out.extend(mirrored);
    Ok(out)
}

/// The 14 training variants of an image.
pub fn augment(img: &Image, boxes: &[BBox]) -> Vec<(Image, Vec<BBox>)> {
    augment_with_angles(img, boxes, &AUGMENT_ANGLES).expect("built-in angles are in range")
}

/// [`augment`] applied to a sample; an attached saliency map follows the
/// same geometric transforms as the image.
pub fn augment_sample(sample: &Sample) -> Vec<Sample> {
    let variants = augment(&sample.image, &sample.boxes);
    let maps: Vec<Option<SaliencyMap>> = match &sample.saliency {
        Some(map) => augment(&map.to_image(), &[])
            .into_iter()
            .map(|(m, _)| Some(SaliencyMap::from_image(&m)))
            .collect(),
        None => vec![None; variants.len()],
    };
    variants
        .into_iter()
        .zip(maps)
        .map(|((image, boxes), saliency)| Sample {
            image,
            boxes,
            saliency,
        })
        .collect()
}

/// One annotated training image, optionally with an externally computed
/// saliency map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub boxes: Vec<BBox>,
    pub saliency: Option<SaliencyMap>,
}

impl Sample {
    pub fn new(image: Image, boxes: Vec<BBox>) -> Self {
        Self {
            image,
            boxes,
            saliency: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub coverage: f64,
    pub bbox: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub trace: Vec<TraceRow>,
    /// Validation accuracy after each epoch (empty without a validation set).
    pub val_accuracy: Vec<f64>,
}

impl TrainOutcome {
    /// Mean total loss over the iterations of one epoch.
    pub fn epoch_mean_loss(&self, epoch: usize) -> Option<f64> {
        let rows: Vec<f64> = self
            .trace
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.total)
            .collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }
}

/// `iter epoch lr total cov box`, one line per iteration.
pub fn format_trace(trace: &[TraceRow]) -> String {
    let mut out = String::new();
    for r in trace {
        let _ = writeln!(
            out,
            "{} {} {:e} {} {} {}",
            r.iter, r.epoch, r.lr, r.total, r.coverage, r.bbox
        );
    }
    out
}

/// Network input for a sample (MVSI, or the raw image with saliency off).
pub fn prepare_input(sample: &Sample, sal: &SaliencySettings) -> Result<Image, TrainError> {
    Ok(sal.apply(&sample.image, sample.saliency.as_ref())?)
}

struct Prepared {
    input: Image,
    labels: LabelGrid,
}

pub fn train(
    dataset: &[Sample],
    cfg: &TrainConfig,
    net_cfg: &NetConfig,
    weights: LossWeights,
    sal: &SaliencySettings,
) -> Result<TrainOutcome, TrainError> {
    train_with_validation(dataset, &[], cfg, net_cfg, weights, sal)
}

/// Trains on `dataset`; after every epoch, if `validation` is nonempty, its
/// detection accuracy at IoU 0.5 is recorded.
pub fn train_with_validation(
    dataset: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    net_cfg: &NetConfig,
    weights: LossWeights,
    sal: &SaliencySettings,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    net_cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let grid = net_cfg.grid();
    let mut prepared = Vec::new();
    for sample in dataset {
        if sample.image.width() != net_cfg.input_w || sample.image.height() != net_cfg.input_h {
            return Err(TrainError::ShapeMismatch(format!(
                "training image {}x{} vs network input {}x{}",
                sample.image.width(),
                sample.image.height(),
                net_cfg.input_w,
                net_cfg.input_h
            )));
        }
        let variants = if cfg.augment {
            augment_sample(sample)
        } else {
            vec![sample.clone()]
        };
        for variant in variants {
            prepared.push(Prepared {
                input: prepare_input(&variant, sal)?,
                labels: gridcodec::encode(&variant.boxes, grid)?,
            });
        }
    }

    let mut params = network::init(net_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_0bde);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xd1a9));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;

    let val_inputs: Vec<(Image, Vec<BBox>)> = validation
        .iter()
        .map(|s| Ok((prepare_input(s, sal)?, s.boxes.clone())))
        .collect::<Result<_, TrainError>>()?;
    let cluster_cfg = ClusterCfg {
        coverage_threshold: cfg.coverage_threshold,
        ..ClusterCfg::default()
    };

    let mut trace = Vec::with_capacity(cfg.epochs * cfg.iterations_per_epoch);
    let mut val_accuracy = Vec::new();
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        for _ in 0..cfg.iterations_per_epoch {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut order_rng);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
            let seeds: Vec<u64> = batch.iter().map(|_| dropout_rng.random()).collect();
            let forwards = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| network::forward(&params, net_cfg, &prepared[i].input, true, seed))
                .collect::<Result<Vec<_>, _>>()?;
            let mut preds_cov = Vec::with_capacity(batch.len());
            let mut preds_box = Vec::with_capacity(batch.len());
            let mut caches = Vec::with_capacity(batch.len());
            for (pred, cache) in forwards {
                preds_cov.push(pred.coverage);
                preds_box.push(pred.bbox);
                caches.push(cache);
            }
            let labels: Vec<LabelGrid> = batch.iter().map(|&i| prepared[i].labels.clone()).collect();
            let terms = total_loss(
                coverage_loss(&labels, &preds_cov)?,
                bbox_loss(&labels, &preds_box)?,
                weights,
            );
            let per_sample = caches
                .par_iter()
                .enumerate()
                .map(|(k, cache)| {
                    network::backward(cache, &params, &terms.grad_coverage[k], &terms.grad_bbox[k])
                })
                .collect::<Result<Vec<_>, _>>()?;
            // Summed in batch order so the result does not depend on threading.
            let mut grads = params.zeros_like();
            for g in &per_sample {
                grads.add_assign(g);
            }
            adam_step(&mut params, &grads, &mut adam, lr)?;
            trace.push(TraceRow {
                iter,
                epoch,
                lr,
                total: terms.total,
                coverage: terms.coverage,
                bbox: terms.bbox,
            });
            iter += 1;
        }
        if !val_inputs.is_empty() {
            let per_image: Vec<_> = val_inputs
                .par_iter()
                .map(|(input, gts)| {
                    let dets = inference::detect_prepared(&params, net_cfg, input, &cluster_cfg)?;
                    Ok((dets, gts.clone()))
                })
                .collect::<Result<_, TrainError>>()?;
            let acc = eval::accuracy(&per_image, eval::DEFAULT_IOU)
                .map(|r| r.detection_accuracy)
                .unwrap_or(0.0);
            val_accuracy.push(acc);
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        val_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridcodec::GridSpec;
    use proptest::prelude::*;

    fn grid1() -> GridSpec {
        GridSpec {
            stride: 16,
            grid_w: 1,
            grid_h: 1,
        }
    }

    fn single_cell(cov: f64, offsets: [f64; 4]) -> LabelGrid {
        LabelGrid {
            spec: grid1(),
            coverage: vec![cov],
            offsets: vec![offsets],
            dontcare: vec![cov == 0.0],
        }
    }

    #[test]
    fn coverage_loss_examples() {
        let t = vec![single_cell(1.0, [0.0; 4])];
        let (l, g) = coverage_loss(&t, &[vec![1.0]]).unwrap();
        assert_eq!((l, g), (0.0, vec![vec![0.0]]));
        assert_eq!(coverage_loss(&t, &[vec![0.0]]).unwrap().0, 0.5);
        let t2 = vec![single_cell(1.0, [0.0; 4]), single_cell(0.0, [0.0; 4])];
        let (l, g) = coverage_loss(&t2, &[vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(l, 0.125);
        assert_eq!(g, vec![vec![-0.25], vec![0.25]]);
        assert!(matches!(coverage_loss(&[], &[]), Err(TrainError::EmptyBatch)));
        assert!(matches!(
            coverage_loss(&t, &[vec![0.0, 1.0]]),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bbox_loss_examples() {
        let o = [-5.0, -6.0, 7.0, 8.0];
        let t = vec![single_cell(1.0, o)];
        assert_eq!(bbox_loss(&t, &[vec![o]]).unwrap().0, 0.0);
        let (l, g) = bbox_loss(&t, &[vec![[-4.0, -6.0, 7.0, 8.0]]]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, vec![vec![[0.5, 0.0, 0.0, 0.0]]]);
        let dc = vec![single_cell(0.0, [0.0; 4])];
        let (l, g) = bbox_loss(&dc, &[vec![[9.0, -3.0, 1.0, 2.0]]]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![vec![[0.0; 4]]]);
    }

    #[test]
    fn total_loss_examples() {
        let t = total_loss((0.5, vec![vec![0.2]]), (0.125, vec![vec![[1.0; 4]]]), LossWeights { w_cov: 1.0, w_box: 1.0 });
        assert_eq!(t.total, 0.625);
        let t = total_loss((0.5, vec![vec![0.2]]), (0.125, vec![vec![[1.0; 4]]]), LossWeights { w_cov: 1.0, w_box: 0.0 });
        assert_eq!(t.total, 0.5);
        assert_eq!(t.grad_bbox, vec![vec![[0.0; 4]]]);
        let one = total_loss((0.3, vec![vec![0.2]]), (0.1, vec![vec![[0.5; 4]]]), LossWeights { w_cov: 1.0, w_box: 2.0 });
        let two = total_loss((0.3, vec![vec![0.2]]), (0.1, vec![vec![[0.5; 4]]]), LossWeights { w_cov: 2.0, w_box: 4.0 });
        assert_eq!(two.total, 2.0 * one.total);
        assert_eq!(two.grad_coverage[0][0], 2.0 * one.grad_coverage[0][0]);
        assert_eq!(two.grad_bbox[0][0][0], 2.0 * one.grad_bbox[0][0][0]);
    }

    fn scalar_params(values: &[f64]) -> NetParams {
        NetParams {
            layers: vec![network::Layer {
                in_channels: 1,
                out_channels: values.len(),
                kernel: 1,
                weights: values.to_vec(),
                bias: vec![0.0; values.len()],
            }],
        }
    }

    #[test]
    fn adam_examples() {
        let mut p = scalar_params(&[0.3, -0.2]);
        let mut s = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut s, 1e-3).unwrap();
        assert_eq!(p.layers[0].weights, vec![0.3, -0.2]);
        assert_eq!(s.t, 1);

        let lr = 1e-4;
        for g in [1e-3, 0.7, -42.0] {
            let mut p = scalar_params(&[1.0, 1.0]);
            let mut s = AdamState::new(&p);
            let mut grads = p.zeros_like();
            grads.layers[0].weights = vec![g, -g];
            adam_step(&mut p, &grads, &mut s, lr).unwrap();
            let d0 = p.layers[0].weights[0] - 1.0;
            let d1 = p.layers[0].weights[1] - 1.0;
            let expected = lr * g.abs() / (g.abs() + AdamState::EPS);
            assert!((d0.abs() - expected).abs() <= 1e-12 * lr.max(1.0));
            // Relative gap to lr is eps / |g|.
            let gap = (d0.abs() - lr).abs() / lr;
            assert!(gap <= 1.01 * AdamState::EPS / g.abs(), "g = {g}");
            if g.abs() >= 1e-2 {
                assert!(gap <= 1e-6);
            }
            assert!((d0 + d1).abs() <= 1e-15);
            assert_eq!(d0.signum(), -g.signum());
        }

        let mut p = scalar_params(&[1.0]);
        let mut s = AdamState::new(&scalar_params(&[1.0, 2.0]));
        assert!(matches!(
            adam_step(&mut p, &scalar_params(&[0.0]), &mut s, 1e-3),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::full();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert_eq!(lr_at(59, &cfg), 1e-4);
        assert!((lr_at(60, &cfg) - 1e-5).abs() < 1e-20);
        assert!((lr_at(69, &cfg) - 1e-5).abs() < 1e-20);
        assert!((lr_at(70, &cfg) - 1e-6).abs() < 1e-21);
        assert!((lr_at(89, &cfg) - 1e-7).abs() < 1e-22);
        assert!(TrainConfig::desk().validate().is_ok());
        let mut bad = TrainConfig::desk();
        bad.lr_decay_start_epoch = 31;
        assert!(bad.validate().is_err());
    }

    fn scene() -> (Image, Vec<BBox>) {
        let data = (0..100 * 80 * 3).map(|i| ((i % 97) as f64) / 97.0).collect();
        let img = Image::new(100, 80, 3, data).unwrap();
        (img, vec![BBox::new(10.0, 20.0, 30.0, 40.0).unwrap()])
    }

    #[test]
    fn augmentation_layout() {
        let (img, boxes) = scene();
        let v = augment(&img, &boxes);
        assert_eq!(v.len(), 14);
        assert_eq!(v[0].0, img);
        assert_eq!(v[0].1, boxes);
        assert_eq!(v[1].0, raster::hflip(&img));
        assert_eq!(v[1].1, vec![BBox::new(70.0, 20.0, 90.0, 40.0).unwrap()]);
        assert_eq!(v[2].0, raster::rotate(&img, -7.0).unwrap());
        assert_eq!(v[13].0, raster::hflip(&raster::rotate(&img, 7.0).unwrap()));

        let zero = augment_with_angles(&img, &boxes, &[0.0]).unwrap();
        assert_eq!(zero.len(), 4);
        assert_eq!(zero[2], (img.clone(), boxes.clone()));
    }

    #[test]
    fn rotated_box_by_hand() {
        // 90 degrees about (50, 40): (x, y) -> (50 + (y - 40), 40 - (x - 50)).
        let b = BBox::new(40.0, 30.0, 60.0, 35.0).unwrap();
        let r = rotate_box(&b, 100, 80, 90.0).unwrap();
        for (got, want) in [(r.x1, 40.0), (r.y1, 30.0), (r.x2, 45.0), (r.y2, 50.0)] {
            assert!((got - want).abs() < 1e-9, "{r:?}");
        }
        // Small angle: the hull grows by w*sin + h*(1 - cos) style terms.
        let b = BBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        let r = rotate_box(&b, 100, 80, 5.0).unwrap();
        let s = 5f64.to_radians().sin();
        let c = 5f64.to_radians().cos();
        assert!((r.width() - (20.0 * c + 20.0 * s)).abs() < 1e-9);
        assert!((r.height() - (20.0 * s + 20.0 * c)).abs() < 1e-9);
    }

    #[test]
    fn boxes_leaving_the_frame_are_dropped() {
        let b = BBox::new(0.0, 0.0, 3.0, 3.0).unwrap();
        assert!(rotate_box(&b, 100, 100, 45.0).is_none());
        let inside = BBox::new(45.0, 45.0, 55.0, 55.0).unwrap();
        assert!(rotate_box(&inside, 100, 100, 45.0).is_some());
    }

    proptest! {
        #[test]
        fn hflip_box_is_an_involution(x in 0u32..90, y in 0u32..70, w in 1u32..10, h in 1u32..10) {
            let b = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap();
            prop_assert_eq!(hflip_box(&hflip_box(&b, 100), 100), b);
        }
    }
}
