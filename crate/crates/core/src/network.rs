//! Small fully-convolutional detector: a stack of same-padded conv + ReLU
//! blocks (optionally followed by 2x2 max pooling), inverted dropout, and two
//! 1x1 heads. The coverage head is squashed by a sigmoid; the box head is
//! linear and scaled by `bbox_scale` pixels per unit.
//!
//! Backpropagation is exact and hand-written; `tests::finite_differences`
//! checks it against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use thiserror::Error;

use crate::gridcodec::GridSpec;
use crate::raster::Image;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("bad network config: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not match these parameters")]
    CacheMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One conv/ReLU stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: bool,
}

impl Block {
    pub const fn new(out_channels: usize, kernel: usize, pool: bool) -> Self {
        Self {
            out_channels,
            kernel,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_w: usize,
    pub input_h: usize,
    pub input_channels: usize,
    pub blocks: Vec<Block>,
    pub dropout_rate: f64,
    /// Pixels per unit of box-head output.
    pub bbox_scale: f64,
}

impl NetConfig {
    /// 64x64 RGB input, channels (16, 32, 64, 64), every block pooled.
    pub fn desk() -> Self {
        let blocks = vec![
            Block::new(16, 3, true),
            Block::new(32, 3, true),
            Block::new(64, 3, true),
            Block::new(64, 3, true),
        ];
        Self {
            input_w: 64,
            input_h: 64,
            input_channels: 3,
            blocks,
            dropout_rate: 0.5,
            bbox_scale: 16.0,
        }
    }

    pub fn stride_product(&self) -> usize {
        1 << self.blocks.iter().filter(|b| b.pool).count()
    }

    pub fn grid(&self) -> GridSpec {
        let s = self.stride_product();
        GridSpec {
            stride: s,
            grid_w: self.input_w / s,
            grid_h: self.input_h / s,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::BadConfig(m));
        if self.input_w == 0 || self.input_h == 0 {
            return bad("zero input size".into());
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return bad(format!("{} input channels", self.input_channels));
        }
        if self.blocks.iter().filter(|b| b.pool).count() >= usize::BITS as usize {
            return bad("too many pooling blocks".into());
        }
        let s = self.stride_product();
        if self.input_w % s != 0 || self.input_h % s != 0 {
            return bad(format!(
                "stride {s} does not divide {}x{}",
                self.input_w, self.input_h
            ));
        }
        if let Some(b) = self
            .blocks
            .iter()
            .find(|b| b.out_channels == 0 || b.kernel == 0 || b.kernel % 2 == 0)
        {
            return bad(format!("block {b:?} needs odd kernel and positive width"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout {} outside [0,1)", self.dropout_rate));
        }
        if !(self.bbox_scale.is_finite() && self.bbox_scale > 0.0) {
            return bad(format!("bbox_scale {}", self.bbox_scale));
        }
        Ok(())
    }

    /// `out:kernel:pool|nopool`, comma separated.
    pub fn blocks_string(&self) -> String {
        self.blocks
            .iter()
            .map(|b| {
                format!(
                    "{}:{}:{}",
                    b.out_channels,
                    b.kernel,
                    if b.pool { "pool" } else { "nopool" }
                )
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_blocks(text: &str) -> Result<Vec<Block>, NetError> {
        text.split(',')
            .map(|item| {
                let parts: Vec<&str> = item.trim().split(':').collect();
                let err = || NetError::BadConfig(format!("block spec {item:?}"));
                if parts.len() != 3 {
                    return Err(err());
                }
                let out_channels = parts[0].parse().map_err(|_| err())?;
                let kernel = parts[1].parse().map_err(|_| err())?;
                let pool = match parts[2] {
                    "pool" => true,
                    "nopool" => false,
                    _ => return Err(err()),
                };
                Ok(Block::new(out_channels, kernel, pool))
            })
            .collect()
    }

    fn describe(&self) -> String {
        format!(
            "in={}x{}x{};blocks={};dropout={};bbox_scale={}",
            self.input_w,
            self.input_h,
            self.input_channels,
            self.blocks_string(),
            self.dropout_rate,
            self.bbox_scale
        )
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(self.describe().as_bytes()));
        out
    }

    /// `(in_channels, out_channels, kernel)` per parameterized layer, heads
    /// last.
    fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = Vec::with_capacity(self.blocks.len() + 2);
        let mut c = self.input_channels;
        for b in &self.blocks {
            shapes.push((c, b.out_channels, b.kernel));
            c = b.out_channels;
        }
        shapes.push((c, 1, 1));
        shapes.push((c, 4, 1));
        shapes
    }
}

/// Weights (`out x in*k*k`, row-major) and biases of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// All trainable tensors, in declaration order: conv blocks, coverage head,
/// box head. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<Layer>,
}

pub type Gradients = NetParams;

impl NetParams {
    pub fn zeros(cfg: &NetConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        Ok(Self {
            layers: cfg
                .layer_shapes()
                .into_iter()
                .map(|(i, o, k)| Layer::zeros(i, o, k))
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_channels, l.out_channels, l.kernel))
                .collect(),
        }
    }

    /// Weight and bias buffers in declaration order.
    pub fn buffers(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn len(&self) -> usize {
        self.buffers().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &NetParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.len() == b.weights.len()
                    && a.bias.len() == b.bias.len()
                    && a.kernel == b.kernel
            })
    }

    pub fn add_assign(&mut self, other: &NetParams) {
        for (a, b) in self.buffers_mut().zip(other.buffers()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in self.buffers_mut() {
            buf.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn matches(&self, cfg: &NetConfig) -> bool {
        let shapes = cfg.layer_shapes();
        shapes.len() == self.layers.len()
            && shapes.iter().zip(&self.layers).all(|(&(i, o, k), l)| {
                l.in_channels == i
                    && l.out_channels == o
                    && l.kernel == k
                    && l.weights.len() == o * i * k * k
                    && l.bias.len() == o
            })
    }
}

/// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
pub fn init(cfg: &NetConfig, seed: u64) -> Result<NetParams, NetError> {
    let mut params = NetParams::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let std = (2.0 / layer.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        layer
            .weights
            .iter_mut()
            .for_each(|w| *w = normal.sample(&mut rng));
    }
    Ok(params)
}

/// Network outputs on the grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub coverage: Vec<f64>,
    pub bbox: Vec<[f64; 4]>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    h: usize,
    w: usize,
    cols: Vec<f64>,
    pre: Vec<f64>,
    argmax: Option<Vec<usize>>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub seed: u64,
    pub train_mode: bool,
    blocks: Vec<BlockCache>,
    features: Vec<f64>,
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
    coverage: Vec<f64>,
    cells: usize,
    bbox_scale: f64,
    layer_sizes: Vec<usize>,
}

/// `c = a * b + beta * c` for row-major `a` (m x k) and `b` (k x n); either
/// operand may be read transposed from its stored row-major layout.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above bounds every index reachable through the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; c * k * k * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ch * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for x in x_lo..x_hi {
                        row[y * w + x] = plane[sy as usize * w + (x as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ch * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    let plane = &mut out[ch * hw..(ch + 1) * hw];
                    for x in x_lo..x_hi {
                        plane[sy as usize * w + (x as isize + dx) as usize] += row[y * w + x];
                    }
                }
            }
        }
    }
    out
}

fn conv(layer: &Layer, cols: &[f64], hw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(layer.out_channels * hw);
    for b in &layer.bias {
        out.extend(std::iter::repeat_n(*b, hw));
    }
    gemm(
        layer.out_channels,
        layer.fan_in(),
        hw,
        &layer.weights,
        false,
        cols,
        false,
        1.0,
        &mut out,
    );
    out
}

/// 2x2 max pooling; returns pooled values and the flat source index of each.
fn max_pool(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

/// Inverted-dropout multipliers: `0` with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn forward(
    params: &NetParams,
    cfg: &NetConfig,
    img: &Image,
    train_mode: bool,
    seed: u64,
) -> Result<(Prediction, ForwardCache), NetError> {
    if img.width() != cfg.input_w
        || img.height() != cfg.input_h
        || img.channels() != cfg.input_channels
    {
        return Err(NetError::ShapeMismatch(format!(
            "image {}x{}x{} vs network input {}x{}x{}",
            img.width(),
            img.height(),
            img.channels(),
            cfg.input_w,
            cfg.input_h,
            cfg.input_channels
        )));
    }
    if !params.matches(cfg) {
        return Err(NetError::ShapeMismatch(
            "parameters do not match config".into(),
        ));
    }
    let (mut h, mut w) = (cfg.input_h, cfg.input_w);
    let mut x = img.to_planar();
    let mut blocks = Vec::with_capacity(cfg.blocks.len());
    for (layer, block) in params.layers.iter().zip(&cfg.blocks) {
        let cols = im2col(&x, layer.in_channels, h, w, layer.kernel);
        let pre = conv(layer, &cols, h * w);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let (next, argmax, nh, nw) = if block.pool {
            let (p, idx) = max_pool(&act, layer.out_channels, h, w);
            (p, Some(idx), h / 2, w / 2)
        } else {
            (act, None, h, w)
        };
        blocks.push(BlockCache {
            h,
            w,
            cols,
            pre,
            argmax,
        });
        x = next;
        h = nh;
        w = nw;
    }
    let cells = h * w;
    let features = x;
    let mask = (train_mode && cfg.dropout_rate > 0.0)
        .then(|| dropout_mask(features.len(), cfg.dropout_rate, seed));
    let dropped = match &mask {
        Some(m) => features.iter().zip(m).map(|(f, m)| f * m).collect(),
        None => features.clone(),
    };
    let n_blocks = cfg.blocks.len();
    let cov_head = &params.layers[n_blocks];
    let box_head = &params.layers[n_blocks + 1];
    let logits = conv(cov_head, &dropped, cells);
    let coverage: Vec<f64> = logits.iter().map(|z| sigmoid(*z)).collect();
    let raw_box = conv(box_head, &dropped, cells);
    let bbox = (0..cells)
        .map(|i| std::array::from_fn(|c| cfg.bbox_scale * raw_box[c * cells + i]))
        .collect();
    let cache = ForwardCache {
        seed,
        train_mode,
        blocks,
        features,
        mask,
        dropped,
        coverage: coverage.clone(),
        cells,
        bbox_scale: cfg.bbox_scale,
        layer_sizes: params.buffers().map(Vec::len).collect(),
    };
    Ok((Prediction { coverage, bbox }, cache))
}

/// Reverse-mode pass: parameter gradients of any scalar whose partials with
/// respect to the outputs are `grad_coverage` and `grad_bbox`.
pub fn backward(
    cache: &ForwardCache,
    params: &NetParams,
    grad_coverage: &[f64],
    grad_bbox: &[[f64; 4]],
) -> Result<Gradients, NetError> {
    let sizes: Vec<usize> = params.buffers().map(Vec::len).collect();
    if sizes != cache.layer_sizes || cache.blocks.len() + 2 != params.layers.len() {
        return Err(NetError::CacheMismatch);
    }
    let cells = cache.cells;
    if grad_coverage.len() != cells || grad_bbox.len() != cells {
        return Err(NetError::ShapeMismatch(format!(
            "output gradients cover {}/{} cells, expected {cells}",
            grad_coverage.len(),
            grad_bbox.len()
        )));
    }
    let mut grads = params.zeros_like();
    let n_blocks = cache.blocks.len();

    let d_logit: Vec<f64> = grad_coverage
        .iter()
        .zip(&cache.coverage)
        .map(|(g, p)| g * p * (1.0 - p))
        .collect();
    let mut d_raw_box = vec![0.0; 4 * cells];
    for (i, g) in grad_bbox.iter().enumerate() {
        for c in 0..4 {
            d_raw_box[c * cells + i] = g[c] * cache.bbox_scale;
        }
    }

    let feat_c = params.layers[n_blocks].in_channels;
    let mut d_dropped = vec![0.0; feat_c * cells];
    for (head, d_out) in [(n_blocks, &d_logit), (n_blocks + 1, &d_raw_box)] {
        let layer = &params.layers[head];
        let g = &mut grads.layers[head];
        for (o, b) in g.bias.iter_mut().enumerate() {
            *b = d_out[o * cells..(o + 1) * cells].iter().sum();
        }
        gemm(
            layer.out_channels,
            cells,
            feat_c,
            d_out,
            false,
            &cache.dropped,
            true,
            0.0,
            &mut g.weights,
        );
        gemm(
            feat_c,
            layer.out_channels,
            cells,
            &layer.weights,
            true,
            d_out,
            false,
            1.0,
            &mut d_dropped,
        );
    }
    debug_assert_eq!(cache.dropped.len(), cache.features.len());
    let mut d_x = match &cache.mask {
        Some(m) => d_dropped.iter().zip(m).map(|(d, m)| d * m).collect(),
        None => d_dropped,
    };

    for (l, bc) in cache.blocks.iter().enumerate().rev() {
        let layer = &params.layers[l];
        let hw = bc.h * bc.w;
        let mut d_act = match &bc.argmax {
            Some(idx) => {
                let mut full = vec![0.0; layer.out_channels * hw];
                for (g, &i) in d_x.iter().zip(idx) {
                    full[i] += g;
                }
                full
            }
            None => d_x,
        };
        for (d, p) in d_act.iter_mut().zip(&bc.pre) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        let g = &mut grads.layers[l];
        for (o, b) in g.bias.iter_mut().enumerate() {
            *b = d_act[o * hw..(o + 1) * hw].iter().sum();
        }
        let fan_in = layer.fan_in();
        gemm(
            layer.out_channels,
            hw,
            fan_in,
            &d_act,
            false,
            &bc.cols,
            true,
            0.0,
            &mut g.weights,
        );
        if l == 0 {
            break;
        }
        let mut d_cols = vec![0.0; fan_in * hw];
        gemm(
            fan_in,
            layer.out_channels,
            hw,
            &layer.weights,
            true,
            &d_act,
            false,
            0.0,
            &mut d_cols,
        );
        d_x = col2im(&d_cols, layer.in_channels, bc.h, bc.w, layer.kernel);
    }
    Ok(grads)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"VSHD";
const CHECKPOINT_VERSION: u32 = 1;

/// Layout: magic `VSHD`, version (u32 LE), SHA-256 of the config
/// description, then every layer's weights followed by its biases as f64 LE.
pub fn save_checkpoint(params: &NetParams, cfg: &NetConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&cfg.digest());
    for buf in params.buffers() {
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint(bytes: &[u8], cfg: &NetConfig) -> Result<NetParams, NetError> {
    let err = |m: &str| Err(NetError::Checkpoint(m.to_string()));
    if bytes.len() < 40 || &bytes[..4] != CHECKPOINT_MAGIC {
        return err("missing VSHD magic");
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return err(&format!("unsupported version {version}"));
    }
    if bytes[8..40] != cfg.digest() {
        return err("network config digest differs from the checkpoint's");
    }
    let mut params = NetParams::zeros(cfg)?;
    let payload = &bytes[40..];
    if payload.len() != 8 * params.len() {
        return err(&format!(
            "expected {} parameters, found {} bytes",
            params.len(),
            payload.len()
        ));
    }
    let mut chunks = payload.chunks_exact(8);
    for buf in params.buffers_mut() {
        for v in buf.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    if params.buffers().flatten().any(|v| !v.is_finite()) {
        return err("non-finite parameter");
    }
    Ok(params)
}

/// Human-readable layer table.
pub fn summary(cfg: &NetConfig) -> String {
    let mut out = String::new();
    let (mut h, mut w) = (cfg.input_h, cfg.input_w);
    for (i, b) in cfg.blocks.iter().enumerate() {
        if b.pool {
            h /= 2;
            w /= 2;
        }
        let _ = writeln!(
            out,
            "block {i}: conv{k}x{k} -> {c}, relu{p} => {c}x{h}x{w}",
            k = b.kernel,
            c = b.out_channels,
            p = if b.pool { ", maxpool2" } else { "" }
        );
    }
    let _ = writeln!(out, "heads: coverage 1x1 -> 1 (sigmoid), bbox 1x1 -> 4 (x{})", cfg.bbox_scale);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            input_w: 16,
            input_h: 16,
            input_channels: 3,
            blocks: vec![Block::new(4, 3, true), Block::new(6, 3, true)],
            dropout_rate: 0.5,
            bbox_scale: 4.0,
        }
    }

    fn textured(w: usize, h: usize, c: usize, phase: f64) -> Image {
        let data = (0..w * h * c)
            .map(|i| 0.5 + 0.45 * ((i as f64) * 0.731 + phase).sin())
            .collect();
        Image::new(w, h, c, data).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let cfg = NetConfig::desk();
        let a = init(&cfg, 7).unwrap();
        assert_eq!(a, init(&cfg, 7).unwrap());
        assert_ne!(a, init(&cfg, 8).unwrap());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn he_variance() {
        let cfg = NetConfig {
            input_channels: 3,
            blocks: vec![Block::new(16, 3, true), Block::new(32, 3, true)],
            ..NetConfig::desk()
        };
        let p = init(&cfg, 42).unwrap();
        let w = &p.layers[1].weights;
        assert_eq!(w.len(), 4608);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 144.0;
        assert!((var - target).abs() <= 0.2 * target, "variance {var}");
    }

    #[test]
    fn bad_configs() {
        let mut cfg = NetConfig::desk();
        cfg.input_w = 72;
        assert!(matches!(init(&cfg, 0), Err(NetError::BadConfig(_))));
        let mut cfg = NetConfig::desk();
        cfg.blocks[0].kernel = 2;
        assert!(matches!(init(&cfg, 0), Err(NetError::BadConfig(_))));
        let mut cfg = NetConfig::desk();
        cfg.dropout_rate = 1.0;
        assert!(matches!(init(&cfg, 0), Err(NetError::BadConfig(_))));
    }

    #[test]
    fn output_shape_follows_stride() {
        let cfg = NetConfig::desk();
        let p = init(&cfg, 1).unwrap();
        let (pred, _) = forward(&p, &cfg, &textured(64, 64, 3, 0.0), false, 0).unwrap();
        assert_eq!(cfg.grid(), GridSpec { stride: 16, grid_w: 4, grid_h: 4 });
        assert_eq!(pred.coverage.len(), 16);
        assert_eq!(pred.bbox.len(), 16);
        assert!(pred.coverage.iter().all(|c| *c > 0.0 && *c < 1.0));

        let wide = NetConfig {
            blocks: vec![Block::new(5, 3, true), Block::new(3, 5, false), Block::new(9, 3, true)],
            ..NetConfig::desk()
        };
        let p = init(&wide, 1).unwrap();
        let (pred, _) = forward(&p, &wide, &textured(64, 64, 3, 0.0), false, 0).unwrap();
        assert_eq!(pred.coverage.len(), 16 * 16);
    }

    #[test]
    fn eval_forward_is_deterministic_and_zero_net_is_neutral() {
        let cfg = tiny_cfg();
        let img = textured(16, 16, 3, 0.3);
        let p = init(&cfg, 3).unwrap();
        let a = forward(&p, &cfg, &img, false, 1).unwrap().0;
        let b = forward(&p, &cfg, &img, false, 99).unwrap().0;
        assert_eq!(a, b);

        let zero = NetParams::zeros(&cfg).unwrap();
        let (pred, _) = forward(&zero, &cfg, &img, true, 5).unwrap();
        assert!(pred.coverage.iter().all(|c| *c == 0.5));
        assert!(pred.bbox.iter().all(|b| *b == [0.0; 4]));
    }

    #[test]
    fn shape_errors() {
        let cfg = tiny_cfg();
        let p = init(&cfg, 3).unwrap();
        assert!(matches!(
            forward(&p, &cfg, &textured(8, 16, 3, 0.0), false, 0),
            Err(NetError::ShapeMismatch(_))
        ));
        let (_, cache) = forward(&p, &cfg, &textured(16, 16, 3, 0.0), false, 0).unwrap();
        let other = init(&NetConfig::desk(), 0).unwrap();
        assert_eq!(
            backward(&cache, &other, &[0.0; 16], &[[0.0; 4]; 16]).unwrap_err(),
            NetError::CacheMismatch
        );
    }

    #[test]
    fn backward_is_linear_in_output_gradients() {
        let cfg = tiny_cfg();
        let p = init(&cfg, 11).unwrap();
        let (_, cache) = forward(&p, &cfg, &textured(16, 16, 3, 1.0), true, 4).unwrap();
        let zero = backward(&cache, &p, &[0.0; 16], &[[0.0; 4]; 16]).unwrap();
        assert!(zero.buffers().flatten().all(|g| *g == 0.0));

        let gc: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let g1 = backward(&cache, &p, &gc, &[[0.0; 4]; 16]).unwrap();
        let doubled: Vec<f64> = gc.iter().map(|g| 2.0 * g).collect();
        let g2 = backward(&cache, &p, &doubled, &[[0.0; 4]; 16]).unwrap();
        for (a, b) in g1.buffers().flatten().zip(g2.buffers().flatten()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn dropout_preserves_expectation() {
        let cfg = NetConfig {
            input_w: 8,
            input_h: 8,
            input_channels: 1,
            blocks: vec![Block::new(8, 3, true)],
            dropout_rate: 0.5,
            bbox_scale: 1.0,
        };
        let p = init(&cfg, 5).unwrap();
        let img = textured(8, 8, 1, 0.2);
        let (eval, _) = forward(&p, &cfg, &img, false, 0).unwrap();
        let (cell, comp) = (0..16)
            .flat_map(|i| (0..4).map(move |c| (i, c)))
            .max_by(|a, b| eval.bbox[a.0][a.1].abs().total_cmp(&eval.bbox[b.0][b.1].abs()))
            .unwrap();
        let trials = 10_000;
        let mean = (0..trials)
            .map(|s| forward(&p, &cfg, &img, true, s).unwrap().0.bbox[cell][comp])
            .sum::<f64>()
            / trials as f64;
        let target = eval.bbox[cell][comp];
        assert!((mean - target).abs() <= 0.02 * target.abs(), "{mean} vs {target}");
    }

    /// Central differences of a smooth scalar of the outputs,
    /// `sum(a . coverage) + sum(b . bbox)`, against the analytic gradient.
    #[test]
    fn finite_differences() {
        let cfg = tiny_cfg();
        let mut p = init(&cfg, 21).unwrap();
        for (i, b) in p.buffers_mut().enumerate() {
            for (j, v) in b.iter_mut().enumerate() {
                if *v == 0.0 {
                    *v = 0.05 * ((i * 31 + j) as f64 * 0.61).sin();
                }
            }
        }
        let img = textured(16, 16, 3, 0.7);
        let a: Vec<f64> = (0..16).map(|i| (i as f64 * 0.9).cos()).collect();
        let b: Vec<[f64; 4]> = (0..16)
            .map(|i| std::array::from_fn(|c| ((i * 4 + c) as f64 * 0.41).sin()))
            .collect();
        let objective = |p: &NetParams| {
            let (pred, _) = forward(p, &cfg, &img, true, 17).unwrap();
            let mut s = 0.0;
            for i in 0..16 {
                s += a[i] * pred.coverage[i];
                for c in 0..4 {
                    s += b[i][c] * pred.bbox[i][c];
                }
            }
            s
        };
        let (_, cache) = forward(&p, &cfg, &img, true, 17).unwrap();
        let analytic = backward(&cache, &p, &a, &b).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let n_buffers = p.buffers().count();
        for bi in 0..n_buffers {
            let len = p.buffers().nth(bi).unwrap().len();
            for j in 0..len {
                let orig = p.buffers().nth(bi).unwrap()[j];
                p.buffers_mut().nth(bi).unwrap()[j] = orig + h;
                let up = objective(&p);
                p.buffers_mut().nth(bi).unwrap()[j] = orig - h;
                let down = objective(&p);
                p.buffers_mut().nth(bi).unwrap()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let exact = analytic.buffers().nth(bi).unwrap()[j];
                let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn checkpoint_round_trip_and_rejection() {
        let cfg = tiny_cfg();
        let p = init(&cfg, 9).unwrap();
        let bytes = save_checkpoint(&p, &cfg);
        assert_eq!(&bytes[..4], b"VSHD");
        assert_eq!(bytes.len(), 40 + 8 * p.len());
        assert_eq!(load_checkpoint(&bytes, &cfg).unwrap(), p);

        let mut other = cfg.clone();
        other.blocks[1].out_channels = 7;
        assert!(matches!(load_checkpoint(&bytes, &other), Err(NetError::Checkpoint(_))));
        assert!(matches!(
            load_checkpoint(&bytes[..bytes.len() - 8], &cfg),
            Err(NetError::Checkpoint(_))
        ));
    }

    #[test]
    fn block_spec_parsing() {
        let cfg = NetConfig::desk();
        assert_eq!(NetConfig::parse_blocks(&cfg.blocks_string()).unwrap(), cfg.blocks);
        assert!(NetConfig::parse_blocks("16:3").is_err());
        assert!(NetConfig::parse_blocks("16:3:maybe").is_err());
    }
}
