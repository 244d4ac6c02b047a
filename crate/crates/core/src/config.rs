//! `key = value` run configuration shared by the CLI subcommands.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors so a
//! typo cannot silently fall back to a default.

use std::fmt::Write as _;

use thiserror::Error;

use crate::datasets::SynthCfg;
use crate::inference::{ClusterCfg, ClusterScore};
use crate::network::NetConfig;
use crate::saliency::{ModulationCfg, SaliencyMode, SaliencySettings};
use crate::training::{LossWeights, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub saliency: SaliencyMode,
    pub alpha: f64,
    pub sigma: f64,
    pub cluster: ClusterCfg,
    pub synth: SynthCfg,
    /// train / val / test fractions used by `synth`.
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::desk(),
            train: TrainConfig::desk(),
            weights: LossWeights::default(),
            saliency: SaliencyMode::Builtin,
            alpha: ModulationCfg::DEFAULT_ALPHA,
            sigma: crate::saliency::DEFAULT_SIGMA,
            cluster: ClusterCfg::default(),
            synth: SynthCfg::default(),
            split: [300.0 / 360.0, 0.0, 60.0 / 360.0],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("{key}: expected a boolean, got {v:?}")),
    }
}

/// `64x48` -> (64, 48); a bare `64` means square.
fn parse_size(key: &str, v: &str) -> Result<(usize, usize), String> {
    match v.split_once('x') {
        Some((w, h)) => Ok((parse_num(key, w.trim())?, parse_num(key, h.trim())?)),
        None => {
            let s = parse_num(key, v)?;
            Ok((s, s))
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut stride = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: String| ConfigError::Syntax { line: n + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "stride" {
                stride = Some(parse_num::<usize>(key, value).map_err(syntax)?);
                continue;
            }
            cfg.set(key, value).map_err(syntax)?;
        }
        if let Some(s) = stride {
            if s != cfg.net.stride_product() {
                return Err(ConfigError::Invalid(format!(
                    "stride {s} does not match blocks {} (stride {})",
                    cfg.net.blocks_string(),
                    cfg.net.stride_product()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "epochs" => self.train.epochs = parse_num(key, v)?,
            "iterations" => self.train.iterations_per_epoch = parse_num(key, v)?,
            "batch_size" => self.train.batch_size = parse_num(key, v)?,
            "base_lr" => self.train.base_lr = parse_num(key, v)?,
            "lr_decay_start" => self.train.lr_decay_start_epoch = parse_num(key, v)?,
            "lr_decay_every" => self.train.lr_decay_every = parse_num(key, v)?,
            "lr_decay_factor" => self.train.lr_decay_factor = parse_num(key, v)?,
            "augment" => self.train.augment = parse_bool(key, v)?,
            "seed" => {
                self.train.seed = parse_num(key, v)?;
                self.synth.seed = self.train.seed;
            }
            "w_cov" => self.weights.w_cov = parse_num(key, v)?,
            "w_box" => self.weights.w_box = parse_num(key, v)?,
            "saliency" => self.saliency = v.parse()?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "sigma" => self.sigma = parse_num(key, v)?,
            "input_size" => {
                let (w, h) = parse_size(key, v)?;
                self.net.input_w = w;
                self.net.input_h = h;
            }
            "channels" => self.net.input_channels = parse_num(key, v)?,
            "blocks" => {
                self.net.blocks = NetConfig::parse_blocks(v).map_err(|e| e.to_string())?
            }
            "dropout" => self.net.dropout_rate = parse_num(key, v)?,
            "bbox_scale" => self.net.bbox_scale = parse_num(key, v)?,
            "coverage_threshold" => {
                let t = parse_num(key, v)?;
                self.cluster.coverage_threshold = t;
                self.train.coverage_threshold = t;
            }
            "cluster_iou" => self.cluster.iou_threshold = parse_num(key, v)?,
            "min_cluster_size" => self.cluster.min_cluster_size = parse_num(key, v)?,
            "cluster_score" => {
                self.cluster.score = match v {
                    "sum" => ClusterScore::Sum,
                    "max" => ClusterScore::Max,
                    _ => return Err(format!("cluster_score: expected sum|max, got {v:?}")),
                }
            }
            "synth_size" => self.synth.image_size = parse_num(key, v)?,
            "synth_count" => self.synth.count = parse_num(key, v)?,
            "synth_humans" => {
                let (lo, hi) = v
                    .split_once("..")
                    .ok_or_else(|| format!("synth_humans: expected lo..hi, got {v:?}"))?;
                self.synth.humans_per_image = (parse_num(key, lo.trim())?, parse_num(key, hi.trim())?);
            }
            "clutter_density" => self.synth.clutter_density = parse_num(key, v)?,
            "occlusion_prob" => self.synth.occlusion_prob = parse_num(key, v)?,
            "split" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| parse_num(key, p.trim()))
                    .collect::<Result<_, _>>()?;
                self.split = parts
                    .try_into()
                    .map_err(|_| "split: expected three fractions train,val,test".to_string())?;
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.net.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.modulation()?;
        if !(self.sigma > 0.0) {
            return Err(invalid(format!("sigma {} must be positive", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.cluster.iou_threshold) || self.cluster.min_cluster_size == 0 {
            return Err(invalid("cluster_iou must be in [0,1] and min_cluster_size positive".into()));
        }
        Ok(())
    }

    pub fn modulation(&self) -> Result<ModulationCfg, ConfigError> {
        ModulationCfg::new(self.alpha).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn saliency_settings(&self) -> Result<SaliencySettings, ConfigError> {
        Ok(SaliencySettings {
            mode: self.saliency,
            sigma: self.sigma,
            modulation: self.modulation()?,
        })
    }

    /// Synthetic settings with the stride of the configured network.
    pub fn synth_cfg(&self) -> SynthCfg {
        SynthCfg {
            stride: self.net.stride_product(),
            ..self.synth.clone()
        }
    }

    /// Writes every key; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let t = &self.train;
        let (lo, hi) = self.synth.humans_per_image;
        let lines: Vec<(&str, String)> = vec![
            ("epochs", t.epochs.to_string()),
            ("iterations", t.iterations_per_epoch.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("base_lr", t.base_lr.to_string()),
            ("lr_decay_start", t.lr_decay_start_epoch.to_string()),
            ("lr_decay_every", t.lr_decay_every.to_string()),
            ("lr_decay_factor", t.lr_decay_factor.to_string()),
            ("augment", t.augment.to_string()),
            ("seed", t.seed.to_string()),
            ("w_cov", self.weights.w_cov.to_string()),
            ("w_box", self.weights.w_box.to_string()),
            ("saliency", self.saliency.to_string()),
            ("alpha", self.alpha.to_string()),
            ("sigma", self.sigma.to_string()),
            ("input_size", format!("{}x{}", self.net.input_w, self.net.input_h)),
            ("channels", self.net.input_channels.to_string()),
            ("blocks", self.net.blocks_string()),
            ("stride", self.net.stride_product().to_string()),
            ("dropout", self.net.dropout_rate.to_string()),
            ("bbox_scale", self.net.bbox_scale.to_string()),
            ("coverage_threshold", self.cluster.coverage_threshold.to_string()),
            ("cluster_iou", self.cluster.iou_threshold.to_string()),
            ("min_cluster_size", self.cluster.min_cluster_size.to_string()),
            (
                "cluster_score",
                match self.cluster.score {
                    ClusterScore::Sum => "sum".into(),
                    ClusterScore::Max => "max".into(),
                },
            ),
            ("synth_size", self.synth.image_size.to_string()),
            ("synth_count", self.synth.count.to_string()),
            ("synth_humans", format!("{lo}..{hi}")),
            ("clutter_density", self.synth.clutter_density.to_string()),
            ("occlusion_prob", self.synth.occlusion_prob.to_string()),
            (
                "split",
                self.split.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            ),
        ];
        for (k, v) in lines {
            let _ = writeln!(o, "{k} = {v}");
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::parse(
            "# toy\nepochs = 3\nlr_decay_start = 2\nbase_lr = 5e-4\nsaliency = off\nblocks = 8:3:pool, 8:3:pool\nstride = 4\ninput_size = 16x32\nsplit = 0.5, 0.25, 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr_decay_start_epoch, 2);
        assert_eq!(cfg.train.base_lr, 5e-4);
        assert_eq!(cfg.saliency, SaliencyMode::Off);
        assert_eq!(cfg.net.stride_product(), 4);
        assert_eq!((cfg.net.input_w, cfg.net.input_h), (16, 32));
        assert_eq!(cfg.split, [0.5, 0.25, 0.25]);
        let changed = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(changed, cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("epochs 3"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("\nepoch = 3"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(RunConfig::parse("stride = 8"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("alpha = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("saliency = maybe"), Err(ConfigError::Syntax { .. })));
        assert!(RunConfig::parse("epochs = 10\nlr_decay_start = 20").is_err());
    }
}
