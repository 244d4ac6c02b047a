//! Saliency maps and the multiplied visual salient image (MVSI).
//!
//! The built-in map is the frequency-tuned method: distance, per pixel,
//! between the image's global mean colour and a lightly blurred copy.
//! Externally computed maps (for example from a deep saliency model) can be
//! loaded from PGM files instead.

use crate::raster::{self, Image, RasterError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SaliencyError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("saliency map must be single-channel (P5)")]
    NotGrayscale,
    #[error("saliency map is {map_w}x{map_h} but image is {img_w}x{img_h}")]
    DimensionMismatch {
        map_w: usize,
        map_h: usize,
        img_w: usize,
        img_h: usize,
    },
    #[error("modulation gain {0} outside (0, 1]")]
    BadAlpha(f64),
    #[error("external saliency requested but no map supplied")]
    MissingExternalMap,
}

/// Single-channel saliency field with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Wraps raw values, min-max normalizing them. A flat field becomes all
    /// zeros.
    pub fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        let mut map = Self {
            width,
            height,
            values,
        };
        map.normalize();
        map
    }

    /// Takes the values of a single-channel image as they are.
    pub fn from_image(img: &Image) -> Self {
        assert_eq!(img.channels(), 1, "saliency maps are single-channel");
        Self {
            width: img.width(),
            height: img.height(),
            values: img.data().to_vec(),
        }
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.width, self.height, 1, self.values.clone())
            .expect("saliency values are kept in [0,1]")
    }

    fn normalize(&mut self) {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        let range = hi - lo;
        if !(range > 0.0) {
            self.values.iter_mut().for_each(|v| *v = 0.0);
        } else {
            self.values
                .iter_mut()
                .for_each(|v| *v = ((*v - lo) / range).clamp(0.0, 1.0));
        }
    }
}

/// Gain applied to the saliency map before multiplication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationCfg {
    pub alpha: f64,
}

impl ModulationCfg {
    pub const DEFAULT_ALPHA: f64 = 0.8;

    pub fn new(alpha: f64) -> Result<Self, SaliencyError> {
        if alpha > 0.0 && alpha <= 1.0 {
            Ok(Self { alpha })
        } else {
            Err(SaliencyError::BadAlpha(alpha))
        }
    }
}

impl Default for ModulationCfg {
    fn default() -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
        }
    }
}

pub const DEFAULT_SIGMA: f64 = 1.0;

/// Where the map multiplied into the detector input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyMode {
    /// Feed the raw image.
    Off,
    /// Frequency-tuned map computed on the fly.
    Builtin,
    /// Precomputed map supplied with each image.
    External,
}

impl std::str::FromStr for SaliencyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(Self::Off),
            "builtin" => Ok(Self::Builtin),
            "external" => Ok(Self::External),
            other => Err(format!("unknown saliency mode {other:?}")),
        }
    }
}

impl std::fmt::Display for SaliencyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Off => "off",
            Self::Builtin => "builtin",
            Self::External => "external",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencySettings {
    pub mode: SaliencyMode,
    pub sigma: f64,
    pub modulation: ModulationCfg,
}

impl SaliencySettings {
    pub fn off() -> Self {
        Self {
            mode: SaliencyMode::Off,
            ..Self::default()
        }
    }

    pub fn builtin() -> Self {
        Self::default()
    }

    /// Detector input for `img`: the MVSI, or `img` itself when off.
    pub fn apply(
        &self,
        img: &Image,
        external: Option<&SaliencyMap>,
    ) -> Result<Image, SaliencyError> {
        match self.mode {
            SaliencyMode::Off => Ok(img.clone()),
            SaliencyMode::Builtin => {
                modulate(img, &frequency_tuned_saliency(img, self.sigma), self.modulation)
            }
            SaliencyMode::External => {
                let map = external.ok_or(SaliencyError::MissingExternalMap)?;
                modulate(img, map, self.modulation)
            }
        }
    }
}

impl Default for SaliencySettings {
    fn default() -> Self {
        Self {
            mode: SaliencyMode::Builtin,
            sigma: DEFAULT_SIGMA,
            modulation: ModulationCfg::default(),
        }
    }
}

/// Frequency-tuned saliency: `|| mean(img) - blur(img, sigma) ||` per pixel,
/// min-max normalized.
pub fn frequency_tuned_saliency(img: &Image, sigma: f64) -> SaliencyMap {
    let mean = img.channel_means();
    let blurred = raster::gaussian_blur(img, sigma);
    let values = blurred
        .data()
        .chunks_exact(img.channels())
        .map(|px| {
            px.iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    SaliencyMap::from_raw(img.width(), img.height(), values)
}

/// Loads a P5 map, resizes it to the target size and renormalizes.
pub fn load_external_map(
    bytes: &[u8],
    target_w: usize,
    target_h: usize,
) -> Result<SaliencyMap, SaliencyError> {
    let img = raster::load_pnm(bytes)?;
    if img.channels() != 1 {
        return Err(SaliencyError::NotGrayscale);
    }
    let resized = raster::resize_bilinear(&img, target_w, target_h);
    Ok(SaliencyMap::from_raw(
        target_w,
        target_h,
        resized.data().to_vec(),
    ))
}

/// `MVSI(x, y, c) = img(x, y, c) * alpha * map(x, y)`.
pub fn modulate(
    img: &Image,
    map: &SaliencyMap,
    cfg: ModulationCfg,
) -> Result<Image, SaliencyError> {
    if map.width != img.width() || map.height != img.height() {
        return Err(SaliencyError::DimensionMismatch {
            map_w: map.width,
            map_h: map.height,
            img_w: img.width(),
            img_h: img.height(),
        });
    }
    let c = img.channels();
    let data = img
        .data()
        .chunks_exact(c)
        .zip(&map.values)
        .flat_map(|(px, s)| px.iter().map(move |v| v * (cfg.alpha * s)))
        .collect();
    Ok(Image::new(img.width(), img.height(), c, data).expect("product stays in [0,1]"))
}
