//! Real-valued image rasters, binary PGM/PPM I/O, and the geometric and
//! photometric primitives the rest of the pipeline is built from.
//!
//! Pixel values live in `[0, 1]` internally; quantization to 8 bits only
//! happens in [`save_pnm`].

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("unsupported magic number {0:?} (expected P5 or P6)")]
    UnsupportedMagic(String),
    #[error("bad PNM header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("rotation angle {0} outside [-45, 45] degrees")]
    AngleOutOfRange(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

/// Multi-channel raster, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from raw data, rejecting shape or range violations.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidImage("zero dimension".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(RasterError::InvalidImage(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if data.len() != width * height * channels {
            return Err(RasterError::InvalidImage(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::InvalidImage(format!("value {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && (channels == 1 || channels == 3));
        Self {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Stores `v`, clamped into `[0, 1]`.
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.width * self.height) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Channel-major copy (`c * h * w` layout) for the network input.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }

    fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, RasterError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        token
            .parse::<usize>()
            .map_err(|_| RasterError::BadHeader(format!("{what}: {token:?} is not a number")))
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) file with maxval ≤ 255.
pub fn load_pnm(bytes: &[u8]) -> Result<Image, RasterError> {
    if bytes.len() < 2 {
        return Err(RasterError::UnsupportedMagic(
            String::from_utf8_lossy(bytes).into_owned(),
        ));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(RasterError::UnsupportedMagic(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(RasterError::BadHeader("zero dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(RasterError::BadHeader(format!("maxval {maxval} not in 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(RasterError::BadHeader("missing separator after maxval".into()));
    }
    let payload = &bytes[cur.pos + 1..];
    let expected = width * height * channels;
    if payload.len() < expected {
        return Err(RasterError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let scale = maxval as f64;
    let data = payload[..expected]
        .iter()
        .map(|&b| (b as f64 / scale).min(1.0))
        .collect();
    Ok(Image {
        width,
        height,
        channels,
        data,
    })
}

/// Encodes as `P5` (1 channel) or `P6` (3 channels), maxval 255, rounding
/// half up.
pub fn save_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| quantize(*v)));
    out
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Bilinear resize with the align-corners-false sampling convention.
pub fn resize_bilinear(img: &Image, w: usize, h: usize) -> Image {
    assert!(w >= 1 && h >= 1, "resize target must be at least 1x1");
    if w == img.width && h == img.height {
        return img.clone();
    }
    let sx = img.width as f64 / w as f64;
    let sy = img.height as f64 / h as f64;
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    Image::from_fn(w, h, img.channels, |x, y, c| {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(img.width - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let top = img.get(x0, y0, c) * (1.0 - ax) + img.get(x1, y0, c) * ax;
        let bottom = img.get(x0, y1, c) * (1.0 - ax) + img.get(x1, y1, c) * ax;
        top * (1.0 - ay) + bottom * ay
    })
}

pub fn hflip(img: &Image) -> Image {
    Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        img.get(img.width - 1 - x, y, c)
    })
}

/// Largest accepted rotation magnitude, in degrees.
pub const MAX_ROTATION_DEG: f64 = 45.0;

/// Maps a continuous point through a rotation by `theta_deg` about the
/// centre of a `width` x `height` frame. Positive angles turn content
/// counter-clockwise as displayed (y axis pointing down).
pub fn rotate_point(x: f64, y: f64, width: usize, height: usize, theta_deg: f64) -> (f64, f64) {
    let (s, c) = theta_deg.to_radians().sin_cos();
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let dx = x - cx;
    let dy = y - cy;
    (cx + dx * c + dy * s, cy - dx * s + dy * c)
}

/// Rotates about the image centre by inverse mapping with bilinear
/// sampling; samples falling outside the frame read as 0.
pub fn rotate(img: &Image, theta_deg: f64) -> Result<Image, RasterError> {
    if !theta_deg.is_finite() || theta_deg.abs() > MAX_ROTATION_DEG {
        return Err(RasterError::AngleOutOfRange(theta_deg.to_string()));
    }
    if theta_deg == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width as isize, img.height as isize);
    let fetch = |x: isize, y: isize, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            img.get(x as usize, y as usize, c)
        }
    };
    // Inverse map: rotate output pixel centres by -theta.
    Ok(Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        let (sx, sy) = rotate_point(
            x as f64 + 0.5,
            y as f64 + 0.5,
            img.width,
            img.height,
            -theta_deg,
        );
        let fx = sx - 0.5;
        let fy = sy - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = fx - x0;
        let ay = fy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = fetch(x0, y0, c) * (1.0 - ax) + fetch(x0 + 1, y0, c) * ax;
        let bottom = fetch(x0, y0 + 1, c) * (1.0 - ax) + fetch(x0 + 1, y0 + 1, c) * ax;
        top * (1.0 - ay) + bottom * ay
    }))
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma = 0` is the
/// identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be a finite non-negative value");
    if sigma == 0.0 {
        return img.clone();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let horizontal = Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| {
                let sx = (x as isize + k as isize - r).clamp(0, w - 1) as usize;
                t * img.get(sx, y, c)
            })
            .sum()
    });
    Image::from_fn(img.width, img.height, img.channels, |x, y, c| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| {
                let sy = (y as isize + k as isize - r).clamp(0, h - 1) as usize;
                t * horizontal.get(x, sy, c)
            })
            .sum()
    })
}
