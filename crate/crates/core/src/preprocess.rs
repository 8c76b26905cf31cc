//! Fully automated image preparation: background-difference cropping,
//! intensity rescaling, bilinear resizing, laterality flipping, plus the
//! sequence eligibility filter.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{Stage, VisitSequence};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Smallest accepted raw image side.
pub const MIN_RAW_SIDE: usize = 16;
/// Side of each square corner patch sampled by [`estimate_background`].
pub const CORNER_PATCH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
}

impl fmt::Display for Laterality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Laterality::Left => "left",
            Laterality::Right => "right",
        })
    }
}

impl FromStr for Laterality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "L" | "OS" => Ok(Laterality::Left),
            "right" | "R" | "OD" => Ok(Laterality::Right),
            other => Err(Error::Input(format!("unknown laterality {other:?}"))),
        }
    }
}

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_RAW_SIDE || height < MIN_RAW_SIDE {
            return Err(Error::Input(format!(
                "image {width}×{height} is smaller than the {MIN_RAW_SIDE}-pixel minimum"
            )));
        }
        Self::unchecked(width, height, pixels)
    }

    fn unchecked(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(RawImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Input("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(Error::Input(format!("not a binary PPM (magic {:?})", fields[0])));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Input(format!("invalid PPM {what} {s:?}")))
        };
        let (width, height, maxval) = (
            num(&fields[1], "width")?,
            num(&fields[2], "height")?,
            num(&fields[3], "maxval")?,
        );
        if maxval != 255 {
            return Err(Error::Input(format!("unsupported PPM maxval {maxval}, expected 255")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = width * height * 3;
        if bytes.len() < pos + need {
            return Err(Error::Input(format!(
                "truncated PPM raster: {} of {need} bytes",
                bytes.len().saturating_sub(pos)
            )));
        }
        Self::new(width, height, bytes[pos..pos + need].to_vec())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Foreground threshold on `max_c |I − background| / 255`.
    pub crop_offset: f64,
    pub target_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop_offset: 0.04,
            target_size: 64,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.crop_offset > 0.0 && self.crop_offset < 1.0) {
            return Err(Error::Config(format!(
                "crop_offset {} outside (0, 1)",
                self.crop_offset
            )));
        }
        if self.target_size < MIN_RAW_SIDE {
            return Err(Error::Config(format!(
                "target_size {} below the {MIN_RAW_SIDE}-pixel minimum",
                self.target_size
            )));
        }
        Ok(())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-channel median over the four `4×4` corner patches.
pub fn estimate_background(image: &RawImage) -> [f64; 3] {
    let (w, h, p) = (image.width, image.height, CORNER_PATCH);
    let mut samples: [Vec<f64>; 3] = Default::default();
    for (r0, c0) in [(0, 0), (0, w - p), (h - p, 0), (h - p, w - p)] {
        for r in r0..r0 + p {
            for c in c0..c0 + p {
                for (ch, v) in image.pixel(r, c).into_iter().enumerate() {
                    samples[ch].push(f64::from(v));
                }
            }
        }
    }
    samples.map(|mut s| median(&mut s))
}

/// Inclusive-exclusive bounding box `(row0, col0, row1, col1)` of the foreground.
pub fn content_box(image: &RawImage, offset: f64) -> Result<(usize, usize, usize, usize)> {
    let bg = estimate_background(image);
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for r in 0..image.height {
        for c in 0..image.width {
            let diff = image
                .pixel(r, c)
                .iter()
                .zip(bg)
                .map(|(&v, b)| (f64::from(v) - b).abs() / 255.0)
                .fold(0.0, f64::max);
            if diff > offset {
                r0 = r0.min(r);
                c0 = c0.min(c);
                r1 = r1.max(r + 1);
                c1 = c1.max(c + 1);
            }
        }
    }
    if r1 == 0 {
        return Err(Error::Preprocess(
            "image is background only (empty foreground mask)".into(),
        ));
    }
    Ok((r0, c0, r1, c1))
}

/// Tight crop around pixels differing from the background color by more than the offset.
pub fn crop_to_content(image: &RawImage, config: &PreprocessConfig) -> Result<RawImage> {
    let (r0, c0, r1, c1) = content_box(image, config.crop_offset)?;
    let mut pixels = Vec::with_capacity((r1 - r0) * (c1 - c0) * 3);
    for r in r0..r1 {
        let start = (r * image.width + c0) * 3;
        pixels.extend_from_slice(&image.pixels[start..start + (c1 - c0) * 3]);
    }
    // Crops may legitimately be smaller than the raw-image minimum.
    RawImage::unchecked(c1 - c0, r1 - r0, pixels)
}

/// `H×W×3` tensor of `value / 255`.
pub fn rescale_intensity(image: &RawImage) -> Tensor {
    let data = image.pixels.iter().map(|&v| f64::from(v) / 255.0).collect();
    Tensor::new(vec![image.height, image.width, 3], data).expect("raster shape")
}

fn hwc(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::shape("image", "H×W×C", format!("{:?}", t.shape()))),
    }
}

/// Bilinear resampling to `out_h×out_w` with half-pixel centers: output pixel
/// `i` samples source coordinate `(i + 0.5)·in/out − 0.5`, clamped to the edge.
pub fn resize_to(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = hwc(image)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Input("resize target must be positive".into()));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let (rows, cols) = (taps(out_h, h), taps(out_w, w));
    let src = image.data();
    let at = |r: usize, col: usize, ch: usize| src[(r * w + col) * c + ch];
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            for ch in 0..c {
                let top = at(r0, c0, ch) * (1.0 - fx) + at(r0, c1, ch) * fx;
                let bottom = at(r1, c0, ch) * (1.0 - fx) + at(r1, c1, ch) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], data)
}

/// Square bilinear resize.
pub fn resize(image: &Tensor, target: usize) -> Result<Tensor> {
    let (h, w, _) = hwc(image)?;
    if h < 2 || w < 2 {
        return Err(Error::Input(format!(
            "cannot resize a {h}×{w} image; need at least 2×2"
        )));
    }
    resize_to(image, target, target)
}

/// Mirror columns: column `j` moves to `W − 1 − j`.
pub fn flip_horizontal(image: &Tensor) -> Result<Tensor> {
    let (h, w, c) = hwc(image)?;
    let src = image.data();
    let mut data = Vec::with_capacity(src.len());
    for r in 0..h {
        for col in (0..w).rev() {
            let i = (r * w + col) * c;
            data.extend_from_slice(&src[i..i + c]);
        }
    }
    Tensor::new(vec![h, w, c], data)
}

pub fn flip_if_right(image: &Tensor, laterality: Laterality) -> Result<Tensor> {
    match laterality {
        Laterality::Left => Ok(image.clone()),
        Laterality::Right => flip_horizontal(image),
    }
}

/// Crop → rescale → resize → flip right eyes into left-eye orientation.
pub fn preprocess_image(image: &RawImage, laterality: Laterality, config: &PreprocessConfig) -> Result<Tensor> {
    config.validate()?;
    let cropped = crop_to_content(image, config)?;
    let scaled = rescale_intensity(&cropped);
    let resized = resize_to(&scaled, config.target_size, config.target_size)?;
    flip_if_right(&resized, laterality)
}

/// Raw-image pixel `(row, col)` nearest to the centre of preprocessed pixel
/// `(row, col)`, inverting the flip, the half-pixel resize and the crop.
pub fn raw_pixel_of(
    content: (usize, usize, usize, usize),
    laterality: Laterality,
    target: usize,
    row: usize,
    col: usize,
) -> (usize, usize) {
    let (r0, c0, r1, c1) = content;
    let col = match laterality {
        Laterality::Left => col,
        Laterality::Right => target - 1 - col,
    };
    let back = |i: usize, inp: usize| {
        let s = ((i as f64 + 0.5) * inp as f64 / target as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        s.round() as usize
    };
    (r0 + back(row, r1 - r0), c0 + back(col, c1 - c0))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

pub const REASON_PROGRESSED: &str = "already progressed";
pub const REASON_INSUFFICIENT: &str = "insufficient visits";
pub const REASON_EXCESS: &str = "excess visits";

/// Keep sequences with exactly `observed` visits, none of them advanced.
pub fn filter_eligible(records: Vec<VisitSequence>, observed: usize) -> (Vec<VisitSequence>, Vec<Exclusion>) {
    let mut kept = Vec::with_capacity(records.len());
    let mut log = Vec::new();
    for rec in records {
        let reason = if rec.visits.iter().any(|v| v.stage == Stage::Advanced) {
            Some(REASON_PROGRESSED)
        } else if rec.visits.len() < observed {
            Some(REASON_INSUFFICIENT)
        } else if rec.visits.len() > observed {
            Some(REASON_EXCESS)
        } else {
            None
        };
        match reason {
            Some(r) => log.push(Exclusion {
                id: rec.id.clone(),
                reason: r.into(),
            }),
            None => kept.push(rec),
        }
    }
    (kept, log)
}
