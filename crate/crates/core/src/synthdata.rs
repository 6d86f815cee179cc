//! Deterministic synthetic segmentation benchmark.
//!
//! Each sample is a noisy intensity image containing one foreground blob,
//! its ground-truth mask (used only for evaluation), and a bounding-box
//! annotation derived from the mask with an optional margin.
//!
//! On-disk layout written by [`save`]:
//!
//! ```text
//! <dir>/dataset.toml          generation config
//! <dir>/manifest.csv          sample_id,H,W,margin,box   (box = top:left:bottom:right)
//! <dir>/boxes.csv             sample_id,top,left,bottom,right   (no header)
//! <dir>/images/<id>.img       b"BXSIMG01", u32 H, u32 W, H*W f64 little-endian
//! <dir>/masks/<id>.mask       b"BXSMSK01", u32 H, u32 W, H*W u8
//! ```
//!
//! Sample ids are `train_NNNN` or `val_NNNN`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::boxprior::{BoundingBox, LabelMask};

const IMAGE_MAGIC: &[u8; 8] = b"BXSIMG01";
const MASK_MAGIC: &[u8; 8] = b"BXSMSK01";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("mask has no foreground pixel")]
    EmptyMask,
    #[error("{}: parse error at byte {offset}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        reason: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Ellipse,
    TwoLobe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Training samples.
    pub n_samples: usize,
    /// Validation samples, generated from the same distribution.
    pub n_val: usize,
    pub height: usize,
    pub width: usize,
    pub shape: ShapeFamily,
    /// Blob area as a fraction of the image area, `[min, max]`.
    pub size_range: [f64; 2],
    pub fg_mean: f64,
    pub bg_mean: f64,
    pub noise_std: f64,
    /// Scales the foreground/background mean difference; 0 removes the signal.
    pub contrast: f64,
    /// Pixels added to every side of the tight box before clamping.
    pub margin: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_val: 40,
            height: 64,
            width: 64,
            shape: ShapeFamily::Ellipse,
            size_range: [0.04, 0.12],
            fg_mean: 0.65,
            bg_mean: 0.35,
            noise_std: 0.12,
            contrast: 1.0,
            margin: 0,
            seed: 0,
        }
    }
}

/// Largest semi-axis ratio used for ellipses and lobes.
const MAX_ASPECT: f64 = 1.6;

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.height < 4 || self.width < 4 {
            return bad(format!("image {}x{} is too small", self.height, self.width));
        }
        let [lo, hi] = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("size range [{lo}, {hi}] must satisfy 0 < min <= max < 1"));
        }
        // Worst case: the largest blob at the most elongated aspect must fit
        // with one free pixel on each side.
        let area = hi * (self.height * self.width) as f64;
        let long = (area * MAX_ASPECT / std::f64::consts::PI).sqrt();
        let reach = match self.shape {
            ShapeFamily::Ellipse => long,
            // two lobes of half the area whose centres sit one lobe radius apart
            ShapeFamily::TwoLobe => 2.0 * (area / 2.0 * MAX_ASPECT / std::f64::consts::PI).sqrt(),
        };
        let room = (self.height.min(self.width) as f64 - 2.0) / 2.0;
        if reach >= room {
            return bad(format!(
                "blobs up to {:.0}% of the image cannot fit strictly inside {}x{}",
                hi * 100.0,
                self.height,
                self.width
            ));
        }
        if !(self.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.contrast) {
            return bad("noise_std must be >= 0 and contrast in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[H, W]` intensities in `[0, 1]`.
    pub image: Tensor,
    pub mask: LabelMask,
    pub bbox: BoundingBox,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    /// Same images and masks with every box re-derived at `margin`.
    pub fn with_margin(&self, margin: usize) -> Result<Self, DataError> {
        let rebox = |s: &Sample| -> Result<Sample, DataError> {
            Ok(Sample {
                bbox: derive_box(&s.mask, margin)?,
                ..s.clone()
            })
        };
        Ok(Self {
            config: DatasetConfig {
                margin,
                ..self.config.clone()
            },
            train: self.train.iter().map(rebox).collect::<Result<_, _>>()?,
            val: self.val.iter().map(rebox).collect::<Result<_, _>>()?,
        })
    }
}

/// Per-sample seed, so any sample can be regenerated independently.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mix of both inputs
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate(config: &DatasetConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let train = (0..config.n_samples)
        .map(|i| generate_sample(config, i as u64, format!("train_{i:04}")))
        .collect::<Result<_, _>>()?;
    let val = (0..config.n_val)
        .map(|i| generate_sample(config, (config.n_samples + i) as u64, format!("val_{i:04}")))
        .collect::<Result<_, _>>()?;
    Ok(Dataset {
        config: config.clone(),
        train,
        val,
    })
}

/// An ellipse given by centre, semi-axes and rotation.
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }

    /// Half extents of the axis-aligned bounding rectangle.
    fn half_extent(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (hy, hx)
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, area: f64) -> Ellipse {
    let aspect = rng.random_range(1.0..MAX_ASPECT);
    let a = (area * aspect / std::f64::consts::PI).sqrt();
    Ellipse {
        cy: 0.0,
        cx: 0.0,
        a,
        b: a / aspect,
        angle: rng.random_range(0.0..std::f64::consts::PI),
    }
}

fn generate_sample(config: &DatasetConfig, index: u64, id: String) -> Result<Sample, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, index));
    let (h, w) = (config.height, config.width);
    let frac = rng.random_range(config.size_range[0]..=config.size_range[1]);
    let area = frac * (h * w) as f64;

    // Blob parts relative to the origin, then placed so the whole blob keeps
    // one free pixel to the frame.
    let mut parts = match config.shape {
        ShapeFamily::Ellipse => vec![random_ellipse(&mut rng, area)],
        ShapeFamily::TwoLobe => {
            let first = random_ellipse(&mut rng, area / 2.0);
            let mut second = random_ellipse(&mut rng, area / 2.0);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = 0.8 * (first.b + second.b).max(first.a.min(second.a));
            second.cy = dist * dir.sin();
            second.cx = dist * dir.cos();
            vec![first, second]
        }
    };
    let (mut y0, mut y1, mut x0, mut x1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for e in &parts {
        let (hy, hx) = e.half_extent();
        y0 = y0.min(e.cy - hy);
        y1 = y1.max(e.cy + hy);
        x0 = x0.min(e.cx - hx);
        x1 = x1.max(e.cx + hx);
    }
    let lo_y = 1.0 - y0;
    let hi_y = h as f64 - 1.0 - y1;
    let lo_x = 1.0 - x0;
    let hi_x = w as f64 - 1.0 - x1;
    if !(lo_y <= hi_y && lo_x <= hi_x) {
        return Err(DataError::Config(format!("blob for {id} does not fit in the frame")));
    }
    let oy = rng.random_range(lo_y..=hi_y);
    let ox = rng.random_range(lo_x..=hi_x);
    for e in &mut parts {
        e.cy += oy;
        e.cx += ox;
    }

    let mut mask = LabelMask::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            if parts.iter().any(|e| e.contains(y, x)) {
                mask.set(r, c, true);
            }
        }
    }
    if mask.count() == 0 {
        let (r, c) = (parts[0].cy as usize, parts[0].cx as usize);
        mask.set(r.min(h - 1), c.min(w - 1), true);
    }

    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| DataError::Config(e.to_string()))?;
    let step = config.contrast * (config.fg_mean - config.bg_mean);
    let pixels = mask
        .data()
        .iter()
        .map(|&m| {
            let base = config.bg_mean + step * f64::from(m);
            let n = if config.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            (base + n).clamp(0.0, 1.0)
        })
        .collect();
    let image = Tensor::new(vec![h, w], pixels).expect("h*w pixels");
    let bbox = derive_box(&mask, config.margin)?;
    Ok(Sample { id, image, mask, bbox })
}

/// Tightest box around the mask, grown by `margin` on each side and clamped
/// to the frame.
pub fn derive_box(mask: &LabelMask, margin: usize) -> Result<BoundingBox, DataError> {
    let (h, w) = (mask.height(), mask.width());
    let (mut top, mut left, mut bottom, mut right) = (usize::MAX, usize::MAX, 0, 0);
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                top = top.min(r);
                left = left.min(c);
                bottom = bottom.max(r + 1);
                right = right.max(c + 1);
            }
        }
    }
    if top == usize::MAX {
        return Err(DataError::EmptyMask);
    }
    Ok(BoundingBox::new(
        top.saturating_sub(margin),
        left.saturating_sub(margin),
        (bottom + margin).min(h),
        (right + margin).min(w),
    ))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn envelope(magic: &[u8; 8], h: usize, w: usize, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out
}

pub fn encode_image(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = envelope(IMAGE_MAGIC, h, w, 8 * h * w);
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_mask(mask: &LabelMask) -> Vec<u8> {
    let mut out = envelope(MASK_MAGIC, mask.height(), mask.width(), mask.data().len());
    out.extend_from_slice(mask.data());
    out
}

/// Parses the common header; returns `(H, W, payload offset)`.
fn parse_header(bytes: &[u8], magic: &[u8; 8], path: &Path) -> Result<(usize, usize), DataError> {
    let err = |offset, reason: &str| DataError::Parse {
        path: path.to_path_buf(),
        offset,
        reason: reason.to_string(),
    };
    if bytes.len() < 8 {
        return Err(err(bytes.len(), "truncated magic"));
    }
    if &bytes[..8] != magic {
        return Err(err(0, "bad magic"));
    }
    if bytes.len() < 16 {
        return Err(err(bytes.len(), "truncated header"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    Ok((h, w))
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Tensor, DataError> {
    let (h, w) = parse_header(bytes, IMAGE_MAGIC, path)?;
    let expected = 16 + 8 * h * w;
    if bytes.len() != expected {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected),
            reason: format!("expected {expected} bytes for a {h}x{w} image, found {}", bytes.len()),
        });
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::new(vec![h, w], data).expect("length checked"))
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<LabelMask, DataError> {
    let (h, w) = parse_header(bytes, MASK_MAGIC, path)?;
    let expected = 16 + h * w;
    if bytes.len() != expected {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected),
            reason: format!("expected {expected} bytes for a {h}x{w} mask, found {}", bytes.len()),
        });
    }
    if let Some(i) = bytes[16..].iter().position(|v| *v > 1) {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            offset: 16 + i,
            reason: "mask values must be 0 or 1".into(),
        });
    }
    Ok(LabelMask::new(h, w, bytes[16..].to_vec()).expect("length checked"))
}

fn box_field(b: &BoundingBox) -> String {
    format!("{}:{}:{}:{}", b.top, b.left, b.bottom, b.right)
}

/// Box annotation lines: `sample_id,top,left,bottom,right`.
pub fn format_boxes<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> String {
    let mut out = String::new();
    for s in samples {
        let b = s.bbox;
        writeln!(out, "{},{},{},{},{}", s.id, b.top, b.left, b.bottom, b.right).expect("string write");
    }
    out
}

pub fn format_manifest(dataset: &Dataset) -> String {
    let mut out = String::from("sample_id,H,W,margin,box\n");
    for s in dataset.train.iter().chain(&dataset.val) {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.id,
            s.height(),
            s.width(),
            dataset.config.margin,
            box_field(&s.bbox)
        )
        .expect("string write");
    }
    out
}

pub fn save(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;
    std::fs::create_dir_all(&masks).map_err(io_err(&masks))?;
    let write = |path: PathBuf, bytes: &[u8]| std::fs::write(&path, bytes).map_err(io_err(&path));
    for s in dataset.train.iter().chain(&dataset.val) {
        write(images.join(format!("{}.img", s.id)), &encode_image(&s.image))?;
        write(masks.join(format!("{}.mask", s.id)), &encode_mask(&s.mask))?;
    }
    let cfg = toml::to_string(&dataset.config).map_err(|e| DataError::Config(e.to_string()))?;
    write(dir.join("dataset.toml"), cfg.as_bytes())?;
    write(dir.join("manifest.csv"), format_manifest(dataset).as_bytes())?;
    write(
        dir.join("boxes.csv"),
        format_boxes(dataset.train.iter().chain(&dataset.val)).as_bytes(),
    )?;
    Ok(())
}

/// Splits CSV text into `(byte offset, fields)` per non-empty line.
fn csv_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    let mut offset = 0;
    text.split_inclusive('\n').filter_map(move |line| {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim_end_matches(['\n', '\r']);
        (!trimmed.is_empty()).then(|| (start, trimmed.split(',').collect()))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub margin: usize,
    pub bbox: BoundingBox,
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let err = |offset, reason: String| DataError::Parse {
        path: path.to_path_buf(),
        offset,
        reason,
    };
    let mut lines = csv_lines(text);
    match lines.next() {
        Some((_, header)) if header == ["sample_id", "H", "W", "margin", "box"] => {}
        Some((off, _)) => return Err(err(off, "unexpected manifest header".into())),
        None => return Err(err(0, "empty manifest".into())),
    }
    lines
        .map(|(off, f)| {
            if f.len() != 5 {
                return Err(err(off, format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<usize>().map_err(|e| err(off, format!("`{s}`: {e}")));
            let parts: Vec<&str> = f[4].split(':').collect();
            if parts.len() != 4 {
                return Err(err(off, format!("box `{}` is not top:left:bottom:right", f[4])));
            }
            Ok(ManifestEntry {
                id: f[0].to_string(),
                height: num(f[1])?,
                width: num(f[2])?,
                margin: num(f[3])?,
                bbox: BoundingBox::new(num(parts[0])?, num(parts[1])?, num(parts[2])?, num(parts[3])?),
            })
        })
        .collect()
}

pub fn parse_boxes(text: &str, path: &Path) -> Result<Vec<(String, BoundingBox)>, DataError> {
    csv_lines(text)
        .map(|(off, f)| {
            let err = |reason: String| DataError::Parse {
                path: path.to_path_buf(),
                offset: off,
                reason,
            };
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<usize>().map_err(|e| err(format!("`{s}`: {e}")));
            Ok((
                f[0].to_string(),
                BoundingBox::new(num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?),
            ))
        })
        .collect()
}

pub fn load(dir: &Path) -> Result<Dataset, DataError> {
    let read_text = |p: PathBuf| std::fs::read_to_string(&p).map_err(io_err(&p)).map(|t| (t, p));
    let (cfg_text, cfg_path) = read_text(dir.join("dataset.toml"))?;
    let config: DatasetConfig = toml::from_str(&cfg_text).map_err(|e| DataError::Parse {
        path: cfg_path,
        offset: e.span().map_or(0, |s| s.start),
        reason: e.message().to_string(),
    })?;
    let (manifest_text, manifest_path) = read_text(dir.join("manifest.csv"))?;
    let entries = parse_manifest(&manifest_text, &manifest_path)?;
    let (boxes_text, boxes_path) = read_text(dir.join("boxes.csv"))?;
    let boxes = parse_boxes(&boxes_text, &boxes_path)?;
    if boxes.len() != entries.len() {
        return Err(DataError::Parse {
            path: boxes_path,
            offset: boxes_text.len(),
            reason: format!("{} boxes for {} manifest entries", boxes.len(), entries.len()),
        });
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (entry, (box_id, bbox)) in entries.iter().zip(boxes) {
        if box_id != entry.id {
            return Err(DataError::Parse {
                path: boxes_path.clone(),
                offset: 0,
                reason: format!("box for `{box_id}` where `{}` was expected", entry.id),
            });
        }
        let img_path = dir.join("images").join(format!("{}.img", entry.id));
        let image = decode_image(&std::fs::read(&img_path).map_err(io_err(&img_path))?, &img_path)?;
        let mask_path = dir.join("masks").join(format!("{}.mask", entry.id));
        let mask = decode_mask(&std::fs::read(&mask_path).map_err(io_err(&mask_path))?, &mask_path)?;
        if image.shape() != [entry.height, entry.width] || (mask.height(), mask.width()) != (entry.height, entry.width) {
            return Err(DataError::Parse {
                path: img_path,
                offset: 8,
                reason: format!("size disagrees with manifest entry {}x{}", entry.height, entry.width),
            });
        }
        bbox.check(entry.height, entry.width).map_err(|e| DataError::Parse {
            path: boxes_path.clone(),
            offset: 0,
            reason: e.to_string(),
        })?;
        let sample = Sample {
            id: entry.id.clone(),
            image,
            mask,
            bbox,
        };
        if entry.id.starts_with("val_") {
            val.push(sample);
        } else {
            train.push(sample);
        }
    }
    Ok(Dataset { config, train, val })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            n_samples: 6,
            n_val: 2,
            height: 32,
            width: 32,
            size_range: [0.05, 0.15],
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn derive_box_cases() {
        let mut m = LabelMask::empty(10, 10);
        m.set(3, 4, true);
        assert_eq!(derive_box(&m, 0).unwrap(), BoundingBox::new(3, 4, 4, 5));
        assert_eq!(derive_box(&m, 2).unwrap(), BoundingBox::new(1, 2, 6, 7));
        let full = LabelMask::new(10, 10, vec![1; 100]).unwrap();
        assert_eq!(derive_box(&full, 7).unwrap(), BoundingBox::full(10, 10));
        assert!(matches!(derive_box(&LabelMask::empty(3, 3), 0), Err(DataError::EmptyMask)));
    }

    #[test]
    fn margin_clamps_near_frame() {
        let mut m = LabelMask::empty(64, 64);
        for r in 3..20 {
            for c in 3..20 {
                m.set(r, c, true);
            }
        }
        let b = derive_box(&m, 10).unwrap();
        assert_eq!((b.top, b.left, b.bottom, b.right), (0, 0, 30, 30));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&DatasetConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    #[test]
    fn zero_margin_boxes_touch_the_mask_on_every_side() {
        for shape in [ShapeFamily::Ellipse, ShapeFamily::TwoLobe] {
            let d = generate(&DatasetConfig { shape, ..small() }).unwrap();
            for s in d.train.iter().chain(&d.val) {
                let b = s.bbox;
                assert!((b.left..b.right).any(|c| s.mask.get(b.top, c)));
                assert!((b.left..b.right).any(|c| s.mask.get(b.bottom - 1, c)));
                assert!((b.top..b.bottom).any(|r| s.mask.get(r, b.left)));
                assert!((b.top..b.bottom).any(|r| s.mask.get(r, b.right - 1)));
                // strictly inside the frame
                assert!(b.top > 0 && b.left > 0 && b.bottom < 32 && b.right < 32);
            }
        }
    }

    #[test]
    fn infeasible_sizes_are_rejected() {
        let cfg = DatasetConfig {
            size_range: [0.5, 0.9],
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(DataError::Config(_))));
    }

    #[test]
    fn zero_contrast_removes_the_signal() {
        let d = generate(&DatasetConfig {
            contrast: 0.0,
            noise_std: 0.0,
            ..small()
        })
        .unwrap();
        assert!(d.train[0].image.data().iter().all(|v| *v == 0.35));
    }

    #[test]
    fn truncated_image_reports_offset() {
        let d = generate(&small()).unwrap();
        let bytes = encode_image(&d.train[0].image);
        let p = Path::new("x.img");
        assert_eq!(decode_image(&bytes, p).unwrap(), d.train[0].image);
        match decode_image(&bytes[..100], p) {
            Err(DataError::Parse { offset, .. }) => assert_eq!(offset, 100),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_image(&bytes[..10], p), Err(DataError::Parse { offset: 10, .. })));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_image(&wrong, p), Err(DataError::Parse { offset: 0, .. })));
    }

    #[test]
    fn manifest_rejects_garbage_with_line_offset() {
        let text = "sample_id,H,W,margin,box\ntrain_0000,8,8,0,1:1:3:3\ntrain_0001,8,x,0,1:1:3:3\n";
        match parse_manifest(text, Path::new("m.csv")) {
            Err(DataError::Parse { offset, .. }) => assert_eq!(offset, text.find("train_0001").unwrap()),
            other => panic!("{other:?}"),
        }
    }
}
