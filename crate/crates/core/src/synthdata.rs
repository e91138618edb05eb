//! Deterministic synthetic lesion benchmark.
//!
//! Backgrounds are two octaves of value noise (a seeded lattice, bilinearly
//! interpolated). Abnormal samples add one to three filled ellipses with an
//! additive intensity shift; the mask is the exact set of ellipse pixels.
//!
//! All randomness comes from integer outputs of a ChaCha stream and every
//! float operation is an IEEE basic operation or `sqrt`, so datasets are
//! bit-identical across platforms for a fixed seed.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pnm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Class {
    Normal,
    Abnormal,
}

impl Class {
    /// Ground-truth label `y`: 0 for normal, 1 for abnormal.
    pub fn label(self) -> u8 {
        match self {
            Class::Normal => 0,
            Class::Abnormal => 1,
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Class::Normal => 0x4e4f524d,
            Class::Abnormal => 0x41424e4d,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Normal => "normal",
            Class::Abnormal => "abnormal",
        })
    }
}

impl std::str::FromStr for Class {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normal" => Ok(Class::Normal),
            "abnormal" => Ok(Class::Abnormal),
            other => Err(format!("unknown class {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub class: Class,
    /// `H x W x 3`, values in `[0, 1]`, channels identical.
    pub image: Tensor,
    /// `H x W` with values in `{0, 1}`.
    pub mask: Tensor,
    pub category: String,
}

impl Sample {
    pub fn label(&self) -> u8 {
        self.class.label()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.mask.shape()[0], self.mask.shape()[1])
    }

    pub fn mask_area(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v > 0.5).count()
    }

    /// Mirror image and mask left to right.
    pub fn flipped(&self) -> Sample {
        let (h, w) = self.size();
        let mut image = self.image.clone();
        let mut mask = self.mask.clone();
        for y in 0..h {
            for x in 0..w {
                let src = y * w + (w - 1 - x);
                mask.data_mut()[y * w + x] = self.mask.data()[src];
                for c in 0..3 {
                    image.data_mut()[(y * w + x) * 3 + c] = self.image.data()[src * 3 + c];
                }
            }
        }
        Sample {
            image,
            mask,
            ..self.clone()
        }
    }
}

/// Parameters of a generated benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub train_normal: usize,
    pub train_abnormal: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
    pub image_size: usize,
    pub lesions_min: usize,
    pub lesions_max: usize,
    /// Additive lesion intensity.
    pub contrast: f64,
    /// Width in pixels of the soft lesion boundary; 0 gives hard edges.
    pub feather: f64,
    /// Lattice spacing of the coarse noise octave, in pixels.
    pub texture_scale: usize,
    pub axis_min: f64,
    pub axis_max: f64,
    pub min_area: usize,
    pub max_area: usize,
    pub category: String,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 2024,
            train_normal: 400,
            train_abnormal: 400,
            test_normal: 50,
            test_abnormal: 50,
            image_size: 64,
            lesions_min: 1,
            lesions_max: 3,
            contrast: 0.5,
            feather: 0.0,
            texture_scale: 16,
            axis_min: 5.0,
            axis_max: 12.0,
            min_area: 80,
            max_area: 1600,
            category: "lesionblob".to_string(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.train_normal,
            self.train_abnormal,
            self.test_normal,
            self.test_abnormal,
        ];
        if counts.contains(&0) {
            return Err(Error::invalid("dataset", "every split/class count must be positive"));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::invalid("contrast", "must lie in (0, 1]"));
        }
        if self.feather < 0.0 || !self.feather.is_finite() {
            return Err(Error::invalid("feather", "must be non-negative"));
        }
        if self.lesions_min == 0 || self.lesions_min > self.lesions_max {
            return Err(Error::invalid("lesions", "need 1 <= min <= max"));
        }
        if self.texture_scale < 4 || self.texture_scale % 4 != 0 {
            return Err(Error::invalid("texture_scale", "must be a positive multiple of 4"));
        }
        if !(self.axis_min > 0.0 && self.axis_min <= self.axis_max) {
            return Err(Error::invalid("axis", "need 0 < axis_min <= axis_max"));
        }
        if self.min_area == 0 || self.min_area > self.max_area {
            return Err(Error::invalid("area", "need 0 < min_area <= max_area"));
        }
        if self.image_size == 0 {
            return Err(Error::invalid("image_size", "must be positive"));
        }
        Ok(())
    }

    pub fn train_len(&self) -> usize {
        self.train_normal + self.train_abnormal
    }

    pub fn test_len(&self) -> usize {
        self.test_normal + self.test_abnormal
    }
}

/// The hard split: same generator, weaker lesions with soft boundaries.
pub fn low_contrast_variant(spec: &DatasetSpec, contrast: f64, feather: f64) -> Result<DatasetSpec> {
    if !(contrast > 0.0) {
        return Err(Error::invalid("contrast", "must be positive"));
    }
    if contrast > spec.contrast {
        return Err(Error::invalid(
            "contrast",
            format!("{contrast} exceeds the baseline contrast {}", spec.contrast),
        ));
    }
    let variant = DatasetSpec {
        contrast,
        feather,
        ..spec.clone()
    };
    variant.validate()?;
    Ok(variant)
}

/// Default hard split used by the ablation runs.
pub fn default_low_contrast(spec: &DatasetSpec) -> Result<DatasetSpec> {
    low_contrast_variant(spec, (spec.contrast * 0.4).min(spec.contrast), 3.0)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn stream(seed: u64, index: u64, class: Class, purpose: u64) -> ChaCha8Rng {
    let key = splitmix(seed ^ splitmix(index ^ splitmix(class.stream_tag() ^ splitmix(purpose))));
    ChaCha8Rng::seed_from_u64(key)
}

/// Uniform in `[0, 1)` from 32 random bits; exact in `f64`.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.next_u32() as f64 / 4294967296.0
}

fn value_noise(rng: &mut ChaCha8Rng, size: usize, spacing: usize) -> Vec<f64> {
    let cells = size.div_ceil(spacing) + 1;
    let lattice: Vec<f64> = (0..cells * cells).map(|_| 2.0 * unit(rng) - 1.0).collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let (cy, fy) = (y / spacing, (y % spacing) as f64 / spacing as f64);
        for x in 0..size {
            let (cx, fx) = (x / spacing, (x % spacing) as f64 / spacing as f64);
            let at = |iy: usize, ix: usize| lattice[iy * cells + ix];
            let top = at(cy, cx) * (1.0 - fx) + at(cy, cx + 1) * fx;
            let bottom = at(cy + 1, cx) * (1.0 - fx) + at(cy + 1, cx + 1) * fx;
            out[y * size + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// The lesion-free background of sample `(seed, index, class)`.
pub fn generate_background(spec: &DatasetSpec, index: u64, class: Class) -> Vec<f64> {
    let mut rng = stream(spec.seed, index, class, 1);
    let n = spec.image_size;
    let base = 0.25 + 0.15 * unit(&mut rng);
    let coarse = value_noise(&mut rng, n, spec.texture_scale);
    let fine = value_noise(&mut rng, n, spec.texture_scale / 4);
    coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (base + 0.12 * c + 0.05 * f).clamp(0.0, 1.0))
        .collect()
}

/// Rotations with rational cosine/sine (Pythagorean triples), so no
/// transcendental function is evaluated.
const ROTATIONS: [(f64, f64); 12] = [
    (1.0, 0.0),
    (0.0, 1.0),
    (0.6, 0.8),
    (0.8, 0.6),
    (0.6, -0.8),
    (0.8, -0.6),
    (5.0 / 13.0, 12.0 / 13.0),
    (12.0 / 13.0, 5.0 / 13.0),
    (5.0 / 13.0, -12.0 / 13.0),
    (12.0 / 13.0, -5.0 / 13.0),
    (8.0 / 17.0, 15.0 / 17.0),
    (15.0 / 17.0, -8.0 / 17.0),
];

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalized radius squared at the center of pixel `(x, y)`.
    fn radius2(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = dy * self.cos - dx * self.sin;
        (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b)
    }

    /// Lesion weight in `[0, 1]` with a linear ramp `feather` pixels wide
    /// centred on the boundary.
    fn weight(&self, x: usize, y: usize, feather: f64) -> f64 {
        let r2 = self.radius2(x, y);
        if feather == 0.0 {
            return if r2 <= 1.0 { 1.0 } else { 0.0 };
        }
        let dist = (r2.sqrt() - 1.0) * (self.a * self.b).sqrt();
        (0.5 - dist / feather).clamp(0.0, 1.0)
    }
}

fn sample_lesions(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<Ellipse>, Vec<f64>)> {
    let n = spec.image_size;
    if 2.0 * spec.axis_min >= n as f64 {
        return Err(Error::LesionFit(format!(
            "semi-axis {} does not fit a {n}x{n} image",
            spec.axis_min
        )));
    }
    let axis_max = spec.axis_max.min(n as f64 / 2.0 - 1.0);
    let span = (spec.lesions_max - spec.lesions_min + 1) as u32;
    for _ in 0..64 {
        let count = spec.lesions_min + (rng.next_u32() % span) as usize;
        let lesions: Vec<Ellipse> = (0..count)
            .map(|_| {
                let a = spec.axis_min + unit(rng) * (axis_max - spec.axis_min);
                let b = spec.axis_min + unit(rng) * (axis_max - spec.axis_min);
                let (cos, sin) = ROTATIONS[(rng.next_u32() % ROTATIONS.len() as u32) as usize];
                let reach = a.max(b);
                let cx = reach + unit(rng) * (n as f64 - 2.0 * reach);
                let cy = reach + unit(rng) * (n as f64 - 2.0 * reach);
                Ellipse {
                    cx,
                    cy,
                    a,
                    b,
                    cos,
                    sin,
                }
            })
            .collect();
        let mut mask = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                if lesions.iter().any(|e| e.radius2(x, y) <= 1.0) {
                    mask[y * n + x] = 1.0;
                }
            }
        }
        let area = mask.iter().filter(|&&m| m > 0.0).count();
        if (spec.min_area..=spec.max_area).contains(&area) {
            return Ok((lesions, mask));
        }
    }
    Err(Error::LesionFit(format!(
        "no lesion layout with area in [{}, {}] after 64 attempts",
        spec.min_area, spec.max_area
    )))
}

/// Generates sample `index` of class `class`. Fully determined by
/// `(spec, index, class)`.
pub fn generate_sample(spec: &DatasetSpec, index: u64, class: Class) -> Result<Sample> {
    let n = spec.image_size;
    let mut pixels = generate_background(spec, index, class);
    let mut mask = vec![0.0; n * n];
    if class == Class::Abnormal {
        let mut rng = stream(spec.seed, index, class, 2);
        let (lesions, lesion_mask) = sample_lesions(spec, &mut rng)?;
        mask = lesion_mask;
        for y in 0..n {
            for x in 0..n {
                let w = lesions
                    .iter()
                    .map(|e| e.weight(x, y, spec.feather))
                    .fold(0.0, f64::max);
                if w > 0.0 {
                    let p = &mut pixels[y * n + x];
                    *p = (*p + spec.contrast * w).clamp(0.0, 1.0);
                }
            }
        }
    }
    let image: Vec<f64> = pixels.iter().flat_map(|&v| [v, v, v]).collect();
    Ok(Sample {
        id: index,
        class,
        image: Tensor::new(&[n, n, 3], image)?,
        mask: Tensor::new(&[n, n], mask)?,
        category: spec.category.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    /// SHA-256 over every image and mask value, train then test.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for s in self.train.iter().chain(&self.test) {
            hasher.update(s.id.to_le_bytes());
            for v in s.image.data().iter().chain(s.mask.data()) {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.train.iter().chain(&self.test).next().map(Sample::size)
    }
}

/// Train split first (normals, then abnormals), then test; ids are the
/// generator indices and never repeat across splits.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut next = 0u64;
    let mut split = |normal: usize, abnormal: usize| -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(normal + abnormal);
        for (class, count) in [(Class::Normal, normal), (Class::Abnormal, abnormal)] {
            for _ in 0..count {
                out.push(generate_sample(spec, next, class)?);
                next += 1;
            }
        }
        Ok(out)
    };
    let train = split(spec.train_normal, spec.train_abnormal)?;
    let test = split(spec.test_normal, spec.test_abnormal)?;
    Ok(Dataset { train, test })
}

const MANIFEST: &str = "manifest.txt";

fn gray_bytes(sample: &Sample) -> Vec<u8> {
    sample.image.data().chunks(3).map(|px| pnm::to_byte(px[0])).collect()
}

/// Writes images and masks as PGM plus `manifest.txt`
/// (`id split class image mask`, paths relative to `dir`).
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["train", "test"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest = String::from("# id split class image mask\n");
    for (split, samples) in [("train", &dataset.train), ("test", &dataset.test)] {
        for s in samples {
            let (h, w) = s.size();
            let image = format!("{split}/{:05}_image.pgm", s.id);
            let mask = format!("{split}/{:05}_mask.pgm", s.id);
            pnm::write_pgm(&dir.join(&image), w, h, &gray_bytes(s))?;
            let mask_px: Vec<u8> = s.mask.data().iter().map(|&m| if m > 0.5 { 255 } else { 0 }).collect();
            pnm::write_pgm(&dir.join(&mask), w, h, &mask_px)?;
            manifest.push_str(&format!("{} {split} {} {image} {mask}\n", s.id, s.class));
        }
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads a dataset described by `dir/manifest.txt`.
pub fn load_manifest(dir: &Path, category: &str) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut dataset = Dataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::Manifest {
            line: lineno + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, split, class, image, mask] = fields[..] else {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        };
        let id: u64 = id.parse().map_err(|_| bad(format!("bad id {id:?}")))?;
        let class: Class = class.parse().map_err(bad)?;
        let img = pnm::read_pgm(&dir.join(image))?;
        let msk = pnm::read_pgm(&dir.join(mask))?;
        if (img.width, img.height) != (msk.width, msk.height) {
            return Err(bad("image and mask sizes differ".into()));
        }
        let (w, h) = (img.width, img.height);
        let pixels: Vec<f64> = img
            .pixels
            .iter()
            .flat_map(|&p| {
                let v = p as f64 / 255.0;
                [v, v, v]
            })
            .collect();
        let mask_values: Vec<f64> = msk.pixels.iter().map(|&p| if p >= 128 { 1.0 } else { 0.0 }).collect();
        let sample = Sample {
            id,
            class,
            image: Tensor::new(&[h, w, 3], pixels)?,
            mask: Tensor::new(&[h, w], mask_values)?,
            category: category.to_string(),
        };
        if (class == Class::Normal) != (sample.mask_area() == 0) {
            return Err(bad(format!("class {class} disagrees with its mask")));
        }
        match split {
            "train" => dataset.train.push(sample),
            "test" => dataset.test.push(sample),
            other => return Err(bad(format!("unknown split {other:?}"))),
        }
    }
    Ok(dataset)
}
