//! Domain types and corpus handling: images, binary masks, annotated samples,
//! the on-disk corpus layout, and the procedural multi-style synthetic
//! generator.

mod ingest;
mod morph;
mod synth;

pub use ingest::{load_corpus, IngestConfig};
pub use morph::{connected_components, dilate_disk, erode_disk, smooth_disk};
pub use synth::{
    generate_annotated_sample, generate_base_shape, generate_synthetic_corpus, render_style,
    GeneratedCorpus,
};

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// One RGB image, pixels in [0,1].
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pixels: Tensor3,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, pixels: Tensor3) -> Result<Self> {
        if pixels.channels() != 3 {
            return Err(Error::DimMismatch(format!(
                "image must have 3 channels, got {}",
                pixels.channels()
            )));
        }
        Ok(ImageSample {
            id: id.into(),
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn pixels(&self) -> &Tensor3 {
        &self.pixels
    }
}

/// A strictly binary H×W mask with optional annotation metadata.
#[derive(Debug, Clone)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    grid: Vec<u8>,
    /// Annotation preference string, e.g. "A00+T2+E".
    pub source_label: Option<String>,
    /// Known generating style (synthetic corpora only), 1-based.
    pub planted_style: Option<usize>,
}

impl BinaryMask {
    pub fn empty(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            grid: vec![0; h * w],
            source_label: None,
            planted_style: None,
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = BinaryMask::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                if f(y, x) {
                    m.grid[y * w + x] = 1;
                }
            }
        }
        m
    }

    /// Builds a mask by thresholding a probability plane.
    pub fn from_plane(plane: &[f32], h: usize, w: usize, threshold: f32) -> Result<Self> {
        if plane.len() != h * w {
            return Err(Error::DimMismatch(format!(
                "plane length {} does not match {}x{}",
                plane.len(),
                h,
                w
            )));
        }
        let mut m = BinaryMask::empty(h, w);
        for (dst, &v) in m.grid.iter_mut().zip(plane) {
            *dst = (v >= threshold) as u8;
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.grid[y * self.w + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.grid[y * self.w + x] = v as u8;
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    /// Foreground pixel count.
    pub fn area(&self) -> usize {
        self.grid.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.iter().all(|&v| v == 0)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.h == other.h && self.w == other.w
    }

    /// Grid equality, ignoring metadata. Used for ingestion deduplication.
    pub fn grid_eq(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.grid == other.grid
    }

    /// The mask as a [0,1] float plane (classifier input, loss target).
    pub fn to_plane(&self) -> Vec<f32> {
        self.grid.iter().map(|&v| v as f32).collect()
    }
}

/// Train/val/test split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image with its K≥1 ground-truth masks.
#[derive(Debug, Clone)]
pub struct AnnotatedSample {
    pub image: ImageSample,
    pub masks: Vec<BinaryMask>,
    pub split: Split,
}

impl AnnotatedSample {
    /// K: the number of distinct ways this image was segmented.
    pub fn mask_count(&self) -> usize {
        self.masks.len()
    }
}

/// Parameters of one synthetic annotation style.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StyleParams {
    /// Pixels of dilation (+) or erosion (-) applied to the base contour.
    pub margin: i32,
    /// Radial boundary perturbation amplitude, pixels.
    #[serde(default)]
    pub jaggedness_amplitude: f64,
    /// Perturbation cycles around the contour.
    #[serde(default = "default_frequency")]
    pub jaggedness_frequency: u32,
    /// Disk radius of the closing+opening smoothing pass, pixels.
    #[serde(default)]
    pub smoothing_radius: u32,
    /// Phase seed for the perturbation.
    #[serde(default)]
    pub seed: u64,
}

fn default_frequency() -> u32 {
    1
}

impl StyleParams {
    /// Identity style: rendering with it returns the base shape unchanged.
    pub fn identity() -> Self {
        StyleParams {
            margin: 0,
            jaggedness_amplitude: 0.0,
            jaggedness_frequency: 1,
            smoothing_radius: 0,
            seed: 0,
        }
    }

    pub fn validate(&self, resolution: usize) -> Result<()> {
        if self.margin.unsigned_abs() as usize >= resolution / 4 {
            return Err(Error::config(
                "style.margin",
                format!(
                    "|margin| = {} must be below min(H,W)/4 = {}",
                    self.margin.abs(),
                    resolution / 4
                ),
            ));
        }
        if self.jaggedness_amplitude < 0.0 {
            return Err(Error::config(
                "style.jaggedness_amplitude",
                "must be non-negative",
            ));
        }
        if self.jaggedness_frequency == 0 {
            return Err(Error::config("style.jaggedness_frequency", "must be positive"));
        }
        Ok(())
    }
}

/// One manifest row: a single (image, mask) pairing with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub image_id: String,
    pub mask_file: String,
    pub preference_label: Option<String>,
    pub planted_style: Option<usize>,
    pub split: Split,
}

/// Parsed manifest.csv.
#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    pub rows: Vec<ManifestRow>,
}

impl CorpusManifest {
    pub const HEADER: &'static str = "image_id,mask_file,preference_label,planted_style,split";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.image_id,
                r.mask_file,
                r.preference_label.as_deref().unwrap_or(""),
                r.planted_style.map(|s| s.to_string()).unwrap_or_default(),
                r.split
            ));
        }
        out
    }
}

/// A loaded corpus: samples grouped per image plus the manifest they came from.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<AnnotatedSample>,
    pub manifest: CorpusManifest,
    pub warnings: Vec<String>,
    pub root: PathBuf,
}

impl Corpus {
    pub fn split_samples(&self, split: Split) -> Vec<&AnnotatedSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Total (image, mask) pair count in a split.
    pub fn pair_count(&self, split: Split) -> usize {
        self.split_samples(split)
            .iter()
            .map(|s| s.mask_count())
            .sum()
    }
}

/// Synthetic corpus recipe.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n_images: usize,
    pub resolution: usize,
    pub master_seed: u64,
    /// One entry per synthetic annotator.
    pub styles: Vec<StyleParams>,
    /// Probability that a given annotator segments a given image.
    #[serde(default = "default_coverage")]
    pub coverage_p: f64,
    /// Per-annotator coverage override (same length as `styles`); annotator
    /// counts in real multi-annotator corpora are heavily imbalanced, and
    /// this reproduces that.
    #[serde(default)]
    pub per_style_coverage: Option<Vec<f64>>,
    /// Train/val/test fractions; must sum to 1.
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
    /// Gaussian pixel noise added to rendered images.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
}

fn default_coverage() -> f64 {
    1.0
}

fn default_split_fractions() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

fn default_noise_sigma() -> f64 {
    0.05
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::config("corpus.n_images", "must be positive"));
        }
        if self.styles.is_empty() {
            return Err(Error::config("style", "at least one style is required"));
        }
        if self.resolution < 32 {
            return Err(Error::config("corpus.resolution", "must be at least 32"));
        }
        if !(0.0..=1.0).contains(&self.coverage_p) || self.coverage_p == 0.0 {
            return Err(Error::config("corpus.coverage_p", "must be in (0, 1]"));
        }
        if let Some(per_style) = &self.per_style_coverage {
            if per_style.len() != self.styles.len() {
                return Err(Error::config(
                    "corpus.per_style_coverage",
                    format!(
                        "{} entries for {} styles",
                        per_style.len(),
                        self.styles.len()
                    ),
                ));
            }
            if per_style.iter().any(|&p| !(0.0..=1.0).contains(&p) || p == 0.0) {
                return Err(Error::config(
                    "corpus.per_style_coverage",
                    "entries must be in (0, 1]",
                ));
            }
        }
        let total: f64 = self.split_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.split_fractions.iter().any(|&f| f < 0.0) {
            return Err(Error::config("split", "fractions must be non-negative and sum to 1"));
        }
        for (i, s) in self.styles.iter().enumerate() {
            s.validate(self.resolution)
                .map_err(|e| Error::config(format!("style[{i}]"), e.to_string()))?;
        }
        Ok(())
    }
}
