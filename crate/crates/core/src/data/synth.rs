//! Procedural synthetic corpus: one lesion-like blob per image, segmented by
//! several parametric annotation styles with known (planted) style labels.

use std::path::{Path, PathBuf};

use super::morph::{dilate_disk, erode_disk, smooth_disk};
use super::{
    AnnotatedSample, BinaryMask, CorpusManifest, ImageSample, ManifestRow, Split, StyleParams,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::Rng;
use crate::tensor::Tensor3;

// Target area fraction range; kept well inside the contract [0.05, 0.40] so
// blobs are large enough that styled variants of the same shape overlap.
const AREA_LO: f64 = 0.16;
const AREA_HI: f64 = 0.30;
const MIN_RADIUS: f64 = 3.0;

/// A single connected, simply-connected random blob.
///
/// Star-convex by construction: a base radius with three low-frequency radial
/// harmonics, rasterized around a centre in the middle half of the frame.
/// Area fraction lands in [0.05, 0.40]; deterministic in `seed`.
pub fn generate_base_shape(seed: u64, resolution: usize) -> BinaryMask {
    assert!(resolution >= 32, "resolution must be at least 32");
    let res = resolution as f64;
    let mut rng = Rng::new(seed);

    let target = rng.range_f64(AREA_LO, AREA_HI);
    let mut r0 = res * (target / std::f64::consts::PI).sqrt();

    // Harmonic amplitudes sum to at most 15% of the radius.
    let amps = [
        rng.range_f64(0.0, 0.08),
        rng.range_f64(0.0, 0.045),
        rng.range_f64(0.0, 0.025),
    ];
    let phases = [
        rng.range_f64(0.0, std::f64::consts::TAU),
        rng.range_f64(0.0, std::f64::consts::TAU),
        rng.range_f64(0.0, std::f64::consts::TAU),
    ];

    let amp_total: f64 = amps.iter().sum();
    let r_max = r0 * (1.0 + amp_total);
    let lo = (0.25 * res).max(r_max + 2.0);
    let hi = (0.75 * res).min(res - r_max - 2.0);
    let (cy, cx) = if lo < hi {
        (rng.range_f64(lo, hi), rng.range_f64(lo, hi))
    } else {
        (0.5 * res, 0.5 * res)
    };

    let rasterize = |r0: f64| {
        BinaryMask::from_fn(resolution, resolution, |y, x| {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            let rho = (dy * dy + dx * dx).sqrt();
            let theta = dy.atan2(dx);
            let mut r = r0;
            for k in 0..3 {
                r += r0 * amps[k] * ((k as f64 + 1.0) * theta + phases[k]).sin();
            }
            rho <= r.max(MIN_RADIUS)
        })
    };

    let mut mask = rasterize(r0);
    // Perturbation can push the realized area outside the contract; rescale
    // the base radius until it lands inside.
    for _ in 0..5 {
        let frac = mask.area() as f64 / (res * res);
        if frac > 0.40 {
            r0 *= (0.36 / frac).sqrt();
        } else if frac < 0.05 {
            r0 *= (0.08 / frac).sqrt();
        } else {
            break;
        }
        mask = rasterize(r0);
    }
    mask
}

/// Renders one annotation style of a base shape: margin dilation/erosion,
/// angular boundary jitter, then smoothing. Deterministic in (base, style);
/// never returns an empty mask for a non-empty base.
pub fn render_style(base: &BinaryMask, style: &StyleParams) -> BinaryMask {
    assert!(!base.is_empty(), "render_style requires a non-empty base");
    let mut mask = apply_margin(base, style.margin);

    if style.jaggedness_amplitude > 0.0 {
        let jagged = apply_jaggedness(
            &mask,
            style.jaggedness_amplitude,
            style.jaggedness_frequency,
            style.seed,
        );
        if !jagged.is_empty() {
            mask = jagged;
        }
    }

    if style.smoothing_radius > 0 {
        let smoothed = smooth_disk(&mask, style.smoothing_radius);
        if !smoothed.is_empty() {
            mask = smoothed;
        } else {
            eprintln!("warning: smoothing_radius {} would empty the mask; skipped", style.smoothing_radius);
        }
    }
    mask
}

fn apply_margin(base: &BinaryMask, margin: i32) -> BinaryMask {
    if margin > 0 {
        return dilate_disk(base, margin as u32);
    }
    let mut r = margin.unsigned_abs();
    while r > 0 {
        let eroded = erode_disk(base, r);
        if !eroded.is_empty() {
            if r != margin.unsigned_abs() {
                eprintln!(
                    "warning: erosion by {} empties the mask; reduced to {}",
                    margin.unsigned_abs(),
                    r
                );
            }
            return eroded;
        }
        r -= 1;
    }
    base.clone()
}

/// Offsets the boundary radially by `amplitude * sin(frequency*theta + phase)`
/// pixels, measured around the mask centroid.
fn apply_jaggedness(mask: &BinaryMask, amplitude: f64, frequency: u32, seed: u64) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let phase = Rng::new(seed).range_f64(0.0, std::f64::consts::TAU);

    let area = mask.area();
    if area == 0 {
        return mask.clone();
    }
    let mut cy = 0.0;
    let mut cx = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                cy += y as f64 + 0.5;
                cx += x as f64 + 0.5;
            }
        }
    }
    cy /= area as f64;
    cx /= area as f64;

    // Boundary pixels: foreground with a 4-neighbour outside the mask.
    let mut boundary = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1);
            if edge {
                boundary.push((y as f64 + 0.5, x as f64 + 0.5));
            }
        }
    }
    if boundary.is_empty() {
        return mask.clone();
    }

    let band = amplitude + 1.5;
    BinaryMask::from_fn(h, w, |y, x| {
        let py = y as f64 + 0.5;
        let px = x as f64 + 0.5;
        let inside = mask.get(y, x);
        // Unsigned distance to the boundary; only pixels within the
        // perturbation band can flip.
        let mut d2_min = f64::INFINITY;
        for &(by, bx) in &boundary {
            let d2 = (py - by) * (py - by) + (px - bx) * (px - bx);
            if d2 < d2_min {
                d2_min = d2;
            }
        }
        let d = d2_min.sqrt();
        if d > band {
            return inside;
        }
        let signed = if inside { d } else { -d };
        let theta = (py - cy).atan2(px - cx);
        let delta = amplitude * (frequency as f64 * theta + phase).sin();
        signed + delta >= 0.0
    })
}

/// Renders the RGB appearance for a lesion mask: darker textured blob on a
/// lighter noisy background. Pixel noise sigma comes from the config.
fn render_image(base: &BinaryMask, noise_sigma: f64, rng: &mut Rng) -> Tensor3 {
    let (h, w) = (base.height(), base.width());
    let lesion = [0.45f64, 0.30, 0.24];
    let skin = [0.78f64, 0.62, 0.55];
    let mut t = Tensor3::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let inside = base.get(y, x);
            // Mild deterministic texture so the lesion is not a flat disk.
            let tex = 0.04 * ((x as f64 * 0.9).sin() + (y as f64 * 0.7).cos());
            for c in 0..3 {
                let mean = if inside { lesion[c] } else { skin[c] };
                let v = mean + tex + noise_sigma * rng.normal();
                *t.at_mut(c, y, x) = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    t
}

/// Deterministically builds sample `index` of a synthetic corpus, with all
/// randomness derived from `cfg.master_seed` and the index.
pub fn generate_annotated_sample(cfg: &SynthConfig, index: usize) -> AnnotatedSample {
    let mut rng = Rng::derived(cfg.master_seed, index as u64);
    let base = generate_base_shape(rng.next_u64(), cfg.resolution);

    // Each synthetic annotator independently covers this image with its
    // coverage probability; resample until at least one does.
    let m = cfg.styles.len();
    let coverage = |j: usize| -> f64 {
        cfg.per_style_coverage
            .as_ref()
            .map(|v| v[j])
            .unwrap_or(cfg.coverage_p)
    };
    let mut included = vec![false; m];
    loop {
        let mut any = false;
        for (j, flag) in included.iter_mut().enumerate() {
            *flag = rng.next_f64() < coverage(j);
            any |= *flag;
        }
        if any {
            break;
        }
    }

    let mut masks = Vec::new();
    for (j, style) in cfg.styles.iter().enumerate() {
        if !included[j] {
            continue;
        }
        let mut mask = render_style(&base, style);
        mask.planted_style = Some(j + 1);
        mask.source_label = Some(format!("S{}", j + 1));
        masks.push(mask);
    }

    let image = ImageSample::new(
        format!("img_{index:05}"),
        render_image(&base, cfg.noise_sigma, &mut rng),
    )
    .expect("3-channel by construction");

    AnnotatedSample {
        image,
        masks,
        split: split_for_index(cfg, index),
    }
}

fn split_for_index(cfg: &SynthConfig, index: usize) -> Split {
    let n = cfg.n_images as f64;
    let n_train = (n * cfg.split_fractions[0]).round() as usize;
    let n_val = (n * cfg.split_fractions[1]).round() as usize;
    if index < n_train {
        Split::Train
    } else if index < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Summary of a written synthetic corpus.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub root: PathBuf,
    pub n_images: usize,
    pub n_masks: usize,
    pub manifest_path: PathBuf,
}

/// Writes a synthetic corpus in the on-disk layout:
/// `images/<id>.png`, `masks/<id>__<k>.png`, `manifest.csv`.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| Error::io(format!("creating {}", images_dir.display()), e))?;
    std::fs::create_dir_all(&masks_dir)
        .map_err(|e| Error::io(format!("creating {}", masks_dir.display()), e))?;

    let samples = exec::map_range(cfg.n_images, |i| generate_annotated_sample(cfg, i));

    let mut manifest = CorpusManifest::default();
    let mut n_masks = 0;
    for sample in &samples {
        let id = &sample.image.id;
        write_image_png(&images_dir.join(format!("{id}.png")), sample.image.pixels())?;
        for (k, mask) in sample.masks.iter().enumerate() {
            let file = format!("masks/{id}__{}.png", k + 1);
            write_mask_png(&out_dir.join(&file), mask)?;
            manifest.rows.push(ManifestRow {
                image_id: id.clone(),
                mask_file: file,
                preference_label: mask.source_label.clone(),
                planted_style: mask.planted_style,
                split: sample.split,
            });
            n_masks += 1;
        }
    }

    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest.to_csv())
        .map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;

    Ok(GeneratedCorpus {
        root: out_dir.to_path_buf(),
        n_images: cfg.n_images,
        n_masks,
        manifest_path,
    })
}

fn write_image_png(path: &Path, pixels: &Tensor3) -> Result<()> {
    let (h, w) = (pixels.height(), pixels.width());
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                (pixels.at(0, y, x) * 255.0).round().clamp(0.0, 255.0) as u8,
                (pixels.at(1, y, x) * 255.0).round().clamp(0.0, 255.0) as u8,
                (pixels.at(2, y, x) * 255.0).round().clamp(0.0, 255.0) as u8,
            ]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path)
        .map_err(|e| Error::Image {
            context: format!("writing {}", path.display()),
            source: e,
        })
}

fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Luma([if mask.get(y, x) { 255 } else { 0 }]));
        }
    }
    img.save(path)
        .map_err(|e| Error::Image {
            context: format!("writing {}", path.display()),
            source: e,
        })
}
