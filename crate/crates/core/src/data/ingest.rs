//! Corpus ingestion from the on-disk layout.
//!
//! ```text
//! <root>/images/<image_id>.png            8-bit RGB
//! <root>/masks/<image_id>__<k>.png        8-bit grayscale, {0,255}
//! <root>/manifest.csv                     image_id,mask_file,preference_label,planted_style,split
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::{AnnotatedSample, BinaryMask, Corpus, CorpusManifest, ImageSample, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use crate::util::split_csv_line;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IngestConfig {
    /// Working resolution; images and masks are resized to this square size.
    pub resolution: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { resolution: 64 }
    }
}

/// Loads a corpus directory: parses the manifest, reads and resizes every
/// image (bilinear) and mask (nearest-neighbour, then binarized at half the
/// max value), groups masks per image, and drops exact duplicate masks.
pub fn load_corpus(root: &Path, config: &IngestConfig) -> Result<Corpus> {
    let manifest_path = root.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
    let manifest = parse_manifest(&text, &manifest_path)?;

    let mut warnings = Vec::new();

    // Group rows per image, preserving first-appearance order, and enforce
    // that the split is a function of the image id.
    let mut order: Vec<&str> = Vec::new();
    let mut by_image: HashMap<&str, Vec<(usize, &ManifestRow)>> = HashMap::new();
    for (idx, row) in manifest.rows.iter().enumerate() {
        let entry = by_image.entry(&row.image_id).or_default();
        if entry.is_empty() {
            order.push(&row.image_id);
        } else if entry[0].1.split != row.split {
            return Err(Error::Manifest {
                path: manifest_path.clone(),
                line: idx + 2,
                message: format!(
                    "image {} assigned to both {} and {} splits",
                    row.image_id, entry[0].1.split, row.split
                ),
            });
        }
        entry.push((idx, row));
    }

    let mut samples = Vec::with_capacity(order.len());
    for id in order {
        let rows = &by_image[id];
        let image_path = root.join("images").join(format!("{id}.png"));
        let pixels = load_image_png(&image_path, config.resolution).map_err(|e| {
            Error::Manifest {
                path: manifest_path.clone(),
                line: rows[0].0 + 2,
                message: format!("image file for {id}: {e}"),
            }
        })?;
        let image = ImageSample::new(id.to_string(), pixels)?;

        let mut masks: Vec<BinaryMask> = Vec::new();
        for &(idx, row) in rows {
            let mask_path = root.join(&row.mask_file);
            let mut mask = load_mask_png(&mask_path, config.resolution).map_err(|e| {
                Error::Manifest {
                    path: manifest_path.clone(),
                    line: idx + 2,
                    message: format!("mask file {}: {e}", row.mask_file),
                }
            })?;
            mask.source_label = row.preference_label.clone();
            mask.planted_style = row.planted_style;
            if mask.is_empty() {
                warnings.push(format!("{}: mask {} is empty; kept", id, row.mask_file));
            }
            if masks.iter().any(|m| m.grid_eq(&mask)) {
                warnings.push(format!(
                    "{}: mask {} duplicates an earlier mask; dropped",
                    id, row.mask_file
                ));
                continue;
            }
            masks.push(mask);
        }

        samples.push(AnnotatedSample {
            image,
            masks,
            split: rows[0].1.split,
        });
    }

    for w in &warnings {
        eprintln!("warning: {w}");
    }

    Ok(Corpus {
        samples,
        manifest,
        warnings,
        root: root.to_path_buf(),
    })
}

fn parse_manifest(text: &str, path: &Path) -> Result<CorpusManifest> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim(),
        None => {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: 1,
                message: "empty manifest".into(),
            })
        }
    };
    if header != CorpusManifest::HEADER {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "unexpected header {header:?}; expected {:?}",
                CorpusManifest::HEADER
            ),
        });
    }

    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != 5 {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let planted_style = if fields[3].is_empty() {
            None
        } else {
            Some(fields[3].parse::<usize>().map_err(|_| Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("planted_style {:?} is not an integer", fields[3]),
            })?)
        };
        let split = Split::parse(fields[4]).ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("unknown split {:?}", fields[4]),
        })?;
        rows.push(ManifestRow {
            image_id: fields[0].to_string(),
            mask_file: fields[1].to_string(),
            preference_label: if fields[2].is_empty() {
                None
            } else {
                Some(fields[2].to_string())
            },
            planted_style,
            split,
        });
    }
    if rows.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            message: "manifest has no data rows".into(),
        });
    }
    Ok(CorpusManifest { rows })
}

fn load_image_png(path: &Path, resolution: usize) -> Result<Tensor3> {
    let img = image::open(path).map_err(|e| Error::Image {
        context: format!("opening {}", path.display()),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor3::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                *t.at_mut(c, y, x) = p.0[c] as f32 / 255.0;
            }
        }
    }
    if h == resolution && w == resolution {
        return Ok(t);
    }
    let mut out = Tensor3::zeros(3, resolution, resolution);
    for c in 0..3 {
        let plane = bilinear_resize(t.channel(c), h, w, resolution, resolution);
        out.channel_mut(c).copy_from_slice(&plane);
    }
    Ok(out)
}

fn load_mask_png(path: &Path, resolution: usize) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| Error::Image {
        context: format!("opening {}", path.display()),
        source: e,
    })?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut vals = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            vals[y * w + x] = gray.get_pixel(x as u32, y as u32).0[0];
        }
    }
    let resized = if h == resolution && w == resolution {
        vals
    } else {
        nearest_resize(&vals, h, w, resolution, resolution)
    };
    let max = resized.iter().copied().max().unwrap_or(0);
    let mut mask = BinaryMask::empty(resolution, resolution);
    if max > 0 {
        let thresh = max as f32 * 0.5;
        for (i, &v) in resized.iter().enumerate() {
            if v as f32 >= thresh {
                mask.set(i / resolution, i % resolution, true);
            }
        }
    }
    Ok(mask)
}

/// Bilinear resampling with the half-pixel centre convention.
pub fn bilinear_resize(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; dst_h * dst_w];
    let sy = src_h as f32 / dst_h as f32;
    let sx = src_w as f32 / dst_w as f32;
    for y in 0..dst_h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (src_h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f32;
        for x in 0..dst_w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f32;
            let a = src[y0 * src_w + x0];
            let b = src[y0 * src_w + x1];
            let c = src[y1 * src_w + x0];
            let d = src[y1 * src_w + x1];
            out[y * dst_w + x] =
                a * (1.0 - wy) * (1.0 - wx) + b * (1.0 - wy) * wx + c * wy * (1.0 - wx) + d * wy * wx;
        }
    }
    out
}

fn nearest_resize(src: &[u8], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<u8> {
    let mut out = vec![0u8; dst_h * dst_w];
    for y in 0..dst_h {
        let sy = ((y as f32 + 0.5) * src_h as f32 / dst_h as f32) as usize;
        let sy = sy.min(src_h - 1);
        for x in 0..dst_w {
            let sx = ((x as f32 + 0.5) * src_w as f32 / dst_w as f32) as usize;
            let sx = sx.min(src_w - 1);
            out[y * dst_w + x] = src[sy * src_w + sx];
        }
    }
    out
}
