//! Patch feature extraction.
//!
//! The built-in extractor describes each `s × s` patch with its mean color,
//! luma standard deviation, and a gradient-orientation histogram. Gradients are
//! taken inside the patch only, so every descriptor depends on its own patch
//! and nothing else. Externally computed embeddings can be ingested from CSFM
//! files instead.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csfm::load_feature_map;
use crate::scene::{FeatureMap, ImageBuffer};

pub const DEFAULT_PATCH_SIZE: usize = 8;
pub const DEFAULT_HISTOGRAM_BINS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Patch statistics computed in-process.
    BuiltinPatchstat { histogram_bins: usize },
    /// One CSFM file per image, named `<image id>.csfm`, in `dir`.
    ExternalFiles { dir: PathBuf, dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub source: FeatureSource,
    pub patch_size: usize,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        Self {
            source: FeatureSource::BuiltinPatchstat {
                histogram_bins: DEFAULT_HISTOGRAM_BINS,
            },
            patch_size: DEFAULT_PATCH_SIZE,
        }
    }
}

impl FeatureExtractorSpec {
    pub fn dim(&self) -> usize {
        match &self.source {
            FeatureSource::BuiltinPatchstat { histogram_bins } => 4 + histogram_bins,
            FeatureSource::ExternalFiles { dim, .. } => *dim,
        }
    }

    /// Extract features for `img`. `image_id` names the CSFM file in
    /// external mode and is ignored by the built-in extractor.
    pub fn extract(&self, img: &ImageBuffer, image_id: &str) -> Result<FeatureMap> {
        let s = self.patch_size;
        if s == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        if img.width < s || img.height < s {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} is smaller than one {s}x{s} patch",
                img.width, img.height
            )));
        }
        match &self.source {
            FeatureSource::BuiltinPatchstat { histogram_bins } => patch_statistics(img, s, *histogram_bins),
            FeatureSource::ExternalFiles { dir, dim } => {
                let path = dir.join(format!("{image_id}.csfm"));
                let map = load_feature_map(&path)?;
                let (gh, gw) = (img.height / s, img.width / s);
                if (map.grid_h, map.grid_w) != (gh, gw) || map.dim != *dim || map.patch_size != s {
                    return Err(Error::mismatch(format!(
                        "{}: grid {}x{} dim {} patch {} but image expects {gh}x{gw} dim {dim} patch {s}",
                        path.display(),
                        map.grid_h,
                        map.grid_w,
                        map.dim,
                        map.patch_size
                    )));
                }
                Ok(map)
            }
        }
    }
}

/// Convenience wrapper: extract with `spec` (built-in mode ignores the id).
pub fn extract(spec: &FeatureExtractorSpec, img: &ImageBuffer) -> Result<FeatureMap> {
    spec.extract(img, "")
}

fn patch_statistics(img: &ImageBuffer, s: usize, bins: usize) -> Result<FeatureMap> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (gh, gw) = (img.height / s, img.width / s);
    let dim = 4 + bins;
    let luma = img.luma();
    let mut data = Vec::with_capacity(gh * gw * dim);
    let mut lum = vec![0.0; s * s];
    for gy in 0..gh {
        for gx in 0..gw {
            let (x0, y0) = (gx * s, gy * s);
            let mut mean = [0.0f64; 3];
            for y in 0..s {
                for x in 0..s {
                    for (c, m) in mean.iter_mut().enumerate() {
                        *m += img.get(x0 + x, y0 + y, if img.channels == 3 { c } else { 0 });
                    }
                    lum[y * s + x] = luma.data[(y0 + y) * img.width + x0 + x];
                }
            }
            let n = (s * s) as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            let lmean = lum.iter().sum::<f64>() / n;
            let var = lum.iter().map(|v| (v - lmean) * (v - lmean)).sum::<f64>() / n;

            let mut hist = vec![0.0f64; bins];
            for y in 0..s {
                for x in 0..s {
                    let at = |xx: usize, yy: usize| lum[yy * s + xx];
                    let gxv = (at((x + 1).min(s - 1), y) - at(x.saturating_sub(1), y)) * 0.5;
                    let gyv = (at(x, (y + 1).min(s - 1)) - at(x, y.saturating_sub(1))) * 0.5;
                    let mag = (gxv * gxv + gyv * gyv).sqrt();
                    if mag == 0.0 {
                        continue;
                    }
                    let theta = gyv.atan2(gxv);
                    let pos = (theta + std::f64::consts::PI) / std::f64::consts::TAU * bins as f64;
                    let bin = (pos.floor() as usize).min(bins - 1);
                    hist[bin] += mag;
                }
            }
            let total: f64 = hist.iter().sum();
            if total > 0.0 {
                hist.iter_mut().for_each(|h| *h /= total);
            }
            data.extend(mean.iter().map(|v| *v as f32));
            data.push(var.sqrt() as f32);
            data.extend(hist.iter().map(|v| *v as f32));
        }
    }
    FeatureMap::new(gh, gw, dim, s, data)
}
