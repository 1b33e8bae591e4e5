//! Per-video anomaly extraction: run every frame through the density
//! model, average the log-likelihood tensors over time, and keep the mean
//! aggregate log-likelihood. Training-role videos additionally get
//! augmented variants (random temporal segments, horizontal flips);
//! test bona fide passes through whole only.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::blob::{header_u64, read_blob, write_blob};
use crate::dataset::{augment, Dataset};
use crate::density::{DensityModel, PixelLogLikTensor};
use crate::error::{Error, Result};
use crate::features::temporal_average;
use crate::rng;

pub const GRID_MAGIC: &[u8; 8] = b"PADGRID1";
pub const INDEX_NAME: &str = "index.json";

/// Everything the downstream pipeline needs from one video.
#[derive(Debug, Clone)]
pub struct ExtractedVideo {
    pub id: String,
    pub species: Option<String>,
    pub split: String,
    /// Mean over frames of the framewise aggregate log-likelihood.
    pub aggregate_ll: f64,
    /// Temporal average of the per-frame log-likelihood grids.
    pub grid: Array3<f64>,
    /// Grids of augmented variants (training use only).
    pub augmented: Vec<Array3<f64>>,
}

fn video_tensors(model: &DensityModel, frames: &[crate::density::Frame]) -> Result<Vec<PixelLogLikTensor>> {
    frames.iter().map(|f| model.per_pixel_loglik(f)).collect()
}

/// Extract all videos of a dataset. Videos are processed in parallel;
/// output order follows the manifest.
pub fn extract_dataset(
    dataset: &Dataset,
    model: &DensityModel,
    augment_per_video: usize,
    seed: u64,
) -> Result<Vec<ExtractedVideo>> {
    let records: Vec<_> = dataset.manifest.videos.clone();
    records
        .par_iter()
        .map(|record| {
            let frames = dataset.load_video(&record.id)?;
            let tensors = video_tensors(model, &frames)?;
            let grid = temporal_average(&tensors)?;
            let aggregate_ll =
                tensors.iter().map(|t| t.aggregate).sum::<f64>() / tensors.len() as f64;

            // test bona fide is never augmented; everything else may be
            // consumed for training by some protocol
            let wants_augment = !(record.species.is_none() && record.split == "test");
            let mut augmented = Vec::new();
            if wants_augment {
                for k in 0..augment_per_video {
                    let mut aug_rng = rng::stream(seed, &format!("augment-{}-{k}", record.id));
                    let variant = augment(&frames, &mut aug_rng)?;
                    let tensors = video_tensors(model, &variant)?;
                    augmented.push(temporal_average(&tensors)?);
                }
            }
            Ok(ExtractedVideo {
                id: record.id.clone(),
                species: record.species.clone(),
                split: record.split.clone(),
                aggregate_ll,
                grid,
                augmented,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRecord {
    id: String,
    species: Option<String>,
    split: String,
    aggregate_ll: f64,
    n_augmented: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtractIndex {
    version: u32,
    height: usize,
    width: usize,
    channels: usize,
    records: Vec<IndexRecord>,
}

fn grid_to_f32(grid: &Array3<f64>) -> Vec<f32> {
    grid.iter().map(|&v| v as f32).collect()
}

fn grid_path(dir: &Path, id: &str, variant: Option<usize>) -> std::path::PathBuf {
    match variant {
        None => dir.join("grids").join(format!("{id}.bin")),
        Some(k) => dir.join("grids").join(format!("{id}.aug{k}.bin")),
    }
}

/// Persist extracted videos: an index plus one grid blob per video/variant.
pub fn save_extracted(videos: &[ExtractedVideo], dir: &Path) -> Result<()> {
    let first = videos
        .first()
        .ok_or_else(|| Error::invalid("nothing extracted"))?;
    let (h, w, ck) = first.grid.dim();
    fs::create_dir_all(dir.join("grids")).map_err(|e| Error::io(dir, e))?;
    for video in videos {
        let header = json!({"h": h, "w": w, "ck": ck});
        write_blob(
            &grid_path(dir, &video.id, None),
            GRID_MAGIC,
            header.clone(),
            &[("grid", &grid_to_f32(&video.grid))],
        )?;
        for (k, aug) in video.augmented.iter().enumerate() {
            write_blob(
                &grid_path(dir, &video.id, Some(k)),
                GRID_MAGIC,
                header.clone(),
                &[("grid", &grid_to_f32(aug))],
            )?;
        }
    }
    let index = ExtractIndex {
        version: 1,
        height: h,
        width: w,
        channels: ck,
        records: videos
            .iter()
            .map(|v| IndexRecord {
                id: v.id.clone(),
                species: v.species.clone(),
                split: v.split.clone(),
                aggregate_ll: v.aggregate_ll,
                n_augmented: v.augmented.len(),
            })
            .collect(),
    };
    let path = dir.join(INDEX_NAME);
    let text =
        serde_json::to_string_pretty(&index).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_grid(dir: &Path, id: &str, variant: Option<usize>, dim: (usize, usize, usize)) -> Result<Array3<f64>> {
    let path = grid_path(dir, id, variant);
    let (header, blocks) = read_blob(&path, GRID_MAGIC)?;
    let h = header_u64(&header, "h", &path)? as usize;
    let w = header_u64(&header, "w", &path)? as usize;
    let ck = header_u64(&header, "ck", &path)? as usize;
    if (h, w, ck) != dim {
        return Err(Error::format(&path, "grid shape mismatch"));
    }
    let data = blocks
        .get("grid")
        .ok_or_else(|| Error::format(&path, "missing grid block"))?;
    Array3::from_shape_vec(dim, data.iter().map(|&v| f64::from(v)).collect())
        .map_err(|e| Error::format(&path, e.to_string()))
}

/// Load a directory produced by [`save_extracted`].
pub fn load_extracted(dir: &Path) -> Result<Vec<ExtractedVideo>> {
    let path = dir.join(INDEX_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: ExtractIndex =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let dim = (index.height, index.width, index.channels);
    index
        .records
        .iter()
        .map(|r| {
            let grid = read_grid(dir, &r.id, None, dim)?;
            let augmented = (0..r.n_augmented)
                .map(|k| read_grid(dir, &r.id, Some(k), dim))
                .collect::<Result<_>>()?;
            Ok(ExtractedVideo {
                id: r.id.clone(),
                species: r.species.clone(),
                split: r.split.clone(),
                aggregate_ll: r.aggregate_ll,
                grid,
                augmented,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, load, SynthConfig};
    use crate::density::{fit_density_grouped, DensityConfig};

    fn small_dataset(dir: &Path) -> Dataset {
        let mut config = SynthConfig::default_desk();
        config.height = 8;
        config.width = 8;
        config.frames = 4;
        config.bf_count = 8;
        config.species.truncate(2);
        for s in config.species.iter_mut() {
            s.count = 3;
            s.region = crate::dataset::Region { x: 1, y: 1, width: 6, height: 6 };
        }
        generate(&config, dir).unwrap();
        load(dir).unwrap()
    }

    fn fit_model(ds: &Dataset) -> DensityModel {
        let videos: Vec<Vec<crate::density::Frame>> = ds
            .bf_ids("train")
            .iter()
            .map(|id| ds.load_video(id).unwrap())
            .collect();
        let groups: Vec<Vec<&crate::density::Frame>> =
            videos.iter().map(|v| v.iter().collect()).collect();
        fit_density_grouped(
            &groups,
            &DensityConfig {
                k: 2,
                epochs: 4,
                hidden: 8,
                seed: 3,
                ..DensityConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn extraction_shapes_and_split_rules() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let model = fit_model(&ds);
        let extracted = extract_dataset(&ds, &model, 2, 7).unwrap();
        assert_eq!(extracted.len(), ds.manifest.videos.len());
        for v in &extracted {
            assert_eq!(v.grid.dim(), (8, 8, 6));
            if v.species.is_none() && v.split == "test" {
                assert!(v.augmented.is_empty(), "test bona fide must not be augmented");
            } else {
                assert_eq!(v.augmented.len(), 2);
            }
            assert!(v.aggregate_ll.is_finite());
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let model = fit_model(&ds);
        let a = extract_dataset(&ds, &model, 1, 7).unwrap();
        let b = extract_dataset(&ds, &model, 1, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.aggregate_ll, y.aggregate_ll);
            assert_eq!(x.grid, y.grid);
            assert_eq!(x.augmented, y.augmented);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let model = fit_model(&ds);
        let extracted = extract_dataset(&ds, &model, 1, 7).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_extracted(&extracted, out.path()).unwrap();
        let loaded = load_extracted(out.path()).unwrap();
        assert_eq!(extracted.len(), loaded.len());
        for (a, b) in extracted.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.split, b.split);
            assert_eq!(a.augmented.len(), b.augmented.len());
            // f32 round trip
            for (x, y) in a.grid.iter().zip(b.grid.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
