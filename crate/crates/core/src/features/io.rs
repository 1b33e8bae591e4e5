//! On-disk format for the fitted feature front-end: 8-byte magic, JSON
//! header with shapes, f32 blocks for both standardizers and the PCA.

use std::path::Path;

use ndarray::Array3;
use serde_json::json;

use crate::blob::{header_u64, read_blob, write_blob};
use crate::error::{Error, Result};

use super::{FeaturePipeline, FeatureStandardizer, PcaModel, PixelStandardizer};

pub const MAGIC: &[u8; 8] = b"PADFEAT1";
pub const FORMAT_VERSION: u32 = 1;

fn f32s(v: impl IntoIterator<Item = f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

pub fn save(pipeline: &FeaturePipeline, path: &Path) -> Result<()> {
    let (h, w, ck) = pipeline.pixel.mean.dim();
    let d = pipeline.pca.input_dim();
    let m = pipeline.pca.component_count();
    let header = json!({
        "version": FORMAT_VERSION,
        "h": h, "w": w, "ck": ck,
        "d": d, "m": m,
    });
    let components_flat: Vec<f32> = pipeline
        .pca
        .components
        .iter()
        .flat_map(|c| c.iter().map(|&v| v as f32))
        .collect();
    write_blob(
        path,
        MAGIC,
        header,
        &[
            ("px_mean", &f32s(pipeline.pixel.mean.iter().copied())),
            ("px_std", &f32s(pipeline.pixel.std.iter().copied())),
            ("pca_mean", &f32s(pipeline.pca.mean.iter().copied())),
            ("pca_components", &components_flat),
            (
                "pca_variance",
                &f32s(pipeline.pca.explained_variance.iter().copied()),
            ),
            ("ft_mean", &f32s(pipeline.feature.mean.iter().copied())),
            ("ft_std", &f32s(pipeline.feature.std.iter().copied())),
        ],
    )
}

pub fn load(path: &Path) -> Result<FeaturePipeline> {
    let (header, blocks) = read_blob(path, MAGIC)?;
    let h = header_u64(&header, "h", path)? as usize;
    let w = header_u64(&header, "w", path)? as usize;
    let ck = header_u64(&header, "ck", path)? as usize;
    let d = header_u64(&header, "d", path)? as usize;
    let m = header_u64(&header, "m", path)? as usize;

    let take = |name: &str, want: usize| -> Result<Vec<f64>> {
        let b = blocks
            .get(name)
            .ok_or_else(|| Error::format(path, format!("missing block '{name}'")))?;
        if b.len() != want {
            return Err(Error::format(
                path,
                format!("block '{name}' has {} entries, expected {want}", b.len()),
            ));
        }
        Ok(b.iter().map(|&v| f64::from(v)).collect())
    };

    let cells = h * w * ck;
    if cells != d {
        return Err(Error::format(path, "grid shape inconsistent with PCA dimension"));
    }
    let px_mean = Array3::from_shape_vec((h, w, ck), take("px_mean", cells)?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let px_std = Array3::from_shape_vec((h, w, ck), take("px_std", cells)?)
        .map_err(|e| Error::format(path, e.to_string()))?;

    let flat = take("pca_components", m * d)?;
    let components: Vec<Vec<f64>> = flat.chunks_exact(d).map(|c| c.to_vec()).collect();

    Ok(FeaturePipeline {
        pixel: PixelStandardizer {
            mean: px_mean,
            std: px_std,
        },
        pca: PcaModel {
            mean: take("pca_mean", d)?,
            components,
            explained_variance: take("pca_variance", m)?,
        },
        feature: FeatureStandardizer {
            mean: take("ft_mean", m + 1)?,
            std: take("ft_std", m + 1)?,
        },
    })
}
