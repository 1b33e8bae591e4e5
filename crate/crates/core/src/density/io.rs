//! On-disk format for fitted density models: 8-byte magic, JSON header,
//! little-endian f32 parameter blocks.

use std::path::Path;

use serde_json::json;

use crate::blob::{header_u64, read_blob, write_blob};
use crate::error::Result;

use super::conv::{MaskKind, MaskedConv};
use super::{DensityConfig, DensityModel, COLOR_CHANNELS};

pub const MAGIC: &[u8; 8] = b"PADENS01";
pub const FORMAT_VERSION: u32 = 1;

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub fn save(model: &DensityModel, path: &Path) -> Result<()> {
    let header = json!({
        "version": model.version,
        "height": model.height,
        "width": model.width,
        "k": model.k,
        "hidden": model.conv1.out_channels,
        "kernel": kernel_of(&model.conv1),
        "seed": model.seed,
    });
    write_blob(
        path,
        MAGIC,
        header,
        &[
            ("conv1_w", &to_f32(&model.conv1.weights)),
            ("conv1_b", &to_f32(&model.conv1.bias)),
            ("conv2_w", &to_f32(&model.conv2.weights)),
            ("conv2_b", &to_f32(&model.conv2.bias)),
        ],
    )
}

fn kernel_of(conv: &MaskedConv) -> usize {
    // taps are drawn from a (2r+1)^2 grid; recover k from the largest offset
    let r = conv
        .taps
        .iter()
        .map(|&(di, dj)| di.abs().max(dj.abs()))
        .max()
        .unwrap_or(0);
    (2 * r + 1) as usize
}

pub fn load(path: &Path) -> Result<DensityModel> {
    let (header, blocks) = read_blob(path, MAGIC)?;
    let height = header_u64(&header, "height", path)? as usize;
    let width = header_u64(&header, "width", path)? as usize;
    let k = header_u64(&header, "k", path)? as usize;
    let hidden = header_u64(&header, "hidden", path)? as usize;
    let kernel = header_u64(&header, "kernel", path)? as usize;
    let seed = header_u64(&header, "seed", path)?;
    let version = header_u64(&header, "version", path)? as u32;

    let config = DensityConfig {
        k,
        hidden,
        kernel,
        seed,
        ..DensityConfig::default()
    };
    let mut model = DensityModel::untrained(height, width, &config);
    model.version = version;
    let expect = |name: &str| -> Result<Vec<f64>> {
        blocks
            .get(name)
            .map(|b| to_f64(b))
            .ok_or_else(|| crate::error::Error::format(path, format!("missing block '{name}'")))
    };
    model.conv1.weights = expect("conv1_w")?;
    model.conv1.bias = expect("conv1_b")?;
    model.conv2.weights = expect("conv2_w")?;
    model.conv2.bias = expect("conv2_b")?;

    let want1 = MaskedConv::zeros(COLOR_CHANNELS, hidden, kernel, MaskKind::Strict);
    if model.conv1.weights.len() != want1.weights.len()
        || model.conv2.out_channels * model.conv2.in_channels * model.conv2.taps.len()
            != model.conv2.weights.len()
    {
        return Err(crate::error::Error::format(path, "parameter block size mismatch"));
    }
    Ok(model)
}
