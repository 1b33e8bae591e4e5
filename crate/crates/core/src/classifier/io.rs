//! On-disk format for the trained classifier: 8-byte magic, JSON header
//! with layer sizes, f32 blocks per layer plus the bona-fide centroid.

use std::path::Path;

use serde_json::json;

use crate::blob::{header_f64, read_blob, write_blob};
use crate::error::{Error, Result};

use super::{BfReference, EmbeddingNetwork};

pub const MAGIC: &[u8; 8] = b"PADCLFN1";
pub const FORMAT_VERSION: u32 = 1;

pub fn save(net: &EmbeddingNetwork, reference: &BfReference, path: &Path) -> Result<()> {
    let header = json!({
        "version": FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "dropout": net.dropout,
        "weight_decay": net.weight_decay,
    });
    let mut blocks: Vec<(String, Vec<f32>)> = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        blocks.push((
            format!("w{i}"),
            layer.weights.iter().map(|&v| v as f32).collect(),
        ));
        blocks.push((format!("b{i}"), layer.bias.iter().map(|&v| v as f32).collect()));
    }
    blocks.push((
        "bf_centroid".to_string(),
        reference.centroid.iter().map(|&v| v as f32).collect(),
    ));
    let borrowed: Vec<(&str, &[f32])> = blocks
        .iter()
        .map(|(name, data)| (name.as_str(), data.as_slice()))
        .collect();
    write_blob(path, MAGIC, header, &borrowed)
}

pub fn load(path: &Path) -> Result<(EmbeddingNetwork, BfReference)> {
    let (header, blocks) = read_blob(path, MAGIC)?;
    let sizes: Vec<usize> = header
        .get("layer_sizes")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::format(path, "header missing layer_sizes"))?
        .iter()
        .map(|v| v.as_u64().unwrap_or(0) as usize)
        .collect();
    if sizes.len() != 6 {
        return Err(Error::format(path, "expected 6 layer sizes"));
    }
    let dropout = header_f64(&header, "dropout", path)?;
    let weight_decay = header_f64(&header, "weight_decay", path)?;
    let mut net = EmbeddingNetwork::new(sizes[0], sizes[1], sizes[5], dropout, weight_decay);
    // hidden widths may differ from the constructor default shape
    net.layer_sizes = sizes.clone();
    net.layers = sizes
        .windows(2)
        .map(|w| super::Dense::zeros(w[0], w[1]))
        .collect();
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let w = blocks
            .get(&format!("w{i}"))
            .ok_or_else(|| Error::format(path, format!("missing block w{i}")))?;
        let b = blocks
            .get(&format!("b{i}"))
            .ok_or_else(|| Error::format(path, format!("missing block b{i}")))?;
        let (want_w, want_b) = (layer.weights.len(), layer.bias.len());
        if w.len() != want_w || b.len() != want_b {
            return Err(Error::format(path, format!("layer {i} size mismatch")));
        }
        layer.weights = w.iter().map(|&v| f64::from(v)).collect();
        layer.bias = b.iter().map(|&v| f64::from(v)).collect();
    }
    let centroid = blocks
        .get("bf_centroid")
        .ok_or_else(|| Error::format(path, "missing block bf_centroid"))?
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    Ok((net, BfReference { centroid }))
}
