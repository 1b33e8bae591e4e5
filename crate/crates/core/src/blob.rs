//! Versioned binary artifact format shared by the model files: an 8-byte
//! magic, a JSON header, then named little-endian f32 blocks in the order
//! listed by the header's `blocks` array.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};

pub fn write_blob(
    path: &Path,
    magic: &[u8; 8],
    mut header: Value,
    blocks: &[(&str, &[f32])],
) -> Result<()> {
    let block_index: Vec<Value> = blocks
        .iter()
        .map(|(name, data)| json!({"name": name, "len": data.len()}))
        .collect();
    header
        .as_object_mut()
        .expect("blob header must be a JSON object")
        .insert("blocks".to_string(), Value::Array(block_index));

    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::format(path, format!("header encode: {e}")))?;

    let mut out = Vec::with_capacity(
        8 + 4 + header_bytes.len() + blocks.iter().map(|(_, d)| 4 * d.len()).sum::<usize>(),
    );
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, data) in blocks {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_blob(path: &Path, magic: &[u8; 8]) -> Result<(Value, BTreeMap<String, Vec<f32>>)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 12 {
        return Err(Error::format(path, "file too short"));
    }
    if &bytes[..8] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..8])
            ),
        ));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::format(path, "truncated header"));
    }
    let header: Value = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::format(path, format!("header decode: {e}")))?;

    let block_index = header
        .get("blocks")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::format(path, "header missing blocks index"))?
        .clone();

    let mut offset = 12 + header_len;
    let mut blocks = BTreeMap::new();
    for entry in &block_index {
        let name = entry
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::format(path, "block entry missing name"))?;
        let len = entry
            .get("len")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::format(path, "block entry missing len"))? as usize;
        if bytes.len() < offset + 4 * len {
            return Err(Error::format(path, format!("truncated block '{name}'")));
        }
        let data: Vec<f32> = bytes[offset..offset + 4 * len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 4 * len;
        blocks.insert(name.to_string(), data);
    }
    Ok((header, blocks))
}

pub fn header_u64(header: &Value, key: &str, path: &Path) -> Result<u64> {
    header
        .get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::format(path, format!("header missing '{key}'")))
}

pub fn header_f64(header: &Value, key: &str, path: &Path) -> Result<f64> {
    header
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::format(path, format!("header missing '{key}'")))
}
