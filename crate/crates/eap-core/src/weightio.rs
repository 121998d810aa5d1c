//! Weight bundle files.
//!
//! Layout: magic `EAPW`, format version (u32 LE), header length (u32 LE),
//! UTF-8 JSON header, raw payload. The header maps each tensor name to
//! `{dtype: "f64", shape, byte_offset}` (offset into the payload) and
//! embeds the model config under the key `config`. Payloads are raw
//! little-endian `f64`, row-major. Loading validates every shape against
//! the config and rejects missing or extra tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{TensorSlot, Weights};

pub const MAGIC: [u8; 4] = *b"EAPW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorDesc {
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

pub fn save_weights(weights: &Weights, path: &Path) -> Result<()> {
    let slots = TensorSlot::all(&weights.config);

    let mut header = Map::new();
    header.insert("config".into(), serde_json::to_value(&weights.config)?);
    let mut offset = 0u64;
    for slot in &slots {
        let shape = slot.shape(&weights.config);
        let len: usize = shape.iter().product();
        header.insert(
            slot.name(),
            serde_json::to_value(TensorDesc {
                dtype: "f64".into(),
                shape,
                byte_offset: offset,
            })?,
        );
        offset += (len * 8) as u64;
    }
    let header_bytes = serde_json::to_vec(&Value::Object(header))?;

    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&MAGIC)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes())?;
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for slot in &slots {
        for &v in weights.slot_slice(*slot) {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    let mut f = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Parse("not an EAPW weight bundle (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported bundle version {version} (expected {FORMAT_VERSION})"
        )));
    }
    f.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let mut header: Map<String, Value> = serde_json::from_slice(&header_bytes)?;

    let config: ModelConfig = serde_json::from_value(
        header
            .remove("config")
            .ok_or_else(|| Error::Parse("bundle header lacks a config manifest".into()))?,
    )?;
    config.validate().map_err(|e| Error::WeightMismatch(e.to_string()))?;

    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;

    let mut weights = Weights::zeros(&config)?;
    let slots = TensorSlot::all(&config);
    for slot in &slots {
        let name = slot.name();
        let desc: TensorDesc = serde_json::from_value(
            header
                .remove(&name)
                .ok_or_else(|| Error::WeightMismatch(format!("missing tensor {name}")))?,
        )?;
        if desc.dtype != "f64" {
            return Err(Error::WeightMismatch(format!(
                "tensor {name} has dtype {} (expected f64)",
                desc.dtype
            )));
        }
        let expected_shape = slot.shape(&config);
        if desc.shape != expected_shape {
            return Err(Error::WeightMismatch(format!(
                "tensor {name} has shape {:?} (expected {:?})",
                desc.shape, expected_shape
            )));
        }
        let len: usize = expected_shape.iter().product();
        let start = desc.byte_offset as usize;
        let end = start
            .checked_add(len * 8)
            .ok_or_else(|| Error::WeightMismatch(format!("tensor {name} offset overflow")))?;
        if end > payload.len() {
            return Err(Error::WeightMismatch(format!(
                "tensor {name} payload range {start}..{end} exceeds file ({} bytes)",
                payload.len()
            )));
        }
        let dst = weights.slot_mut(*slot);
        for (i, chunk) in payload[start..end].chunks_exact(8).enumerate() {
            dst[i] = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
    }
    if let Some(extra) = header.keys().next() {
        return Err(Error::WeightMismatch(format!("unexpected tensor {extra} in bundle")));
    }
    Ok(weights)
}
