//! Weight files.
//!
//! ```text
//! wallnet-weights 1\n
//! <header byte count>\n
//! <JSON header: input dims, layer specs, parameter shapes, init seed, metadata>
//! <parameters as little-endian f32, layer order, weight before bias>
//! <CRC-32C of everything above, u32 little-endian>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{LayerSpec, Network, NnError, Tensor};

const MAGIC: &str = "wallnet-weights";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub input_dims: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub param_shapes: Vec<Vec<usize>>,
    pub init: String,
    pub init_seed: u64,
    /// Caller-defined data stored alongside the weights (normalization
    /// statistics, training configuration, ...).
    pub metadata: serde_json::Value,
}

/// Serializes a network; identical inputs give identical bytes.
pub fn encode(net: &Network<f32>, init_seed: u64, metadata: serde_json::Value) -> Vec<u8> {
    let header = WeightHeader {
        input_dims: net.input_dims().to_vec(),
        layers: net.specs(),
        param_shapes: net.params().iter().map(|p| p.shape().to_vec()).collect(),
        init: "glorot_uniform".into(),
        init_seed,
        metadata,
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = format!("{MAGIC} {WEIGHT_FORMAT_VERSION}\n{}\n{json}", json.len()).into_bytes();
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Network<f32>, WeightHeader), NnError> {
    let fmt = |m: &str| NnError::Format(m.to_string());
    if bytes.len() < 4 {
        return Err(fmt("file too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32c::crc32c(body);
    if stored != computed {
        return Err(NnError::Checksum { stored, computed });
    }
    let mut lines = body.splitn(3, |&b| b == b'\n');
    let magic = std::str::from_utf8(lines.next().ok_or_else(|| fmt("missing magic line"))?).map_err(|_| fmt("magic line"))?;
    match magic.split_once(' ') {
        Some((MAGIC, v)) if v == WEIGHT_FORMAT_VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(NnError::Format(format!("unsupported version {v}"))),
        _ => return Err(fmt("not a weight file")),
    }
    let len: usize = std::str::from_utf8(lines.next().ok_or_else(|| fmt("missing header length"))?)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fmt("bad header length"))?;
    let rest = lines.next().ok_or_else(|| fmt("missing header"))?;
    if rest.len() < len {
        return Err(fmt("truncated header"));
    }
    let (json, payload) = rest.split_at(len);
    let header: WeightHeader = serde_json::from_slice(json).map_err(|e| NnError::Format(e.to_string()))?;
    let expected: usize = header.param_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if payload.len() != 4 * expected {
        return Err(NnError::Format(format!("payload has {} bytes, shapes need {}", payload.len(), 4 * expected)));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut shapes = header.param_shapes.iter();
    let mut params = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        let mut group = Vec::new();
        for _ in spec.param_shapes() {
            let shape = shapes.next().ok_or_else(|| fmt("fewer parameter shapes than layers need"))?;
            let n = shape.iter().product();
            group.push(Tensor::from_vec(shape, values.by_ref().take(n).collect())?);
        }
        params.push(group);
    }
    if shapes.next().is_some() {
        return Err(fmt("more parameter shapes than layers need"));
    }
    let net = Network::from_params(&header.input_dims, &header.layers, params)?;
    Ok((net, header))
}

/// Writes through a temporary file and a rename.
pub fn save(path: &Path, net: &Network<f32>, init_seed: u64, metadata: serde_json::Value) -> Result<(), NnError> {
    let io = |source| NnError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode(net, init_seed, metadata)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: &Path) -> Result<(Network<f32>, WeightHeader), NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes)
}
