use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use super::nets::{LayerMut, LayerRef, Network};
use super::scheme::{layer_ids, LayerKind, NetKind, QuantScheme};
use crate::error::{Error, Result};
use crate::lstm::{Placement, QuantMatrix, Weight};
use crate::quant::{QuantParams, QuantizerSpec};
use crate::tensor::{packed_len, FloatTensor, PackedTensor};

pub const MAGIC: &[u8; 4] = b"QRT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    Real32,
    Packed2,
    Packed4,
    Packed8,
}

impl Storage {
    pub fn packed(bits: u32) -> Result<Storage> {
        match bits {
            2 => Ok(Storage::Packed2),
            4 => Ok(Storage::Packed4),
            8 => Ok(Storage::Packed8),
            _ => Err(Error::UnsupportedBits { bits, what: "packed storage" }),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Storage::Real32 => 32,
            Storage::Packed2 => 2,
            Storage::Packed4 => 4,
            Storage::Packed8 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Storage::Real32 => "real32",
            Storage::Packed2 => "packed2",
            Storage::Packed4 => "packed4",
            Storage::Packed8 => "packed8",
        }
    }

    pub fn byte_len(self, numel: usize) -> usize {
        match self {
            Storage::Real32 => 4 * numel,
            s => packed_len(numel, s.bits()),
        }
    }
}

/// One row of the tensor table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub storage: Storage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<QuantParams>,
    pub offset: u64,
    pub length: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Quantizer state of one layer that is not held in a tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerHeader {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_spec: Option<QuantizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_spec: Option<QuantizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_spec: Option<QuantizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_q: Option<QuantParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden_q: Vec<Option<QuantParams>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: u32,
    pub kind: NetKind,
    pub arch: ArchConfig,
    pub layers: Vec<LayerHeader>,
    pub tensors: Vec<TensorEntry>,
}

const DIRS: [&str; 2] = ["fwd", "bwd"];

/// Tensor names of one layer with shapes, in payload order.
fn layer_tensor_shapes(arch: &ArchConfig, kind: NetKind, id: &str) -> Vec<(String, Vec<usize>, bool)> {
    // (name, shape, is_weight)
    let (input, hidden, dirs) = lstm_dims(arch, kind, id);
    match LayerKind::of(id) {
        LayerKind::Lstm => (0..dirs)
            .flat_map(|d| {
                let dir = DIRS[d];
                [
                    (format!("{id}.w_ih.{dir}"), vec![4 * hidden, input], true),
                    (format!("{id}.w_hh.{dir}"), vec![4 * hidden, hidden], true),
                    (format!("{id}.bias.{dir}"), vec![4 * hidden], false),
                ]
            })
            .collect(),
        LayerKind::Linear => {
            let (i, o) = linear_dims(arch, id);
            vec![(format!("{id}.weight"), vec![o, i], true), (format!("{id}.bias"), vec![o], false)]
        }
        LayerKind::Embedding => {
            let dim = match kind {
                NetKind::LmExt => arch.lm_ext_embed,
                _ => arch.embed_dim,
            };
            vec![(format!("{id}.table"), vec![arch.vocab, dim], true)]
        }
    }
}

fn lstm_dims(arch: &ArchConfig, kind: NetKind, id: &str) -> (usize, usize, usize) {
    let index = |p: &str| id.strip_prefix(p).and_then(|s| s.parse::<usize>().ok());
    match kind {
        NetKind::Rnnt => match index("enc.lstm") {
            Some(0) => (arch.encoder_input, arch.encoder_hidden, 2),
            Some(_) => (2 * arch.encoder_hidden, arch.encoder_hidden, 2),
            None => (arch.embed_dim, arch.pred_hidden, 1),
        },
        NetKind::LmExt => match index("lm_ext.lstm") {
            Some(0) => (arch.lm_ext_embed, arch.lm_ext_hidden, 1),
            _ => (arch.lm_ext_hidden, arch.lm_ext_hidden, 1),
        },
        NetKind::LmSrc => (arch.embed_dim, arch.pred_hidden, 1),
    }
}

fn linear_dims(arch: &ArchConfig, id: &str) -> (usize, usize) {
    match id {
        "enc.proj" => (2 * arch.encoder_hidden, arch.joint_dim),
        "pred.proj" | "lm_src.bottleneck" => (arch.pred_hidden, arch.joint_dim),
        "joint.out" | "lm_src.out" => (arch.joint_dim, arch.vocab),
        "lm_ext.bottleneck" => (arch.lm_ext_hidden, arch.lm_ext_bottleneck),
        "lm_ext.out" => (arch.lm_ext_bottleneck, arch.vocab),
        _ => unreachable!("unknown linear layer {id}"),
    }
}

/// Tensor table a network of this shape would be saved with under `scheme`,
/// computed without materializing any weights.
pub fn plan_layout(arch: &ArchConfig, kind: NetKind, scheme: &QuantScheme) -> Result<Vec<TensorEntry>> {
    arch.validate()?;
    scheme.validate_for(arch)?;
    let mut offset = 0u64;
    let mut entries = Vec::new();
    for id in layer_ids(arch, kind) {
        let bits = scheme.layer(&id).and_then(|l| l.weight).map(|w| w.bits);
        for (name, shape, is_weight) in layer_tensor_shapes(arch, kind, &id) {
            let storage = match (is_weight, bits) {
                (true, Some(b)) => Storage::packed(b)?,
                _ => Storage::Real32,
            };
            let length = storage.byte_len(shape.iter().product()) as u64;
            entries.push(TensorEntry {
                name,
                shape,
                storage,
                params: None,
                offset,
                length,
            });
            offset += length;
        }
    }
    Ok(entries)
}

enum TensorData<'a> {
    Real(&'a [f32]),
    Packed(&'a PackedTensor),
}

fn weight_data(w: &Weight) -> TensorData<'_> {
    match w {
        Weight::Real(t) => TensorData::Real(&t.values),
        Weight::Quant(q) => TensorData::Packed(q.packed()),
    }
}

/// Serializes a network into the checkpoint byte layout.
pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let arch = net.arch().clone();
    let kind = net.kind();
    let mut layers = Vec::new();
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (id, layer) in net.layers() {
        let shapes = layer_tensor_shapes(&arch, kind, &id);
        let mut header = LayerHeader {
            id: id.clone(),
            weight_spec: None,
            input_spec: None,
            hidden_spec: None,
            placement: None,
            input_q: None,
            hidden_q: Vec::new(),
        };
        let data: Vec<TensorData> = match layer {
            LayerRef::Lstm(l) => {
                header.weight_spec = l.cfg.weight_spec;
                header.input_spec = l.cfg.input_spec;
                header.hidden_spec = l.cfg.hidden_spec;
                header.placement = Some(l.cfg.placement);
                header.input_q = l.input_q;
                header.hidden_q = l.dirs.iter().map(|d| d.hidden_q).collect();
                l.dirs
                    .iter()
                    .flat_map(|d| [weight_data(&d.w_ih), weight_data(&d.w_hh), TensorData::Real(&d.bias)])
                    .collect()
            }
            LayerRef::Linear(l) => {
                header.input_q = l.input_q;
                vec![weight_data(&l.weight), TensorData::Real(&l.bias)]
            }
            LayerRef::Embedding(e) => vec![weight_data(&e.table)],
        };
        for ((name, shape, _), d) in shapes.into_iter().zip(data) {
            let offset = payload.len() as u64;
            let (storage, params) = match d {
                TensorData::Real(v) => {
                    payload.extend(v.iter().flat_map(|x| x.to_le_bytes()));
                    (Storage::Real32, None)
                }
                TensorData::Packed(p) => {
                    payload.extend_from_slice(p.payload());
                    (Storage::packed(p.bits())?, Some(*p.params()))
                }
            };
            tensors.push(TensorEntry {
                name,
                shape,
                storage,
                params,
                offset,
                length: payload.len() as u64 - offset,
            });
        }
        layers.push(header);
    }
    let header = CheckpointHeader {
        format: FORMAT_VERSION,
        kind,
        arch,
        layers,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

/// Parses and validates the header; returns it with the payload slice.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing QRT1 magic"));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let rest = &bytes[12..];
    if len > rest.len() as u64 {
        return Err(corrupt(format!("header of {len} bytes exceeds file")));
    }
    let (json, payload) = rest.split_at(len as usize);
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.format != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {}", header.format)));
    }
    header.arch.validate()?;
    validate_table(&header.tensors, payload.len() as u64)?;
    Ok((header, payload))
}

fn validate_table(tensors: &[TensorEntry], payload_len: u64) -> Result<()> {
    let mut names = BTreeSet::new();
    let mut spans = Vec::with_capacity(tensors.len());
    for t in tensors {
        if !names.insert(t.name.as_str()) {
            return Err(corrupt(format!("duplicate tensor `{}`", t.name)));
        }
        let expected = t.storage.byte_len(t.numel()) as u64;
        if t.length != expected {
            return Err(corrupt(format!(
                "tensor `{}` has length {} but {} {:?} needs {expected}",
                t.name,
                t.length,
                t.storage.name(),
                t.shape
            )));
        }
        if (t.storage == Storage::Real32) != t.params.is_none() {
            return Err(corrupt(format!("tensor `{}`: params must accompany packed storage only", t.name)));
        }
        if let Some(p) = &t.params {
            if p.bits != t.storage.bits() {
                return Err(corrupt(format!("tensor `{}`: params bits disagree with storage", t.name)));
            }
        }
        let end = t
            .offset
            .checked_add(t.length)
            .ok_or_else(|| corrupt(format!("tensor `{}` offset overflows", t.name)))?;
        spans.push((t.offset, end, t.name.as_str()));
    }
    spans.sort();
    let mut prev_end = 0;
    for &(start, end, name) in &spans {
        if start < prev_end {
            return Err(corrupt(format!("tensor `{name}` overlaps the previous tensor")));
        }
        prev_end = end;
    }
    if prev_end > payload_len {
        return Err(corrupt(format!("payload truncated: table needs {prev_end} bytes, found {payload_len}")));
    }
    if prev_end < payload_len {
        return Err(corrupt(format!("{} trailing payload bytes", payload_len - prev_end)));
    }
    Ok(())
}

fn read_real(entry: &TensorEntry, payload: &[u8]) -> Result<FloatTensor> {
    let bytes = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
    let v = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FloatTensor::new(entry.shape.clone(), v)
}

fn read_weight(entry: &TensorEntry, payload: &[u8]) -> Result<Weight> {
    match entry.params {
        None => Ok(Weight::Real(read_real(entry, payload)?)),
        Some(p) => {
            let bytes = payload[entry.offset as usize..(entry.offset + entry.length) as usize].to_vec();
            let packed = PackedTensor::from_payload(entry.shape.clone(), p, bytes)?;
            Ok(Weight::Quant(QuantMatrix::new(packed)?))
        }
    }
}

/// Rebuilds a network from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let (header, payload) = read_header(bytes)?;
    let table: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let layer_headers: BTreeMap<&str, &LayerHeader> = header.layers.iter().map(|l| (l.id.as_str(), l)).collect();
    let mut net = Network::build(&header.arch, header.kind, 0)?;
    let mut used = BTreeSet::new();
    let arch = header.arch.clone();
    for (id, layer) in net.layers_mut() {
        let lh = layer_headers
            .get(id.as_str())
            .ok_or_else(|| corrupt(format!("layer `{id}` missing from header")))?;
        let shapes = layer_tensor_shapes(&arch, header.kind, &id);
        let mut entries = Vec::with_capacity(shapes.len());
        for (name, shape, _) in &shapes {
            let e = table
                .get(name.as_str())
                .ok_or_else(|| corrupt(format!("tensor `{name}` missing")))?;
            if &e.shape != shape {
                return Err(corrupt(format!("tensor `{name}` has shape {:?}, expected {shape:?}", e.shape)));
            }
            used.insert(name.clone());
            entries.push(*e);
        }
        let bias = |e: &TensorEntry| -> Result<Vec<f32>> {
            if e.params.is_some() {
                return Err(corrupt(format!("bias `{}` must be real32", e.name)));
            }
            Ok(read_real(e, payload)?.values)
        };
        match layer {
            LayerMut::Lstm(l) => {
                l.cfg.weight_spec = lh.weight_spec;
                l.cfg.input_spec = lh.input_spec;
                l.cfg.hidden_spec = lh.hidden_spec;
                l.cfg.placement = lh.placement.unwrap_or_default();
                l.input_q = lh.input_q;
                if lh.hidden_q.len() > l.dirs.len() {
                    return Err(corrupt(format!("layer `{id}` lists too many directions")));
                }
                for (d, dir) in l.dirs.iter_mut().enumerate() {
                    dir.w_ih = read_weight(entries[3 * d], payload)?;
                    dir.w_hh = read_weight(entries[3 * d + 1], payload)?;
                    dir.bias = bias(entries[3 * d + 2])?;
                    dir.hidden_q = lh.hidden_q.get(d).copied().flatten();
                }
            }
            LayerMut::Linear(l) => {
                l.weight = read_weight(entries[0], payload)?;
                l.bias = bias(entries[1])?;
                l.input_q = lh.input_q;
            }
            LayerMut::Embedding(e) => {
                let t = read_weight(entries[0], payload)?;
                e.set_table(t);
            }
        }
    }
    if let Some(extra) = header.tensors.iter().find(|t| !used.contains(&t.name)) {
        return Err(corrupt(format!("unexpected tensor `{}`", extra.name)));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Reads only the header of a checkpoint file.
pub fn load_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(read_header(&bytes)?.0)
}
