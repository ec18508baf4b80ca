use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use super::checkpoint::{plan_layout, Storage, TensorEntry};
use super::scheme::{NetKind, QuantScheme};
use crate::error::Result;

/// Megabyte as used for model sizes: 10^6 bytes.
pub const MB: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSize {
    pub name: String,
    pub params: usize,
    pub bits: u32,
    pub bytes: usize,
}

/// Storage footprint of one or more networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub tensors: Vec<TensorSize>,
    pub total_params: usize,
    pub total_bytes: usize,
    /// Bytes if every parameter were stored as real32.
    pub baseline_bytes: usize,
    pub size_mb: f64,
    pub baseline_mb: f64,
    pub compression: f64,
    /// Fraction of parameters per storage kind (`real32`, `packed4`, ...).
    pub fractions: BTreeMap<String, f64>,
}

impl SizeReport {
    pub fn from_entries(entries: &[TensorEntry]) -> Self {
        let tensors: Vec<TensorSize> = entries
            .iter()
            .map(|e| TensorSize {
                name: e.name.clone(),
                params: e.numel(),
                bits: e.storage.bits(),
                bytes: e.length as usize,
            })
            .collect();
        Self::from_sizes(tensors)
    }

    fn from_sizes(tensors: Vec<TensorSize>) -> Self {
        let total_params: usize = tensors.iter().map(|t| t.params).sum();
        let total_bytes: usize = tensors.iter().map(|t| t.bytes).sum();
        let baseline_bytes = 4 * total_params;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in &tensors {
            let name = match t.bits {
                32 => Storage::Real32,
                b => Storage::packed(b).unwrap_or(Storage::Real32),
            }
            .name();
            *counts.entry(name.to_string()).or_default() += t.params;
        }
        let fractions = counts
            .into_iter()
            .map(|(k, n)| (k, n as f64 / total_params.max(1) as f64))
            .collect();
        Self {
            total_params,
            total_bytes,
            baseline_bytes,
            size_mb: total_bytes as f64 / MB,
            baseline_mb: baseline_bytes as f64 / MB,
            compression: if total_bytes == 0 { 1.0 } else { baseline_bytes as f64 / total_bytes as f64 },
            fractions,
            tensors,
        }
    }

    /// Combined report over several networks.
    pub fn merge(reports: &[SizeReport]) -> Self {
        Self::from_sizes(reports.iter().flat_map(|r| r.tensors.iter().cloned()).collect())
    }

    pub fn fraction(&self, storage: Storage) -> f64 {
        self.fractions.get(storage.name()).copied().unwrap_or(0.0)
    }
}

/// Size of the given networks under `scheme`, from the planned layout only.
pub fn planned_size(arch: &ArchConfig, kinds: &[NetKind], scheme: &QuantScheme) -> Result<SizeReport> {
    let parts = kinds
        .iter()
        .map(|&k| Ok(SizeReport::from_entries(&plan_layout(arch, k, scheme)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SizeReport::merge(&parts))
}
