use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Matmul,
    Elementwise,
    Transfer,
    Sort,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Real16,
    Int8,
    Int4,
}

impl Precision {
    /// Arithmetic path used for weights stored at `bits`; real weights run at real16.
    pub fn for_weight_bits(bits: u32) -> Precision {
        match bits {
            0..=4 => Precision::Int4,
            5..=8 => Precision::Int8,
            _ => Precision::Real16,
        }
    }

    /// Storage bits of a weight on this path.
    pub fn bits(self) -> u32 {
        match self {
            Precision::Real16 => 16,
            Precision::Int8 => 8,
            Precision::Int4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    Coprocessor,
    Cpu,
}

/// Which part of the system an op is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Encoder,
    /// Prediction network and joint network.
    Prediction,
    LmExt,
    LmSrc,
    NonAccelerable,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Encoder,
        Component::Prediction,
        Component::LmExt,
        Component::LmSrc,
        Component::NonAccelerable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Prediction => "prediction",
            Component::LmExt => "lm_ext",
            Component::LmSrc => "lm_src",
            Component::NonAccelerable => "non_accelerable",
        }
    }
}

/// One operation of a workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub kind: OpKind,
    pub precision: Precision,
    pub macs: u64,
    pub bytes: u64,
    /// Work items for CPU ops (elements sorted, control decisions).
    #[serde(default)]
    pub items: u64,
    pub device: Device,
    pub component: Component,
}

/// Ordered operation log of one decode plus the cache counters that shaped it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    /// Acoustic frames covered by the trace.
    pub frames: u64,
    pub ops: Vec<OpRecord>,
    #[serde(default)]
    pub cache_hits: u64,
    #[serde(default)]
    pub cache_misses: u64,
}

impl WorkloadTrace {
    pub fn new(frames: u64) -> Self {
        Self {
            frames,
            ..Self::default()
        }
    }

    pub fn push(&mut self, op: OpRecord) {
        self.ops.push(op);
    }

    /// Checks the placement rule: sorting and control run on the CPU, the rest on the coprocessor.
    pub fn validate(&self) -> Result<()> {
        for (i, op) in self.ops.iter().enumerate() {
            let cpu = matches!(op.kind, OpKind::Sort | OpKind::Control);
            if cpu != (op.device == Device::Cpu) {
                return Err(Error::Simulation(format!(
                    "op {i}: {:?} cannot run on {:?}",
                    op.kind, op.device
                )));
            }
        }
        Ok(())
    }

    /// Concatenates traces (e.g. several utterances).
    pub fn extend(&mut self, other: &WorkloadTrace) {
        self.frames += other.frames;
        self.ops.extend_from_slice(&other.ops);
        self.cache_hits += other.cache_hits;
        self.cache_misses += other.cache_misses;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|e| Error::Serde(format!("trace: {e}")))?;
        t.validate()?;
        Ok(t)
    }
}
