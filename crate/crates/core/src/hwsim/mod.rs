//! Analytical cost model of a coprocessor + CPU accelerator running the decoder.

mod cost;
mod sim;
mod trace;
mod workload;

pub use cost::{LmShape, LstmShape, MatmulShape, ModelProfile, PrecisionProfile};
pub use sim::{compare, simulate, Acceleration, Breakdown, CpuLatency, HwConfig, MacRates, RtfReport, PRESETS};
pub use trace::{Component, Device, OpKind, OpRecord, Precision, WorkloadTrace};
pub use workload::{arch_trace, sweep_beam, synthetic_trace, WorkloadProfile};
