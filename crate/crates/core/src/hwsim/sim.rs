use serde::{Deserialize, Serialize};

use super::trace::{Component, Device, OpKind, Precision, WorkloadTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacRates {
    pub real16: f64,
    pub int8: f64,
    pub int4: f64,
}

impl MacRates {
    pub fn get(&self, p: Precision) -> f64 {
        match p {
            Precision::Real16 => self.real16,
            Precision::Int8 => self.int8,
            Precision::Int4 => self.int4,
        }
    }
}

/// Seconds per work item of CPU-side operations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuLatency {
    pub sort: f64,
    pub control: f64,
}

/// Coprocessor + CPU accelerator model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwConfig {
    pub name: String,
    /// MAC/s per arithmetic path.
    pub peak_macs_per_s: MacRates,
    /// Bytes/s between host memory and the coprocessor.
    pub link_bandwidth: f64,
    pub cpu_op_latency: CpuLatency,
    /// Seconds added to every coprocessor launch.
    pub kernel_launch_overhead: f64,
    /// Audio seconds per acoustic frame. A calibration constant, not a
    /// property of the feature pipeline.
    pub frame_duration: f64,
}

/// Names accepted by [`HwConfig::preset`].
pub const PRESETS: [&str; 2] = ["bw32", "bw64"];

impl HwConfig {
    /// Frozen calibration at a 32 Gbps link.
    pub fn bw32() -> Self {
        Self {
            name: "bw32".into(),
            peak_macs_per_s: MacRates {
                real16: 1.0e12,
                int8: 2.0e12,
                int4: 4.0e12,
            },
            link_bandwidth: 4.0e9,
            cpu_op_latency: CpuLatency {
                sort: 1.8e-6,
                control: 1.0e-7,
            },
            kernel_launch_overhead: 1.0e-5,
            frame_duration: 0.332,
        }
    }

    /// Same accelerator with the link doubled to 64 Gbps.
    pub fn bw64() -> Self {
        Self {
            name: "bw64".into(),
            link_bandwidth: 8.0e9,
            ..Self::bw32()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "bw32" => Ok(Self::bw32()),
            "bw64" => Ok(Self::bw64()),
            _ => Err(Error::InvalidConfig {
                path: "hw".into(),
                detail: format!("unknown preset `{name}`; available presets: {}", PRESETS.join(", ")),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: &str| {
            Err(Error::InvalidConfig {
                path: format!("hw.{field}"),
                detail: detail.into(),
            })
        };
        let r = &self.peak_macs_per_s;
        for (f, v) in [("peak_macs_per_s.real16", r.real16), ("peak_macs_per_s.int8", r.int8), ("peak_macs_per_s.int4", r.int4)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(f, "must be positive");
            }
        }
        if !(r.int4 >= r.int8 && r.int8 >= r.real16) {
            return bad("peak_macs_per_s", "rates must satisfy int4 >= int8 >= real16");
        }
        if !(self.link_bandwidth.is_finite() && self.link_bandwidth > 0.0) {
            return bad("link_bandwidth", "must be positive");
        }
        for (f, v) in [
            ("cpu_op_latency.sort", self.cpu_op_latency.sort),
            ("cpu_op_latency.control", self.cpu_op_latency.control),
            ("kernel_launch_overhead", self.kernel_launch_overhead),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(f, "must be finite and non-negative");
            }
        }
        if !(self.frame_duration.is_finite() && self.frame_duration > 0.0) {
            return bad("frame_duration", "must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let hw: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: "hw".into(),
            detail: e.message().to_string(),
        })?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("hw config serializes")
    }
}

/// Seconds per component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub encoder: f64,
    pub prediction: f64,
    pub lm_ext: f64,
    pub lm_src: f64,
    pub non_accelerable: f64,
}

impl Breakdown {
    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Encoder => self.encoder,
            Component::Prediction => self.prediction,
            Component::LmExt => self.lm_ext,
            Component::LmSrc => self.lm_src,
            Component::NonAccelerable => self.non_accelerable,
        }
    }

    fn get_mut(&mut self, c: Component) -> &mut f64 {
        match c {
            Component::Encoder => &mut self.encoder,
            Component::Prediction => &mut self.prediction,
            Component::LmExt => &mut self.lm_ext,
            Component::LmSrc => &mut self.lm_src,
            Component::NonAccelerable => &mut self.non_accelerable,
        }
    }

    pub fn sum(&self) -> f64 {
        Component::ALL.iter().map(|&c| self.get(c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub hw: String,
    pub total_s: f64,
    pub audio_s: f64,
    pub rtf: f64,
    pub breakdown: Breakdown,
}

impl RtfReport {
    /// Everything except the encoder.
    pub fn decoder_s(&self) -> f64 {
        self.total_s - self.breakdown.encoder
    }

    pub fn share(&self, c: Component) -> f64 {
        if self.total_s == 0.0 {
            0.0
        } else {
            self.breakdown.get(c) / self.total_s
        }
    }

    /// RTF contributed by one component.
    pub fn component_rtf(&self, c: Component) -> f64 {
        if self.audio_s == 0.0 {
            0.0
        } else {
            self.breakdown.get(c) / self.audio_s
        }
    }
}

/// Serial execution: each coprocessor op costs
/// `max(macs / rate, bytes / bandwidth) + launch overhead`; CPU ops cost
/// their per-item latency times the item count.
pub fn simulate(trace: &WorkloadTrace, hw: &HwConfig) -> Result<RtfReport> {
    hw.validate()?;
    trace.validate()?;
    let mut breakdown = Breakdown::default();
    for op in &trace.ops {
        let t = match op.device {
            Device::Coprocessor => {
                let compute = op.macs as f64 / hw.peak_macs_per_s.get(op.precision);
                let transfer = op.bytes as f64 / hw.link_bandwidth;
                compute.max(transfer) + hw.kernel_launch_overhead
            }
            Device::Cpu => match op.kind {
                OpKind::Sort => hw.cpu_op_latency.sort * op.items as f64,
                OpKind::Control => hw.cpu_op_latency.control * op.items as f64,
                k => return Err(Error::Simulation(format!("{k:?} has no CPU cost model"))),
            },
        };
        *breakdown.get_mut(op.component) += t;
    }
    let total_s = breakdown.sum();
    let audio_s = trace.frames as f64 * hw.frame_duration;
    Ok(RtfReport {
        hw: hw.name.clone(),
        total_s,
        audio_s,
        rtf: if audio_s > 0.0 { total_s / audio_s } else { 0.0 },
        breakdown,
    })
}

/// Speed-up of `b` relative to baseline `a` (ratios `a / b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acceleration {
    pub encoder: f64,
    pub decoder: f64,
    pub total: f64,
    pub prediction: f64,
    pub lm_ext: f64,
    pub lm_src: f64,
    pub non_accelerable: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

pub fn compare(a: &RtfReport, b: &RtfReport) -> Acceleration {
    let (x, y) = (&a.breakdown, &b.breakdown);
    Acceleration {
        encoder: ratio(x.encoder, y.encoder),
        decoder: ratio(a.decoder_s(), b.decoder_s()),
        total: ratio(a.total_s, b.total_s),
        prediction: ratio(x.prediction, y.prediction),
        lm_ext: ratio(x.lm_ext, y.lm_ext),
        lm_src: ratio(x.lm_src, y.lm_src),
        non_accelerable: ratio(x.non_accelerable, y.non_accelerable),
    }
}
