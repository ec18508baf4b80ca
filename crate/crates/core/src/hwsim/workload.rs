use serde::{Deserialize, Serialize};

use super::cost::{ModelProfile, PrecisionProfile};
use super::sim::{simulate, HwConfig, RtfReport};
use super::trace::WorkloadTrace;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, NetKind};

/// Decode statistics that shape a synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub frames: usize,
    /// Emitted labels per acoustic frame.
    pub label_rate: f64,
    /// Share of retained hypotheses whose label prefix is new at an
    /// iteration (the rest reuse cached network states).
    pub fresh_fraction: f64,
}

impl Default for WorkloadProfile {
    fn default() -> Self {
        Self {
            frames: 152,
            label_rate: 0.7,
            fresh_fraction: 0.5,
        }
    }
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Precondition("workload needs at least one frame".into()));
        }
        if !(self.label_rate.is_finite() && self.label_rate >= 0.0) {
            return Err(Error::Precondition("label_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.fresh_fraction) {
            return Err(Error::Precondition("fresh_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let w: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: "workload".into(),
            detail: e.message().to_string(),
        })?;
        w.validate()?;
        Ok(w)
    }

    pub fn labels(&self) -> usize {
        (self.label_rate * self.frames as f64).round() as usize
    }
}

/// Trace of an alignment-synchronous decode with the given statistics: the
/// encoder over all frames, then `frames + labels` iterations each with one
/// joint launch, batched prediction/LM steps for new prefixes and hypothesis
/// selection.
pub fn synthetic_trace(model: &ModelProfile, w: &WorkloadProfile, beam: usize) -> Result<WorkloadTrace> {
    w.validate()?;
    if beam == 0 {
        return Err(Error::Precondition("beam must be at least 1".into()));
    }
    let mut trace = WorkloadTrace::new(w.frames as u64);
    model.encoder_ops(w.frames, &mut trace);
    let labels = w.labels();
    let iterations = w.frames + labels;
    let step_nets = |batch: usize, trace: &mut WorkloadTrace| {
        model.pred_ops(batch, trace);
        model.lm_ops(NetKind::LmExt, batch, trace);
        model.lm_ops(NetKind::LmSrc, batch, trace);
    };
    // Start-symbol states.
    step_nets(1, &mut trace);
    trace.cache_misses += 1;
    let mut emitted = 0usize;
    for i in 0..iterations {
        let hyps = if i == 0 { 1 } else { beam };
        if beam == 1 {
            // Spread label emissions evenly over the iterations.
            let due = ((i + 1) * labels) / iterations;
            if due > emitted && i > 0 {
                step_nets(1, &mut trace);
                trace.cache_misses += 1;
            }
            emitted = due;
        } else if i > 0 {
            let fresh = ((w.fresh_fraction * hyps as f64).ceil() as usize).clamp(1, hyps);
            step_nets(fresh, &mut trace);
            trace.cache_misses += fresh as u64;
            trace.cache_hits += (hyps - fresh) as u64;
        }
        model.joint_ops(hyps, &mut trace);
        model.selection_ops(hyps * model.vocab, beam, &mut trace);
    }
    Ok(trace)
}

/// Synthetic trace of a full-size architecture.
pub fn arch_trace(
    arch: &ArchConfig,
    precision: PrecisionProfile,
    with_lms: bool,
    w: &WorkloadProfile,
    beam: usize,
) -> Result<WorkloadTrace> {
    synthetic_trace(&ModelProfile::from_arch(arch, precision, with_lms), w, beam)
}

/// Per-beam reports from replayed synthetic traces.
pub fn sweep_beam(
    model: &ModelProfile,
    w: &WorkloadProfile,
    hw: &HwConfig,
    beams: &[usize],
) -> Result<Vec<(usize, RtfReport)>> {
    beams
        .iter()
        .map(|&b| Ok((b, simulate(&synthetic_trace(model, w, b)?, hw)?)))
        .collect()
}
