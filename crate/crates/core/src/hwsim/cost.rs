use serde::{Deserialize, Serialize};

use super::trace::{Component, Device, OpKind, OpRecord, Precision, WorkloadTrace};
use crate::lstm::{QuantLstmLayer, Weight};
use crate::model::{ArchConfig, LanguageModel, Linear, NetKind, QuantScheme, Rnnt};

/// Bytes per element of real activations on the coprocessor.
const REAL_ACT_BYTES: u64 = 2;

/// One weight matrix as seen by the accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatmulShape {
    pub rows: usize,
    pub cols: usize,
    pub weight_bits: u32,
    pub act_bits: u32,
}

impl MatmulShape {
    pub fn precision(&self) -> Precision {
        Precision::for_weight_bits(self.weight_bits)
    }

    pub fn weight_bytes(&self) -> u64 {
        ((self.rows * self.cols) as u64 * self.weight_bits as u64).div_ceil(8)
    }

    /// Batched product: weights stream once per launch, activations per item.
    pub fn op(&self, batch: usize, component: Component) -> OpRecord {
        let b = batch as u64;
        let act_in = (self.cols as u64 * self.act_bits as u64).div_ceil(8);
        let act_out = self.rows as u64 * REAL_ACT_BYTES;
        OpRecord {
            kind: OpKind::Matmul,
            precision: self.precision(),
            macs: (self.rows * self.cols) as u64 * b,
            bytes: self.weight_bytes() + b * (act_in + act_out),
            items: 0,
            device: Device::Coprocessor,
            component,
        }
    }
}

fn elementwise(n: usize, batch: usize, component: Component) -> OpRecord {
    OpRecord {
        kind: OpKind::Elementwise,
        precision: Precision::Real16,
        macs: (n * batch) as u64,
        bytes: 0,
        items: 0,
        device: Device::Coprocessor,
        component,
    }
}

/// An LSTM layer: one fused gate product per direction and step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmShape {
    pub dirs: usize,
    pub hidden: usize,
    /// `[4h, in + h]`
    pub gates: MatmulShape,
}

impl LstmShape {
    fn step_ops(&self, batch: usize, component: Component, trace: &mut WorkloadTrace) {
        trace.push(self.gates.op(batch, component));
        // Gate nonlinearities and the cell/hidden updates.
        trace.push(elementwise(8 * self.hidden, batch, component));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmShape {
    pub lstms: Vec<LstmShape>,
    pub bottleneck: MatmulShape,
    pub out: MatmulShape,
}

/// Accelerator-level description of the networks taking part in a decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub feature_dim: usize,
    pub vocab: usize,
    pub encoder: Vec<LstmShape>,
    pub enc_proj: MatmulShape,
    pub pred: LstmShape,
    pub pred_proj: MatmulShape,
    pub joint: MatmulShape,
    pub lm_ext: Option<LmShape>,
    pub lm_src: Option<LmShape>,
}

/// Storage bits of real weights and activations on the coprocessor.
const REAL_BITS: u32 = 16;

fn weight_bits(w: &Weight) -> u32 {
    match w.bits() {
        32 => REAL_BITS,
        b => b,
    }
}

fn act_bits(q: Option<&crate::quant::QuantParams>) -> u32 {
    q.map_or(REAL_BITS, |p| p.bits)
}

fn lstm_shape(l: &QuantLstmLayer) -> LstmShape {
    let d = &l.dirs[0];
    LstmShape {
        dirs: l.dirs.len(),
        hidden: l.cfg.hidden_size,
        gates: MatmulShape {
            rows: 4 * l.cfg.hidden_size,
            cols: l.cfg.input_size + l.cfg.hidden_size,
            weight_bits: weight_bits(&d.w_ih),
            act_bits: act_bits(l.input_q.as_ref()),
        },
    }
}

fn linear_shape(l: &Linear) -> MatmulShape {
    MatmulShape {
        rows: l.output_size(),
        cols: l.input_size(),
        weight_bits: weight_bits(&l.weight),
        act_bits: act_bits(l.input_q.as_ref()),
    }
}

fn lm_shape(lm: &LanguageModel) -> LmShape {
    LmShape {
        lstms: lm.lstms.iter().map(lstm_shape).collect(),
        bottleneck: linear_shape(&lm.bottleneck),
        out: linear_shape(&lm.out),
    }
}

impl ModelProfile {
    /// Profile of concrete networks (real weights run at real16).
    pub fn from_networks(rnnt: &Rnnt, lm_ext: Option<&LanguageModel>, lm_src: Option<&LanguageModel>) -> Self {
        Self {
            feature_dim: rnnt.arch.encoder_input,
            vocab: rnnt.arch.vocab,
            encoder: rnnt.encoder.layers.iter().map(lstm_shape).collect(),
            enc_proj: linear_shape(&rnnt.encoder.proj),
            pred: lstm_shape(&rnnt.pred.lstm),
            pred_proj: linear_shape(&rnnt.pred.proj),
            joint: linear_shape(&rnnt.joint),
            lm_ext: lm_ext.map(lm_shape),
            lm_src: lm_src.map(lm_shape),
        }
    }

    /// Profile of an architecture under `precision`, without building weights.
    pub fn from_arch(arch: &ArchConfig, precision: PrecisionProfile, with_lms: bool) -> Self {
        let mixed = QuantScheme::mixed_default(arch, 4);
        let bits = |id: &str| -> (u32, u32) {
            match precision {
                PrecisionProfile::Real16 => (REAL_BITS, REAL_BITS),
                PrecisionProfile::Int8 => (8, 8),
                PrecisionProfile::Mixed4 => {
                    let l = mixed.layer(id);
                    (
                        l.and_then(|l| l.weight).map_or(REAL_BITS, |s| s.bits),
                        l.and_then(|l| l.input).map_or(REAL_BITS, |s| s.bits),
                    )
                }
            }
        };
        let mm = |id: &str, rows: usize, cols: usize| {
            let (w, a) = bits(id);
            MatmulShape {
                rows,
                cols,
                weight_bits: w,
                act_bits: a,
            }
        };
        let lstm = |id: &str, input: usize, hidden: usize, dirs: usize| LstmShape {
            dirs,
            hidden,
            gates: mm(id, 4 * hidden, input + hidden),
        };
        let h = arch.encoder_hidden;
        let encoder = (0..arch.encoder_layers)
            .map(|i| lstm(&format!("enc.lstm{i}"), if i == 0 { arch.encoder_input } else { 2 * h }, h, 2))
            .collect();
        let lm = |kind: NetKind| {
            let p = kind.name();
            let (embed, hidden, layers, bn) = match kind {
                NetKind::LmExt => (arch.lm_ext_embed, arch.lm_ext_hidden, arch.lm_ext_layers, arch.lm_ext_bottleneck),
                _ => (arch.embed_dim, arch.pred_hidden, 1, arch.joint_dim),
            };
            LmShape {
                lstms: (0..layers)
                    .map(|i| lstm(&format!("{p}.lstm{i}"), if i == 0 { embed } else { hidden }, hidden, 1))
                    .collect(),
                bottleneck: mm(&format!("{p}.bottleneck"), bn, hidden),
                out: mm(&format!("{p}.out"), arch.vocab, bn),
            }
        };
        Self {
            feature_dim: arch.encoder_input,
            vocab: arch.vocab,
            encoder,
            enc_proj: mm("enc.proj", arch.joint_dim, 2 * h),
            pred: lstm("pred.lstm", arch.embed_dim, arch.pred_hidden, 1),
            pred_proj: mm("pred.proj", arch.joint_dim, arch.pred_hidden),
            joint: mm("joint.out", arch.vocab, arch.joint_dim),
            lm_ext: with_lms.then(|| lm(NetKind::LmExt)),
            lm_src: with_lms.then(|| lm(NetKind::LmSrc)),
        }
    }

    /// Encoder over `frames` frames: feature upload, every layer and direction
    /// per frame, projection per frame.
    pub fn encoder_ops(&self, frames: usize, trace: &mut WorkloadTrace) {
        let c = Component::Encoder;
        trace.push(OpRecord {
            kind: OpKind::Transfer,
            precision: Precision::Real16,
            macs: 0,
            bytes: (frames * self.feature_dim) as u64 * REAL_ACT_BYTES,
            items: 0,
            device: Device::Coprocessor,
            component: c,
        });
        for layer in &self.encoder {
            for _ in 0..frames {
                for _ in 0..layer.dirs {
                    layer.step_ops(1, c, trace);
                }
            }
        }
        for _ in 0..frames {
            trace.push(self.enc_proj.op(1, c));
        }
    }

    /// One batched prediction-network step for `batch` new prefixes.
    pub fn pred_ops(&self, batch: usize, trace: &mut WorkloadTrace) {
        if batch == 0 {
            return;
        }
        self.pred.step_ops(batch, Component::Prediction, trace);
        trace.push(self.pred_proj.op(batch, Component::Prediction));
    }

    /// One batched joint evaluation over `batch` hypotheses.
    pub fn joint_ops(&self, batch: usize, trace: &mut WorkloadTrace) {
        if batch == 0 {
            return;
        }
        let c = Component::Prediction;
        trace.push(elementwise(self.joint.cols, batch, c));
        trace.push(self.joint.op(batch, c));
        trace.push(elementwise(2 * self.vocab, batch, c));
    }

    /// One batched LM step; no-op when that LM is absent.
    pub fn lm_ops(&self, which: NetKind, batch: usize, trace: &mut WorkloadTrace) {
        let (lm, c) = match which {
            NetKind::LmExt => (&self.lm_ext, Component::LmExt),
            NetKind::LmSrc => (&self.lm_src, Component::LmSrc),
            NetKind::Rnnt => return,
        };
        let Some(lm) = lm else { return };
        if batch == 0 {
            return;
        }
        for l in &lm.lstms {
            l.step_ops(batch, c, trace);
        }
        trace.push(lm.bottleneck.op(batch, c));
        trace.push(lm.out.op(batch, c));
        trace.push(elementwise(2 * self.vocab, batch, c));
    }

    /// Hypothesis selection. Beam 1 reduces to an on-device argmax; wider
    /// beams ship candidate scores to the CPU and sort them there.
    pub fn selection_ops(&self, candidates: usize, beam: usize, trace: &mut WorkloadTrace) {
        let c = Component::NonAccelerable;
        if beam <= 1 {
            trace.push(elementwise(candidates, 1, Component::Prediction));
            return;
        }
        trace.push(OpRecord {
            kind: OpKind::Transfer,
            precision: Precision::Real16,
            macs: 0,
            bytes: candidates as u64 * 4,
            items: 0,
            device: Device::Coprocessor,
            component: c,
        });
        trace.push(OpRecord {
            kind: OpKind::Sort,
            precision: Precision::Real16,
            macs: 0,
            bytes: 0,
            items: candidates as u64,
            device: Device::Cpu,
            component: c,
        });
    }
}

/// Precision assignment for synthetic workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionProfile {
    /// Every layer at real16.
    Real16,
    /// Every layer at 8 bits.
    Int8,
    /// The mixed 8/4-bit default scheme.
    Mixed4,
}

impl PrecisionProfile {
    pub fn name(self) -> &'static str {
        match self {
            PrecisionProfile::Real16 => "real16",
            PrecisionProfile::Int8 => "int8",
            PrecisionProfile::Mixed4 => "int4",
        }
    }
}
