use std::collections::BTreeMap;

use super::nets::{LayerMut, Network, BLANK};
use super::scheme::{LayerScheme, QuantScheme};
use crate::error::{Error, Result};
use crate::lstm::{run_layer, LstmState, QuantCallCounter, QuantLstmLayer, Weight};
use crate::quant::{bounds_max, calibrate_pact, QuantParams, QuantizerKind, QuantizerSpec};

/// Boundary-learning schedule used for PACT activation quantizers.
pub const PACT_STEPS: usize = 500;
pub const PACT_LR: f64 = 10.0;

/// Values kept per activation tensor for PACT calibration.
const SAMPLE_CAP: usize = 100_000;

/// Calibration inputs: acoustic feature sequences for the encoder side and
/// label sequences for the prediction network and language models.
#[derive(Debug, Clone, Default)]
pub struct CalibrationData {
    pub utterances: Vec<Vec<Vec<f32>>>,
    pub labels: Vec<Vec<usize>>,
}

/// Running extremes plus a bounded sample of one activation tensor.
#[derive(Debug, Clone)]
struct Collector {
    min: f32,
    max: f32,
    sample: Vec<f32>,
    seen: usize,
}

impl Default for Collector {
    fn default() -> Self {
        Self {
            min: f32::INFINITY,
            max: f32::NEG_INFINITY,
            sample: Vec::new(),
            seen: 0,
        }
    }
}

impl Collector {
    fn push(&mut self, x: &[f32]) {
        for &v in x {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.seen += x.len();
        self.sample.extend_from_slice(x);
    }

    fn finish(&mut self) {
        if self.sample.len() > SAMPLE_CAP {
            let stride = self.sample.len().div_ceil(SAMPLE_CAP);
            self.sample = self.sample.iter().step_by(stride).copied().collect();
        }
    }
}

#[derive(Debug, Default)]
struct LayerStats {
    input: Collector,
    hidden: Vec<Collector>,
}

impl LayerStats {
    fn hidden(&mut self, d: usize) -> &mut Collector {
        if self.hidden.len() <= d {
            self.hidden.resize(d + 1, Collector::default());
        }
        &mut self.hidden[d]
    }
}

type Stats = BTreeMap<String, LayerStats>;

/// Copy of the network with every quantizer removed.
fn float_view(net: &Network) -> Network {
    let mut f = net.clone();
    for (_, layer) in f.layers_mut() {
        match layer {
            LayerMut::Lstm(l) => {
                l.cfg.weight_spec = None;
                l.cfg.input_spec = None;
                l.cfg.hidden_spec = None;
                l.input_q = None;
                for d in &mut l.dirs {
                    d.w_ih = dequantized(&d.w_ih);
                    d.w_hh = dequantized(&d.w_hh);
                    d.hidden_q = None;
                }
            }
            LayerMut::Linear(l) => {
                l.weight = dequantized(&l.weight);
                l.input_q = None;
            }
            LayerMut::Embedding(e) => {
                let t = dequantized(&e.table);
                e.set_table(t);
            }
        }
    }
    f
}

fn dequantized(w: &Weight) -> Weight {
    match w {
        Weight::Real(_) => w.clone(),
        Weight::Quant(q) => Weight::Real(
            crate::tensor::FloatTensor::new(q.packed().shape().to_vec(), q.packed().dequantize())
                .expect("shape matches"),
        ),
    }
}

fn record_hidden(stats: &mut LayerStats, frames: &[Vec<f32>], hidden: usize) {
    for f in frames {
        for (d, chunk) in f.chunks(hidden).enumerate() {
            stats.hidden(d).push(chunk);
        }
    }
}

fn step_unidirectional(
    layer: &QuantLstmLayer,
    stats: &mut LayerStats,
    x: &[f32],
    state: &LstmState,
) -> Result<LstmState> {
    stats.input.push(x);
    let st = layer.step(crate::lstm::CellInput::Real(x), state, &mut QuantCallCounter::default())?;
    stats.hidden(0).push(&st.h);
    Ok(st)
}

fn collect(net: &Network, data: &CalibrationData) -> Result<Stats> {
    let net = float_view(net);
    let mut stats = Stats::new();
    let mut counter = QuantCallCounter::default();
    match &net {
        Network::Rnnt(r) => {
            let mut enc_out = Vec::new();
            for utt in &data.utterances {
                let mut frames = utt.clone();
                for (i, layer) in r.encoder.layers.iter().enumerate() {
                    let s = stats.entry(format!("enc.lstm{i}")).or_default();
                    frames.iter().for_each(|f| s.input.push(f));
                    frames = run_layer(layer, &frames, &mut counter)?;
                    record_hidden(s, &frames, layer.cfg.hidden_size);
                }
                let s = stats.entry("enc.proj".into()).or_default();
                let mut out = Vec::with_capacity(frames.len());
                for f in &frames {
                    s.input.push(f);
                    out.push(r.encoder.proj.forward(f, &mut counter)?);
                }
                enc_out.push(out);
            }
            let mut dec_out = Vec::new();
            for seq in &data.labels {
                let mut state = r.pred_start()?;
                let mut outs = Vec::with_capacity(seq.len() + 1);
                for &y in std::iter::once(&BLANK).chain(seq) {
                    let e = r.pred.embed.lookup(y)?;
                    state = step_unidirectional(&r.pred.lstm, stats.entry("pred.lstm".into()).or_default(), e, &state)?;
                    stats.entry("pred.proj".into()).or_default().input.push(&state.h);
                    outs.push(r.pred.proj.forward(&state.h, &mut counter)?);
                }
                dec_out.push(outs);
            }
            if !dec_out.is_empty() {
                let s = stats.entry("joint.out".into()).or_default();
                for (i, enc) in enc_out.iter().enumerate() {
                    for e in enc {
                        for d in &dec_out[i % dec_out.len()] {
                            let z: Vec<f32> = e.iter().zip(d).map(|(a, b)| a * b).collect();
                            s.input.push(&z);
                        }
                    }
                }
            }
        }
        Network::Lm(lm) => {
            let p = lm.kind.name();
            for seq in &data.labels {
                let mut states = lm.start()?;
                for &y in std::iter::once(&BLANK).chain(seq) {
                    let mut x = lm.embed.lookup(y)?.to_vec();
                    for (i, layer) in lm.lstms.iter().enumerate() {
                        let s = stats.entry(format!("{p}.lstm{i}")).or_default();
                        states[i] = step_unidirectional(layer, s, &x, &states[i])?;
                        x = states[i].h.clone();
                    }
                    stats.entry(format!("{p}.bottleneck")).or_default().input.push(&x);
                    let b = lm.bottleneck.forward(&x, &mut counter)?;
                    stats.entry(format!("{p}.out")).or_default().input.push(&b);
                }
            }
        }
    }
    for s in stats.values_mut() {
        s.input.finish();
        s.hidden.iter_mut().for_each(Collector::finish);
    }
    Ok(stats)
}

/// Which calibration source a layer's activations come from.
fn source_of(id: &str) -> (&'static str, bool, bool) {
    // (description, needs utterances, needs labels)
    if id.starts_with("enc.") {
        ("feature utterances", true, false)
    } else if id.starts_with("joint.") {
        ("feature utterances and label sequences", true, true)
    } else {
        ("label sequences", false, true)
    }
}

fn activation_params(
    spec: &QuantizerSpec,
    stats: Option<&Collector>,
    id: &str,
    role: &'static str,
) -> Result<QuantParams> {
    if !spec.is_data_dependent() {
        return spec.fixed_params();
    }
    let c = stats
        .filter(|c| c.seen > 0)
        .ok_or_else(|| Error::MissingCalibration {
            layer: id.to_string(),
            kind: role,
        })?;
    match spec.kind {
        QuantizerKind::Max => bounds_max(&[c.min, c.max], spec.bits, spec.symmetric),
        QuantizerKind::Pact => pact_params(&c.sample, spec.bits),
        QuantizerKind::Sawb | QuantizerKind::Fix => Err(Error::InvalidScheme(format!(
            "layer `{id}`: {} is not an activation quantizer",
            spec.kind.name()
        ))),
    }
}

/// PACT boundaries at [`PACT_LR`], retrying at a tenth of the rate (down to
/// `PACT_LR / 1000`) when descent diverges on small or clustered samples.
fn pact_params(sample: &[f32], bits: u32) -> Result<QuantParams> {
    let mut lr = PACT_LR;
    loop {
        match calibrate_pact(sample, bits, PACT_STEPS, lr) {
            Err(Error::Diverged { .. }) if lr > PACT_LR / 1000.0 * 1.5 => lr /= 10.0,
            other => return Ok(other?.params),
        }
    }
}

/// Weights already coded at the requested precision keep their codes, so
/// re-quantizing a quantized model is a no-op on weights.
fn quantize_weight(w: &Weight, spec: Option<&QuantizerSpec>, counter: &mut QuantCallCounter) -> Result<Weight> {
    match (spec, w) {
        (None, _) => Ok(dequantized(w)),
        (Some(s), Weight::Quant(q)) if q.packed().bits() == s.bits && q.packed().params().symmetric => Ok(w.clone()),
        (Some(s), _) => dequantized(w).quantize(s, counter),
    }
}

fn needs_data(entry: &LayerScheme) -> bool {
    [&entry.input, &entry.hidden]
        .into_iter()
        .flatten()
        .any(|s| s.is_data_dependent())
}

/// Applies a scheme to a network: packs weights, sets activation quantizer
/// parameters (FIX from the scheme, MAX from calibration extremes, PACT from
/// boundary learning) and leaves biases and cell paths real. Layers without a
/// scheme entry become fully real.
pub fn quantize_model(net: &Network, scheme: &QuantScheme, data: &CalibrationData) -> Result<Network> {
    scheme.validate_for(net.arch())?;
    let ids: Vec<String> = net.layers().into_iter().map(|(id, _)| id).collect();
    let mut wanting = false;
    for id in &ids {
        if let Some(entry) = scheme.layer(id).filter(|e| needs_data(e)) {
            wanting = true;
            let (_, utt, lab) = source_of(id);
            if (utt && data.utterances.is_empty()) || (lab && data.labels.is_empty()) {
                return Err(Error::MissingCalibration {
                    layer: entry.id.clone(),
                    kind: if entry.input.is_some_and(|s| s.is_data_dependent()) { "input" } else { "hidden" },
                });
            }
        }
    }
    let stats = if wanting { collect(net, data)? } else { Stats::new() };

    let mut out = net.clone();
    let mut counter = QuantCallCounter::default();
    for (id, layer) in out.layers_mut() {
        let entry = scheme.layer(&id);
        let st = stats.get(&id);
        let spec = |f: fn(&LayerScheme) -> Option<QuantizerSpec>| entry.and_then(f);
        match layer {
            LayerMut::Lstm(l) => {
                l.cfg.weight_spec = spec(|e| e.weight);
                l.cfg.input_spec = spec(|e| e.input);
                l.cfg.hidden_spec = spec(|e| e.hidden);
                l.cfg.placement = scheme.placement;
                l.cfg.validate()?;
                l.input_q = match &l.cfg.input_spec {
                    Some(s) => Some(activation_params(s, st.map(|s| &s.input), &id, "input")?),
                    None => None,
                };
                let (ws, hs) = (l.cfg.weight_spec, l.cfg.hidden_spec);
                for (d, dir) in l.dirs.iter_mut().enumerate() {
                    dir.w_ih = quantize_weight(&dir.w_ih, ws.as_ref(), &mut counter)?;
                    dir.w_hh = quantize_weight(&dir.w_hh, ws.as_ref(), &mut counter)?;
                    dir.hidden_q = match &hs {
                        Some(s) => Some(activation_params(s, st.and_then(|s| s.hidden.get(d)), &id, "hidden")?),
                        None => None,
                    };
                }
            }
            LayerMut::Linear(l) => {
                l.weight = quantize_weight(&l.weight, spec(|e| e.weight).as_ref(), &mut counter)?;
                l.input_q = match spec(|e| e.input) {
                    Some(s) => Some(activation_params(&s, st.map(|s| &s.input), &id, "input")?),
                    None => None,
                };
            }
            LayerMut::Embedding(e) => {
                let t = quantize_weight(&e.table, spec(|e| e.weight).as_ref(), &mut counter)?;
                e.set_table(t);
            }
        }
    }
    Ok(out)
}

/// Label sequence visiting every non-blank symbol once, used when no
/// transcripts are available for calibrating label-driven layers.
pub fn vocabulary_sweep(vocab: usize) -> Vec<usize> {
    (1..vocab).collect()
}

/// Layer ids of `net` whose scheme entry needs calibration data.
pub fn data_dependent_layers(scheme: &QuantScheme, net: &Network) -> Vec<String> {
    net.layers()
        .into_iter()
        .filter(|(id, _)| scheme.layer(id).is_some_and(needs_data))
        .map(|(id, _)| id)
        .collect()
}
