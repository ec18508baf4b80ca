//! Quantized LSTM layers with Inner or Outer activation-quantizer placement.
//!
//! Gate order is (input, forget, cell, output). Cell states and elementwise
//! operations stay in real arithmetic; only the operands of the two gate
//! matrix products are integer coded.
//!
//! Inner placement quantizes `x_t` and `s_{t-1}` as they enter each cell
//! (two quantizer calls per cell step). Outer placement quantizes each cell
//! output once and hands the coded tensor to both consumers, the next time
//! step and the next layer; the network input is quantized once per frame on
//! entry to the first layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{QuantParams, QuantizerSpec};
use crate::tensor::{FloatTensor, IntMatrix, PackedTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Inner,
    #[default]
    Outer,
}

/// Quantizer invocations during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuantCallCounter {
    pub activation_calls: u64,
    pub weight_calls: u64,
}

/// Closed-form number of activation-quantizer calls for `layers` cell
/// sequences (each direction of a bidirectional layer counts once) over
/// `steps` time steps.
pub fn count_quantizer_calls(steps: u64, layers: u64, placement: Placement) -> u64 {
    match placement {
        Placement::Inner => 2 * steps * layers,
        Placement::Outer => steps + steps * layers,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuantLstmLayerConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub bidirectional: bool,
    pub weight_spec: Option<QuantizerSpec>,
    pub input_spec: Option<QuantizerSpec>,
    pub hidden_spec: Option<QuantizerSpec>,
    pub placement: Placement,
}

impl QuantLstmLayerConfig {
    pub fn float(input_size: usize, hidden_size: usize, bidirectional: bool) -> Self {
        Self {
            input_size,
            hidden_size,
            bidirectional,
            weight_spec: None,
            input_spec: None,
            hidden_spec: None,
            placement: Placement::Outer,
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidParams("LSTM sizes must be positive".into()));
        }
        if let Some(w) = &self.weight_spec {
            if !w.symmetric {
                return Err(Error::InvalidScheme(
                    "LSTM weight quantizers must be symmetric".into(),
                ));
            }
            w.validate()?;
            if self.input_spec.is_none() || self.hidden_spec.is_none() {
                return Err(Error::InvalidScheme(
                    "quantized LSTM weights need input and hidden quantizers".into(),
                ));
            }
        }
        for s in [&self.input_spec, &self.hidden_spec].into_iter().flatten() {
            s.validate()?;
        }
        Ok(())
    }
}

/// Integer-coded matrix plus its unpacked signed form.
#[derive(Debug, Clone)]
pub struct QuantMatrix {
    packed: PackedTensor,
    int: IntMatrix,
}

impl QuantMatrix {
    pub fn new(packed: PackedTensor) -> Result<Self> {
        let int = IntMatrix::from_packed(&packed)?;
        Ok(Self { packed, int })
    }

    pub fn packed(&self) -> &PackedTensor {
        &self.packed
    }
}

/// A weight matrix `[rows, cols]`, real or integer coded.
#[derive(Debug, Clone)]
pub enum Weight {
    Real(FloatTensor),
    Quant(QuantMatrix),
}

impl Weight {
    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Weight::Real(t) => &t.shape,
            Weight::Quant(q) => q.packed.shape(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Weight::Quant(_))
    }

    /// Bits per stored element (32 for real weights).
    pub fn bits(&self) -> u32 {
        match self {
            Weight::Real(_) => 32,
            Weight::Quant(q) => q.packed.bits(),
        }
    }

    /// Real values of the matrix (dequantized if coded).
    pub fn values(&self) -> Vec<f32> {
        match self {
            Weight::Real(t) => t.values.clone(),
            Weight::Quant(q) => q.packed.dequantize(),
        }
    }

    /// Quantizes real weights with `spec`; already-coded weights are
    /// re-quantized from their dequantized values.
    pub fn quantize(&self, spec: &QuantizerSpec, counter: &mut QuantCallCounter) -> Result<Weight> {
        if !spec.symmetric {
            return Err(Error::InvalidScheme("weight quantizers must be symmetric".into()));
        }
        let values = self.values();
        let params = spec.weight_params(&values)?;
        counter.weight_calls += 1;
        let packed = PackedTensor::quantize(&values, self.shape().to_vec(), params)?;
        Ok(Weight::Quant(QuantMatrix::new(packed)?))
    }

    /// Product with a real vector. Coded weights need a coded input.
    pub fn matvec(&self, x: &[f32]) -> Result<Vec<f32>> {
        match self {
            Weight::Real(t) => real_matvec(t, x),
            Weight::Quant(_) => Err(Error::Precondition(
                "integer-coded weights need a quantized input".into(),
            )),
        }
    }

    /// Product with a coded input made of one or more segments.
    pub fn matvec_coded(&self, x: &[&PackedTensor]) -> Result<Vec<f32>> {
        match self {
            Weight::Quant(q) => q.int.gemv_segments(x, None),
            Weight::Real(t) => {
                let dense: Vec<f32> = x.iter().flat_map(|s| s.dequantize()).collect();
                real_matvec(t, &dense)
            }
        }
    }
}

fn real_matvec(w: &FloatTensor, x: &[f32]) -> Result<Vec<f32>> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    if x.len() != cols {
        return Err(Error::ShapeMismatch(format!(
            "weight has {cols} columns, input has {} elements",
            x.len()
        )));
    }
    Ok(w.values
        .chunks(cols.max(1))
        .take(rows)
        .map(|row| {
            row.iter()
                .zip(x)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>() as f32
        })
        .collect())
}

/// Weights of one scan direction.
#[derive(Debug, Clone)]
pub struct LstmDirection {
    /// `[4h, input]`
    pub w_ih: Weight,
    /// `[4h, h]`
    pub w_hh: Weight,
    /// `[4h]`, never quantized
    pub bias: Vec<f32>,
    /// Quantizer of this direction's output (hidden state).
    pub hidden_q: Option<QuantParams>,
}

impl LstmDirection {
    pub fn hidden_size(&self) -> usize {
        self.w_hh.cols()
    }
}

/// Recurrent state of one direction. The cell state is always real.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
    /// Coded hidden state carried between steps under Outer placement.
    pub h_q: Option<PackedTensor>,
}

impl LstmState {
    /// Zero state. Its coded form is known without invoking a quantizer.
    pub fn zeros(dir: &LstmDirection) -> Result<Self> {
        let h = vec![0.0; dir.hidden_size()];
        let h_q = match &dir.hidden_q {
            Some(p) => Some(PackedTensor::quantize(&h, vec![h.len()], p.to_kernel())?),
            None => None,
        };
        Ok(Self {
            c: h.clone(),
            h,
            h_q,
        })
    }
}

/// Input of one cell step.
#[derive(Debug, Clone, Copy)]
pub enum CellInput<'a> {
    Real(&'a [f32]),
    /// Already-coded input, possibly split in segments with their own scales.
    Coded(&'a [PackedTensor]),
}

impl CellInput<'_> {
    fn len(&self) -> usize {
        match self {
            CellInput::Real(x) => x.len(),
            CellInput::Coded(s) => s.iter().map(|t| t.numel()).sum(),
        }
    }
}

fn code(x: &[f32], p: &QuantParams, counter: &mut QuantCallCounter) -> Result<PackedTensor> {
    counter.activation_calls += 1;
    PackedTensor::quantize(x, vec![x.len()], p.to_kernel())
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM cell step.
///
/// `input_q` is the layer's input quantizer, used on entry under Inner
/// placement. Under Outer placement a coded input is consumed as-is and the
/// new hidden state is coded once on output.
pub fn lstm_cell_step(
    x: CellInput<'_>,
    prev: &LstmState,
    dir: &LstmDirection,
    input_q: Option<&QuantParams>,
    placement: Placement,
    counter: &mut QuantCallCounter,
) -> Result<LstmState> {
    let h = dir.hidden_size();
    if x.len() != dir.w_ih.cols() {
        return Err(Error::ShapeMismatch(format!(
            "cell expects {} inputs, got {}",
            dir.w_ih.cols(),
            x.len()
        )));
    }
    if prev.h.len() != h || prev.c.len() != h || dir.bias.len() != 4 * h {
        return Err(Error::ShapeMismatch("LSTM state or bias size mismatch".into()));
    }

    let from_input = match (x, placement) {
        (CellInput::Coded(segs), _) => {
            let refs: Vec<&PackedTensor> = segs.iter().collect();
            dir.w_ih.matvec_coded(&refs)?
        }
        (CellInput::Real(v), Placement::Inner) => match input_q {
            Some(p) => dir.w_ih.matvec_coded(&[&code(v, p, counter)?])?,
            None => dir.w_ih.matvec(v)?,
        },
        (CellInput::Real(v), Placement::Outer) => {
            if dir.w_ih.is_quantized() {
                return Err(Error::Precondition(
                    "Outer placement expects an already-quantized cell input".into(),
                ));
            }
            dir.w_ih.matvec(v)?
        }
    };

    let from_hidden = match (&dir.hidden_q, placement) {
        (None, _) => dir.w_hh.matvec(&prev.h)?,
        (Some(p), Placement::Inner) => dir.w_hh.matvec_coded(&[&code(&prev.h, p, counter)?])?,
        (Some(_), Placement::Outer) => {
            let hq = prev.h_q.as_ref().ok_or_else(|| {
                Error::Precondition("Outer placement needs the coded previous hidden state".into())
            })?;
            dir.w_hh.matvec_coded(&[hq])?
        }
    };

    let mut c = Vec::with_capacity(h);
    let mut s = Vec::with_capacity(h);
    for j in 0..h {
        let gate = |k: usize| from_input[k * h + j] + from_hidden[k * h + j] + dir.bias[k * h + j];
        let i = sigmoid(gate(0));
        let f = sigmoid(gate(1));
        let g = gate(2).tanh();
        let o = sigmoid(gate(3));
        let cj = f * prev.c[j] + i * g;
        c.push(cj);
        s.push(o * cj.tanh());
    }
    let h_q = match (&dir.hidden_q, placement) {
        (Some(p), Placement::Outer) => Some(code(&s, p, counter)?),
        _ => None,
    };
    Ok(LstmState { h: s, c, h_q })
}

/// One (uni- or bidirectional) quantized LSTM layer.
#[derive(Debug, Clone)]
pub struct QuantLstmLayer {
    pub cfg: QuantLstmLayerConfig,
    /// Input quantizer shared by both directions (they consume the same tensor).
    pub input_q: Option<QuantParams>,
    pub dirs: Vec<LstmDirection>,
}

/// Sequence flowing between layers: real frames plus, under Outer placement,
/// their coded form.
#[derive(Debug, Clone)]
pub struct Frames {
    pub real: Vec<Vec<f32>>,
    pub coded: Option<Vec<Vec<PackedTensor>>>,
}

impl Frames {
    pub fn real(real: Vec<Vec<f32>>) -> Self {
        Self { real, coded: None }
    }
}

impl QuantLstmLayer {
    /// Builds a layer from real weights (one entry per direction).
    pub fn from_real(
        cfg: QuantLstmLayerConfig,
        dirs: Vec<(FloatTensor, FloatTensor, Vec<f32>)>,
    ) -> Result<Self> {
        cfg.validate()?;
        if dirs.len() != cfg.directions() {
            return Err(Error::ShapeMismatch(format!(
                "{} directions given, config needs {}",
                dirs.len(),
                cfg.directions()
            )));
        }
        let (h, i) = (cfg.hidden_size, cfg.input_size);
        let dirs = dirs
            .into_iter()
            .map(|(w_ih, w_hh, bias)| {
                if w_ih.shape != [4 * h, i] || w_hh.shape != [4 * h, h] || bias.len() != 4 * h {
                    return Err(Error::ShapeMismatch(format!(
                        "LSTM weights {:?}/{:?}/{} do not match input {i}, hidden {h}",
                        w_ih.shape,
                        w_hh.shape,
                        bias.len()
                    )));
                }
                Ok(LstmDirection {
                    w_ih: Weight::Real(w_ih),
                    w_hh: Weight::Real(w_hh),
                    bias,
                    hidden_q: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            input_q: None,
            dirs,
        })
    }

    /// Errors if the config asks for coded weights that are still real.
    pub fn check_ready(&self) -> Result<()> {
        if self.cfg.weight_spec.is_some()
            && self
                .dirs
                .iter()
                .any(|d| !d.w_ih.is_quantized() || !d.w_hh.is_quantized())
        {
            return Err(Error::Precondition(
                "layer weights must be quantized before inference".into(),
            ));
        }
        if self.cfg.weight_spec.is_some() && self.input_q.is_none() {
            return Err(Error::Precondition("layer input quantizer not set".into()));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        self.cfg.hidden_size * self.cfg.directions()
    }

    /// Codes the layer input on entry (Outer placement only).
    pub fn code_input(&self, input: &Frames, counter: &mut QuantCallCounter) -> Result<Frames> {
        match (&self.input_q, self.cfg.placement, &input.coded) {
            (Some(p), Placement::Outer, None) => {
                let coded = input
                    .real
                    .iter()
                    .map(|x| Ok(vec![code(x, p, counter)?]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Frames {
                    real: input.real.clone(),
                    coded: Some(coded),
                })
            }
            _ => Ok(input.clone()),
        }
    }

    /// Scans the sequence in each direction from a zero state.
    pub fn forward(&self, input: &Frames, counter: &mut QuantCallCounter) -> Result<Frames> {
        self.check_ready()?;
        let steps = input.real.len();
        if steps == 0 {
            return Err(Error::Precondition("empty input sequence".into()));
        }
        let input = self.code_input(input, counter)?;
        let placement = self.cfg.placement;
        let outer = placement == Placement::Outer;
        let mut real = vec![Vec::with_capacity(self.output_size()); steps];
        let mut coded: Vec<Vec<PackedTensor>> = vec![Vec::new(); steps];
        let mut all_coded = outer;

        for (d, dir) in self.dirs.iter().enumerate() {
            let mut state = LstmState::zeros(dir)?;
            let order: Box<dyn Iterator<Item = usize>> = if d == 0 {
                Box::new(0..steps)
            } else {
                Box::new((0..steps).rev())
            };
            for t in order {
                let x = match &input.coded {
                    Some(c) if outer => CellInput::Coded(&c[t]),
                    _ => CellInput::Real(&input.real[t]),
                };
                state = lstm_cell_step(x, &state, dir, self.input_q.as_ref(), placement, counter)?;
                real[t].extend_from_slice(&state.h);
                match &state.h_q {
                    Some(q) => coded[t].push(q.clone()),
                    None => all_coded = false,
                }
            }
        }
        Ok(Frames {
            real,
            coded: all_coded.then_some(coded),
        })
    }

    /// Single step of a unidirectional layer (used by decoders).
    pub fn step(
        &self,
        x: CellInput<'_>,
        prev: &LstmState,
        counter: &mut QuantCallCounter,
    ) -> Result<LstmState> {
        if self.cfg.bidirectional {
            return Err(Error::Precondition("cannot step a bidirectional layer".into()));
        }
        self.check_ready()?;
        let coded_storage;
        let x = match (x, self.cfg.placement, &self.input_q) {
            (CellInput::Real(v), Placement::Outer, Some(p)) => {
                coded_storage = [code(v, p, counter)?];
                CellInput::Coded(&coded_storage)
            }
            (x, _, _) => x,
        };
        lstm_cell_step(
            x,
            prev,
            &self.dirs[0],
            self.input_q.as_ref(),
            self.cfg.placement,
            counter,
        )
    }
}

/// Runs one layer over a real sequence `[T][input_size]`.
pub fn run_layer(
    layer: &QuantLstmLayer,
    x: &[Vec<f32>],
    counter: &mut QuantCallCounter,
) -> Result<Vec<Vec<f32>>> {
    Ok(layer.forward(&Frames::real(x.to_vec()), counter)?.real)
}

/// Runs a stack of layers; under Outer placement coded outputs flow directly
/// into the next layer.
pub fn run_stack(
    layers: &[QuantLstmLayer],
    x: &[Vec<f32>],
    counter: &mut QuantCallCounter,
) -> Result<Vec<Vec<f32>>> {
    let mut frames = Frames::real(x.to_vec());
    for layer in layers {
        frames = layer.forward(&frames, counter)?;
    }
    Ok(frames.real)
}

/// Steps a stack of unidirectional layers once.
pub fn step_stack(
    layers: &[QuantLstmLayer],
    x: &[f32],
    states: &[LstmState],
    counter: &mut QuantCallCounter,
) -> Result<(Vec<f32>, Vec<LstmState>)> {
    if states.len() != layers.len() {
        return Err(Error::ShapeMismatch("one state per layer required".into()));
    }
    let mut next = Vec::with_capacity(layers.len());
    let mut input_real = x.to_vec();
    let mut input_coded: Option<PackedTensor> = None;
    for (layer, prev) in layers.iter().zip(states) {
        let segs;
        let x = match (&input_coded, layer.cfg.placement) {
            (Some(q), Placement::Outer) => {
                segs = [q.clone()];
                CellInput::Coded(&segs)
            }
            _ => CellInput::Real(&input_real),
        };
        let st = layer.step(x, prev, counter)?;
        input_real = st.h.clone();
        input_coded = st.h_q.clone();
        next.push(st);
    }
    Ok((input_real, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(
        rng: &mut ChaCha8Rng,
        input: usize,
        hidden: usize,
        bidir: bool,
    ) -> QuantLstmLayer {
        let cfg = QuantLstmLayerConfig::float(input, hidden, bidir);
        let mut m = |r: usize, c: usize| {
            FloatTensor::new(
                vec![r, c],
                (0..r * c).map(|_| rng.random_range(-0.5..0.5)).collect(),
            )
            .unwrap()
        };
        let dirs = (0..cfg.directions())
            .map(|_| (m(4 * hidden, input), m(4 * hidden, hidden), vec![0.1; 4 * hidden]))
            .collect();
        QuantLstmLayer::from_real(cfg, dirs).unwrap()
    }

    #[test]
    fn call_count_formula() {
        assert_eq!(count_quantizer_calls(152, 12, Placement::Inner), 3648);
        assert_eq!(count_quantizer_calls(152, 12, Placement::Outer), 1976);
        for t in [1, 7, 152, 1000] {
            assert_eq!(
                count_quantizer_calls(t, 1, Placement::Inner),
                count_quantizer_calls(t, 1, Placement::Outer)
            );
            let r = count_quantizer_calls(t, 12, Placement::Outer) as f64
                / count_quantizer_calls(t, 12, Placement::Inner) as f64;
            assert!((r - 13.0 / 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let cfg = QuantLstmLayerConfig::float(3, 2, false);
        let z = |r, c| FloatTensor::zeros(vec![r, c]);
        let layer = QuantLstmLayer::from_real(cfg, vec![(z(8, 3), z(8, 2), vec![0.0; 8])]).unwrap();
        let mut counter = QuantCallCounter::default();
        let st = LstmState::zeros(&layer.dirs[0]).unwrap();
        let out = layer.step(CellInput::Real(&[0.0; 3]), &st, &mut counter).unwrap();
        assert_eq!(out.h, vec![0.0, 0.0]);
        assert_eq!(out.c, vec![0.0, 0.0]);
    }

    #[test]
    fn bidirectional_output_width_and_t1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = random_layer(&mut rng, 4, 3, true);
        let mut counter = QuantCallCounter::default();
        let x = vec![vec![0.2, -0.1, 0.4, 0.0]];
        let out = run_layer(&layer, &x, &mut counter).unwrap();
        assert_eq!(out[0].len(), 6);
        for (d, dir) in layer.dirs.iter().enumerate() {
            let st = LstmState::zeros(dir).unwrap();
            let one =
                lstm_cell_step(CellInput::Real(&x[0]), &st, dir, None, Placement::Outer, &mut counter)
                    .unwrap();
            assert_eq!(&out[0][d * 3..(d + 1) * 3], one.h.as_slice());
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = random_layer(&mut rng, 2, 2, false);
        assert!(run_layer(&layer, &[], &mut QuantCallCounter::default()).is_err());
    }

    #[test]
    fn unquantized_weights_rejected_when_spec_present() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = random_layer(&mut rng, 2, 2, false);
        layer.cfg.weight_spec = Some(QuantizerSpec::sawb(4));
        layer.input_q = Some(QuantParams::symmetric(4, 1.0).unwrap());
        let err = run_layer(&layer, &[vec![0.0, 0.0]], &mut QuantCallCounter::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = random_layer(&mut rng, 2, 2, false);
        let st = LstmState::zeros(&layer.dirs[0]).unwrap();
        let err = layer.step(CellInput::Real(&[0.0; 3]), &st, &mut QuantCallCounter::default());
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn asymmetric_weight_spec_rejected() {
        let mut cfg = QuantLstmLayerConfig::float(2, 2, false);
        cfg.weight_spec = Some(QuantizerSpec::max(4, false));
        cfg.input_spec = Some(QuantizerSpec::fix(4, -1.0, 1.0));
        cfg.hidden_spec = Some(QuantizerSpec::fix(4, -1.0, 1.0));
        assert!(matches!(cfg.validate(), Err(Error::InvalidScheme(_))));
    }
}
