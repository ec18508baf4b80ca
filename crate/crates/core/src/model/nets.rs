use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::ArchConfig;
use super::scheme::NetKind;
use crate::error::{Error, Result};
use crate::lstm::{
    run_stack, step_stack, LstmState, QuantCallCounter, QuantLstmLayer, QuantLstmLayerConfig, Weight,
};
use crate::quant::QuantParams;
use crate::tensor::{FloatTensor, PackedTensor};

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Weight,
    pub bias: Vec<f32>,
    pub input_q: Option<QuantParams>,
}

impl Linear {
    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f32], counter: &mut QuantCallCounter) -> Result<Vec<f32>> {
        let mut y = match (&self.input_q, self.weight.is_quantized()) {
            (Some(p), _) => {
                counter.activation_calls += 1;
                let xq = PackedTensor::quantize(x, vec![x.len()], p.to_kernel())?;
                self.weight.matvec_coded(&[&xq])?
            }
            (None, false) => self.weight.matvec(x)?,
            (None, true) => {
                return Err(Error::Precondition("quantized linear layer has no input quantizer".into()))
            }
        };
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        Ok(y)
    }
}

/// Symbol embedding table `[vocab, dim]`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Weight,
    rows: Vec<f32>,
}

impl Embedding {
    pub fn new(table: Weight) -> Self {
        let rows = table.values();
        Self { table, rows }
    }

    pub fn set_table(&mut self, table: Weight) {
        *self = Self::new(table);
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn lookup(&self, symbol: usize) -> Result<&[f32]> {
        let d = self.dim();
        if symbol >= self.table.rows() {
            return Err(Error::Precondition(format!(
                "symbol {symbol} outside vocabulary of {}",
                self.table.rows()
            )));
        }
        Ok(&self.rows[symbol * d..(symbol + 1) * d])
    }
}

/// Borrowed view of one named layer.
pub enum LayerRef<'a> {
    Lstm(&'a QuantLstmLayer),
    Linear(&'a Linear),
    Embedding(&'a Embedding),
}

pub enum LayerMut<'a> {
    Lstm(&'a mut QuantLstmLayer),
    Linear(&'a mut Linear),
    Embedding(&'a mut Embedding),
}

/// Log-softmax in double precision.
pub fn log_softmax(z: &[f32]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = m + z.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v as f64 - lse).collect()
}

struct Init(ChaCha8Rng);

impl Init {
    fn uniform(&mut self, shape: Vec<usize>, k: f32) -> FloatTensor {
        let n = shape.iter().product();
        let v = (0..n).map(|_| self.0.random_range(-k..=k)).collect();
        FloatTensor::new(shape, v).expect("shape matches")
    }

    fn vec(&mut self, n: usize, k: f32) -> Vec<f32> {
        (0..n).map(|_| self.0.random_range(-k..=k)).collect()
    }

    fn lstm(&mut self, input: usize, hidden: usize, bidirectional: bool) -> QuantLstmLayer {
        let cfg = QuantLstmLayerConfig::float(input, hidden, bidirectional);
        let k = 1.0 / (hidden as f32).sqrt();
        let dirs = (0..cfg.directions())
            .map(|_| {
                (
                    self.uniform(vec![4 * hidden, input], k),
                    self.uniform(vec![4 * hidden, hidden], k),
                    self.vec(4 * hidden, k),
                )
            })
            .collect();
        QuantLstmLayer::from_real(cfg, dirs).expect("consistent shapes")
    }

    fn linear(&mut self, input: usize, output: usize) -> Linear {
        let k = 1.0 / (input as f32).sqrt();
        Linear {
            weight: Weight::Real(self.uniform(vec![output, input], k)),
            bias: self.vec(output, k),
            input_q: None,
        }
    }

    fn embedding(&mut self, vocab: usize, dim: usize) -> Embedding {
        Embedding::new(Weight::Real(self.uniform(vec![vocab, dim], 1.0)))
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<QuantLstmLayer>,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct PredictionNet {
    pub embed: Embedding,
    pub lstm: QuantLstmLayer,
    pub proj: Linear,
}

/// Transducer: bidirectional encoder, prediction network and a joint network
/// that multiplies the two 256-d representations elementwise before the
/// output projection and log-softmax.
#[derive(Debug, Clone)]
pub struct Rnnt {
    pub arch: ArchConfig,
    pub encoder: Encoder,
    pub pred: PredictionNet,
    pub joint: Linear,
}

/// Blank doubles as the start symbol fed to the prediction network and LMs.
pub const BLANK: usize = 0;

impl Rnnt {
    pub fn build(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut init = Init(ChaCha8Rng::seed_from_u64(seed));
        let h = arch.encoder_hidden;
        let layers = (0..arch.encoder_layers)
            .map(|i| init.lstm(if i == 0 { arch.encoder_input } else { 2 * h }, h, true))
            .collect();
        let encoder = Encoder {
            layers,
            proj: init.linear(2 * h, arch.joint_dim),
        };
        let pred = PredictionNet {
            embed: init.embedding(arch.vocab, arch.embed_dim),
            lstm: init.lstm(arch.embed_dim, arch.pred_hidden, false),
            proj: init.linear(arch.pred_hidden, arch.joint_dim),
        };
        let joint = init.linear(arch.joint_dim, arch.vocab);
        Ok(Self {
            arch: arch.clone(),
            encoder,
            pred,
            joint,
        })
    }

    /// Acoustic representation `[T][joint_dim]`.
    pub fn encode(&self, x: &[Vec<f32>], counter: &mut QuantCallCounter) -> Result<Vec<Vec<f32>>> {
        if x.is_empty() {
            return Err(Error::Precondition("empty feature sequence".into()));
        }
        if let Some(bad) = x.iter().find(|f| f.len() != self.arch.encoder_input) {
            return Err(Error::ShapeMismatch(format!(
                "feature frames must have {} values, got {}",
                self.arch.encoder_input,
                bad.len()
            )));
        }
        let hidden = run_stack(&self.encoder.layers, x, counter)?;
        hidden.iter().map(|h| self.encoder.proj.forward(h, counter)).collect()
    }

    pub fn pred_start(&self) -> Result<LstmState> {
        LstmState::zeros(&self.pred.lstm.dirs[0])
    }

    /// Feeds `symbol` and returns the new state and the prediction output.
    pub fn pred_step(
        &self,
        state: &LstmState,
        symbol: usize,
        counter: &mut QuantCallCounter,
    ) -> Result<(LstmState, Vec<f32>)> {
        let e = self.pred.embed.lookup(symbol)?;
        let (h, mut st) = step_stack(std::slice::from_ref(&self.pred.lstm), e, std::slice::from_ref(state), counter)?;
        let out = self.pred.proj.forward(&h, counter)?;
        Ok((st.remove(0), out))
    }

    /// Log-distribution over the vocabulary (blank at index 0).
    pub fn joint(&self, enc: &[f32], dec: &[f32], counter: &mut QuantCallCounter) -> Result<Vec<f64>> {
        if enc.len() != dec.len() {
            return Err(Error::ShapeMismatch("joint inputs differ in size".into()));
        }
        let z: Vec<f32> = enc.iter().zip(dec).map(|(a, b)| a * b).collect();
        Ok(log_softmax(&self.joint.forward(&z, counter)?))
    }

    fn layer_refs(&self) -> Vec<LayerRef<'_>> {
        let mut v: Vec<LayerRef> = self.encoder.layers.iter().map(LayerRef::Lstm).collect();
        v.push(LayerRef::Linear(&self.encoder.proj));
        v.push(LayerRef::Embedding(&self.pred.embed));
        v.push(LayerRef::Lstm(&self.pred.lstm));
        v.push(LayerRef::Linear(&self.pred.proj));
        v.push(LayerRef::Linear(&self.joint));
        v
    }

    fn layer_muts(&mut self) -> Vec<LayerMut<'_>> {
        let mut v: Vec<LayerMut> = self.encoder.layers.iter_mut().map(LayerMut::Lstm).collect();
        v.push(LayerMut::Linear(&mut self.encoder.proj));
        v.push(LayerMut::Embedding(&mut self.pred.embed));
        v.push(LayerMut::Lstm(&mut self.pred.lstm));
        v.push(LayerMut::Linear(&mut self.pred.proj));
        v.push(LayerMut::Linear(&mut self.joint));
        v
    }
}

/// Character language model: embedding, unidirectional LSTM stack,
/// bottleneck and output layer.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub kind: NetKind,
    pub arch: ArchConfig,
    pub embed: Embedding,
    pub lstms: Vec<QuantLstmLayer>,
    pub bottleneck: Linear,
    pub out: Linear,
}

impl LanguageModel {
    pub fn build(arch: &ArchConfig, kind: NetKind, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut init = Init(ChaCha8Rng::seed_from_u64(seed));
        let (embed, hidden, layers, bottleneck) = match kind {
            NetKind::LmExt => (arch.lm_ext_embed, arch.lm_ext_hidden, arch.lm_ext_layers, arch.lm_ext_bottleneck),
            NetKind::LmSrc => (arch.embed_dim, arch.pred_hidden, 1, arch.joint_dim),
            NetKind::Rnnt => return Err(Error::Precondition("not a language model kind".into())),
        };
        Ok(Self {
            kind,
            arch: arch.clone(),
            embed: init.embedding(arch.vocab, embed),
            lstms: (0..layers)
                .map(|i| init.lstm(if i == 0 { embed } else { hidden }, hidden, false))
                .collect(),
            bottleneck: init.linear(hidden, bottleneck),
            out: init.linear(bottleneck, arch.vocab),
        })
    }

    pub fn start(&self) -> Result<Vec<LstmState>> {
        self.lstms.iter().map(|l| LstmState::zeros(&l.dirs[0])).collect()
    }

    /// Feeds `symbol`; returns the new state and the next-symbol log-distribution.
    pub fn step(
        &self,
        state: &[LstmState],
        symbol: usize,
        counter: &mut QuantCallCounter,
    ) -> Result<(Vec<LstmState>, Vec<f64>)> {
        let e = self.embed.lookup(symbol)?;
        let (h, next) = step_stack(&self.lstms, e, state, counter)?;
        let b = self.bottleneck.forward(&h, counter)?;
        let z = self.out.forward(&b, counter)?;
        Ok((next, log_softmax(&z)))
    }

    fn layer_refs(&self) -> Vec<LayerRef<'_>> {
        let mut v = vec![LayerRef::Embedding(&self.embed)];
        v.extend(self.lstms.iter().map(LayerRef::Lstm));
        v.push(LayerRef::Linear(&self.bottleneck));
        v.push(LayerRef::Linear(&self.out));
        v
    }

    fn layer_muts(&mut self) -> Vec<LayerMut<'_>> {
        let mut v = vec![LayerMut::Embedding(&mut self.embed)];
        v.extend(self.lstms.iter_mut().map(LayerMut::Lstm));
        v.push(LayerMut::Linear(&mut self.bottleneck));
        v.push(LayerMut::Linear(&mut self.out));
        v
    }
}

/// Any of the three networks.
#[derive(Debug, Clone)]
pub enum Network {
    Rnnt(Rnnt),
    Lm(LanguageModel),
}

impl Network {
    pub fn build(arch: &ArchConfig, kind: NetKind, seed: u64) -> Result<Self> {
        Ok(match kind {
            NetKind::Rnnt => Network::Rnnt(Rnnt::build(arch, seed)?),
            _ => Network::Lm(LanguageModel::build(arch, kind, seed)?),
        })
    }

    pub fn kind(&self) -> NetKind {
        match self {
            Network::Rnnt(_) => NetKind::Rnnt,
            Network::Lm(lm) => lm.kind,
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        match self {
            Network::Rnnt(n) => &n.arch,
            Network::Lm(n) => &n.arch,
        }
    }

    /// Layers paired with their ids, in forward order.
    pub fn layers(&self) -> Vec<(String, LayerRef<'_>)> {
        let ids = super::scheme::layer_ids(self.arch(), self.kind());
        let refs = match self {
            Network::Rnnt(n) => n.layer_refs(),
            Network::Lm(n) => n.layer_refs(),
        };
        ids.into_iter().zip(refs).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<(String, LayerMut<'_>)> {
        let ids = super::scheme::layer_ids(self.arch(), self.kind());
        let refs = match self {
            Network::Rnnt(n) => n.layer_muts(),
            Network::Lm(n) => n.layer_muts(),
        };
        ids.into_iter().zip(refs).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, l)| match l {
                LayerRef::Lstm(l) => l.dirs.iter().map(|d| d.w_ih.shape().iter().product::<usize>() + d.w_hh.shape().iter().product::<usize>() + d.bias.len()).sum(),
                LayerRef::Linear(l) => l.weight.shape().iter().product::<usize>() + l.bias.len(),
                LayerRef::Embedding(e) => e.table.shape().iter().product(),
            })
            .sum()
    }

    pub fn as_rnnt(&self) -> Option<&Rnnt> {
        match self {
            Network::Rnnt(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_lm(&self) -> Option<&LanguageModel> {
        match self {
            Network::Lm(n) => Some(n),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_counts_match_closed_forms() {
        let arch = ArchConfig::toy();
        let r = Network::build(&arch, NetKind::Rnnt, 1).unwrap();
        assert_eq!(r.param_count(), arch.rnnt_params());
        let e = Network::build(&arch, NetKind::LmExt, 1).unwrap();
        assert_eq!(e.param_count(), arch.lm_ext_params());
        let s = Network::build(&arch, NetKind::LmSrc, 1).unwrap();
        assert_eq!(s.param_count(), arch.lm_src_params());
    }

    #[test]
    fn joint_is_log_distribution() {
        let arch = ArchConfig::toy();
        let r = Rnnt::build(&arch, 7).unwrap();
        let mut c = QuantCallCounter::default();
        let x: Vec<Vec<f32>> = (0..5).map(|t| vec![0.1 * t as f32; arch.encoder_input]).collect();
        let enc = r.encode(&x, &mut c).unwrap();
        let (_, dec) = r.pred_step(&r.pred_start().unwrap(), BLANK, &mut c).unwrap();
        for e in &enc {
            let lp = r.joint(e, &dec, &mut c).unwrap();
            assert_eq!(lp.len(), 46);
            let s: f64 = lp.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lm_single_step_distribution() {
        let arch = ArchConfig::toy();
        for kind in [NetKind::LmExt, NetKind::LmSrc] {
            let lm = LanguageModel::build(&arch, kind, 3).unwrap();
            let (_, lp) = lm.step(&lm.start().unwrap(), 5, &mut QuantCallCounter::default()).unwrap();
            assert_eq!(lp.len(), 46);
            assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let arch = ArchConfig::toy();
        let a = Rnnt::build(&arch, 11).unwrap();
        let b = Rnnt::build(&arch, 11).unwrap();
        assert_eq!(a.joint.weight.values(), b.joint.weight.values());
        let c = Rnnt::build(&arch, 12).unwrap();
        assert_ne!(a.joint.weight.values(), c.joint.weight.values());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let arch = ArchConfig::toy();
        let r = Rnnt::build(&arch, 1).unwrap();
        let mut c = QuantCallCounter::default();
        assert!(r.encode(&[], &mut c).is_err());
        assert!(matches!(r.encode(&[vec![0.0; 3]], &mut c), Err(Error::ShapeMismatch(_))));
    }
}
