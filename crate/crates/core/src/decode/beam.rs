use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::cache::StateCache;
use super::fusion::{fusion_score, log_add_exp, FusionWeights, ScoreParts};
use crate::error::{Error, Result};
use crate::hwsim::{ModelProfile, WorkloadTrace};
use crate::lstm::{LstmState, QuantCallCounter};
use crate::model::{LanguageModel, NetKind, Rnnt, BLANK};

pub const MAX_BEAM: usize = 16;

/// A label-sequence model usable for fusion.
pub trait LabelModel: Send + Sync {
    fn start(&self) -> Result<Vec<LstmState>>;
    /// Consumes `symbol`; returns the new state and the next-label log-distribution.
    fn step(&self, state: &[LstmState], symbol: usize, counter: &mut QuantCallCounter) -> Result<(Vec<LstmState>, Vec<f64>)>;
}

impl LabelModel for LanguageModel {
    fn start(&self) -> Result<Vec<LstmState>> {
        LanguageModel::start(self)
    }

    fn step(&self, state: &[LstmState], symbol: usize, counter: &mut QuantCallCounter) -> Result<(Vec<LstmState>, Vec<f64>)> {
        LanguageModel::step(self, state, symbol, counter)
    }
}

/// Networks taking part in a decode.
pub struct DecodeNets<'a> {
    pub rnnt: &'a Rnnt,
    pub lm_ext: Option<&'a dyn LabelModel>,
    pub lm_src: Option<&'a dyn LabelModel>,
    /// Accelerator view used when recording a workload trace.
    pub profile: ModelProfile,
}

impl<'a> DecodeNets<'a> {
    pub fn new(rnnt: &'a Rnnt, lm_ext: Option<&'a LanguageModel>, lm_src: Option<&'a LanguageModel>) -> Self {
        Self {
            rnnt,
            lm_ext: lm_ext.map(|l| l as &dyn LabelModel),
            lm_src: lm_src.map(|l| l as &dyn LabelModel),
            profile: ModelProfile::from_networks(rnnt, lm_ext, lm_src),
        }
    }

    /// Arbitrary label models; the trace profile then omits LM costs.
    pub fn with_models(rnnt: &'a Rnnt, lm_ext: Option<&'a dyn LabelModel>, lm_src: Option<&'a dyn LabelModel>) -> Self {
        Self {
            rnnt,
            lm_ext,
            lm_src,
            profile: ModelProfile::from_networks(rnnt, None, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam: usize,
    pub weights: FusionWeights,
    /// Labels a hypothesis may emit on one frame before blank is forced.
    pub max_symbols_per_frame: usize,
    pub use_cache: bool,
    pub record_trace: bool,
    pub record_beams: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 16,
            weights: FusionWeights::default(),
            max_symbols_per_frame: 4,
            use_cache: true,
            record_trace: false,
            record_beams: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BEAM).contains(&self.beam) {
            return Err(Error::Decode(format!("beam {} outside 1..={MAX_BEAM}", self.beam)));
        }
        if self.max_symbols_per_frame == 0 {
            return Err(Error::Decode("max_symbols_per_frame must be at least 1".into()));
        }
        self.weights.validate()
    }

    /// Missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: "decode".into(),
            detail: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("decode config serializes")
    }
}

/// Network states after consuming a label prefix (preceded by the start symbol).
struct PrefixState {
    pred: LstmState,
    dec: Vec<f32>,
    ext: Option<(Vec<LstmState>, Vec<f64>)>,
    src: Option<(Vec<LstmState>, Vec<f64>)>,
}

#[derive(Clone)]
struct Hyp {
    labels: Vec<usize>,
    t: usize,
    parts: ScoreParts,
    score: f64,
    emitted_at_t: usize,
    /// State of `labels` without its last label; `None` at the root.
    parent: Option<Rc<PrefixState>>,
    finished: bool,
    /// Tie-break keys: symbol that created this hypothesis and its parent's rank.
    symbol: usize,
    parent_rank: usize,
}

/// A hypothesis as reported to callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHyp {
    pub labels: Vec<usize>,
    pub score: f64,
    pub parts: ScoreParts,
}

impl From<&Hyp> for ScoredHyp {
    fn from(h: &Hyp) -> Self {
        Self {
            labels: h.labels.clone(),
            score: h.score,
            parts: h.parts,
        }
    }
}

/// Hypotheses retained after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamStep {
    pub iteration: usize,
    pub hyps: Vec<ScoredHyp>,
    pub finished: Vec<ScoredHyp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub labels: Vec<usize>,
    pub score: f64,
    pub parts: ScoreParts,
    pub finalists: Vec<ScoredHyp>,
    pub iterations: usize,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub beam_trace: Option<Vec<BeamStep>>,
    pub workload: Option<WorkloadTrace>,
}

fn feed(
    nets: &DecodeNets<'_>,
    counter: &mut QuantCallCounter,
    parent: Option<&PrefixState>,
    symbol: usize,
) -> Result<PrefixState> {
    let pred_prev = match parent {
        Some(p) => p.pred.clone(),
        None => nets.rnnt.pred_start()?,
    };
    let (pred, dec) = nets.rnnt.pred_step(&pred_prev, symbol, counter)?;
    let mut lm = |m: Option<&dyn LabelModel>, prev: Option<&Vec<LstmState>>| -> Result<Option<(Vec<LstmState>, Vec<f64>)>> {
        let Some(m) = m else { return Ok(None) };
        let next = match prev {
            Some(p) => m.step(p, symbol, counter)?,
            None => m.step(&m.start()?, symbol, counter)?,
        };
        Ok(Some(next))
    };
    let ext = lm(nets.lm_ext, parent.and_then(|p| p.ext.as_ref().map(|e| &e.0)))?;
    let src = lm(nets.lm_src, parent.and_then(|p| p.src.as_ref().map(|e| &e.0)))?;
    Ok(PrefixState { pred, dec, ext, src })
}

fn rank_order(a: &Hyp, b: &Hyp) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.symbol.cmp(&b.symbol))
        .then(a.parent_rank.cmp(&b.parent_rank))
}

/// Alignment-length synchronous beam search with density-ratio fusion.
///
/// At iteration `i` every retained hypothesis has alignment length `i`
/// (frames consumed plus labels emitted). Each is extended by blank, which
/// advances its frame, and by every label, which keeps the frame and feeds
/// the label to the prediction network and LMs on its next expansion.
/// Extensions with identical label sequences are merged (their transducer
/// probabilities add), the best `beam` survive, and those that consumed the
/// last frame become finalists. Ties rank the lower symbol, then the
/// older parent, first.
pub fn beam_search(features: &[Vec<f32>], nets: &DecodeNets<'_>, cfg: &DecodeConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::Decode("empty feature sequence".into()));
    }
    let mut cache = StateCache::new(cfg.use_cache);
    let mut counter = QuantCallCounter::default();
    let enc = nets.rnnt.encode(features, &mut counter)?;
    let frames = enc.len();
    let vocab = nets.rnnt.arch.vocab;
    let profile = &nets.profile;
    let mut trace = cfg.record_trace.then(|| WorkloadTrace::new(frames as u64));
    if let Some(t) = trace.as_mut() {
        profile.encoder_ops(frames, t);
    }
    let step_ops = |batch: usize, trace: &mut Option<WorkloadTrace>| {
        if let Some(t) = trace.as_mut() {
            profile.pred_ops(batch, t);
            profile.lm_ops(NetKind::LmExt, batch, t);
            profile.lm_ops(NetKind::LmSrc, batch, t);
        }
    };

    let mut beam = vec![Hyp {
        labels: Vec::new(),
        t: 0,
        parts: ScoreParts::default(),
        score: 0.0,
        emitted_at_t: 0,
        parent: None,
        finished: false,
        symbol: BLANK,
        parent_rank: 0,
    }];
    let mut finalists: Vec<Hyp> = Vec::new();
    let mut beam_trace = cfg.record_beams.then(Vec::new);
    let w = cfg.weights;
    let mut iteration = 0;

    while !beam.is_empty() {
        // Look up (or compute) the prefix state of every hypothesis.
        let mut computed = 0;
        let mut states = Vec::with_capacity(beam.len());
        for h in &beam {
            let symbol = h.labels.last().copied().unwrap_or(BLANK);
            let (state, hit) = cache.get_or_compute(&h.labels, || feed(nets, &mut counter, h.parent.as_deref(), symbol))?;
            if !hit {
                computed += 1;
            }
            states.push(state);
        }
        step_ops(computed, &mut trace);
        if let Some(t) = trace.as_mut() {
            profile.joint_ops(beam.len(), t);
        }

        let mut candidates: Vec<Hyp> = Vec::with_capacity(beam.len() * vocab);
        for (rank, (h, state)) in beam.iter().zip(&states).enumerate() {
            let lp = nets.rnnt.joint(&enc[h.t], &state.dec, &mut counter)?;
            let mut blank = h.clone();
            blank.t += 1;
            blank.parts.log_p_rnnt += lp[BLANK];
            blank.score = fusion_score(&blank.parts, &w);
            blank.emitted_at_t = 0;
            blank.finished = blank.t == frames;
            blank.symbol = BLANK;
            blank.parent_rank = rank;
            candidates.push(blank);
            if h.emitted_at_t >= cfg.max_symbols_per_frame {
                continue;
            }
            for (k, &lpk) in lp.iter().enumerate().skip(1) {
                let mut labels = h.labels.clone();
                labels.push(k);
                let mut parts = h.parts;
                parts.log_p_rnnt += lpk;
                parts.labels += 1;
                if let Some((_, d)) = &state.ext {
                    parts.log_p_ext += d[k];
                }
                if let Some((_, d)) = &state.src {
                    parts.log_p_src += d[k];
                }
                candidates.push(Hyp {
                    labels,
                    t: h.t,
                    score: fusion_score(&parts, &w),
                    parts,
                    emitted_at_t: h.emitted_at_t + 1,
                    parent: Some(Rc::clone(state)),
                    finished: false,
                    symbol: k,
                    parent_rank: rank,
                });
            }
        }
        let generated = candidates.len();

        // Merge identical label sequences; the best-ranked copy represents the group.
        candidates.sort_by(rank_order);
        let mut merged: Vec<Hyp> = Vec::with_capacity(candidates.len());
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        for c in candidates {
            match index.get(&c.labels) {
                Some(&i) => {
                    let m = &mut merged[i];
                    m.parts.log_p_rnnt = log_add_exp(m.parts.log_p_rnnt, c.parts.log_p_rnnt);
                    m.score = fusion_score(&m.parts, &w);
                    m.emitted_at_t = m.emitted_at_t.min(c.emitted_at_t);
                }
                None => {
                    index.insert(c.labels.clone(), merged.len());
                    merged.push(c);
                }
            }
        }
        merged.sort_by(rank_order);
        merged.truncate(cfg.beam);
        if let Some(t) = trace.as_mut() {
            profile.selection_ops(generated, cfg.beam, t);
        }

        let (done, live): (Vec<Hyp>, Vec<Hyp>) = merged.into_iter().partition(|h| h.finished);
        if let Some(bt) = beam_trace.as_mut() {
            bt.push(BeamStep {
                iteration,
                hyps: live.iter().map(ScoredHyp::from).collect(),
                finished: done.iter().map(ScoredHyp::from).collect(),
            });
        }
        finalists.extend(done);
        beam = live;
        iteration += 1;
    }

    let best = finalists
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
        .map(|(_, h)| h)
        .ok_or_else(|| Error::Decode("no hypothesis reached the last frame".into()))?;
    if let Some(t) = trace.as_mut() {
        t.cache_hits = cache.hits();
        t.cache_misses = cache.misses();
    }
    Ok(DecodeResult {
        labels: best.labels.clone(),
        score: best.score,
        parts: best.parts,
        finalists: finalists.iter().map(ScoredHyp::from).collect(),
        iterations: iteration,
        cache_hits: cache.hits(),
        cache_misses: cache.misses(),
        beam_trace,
        workload: trace,
    })
}
