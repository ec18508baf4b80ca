//! Beam-search decoding with LM fusion, transcripts and scoring.

mod beam;
mod cache;
mod fusion;
mod text;
mod wer;

pub use beam::{beam_search, BeamStep, DecodeConfig, DecodeNets, DecodeResult, LabelModel, ScoredHyp, MAX_BEAM};
pub use cache::StateCache;
pub use fusion::{fusion_score, log_add_exp, FusionWeights, ScoreParts};
pub use text::{labels_to_text, symbol_char, text_to_labels, LABELS};
pub use wer::{wer, wer_text, WerCounts};
