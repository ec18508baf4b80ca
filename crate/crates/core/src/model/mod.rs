//! Network definitions, quantization schemes, checkpoints and size accounting.

mod arch;
mod checkpoint;
mod nets;
mod quantize;
mod scheme;
mod size;

pub use arch::{linear_params, lstm_direction_params, ArchConfig};
pub use checkpoint::{
    from_bytes, load_checkpoint, load_header, plan_layout, read_header, save_checkpoint, to_bytes,
    CheckpointHeader, LayerHeader, Storage, TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use nets::{
    log_softmax, Embedding, Encoder, LanguageModel, LayerMut, LayerRef, Linear, Network, PredictionNet, Rnnt,
    BLANK,
};
pub use quantize::{data_dependent_layers, quantize_model, vocabulary_sweep, CalibrationData, PACT_LR, PACT_STEPS};
pub use scheme::{layer_ids, LayerKind, LayerScheme, NetKind, QuantScheme};
pub use size::{planned_size, SizeReport, TensorSize, MB};
