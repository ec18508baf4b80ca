use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// LM weight `mu`, source-LM weight `lambda` and label insertion reward `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWeights {
    pub mu: f64,
    pub lambda: f64,
    pub rho: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            mu: 0.7,
            lambda: 0.5,
            rho: 0.2,
        }
    }
}

impl FusionWeights {
    pub const OFF: FusionWeights = FusionWeights {
        mu: 0.0,
        lambda: 0.0,
        rho: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if [self.mu, self.lambda, self.rho].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Decode("fusion weights must be finite".into()))
        }
    }
}

/// Per-component log-probabilities of a label sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreParts {
    pub log_p_rnnt: f64,
    pub log_p_ext: f64,
    pub log_p_src: f64,
    pub labels: usize,
}

/// Density-ratio fusion: `log P + mu log P_ext - lambda log P_src + rho |y|`.
pub fn fusion_score(p: &ScoreParts, w: &FusionWeights) -> f64 {
    p.log_p_rnnt + w.mu * p.log_p_ext - w.lambda * p.log_p_src + w.rho * p.labels as f64
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}
