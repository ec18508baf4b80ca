use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network dimensions shared by the RNN-T and both language models.
///
/// The source LM reuses the prediction-network shape (`embed_dim`,
/// `pred_hidden`, `joint_dim`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub encoder_layers: usize,
    pub encoder_input: usize,
    pub encoder_hidden: usize,
    pub joint_dim: usize,
    pub pred_hidden: usize,
    pub embed_dim: usize,
    pub vocab: usize,
    pub lm_ext_hidden: usize,
    pub lm_ext_layers: usize,
    pub lm_ext_bottleneck: usize,
    pub lm_ext_embed: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 6,
            encoder_input: 340,
            encoder_hidden: 640,
            joint_dim: 256,
            pred_hidden: 768,
            embed_dim: 10,
            vocab: 46,
            lm_ext_hidden: 2048,
            lm_ext_layers: 2,
            lm_ext_bottleneck: 256,
            lm_ext_embed: 14,
        }
    }
}

/// Parameters of one LSTM direction: `4h(in + h + 1)`.
pub fn lstm_direction_params(input: usize, hidden: usize) -> usize {
    4 * hidden * (input + hidden + 1)
}

/// Parameters of a linear layer with bias.
pub fn linear_params(input: usize, output: usize) -> usize {
    input * output + output
}

impl ArchConfig {
    /// Small dimensions for tests and smoke runs; same topology.
    pub fn toy() -> Self {
        Self {
            encoder_layers: 2,
            encoder_input: 12,
            encoder_hidden: 8,
            joint_dim: 8,
            pred_hidden: 8,
            embed_dim: 4,
            vocab: 46,
            lm_ext_hidden: 12,
            lm_ext_layers: 2,
            lm_ext_bottleneck: 6,
            lm_ext_embed: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("encoder_layers", self.encoder_layers),
            ("encoder_input", self.encoder_input),
            ("encoder_hidden", self.encoder_hidden),
            ("joint_dim", self.joint_dim),
            ("pred_hidden", self.pred_hidden),
            ("embed_dim", self.embed_dim),
            ("vocab", self.vocab),
            ("lm_ext_hidden", self.lm_ext_hidden),
            ("lm_ext_layers", self.lm_ext_layers),
            ("lm_ext_bottleneck", self.lm_ext_bottleneck),
            ("lm_ext_embed", self.lm_ext_embed),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig {
                    path: format!("arch.{name}"),
                    detail: "must be positive".into(),
                });
            }
        }
        if self.vocab < 2 || self.vocab > 256 {
            return Err(Error::InvalidConfig {
                path: "arch.vocab".into(),
                detail: format!("{} symbols; need blank plus at least one label, at most 256", self.vocab),
            });
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let arch: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: format!("arch{}", toml_path(&e)),
            detail: e.message().to_string(),
        })?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arch serializes")
    }

    pub fn encoder_params(&self) -> usize {
        let h = self.encoder_hidden;
        let mut n = 2 * lstm_direction_params(self.encoder_input, h);
        n += (self.encoder_layers - 1) * 2 * lstm_direction_params(2 * h, h);
        n + linear_params(2 * h, self.joint_dim)
    }

    pub fn prediction_params(&self) -> usize {
        self.vocab * self.embed_dim
            + lstm_direction_params(self.embed_dim, self.pred_hidden)
            + linear_params(self.pred_hidden, self.joint_dim)
    }

    pub fn joint_params(&self) -> usize {
        linear_params(self.joint_dim, self.vocab)
    }

    pub fn rnnt_params(&self) -> usize {
        self.encoder_params() + self.prediction_params() + self.joint_params()
    }

    pub fn lm_ext_params(&self) -> usize {
        let h = self.lm_ext_hidden;
        let mut n = self.vocab * self.lm_ext_embed + lstm_direction_params(self.lm_ext_embed, h);
        n += (self.lm_ext_layers - 1) * lstm_direction_params(h, h);
        n + linear_params(h, self.lm_ext_bottleneck) + linear_params(self.lm_ext_bottleneck, self.vocab)
    }

    pub fn lm_src_params(&self) -> usize {
        self.prediction_params() + self.joint_params()
    }
}

/// Dotted key path of a TOML error, if the parser reports one.
pub(crate) fn toml_path(e: &toml::de::Error) -> String {
    let msg = e.message();
    // toml reports unknown or missing fields by name inside backticks.
    match msg.split('`').nth(1) {
        Some(field) if !field.contains(' ') => format!(".{field}"),
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_match_closed_forms() {
        let a = ArchConfig::default();
        assert_eq!(a.encoder_params(), 54_528_256);
        assert_eq!(a.prediction_params(), 2_590_412);
        assert_eq!(a.joint_params(), 11_822);
        assert_eq!(a.lm_ext_params(), 50_999_730);
        assert_eq!(a.lm_src_params(), 2_602_234);
    }

    #[test]
    fn toml_roundtrip_and_field_errors() {
        let a = ArchConfig::default();
        assert_eq!(ArchConfig::from_toml(&a.to_toml()).unwrap(), a);
        let bad = a.to_toml().replace("encoder_hidden = 640", "encoder_hidden = 0");
        match ArchConfig::from_toml(&bad) {
            Err(Error::InvalidConfig { path, .. }) => assert_eq!(path, "arch.encoder_hidden"),
            other => panic!("{other:?}"),
        }
        let unknown = format!("{}\nbogus = 1\n", a.to_toml());
        match ArchConfig::from_toml(&unknown) {
            Err(Error::InvalidConfig { path, .. }) => assert_eq!(path, "arch.bogus"),
            other => panic!("{other:?}"),
        }
    }
}
