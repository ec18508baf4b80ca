use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::arch::{toml_path, ArchConfig};
use crate::error::{Error, Result};
use crate::lstm::Placement;
use crate::quant::QuantizerSpec;

/// Which network a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Rnnt,
    LmExt,
    LmSrc,
}

impl NetKind {
    pub const ALL: [NetKind; 3] = [NetKind::Rnnt, NetKind::LmExt, NetKind::LmSrc];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Rnnt => "rnnt",
            NetKind::LmExt => "lm_ext",
            NetKind::LmSrc => "lm_src",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Lstm,
    Linear,
    Embedding,
}

impl LayerKind {
    pub fn of(id: &str) -> LayerKind {
        if id.ends_with(".embed") {
            LayerKind::Embedding
        } else if id.contains(".lstm") {
            LayerKind::Lstm
        } else {
            LayerKind::Linear
        }
    }
}

/// Layer ids of a network, in forward order.
pub fn layer_ids(arch: &ArchConfig, kind: NetKind) -> Vec<String> {
    match kind {
        NetKind::Rnnt => {
            let mut ids: Vec<String> = (0..arch.encoder_layers).map(|i| format!("enc.lstm{i}")).collect();
            ids.extend(["enc.proj", "pred.embed", "pred.lstm", "pred.proj", "joint.out"].map(String::from));
            ids
        }
        NetKind::LmExt => {
            let mut ids = vec!["lm_ext.embed".to_string()];
            ids.extend((0..arch.lm_ext_layers).map(|i| format!("lm_ext.lstm{i}")));
            ids.extend(["lm_ext.bottleneck", "lm_ext.out"].map(String::from));
            ids
        }
        NetKind::LmSrc => ["lm_src.embed", "lm_src.lstm0", "lm_src.bottleneck", "lm_src.out"]
            .map(String::from)
            .to_vec(),
    }
}

/// Quantizer assignment of one layer. Absent specs leave that role in real arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerScheme {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<QuantizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<QuantizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<QuantizerSpec>,
    #[serde(default)]
    pub quantize_bias: bool,
    #[serde(default)]
    pub quantize_cell: bool,
}

impl LayerScheme {
    fn new(id: &str, weight: QuantizerSpec, input: Option<QuantizerSpec>, hidden: Option<QuantizerSpec>) -> Self {
        Self {
            id: id.to_string(),
            weight: Some(weight),
            input,
            hidden,
            quantize_bias: false,
            quantize_cell: false,
        }
    }
}

/// Machine-readable mixed-precision scheme covering any of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct QuantScheme {
    #[serde(default)]
    pub placement: Placement,
    #[serde(default, rename = "layer")]
    pub layers: Vec<LayerScheme>,
}

impl QuantScheme {
    /// No quantization anywhere.
    pub fn identity() -> Self {
        Self::default()
    }

    /// Mixed-precision default: first encoder layer at 8 bits, remaining
    /// recurrent layers at `low_bits` weights with 4-bit activations, linear
    /// layers and embeddings at 8 bits, language models with SAWB weights and
    /// PACT activations.
    pub fn mixed_default(arch: &ArchConfig, low_bits: u32) -> Self {
        let fix = |b, a: f64| Some(QuantizerSpec::fix(b, -a, a));
        let mut layers = Vec::new();
        for i in 0..arch.encoder_layers {
            let id = format!("enc.lstm{i}");
            layers.push(if i == 0 {
                LayerScheme::new(&id, QuantizerSpec::max(8, true), Some(QuantizerSpec::max(8, false)), fix(8, 1.0))
            } else {
                LayerScheme::new(&id, QuantizerSpec::sawb(low_bits), fix(4, 1.0), fix(4, 1.0))
            });
        }
        let linear8 = |id: &str| LayerScheme::new(id, QuantizerSpec::max(8, true), Some(QuantizerSpec::max(8, false)), None);
        let embed8 = |id: &str| LayerScheme::new(id, QuantizerSpec::max(8, true), None, None);
        layers.push(linear8("enc.proj"));
        layers.push(embed8("pred.embed"));
        layers.push(LayerScheme::new("pred.lstm", QuantizerSpec::sawb(low_bits), fix(4, 1.25), fix(4, 1.0)));
        layers.push(linear8("pred.proj"));
        layers.push(linear8("joint.out"));

        let pact = Some(QuantizerSpec::pact(4));
        for kind in [NetKind::LmExt, NetKind::LmSrc] {
            for id in layer_ids(arch, kind) {
                layers.push(match LayerKind::of(&id) {
                    LayerKind::Embedding => embed8(&id),
                    LayerKind::Lstm => LayerScheme::new(&id, QuantizerSpec::sawb(4), pact, pact),
                    LayerKind::Linear => LayerScheme::new(&id, QuantizerSpec::sawb(4), pact, None),
                });
            }
        }
        Self {
            placement: Placement::Outer,
            layers,
        }
    }

    pub fn layer(&self, id: &str) -> Option<&LayerScheme> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Structural checks that do not depend on the architecture.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            let at = |field: &str| format!("layer[{i}].{field}");
            let invalid = |field: &str, detail: String| Error::InvalidConfig { path: at(field), detail };
            if !seen.insert(l.id.as_str()) {
                return Err(invalid("id", format!("duplicate layer `{}`", l.id)));
            }
            if l.quantize_bias {
                return Err(Error::InvalidScheme(format!("layer `{}`: biases are never quantized", l.id)));
            }
            if l.quantize_cell {
                return Err(Error::InvalidScheme(format!("layer `{}`: cell states are never quantized", l.id)));
            }
            if let Some(w) = &l.weight {
                if !w.symmetric {
                    return Err(Error::InvalidScheme(format!("layer `{}`: weight quantizer must be symmetric", l.id)));
                }
            }
            for (field, spec) in [("weight", &l.weight), ("input", &l.input), ("hidden", &l.hidden)] {
                if let Some(s) = spec {
                    s.validate().map_err(|e| invalid(field, e.to_string()))?;
                }
            }
            let kind = LayerKind::of(&l.id);
            match kind {
                LayerKind::Embedding if l.input.is_some() || l.hidden.is_some() => {
                    return Err(Error::InvalidScheme(format!("embedding `{}` takes only a weight quantizer", l.id)));
                }
                LayerKind::Linear if l.hidden.is_some() => {
                    return Err(Error::InvalidScheme(format!("linear layer `{}` has no hidden state", l.id)));
                }
                _ => {}
            }
            if l.weight.is_some() && kind != LayerKind::Embedding && l.input.is_none() {
                return Err(Error::InvalidScheme(format!(
                    "layer `{}`: quantized weights need an input quantizer",
                    l.id
                )));
            }
            if l.weight.is_some() && kind == LayerKind::Lstm && l.hidden.is_none() {
                return Err(Error::InvalidScheme(format!(
                    "layer `{}`: quantized weights need a hidden-state quantizer",
                    l.id
                )));
            }
            if l.weight.is_none() && (l.input.is_some() || l.hidden.is_some()) {
                return Err(Error::InvalidScheme(format!(
                    "layer `{}`: activation quantizers require quantized weights",
                    l.id
                )));
            }
        }
        Ok(())
    }

    /// Also checks that every entry names a layer of the architecture.
    pub fn validate_for(&self, arch: &ArchConfig) -> Result<()> {
        self.validate()?;
        let known: BTreeSet<String> = NetKind::ALL.iter().flat_map(|&k| layer_ids(arch, k)).collect();
        for (i, l) in self.layers.iter().enumerate() {
            if !known.contains(&l.id) {
                return Err(Error::InvalidConfig {
                    path: format!("layer[{i}].id"),
                    detail: format!("no layer `{}` in this architecture", l.id),
                });
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: format!("scheme{}", toml_path(&e)),
            detail: e.message().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scheme serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QuantizerKind;

    #[test]
    fn default_scheme_shape() {
        let arch = ArchConfig::default();
        let s = QuantScheme::mixed_default(&arch, 4);
        s.validate_for(&arch).unwrap();
        let first = s.layer("enc.lstm0").unwrap();
        assert_eq!(first.weight.unwrap().bits, 8);
        assert_eq!(first.input.unwrap().kind, QuantizerKind::Max);
        assert_eq!(first.hidden.unwrap().fixed_bounds, Some([-1.0, 1.0]));
        for i in 1..6 {
            let l = s.layer(&format!("enc.lstm{i}")).unwrap();
            assert_eq!(l.weight.unwrap().kind, QuantizerKind::Sawb);
            assert_eq!(l.weight.unwrap().bits, 4);
        }
        assert_eq!(s.layer("pred.lstm").unwrap().input.unwrap().fixed_bounds, Some([-1.25, 1.25]));
        assert_eq!(s.layer("lm_ext.lstm1").unwrap().input.unwrap().kind, QuantizerKind::Pact);
        assert_eq!(s.layers.len(), 11 + 5 + 4);
    }

    #[test]
    fn toml_roundtrip() {
        let arch = ArchConfig::default();
        let s = QuantScheme::mixed_default(&arch, 2);
        assert_eq!(QuantScheme::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_invariant_violations() {
        let arch = ArchConfig::default();
        let base = QuantScheme::mixed_default(&arch, 4);
        let mut s = base.clone();
        s.layers[3].quantize_bias = true;
        assert!(matches!(s.validate(), Err(Error::InvalidScheme(_))));
        let mut s = base.clone();
        s.layers[3].quantize_cell = true;
        assert!(matches!(s.validate(), Err(Error::InvalidScheme(_))));
        let mut s = base.clone();
        s.layers[3].weight = Some(QuantizerSpec::max(4, false));
        assert!(matches!(s.validate(), Err(Error::InvalidScheme(_))));
        let mut s = base.clone();
        s.layers[0].id = "enc.lstm9".into();
        assert!(matches!(s.validate_for(&arch), Err(Error::InvalidConfig { .. })));
        let mut s = base;
        s.layers[1].id = "enc.lstm0".into();
        assert!(s.validate().is_err());
    }
}
