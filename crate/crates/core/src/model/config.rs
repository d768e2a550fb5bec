use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::mesh::MeshMode;

/// Network variant. `M1`-`M3` ablate the hierarchy source and the
/// inter-level weights; `Flat` is a single-level stack of AMP layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Dhmp,
    M1,
    M2,
    M3,
    Flat,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Dhmp,
        Variant::M1,
        Variant::M2,
        Variant::M3,
        Variant::Flat,
    ];

    /// Hierarchy sampled from learned keep probabilities.
    pub fn dynamic_hierarchy(self) -> bool {
        matches!(self, Variant::Dhmp | Variant::M3)
    }

    /// REDUCE/EXPAND reuse the learned AMP weights (otherwise 1/degree).
    pub fn learned_inter_level(self) -> bool {
        matches!(self, Variant::Dhmp | Variant::M2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dhmp => "DHMP",
            Variant::M1 => "M1",
            Variant::M2 => "M2",
            Variant::M3 => "M3",
            Variant::Flat => "FLAT",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of graph levels, including the input mesh.
    pub levels: usize,
    /// Hop count of the edge enhancement before restriction.
    pub hops: usize,
    pub latent: usize,
    pub hidden: usize,
    /// Node input width, including the node-type one-hot.
    pub node_input: usize,
    pub output: usize,
    pub mode: MeshMode,
    /// AMP passes per level on each of the down and up paths.
    pub layers_per_level: usize,
    /// Message-passing passes of the `Flat` variant.
    pub flat_passes: usize,
    /// Use the AMP weights as-is in REDUCE/EXPAND instead of renormalising
    /// them over the contributing neighbours.
    pub raw_alpha: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Dhmp,
            levels: 3,
            hops: 2,
            latent: 128,
            hidden: 128,
            node_input: 4,
            output: 1,
            mode: MeshMode::Eulerian,
            layers_per_level: 1,
            flat_passes: 15,
            raw_alpha: false,
            init_seed: 0,
        }
    }
}

impl Variant {
    /// Long name used in comparison tables.
    pub fn description(self) -> &'static str {
        match self {
            Variant::Dhmp => "DHMP",
            Variant::M1 => "Static-Anisotropic-Unlearnable (M1)",
            Variant::M2 => "Static-Anisotropic-Learnable (M2)",
            Variant::M3 => "Dynamic-Anisotropic-Unlearnable (M3)",
            Variant::Flat => "Flat-15-Pass (FLAT)",
        }
    }
}

impl ModelConfig {
    /// Levels actually built: `Flat` always runs on the input mesh only.
    pub fn effective_levels(&self) -> usize {
        if self.variant == Variant::Flat {
            1
        } else {
            self.levels
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if !(1..=8).contains(&self.hops) {
            return bad("hops must lie in 1..=8");
        }
        if self.latent == 0 || self.hidden == 0 || self.node_input == 0 || self.output == 0 {
            return bad("widths must be positive");
        }
        if self.layers_per_level == 0 || self.flat_passes == 0 {
            return bad("layer counts must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("flat".parse::<Variant>().unwrap(), Variant::Flat);
        assert!("M4".parse::<Variant>().is_err());
        let json = serde_json::to_string(&Variant::Dhmp).unwrap();
        assert_eq!(json, "\"DHMP\"");
    }

    #[test]
    fn flat_forces_one_level() {
        let cfg = ModelConfig {
            variant: Variant::Flat,
            levels: 4,
            ..Default::default()
        };
        assert_eq!(cfg.effective_levels(), 1);
        cfg.validate().unwrap();
        assert!(ModelConfig {
            levels: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
