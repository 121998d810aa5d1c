//! Architecture hyperparameters of the hooked transformer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;

/// Dimensions and switches of a decoder-only transformer.
///
/// Everything downstream — weight shapes, node/edge enumeration, patching —
/// is determined by this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// When false, every port feeds its raw residual sum straight into the
    /// node computation (useful for hand-checked tests).
    pub layernorm_enabled: bool,
    pub ln_epsilon: f64,
}

impl ModelConfig {
    /// Check the structural invariants: `d_model == n_heads * d_head`,
    /// all dimensions at least 1, `max_seq_len >= 2`.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be >= 2".into()));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::Config(format!(
                "d_model ({}) != n_heads ({}) * d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if !(self.ln_epsilon > 0.0 && self.ln_epsilon.is_finite()) {
            return Err(Error::Config("ln_epsilon must be a small positive real".into()));
        }
        Ok(())
    }

    /// Node/port/edge index space for this architecture.
    pub fn topology(&self) -> Topology {
        Topology::new(self.n_layers, self.n_heads)
    }
}
