use crate::error::{Error, Result};

/// Dimensions of a decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub rope_theta: f32,
    pub norm_eps: f32,
    /// Bytes per cached element, used only for memory accounting.
    pub dtype_bytes: usize,
}

impl ModelConfig {
    /// Small model used throughout the tests.
    pub fn toy() -> Self {
        Self {
            num_layers: 8,
            hidden_dim: 64,
            num_heads: 4,
            num_kv_heads: 4,
            head_dim: 16,
            ffn_dim: 256,
            vocab_size: 256,
            rope_theta: 10_000.0,
            norm_eps: 1e-5,
            dtype_bytes: 2,
        }
    }

    /// LLaMA-3.1-8B shape. Used for cost and memory accounting only.
    pub fn llama_3_1_8b() -> Self {
        Self {
            num_layers: 32,
            hidden_dim: 4096,
            num_heads: 32,
            num_kv_heads: 8,
            head_dim: 128,
            ffn_dim: 14336,
            vocab_size: 128_256,
            rope_theta: 500_000.0,
            norm_eps: 1e-5,
            dtype_bytes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("dtype_bytes", self.dtype_bytes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.num_heads * self.head_dim != self.hidden_dim {
            return Err(Error::Config(format!(
                "hidden_dim {} != num_heads {} x head_dim {}",
                self.hidden_dim, self.num_heads, self.head_dim
            )));
        }
        if self.num_heads % self.num_kv_heads != 0 {
            return Err(Error::Config(format!(
                "num_heads {} not divisible by num_kv_heads {}",
                self.num_heads, self.num_kv_heads
            )));
        }
        if !(self.rope_theta.is_finite() && self.rope_theta > 0.0) {
            return Err(Error::Config("rope_theta must be positive".into()));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn q_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn kv_dim(&self) -> usize {
        self.num_kv_heads * self.head_dim
    }

    /// Query heads served by each key/value head.
    pub fn group_size(&self) -> usize {
        self.num_heads / self.num_kv_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::llama_3_1_8b().validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_heads() {
        let mut c = ModelConfig::toy();
        c.head_dim = 15;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::toy();
        c.num_kv_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.vocab_size = 0;
        assert!(c.validate().is_err());
    }
}
