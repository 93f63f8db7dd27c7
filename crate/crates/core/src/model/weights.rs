use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, TensorFile};

/// Projection matrices and norm gains of one decoder layer.
///
/// All projections are stored input-major (`x · W`), except `w_down` which
/// is `D × D_ff` and applied transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn_norm: Vec<f32>,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `vocab × D`
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    /// `D × vocab`
    pub lm_head: Matrix,
}

const CONFIG_FIELDS: usize = 10;

struct Sampler {
    rng: ChaCha8Rng,
    scale: f32,
}

impl Sampler {
    fn matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut self.rng);
                z * self.scale
            })
            .collect();
        Matrix::new(rows, cols, data).expect("sized by construction")
    }

    fn gain(&mut self, n: usize) -> Vec<f32> {
        (0..n)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut self.rng);
                1.0 + 0.1 * z
            })
            .collect()
    }
}

impl LayerWeights {
    fn zeros(c: &ModelConfig) -> Self {
        let d = c.hidden_dim;
        Self {
            attn_norm: vec![1.0; d],
            wq: Matrix::zeros(d, c.q_dim()),
            wk: Matrix::zeros(d, c.kv_dim()),
            wv: Matrix::zeros(d, c.kv_dim()),
            wo: Matrix::zeros(c.q_dim(), d),
            ffn_norm: vec![1.0; d],
            w_gate: Matrix::zeros(d, c.ffn_dim),
            w_up: Matrix::zeros(d, c.ffn_dim),
            w_down: Matrix::zeros(d, c.ffn_dim),
        }
    }

    fn check(&self, c: &ModelConfig, layer: usize) -> Result<()> {
        let d = c.hidden_dim;
        let shapes = [
            ("wq", &self.wq, (d, c.q_dim())),
            ("wk", &self.wk, (d, c.kv_dim())),
            ("wv", &self.wv, (d, c.kv_dim())),
            ("wo", &self.wo, (c.q_dim(), d)),
            ("w_gate", &self.w_gate, (d, c.ffn_dim)),
            ("w_up", &self.w_up, (d, c.ffn_dim)),
            ("w_down", &self.w_down, (d, c.ffn_dim)),
        ];
        for (name, m, want) in shapes {
            if m.shape() != want {
                return Err(Error::Shape(format!(
                    "layer{layer}.{name} is {:?}, expected {want:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::Numeric(format!("layer{layer}.{name} has non-finite entries")));
            }
        }
        if self.attn_norm.len() != d || self.ffn_norm.len() != d {
            return Err(Error::Shape(format!("layer{layer} norm gains must have length {d}")));
        }
        Ok(())
    }
}

/// Seeded random model; identical `(config, seed)` gives identical weights.
pub fn gen_toy_model(config: ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let d = config.hidden_dim;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        scale: 1.0 / (d as f32).sqrt(),
    };
    let embedding = s.matrix(config.vocab_size, d);
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            attn_norm: s.gain(d),
            wq: s.matrix(d, config.q_dim()),
            wk: s.matrix(d, config.kv_dim()),
            wv: s.matrix(d, config.kv_dim()),
            wo: s.matrix(config.q_dim(), d),
            ffn_norm: s.gain(d),
            w_gate: s.matrix(d, config.ffn_dim),
            w_up: s.matrix(d, config.ffn_dim),
            w_down: s.matrix(d, config.ffn_dim),
        })
        .collect();
    let final_norm = s.gain(d);
    let lm_head = s.matrix(d, config.vocab_size);
    Ok(Model {
        config,
        embedding,
        layers,
        final_norm,
        lm_head,
    })
}

impl Model {
    /// Model whose blocks are all zero; every block reduces to the identity.
    pub fn zero_blocks(config: ModelConfig, seed: u64) -> Result<Model> {
        let mut m = gen_toy_model(config, seed)?;
        for l in &mut m.layers {
            *l = LayerWeights::zeros(&config);
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.layers.len() != c.num_layers {
            return Err(Error::Shape(format!(
                "{} layers present, config says {}",
                self.layers.len(),
                c.num_layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check(c, i)?;
        }
        if self.embedding.shape() != (c.vocab_size, c.hidden_dim) {
            return Err(Error::Shape("embedding shape mismatch".into()));
        }
        if self.lm_head.shape() != (c.hidden_dim, c.vocab_size) {
            return Err(Error::Shape("lm_head shape mismatch".into()));
        }
        if self.final_norm.len() != c.hidden_dim {
            return Err(Error::Shape("final_norm length mismatch".into()));
        }
        Ok(())
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let c = &self.config;
        let mut tf = TensorFile::new();
        let cfg = [
            c.num_layers as f32,
            c.hidden_dim as f32,
            c.num_heads as f32,
            c.num_kv_heads as f32,
            c.head_dim as f32,
            c.ffn_dim as f32,
            c.vocab_size as f32,
            c.rope_theta,
            c.norm_eps,
            c.dtype_bytes as f32,
        ];
        tf.push("config", Matrix::row_vector(&cfg));
        tf.push("embedding", self.embedding.clone());
        for (i, l) in self.layers.iter().enumerate() {
            tf.push(format!("layer{i}.attn_norm"), Matrix::row_vector(&l.attn_norm));
            tf.push(format!("layer{i}.wq"), l.wq.clone());
            tf.push(format!("layer{i}.wk"), l.wk.clone());
            tf.push(format!("layer{i}.wv"), l.wv.clone());
            tf.push(format!("layer{i}.wo"), l.wo.clone());
            tf.push(format!("layer{i}.ffn_norm"), Matrix::row_vector(&l.ffn_norm));
            tf.push(format!("layer{i}.w_gate"), l.w_gate.clone());
            tf.push(format!("layer{i}.w_up"), l.w_up.clone());
            tf.push(format!("layer{i}.w_down"), l.w_down.clone());
        }
        tf.push("final_norm", Matrix::row_vector(&self.final_norm));
        tf.push("lm_head", self.lm_head.clone());
        tf
    }

    pub fn from_tensor_file(tf: &TensorFile) -> Result<Model> {
        let cfg = tf.require("config")?;
        if cfg.data().len() != CONFIG_FIELDS {
            return Err(Error::Format(format!(
                "config tensor has {} fields, expected {CONFIG_FIELDS}",
                cfg.data().len()
            )));
        }
        let f = cfg.data();
        let count = |i: usize| -> Result<usize> {
            let v = f[i];
            if v.fract() != 0.0 || v < 0.0 {
                return Err(Error::Format(format!("config field {i} is not a count: {v}")));
            }
            Ok(v as usize)
        };
        let config = ModelConfig {
            num_layers: count(0)?,
            hidden_dim: count(1)?,
            num_heads: count(2)?,
            num_kv_heads: count(3)?,
            head_dim: count(4)?,
            ffn_dim: count(5)?,
            vocab_size: count(6)?,
            rope_theta: f[7],
            norm_eps: f[8],
            dtype_bytes: count(9)?,
        };
        config.validate()?;

        let mut known = vec![
            "config".to_string(),
            "embedding".into(),
            "final_norm".into(),
            "lm_head".into(),
        ];
        for i in 0..config.num_layers {
            for part in ["attn_norm", "wq", "wk", "wv", "wo", "ffn_norm", "w_gate", "w_up", "w_down"] {
                known.push(format!("layer{i}.{part}"));
            }
        }
        if let Some(unknown) = tf.names().find(|n| !known.iter().any(|k| k == n)) {
            return Err(Error::Format(format!("unknown tensor name `{unknown}`")));
        }

        let vector = |name: &str| -> Result<Vec<f32>> { Ok(tf.require(name)?.data().to_vec()) };
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let m = |part: &str| -> Result<Matrix> { Ok(tf.require(&format!("layer{i}.{part}"))?.clone()) };
            layers.push(LayerWeights {
                attn_norm: vector(&format!("layer{i}.attn_norm"))?,
                wq: m("wq")?,
                wk: m("wk")?,
                wv: m("wv")?,
                wo: m("wo")?,
                ffn_norm: vector(&format!("layer{i}.ffn_norm"))?,
                w_gate: m("w_gate")?,
                w_up: m("w_up")?,
                w_down: m("w_down")?,
            });
        }
        let model = Model {
            config,
            embedding: tf.require("embedding")?.clone(),
            layers,
            final_norm: vector("final_norm")?,
            lm_head: tf.require("lm_head")?.clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    model.to_tensor_file().save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    Model::from_tensor_file(&TensorFile::load(path)?)
}
