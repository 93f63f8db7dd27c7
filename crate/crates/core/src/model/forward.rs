//! Dense decoder forward pass.
//!
//! Pre-norm blocks with RMSNorm, rotary embeddings on queries and keys at
//! the tokens' original positions, and causal attention that reads keys and
//! values from the layer's cache. Because attention always goes through the
//! cache, the same code serves prefill, decode, and reduced computation.

use crate::error::{Error, Result};
use crate::kvcache::{KvCache, LayerCache};
use crate::linalg::{self, matmul, matmul_transposed, rmsnorm_rows, Matrix};
use crate::metrics::counter;
use crate::model::{LayerWeights, Model, ModelConfig};
use crate::par;

/// Rotates consecutive pairs of each head by `pos · θ^(−2i/d)`.
/// An odd trailing dimension is left unrotated.
pub(crate) fn apply_rope(row: &mut [f32], head_dim: usize, pos: usize, theta: f32) {
    let half = head_dim / 2;
    for head in row.chunks_mut(head_dim) {
        for i in 0..half {
            let freq = (theta as f64).powf(-((2 * i) as f64) / head_dim as f64);
            let (sin, cos) = (pos as f64 * freq).sin_cos();
            let a = head[2 * i] as f64;
            let b = head[2 * i + 1] as f64;
            head[2 * i] = (a * cos - b * sin) as f32;
            head[2 * i + 1] = (a * sin + b * cos) as f32;
        }
    }
}

/// `xn · w` followed by RoPE at `positions`.
pub(crate) fn project_rotary(
    xn: &Matrix,
    w: &Matrix,
    positions: &[usize],
    config: &ModelConfig,
) -> Result<Matrix> {
    let mut out = matmul(xn, w)?;
    let cols = out.cols();
    par::for_each_row(out.data_mut(), cols, |i, row| {
        apply_rope(row, config.head_dim, positions[i], config.rope_theta)
    });
    Ok(out)
}

/// Causal multi-head attention of `q` (rows at `q_positions`) over `cache`.
pub(crate) fn attend(
    q: &Matrix,
    q_positions: &[usize],
    cache: &LayerCache,
    config: &ModelConfig,
) -> Matrix {
    let d = config.head_dim;
    let group = config.group_size();
    let pairs: usize = q_positions.iter().map(|&p| cache.visible(p)).sum();
    counter::record((4 * d * config.num_heads * pairs) as u64);

    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), config.q_dim());
    par::for_each_row(out.data_mut(), config.q_dim(), |i, row| {
        let visible = cache.visible(q_positions[i]);
        if visible == 0 {
            return;
        }
        let q_row = q.row(i);
        let mut logits = vec![0.0f32; visible];
        let mut acc = vec![0.0f64; d];
        for h in 0..config.num_heads {
            let kvh = h / group;
            let qh = &q_row[h * d..(h + 1) * d];
            for (j, l) in logits.iter_mut().enumerate() {
                *l = linalg::dot(qh, &cache.key(j)[kvh * d..(kvh + 1) * d]) as f32;
            }
            let probs = linalg::softmax_f64(&logits, scale);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (j, &p) in probs.iter().enumerate() {
                let v = &cache.value(j)[kvh * d..(kvh + 1) * d];
                for (a, &x) in acc.iter_mut().zip(v) {
                    *a += p * x as f64;
                }
            }
            for (o, &a) in row[h * d..(h + 1) * d].iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    });
    out
}

/// `F_FFN(xn) = (silu(xn·W_gate) ⊙ xn·W_up) · W_downᵀ` on normalised rows.
pub fn ffn_transform(xn: &Matrix, w: &LayerWeights) -> Result<Matrix> {
    let mut h = matmul(xn, &w.w_gate)?;
    let up = matmul(xn, &w.w_up)?;
    for (g, &u) in h.data_mut().iter_mut().zip(up.data()) {
        *g = linalg::silu_scalar(*g) * u;
    }
    matmul_transposed(&h, &w.w_down)
}

pub(crate) fn check_positions(positions: &[usize], rows: usize) -> Result<()> {
    if positions.len() != rows {
        return Err(Error::Shape(format!(
            "{} positions for {rows} rows",
            positions.len()
        )));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Ordering("positions must be strictly increasing".into()));
    }
    Ok(())
}

/// `x + MHA(norm(x))` over all rows, caching every row's key and value.
pub(crate) fn mha_sublayer(
    model: &Model,
    layer: usize,
    x: &Matrix,
    cache: &mut KvCache,
    positions: &[usize],
) -> Result<Matrix> {
    let c = &model.config;
    let w = &model.layers[layer];
    let xn = rmsnorm_rows(x, &w.attn_norm, c.norm_eps)?;
    let k = project_rotary(&xn, &w.wk, positions, c)?;
    let v = matmul(&xn, &w.wv)?;
    let q = project_rotary(&xn, &w.wq, positions, c)?;
    cache.append(layer, &k, &v, positions)?;
    let o = attend(&q, positions, cache.layer(layer), c);
    x.add(&matmul(&o, &w.wo)?)
}

/// Intermediate states of one dense block.
#[derive(Debug, Clone)]
pub struct BlockStates {
    /// `Y = X + MHA(norm(X))`
    pub after_mha: Matrix,
    /// `norm(Y)`, the input the feed-forward sub-block sees.
    pub ffn_input: Matrix,
    /// `Z = Y + FFN(norm(Y))`
    pub output: Matrix,
}

pub fn full_block_states(
    model: &Model,
    layer: usize,
    x: &Matrix,
    cache: &mut KvCache,
    positions: &[usize],
) -> Result<BlockStates> {
    if layer >= model.layers.len() {
        return Err(Error::Input(format!("layer {layer} out of range")));
    }
    check_positions(positions, x.rows())?;
    let after_mha = mha_sublayer(model, layer, x, cache, positions)?;
    let w = &model.layers[layer];
    let ffn_input = rmsnorm_rows(&after_mha, &w.ffn_norm, model.config.norm_eps)?;
    let output = after_mha.add(&ffn_transform(&ffn_input, w)?)?;
    Ok(BlockStates {
        after_mha,
        ffn_input,
        output,
    })
}

/// One dense decoder block over rows at `positions` (0-based layer index).
pub fn full_block_forward(
    model: &Model,
    layer: usize,
    x: &Matrix,
    cache: &mut KvCache,
    positions: &[usize],
) -> Result<Matrix> {
    Ok(full_block_states(model, layer, x, cache, positions)?.output)
}

pub fn embed(model: &Model, tokens: &[u32]) -> Result<Matrix> {
    let vocab = model.config.vocab_size;
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::Input(format!("token id {t} outside vocabulary of {vocab}")));
    }
    let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    Ok(model.embedding.gather_rows(&idx))
}

/// Next-token logits from one hidden row.
pub fn final_logits(model: &Model, hidden: &[f32]) -> Result<Vec<f32>> {
    let xn = linalg::rmsnorm(hidden, &model.final_norm, model.config.norm_eps)?;
    let logits = matmul(&Matrix::row_vector(&xn), &model.lm_head)?.into_data();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(logits)
}

/// Dense prefill. `observe(layer, input, states)` sees every block.
pub fn dense_prefill_observed(
    model: &Model,
    tokens: &[u32],
    mut observe: impl FnMut(usize, &Matrix, &BlockStates),
) -> Result<(Vec<f32>, KvCache)> {
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let mut cache = KvCache::for_config(&model.config);
    let mut x = embed(model, tokens)?;
    for layer in 0..model.config.num_layers {
        let states = full_block_states(model, layer, &x, &mut cache, &positions)?;
        observe(layer, &x, &states);
        x = states.output;
    }
    let logits = final_logits(model, x.row(x.rows() - 1))?;
    Ok((logits, cache))
}

/// Dense prefill: logits for the token after `tokens` and a full cache.
pub fn dense_prefill(model: &Model, tokens: &[u32]) -> Result<(Vec<f32>, KvCache)> {
    dense_prefill_observed(model, tokens, |_, _, _| {})
}
