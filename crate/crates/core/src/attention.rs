//! Partial attention probing.
//!
//! Before a skipping layer's attention block, the keys of every candidate
//! token and the query of the last token(s) are projected. The head-averaged
//! softmax of the probe queries against all keys scores each token's
//! contribution to the last position. The top-scoring tokens form the active
//! set: only they get queries, values, an attention update, and a cache
//! entry. Keys are reused from the probe.

use crate::error::{Error, Result};
use crate::kvcache::KvCache;
use crate::linalg::{self, matmul, rank_order, rmsnorm_rows, Matrix};
use crate::metrics::counter::{self, FlopCategory};
use crate::model::forward::{attend, mha_sublayer, project_rotary};
use crate::model::{LayerWeights, Model, ModelConfig};
use crate::par;

/// Per-token scores aligned to original positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub positions: Vec<usize>,
    pub values: Vec<f32>,
}

impl ScoreVector {
    pub fn new(positions: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if positions.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} positions for {} scores",
                positions.len(),
                values.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Ordering("score positions must be ascending".into()));
        }
        Ok(Self { positions, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Probe output: scores plus the rotary keys of every candidate row.
#[derive(Debug, Clone)]
pub struct AttentionProbe {
    pub scores: ScoreVector,
    pub keys: Matrix,
}

/// Head-averaged causal attention of the last `probe_query_len` rows over
/// all rows of `x_normed`.
pub fn pap_scores(
    config: &ModelConfig,
    weights: &LayerWeights,
    x_normed: &Matrix,
    positions: &[usize],
    probe_query_len: usize,
) -> Result<AttentionProbe> {
    let n = x_normed.rows();
    if n == 0 {
        return Err(Error::Budget("probe over zero tokens".into()));
    }
    if probe_query_len == 0 || probe_query_len > n {
        return Err(Error::Budget(format!(
            "probe query length {probe_query_len} with {n} tokens"
        )));
    }
    crate::model::forward::check_positions(positions, n)?;

    counter::with_category(FlopCategory::AttentionProbe, || {
        let keys = project_rotary(x_normed, &weights.wk, positions, config)?;
        let probe_rows: Vec<usize> = (n - probe_query_len..n).collect();
        let probe_pos: Vec<usize> = probe_rows.iter().map(|&i| positions[i]).collect();
        let q = project_rotary(&x_normed.gather_rows(&probe_rows), &weights.wq, &probe_pos, config)?;

        let d = config.head_dim;
        let h = config.num_heads;
        let group = config.group_size();
        let pairs: usize = probe_rows.iter().map(|&i| i + 1).sum();
        counter::record((2 * d * h * pairs) as u64);

        let scale = 1.0 / (d as f64).sqrt();
        let per_head: Vec<Vec<f64>> = par::map_indexed(probe_query_len * h, |job| {
            let (r, head) = (job / h, job % h);
            let visible = probe_rows[r] + 1;
            let kvh = head / group;
            let qh = &q.row(r)[head * d..(head + 1) * d];
            let logits: Vec<f32> = (0..visible)
                .map(|j| linalg::dot(qh, &keys.row(j)[kvh * d..(kvh + 1) * d]) as f32)
                .collect();
            linalg::softmax_f64(&logits, scale)
        });
        let mut acc = vec![0.0f64; n];
        for probs in &per_head {
            for (a, p) in acc.iter_mut().zip(probs) {
                *a += p;
            }
        }
        let denom = (h * probe_query_len) as f64;
        let values = acc.into_iter().map(|a| (a / denom) as f32).collect();
        Ok(AttentionProbe {
            scores: ScoreVector::new(positions.to_vec(), values)?,
            keys,
        })
    })
}

/// Top-`budget` rows by score with `forced` rows always included.
///
/// The effective budget is `min(N, budget)`, raised to `|forced|` if needed.
/// Returned row indices are ascending.
pub fn select_active(scores: &[f32], budget: usize, forced: &[usize]) -> Result<Vec<usize>> {
    let n = scores.len();
    if let Some(&f) = forced.iter().find(|&&f| f >= n) {
        return Err(Error::Input(format!("forced index {f} outside {n} scores")));
    }
    let mut chosen: Vec<usize> = forced.to_vec();
    chosen.sort_unstable();
    chosen.dedup();
    let m = budget.min(n).max(chosen.len());
    let mut rest: Vec<usize> = (0..n).filter(|i| chosen.binary_search(i).is_err()).collect();
    let extra = m - chosen.len();
    if extra > 0 && extra < rest.len() {
        rest.select_nth_unstable_by(extra - 1, |&a, &b| rank_order(scores, a, b));
    }
    rest.truncate(extra);
    chosen.extend(rest);
    chosen.sort_unstable();
    Ok(chosen)
}

fn check_active(active: &[usize], n: usize) -> Result<()> {
    if active.is_empty() {
        return Err(Error::Budget("active set is empty".into()));
    }
    if active.windows(2).any(|w| w[0] >= w[1]) || active[active.len() - 1] >= n {
        return Err(Error::Ordering(format!(
            "active rows must be ascending and below {n}"
        )));
    }
    Ok(())
}

/// Attention sub-block over the active rows only.
///
/// Queries and values are projected for active rows, keys are taken from
/// `keys` (the probe's projection of all rows), and only active rows are
/// cached. Inactive rows of `x` pass through unchanged.
pub fn reduced_mha(
    model: &Model,
    layer: usize,
    x: &Matrix,
    active: &[usize],
    keys: &Matrix,
    positions: &[usize],
    cache: &mut KvCache,
) -> Result<Matrix> {
    let c = &model.config;
    let w = &model.layers[layer];
    check_active(active, x.rows())?;
    if keys.rows() != x.rows() || positions.len() != x.rows() {
        return Err(Error::Shape("keys, positions and hidden rows disagree".into()));
    }
    let act_pos: Vec<usize> = active.iter().map(|&i| positions[i]).collect();
    let x_hat = x.gather_rows(active);
    let xn = rmsnorm_rows(&x_hat, &w.attn_norm, c.norm_eps)?;
    let q = project_rotary(&xn, &w.wq, &act_pos, c)?;
    let v = matmul(&xn, &w.wv)?;
    let k = keys.gather_rows(active);
    cache.append(layer, &k, &v, &act_pos)?;
    let o = attend(&q, &act_pos, cache.layer(layer), c);
    let updated = x_hat.add(&matmul(&o, &w.wo)?)?;
    let mut y = x.clone();
    y.scatter_rows(active, &updated);
    Ok(y)
}

/// Largest sequence length accepted by the exhaustive subset search.
pub const MAX_EXHAUSTIVE_TOKENS: usize = 12;

/// `‖Ŷ_N − Y_N‖₂` for the last row when only `active` rows take part in
/// the attention block. An active set without the last row leaves it as is.
pub fn mha_last_token_error(
    model: &Model,
    layer: usize,
    x: &Matrix,
    positions: &[usize],
    active: &[usize],
) -> Result<f64> {
    let n = x.rows();
    let kv_dim = model.config.kv_dim();
    let mut full_cache = KvCache::new(model.config.num_layers, kv_dim);
    let y = mha_sublayer(model, layer, x, &mut full_cache, positions)?;
    let last = n - 1;
    let y_hat_last: Vec<f32> = if active.contains(&last) {
        let w = &model.layers[layer];
        let xn = rmsnorm_rows(x, &w.attn_norm, model.config.norm_eps)?;
        let keys = project_rotary(&xn, &w.wk, positions, &model.config)?;
        let mut cache = KvCache::new(model.config.num_layers, kv_dim);
        reduced_mha(model, layer, x, active, &keys, positions, &mut cache)?
            .row(last)
            .to_vec()
    } else {
        x.row(last).to_vec()
    };
    Ok(y_hat_last
        .iter()
        .zip(y.row(last))
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Exhaustive minimiser of [`mha_last_token_error`] over all `m`-subsets.
/// Ties go to the lexicographically first subset.
pub fn best_mha_subset(
    model: &Model,
    layer: usize,
    x: &Matrix,
    positions: &[usize],
    m: usize,
) -> Result<(Vec<usize>, f64)> {
    let n = x.rows();
    if n > MAX_EXHAUSTIVE_TOKENS {
        return Err(Error::Budget(format!(
            "exhaustive search limited to {MAX_EXHAUSTIVE_TOKENS} tokens, got {n}"
        )));
    }
    if m == 0 || m > n {
        return Err(Error::Budget(format!("subset size {m} of {n}")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in combinations(n, m) {
        let err = mha_last_token_error(model, layer, x, positions, &subset)?;
        if best.as_ref().is_none_or(|(_, e)| err < *e) {
            best = Some((subset, err));
        }
    }
    Ok(best.expect("at least one subset"))
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] != i + n - k) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}
