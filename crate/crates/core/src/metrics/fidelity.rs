//! Side-by-side comparison against the dense model and attention statistics.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use crate::attention::pap_scores;
use crate::error::{Error, Result};
use crate::linalg::{cosine_sim, rmsnorm_rows, Matrix};
use crate::model::forward::dense_prefill_observed;
use crate::model::Model;
use crate::pipeline::{prefill_with, FfnSelector, PrefillOptions, SkipSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFidelity {
    /// 1-based layer number.
    pub layer: usize,
    /// Tokens present after the layer in the skipping run.
    pub candidates: usize,
    /// Mean cosine between skipping-run and dense hidden states of the same tokens.
    pub spts_vs_baseline: f64,
    /// Dense-run mean cosine of hidden states before and after attention.
    pub mha_cos: f64,
    /// Dense-run mean cosine before and after the feed-forward block.
    pub ffn_cos: f64,
    /// Dense-run mean cosine of block input and output.
    pub block_cos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub layers: Vec<LayerFidelity>,
    /// Largest absolute difference of next-token logits.
    pub logit_max_abs: f64,
}

fn mean_row_cosine(a: &Matrix, b: &Matrix) -> Result<f64> {
    let mut sum = 0.0;
    for r in 0..a.rows() {
        sum += cosine_sim(a.row(r), b.row(r))?;
    }
    Ok(sum / a.rows() as f64)
}

pub fn fidelity_report(
    model: &Model,
    schedule: &SkipSchedule,
    prompt: &[u32],
    selector: FfnSelector<'_>,
) -> Result<FidelityReport> {
    let mut dense = Vec::with_capacity(model.config.num_layers);
    let mut observe_err = None;
    let (base_logits, _) = dense_prefill_observed(model, prompt, |_, input, st| {
        let cos = (|| {
            Ok::<_, Error>((
                mean_row_cosine(input, &st.after_mha)?,
                mean_row_cosine(&st.after_mha, &st.output)?,
                mean_row_cosine(input, &st.output)?,
            ))
        })();
        match cos {
            Ok(c) => dense.push((st.output.clone(), c)),
            Err(e) => observe_err = Some(e),
        }
    })?;
    if let Some(e) = observe_err {
        return Err(e);
    }
    let run = prefill_with(model, schedule, prompt, selector, PrefillOptions { record_hidden: true })?;

    let mut layers = Vec::with_capacity(dense.len());
    for (trace, (base_out, (mha_cos, ffn_cos, block_cos))) in run.layers.iter().zip(&dense) {
        let positions = trace.pruned_to.as_ref().unwrap_or(&trace.candidates);
        let hidden = trace.hidden_out.as_ref().expect("hidden recorded");
        let base = base_out.gather_rows(positions);
        layers.push(LayerFidelity {
            layer: trace.layer,
            candidates: positions.len(),
            spts_vs_baseline: mean_row_cosine(hidden, &base)?,
            mha_cos: *mha_cos,
            ffn_cos: *ffn_cos,
            block_cos: *block_cos,
        });
    }
    let logit_max_abs = run
        .logits
        .iter()
        .zip(&base_logits)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .fold(0.0, f64::max);
    Ok(FidelityReport {
        layers,
        logit_max_abs,
    })
}

/// Smallest `k` such that the `k` largest entries of `row` sum to at least `p`.
pub fn attention_coverage(row: &[f32], p: f64) -> Result<usize> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Input(format!("coverage fraction must lie in (0, 1), got {p}")));
    }
    let total: f64 = row.iter().map(|&v| v as f64).sum();
    if (total - 1.0).abs() > 1e-5 || row.iter().any(|&v| v < 0.0) {
        return Err(Error::Input(format!("attention row sums to {total}, not 1")));
    }
    let mut sorted: Vec<f64> = row.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        acc += v;
        if acc >= p {
            return Ok(k + 1);
        }
    }
    // rounding can leave the full sum a hair under p
    Ok(row.len())
}

/// `|a ∩ b| / |a ∪ b|`, 1 when both are empty.
pub fn selection_jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Per-layer attention statistics of the dense model.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStats {
    /// 1-based layer number.
    pub layer: usize,
    /// Tokens needed for each requested coverage fraction.
    pub coverage: Vec<usize>,
    /// Top-`m` tokens by last-token attention.
    pub top: Vec<usize>,
    /// Jaccard index of `top` with the previous layer's.
    pub jaccard_prev: Option<f64>,
}

/// Last-token head-averaged attention at each dense layer: coverage counts
/// and stability of the top-`m` set across consecutive layers.
pub fn attention_statistics(
    model: &Model,
    prompt: &[u32],
    fractions: &[f64],
    m: usize,
) -> Result<Vec<AttentionStats>> {
    let positions: Vec<usize> = (0..prompt.len()).collect();
    let mut inputs = Vec::with_capacity(model.config.num_layers);
    dense_prefill_observed(model, prompt, |_, input, _| inputs.push(input.clone()))?;
    let mut out: Vec<AttentionStats> = Vec::with_capacity(inputs.len());
    for (l, x) in inputs.iter().enumerate() {
        let w = &model.layers[l];
        let xn = rmsnorm_rows(x, &w.attn_norm, model.config.norm_eps)?;
        let probe = pap_scores(&model.config, w, &xn, &positions, 1)?;
        let coverage = fractions
            .iter()
            .map(|&p| attention_coverage(&probe.scores.values, p))
            .collect::<Result<Vec<_>>>()?;
        let top = crate::linalg::topk_indices(&probe.scores.values, m.min(prompt.len()))?;
        let jaccard_prev = out.last().map(|prev| selection_jaccard(&prev.top, &top));
        out.push(AttentionStats {
            layer: l + 1,
            coverage,
            top,
            jaccard_prev,
        });
    }
    Ok(out)
}

/// Wall-clock time of `f`. Informational only.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}
