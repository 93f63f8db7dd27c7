//! Prefill with token skipping and delayed pruning, plus dense decoding.
//!
//! Layers before the first skipping layer run densely. From there on each
//! layer probes attention scores, runs the attention block on the top
//! tokens, scores the feed-forward block by proxy transform × attention
//! score, and runs it on the top tokens. At every stage boundary the
//! candidate sequence itself is pruned by the boundary layer's attention
//! scores. The last prompt token is kept in every set.

mod schedule;

pub use schedule::{LayerPlan, PruneRule, SkipSchedule, K};

use crate::attention::{pap_scores, reduced_mha, select_active, ScoreVector};
use crate::error::{Error, Result};
use crate::ffn::{ffn_scores, reduced_ffn, ProxySet};
use crate::kvcache::KvCache;
use crate::linalg::{argmax, rmsnorm_rows, Matrix};
use crate::metrics::counter::{self, FlopTally};
use crate::model::forward::{dense_prefill, embed, final_logits, full_block_forward, full_block_states};
use crate::model::Model;

/// How tokens are ranked for the feed-forward block at skipping layers.
#[derive(Debug, Clone, Copy)]
pub enum FfnSelector<'a> {
    /// Proxy transform norm × attention score.
    Proxy(&'a ProxySet),
    /// Attention score alone.
    AttentionOnly,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PrefillOptions {
    /// Keep each layer's output hidden states in the trace.
    pub record_hidden: bool,
}

/// Hidden states over the current candidate tokens.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub hidden: Matrix,
    /// Original positions of the hidden rows, ascending.
    pub candidate_positions: Vec<usize>,
    /// Attention scores from the most recent skipping layer.
    pub last_scores: Option<ScoreVector>,
}

impl PipelineState {
    pub fn new(hidden: Matrix, candidate_positions: Vec<usize>) -> Result<Self> {
        if hidden.rows() != candidate_positions.len() {
            return Err(Error::Shape("hidden rows and positions disagree".into()));
        }
        Ok(Self {
            hidden,
            candidate_positions,
            last_scores: None,
        })
    }

    /// Keeps the top `n_next` candidates by the latest attention scores
    /// (last token always kept) and compacts the hidden rows. Returns the
    /// kept row indices. Cache entries of earlier layers are untouched.
    pub fn stage_prune(&mut self, n_next: usize) -> Result<Vec<usize>> {
        if n_next == 0 {
            return Err(Error::Budget("cannot prune to zero tokens".into()));
        }
        let scores = self
            .last_scores
            .as_ref()
            .ok_or_else(|| Error::Schedule("pruning before any attention scores exist".into()))?;
        if scores.positions != self.candidate_positions {
            return Err(Error::Ordering("scores do not match the candidate set".into()));
        }
        let n = self.candidate_positions.len();
        let kept = select_active(&scores.values, n_next, &[n - 1])?;
        if kept.len() < n {
            self.hidden = self.hidden.gather_rows(&kept);
            self.candidate_positions = kept.iter().map(|&i| self.candidate_positions[i]).collect();
            let values = kept.iter().map(|&i| scores.values[i]).collect();
            self.last_scores = Some(ScoreVector::new(self.candidate_positions.clone(), values)?);
        }
        Ok(kept)
    }
}

/// What happened at one layer, with token sets as original positions.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// 1-based layer number.
    pub layer: usize,
    pub skipped: bool,
    pub candidates: Vec<usize>,
    pub mha_active: Vec<usize>,
    pub ffn_active: Vec<usize>,
    pub attention_scores: Option<ScoreVector>,
    pub ffn_scores: Option<ScoreVector>,
    /// Candidates surviving this layer's boundary prune.
    pub pruned_to: Option<Vec<usize>>,
    pub hidden_out: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct Prefill {
    pub logits: Vec<f32>,
    pub cache: KvCache,
    pub layers: Vec<LayerTrace>,
    pub flops: FlopTally,
}

pub fn prefill(
    model: &Model,
    schedule: &SkipSchedule,
    tokens: &[u32],
    selector: FfnSelector<'_>,
) -> Result<Prefill> {
    prefill_with(model, schedule, tokens, selector, PrefillOptions::default())
}

pub fn prefill_with(
    model: &Model,
    schedule: &SkipSchedule,
    tokens: &[u32],
    selector: FfnSelector<'_>,
    options: PrefillOptions,
) -> Result<Prefill> {
    if tokens.is_empty() {
        return Err(Error::Input("empty prompt".into()));
    }
    let cfg = &model.config;
    let plans = schedule.expand(cfg.num_layers, tokens.len())?;
    if let FfnSelector::Proxy(set) = selector {
        let needed: Vec<usize> = plans.iter().filter(|p| p.skip).map(|p| p.layer - 1).collect();
        set.check_against(cfg, &needed)?;
    }

    let (result, flops) = counter::measure(|| -> Result<(Vec<f32>, KvCache, Vec<LayerTrace>)> {
        let mut cache = KvCache::for_config(cfg);
        let mut state = PipelineState::new(embed(model, tokens)?, (0..tokens.len()).collect())?;
        let mut traces = Vec::with_capacity(cfg.num_layers);
        for plan in &plans {
            let li = plan.layer - 1;
            let mut trace = skip_or_dense_layer(model, li, plan, schedule, selector, &mut state, &mut cache)?;
            if let Some(next) = plan.prune_to {
                let kept = state.stage_prune(next)?;
                if kept.len() < trace.candidates.len() {
                    trace.pruned_to = Some(state.candidate_positions.clone());
                }
            }
            if options.record_hidden {
                trace.hidden_out = Some(state.hidden.clone());
            }
            traces.push(trace);
        }
        let last = state.hidden.rows() - 1;
        let logits = final_logits(model, state.hidden.row(last))?;
        Ok((logits, cache, traces))
    });
    let (logits, cache, layers) = result?;
    Ok(Prefill {
        logits,
        cache,
        layers,
        flops,
    })
}

fn skip_or_dense_layer(
    model: &Model,
    li: usize,
    plan: &LayerPlan,
    schedule: &SkipSchedule,
    selector: FfnSelector<'_>,
    state: &mut PipelineState,
    cache: &mut KvCache,
) -> Result<LayerTrace> {
    let cfg = &model.config;
    let w = &model.layers[li];
    let positions = state.candidate_positions.clone();
    if plan.skip && plan.candidates != positions.len() {
        return Err(Error::Schedule(format!(
            "layer {}: {} candidates, plan expects {}",
            plan.layer,
            positions.len(),
            plan.candidates
        )));
    }

    if !plan.skip {
        let states = full_block_states(model, li, &state.hidden, cache, &positions)?;
        state.hidden = states.output;
        return Ok(LayerTrace {
            layer: plan.layer,
            skipped: false,
            mha_active: positions.clone(),
            ffn_active: positions.clone(),
            candidates: positions,
            attention_scores: None,
            ffn_scores: None,
            pruned_to: None,
            hidden_out: None,
        });
    }

    let budget = plan.budget.expect("skipping layers have a budget");
    let last = positions.len() - 1;
    let xn = rmsnorm_rows(&state.hidden, &w.attn_norm, cfg.norm_eps)?;
    let q_len = schedule.probe_query_len.min(positions.len());
    let probe = pap_scores(cfg, w, &xn, &positions, q_len)?;
    let mha_active = select_active(&probe.scores.values, budget, &[last])?;
    let y = reduced_mha(model, li, &state.hidden, &mha_active, &probe.keys, &positions, cache)?;

    let ffn_ranking = match selector {
        FfnSelector::Proxy(set) => {
            let proxy = set
                .get(li)
                .ok_or_else(|| Error::Config(format!("no proxy for layer index {li}")))?;
            let yn = rmsnorm_rows(&y, &w.ffn_norm, cfg.norm_eps)?;
            ffn_scores(&yn, proxy, &probe.scores, &positions)?.conditioned
        }
        FfnSelector::AttentionOnly => probe.scores.clone(),
    };
    let ffn_active = select_active(&ffn_ranking.values, budget, &[last])?;
    state.hidden = reduced_ffn(&y, &ffn_active, w, cfg.norm_eps)?;
    state.last_scores = Some(probe.scores.clone());

    let to_pos = |rows: &[usize]| rows.iter().map(|&i| positions[i]).collect::<Vec<_>>();
    Ok(LayerTrace {
        layer: plan.layer,
        skipped: true,
        mha_active: to_pos(&mha_active),
        ffn_active: to_pos(&ffn_active),
        candidates: positions.clone(),
        attention_scores: Some(probe.scores),
        ffn_scores: Some(ffn_ranking),
        pruned_to: None,
        hidden_out: None,
    })
}

/// Dense single-token step against a (possibly compressed) cache.
pub fn decode_step(model: &Model, cache: &mut KvCache, token: u32, position: usize) -> Result<Vec<f32>> {
    for l in 0..cache.num_layers() {
        if let Some(max) = cache.layer(l).max_position() {
            if position <= max {
                return Err(Error::Ordering(format!(
                    "decode position {position} not after cached position {max} at layer {l}"
                )));
            }
        }
    }
    let mut x = embed(model, &[token])?;
    for layer in 0..model.config.num_layers {
        x = full_block_forward(model, layer, &x, cache, &[position])?;
    }
    final_logits(model, x.row(0))
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub prefill: Prefill,
    /// Cache after the last decode step.
    pub cache: KvCache,
}

fn greedy(logits: &[f32]) -> u32 {
    argmax(logits).expect("non-empty vocabulary") as u32
}

/// Greedy decoding of `n` tokens after a skipping prefill.
pub fn generate(
    model: &Model,
    schedule: &SkipSchedule,
    prompt: &[u32],
    n: usize,
    selector: FfnSelector<'_>,
) -> Result<Generation> {
    if n == 0 {
        return Err(Error::Input("must generate at least one token".into()));
    }
    let pre = prefill(model, schedule, prompt, selector)?;
    let mut cache = pre.cache.clone();
    let mut tokens = vec![greedy(&pre.logits)];
    for step in 1..n {
        let logits = decode_step(model, &mut cache, tokens[step - 1], prompt.len() + step - 1)?;
        tokens.push(greedy(&logits));
    }
    Ok(Generation {
        tokens,
        prefill: pre,
        cache,
    })
}

/// Greedy decoding with the dense engine.
pub fn generate_dense(model: &Model, prompt: &[u32], n: usize) -> Result<Vec<u32>> {
    if n == 0 {
        return Err(Error::Input("must generate at least one token".into()));
    }
    let (logits, mut cache) = dense_prefill(model, prompt)?;
    let mut tokens = vec![greedy(&logits)];
    for step in 1..n {
        let logits = decode_step(model, &mut cache, tokens[step - 1], prompt.len() + step - 1)?;
        tokens.push(greedy(&logits));
    }
    Ok(tokens)
}

/// First index where two token sequences differ.
pub fn divergence(a: &[u32], b: &[u32]) -> Option<usize> {
    let common = a.iter().zip(b).position(|(x, y)| x != y);
    match common {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}
