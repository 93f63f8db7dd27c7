//! Closed-form FLOP counts.
//!
//! GEMMs count `2·m·k·n`. Attention counts `4·d·H` per visible query/key
//! pair (logits plus weighted values). Counts mirror what the engine's
//! kernels record, so a toy run's tally equals the formula exactly.

use crate::error::Result;
use crate::ffn::ProxyDims;
use crate::model::ModelConfig;
use crate::pipeline::{LayerPlan, SkipSchedule};

/// FLOPs of one phase, with the skipping run split by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseFlops {
    pub baseline: u64,
    /// Sub-block computation of the skipping run (includes the output head).
    pub block: u64,
    pub pap: u64,
    pub ltp: u64,
}

impl PhaseFlops {
    pub fn spts(&self) -> u64 {
        self.block + self.pap + self.ltp
    }

    /// `baseline / spts`; 1.0 when both are zero.
    pub fn reduction_ratio(&self) -> f64 {
        if self.spts() == 0 {
            return 1.0;
        }
        self.baseline as f64 / self.spts() as f64
    }
}

/// Prefill FLOPs of one layer (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerFlops {
    pub layer: usize,
    pub baseline: u64,
    pub block: u64,
    pub pap: u64,
    pub ltp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub prefill: PhaseFlops,
    pub decode: PhaseFlops,
    pub layers: Vec<LayerFlops>,
}

fn tri(n: u64) -> u64 {
    n * (n + 1) / 2
}

/// Q/K/V/O projections for `n` tokens.
fn projections(c: &ModelConfig, n: u64) -> u64 {
    let (d, q, kv) = (c.hidden_dim as u64, c.q_dim() as u64, c.kv_dim() as u64);
    2 * n * d * (q + 2 * kv) + 2 * n * q * d
}

fn attention_pairs(c: &ModelConfig, pairs: u64) -> u64 {
    4 * (c.head_dim * c.num_heads) as u64 * pairs
}

fn ffn(c: &ModelConfig, n: u64) -> u64 {
    6 * n * (c.hidden_dim * c.ffn_dim) as u64
}

fn head(c: &ModelConfig) -> u64 {
    2 * (c.hidden_dim * c.vocab_size) as u64
}

/// Dense block over `n` tokens with an initially empty layer cache.
fn dense_block(c: &ModelConfig, n: u64) -> u64 {
    projections(c, n) + attention_pairs(c, tri(n)) + ffn(c, n)
}

fn skip_layer(c: &ModelConfig, p: &LayerPlan, q_len: usize, proxy: Option<ProxyDims>) -> LayerFlops {
    let (d, q, kv) = (c.hidden_dim as u64, c.q_dim() as u64, c.kv_dim() as u64);
    let n = p.candidates as u64;
    let a = p.active() as u64;
    let ql = (q_len as u64).min(n);
    let probe_pairs = ql * n - ql * (ql - 1) / 2;
    let pap = 2 * n * d * kv + 2 * ql * d * q + 2 * (c.head_dim * c.num_heads) as u64 * probe_pairs;
    let block = 2 * a * d * (q + kv) + 2 * a * q * d + attention_pairs(c, tri(a)) + ffn(c, a);
    let ltp = proxy.map_or(0, |dims| dims.flops_per_token(c.hidden_dim) * n);
    LayerFlops {
        layer: p.layer,
        baseline: 0,
        block,
        pap,
        ltp,
    }
}

/// Prefill FLOPs for an `n`-token prompt and decode FLOPs for `gen_len`
/// generated tokens (the first comes from prefill, so `gen_len − 1` decode
/// steps). `proxy` is `None` when feed-forward selection uses attention
/// scores alone.
pub fn flops_report(
    schedule: &SkipSchedule,
    config: &ModelConfig,
    proxy: Option<ProxyDims>,
    n: usize,
    gen_len: usize,
) -> Result<FlopsReport> {
    let plans = schedule.expand(config.num_layers, n)?;
    let full = dense_block(config, n as u64);
    let mut layers = Vec::with_capacity(plans.len());
    let mut prefill = PhaseFlops::default();
    for p in &plans {
        let mut lf = if p.skip {
            skip_layer(config, p, schedule.probe_query_len, proxy)
        } else {
            LayerFlops {
                layer: p.layer,
                baseline: 0,
                block: full,
                pap: 0,
                ltp: 0,
            }
        };
        lf.baseline = full;
        prefill.baseline += lf.baseline;
        prefill.block += lf.block;
        prefill.pap += lf.pap;
        prefill.ltp += lf.ltp;
        layers.push(lf);
    }
    prefill.baseline += head(config);
    prefill.block += head(config);

    let mut decode = PhaseFlops::default();
    let per_token = projections(config, 1) + ffn(config, 1);
    for s in 0..gen_len.saturating_sub(1) as u64 {
        for p in &plans {
            decode.baseline += per_token + attention_pairs(config, n as u64 + s + 1);
            decode.block += per_token + attention_pairs(config, p.cached_tokens() as u64 + s + 1);
        }
        decode.baseline += head(config);
        decode.block += head(config);
    }
    Ok(FlopsReport {
        prefill,
        decode,
        layers,
    })
}

/// Per-token multiply-accumulates of one proxy projection: `D·r + r·D_low`
/// when factorised, `D·D_low` when not. `None` leaves a dimension whole.
pub fn proxy_projection_macs(hidden_dim: usize, ffn_dim: usize, d_low: Option<usize>, rank: Option<usize>) -> u64 {
    let (d, cols) = (hidden_dim as u64, d_low.unwrap_or(ffn_dim) as u64);
    match rank {
        Some(r) => d * r as u64 + r as u64 * cols,
        None => d * cols,
    }
}

/// Rounds to the nearest thousand, as tables print "K" counts.
pub fn in_thousands(x: u64) -> u64 {
    (x + 500) / 1000
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::K;

    #[test]
    fn disabled_schedule_has_unit_ratio() {
        let c = ModelConfig::llama_3_1_8b();
        let r = flops_report(&SkipSchedule::disabled(), &c, None, 8 * K, 16).unwrap();
        assert_eq!(r.prefill.reduction_ratio(), 1.0);
        assert_eq!(r.decode.reduction_ratio(), 1.0);
        assert_eq!(r.prefill.pap + r.prefill.ltp, 0);
    }

    #[test]
    fn proxy_macs_rows() {
        let f = |dl, r| in_thousands(proxy_projection_macs(4096, 14336, dl, r));
        assert_eq!(f(Some(512), Some(128)), 590);
        assert_eq!(f(Some(512), Some(256)), 1180);
        assert_eq!(f(Some(512), None), 2097);
        assert_eq!(f(Some(256), Some(192)), 836);
        assert_eq!(f(Some(1536), Some(192)), 1081);
    }

    #[test]
    fn ratio_grows_with_length() {
        let c = ModelConfig::llama_3_1_8b();
        let s = SkipSchedule::llama_3_1_8b();
        let dims = Some(ProxyDims { d_low: 512, rank: 192 });
        let ratios: Vec<f64> = [8, 16, 24, 32]
            .iter()
            .map(|&n| flops_report(&s, &c, dims, n * K, 16).unwrap().prefill.reduction_ratio())
            .collect();
        assert!(ratios[0] > 1.0);
        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    }
}
