#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spts_core::model::ModelConfig;
use spts_core::pipeline::{PruneRule, SkipSchedule};

pub fn small_config() -> ModelConfig {
    ModelConfig {
        num_layers: 6,
        hidden_dim: 32,
        num_heads: 4,
        num_kv_heads: 2,
        head_dim: 8,
        ffn_dim: 64,
        vocab_size: 97,
        ..ModelConfig::toy()
    }
}

/// A valid schedule for `num_layers` layers and prompts of about `n` tokens.
pub fn random_schedule(rng: &mut ChaCha8Rng, num_layers: usize, n: usize) -> SkipSchedule {
    let first = rng.random_range(1..=num_layers);
    let stages = rng.random_range(1..=(num_layers - first + 1).min(4));
    let mut ends: Vec<usize> = (first..=num_layers).collect();
    while ends.len() > stages {
        let i = rng.random_range(0..ends.len());
        ends.remove(i);
    }
    let mut budgets: Vec<usize> = (0..stages).map(|_| rng.random_range(1..=n + 2)).collect();
    budgets.sort_unstable_by(|a, b| b.cmp(a));
    let prune = if rng.random_bool(0.5) {
        PruneRule::Amounts((0..stages).map(|_| rng.random_range(0..=n / 3)).collect())
    } else {
        let mut sizes: Vec<usize> = (0..stages).map(|_| rng.random_range(1..=n)).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        PruneRule::Sizes(sizes)
    };
    SkipSchedule {
        first_skip_layer: Some(first),
        stage_ends: ends,
        budgets,
        prune,
        probe_query_len: rng.random_range(1..=3),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
