//! Per-thread FLOP tally.
//!
//! Kernels record their FLOPs on the calling thread before fanning out to
//! the rayon pool, so a session driven from one thread sees exactly its own
//! work. Read the tally from outside the pool.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopCategory {
    /// Sub-block computation (projections, attention, feed-forward).
    Block,
    /// Attention probe: key projection, probe queries, probe logits.
    AttentionProbe,
    /// Low-rank feed-forward proxy.
    ProxyProbe,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopTally {
    pub block: u64,
    pub attention_probe: u64,
    pub proxy_probe: u64,
}

impl FlopTally {
    pub fn total(&self) -> u64 {
        self.block + self.attention_probe + self.proxy_probe
    }

    pub fn since(&self, earlier: &FlopTally) -> FlopTally {
        FlopTally {
            block: self.block - earlier.block,
            attention_probe: self.attention_probe - earlier.attention_probe,
            proxy_probe: self.proxy_probe - earlier.proxy_probe,
        }
    }
}

thread_local! {
    static TALLY: Cell<FlopTally> = const { Cell::new(FlopTally { block: 0, attention_probe: 0, proxy_probe: 0 }) };
    static CATEGORY: Cell<FlopCategory> = const { Cell::new(FlopCategory::Block) };
}

pub fn record(flops: u64) {
    let cat = CATEGORY.with(|c| c.get());
    TALLY.with(|t| {
        let mut v = t.get();
        match cat {
            FlopCategory::Block => v.block += flops,
            FlopCategory::AttentionProbe => v.attention_probe += flops,
            FlopCategory::ProxyProbe => v.proxy_probe += flops,
        }
        t.set(v);
    });
}

pub fn snapshot() -> FlopTally {
    TALLY.with(|t| t.get())
}

/// Runs `f` with FLOPs attributed to `cat`.
pub fn with_category<T>(cat: FlopCategory, f: impl FnOnce() -> T) -> T {
    let prev = CATEGORY.with(|c| c.replace(cat));
    let out = f();
    CATEGORY.with(|c| c.set(prev));
    out
}

/// FLOPs recorded while running `f`.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, FlopTally) {
    let before = snapshot();
    let out = f();
    (out, snapshot().since(&before))
}
