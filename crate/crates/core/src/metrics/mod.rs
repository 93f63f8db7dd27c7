//! Cost accounting and diagnostics.

pub mod counter;
pub mod fidelity;
pub mod flops;

pub use counter::{FlopCategory, FlopTally};
pub use fidelity::{
    attention_coverage, attention_statistics, fidelity_report, selection_jaccard, timed,
    AttentionStats, FidelityReport, LayerFidelity,
};
pub use flops::{flops_report, in_thousands, proxy_projection_macs, FlopsReport, LayerFlops, PhaseFlops};
