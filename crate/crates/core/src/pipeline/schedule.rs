use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// 1K tokens.
pub const K: usize = 1024;

/// How the candidate set shrinks at each stage boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PruneRule {
    /// Remove this many tokens at each boundary (never below one).
    Amounts(Vec<usize>),
    /// Keep at most this many tokens after each boundary.
    Sizes(Vec<usize>),
}

impl PruneRule {
    fn len(&self) -> usize {
        match self {
            PruneRule::Amounts(v) | PruneRule::Sizes(v) => v.len(),
        }
    }

    /// Candidate count after boundary `stage` given `current` candidates.
    pub fn next_size(&self, stage: usize, current: usize) -> usize {
        match self {
            PruneRule::Amounts(v) => current.saturating_sub(v[stage]).max(1),
            PruneRule::Sizes(v) => v[stage].min(current).max(1),
        }
    }
}

/// Where skipping starts, how layers group into stages, and the per-stage
/// budgets. Layer numbers are 1-based; layers after the last boundary keep
/// the last stage's budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipSchedule {
    /// First skipping layer; `None` or a value past the last layer disables skipping.
    pub first_skip_layer: Option<usize>,
    pub stage_ends: Vec<usize>,
    pub budgets: Vec<usize>,
    pub prune: PruneRule,
    /// Probe queries per skipping layer; capped at the candidate count.
    pub probe_query_len: usize,
}

/// Per-layer expansion of a schedule for a given prompt length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPlan {
    /// 1-based layer number.
    pub layer: usize,
    pub skip: bool,
    pub stage: Option<usize>,
    /// Candidate tokens entering the layer.
    pub candidates: usize,
    pub budget: Option<usize>,
    /// Candidate count after this layer's boundary prune, if it is one.
    pub prune_to: Option<usize>,
}

impl LayerPlan {
    /// Tokens that run the sub-blocks (and are cached) at this layer.
    pub fn active(&self) -> usize {
        match self.budget {
            Some(b) if self.skip => self.candidates.min(b),
            _ => self.candidates,
        }
    }

    pub fn cached_tokens(&self) -> usize {
        self.active()
    }
}

impl SkipSchedule {
    pub fn disabled() -> Self {
        Self {
            first_skip_layer: None,
            stage_ends: Vec::new(),
            budgets: Vec::new(),
            prune: PruneRule::Amounts(Vec::new()),
            probe_query_len: 1,
        }
    }

    /// Skipping from layer 1 with one stage and an unbounded budget:
    /// every token stays active, so output matches the dense model.
    pub fn full_budget(num_layers: usize) -> Self {
        Self {
            first_skip_layer: Some(1),
            stage_ends: vec![num_layers],
            budgets: vec![usize::MAX],
            prune: PruneRule::Amounts(vec![0]),
            probe_query_len: 1,
        }
    }

    /// LLaMA-3.1-8B configuration (32 layers).
    pub fn llama_3_1_8b() -> Self {
        Self {
            first_skip_layer: Some(10),
            stage_ends: vec![13, 18, 23, 28],
            budgets: vec![9 * K, 7 * K, 4 * K, 2 * K],
            prune: PruneRule::Amounts(vec![K; 4]),
            probe_query_len: 1,
        }
    }

    /// Qwen-2.5-7B configuration (28 layers).
    pub fn qwen_2_5_7b() -> Self {
        Self {
            first_skip_layer: Some(9),
            stage_ends: vec![12, 16, 20, 24],
            budgets: vec![13 * K, 10 * K, 7 * K, 4 * K],
            prune: PruneRule::Amounts(vec![2 * K; 4]),
            probe_query_len: 1,
        }
    }

    /// openPangu-Embedded-1B configuration (26 layers).
    pub fn openpangu_1b() -> Self {
        Self {
            first_skip_layer: Some(11),
            stage_ends: vec![13, 16, 19, 22],
            budgets: vec![13 * K, 10 * K, 7 * K, 4 * K],
            prune: PruneRule::Amounts(vec![2 * K; 4]),
            probe_query_len: 1,
        }
    }

    pub fn is_enabled(&self, num_layers: usize) -> bool {
        self.first_skip_layer.is_some_and(|l| l >= 1 && l <= num_layers)
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.probe_query_len == 0 {
            return Err(Error::Schedule("probe_query_len must be at least 1".into()));
        }
        if self.first_skip_layer == Some(0) {
            return Err(Error::Schedule("layers are numbered from 1".into()));
        }
        if !self.is_enabled(num_layers) {
            return Ok(());
        }
        let first = self.first_skip_layer.unwrap();
        let stages = self.stage_ends.len();
        if stages == 0 {
            return Err(Error::Schedule("skipping enabled but no stages given".into()));
        }
        if self.budgets.len() != stages || self.prune.len() != stages {
            return Err(Error::Schedule(format!(
                "{stages} stage ends, {} budgets, {} prune entries",
                self.budgets.len(),
                self.prune.len()
            )));
        }
        if self.stage_ends.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schedule("stage ends must be strictly increasing".into()));
        }
        if first > self.stage_ends[0] {
            return Err(Error::Schedule(format!(
                "first skipping layer {first} is after the first stage end {}",
                self.stage_ends[0]
            )));
        }
        if self.stage_ends[stages - 1] > num_layers {
            return Err(Error::Schedule(format!(
                "stage end {} beyond {num_layers} layers",
                self.stage_ends[stages - 1]
            )));
        }
        if self.budgets.contains(&0) {
            return Err(Error::Schedule("budgets must be positive".into()));
        }
        if self.budgets.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Schedule("budgets must be non-increasing".into()));
        }
        Ok(())
    }

    /// Stage index of a skipping layer; the tail maps to the last stage.
    pub fn stage_of(&self, layer: usize) -> Option<usize> {
        if self.stage_ends.is_empty() {
            return None;
        }
        Some(
            self.stage_ends
                .iter()
                .position(|&e| layer <= e)
                .unwrap_or(self.stage_ends.len() - 1),
        )
    }

    /// Per-layer candidate counts, budgets, and prunes for an `n`-token prompt.
    pub fn expand(&self, num_layers: usize, n: usize) -> Result<Vec<LayerPlan>> {
        self.validate(num_layers)?;
        let enabled = self.is_enabled(num_layers);
        let first = self.first_skip_layer.unwrap_or(usize::MAX);
        let mut cur = n;
        let mut plans = Vec::with_capacity(num_layers);
        for layer in 1..=num_layers {
            let skip = enabled && layer >= first;
            let stage = if skip { self.stage_of(layer) } else { None };
            let boundary = if skip {
                self.stage_ends.iter().position(|&e| e == layer)
            } else {
                None
            };
            let prune_to = boundary.map(|s| self.prune.next_size(s, cur));
            plans.push(LayerPlan {
                layer,
                skip,
                stage,
                candidates: cur,
                budget: stage.map(|s| self.budgets[s]),
                prune_to,
            });
            if let Some(next) = prune_to {
                cur = next;
            }
        }
        Ok(plans)
    }

    /// Parses `key = value` lines; `#` starts a comment. Counts may carry a
    /// `K` suffix (×1024).
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = SkipSchedule::disabled();
        let mut prune_amounts = None;
        let mut prune_sizes = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Schedule(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "first_skip_layer" => {
                    s.first_skip_layer = match value {
                        "none" | "off" => None,
                        v => Some(parse_count(v)?),
                    }
                }
                "stage_ends" => s.stage_ends = parse_list(value)?,
                "budgets" => s.budgets = parse_list(value)?,
                "prune" => prune_amounts = Some(parse_list(value)?),
                "candidates" => prune_sizes = Some(parse_list(value)?),
                "probe_query_len" => s.probe_query_len = parse_count(value)?,
                other => {
                    return Err(Error::Schedule(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        s.prune = match (prune_amounts, prune_sizes) {
            (Some(_), Some(_)) => {
                return Err(Error::Schedule(
                    "give either `prune` or `candidates`, not both".into(),
                ))
            }
            (Some(a), None) => PruneRule::Amounts(a),
            (None, Some(c)) => PruneRule::Sizes(c),
            (None, None) => PruneRule::Amounts(vec![0; s.stage_ends.len()]),
        };
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        match self.first_skip_layer {
            Some(l) => writeln!(out, "first_skip_layer = {l}").unwrap(),
            None => writeln!(out, "first_skip_layer = none").unwrap(),
        }
        writeln!(out, "stage_ends = {}", join(&self.stage_ends)).unwrap();
        writeln!(out, "budgets = {}", join(&self.budgets)).unwrap();
        match &self.prune {
            PruneRule::Amounts(a) => writeln!(out, "prune = {}", join(a)).unwrap(),
            PruneRule::Sizes(c) => writeln!(out, "candidates = {}", join(c)).unwrap(),
        }
        writeln!(out, "probe_query_len = {}", self.probe_query_len).unwrap();
        out
    }
}

fn parse_count(v: &str) -> Result<usize> {
    let v = v.trim();
    let (digits, mult) = match v.strip_suffix(['K', 'k']) {
        Some(d) => (d, K),
        None => (v, 1),
    };
    digits
        .trim()
        .parse::<usize>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .ok_or_else(|| Error::Schedule(format!("`{v}` is not a count")))
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(parse_count).collect()
}
