//! Per-layer key/value store tagged with original sequence positions.
//!
//! Layers may hold different numbers of entries: under token skipping only
//! the tokens that were active at a layer are cached there. Memory is
//! accounted analytically ([`predict_bytes`]) and from a live cache
//! ([`measured_bytes`]); the two agree exactly.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelConfig;
use crate::pipeline::SkipSchedule;

/// Keys and values of one layer, rows ordered by position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerCache {
    width: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    positions: Vec<usize>,
}

impl LayerCache {
    fn new(width: usize) -> Self {
        Self {
            width,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.width..(i + 1) * self.width]
    }

    pub fn value(&self, i: usize) -> &[f32] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn max_position(&self) -> Option<usize> {
        self.positions.last().copied()
    }

    /// Number of leading entries a query at `pos` may attend to.
    pub fn visible(&self, pos: usize) -> usize {
        self.positions.partition_point(|&p| p <= pos)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    layers: Vec<LayerCache>,
}

impl KvCache {
    pub fn new(num_layers: usize, kv_dim: usize) -> Self {
        Self {
            layers: (0..num_layers).map(|_| LayerCache::new(kv_dim)).collect(),
        }
    }

    pub fn for_config(config: &ModelConfig) -> Self {
        Self::new(config.num_layers, config.kv_dim())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, layer: usize) -> &LayerCache {
        &self.layers[layer]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.layers.iter().map(LayerCache::len).collect()
    }

    /// Appends rows; every new position must exceed all cached ones at this layer.
    pub fn append(
        &mut self,
        layer: usize,
        keys: &Matrix,
        values: &Matrix,
        positions: &[usize],
    ) -> Result<()> {
        let lc = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::Input(format!("cache has no layer {layer}")))?;
        if keys.shape() != values.shape()
            || keys.rows() != positions.len()
            || keys.cols() != lc.width
        {
            return Err(Error::Shape(format!(
                "cache append of keys {:?}, values {:?}, {} positions into width {}",
                keys.shape(),
                values.shape(),
                positions.len(),
                lc.width
            )));
        }
        let mut prev = lc.max_position();
        for &p in positions {
            if prev.is_some_and(|q| p <= q) {
                return Err(Error::Ordering(format!(
                    "layer {layer}: position {p} does not follow {}",
                    prev.unwrap()
                )));
            }
            prev = Some(p);
        }
        lc.keys.extend_from_slice(keys.data());
        lc.values.extend_from_slice(values.data());
        lc.positions.extend_from_slice(positions);
        Ok(())
    }

    /// Checks per-layer length agreement and strictly increasing positions.
    pub fn check_invariants(&self) -> Result<()> {
        for (l, lc) in self.layers.iter().enumerate() {
            if lc.keys.len() != lc.len() * lc.width || lc.values.len() != lc.keys.len() {
                return Err(Error::Shape(format!("layer {l}: key/value/position lengths disagree")));
            }
            if lc.positions.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Ordering(format!("layer {l}: positions not strictly increasing")));
            }
        }
        Ok(())
    }
}

/// Which head count the memory accounting multiplies by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AccountingHeads {
    /// All query heads, as if every head had its own K/V.
    #[default]
    Query,
    /// Actual key/value heads (grouped-query attention).
    KeyValue,
}

fn bytes_per_entry(config: &ModelConfig, heads: AccountingHeads) -> u64 {
    let h = match heads {
        AccountingHeads::Query => config.num_heads,
        AccountingHeads::KeyValue => config.num_kv_heads,
    };
    (2 * h * config.head_dim * config.dtype_bytes) as u64
}

pub fn measured_bytes(cache: &KvCache, config: &ModelConfig, heads: AccountingHeads) -> u64 {
    let entries: u64 = cache.lengths().iter().map(|&l| l as u64).sum();
    entries * bytes_per_entry(config, heads)
}

/// Cache size after a prefill of `n` tokens, from the schedule alone.
pub fn predict_bytes(
    schedule: &SkipSchedule,
    config: &ModelConfig,
    n: usize,
    heads: AccountingHeads,
) -> Result<u64> {
    let entries: u64 = schedule
        .expand(config.num_layers, n)?
        .iter()
        .map(|p| p.cached_tokens() as u64)
        .sum();
    Ok(entries * bytes_per_entry(config, heads))
}

/// Cache size with every token cached at every layer.
pub fn full_cache_bytes(config: &ModelConfig, n: usize, heads: AccountingHeads) -> u64 {
    (config.num_layers * n) as u64 * bytes_per_entry(config, heads)
}

pub const GIB: f64 = (1u64 << 30) as f64;
