//! Low-rank transformation probing for the feed-forward block.
//!
//! Offline, hidden states entering each feed-forward block are collected
//! from calibration sequences. Intermediate channels are ranked by the mean
//! of their top-ρ saliency values, the strongest `D_low` channels are kept,
//! and each sliced projection is factorised to rank `r`. Online, the proxy's
//! output norm estimates how much each token would change, and is
//! multiplied by the attention score to choose which tokens run the real
//! block.

use std::collections::BTreeMap;
use std::path::Path;

use crate::attention::ScoreVector;
use crate::error::{Error, Result};
use crate::linalg::{self, matmul, rmsnorm_rows, svd_truncated, topk_indices, Matrix};
use crate::metrics::counter::{self, FlopCategory};
use crate::model::forward::{dense_prefill_observed, ffn_transform};
use crate::model::{LayerWeights, Model, ModelConfig, TensorFile};
use crate::par;

/// Default top-ρ fraction for channel importance.
pub const DEFAULT_RHO: f64 = 0.2;

/// Post-norm feed-forward inputs collected per layer (0-based index).
#[derive(Debug, Clone, Default)]
pub struct CalibrationSet {
    pub layers: BTreeMap<usize, Matrix>,
}

impl CalibrationSet {
    pub fn get(&self, layer: usize) -> Option<&Matrix> {
        self.layers.get(&layer)
    }
}

/// Runs each sequence through the dense model and keeps the feed-forward
/// inputs of the listed layers.
pub fn collect_calibration(
    model: &Model,
    sequences: &[Vec<u32>],
    layers: &[usize],
) -> Result<CalibrationSet> {
    if sequences.is_empty() {
        return Err(Error::Input("no calibration sequences".into()));
    }
    if let Some(s) = sequences.iter().position(Vec::is_empty) {
        return Err(Error::Input(format!("calibration sequence {s} is empty")));
    }
    if let Some(&l) = layers.iter().find(|&&l| l >= model.config.num_layers) {
        return Err(Error::Input(format!("calibration layer {l} out of range")));
    }
    let per_seq: Vec<Result<BTreeMap<usize, Matrix>>> = par::map_indexed(sequences.len(), |s| {
        let mut got = BTreeMap::new();
        dense_prefill_observed(model, &sequences[s], |layer, _, states| {
            if layers.contains(&layer) {
                got.insert(layer, states.ffn_input.clone());
            }
        })?;
        Ok(got)
    });
    let d = model.config.hidden_dim;
    let mut data: BTreeMap<usize, Vec<f32>> = layers.iter().map(|&l| (l, Vec::new())).collect();
    for seq in per_seq {
        for (layer, m) in seq? {
            data.get_mut(&layer).expect("listed layer").extend_from_slice(m.data());
        }
    }
    let layers = data
        .into_iter()
        .map(|(l, v)| {
            let rows = v.len() / d;
            Ok((l, Matrix::new(rows, d, v)?))
        })
        .collect::<Result<_>>()?;
    Ok(CalibrationSet { layers })
}

/// `|silu(x·W_gate) ⊙ x·W_up|` for every row of `g`.
pub fn activation_saliency(g: &Matrix, w_gate: &Matrix, w_up: &Matrix) -> Result<Matrix> {
    let mut z = matmul(g, w_gate)?;
    let up = matmul(g, w_up)?;
    for (a, &u) in z.data_mut().iter_mut().zip(up.data()) {
        *a = (linalg::silu_scalar(*a) * u).abs();
    }
    Ok(z)
}

/// Number of samples averaged for fraction `rho` of `n`: `⌈rho·n⌉`, at least 1.
pub fn top_rho_count(rho: f64, n: usize) -> usize {
    // the small offset keeps e.g. 0.1·30 from rounding up to 4
    let k = (rho * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n.max(1))
}

/// Per-channel mean of the top `⌈rho·|G|⌉` saliency values.
pub fn channel_importance(g: &Matrix, w_gate: &Matrix, w_up: &Matrix, rho: f64) -> Result<Vec<f32>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Input(format!("rho must lie in (0, 1], got {rho}")));
    }
    if g.rows() == 0 {
        return Err(Error::Input("calibration set is empty".into()));
    }
    let z = activation_saliency(g, w_gate, w_up)?.transpose();
    let k = top_rho_count(rho, g.rows());
    Ok(par::map_indexed(z.rows(), |j| {
        let mut col = z.row(j).to_vec();
        if k < col.len() {
            col.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        }
        let sum: f64 = col[..k].iter().map(|&v| v as f64).sum();
        (sum / k as f64) as f32
    }))
}

/// Proxy dimensions; validated against the model shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyDims {
    pub d_low: usize,
    pub rank: usize,
}

impl ProxyDims {
    pub fn validate(&self, hidden_dim: usize, ffn_dim: usize) -> Result<()> {
        if self.d_low == 0 || self.d_low > ffn_dim {
            return Err(Error::Budget(format!(
                "D_low {} must lie in 1..={ffn_dim}",
                self.d_low
            )));
        }
        let max_rank = hidden_dim.min(self.d_low);
        if self.rank == 0 || self.rank > max_rank {
            return Err(Error::Budget(format!(
                "rank {} must lie in 1..={max_rank}",
                self.rank
            )));
        }
        Ok(())
    }

    /// Proxy FLOPs per token: three factor pairs plus the gating product.
    pub fn flops_per_token(&self, hidden_dim: usize) -> u64 {
        let (d, r, dl) = (hidden_dim as u64, self.rank as u64, self.d_low as u64);
        2 * (3 * d * r + 3 * r * dl + dl)
    }
}

/// Factor pair `W' ≈ u · v` with singular values folded into `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankPair {
    /// `D × r`
    pub u: Matrix,
    /// `r × D_low`
    pub v: Matrix,
}

/// Low-rank proxy of one feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyLayer {
    /// Retained intermediate channels, ascending.
    pub channels: Vec<usize>,
    pub gate: LowRankPair,
    pub up: LowRankPair,
    pub down: LowRankPair,
}

impl ProxyLayer {
    pub fn dims(&self) -> ProxyDims {
        ProxyDims {
            d_low: self.channels.len(),
            rank: self.gate.u.cols(),
        }
    }
}

fn factor(w: &Matrix, channels: &[usize], rank: usize) -> Result<LowRankPair> {
    let f = svd_truncated(&w.gather_cols(channels), rank)?;
    Ok(LowRankPair {
        v: f.folded_v(),
        u: f.u,
    })
}

/// Keeps the top-`D_low` channels by importance and factorises each sliced
/// projection to rank `r`.
pub fn build_proxy(weights: &LayerWeights, importance: &[f32], dims: ProxyDims) -> Result<ProxyLayer> {
    let (d, ffn) = weights.w_gate.shape();
    dims.validate(d, ffn)?;
    if importance.len() != ffn {
        return Err(Error::Shape(format!(
            "importance has {} entries for {ffn} channels",
            importance.len()
        )));
    }
    let channels = topk_indices(importance, dims.d_low)?;
    Ok(ProxyLayer {
        gate: factor(&weights.w_gate, &channels, dims.rank)?,
        up: factor(&weights.w_up, &channels, dims.rank)?,
        down: factor(&weights.w_down, &channels, dims.rank)?,
        channels,
    })
}

/// `f(X) = (silu(X·U_g·V_g) ⊙ X·U_u·V_u) · V_dᵀ · U_dᵀ`.
pub fn proxy_forward(x: &Matrix, p: &ProxyLayer) -> Result<Matrix> {
    if x.cols() != p.gate.u.rows() {
        return Err(Error::Shape(format!(
            "proxy expects width {}, got {}",
            p.gate.u.rows(),
            x.cols()
        )));
    }
    let mut h = matmul(&matmul(x, &p.gate.u)?, &p.gate.v)?;
    let up = matmul(&matmul(x, &p.up.u)?, &p.up.v)?;
    for (g, &u) in h.data_mut().iter_mut().zip(up.data()) {
        *g = linalg::silu_scalar(*g) * u;
    }
    counter::record(2 * (x.rows() * p.channels.len()) as u64);
    let t = linalg::matmul_transposed(&h, &p.down.v)?;
    linalg::matmul_transposed(&t, &p.down.u)
}

/// Proxy transformation magnitudes and the attention-conditioned scores.
#[derive(Debug, Clone)]
pub struct FfnScores {
    /// `‖f(x_n)‖₂`
    pub transform: Vec<f32>,
    /// transform × attention score
    pub conditioned: ScoreVector,
}

pub fn ffn_scores(x_normed: &Matrix, proxy: &ProxyLayer, s_mha: &ScoreVector, positions: &[usize]) -> Result<FfnScores> {
    if positions != s_mha.positions.as_slice() || positions.len() != x_normed.rows() {
        return Err(Error::Ordering(
            "attention scores are not aligned with the hidden rows".into(),
        ));
    }
    let out = counter::with_category(FlopCategory::ProxyProbe, || proxy_forward(x_normed, proxy))?;
    let transform: Vec<f32> = (0..out.rows()).map(|i| linalg::l2_norm(out.row(i)) as f32).collect();
    let values = transform
        .iter()
        .zip(&s_mha.values)
        .map(|(&c, &s)| c * s)
        .collect();
    Ok(FfnScores {
        transform,
        conditioned: ScoreVector::new(positions.to_vec(), values)?,
    })
}

/// Feed-forward sub-block over the active rows; other rows are unchanged.
pub fn reduced_ffn(x: &Matrix, active: &[usize], weights: &LayerWeights, norm_eps: f32) -> Result<Matrix> {
    if active.is_empty() {
        return Err(Error::Budget("active set is empty".into()));
    }
    if active.windows(2).any(|w| w[0] >= w[1]) || active[active.len() - 1] >= x.rows() {
        return Err(Error::Ordering("active rows must be ascending and in range".into()));
    }
    let x_hat = x.gather_rows(active);
    let xn = rmsnorm_rows(&x_hat, &weights.ffn_norm, norm_eps)?;
    let updated = x_hat.add(&ffn_transform(&xn, weights)?)?;
    let mut y = x.clone();
    y.scatter_rows(active, &updated);
    Ok(y)
}

/// `‖F(G) − f(G)‖_F / ‖F(G)‖_F` on normalised inputs `g`.
pub fn proxy_relative_error(g: &Matrix, weights: &LayerWeights, proxy: &ProxyLayer) -> Result<f64> {
    let exact = ffn_transform(g, weights)?;
    let approx = proxy_forward(g, proxy)?;
    let denom = exact.frobenius_norm();
    let num = exact.frobenius_distance(&approx)?;
    Ok(if denom == 0.0 { num } else { num / denom })
}

/// Proxies for a set of layers (0-based).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProxySet {
    pub layers: BTreeMap<usize, ProxyLayer>,
}

impl ProxySet {
    pub fn get(&self, layer: usize) -> Option<&ProxyLayer> {
        self.layers.get(&layer)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut tf = TensorFile::new();
        for (l, p) in &self.layers {
            let ch: Vec<f32> = p.channels.iter().map(|&c| c as f32).collect();
            tf.push(format!("layer{l}.proxy.channels"), Matrix::row_vector(&ch));
            for (name, pair) in [("gate", &p.gate), ("up", &p.up), ("down", &p.down)] {
                tf.push(format!("layer{l}.proxy.{name}.U"), pair.u.clone());
                tf.push(format!("layer{l}.proxy.{name}.V"), pair.v.clone());
            }
        }
        tf
    }

    pub fn from_tensor_file(tf: &TensorFile) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for name in tf.names() {
            let parsed = name
                .strip_prefix("layer")
                .and_then(|rest| rest.split_once(".proxy."))
                .and_then(|(l, part)| Some((l.parse::<usize>().ok()?, part)));
            let Some((l, part)) = parsed else {
                return Err(Error::Format(format!("unknown tensor name `{name}`")));
            };
            if !["channels", "gate.U", "gate.V", "up.U", "up.V", "down.U", "down.V"].contains(&part) {
                return Err(Error::Format(format!("unknown tensor name `{name}`")));
            }
            if part != "channels" || layers.contains_key(&l) {
                continue;
            }
            let get = |p: &str| tf.require(&format!("layer{l}.proxy.{p}")).cloned();
            let channels = get("channels")?
                .data()
                .iter()
                .map(|&c| {
                    if c < 0.0 || c.fract() != 0.0 {
                        Err(Error::Format(format!("layer{l}: bad channel index {c}")))
                    } else {
                        Ok(c as usize)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if channels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("layer{l}: channels not ascending")));
            }
            let pair = |n: &str| -> Result<LowRankPair> {
                Ok(LowRankPair {
                    u: get(&format!("{n}.U"))?,
                    v: get(&format!("{n}.V"))?,
                })
            };
            let p = ProxyLayer {
                channels,
                gate: pair("gate")?,
                up: pair("up")?,
                down: pair("down")?,
            };
            let (d, r) = p.gate.u.shape();
            let dl = p.channels.len();
            for (n, pr) in [("gate", &p.gate), ("up", &p.up), ("down", &p.down)] {
                if pr.u.shape() != (d, r) || pr.v.shape() != (r, dl) {
                    return Err(Error::Format(format!("layer{l}.proxy.{n}: inconsistent factor shapes")));
                }
            }
            layers.insert(l, p);
        }
        Ok(Self { layers })
    }

    /// Checks that every proxy fits `config` and the listed layers are present.
    pub fn check_against(&self, config: &ModelConfig, required: &[usize]) -> Result<()> {
        for (&l, p) in &self.layers {
            if l >= config.num_layers {
                return Err(Error::Config(format!("proxy for layer {l} beyond model depth")));
            }
            if p.gate.u.rows() != config.hidden_dim {
                return Err(Error::Config(format!(
                    "proxy layer {l} width {} != hidden_dim {}",
                    p.gate.u.rows(),
                    config.hidden_dim
                )));
            }
            if p.channels.last().is_some_and(|&c| c >= config.ffn_dim) {
                return Err(Error::Config(format!("proxy layer {l} channel beyond ffn_dim")));
            }
        }
        if let Some(l) = required.iter().find(|l| !self.layers.contains_key(l)) {
            return Err(Error::Config(format!("no proxy for skipping layer {l}")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

/// Summary of one calibrated layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedLayer {
    pub layer: usize,
    pub samples: usize,
    pub d_low: usize,
    pub rank: usize,
    pub relative_error: f64,
}

/// Builds proxies for `layers` from calibration sequences.
pub fn calibrate(
    model: &Model,
    sequences: &[Vec<u32>],
    layers: &[usize],
    dims: ProxyDims,
    rho: f64,
) -> Result<(ProxySet, Vec<CalibratedLayer>)> {
    dims.validate(model.config.hidden_dim, model.config.ffn_dim)?;
    let calib = collect_calibration(model, sequences, layers)?;
    let built: Vec<Result<(usize, ProxyLayer, CalibratedLayer)>> =
        par::map_indexed(layers.len(), |i| {
            let l = layers[i];
            let g = calib.get(l).expect("collected");
            let w = &model.layers[l];
            let importance = channel_importance(g, &w.w_gate, &w.w_up, rho)?;
            let proxy = build_proxy(w, &importance, dims)?;
            let relative_error = proxy_relative_error(g, w, &proxy)?;
            let summary = CalibratedLayer {
                layer: l,
                samples: g.rows(),
                d_low: dims.d_low,
                rank: dims.rank,
                relative_error,
            };
            Ok((l, proxy, summary))
        });
    let mut set = ProxySet::default();
    let mut summary = Vec::with_capacity(layers.len());
    for b in built {
        let (l, p, s) = b?;
        set.layers.insert(l, p);
        summary.push(s);
    }
    Ok((set, summary))
}
