//! Products, normalisation, and selection over [`Matrix`] and slices.
//!
//! Storage is `f32`; dot products and reductions accumulate in `f64` in a
//! fixed order, so results do not depend on how rows are split over threads.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::counter;
use crate::par;

/// `Σ a_i·b_i` accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn check_matmul(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn matmul_row(a_row: &[f32], b: &Matrix, out: &mut [f32], acc: &mut [f64]) {
    acc.iter_mut().for_each(|v| *v = 0.0);
    let n = b.cols();
    for (k, &a) in a_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let a = a as f64;
        let b_row = &b.data()[k * n..(k + 1) * n];
        for (s, &w) in acc.iter_mut().zip(b_row) {
            *s += a * w as f64;
        }
    }
    for (o, &s) in out.iter_mut().zip(acc.iter()) {
        *o = s as f32;
    }
}

/// `a · b`. Records `2·m·k·n` FLOPs on the calling thread's tally.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul(a, b)?;
    counter::record(2 * (a.rows() * a.cols() * b.cols()) as u64);
    let mut out = Matrix::zeros(a.rows(), b.cols());
    let n = b.cols();
    par::for_each_row(out.data_mut(), n, |i, row| {
        let mut acc = vec![0.0f64; n];
        matmul_row(a.row(i), b, row, &mut acc);
    });
    Ok(out)
}

/// Single-threaded [`matmul`]; bitwise identical output.
pub fn matmul_serial(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul(a, b)?;
    counter::record(2 * (a.rows() * a.cols() * b.cols()) as u64);
    let mut out = Matrix::zeros(a.rows(), b.cols());
    let n = b.cols();
    let mut acc = vec![0.0f64; n];
    for i in 0..a.rows() {
        matmul_row(a.row(i), b, out.row_mut(i), &mut acc);
    }
    Ok(out)
}

/// `a · bᵀ`, used for the down projection which is stored as `D × D_ff`.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "matmul {}x{} by transpose of {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    counter::record(2 * (a.rows() * a.cols() * b.rows()) as u64);
    let mut out = Matrix::zeros(a.rows(), b.rows());
    par::for_each_row(out.data_mut(), b.rows(), |i, row| {
        let a_row = a.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(a_row, b.row(j)) as f32;
        }
    });
    Ok(out)
}

/// Softmax of `scale · x` with max subtraction.
pub fn softmax_row(x: &[f32], scale: f32) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(Error::Shape("softmax of empty vector".into()));
    }
    Ok(softmax_f64(x, scale as f64).into_iter().map(|p| p as f32).collect())
}

/// Softmax in f64, shared by attention and probing.
pub(crate) fn softmax_f64(x: &[f32], scale: f64) -> Vec<f64> {
    let max = x
        .iter()
        .map(|&v| v as f64 * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v as f64 * scale - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Descending by score, then ascending by index.
pub(crate) fn rank_order(scores: &[f32], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` largest scores, ties to the lower index, returned ascending.
pub fn topk_indices(scores: &[f32], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Budget(format!(
            "top-{k} requested from {} scores",
            scores.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

pub fn silu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| silu_scalar(v)).collect()
}

pub(crate) fn silu_scalar(v: f32) -> f32 {
    let v = v as f64;
    (v / (1.0 + (-v).exp())) as f32
}

/// `x / √(mean(x²) + eps) · g`.
pub fn rmsnorm(x: &[f32], g: &[f32], eps: f32) -> Result<Vec<f32>> {
    if x.len() != g.len() {
        return Err(Error::Shape(format!(
            "rmsnorm of length {} with gain of length {}",
            x.len(),
            g.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    rmsnorm_into(x, g, eps, &mut out);
    Ok(out)
}

fn rmsnorm_into(x: &[f32], g: &[f32], eps: f32, out: &mut [f32]) {
    let ms = x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len().max(1) as f64;
    let inv = 1.0 / (ms + eps as f64).sqrt();
    for ((o, &v), &w) in out.iter_mut().zip(x).zip(g) {
        *o = (v as f64 * inv * w as f64) as f32;
    }
}

/// Row-wise RMSNorm of a whole matrix.
pub fn rmsnorm_rows(x: &Matrix, g: &[f32], eps: f32) -> Result<Matrix> {
    if x.cols() != g.len() {
        return Err(Error::Shape(format!(
            "rmsnorm of width {} with gain of length {}",
            x.cols(),
            g.len()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    par::for_each_row(out.data_mut(), x.cols(), |i, row| {
        rmsnorm_into(x.row(i), g, eps, row)
    });
    Ok(out)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_norm(x: &[f32]) -> f64 {
    dot(x, x).sqrt()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(x: &[f32]) -> Option<usize> {
    (0..x.len()).min_by(|&a, &b| rank_order(x, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let i = Matrix::identity(2);
        let b = Matrix::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap(), b);
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let c = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(matmul(&a, &c).unwrap().data(), &[11.0]);
        assert!(matches!(matmul(&a, &b.gather_rows(&[0])), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(4, 4, &mut rng);
        let b = random(4, 4, &mut rng);
        let got = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0f64;
                for k in 0..4 {
                    s += a.get(i, k) as f64 * b.get(k, j) as f64;
                }
                assert!((got.get(i, j) as f64 - s).abs() < 1e-6);
            }
        }
        assert_eq!(matmul_serial(&a, &b).unwrap(), got);
        let bt = b.transpose();
        let via_t = matmul_transposed(&a, &bt).unwrap();
        assert!(via_t.frobenius_distance(&got).unwrap() < 1e-6);
    }

    #[test]
    fn identity_product_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(5, 7, &mut rng);
        assert_eq!(matmul(&Matrix::identity(5), &w).unwrap(), w);
    }

    #[test]
    fn softmax_cases() {
        let u = softmax_row(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
        let x = [1f32.ln(), 2f32.ln(), 3f32.ln()];
        let p = softmax_row(&x, 1.0).unwrap();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
        let p = softmax_row(&[1000.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-7 && p[1] < 1e-7);
        assert!(matches!(softmax_row(&[], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn topk_cases() {
        assert_eq!(topk_indices(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(topk_indices(&[0.5, 0.5, 0.5], 2).unwrap(), vec![0, 1]);
        assert!(matches!(topk_indices(&[0.5], 2), Err(Error::Budget(_))));
        assert!(topk_indices(&[0.5], 0).unwrap().is_empty());
    }

    #[test]
    fn topk_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let v: Vec<f32> = (0..64).map(|_| rng.random()).collect();
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());
        let mut want = order[..7].to_vec();
        want.sort();
        assert_eq!(topk_indices(&v, 7).unwrap(), want);
    }

    #[test]
    fn elementwise_cases() {
        assert_eq!(silu(&[0.0]), vec![0.0]);
        let v = [0.3, -1.2, 2.0];
        assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(
            rmsnorm(&[2.0; 4], &[1.0; 4], 0.0).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
    }
}
