//! Truncated SVD by one-sided Jacobi rotations.
//!
//! The sweep order is fixed and all arithmetic is f64, so the factors are
//! reproducible bit for bit. Signs are normalised so that the entry of
//! largest magnitude in every left singular vector is non-negative.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAX_SWEEPS: usize = 100;
const ORTHO_TOL: f64 = 1e-15;

/// `w ≈ u · diag(s) · v` with `u: m×r`, `s` descending, `v: r×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vec<f32>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u · diag(s) · v`.
    pub fn reconstruct(&self) -> Matrix {
        let (m, r) = self.u.shape();
        let n = self.v.cols();
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let urow = self.u.row(i);
            let row = out.row_mut(i);
            for (j, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for k in 0..r {
                    acc += urow[k] as f64 * self.s[k] as f64 * self.v.get(k, j) as f64;
                }
                *o = acc as f32;
            }
        }
        out
    }

    /// `v` with each row scaled by its singular value.
    pub fn folded_v(&self) -> Matrix {
        let mut v = self.v.clone();
        for (k, &s) in self.s.iter().enumerate() {
            v.row_mut(k).iter_mut().for_each(|x| *x *= s);
        }
        v
    }
}

/// Column-major f64 decomposition of a tall (`m ≥ n`) matrix.
struct Thin {
    m: usize,
    n: usize,
    /// Left vectors, `n` columns of length `m`.
    u: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    /// Right vectors, `n` columns of length `n`.
    v: Vec<Vec<f64>>,
}

fn jacobi_tall(cols: Vec<Vec<f64>>, m: usize) -> Result<Thin> {
    let n = cols.len();
    let mut a = cols;
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = a[p].iter().zip(&a[q]).fold(
                    (0.0f64, 0.0f64, 0.0f64),
                    |(al, be, ga), (&x, &y)| (al + x * x, be + y * y, ga + x * y),
                );
                if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let sigma: Vec<f64> = a.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let tiny = smax * 1e-12 * m.max(n) as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sig_sorted = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for &i in &order {
        let s = sigma[i];
        if s > tiny && s > 0.0 {
            u_cols.push(a[i].iter().map(|x| x / s).collect());
        } else {
            deficient.push(u_cols.len());
            u_cols.push(vec![0.0; m]);
        }
        sig_sorted.push(s);
        v_cols.push(v[i].clone());
    }
    for k in deficient {
        u_cols[k] = complete_basis(&u_cols, k, m);
    }
    Ok(Thin {
        m,
        n,
        u: u_cols,
        sigma: sig_sorted,
        v: v_cols,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Unit vector orthogonal to every nonzero column other than `skip`.
fn complete_basis(cols: &[Vec<f64>], skip: usize, m: usize) -> Vec<f64> {
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let proj: f64 = c.iter().zip(&cand).map(|(a, b)| a * b).sum();
                cand.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cand.iter_mut().for_each(|x| *x /= norm);
            return cand;
        }
    }
    vec![0.0; m]
}

/// Rank-`r` truncated SVD of `w`.
pub fn svd_truncated(w: &Matrix, r: usize) -> Result<SvdFactors> {
    let (rows, cols) = w.shape();
    let k = rows.min(cols);
    if r == 0 {
        return Err(Error::Budget("SVD rank must be at least 1".into()));
    }
    if r > k {
        return Err(Error::Budget(format!(
            "rank {r} exceeds min({rows}, {cols})"
        )));
    }
    if !w.is_finite() {
        return Err(Error::Numeric("SVD input has non-finite entries".into()));
    }

    // Decompose whichever orientation is tall; for wide inputs the roles of
    // the left and right vectors swap.
    let transposed = rows < cols;
    let (m, n) = if transposed { (cols, rows) } else { (rows, cols) };
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            (0..m)
                .map(|i| {
                    if transposed {
                        w.get(j, i) as f64
                    } else {
                        w.get(i, j) as f64
                    }
                })
                .collect()
        })
        .collect();
    let thin = jacobi_tall(columns, m)?;
    debug_assert_eq!(thin.n, n);
    debug_assert_eq!(thin.m, m);

    // left: rows×k, right: k×cols in the original orientation
    let (mut left, mut right): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if transposed {
        (thin.v, thin.u)
    } else {
        (thin.u, thin.v)
    };
    left.truncate(r);
    right.truncate(r);

    for (l, rt) in left.iter_mut().zip(right.iter_mut()) {
        let lead = l
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if l[lead] < 0.0 {
            l.iter_mut().for_each(|x| *x = -*x);
            rt.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let mut u = Matrix::zeros(rows, r);
    for (k, col) in left.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            u.set(i, k, x as f32);
        }
    }
    let mut v = Matrix::zeros(r, cols);
    for (k, col) in right.iter().enumerate() {
        for (j, &x) in col.iter().enumerate() {
            v.set(k, j, x as f32);
        }
    }
    let s = thin.sigma[..r].iter().map(|&x| x as f32).collect();
    Ok(SvdFactors { u, s, v })
}
