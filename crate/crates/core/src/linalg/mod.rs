//! Dense linear algebra and selection primitives.

mod matrix;
mod ops;
mod svd;

pub use matrix::Matrix;
pub use ops::{
    argmax, cosine_sim, dot, l2_norm, matmul, matmul_serial, matmul_transposed, rmsnorm,
    rmsnorm_rows, silu, softmax_row, topk_indices,
};
pub(crate) use ops::{rank_order, silu_scalar, softmax_f64};
pub use svd::{svd_truncated, SvdFactors};
