//! Minimal dense-network stack: tensors, a reverse-mode tape, MLPs,
//! SGD, and bit-exact checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint};
pub use graph::{Graph, NodeId};
pub use mlp::{Activation, BoundParams, Head, Mlp, MlpSpec};
pub use optim::{Sgd, SgdConfig};
pub use tensor::Tensor;

use graph::log_softmax_row;

/// Mean cross-entropy of a logits batch against label indices, without a
/// tape. Evaluation-side counterpart of [`Graph::ce_rows`].
pub fn loss_ce(logits: &Tensor, labels: &[usize]) -> f64 {
    assert_eq!(logits.rows, labels.len(), "one label per row");
    let mut buf = vec![0.0; logits.cols];
    let mut total = 0.0;
    for r in 0..logits.rows {
        log_softmax_row(logits.row(r), 1.0, &mut buf);
        total -= buf[labels[r]];
    }
    total / logits.rows as f64
}

/// Per-row cross-entropy, tape-free.
pub fn loss_ce_rows(logits: &Tensor, labels: &[usize]) -> Vec<f64> {
    assert_eq!(logits.rows, labels.len(), "one label per row");
    let mut buf = vec![0.0; logits.cols];
    (0..logits.rows)
        .map(|r| {
            log_softmax_row(logits.row(r), 1.0, &mut buf);
            -buf[labels[r]]
        })
        .collect()
}

/// Mean `KL(softmax(p) || softmax(q))` over rows of two logits batches,
/// without a tape. Evaluation-side counterpart of [`Graph::kl_rows`].
pub fn loss_kl(p_logits: &Tensor, q_logits: &Tensor) -> f64 {
    assert!(p_logits.same_shape(q_logits), "KL operands must match");
    let mut lp = vec![0.0; p_logits.cols];
    let mut lq = vec![0.0; p_logits.cols];
    let mut total = 0.0;
    for r in 0..p_logits.rows {
        log_softmax_row(p_logits.row(r), 1.0, &mut lp);
        log_softmax_row(q_logits.row(r), 1.0, &mut lq);
        total += lp
            .iter()
            .zip(&lq)
            .map(|(&a, &b)| a.exp() * (a - b))
            .sum::<f64>();
    }
    total / p_logits.rows as f64
}
