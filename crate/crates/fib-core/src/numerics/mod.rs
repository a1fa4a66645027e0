//! Dense tensor algebra with reverse-mode differentiation.
//!
//! Everything is double precision and row-major. Graphs are built
//! define-by-run: each op returns a fresh [`Tensor`] that remembers its
//! parents and how to push gradients back to them. Calling
//! [`Tensor::backward`] on a scalar fills the `grad` slot of every
//! reachable tensor that requires gradients, accumulating (`+=`) where a
//! tensor is reached along several paths.
//!
//! The op set is intentionally small: what a batch-normalized LSTM
//! encoder, a softmax classifier and their training loop need, nothing
//! more. No broadcasting beyond bias-add and explicit row replication.

mod adam;
mod batchnorm;
mod checkpoint;
mod gradcheck;
mod ops;
mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use batchnorm::{batch_norm, BatchStats, BnMode, BnSiteStats};
pub use checkpoint::{read_container, write_container, Container, ContainerEntry};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{concat_cols, concat_rows, pick_rows, softmax_cross_entropy_mean};
pub use tensor::Tensor;
