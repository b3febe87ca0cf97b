//! Unsupervised cell instance segmentation with object-centric embeddings.
//!
//! A small valid-convolution U-Net is trained without labels to predict, for
//! every pixel, its offset relative to the center of the object it belongs
//! to. Instances are then recovered by clustering `pixel - offset` with
//! mean-shift inside a foreground mask obtained from the instability of the
//! embeddings under salt-and-pepper noise.
//!
//! Module map:
//! - [`tensor`]: dense tensors and the reverse-mode tape.
//! - [`net`]: mini U-Net, Adam, training loop, checkpoints.
//! - [`loss`]: pair sampling and the sigmoid offset loss.
//! - [`segment`]: inference, foreground detection, clustering, shrinkage.
//! - [`metrics`]: IoU matching, F1/precision/recall/accuracy, SEG.
//! - [`io`]: tensor container, PGM, normalization, rescaling, synthetic data.
//! - [`theory`]: Monte-Carlo check of the expected-offset argument.
//! - [`pipeline`]: run configuration and the commands behind the CLI.

pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod morph;
pub mod net;
pub mod pipeline;
pub mod segment;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use io::LabelMask;
pub use tensor::{Tape, Tensor, Var};
