//! Detection of a variable number of point landmarks in images via a
//! single-foreground-heatmap U-Net.
//!
//! The pipeline stages are:
//!
//! 1. **Tensor engine** ([`tensor`]) – dense f64 tensors on a reverse-mode
//!    autodiff tape, with exactly the ops a padded U-Net needs.
//! 2. **Network** ([`unet`]) – configurable U-Net: 3×3 convs + batch norm +
//!    ELU, per-block dropout, skip concatenations, 1×1 sigmoid head.
//! 3. **Label codec** ([`heatmap`]) – landmark sets encoded as peak-normalized
//!    Gaussian heatmaps; decoded back by thresholding + connected-component
//!    centroids.
//! 4. **Evaluation** ([`eval`]) – radius-gated unique matching, PPV/TPR, and
//!    threshold-sweep curves with per-fold spread.
//! 5. **Data** ([`dataio`], [`augment`], [`synth`]) – labelme-style annotation
//!    ingestion, stereo top/bottom splitting, surgery-level CV folds,
//!    keypoint-consistent augmentation, and a deterministic synthetic
//!    phantom generator.
//! 6. **Training** ([`train`]) – MSE − soft-Dice loss, Adam,
//!    reduce-on-plateau learning rate, checkpointing, CV orchestration.

pub mod augment;
pub mod dataio;
pub mod eval;
pub mod heatmap;
mod seeds;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod unet;

#[cfg(doctest)]
mod book;

pub use heatmap::{Heatmap, LandmarkSet, Point};
pub use tensor::{Graph, Tensor, TensorId};
