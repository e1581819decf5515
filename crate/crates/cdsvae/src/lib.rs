//! Sequential VAE that factors video-like sequences into a static content
//! code and a per-step motion trajectory, trained with contrastive and
//! minibatch mutual-information objectives, plus the synthetic data,
//! augmentations, and evaluation metrics needed to measure disentanglement.

pub mod autodiff;
pub mod error;
pub mod augment;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod synthseq;
pub mod train;

pub use error::{Error, Result};
