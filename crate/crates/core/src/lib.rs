//! Attention-based multiple-instance learning for whole-slide images.
//!
//! The crate covers the full path from a slide pyramid to an interpretable bag
//! classifier: tissue masking and tile extraction ([`wsi`]), bag datasets and
//! splits ([`bags`]), a small reverse-mode autodiff core ([`diff`]), the AMIL,
//! AdMIL, and hybrid models with their training protocol ([`mil`]), ROC
//! evaluation ([`metrics`]), and heatmap rendering ([`heatmap`]). The
//! [`cli`] module backs the `wsi-mil` binary.

pub mod bags;
pub mod cli;
pub mod diff;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod mil;
pub mod wsi;

pub use error::{Error, Result};
