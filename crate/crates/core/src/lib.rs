//! Spectral analysis of softmax attention logits.
//!
//! Two spectra are compared per attention head:
//!
//! * the *generated* spectrum, the singular values of the row-centered logit
//!   field `Ẽ = Z − Z̄ 1ᵀ` with `Z = Q Kᵀ / √d_h` for one input text;
//! * the *learned* spectrum, the singular values of `M = W_Qᵀ W_K`, computed
//!   from the weight slices without forming the `d_model × d_model` product.
//!
//! The crate also measures how much softmax attention changes when `Ẽ` is
//! truncated to rank `r`, and checks those changes against the delocalization
//! bound and the softmax ℓ1/ℓ∞ Lipschitz inequality.
//!
//! Everything here is pure computation over `alloc`; file formats, the
//! analysis pipeline and the CLI live in the `attnspec` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod logit_field;
pub mod matrix;
pub mod softmax_bounds;
pub mod spectrum_stats;
pub mod weight_spectrum;

pub use error::{Error, Result};
pub use logit_field::{compute_logits, row_center, svd_field, LogitField, Spectrum, RANK_EPSILON};
pub use matrix::Matrix;
pub use weight_spectrum::{full_interaction_svd, interaction_singular_values, HeadId, WeightPair};
