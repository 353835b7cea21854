//! Omni-supervised learning with distilled auxiliary data.
//!
//! The pipeline this crate implements:
//!
//! 1. train a primitive classifier on a small labeled anchor set ([`model`]);
//! 2. embed an unlabeled pool with it and pseudo-label the samples whose
//!    penultimate-layer features are closest, by cosine distance and with a
//!    margin, to one anchor class centroid ([`selection`]);
//! 3. compress the selected samples into one synthetic image per class plus
//!    a learned step size, by differentiating through a gradient step taken
//!    from random initialisations ([`distill`]);
//! 4. train a fresh learner on anchor plus distilled images and evaluate
//!    ([`eval`]).
//!
//! Everything here is pure computation on `alloc` collections. File formats,
//! timing and the command line live in the `omnidistill` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod selection;
pub mod tensor;

pub use error::{DataError, DistillError, EvalError, GraphError, ModelError, SelectionError, ShapeError};
pub use tensor::{Real, Tensor};
