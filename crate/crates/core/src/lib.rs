//! Evidential meta-learning with uncertainty-driven task selection.
//!
//! The crate is built from a small reverse-mode autodiff engine
//! ([`autodiff`]), a subjective-logic belief layer ([`belief`]), an
//! evidential MLP ([`model`]), an episodic task sampler ([`episode`]) and the
//! meta-training loops ([`meta`]).

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod belief;
pub mod episode;
pub mod meta;
pub mod model;
pub mod seed;
