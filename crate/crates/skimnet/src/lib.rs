//! Efficient action recognition experiments on synthetic untrimmed videos.
//!
//! The crate has two halves. The first distills an expensive clip-window
//! teacher into a cheap image+audio student so a single frame plus its audio
//! stands in for a whole clip. The second is a recurrent skimmer that
//! attends over the per-timestamp feature sequences of a long video,
//! soft-selects the useful moments, and classifies from a pooled summary —
//! trained end-to-end because the selection is a differentiable weighted
//! average rather than a hard index. A baseline suite and an exact
//! multiply-accumulate ledger quantify the accuracy/compute trade-off.

pub mod commands;
pub mod config;
pub mod distill;
pub mod gradsuite;
pub mod evalbench;
pub mod models;
pub mod numerics;
pub mod seeds;
pub mod skim;
pub mod synthdata;

pub use numerics::{NumericsError, Tensor};
