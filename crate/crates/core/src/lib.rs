//! Segment-based classification under inherited-label noise.
//!
//! Audio clips are cut into overlapping fixed-length segments that inherit
//! the clip label. A segment classifier is trained with loss-based
//! clean/noisy partitioning (two-component Gaussian mixture over per-sample
//! cross-entropy), sharpened pseudo-labels for the noisy part, mixup, and a
//! dropout-consistency term. Segment probabilities are then summarised per
//! song into order-free statistics and classified by a linear max-margin
//! model.

pub mod aggregate;
pub mod audio;
pub mod cache;
pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod partition;
pub mod synth;
pub mod train;
