//! Cross-view box trajectory transformation.
//!
//! Given a box path designed in the frozen first-frame view of a video, predict
//! where the box lands in every frame of the moving-camera video. The crate
//! contains the synthetic paired-view oracle, DCT track tokens, a small
//! reverse-mode autodiff engine, the flow-matching diffusion transformer,
//! geometric baselines, metrics and the dataset pipeline.

pub mod geometry;
pub mod signal;
pub mod tensor;
pub mod baselines;
pub mod dit;
pub mod flowmatch;
pub mod metrics;
pub mod gradcheck;
pub mod datapipe;
