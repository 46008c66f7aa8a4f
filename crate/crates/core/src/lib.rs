//! Beat-by-beat ECG rhythm classification.
//!
//! The library covers the full pipeline: synthetic record generation, R-peak
//! detection and beat segmentation, wavelet and morphology features,
//! denoising-autoencoder embeddings, recurrent sequence classifiers with
//! optional attention, and a stacked ensemble with a trained blender.

pub mod feature;
pub mod net;
pub mod persist;
pub mod pipeline;
pub mod segment;
pub mod signal;
pub mod wavelet;
