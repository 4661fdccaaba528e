//! Network phenotyping for CPS traffic.
//!
//! The pipeline turns per-device throughput traces into quantized
//! communication images, extracts 20 directional GLCM texture features per
//! image, slices the feature time series into sliding-window snippets and
//! summarizes each snippet as a vector of pairwise Pearson coefficients (a
//! communication pattern). Patterns are reduced with PCA and recognized with
//! k-NN; a monitored run is flagged anomalous when its recognition accuracy
//! drops below a per-application threshold.
//!
//! Modules follow the data flow:
//!
//! * [`sim`] synthetic traces for the five traffic classes, plus anomaly injection
//! * [`imaging`] quantization of one time sample into a [`imaging::CommunicationImage`]
//! * [`texture`] GLCMs and Energy/Entropy/Contrast/IDM/DM features
//! * [`patterns`] snippets and Pearson communication patterns
//! * [`learn`] PCA, training and recognition
//! * [`detect`] threshold-based anomaly verdicts and reports
//! * [`io`] CSV/JSON file formats
//! * [`experiment`] seeded window-sweep and anomaly-study harness
//!
//! With the default `parallel` feature, batch work (runs, images, queries) is
//! spread over the rayon pool. Without it every loop runs sequentially; the
//! results are bit-identical either way.

pub mod detect;
pub mod error;
pub mod experiment;
pub mod imaging;
pub mod io;
pub mod learn;
mod par;
pub mod patterns;
pub mod seed;
pub mod sim;
pub mod texture;

pub use error::{Error, Result};
pub use sim::AppKind;

/// Number of texture features per communication image (4 directions x 5 features).
pub const FEATURE_COUNT: usize = 20;
