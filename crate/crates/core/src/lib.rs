//! Music emotion recognition with harmonics-structured convolution filters.
//!
//! The pipeline runs raw audio through an STFT and a 256-band mel
//! spectrogram, masks the mel grid with one harmonic "blinder" per pitch
//! class, and classifies the clip into one of four valence-arousal quadrants
//! with a small CNN. Grad-CAM heatmaps explain the predictions per pitch
//! class, and predicted quadrant distributions drive emotion-matched ad
//! insertion through the Jensen-Shannon distance.
//!
//! ```text
//! audio_io -> spectro -> harmonics -> model (nn) -> explain
//!                                       |
//!                       dataset --------+-------> adinsert
//! ```

pub mod audio_io;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod fft;
pub mod grid;
pub mod adinsert;
pub mod harmonics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod quadrant;
pub mod spectro;

pub use error::{Error, Result};
