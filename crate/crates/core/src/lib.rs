//! Joint acoustic echo cancellation and dereverberation in the STFT domain.
//!
//! Each microphone and frequency bin runs an independent linear filter whose
//! regressor stacks recent playback frames with delayed microphone frames, so
//! one weight vector removes both the echo and the late reverberation. The
//! weights are tracked with a Kalman filter under a first-order Markov model;
//! RLS and cascaded (AEC then DR, DR then AEC) variants serve as baselines.

pub mod adaptive;
pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod stft;

pub use error::{Error, Result};
