//! Audio feature extraction and inversion: log-mel spectrograms, frame
//! energy, probabilistic YIN pitch tracking and Griffin-Lim phase recovery.

mod error;
pub mod griffin_lim;
pub mod mel;
pub mod pitch;
pub mod stft;

pub use error::{Result, SignalError};
pub use griffin_lim::GriffinLim;
pub use mel::{frame_energy, mean_pool, video_rate_energy, MelConfig, MelExtractor, MelSpectrogram};
pub use pitch::{standardise_pitch, PitchStats, PitchTrack, Pyin, PyinConfig, StandardisedPitch};
pub use stft::Stft;
