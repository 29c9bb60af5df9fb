//! Audio-visual corpus handling: clip I/O, feature cache, augmentation,
//! training windows and speech-unit targets.

pub mod archive;
pub mod augment;
pub mod cache;
pub mod clip;
pub mod error;
pub mod example;
pub mod manifest;
pub mod preprocess;
pub mod synthetic;
pub mod units;

pub use archive::{sha256_hex, write_atomic, Archive};
pub use augment::{augment, AugmentConfig, AugmentPlan, MaskRect};
pub use cache::{Cache, CachedClip, CorpusStats, CACHE_VERSION};
pub use clip::{VideoClip, FRAME_RATE, FRAME_SIZE, SAMPLE_RATE};
pub use error::{DataError, Result};
pub use example::{sample_window, window_at, Example, VarianceTargets, Window, WindowMode};
pub use manifest::{Manifest, ManifestRecord, Split};
pub use preprocess::{
    fit_units, load_clip, preprocess, quantise_corpus, PreprocessConfig, PreprocessReport, QuantisedCorpus,
};
pub use synthetic::{generate, generate_clip, SyntheticClip, SyntheticConfig};
pub use units::{
    fit_codebook, kmeans, length_match, match_index, Codebook, KMeansConfig, KMeansFit, SslBackend, SslFeatures,
    SslSpec,
};
