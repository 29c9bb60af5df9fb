//! End-to-end workflows on top of the network: training runs with
//! checkpoints, synthesis with a vocoder, evaluation metrics and the
//! speech-unit configuration sweep.

pub mod asr;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod sweep;
pub mod synth;
pub mod train;

pub use asr::{Asr, EchoAsr, ExternalAsr};
pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, OptimConfig, Precision, TrainSettings};
pub use error::{ErrorClass, PipelineError, Result};
pub use eval::{evaluate, EvalOptions, EvalReport, SampleReport, DEFAULT_TEMPERATURE};
pub use metrics::{
    edit_distance, energy_mae, error_rate, format_moments_row, pitch_moments, pooled_moments, transcript_error,
    ExternalG2p, G2p, LetterG2p, PitchMoments, Pooling, RateAccumulator, Unit,
};
pub use plot::{grid_shape, plot_mel_comparison, render_mel_grid, PanelGeometry};
pub use sweep::{format_sweep_table, sweep_units, SweepConfig, SweepRow, UnitProbe};
pub use train::{run_experiment, Batch, MetricRecord, TrainData, TrainSummary, Trainer};

pub(crate) use lipsynth_data::write_atomic;
pub use synth::{SynthOutput, Synthesizer, Vocoder};
