//! Buffers, DAgger collection, target-buffer synthesis and the alternating
//! SCAL loop.

mod buffer;
mod collect;
mod distribution;
mod history;
mod scal;

pub use buffer::{Buffer, Provenance, SourceRecord, TargetRecord};
pub use collect::{collect_source_dagger, sample_target_buffer, EpisodeSettings};
pub use distribution::{ArcShape, DistributionKind, MixtureComponent, StateDistribution};
pub use history::{History, HistoryRow, Phase};
pub use scal::{scal_train, scal_train_observed, train_dagger, train_dagger_observed, train_dagger_oracle, DaggerOutcome, ScalConfig, ScalOutcome};

use crate::agent::PolicyParams;
use crate::alignment::AlignmentError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("expert driving alone left the track in {departures} of {episodes} episodes (last at s={s:.3}, e_s={e_s:.3})")]
    ExpertDiverged { s: f64, e_s: f64, departures: usize, episodes: usize },
    #[error("nonfinite loss in round {round}: {detail}")]
    NonFinite { round: usize, detail: String, snapshot: Box<PolicyParams> },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
