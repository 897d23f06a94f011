//! The training phase: run an episode with the current banks, verify it
//! against gold, reflect the errors into skills and append them.

mod consolidate;
mod hygiene;
mod reflect;
mod train;
mod verify;

use thiserror::Error;

pub use consolidate::{advice_body, consolidate, Consolidation};
pub use hygiene::{entity_literals, hygiene_violations, PLACEHOLDERS};
pub use reflect::{cluster_queries, reflect, ReflectOptions, ReflectionOutput, OTHER_CLUSTER};
pub use train::{train, train_dataset, DatasetItem, EpisodeLog, TrainConfig, TrainSummary};
pub use verify::{
    run_episode, verify, Episode, ErrorReport, ReportedAnomaly, TrajectoryDigest, DEFAULT_LOW_ACCURACY_THRESHOLD,
    UNCATEGORISED,
};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("episode directory {0} is not empty")]
    EpisodeDirExists(String),
    #[error("reflection for {skill} rejected: {reason}")]
    ReflectionInvalid { skill: String, reason: String },
    #[error(transparent)]
    Skill(#[from] crate::skills::SkillError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
