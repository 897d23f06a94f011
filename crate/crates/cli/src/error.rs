use serde::Serialize;
use thiserror::Error;
use webtable_core::agents::AgentError;
use webtable_core::evolution::EvolutionError;
use webtable_core::skills::SkillError;

/// Exit codes are part of the scripting contract.
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Agent(AgentError::EmptyResult) => "empty_result",
            CliError::Agent(AgentError::NoStrategy) => "no_strategy",
            CliError::Agent(AgentError::DecompositionInvalid(_)) => "decomposition_invalid",
            CliError::Agent(_) => "agent",
            CliError::Evolution(EvolutionError::ReflectionInvalid { .. }) => "reflection_invalid",
            CliError::Evolution(EvolutionError::EmptyDataset) => "empty_dataset",
            CliError::Evolution(EvolutionError::EpisodeDirExists(_)) => "episode_dir_exists",
            CliError::Evolution(_) => "training",
            CliError::Skill(SkillError::UnknownSkill(_)) => "unknown_skill",
            CliError::Skill(SkillError::Frozen) => "frozen",
            CliError::Skill(_) => "skill",
            CliError::Input(_) => "input",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::Evolution(EvolutionError::EmptyDataset)
            | CliError::Evolution(EvolutionError::EpisodeDirExists(_)) => EXIT_CONFIG,
            _ => EXIT_DOMAIN,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorJson { error: self.kind(), message: self.to_string() }).expect("plain strings")
    }
}
