//! External outcome predictions from chat-completion models: prompt
//! rendering, response validation, a JSON-lines response cache and
//! concurrent collection behind a provider trait.

pub mod cache;
pub mod collect;
pub mod parse;
pub mod provider;
pub mod template;

use haipw_core::{Arm, DataError};
use thiserror::Error;

pub use cache::{RawResponse, ResponseCache, ResponseStatus};
pub use collect::{collect_predictions, CollectedPredictions, ValidCounts};
pub use parse::{parse_response, parse_response_bytes, InvalidReason, ParsedResponse};
pub use provider::{CompletionProvider, CompletionRequest, HttpProvider, ProviderConfig, TransportError};
pub use template::{render_prompts, PromptTemplate, Scale};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("UnboundPlaceholder: {{{0}}} has no matching covariate")]
    UnboundPlaceholder(String),
    #[error("InvalidTemplate: {0}")]
    InvalidTemplate(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("AllInvalid: no valid response for unit {unit}, arm {arm}")]
    AllInvalid { unit: String, arm: Arm },
    #[error("NetworkExhausted: unit {unit}, arm {arm}, prompt {prompt_index}: {message}")]
    NetworkExhausted { unit: String, arm: Arm, prompt_index: usize, message: String },
    #[error("CacheError: {0}")]
    Cache(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ClientError {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientError::UnboundPlaceholder(_) => "UnboundPlaceholder",
            ClientError::InvalidTemplate(_) => "InvalidTemplate",
            ClientError::InvalidConfig(_) => "InvalidConfig",
            ClientError::AllInvalid { .. } => "AllInvalid",
            ClientError::NetworkExhausted { .. } => "NetworkExhausted",
            ClientError::Cache(_) => "CacheError",
            ClientError::Data(e) => e.kind(),
        }
    }
}
