//! Rule synthesis: prompt a completion model with the current context,
//! parse its three-part answer, validate it in stages, and register it
//! once a reviewer approves.

pub mod client;
pub mod contract;
pub mod pending;
pub mod prompt;
pub mod registry;
pub mod smoke;
pub mod validate;

pub use client::{CompletionClient, CompletionRequest, HttpClient, NullClient, ReplayClient};
pub use contract::{parse_contract, CandidateArtifact, ContractError, Section};
pub use prompt::{build_prompt, ContextBundle, RuleSpecRequest};
pub use registry::{CrashPoint, Registry, RegistryError};
pub use smoke::{infer_category, smoke_pair, SmokePair};
pub use validate::{validate, validate_response, RegistryState, Stage, StageStatus, ValidationVerdict};

use std::path::Path;

use thiserror::Error;

use crate::scenario_gen::DefectKind;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Bundle(#[from] prompt::BundleError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Client(#[from] client::ClientError),
}

/// Everything one synthesis request produced.
#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub prompt: String,
    pub response: String,
    pub candidate: Option<CandidateArtifact>,
    pub verdict: ValidationVerdict,
}

/// Builds the prompt from the registry at `registry_dir`, asks `client`,
/// and validates the answer against that registry.
pub fn synthesize(
    client: &dyn CompletionClient,
    request_id: &str,
    req: &RuleSpecRequest,
    category: DefectKind,
    registry_dir: &Path,
) -> Result<SynthesisOutcome, SynthesisError> {
    let bundle = ContextBundle::from_dir(registry_dir)?;
    let state = Registry::open(registry_dir)?.state()?;
    let prompt = build_prompt(&bundle, req);
    let response = client.complete(&CompletionRequest {
        id: request_id.to_string(),
        prompt: prompt.clone(),
    })?;
    let (candidate, verdict) = validate_response(&response, &state, &smoke_pair(category));
    Ok(SynthesisOutcome {
        prompt,
        response,
        candidate,
        verdict,
    })
}
