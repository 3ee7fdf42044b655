use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use haipw_core::{Arm, ArmPair, ExperimentDataset, PredictionMatrix};
use serde::{Deserialize, Serialize};

use crate::cache::{now_millis, CacheKey, RawResponse, ResponseCache, ResponseStatus};
use crate::parse::{parse_response, ParsedResponse};
use crate::provider::{CompletionProvider, CompletionRequest, ProviderConfig};
use crate::template::PromptTemplate;
use crate::ClientError;

/// Number of valid responses behind each averaged prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidCounts {
    pub control: usize,
    pub treated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectedPredictions {
    /// One column named after the provider's model identifier.
    pub predictions: PredictionMatrix,
    pub valid_counts: Vec<ValidCounts>,
    /// Completion requests actually sent, retries included.
    pub network_calls: usize,
}

struct Job {
    unit: usize,
    arm: Arm,
    prompt_index: usize,
}

/// Queries the provider for every unit, both arms and prompt indices
/// `0..prompts_per_unit`, and averages the valid answers.
///
/// Cached responses are reused without a network call. Each new response is
/// appended to the cache as soon as it arrives. Transport failures are
/// retried with exponential backoff; a response that arrived but failed
/// validation is final.
#[allow(clippy::too_many_arguments)]
pub fn collect_predictions(
    dataset: &ExperimentDataset,
    covariate_names: &[String],
    template: &PromptTemplate,
    provider: &dyn CompletionProvider,
    config: &ProviderConfig,
    prompts_per_unit: usize,
    cache: &ResponseCache,
    seed: u64,
) -> Result<CollectedPredictions, ClientError> {
    if prompts_per_unit == 0 {
        return Err(ClientError::InvalidConfig("prompts_per_unit must be at least 1".into()));
    }
    config.validate()?;
    template.validate(covariate_names)?;
    let units = dataset.units();
    let model = config.model_identifier.as_str();
    let key = |job: &Job| CacheKey {
        model: model.to_owned(),
        unit_id: units[job.unit].id.clone(),
        arm: job.arm,
        prompt_index: job.prompt_index,
    };

    let mut responses: Vec<Option<RawResponse>> = Vec::new();
    let mut pending = Vec::new();
    for unit in 0..units.len() {
        for arm in Arm::BOTH {
            for prompt_index in 0..prompts_per_unit {
                let job = Job { unit, arm, prompt_index };
                let cached = cache.get(&key(&job));
                if cached.is_none() {
                    pending.push((responses.len(), job));
                }
                responses.push(cached);
            }
        }
    }

    let calls = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let slots = Mutex::new(responses);
    let failure: Mutex<Option<ClientError>> = Mutex::new(None);
    let workers = config.max_in_flight.min(pending.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((slot, job)) = pending.get(i) else { break };
                let outcome = fetch(units, covariate_names, template, provider, config, job, seed, &calls)
                    .and_then(|response| cache.append(&response).map(|_| response));
                match outcome {
                    Ok(response) => slots.lock().expect("slots lock")[*slot] = Some(response),
                    Err(e) => {
                        failure.lock().expect("failure lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let responses = slots.into_inner().expect("slots lock");

    let mut values = Vec::with_capacity(units.len());
    let mut counts = Vec::with_capacity(units.len());
    let mut chunks = responses.chunks(prompts_per_unit);
    for unit in units {
        let mut pair = [0.0; 2];
        let mut n_valid = [0usize; 2];
        for arm in Arm::BOTH {
            let chunk = chunks.next().expect("one chunk per unit and arm");
            let mut sum = 0.0;
            for r in chunk.iter().map(|r| r.as_ref().expect("every slot filled")) {
                match r.status {
                    ResponseStatus::TransportError => {
                        return Err(ClientError::NetworkExhausted {
                            unit: unit.id.clone(),
                            arm,
                            prompt_index: r.prompt_index,
                            message: r.text.clone(),
                        })
                    }
                    ResponseStatus::Ok => {
                        if let ParsedResponse::Valid(v) = parse_response(&r.text, &template.scale) {
                            sum += v;
                            n_valid[arm.index()] += 1;
                        }
                    }
                    ResponseStatus::Invalid => {}
                }
            }
            if n_valid[arm.index()] == 0 {
                return Err(ClientError::AllInvalid { unit: unit.id.clone(), arm });
            }
            pair[arm.index()] = sum / n_valid[arm.index()] as f64;
        }
        values.push(ArmPair::new(pair[0], pair[1]));
        counts.push(ValidCounts { control: n_valid[0], treated: n_valid[1] });
    }
    let ids = units.iter().map(|u| u.id.clone()).collect();
    let predictions = PredictionMatrix::new(vec![model.to_owned()], ids, vec![values])?;
    Ok(CollectedPredictions { predictions, valid_counts: counts, network_calls: calls.into_inner() })
}

#[allow(clippy::too_many_arguments)]
fn fetch(
    units: &[haipw_core::Unit],
    covariate_names: &[String],
    template: &PromptTemplate,
    provider: &dyn CompletionProvider,
    config: &ProviderConfig,
    job: &Job,
    seed: u64,
    calls: &AtomicUsize,
) -> Result<RawResponse, ClientError> {
    let unit = &units[job.unit];
    let (system, user) = template.render(covariate_names, unit, job.arm, job.prompt_index)?;
    let request = CompletionRequest {
        model: config.model_identifier.clone(),
        system,
        user,
        temperature: config.decoding.temperature,
        top_p: config.decoding.top_p,
        max_tokens: config.decoding.max_tokens,
        seed: Some(seed),
    };
    let mut last_error = String::new();
    for attempt in 0..config.retry.attempts {
        std::thread::sleep(config.retry.delay_before(attempt));
        calls.fetch_add(1, Ordering::SeqCst);
        match provider.complete(&request) {
            Ok(text) => {
                let valid = !text.trim().is_empty() && matches!(parse_response(&text, &template.scale), ParsedResponse::Valid(_));
                let status = if valid { ResponseStatus::Ok } else { ResponseStatus::Invalid };
                return Ok(response(config, unit, job, text, status));
            }
            Err(e) => last_error = e.0,
        }
    }
    Ok(response(config, unit, job, last_error, ResponseStatus::TransportError))
}

fn response(config: &ProviderConfig, unit: &haipw_core::Unit, job: &Job, text: String, status: ResponseStatus) -> RawResponse {
    RawResponse {
        model: config.model_identifier.clone(),
        unit_id: unit.id.clone(),
        arm: job.arm,
        prompt_index: job.prompt_index,
        text,
        timestamp: now_millis(),
        status,
    }
}
