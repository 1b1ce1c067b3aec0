//! LLM Start: warm-starting HyperBandit+ from simulated interactions.
//!
//! An [`AugmentationProvider`] plays the role of a user simulator: given a
//! user, a period and a pool of items it returns the `k` items the user would
//! most plausibly interact with. [`simulate_interactions`] turns those picks
//! into list-wise training records, and [`llm_start`] replays them through the
//! ordinary online procedure (select, ridge update, hypernetwork training)
//! before any real traffic is seen.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::environment::{ContextFeatures, InteractionRecord, StepContext, SyntheticPeriodicEnv};
use crate::hypernet::HyperNetwork;
use crate::policy::{BanditPolicy, HyperBanditPolicy, PolicyError, PolicyState};
use crate::seeding::{self, stream};
use crate::temporal::TimePeriod;

#[derive(Debug, Error)]
pub enum WarmStartError {
    #[error("prompt placeholder `{0}` has no binding")]
    MissingBinding(String),
    #[error("bad warm-start config: {0}")]
    BadConfig(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("response has no `SELECTED:` line: {raw:?}")]
    MalformedResponse { raw: String },
    #[error("provider returned {got} of {wanted} valid ids after {attempts} attempts")]
    RetryExhausted { wanted: usize, got: usize, attempts: usize },
    #[error("warm-start buffer {0} is empty")]
    EmptyBuffer(usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    ItemAttribute,
    UserProfile,
    Simulation,
}

/// Stanza the simulation prompt asks the model to answer with.
pub const OUTPUT_FORMAT: &str = "Answer with a single line of the form `SELECTED: id1,id2,...` listing exactly {k} ids from the candidate list, most likely first.";

/// Prompt templates with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub item_attribute: String,
    pub user_profile: String,
    pub simulation: String,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            item_attribute: "You are a domain expert describing catalogue items.\n\
                Task: summarize the attributes of the item below in a few short phrases.\n\
                Item: {item}\n\
                Known facts: {facts}\n\
                Answer with one line of comma-separated attributes."
                .into(),
            user_profile: "You are an analyst of user behaviour.\n\
                Task: write a short preference profile for the user from the interaction history.\n\
                History (most recent last): {history}\n\
                Answer with one paragraph of at most three sentences."
                .into(),
            simulation: format!(
                "You are simulating a user of a recommendation service.\n\
                 Task: pick the {{k}} items this user is most likely to interact with at the given time.\n\
                 User profile: {{profile}}\n\
                 History (most recent last): {{history}}\n\
                 Time: {{time}}\n\
                 Candidates: {{candidates}}\n\
                 {OUTPUT_FORMAT}"
            ),
        }
    }
}

impl PromptBundle {
    pub fn template(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::ItemAttribute => &self.item_attribute,
            PromptKind::UserProfile => &self.user_profile,
            PromptKind::Simulation => &self.simulation,
        }
    }

    /// Substitutes every `{name}` placeholder. Text outside placeholders is
    /// copied verbatim.
    pub fn render(&self, kind: PromptKind, bindings: &BTreeMap<String, String>) -> Result<String, WarmStartError> {
        let template = self.template(kind);
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_placeholder(&after[..close]) => {
                    let name = &after[..close];
                    let value = bindings
                        .get(name)
                        .ok_or_else(|| WarmStartError::MissingBinding(name.to_string()))?;
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_placeholder(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// Human-readable period label, e.g. `Wednesday afternoon`.
pub fn describe_period(p: TimePeriod) -> String {
    const DAYS: [&str; 7] = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];
    const BLOCKS: [&str; 5] = ["morning", "noon", "afternoon", "night", "late night"];
    format!("{} {}", DAYS[p.day()], BLOCKS[p.block()])
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// One simulator query.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRequest<'a> {
    pub user: usize,
    pub period: TimePeriod,
    pub pool: &'a [usize],
    pub k: usize,
    pub history: &'a [usize],
}

impl SimulationRequest<'_> {
    pub fn bindings(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("k".to_string(), self.k.to_string()),
            ("profile".to_string(), format!("user {}", self.user)),
            ("history".to_string(), join_ids(self.history)),
            ("time".to_string(), describe_period(self.period)),
            ("candidates".to_string(), join_ids(self.pool)),
        ])
    }
}

/// A user simulator. Implementations return exactly `k` distinct ids from
/// the request's pool.
pub trait AugmentationProvider: Sync {
    fn select(&self, request: &SimulationRequest<'_>) -> Result<Vec<usize>, WarmStartError>;
}

/// Ranks the pool by the synthetic world's true reward, then corrupts each
/// of the top-k slots with probability `epsilon`.
#[derive(Debug, Clone)]
pub struct OracleProvider<'a> {
    env: &'a SyntheticPeriodicEnv,
    epsilon: f64,
    seed: u64,
}

impl<'a> OracleProvider<'a> {
    pub fn new(env: &'a SyntheticPeriodicEnv, epsilon: f64, seed: u64) -> Result<Self, WarmStartError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(WarmStartError::BadConfig("corruption must lie in [0, 1]".into()));
        }
        Ok(Self { env, epsilon, seed })
    }
}

impl AugmentationProvider for OracleProvider<'_> {
    fn select(&self, request: &SimulationRequest<'_>) -> Result<Vec<usize>, WarmStartError> {
        check_k(request)?;
        let mut ranked: Vec<(usize, f64)> = request
            .pool
            .iter()
            .map(|&a| (a, self.env.true_reward(request.user, a, request.period)))
            .collect();
        ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let mut chosen: Vec<usize> = ranked[..request.k].iter().map(|&(a, _)| a).collect();
        let mut rng = stream(
            self.seed,
            &[seeding::TAG_ORACLE, request.user as u64, request.period.index() as u64],
        );
        let corrupted: Vec<usize> = (0..chosen.len()).filter(|_| rng.random::<f64>() < self.epsilon).collect();
        if !corrupted.is_empty() {
            // Corrupted slots draw without replacement from every pool item
            // not kept in a clean slot, so ε = 1 yields a uniform k-subset.
            let kept: Vec<usize> = (0..chosen.len())
                .filter(|i| !corrupted.contains(i))
                .map(|i| chosen[i])
                .collect();
            let open: Vec<usize> = request.pool.iter().copied().filter(|a| !kept.contains(a)).collect();
            let fills = sample(&mut rng, open.len(), corrupted.len());
            for (slot, i) in corrupted.into_iter().zip(fills) {
                chosen[slot] = open[i];
            }
        }
        Ok(chosen)
    }
}

fn check_k(request: &SimulationRequest<'_>) -> Result<(), WarmStartError> {
    if request.k == 0 || request.k > request.pool.len() {
        return Err(WarmStartError::BadConfig(format!(
            "k = {} must lie in 1..={}",
            request.k,
            request.pool.len()
        )));
    }
    Ok(())
}

/// One prompt in, one text response out.
pub trait Transport: Sync {
    fn exchange(&self, prompt: &str) -> Result<String, WarmStartError>;
}

/// Ids on the first `SELECTED:` line, in order. Non-numeric entries are
/// skipped.
pub fn parse_selected(response: &str) -> Result<Vec<usize>, WarmStartError> {
    let line = response
        .lines()
        .find_map(|l| l.trim().strip_prefix("SELECTED:"))
        .ok_or_else(|| WarmStartError::MalformedResponse { raw: response.to_string() })?;
    Ok(line.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

/// Provider backed by a remote language model.
pub struct ExternalLlmProvider<T> {
    transport: T,
    bundle: PromptBundle,
    max_attempts: usize,
}

impl<T: Transport> ExternalLlmProvider<T> {
    pub fn new(transport: T, bundle: PromptBundle, max_attempts: usize) -> Self {
        Self {
            transport,
            bundle,
            max_attempts: max_attempts.max(1),
        }
    }
}

impl<T: Transport> AugmentationProvider for ExternalLlmProvider<T> {
    fn select(&self, request: &SimulationRequest<'_>) -> Result<Vec<usize>, WarmStartError> {
        check_k(request)?;
        let prompt = self.bundle.render(PromptKind::Simulation, &request.bindings())?;
        let mut picked: Vec<usize> = Vec::with_capacity(request.k);
        for _ in 0..self.max_attempts {
            let response = self.transport.exchange(&prompt)?;
            for id in parse_selected(&response)? {
                if request.pool.contains(&id) && !picked.contains(&id) {
                    picked.push(id);
                }
            }
            if picked.len() >= request.k {
                picked.truncate(request.k);
                return Ok(picked);
            }
        }
        Err(WarmStartError::RetryExhausted {
            wanted: request.k,
            got: picked.len(),
            attempts: self.max_attempts,
        })
    }
}

/// Plain-text HTTP transport configured from the environment:
/// `HYPERBANDIT_LLM_ENDPOINT` (required), `HYPERBANDIT_LLM_MODEL` and
/// `HYPERBANDIT_LLM_TOKEN`.
#[cfg(feature = "external-llm")]
pub struct HttpTransport {
    endpoint: String,
    model: Option<String>,
    token: Option<String>,
}

#[cfg(feature = "external-llm")]
impl HttpTransport {
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("HYPERBANDIT_LLM_ENDPOINT").ok()?;
        Some(Self {
            endpoint,
            model: std::env::var("HYPERBANDIT_LLM_MODEL").ok(),
            token: std::env::var("HYPERBANDIT_LLM_TOKEN").ok(),
        })
    }
}

#[cfg(feature = "external-llm")]
impl Transport for HttpTransport {
    fn exchange(&self, prompt: &str) -> Result<String, WarmStartError> {
        let mut req = ureq::post(&self.endpoint).header("Content-Type", "text/plain; charset=utf-8");
        if let Some(model) = &self.model {
            req = req.header("X-Model", model);
        }
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = req.send(prompt).map_err(|e| WarmStartError::Transport(e.to_string()))?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| WarmStartError::Transport(e.to_string()))
    }
}

/// What to simulate: every `(user, period)` pair gets its own pool of
/// `pool_size` items, the provider picks `k` of them, and each pick becomes
/// a record with `candidate_size − 1` negatives from the rest of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub users: Vec<usize>,
    pub periods: Vec<TimePeriod>,
    pub num_items: usize,
    pub pool_size: usize,
    pub k: usize,
    pub candidate_size: usize,
    pub seed: u64,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<(), WarmStartError> {
        let bad = |m: String| Err(WarmStartError::BadConfig(m));
        if self.pool_size > self.num_items {
            return bad(format!("pool of {} exceeds {} items", self.pool_size, self.num_items));
        }
        if self.k == 0 || self.k > self.pool_size {
            return bad(format!("k = {} must lie in 1..={}", self.k, self.pool_size));
        }
        if self.candidate_size == 0 || self.candidate_size - 1 > self.pool_size - self.k {
            return bad(format!(
                "need {} negatives but only {} non-selected pool items",
                self.candidate_size.saturating_sub(1),
                self.pool_size - self.k
            ));
        }
        Ok(())
    }

    pub fn pool(&self, user: usize, period: TimePeriod) -> Vec<usize> {
        let mut rng = stream(self.seed, &[seeding::TAG_SIMULATION, user as u64, period.index() as u64]);
        let mut pool = sample(&mut rng, self.num_items, self.pool_size).into_vec();
        pool.sort_unstable();
        pool
    }
}

/// Asks the provider about every planned `(user, period)` pair and assembles
/// one record (reward 1) per selected item, ordered by user, period and
/// selection rank.
pub fn simulate_interactions(
    provider: &dyn AugmentationProvider,
    plan: &SimulationPlan,
) -> Result<Vec<InteractionRecord>, WarmStartError> {
    plan.validate()?;
    let pairs: Vec<(usize, TimePeriod)> = plan
        .users
        .iter()
        .flat_map(|&u| plan.periods.iter().map(move |&p| (u, p)))
        .collect();
    let batches: Vec<Vec<InteractionRecord>> = pairs
        .par_iter()
        .map(|&(user, period)| {
            let pool = plan.pool(user, period);
            let picks = provider.select(&SimulationRequest {
                user,
                period,
                pool: &pool,
                k: plan.k,
                history: &[],
            })?;
            if picks.len() != plan.k || picks.iter().any(|a| !pool.contains(a)) {
                return Err(WarmStartError::BadConfig("provider broke the top-k contract".into()));
            }
            let negatives: Vec<usize> = pool.iter().copied().filter(|a| !picks.contains(a)).collect();
            let mut rng = stream(
                plan.seed,
                &[seeding::TAG_SIMULATION, user as u64, period.index() as u64, 1],
            );
            Ok(picks
                .iter()
                .map(|&positive| {
                    let mut candidates: Vec<usize> = sample(&mut rng, negatives.len(), plan.candidate_size - 1)
                        .into_iter()
                        .map(|i| negatives[i])
                        .collect();
                    candidates.push(positive);
                    candidates.sort_unstable();
                    InteractionRecord {
                        user,
                        chosen: positive,
                        period,
                        reward: 1.0,
                        candidates,
                    }
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(batches.into_iter().flatten().collect())
}

/// Arm statistics and hypernetwork parameters after warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartResult {
    pub state: PolicyState,
    pub hypernet: HyperNetwork,
    pub interactions: usize,
}

impl WarmStartResult {
    /// Hands the warm parameters to a fresh policy of the same shape.
    pub fn apply(&self, policy: &mut HyperBanditPolicy) -> Result<(), PolicyError> {
        policy.restore_state(&self.state)?;
        policy.set_hypernet(self.hypernet.clone())
    }
}

/// Replays each simulated buffer through the online procedure: the policy
/// picks from the record's candidates, earns 1 when it hits the simulated
/// positive and 0 otherwise, and updates its ridge statistics. After each
/// buffer the hypernetwork is trained on the simulated records.
pub fn llm_start(
    policy: &mut HyperBanditPolicy,
    buffers: &[Vec<InteractionRecord>],
    features: &dyn ContextFeatures,
) -> Result<WarmStartResult, WarmStartError> {
    if let Some(i) = buffers.iter().position(Vec::is_empty) {
        return Err(WarmStartError::EmptyBuffer(i));
    }
    let mut interactions = 0;
    for buffer in buffers {
        for record in buffer {
            let ctx = StepContext {
                t: interactions as u64,
                user: record.user,
                period: record.period,
                candidates: record.candidates.clone(),
            };
            let chosen = policy.choose(&ctx, features)?;
            let reward = if chosen == record.chosen { 1.0 } else { 0.0 };
            policy.learn(&ctx, chosen, reward, features)?;
            interactions += 1;
        }
        policy.end_batch(buffer, features)?;
    }
    Ok(WarmStartResult {
        state: policy.state(),
        hypernet: policy.hypernet().clone(),
        interactions,
    })
}
