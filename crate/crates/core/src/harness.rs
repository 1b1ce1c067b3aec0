//! Experiment orchestration: configuration, the online loop, metrics and
//! output files.
//!
//! A run walks `T` steps split into batches of `T_n`. Each step receives a
//! context, asks the policy for an item, reveals the reward and updates the
//! policy; after every full batch the policy may retrain (HyperBandit+ trains
//! its hypernetwork on the batch) and the batch is released.
//!
//! Every run is a pure function of its configuration and seed, so seeds and
//! policies run in parallel and the collected logs are always in job order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{
    EnvError, Environment, FeatureBundle, InteractionRecord, ReplayEnv, RewardMode, SyntheticConfig,
    SyntheticPeriodicEnv,
};
use crate::hypernet::{HyperNetwork, HypernetError, TrainOptions};
use crate::policy::{BanditPolicy, HyperBanditConfig, HyperBanditPolicy, LinUcb, PolicyError, RandomPolicy, RestartUcb};
use crate::seeding;
use crate::temporal::TimePeriod;
use crate::warmstart::{llm_start, simulate_interactions, AugmentationProvider, OracleProvider, SimulationPlan, WarmStartError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    WarmStart(#[from] WarmStartError),
    #[error(transparent)]
    Hypernet(#[from] HypernetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("true rewards are unknown for replayed logs")]
    ReplayNotSupported,
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

impl HarnessError {
    /// Whether the failure stems from the configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Env(EnvError::BadConfig(_))
                | HarnessError::Policy(PolicyError::BadConfig(_))
                | HarnessError::WarmStart(WarmStartError::BadConfig(_))
                | HarnessError::Hypernet(HypernetError::BadConfig(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    /// Synthetic periodic world. Its `seed` is mixed with each run seed.
    Synthetic(SyntheticConfig),
    /// Pre-featurized log replay.
    Replay { log: PathBuf, users: PathBuf, items: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochKeyword {
    Never,
    /// `⌊(d·T / P_T)^{2/3}⌋` from the environment's path length.
    Tuned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpochLength {
    Steps(u64),
    Named(EpochKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinUcbSpec {
    pub alpha: f64,
    pub lambda: f64,
    /// Feature width; defaults to `d_u + o_a`.
    pub width: Option<usize>,
}

impl Default for LinUcbSpec {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 0.1,
            width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestartSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub lambda: f64,
    #[serde(default)]
    pub width: Option<usize>,
    pub epoch_length: EpochLength,
}

fn default_alpha() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Hyperbandit(HyperBanditConfig),
    Linucb(LinUcbSpec),
    RestartUcb(RestartSpec),
    Random,
}

impl PolicySpec {
    /// Default label used in output file names.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Hyperbandit(_) => "hyperbandit".into(),
            PolicySpec::Linucb(_) => "linucb".into(),
            PolicySpec::RestartUcb(r) => match r.epoch_length {
                EpochLength::Steps(h) => format!("restart_ucb_h{h}"),
                EpochLength::Named(EpochKeyword::Never) => "restart_ucb_never".into(),
                EpochLength::Named(EpochKeyword::Tuned) => "restart_ucb_tuned".into(),
            },
            PolicySpec::Random => "random".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WarmStartSpec {
    #[default]
    Off,
    /// Ground-truth simulator with per-slot corruption probability.
    Oracle {
        corruption: f64,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_pool")]
        pool_size: usize,
    },
    /// Remote model configured through environment variables.
    External {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_pool")]
        pool_size: usize,
        #[serde(default = "default_attempts")]
        max_attempts: usize,
    },
}

fn default_k() -> usize {
    5
}

fn default_pool() -> usize {
    25
}

fn default_attempts() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Total online steps `T`.
    pub total_steps: u64,
    /// Steps per hypernetwork batch `T_n`.
    pub batch_steps: u64,
}

impl Schedule {
    /// Number of batches `N` (the last one may be partial).
    pub fn num_batches(&self) -> u64 {
        self.total_steps.div_ceil(self.batch_steps)
    }
}

/// One policy to run on every seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyJob {
    pub label: String,
    pub spec: PolicySpec,
    pub warm_start: WarmStartSpec,
}

impl PolicyJob {
    pub fn new(spec: PolicySpec) -> Self {
        Self {
            label: spec.label(),
            spec,
            warm_start: WarmStartSpec::Off,
        }
    }

    pub fn labeled(label: impl Into<String>, spec: PolicySpec, warm_start: WarmStartSpec) -> Self {
        Self {
            label: label.into(),
            spec,
            warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub environment: EnvironmentSpec,
    pub policy: PolicySpec,
    /// Extra policies run on the same seeds and environment streams.
    #[serde(default)]
    pub baselines: Vec<PolicySpec>,
    pub schedule: Schedule,
    /// Applies to the main policy when it is HyperBandit+.
    #[serde(default)]
    pub warm_start: WarmStartSpec,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.schedule.batch_steps == 0 {
            return bad("schedule.batch_steps must be positive".into());
        }
        if let EnvironmentSpec::Synthetic(env) = &self.environment {
            env.validate()?;
        }
        for spec in std::iter::once(&self.policy).chain(&self.baselines) {
            self.check_policy(spec)?;
        }
        match (&self.warm_start, &self.environment) {
            (WarmStartSpec::Off, _) => {}
            (WarmStartSpec::Oracle { corruption, .. }, EnvironmentSpec::Synthetic(_)) => {
                if !(0.0..=1.0).contains(corruption) {
                    return bad("warm_start.corruption must lie in [0, 1]".into());
                }
            }
            (WarmStartSpec::Oracle { .. }, EnvironmentSpec::Replay { .. }) => {
                return bad("the oracle warm start needs a synthetic environment".into());
            }
            (WarmStartSpec::External { .. }, _) => {}
        }
        Ok(())
    }

    fn check_policy(&self, spec: &PolicySpec) -> Result<(), HarnessError> {
        if let (PolicySpec::Hyperbandit(hb), EnvironmentSpec::Synthetic(env)) = (spec, &self.environment) {
            hb.validate()?;
            if (hb.user_dim, hb.observed_dim, hb.latent_dim) != (env.user_dim, env.observed_dim, env.latent_dim) {
                return Err(HarnessError::Config(format!(
                    "policy dims (d_u={}, o_a={}, l_a={}) differ from the environment's ({}, {}, {})",
                    hb.user_dim, hb.observed_dim, hb.latent_dim, env.user_dim, env.observed_dim, env.latent_dim
                )));
            }
        }
        if let PolicySpec::RestartUcb(r) = spec {
            if r.epoch_length == EpochLength::Steps(0) {
                return Err(HarnessError::Config("epoch_length must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Main policy (with the configured warm start) followed by baselines.
    /// Duplicate labels get a numeric suffix.
    pub fn jobs(&self) -> Vec<PolicyJob> {
        let mut jobs = vec![PolicyJob {
            label: self.policy.label(),
            spec: self.policy.clone(),
            warm_start: self.warm_start.clone(),
        }];
        jobs.extend(self.baselines.iter().cloned().map(PolicyJob::new));
        dedup_labels(&mut jobs);
        jobs
    }
}

fn dedup_labels(jobs: &mut [PolicyJob]) {
    for i in 1..jobs.len() {
        let mut n = 1;
        while jobs[..i].iter().any(|j| j.label == jobs[i].label) {
            n += 1;
            jobs[i].label = format!("{}_{n}", jobs[i].spec.label());
        }
    }
}

/// HyperBandit+ settings that fit the small periodic benchmark world.
pub fn benchmark_policy(env: &SyntheticConfig) -> HyperBanditConfig {
    HyperBanditConfig {
        alpha: 0.1,
        lambda: 1.0,
        user_dim: env.user_dim,
        observed_dim: env.observed_dim,
        latent_dim: env.latent_dim,
        tau: 4,
        hidden_layers: vec![64, 64],
        click_threshold: match env.reward_mode {
            RewardMode::Real => 0.0,
            RewardMode::Bernoulli => 0.5,
        },
        train: TrainOptions {
            learning_rate: 1e-2,
            max_epochs: 50,
            ..TrainOptions::default()
        },
        ..HyperBanditConfig::default()
    }
}

/// The periodic benchmark: 35 periods, `d_u = 8`, `o_a = 5`, `l_a = 3`,
/// rank 2, `κ = 0.3`, `M = 10`, `σ = 0.1`, `T = 20 000`, `T_n = 1 000`,
/// five seeds, LinUCB and Restart-UCB (`H = 500, 2000`) plus random as
/// baselines.
pub fn benchmark_config() -> ExperimentConfig {
    let env = SyntheticConfig::periodic_benchmark();
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        policy: PolicySpec::Hyperbandit(benchmark_policy(&env)),
        environment: EnvironmentSpec::Synthetic(env),
        baselines: standard_baselines(),
        schedule: Schedule {
            total_steps: 20_000,
            batch_steps: 1_000,
        },
        warm_start: WarmStartSpec::Off,
        seeds: vec![0, 1, 2, 3, 4],
        output_dir: default_output_dir(),
    }
}

/// LinUCB, Restart-UCB with `H = 500` and `H = 2000`, random.
pub fn standard_baselines() -> Vec<PolicySpec> {
    let restart = |h| {
        PolicySpec::RestartUcb(RestartSpec {
            alpha: 0.1,
            lambda: 0.1,
            width: None,
            epoch_length: EpochLength::Steps(h),
        })
    };
    vec![
        PolicySpec::Linucb(LinUcbSpec::default()),
        restart(500),
        restart(2000),
        PolicySpec::Random,
    ]
}

/// The benchmark with binary clicks, so that accumulated rewards stay
/// non-negative and can be normalized by the random policy.
pub fn ablation_config() -> ExperimentConfig {
    let mut env = SyntheticConfig::periodic_benchmark();
    env.reward_mode = RewardMode::Bernoulli;
    ExperimentConfig {
        policy: PolicySpec::Hyperbandit(benchmark_policy(&env)),
        environment: EnvironmentSpec::Synthetic(env),
        baselines: vec![PolicySpec::Random],
        ..benchmark_config()
    }
}

/// Ridge-update / hypernetwork-update variants of `cfg`, plus random.
/// Labels: `rr_hn`, `rr_only`, `hn_only`, `neither`, `random`.
pub fn component_ablation_jobs(cfg: &HyperBanditConfig) -> Vec<PolicyJob> {
    let mut jobs: Vec<PolicyJob> = [("rr_hn", true, true), ("rr_only", true, false), ("hn_only", false, true), ("neither", false, false)]
        .into_iter()
        .map(|(label, rr, hn)| {
            let spec = PolicySpec::Hyperbandit(HyperBanditConfig {
                ridge_updates: rr,
                hypernet_updates: hn,
                ..cfg.clone()
            });
            PolicyJob::labeled(label, spec, WarmStartSpec::Off)
        })
        .collect();
    jobs.push(PolicyJob::new(PolicySpec::Random));
    jobs
}

/// A cold-start job (`cold`) followed by one oracle warm start per
/// corruption level (`warm_eps{ε}`).
pub fn warm_start_jobs(cfg: &HyperBanditConfig, corruptions: &[f64]) -> Vec<PolicyJob> {
    let spec = PolicySpec::Hyperbandit(cfg.clone());
    let mut jobs = vec![PolicyJob::labeled("cold", spec.clone(), WarmStartSpec::Off)];
    jobs.extend(corruptions.iter().map(|&corruption| {
        PolicyJob::labeled(
            format!("warm_eps{corruption}"),
            spec.clone(),
            WarmStartSpec::Oracle {
                corruption,
                k: default_k(),
                pool_size: default_pool(),
            },
        )
    }));
    jobs
}

/// One logged online step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub period: TimePeriod,
    pub user: usize,
    pub chosen: usize,
    pub reward: f64,
    /// Expected reward of the chosen item, when known.
    pub true_reward: Option<f64>,
    /// Best expected reward among the candidates, when known.
    pub best_reward: Option<f64>,
}

impl StepRecord {
    pub fn regret(&self) -> Option<f64> {
        Some(self.best_reward? - self.true_reward?)
    }
}

/// Everything one (policy, seed) run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub policy: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub bandit_seconds: f64,
    pub training_seconds: f64,
    pub trainings: usize,
    pub epochs: usize,
    pub warm_start_interactions: usize,
    pub path_length: Option<f64>,
    /// Singular values of every period's `Θ_p` after the run (HyperBandit+ only).
    pub rank_report: Option<Vec<(TimePeriod, Vec<f64>)>>,
    /// Final hypernetwork (HyperBandit+ only).
    pub hypernet: Option<HyperNetwork>,
}

fn prefix_sums(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

impl MetricsLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn accumulated_reward(&self) -> Vec<f64> {
        prefix_sums(self.steps.iter().map(|s| s.reward))
    }

    pub fn accumulated_true_reward(&self) -> Option<Vec<f64>> {
        let values: Option<Vec<f64>> = self.steps.iter().map(|s| s.true_reward).collect();
        values.map(|v| prefix_sums(v.into_iter()))
    }

    /// Prefix sums of the logged per-step regret.
    pub fn dynamic_regret(&self) -> Option<Vec<f64>> {
        let values: Option<Vec<f64>> = self.steps.iter().map(StepRecord::regret).collect();
        values.map(|v| prefix_sums(v.into_iter()))
    }

    pub fn seconds_per_step(&self) -> Option<f64> {
        (!self.steps.is_empty()).then(|| self.bandit_seconds / self.steps.len() as f64)
    }

    pub fn seconds_per_training(&self) -> Option<f64> {
        (self.trainings > 0).then(|| self.training_seconds / self.trainings as f64)
    }
}

/// Dynamic regret of a logged run, recomputed from the environment's ground
/// truth: prefix sums of `max_{a ∈ A_t} r*(a) − r*(a_t)`.
pub fn dynamic_regret(log: &MetricsLog, env: &dyn Environment) -> Result<Vec<f64>, HarnessError> {
    let mut gaps = Vec::with_capacity(log.len());
    for step in &log.steps {
        let ctx = env.context(step.t).ok_or(HarnessError::ReplayNotSupported)?;
        let chosen = env.true_reward(&ctx, step.chosen).ok_or(HarnessError::ReplayNotSupported)?;
        let mut best = f64::NEG_INFINITY;
        for &a in &ctx.candidates {
            best = best.max(env.true_reward(&ctx, a).ok_or(HarnessError::ReplayNotSupported)?);
        }
        gaps.push(best - chosen);
    }
    Ok(prefix_sums(gaps.into_iter()))
}

/// Accumulated reward divided by the random policy's accumulated reward on
/// the same stream; `None` while the denominator is not positive.
pub fn normalized_accumulated_reward(log: &MetricsLog, random: &MetricsLog) -> Result<Vec<Option<f64>>, HarnessError> {
    if log.len() != random.len() {
        return Err(HarnessError::LengthMismatch {
            left: log.len(),
            right: random.len(),
        });
    }
    Ok(log
        .accumulated_reward()
        .into_iter()
        .zip(random.accumulated_reward())
        .map(|(num, den)| (den > 0.0).then(|| num / den))
        .collect())
}

/// Total variation of the latent item contexts over `horizon` steps.
pub fn path_length(env: &SyntheticPeriodicEnv, horizon: u64) -> f64 {
    env.path_length(horizon)
}

enum AnyPolicy {
    HyperBandit(Box<HyperBanditPolicy>),
    LinUcb(LinUcb),
    Restart(RestartUcb),
    Random(RandomPolicy),
}

impl AnyPolicy {
    fn as_dyn(&mut self) -> &mut dyn BanditPolicy {
        match self {
            AnyPolicy::HyperBandit(p) => p.as_mut(),
            AnyPolicy::LinUcb(p) => p,
            AnyPolicy::Restart(p) => p,
            AnyPolicy::Random(p) => p,
        }
    }
}

/// A built environment for one seed.
pub enum World {
    Synthetic(SyntheticPeriodicEnv),
    Replay(ReplayEnv),
}

impl World {
    pub fn build(spec: &EnvironmentSpec, seed: u64) -> Result<Self, HarnessError> {
        Ok(match spec {
            EnvironmentSpec::Synthetic(cfg) => World::Synthetic(SyntheticPeriodicEnv::build(SyntheticConfig {
                seed: seeding::mix(cfg.seed, &[seed]),
                ..cfg.clone()
            })?),
            EnvironmentSpec::Replay { log, users, items } => {
                World::Replay(ReplayEnv::from_file(log, FeatureBundle::from_files(users, items)?)?)
            }
        })
    }

    pub fn env(&self) -> &dyn Environment {
        match self {
            World::Synthetic(e) => e,
            World::Replay(e) => e,
        }
    }

    pub fn synthetic(&self) -> Option<&SyntheticPeriodicEnv> {
        match self {
            World::Synthetic(e) => Some(e),
            World::Replay(_) => None,
        }
    }

    fn observed_dim(&self) -> usize {
        let env = self.env();
        if env.num_items() == 0 {
            0
        } else {
            env.item_observed(0).len()
        }
    }

    fn user_dim(&self) -> usize {
        let env = self.env();
        if env.num_users() == 0 {
            0
        } else {
            env.user_context(0).len()
        }
    }

    fn candidate_size(&self) -> usize {
        match self {
            World::Synthetic(e) => e.config().candidate_size,
            World::Replay(e) => e.context(0).map_or(0, |c| c.candidates.len()),
        }
    }
}

fn provider_for<'a>(spec: &WarmStartSpec, world: &'a World, seed: u64) -> Result<Box<dyn AugmentationProvider + 'a>, HarnessError> {
    match spec {
        WarmStartSpec::Off => Err(HarnessError::Config("no warm start configured".into())),
        WarmStartSpec::Oracle { corruption, .. } => {
            let env = world
                .synthetic()
                .ok_or_else(|| HarnessError::Config("the oracle warm start needs a synthetic environment".into()))?;
            Ok(Box::new(OracleProvider::new(env, *corruption, seeding::mix(seed, &[seeding::TAG_ORACLE]))?))
        }
        #[cfg(feature = "external-llm")]
        WarmStartSpec::External { max_attempts, .. } => {
            let transport = crate::warmstart::HttpTransport::from_env()
                .ok_or_else(|| HarnessError::Config("HYPERBANDIT_LLM_ENDPOINT is not set".into()))?;
            Ok(Box::new(crate::warmstart::ExternalLlmProvider::new(
                transport,
                crate::warmstart::PromptBundle::default(),
                *max_attempts,
            )))
        }
        #[cfg(not(feature = "external-llm"))]
        WarmStartSpec::External { .. } => Err(HarnessError::Config(
            "the external warm start needs a build with the `external-llm` feature".into(),
        )),
    }
}

/// Runs LLM Start for a fresh HyperBandit+ policy.
fn warm_start(
    policy: &mut HyperBanditPolicy,
    spec: &WarmStartSpec,
    world: &World,
    schedule: &Schedule,
    seed: u64,
) -> Result<usize, HarnessError> {
    let (k, pool_size) = match spec {
        WarmStartSpec::Off => return Ok(0),
        WarmStartSpec::Oracle { k, pool_size, .. } | WarmStartSpec::External { k, pool_size, .. } => (*k, *pool_size),
    };
    let env = world.env();
    let provider = provider_for(spec, world, seed)?;
    let plan = SimulationPlan {
        users: (0..env.num_users()).collect(),
        periods: TimePeriod::all().collect(),
        num_items: env.num_items(),
        pool_size,
        k,
        candidate_size: world.candidate_size(),
        seed: seeding::mix(seed, &[seeding::TAG_SIMULATION]),
    };
    let records = simulate_interactions(provider.as_ref(), &plan)?;
    let buffers: Vec<Vec<InteractionRecord>> = records.chunks(schedule.batch_steps as usize).map(<[_]>::to_vec).collect();
    let result = llm_start(policy, &buffers, env)?;
    Ok(result.interactions)
}

fn build_policy(job: &PolicyJob, world: &World, schedule: &Schedule, seed: u64) -> Result<(AnyPolicy, usize), HarnessError> {
    let env = world.env();
    let default_width = world.user_dim() + world.observed_dim();
    let lin = |alpha, lambda, width: Option<usize>| LinUcb::new(env.num_items(), width.unwrap_or(default_width), alpha, lambda);
    Ok(match &job.spec {
        PolicySpec::Hyperbandit(cfg) => {
            let cfg = HyperBanditConfig {
                train: TrainOptions {
                    seed: seeding::mix(seed, &[seeding::TAG_TRAIN]),
                    ..cfg.train.clone()
                },
                ..cfg.clone()
            };
            let mut policy = HyperBanditPolicy::new(cfg, env.num_items(), seeding::mix(seed, &[seeding::TAG_HYPERNET]))?;
            let consumed = warm_start(&mut policy, &job.warm_start, world, schedule, seed)?;
            (AnyPolicy::HyperBandit(Box::new(policy)), consumed)
        }
        PolicySpec::Linucb(l) => (AnyPolicy::LinUcb(lin(l.alpha, l.lambda, l.width)?), 0),
        PolicySpec::RestartUcb(r) => {
            let inner = lin(r.alpha, r.lambda, r.width)?;
            let h = match r.epoch_length {
                EpochLength::Steps(h) => Some(h),
                EpochLength::Named(EpochKeyword::Never) => None,
                EpochLength::Named(EpochKeyword::Tuned) => {
                    let synthetic = world
                        .synthetic()
                        .ok_or_else(|| HarnessError::Config("a tuned restart needs a synthetic environment".into()))?;
                    let horizon = schedule.total_steps;
                    Some(RestartUcb::tuned_epoch_length(
                        default_width,
                        horizon,
                        synthetic.path_length(horizon),
                    ))
                }
            };
            (AnyPolicy::Restart(RestartUcb::new(inner, h)?), 0)
        }
        PolicySpec::Random => (
            AnyPolicy::Random(RandomPolicy::new(seeding::mix(seed, &[seeding::TAG_RANDOM_POLICY]))),
            0,
        ),
    })
}

/// One policy on one seed.
pub fn run_job(job: &PolicyJob, world: &World, schedule: &Schedule, seed: u64) -> Result<MetricsLog, HarnessError> {
    let (mut policy, warm_start_interactions) = build_policy(job, world, schedule, seed)?;
    let env = world.env();
    let horizon = env.horizon().map_or(schedule.total_steps, |h| h.min(schedule.total_steps));
    let batch_len = schedule.batch_steps as usize;
    let mut log = MetricsLog {
        policy: job.label.clone(),
        seed,
        steps: Vec::with_capacity(horizon as usize),
        bandit_seconds: 0.0,
        training_seconds: 0.0,
        trainings: 0,
        epochs: 0,
        warm_start_interactions,
        path_length: world.synthetic().map(|e| e.path_length(horizon)),
        rank_report: None,
        hypernet: None,
    };
    let mut buffer: Vec<InteractionRecord> = Vec::with_capacity(batch_len);
    for t in 0..horizon {
        let Some(ctx) = env.context(t) else { break };
        let started = Instant::now();
        let chosen = policy.as_dyn().choose(&ctx, env)?;
        let reward = env.observe(&ctx, chosen);
        policy.as_dyn().learn(&ctx, chosen, reward, env)?;
        log.bandit_seconds += started.elapsed().as_secs_f64();

        let true_reward = env.true_reward(&ctx, chosen);
        let best_reward = ctx
            .candidates
            .iter()
            .map(|&a| env.true_reward(&ctx, a))
            .try_fold(f64::NEG_INFINITY, |m, r| r.map(|r| m.max(r)));
        log.steps.push(StepRecord {
            t,
            period: ctx.period,
            user: ctx.user,
            chosen,
            reward,
            true_reward,
            best_reward,
        });
        buffer.push(InteractionRecord {
            user: ctx.user,
            chosen,
            period: ctx.period,
            reward,
            candidates: ctx.candidates,
        });
        if buffer.len() == batch_len {
            let started = Instant::now();
            if let Some(epochs) = policy.as_dyn().end_batch(&buffer, env)? {
                log.training_seconds += started.elapsed().as_secs_f64();
                log.trainings += 1;
                log.epochs += epochs;
            }
            buffer.clear();
        }
    }
    if let AnyPolicy::HyperBandit(hb) = &policy {
        log.rank_report = Some(hb.hypernet().rank_report(hb.embeddings())?);
        log.hypernet = Some(hb.hypernet().clone());
    }
    Ok(log)
}

/// Runs every job on every seed. Logs are ordered job-major, then by seed.
pub fn run_jobs(
    environment: &EnvironmentSpec,
    schedule: &Schedule,
    seeds: &[u64],
    jobs: &[PolicyJob],
) -> Result<Vec<MetricsLog>, HarnessError> {
    let worlds: Vec<World> = seeds
        .par_iter()
        .map(|&s| World::build(environment, s))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..seeds.len()).map(move |s| (j, s)))
        .collect();
    tasks
        .par_iter()
        .map(|&(j, s)| run_job(&jobs[j], &worlds[s], schedule, seeds[s]))
        .collect()
}

/// The configured main policy on every seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsLog>, HarnessError> {
    cfg.validate()?;
    let main = cfg.jobs().remove(0);
    run_jobs(&cfg.environment, &cfg.schedule, &cfg.seeds, &[main])
}

/// Main policy and all baselines on every seed.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<MetricsLog>, HarnessError> {
    cfg.validate()?;
    run_jobs(&cfg.environment, &cfg.schedule, &cfg.seeds, &cfg.jobs())
}

/// Sample mean and standard deviation (`n − 1` denominator; `None` for n < 2).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

/// `regret(T) / regret(T/2)` for one log.
pub fn regret_ratio(log: &MetricsLog) -> Option<f64> {
    let regret = log.dynamic_regret()?;
    let full = *regret.last()?;
    let half = regret[regret.len() / 2 - 1];
    (half > 0.0).then(|| full / half)
}

/// One row of the aggregate summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub metric: &'static str,
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

fn random_partner<'a>(logs: &'a [MetricsLog], log: &MetricsLog) -> Option<&'a MetricsLog> {
    logs.iter().find(|l| l.policy == "random" && l.seed == log.seed)
}

type MetricFn<'a> = Box<dyn Fn(&MetricsLog) -> Option<f64> + 'a>;

/// Per-policy mean ± std of final metrics, in first-appearance order.
pub fn summarize(logs: &[MetricsLog]) -> Vec<SummaryRow> {
    let mut labels: Vec<&str> = Vec::new();
    for log in logs {
        if !labels.contains(&log.policy.as_str()) {
            labels.push(&log.policy);
        }
    }
    let mut rows = Vec::new();
    for label in labels {
        let group: Vec<&MetricsLog> = logs.iter().filter(|l| l.policy == label).collect();
        let metrics: [(&'static str, MetricFn); 6] = [
            ("final_accumulated_reward", Box::new(|l| l.accumulated_reward().last().copied())),
            (
                "final_accumulated_true_reward",
                Box::new(|l| l.accumulated_true_reward()?.last().copied()),
            ),
            ("final_dynamic_regret", Box::new(|l| l.dynamic_regret()?.last().copied())),
            ("regret_ratio", Box::new(regret_ratio)),
            (
                "final_normalized_reward",
                Box::new(|l| {
                    let random = random_partner(logs, l)?;
                    normalized_accumulated_reward(l, random).ok()?.last().copied().flatten()
                }),
            ),
            ("path_length", Box::new(|l| l.path_length)),
        ];
        for (metric, f) in metrics {
            let values: Option<Vec<f64>> = group.iter().map(|l| f(l)).collect();
            if let Some(values) = values {
                if values.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&values);
                rows.push(SummaryRow {
                    policy: label.to_string(),
                    metric,
                    n: values.len(),
                    mean,
                    std,
                });
            }
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_fail(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub const STEP_HEADER: [&str; 11] = [
    "t",
    "period",
    "user",
    "chosen",
    "reward",
    "true_reward",
    "best_reward",
    "regret",
    "accumulated_reward",
    "dynamic_regret",
    "normalized_accumulated_reward",
];

pub fn step_file_name(log: &MetricsLog) -> String {
    format!("steps_{}_seed{}.csv", log.policy, log.seed)
}

pub fn hypernet_file_name(log: &MetricsLog) -> String {
    format!("hypernet_{}_seed{}.txt", log.policy, log.seed)
}

/// Writes one step-series file per log plus `summary.csv`, `timing.csv`,
/// `rank_report.csv` and a checkpoint of every final hypernetwork. Only
/// `timing.csv` depends on wall-clock time.
pub fn emit_outputs(logs: &[MetricsLog], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    for log in logs {
        let path = dir.join(step_file_name(log));
        let fail = csv_fail(&path);
        let mut w = csv_writer(&path)?;
        w.write_record(STEP_HEADER).map_err(&fail)?;
        let acc = log.accumulated_reward();
        let regret = log.dynamic_regret();
        let normalized = random_partner(logs, log).and_then(|r| normalized_accumulated_reward(log, r).ok());
        for (i, s) in log.steps.iter().enumerate() {
            w.write_record([
                s.t.to_string(),
                s.period.index().to_string(),
                s.user.to_string(),
                s.chosen.to_string(),
                s.reward.to_string(),
                opt(s.true_reward),
                opt(s.best_reward),
                opt(s.regret()),
                acc[i].to_string(),
                opt(regret.as_ref().map(|r| r[i])),
                opt(normalized.as_ref().and_then(|n| n[i])),
            ])
            .map_err(&fail)?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path.clone());
    }

    let path = dir.join("summary.csv");
    let fail = csv_fail(&path);
    let mut w = csv_writer(&path)?;
    w.write_record(["policy", "metric", "n", "mean", "std"]).map_err(&fail)?;
    for row in summarize(logs) {
        w.write_record([
            row.policy,
            row.metric.to_string(),
            row.n.to_string(),
            row.mean.to_string(),
            opt(row.std),
        ])
        .map_err(&fail)?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path.clone());

    let path = dir.join("timing.csv");
    let fail = csv_fail(&path);
    let mut w = csv_writer(&path)?;
    w.write_record([
        "policy",
        "seed",
        "steps",
        "bandit_seconds_per_step",
        "trainings",
        "training_seconds_per_training",
        "epochs",
        "warm_start_interactions",
    ])
    .map_err(&fail)?;
    for log in logs {
        w.write_record([
            log.policy.clone(),
            log.seed.to_string(),
            log.len().to_string(),
            opt(log.seconds_per_step()),
            log.trainings.to_string(),
            opt(log.seconds_per_training()),
            log.epochs.to_string(),
            log.warm_start_interactions.to_string(),
        ])
        .map_err(&fail)?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path.clone());

    let path = dir.join("rank_report.csv");
    write_rank_report(logs, &path)?;
    written.push(path.clone());

    for log in logs {
        if let Some(net) = &log.hypernet {
            let path = dir.join(hypernet_file_name(log));
            fs::write(&path, net.to_checkpoint()).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Numerical rank: singular values above `1e-8 · σ_max`.
pub fn numerical_rank(singular_values: &[f64]) -> usize {
    let top = singular_values.first().copied().unwrap_or(0.0);
    singular_values.iter().filter(|&&s| s > 1e-8 * top && s > 0.0).count()
}

fn write_rank_report(logs: &[MetricsLog], path: &Path) -> Result<(), HarnessError> {
    let fail = csv_fail(path);
    let width = logs
        .iter()
        .filter_map(|l| l.rank_report.as_ref())
        .flat_map(|r| r.iter().map(|(_, s)| s.len()))
        .max()
        .unwrap_or(0);
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["policy", "seed", "period", "day", "block", "rank"].map(String::from).to_vec();
    header.extend((1..=width).map(|i| format!("sv{i}")));
    w.write_record(&header).map_err(&fail)?;
    for log in logs {
        for (p, sv) in log.rank_report.iter().flatten() {
            let mut row = vec![
                log.policy.clone(),
                log.seed.to_string(),
                p.index().to_string(),
                p.day().to_string(),
                p.block().to_string(),
                numerical_rank(sv).to_string(),
            ];
            row.extend((0..width).map(|i| sv.get(i).map(ToString::to_string).unwrap_or_default()));
            w.write_record(&row).map_err(&fail)?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads a step-series file back into step records.
pub fn read_step_series(path: impl AsRef<Path>) -> Result<Vec<StepRecord>, HarnessError> {
    let path = path.as_ref();
    let fail = csv_fail(path);
    let mut reader = csv::Reader::from_path(path).map_err(&fail)?;
    let header = reader.headers().map_err(&fail)?.clone();
    if header.iter().ne(STEP_HEADER) {
        return Err(HarnessError::Format {
            path: path.display().to_string(),
            message: "unexpected header".into(),
        });
    }
    let bad = |line: usize, what: &str| HarnessError::Format {
        path: path.display().to_string(),
        message: format!("line {line}: bad {what}"),
    };
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(&fail)?;
        let line = i + 2;
        let int = |k: usize, what: &str| row[k].parse::<u64>().map_err(|_| bad(line, what));
        let float = |k: usize, what: &str| row[k].parse::<f64>().map_err(|_| bad(line, what));
        let maybe = |k: usize, what: &str| {
            if row[k].is_empty() {
                Ok(None)
            } else {
                row[k].parse::<f64>().map(Some).map_err(|_| bad(line, what))
            }
        };
        out.push(StepRecord {
            t: int(0, "t")?,
            period: TimePeriod::new(int(1, "period")? as usize).map_err(|_| bad(line, "period"))?,
            user: int(2, "user")? as usize,
            chosen: int(3, "chosen")? as usize,
            reward: float(4, "reward")?,
            true_reward: maybe(5, "true_reward")?,
            best_reward: maybe(6, "best_reward")?,
        });
    }
    Ok(out)
}
