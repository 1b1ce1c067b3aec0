//! Interaction sources: a synthetic periodic world with known ground truth,
//! and replay of a pre-featurized interaction log.
//!
//! In the synthetic world every period `p` has a true preference matrix
//! `Θ*_p` (shape `d_a × d_u`) and the expected reward of showing item `a` to
//! user `u` is the bilinear form `c_aᵀ Θ*_p c_u`, with `c_a = [s_a; x*_a]`.
//! Observed rewards add zero-mean Gaussian noise (or, in Bernoulli mode, draw
//! a click with probability `clamp(r*, 0, 1)`).

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, norm2, Matrix};
use crate::seeding::{self, stream};
use crate::temporal::{TimePeriod, NUM_PERIODS};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("bad environment config: {0}")]
    BadConfig(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}: line {line}: unknown {kind} id `{id}`")]
    UnknownId {
        path: String,
        line: u64,
        kind: &'static str,
        id: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One interaction opportunity.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext {
    pub t: u64,
    pub user: usize,
    pub period: TimePeriod,
    /// Distinct item indices, ascending.
    pub candidates: Vec<usize>,
}

/// One logged step of the online loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user: usize,
    pub chosen: usize,
    pub period: TimePeriod,
    pub reward: f64,
    pub candidates: Vec<usize>,
}

impl InteractionRecord {
    pub fn is_valid(&self) -> bool {
        let mut sorted = self.candidates.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.len() == self.candidates.len() && self.candidates.contains(&self.chosen)
    }
}

/// Static side information: user contexts `c_u` and observed item features `s_a`.
pub trait ContextFeatures {
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;
    fn user_context(&self, user: usize) -> &[f64];
    fn item_observed(&self, item: usize) -> &[f64];
}

/// A source of step contexts and rewards.
pub trait Environment: ContextFeatures + Sync {
    /// Context at step `t`, or `None` once the source is exhausted.
    fn context(&self, t: u64) -> Option<StepContext>;
    /// Reward revealed after recommending `item` in `ctx`.
    fn observe(&self, ctx: &StepContext, item: usize) -> f64;
    /// Noise-free expected reward, when the ground truth is known.
    fn true_reward(&self, ctx: &StepContext, item: usize) -> Option<f64>;
    /// Number of available steps, if bounded.
    fn horizon(&self) -> Option<u64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `r* + η`, `η ~ N(0, σ_p²)`.
    #[default]
    Real,
    /// Click with probability `clamp(r*, 0, 1)`.
    Bernoulli,
}

/// Piecewise-constant random walk of the item latents: every `interval`
/// steps each `x*_a` moves by an isotropic Gaussian step of std `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub interval: u64,
    pub sigma: f64,
    /// Steps covered by the precomputed schedule; latents stay frozen after it.
    pub horizon: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub user_dim: usize,
    pub observed_dim: usize,
    pub latent_dim: usize,
    pub num_users: usize,
    pub num_items: usize,
    /// Rank ρ* of each period's factors.
    pub rank: usize,
    /// κ ∈ [0, 1]: weight of the structure shared by all periods.
    pub period_similarity: f64,
    pub noise_sigma: f64,
    /// Optional per-period noise std, overriding `noise_sigma`.
    pub period_noise_sigma: Option<Vec<f64>>,
    pub candidate_size: usize,
    /// Consecutive steps spent in each period of the rotation.
    pub steps_per_period: u64,
    pub reward_mode: RewardMode,
    pub drift: Option<DriftConfig>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// Full-scale dimensions: `d_u = d_a = 25`, `o_a = 15`, `l_a = 10`, 25 candidates.
    fn default() -> Self {
        Self {
            user_dim: 25,
            observed_dim: 15,
            latent_dim: 10,
            num_users: 100,
            num_items: 200,
            rank: 5,
            period_similarity: 0.3,
            noise_sigma: 0.1,
            period_noise_sigma: None,
            candidate_size: 25,
            steps_per_period: 20,
            reward_mode: RewardMode::Real,
            drift: None,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Desk-scale periodic benchmark used by the regret comparisons.
    pub fn periodic_benchmark() -> Self {
        Self {
            user_dim: 8,
            observed_dim: 5,
            latent_dim: 3,
            num_users: 20,
            num_items: 50,
            rank: 2,
            period_similarity: 0.3,
            noise_sigma: 0.1,
            period_noise_sigma: None,
            candidate_size: 10,
            steps_per_period: 20,
            reward_mode: RewardMode::Real,
            drift: None,
            seed: 0,
        }
    }

    pub fn item_dim(&self) -> usize {
        self.observed_dim + self.latent_dim
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::BadConfig(msg));
        if self.user_dim == 0 || self.item_dim() == 0 {
            return bad("context dimensions must be positive".into());
        }
        if self.num_users == 0 || self.num_items == 0 {
            return bad("need at least one user and one item".into());
        }
        if self.rank == 0 || self.rank > self.item_dim().min(self.user_dim) {
            return bad(format!(
                "rank {} must lie in 1..={}",
                self.rank,
                self.item_dim().min(self.user_dim)
            ));
        }
        if !(0.0..=1.0).contains(&self.period_similarity) {
            return bad(format!("period_similarity {} outside [0, 1]", self.period_similarity));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if let Some(per) = &self.period_noise_sigma {
            if per.len() != NUM_PERIODS || per.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return bad("period_noise_sigma needs 35 finite non-negative entries".into());
            }
        }
        if self.candidate_size == 0 || self.candidate_size > self.num_items {
            return bad(format!(
                "candidate_size {} must lie in 1..={}",
                self.candidate_size, self.num_items
            ));
        }
        if self.steps_per_period == 0 {
            return bad("steps_per_period must be positive".into());
        }
        if let Some(d) = &self.drift {
            if d.interval == 0 || !(d.sigma >= 0.0 && d.sigma.is_finite()) {
                return bad("drift needs interval > 0 and finite sigma >= 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SyntheticItem {
    observed: Vec<f64>,
    /// `x*_a` per drift epoch; a single entry when latents are static.
    latents: Vec<Vec<f64>>,
}

/// Synthetic world with a known per-period preference matrix.
#[derive(Debug, Clone)]
pub struct SyntheticPeriodicEnv {
    cfg: SyntheticConfig,
    users: Vec<Vec<f64>>,
    items: Vec<SyntheticItem>,
    ground_truth: Vec<Matrix>,
    /// `Θ*_p c_u` for every (period, user), row-major by period.
    projected_users: Vec<Vec<f64>>,
    drift_interval: u64,
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl SyntheticPeriodicEnv {
    pub fn build(cfg: SyntheticConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let (d_a, d_u, rank) = (cfg.item_dim(), cfg.user_dim, cfg.rank);

        let mut rng = stream(cfg.seed, &[seeding::TAG_USERS]);
        let users: Vec<Vec<f64>> = (0..cfg.num_users).map(|_| unit_gaussian(&mut rng, d_u)).collect();

        let mut rng = stream(cfg.seed, &[seeding::TAG_ITEMS]);
        let mut items: Vec<SyntheticItem> = (0..cfg.num_items)
            .map(|_| {
                let full = unit_gaussian(&mut rng, d_a);
                SyntheticItem {
                    observed: full[..cfg.observed_dim].to_vec(),
                    latents: vec![full[cfg.observed_dim..].to_vec()],
                }
            })
            .collect();

        let drift_interval = match cfg.drift {
            Some(d) => {
                let epochs = (d.horizon / d.interval) as usize + 1;
                let step = Normal::new(0.0, d.sigma).expect("validated sigma");
                for (a, item) in items.iter_mut().enumerate() {
                    let mut rng = stream(cfg.seed, &[seeding::TAG_DRIFT, a as u64]);
                    for _ in 1..epochs {
                        let prev = item.latents.last().expect("base latent");
                        let next = prev.iter().map(|x| x + step.sample(&mut rng)).collect();
                        item.latents.push(next);
                    }
                }
                d.interval
            }
            None => u64::MAX,
        };

        let mut rng = stream(cfg.seed, &[seeding::TAG_THETA]);
        let scale = 1.0 / (rank as f64).sqrt();
        let factor_pair = |rng: &mut rand_chacha::ChaCha8Rng| {
            let a = gaussian_matrix(rng, d_a, rank, scale);
            let b = gaussian_matrix(rng, d_u, rank, scale);
            a.matmul_tr(&b).expect("conformal factors")
        };
        let shared = factor_pair(&mut rng);
        let kappa = cfg.period_similarity;
        let ground_truth: Vec<Matrix> = (0..NUM_PERIODS)
            .map(|_| {
                let mut own = factor_pair(&mut rng);
                own.scale(1.0 - kappa);
                own.add_scaled(kappa, &shared).expect("same shape");
                own
            })
            .collect();

        let mut env = Self {
            cfg,
            users,
            items,
            ground_truth,
            projected_users: Vec::new(),
            drift_interval,
        };
        env.refresh_projections();
        Ok(env)
    }

    fn refresh_projections(&mut self) {
        self.projected_users = self
            .ground_truth
            .iter()
            .flat_map(|theta| self.users.iter().map(move |c_u| theta.mul_vec(c_u).expect("d_u")))
            .collect();
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    pub fn ground_truth(&self, p: TimePeriod) -> &Matrix {
        &self.ground_truth[p.index()]
    }

    /// Replaces every period's preference matrix. Shapes must match.
    pub fn set_ground_truth(&mut self, thetas: Vec<Matrix>) -> Result<(), EnvError> {
        let (d_a, d_u) = (self.cfg.item_dim(), self.cfg.user_dim);
        if thetas.len() != NUM_PERIODS || thetas.iter().any(|m| m.rows() != d_a || m.cols() != d_u) {
            return Err(EnvError::BadConfig(format!("need 35 matrices of shape {d_a}x{d_u}")));
        }
        self.ground_truth = thetas;
        self.refresh_projections();
        Ok(())
    }

    /// Overrides the latent schedule of one item: `epochs[e]` is `x*_a` during
    /// steps `[e·interval, (e+1)·interval)`.
    pub fn set_latent_schedule(&mut self, item: usize, interval: u64, epochs: Vec<Vec<f64>>) -> Result<(), EnvError> {
        let l_a = self.cfg.latent_dim;
        if epochs.is_empty() || epochs.iter().any(|x| x.len() != l_a) || interval == 0 {
            return Err(EnvError::BadConfig("latent schedule needs >= 1 epoch of dim l_a".into()));
        }
        if self.items.iter().any(|it| it.latents.len() > 1) && interval != self.drift_interval {
            return Err(EnvError::BadConfig("all drifting items share one interval".into()));
        }
        self.drift_interval = interval;
        self.items[item].latents = epochs;
        Ok(())
    }

    pub fn users(&self) -> &[Vec<f64>] {
        &self.users
    }

    /// Full context `c_a(t) = [s_a; x*_a(t)]`.
    pub fn item_context_at(&self, item: usize, t: u64) -> Vec<f64> {
        let it = &self.items[item];
        let mut c = it.observed.clone();
        c.extend_from_slice(self.latent_at(item, t));
        c
    }

    pub fn latent_at(&self, item: usize, t: u64) -> &[f64] {
        let latents = &self.items[item].latents;
        let epoch = (t / self.drift_interval).min(latents.len() as u64 - 1) as usize;
        &latents[epoch]
    }

    /// Exact `c_aᵀ Θ*_p c_u` with the time-zero latents.
    pub fn true_reward(&self, user: usize, item: usize, p: TimePeriod) -> f64 {
        self.true_reward_at(user, item, p, 0)
    }

    /// Exact `c_a(t)ᵀ Θ*_p c_u`.
    pub fn true_reward_at(&self, user: usize, item: usize, p: TimePeriod, t: u64) -> f64 {
        let projected = &self.projected_users[p.index() * self.users.len() + user];
        let o_a = self.cfg.observed_dim;
        dot(&self.items[item].observed, &projected[..o_a]) + dot(self.latent_at(item, t), &projected[o_a..])
    }

    fn noise_sigma(&self, p: TimePeriod) -> f64 {
        match &self.cfg.period_noise_sigma {
            Some(per) => per[p.index()],
            None => self.cfg.noise_sigma,
        }
    }

    /// Noisy reward at step `t`; the noise draw depends only on `(seed, t)`.
    pub fn observe_reward(&self, user: usize, item: usize, p: TimePeriod, t: u64) -> f64 {
        let mean = self.true_reward_at(user, item, p, t);
        let mut rng = stream(self.cfg.seed, &[seeding::TAG_NOISE, t]);
        match self.cfg.reward_mode {
            RewardMode::Real => {
                let eta: f64 = StandardNormal.sample(&mut rng);
                mean + self.noise_sigma(p) * eta
            }
            RewardMode::Bernoulli => {
                let u: f64 = rng.random();
                if u < mean.clamp(0.0, 1.0) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Context for step `t`: uniform user, rotating period, uniform candidates.
    pub fn step(&self, t: u64) -> StepContext {
        let period_index = (t / self.cfg.steps_per_period) % NUM_PERIODS as u64;
        let mut rng = stream(self.cfg.seed, &[seeding::TAG_STEP, t]);
        let user = rng.random_range(0..self.cfg.num_users);
        let mut candidates = sample(&mut rng, self.cfg.num_items, self.cfg.candidate_size).into_vec();
        candidates.sort_unstable();
        StepContext {
            t,
            user,
            period: TimePeriod::new(period_index as usize).expect("reduced mod 35"),
            candidates,
        }
    }

    /// Best candidate by true reward (ties toward the lowest id) and its value.
    pub fn best_candidate(&self, ctx: &StepContext) -> (usize, f64) {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for &a in &ctx.candidates {
            let r = self.true_reward_at(ctx.user, a, ctx.period, ctx.t);
            if r > best.1 || (r == best.1 && a < best.0) {
                best = (a, r);
            }
        }
        best
    }

    /// `Σ_a Σ_{t < horizon-1} ‖x*_a(t) − x*_a(t+1)‖₂`.
    pub fn path_length(&self, horizon: u64) -> f64 {
        if horizon < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for item in &self.items {
            let last_epoch = item.latents.len() as u64 - 1;
            let reached = ((horizon - 1) / self.drift_interval).min(last_epoch) as usize;
            for e in 0..reached {
                let diff: Vec<f64> = item.latents[e + 1]
                    .iter()
                    .zip(&item.latents[e])
                    .map(|(a, b)| a - b)
                    .collect();
                total += norm2(&diff);
            }
        }
        total
    }
}

impl ContextFeatures for SyntheticPeriodicEnv {
    fn num_users(&self) -> usize {
        self.users.len()
    }

    fn num_items(&self) -> usize {
        self.items.len()
    }

    fn user_context(&self, user: usize) -> &[f64] {
        &self.users[user]
    }

    fn item_observed(&self, item: usize) -> &[f64] {
        &self.items[item].observed
    }
}

impl Environment for SyntheticPeriodicEnv {
    fn context(&self, t: u64) -> Option<StepContext> {
        Some(self.step(t))
    }

    fn observe(&self, ctx: &StepContext, item: usize) -> f64 {
        self.observe_reward(ctx.user, item, ctx.period, ctx.t)
    }

    fn true_reward(&self, ctx: &StepContext, item: usize) -> Option<f64> {
        Some(self.true_reward_at(ctx.user, item, ctx.period, ctx.t))
    }

    fn horizon(&self) -> Option<u64> {
        None
    }
}

/// Per-id feature vectors for users (`c_u`) and items (`s_a`).
#[derive(Debug, Clone, Default)]
pub struct FeatureBundle {
    user_ids: Vec<String>,
    users: Vec<Vec<f64>>,
    user_index: HashMap<String, usize>,
    item_ids: Vec<String>,
    items: Vec<Vec<f64>>,
    item_index: HashMap<String, usize>,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, EnvError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> EnvError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => EnvError::Io {
            path: path.display().to_string(),
            source,
        },
        kind => EnvError::Parse {
            path: path.display().to_string(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

type FeatureTable = (Vec<String>, Vec<Vec<f64>>, HashMap<String, usize>);

fn read_feature_table(path: &Path, id_column: &str) -> Result<FeatureTable, EnvError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let parse_err = |line: u64, message: String| EnvError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    if headers.get(0) != Some(id_column) || headers.len() < 2 {
        return Err(parse_err(1, format!("header must start with `{id_column}` followed by feature columns")));
    }
    let dim = headers.len() - 1;
    let (mut ids, mut rows, mut index) = (Vec::new(), Vec::new(), HashMap::new());
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", dim + 1, record.len())));
        }
        let id = record[0].to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(line, format!("bad feature value `{f}`")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(parse_err(line, format!("duplicate id `{id}`")));
        }
        ids.push(id);
        rows.push(values);
    }
    Ok((ids, rows, index))
}

impl FeatureBundle {
    /// Reads `user_id,f1,…` and `item_id,f1,…` tables.
    pub fn from_files(users: impl AsRef<Path>, items: impl AsRef<Path>) -> Result<Self, EnvError> {
        let (user_ids, users, user_index) = read_feature_table(users.as_ref(), "user_id")?;
        let (item_ids, items, item_index) = read_feature_table(items.as_ref(), "item_id")?;
        Ok(Self {
            user_ids,
            users,
            user_index,
            item_ids,
            items,
            item_index,
        })
    }

    pub fn user_dim(&self) -> usize {
        self.users.first().map_or(0, Vec::len)
    }

    pub fn item_dim(&self) -> usize {
        self.items.first().map_or(0, Vec::len)
    }

    pub fn user_id(&self, index: usize) -> &str {
        &self.user_ids[index]
    }

    pub fn item_id(&self, index: usize) -> &str {
        &self.item_ids[index]
    }
}

#[derive(Debug, Clone)]
struct ReplayStep {
    timestamp: i64,
    user: usize,
    /// `(item, logged reward)`, ascending by item index.
    events: Vec<(usize, f64)>,
}

/// Replays a logged interaction file. Rows sharing `(timestamp, user_id)`
/// form one step whose candidates are the logged items.
#[derive(Debug, Clone)]
pub struct ReplayEnv {
    features: FeatureBundle,
    steps: Vec<ReplayStep>,
}

impl ReplayEnv {
    pub fn from_file(log: impl AsRef<Path>, features: FeatureBundle) -> Result<Self, EnvError> {
        let path = log.as_ref();
        let mut reader = csv_reader(path)?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let expected = ["timestamp", "user_id", "item_id", "reward"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(EnvError::Parse {
                path: path.display().to_string(),
                line: 1,
                message: format!("header must be `{}`", expected.join(",")),
            });
        }
        let mut groups: Vec<ReplayStep> = Vec::new();
        let mut open: HashMap<(i64, usize), usize> = HashMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let parse_err = |message: String| EnvError::Parse {
                path: path.display().to_string(),
                line,
                message,
            };
            if record.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
            }
            let timestamp: i64 = record[0]
                .parse()
                .map_err(|_| parse_err(format!("bad timestamp `{}`", &record[0])))?;
            let unknown = |kind: &'static str, id: &str| EnvError::UnknownId {
                path: path.display().to_string(),
                line,
                kind,
                id: id.to_string(),
            };
            let user = *features.user_index.get(&record[1]).ok_or_else(|| unknown("user", &record[1]))?;
            let item = *features.item_index.get(&record[2]).ok_or_else(|| unknown("item", &record[2]))?;
            let reward: f64 = record[3]
                .parse()
                .ok()
                .filter(|r: &f64| r.is_finite())
                .ok_or_else(|| parse_err(format!("bad reward `{}`", &record[3])))?;
            let slot = *open.entry((timestamp, user)).or_insert_with(|| {
                groups.push(ReplayStep {
                    timestamp,
                    user,
                    events: Vec::new(),
                });
                groups.len() - 1
            });
            let events = &mut groups[slot].events;
            if events.iter().any(|&(a, _)| a == item) {
                return Err(parse_err(format!("item `{}` repeated within one step", &record[2])));
            }
            events.push((item, reward));
        }
        for g in &mut groups {
            g.events.sort_by_key(|&(a, _)| a);
        }
        groups.sort_by_key(|g| g.timestamp);
        Ok(Self {
            features,
            steps: groups,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn features(&self) -> &FeatureBundle {
        &self.features
    }
}

impl ContextFeatures for ReplayEnv {
    fn num_users(&self) -> usize {
        self.features.users.len()
    }

    fn num_items(&self) -> usize {
        self.features.items.len()
    }

    fn user_context(&self, user: usize) -> &[f64] {
        &self.features.users[user]
    }

    fn item_observed(&self, item: usize) -> &[f64] {
        &self.features.items[item]
    }
}

impl Environment for ReplayEnv {
    fn context(&self, t: u64) -> Option<StepContext> {
        let step = self.steps.get(t as usize)?;
        Some(StepContext {
            t,
            user: step.user,
            period: TimePeriod::from_unix_seconds(step.timestamp),
            candidates: step.events.iter().map(|&(a, _)| a).collect(),
        })
    }

    fn observe(&self, ctx: &StepContext, item: usize) -> f64 {
        self.steps[ctx.t as usize]
            .events
            .iter()
            .find(|&&(a, _)| a == item)
            .map_or(0.0, |&(_, r)| r)
    }

    fn true_reward(&self, _ctx: &StepContext, _item: usize) -> Option<f64> {
        None
    }

    fn horizon(&self) -> Option<u64> {
        Some(self.steps.len() as u64)
    }
}
