use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyperbandit::harness::{
    self, ablation_config, benchmark_config, component_ablation_jobs, emit_outputs, mean_std, numerical_rank,
    run_jobs, standard_baselines, summarize, warm_start_jobs, EnvironmentSpec, ExperimentConfig, HarnessError,
    MetricsLog, PolicyJob, PolicySpec, Schedule,
};
use hyperbandit::hypernet::HyperNetwork;
use hyperbandit::policy::HyperBanditConfig;
use hyperbandit::temporal::{EmbeddingMode, TimePeriod};

#[derive(Parser)]
#[command(name = "hyperbandit", version, about = "Periodic contextual bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the main policy and its baselines from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HyperBandit+ against LinUCB, Restart-UCB and random on one synthetic world.
    RegretCompare(Common),
    /// Singular values of every period's preference matrix.
    RankReport {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        config: Option<PathBuf>,
        /// A hypernetwork checkpoint written by `run`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cold start against oracle warm starts over the first online steps.
    WarmStartAblation {
        #[command(flatten)]
        common: Common,
        /// Corruption levels of the oracle provider.
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        corruption: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
    },
    /// Ridge updates and hypernetwork updates switched on and off.
    ComponentAblation(Common),
    /// Print a default config as TOML.
    DefaultConfig {
        /// The binary-click variant used for ablations.
        #[arg(long)]
        ablation: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Defaults to the built-in periodic benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl Common {
    fn load(&self, fallback: fn() -> ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => fallback(),
        };
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let logs = harness::run_all(&cfg)?;
            print_summary(&logs);
            write(&logs, out.as_deref().unwrap_or(&cfg.output_dir))
        }
        Command::RegretCompare(common) => {
            let mut cfg = common.load(benchmark_config)?;
            main_policy(&cfg)?;
            synthetic_only(&cfg, "regret-compare")?;
            cfg.baselines = standard_baselines();
            let logs = harness::run_all(&cfg)?;
            println!("{:<20} {:>22} {:>16}", "policy", "final regret", "regret ratio");
            for label in labels(&logs) {
                let regret = collect(&logs, &label, |l| l.dynamic_regret().and_then(|r| r.last().copied()));
                let ratio = collect(&logs, &label, harness::regret_ratio);
                println!("{label:<20} {:>22} {:>16}", fmt_mean_std(&regret, 1), fmt_mean_std(&ratio, 3));
            }
            write_opt(&logs, common.out.as_deref())
        }
        Command::RankReport { config, checkpoint, out } => {
            if let Some(path) = checkpoint {
                let net = HyperNetwork::load(&path)?;
                let mode = if net.input_dim() == EmbeddingMode::OneHot.dim() {
                    EmbeddingMode::OneHot
                } else {
                    EmbeddingMode::Euler
                };
                let report = net.rank_report(&mode.table())?;
                println!("tau {} ({})", net.tau(), if net.tau() == 0 { "full rank" } else { "low rank" });
                print_rank_rows("checkpoint", None, &report);
                return Ok(());
            }
            let Some(path) = config else {
                return Err(HarnessError::Config("rank-report needs --config or --checkpoint".into()));
            };
            let cfg = ExperimentConfig::load(&path)?;
            main_policy(&cfg)?;
            let logs = harness::run_experiment(&cfg)?;
            for log in &logs {
                if let Some(report) = &log.rank_report {
                    print_rank_rows(&log.policy, Some(log.seed), report);
                }
            }
            write_opt(&logs, out.as_deref())
        }
        Command::WarmStartAblation { common, corruption, steps } => {
            let cfg = common.load(benchmark_config)?;
            let hb = main_policy(&cfg)?;
            synthetic_only(&cfg, "warm-start-ablation")?;
            if corruption.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(HarnessError::Config("corruption levels must lie in [0, 1]".into()));
            }
            let schedule = Schedule {
                total_steps: steps,
                batch_steps: cfg.schedule.batch_steps,
            };
            let jobs = warm_start_jobs(&hb, &corruption);
            let logs = run_jobs(&cfg.environment, &schedule, &cfg.seeds, &jobs)?;
            let cold = collect(&logs, "cold", final_true_reward);
            let (cold_mean, _) = mean_std(&cold);
            println!("{:<16} {:>22} {:>10}", "start", "true reward", "gain");
            for job in &jobs {
                let values = collect(&logs, &job.label, final_true_reward);
                let (mean, _) = mean_std(&values);
                let gain = (mean - cold_mean) / cold_mean.abs();
                println!("{:<16} {:>22} {:>9.1}%", job.label, fmt_mean_std(&values, 1), 100.0 * gain);
            }
            write_opt(&logs, common.out.as_deref())
        }
        Command::ComponentAblation(common) => {
            let cfg = common.load(ablation_config)?;
            let hb = main_policy(&cfg)?;
            let jobs = component_ablation_jobs(&hb);
            let logs = run_jobs(&cfg.environment, &cfg.schedule, &cfg.seeds, &jobs)?;
            print_summary(&logs);
            write_opt(&logs, common.out.as_deref())
        }
        Command::DefaultConfig { ablation } => {
            let cfg = if ablation { ablation_config() } else { benchmark_config() };
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

fn main_policy(cfg: &ExperimentConfig) -> Result<HyperBanditConfig, HarnessError> {
    match &cfg.policy {
        PolicySpec::Hyperbandit(hb) => Ok(hb.clone()),
        other => Err(HarnessError::Config(format!(
            "the main policy must be hyperbandit, found {}",
            PolicyJob::new(other.clone()).label
        ))),
    }
}

fn synthetic_only(cfg: &ExperimentConfig, command: &str) -> Result<(), HarnessError> {
    match cfg.environment {
        EnvironmentSpec::Synthetic(_) => Ok(()),
        EnvironmentSpec::Replay { .. } => Err(HarnessError::Config(format!(
            "{command} needs a synthetic environment"
        ))),
    }
}

fn final_true_reward(log: &MetricsLog) -> Option<f64> {
    log.accumulated_true_reward()?.last().copied()
}

fn labels(logs: &[MetricsLog]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for log in logs {
        if !out.contains(&log.policy) {
            out.push(log.policy.clone());
        }
    }
    out
}

fn collect(logs: &[MetricsLog], label: &str, f: impl Fn(&MetricsLog) -> Option<f64>) -> Vec<f64> {
    logs.iter().filter(|l| l.policy == label).filter_map(f).collect()
}

fn fmt_mean_std(values: &[f64], digits: usize) -> String {
    if values.is_empty() {
        return "n/a".into();
    }
    match mean_std(values) {
        (mean, Some(std)) => format!("{mean:.digits$} ± {std:.digits$}"),
        (mean, None) => format!("{mean:.digits$}"),
    }
}

fn print_summary(logs: &[MetricsLog]) {
    println!("{:<20} {:<30} {:>3} {:>14} {:>12}", "policy", "metric", "n", "mean", "std");
    for row in summarize(logs) {
        let std = row.std.map(|s| format!("{s:.4}")).unwrap_or_default();
        println!("{:<20} {:<30} {:>3} {:>14.4} {:>12}", row.policy, row.metric, row.n, row.mean, std);
    }
}

fn print_rank_rows(label: &str, seed: Option<u64>, report: &[(TimePeriod, Vec<f64>)]) {
    for (p, sv) in report {
        let shown: Vec<String> = sv.iter().take(6).map(|s| format!("{s:.4}")).collect();
        let seed = seed.map(|s| format!(" seed {s}")).unwrap_or_default();
        println!(
            "{label}{seed} period {:>2} (day {} block {}) rank {} sv [{}]",
            p.index(),
            p.day(),
            p.block(),
            numerical_rank(sv),
            shown.join(", ")
        );
    }
}

fn write(logs: &[MetricsLog], dir: &Path) -> Result<(), HarnessError> {
    let files = emit_outputs(logs, dir)?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn write_opt(logs: &[MetricsLog], dir: Option<&Path>) -> Result<(), HarnessError> {
    match dir {
        Some(dir) => write(logs, dir),
        None => Ok(()),
    }
}
