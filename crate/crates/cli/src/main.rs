//! `bxrl`: train highway agents, roll them out, evaluate behavior measures
//! and run the explainers from the command line.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! runtime failures.

mod commands;
mod reference;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable holding the default directory for training runs.
pub const RUN_ROOT_ENV: &str = "BXRL_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(
    name = "bxrl",
    version,
    about = "Behavior-explainable RL workbench for a four-lane highway task"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a PPO agent and write a run directory.
    Train(TrainArgs),
    /// Roll out a checkpoint (or the uniform random policy) and write an archive.
    Rollout(RolloutArgs),
    /// Evaluate a behavior measure on a checkpoint.
    Measure(MeasureArgs),
    /// Explain a behavior measure.
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Write the bundled collision-scenario fixture.
    Fixture(FixtureArgs),
    /// Write a freshly initialized checkpoint.
    InitCheckpoint(InitArgs),
    /// Print the flag reference for every command as Markdown.
    Reference,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Master seed for environments, sampling and initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total environment steps; rounded up to whole batches.
    #[arg(long)]
    pub timesteps: Option<u64>,
    /// Behavior measure or scenario file to log every epoch (repeatable).
    #[arg(long = "measure", value_name = "FILE")]
    pub measures: Vec<PathBuf>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimizer used for the update phase.
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Per-epoch limit on the empirical KL between old and new policy.
    #[arg(long)]
    pub kl_budget: Option<f64>,
    /// Parallel environments per epoch.
    #[arg(long)]
    pub envs: Option<usize>,
    /// Steps collected per environment per epoch.
    #[arg(long)]
    pub steps_per_env: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Passes over each batch.
    #[arg(long)]
    pub update_epochs: Option<usize>,
    /// Write a rollout archive every N epochs (0 disables).
    #[arg(long)]
    pub archive_every: Option<u64>,
    /// Skip the per-epoch training record dumps.
    #[arg(long)]
    pub no_records: bool,
    /// Trainer configuration as JSON; explicit flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to $BXRL_RUN_ROOT/seed_<seed> or runs/seed_<seed>.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    /// Checkpoint to roll out.
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "random",
        conflicts_with = "random"
    )]
    pub checkpoint: Option<PathBuf>,
    /// Use the uniform random policy instead of a checkpoint.
    #[arg(long)]
    pub random: bool,
    /// Seed for environment resets and action sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of episodes.
    #[arg(long, default_value_t = 10)]
    pub episodes: u64,
    /// Output archive path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Archive encoding.
    #[arg(long, value_enum, default_value_t = ArchiveFormat::Jsonl)]
    pub format: ArchiveFormat,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchiveFormat {
    Jsonl,
    Binary,
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Behavior measure or scenario file.
    #[arg(long, value_name = "FILE")]
    pub scenarios: PathBuf,
    /// Print a JSON report instead of the bare value.
    #[arg(long)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
pub enum ExplainCommand {
    /// Attribute a measure to the training records of one epoch.
    Influence(InfluenceArgs),
    /// Attribute a measure to observation features.
    Shapley(ShapleyArgs),
    /// Find nearby parameters that reach a target measure value.
    Counterfactual(CounterfactualArgs),
}

#[derive(Args, Debug)]
pub struct InfluenceArgs {
    /// Run directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    /// Epoch whose record dump is scored.
    #[arg(long)]
    pub epoch: u64,
    /// Behavior measure or scenario file.
    #[arg(long, value_name = "FILE")]
    pub measure: PathBuf,
    /// Rows shown in the printed table.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// CSV report path; defaults to <run>/explain/influence_<epoch>_<measure>.csv.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ShapleyArgs {
    /// Use the tabular chain MDP with exact marginalization.
    #[arg(long, conflicts_with_all = ["checkpoint", "measure", "dataset"])]
    pub toy: bool,
    /// Quantity explained on the tabular MDP.
    #[arg(long, value_enum, default_value_t = ToyTarget::Return, requires = "toy")]
    pub toy_target: ToyTarget,
    /// Probability of moving right in each of the five toy states.
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.7,0.6,0.8,0.3", requires = "toy")]
    pub toy_policy: Vec<f64>,
    /// Checkpoint explained in empirical mode.
    #[arg(long, value_name = "FILE", required_unless_present = "toy")]
    pub checkpoint: Option<PathBuf>,
    /// Behavior measure or scenario file (empirical mode).
    #[arg(long, value_name = "FILE", required_unless_present = "toy")]
    pub measure: Option<PathBuf>,
    /// Rollout archive whose observations form the marginalization pool.
    #[arg(long, value_name = "FILE", required_unless_present = "toy")]
    pub dataset: Option<PathBuf>,
    /// Feature players in empirical mode.
    #[arg(long, value_enum, default_value_t = GroupingArg::Rows)]
    pub grouping: GroupingArg,
    /// Entry-wise tolerance for matching observations.
    #[arg(long, default_value_t = bxrl::explain::DEFAULT_MATCH_TOLERANCE)]
    pub tolerance: f64,
    /// CSV report path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum ToyTarget {
    /// Expected discounted return.
    Return,
    /// Mean probability of moving right over all states.
    RightProb,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum GroupingArg {
    Rows,
    Columns,
    Individual,
}

#[derive(Args, Debug)]
pub struct CounterfactualArgs {
    /// Starting checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Behavior measure or scenario file.
    #[arg(long, value_name = "FILE")]
    pub measure: PathBuf,
    /// Target measure value.
    #[arg(long)]
    pub target: f64,
    /// Weight of the KL proximity term.
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
    /// Maximum optimizer steps.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Steps between resets of the KL reference policy.
    #[arg(long, default_value_t = 25)]
    pub pivot_every: usize,
    /// Use a Huber penalty with this width instead of |m − m*|.
    #[arg(long)]
    pub huber: Option<f64>,
    /// Archive whose observations join the measure's own in the KL term.
    #[arg(long, value_name = "FILE")]
    pub eval: Option<PathBuf>,
    /// Cap on observations taken from --eval.
    #[arg(long, default_value_t = 256)]
    pub eval_limit: usize,
    /// JSON report path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Where to save the counterfactual parameters.
    #[arg(long, value_name = "FILE")]
    pub out_checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    /// Output path.
    #[arg(long, value_name = "FILE", default_value = "m_c.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero the policy head so every action has probability 1/5.
    #[arg(long)]
    pub uniform: bool,
    /// Output checkpoint path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = matches!(err.downcast_ref::<bxrl::Error>(), Some(bxrl::Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
