use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldas::simulate::Design;
use ldas::{MissingPolicy, Mode};

#[derive(Parser, Debug, Clone)]
#[command(name = "ldas", version, about = "Latent belief types in categorical survey data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Run the static or dynamic sampler and write posterior draws.
    Fit(FitArgs),
    /// Counting rule, scree and BIC over a range of K.
    Select(SelectArgs),
    /// Synthetic data or the identification Monte Carlo.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Point estimates, intervals, memberships and diagnostics from draws.
    Summarize(SummarizeArgs),
    /// Second-step regression with type-specific slopes.
    Regress(RegressArgs),
    /// Index of consumer sentiment from relative scores.
    Ics(IcsArgs),
    /// Re-run a command from its manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Select(_) => "select",
            Command::Simulate(SimulateCommand::Data(_)) => "simulate data",
            Command::Simulate(SimulateCommand::Recovery(_)) => "simulate recovery",
            Command::Summarize(_) => "summarize",
            Command::Regress(_) => "regress",
            Command::Ics(_) => "ics",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Fit(a) => Some(&mut a.out),
            Command::Select(a) => Some(&mut a.out),
            Command::Simulate(SimulateCommand::Data(a)) => Some(&mut a.out),
            Command::Simulate(SimulateCommand::Recovery(a)) => Some(&mut a.out),
            Command::Summarize(a) => Some(&mut a.out),
            Command::Regress(a) => Some(&mut a.out),
            Command::Ics(a) => Some(&mut a.out),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Static,
    Dynamic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Static => Mode::Static,
            ModeArg::Dynamic => Mode::Dynamic,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyArg {
    DropFromLikelihood,
    OwnCategory,
}

impl From<PolicyArg> for MissingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::DropFromLikelihood => MissingPolicy::DropFromLikelihood,
            PolicyArg::OwnCategory => MissingPolicy::OwnCategory,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignArg {
    Identified,
    UnderIdentified,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Identified => Design::Identified,
            DesignArg::UnderIdentified => Design::UnderIdentified,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Survey responses (CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Ingest schema (JSON).
    #[arg(long)]
    pub schema: PathBuf,
    /// Overrides the missing-value policy of every question.
    #[arg(long, value_enum)]
    pub missing_policy: Option<PolicyArg>,
    /// Overrides the mode declared in the schema.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Args, Debug, Clone)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Independent chains, run concurrently and merged in order.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Prior mass on each type's anchored category.
    #[arg(long, default_value_t = 10.0)]
    pub eta_diag: f64,
    /// Symmetric mixture prior (static mode).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = ldas::dynamic_sampler::DEFAULT_V0)]
    pub v0: f64,
    #[arg(long, default_value_t = ldas::dynamic_sampler::DEFAULT_S0)]
    pub s0: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sgld_a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sgld_b: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sgld_c: f64,
    /// Mini-batch size for the logit gradient (dynamic mode).
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// BIC is evaluated for every K from 1 to this value.
    #[arg(long, default_value_t = 4)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0.9)]
    pub scree_threshold: f64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone)]
pub enum SimulateCommand {
    /// One synthetic dataset with its schema and true parameters.
    Data(SimDataArgs),
    /// Correlation of estimated and true response distributions over sample sizes.
    Recovery(RecoveryArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SimDataArgs {
    #[arg(long, value_enum, default_value_t = DesignArg::Identified)]
    pub design: DesignArg,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub questions: Option<usize>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Total respondents, split evenly over groups or periods.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Simulate a dynamic dataset over this many periods.
    #[arg(long)]
    pub periods: Option<usize>,
    /// Random-walk variance of the logits (dynamic).
    #[arg(long, default_value_t = 0.05)]
    pub sigma2: f64,
    /// Per-type treatment slopes; writes an outcome file when given.
    #[arg(long, value_delimiter = ',')]
    pub outcome_slopes: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RecoveryArgs {
    #[arg(long, value_enum, default_value_t = DesignArg::Identified)]
    pub design: DesignArg,
    #[arg(long, value_delimiter = ',', default_values_t = [500, 2000, 5000])]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    /// Anchored-category mass of the Dirichlet the true distributions are drawn from.
    #[arg(long, default_value_t = ldas::simulate::DEFAULT_ANCHOR)]
    pub truth_anchor: f64,
    #[arg(long, default_value_t = ldas::simulate::DEFAULT_ANCHOR)]
    pub eta_diag: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SummarizeArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    /// Rank questions by Rao distance between two types (1-based), e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    pub compare: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RegressArgs {
    /// CSV with the id, outcome, treatment and control columns.
    #[arg(long)]
    pub data: PathBuf,
    /// `membership.csv` written by `summarize`.
    #[arg(long)]
    pub membership: PathBuf,
    #[arg(long, default_value = "id")]
    pub id_column: String,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    #[arg(long, value_delimiter = ',')]
    pub controls: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct IcsArgs {
    /// CSV whose first column labels the row and whose next five columns are
    /// relative scores.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the original one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
