//! Command-line surface: subcommands and the shared config flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "evoprompt",
    version,
    about = "Online prompt-evolution engine: run task suites, replay traces, manage guideline memory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a task suite with the synthetic environment.
    Run(RunArgs),
    /// Re-run the synthesis pipeline over a recorded trace, without
    /// executing any agent; prints the memory deltas it would make.
    Replay(ReplayArgs),
    /// Inspect or maintain strategic memory snapshots.
    Memory(MemoryArgs),
}

/// Engine settings. Precedence: flags > environment variables
/// (`EVOPROMPT_*`) > config file > built-in defaults.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON config file mirroring the engine config fields.
    #[arg(long, global = false)]
    pub config: Option<PathBuf>,
    /// Candidate guidelines per trigger.
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// Parallel perspective streams.
    #[arg(long)]
    pub k_streams: Option<usize>,
    /// Minimum confidence for strategic promotion.
    #[arg(long)]
    pub c_thresh: Option<f64>,
    /// Minimum confidence to apply a guideline.
    #[arg(long)]
    pub accept_thresh: Option<f64>,
    /// Bucket size that triggers optimization when exceeded.
    #[arg(long)]
    pub per_domain_cap: Option<usize>,
    /// Bucket size the optimizer aims for.
    #[arg(long)]
    pub target_after_opt: Option<usize>,
    #[arg(long)]
    pub max_opt_iterations: Option<usize>,
    /// Limit on tactical guidelines per task.
    #[arg(long)]
    pub tactical_cap: Option<usize>,
    /// Analyze every N successful steps.
    #[arg(long)]
    pub enhancement_frequency: Option<u32>,
    /// Guideline placement: system, user, split, or hybrid.
    #[arg(long)]
    pub placement: Option<String>,
    /// Provider kind: live or scripted.
    #[arg(long)]
    pub provider: Option<String>,
    /// Fixture directory for the scripted provider.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Chat-completion endpoint URL for the live provider.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name for the live provider.
    #[arg(long)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[arg(long)]
    pub credential_env: Option<String>,
    /// Root directory for strategic-memory snapshots.
    #[arg(long)]
    pub memory_root: Option<PathBuf>,
    /// Independent runs per task, OR-aggregated.
    #[arg(long)]
    pub runs_per_task: Option<usize>,
    /// Disable the evolution loop (static prompts).
    #[arg(long)]
    pub no_evolution: bool,
    /// Write per-episode NDJSON traces into this directory.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task suite file: a JSON array of task records.
    #[arg(long)]
    pub suite: PathBuf,
    /// Where to write the JSON report.
    #[arg(long, default_value = "report.json")]
    pub report_json: PathBuf,
    /// Where to write the plain-text report.
    #[arg(long, default_value = "report.txt")]
    pub report_text: PathBuf,
    /// Answer meta-agent calls with the built-in deterministic responder
    /// and record every response as a fixture in this directory, ready for
    /// later `--provider scripted` replays.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// NDJSON trace log, one step object per line.
    #[arg(long)]
    pub trace: PathBuf,
    /// Task id for provenance (defaults to the trace file stem).
    #[arg(long)]
    pub task_id: Option<String>,
    /// Task instruction bound into rubrics (defaults to the task id).
    #[arg(long)]
    pub task_instruction: Option<String>,
    /// Role description bound into rubrics.
    #[arg(long, default_value = "(unknown role)")]
    pub agent_role: String,
    /// Base system prompt the replayed prompt state starts from.
    #[arg(long, default_value = "You are an agent.")]
    pub base_prompt: String,
    /// Perspective stream label the replay runs under.
    #[arg(long, default_value = "efficiency")]
    pub stream: String,
    /// Answer meta-agent calls with the built-in deterministic responder
    /// and record fixtures in this directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct MemoryArgs {
    #[command(subcommand)]
    pub action: MemoryAction,
}

#[derive(Debug, Subcommand)]
pub enum MemoryAction {
    /// Print every snapshot's buckets with confidences.
    Inspect {
        /// Only this stream.
        #[arg(long)]
        stream: Option<String>,
        /// Only this agent.
        #[arg(long)]
        agent: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Force-run the optimization pipeline on one domain bucket.
    Optimize {
        #[arg(long)]
        stream: String,
        #[arg(long)]
        agent: String,
        /// Domain to optimize (snake_case name).
        #[arg(long)]
        domain: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Delete a stream's snapshots (asks for confirmation).
    Clear {
        #[arg(long)]
        stream: String,
        /// Skip the confirmation prompt.
        #[arg(long)]
        yes: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
}
