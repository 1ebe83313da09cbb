use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "crowdseg", version, about = "Crowd segmentation campaign pipeline")]
pub struct Cli {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the box-prompted assist service.
    Serve(ServeArgs),
    /// Validate a campaign manifest (or platform export) and write it in canonical form.
    Ingest(IngestArgs),
    /// Fuse annotator masks with a thresholded majority vote.
    Merge(MergeArgs),
    /// Score predicted label maps against ground truth.
    Eval(EvalArgs),
    /// Generate synthetic training images from ground-truth labels.
    Synth(SynthArgs),
    /// Assemble a dataset variant manifest.
    Build(BuildArgs),
    /// Render evaluation reports side by side with group comparisons.
    Report(ReportArgs),
    /// Write the bundled demo campaign.
    Demo(DemoArgs),
    /// merge, eval, synth, build (all variants) and report in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Builtin,
    Remote,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long)]
    pub remote_url: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Canonical campaign manifest.
    #[arg(long, conflicts_with = "platform")]
    pub campaign: Option<PathBuf>,
    /// Platform task export (JSON array of tasks).
    #[arg(long)]
    pub platform: Option<PathBuf>,
    /// Class names for a platform export, in palette order.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long, default_value = "platform")]
    pub task_id: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<u16>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Campaign whose palette decodes the label maps.
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Percentile bootstrap with this many resamples instead of the t interval.
    #[arg(long)]
    pub bootstrap: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Toy,
    Remote,
}

#[derive(Debug, Args, Clone)]
pub struct GeneratorFlags {
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorArg>,
    #[arg(long)]
    pub generator_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub generator: GeneratorFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct GateFlags {
    #[arg(long)]
    pub threshold: Option<u16>,
    #[arg(long)]
    pub min_dsc: Option<f64>,
    #[arg(long)]
    pub min_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    /// control, enlarged or enhanced.
    #[arg(long)]
    pub variant: Option<String>,
    /// Output directory of `synth`.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub gate: GateFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TTestArg {
    Pooled,
    Welch,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `NAME=DIR` of an `eval` output; the first is the baseline.
    #[arg(long = "eval", required = true)]
    pub evals: Vec<String>,
    #[arg(long, value_enum, default_value = "pooled")]
    pub test: TTestArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_pool: Option<usize>,
    #[arg(long)]
    pub n_crowd: Option<usize>,
    #[arg(long)]
    pub annotators: Option<usize>,
    #[arg(long)]
    pub size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[command(flatten)]
    pub gate: GateFlags,
    #[command(flatten)]
    pub generator: GeneratorFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
