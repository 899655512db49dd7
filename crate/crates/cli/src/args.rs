//! Command-line flags and the resolved [`RunConfig`] for `train` and `eval`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use gocn::{GocConfig, ModelConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::synth_spec::SynthSpec;

#[derive(Debug, Parser)]
#[command(name = "gocn", version, about = "Graph optimized convolutional networks for node classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed and report test accuracy.
    Train(TrainArgs),
    /// Score a checkpoint written by `train --save`.
    Eval(EvalArgs),
    /// Run the oracle and invariant self-checks.
    Check(CheckArgs),
    /// Finite-difference check of end-to-end gradients on random instances.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Synthetic data, e.g. `blobs:n=60,c=3,m=3,noise=0/5/5`.
    #[arg(long)]
    pub synth: Option<SynthSpec>,
}

impl SourceArgs {
    pub fn source(&self) -> DataSource {
        match (&self.dataset, &self.synth) {
            (Some(dir), _) => DataSource::Dir(dir.clone()),
            (None, Some(spec)) => DataSource::Synth(spec.clone()),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "gocn")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    #[arg(long, default_value_t = 20.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    /// Power-iteration steps per sweep.
    #[arg(long = "T", default_value_t = 2)]
    pub t: usize,
    /// Alternating sweeps per layer.
    #[arg(long = "M", default_value_t = 3)]
    pub m: usize,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Divide the graph term of the multi-graph update by the weight total.
    #[arg(long)]
    pub normalized_multi_s: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// `citation`, `ratio:<labeled>,<val>` or `file`; defaults to `citation`
    /// for directories and `ratio:0.2,0.2` for synthetic data.
    #[arg(long)]
    pub split: Option<SplitSpec>,
    /// Append metrics records here instead of printing them.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one checkpoint per seed into this directory.
    #[arg(long)]
    pub save: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Checkpoint file written by `train --save`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Run a single group of checks.
    #[arg(long)]
    pub only: Option<String>,
    /// Bound on the power-iteration error at T = 50.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Check only this variant; by default both gocn and mgocn.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Graphs for the multi-graph instance.
    #[arg(long, default_value_t = 3)]
    pub graphs: usize,
    #[arg(long, default_value_t = 6)]
    pub nodes: usize,
    #[arg(long, default_value_t = 4)]
    pub features: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    #[arg(long, default_value_t = 20.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[arg(long = "T", default_value_t = 2)]
    pub t: usize,
    #[arg(long = "M", default_value_t = 3)]
    pub m: usize,
    #[arg(long)]
    pub normalized_multi_s: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "blobs")]
    pub synth: SynthSpec,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a split file drawn with `--split-seed`.
    #[arg(long)]
    pub split: Option<SplitSpec>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Dir(PathBuf),
    Synth(SynthSpec),
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            DataSource::Dir(dir) => dir
                .file_name()
                .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
            DataSource::Synth(spec) => spec.to_string(),
        }
    }

    pub fn default_split(&self) -> SplitSpec {
        match self {
            DataSource::Dir(_) => SplitSpec::Citation,
            DataSource::Synth(_) => SplitSpec::Ratio { labeled: 0.2, val: 0.2 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSpec {
    /// 20 labeled nodes per class, 300 validation, 1000 test.
    Citation,
    Ratio { labeled: f64, val: f64 },
    /// The split stored with the dataset.
    File,
}

impl FromStr for SplitSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "citation" => Ok(SplitSpec::Citation),
            "file" => Ok(SplitSpec::File),
            _ => {
                let rest = s
                    .strip_prefix("ratio:")
                    .ok_or_else(|| format!("unknown split {s:?}; expected citation, file or ratio:<labeled>,<val>"))?;
                let (a, b) = rest
                    .split_once(',')
                    .ok_or_else(|| format!("expected ratio:<labeled>,<val>, got {s:?}"))?;
                let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("invalid fraction {v:?}"));
                Ok(SplitSpec::Ratio {
                    labeled: parse(a)?,
                    val: parse(b)?,
                })
            }
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Citation => f.write_str("citation"),
            SplitSpec::File => f.write_str("file"),
            SplitSpec::Ratio { labeled, val } => write!(f, "ratio:{labeled:?},{val:?}"),
        }
    }
}

/// Model hyperparameters as given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFlags {
    pub variant: Variant,
    pub alpha: f64,
    pub gamma: f64,
    pub r: f64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub normalized_multi_s: bool,
}

impl From<&ModelArgs> for ModelFlags {
    fn from(a: &ModelArgs) -> Self {
        Self {
            variant: a.variant,
            alpha: a.alpha,
            gamma: a.gamma,
            r: a.r,
            t: a.t,
            m: a.m,
            hidden: a.hidden.clone(),
            lr: a.lr,
            max_epochs: a.max_epochs,
            patience: a.patience,
            weight_decay: a.weight_decay,
            dropout: a.dropout,
            normalized_multi_s: a.normalized_multi_s,
        }
    }
}

impl ModelFlags {
    pub fn goc(&self) -> GocConfig {
        let mut goc = GocConfig::default();
        goc.set_alpha(self.alpha);
        goc.gamma = self.gamma;
        goc.r = self.r;
        goc.power_steps = self.t;
        goc.sweeps = self.m;
        goc.normalized_multi_s = self.normalized_multi_s;
        goc
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig::with_hidden(self.variant, input_dim, &self.hidden, num_classes);
        cfg.goc = self.goc();
        cfg.learning_rate = self.lr;
        cfg.max_epochs = self.max_epochs;
        cfg.patience = self.patience;
        cfg.weight_decay = self.weight_decay;
        cfg.dropout = self.dropout;
        cfg.seed = seed;
        cfg
    }

    fn push_args(&self, out: &mut Vec<String>) {
        let mut flag = |k: &str, v: String| {
            out.push(format!("--{k}"));
            out.push(v);
        };
        flag("variant", self.variant.to_string());
        flag("alpha", format!("{:?}", self.alpha));
        flag("gamma", format!("{:?}", self.gamma));
        flag("r", format!("{:?}", self.r));
        flag("T", self.t.to_string());
        flag("M", self.m.to_string());
        flag("hidden", join(&self.hidden));
        flag("lr", format!("{:?}", self.lr));
        flag("max-epochs", self.max_epochs.to_string());
        flag("patience", self.patience.to_string());
        flag("weight-decay", format!("{:?}", self.weight_decay));
        flag("dropout", format!("{:?}", self.dropout));
        if self.normalized_multi_s {
            out.push("--normalized-multi-s".into());
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Everything a `train` invocation needs, with defaults resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub source: DataSource,
    pub model: ModelFlags,
    pub split: SplitSpec,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub save: Option<PathBuf>,
    pub jobs: usize,
}

impl From<&TrainArgs> for RunConfig {
    fn from(a: &TrainArgs) -> Self {
        let source = a.source.source();
        Self {
            command: "train".into(),
            split: a.split.unwrap_or_else(|| source.default_split()),
            source,
            model: ModelFlags::from(&a.model),
            seeds: a.seeds.clone(),
            out: a.out.clone(),
            save: a.save.clone(),
            jobs: a.jobs,
        }
    }
}

impl RunConfig {
    /// Command-line arguments (after the program name) that parse back to
    /// this configuration.
    pub fn to_args(&self) -> Vec<String> {
        let mut out = vec![self.command.clone()];
        match &self.source {
            DataSource::Dir(dir) => out.extend(["--dataset".into(), dir.display().to_string()]),
            DataSource::Synth(spec) => out.extend(["--synth".into(), spec.to_string()]),
        }
        self.model.push_args(&mut out);
        out.extend(["--seeds".into(), join(&self.seeds)]);
        out.extend(["--split".into(), self.split.to_string()]);
        if let Some(p) = &self.out {
            out.extend(["--out".into(), p.display().to_string()]);
        }
        if let Some(p) = &self.save {
            out.extend(["--save".into(), p.display().to_string()]);
        }
        out.extend(["--jobs".into(), self.jobs.to_string()]);
        out
    }

    #[cfg(test)]
    pub fn parse_from<I, S>(args: I) -> Result<Self, clap::Error>
    where
        I: IntoIterator<Item = S>,
        S: Into<std::ffi::OsString> + Clone,
    {
        let cli = Cli::try_parse_from(std::iter::once("gocn".into()).chain(args.into_iter().map(Into::into)))?;
        match cli.command {
            Command::Train(a) => Ok(RunConfig::from(&a)),
            _ => Err(clap::Error::raw(
                clap::error::ErrorKind::InvalidSubcommand,
                "only train invocations form a run configuration",
            )),
        }
    }
}
