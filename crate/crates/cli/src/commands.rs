use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use gocn::datasets::{self, make_citation_split, make_ratio_split, DataError};
use gocn::model::{self, ModelError};
use gocn::propagation::PropagationError;
use gocn::rng::streams;
use gocn::tape::FiniteDiff;
use gocn::verify::{self, SuiteOptions};
use gocn::{Dataset, ModelConfig, ModelParams, SeededRng, Split, TrainReport, Variant};
use log::info;
use serde::{Deserialize, Serialize};

use crate::args::{
    CheckArgs, DataSource, EvalArgs, GradcheckArgs, ModelFlags, RunConfig, SplitSpec, SynthArgs,
};

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: a check failed or training broke down.
    Failed(anyhow::Error),
    /// Exit 2: bad flags or an invalid configuration.
    Usage(anyhow::Error),
    /// Exit 3: missing or malformed data.
    Data(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Failed(e) | Failure::Usage(e) | Failure::Data(e) => e,
        }
    }
}

pub type Outcome = Result<(), Failure>;

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.into())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Propagation(PropagationError::Config(_)) => Failure::Usage(e.into()),
            ModelError::Data(d) => d.into(),
            other => Failure::Failed(other.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsEcho {
    pub alpha: f64,
    pub gamma: f64,
    pub r: f64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
}

impl From<&ModelFlags> for ParamsEcho {
    fn from(f: &ModelFlags) -> Self {
        Self {
            alpha: f.alpha,
            gamma: f.gamma,
            r: f.r,
            t: f.t,
            m: f.m,
            hidden: f.hidden.clone(),
            lr: f.lr,
            weight_decay: f.weight_decay,
            dropout: f.dropout,
        }
    }
}

/// One line of `train` output. Accuracies over empty node sets are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub variant: Variant,
    pub seed: u64,
    pub test_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub epochs_run: usize,
    pub best_val_epoch: usize,
    pub final_train_loss: f64,
    pub params: ParamsEcho,
    /// Final-sweep graph weights per layer (mgocn only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub graph_weights: Vec<Vec<f64>>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl MetricsRecord {
    fn new(dataset: &str, flags: &ModelFlags, seed: u64, report: &TrainReport) -> Self {
        Self {
            dataset: dataset.to_owned(),
            variant: flags.variant,
            seed,
            test_accuracy: finite(report.test_accuracy),
            val_accuracy: finite(report.val_accuracy),
            epochs_run: report.epochs_run,
            best_val_epoch: report.best_val_epoch,
            final_train_loss: report.final_train_loss(),
            params: ParamsEcho::from(flags),
            graph_weights: report.graph_weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Trained weights with everything needed to score them again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dataset: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub split: SplitIndices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub dataset: String,
    pub variant: Variant,
    pub seed: u64,
    pub test_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
}

fn load_source(source: &DataSource) -> Result<Dataset, Failure> {
    Ok(match source {
        DataSource::Dir(dir) => datasets::load_dataset(dir)?,
        DataSource::Synth(spec) => spec.generate()?,
    })
}

pub fn make_split(dataset: &Dataset, spec: SplitSpec, seed: u64) -> Result<Split, DataError> {
    let mut rng = SeededRng::seed_from(seed).fork(streams::SPLIT);
    match spec {
        SplitSpec::Citation => make_citation_split(dataset, &mut rng),
        SplitSpec::Ratio { labeled, val } => make_ratio_split(dataset, labeled, val, &mut rng),
        SplitSpec::File => dataset
            .split()
            .cloned()
            .ok_or_else(|| DataError::InvalidSplit("the dataset has no stored split".into())),
    }
}

/// Appends JSON lines to a file or stdout, flushing after every record.
struct RecordSink {
    file: Option<File>,
}

impl RecordSink {
    fn open(path: Option<&Path>) -> Result<Self, Failure> {
        let file = match path {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("cannot open {}", p.display()))
                    .map_err(Failure::Usage)?,
            ),
            None => None,
        };
        Ok(Self { file })
    }

    fn write<T: Serialize>(&mut self, record: &T) -> Result<(), Failure> {
        let line = serde_json::to_string(record).map_err(|e| Failure::Failed(e.into()))?;
        let result = match &mut self.file {
            Some(f) => writeln!(f, "{line}").and_then(|_| f.flush()),
            None => {
                let mut out = io::stdout().lock();
                writeln!(out, "{line}").and_then(|_| out.flush())
            }
        };
        result.context("cannot write metrics").map_err(Failure::Failed)
    }
}

fn train_one(run: &RunConfig, dataset: &Dataset, name: &str, seed: u64) -> Result<(MetricsRecord, Checkpoint), Failure> {
    let split = make_split(dataset, run.split, seed)?;
    let config = run.model.model_config(dataset.feature_dim(), dataset.num_classes(), seed);
    let (params, report) = model::train(&config, dataset, &split)?;
    let record = MetricsRecord::new(name, &run.model, seed, &report);
    let checkpoint = Checkpoint {
        dataset: name.to_owned(),
        seed,
        config,
        params,
        split: SplitIndices {
            train: split.train,
            val: split.val,
            test: split.test,
        },
    };
    Ok((record, checkpoint))
}

fn save_checkpoint(dir: &Path, checkpoint: &Checkpoint) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Failed)?;
    let path = dir.join(format!("seed-{}.json", checkpoint.seed));
    let body = serde_json::to_string(checkpoint).map_err(|e| Failure::Failed(e.into()))?;
    fs::write(&path, body)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Failed)
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn train(run: &RunConfig) -> Outcome {
    if run.seeds.is_empty() {
        return Err(Failure::Usage(anyhow!("at least one seed is required")));
    }
    if run.jobs == 0 {
        return Err(Failure::Usage(anyhow!("--jobs must be at least 1")));
    }
    let dataset = load_source(&run.source)?;
    let name = run.source.name();
    run.model
        .model_config(dataset.feature_dim(), dataset.num_classes(), 0)
        .validate(&dataset)?;
    info!("resolved invocation: gocn {}", run.to_args().join(" "));

    let sink = Mutex::new(RecordSink::open(run.out.as_deref())?);
    let results: Mutex<Vec<(u64, Result<MetricsRecord, Failure>)>> = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&seed) = run.seeds.get(i) else { break };
        let result = train_one(run, &dataset, &name, seed).and_then(|(record, checkpoint)| {
            if let Some(dir) = &run.save {
                save_checkpoint(dir, &checkpoint)?;
            }
            sink.lock().unwrap().write(&record)?;
            Ok(record)
        });
        results.lock().unwrap().push((seed, result));
    };
    std::thread::scope(|s| {
        for _ in 1..run.jobs.min(run.seeds.len()) {
            s.spawn(worker);
        }
        worker();
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(seed, _)| *seed);
    let mut records = Vec::new();
    let mut first_failure = None;
    for (seed, result) in results {
        match result {
            Ok(r) => records.push(r),
            Err(e) => {
                eprintln!("seed {seed}: {:#}", e.error());
                first_failure.get_or_insert(e);
            }
        }
    }
    if !records.is_empty() {
        let test: Vec<f64> = records.iter().filter_map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&test);
        eprintln!(
            "{} on {name}: test accuracy {mean:.4} ± {std:.4} over {} seed(s)",
            run.model.variant,
            test.len()
        );
    }
    first_failure.map_or(Ok(()), Err)
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let body = fs::read_to_string(&args.model)
        .with_context(|| format!("cannot read {}", args.model.display()))
        .map_err(Failure::Data)?;
    let checkpoint: Checkpoint = serde_json::from_str(&body)
        .with_context(|| format!("{} is not a checkpoint", args.model.display()))
        .map_err(Failure::Data)?;
    let source = args.source.source();
    let dataset = load_source(&source)?;
    checkpoint.config.validate(&dataset)?;
    checkpoint.params.check_shapes(&checkpoint.config)?;
    let s = &checkpoint.split;
    let split = Split::new(s.train.clone(), s.val.clone(), s.test.clone(), dataset.n())?;
    let score = |nodes: &[usize]| -> Result<Option<f64>, Failure> {
        if nodes.is_empty() {
            return Ok(None);
        }
        Ok(Some(model::evaluate(&checkpoint.params, &checkpoint.config, &dataset, nodes)?))
    };
    let record = EvalRecord {
        dataset: source.name(),
        variant: checkpoint.config.variant,
        seed: checkpoint.seed,
        test_accuracy: score(&split.test)?,
        val_accuracy: score(&split.val)?,
        train_accuracy: score(&split.train)?,
    };
    RecordSink::open(args.out.as_deref())?.write(&record)
}

pub fn check(args: &CheckArgs) -> Outcome {
    if let Some(group) = &args.only {
        if !verify::GROUPS.contains(&group.as_str()) {
            return Err(Failure::Usage(anyhow!(
                "unknown check group {group:?}; expected one of {}",
                verify::GROUPS.join(", ")
            )));
        }
    }
    if let Some(t) = args.tolerance {
        if !(t > 0.0) {
            return Err(Failure::Usage(anyhow!("--tolerance must be positive")));
        }
    }
    let outcomes = verify::run_suite(&SuiteOptions {
        only: args.only.clone(),
        tolerance: args.tolerance,
        seed: args.seed,
    });
    let mut out = io::stdout().lock();
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{status} {}: {} ({})", o.group, o.name, o.detail);
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let _ = writeln!(out, "{passed}/{} checks passed", outcomes.len());
    if passed == outcomes.len() {
        Ok(())
    } else {
        Err(Failure::Failed(anyhow!("{} check(s) failed", outcomes.len() - passed)))
    }
}

pub fn gradcheck(args: &GradcheckArgs) -> Outcome {
    if args.dropout != 0.0 {
        return Err(Failure::Usage(anyhow!(
            "gradient checks need a deterministic forward pass; remove --dropout"
        )));
    }
    if !(args.tolerance > 0.0) || args.nodes == 0 || args.features == 0 || args.classes == 0 || args.graphs == 0 {
        return Err(Failure::Usage(anyhow!(
            "tolerance, nodes, features, classes and graphs must be positive"
        )));
    }
    if args.classes > args.nodes {
        return Err(Failure::Usage(anyhow!("need at least as many nodes as classes")));
    }
    let variants = match args.variant {
        Some(v) => vec![v],
        None => vec![Variant::Gocn, Variant::Mgocn],
    };
    let opts = FiniteDiff {
        tolerance: args.tolerance,
        ..FiniteDiff::default()
    };
    let mut worst = 0.0f64;
    let mut all_passed = true;
    let mut out = io::stdout().lock();
    for variant in variants {
        let m = if variant == Variant::Mgocn { args.graphs } else { 1 };
        for &seed in &args.seeds {
            let mut rng = SeededRng::seed_from(seed);
            let ds = verify::random_dataset(args.nodes, args.features, args.classes, m, &mut rng);
            let mut cfg = ModelConfig::new(variant, args.features, args.classes);
            cfg.seed = seed;
            cfg.goc.set_alpha(args.alpha);
            cfg.goc.gamma = args.gamma;
            cfg.goc.r = args.r;
            cfg.goc.power_steps = args.t;
            cfg.goc.sweeps = args.m;
            cfg.goc.normalized_multi_s = args.normalized_multi_s;
            let reports = verify::model_gradcheck(&cfg, &ds, opts)?;
            for (layer, r) in reports.iter().enumerate() {
                worst = worst.max(r.max_rel_error);
                all_passed &= r.passed;
                let _ = writeln!(
                    out,
                    "{} {variant} seed {seed} (m = {m}) layer {}: max relative error {:.3e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    layer + 1,
                    r.max_rel_error
                );
            }
        }
    }
    let _ = writeln!(out, "max relative error {worst:.3e} (tolerance {:e})", args.tolerance);
    if all_passed {
        Ok(())
    } else {
        Err(Failure::Failed(anyhow!("gradient check above tolerance")))
    }
}

pub fn synth(args: &SynthArgs) -> Outcome {
    let mut dataset = args.synth.generate()?;
    if let Some(spec) = args.split {
        if spec == SplitSpec::File {
            return Err(Failure::Usage(anyhow!("--split file makes no sense for generated data")));
        }
        let split = make_split(&dataset, spec, args.split_seed)?;
        dataset = dataset.with_split(split)?;
    }
    datasets::write_dataset(&dataset, &args.out).map_err(|e| Failure::Failed(e.into()))?;
    eprintln!(
        "wrote {} nodes, {} graph(s) to {}",
        dataset.n(),
        dataset.graphs().len(),
        args.out.display()
    );
    Ok(())
}
