//! Node-classification datasets: the plain-text directory format, split
//! construction and synthetic Gaussian-blob data with multiple kNN graphs.
//!
//! Directory layout (UTF-8, whitespace separated, one record per line):
//!
//! * `meta.txt`: `n=<int>`, `d=<int>`, `c=<int>`, `m=<int>`
//! * `features.txt`: `n` lines of `d` floats
//! * `labels.txt`: `n` lines, one class id in `[0, c)`
//! * `graph_<v>.txt` for `v = 1..=m`: `src dst [weight]`, 0-based, weight 1.0 by default
//! * `split.txt` (optional): `<node-id> train|val|test`

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::{knn_graph, Graph, GraphError};
use crate::rng::SeededRng;
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: node id {id} out of range for {n} nodes", path.display())]
    IndexOutOfRange {
        path: PathBuf,
        line: usize,
        id: usize,
        n: usize,
    },
    #[error("{}:{line}: non-finite value", path.display())]
    NonFinite { path: PathBuf, line: usize },
    #[error("{}:{line}: label {label} not below class count {c}", path.display())]
    LabelOutOfRange {
        path: PathBuf,
        line: usize,
        label: usize,
        c: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("class {class} has {have} nodes, split needs {need}")]
    ClassTooSmall { class: usize, have: usize, need: usize },
    #[error("dataset has {have} nodes, split needs {need}")]
    TooSmall { have: usize, need: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Features, labels and one or more graphs over the same node set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    graphs: Vec<Graph>,
    split: Option<Split>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        graphs: Vec<Graph>,
    ) -> Result<Self, DataError> {
        let n = features.rows();
        if labels.len() != n {
            return Err(DataError::Invalid(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if graphs.is_empty() {
            return Err(DataError::Invalid("at least one graph is required".into()));
        }
        if let Some((v, g)) = graphs.iter().enumerate().find(|(_, g)| g.n() != n) {
            return Err(DataError::Invalid(format!(
                "graph {} has {} nodes, features have {n}",
                v + 1,
                g.n()
            )));
        }
        if !features.is_finite() {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        let mut counts = vec![0usize; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(DataError::Invalid(format!(
                    "label {y} not below class count {num_classes}"
                )));
            }
            counts[y] += 1;
        }
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(DataError::Invalid(format!("class {c} has no nodes")));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
            graphs,
            split: None,
        })
    }

    pub fn with_split(mut self, split: Split) -> Result<Self, DataError> {
        split.validate(self.n())?;
        self.split = Some(split);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    /// Node ids per class, ascending.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            members[y].push(i);
        }
        members
    }

    /// Copy with the same features, labels and split but different graphs.
    pub fn with_graphs(&self, graphs: Vec<Graph>) -> Result<Self, DataError> {
        let mut d = Dataset::new(
            self.name.clone(),
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            graphs,
        )?;
        d.split = self.split.clone();
        Ok(d)
    }
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(train: Vec<usize>, val: Vec<usize>, test: Vec<usize>, n: usize) -> Result<Self, DataError> {
        let s = Self { train, val, test };
        s.validate(n)?;
        Ok(s)
    }

    pub fn validate(&self, n: usize) -> Result<(), DataError> {
        if self.train.is_empty() {
            return Err(DataError::InvalidSplit("training set is empty".into()));
        }
        let mut seen = vec![false; n];
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if *id >= n {
                return Err(DataError::InvalidSplit(format!("node {id} out of range for {n} nodes")));
            }
            if seen[*id] {
                return Err(DataError::InvalidSplit(format!("node {id} appears twice")));
            }
            seen[*id] = true;
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DataError::MissingFile(path.to_path_buf())
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Non-empty lines with their 1-based line numbers.
fn records(path: &Path) -> Result<Vec<(usize, Vec<String>)>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_owned).collect()))
        .collect())
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, tok: &str, what: &str) -> Result<T, DataError> {
    tok.parse().map_err(|_| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {what} from {tok:?}"),
    })
}

#[derive(Debug, Clone, Copy)]
struct Meta {
    n: usize,
    d: usize,
    c: usize,
    m: usize,
}

fn read_meta(path: &Path) -> Result<Meta, DataError> {
    let mut fields = BTreeMap::new();
    for (line, toks) in records(path)? {
        let joined = toks.join("");
        let Some((k, v)) = joined.split_once('=') else {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected key=value, got {joined:?}"),
            });
        };
        fields.insert(k.to_owned(), parse::<usize>(path, line, v, k)?);
    }
    let get = |k: &str| {
        fields.get(k).copied().ok_or_else(|| DataError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("missing key {k:?}"),
        })
    };
    Ok(Meta {
        n: get("n")?,
        d: get("d")?,
        c: get("c")?,
        m: get("m")?,
    })
}

/// Reads a dataset directory (see module docs).
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let meta_path = dir.join("meta.txt");
    let meta = read_meta(&meta_path)?;

    let feat_path = dir.join("features.txt");
    let rows = records(&feat_path)?;
    if rows.len() != meta.n {
        return Err(DataError::Parse {
            path: feat_path,
            line: rows.last().map_or(0, |r| r.0),
            message: format!("expected {} rows, found {}", meta.n, rows.len()),
        });
    }
    let mut data = Vec::with_capacity(meta.n * meta.d);
    for (line, toks) in &rows {
        if toks.len() != meta.d {
            return Err(DataError::Parse {
                path: feat_path,
                line: *line,
                message: format!("expected {} values, found {}", meta.d, toks.len()),
            });
        }
        for t in toks {
            let v: f64 = parse(&feat_path, *line, t, "feature")?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    path: feat_path,
                    line: *line,
                });
            }
            data.push(v);
        }
    }
    let features = Matrix::from_vec(meta.n, meta.d, data).expect("row count and width checked");

    let label_path = dir.join("labels.txt");
    let rows = records(&label_path)?;
    if rows.len() != meta.n {
        return Err(DataError::Parse {
            path: label_path,
            line: rows.last().map_or(0, |r| r.0),
            message: format!("expected {} labels, found {}", meta.n, rows.len()),
        });
    }
    let mut labels = Vec::with_capacity(meta.n);
    for (line, toks) in &rows {
        if toks.len() != 1 {
            return Err(DataError::Parse {
                path: label_path,
                line: *line,
                message: "expected exactly one label".into(),
            });
        }
        let y: usize = parse(&label_path, *line, &toks[0], "label")?;
        if y >= meta.c {
            return Err(DataError::LabelOutOfRange {
                path: label_path,
                line: *line,
                label: y,
                c: meta.c,
            });
        }
        labels.push(y);
    }

    let mut graphs = Vec::with_capacity(meta.m);
    for v in 1..=meta.m {
        let path = dir.join(format!("graph_{v}.txt"));
        let mut edges = Vec::new();
        for (line, toks) in records(&path)? {
            if !(2..=3).contains(&toks.len()) {
                return Err(DataError::Parse {
                    path,
                    line,
                    message: "expected `src dst [weight]`".into(),
                });
            }
            let src: usize = parse(&path, line, &toks[0], "node id")?;
            let dst: usize = parse(&path, line, &toks[1], "node id")?;
            for id in [src, dst] {
                if id >= meta.n {
                    return Err(DataError::IndexOutOfRange {
                        path,
                        line,
                        id,
                        n: meta.n,
                    });
                }
            }
            let w: f64 = match toks.get(2) {
                Some(t) => parse(&path, line, t, "weight")?,
                None => 1.0,
            };
            if !w.is_finite() {
                return Err(DataError::NonFinite { path, line });
            }
            if w < 0.0 {
                return Err(DataError::Parse {
                    path,
                    line,
                    message: format!("negative weight {w}"),
                });
            }
            edges.push((src, dst, w));
        }
        graphs.push(Graph::from_edges(meta.n, &edges)?);
    }

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut ds = Dataset::new(name, features, labels, meta.c, graphs)?;

    let split_path = dir.join("split.txt");
    if split_path.exists() {
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (line, toks) in records(&split_path)? {
            if toks.len() != 2 {
                return Err(DataError::Parse {
                    path: split_path,
                    line,
                    message: "expected `<node-id> train|val|test`".into(),
                });
            }
            let id: usize = parse(&split_path, line, &toks[0], "node id")?;
            if id >= meta.n {
                return Err(DataError::IndexOutOfRange {
                    path: split_path,
                    line,
                    id,
                    n: meta.n,
                });
            }
            match toks[1].as_str() {
                "train" => train.push(id),
                "val" => val.push(id),
                "test" => test.push(id),
                other => {
                    return Err(DataError::Parse {
                        path: split_path,
                        line,
                        message: format!("unknown split role {other:?}"),
                    })
                }
            }
        }
        ds = ds.with_split(Split { train, val, test })?;
    }
    Ok(ds)
}

/// Writes `dataset` in the directory format, creating `dir` if needed.
/// Floats use the shortest representation that parses back exactly.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, body: String| -> Result<(), DataError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))
    };
    write(
        "meta.txt",
        format!(
            "n={}\nd={}\nc={}\nm={}\n",
            dataset.n(),
            dataset.feature_dim(),
            dataset.num_classes(),
            dataset.graphs().len()
        ),
    )?;
    let mut body = String::new();
    for i in 0..dataset.n() {
        let row: Vec<String> = dataset.features().row(i).iter().map(|v| format!("{v:?}")).collect();
        body.push_str(&row.join(" "));
        body.push('\n');
    }
    write("features.txt", body)?;
    let body: String = dataset.labels().iter().map(|y| format!("{y}\n")).collect();
    write("labels.txt", body)?;
    for (v, g) in dataset.graphs().iter().enumerate() {
        let body: String = g
            .edges()
            .into_iter()
            .map(|(i, j, w)| format!("{i} {j} {w:?}\n"))
            .collect();
        write(&format!("graph_{}.txt", v + 1), body)?;
    }
    if let Some(split) = dataset.split() {
        let mut body = String::new();
        for (role, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            for id in ids {
                body.push_str(&format!("{id} {role}\n"));
            }
        }
        write("split.txt", body)?;
    }
    Ok(())
}

/// Fixed-size split: `per_class` labeled nodes drawn uniformly without
/// replacement from each class, then `n_val` validation and `n_test` test
/// nodes drawn from the remainder.
pub fn make_fixed_split(
    dataset: &Dataset,
    per_class: usize,
    n_val: usize,
    n_test: usize,
    rng: &mut SeededRng,
) -> Result<Split, DataError> {
    let members = dataset.class_members();
    for (class, m) in members.iter().enumerate() {
        if m.len() < per_class {
            return Err(DataError::ClassTooSmall {
                class,
                have: m.len(),
                need: per_class,
            });
        }
    }
    let need = per_class * dataset.num_classes() + n_val + n_test;
    if dataset.n() < need {
        return Err(DataError::TooSmall {
            have: dataset.n(),
            need,
        });
    }
    let mut in_train = vec![false; dataset.n()];
    let mut train = Vec::with_capacity(per_class * dataset.num_classes());
    for m in &members {
        let mut pool = m.clone();
        pool.shuffle(rng);
        for &id in pool.iter().take(per_class) {
            in_train[id] = true;
            train.push(id);
        }
    }
    let mut rest: Vec<usize> = (0..dataset.n()).filter(|&i| !in_train[i]).collect();
    rest.shuffle(rng);
    let val = rest[..n_val].to_vec();
    let test = rest[n_val..n_val + n_test].to_vec();
    Split::new(train, val, test, dataset.n())
}

/// The citation-network protocol: 20 labeled nodes per class, 300
/// validation nodes and 1000 test nodes.
pub fn make_citation_split(dataset: &Dataset, rng: &mut SeededRng) -> Result<Split, DataError> {
    make_fixed_split(dataset, 20, 300, 1000, rng)
}

fn round_half_up(x: f64) -> usize {
    // The epsilon keeps products such as 0.1 * 25 = 2.5000000000000004 or
    // 0.35 * 10 = 3.4999999999999996 on the intended side.
    (x + 0.5 + 1e-9).floor() as usize
}

/// Stratified fractional split. Each class contributes
/// `round_half_up(labeled_fraction · class_size)` labeled nodes; then
/// `round_half_up(val_fraction · n)` validation nodes come from the
/// remainder and everything else is test.
pub fn make_ratio_split(
    dataset: &Dataset,
    labeled_fraction: f64,
    val_fraction: f64,
    rng: &mut SeededRng,
) -> Result<Split, DataError> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(labeled_fraction) || !in_unit(val_fraction) || labeled_fraction + val_fraction >= 1.0 {
        return Err(DataError::InvalidSplit(format!(
            "fractions must lie in (0, 1) and sum below 1, got {labeled_fraction} and {val_fraction}"
        )));
    }
    let mut in_train = vec![false; dataset.n()];
    let mut train = Vec::new();
    for (class, m) in dataset.class_members().iter().enumerate() {
        let k = round_half_up(labeled_fraction * m.len() as f64);
        if k == 0 || k >= m.len() {
            return Err(DataError::InvalidSplit(format!(
                "class {class} with {} nodes would get {k} labeled nodes",
                m.len()
            )));
        }
        let mut pool = m.clone();
        pool.shuffle(rng);
        for &id in pool.iter().take(k) {
            in_train[id] = true;
            train.push(id);
        }
    }
    let mut rest: Vec<usize> = (0..dataset.n()).filter(|&i| !in_train[i]).collect();
    let n_val = round_half_up(val_fraction * dataset.n() as f64);
    if n_val >= rest.len() {
        return Err(DataError::TooSmall {
            have: rest.len(),
            need: n_val + 1,
        });
    }
    rest.shuffle(rng);
    let val = rest[..n_val].to_vec();
    let test = rest[n_val..].to_vec();
    Split::new(train, val, test, dataset.n())
}

/// Gaussian clusters with one kNN graph per noise level.
///
/// Class `j` is centred on the unit basis vector `e_j` and points scatter
/// with standard deviation `spread`, so centres sit `1/spread` within-cluster
/// scales from the origin (10 with the default 0.1). Node `i` has class
/// `i mod c`. Graph `v` is a kNN graph over the features perturbed by
/// Gaussian noise with standard deviation `noise[v] · spread`; the dataset
/// itself keeps the unperturbed features. Everything is finally multiplied
/// by `scale`, which leaves the graphs unchanged.
///
/// The default scale of 0.01 keeps `(γ/2) X Xᵀ` at `γ = 20` around 0.02 in
/// spectral radius, so the learned-graph update stays far from the regime
/// where the unrolled aggregation blows up.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBlobs {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub k: usize,
    pub spread: f64,
    pub scale: f64,
    /// One entry per graph.
    pub noise: Vec<f64>,
}

impl Default for SynthBlobs {
    fn default() -> Self {
        Self {
            n: 60,
            d: 8,
            c: 3,
            k: 5,
            spread: 0.1,
            scale: 0.01,
            noise: vec![0.0],
        }
    }
}

impl SynthBlobs {
    pub fn m(&self) -> usize {
        self.noise.len()
    }

    pub fn generate(&self, rng: &mut SeededRng) -> Result<Dataset, DataError> {
        synth_blobs(self, rng)
    }
}

pub fn synth_blobs(spec: &SynthBlobs, rng: &mut SeededRng) -> Result<Dataset, DataError> {
    let &SynthBlobs { n, d, c, k, spread, .. } = spec;
    if c == 0 || n == 0 || n % c != 0 {
        return Err(DataError::Invalid(format!("n = {n} must be a positive multiple of c = {c}")));
    }
    if d < c {
        return Err(DataError::Invalid(format!("need d >= c for separated centres (d = {d}, c = {c})")));
    }
    if spec.noise.is_empty() {
        return Err(DataError::Invalid("at least one graph (noise level) is required".into()));
    }
    if !(spread > 0.0 && spread.is_finite()) || spec.noise.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(DataError::Invalid("spread must be positive and noise levels non-negative".into()));
    }
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(DataError::Invalid(format!("scale must be positive, got {}", spec.scale)));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let features = Matrix::from_fn(n, d, |i, j| {
        let centre = if j == labels[i] { 1.0 } else { 0.0 };
        centre + spread * normal.sample(rng)
    });
    let mut graphs = Vec::with_capacity(spec.m());
    for (v, &level) in spec.noise.iter().enumerate() {
        let mut stream = rng.fork(1 + v as u64);
        let noisy = Matrix::from_fn(n, d, |i, j| {
            features.get(i, j) + level * spread * normal.sample(&mut stream)
        });
        graphs.push(knn_graph(&noisy, k, None)?);
    }
    Dataset::new("blobs", features.scale(spec.scale), labels, c, graphs)
}
