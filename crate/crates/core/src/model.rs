//! Network assembly, loss, optimizer and the training loop.
//!
//! Every variant shares the layer rule `H ← σ(P(H) Θ)` where `P` is the
//! variant's propagation: `ÂH + H` for GCN, the single-graph alternating
//! operator for GOCN, and its multi-graph form for M-GOCN. Hidden layers use
//! relu and the last layer a row softmax. Training is full batch with Adam,
//! summed cross-entropy over the labeled nodes, early stopping on validation
//! loss and restoration of the best-validation parameters.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use log::{debug, info};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{DataError, Dataset, Split};
use crate::propagation::{phi_goc_in, phi_mgoc_in, Backend, Eager, GocConfig, PropagationError};
use crate::rng::{streams, SeededRng};
use crate::tape::Tape;
use crate::tensor::{Matrix, TensorError};

/// Probabilities are clamped below at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;


#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("loss became non-finite ({loss}) at epoch {epoch}; try a smaller learning rate or gamma")]
    NonFinite { epoch: usize, loss: f64 },
    #[error("gradient became non-finite at epoch {epoch}; try smaller features, learning rate or gamma")]
    NonFiniteGradient { epoch: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gcn,
    Gocn,
    Mgocn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Gcn => "gcn",
            Variant::Gocn => "gocn",
            Variant::Mgocn => "mgocn",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gcn" => Ok(Variant::Gcn),
            "gocn" => Ok(Variant::Gocn),
            "mgocn" => Ok(Variant::Mgocn),
            other => Err(format!("unknown variant `{other}` (expected gcn, gocn or mgocn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// `[d₀, d₁, …, d_K]`; `d₀` is the feature width and `d_K` the class count.
    pub layer_dims: Vec<usize>,
    pub goc: GocConfig,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2 coefficient; `weight_decay · Θ` is added to every layer's gradient.
    pub weight_decay: f64,
    /// Drop probability applied to each layer's input during training.
    pub dropout: f64,
    pub seed: u64,
    /// Multiplier on the Glorot initialization.
    pub init_scale: f64,
    pub adam: AdamConfig,
}

impl ModelConfig {
    /// Two layers with 16 hidden units and the default optimizer settings.
    pub fn new(variant: Variant, input_dim: usize, num_classes: usize) -> Self {
        Self::with_hidden(variant, input_dim, &[16], num_classes)
    }

    pub fn with_hidden(variant: Variant, input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        let mut layer_dims = vec![input_dim];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(num_classes);
        Self {
            variant,
            layer_dims,
            goc: GocConfig::default(),
            learning_rate: 0.01,
            max_epochs: 10_000,
            patience: 100,
            weight_decay: 5e-4,
            dropout: 0.0,
            seed: 0,
            init_scale: 1.0,
            adam: AdamConfig::default(),
        }
    }

    pub fn for_dataset(variant: Variant, dataset: &Dataset) -> Self {
        Self::new(variant, dataset.feature_dim(), dataset.num_classes())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.num_layers() < 1 {
            return Err(ModelError::Config("at least one layer is required".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        if self.layer_dims[0] != dataset.feature_dim() {
            return Err(ModelError::Config(format!(
                "input width {} does not match feature width {}",
                self.layer_dims[0],
                dataset.feature_dim()
            )));
        }
        if *self.layer_dims.last().unwrap() != dataset.num_classes() {
            return Err(ModelError::Config(format!(
                "output width {} does not match class count {}",
                self.layer_dims.last().unwrap(),
                dataset.num_classes()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.init_scale > 0.0) {
            return Err(ModelError::Config(
                "learning rate and init scale must be positive, weight decay non-negative".into(),
            ));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(ModelError::Config("max_epochs and patience must be at least 1".into()));
        }
        match self.variant {
            Variant::Gcn => {}
            Variant::Gocn => self.goc.validate()?,
            Variant::Mgocn => self.goc.validate_multi()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub thetas: Vec<Matrix>,
}

impl ModelParams {
    /// Glorot-uniform weights for every layer, multiplied by `init_scale`.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = SeededRng::seed_from(config.seed).fork(streams::INIT);
        let thetas = config
            .layer_dims
            .windows(2)
            .map(|w| glorot_init(w[0], w[1], &mut rng).scale(config.init_scale))
            .collect();
        Self { thetas }
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected: Vec<(usize, usize)> = config.layer_dims.windows(2).map(|w| (w[0], w[1])).collect();
        let got: Vec<(usize, usize)> = self.thetas.iter().map(Matrix::shape).collect();
        if expected != got {
            return Err(ModelError::Config(format!(
                "parameter shapes {got:?} do not match layer dims {:?}",
                config.layer_dims
            )));
        }
        Ok(())
    }
}

/// Uniform entries in `(−a, a)` with `a = sqrt(6 / (d_in + d_out))`.
pub fn glorot_init(d_in: usize, d_out: usize, rng: &mut SeededRng) -> Matrix {
    let a = (6.0 / (d_in + d_out) as f64).sqrt();
    Matrix::from_fn(d_in, d_out, |_, _| loop {
        let x = rng.random_range(-a..a);
        if x != -a {
            break x;
        }
    })
}

/// Inputs shared by every forward pass of one training session.
struct Prepared {
    variant: Variant,
    goc: GocConfig,
    graphs: Vec<Rc<Matrix>>,
    eager_graphs: Vec<Matrix>,
    features: Rc<Matrix>,
    /// First-layer propagation of the features, valid whenever the input is
    /// not dropped out (it does not depend on any parameter).
    first: Option<(Rc<Matrix>, Vec<f64>)>,
}

impl Prepared {
    fn new(config: &ModelConfig, dataset: &Dataset, cache_first: bool) -> Result<Self> {
        let eager_graphs: Vec<Matrix> = match config.variant {
            Variant::Mgocn => dataset.graphs().iter().map(|g| g.normalize().into_matrix()).collect(),
            _ => vec![dataset.graphs()[0].normalize().into_matrix()],
        };
        let mut prepared = Self {
            variant: config.variant,
            goc: config.goc,
            graphs: eager_graphs.iter().map(|g| Rc::new(g.clone())).collect(),
            eager_graphs,
            features: Rc::new(dataset.features().clone()),
            first: None,
        };
        if cache_first {
            let (z, w) = propagate(
                &Eager,
                prepared.variant,
                &prepared.goc,
                &prepared.eager_graphs,
                &prepared.features,
            )?;
            prepared.first = Some((Rc::new(z), w));
        }
        Ok(prepared)
    }
}

fn propagate<B: Backend>(
    b: &B,
    variant: Variant,
    goc: &GocConfig,
    graphs: &[B::Value],
    h: &B::Value,
) -> Result<(B::Value, Vec<f64>)> {
    Ok(match variant {
        Variant::Gcn => (b.add(&b.matmul(&graphs[0], h)?, h)?, Vec::new()),
        Variant::Gocn => (phi_goc_in(b, &graphs[0], h, goc)?, Vec::new()),
        Variant::Mgocn => {
            let (z, w) = phi_mgoc_in(b, graphs, h, goc)?;
            let w = w.iter().map(|v| b.value(v).as_slice()[0]).collect();
            (z, w)
        }
    })
}

/// Inverted-dropout masks for each layer input, or `None` when inactive.
fn dropout_masks(config: &ModelConfig, n: usize, rng: &mut SeededRng) -> Option<Vec<Matrix>> {
    if config.dropout <= 0.0 {
        return None;
    }
    let keep = 1.0 - config.dropout;
    Some(
        config.layer_dims[..config.num_layers()]
            .iter()
            .map(|&d| Matrix::from_fn(n, d, |_, _| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 }))
            .collect(),
    )
}

struct ForwardOut<V> {
    probs: V,
    graph_weights: Vec<Vec<f64>>,
}

fn forward_in<B: Backend>(
    b: &B,
    prepared: &Prepared,
    graphs: &[B::Value],
    features: &B::Value,
    thetas: &[B::Value],
    masks: Option<&[Matrix]>,
) -> Result<ForwardOut<B::Value>> {
    let mut h = features.clone();
    let mut graph_weights = Vec::new();
    let k = thetas.len();
    for (layer, theta) in thetas.iter().enumerate() {
        let pre = match (layer, masks, &prepared.first) {
            (0, None, Some((z, w))) => {
                graph_weights.push(w.clone());
                b.matmul_const(z, theta)?
            }
            _ => {
                if let Some(m) = masks {
                    h = b.mask(&h, &m[layer])?;
                }
                let (z, w) = propagate(b, prepared.variant, &prepared.goc, graphs, &h)?;
                graph_weights.push(w);
                b.matmul(&z, theta)?
            }
        };
        h = if layer + 1 == k { b.row_softmax(&pre)? } else { b.relu(&pre)? };
    }
    if prepared.variant != Variant::Mgocn {
        graph_weights.clear();
    }
    Ok(ForwardOut { probs: h, graph_weights })
}

fn eager_forward(prepared: &Prepared, params: &ModelParams, masks: Option<&[Matrix]>) -> Result<ForwardOut<Matrix>> {
    forward_in(
        &Eager,
        prepared,
        &prepared.eager_graphs,
        &prepared.features,
        &params.thetas,
        masks,
    )
}

/// Class probabilities `P` (n x c) of the network.
pub fn forward(
    config: &ModelConfig,
    params: &ModelParams,
    dataset: &Dataset,
    dropout_active: bool,
    rng: &mut SeededRng,
) -> Result<Matrix> {
    config.validate(dataset)?;
    params.check_shapes(config)?;
    let prepared = Prepared::new(config, dataset, !dropout_active || config.dropout == 0.0)?;
    let masks = if dropout_active {
        dropout_masks(config, dataset.n(), rng)
    } else {
        None
    };
    Ok(eager_forward(&prepared, params, masks.as_deref())?.probs)
}

/// Final-sweep graph weights of every layer of an M-GOCN network (empty for
/// the other variants).
pub fn graph_weights(config: &ModelConfig, params: &ModelParams, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    config.validate(dataset)?;
    params.check_shapes(config)?;
    let prepared = Prepared::new(config, dataset, true)?;
    Ok(eager_forward(&prepared, params, None)?.graph_weights)
}

fn targets(labels: &[usize], nodes: &[usize]) -> Vec<(usize, usize)> {
    nodes.iter().map(|&i| (i, labels[i])).collect()
}

/// `−Σ_{i ∈ nodes} ln max(P_{i, y_i}, 1e-12)`.
pub fn cross_entropy_loss(p: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(ModelError::EmptyNodeSet);
    }
    let mut total = 0.0;
    for &i in nodes {
        if i >= p.rows() || labels[i] >= p.cols() {
            return Err(TensorError::InvalidShape {
                op: "cross_entropy_loss",
                shape: p.shape(),
                reason: "node or label out of range",
            }
            .into());
        }
        total -= p.get(i, labels[i]).clamp(PROB_FLOOR, f64::INFINITY).ln();
    }
    Ok(total)
}

/// Fraction of `nodes` whose highest-probability class (lowest index on
/// ties) equals the label.
pub fn accuracy(p: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(ModelError::EmptyNodeSet);
    }
    let mut correct = 0usize;
    for &i in nodes {
        let row = p.row(i);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / nodes.len() as f64)
}

pub fn evaluate(params: &ModelParams, config: &ModelConfig, dataset: &Dataset, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(ModelError::EmptyNodeSet);
    }
    let p = forward(config, params, dataset, false, &mut SeededRng::seed_from(config.seed))?;
    accuracy(&p, dataset.labels(), nodes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        Self {
            m: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64, adam: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(ModelError::Config("parameter, gradient and state counts differ".into()));
    }
    state.t += 1;
    let c1 = 1.0 - adam.beta1.powi(state.t);
    let c2 = 1.0 - adam.beta2.powi(state.t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            }
            .into());
        }
        let (ps, gs) = (p.as_mut_slice(), g.as_slice());
        for (((pi, gi), mi), vi) in ps.iter_mut().zip(gs).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
            *mi = adam.beta1 * *mi + (1.0 - adam.beta1) * gi;
            *vi = adam.beta2 * *vi + (1.0 - adam.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub best_val_epoch: usize,
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    pub train_loss_history: Vec<f64>,
    /// Per-layer final graph weights at the restored parameters (M-GOCN only).
    pub graph_weights: Vec<Vec<f64>>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.train_loss_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Full-batch training with early stopping on validation loss.
///
/// Each epoch takes one Adam step on the summed training cross-entropy,
/// then scores the validation loss of the updated parameters. Training stops
/// after `patience` epochs without a strict improvement, and the parameters
/// of the best epoch are restored before the final evaluation. With an empty
/// validation set the training loss drives early stopping instead.
pub fn train(config: &ModelConfig, dataset: &Dataset, split: &Split) -> Result<(ModelParams, TrainReport)> {
    config.validate(dataset)?;
    split.validate(dataset.n())?;
    let prepared = Prepared::new(config, dataset, true)?;
    let labels = dataset.labels();
    let train_targets = targets(labels, &split.train);
    let mut dropout_rng = SeededRng::seed_from(config.seed).fork(streams::DROPOUT);

    let mut params = ModelParams::init(config);
    let mut adam = AdamState::new(&params.thetas);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut history = Vec::new();
    let mut epoch = 0;

    while epoch < config.max_epochs {
        epoch += 1;
        let masks = dropout_masks(config, dataset.n(), &mut dropout_rng);
        let (loss, mut grads) = {
            let tape = Tape::new();
            let graphs = prepared
                .graphs
                .iter()
                .map(|g| tape.constant_shared(Rc::clone(g)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let features = tape.constant_shared(Rc::clone(&prepared.features))?;
            let thetas = params
                .thetas
                .iter()
                .map(|t| tape.var(t.clone()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let out = forward_in(&&tape, &prepared, &graphs, &features, &thetas, masks.as_deref())?;
            let loss = out.probs.cross_entropy(&train_targets, PROB_FLOOR)?;
            let value = loss.value().to_scalar()?;
            if !value.is_finite() {
                return Err(ModelError::NonFinite { epoch, loss: value });
            }
            (value, tape.grad(loss, &thetas)?)
        };
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteGradient { epoch });
        }
        history.push(loss);
        if config.weight_decay > 0.0 {
            for (g, t) in grads.iter_mut().zip(&params.thetas) {
                g.add_scaled_assign(t, config.weight_decay)?;
            }
        }
        adam_step(&mut params.thetas, &grads, &mut adam, config.learning_rate, &config.adam)?;

        let stop_loss = if split.val.is_empty() {
            loss
        } else {
            let p = eager_forward(&prepared, &params, None)?.probs;
            cross_entropy_loss(&p, labels, &split.val)?
        };
        if !stop_loss.is_finite() {
            return Err(ModelError::NonFinite { epoch, loss: stop_loss });
        }
        if stop_loss < best.0 {
            best = (stop_loss, epoch, params.clone());
        }
        debug!("epoch {epoch}: train loss {loss:.6}, val loss {stop_loss:.6}");
        if epoch - best.1 >= config.patience {
            break;
        }
    }

    let (best_val_loss, best_val_epoch, best_params) = best;
    let out = eager_forward(&prepared, &best_params, None)?;
    let score = |nodes: &[usize]| -> Result<f64> {
        if nodes.is_empty() {
            Ok(f64::NAN)
        } else {
            accuracy(&out.probs, labels, nodes)
        }
    };
    let report = TrainReport {
        epochs_run: epoch,
        best_val_loss,
        best_val_epoch,
        test_accuracy: score(&split.test)?,
        val_accuracy: score(&split.val)?,
        train_loss_history: history,
        graph_weights: out.graph_weights.clone(),
    };
    info!(
        "{} on {}: {} epochs, best epoch {}, test accuracy {:.4}",
        config.variant, dataset.name, report.epochs_run, report.best_val_epoch, report.test_accuracy
    );
    Ok((best_params, report))
}

/// Summed cross-entropy over `nodes` with the whole network recorded on
/// `tape`, dropout off; used for gradient checks.
pub fn recorded_loss<'t>(
    tape: &'t Tape,
    config: &ModelConfig,
    dataset: &Dataset,
    nodes: &[usize],
    thetas: &[crate::tape::Var<'t>],
) -> Result<crate::tape::Var<'t>> {
    config.validate(dataset)?;
    // Keep the first layer on the tape so the whole network is exercised.
    let prepared = Prepared::new(config, dataset, false)?;
    let graphs = prepared
        .graphs
        .iter()
        .map(|g| tape.constant_shared(Rc::clone(g)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let features = tape.constant_shared(Rc::clone(&prepared.features))?;
    let out = forward_in(&tape, &prepared, &graphs, &features, thetas, None)?;
    Ok(out.probs.cross_entropy(&targets(dataset.labels(), nodes), PROB_FLOOR)?)
}
