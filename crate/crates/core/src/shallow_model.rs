//! Trainable shallow model over [`FeatureVector`]s.
//!
//! Two uses: binary factuality classification (cross-entropy against 0/1
//! labels) and regression onto a metric's normalized scores (squared error).
//! Inputs are standardized with statistics from the training rows only.
//! Initialisation and mini-batch shuffling use `ChaCha8Rng` seeded from
//! [`NetworkConfig::seed`], so identical data and seed give identical
//! weights. Optimisation is Adam.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::network::{Adam, Layer, Network};
use crate::scalar::Scalar;

pub use crate::network::{Activation, Objective};

pub const FEATURE_DIM: usize = 6;
const MODEL_FORMAT: &str = "factlens-shallow-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("non-finite feature in row {0}")]
    NonFiniteFeature(usize),
    #[error("target {value} in row {row} is outside [0, 1]")]
    TargetOutOfRange { row: usize, value: f64 },
    #[error("classification needs both classes; all targets fall in one class")]
    SingleClass,
    #[error("training did not reduce the loss ({initial} -> {last})")]
    NoProgress { initial: f64, last: f64 },
    #[error("non-finite input feature")]
    NonFiniteInput,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; values at or above the row count mean full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![16, 16],
            activation: Activation::Relu,
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: usize::MAX,
            seed: 0,
            objective: Objective::BinaryCrossEntropy,
        }
    }
}

impl NetworkConfig {
    pub fn regression() -> Self {
        Self { objective: Objective::SquaredError, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_sizes.contains(&0) {
            return Err(ModelError::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature standardization. Zero-variance features get scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Normalization<T> {
    fn fit(rows: &[[f64; FEATURE_DIM]]) -> Self {
        let n = rows.len() as f64;
        let mut mean = [0.0; FEATURE_DIM];
        let mut scale = [0.0; FEATURE_DIM];
        for r in rows {
            for j in 0..FEATURE_DIM {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for r in rows {
            for j in 0..FEATURE_DIM {
                scale[j] += (r[j] - mean[j]).powi(2);
            }
        }
        for s in &mut scale {
            *s = (*s / n).sqrt();
            if s.is_nan() || *s <= 1e-12 {
                *s = 1.0;
            }
        }
        Self { mean: mean.iter().map(|&m| T::of(m)).collect(), scale: scale.iter().map(|&s| T::of(s)).collect() }
    }

    fn apply(&self, raw: &[f64; FEATURE_DIM]) -> Vec<T> {
        raw.iter().enumerate().map(|(j, &x)| (T::of(x) - self.mean[j]) / self.scale[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T = f64> {
    pub network: Network<T>,
    pub normalization: Normalization<T>,
    pub config: NetworkConfig,
    /// Datasets whose rows were used for training.
    pub training_datasets: BTreeSet<String>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// One training example: features and a target in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub features: FeatureVector,
    pub target: f64,
}

pub fn train<T: Scalar>(rows: &[TrainingRow], config: &NetworkConfig) -> Result<TrainedModel<T>, ModelError> {
    config.validate()?;
    if rows.len() < 2 {
        return Err(ModelError::TooFewRows(rows.len()));
    }
    let mut raw = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let x = r.features.model_inputs();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature(i));
        }
        if !(0.0..=1.0).contains(&r.target) {
            return Err(ModelError::TargetOutOfRange { row: i, value: r.target });
        }
        raw.push(x);
    }
    if config.objective == Objective::BinaryCrossEntropy {
        let pos = rows.iter().filter(|r| r.target >= 0.5).count();
        if pos == 0 || pos == rows.len() {
            return Err(ModelError::SingleClass);
        }
    }

    let normalization = Normalization::<T>::fit(&raw);
    let xs: Vec<Vec<T>> = raw.iter().map(|r| normalization.apply(r)).collect();
    let ys: Vec<T> = rows.iter().map(|r| T::of(r.target)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::init(FEATURE_DIM, &config.hidden_sizes, config.activation, &mut rng);
    let initial_loss = network.loss(&xs, &ys, config.objective).as_f64();

    let mut params = network.params();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let batch = config.batch_size.min(rows.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();

    for _ in 0..config.epochs {
        if batch < rows.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let bx: Vec<Vec<T>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<T> = chunk.iter().map(|&i| ys[i]).collect();
            let (_, grad) = network.loss_and_gradient(&bx, &by, config.objective);
            adam.step(&mut params, &grad);
            network.set_params(&params);
        }
    }

    let final_loss = network.loss(&xs, &ys, config.objective).as_f64();
    if !final_loss.is_finite() || final_loss >= initial_loss {
        return Err(ModelError::NoProgress { initial: initial_loss, last: final_loss });
    }
    Ok(TrainedModel {
        network,
        normalization,
        config: config.clone(),
        training_datasets: BTreeSet::new(),
        initial_loss,
        final_loss,
    })
}

impl<T: Scalar> TrainedModel<T> {
    /// Untrained all-zero model with identity normalization.
    pub fn zeroed(config: NetworkConfig) -> Self {
        Self {
            network: Network::zeros(FEATURE_DIM, &config.hidden_sizes, config.activation),
            normalization: Normalization { mean: vec![T::zero(); FEATURE_DIM], scale: vec![T::one(); FEATURE_DIM] },
            config,
            training_datasets: BTreeSet::new(),
            initial_loss: 0.0,
            final_loss: 0.0,
        }
    }

    pub fn with_training_datasets(mut self, datasets: impl IntoIterator<Item = String>) -> Self {
        self.training_datasets = datasets.into_iter().collect();
        self
    }

    pub fn predict(&self, row: &FeatureVector) -> Result<T, ModelError> {
        let raw = row.model_inputs();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(self.network.forward(&self.normalization.apply(&raw)))
    }

    /// Little-endian `f64` bytes of every network parameter.
    pub fn weight_bytes(&self) -> Vec<u8> {
        self.network.params().iter().flat_map(|p| p.as_f64().to_le_bytes()).collect()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            scalar: T::type_name().to_string(),
            config: self.config.clone(),
            training_datasets: self.training_datasets.clone(),
            initial_loss: self.initial_loss,
            final_loss: self.final_loss,
            normalization_mean: self.normalization.mean.iter().map(|x| x.as_f64()).collect(),
            normalization_scale: self.normalization.scale.iter().map(|x| x.as_f64()).collect(),
            layers: self
                .network
                .layers
                .iter()
                .map(|l| LayerFile {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.iter().map(|x| x.as_f64()).collect(),
                    bias: l.bias.iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(json).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(ModelError::Format(format!("unsupported version {}", file.version)));
        }
        if file.scalar != T::type_name() {
            return Err(ModelError::Format(format!(
                "model stores {} scalars, requested {}",
                file.scalar,
                T::type_name()
            )));
        }
        if file.normalization_mean.len() != FEATURE_DIM || file.normalization_scale.len() != FEATURE_DIM {
            return Err(ModelError::Format("normalization must have 6 entries".into()));
        }
        let mut layers = Vec::new();
        let mut expected_in = FEATURE_DIM;
        for l in &file.layers {
            if l.inputs != expected_in || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(ModelError::Format("layer shapes are inconsistent".into()));
            }
            expected_in = l.outputs;
            layers.push(Layer {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights.iter().map(|&x| T::of(x)).collect(),
                bias: l.bias.iter().map(|&x| T::of(x)).collect(),
            });
        }
        if expected_in != 1 || layers.is_empty() {
            return Err(ModelError::Format("network must end in a single output".into()));
        }
        Ok(Self {
            network: Network { layers, activation: file.config.activation },
            normalization: Normalization {
                mean: file.normalization_mean.iter().map(|&x| T::of(x)).collect(),
                scale: file.normalization_scale.iter().map(|&x| T::of(x)).collect(),
            },
            config: file.config,
            training_datasets: file.training_datasets,
            initial_loss: file.initial_loss,
            final_loss: file.final_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        crate::io::write_atomic(path, self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    scalar: String,
    config: NetworkConfig,
    training_datasets: BTreeSet<String>,
    initial_loss: f64,
    final_loss: f64,
    normalization_mean: Vec<f64>,
    normalization_scale: Vec<f64>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}
