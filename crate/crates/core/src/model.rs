//! Branched network architectures: a shared backbone feeding a Tc
//! regression head and a binary classification head.
//!
//! Two variants are built from the same config type. The dense variant
//! consumes the 120-dimensional composition vector; the convolutional
//! variant consumes its 1×10×12 grid reshape. All hidden activations are
//! ReLU; the regression output is linear (kelvin) and the classification
//! output is a single sigmoid unit thresholded at 0.5.
//!
//! Default widths are artifact choices, overridable through the config
//! file: dense backbone 120→256→128, each head 128→64→1; conv backbone
//! conv(16, 3×3, pad 1) → ReLU → pool 2×2 → conv(32, 3×3, pad 1) → ReLU →
//! flatten → dense 128, heads as in the dense variant.

use crate::checkpoint;
use crate::dataset::{self, FeatureVector, GRID_COLS, GRID_ROWS, VECTOR_LEN};
use crate::tensor::{NdArray, NodeId, ParamGroup, ParamStore, Tape, TensorError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error at `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CorruptCheckpoint { offset: usize, reason: String },
    #[error("config line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },
    #[error("checkpoint does not match config: {0}")]
    ConfigConflict(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Fcnn,
    Cnn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Fcnn => "fcnn",
            Variant::Cnn => "cnn",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Variant, String> {
        match s {
            "fcnn" => Ok(Variant::Fcnn),
            "cnn" => Ok(Variant::Cnn),
            other => Err(format!("unknown variant `{other}` (expected fcnn or cnn)")),
        }
    }
}

/// Convolutional backbone geometry. Square kernels and pool windows; pool
/// stride equals the window. Pooling is applied after every conv layer
/// except the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvGeometry {
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool_window: usize,
}

impl Default for ConvGeometry {
    fn default() -> ConvGeometry {
        ConvGeometry {
            filters: vec![16, 32],
            kernel: 3,
            stride: 1,
            padding: 1,
            pool_window: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Dense widths after the input (fcnn) or after the flatten (cnn).
    /// The last width is the backbone output fed to both heads.
    pub backbone_widths: Vec<usize>,
    /// Hidden widths of each head; the final 1-wide output layer is
    /// implicit.
    pub head_widths: Vec<usize>,
    pub conv: ConvGeometry,
    pub seed: u64,
}

impl ModelConfig {
    pub fn fcnn_default(seed: u64) -> ModelConfig {
        ModelConfig {
            variant: Variant::Fcnn,
            backbone_widths: vec![256, 128],
            head_widths: vec![64],
            conv: ConvGeometry::default(),
            seed,
        }
    }

    pub fn cnn_default(seed: u64) -> ModelConfig {
        ModelConfig {
            variant: Variant::Cnn,
            backbone_widths: vec![128],
            head_widths: vec![64],
            conv: ConvGeometry::default(),
            seed,
        }
    }

    pub fn default_for(variant: Variant, seed: u64) -> ModelConfig {
        match variant {
            Variant::Fcnn => ModelConfig::fcnn_default(seed),
            Variant::Cnn => ModelConfig::cnn_default(seed),
        }
    }

    /// Input shape of one record under this variant.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.variant {
            Variant::Fcnn => vec![VECTOR_LEN],
            Variant::Cnn => vec![1, GRID_ROWS, GRID_COLS],
        }
    }

    /// Spatial shapes through the conv stack, ending with the flattened
    /// width. Errors if any layer has no valid integer output extent.
    fn conv_plan(&self) -> Result<usize, ModelError> {
        let g = &self.conv;
        if g.filters.is_empty() {
            return Err(ModelError::InvalidConfig("cnn needs at least one conv layer".into()));
        }
        if g.kernel == 0 || g.stride == 0 || g.pool_window == 0 {
            return Err(ModelError::InvalidConfig(
                "conv kernel, stride, and pool window must be positive".into(),
            ));
        }
        let (mut c, mut h, mut w) = (1usize, GRID_ROWS, GRID_COLS);
        for (i, &f) in g.filters.iter().enumerate() {
            if f == 0 {
                return Err(ModelError::InvalidConfig("conv filter count must be positive".into()));
            }
            let out = |extent: usize| -> Option<usize> {
                let span = (extent + 2 * g.padding).checked_sub(g.kernel)?;
                (span % g.stride == 0).then(|| span / g.stride + 1)
            };
            (h, w) = match (out(h), out(w)) {
                (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
                _ => {
                    return Err(ModelError::InvalidConfig(format!(
                        "conv layer {i} has no integer output extent over {h}x{w}"
                    )))
                }
            };
            c = f;
            let last = i + 1 == g.filters.len();
            if !last {
                let p = g.pool_window;
                if h < p || w < p || (h - p) % p != 0 || (w - p) % p != 0 {
                    return Err(ModelError::InvalidConfig(format!(
                        "pool window {p} does not tile {h}x{w} after conv layer {i}"
                    )));
                }
                h = (h - p) / p + 1;
                w = (w - p) / p + 1;
            }
        }
        Ok(c * h * w)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.backbone_widths.is_empty() {
            return Err(ModelError::InvalidConfig(
                "backbone needs at least one dense width".into(),
            ));
        }
        if self.backbone_widths.iter().any(|&w| w == 0)
            || self.head_widths.iter().any(|&w| w == 0)
        {
            return Err(ModelError::InvalidConfig("layer widths must be positive".into()));
        }
        if self.variant == Variant::Cnn {
            self.conv_plan()?;
        }
        Ok(())
    }
}

/// Output of the full pipeline for one record. The reported Tc is clamped
/// below at 0 K; `sc_label` is 1 iff `sc_score >= 0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub tc_pred: f64,
    pub sc_score: f64,
    pub sc_label: u8,
}

/// A built model: config plus group-tagged parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> NdArray {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    NdArray::from_vec(shape, data)
}

fn insert_affine(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    layer: usize,
    group: ParamGroup,
    fan_in: usize,
    fan_out: usize,
) -> Result<(), TensorError> {
    let w = kaiming_uniform(rng, &[fan_in, fan_out], fan_in);
    store.insert(&format!("{prefix}.fc{layer}.w"), group, w)?;
    store.insert(&format!("{prefix}.fc{layer}.b"), group, NdArray::zeros(&[fan_out]))?;
    Ok(())
}

impl Model {
    /// Initializes all parameters (Kaiming-uniform weights, zero biases)
    /// from the config seed. Two builds with the same config are
    /// identical.
    pub fn build(config: ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();

        let mut dense_in = match config.variant {
            Variant::Fcnn => VECTOR_LEN,
            Variant::Cnn => {
                let g = &config.conv;
                let mut channels = 1usize;
                for (i, &f) in g.filters.iter().enumerate() {
                    let fan_in = channels * g.kernel * g.kernel;
                    let k = kaiming_uniform(&mut rng, &[f, channels, g.kernel, g.kernel], fan_in);
                    params.insert(&format!("backbone.conv{i}.k"), ParamGroup::Backbone, k)?;
                    params.insert(
                        &format!("backbone.conv{i}.b"),
                        ParamGroup::Backbone,
                        NdArray::zeros(&[f]),
                    )?;
                    channels = f;
                }
                config.conv_plan()?
            }
        };
        for (i, &width) in config.backbone_widths.iter().enumerate() {
            insert_affine(&mut params, &mut rng, "backbone", i, ParamGroup::Backbone, dense_in, width)?;
            dense_in = width;
        }

        for (prefix, group) in [("tc_head", ParamGroup::TcHead), ("cls_head", ParamGroup::ClsHead)] {
            let mut fan_in = dense_in;
            for (i, &width) in config.head_widths.iter().enumerate() {
                insert_affine(&mut params, &mut rng, prefix, i, group, fan_in, width)?;
                fan_in = width;
            }
            insert_affine(
                &mut params,
                &mut rng,
                prefix,
                config.head_widths.len(),
                group,
                fan_in,
                1,
            )?;
        }

        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore) -> Model {
        Model { config, params }
    }

    /// Records the full forward pass for a batch on `tape` and returns the
    /// `(tc_output, sc_score)` node pair, shapes `[n, 1]` each.
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> Result<(NodeId, NodeId), TensorError> {
        forward_from(&self.config, &self.params, tape, input)
    }

    /// Packs feature vectors into the input batch this variant expects.
    pub fn batch_input(&self, features: &[FeatureVector]) -> NdArray {
        match self.config.variant {
            Variant::Fcnn => dataset::feature_matrix(features),
            Variant::Cnn => dataset::feature_grid_batch(features),
        }
    }

    /// Batched inference. Raw regression outputs below 0 K are reported
    /// as 0.
    pub fn predict(&self, features: &[FeatureVector]) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(1024.max(1)) {
            let mut tape = Tape::new();
            let input = tape.constant(self.batch_input(chunk));
            let (tc, score) = self.forward(&mut tape, input)?;
            let tc = tape.value(tc).data();
            let score = tape.value(score).data();
            for (&t, &s) in tc.iter().zip(score) {
                out.push(Prediction {
                    tc_pred: t.max(0.0),
                    sc_score: s,
                    sc_label: u8::from(s >= 0.5),
                });
            }
        }
        Ok(out)
    }

    /// Writes the binary parameter checkpoint at `path` and the config as
    /// a key-value file at `<path>.config`.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        checkpoint::write_params(path, &self.params)?;
        checkpoint::write_config(&checkpoint::config_path_for(path), &self.config)
    }

    /// Loads a checkpoint saved by [`Model::save`] and validates the
    /// parameters against the config found next to it.
    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let config = checkpoint::read_config(&checkpoint::config_path_for(path))?;
        let params = checkpoint::read_params(path)?;
        let expected = Model::build(config.clone())?;
        if expected.params.len() != params.len() {
            return Err(ModelError::ConfigConflict(format!(
                "config expects {} parameters, checkpoint has {}",
                expected.params.len(),
                params.len()
            )));
        }
        for (want, got) in expected.params.entries().iter().zip(params.entries()) {
            if want.name() != got.name()
                || want.group() != got.group()
                || want.value().shape() != got.value().shape()
            {
                return Err(ModelError::ConfigConflict(format!(
                    "parameter `{}` ({:?}) does not match the config's `{}` ({:?})",
                    got.name(),
                    got.value().shape(),
                    want.name(),
                    want.value().shape(),
                )));
            }
        }
        Ok(Model { config, params })
    }
}

/// Forward pass reading parameters from an explicit store; `Model` and the
/// gradient-check harness share this path.
pub(crate) fn forward_from(
    config: &ModelConfig,
    params: &ParamStore,
    tape: &mut Tape,
    input: NodeId,
) -> Result<(NodeId, NodeId), TensorError> {
    let expected: Vec<usize> = std::iter::once(tape.value(input).shape()[0])
        .chain(config.input_shape())
        .collect();
    if tape.value(input).shape() != expected {
        return Err(TensorError::ShapeMismatch {
            expected,
            got: tape.value(input).shape().to_vec(),
        });
    }
    let n = tape.value(input).shape()[0];

    let mut h = input;
    if config.variant == Variant::Cnn {
        let g = &config.conv;
        for i in 0..g.filters.len() {
            let k = tape.param(params, &format!("backbone.conv{i}.k"))?;
            let b = tape.param(params, &format!("backbone.conv{i}.b"))?;
            h = tape.conv2d(h, k, b, g.stride, g.padding)?;
            h = tape.relu(h);
            if i + 1 < g.filters.len() {
                h = tape.maxpool2d(h, g.pool_window, g.pool_window)?;
            }
        }
        let flat = tape.value(h).len() / n;
        h = tape.reshape(h, &[n, flat])?;
    }
    for i in 0..config.backbone_widths.len() {
        let w = tape.param(params, &format!("backbone.fc{i}.w"))?;
        let b = tape.param(params, &format!("backbone.fc{i}.b"))?;
        h = tape.affine(h, w, b)?;
        h = tape.relu(h);
    }

    let mut head = |tape: &mut Tape, prefix: &str| -> Result<NodeId, TensorError> {
        let mut x = h;
        for i in 0..config.head_widths.len() {
            let w = tape.param(params, &format!("{prefix}.fc{i}.w"))?;
            let b = tape.param(params, &format!("{prefix}.fc{i}.b"))?;
            x = tape.affine(x, w, b)?;
            x = tape.relu(x);
        }
        let last = config.head_widths.len();
        let w = tape.param(params, &format!("{prefix}.fc{last}.w"))?;
        let b = tape.param(params, &format!("{prefix}.fc{last}.b"))?;
        tape.affine(x, w, b)
    };

    let tc = head(tape, "tc_head")?;
    let cls_raw = head(tape, "cls_head")?;
    let score = tape.sigmoid(cls_raw);
    Ok((tc, score))
}
