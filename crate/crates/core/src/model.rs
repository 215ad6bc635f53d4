//! The trainable pair scorer.
//!
//! A shared trunk embeds each side of a pair with the same weights. A ranking
//! head maps one embedding to the score `f(x)`, and a fusion head maps the
//! concatenated embeddings `[e_left, e_right]` to three logits (left, tie,
//! right). Gradients are computed by hand-written reverse mode; optimisation
//! is Adam with step decay.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureStats;
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossWeights, PairTerm};
use crate::scores::ScoreTable;
use crate::types::{ItemSet, Outcome};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Fully connected layer. `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn is_consistent(&self) -> bool {
        self.inputs > 0
            && self.outputs > 0
            && self.weights.len() == self.inputs * self.outputs
            && self.bias.len() == self.outputs
    }
}

/// Stack of dense layers with a rectifier between layers, and after the last
/// one when `activate_output` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activate_output: bool,
}

struct MlpTrace {
    /// Input of every layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Mlp {
    fn zeros(chain: &[usize], activate_output: bool) -> Self {
        Self {
            layers: chain.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            activate_output,
        }
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if self.activated(k) {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h
    }

    fn forward_traced(&self, x: &[f64]) -> MlpTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = if self.activated(k) {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        MlpTrace {
            inputs,
            pre,
            output: h,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input. Rectifier subgradient is 0 at 0.
    fn backward(&self, trace: &MlpTrace, grad_output: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut delta = grad_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if self.activated(k) {
                for (d, z) in delta.iter_mut().zip(&trace.pre[k]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.inputs[k];
            let g = &mut grads.layers[k];
            let mut grad_input = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.inputs;
                let g_row = &mut g.weights[row..row + layer.inputs];
                for (gw, x) in g_row.iter_mut().zip(input) {
                    *gw += d * x;
                }
                for (gi, w) in grad_input.iter_mut().zip(&layer.weights[row..row + layer.inputs]) {
                    *gi += d * w;
                }
            }
            delta = grad_input;
        }
        delta
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }
}

/// Layer widths of the scorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    /// Widths of the trunk layers; the last one is the embedding size.
    pub trunk: Vec<usize>,
    /// Hidden widths of the ranking head (output width is always 1).
    #[serde(default)]
    pub rank_hidden: Vec<usize>,
    /// Hidden widths of the fusion head (output width is always 3).
    pub fusion_hidden: Vec<usize>,
}

impl Dims {
    /// Two 64-wide trunk layers, a linear ranking head and a 64-wide fusion layer.
    pub fn standard(input: usize) -> Self {
        Self::with_width(input, 64)
    }

    pub fn with_width(input: usize, hidden: usize) -> Self {
        Self {
            input,
            trunk: vec![hidden, hidden],
            rank_hidden: Vec::new(),
            fusion_hidden: vec![hidden],
        }
    }

    pub fn embedding(&self) -> usize {
        self.trunk.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::InvalidConfig("input dimension must be positive".into()));
        }
        if self.trunk.is_empty() {
            return Err(Error::InvalidConfig("trunk needs at least one layer".into()));
        }
        let all = self
            .trunk
            .iter()
            .chain(&self.rank_hidden)
            .chain(&self.fusion_hidden);
        if all.into_iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn trunk_chain(&self) -> Vec<usize> {
        std::iter::once(self.input).chain(self.trunk.iter().copied()).collect()
    }

    fn rank_chain(&self) -> Vec<usize> {
        std::iter::once(self.embedding())
            .chain(self.rank_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }

    fn fusion_chain(&self) -> Vec<usize> {
        std::iter::once(2 * self.embedding())
            .chain(self.fusion_hidden.iter().copied())
            .chain(std::iter::once(3))
            .collect()
    }
}

/// Weights of the three sub-networks. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub trunk: Mlp,
    pub rank_head: Mlp,
    pub fusion_head: Mlp,
}

/// One side's forward pass through trunk and ranking head.
struct BranchTrace {
    trunk: MlpTrace,
    rank: MlpTrace,
}

impl Network {
    pub fn zeros(dims: &Dims) -> Self {
        Self {
            trunk: Mlp::zeros(&dims.trunk_chain(), true),
            rank_head: Mlp::zeros(&dims.rank_chain(), false),
            fusion_head: Mlp::zeros(&dims.fusion_chain(), false),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |m: &Mlp| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            activate_output: m.activate_output,
        };
        Self {
            trunk: zero(&self.trunk),
            rank_head: zero(&self.rank_head),
            fusion_head: zero(&self.fusion_head),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.trunk
            .params()
            .chain(self.rank_head.params())
            .chain(self.fusion_head.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.trunk
            .params_mut()
            .chain(self.rank_head.params_mut())
            .chain(self.fusion_head.params_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params().count()
    }

    /// Parameters in checkpoint order: trunk, ranking head, fusion head; each
    /// layer's row-major weights followed by its bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.trunk.same_shape(&other.trunk)
            && self.rank_head.same_shape(&other.rank_head)
            && self.fusion_head.same_shape(&other.fusion_head)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Trunk embedding of one item.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trunk.forward(x))
    }

    pub fn rank_score(&self, x: &[f64]) -> Result<f64> {
        let e = self.embed(x)?;
        Ok(self.rank_head.forward(&e)[0])
    }

    pub fn logits(&self, left: &[f64], right: &[f64]) -> Result<[f64; 3]> {
        let mut joint = self.embed(left)?;
        joint.extend(self.embed(right)?);
        let z = self.fusion_head.forward(&joint);
        Ok([z[0], z[1], z[2]])
    }

    fn branch(&self, x: &[f64]) -> BranchTrace {
        let trunk = self.trunk.forward_traced(x);
        let rank = self.rank_head.forward_traced(&trunk.output);
        BranchTrace { trunk, rank }
    }

    /// Mean multi-loss of a batch and its gradient.
    pub fn loss_and_gradient(
        &self,
        batch: &[PairInput<'_>],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, Network)> {
        weights.validate()?;
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let n = batch.len() as f64;
        let use_fusion = weights.classification > 0.0;
        let mut grads = self.zeros_like();
        let mut terms = Vec::with_capacity(batch.len());

        for entry in batch {
            self.check_input(entry.left)?;
            self.check_input(entry.right)?;
            let left = self.branch(entry.left);
            let right = self.branch(entry.right);
            let f_left = left.rank.output[0];
            let f_right = right.rank.output[0];

            let (mut g_embed_left, mut g_embed_right) = (None, None);
            let mut logits = [0.0; 3];
            if use_fusion {
                let mut joint = left.trunk.output.clone();
                joint.extend_from_slice(&right.trunk.output);
                let fusion = self.fusion_head.forward_traced(&joint);
                logits = [fusion.output[0], fusion.output[1], fusion.output[2]];
                let probs = losses::softmax(&logits);
                let mut g_logits = probs.map(|p| weights.classification * p / n);
                g_logits[entry.outcome.class_index()] -= weights.classification / n;
                let g_joint = self
                    .fusion_head
                    .backward(&fusion, &g_logits, &mut grads.fusion_head);
                let h = left.trunk.output.len();
                g_embed_left = Some(g_joint[..h].to_vec());
                g_embed_right = Some(g_joint[h..].to_vec());
            }

            let g_score = ranking_gradient(f_left, f_right, entry.outcome, weights);
            for (trace, g_f, g_embed) in [
                (&left, g_score / n, &mut g_embed_left),
                (&right, -g_score / n, &mut g_embed_right),
            ] {
                let mut g_e = vec![0.0; trace.trunk.output.len()];
                if g_f != 0.0 {
                    g_e = self
                        .rank_head
                        .backward(&trace.rank, &[g_f], &mut grads.rank_head);
                }
                if let Some(extra) = g_embed.as_ref() {
                    g_e.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
                }
                if g_e.iter().any(|&g| g != 0.0) {
                    self.trunk.backward(&trace.trunk, &g_e, &mut grads.trunk);
                }
            }

            terms.push(PairTerm {
                f_left,
                f_right,
                logits,
                outcome: entry.outcome,
            });
        }
        let breakdown = losses::combined_loss(&terms, weights)?;
        Ok((breakdown, grads))
    }

    /// Mean multi-loss of a batch, forward pass only.
    pub fn loss(&self, batch: &[PairInput<'_>], weights: &LossWeights) -> Result<LossBreakdown> {
        let terms = batch
            .iter()
            .map(|entry| {
                let f_left = self.rank_score(entry.left)?;
                let f_right = self.rank_score(entry.right)?;
                let logits = if weights.classification > 0.0 {
                    self.logits(entry.left, entry.right)?
                } else {
                    [0.0; 3]
                };
                Ok(PairTerm {
                    f_left,
                    f_right,
                    logits,
                    outcome: entry.outcome,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        losses::combined_loss(&terms, weights)
    }
}

/// d(per-entry ranking term)/d f_left; the right side gets the negation.
fn ranking_gradient(f_left: f64, f_right: f64, outcome: Outcome, w: &LossWeights) -> f64 {
    match outcome {
        Outcome::Tie => {
            let diff = f_left - f_right;
            if diff.abs() - w.gamma > 0.0 {
                w.lambda_tie * diff.signum()
            } else {
                0.0
            }
        }
        _ => {
            if losses::hinge_argument(f_left, f_right, outcome, w.gamma) > 0.0 {
                w.lambda_rank * outcome.sign()
            } else {
                0.0
            }
        }
    }
}

/// Features of both sides plus the observed outcome.
#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    pub left: &'a [f64],
    pub right: &'a [f64],
    pub outcome: Outcome,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub lambda_rank: f64,
    pub lambda_tie: f64,
    pub learning_rate: f64,
    pub decay_every_steps: u64,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            lambda_rank: 1.0,
            lambda_tie: 1.0,
            learning_rate: 0.001,
            decay_every_steps: 10_000,
            decay_factor: 0.5,
            batch_size: 128,
            max_epochs: 20,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.lambda_rank.is_finite() && self.lambda_rank >= 0.0) {
            return bad(format!("lambda_rank must be >= 0, got {}", self.lambda_rank));
        }
        if !(self.lambda_tie.is_finite() && self.lambda_tie >= 0.0) {
            return bad(format!("lambda_tie must be >= 0, got {}", self.lambda_tie));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.decay_every_steps == 0 {
            return bad("decay_every_steps must be positive".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        Ok(())
    }

    pub fn loss_weights(&self, use_classification_head: bool) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            lambda_rank: self.lambda_rank,
            lambda_tie: self.lambda_tie,
            classification: if use_classification_head { 1.0 } else { 0.0 },
        }
    }

    /// Learning rate in force at optimizer step `step` (0-based).
    pub fn effective_learning_rate(&self, step: u64) -> f64 {
        let decays = (step / self.decay_every_steps).min(i32::MAX as u64) as i32;
        self.learning_rate * self.decay_factor.powi(decays)
    }
}

/// First and second Adam moments, shaped like the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Network,
    pub second_moment: Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub network: Network,
    pub hyper: Hyperparams,
    pub adam: AdamState,
}

/// Initialises weights uniformly in `±1/sqrt(fan_in)`, biases at zero.
/// Uses `hyper.seed`.
pub fn init_params(dims: &Dims, hyper: Hyperparams) -> Result<ModelParams> {
    dims.validate()?;
    hyper.validate()?;
    let mut network = Network::zeros(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    for mlp in [
        &mut network.trunk,
        &mut network.rank_head,
        &mut network.fusion_head,
    ] {
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
    }
    let zeros = network.zeros_like();
    Ok(ModelParams {
        dims: dims.clone(),
        adam: AdamState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        },
        network,
        hyper,
    })
}

impl ModelParams {
    /// All-zero weights; useful as a degenerate reference.
    pub fn zeros(dims: &Dims, hyper: Hyperparams) -> Result<Self> {
        dims.validate()?;
        let network = Network::zeros(dims);
        let zeros = network.zeros_like();
        Ok(Self {
            dims: dims.clone(),
            adam: AdamState {
                step: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
            network,
            hyper,
        })
    }

    /// Checks the dimension chain, finiteness and optimizer state shapes.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.hyper.validate()?;
        let expected = Network::zeros(&self.dims);
        let layers_ok = [
            &self.network.trunk,
            &self.network.rank_head,
            &self.network.fusion_head,
        ]
        .iter()
        .all(|m| m.layers.iter().all(Dense::is_consistent));
        if !layers_ok || !expected.same_shape(&self.network) {
            return Err(Error::Checkpoint("layer shapes do not match the dimension chain".into()));
        }
        if !self.network.same_shape(&self.adam.first_moment)
            || !self.network.same_shape(&self.adam.second_moment)
        {
            return Err(Error::Checkpoint("optimizer state shape mismatch".into()));
        }
        if self.network.params().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims.input
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.hyper.effective_learning_rate(self.adam.step)
    }
}

/// Latent score `f(x)` of one item.
pub fn rank_score(params: &ModelParams, features: &[f64]) -> Result<f64> {
    params.network.rank_score(features)
}

/// Class probabilities (left, tie, right) from the fusion head.
pub fn classify_pair(params: &ModelParams, left: &[f64], right: &[f64]) -> Result<[f64; 3]> {
    Ok(losses::softmax(&params.network.logits(left, right)?))
}

/// Gradient of the mean multi-loss over `batch`.
pub fn backward(
    params: &ModelParams,
    batch: &[PairInput<'_>],
    weights: &LossWeights,
) -> Result<Network> {
    Ok(params.network.loss_and_gradient(batch, weights)?.1)
}

/// One Adam update with step-decayed learning rate.
pub fn adam_step(params: &mut ModelParams, gradients: &Network) -> Result<()> {
    if !params.network.same_shape(gradients) {
        return Err(Error::DimensionMismatch {
            expected: params.network.param_count(),
            found: gradients.param_count(),
        });
    }
    let lr = params.effective_learning_rate();
    let t = params.adam.step as f64 + 1.0;
    let bias1 = 1.0 - ADAM_BETA1.powf(t);
    let bias2 = 1.0 - ADAM_BETA2.powf(t);
    let adam = &mut params.adam;
    for (((p, g), m), v) in params
        .network
        .params_mut()
        .zip(gradients.params())
        .zip(adam.first_moment.params_mut())
        .zip(adam.second_moment.params_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p -= lr * (*m / bias1) / ((*v / bias2).sqrt() + ADAM_EPSILON);
    }
    adam.step += 1;
    Ok(())
}

/// Scores every item in `items` with the ranking head.
pub fn score_items(params: &ModelParams, items: &ItemSet, method: &str) -> Result<ScoreTable> {
    let scores = items
        .iter()
        .map(|item| Ok((item.id.clone(), rank_score(params, &item.features)?)))
        .collect::<Result<_>>()?;
    ScoreTable::new(method, scores)
}

pub const CHECKPOINT_FORMAT: &str = "pcs-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model document (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Outcome value of each classifier output, in logit order.
    pub class_order: [i64; 3],
    pub params: ModelParams,
    #[serde(default)]
    pub feature_stats: Option<FeatureStats>,
}

impl Checkpoint {
    pub fn new(params: ModelParams, feature_stats: Option<FeatureStats>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            class_order: Outcome::ALL.map(Outcome::value),
            params,
            feature_stats,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let checkpoint: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if checkpoint.format != CHECKPOINT_FORMAT || checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                checkpoint.format, checkpoint.version
            )));
        }
        if checkpoint.class_order != Outcome::ALL.map(Outcome::value) {
            return Err(Error::Checkpoint("unexpected class order".into()));
        }
        checkpoint.params.validate()?;
        if let Some(stats) = &checkpoint.feature_stats {
            if stats.mean.len() != checkpoint.params.input_dim() {
                return Err(Error::Checkpoint("feature statistics dimension mismatch".into()));
            }
        }
        Ok(checkpoint)
    }

    /// Scores every item of a JSONL catalog, standardising features with the
    /// checkpoint's statistics when present.
    pub fn score_items_file(&self, items_path: impl AsRef<Path>) -> Result<ScoreTable> {
        let items = match &self.feature_stats {
            Some(stats) => crate::dataio::load_items_with_stats(items_path, stats)?,
            None => crate::dataio::load_items_raw(items_path)?,
        };
        score_items(&self.params, &ItemSet::new(items)?, "model")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_dims(d: usize, h: usize) -> Dims {
        Dims::with_width(d, h)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn init_respects_bounds_and_seed() {
        let dims = Dims { input: 16, trunk: vec![16, 8], rank_hidden: vec![], fusion_hidden: vec![4] };
        let hyper = Hyperparams { seed: 3, ..Default::default() };
        let p = init_params(&dims, hyper).unwrap();
        let first = &p.network.trunk.layers[0];
        assert!(first.weights.iter().all(|w| w.abs() <= 0.25));
        assert!(first.weights.iter().any(|w| w.abs() > 0.2));
        for mlp in [&p.network.trunk, &p.network.rank_head, &p.network.fusion_head] {
            for l in &mlp.layers {
                assert!(l.bias.iter().all(|&b| b == 0.0));
                let bound = 1.0 / (l.inputs as f64).sqrt();
                assert!(l.weights.iter().all(|w| w.abs() <= bound));
            }
        }
        assert_eq!(p, init_params(&dims, hyper).unwrap());
        assert_ne!(p, init_params(&dims, Hyperparams { seed: 4, ..hyper }).unwrap());
        assert!(init_params(&Dims { trunk: vec![], ..dims.clone() }, hyper).is_err());
        assert!(init_params(&Dims { input: 0, ..dims }, hyper).is_err());
    }

    #[test]
    fn zero_params_are_neutral() {
        let p = ModelParams::zeros(&small_dims(5, 4), Hyperparams::default()).unwrap();
        let x = [1.0, -2.0, 3.0, 0.5, 9.0];
        assert_eq!(rank_score(&p, &x).unwrap(), 0.0);
        let probs = classify_pair(&p, &x, &[0.0; 5]).unwrap();
        for q in probs {
            assert_abs_diff_eq!(q, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(matches!(
            rank_score(&p, &[1.0]),
            Err(Error::DimensionMismatch { expected: 5, found: 1 })
        ));
        assert!(classify_pair(&p, &x, &[0.0; 4]).is_err());
    }

    /// Layer-by-layer recomputation written out without the Mlp machinery.
    fn unrolled_score(p: &ModelParams, x: &[f64]) -> f64 {
        let dense = |l: &Dense, v: &[f64], relu: bool| -> Vec<f64> {
            let mut out = Vec::new();
            for o in 0..l.outputs {
                let mut acc = l.bias[o];
                for i in 0..l.inputs {
                    acc += l.weights[o * l.inputs + i] * v[i];
                }
                out.push(if relu { acc.max(0.0) } else { acc });
            }
            out
        };
        let t = &p.network.trunk.layers;
        let h1 = dense(&t[0], x, true);
        let h2 = dense(&t[1], &h1, true);
        dense(&p.network.rank_head.layers[0], &h2, false)[0]
    }

    fn unrolled_probs(p: &ModelParams, xl: &[f64], xr: &[f64]) -> [f64; 3] {
        let relu_layer = |l: &Dense, v: &[f64], relu: bool| -> Vec<f64> {
            (0..l.outputs)
                .map(|o| {
                    let s = l.bias[o]
                        + (0..l.inputs).map(|i| l.weights[o * l.inputs + i] * v[i]).sum::<f64>();
                    if relu { s.max(0.0) } else { s }
                })
                .collect()
        };
        let t = &p.network.trunk.layers;
        let embed = |x: &[f64]| relu_layer(&t[1], &relu_layer(&t[0], x, true), true);
        let mut joint = embed(xl);
        joint.extend(embed(xr));
        let f = &p.network.fusion_head.layers;
        let z = relu_layer(&f[1], &relu_layer(&f[0], &joint, true), false);
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        [e[0] / s, e[1] / s, e[2] / s]
    }

    #[test]
    fn forward_matches_unrolled_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let mut p = init_params(&small_dims(6, 7), Hyperparams { seed, ..Default::default() }).unwrap();
            for b in p.network.params_mut() {
                *b += rng.random_range(-0.1..0.1);
            }
            let xl = random_vec(&mut rng, 6);
            let xr = random_vec(&mut rng, 6);
            assert_abs_diff_eq!(rank_score(&p, &xl).unwrap(), unrolled_score(&p, &xl), epsilon = 1e-12);
            assert_eq!(rank_score(&p, &xl).unwrap(), rank_score(&p, &xl).unwrap());
            let probs = classify_pair(&p, &xl, &xr).unwrap();
            let oracle = unrolled_probs(&p, &xl, &xr);
            for k in 0..3 {
                assert_abs_diff_eq!(probs[k], oracle[k], epsilon = 1e-12);
            }
            assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(&small_dims(3, 4), Hyperparams::default()).unwrap();
        let flat = p.network.flatten();
        let mut copy = p.network.zeros_like();
        copy.assign_flat(&flat).unwrap();
        assert_eq!(copy, p.network);
        assert!(copy.assign_flat(&flat[1..]).is_err());
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        // Zero network: f = 0 everywhere. A tie with gamma > 0 and no
        // classification term has zero loss.
        let p = init_params(&small_dims(3, 4), Hyperparams::default()).unwrap();
        let mut z = p.clone();
        for w in z.network.rank_head.params_mut() {
            *w = 0.0;
        }
        let x = [0.3, -0.2, 0.9];
        let batch = [PairInput { left: &x, right: &x, outcome: Outcome::Tie }];
        let w = LossWeights { gamma: 0.1, lambda_rank: 1.0, lambda_tie: 1.0, classification: 0.0 };
        let g = backward(&z, &batch, &w).unwrap();
        assert!(g.params().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_entries_do_not_change_gradient() {
        let p = init_params(&small_dims(4, 5), Hyperparams { seed: 9, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_vec(&mut rng, 4);
        let b = random_vec(&mut rng, 4);
        let w = LossWeights { gamma: 0.5, lambda_rank: 1.0, lambda_tie: 1.0, classification: 1.0 };
        let one = [PairInput { left: &a, right: &b, outcome: Outcome::Right }];
        let two = [one[0], one[0]];
        let g1 = backward(&p, &one, &w).unwrap().flatten();
        let g2 = backward(&p, &two, &w).unwrap().flatten();
        for (x, y) in g1.iter().zip(&g2) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn trunk_is_shared_between_branches() {
        // One trunk block serves both sides: perturbing it moves both
        // embeddings of an identical input identically.
        let mut p = init_params(&small_dims(3, 4), Hyperparams::default()).unwrap();
        let x = [0.5, 0.1, -0.4];
        p.network.trunk.layers[0].bias[0] += 0.7;
        p.network.trunk.layers[1].weights[3] -= 0.2;
        let e = p.network.embed(&x).unwrap();
        let mut joint = e.clone();
        joint.extend(&e);
        let direct = p.network.fusion_head.forward(&joint);
        let via_pair = p.network.logits(&x, &x).unwrap();
        assert_eq!(direct, via_pair.to_vec());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let dims = Dims { input: 1, trunk: vec![1], rank_hidden: vec![], fusion_hidden: vec![1] };
        let mut p = ModelParams::zeros(&dims, Hyperparams::default()).unwrap();
        let mut g = p.network.zeros_like();
        g.trunk.layers[0].weights[0] = 0.37;
        g.trunk.layers[0].bias[0] = -2.0;
        adam_step(&mut p, &g).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let lr = 0.001;
        assert_abs_diff_eq!(p.network.trunk.layers[0].weights[0], -lr * 0.37 / (0.37 + 1e-8), epsilon = 1e-18);
        assert_abs_diff_eq!(p.network.trunk.layers[0].bias[0], lr * 2.0 / (2.0 + 1e-8), epsilon = 1e-18);
        assert_eq!(p.adam.step, 1);
        // Untouched parameters stay at zero.
        assert!(p.network.fusion_head.params().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_from_fresh_state() {
        let p0 = init_params(&small_dims(3, 4), Hyperparams::default()).unwrap();
        let mut p = p0.clone();
        adam_step(&mut p, &p0.network.zeros_like()).unwrap();
        assert_eq!(p.network, p0.network);
        let other = init_params(&small_dims(4, 4), Hyperparams::default()).unwrap();
        assert!(adam_step(&mut p, &other.network).is_err());
    }

    #[test]
    fn step_decay_halves_rate() {
        let h = Hyperparams { decay_every_steps: 10, decay_factor: 0.5, ..Default::default() };
        assert_eq!(h.effective_learning_rate(9), 0.001);
        assert_eq!(h.effective_learning_rate(10), 0.0005);
        assert_eq!(h.effective_learning_rate(25), 0.00025);
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut p = init_params(&small_dims(3, 4), Hyperparams { seed: 5, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, 3);
        let y = random_vec(&mut rng, 3);
        let batch = [PairInput { left: &x, right: &y, outcome: Outcome::Left }];
        let g = backward(&p, &batch, &p.hyper.loss_weights(true)).unwrap();
        adam_step(&mut p, &g).unwrap();
        let stats = FeatureStats { mean: vec![0.1, 0.2, 1.0 / 3.0], std: vec![1.0, 2.0, 0.7] };
        let ck = Checkpoint::new(p, Some(stats));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.network.params().zip(ck.params.network.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_rejects_inconsistent_documents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut ck = Checkpoint::new(
            init_params(&small_dims(3, 4), Hyperparams::default()).unwrap(),
            None,
        );
        ck.params.network.trunk.layers[0].weights.pop();
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        ck.version = 99;
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
