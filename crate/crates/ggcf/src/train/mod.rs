//! BPR training: loss assembly, exact gradients through the dual-geometry
//! forward pass, L2 regularization, Adam updates, and epoch orchestration.
//!
//! All trainable parameters live in flat Euclidean space (the hyperbolic
//! embeddings through their tangent coordinates at the origin), so plain Adam
//! applies without any manifold retraction.

mod backward;
mod vjp;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GgcfError, Result};
use crate::eval::evaluate;
use crate::graph::{sample_negative, BprTriple, InteractionGraph, InteractionSet};
use crate::model::{forward, init_params, AblationFlags, ParamSet, Table};

pub(crate) use backward::{gradients_into, Workspace};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Propagation layer count K.
    pub layers: usize,
    /// Embedding dimension d.
    pub dim: usize,
    pub seed: u64,
    /// Epochs between evaluations.
    pub eval_every: usize,
    /// Zero out wall-clock fields so histories are byte-identical across runs.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            l2_weight: 1e-4,
            batch_size: 1024,
            epochs: 400,
            layers: 3,
            dim: 64,
            seed: 42,
            eval_every: 20,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(GgcfError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !self.l2_weight.is_finite() || self.l2_weight < 0.0 {
            return Err(GgcfError::Config(format!(
                "l2_weight must be non-negative and finite, got {}",
                self.l2_weight
            )));
        }
        if self.batch_size < 1 {
            return Err(GgcfError::Config("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(GgcfError::Config("epochs must be >= 1".into()));
        }
        if self.dim < 1 {
            return Err(GgcfError::Config("dim must be >= 1".into()));
        }
        if self.eval_every < 1 {
            return Err(GgcfError::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gradient of the loss with respect to every ParamSet entry; same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub euclid_user: Table,
    pub euclid_item: Table,
    pub tangent_user: Table,
    pub tangent_item: Table,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub lambda: f64,
}

impl GradSet {
    pub fn zeros(user_count: usize, item_count: usize, dim: usize) -> Self {
        GradSet {
            euclid_user: Table::zeros(user_count, dim),
            euclid_item: Table::zeros(item_count, dim),
            tangent_user: Table::zeros(user_count, dim),
            tangent_item: Table::zeros(item_count, dim),
            gamma: 0.0,
            gamma_prime: 0.0,
            lambda: 0.0,
        }
    }

    pub fn zero(&mut self) {
        self.euclid_user.fill(0.0);
        self.euclid_item.fill(0.0);
        self.tangent_user.fill(0.0);
        self.tangent_item.fill(0.0);
        self.gamma = 0.0;
        self.gamma_prime = 0.0;
        self.lambda = 0.0;
    }

    pub fn is_finite(&self) -> bool {
        self.euclid_user.is_finite()
            && self.euclid_item.is_finite()
            && self.tangent_user.is_finite()
            && self.tangent_item.is_finite()
            && self.gamma.is_finite()
            && self.gamma_prime.is_finite()
            && self.lambda.is_finite()
    }

    /// First non-finite entry, as a diagnostic label.
    fn first_non_finite(&self) -> Option<String> {
        let tables = [
            ("euclid_user", &self.euclid_user),
            ("euclid_item", &self.euclid_item),
            ("tangent_user", &self.tangent_user),
            ("tangent_item", &self.tangent_item),
        ];
        for (name, t) in tables {
            if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
                return Some(format!("{name}[{}, {}]", pos / t.cols(), pos % t.cols()));
            }
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("gamma_prime", self.gamma_prime),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() {
                return Some(name.into());
            }
        }
        None
    }
}

/// Adam moment accumulators mirroring ParamSet, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: GradSet,
    pub v: GradSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(user_count: usize, item_count: usize, dim: usize) -> Self {
        AdamState {
            m: GradSet::zeros(user_count, item_count, dim),
            v: GradSet::zeros(user_count, item_count, dim),
            step: 0,
        }
    }
}

/// Mean over the batch of -ln sigma(pos - neg), in the stable softplus form.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() {
        return Err(GgcfError::Degenerate("BPR loss over an empty batch".into()));
    }
    if pos_scores.len() != neg_scores.len() {
        return Err(GgcfError::Dimension(format!(
            "positive and negative score batches differ: {} vs {}",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    let sum: f64 = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(&p, &n)| backward::softplus_neg(p - n))
        .sum();
    Ok(sum / pos_scores.len() as f64)
}

/// (l2_weight / batch_size) * sum of squared norms of the layer-0 embedding
/// rows (both geometric tables) of u, i, j over the batch. Tables belonging to
/// a geometry disabled by `flags` are skipped so their gradients stay exactly
/// zero.
pub fn l2_penalty(
    params: &ParamSet,
    batch: &[BprTriple],
    l2_weight: f64,
    flags: AblationFlags,
) -> f64 {
    if batch.is_empty() || l2_weight == 0.0 {
        return 0.0;
    }
    let coeff = l2_weight / batch.len() as f64;
    coeff * backward::l2_accumulate(params, batch, coeff, flags, None)
}

/// Exact gradient of bpr_loss + l2_penalty for one batch, plus the loss value.
/// Allocates fresh buffers; the training loop reuses a [`Workspace`] instead.
pub fn gradients(
    graph: &InteractionGraph,
    params: &ParamSet,
    batch: &[BprTriple],
    config: &TrainConfig,
    flags: AblationFlags,
) -> Result<(GradSet, f64)> {
    let mut ws = Workspace::new(
        graph.user_count(),
        graph.item_count(),
        params.dim(),
        config.layers,
    );
    let loss = gradients_into(&mut ws, graph, params, batch, config.l2_weight, flags)?;
    Ok((ws.grads, loss))
}

/// One Adam update with bias correction over every ParamSet entry.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradSet,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if let Some(at) = grads.first_non_finite() {
        return Err(GgcfError::Numeric(format!(
            "aborting optimizer step {}: non-finite gradient at {at}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step;
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    let update_slice = |x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for j in 0..x.len() {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            x[j] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    };
    update_slice(
        params.euclid_user.data_mut(),
        grads.euclid_user.data(),
        state.m.euclid_user.data_mut(),
        state.v.euclid_user.data_mut(),
    );
    update_slice(
        params.euclid_item.data_mut(),
        grads.euclid_item.data(),
        state.m.euclid_item.data_mut(),
        state.v.euclid_item.data_mut(),
    );
    update_slice(
        params.tangent_user.data_mut(),
        grads.tangent_user.data(),
        state.m.tangent_user.data_mut(),
        state.v.tangent_user.data_mut(),
    );
    update_slice(
        params.tangent_item.data_mut(),
        grads.tangent_item.data(),
        state.m.tangent_item.data_mut(),
        state.v.tangent_item.data_mut(),
    );
    let update_scalar = |x: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *x -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    };
    update_scalar(
        &mut params.gamma,
        grads.gamma,
        &mut state.m.gamma,
        &mut state.v.gamma,
    );
    update_scalar(
        &mut params.gamma_prime,
        grads.gamma_prime,
        &mut state.m.gamma_prime,
        &mut state.v.gamma_prime,
    );
    update_scalar(
        &mut params.lambda,
        grads.lambda,
        &mut state.m.lambda,
        &mut state.v.lambda,
    );
    Ok(())
}

/// One line of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub wall_clock_secs: f64,
}

/// Held-out data for in-training evaluation: the train split (for masking),
/// the test split, and the ranking cutoff.
#[derive(Clone, Copy)]
pub struct EvalSets<'a> {
    pub train: &'a InteractionSet,
    pub test: &'a InteractionSet,
    pub k: usize,
}

/// Train from a fresh initialization. Each epoch visits every training positive
/// once in shuffled order, pairing it with one uniformly redrawn negative;
/// chunks of `batch_size` positives form the optimizer steps. When `eval_sets`
/// is given, recall@k and ndcg@k are computed every `eval_every` epochs and on
/// the final epoch. `on_epoch` sees every history record together with the
/// current parameters.
pub fn fit(
    graph: &InteractionGraph,
    eval_sets: Option<EvalSets<'_>>,
    config: &TrainConfig,
    flags: AblationFlags,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamSet) -> Result<()>,
) -> Result<(ParamSet, Vec<EpochRecord>)> {
    config.validate()?;
    flags.validate()?;
    if let Some(EvalSets {
        train: train_set,
        test: test_set,
        ..
    }) = eval_sets
    {
        if train_set.user_count() != graph.user_count()
            || train_set.item_count() != graph.item_count()
            || test_set.user_count() != graph.user_count()
            || test_set.item_count() != graph.item_count()
        {
            return Err(GgcfError::Dimension(
                "evaluation splits do not match the training graph's universe".into(),
            ));
        }
    }

    let users = graph.user_count();
    let items = graph.item_count();
    let mut params = init_params(users, items, config.dim, config.seed)?;
    let mut ws = Workspace::new(users, items, config.dim, config.layers);
    let mut adam = AdamState::new(users, items, config.dim);
    // Separate stream from the init draws.
    let sampler_seed = config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(1);
    let mut rng = ChaCha8Rng::seed_from_u64(sampler_seed);

    let edge_count = graph.edge_count();
    let item_count = items as u32;
    let mut order: Vec<usize> = (0..edge_count).collect();
    let mut batch: Vec<BprTriple> = Vec::with_capacity(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            for &e in chunk {
                let (user, pos_item) = graph.edge(e);
                if let Some(neg_item) = sample_negative(graph, user, item_count, &mut rng) {
                    batch.push(BprTriple {
                        user,
                        pos_item,
                        neg_item,
                    });
                }
            }
            if batch.is_empty() {
                continue;
            }
            let loss = gradients_into(&mut ws, graph, &params, &batch, config.l2_weight, flags)?;
            adam_step(&mut params, &ws.grads, &mut adam, config.learning_rate)?;
            loss_sum += loss * batch.len() as f64;
            loss_count += batch.len();
        }
        let loss = if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            0.0
        };

        let (mut recall, mut ndcg) = (None, None);
        if let Some(sets) = eval_sets {
            if epoch % config.eval_every == 0 || epoch == config.epochs {
                let fused = forward(graph, &params, config.layers, flags)?;
                let lambda_eff = flags.effective_lambda(params.lambda);
                let report = evaluate(&fused, sets.train, sets.test, sets.k, lambda_eff)?;
                recall = Some(report.recall);
                ndcg = Some(report.ndcg);
            }
        }

        let record = EpochRecord {
            epoch,
            loss,
            recall,
            ndcg,
            wall_clock_secs: if config.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        };
        on_epoch(&record, &params)?;
        history.push(record);
    }
    Ok((params, history))
}
