//! Training: negative sampling, binary cross-entropy, Adam, and the epoch
//! loop with best-validation snapshotting.
//!
//! Reproducibility contract: the tuple (seed, config, data) fully
//! determines the parameter trajectory. All randomness flows through one
//! seeded ChaCha stream, batches are accumulated in a fixed order, and the
//! reported artifacts contain no timestamps.

pub mod gradients;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderKind;
use crate::encoder::{AttentionMode, ModelParameters};
use crate::error::{Error, Result};
use crate::eval;
use crate::graph::{KnowledgeGraph, Split, Triple};
use crate::train::gradients::{plan_batch, batch_gradients, Gradients};

pub use gradients::{batch_loss, BatchPlan, PROB_CLAMP};

/// Hyper-parameters and mode switches for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Negatives sampled per positive.
    pub n_negatives: usize,
    /// Dropout probability on base-table entries.
    pub dropout_emb: f64,
    /// Dropout probability on normalized link coefficients.
    pub dropout_link: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Positives per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub decoder: DecoderKind,
    pub attention: AttentionMode,
    /// Per-node bias term on/off.
    pub use_bias: bool,
    /// Validate (and snapshot on improvement) every this many epochs.
    pub valid_every: usize,
    /// Learning-rate multiplier for the attention scalars. Their gradients
    /// pass through the per-node budget quotient, which scales them down by
    /// roughly the in-degree; a multiplier above 1 compensates.
    pub attention_lr_mult: f64,
    /// Forward edge ids to flag adjacency-only before training starts.
    pub skip_edge_ids: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 300,
            n_negatives: 10,
            dropout_emb: 0.5,
            dropout_link: 0.5,
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 1024,
            seed: 42,
            decoder: DecoderKind::DistMult,
            attention: AttentionMode::Learned,
            use_bias: true,
            valid_every: 1,
            attention_lr_mult: 1.0,
            skip_edge_ids: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        if self.n_negatives == 0 {
            return Err(Error::InvalidArgument("n_negatives must be >= 1".into()));
        }
        for (name, p) in [("dropout_emb", self.dropout_emb), ("dropout_link", self.dropout_link)]
        {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1), got {p}"
                )));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.valid_every == 0 {
            return Err(Error::InvalidArgument("valid_every must be >= 1".into()));
        }
        if !(self.attention_lr_mult > 0.0) {
            return Err(Error::InvalidArgument(
                "attention_lr_mult must be positive".into(),
            ));
        }
        if self.decoder == DecoderKind::Complex && self.dim % 2 != 0 {
            return Err(Error::InvalidArgument(
                "complex decoder requires an even dim".into(),
            ));
        }
        Ok(())
    }
}

/// What happened during a run. Wall-clock stays in memory only; exported
/// artifacts must be byte-reproducible.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// (epoch, filtered validation MRR) at each validation point.
    pub val_mrr: Vec<(usize, f64)>,
    pub wall_secs: f64,
    /// Epoch of the returned snapshot, when validation ran.
    pub best_epoch: Option<usize>,
    /// Content fingerprint of the returned parameters.
    pub snapshot_id: String,
}

impl TrainReport {
    /// Training log CSV: `epoch,loss,val_mrr` (empty MRR on epochs without
    /// validation).
    pub fn write_log<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,val_mrr")?;
        let mut val_iter = self.val_mrr.iter().peekable();
        for (epoch, loss) in self.epoch_loss.iter().enumerate() {
            let val = match val_iter.peek() {
                Some(&&(e, mrr)) if e == epoch => {
                    val_iter.next();
                    format!("{mrr}")
                }
                _ => String::new(),
            };
            writeln!(w, "{epoch},{loss},{val}")?;
        }
        Ok(())
    }
}

/// Bordes-style corruption: each negative replaces the subject or the
/// object (chosen uniformly) with a uniform entity other than the original,
/// so every negative is at Hamming distance one from the positive and the
/// positive itself is never returned. Negatives are not filtered against
/// the known-true set.
pub fn sample_negatives(
    positive: Triple,
    n: usize,
    num_entities: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triple>> {
    if num_entities < 2 {
        return Err(Error::Sampling(
            "cannot corrupt triples over a single-entity vocabulary".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let corrupt_subject = rng.random_bool(0.5);
        let original = if corrupt_subject {
            positive.subject
        } else {
            positive.object
        };
        let mut replacement = rng.random_range(0..num_entities - 1);
        if replacement >= original {
            replacement += 1;
        }
        out.push(if corrupt_subject {
            Triple::new(replacement, positive.relation, positive.object)
        } else {
            Triple::new(positive.subject, positive.relation, replacement)
        });
    }
    Ok(out)
}

/// Mean binary cross-entropy with probabilities clamped 1e-12 from the
/// boundaries. Labels are 0 or 1.
pub fn bce_loss(probabilities: &[f64], labels: &[f64]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities vs {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::InvalidArgument("empty loss batch".into()));
    }
    let sum: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
        })
        .sum();
    Ok(sum / probabilities.len() as f64)
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: f64) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Plain Adam (beta 0.9/0.999, eps 1e-8) over all parameter blocks.
struct Adam {
    lr: f64,
    attention_lr_mult: f64,
    step: u64,
    base: Moments,
    bias: Option<Moments>,
    rel_scale: Moments,
    relations: Moments,
    attention: Option<Moments>,
}

impl Adam {
    fn new(lr: f64, attention_lr_mult: f64, params: &ModelParameters) -> Self {
        Adam {
            lr,
            attention_lr_mult,
            step: 0,
            base: Moments::new(params.base.data().len()),
            bias: params
                .use_bias
                .then(|| Moments::new(params.bias.data().len())),
            rel_scale: Moments::new(params.rel_scale.data().len()),
            relations: Moments::new(params.relations.rows().data().len()),
            attention: matches!(params.attention_mode, AttentionMode::Learned)
                .then(|| Moments::new(params.attention.len())),
        }
    }

    fn step(&mut self, params: &mut ModelParameters, g: &Gradients) {
        self.step += 1;
        let t = self.step as f64;
        let lr = self.lr;
        self.base.update(params.base.data_mut(), g.base.data(), lr, t);
        if let (Some(moments), Some(grads)) = (self.bias.as_mut(), g.bias.as_ref()) {
            moments.update(params.bias.data_mut(), grads.data(), lr, t);
        }
        self.rel_scale
            .update(params.rel_scale.data_mut(), g.rel_scale.data(), lr, t);
        self.relations.update(
            params.relations.rows_mut().data_mut(),
            g.relations.data(),
            lr,
            t,
        );
        if let (Some(moments), Some(grads)) = (self.attention.as_mut(), g.attention.as_ref()) {
            moments.update(
                params.attention.values_mut(),
                grads,
                lr * self.attention_lr_mult,
                t,
            );
        }
    }
}

/// Runs the full loop: shuffled positive batches expanded with negatives,
/// Adam updates, validation MRR tracking, and returns the best-validation
/// snapshot (or the final parameters when there is no validation split).
pub fn train(cfg: &TrainConfig, kg: &KnowledgeGraph) -> Result<(ModelParameters, TrainReport)> {
    cfg.validate()?;
    let marked;
    let kg = match &cfg.skip_edge_ids {
        Some(ids) => {
            let mut clone = kg.clone();
            clone.mark_adjacency_only(ids)?;
            marked = clone;
            &marked
        }
        None => kg,
    };
    let pool: Vec<Triple> = kg.positive_edges().map(|e| e.triple).collect();
    if pool.is_empty() {
        return Err(Error::EmptyPositivePool);
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParameters::init(
        kg,
        cfg.dim,
        cfg.decoder,
        cfg.attention,
        cfg.use_bias,
        &mut rng,
    )?;
    let mut adam = Adam::new(cfg.learning_rate, cfg.attention_lr_mult, &params);

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut val_mrr = Vec::new();
    let mut best: Option<(f64, usize, ModelParameters)> = None;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let validate = !kg.split(Split::Valid).is_empty();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_examples = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let positives: Vec<Triple> = chunk.iter().map(|&i| pool[i]).collect();
            let plan = plan_batch(kg, &positives, cfg, &mut rng)?;
            let examples = plan.triples.len();
            let (loss, grads) = batch_gradients(&params, kg, &plan)?;
            adam.step(&mut params, &grads);
            loss_sum += loss * examples as f64;
            n_examples += examples;
        }
        epoch_loss.push(loss_sum / n_examples as f64);

        if validate && (epoch + 1) % cfg.valid_every == 0 {
            let mrr = eval::evaluate(&params, kg, Split::Valid)?.mrr_filtered;
            val_mrr.push((epoch, mrr));
            if best.as_ref().map_or(true, |(b, _, _)| mrr > *b) {
                best = Some((mrr, epoch, params.clone()));
            }
        }
    }

    let (final_params, best_epoch) = match best {
        Some((_, epoch, snapshot)) => (snapshot, Some(epoch)),
        None => (params, None),
    };
    let report = TrainReport {
        epoch_loss,
        val_mrr,
        wall_secs: start.elapsed().as_secs_f64(),
        best_epoch,
        snapshot_id: crate::checkpoint::fingerprint(&final_params),
    };
    Ok((final_params, report))
}

/// Gradients of one batch with stochastic parts drawn from `rng`; see
/// [`gradients::batch_gradients`] for the plan-based form.
pub use gradients::gradients;
