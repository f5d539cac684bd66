//! Exact reverse-mode gradients of the masked batch loss with respect to
//! every parameter block, including the path through the per-node budget
//! normalization and the absolute-value subgradient (sign(0) := 0).
//!
//! A batch is frozen into a [`BatchPlan`] first (negatives and dropout
//! masks drawn once from the caller's rng); [`batch_loss`] and
//! [`batch_gradients`] are then pure functions of the parameters, which is
//! what makes finite-difference verification possible.

use std::collections::HashMap;

use rand::Rng;

use crate::attention;
use crate::decoder::probability;
use crate::encoder::{self, ModelParameters};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::mat::Mat;
use crate::train::{sample_negatives, TrainConfig};

/// Probabilities are clamped this far from 0 and 1 inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// A batch with everything stochastic already drawn: positives interleaved
/// with their negatives, labels, and the dropout masks.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub triples: Vec<Triple>,
    pub labels: Vec<f64>,
    dropout_emb: f64,
    dropout_link: f64,
    emb_mask: Option<Vec<bool>>,
    link_mask: Option<Vec<bool>>,
}

impl BatchPlan {
    /// A dropout-free plan over explicit examples; useful for tests.
    pub fn plain(triples: Vec<Triple>, labels: Vec<f64>) -> Self {
        BatchPlan {
            triples,
            labels,
            dropout_emb: 0.0,
            dropout_link: 0.0,
            emb_mask: None,
            link_mask: None,
        }
    }
}

/// Expands positives with `n_negatives` corruptions each and draws both
/// dropout masks.
pub fn plan_batch(
    kg: &KnowledgeGraph,
    positives: &[Triple],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<BatchPlan> {
    if positives.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_positive = 1 + cfg.n_negatives;
    let mut triples = Vec::with_capacity(positives.len() * per_positive);
    let mut labels = Vec::with_capacity(positives.len() * per_positive);
    for &pos in positives {
        triples.push(pos);
        labels.push(1.0);
        for neg in sample_negatives(pos, cfg.n_negatives, kg.num_entities(), rng)? {
            triples.push(neg);
            labels.push(0.0);
        }
    }
    let emb_mask = encoder::embedding_mask(
        kg.num_entities() * cfg.dim,
        cfg.dropout_emb,
        rng,
    )?;
    let link_mask = attention::link_mask(kg.num_edges(), cfg.dropout_link, rng)?;
    Ok(BatchPlan {
        triples,
        labels,
        dropout_emb: cfg.dropout_emb,
        dropout_link: cfg.dropout_link,
        emb_mask,
        link_mask,
    })
}

/// Gradient of the batch loss per parameter block. `bias` is absent when
/// the model runs without biases, `attention` when attention is fixed.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub base: Mat,
    pub bias: Option<Mat>,
    pub rel_scale: Mat,
    pub relations: Mat,
    pub attention: Option<Vec<f64>>,
}

struct TouchedNodes {
    nodes: Vec<usize>,
    slot: HashMap<usize, usize>,
}

impl TouchedNodes {
    fn collect(triples: &[Triple]) -> Self {
        let mut nodes = Vec::new();
        let mut slot = HashMap::new();
        for t in triples {
            for node in [t.subject, t.object] {
                slot.entry(node).or_insert_with(|| {
                    nodes.push(node);
                    nodes.len() - 1
                });
            }
        }
        TouchedNodes { nodes, slot }
    }
}

/// Forward pass shared by loss and gradients: embeds exactly the nodes the
/// batch touches, under the plan's masks.
struct BatchForward {
    touched: TouchedNodes,
    rows: Mat,
    coeffs: Vec<f64>,
    masked_base: Option<Mat>,
    c: crate::attention::NormalizedAttention,
}

fn forward(
    params: &ModelParameters,
    kg: &KnowledgeGraph,
    plan: &BatchPlan,
) -> Result<BatchForward> {
    if let Some(mask) = &plan.emb_mask {
        if mask.len() != params.base.data().len() {
            return Err(Error::DimensionMismatch(format!(
                "plan embedding mask covers {} entries, base table has {}",
                mask.len(),
                params.base.data().len()
            )));
        }
    }
    let c = params.normalized_attention(kg);
    let coeffs =
        attention::masked_coefficients(c.values(), plan.link_mask.as_deref(), plan.dropout_link);
    let masked_base = encoder::masked_base(&params.base, plan.emb_mask.as_deref(), plan.dropout_emb);
    let base = masked_base.as_ref().unwrap_or(&params.base);
    let bias = params.use_bias.then_some(&params.bias);
    let touched = TouchedNodes::collect(&plan.triples);
    let mut rows = Mat::zeros(touched.nodes.len(), params.dim());
    for (slot, &node) in touched.nodes.iter().enumerate() {
        encoder::encode_row_into(
            rows.row_mut(slot),
            node,
            kg,
            base,
            &params.rel_scale,
            bias,
            &coeffs,
        );
    }
    Ok(BatchForward {
        touched,
        rows,
        coeffs,
        masked_base,
        c,
    })
}

fn clamped_bce(p: f64, label: f64) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln())
}

/// d(clamped bce)/d(score), exact including the clamp's dead zones.
fn bce_score_grad(p: f64, label: f64) -> f64 {
    if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
        return 0.0;
    }
    p - label
}

/// Mean clamped binary cross-entropy of the plan under the given
/// parameters. Pure in `params`; the finite-difference oracle in the test
/// suite differentiates exactly this function.
pub fn batch_loss(params: &ModelParameters, kg: &KnowledgeGraph, plan: &BatchPlan) -> Result<f64> {
    params.validate(kg)?;
    let fwd = forward(params, kg, plan)?;
    let mut sum = 0.0;
    for (t, &label) in plan.triples.iter().zip(&plan.labels) {
        let es = fwd.rows.row(fwd.touched.slot[&t.subject]);
        let eo = fwd.rows.row(fwd.touched.slot[&t.object]);
        let score = params.relations.score(es, t.relation, eo)?;
        sum += clamped_bce(probability(score), label);
    }
    let loss = sum / plan.triples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(loss)
}

/// Loss and exact gradients for every trainable block.
pub fn batch_gradients(
    params: &ModelParameters,
    kg: &KnowledgeGraph,
    plan: &BatchPlan,
) -> Result<(f64, Gradients)> {
    params.validate(kg)?;
    let dim = params.dim();
    let n_rel = kg.num_relations();
    let fwd = forward(params, kg, plan)?;
    let base = fwd.masked_base.as_ref().unwrap_or(&params.base);
    let c = &fwd.c;

    let mut d_rows = Mat::zeros(fwd.touched.nodes.len(), dim);
    let mut d_relations = Mat::zeros(params.relations.rows().rows(), dim);
    let mut ds_buf = vec![0.0; dim];
    let mut do_buf = vec![0.0; dim];
    let m = plan.triples.len() as f64;
    let mut loss_sum = 0.0;

    for (t, &label) in plan.triples.iter().zip(&plan.labels) {
        let slot_s = fwd.touched.slot[&t.subject];
        let slot_o = fwd.touched.slot[&t.object];
        let es = fwd.rows.row(slot_s);
        let eo = fwd.rows.row(slot_o);
        let score = params.relations.score(es, t.relation, eo)?;
        let p = probability(score);
        loss_sum += clamped_bce(p, label);
        let factor = bce_score_grad(p, label) / m;
        if factor == 0.0 {
            continue;
        }
        ds_buf.fill(0.0);
        do_buf.fill(0.0);
        params.relations.accumulate_score_grad(
            es,
            t.relation,
            eo,
            factor,
            &mut ds_buf,
            d_relations.row_mut(t.relation),
            &mut do_buf,
        );
        // Separate buffers so subject == object accumulates both roles.
        for (v, g) in d_rows.row_mut(slot_s).iter_mut().zip(&ds_buf) {
            *v += g;
        }
        for (v, g) in d_rows.row_mut(slot_o).iter_mut().zip(&do_buf) {
            *v += g;
        }
    }
    let loss = loss_sum / m;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }

    let mut g = Gradients {
        base: Mat::zeros(params.base.rows(), dim),
        bias: params.use_bias.then(|| Mat::zeros(params.bias.rows(), dim)),
        rel_scale: Mat::zeros(params.rel_scale.rows(), dim),
        relations: d_relations,
        attention: matches!(params.attention_mode, crate::encoder::AttentionMode::Learned)
            .then(|| vec![0.0; kg.num_edges()]),
    };

    let inv_emb = 1.0 / (1.0 - plan.dropout_emb);
    let inv_link = 1.0 / (1.0 - plan.dropout_link);

    // d(loss)/d(normalized coefficient), per edge into a touched node.
    let mut d_norm = vec![0.0; kg.num_edges()];

    for (slot, &node) in fwd.touched.nodes.iter().enumerate() {
        let de = d_rows.row(slot);
        if let Some(bias_grad) = g.bias.as_mut() {
            for (v, gk) in bias_grad.row_mut(node).iter_mut().zip(de) {
                *v += gk;
            }
        }
        for &e in kg.incoming(node) {
            let rec = &kg.edges()[e];
            let src = rec.source();
            let r_enc = rec.encoder_relation(n_rel);
            let cm = fwd.coeffs[e];
            let src_row = base.row(src);
            let mut d_coeff = 0.0;
            {
                let scale_row = params.rel_scale.row(r_enc);
                for k in 0..dim {
                    d_coeff += de[k] * src_row[k] * scale_row[k];
                }
            }
            if cm != 0.0 {
                let scale_row = params.rel_scale.row(r_enc);
                let base_grad = g.base.row_mut(src);
                for k in 0..dim {
                    let mfac = match &plan.emb_mask {
                        None => 1.0,
                        Some(mask) => {
                            if mask[src * dim + k] {
                                inv_emb
                            } else {
                                0.0
                            }
                        }
                    };
                    base_grad[k] += cm * de[k] * scale_row[k] * mfac;
                }
                let scale_grad = g.rel_scale.row_mut(r_enc);
                for k in 0..dim {
                    scale_grad[k] += cm * de[k] * src_row[k];
                }
            }
            // Chain through link dropout: a dropped edge's coefficient did
            // not reach the loss at all.
            let link_fac = match &plan.link_mask {
                None => 1.0,
                Some(mask) => {
                    if mask[e] {
                        inv_link
                    } else {
                        0.0
                    }
                }
            };
            d_norm[e] = d_coeff * link_fac;
        }
    }

    // Backward through the budget normalization, node by node.
    if let Some(datt) = g.attention.as_mut() {
        let raw = params.attention.values();
        for &node in &fwd.touched.nodes {
            let budget = c.budget(node);
            if budget == 0.0 {
                continue;
            }
            let incoming = kg.incoming(node);
            let mut dot = 0.0;
            for &e in incoming {
                dot += d_norm[e] * c.get(e);
            }
            for &e in incoming {
                let sign = if raw[e] > 0.0 {
                    1.0
                } else if raw[e] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                datt[e] = sign * (d_norm[e] - dot) / budget;
            }
        }
    }

    check_finite("base", g.base.data())?;
    if let Some(b) = &g.bias {
        check_finite("bias", b.data())?;
    }
    check_finite("rel_scale", g.rel_scale.data())?;
    check_finite("relations", g.relations.data())?;
    if let Some(a) = &g.attention {
        check_finite("attention", a)?;
    }
    Ok((loss, g))
}

fn check_finite(block: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(block))
    }
}

/// Convenience wrapper matching the training loop's calling convention:
/// draws negatives and masks from `rng`, then differentiates.
pub fn gradients(
    params: &ModelParameters,
    kg: &KnowledgeGraph,
    positives: &[Triple],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Gradients)> {
    let plan = plan_batch(kg, positives, cfg, rng)?;
    batch_gradients(params, kg, &plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderKind;
    use crate::encoder::AttentionMode;
    use crate::graph::{GraphBuilder, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_kg(n_nodes: usize, n_relations: usize, n_edges: usize, seed: u64) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = GraphBuilder::new();
        for i in 0..n_nodes {
            b.vocab_mut().intern_entity(&format!("n{i}"));
        }
        for r in 0..n_relations {
            b.vocab_mut().intern_relation(&format!("r{r}"));
        }
        let mut added = 0;
        while added < n_edges {
            let t = Triple::new(
                rng.random_range(0..n_nodes),
                rng.random_range(0..n_relations),
                rng.random_range(0..n_nodes),
            );
            if b.add_triple(t, Split::Train) {
                added += 1;
            }
        }
        b.build(true)
    }

    fn perturbed_params(
        kg: &KnowledgeGraph,
        dim: usize,
        decoder: DecoderKind,
        attention: AttentionMode,
        use_bias: bool,
        seed: u64,
    ) -> ModelParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p =
            ModelParameters::init(kg, dim, decoder, attention, use_bias, &mut rng).unwrap();
        // Move every block off its symmetric starting point.
        for v in p.bias.data_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        for v in p.rel_scale.data_mut() {
            *v = 0.5 + rng.random::<f64>();
        }
        for v in p.attention.values_mut() {
            *v = rng.random::<f64>() * 2.0 - 0.5; // some negatives
        }
        p
    }

    /// Central finite differences of `batch_loss` over one block accessed
    /// through `get`. Independent of the analytic path.
    fn fd_block(
        params: &ModelParameters,
        kg: &KnowledgeGraph,
        plan: &BatchPlan,
        len: usize,
        write: impl Fn(&mut ModelParameters, usize, f64),
        read: impl Fn(&ModelParameters, usize) -> f64,
    ) -> Vec<f64> {
        let h = 1e-5;
        let mut out = Vec::with_capacity(len);
        let mut work = params.clone();
        for i in 0..len {
            let orig = read(params, i);
            write(&mut work, i, orig + h);
            let up = batch_loss(&work, kg, plan).unwrap();
            write(&mut work, i, orig - h);
            let down = batch_loss(&work, kg, plan).unwrap();
            write(&mut work, i, orig);
            out.push((up - down) / (2.0 * h));
        }
        out
    }

    fn assert_close(analytic: &[f64], fd: &[f64], block: &str) {
        assert_eq!(analytic.len(), fd.len());
        for (i, (&g, &f)) in analytic.iter().zip(fd).enumerate() {
            let scale = g.abs().max(f.abs());
            if scale < 1e-7 {
                assert!(
                    (g - f).abs() < 1e-9,
                    "{block}[{i}]: analytic {g} vs fd {f} (absolute)"
                );
            } else {
                let rel = (g - f).abs() / scale;
                assert!(
                    rel < 1e-5,
                    "{block}[{i}]: analytic {g} vs fd {f}, rel {rel}"
                );
            }
        }
    }

    fn check_all_blocks(params: &ModelParameters, kg: &KnowledgeGraph, plan: &BatchPlan) {
        let (loss, g) = batch_gradients(params, kg, plan).unwrap();
        assert!(loss.is_finite());

        let fd = fd_block(
            params,
            kg,
            plan,
            params.base.data().len(),
            |p, i, v| p.base.data_mut()[i] = v,
            |p, i| p.base.data()[i],
        );
        assert_close(g.base.data(), &fd, "base");

        if let Some(bias_grad) = &g.bias {
            let fd = fd_block(
                params,
                kg,
                plan,
                params.bias.data().len(),
                |p, i, v| p.bias.data_mut()[i] = v,
                |p, i| p.bias.data()[i],
            );
            assert_close(bias_grad.data(), &fd, "bias");
        }

        let fd = fd_block(
            params,
            kg,
            plan,
            params.rel_scale.data().len(),
            |p, i, v| p.rel_scale.data_mut()[i] = v,
            |p, i| p.rel_scale.data()[i],
        );
        assert_close(g.rel_scale.data(), &fd, "rel_scale");

        let fd = fd_block(
            params,
            kg,
            plan,
            params.relations.rows().data().len(),
            |p, i, v| p.relations.rows_mut().data_mut()[i] = v,
            |p, i| p.relations.rows().data()[i],
        );
        assert_close(g.relations.data(), &fd, "relations");

        if let Some(att_grad) = &g.attention {
            let fd = fd_block(
                params,
                kg,
                plan,
                params.attention.len(),
                |p, i, v| p.attention.values_mut()[i] = v,
                |p, i| p.attention.values()[i],
            );
            assert_close(att_grad, &fd, "attention");
        }
    }

    #[test]
    fn gradients_match_finite_differences_distmult() {
        let kg = random_kg(3, 2, 4, 10);
        let params = perturbed_params(
            &kg,
            4,
            DecoderKind::DistMult,
            AttentionMode::Learned,
            true,
            11,
        );
        let positives: Vec<Triple> = kg.positive_edges().map(|e| e.triple).collect();
        let cfg = TrainConfig {
            dim: 4,
            n_negatives: 2,
            dropout_emb: 0.0,
            dropout_link: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let plan = plan_batch(&kg, &positives, &cfg, &mut rng).unwrap();
        check_all_blocks(&params, &kg, &plan);
    }

    #[test]
    fn gradients_match_finite_differences_complex() {
        let kg = random_kg(4, 2, 6, 20);
        let params = perturbed_params(
            &kg,
            4,
            DecoderKind::Complex,
            AttentionMode::Learned,
            true,
            21,
        );
        let positives: Vec<Triple> = kg.positive_edges().map(|e| e.triple).collect();
        let cfg = TrainConfig {
            dim: 4,
            n_negatives: 2,
            dropout_emb: 0.0,
            dropout_link: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let plan = plan_batch(&kg, &positives, &cfg, &mut rng).unwrap();
        check_all_blocks(&params, &kg, &plan);
    }

    #[test]
    fn gradients_match_finite_differences_with_dropout() {
        // Masks are frozen in the plan, so the loss stays deterministic and
        // differentiable; dead entries must agree at zero.
        let kg = random_kg(5, 2, 8, 30);
        let params = perturbed_params(
            &kg,
            4,
            DecoderKind::DistMult,
            AttentionMode::Learned,
            true,
            31,
        );
        let positives: Vec<Triple> = kg.positive_edges().map(|e| e.triple).collect();
        let cfg = TrainConfig {
            dim: 4,
            n_negatives: 2,
            dropout_emb: 0.5,
            dropout_link: 0.5,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let plan = plan_batch(&kg, &positives, &cfg, &mut rng).unwrap();
        check_all_blocks(&params, &kg, &plan);
    }

    #[test]
    fn gradients_match_finite_differences_without_bias() {
        let kg = random_kg(4, 1, 5, 40);
        let params = perturbed_params(
            &kg,
            4,
            DecoderKind::DistMult,
            AttentionMode::Learned,
            false,
            41,
        );
        let positives: Vec<Triple> = kg.positive_edges().map(|e| e.triple).collect();
        let cfg = TrainConfig {
            dim: 4,
            n_negatives: 1,
            dropout_emb: 0.0,
            dropout_link: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let plan = plan_batch(&kg, &positives, &cfg, &mut rng).unwrap();
        assert!(batch_gradients(&params, &kg, &plan).unwrap().1.bias.is_none());
        check_all_blocks(&params, &kg, &plan);
    }

    #[test]
    fn fixed_attention_emits_no_attention_gradient() {
        let kg = random_kg(4, 1, 5, 50);
        let params = perturbed_params(
            &kg,
            4,
            DecoderKind::DistMult,
            AttentionMode::FixedUniform,
            true,
            51,
        );
        let positives: Vec<Triple> = kg.positive_edges().map(|e| e.triple).collect();
        let cfg = TrainConfig {
            dim: 4,
            n_negatives: 1,
            dropout_emb: 0.0,
            dropout_link: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let plan = plan_batch(&kg, &positives, &cfg, &mut rng).unwrap();
        let (_, g) = batch_gradients(&params, &kg, &plan).unwrap();
        assert!(g.attention.is_none());
        check_all_blocks(&params, &kg, &plan);
    }

    #[test]
    fn occluded_edge_gets_zero_attention_gradient() {
        let kg = random_kg(4, 2, 6, 60);
        let mut params = perturbed_params(
            &kg,
            4,
            DecoderKind::DistMult,
            AttentionMode::Learned,
            true,
            61,
        );
        params.attention.override_edge(0, 0.0).unwrap();
        let positives: Vec<Triple> = kg.positive_edges().map(|e| e.triple).collect();
        let cfg = TrainConfig {
            dim: 4,
            n_negatives: 2,
            dropout_emb: 0.0,
            dropout_link: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let plan = plan_batch(&kg, &positives, &cfg, &mut rng).unwrap();
        let (_, g) = batch_gradients(&params, &kg, &plan).unwrap();
        assert_eq!(g.attention.unwrap()[0], 0.0);
    }

    #[test]
    fn rejects_empty_batch() {
        let kg = random_kg(3, 1, 3, 70);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(plan_batch(&kg, &[], &cfg, &mut rng).is_err());
    }
}
