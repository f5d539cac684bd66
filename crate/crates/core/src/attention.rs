//! Per-edge attention scalars and their budget normalization.
//!
//! Every edge record carries one raw scalar, initialized to 1. For each
//! node, the normalized coefficient of an incoming edge is the edge's
//! absolute raw value divided by the sum of absolute raw values over all of
//! that node's incoming edges, across every relation. The coefficients of a
//! node therefore spend a fixed budget of 1, and the uniform start assigns
//! each incoming edge 1/in-degree.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EdgeId, EntityId, KnowledgeGraph};

/// Raw, unconstrained attention scalars, one per edge record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAttention {
    values: Vec<f64>,
}

impl RawAttention {
    /// Uniform start: every edge gets a raw value of 1, so normalization
    /// yields 1/in-degree everywhere.
    pub fn uniform(kg: &KnowledgeGraph) -> Self {
        RawAttention {
            values: vec![1.0; kg.num_edges()],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        RawAttention { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, edge: EdgeId) -> Option<f64> {
        self.values.get(edge).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sets one edge's raw value; a later [`normalize`] redistributes the
    /// destination node's budget accordingly. Used by occlusion analysis.
    pub fn override_edge(&mut self, edge: EdgeId, value: f64) -> Result<()> {
        match self.values.get_mut(edge) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::UnknownEdge(edge)),
        }
    }
}

/// Budget-normalized coefficients: non-negative, summing to 1 over each
/// node's incoming edges. Nodes whose raw values are all zero get zero
/// coefficients and are listed in the diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAttention {
    values: Vec<f64>,
    /// Per-node budget denominator: sum of |raw| over incoming edges.
    budgets: Vec<f64>,
    zero_budget: Vec<EntityId>,
}

impl NormalizedAttention {
    pub fn get(&self, edge: EdgeId) -> f64 {
        self.values[edge]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of |raw| over the node's incoming edges.
    pub fn budget(&self, node: EntityId) -> f64 {
        self.budgets[node]
    }

    /// Nodes with at least one incoming edge whose budget collapsed to 0.
    pub fn zero_budget_nodes(&self) -> &[EntityId] {
        &self.zero_budget
    }
}

/// Normalizes raw scalars into per-node budget coefficients. All-zero nodes
/// are flagged rather than divided by zero.
pub fn normalize(raw: &RawAttention, kg: &KnowledgeGraph) -> NormalizedAttention {
    debug_assert_eq!(raw.len(), kg.num_edges());
    debug_assert!(raw.values().iter().all(|v| v.is_finite()));
    let mut values = vec![0.0; raw.len()];
    let mut budgets = vec![0.0; kg.num_entities()];
    let mut zero_budget = Vec::new();
    for node in 0..kg.num_entities() {
        let incoming = kg.incoming(node);
        if incoming.is_empty() {
            continue;
        }
        let total: f64 = incoming.iter().map(|&e| raw.values[e].abs()).sum();
        budgets[node] = total;
        if total == 0.0 {
            zero_budget.push(node);
            continue;
        }
        for &e in incoming {
            values[e] = raw.values[e].abs() / total;
        }
    }
    NormalizedAttention {
        values,
        budgets,
        zero_budget,
    }
}

/// Independently zeroes each coefficient with probability `p` and rescales
/// survivors by 1/(1-p), preserving the expected message. Training only.
pub fn apply_link_dropout(
    c: &NormalizedAttention,
    p: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mask = link_mask(c.values.len(), p, rng)?;
    Ok(masked_coefficients(c.values(), mask.as_deref(), p))
}

/// Bernoulli keep-mask over edges; None when p == 0.
pub(crate) fn link_mask(
    num_edges: usize,
    p: f64,
    rng: &mut impl Rng,
) -> Result<Option<Vec<bool>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "link dropout probability must be in [0, 1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(None);
    }
    Ok(Some((0..num_edges).map(|_| rng.random::<f64>() >= p).collect()))
}

pub(crate) fn masked_coefficients(values: &[f64], mask: Option<&[bool]>, p: f64) -> Vec<f64> {
    match mask {
        None => values.to_vec(),
        Some(mask) => {
            let scale = 1.0 / (1.0 - p);
            values
                .iter()
                .zip(mask)
                .map(|(&v, &keep)| if keep { v * scale } else { 0.0 })
                .collect()
        }
    }
}

/// Writes the weight export CSV:
/// `edge_id,subject,relation,object,direction,raw,normalized`.
pub fn write_weight_csv<W: std::io::Write>(
    raw: &RawAttention,
    c: &NormalizedAttention,
    kg: &KnowledgeGraph,
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let to_csv = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
    out.write_record(["edge_id", "subject", "relation", "object", "direction", "raw", "normalized"])
        .map_err(to_csv)?;
    let vocab = kg.vocab();
    for rec in kg.edges() {
        out.write_record(&[
            rec.id.to_string(),
            vocab.entity_name(rec.triple.subject).unwrap().to_string(),
            vocab.relation_name(rec.triple.relation).unwrap().to_string(),
            vocab.entity_name(rec.triple.object).unwrap().to_string(),
            rec.direction.name().to_string(),
            format!("{}", raw.values[rec.id]),
            format!("{}", c.values[rec.id]),
        ])
        .map_err(to_csv)?;
    }
    out.flush().map_err(|e| Error::InvalidArgument(format!("csv flush failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Star: four edges into X, no inverse.
    fn star4() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        for src in ["A", "B", "C", "D"] {
            b.add_named(src, "r", "X", Split::Train);
        }
        b.build(false)
    }

    #[test]
    fn uniform_start_splits_budget_evenly() {
        let kg = star4();
        let raw = RawAttention::uniform(&kg);
        let c = normalize(&raw, &kg);
        let x = kg.vocab().entity_id("X").unwrap();
        for &e in kg.incoming(x) {
            assert_eq!(c.get(e), 0.25);
        }
        assert_eq!(c.budget(x), 4.0);
        assert!(c.zero_budget_nodes().is_empty());
    }

    #[test]
    fn single_edge_gets_full_budget() {
        let mut b = GraphBuilder::new();
        b.add_named("A", "r", "X", Split::Train);
        let kg = b.build(false);
        let raw = RawAttention::uniform(&kg);
        let c = normalize(&raw, &kg);
        assert_eq!(c.get(0), 1.0);
    }

    #[test]
    fn isolated_node_contributes_nothing() {
        let mut b = GraphBuilder::new();
        b.add_named("A", "r", "X", Split::Train);
        let kg = b.build(false);
        let a = kg.vocab().entity_id("A").unwrap();
        let raw = RawAttention::uniform(&kg);
        let c = normalize(&raw, &kg);
        assert_eq!(kg.incoming(a).len(), 0);
        assert_eq!(c.budget(a), 0.0);
        // Not flagged: no incoming edges means no budget to collapse.
        assert!(c.zero_budget_nodes().is_empty());
    }

    #[test]
    fn absolute_value_normalization() {
        let mut b = GraphBuilder::new();
        b.add_named("A", "r", "X", Split::Train);
        b.add_named("B", "r", "X", Split::Train);
        let kg = b.build(false);
        let c = normalize(&RawAttention::from_values(vec![2.0, -2.0]), &kg);
        assert_eq!(c.get(0), 0.5);
        assert_eq!(c.get(1), 0.5);
        let c = normalize(&RawAttention::from_values(vec![3.0, 1.0]), &kg);
        assert_eq!(c.get(0), 0.75);
        assert_eq!(c.get(1), 0.25);
    }

    #[test]
    fn override_redistributes_budget() {
        let mut b = GraphBuilder::new();
        b.add_named("A", "r", "X", Split::Train);
        b.add_named("B", "r", "X", Split::Train);
        let kg = b.build(false);
        let mut raw = RawAttention::uniform(&kg);
        raw.override_edge(0, 0.0).unwrap();
        let c = normalize(&raw, &kg);
        assert_eq!(c.get(0), 0.0);
        assert_eq!(c.get(1), 1.0);
        // Overriding an already-zero edge changes nothing.
        let before = c.clone();
        raw.override_edge(0, 0.0).unwrap();
        assert_eq!(normalize(&raw, &kg), before);
    }

    #[test]
    fn sole_edge_zeroed_flags_node() {
        let mut b = GraphBuilder::new();
        b.add_named("A", "r", "X", Split::Train);
        let kg = b.build(false);
        let mut raw = RawAttention::uniform(&kg);
        raw.override_edge(0, 0.0).unwrap();
        let c = normalize(&raw, &kg);
        assert_eq!(c.get(0), 0.0);
        assert_eq!(
            c.zero_budget_nodes(),
            &[kg.vocab().entity_id("X").unwrap()]
        );
    }

    #[test]
    fn override_unknown_edge_errors() {
        let kg = star4();
        let mut raw = RawAttention::uniform(&kg);
        assert!(matches!(
            raw.override_edge(99, 1.0),
            Err(Error::UnknownEdge(99))
        ));
    }

    #[test]
    fn dropout_zero_is_identity() {
        let kg = star4();
        let c = normalize(&RawAttention::uniform(&kg), &kg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply_link_dropout(&c, 0.0, &mut rng).unwrap();
        assert_eq!(out, c.values());
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let kg = star4();
        let c = normalize(&RawAttention::uniform(&kg), &kg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_link_dropout(&c, 1.0, &mut rng).is_err());
        assert!(apply_link_dropout(&c, -0.1, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_reproducible() {
        let kg = star4();
        let c = normalize(&RawAttention::uniform(&kg), &kg);
        let a = apply_link_dropout(&c, 0.5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = apply_link_dropout(&c, 0.5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_preserves_expectation() {
        // Monte-Carlo: the mean of 10k masked draws of one coefficient stays
        // within 3% of its undropped value.
        let kg = star4();
        let c = normalize(&RawAttention::uniform(&kg), &kg);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 10_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            sum += apply_link_dropout(&c, 0.5, &mut rng).unwrap()[0];
        }
        let mean = sum / trials as f64;
        assert!(
            (mean - c.get(0)).abs() <= 0.03 * c.get(0),
            "mean {mean} strays from {}",
            c.get(0)
        );
    }
}
