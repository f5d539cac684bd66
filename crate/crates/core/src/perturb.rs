//! Experimental conditions: subsampling, noise injection, corruption
//! sweeps, and the duplication-divergence synthetic benchmark with its
//! gold/add/noise split.
//!
//! Provenance tags partition every condition's edges: `clean` for kept
//! true edges, `held-out` for true edges demoted to adjacency-only, and
//! `noise` for planted corruptions.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, KnowledgeGraph, Split, Triple};

pub const TAG_CLEAN: &str = "clean";
pub const TAG_HELD_OUT: &str = "held-out";
pub const TAG_NOISE: &str = "noise";
pub const TAG_GOLD: &str = "gold";
pub const TAG_ADD: &str = "add";

/// The training conditions a graph can be rebuilt under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionName {
    /// All train edges as targets.
    Full,
    /// Uniform 50% of train edges as targets; the rest removed entirely.
    Half,
    /// Half's targets plus the removed 50% kept adjacency-only.
    Skip,
    /// Half's targets plus planted noise (matching the removed volume)
    /// kept adjacency-only.
    Noised,
    /// All train edges as targets plus `fraction * |train|` noise edges as
    /// both targets and adjacency: the corruption-sensitivity sweep.
    Sweep(f64),
}

impl ConditionName {
    pub const VALID_NAMES: &'static str = "full, half, skip, noised, sweep";

    /// Parses a name; `sweep` takes its fraction separately.
    pub fn parse(name: &str, fraction: Option<f64>) -> Result<Self> {
        match name {
            "full" => Ok(ConditionName::Full),
            "half" => Ok(ConditionName::Half),
            "skip" => Ok(ConditionName::Skip),
            "noised" => Ok(ConditionName::Noised),
            "sweep" => {
                let f = fraction.ok_or_else(|| {
                    Error::InvalidArgument("sweep requires a fraction".into())
                })?;
                if !(0.0..=10.0).contains(&f) {
                    return Err(Error::InvalidArgument(format!(
                        "sweep fraction must be in [0, 10], got {f}"
                    )));
                }
                Ok(ConditionName::Sweep(f))
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown condition `{other}`; valid conditions: {}",
                Self::VALID_NAMES
            ))),
        }
    }
}

impl std::fmt::Display for ConditionName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditionName::Full => write!(f, "full"),
            ConditionName::Half => write!(f, "half"),
            ConditionName::Skip => write!(f, "skip"),
            ConditionName::Noised => write!(f, "noised"),
            ConditionName::Sweep(frac) => write!(f, "sweep({frac})"),
        }
    }
}

/// A derived graph plus bookkeeping about how its edges were assigned.
#[derive(Debug, Clone)]
pub struct Condition {
    pub name: ConditionName,
    pub kg: KnowledgeGraph,
    pub summary: ConditionSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionSummary {
    pub targets: usize,
    pub adjacency_only: usize,
    pub noise: usize,
}

/// Draws `volume` corrupted triples: a uniform true training triple with
/// its subject or object (uniform choice) replaced by a uniform entity.
/// Corruptions colliding with any known-true triple, or repeating an
/// earlier corruption, are rejected and redrawn; exhausting the attempt
/// budget is an error.
pub fn corrupt_triples(
    kg: &KnowledgeGraph,
    volume: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triple>> {
    if volume == 0 {
        return Ok(Vec::new());
    }
    let train = kg.split(Split::Train);
    if train.is_empty() || kg.num_entities() < 2 {
        return Err(Error::Sampling(
            "cannot corrupt an empty or single-entity graph".into(),
        ));
    }
    let known = kg.known_triples();
    let mut produced = HashSet::with_capacity(volume);
    let mut out = Vec::with_capacity(volume);
    let max_attempts = 1000 + 100 * volume;
    let mut attempts = 0;
    while out.len() < volume {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Sampling(format!(
                "could not draw {volume} distinct corruptions in {max_attempts} attempts \
                 ({} found)",
                out.len()
            )));
        }
        let base = train[rng.random_range(0..train.len())];
        let replacement = rng.random_range(0..kg.num_entities());
        let candidate = if rng.random_bool(0.5) {
            Triple::new(replacement, base.relation, base.object)
        } else {
            Triple::new(base.subject, base.relation, replacement)
        };
        if known.contains(&candidate) || !produced.insert(candidate) {
            continue;
        }
        out.push(candidate);
    }
    Ok(out)
}

/// Rebuilds the graph under a condition. The vocabulary, valid and test
/// splits, and the inverse-augmentation setting carry over unchanged; only
/// the train-edge set and its flags are rewritten. With the same rng seed,
/// `half`, `skip` and `noised` share the same kept subset.
pub fn build_condition(
    kg: &KnowledgeGraph,
    name: ConditionName,
    rng: &mut impl Rng,
) -> Result<Condition> {
    let train = kg.split(Split::Train);
    let mut builder = GraphBuilder::with_vocab(kg.vocab().clone());
    for &t in kg.split(Split::Valid) {
        builder.add_triple(t, Split::Valid);
    }
    for &t in kg.split(Split::Test) {
        builder.add_triple(t, Split::Test);
    }

    let mut summary = ConditionSummary {
        targets: 0,
        adjacency_only: 0,
        noise: 0,
    };

    match name {
        ConditionName::Full => {
            for &t in train {
                builder.add_train_edge(t, Split::Train, false, Some(TAG_CLEAN));
            }
            summary.targets = train.len();
        }
        ConditionName::Half | ConditionName::Skip | ConditionName::Noised => {
            let kept = half_subset(train.len(), rng);
            // Original edge order with membership-based flags keeps the
            // layout deterministic and comparable across conditions.
            for (i, &t) in train.iter().enumerate() {
                if kept[i] {
                    builder.add_train_edge(t, Split::Train, false, Some(TAG_CLEAN));
                    summary.targets += 1;
                } else if name == ConditionName::Skip {
                    builder.add_train_edge(t, Split::Train, true, Some(TAG_HELD_OUT));
                    summary.adjacency_only += 1;
                }
            }
            if name == ConditionName::Noised {
                let removed = train.len() - summary.targets;
                for noise in corrupt_triples(kg, removed, rng)? {
                    builder.add_train_edge(noise, Split::Train, true, Some(TAG_NOISE));
                    summary.adjacency_only += 1;
                    summary.noise += 1;
                }
            }
        }
        ConditionName::Sweep(fraction) => {
            for &t in train {
                builder.add_train_edge(t, Split::Train, false, Some(TAG_CLEAN));
            }
            summary.targets = train.len();
            let volume = (fraction * train.len() as f64).floor() as usize;
            for noise in corrupt_triples(kg, volume, rng)? {
                builder.add_train_edge(noise, Split::Train, false, Some(TAG_NOISE));
                summary.targets += 1;
                summary.noise += 1;
            }
        }
    }

    Ok(Condition {
        name,
        kg: builder.build(kg.add_inverse()),
        summary,
    })
}

/// Membership mask for a uniform floor(n/2)-subset.
fn half_subset(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut kept = vec![false; n];
    for &i in &order[..n / 2] {
        kept[i] = true;
    }
    kept
}

/// An undirected interaction graph grown by node duplication.
#[derive(Debug, Clone)]
pub struct DdGraph {
    pub num_nodes: usize,
    /// Undirected edges, stored with the smaller endpoint first.
    pub edges: Vec<(usize, usize)>,
    /// (new node, duplicated node) per growth step.
    pub trace: Vec<(usize, usize)>,
}

impl DdGraph {
    pub fn edge_vertex_ratio(&self) -> f64 {
        self.edges.len() as f64 / self.num_nodes as f64
    }
}

/// Grows a duplication-divergence graph from a two-node connected seed to
/// `target_n` nodes: each step copies a uniformly chosen node, linking the
/// copy to the original with probability `q` and to each of the original's
/// neighbors independently with probability `p`. A copy that ends up with
/// no links does not join the network (so growth keeps the graph a single
/// connected component); a long run of such rejections is an error.
pub fn generate_dd(p: f64, q: f64, target_n: usize, rng: &mut impl Rng) -> Result<DdGraph> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "duplication probabilities must be in [0, 1], got p={p} q={q}"
        )));
    }
    if target_n < 2 {
        return Err(Error::InvalidArgument(
            "target node count must be at least 2".into(),
        ));
    }
    let mut adjacency: Vec<Vec<usize>> = vec![vec![1], vec![0]];
    let mut edges = vec![(0usize, 1usize)];
    let mut trace = Vec::new();
    const MAX_STALLED: usize = 10_000;
    let mut stalled = 0;
    while adjacency.len() < target_n {
        let old = rng.random_range(0..adjacency.len());
        let mut links = Vec::new();
        if rng.random_bool(q) {
            links.push(old);
        }
        for &neighbor in &adjacency[old] {
            if rng.random_bool(p) {
                links.push(neighbor);
            }
        }
        links.sort_unstable();
        links.dedup();
        if links.is_empty() {
            stalled += 1;
            if stalled > MAX_STALLED {
                return Err(Error::Sampling(format!(
                    "duplication stalled: {MAX_STALLED} consecutive copies kept no links \
                     (p={p}, q={q})"
                )));
            }
            continue;
        }
        stalled = 0;
        let new = adjacency.len();
        adjacency.push(links.clone());
        for &n in &links {
            adjacency[n].push(new);
            edges.push((n.min(new), n.max(new)));
        }
        trace.push((new, old));
    }
    Ok(DdGraph {
        num_nodes: adjacency.len(),
        edges,
        trace,
    })
}

/// Partition of a duplication-divergence graph's edges plus planted noise.
#[derive(Debug, Clone)]
pub struct DdSplit {
    /// Trusted true edges (training targets).
    pub gold: Vec<(usize, usize)>,
    /// Held-out true edges (adjacency-only).
    pub add: Vec<(usize, usize)>,
    /// Planted false pairs, as many as `add` (adjacency-only).
    pub noise: Vec<(usize, usize)>,
    /// True edges in neither gold nor add; usable as an eval split.
    pub rest: Vec<(usize, usize)>,
}

/// Splits true edges uniformly into gold/add/rest and plants |add| noise
/// pairs drawn uniformly from the non-edges.
pub fn split_dd(
    graph: &DdGraph,
    gold_frac: f64,
    add_frac: f64,
    rng: &mut impl Rng,
) -> Result<DdSplit> {
    if gold_frac < 0.0 || add_frac < 0.0 || gold_frac + add_frac > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "need gold_frac + add_frac <= 1, got {gold_frac} + {add_frac}"
        )));
    }
    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.shuffle(rng);
    let n_gold = (gold_frac * graph.edges.len() as f64).round() as usize;
    let n_add = (add_frac * graph.edges.len() as f64).round() as usize;
    let pick = |ids: &[usize]| -> Vec<(usize, usize)> {
        let mut chosen: Vec<(usize, usize)> = ids.iter().map(|&i| graph.edges[i]).collect();
        chosen.sort_unstable();
        chosen
    };
    let gold = pick(&order[..n_gold]);
    let add = pick(&order[n_gold..n_gold + n_add]);
    let rest = pick(&order[n_gold + n_add..]);

    let true_edges: HashSet<(usize, usize)> = graph.edges.iter().copied().collect();
    let n = graph.num_nodes;
    let possible = n * (n - 1) / 2;
    if possible.saturating_sub(true_edges.len()) < add.len() {
        return Err(Error::Sampling(format!(
            "not enough non-edges to plant {} noise pairs",
            add.len()
        )));
    }
    let mut noise = Vec::with_capacity(add.len());
    let mut seen = HashSet::with_capacity(add.len());
    let max_attempts = 1000 + 100 * add.len();
    let mut attempts = 0;
    while noise.len() < add.len() {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Sampling(format!(
                "could not place {} noise pairs in {max_attempts} attempts",
                add.len()
            )));
        }
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let pair = (u.min(v), u.max(v));
        if true_edges.contains(&pair) || !seen.insert(pair) {
            continue;
        }
        noise.push(pair);
    }
    noise.sort_unstable();
    Ok(DdSplit {
        gold,
        add,
        noise,
        rest,
    })
}

/// Assembles a knowledge graph from a split: every undirected edge becomes
/// two directed triples under one `interacts` relation. Gold pairs are
/// training targets, add and noise pairs adjacency-only with their tags,
/// and rest pairs form the validation split. Inverse augmentation is off
/// because both directions are already present.
pub fn dd_split_to_graph(split: &DdSplit, num_nodes: usize) -> KnowledgeGraph {
    let mut builder = GraphBuilder::new();
    for i in 0..num_nodes {
        builder.vocab_mut().intern_entity(&format!("n{i}"));
    }
    builder.vocab_mut().intern_relation("interacts");
    let mut push = |pairs: &[(usize, usize)], adjacency_only: bool, tag: &str, split: Split| {
        for &(u, v) in pairs {
            for (s, o) in [(u, v), (v, u)] {
                let t = Triple::new(s, 0, o);
                if split == Split::Train {
                    builder.add_train_edge(t, split, adjacency_only, Some(tag));
                } else {
                    builder.add_triple(t, split);
                }
            }
        }
    };
    push(&split.gold, false, TAG_GOLD, Split::Train);
    push(&split.add, true, TAG_ADD, Split::Train);
    push(&split.noise, true, TAG_NOISE, Split::Train);
    push(&split.rest, false, TAG_GOLD, Split::Valid);
    builder.build(false)
}

/// Provenance sidecar CSV: `edge_id,tag`.
pub fn write_provenance_csv<W: std::io::Write>(kg: &KnowledgeGraph, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let to_csv = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
    out.write_record(["edge_id", "tag"]).map_err(to_csv)?;
    for rec in kg.edges() {
        out.write_record(&[
            rec.id.to_string(),
            rec.provenance.clone().unwrap_or_default(),
        ])
        .map_err(to_csv)?;
    }
    out.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv flush failed: {e}")))?;
    Ok(())
}
