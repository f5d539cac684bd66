//! Post-training edge-trust analysis.
//!
//! Everything here works on immutable parameter snapshots: occlusion scans
//! recompute a single node's embedding under a zeroed edge weight (exact
//! for a one-layer encoder) against scratch copies, so a full scan leaves
//! the parameters bit-identical.

use std::collections::HashMap;

use crate::attention::NormalizedAttention;
use crate::decoder::probability;
use crate::encoder::{self, ModelParameters};
use crate::error::{Error, Result};
use crate::eval::Side;
use crate::graph::{EdgeId, EntityId, KnowledgeGraph, Triple};

/// How "removing" an edge redistributes its destination's budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OcclusionMode {
    /// Zero the raw weight and renormalize: siblings absorb the budget.
    #[default]
    Renormalize,
    /// Zero the coefficient and leave siblings untouched.
    FreezeSiblings,
}

/// Mean and standard error over runs (standard error absent for one run).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: Option<f64>,
}

fn estimate(samples: &[f64]) -> Estimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let stderr = (samples.len() > 1).then(|| {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Estimate { mean, stderr }
}

/// One edge's mean normalized weight across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEdge {
    pub edge: EdgeId,
    pub weight: Estimate,
}

/// Top and bottom incoming edges of an entity by learned weight.
#[derive(Debug, Clone)]
pub struct InfluencerReport {
    pub entity: EntityId,
    pub top: Vec<WeightedEdge>,
    pub bottom: Vec<WeightedEdge>,
    pub note: Option<String>,
}

/// Ranks an entity's incoming edges by mean normalized weight over the
/// supplied runs. `top` holds the k strongest (descending), `bottom` the k
/// weakest (ascending); k clamps to the in-degree; ties break by edge id.
pub fn rank_influencers(
    runs: &[&NormalizedAttention],
    kg: &KnowledgeGraph,
    entity: EntityId,
    k: usize,
) -> Result<InfluencerReport> {
    if entity >= kg.num_entities() {
        return Err(Error::UnknownEntity(entity));
    }
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no attention runs supplied".into()));
    }
    let incoming = kg.incoming(entity);
    if incoming.is_empty() {
        return Ok(InfluencerReport {
            entity,
            top: Vec::new(),
            bottom: Vec::new(),
            note: Some("entity has no incoming edges".into()),
        });
    }
    let mut edges: Vec<WeightedEdge> = incoming
        .iter()
        .map(|&e| {
            let samples: Vec<f64> = runs.iter().map(|c| c.get(e)).collect();
            WeightedEdge {
                edge: e,
                weight: estimate(&samples),
            }
        })
        .collect();
    edges.sort_by(|a, b| {
        b.weight
            .mean
            .partial_cmp(&a.weight.mean)
            .unwrap()
            .then(a.edge.cmp(&b.edge))
    });
    let k = k.min(edges.len());
    let top = edges[..k].to_vec();
    let mut bottom = edges[edges.len() - k..].to_vec();
    bottom.reverse();
    Ok(InfluencerReport {
        entity,
        top,
        bottom,
        note: None,
    })
}

/// Effect of occluding one edge on a target triple's probability.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionRow {
    pub edge: EdgeId,
    /// Which endpoint of the target the edge feeds.
    pub side: Side,
    /// occluded probability minus baseline, averaged over runs.
    pub delta: Estimate,
}

#[derive(Debug, Clone)]
pub struct OcclusionReport {
    pub target: Triple,
    pub baseline: Estimate,
    /// Rows sorted by mean delta ascending (strongest supporters first),
    /// ties by edge id.
    pub rows: Vec<OcclusionRow>,
}

/// Per-run scratch state for an occlusion scan.
struct RunState<'a> {
    params: &'a ModelParameters,
    c: NormalizedAttention,
    subject_row: Vec<f64>,
    object_row: Vec<f64>,
    baseline: f64,
}

impl<'a> RunState<'a> {
    fn new(params: &'a ModelParameters, kg: &KnowledgeGraph, target: Triple) -> Result<Self> {
        let c = params.normalized_attention(kg);
        let subject_row = encoder::encode_node(params, kg, &c, target.subject)?;
        let object_row = encoder::encode_node(params, kg, &c, target.object)?;
        let score = params
            .relations
            .score(&subject_row, target.relation, &object_row)?;
        Ok(RunState {
            params,
            c,
            subject_row,
            object_row,
            baseline: probability(score),
        })
    }

    /// Probability of the target with `edge` (incoming to `node`) occluded.
    /// Only that node's coefficients are touched, on a scratch copy.
    fn occluded_probability(
        &self,
        kg: &KnowledgeGraph,
        target: Triple,
        node: EntityId,
        edge: EdgeId,
        mode: OcclusionMode,
    ) -> Result<f64> {
        let mut coeffs = self.c.values().to_vec();
        match mode {
            OcclusionMode::Renormalize => {
                let raw = self.params.attention.values();
                let budget = self.c.budget(node) - raw[edge].abs();
                for &e in kg.incoming(node) {
                    coeffs[e] = if e == edge || budget == 0.0 {
                        0.0
                    } else {
                        raw[e].abs() / budget
                    };
                }
            }
            OcclusionMode::FreezeSiblings => {
                coeffs[edge] = 0.0;
            }
        }
        let bias = self.params.use_bias.then_some(&self.params.bias);
        let mut row = vec![0.0; self.params.dim()];
        encoder::encode_row_into(
            &mut row,
            node,
            kg,
            &self.params.base,
            &self.params.rel_scale,
            bias,
            &coeffs,
        );
        let (es, eo): (&[f64], &[f64]) = if target.subject == target.object {
            (&row, &row)
        } else if node == target.subject {
            (&row, &self.object_row)
        } else {
            (&self.subject_row, &row)
        };
        let score = self.params.relations.score(es, target.relation, eo)?;
        Ok(probability(score))
    }
}

/// Independently occludes every incoming edge of the target's subject and
/// object, measuring the probability change. The target need not be a
/// known edge. With several runs, rows carry standard errors.
pub fn occlusion_scan(
    runs: &[&ModelParameters],
    kg: &KnowledgeGraph,
    target: Triple,
    mode: OcclusionMode,
) -> Result<OcclusionReport> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no parameter runs supplied".into()));
    }
    if target.subject >= kg.num_entities() || target.object >= kg.num_entities() {
        return Err(Error::UnknownEntity(target.subject.max(target.object)));
    }
    if target.relation >= kg.num_relations() {
        return Err(Error::UnknownRelation(target.relation));
    }
    let states = runs
        .iter()
        .map(|p| RunState::new(p, kg, target))
        .collect::<Result<Vec<_>>>()?;
    let baselines: Vec<f64> = states.iter().map(|s| s.baseline).collect();

    // Subject-side edges first, then object-side; a self-loop target lists
    // each edge once per side it feeds.
    let mut jobs: Vec<(EntityId, EdgeId, Side)> = Vec::new();
    for &e in kg.incoming(target.subject) {
        jobs.push((target.subject, e, Side::Subject));
    }
    if target.object != target.subject {
        for &e in kg.incoming(target.object) {
            jobs.push((target.object, e, Side::Object));
        }
    }

    let mut rows = Vec::with_capacity(jobs.len());
    for (node, edge, side) in jobs {
        let deltas: Vec<f64> = states
            .iter()
            .map(|s| {
                s.occluded_probability(kg, target, node, edge, mode)
                    .map(|p| p - s.baseline)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(OcclusionRow {
            edge,
            side,
            delta: estimate(&deltas),
        });
    }
    rows.sort_by(|a, b| {
        a.delta
            .mean
            .partial_cmp(&b.delta.mean)
            .unwrap()
            .then(a.edge.cmp(&b.edge))
    });
    Ok(OcclusionReport {
        target,
        baseline: estimate(&baselines),
        rows,
    })
}

/// Flag grouping for weight histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagGroup {
    TrainTarget,
    AdjacencyOnly,
}

impl FlagGroup {
    pub fn name(self) -> &'static str {
        match self {
            FlagGroup::TrainTarget => "train_target",
            FlagGroup::AdjacencyOnly => "adjacency_only",
        }
    }
}

/// Normalized weight histogram of one (encoder relation, flag group).
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub encoder_relation: usize,
    pub group: FlagGroup,
    pub count: usize,
    /// Bin masses over [0, 1], summing to 1.
    pub masses: Vec<f64>,
}

/// Histograms of normalized weights per encoder relation, split into
/// train-target and adjacency-only groups. Weights land in `bins` equal
/// bins over [0, 1]; empty groups produce no row.
pub fn relation_weight_distributions(
    c: &NormalizedAttention,
    kg: &KnowledgeGraph,
    bins: usize,
) -> Result<Vec<HistogramRow>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let n_rel = kg.num_relations();
    let mut counts: HashMap<(usize, bool), Vec<usize>> = HashMap::new();
    for rec in kg.edges() {
        let key = (rec.encoder_relation(n_rel), rec.adjacency_only);
        let bucket = counts.entry(key).or_insert_with(|| vec![0; bins]);
        let w = c.get(rec.id);
        let bin = ((w * bins as f64) as usize).min(bins - 1);
        bucket[bin] += 1;
    }
    let mut rows: Vec<HistogramRow> = counts
        .into_iter()
        .map(|((rel, adjacency_only), bucket)| {
            let count: usize = bucket.iter().sum();
            HistogramRow {
                encoder_relation: rel,
                group: if adjacency_only {
                    FlagGroup::AdjacencyOnly
                } else {
                    FlagGroup::TrainTarget
                },
                count,
                masses: bucket
                    .iter()
                    .map(|&n| n as f64 / count as f64)
                    .collect(),
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.encoder_relation, r.group == FlagGroup::AdjacencyOnly));
    Ok(rows)
}

/// Pearson correlation of per-edge weights between two runs, with the
/// paired data for scatter export. Degenerate (constant) inputs yield
/// `r = None` and a note instead of NaN.
#[derive(Debug, Clone)]
pub struct SelfSimilarity {
    pub r: Option<f64>,
    pub pairs: Vec<(f64, f64)>,
    pub note: Option<String>,
}

pub fn weight_self_similarity(
    run1: &NormalizedAttention,
    run2: &NormalizedAttention,
) -> Result<SelfSimilarity> {
    if run1.values().len() != run2.values().len() {
        return Err(Error::DimensionMismatch(format!(
            "runs cover {} vs {} edges",
            run1.values().len(),
            run2.values().len()
        )));
    }
    if run1.values().is_empty() {
        return Err(Error::InvalidArgument("no edges to correlate".into()));
    }
    let pairs: Vec<(f64, f64)> = run1
        .values()
        .iter()
        .copied()
        .zip(run2.values().iter().copied())
        .collect();
    let n = pairs.len() as f64;
    let mean1 = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean2 = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var1 = 0.0;
    let mut var2 = 0.0;
    for &(a, b) in &pairs {
        cov += (a - mean1) * (b - mean2);
        var1 += (a - mean1) * (a - mean1);
        var2 += (b - mean2) * (b - mean2);
    }
    if var1 == 0.0 || var2 == 0.0 {
        return Ok(SelfSimilarity {
            r: None,
            pairs,
            note: Some("correlation undefined: at least one run has constant weights".into()),
        });
    }
    Ok(SelfSimilarity {
        r: Some(cov / (var1.sqrt() * var2.sqrt())),
        pairs,
        note: None,
    })
}

/// An edge flagged as low-weight within its in-degree stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspectEdge {
    pub edge: EdgeId,
    pub weight: f64,
    /// In-degree of the destination node (the stratum).
    pub stratum_degree: usize,
    pub provenance: Option<String>,
    /// True when the whole stratum is tied, so membership is arbitrary.
    pub low_confidence: bool,
}

/// Flags the bottom `decile` fraction of edges by normalized weight within
/// each destination-in-degree stratum. Stratifying first matters because
/// budget normalization makes weights at high-degree nodes small across
/// the board; without it the flags would just pick out hub edges.
pub fn flag_low_weight_edges(
    c: &NormalizedAttention,
    kg: &KnowledgeGraph,
    decile: f64,
) -> Result<Vec<SuspectEdge>> {
    if !(decile > 0.0 && decile <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "decile must be in (0, 0.5], got {decile}"
        )));
    }
    let mut strata: HashMap<usize, Vec<EdgeId>> = HashMap::new();
    for rec in kg.edges() {
        strata
            .entry(kg.in_degree(rec.dest()))
            .or_default()
            .push(rec.id);
    }
    let mut flagged = Vec::new();
    let mut degrees: Vec<usize> = strata.keys().copied().collect();
    degrees.sort_unstable();
    for degree in degrees {
        let mut edges = strata.remove(&degree).unwrap();
        edges.sort_by(|&a, &b| {
            c.get(a)
                .partial_cmp(&c.get(b))
                .unwrap()
                .then(a.cmp(&b))
        });
        let take = (decile * edges.len() as f64).floor() as usize;
        if take == 0 {
            continue;
        }
        let all_tied = edges
            .iter()
            .all(|&e| c.get(e) == c.get(edges[0]));
        for &e in &edges[..take] {
            flagged.push(SuspectEdge {
                edge: e,
                weight: c.get(e),
                stratum_degree: degree,
                provenance: kg.edges()[e].provenance.clone(),
                low_confidence: all_tied,
            });
        }
    }
    flagged.sort_by_key(|s| s.edge);
    Ok(flagged)
}

/// One bucket of the external-label comparison curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCurvePoint {
    /// Weight range covered by this bucket (quantile cut).
    pub weight_low: f64,
    pub weight_high: f64,
    pub n_low_label: usize,
    pub n_high_label: usize,
    /// low/high count ratio; None when no high-label edges landed here.
    pub ratio: Option<f64>,
}

/// Compares learned weights against user-supplied external edge scores:
/// labeled edges are cut into `buckets` weight quantiles, and each bucket
/// counts edges whose external score is below `low_threshold` vs above
/// `high_threshold`. A falling ratio over the buckets means low learned
/// weight predicts low external confidence.
pub fn external_label_curve(
    c: &NormalizedAttention,
    labels: &HashMap<EdgeId, f64>,
    low_threshold: f64,
    high_threshold: f64,
    buckets: usize,
) -> Result<Vec<LabelCurvePoint>> {
    if buckets == 0 {
        return Err(Error::InvalidArgument("need at least one bucket".into()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labeled edges".into()));
    }
    let mut edges: Vec<(EdgeId, f64)> = labels
        .iter()
        .map(|(&e, &score)| (e, score))
        .collect();
    for &(e, _) in &edges {
        if e >= c.values().len() {
            return Err(Error::UnknownEdge(e));
        }
    }
    edges.sort_by(|a, b| {
        c.get(a.0)
            .partial_cmp(&c.get(b.0))
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    let mut out = Vec::with_capacity(buckets);
    for b in 0..buckets {
        let lo = b * edges.len() / buckets;
        let hi = ((b + 1) * edges.len() / buckets).max(lo);
        if lo >= hi {
            continue;
        }
        let slice = &edges[lo..hi];
        let n_low = slice.iter().filter(|(_, s)| *s < low_threshold).count();
        let n_high = slice.iter().filter(|(_, s)| *s > high_threshold).count();
        out.push(LabelCurvePoint {
            weight_low: c.get(slice[0].0),
            weight_high: c.get(slice[slice.len() - 1].0),
            n_low_label: n_low,
            n_high_label: n_high,
            ratio: (n_high > 0).then(|| n_low as f64 / n_high as f64),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv write failed: {e}"))
}

fn edge_fields(kg: &KnowledgeGraph, edge: EdgeId) -> [String; 4] {
    let rec = &kg.edges()[edge];
    let vocab = kg.vocab();
    [
        vocab.entity_name(rec.triple.subject).unwrap().to_string(),
        vocab.relation_name(rec.triple.relation).unwrap().to_string(),
        vocab.entity_name(rec.triple.object).unwrap().to_string(),
        rec.direction.name().to_string(),
    ]
}

impl InfluencerReport {
    /// `position,edge_id,subject,relation,object,direction,weight,stderr`
    pub fn write_csv<W: std::io::Write>(&self, kg: &KnowledgeGraph, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "position", "edge_id", "subject", "relation", "object", "direction", "weight",
            "stderr",
        ])
        .map_err(csv_err)?;
        for (position, edges) in [("top", &self.top), ("bottom", &self.bottom)] {
            for we in edges.iter() {
                let [s, r, o, d] = edge_fields(kg, we.edge);
                out.write_record(&[
                    position.to_string(),
                    we.edge.to_string(),
                    s,
                    r,
                    o,
                    d,
                    format!("{}", we.weight.mean),
                    we.weight.stderr.map(|v| format!("{v}")).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }
}

impl OcclusionReport {
    /// `edge_id,side,subject,relation,object,direction,delta,stderr`
    pub fn write_csv<W: std::io::Write>(&self, kg: &KnowledgeGraph, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "edge_id", "side", "subject", "relation", "object", "direction", "delta", "stderr",
        ])
        .map_err(csv_err)?;
        for row in &self.rows {
            let [s, r, o, d] = edge_fields(kg, row.edge);
            out.write_record(&[
                row.edge.to_string(),
                row.side.name().to_string(),
                s,
                r,
                o,
                d,
                format!("{}", row.delta.mean),
                row.delta.stderr.map(|v| format!("{v}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }
}

/// `encoder_relation,relation,group,bin,bin_low,bin_high,mass,count`
pub fn write_histograms_csv<W: std::io::Write>(
    rows: &[HistogramRow],
    kg: &KnowledgeGraph,
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "encoder_relation",
        "relation",
        "group",
        "bin",
        "bin_low",
        "bin_high",
        "mass",
        "count",
    ])
    .map_err(csv_err)?;
    let n_rel = kg.num_relations();
    for row in rows {
        let bins = row.masses.len();
        let base_rel = row.encoder_relation % n_rel;
        let rel_name = kg.vocab().relation_name(base_rel).unwrap();
        let rel_label = if row.encoder_relation >= n_rel {
            format!("{rel_name} (inverse)")
        } else {
            rel_name.to_string()
        };
        for (b, mass) in row.masses.iter().enumerate() {
            out.write_record(&[
                row.encoder_relation.to_string(),
                rel_label.clone(),
                row.group.name().to_string(),
                b.to_string(),
                format!("{}", b as f64 / bins as f64),
                format!("{}", (b + 1) as f64 / bins as f64),
                format!("{mass}"),
                row.count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

/// `edge_id,subject,relation,object,direction,weight,stratum_degree,provenance,low_confidence`
pub fn write_suspects_csv<W: std::io::Write>(
    suspects: &[SuspectEdge],
    kg: &KnowledgeGraph,
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "edge_id",
        "subject",
        "relation",
        "object",
        "direction",
        "weight",
        "stratum_degree",
        "provenance",
        "low_confidence",
    ])
    .map_err(csv_err)?;
    for s in suspects {
        let [sub, rel, obj, dir] = edge_fields(kg, s.edge);
        out.write_record(&[
            s.edge.to_string(),
            sub,
            rel,
            obj,
            dir,
            format!("{}", s.weight),
            s.stratum_degree.to_string(),
            s.provenance.clone().unwrap_or_default(),
            s.low_confidence.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}
