//! Ranking evaluation: raw and filtered mean reciprocal rank and Hits@k.
//!
//! Each eval triple yields two queries, one per side. A query scores all N
//! candidate replacements of that side; the filtered variant drops
//! candidates that form a known-true triple (train, valid or test) other
//! than the query itself. Ties resolve to the mid-rank
//! `1 + #greater + #ties/2`, so a constant scorer cannot inflate Hits@k
//! and the report is invariant under permutation of tied candidates.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::encoder::{self, ModelParameters};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Split, Triple};
use crate::mat::Mat;

/// Which endpoint of the query triple is ranked over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Subject,
    Object,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Subject => "subject",
            Side::Object => "object",
        }
    }
}

/// Rank of the true entity for one (triple, side) query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryRank {
    pub triple: Triple,
    pub side: Side,
    pub rank_raw: f64,
    pub rank_filtered: f64,
}

/// Aggregated metrics plus all per-query ranks.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub split: Split,
    pub mrr_raw: f64,
    pub mrr_filtered: f64,
    /// Hits@{1,3,10}.
    pub hits_raw: [f64; 3],
    pub hits_filtered: [f64; 3],
    pub ranks: Vec<QueryRank>,
}

pub const HITS_AT: [usize; 3] = [1, 3, 10];

impl EvalReport {
    /// Human-readable summary, stable across identical runs.
    pub fn write_summary<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# evaluation report")?;
        writeln!(w, "split = {}", self.split.name())?;
        writeln!(w, "queries = {}", self.ranks.len())?;
        writeln!(w, "mrr_raw = {}", self.mrr_raw)?;
        writeln!(w, "mrr_filtered = {}", self.mrr_filtered)?;
        for (i, k) in HITS_AT.iter().enumerate() {
            writeln!(w, "hits{}_raw = {}", k, self.hits_raw[i])?;
            writeln!(w, "hits{}_filtered = {}", k, self.hits_filtered[i])?;
        }
        Ok(())
    }

    /// Per-query CSV:
    /// `subject,relation,object,side,rank_raw,rank_filtered`.
    pub fn write_ranks_csv<W: std::io::Write>(
        &self,
        kg: &KnowledgeGraph,
        writer: W,
    ) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let to_csv = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
        out.write_record(["subject", "relation", "object", "side", "rank_raw", "rank_filtered"])
            .map_err(to_csv)?;
        let vocab = kg.vocab();
        for q in &self.ranks {
            out.write_record(&[
                vocab.entity_name(q.triple.subject).unwrap().to_string(),
                vocab.relation_name(q.triple.relation).unwrap().to_string(),
                vocab.entity_name(q.triple.object).unwrap().to_string(),
                q.side.name().to_string(),
                format!("{}", q.rank_raw),
                format!("{}", q.rank_filtered),
            ])
            .map_err(to_csv)?;
        }
        out.flush()
            .map_err(|e| Error::InvalidArgument(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

/// Precomputed state for ranking queries: eval-mode embeddings of every
/// entity and the known-true filter set. Never mutates the parameters.
pub struct Evaluator<'a> {
    kg: &'a KnowledgeGraph,
    params: &'a ModelParameters,
    embeddings: Mat,
    known: HashSet<Triple>,
}

impl<'a> Evaluator<'a> {
    pub fn new(params: &'a ModelParameters, kg: &'a KnowledgeGraph) -> Result<Self> {
        let c = params.normalized_attention(kg);
        let embeddings = encoder::encode_all(params, kg, &c)?;
        Ok(Evaluator {
            kg,
            params,
            embeddings,
            known: kg.known_triples(),
        })
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    /// Mid-rank of the true entity among candidate replacements on `side`.
    pub fn rank_query(&self, triple: Triple, side: Side, filtered: bool) -> Result<f64> {
        let (raw, filt) = self.rank_pair(triple, side)?;
        Ok(if filtered { filt } else { raw })
    }

    /// Raw and filtered rank in one sweep over candidates.
    pub fn rank_pair(&self, triple: Triple, side: Side) -> Result<(f64, f64)> {
        let n = self.kg.num_entities();
        if triple.subject >= n || triple.object >= n {
            return Err(Error::UnknownEntity(triple.subject.max(triple.object)));
        }
        if triple.relation >= self.kg.num_relations() {
            return Err(Error::UnknownRelation(triple.relation));
        }
        let es = self.embeddings.row(triple.subject);
        let eo = self.embeddings.row(triple.object);
        let true_score = self.params.relations.score(es, triple.relation, eo)?;
        let original = match side {
            Side::Subject => triple.subject,
            Side::Object => triple.object,
        };
        let mut greater_raw = 0usize;
        let mut ties_raw = 0usize;
        let mut greater_filt = 0usize;
        let mut ties_filt = 0usize;
        for candidate in 0..n {
            if candidate == original {
                continue;
            }
            let (cand_triple, score) = match side {
                Side::Subject => (
                    Triple::new(candidate, triple.relation, triple.object),
                    self.params.relations.score(
                        self.embeddings.row(candidate),
                        triple.relation,
                        eo,
                    )?,
                ),
                Side::Object => (
                    Triple::new(triple.subject, triple.relation, candidate),
                    self.params.relations.score(
                        es,
                        triple.relation,
                        self.embeddings.row(candidate),
                    )?,
                ),
            };
            let known_competitor = self.known.contains(&cand_triple);
            if score > true_score {
                greater_raw += 1;
                if !known_competitor {
                    greater_filt += 1;
                }
            } else if score == true_score {
                ties_raw += 1;
                if !known_competitor {
                    ties_filt += 1;
                }
            }
        }
        let rank = |greater: usize, ties: usize| 1.0 + greater as f64 + ties as f64 / 2.0;
        Ok((rank(greater_raw, ties_raw), rank(greater_filt, ties_filt)))
    }

    /// Ranks both sides of every triple in the split.
    pub fn evaluate(&self, split: Split) -> Result<EvalReport> {
        let triples = self.kg.split(split);
        if triples.is_empty() {
            return Err(Error::EmptySplit(split.name().to_string()));
        }
        let ranks: Vec<QueryRank> = triples
            .par_iter()
            .map(|&t| -> Result<[QueryRank; 2]> {
                let (raw_s, filt_s) = self.rank_pair(t, Side::Subject)?;
                let (raw_o, filt_o) = self.rank_pair(t, Side::Object)?;
                Ok([
                    QueryRank {
                        triple: t,
                        side: Side::Subject,
                        rank_raw: raw_s,
                        rank_filtered: filt_s,
                    },
                    QueryRank {
                        triple: t,
                        side: Side::Object,
                        rank_raw: raw_o,
                        rank_filtered: filt_o,
                    },
                ])
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();

        let m = ranks.len() as f64;
        let mut report = EvalReport {
            split,
            mrr_raw: ranks.iter().map(|q| 1.0 / q.rank_raw).sum::<f64>() / m,
            mrr_filtered: ranks.iter().map(|q| 1.0 / q.rank_filtered).sum::<f64>() / m,
            hits_raw: [0.0; 3],
            hits_filtered: [0.0; 3],
            ranks,
        };
        for (i, &k) in HITS_AT.iter().enumerate() {
            let k = k as f64;
            report.hits_raw[i] = report
                .ranks
                .iter()
                .filter(|q| q.rank_raw <= k)
                .count() as f64
                / m;
            report.hits_filtered[i] = report
                .ranks
                .iter()
                .filter(|q| q.rank_filtered <= k)
                .count() as f64
                / m;
        }
        Ok(report)
    }
}

/// One-shot evaluation of a split.
pub fn evaluate(params: &ModelParameters, kg: &KnowledgeGraph, split: Split) -> Result<EvalReport> {
    Evaluator::new(params, kg)?.evaluate(split)
}
