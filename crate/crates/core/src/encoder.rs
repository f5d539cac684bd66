//! Single-layer graph-convolutional encoder.
//!
//! Each entity's embedding is its bias row plus the attention-weighted sum
//! of messages over its incoming edges; the message along an edge is the
//! source entity's base row rescaled elementwise by the encoder relation's
//! diagonal vector. No nonlinearity is applied, so encoding is linear in
//! the base table and in the bias for fixed coefficients.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::attention::{self, NormalizedAttention, RawAttention};
use crate::decoder::{DecoderKind, RelationTable};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::mat::{normalize_l2, Mat};

/// Whether per-edge attention scalars are trained or pinned at the uniform
/// 1/in-degree start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    Learned,
    FixedUniform,
}

impl AttentionMode {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Learned => "learned",
            AttentionMode::FixedUniform => "fixed-uniform",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(AttentionMode::Learned),
            "fixed-uniform" | "fixed" => Ok(AttentionMode::FixedUniform),
            other => Err(Error::InvalidArgument(format!(
                "unknown attention mode `{other}` (expected `learned` or `fixed-uniform`)"
            ))),
        }
    }
}

/// All trainable blocks of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    dim: usize,
    /// Shared base embedding table, one row per entity; rows start at unit
    /// L2 norm so every entity initially contributes equal magnitude.
    pub base: Mat,
    /// Per-entity bias; the self-contribution of a node to its embedding.
    pub bias: Mat,
    /// Per-encoder-relation diagonal rescaling of messages.
    pub rel_scale: Mat,
    /// Decoder relation vectors.
    pub relations: RelationTable,
    /// Raw per-edge attention scalars.
    pub attention: RawAttention,
    pub attention_mode: AttentionMode,
    pub use_bias: bool,
}

impl ModelParameters {
    pub fn init(
        kg: &KnowledgeGraph,
        dim: usize,
        decoder: DecoderKind,
        attention_mode: AttentionMode,
        use_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let n = kg.num_entities();
        let mut base = Mat::zeros(n, dim);
        for i in 0..n {
            let row = base.row_mut(i);
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            normalize_l2(row);
        }
        let relations = RelationTable::init(decoder, kg.num_relations(), dim, rng)?;
        Ok(ModelParameters {
            dim,
            base,
            bias: Mat::zeros(n, dim),
            rel_scale: Mat::filled(kg.num_encoder_relations(), dim, 1.0),
            relations,
            attention: RawAttention::uniform(kg),
            attention_mode,
            use_bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rebuilds from explicit blocks (checkpoint loading).
    pub fn from_blocks(
        dim: usize,
        base: Mat,
        bias: Mat,
        rel_scale: Mat,
        relations: RelationTable,
        attention: RawAttention,
        attention_mode: AttentionMode,
        use_bias: bool,
    ) -> Result<Self> {
        if base.cols() != dim || bias.cols() != dim || rel_scale.cols() != dim {
            return Err(Error::DimensionMismatch(
                "parameter blocks disagree on dimension".into(),
            ));
        }
        Ok(ModelParameters {
            dim,
            base,
            bias,
            rel_scale,
            relations,
            attention,
            attention_mode,
            use_bias,
        })
    }

    pub fn validate(&self, kg: &KnowledgeGraph) -> Result<()> {
        let n = kg.num_entities();
        if self.base.rows() != n || self.bias.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "entity blocks cover {} rows, graph has {} entities",
                self.base.rows(),
                n
            )));
        }
        if self.rel_scale.rows() != kg.num_encoder_relations() {
            return Err(Error::DimensionMismatch(format!(
                "relation scale covers {} rows, encoder space is {}",
                self.rel_scale.rows(),
                kg.num_encoder_relations()
            )));
        }
        if self.relations.rows().rows() != kg.num_relations() {
            return Err(Error::DimensionMismatch(format!(
                "decoder covers {} relations, graph has {}",
                self.relations.rows().rows(),
                kg.num_relations()
            )));
        }
        if self.attention.len() != kg.num_edges() {
            return Err(Error::DimensionMismatch(format!(
                "attention covers {} edges, graph has {}",
                self.attention.len(),
                kg.num_edges()
            )));
        }
        Ok(())
    }

    /// Current budget-normalized coefficients. In fixed-uniform mode the raw
    /// scalars simply never receive updates, so this stays at 1/in-degree
    /// unless explicitly overridden (occlusion).
    pub fn normalized_attention(&self, kg: &KnowledgeGraph) -> NormalizedAttention {
        attention::normalize(&self.attention, kg)
    }
}

/// One embedding row: bias plus coefficient-weighted messages over the
/// node's incoming edges, in ascending edge-id order. Every encoding path
/// in the crate funnels through this kernel so that single-row and
/// full-matrix results agree bit for bit.
pub(crate) fn encode_row_into(
    out: &mut [f64],
    node: EntityId,
    kg: &KnowledgeGraph,
    base: &Mat,
    rel_scale: &Mat,
    bias: Option<&Mat>,
    coeffs: &[f64],
) {
    match bias {
        Some(b) => out.copy_from_slice(b.row(node)),
        None => out.fill(0.0),
    }
    let n_rel = kg.num_relations();
    for &e in kg.incoming(node) {
        let c = coeffs[e];
        if c == 0.0 {
            continue;
        }
        let rec = &kg.edges()[e];
        let src_row = base.row(rec.source());
        let scale = rel_scale.row(rec.encoder_relation(n_rel));
        for k in 0..out.len() {
            out[k] += c * src_row[k] * scale[k];
        }
    }
}

/// Deterministic, dropout-free embeddings for every entity.
pub fn encode_all(
    params: &ModelParameters,
    kg: &KnowledgeGraph,
    c: &NormalizedAttention,
) -> Result<Mat> {
    params.validate(kg)?;
    let bias = params.use_bias.then_some(&params.bias);
    let mut out = Mat::zeros(kg.num_entities(), params.dim());
    let dim = params.dim();
    out.data_mut()
        .par_chunks_exact_mut(dim)
        .enumerate()
        .for_each(|(node, row)| {
            encode_row_into(row, node, kg, &params.base, &params.rel_scale, bias, c.values());
        });
    Ok(out)
}

/// Training-mode embeddings: inverted dropout on base-table entries and on
/// link coefficients, both driven by `rng`.
pub fn encode_all_train(
    params: &ModelParameters,
    kg: &KnowledgeGraph,
    c: &NormalizedAttention,
    dropout_emb: f64,
    dropout_link: f64,
    rng: &mut impl Rng,
) -> Result<Mat> {
    params.validate(kg)?;
    let emb_mask = embedding_mask(params.base.data().len(), dropout_emb, rng)?;
    let link_mask = attention::link_mask(kg.num_edges(), dropout_link, rng)?;
    let masked_base = masked_base(&params.base, emb_mask.as_deref(), dropout_emb);
    let coeffs = attention::masked_coefficients(c.values(), link_mask.as_deref(), dropout_link);
    let base = masked_base.as_ref().unwrap_or(&params.base);
    let bias = params.use_bias.then_some(&params.bias);
    let mut out = Mat::zeros(kg.num_entities(), params.dim());
    let dim = params.dim();
    out.data_mut()
        .par_chunks_exact_mut(dim)
        .enumerate()
        .for_each(|(node, row)| {
            encode_row_into(row, node, kg, base, &params.rel_scale, bias, &coeffs);
        });
    Ok(out)
}

/// Single-row specialization; equals the node's row of [`encode_all`]
/// exactly.
pub fn encode_node(
    params: &ModelParameters,
    kg: &KnowledgeGraph,
    c: &NormalizedAttention,
    node: EntityId,
) -> Result<Vec<f64>> {
    params.validate(kg)?;
    if node >= kg.num_entities() {
        return Err(Error::UnknownEntity(node));
    }
    let bias = params.use_bias.then_some(&params.bias);
    let mut row = vec![0.0; params.dim()];
    encode_row_into(&mut row, node, kg, &params.base, &params.rel_scale, bias, c.values());
    Ok(row)
}

/// Bernoulli keep-mask over base-table entries; None when p == 0.
pub(crate) fn embedding_mask(
    len: usize,
    p: f64,
    rng: &mut impl Rng,
) -> Result<Option<Vec<bool>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "embedding dropout probability must be in [0, 1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(None);
    }
    Ok(Some((0..len).map(|_| rng.random::<f64>() >= p).collect()))
}

/// Inverted-dropout copy of the base table; None when mask is None.
pub(crate) fn masked_base(base: &Mat, mask: Option<&[bool]>, p: f64) -> Option<Mat> {
    let mask = mask?;
    let scale = 1.0 / (1.0 - p);
    let mut out = base.clone();
    for (v, &keep) in out.data_mut().iter_mut().zip(mask) {
        *v = if keep { *v * scale } else { 0.0 };
    }
    Some(out)
}

/// Writes the embedding export CSV: `entity,dim_0..dim_{d-1}`.
pub fn write_embedding_csv<W: std::io::Write>(
    embeddings: &Mat,
    kg: &KnowledgeGraph,
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let to_csv = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
    let mut header = vec!["entity".to_string()];
    header.extend((0..embeddings.cols()).map(|k| format!("dim_{k}")));
    out.write_record(&header).map_err(to_csv)?;
    for (i, row) in embeddings.rows_iter() {
        let mut record = vec![kg.vocab().entity_name(i).unwrap().to_string()];
        record.extend(row.iter().map(|v| format!("{v}")));
        out.write_record(&record).map_err(to_csv)?;
    }
    out.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv flush failed: {e}")))?;
    Ok(())
}
