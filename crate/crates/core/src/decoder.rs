//! Triple scoring: DistMult and ComplEx bilinear decoders, plus the
//! score-to-probability map (logistic sigmoid).
//!
//! ComplEx treats a d-vector as d/2 complex numbers (first half real parts,
//! second half imaginary parts) and scores Re(sum_k s_k * r_k * conj(o_k)),
//! which unlike DistMult can be asymmetric in subject/object.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mat::{normalize_l2, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    DistMult,
    Complex,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::DistMult => "distmult",
            DecoderKind::Complex => "complex",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distmult" => Ok(DecoderKind::DistMult),
            "complex" => Ok(DecoderKind::Complex),
            other => Err(Error::InvalidArgument(format!(
                "unknown decoder `{other}` (expected `distmult` or `complex`)"
            ))),
        }
    }
}

/// Learned relation vectors for the decoder, one row per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTable {
    kind: DecoderKind,
    rows: Mat,
}

impl RelationTable {
    /// Unit-norm random rows. ComplEx requires an even dimension.
    pub fn init(
        kind: DecoderKind,
        num_relations: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kind == DecoderKind::Complex && dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "complex decoder requires an even dimension, got {dim}"
            )));
        }
        let mut rows = Mat::zeros(num_relations, dim);
        for i in 0..num_relations {
            let row = rows.row_mut(i);
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            normalize_l2(row);
        }
        Ok(RelationTable { kind, rows })
    }

    pub fn from_mat(kind: DecoderKind, rows: Mat) -> Result<Self> {
        if kind == DecoderKind::Complex && rows.cols() % 2 != 0 {
            return Err(Error::InvalidArgument(
                "complex decoder requires an even dimension".into(),
            ));
        }
        Ok(RelationTable { kind, rows })
    }

    pub fn kind(&self) -> DecoderKind {
        self.kind
    }

    pub fn rows(&self) -> &Mat {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Mat {
        &mut self.rows
    }

    pub fn score(&self, subject: &[f64], relation: usize, object: &[f64]) -> Result<f64> {
        let r = self.rows.row(relation);
        match self.kind {
            DecoderKind::DistMult => score_distmult(subject, r, object),
            DecoderKind::Complex => score_complex(subject, r, object),
        }
    }

    /// Backward pass of one scored triple: accumulates `factor * d(score)`
    /// into the three gradient slices.
    pub(crate) fn accumulate_score_grad(
        &self,
        subject: &[f64],
        relation: usize,
        object: &[f64],
        factor: f64,
        d_subject: &mut [f64],
        d_relation: &mut [f64],
        d_object: &mut [f64],
    ) {
        let r = self.rows.row(relation);
        match self.kind {
            DecoderKind::DistMult => {
                for k in 0..r.len() {
                    d_subject[k] += factor * r[k] * object[k];
                    d_relation[k] += factor * subject[k] * object[k];
                    d_object[k] += factor * subject[k] * r[k];
                }
            }
            DecoderKind::Complex => {
                let h = r.len() / 2;
                for k in 0..h {
                    let (a, b) = (subject[k], subject[h + k]);
                    let (c, d) = (r[k], r[h + k]);
                    let (e, f) = (object[k], object[h + k]);
                    // score_k = ace + bcf + adf - bde
                    d_subject[k] += factor * (c * e + d * f);
                    d_subject[h + k] += factor * (c * f - d * e);
                    d_relation[k] += factor * (a * e + b * f);
                    d_relation[h + k] += factor * (a * f - b * e);
                    d_object[k] += factor * (a * c - b * d);
                    d_object[h + k] += factor * (b * c + a * d);
                }
            }
        }
    }
}

/// Sum_k s[k] * r[k] * o[k]; symmetric in subject/object.
pub fn score_distmult(subject: &[f64], relation: &[f64], object: &[f64]) -> Result<f64> {
    if subject.len() != relation.len() || relation.len() != object.len() {
        return Err(Error::DimensionMismatch(format!(
            "distmult expects equal dimensions, got {}/{}/{}",
            subject.len(),
            relation.len(),
            object.len()
        )));
    }
    Ok(score_distmult_unchecked(subject, relation, object))
}

#[inline]
pub(crate) fn score_distmult_unchecked(subject: &[f64], relation: &[f64], object: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..subject.len() {
        acc += subject[k] * relation[k] * object[k];
    }
    acc
}

/// Re(sum_k s_k * r_k * conj(o_k)) with halves as real/imaginary parts.
pub fn score_complex(subject: &[f64], relation: &[f64], object: &[f64]) -> Result<f64> {
    if subject.len() != relation.len() || relation.len() != object.len() {
        return Err(Error::DimensionMismatch(format!(
            "complex expects equal dimensions, got {}/{}/{}",
            subject.len(),
            relation.len(),
            object.len()
        )));
    }
    if subject.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "complex scoring requires an even dimension, got {}",
            subject.len()
        )));
    }
    Ok(score_complex_unchecked(subject, relation, object))
}

#[inline]
pub(crate) fn score_complex_unchecked(subject: &[f64], relation: &[f64], object: &[f64]) -> f64 {
    let h = subject.len() / 2;
    let mut acc = 0.0;
    for k in 0..h {
        let (a, b) = (subject[k], subject[h + k]);
        let (c, d) = (relation[k], relation[h + k]);
        let (e, f) = (object[k], object[h + k]);
        acc += a * c * e + b * c * f + a * d * f - b * d * e;
    }
    acc
}

/// Numerically stable logistic sigmoid; strictly monotone in the score.
pub fn probability(score: f64) -> f64 {
    if score >= 0.0 {
        1.0 / (1.0 + (-score).exp())
    } else {
        let e = score.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distmult_hand_example() {
        assert_eq!(
            score_distmult(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap(),
            3.0
        );
    }

    #[test]
    fn distmult_zero_relation() {
        assert_eq!(
            score_distmult(&[3.0, -1.0], &[0.0, 0.0], &[2.0, 5.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn distmult_matches_fold_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
            let r: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
            let o: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
            let oracle: f64 = s
                .iter()
                .zip(&r)
                .zip(&o)
                .fold(0.0, |acc, ((a, b), c)| acc + a * b * c);
            assert!((score_distmult(&s, &r, &o).unwrap() - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn distmult_dimension_mismatch() {
        assert!(score_distmult(&[1.0], &[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn distmult_is_symmetric() {
        let s = [0.3, -0.7, 1.1];
        let r = [0.5, 0.2, -0.4];
        let o = [-1.0, 0.9, 0.6];
        assert_eq!(
            score_distmult(&s, &r, &o).unwrap(),
            score_distmult(&o, &r, &s).unwrap()
        );
    }

    #[test]
    fn complex_degenerates_to_distmult_on_real_inputs() {
        // All imaginary halves zero: score equals DistMult on the real halves.
        let s = [0.4, -0.2, 0.0, 0.0];
        let r = [1.5, 0.3, 0.0, 0.0];
        let o = [-0.7, 2.0, 0.0, 0.0];
        let cx = score_complex(&s, &r, &o).unwrap();
        let dm = score_distmult(&s[..2], &r[..2], &o[..2]).unwrap();
        assert!((cx - dm).abs() < 1e-15);
    }

    #[test]
    fn complex_purely_imaginary_relation_annihilates_equal_pair() {
        // s == o and r purely imaginary: the surviving terms adf - bde cancel.
        let s = [0.8, -0.3, 0.5, 1.2];
        let r = [0.0, 0.0, 0.7, -1.1];
        assert!(score_complex(&s, &r, &s).unwrap().abs() < 1e-15);
    }

    #[test]
    fn complex_matches_complex_arithmetic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let d = 6;
            let h = d / 2;
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
            };
            let (s, r, o) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
            let oracle: f64 = (0..h)
                .map(|k| {
                    let sc = Complex64::new(s[k], s[h + k]);
                    let rc = Complex64::new(r[k], r[h + k]);
                    let oc = Complex64::new(o[k], o[h + k]);
                    (sc * rc * oc.conj()).re
                })
                .sum();
            assert!((score_complex(&s, &r, &o).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_rejects_odd_dimension() {
        let v = [1.0, 2.0, 3.0];
        assert!(score_complex(&v, &v, &v).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(RelationTable::init(DecoderKind::Complex, 2, 3, &mut rng).is_err());
    }

    #[test]
    fn complex_can_be_asymmetric() {
        // Constructive: a relation with a nonzero imaginary part separates
        // (s, r, o) from (o, r, s).
        let s = [1.0, 0.0, 0.0, 0.0];
        let r = [0.0, 0.0, 1.0, 0.0];
        let o = [0.0, 0.0, 1.0, 0.0];
        let ab = score_complex(&s, &r, &o).unwrap();
        let ba = score_complex(&o, &r, &s).unwrap();
        assert!((ab - ba).abs() > 0.5, "expected asymmetry, got {ab} vs {ba}");
    }

    #[test]
    fn probability_examples() {
        assert_eq!(probability(0.0), 0.5);
        assert!((probability(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        for s in [-3.0, -0.5, 0.2, 4.0] {
            assert!((probability(s) - (1.0 - probability(-s))).abs() < 1e-15);
        }
    }

    #[test]
    fn probability_is_strictly_monotone() {
        let scores = [-30.0, -5.0, -1.0, 0.0, 0.5, 2.0, 30.0];
        for w in scores.windows(2) {
            assert!(probability(w[0]) < probability(w[1]));
        }
    }

    #[test]
    fn score_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [DecoderKind::DistMult, DecoderKind::Complex] {
            let table = RelationTable::init(kind, 1, 4, &mut rng).unwrap();
            let s: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let o: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut ds = vec![0.0; 4];
            let mut dr = vec![0.0; 4];
            let mut do_ = vec![0.0; 4];
            table.accumulate_score_grad(&s, 0, &o, 1.0, &mut ds, &mut dr, &mut do_);
            let h = 1e-6;
            for k in 0..4 {
                let mut sp = s.clone();
                sp[k] += h;
                let mut sm = s.clone();
                sm[k] -= h;
                let fd = (table.score(&sp, 0, &o).unwrap() - table.score(&sm, 0, &o).unwrap())
                    / (2.0 * h);
                assert!((fd - ds[k]).abs() < 1e-7, "{kind:?} ds[{k}]");
                let mut op = o.clone();
                op[k] += h;
                let mut om = o.clone();
                om[k] -= h;
                let fd = (table.score(&s, 0, &op).unwrap() - table.score(&s, 0, &om).unwrap())
                    / (2.0 * h);
                assert!((fd - do_[k]).abs() < 1e-7, "{kind:?} do[{k}]");
            }
        }
    }
}
