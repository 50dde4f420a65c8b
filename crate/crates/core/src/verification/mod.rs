//! Verification back end: LDA with length normalization, two-covariance
//! PLDA, trial scoring and detection metrics.

mod io;
mod lda;
mod linalg;
mod metrics;
mod plda;


use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;

pub use io::{
    format_backend, format_scores, parse_backend, parse_trials, read_backend, read_embeddings, read_trials,
    write_backend, write_embeddings, write_scores, Backend, EmbeddingSet, EMBEDDING_MAGIC,
};
pub use lda::{fit_lda, length_normalize, scatter_matrices, Lda, LDA_REG};
pub use metrics::{
    det_curve, eer_from_curve, evaluate_scores, evaluate_trials, format_metrics, DetectionMetrics, TrialRecord,
    P_TARGET,
};
pub use plda::{
    cosine_score, em_step, fit_plda, init_model, log_likelihood, ClassGroup, PldaModel, PldaScorer, PldaStats,
    COV_FLOOR,
};

use crate::error::{Error, Result};

pub const DEFAULT_LDA_DIM: usize = 200;
pub const DEFAULT_PLDA_ITERS: usize = 10;

/// Integer class labels for string speaker ids, in sorted id order.
pub fn index_labels(speakers: &[String]) -> Vec<usize> {
    let ids: BTreeMap<&str, usize> = {
        let mut m = BTreeMap::new();
        for s in speakers {
            m.entry(s.as_str()).or_insert(0);
        }
        m.into_iter().enumerate().map(|(i, (k, _))| (k, i)).collect()
    };
    speakers.iter().map(|s| ids[s.as_str()]).collect()
}

/// Fits LDA to `lda_dim`, length-normalizes, then fits PLDA.
pub fn fit_backend(x: &Array2<f64>, labels: &[usize], lda_dim: usize, iters: usize) -> Result<(Backend, Vec<f64>)> {
    let lda = fit_lda(x, labels, lda_dim)?;
    let y = lda.transform(x)?;
    let (plda, history) = fit_plda(&y, labels, iters)?;
    Ok((Backend::Plda { lda, plda }, history))
}

/// A back end bound to a set of embeddings, preprocessed once.
pub struct PreparedScorer<'a> {
    index: HashMap<&'a str, usize>,
    vectors: Array2<f64>,
    plda: Option<PldaScorer>,
}

impl Backend {
    pub fn prepare<'a>(&self, set: &'a EmbeddingSet) -> Result<PreparedScorer<'a>> {
        let (vectors, plda) = match self {
            Backend::Cosine => (set.vectors.clone(), None),
            Backend::Plda { lda, plda } => (lda.transform(&set.vectors)?, Some(PldaScorer::new(plda)?)),
        };
        Ok(PreparedScorer {
            index: set.index(),
            vectors,
            plda,
        })
    }
}

impl PreparedScorer<'_> {
    fn row(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("no embedding for utterance '{id}'")))
    }

    pub fn score(&self, enroll: &str, test: &str) -> Result<f64> {
        let a = self.vectors.row(self.row(enroll)?);
        let b = self.vectors.row(self.row(test)?);
        let s = match &self.plda {
            Some(p) => p.score(a, b)?,
            None => cosine_score(a, b)?,
        };
        if !s.is_finite() {
            return Err(Error::NumericMsg(format!("score for {enroll} {test} is {s}")));
        }
        Ok(s)
    }

    pub fn score_trial(&self, t: &TrialRecord) -> Result<TrialRecord> {
        Ok(TrialRecord {
            score: Some(self.score(&t.enroll, &t.test)?),
            ..t.clone()
        })
    }
}
