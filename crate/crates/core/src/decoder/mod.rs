//! Frame-synchronous Viterbi search over a compiled search graph, and word
//! error rate scoring.

mod search;
mod wer;

pub use search::{decode_corpus, decode_utterance, replay_cost, DecodeConfig, Hypothesis};
pub use wer::{word_error_rate, UtteranceScore, WerReport};

use ndarray::Array2;

use crate::ctc::LabelPriors;
use crate::nnet::PosteriorMatrix;
use crate::{Error, Result};

/// Midpoint of the usual 0.5 to 0.9 range.
pub const DEFAULT_ACOUSTIC_SCALE: f64 = 0.7;
/// Posteriors are floored here before taking logs.
pub const POSTERIOR_FLOOR: f64 = 1e-30;

/// `scale · (ln max(y, floor) − log_prior)` for every frame and label.
pub fn normalize_posteriors(y: &PosteriorMatrix, priors: &LabelPriors, scale: f64) -> Result<Array2<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("acoustic scale must be positive, got {scale}")));
    }
    if y.num_labels() != priors.num_labels() {
        return Err(Error::DimensionMismatch(format!(
            "utterance {}: {} posterior columns but {} priors",
            y.utterance_id,
            y.num_labels(),
            priors.num_labels()
        )));
    }
    let floor = POSTERIOR_FLOOR.ln();
    let mut scores = y.log_probs().to_owned();
    for mut row in scores.rows_mut() {
        for (v, &p) in row.iter_mut().zip(&priors.log_prior) {
            *v = scale * (v.max(floor) - p);
        }
    }
    Ok(scores)
}

/// Per-frame acoustic scores for one utterance. Higher is better; the search
/// works with costs, the negated scores.
#[derive(Debug, Clone)]
pub struct AcousticScorer {
    pub utterance_id: String,
    scores: Array2<f64>,
}

impl AcousticScorer {
    pub fn new(y: &PosteriorMatrix, priors: &LabelPriors, scale: f64) -> Result<Self> {
        Ok(Self {
            utterance_id: y.utterance_id.clone(),
            scores: normalize_posteriors(y, priors, scale)?,
        })
    }

    /// Wraps a ready-made `[T × (K+1)]` score matrix.
    pub fn from_scores(utterance_id: impl Into<String>, scores: Array2<f64>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            scores,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.scores.ncols()
    }

    pub fn score(&self, t: usize, k: usize) -> f64 {
        self.scores[[t, k]]
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }
}
