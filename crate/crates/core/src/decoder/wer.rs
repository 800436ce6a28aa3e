use std::collections::BTreeMap;

use crate::edit::{align, EditCounts};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub utterance_id: String,
    pub counts: EditCounts,
    pub missing_hypothesis: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WerReport {
    pub utterances: Vec<UtteranceScore>,
    pub totals: EditCounts,
}

impl WerReport {
    pub fn reference_words(&self) -> usize {
        self.totals.reference_len()
    }

    /// Percentage of reference words in error.
    pub fn wer_percent(&self) -> f64 {
        100.0 * self.totals.errors() as f64 / self.reference_words() as f64
    }

    pub fn missing(&self) -> usize {
        self.utterances.iter().filter(|u| u.missing_hypothesis).count()
    }
}

/// Corpus WER over the reference set. A missing hypothesis counts as all
/// deletions; hypotheses without a reference are ignored. Both cases are
/// logged.
pub fn word_error_rate<S: AsRef<str>>(
    hyps: &BTreeMap<String, Vec<S>>,
    refs: &BTreeMap<String, Vec<S>>,
) -> Result<WerReport> {
    let mut totals = EditCounts::default();
    let mut utterances = Vec::with_capacity(refs.len());
    for (id, reference) in refs {
        let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
        let (hyp, missing) = match hyps.get(id) {
            Some(h) => (h.iter().map(AsRef::as_ref).collect::<Vec<&str>>(), false),
            None => {
                log::warn!("no hypothesis for {id}; counting every reference word as deleted");
                (Vec::new(), true)
            }
        };
        let counts = align(&hyp, &reference);
        totals += counts;
        utterances.push(UtteranceScore {
            utterance_id: id.clone(),
            counts,
            missing_hypothesis: missing,
        });
    }
    for id in hyps.keys().filter(|id| !refs.contains_key(*id)) {
        log::warn!("hypothesis for {id} has no reference and is ignored");
    }
    if totals.reference_len() == 0 {
        return Err(Error::InvalidInput("references contain no words".into()));
    }
    Ok(WerReport { utterances, totals })
}
