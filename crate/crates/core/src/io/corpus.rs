use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use super::{parse_speaker_map, parse_transcripts, parse_unit_table, read_features, read_text, source_name};
use crate::ctc::LabelSequence;
use crate::features::{apply_cmvn, estimate_global_stats, estimate_speaker_stats, FeatureMatrix};
use crate::graphs::UnitTable;
use crate::trainer::Utterance;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    /// Archive file or directory of per-utterance files.
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
    pub units: PathBuf,
    pub speakers: Option<PathBuf>,
}

/// A validated corpus. Every labeled utterance has features and every label
/// resolves in `units`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub features: BTreeMap<String, FeatureMatrix>,
    pub labels: BTreeMap<String, LabelSequence>,
    /// Empty when no speaker map was given.
    pub speakers: HashMap<String, String>,
    pub units: UnitTable,
}

impl Corpus {
    /// Normalizes features per speaker, or with global statistics when the
    /// speaker map is empty.
    pub fn normalized_features(&self) -> Result<Vec<FeatureMatrix>> {
        let feats: Vec<FeatureMatrix> = self.features.values().cloned().collect();
        if self.speakers.is_empty() {
            log::warn!("no speaker map; using global mean/variance normalization");
            let stats = estimate_global_stats(&feats)?;
            return feats.iter().map(|f| apply_cmvn(f, &stats)).collect();
        }
        let stats = estimate_speaker_stats(&feats, &self.speakers)?;
        feats
            .iter()
            .map(|f| apply_cmvn(f, &stats[&self.speakers[&f.utterance_id]]))
            .collect()
    }

    /// Labeled utterances in id order.
    pub fn utterances(&self) -> Vec<Utterance> {
        self.labels
            .iter()
            .map(|(id, l)| Utterance {
                features: self.features[id].clone(),
                labels: l.clone(),
            })
            .collect()
    }
}

/// Loads and cross-checks a corpus. Reference problems (labels without
/// features, unknown units, speaker entries for missing utterances,
/// utterances without a speaker, dimension disagreements) are collected and
/// reported together.
pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus> {
    let units = parse_unit_table(&read_text(&paths.units)?, &source_name(&paths.units))?;
    let mut problems = Vec::new();
    let mut features = BTreeMap::new();
    for f in read_features(&paths.features)? {
        features.insert(f.utterance_id.clone(), f);
    }
    if let Some(dim) = features.values().next().map(FeatureMatrix::dim) {
        for f in features.values().filter(|f| f.dim() != dim) {
            problems.push(format!("utterance {} has dimension {}, expected {dim}", f.utterance_id, f.dim()));
        }
    } else {
        problems.push("feature archive is empty".to_string());
    }

    let mut labels = BTreeMap::new();
    if let Some(p) = &paths.labels {
        for (id, syms) in parse_transcripts(&read_text(p)?, &source_name(p))? {
            if !features.contains_key(&id) {
                problems.push(format!("utterance {id} has labels but no features"));
            }
            let unknown: Vec<&str> = syms.iter().map(String::as_str).filter(|s| units.id(s).is_none()).collect();
            if !unknown.is_empty() {
                problems.push(format!("utterance {id} uses unknown units {}", unknown.join(" ")));
                continue;
            }
            match units.encode(&syms, &id).and_then(|ids| LabelSequence::new(id.clone(), ids)) {
                Ok(l) => {
                    labels.insert(id, l);
                }
                Err(e) => problems.push(e.to_string()),
            }
        }
    }

    let mut speakers = HashMap::new();
    if let Some(p) = &paths.speakers {
        let map = parse_speaker_map(&read_text(p)?, &source_name(p))?;
        if !map.is_empty() {
            for id in map.keys().filter(|id| !features.contains_key(*id)) {
                problems.push(format!("speaker map names unknown utterance {id}"));
            }
            for id in features.keys().filter(|id| !map.contains_key(*id)) {
                problems.push(format!("utterance {id} has no speaker"));
            }
        }
        speakers = map.into_iter().collect();
    }
    if !problems.is_empty() {
        return Err(Error::Corpus(problems));
    }
    Ok(Corpus {
        features,
        labels,
        speakers,
        units,
    })
}
