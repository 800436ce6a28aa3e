//! Model-input preparation: regression deltas and per-speaker mean/variance
//! normalization.

use std::collections::{BTreeMap, HashMap};

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Floor applied to every per-dimension variance estimate.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Default regression half-window for delta features.
pub const DEFAULT_DELTA_WINDOW: usize = 2;

/// One utterance worth of frames, `[T × D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utterance_id: String,
    frames: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(utterance_id: impl Into<String>, frames: Array2<f64>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "utterance {utterance_id}: feature matrix must be non-empty, got {}x{}",
                frames.nrows(),
                frames.ncols()
            )));
        }
        if let Some((t, _)) = frames
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                context: format!("features of utterance {utterance_id}, frame {t}"),
            });
        }
        Ok(Self {
            utterance_id,
            frames,
        })
    }

    pub fn frames(&self) -> ArrayView2<'_, f64> {
        self.frames.view()
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Population mean and variance of one speaker's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub speaker_id: String,
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
}

impl SpeakerStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Regression deltas over `x` with edge frames clamped.
fn regression_deltas(x: ArrayView2<'_, f64>, window: usize) -> Array2<f64> {
    let t_len = x.nrows() as isize;
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |t: isize| t.clamp(0, t_len - 1) as usize;
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..t_len {
        let mut row = out.row_mut(t as usize);
        for n in 1..=window as isize {
            let ahead = x.row(clamp(t + n));
            let behind = x.row(clamp(t - n));
            row.scaled_add(n as f64, &(&ahead - &behind));
        }
        row /= denom;
    }
    out
}

/// Appends first (and optionally second) order regression deltas.
///
/// The second-order block is the delta of the first-order block. `order = 0`
/// returns the input unchanged.
pub fn add_deltas(feat: &FeatureMatrix, order: usize, window: usize) -> Result<FeatureMatrix> {
    if order > 2 {
        return Err(Error::InvalidInput(format!("delta order must be 0, 1 or 2, got {order}")));
    }
    if window == 0 {
        return Err(Error::InvalidInput("delta window must be at least 1".into()));
    }
    if feat.frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("features of utterance {}", feat.utterance_id),
        });
    }
    let mut blocks = vec![feat.frames.clone()];
    for _ in 0..order {
        let next = regression_deltas(blocks.last().unwrap().view(), window);
        blocks.push(next);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let frames = concatenate(Axis(1), &views).expect("blocks share the frame axis");
    Ok(FeatureMatrix {
        utterance_id: feat.utterance_id.clone(),
        frames,
    })
}

/// Exact population statistics per speaker (two passes over the frames).
pub fn estimate_speaker_stats(
    feats: &[FeatureMatrix],
    speaker_map: &HashMap<String, String>,
) -> Result<BTreeMap<String, SpeakerStats>> {
    let mut groups: BTreeMap<&str, Vec<&FeatureMatrix>> = BTreeMap::new();
    for feat in feats {
        let speaker = speaker_map.get(&feat.utterance_id).ok_or_else(|| Error::Unknown {
            kind: "speaker for utterance",
            name: feat.utterance_id.clone(),
            context: None,
        })?;
        let group = groups.entry(speaker.as_str()).or_default();
        if let Some(first) = group.first() {
            if first.dim() != feat.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "utterance {} has dimension {}, speaker {speaker} has {}",
                    feat.utterance_id,
                    feat.dim(),
                    first.dim()
                )));
            }
        }
        group.push(feat);
    }
    let mut out = BTreeMap::new();
    for (speaker, group) in groups {
        let dim = group[0].dim();
        let count: usize = group.iter().map(|f| f.num_frames()).sum();
        let n = count as f64;
        let mut mean = Array1::<f64>::zeros(dim);
        for f in &group {
            mean += &f.frames.sum_axis(Axis(0));
        }
        mean /= n;
        let mut variance = Array1::<f64>::zeros(dim);
        for f in &group {
            let centered = &f.frames - &mean;
            variance += &(&centered * &centered).sum_axis(Axis(0));
        }
        variance /= n;
        variance.mapv_inplace(|v| v.max(VARIANCE_FLOOR));
        out.insert(
            speaker.to_string(),
            SpeakerStats {
                speaker_id: speaker.to_string(),
                mean,
                variance,
            },
        );
    }
    Ok(out)
}

/// Pools every frame into a single set of statistics, used when no speaker
/// map is available.
pub fn estimate_global_stats(feats: &[FeatureMatrix]) -> Result<SpeakerStats> {
    let map: HashMap<String, String> = feats
        .iter()
        .map(|f| (f.utterance_id.clone(), "global".to_string()))
        .collect();
    estimate_speaker_stats(feats, &map)?
        .remove("global")
        .ok_or_else(|| Error::InvalidInput("no frames to estimate statistics from".into()))
}

/// `(x − mean) / sqrt(variance)` elementwise.
pub fn apply_cmvn(feat: &FeatureMatrix, stats: &SpeakerStats) -> Result<FeatureMatrix> {
    if stats.dim() != feat.dim() || stats.variance.len() != feat.dim() {
        return Err(Error::DimensionMismatch(format!(
            "utterance {} has dimension {}, statistics of speaker {} have {}",
            feat.utterance_id,
            feat.dim(),
            stats.speaker_id,
            stats.dim()
        )));
    }
    let inv_std = stats.variance.mapv(|v| 1.0 / v.sqrt());
    let frames = (&feat.frames - &stats.mean) * &inv_std;
    Ok(FeatureMatrix {
        utterance_id: feat.utterance_id.clone(),
        frames,
    })
}
