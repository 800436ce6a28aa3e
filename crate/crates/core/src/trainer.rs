//! CTC training: length-sorted batching, per-utterance gradients reduced in
//! a fixed order, elementwise clipping, plain SGD, and the newbob schedule.

use std::path::Path;

use ndarray::{s, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::ctc::{best_path, collapse_path, ctc_gradient, forward_backward_log, min_frames, LabelSequence};
use crate::edit::edit_distance;
use crate::features::FeatureMatrix;
use crate::nnet::{init_params, BlstmStack, ModelSpec};
use crate::{io, par, Error, Result};

pub const DEFAULT_CLIP: f64 = 50.0;
pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_LEARNING_RATE: f64 = 4e-5;
pub const DEFAULT_LAYERS: usize = 4;
pub const DEFAULT_CELLS: usize = 320;

/// Features and targets of one training utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub features: FeatureMatrix,
    pub labels: LabelSequence,
}

impl Utterance {
    pub fn new(features: FeatureMatrix, labels: LabelSequence) -> Result<Self> {
        if features.utterance_id != labels.utterance_id {
            return Err(Error::InvalidInput(format!(
                "features of {} paired with labels of {}",
                features.utterance_id, labels.utterance_id
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn id(&self) -> &str {
        &self.features.utterance_id
    }

    pub fn num_frames(&self) -> usize {
        self.features.num_frames()
    }
}

/// Length-adjacent utterances stacked into `[B × T_max × D]`, zero-padded.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub features: Array3<f64>,
    pub lengths: Vec<usize>,
    pub labels: Vec<Vec<u32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Real frames of utterance `i`, padding excluded.
    pub fn frames(&self, i: usize) -> ArrayView2<'_, f64> {
        self.features.slice(s![i, ..self.lengths[i], ..])
    }

    pub fn padding_frames(&self) -> usize {
        let max = self.features.shape()[1];
        self.lengths.iter().map(|&l| max - l).sum()
    }
}

fn stack_batch(utts: &[&Utterance]) -> Batch {
    let max = utts.iter().map(|u| u.num_frames()).max().unwrap_or(0);
    let dim = utts.first().map_or(0, |u| u.features.dim());
    let mut features = Array3::zeros((utts.len(), max, dim));
    for (i, u) in utts.iter().enumerate() {
        features.slice_mut(s![i, ..u.num_frames(), ..]).assign(&u.features.frames());
    }
    Batch {
        ids: utts.iter().map(|u| u.id().to_string()).collect(),
        features,
        lengths: utts.iter().map(|u| u.num_frames()).collect(),
        labels: utts.iter().map(|u| u.labels.labels().to_vec()).collect(),
    }
}

/// Sorts by frame count (stable) and cuts consecutive groups of
/// `batch_size`. Utterances too short for their targets are dropped.
pub fn make_batches(utts: &[Utterance], batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    if utts.is_empty() {
        return Err(Error::InvalidInput("cannot batch an empty corpus".into()));
    }
    let mut kept: Vec<&Utterance> = utts
        .iter()
        .filter(|u| {
            let need = min_frames(u.labels.labels());
            let ok = u.num_frames() >= need;
            if !ok {
                log::warn!("dropping {}: {} frames cannot realize {need}", u.id(), u.num_frames());
            }
            ok
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput("no utterance has realizable targets".into()));
    }
    kept.sort_by_key(|u| u.num_frames());
    Ok(kept.chunks(batch_size).map(stack_batch).collect())
}

#[derive(Debug, Clone)]
pub struct UtteranceGradient {
    pub log_likelihood: f64,
    /// Gradient of `ln P(z|x)` (ascent direction).
    pub grad: BlstmStack,
    /// Greedy decode from the same forward pass.
    pub hypothesis: Vec<u32>,
}

pub fn utterance_gradient(
    stack: &BlstmStack,
    frames: ArrayView2<'_, f64>,
    labels: &[u32],
    utterance_id: &str,
) -> Result<UtteranceGradient> {
    let pass = stack.forward(frames)?;
    let trellis = forward_backward_log(pass.log_posteriors.view(), labels, utterance_id)?;
    let g = ctc_gradient(pass.log_posteriors.view(), &trellis)?;
    let grad = stack.backward(&pass, g.logits.view())?;
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            context: format!("gradient of utterance {utterance_id}"),
        });
    }
    Ok(UtteranceGradient {
        log_likelihood: trellis.log_likelihood,
        grad,
        hypothesis: collapse_path(&best_path(pass.log_posteriors.view())),
    })
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// Mean of the per-utterance gradients.
    pub grad: BlstmStack,
    pub log_likelihood: f64,
    pub label_errors: usize,
    pub reference_labels: usize,
}

/// Per-utterance passes over unpadded frames (concurrently when enabled),
/// summed in batch order and averaged.
pub fn batch_gradient(stack: &BlstmStack, batch: &Batch) -> Result<BatchGradient> {
    let parts = par::map_range(batch.len(), |i| {
        utterance_gradient(stack, batch.frames(i), &batch.labels[i], &batch.ids[i])
    });
    let mut grad = stack.zeros_like();
    let mut log_likelihood = 0.0;
    let mut label_errors = 0;
    let mut reference_labels = 0;
    for (part, reference) in parts.into_iter().zip(&batch.labels) {
        let part = part?;
        grad.scaled_add(1.0, &part.grad);
        log_likelihood += part.log_likelihood;
        label_errors += edit_distance(&part.hypothesis, reference);
        reference_labels += reference.len();
    }
    grad.scale(1.0 / batch.len() as f64);
    Ok(BatchGradient {
        grad,
        log_likelihood,
        label_errors,
        reference_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_ler: f64,
    /// Mean per-utterance log-likelihood over the batches that were applied.
    pub mean_log_likelihood: f64,
    pub applied_batches: usize,
    pub skipped_batches: usize,
}

/// One pass over `batches`: gradient, elementwise clip to `[-clip, clip]`,
/// then `θ += lr · g`. A batch with a non-finite loss or gradient is
/// skipped; more than 10% skipped batches fails the epoch.
pub fn train_epoch(stack: &mut BlstmStack, batches: &[Batch], lr: f64, clip: f64) -> Result<EpochStats> {
    if !(clip > 0.0) || !(lr >= 0.0) {
        return Err(Error::InvalidInput(format!("need clip > 0 and lr ≥ 0, got {clip} and {lr}")));
    }
    let mut stats = EpochStats {
        train_ler: 0.0,
        mean_log_likelihood: 0.0,
        applied_batches: 0,
        skipped_batches: 0,
    };
    let (mut errors, mut refs, mut utts) = (0usize, 0usize, 0usize);
    let mut total_ll = 0.0;
    for batch in batches {
        let mut bg = match batch_gradient(stack, batch) {
            Ok(bg) if bg.log_likelihood.is_finite() => bg,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                log::warn!("skipping batch starting at {}: non-finite loss", batch.ids[0]);
                stats.skipped_batches += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        bg.grad.clip(clip);
        stack.scaled_add(lr, &bg.grad);
        stats.applied_batches += 1;
        errors += bg.label_errors;
        refs += bg.reference_labels;
        utts += batch.len();
        total_ll += bg.log_likelihood;
    }
    if stats.skipped_batches * 10 > batches.len() {
        return Err(Error::Training(format!(
            "{} of {} batches had non-finite loss",
            stats.skipped_batches,
            batches.len()
        )));
    }
    stats.train_ler = if refs > 0 { errors as f64 / refs as f64 } else { 0.0 };
    stats.mean_log_likelihood = if utts > 0 { total_ll / utts as f64 } else { 0.0 };
    Ok(stats)
}

/// Corpus label error rate of greedy decoding, and mean log-likelihood over
/// the utterances whose targets are realizable.
pub fn evaluate(stack: &BlstmStack, utts: &[Utterance]) -> Result<(f64, f64)> {
    let results = par::map(utts, |u| -> Result<(usize, usize, Option<f64>)> {
        let pass = stack.forward(u.features.frames())?;
        let hyp = collapse_path(&best_path(pass.log_posteriors.view()));
        let reference = u.labels.labels();
        let ll = forward_backward_log(pass.log_posteriors.view(), reference, u.id())
            .ok()
            .map(|t| t.log_likelihood);
        Ok((edit_distance(&hyp, reference), reference.len(), ll))
    });
    let (mut errors, mut refs, mut ll, mut n) = (0, 0, 0.0, 0);
    for r in results {
        let (e, l, like) = r?;
        errors += e;
        refs += l;
        if let Some(v) = like {
            ll += v;
            n += 1;
        }
    }
    if refs == 0 {
        return Err(Error::InvalidInput("evaluation set has no labels".into()));
    }
    Ok((errors as f64 / refs as f64, if n > 0 { ll / n as f64 } else { f64::NAN }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Constant,
    Decaying,
    Stopped,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Constant => "constant",
            Phase::Decaying => "decaying",
            Phase::Stopped => "stopped",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(Phase::Constant),
            "decaying" => Some(Phase::Decaying),
            "stopped" => Some(Phase::Stopped),
            _ => None,
        }
    }
}

/// Learning-rate schedule driven by validation LER drops, in absolute LER
/// units (0.005 is half a percentage point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewbobState {
    pub learning_rate: f64,
    pub phase: Phase,
    pub prev_ler: Option<f64>,
    pub halving_factor: f64,
    pub start_decay_threshold: f64,
    pub stop_threshold: f64,
    /// Decay may not start during the first `hold_epochs` epochs.
    pub hold_epochs: usize,
    /// Number of validation results seen so far.
    pub epochs: usize,
}

impl NewbobState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            phase: Phase::Constant,
            prev_ler: None,
            halving_factor: 0.5,
            start_decay_threshold: 0.005,
            stop_threshold: 0.001,
            hold_epochs: 0,
            epochs: 0,
        }
    }
}

impl Default for NewbobState {
    fn default() -> Self {
        Self::new(DEFAULT_LEARNING_RATE)
    }
}

/// Feeds one validation LER to the schedule. The rate is held until the
/// epoch's improvement drops below the start threshold, which switches to
/// the decaying phase; every later epoch halves the rate, until an
/// improvement below the stop threshold ends training.
pub fn newbob_step(state: &NewbobState, ler: f64) -> (NewbobState, bool) {
    let mut next = *state;
    next.epochs += 1;
    if state.phase == Phase::Stopped {
        return (next, true);
    }
    next.prev_ler = Some(ler);
    let Some(prev) = state.prev_ler else {
        return (next, false);
    };
    let improvement = prev - ler;
    match state.phase {
        Phase::Constant => {
            if improvement < state.start_decay_threshold && next.epochs > state.hold_epochs {
                next.phase = Phase::Decaying;
            }
            (next, false)
        }
        Phase::Decaying => {
            if improvement < state.stop_threshold {
                next.phase = Phase::Stopped;
                (next, true)
            } else {
                next.learning_rate *= state.halving_factor;
                (next, false)
            }
        }
        Phase::Stopped => unreachable!(),
    }
}

/// Training configuration as read from a TOML key-value file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layers: usize,
    pub cells: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub halving_factor: f64,
    pub start_decay_threshold: f64,
    pub stop_threshold: f64,
    pub hold_epochs: usize,
    pub seed: u64,
    pub features: Option<std::path::PathBuf>,
    pub labels: Option<std::path::PathBuf>,
    pub units: Option<std::path::PathBuf>,
    pub output_dir: Option<std::path::PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            cells: DEFAULT_CELLS,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip: DEFAULT_CLIP,
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: 30,
            validation_fraction: 0.05,
            halving_factor: 0.5,
            start_decay_threshold: 0.005,
            stop_threshold: 0.001,
            hold_epochs: 0,
            seed: 1,
            features: None,
            labels: None,
            units: None,
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("training config", 0, e.to_string()))
    }

    pub fn newbob(&self) -> NewbobState {
        NewbobState {
            halving_factor: self.halving_factor,
            start_decay_threshold: self.start_decay_threshold,
            stop_threshold: self.stop_threshold,
            hold_epochs: self.hold_epochs,
            ..NewbobState::new(self.learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.layers == 0 || self.cells == 0 {
            return bad("layers and cells must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.clip > 0.0) || self.batch_size == 0 {
            return bad("learning_rate, clip and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        if !(self.halving_factor > 0.0 && self.halving_factor < 1.0) {
            return bad(format!("halving_factor {} outside (0, 1)", self.halving_factor));
        }
        Ok(())
    }
}

/// Seeded split into (train, validation); both keep corpus order. At least
/// one utterance is held out when the fraction is positive and the corpus has
/// two or more.
pub fn split_validation(utts: Vec<Utterance>, fraction: f64, seed: u64) -> (Vec<Utterance>, Vec<Utterance>) {
    let n = utts.len();
    let held = if fraction > 0.0 && n >= 2 {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..held] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (u, v) in utts.into_iter().zip(is_val) {
        if v {
            val.push(u);
        } else {
            train.push(u);
        }
    }
    (train, val)
}

/// One line of the per-epoch report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_ler: f64,
    pub val_ler: f64,
    pub log_likelihood: f64,
}

impl std::fmt::Display for EpochReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch {} lr {:e} train_ler {:.6} val_ler {:.6} loglik {:.6}",
            self.epoch, self.learning_rate, self.train_ler, self.val_ler, self.log_likelihood
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: BlstmStack,
    pub schedule: NewbobState,
    pub reports: Vec<EpochReport>,
}

/// Trains from a seeded initialization, or from the checkpoint in
/// `checkpoint_dir` when `resume` is set and one exists. A checkpoint (model
/// plus schedule state) is written after every epoch.
pub fn run_training(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    train: &[Utterance],
    validation: &[Utterance],
    checkpoint_dir: Option<&Path>,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let batches = make_batches(train, cfg.batch_size)?;
    let resumed = match checkpoint_dir {
        Some(dir) if resume && io::checkpoint_exists(dir) => Some(io::read_checkpoint(dir)?),
        _ => None,
    };
    let (mut model, mut schedule) = match resumed {
        Some((m, s)) => {
            if m.spec() != *spec {
                return Err(Error::DimensionMismatch("checkpoint model does not match the configured shape".into()));
            }
            log::info!("resuming after epoch {}", s.epochs);
            (m, s)
        }
        None => (init_params(spec, cfg.seed)?, cfg.newbob()),
    };
    let eval_set = if validation.is_empty() { train } else { validation };
    let mut reports = Vec::new();
    while schedule.epochs < cfg.max_epochs && schedule.phase != Phase::Stopped {
        let lr = schedule.learning_rate;
        let stats = train_epoch(&mut model, &batches, lr, cfg.clip)?;
        let (val_ler, _) = evaluate(&model, eval_set)?;
        let (next, _) = newbob_step(&schedule, val_ler);
        schedule = next;
        let report = EpochReport {
            epoch: schedule.epochs,
            learning_rate: lr,
            train_ler: stats.train_ler,
            val_ler,
            log_likelihood: stats.mean_log_likelihood,
        };
        if let Some(dir) = checkpoint_dir {
            io::write_checkpoint(dir, &model, &schedule)?;
        }
        on_epoch(&report);
        reports.push(report);
    }
    Ok(TrainingOutcome {
        model,
        schedule,
        reports,
    })
}
