//! Connectionist temporal classification: the forward-backward trellis over
//! blank-augmented label sequences, its gradient, best-path collapsing and
//! label priors.
//!
//! Everything is computed in the log domain. `log_alpha[t][u]` includes the
//! emission at frame `t`; `log_beta[t][u]` covers frames `t+1..T` only, so
//! `logsumexp_u(log_alpha[t][u] + log_beta[t][u])` is the utterance
//! log-likelihood at every `t`.

use ndarray::{Array2, ArrayView2};

use crate::edit;
use crate::math::{log_add, log_sum_exp};
use crate::nnet::PosteriorMatrix;
use crate::{Error, Result, BLANK};

/// Pseudo-count given to labels that never occur when estimating priors.
pub const PRIOR_FLOOR_COUNT: f64 = 0.5;

/// Target labels of one utterance, each in `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub utterance_id: String,
    labels: Vec<u32>,
}

impl LabelSequence {
    pub fn new(utterance_id: impl Into<String>, labels: Vec<u32>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if labels.is_empty() {
            return Err(Error::InvalidInput(format!("utterance {utterance_id} has no labels")));
        }
        if labels.contains(&BLANK) {
            return Err(Error::InvalidInput(format!(
                "utterance {utterance_id}: label sequence contains the blank index"
            )));
        }
        Ok(Self { utterance_id, labels })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Blank-interleaved targets `∅ z_1 ∅ z_2 … z_U ∅`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedLabels(Vec<u32>);

impl AugmentedLabels {
    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether the trellis may jump from `u-2` to `u`.
    fn can_skip(&self, u: usize) -> bool {
        u >= 2 && self.0[u] != BLANK && self.0[u] != self.0[u - 2]
    }
}

pub fn augment(labels: &[u32]) -> AugmentedLabels {
    let mut out = Vec::with_capacity(2 * labels.len() + 1);
    out.push(BLANK);
    for &l in labels {
        out.push(l);
        out.push(BLANK);
    }
    AugmentedLabels(out)
}

/// Fewest frames that can realize `labels`: one per label plus one blank
/// between each pair of equal neighbours.
pub fn min_frames(labels: &[u32]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone)]
pub struct CtcTrellis {
    pub augmented: AugmentedLabels,
    /// `[T × (2U+1)]`, emission at `t` included.
    pub log_alpha: Array2<f64>,
    /// `[T × (2U+1)]`, emission at `t` excluded.
    pub log_beta: Array2<f64>,
    /// `ln Pr(z | X)`
    pub log_likelihood: f64,
}

impl CtcTrellis {
    /// `ln Σ_u α_t(u) β_t(u)` at frame `t`; equal to the log-likelihood for
    /// every `t` up to rounding.
    pub fn log_likelihood_at(&self, t: usize) -> f64 {
        log_sum_exp(
            self.log_alpha
                .row(t)
                .iter()
                .zip(self.log_beta.row(t).iter())
                .map(|(a, b)| a + b),
        )
    }

    pub fn num_frames(&self) -> usize {
        self.log_alpha.nrows()
    }
}

/// Forward-backward over log-posteriors `[T × (K+1)]`.
pub fn forward_backward_log(
    log_probs: ArrayView2<'_, f64>,
    labels: &[u32],
    utterance_id: &str,
) -> Result<CtcTrellis> {
    let (frames, num_labels) = log_probs.dim();
    if labels.is_empty() || labels.contains(&BLANK) {
        return Err(Error::InvalidInput(format!(
            "utterance {utterance_id}: labels must be non-empty and exclude the blank"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_labels) {
        return Err(Error::DimensionMismatch(format!(
            "utterance {utterance_id}: label {bad} outside posterior width {num_labels}"
        )));
    }
    let required = min_frames(labels);
    if frames < required {
        return Err(Error::Unrealizable {
            utterance: utterance_id.to_string(),
            labels: labels.len(),
            required,
            frames,
        });
    }
    let aug = augment(labels);
    let l = aug.as_slice();
    let width = l.len();
    let emit = |t: usize, u: usize| log_probs[[t, l[u] as usize]];

    let mut alpha = Array2::from_elem((frames, width), f64::NEG_INFINITY);
    alpha[[0, 0]] = emit(0, 0);
    alpha[[0, 1]] = emit(0, 1);
    for t in 1..frames {
        for u in 0..width {
            let mut acc = alpha[[t - 1, u]];
            if u >= 1 {
                acc = log_add(acc, alpha[[t - 1, u - 1]]);
            }
            if aug.can_skip(u) {
                acc = log_add(acc, alpha[[t - 1, u - 2]]);
            }
            if acc != f64::NEG_INFINITY {
                alpha[[t, u]] = acc + emit(t, u);
            }
        }
    }

    let mut beta = Array2::from_elem((frames, width), f64::NEG_INFINITY);
    beta[[frames - 1, width - 1]] = 0.0;
    beta[[frames - 1, width - 2]] = 0.0;
    for t in (0..frames - 1).rev() {
        for u in 0..width {
            let mut acc = beta[[t + 1, u]] + emit(t + 1, u);
            if u + 1 < width {
                acc = log_add(acc, beta[[t + 1, u + 1]] + emit(t + 1, u + 1));
            }
            if u + 2 < width && aug.can_skip(u + 2) {
                acc = log_add(acc, beta[[t + 1, u + 2]] + emit(t + 1, u + 2));
            }
            beta[[t, u]] = acc;
        }
    }

    let log_likelihood = log_add(alpha[[frames - 1, width - 1]], alpha[[frames - 1, width - 2]]);
    if !log_likelihood.is_finite() {
        return Err(Error::NonFinite {
            context: format!("CTC log-likelihood of utterance {utterance_id}"),
        });
    }
    Ok(CtcTrellis {
        augmented: aug,
        log_alpha: alpha,
        log_beta: beta,
        log_likelihood,
    })
}

pub fn ctc_forward_backward(y: &PosteriorMatrix, z: &LabelSequence) -> Result<CtcTrellis> {
    forward_backward_log(y.log_probs(), z.labels(), &z.utterance_id)
}

/// Derivatives of `ln Pr(z|X)`.
#[derive(Debug, Clone)]
pub struct CtcGradient {
    /// `∂ ln Pr / ∂ y_t^k`
    pub posteriors: Array2<f64>,
    /// `∂ ln Pr / ∂ a_t^k` for the pre-softmax activations `a`; this is the
    /// output error handed to the network, oriented for ascent.
    pub logits: Array2<f64>,
}

pub fn ctc_gradient(log_probs: ArrayView2<'_, f64>, trellis: &CtcTrellis) -> Result<CtcGradient> {
    let (frames, num_labels) = log_probs.dim();
    if trellis.num_frames() != frames {
        return Err(Error::DimensionMismatch(format!(
            "trellis has {} frames, posteriors have {frames}",
            trellis.num_frames()
        )));
    }
    let l = trellis.augmented.as_slice();
    let mut posteriors = Array2::zeros((frames, num_labels));
    let mut logits = Array2::zeros((frames, num_labels));
    let mut occupancy = vec![f64::NEG_INFINITY; num_labels];
    for t in 0..frames {
        occupancy.fill(f64::NEG_INFINITY);
        for (u, &k) in l.iter().enumerate() {
            let v = trellis.log_alpha[[t, u]] + trellis.log_beta[[t, u]];
            occupancy[k as usize] = log_add(occupancy[k as usize], v);
        }
        for k in 0..num_labels {
            let ly = log_probs[[t, k]];
            let gamma = (occupancy[k] - trellis.log_likelihood).exp();
            if occupancy[k] != f64::NEG_INFINITY {
                posteriors[[t, k]] = (occupancy[k] - trellis.log_likelihood - ly).exp();
            }
            logits[[t, k]] = gamma - ly.exp();
        }
    }
    Ok(CtcGradient { posteriors, logits })
}

/// Merges runs of identical labels, then drops blanks.
pub fn collapse_path(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Frame-wise argmax (lowest index on ties).
pub fn best_path(log_probs: ArrayView2<'_, f64>) -> Vec<u32> {
    log_probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

pub fn greedy_collapse(y: &PosteriorMatrix) -> Vec<u32> {
    collapse_path(&best_path(y.log_probs()))
}

/// Edit distance normalized by the reference length.
pub fn label_error_rate(hyp: &[u32], reference: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("label error rate needs a non-empty reference".into()));
    }
    Ok(edit::edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Log prior of every CTC label, blank included.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPriors {
    pub log_prior: Vec<f64>,
}

impl LabelPriors {
    pub fn uniform(num_labels: usize) -> Self {
        Self {
            log_prior: vec![-(num_labels as f64).ln(); num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.log_prior.len()
    }
}

/// Counts labels over the blank-augmented training targets. Each utterance
/// contributes `U + 1` blanks. Labels that never occur get a pseudo-count of
/// 0.5 before normalization.
pub fn estimate_priors<'a, I>(corpus: I, num_labels: usize) -> Result<LabelPriors>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    let mut counts = vec![0.0f64; num_labels];
    let mut utterances = 0usize;
    for labels in corpus {
        utterances += 1;
        for &k in augment(labels).as_slice() {
            let slot = counts.get_mut(k as usize).ok_or_else(|| {
                Error::DimensionMismatch(format!("label {k} outside inventory of {num_labels}"))
            })?;
            *slot += 1.0;
        }
    }
    if utterances == 0 {
        return Err(Error::InvalidInput("cannot estimate priors from an empty corpus".into()));
    }
    for c in counts.iter_mut().filter(|c| **c == 0.0) {
        *c = PRIOR_FLOOR_COUNT;
    }
    let total: f64 = counts.iter().sum();
    Ok(LabelPriors {
        log_prior: counts.iter().map(|c| (c / total).ln()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_log_posteriors(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Array2<f64> {
        let mut m = Array2::from_shape_fn((t, k), |_| rng.random_range(0.05f64..1.0));
        for mut row in m.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| (v / s).ln());
        }
        m
    }

    /// Sums `Π y` over every frame-level path that collapses to `labels`.
    fn brute_force_likelihood(log_probs: ArrayView2<'_, f64>, labels: &[u32]) -> f64 {
        let (t, k) = log_probs.dim();
        let mut total = 0.0;
        let mut path = vec![0u32; t];
        for code in 0..k.pow(t as u32) {
            let mut c = code;
            for p in path.iter_mut() {
                *p = (c % k) as u32;
                c /= k;
            }
            if collapse_path(&path) == labels {
                total += path.iter().enumerate().map(|(i, &p)| log_probs[[i, p as usize]]).sum::<f64>().exp();
            }
        }
        total
    }

    #[test]
    fn augment_interleaves_blanks() {
        assert_eq!(augment(&[3, 7]).as_slice(), &[0, 3, 0, 7, 0]);
        assert_eq!(augment(&[2]).as_slice(), &[0, 2, 0]);
        assert_eq!(augment(&[1, 1]).as_slice(), &[0, 1, 0, 1, 0]);
    }

    #[test]
    fn label_sequence_rejects_blank_and_empty() {
        assert!(LabelSequence::new("u", vec![]).is_err());
        assert!(LabelSequence::new("u", vec![1, 0]).is_err());
        assert_eq!(LabelSequence::new("u", vec![1, 2]).unwrap().len(), 2);
    }

    #[test]
    fn single_frame_likelihood_is_label_posterior() {
        let probs = ndarray::array![[0.3, 0.6, 0.1]];
        let y = PosteriorMatrix::from_probs("u", probs).unwrap();
        let z = LabelSequence::new("u", vec![1]).unwrap();
        let tr = ctc_forward_backward(&y, &z).unwrap();
        assert!((tr.log_likelihood - 0.6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn three_frame_two_label_case_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lp = random_log_posteriors(&mut rng, 3, 3);
        let tr = forward_backward_log(lp.view(), &[1, 2], "u").unwrap();
        let brute = brute_force_likelihood(lp.view(), &[1, 2]);
        assert!((tr.log_likelihood.exp() - brute).abs() < 1e-12);
    }

    #[test]
    fn example_paths_collapse_to_abc() {
        // A=1, B=2, C=3, ∅=0
        assert_eq!(collapse_path(&[1, 1, 0, 0, 2, 3, 0]), vec![1, 2, 3]);
        assert_eq!(collapse_path(&[0, 1, 1, 2, 0, 3, 3]), vec![1, 2, 3]);
        // Both paths are terms of the trellis sum: a one-hot posterior for
        // each path yields likelihood exactly 1.
        for path in [[1u32, 1, 0, 0, 2, 3, 0], [0, 1, 1, 2, 0, 3, 3]] {
            let mut lp = Array2::from_elem((7, 4), f64::NEG_INFINITY);
            for (t, &p) in path.iter().enumerate() {
                lp[[t, p as usize]] = 0.0;
            }
            let tr = forward_backward_log(lp.view(), &[1, 2, 3], "u").unwrap();
            assert!(tr.log_likelihood.abs() < 1e-15);
        }
    }

    #[test]
    fn unrealizable_targets_are_signalled() {
        let lp = Array2::from_elem((2, 3), (1.0f64 / 3.0).ln());
        assert!(matches!(
            forward_backward_log(lp.view(), &[1, 1], "u"),
            Err(Error::Unrealizable { required: 3, .. })
        ));
        assert!(matches!(
            forward_backward_log(lp.view(), &[1, 2, 1], "u"),
            Err(Error::Unrealizable { .. })
        ));
        assert!(forward_backward_log(lp.view(), &[1, 2], "u").is_ok());
        assert_eq!(min_frames(&[1, 1, 2, 2, 2]), 8);
    }

    #[test]
    fn likelihood_is_constant_over_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lp = random_log_posteriors(&mut rng, 30, 5);
        let tr = forward_backward_log(lp.view(), &[1, 3, 3, 2, 4], "u").unwrap();
        for t in 0..30 {
            assert!((tr.log_likelihood_at(t) - tr.log_likelihood).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_gradient_weighted_sum_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp = random_log_posteriors(&mut rng, 12, 4);
        let tr = forward_backward_log(lp.view(), &[2, 1, 2], "u").unwrap();
        let g = ctc_gradient(lp.view(), &tr).unwrap();
        for t in 0..12 {
            let s: f64 = (0..4).map(|k| lp[[t, k]].exp() * g.posteriors[[t, k]]).sum();
            assert!((s - 1.0).abs() < 1e-10);
            let logit_sum: f64 = g.logits.row(t).sum();
            assert!(logit_sum.abs() < 1e-10);
        }
        // Label 3 never appears in the augmented sequence.
        assert!(g.posteriors.column(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn posterior_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lp = random_log_posteriors(&mut rng, 6, 3);
        let y = lp.mapv(f64::exp);
        let labels = [1, 2];
        let tr = forward_backward_log(lp.view(), &labels, "u").unwrap();
        let g = ctc_gradient(lp.view(), &tr).unwrap();
        let eps = 1e-6;
        for t in 0..6 {
            for k in 0..3 {
                let mut up = y.clone();
                up[[t, k]] += eps;
                let mut down = y.clone();
                down[[t, k]] -= eps;
                let f = |m: &Array2<f64>| forward_backward_log(m.mapv(f64::ln).view(), &labels, "u").unwrap().log_likelihood;
                let numeric = (f(&up) - f(&down)) / (2.0 * eps);
                let a = g.posteriors[[t, k]];
                assert!((a - numeric).abs() / a.abs().max(1e-6) < 1e-4, "t={t} k={k}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn greedy_collapse_cases() {
        let one_hot = |path: &[u32]| {
            let mut lp = Array2::from_elem((path.len(), 4), -5.0);
            for (t, &p) in path.iter().enumerate() {
                lp[[t, p as usize]] = -0.01;
            }
            PosteriorMatrix::from_log("u", lp)
        };
        assert_eq!(greedy_collapse(&one_hot(&[1, 1, 0, 0, 2, 3, 0])), vec![1, 2, 3]);
        assert!(greedy_collapse(&one_hot(&[0, 0, 0])).is_empty());
        assert_eq!(greedy_collapse(&one_hot(&[1, 0, 1])), vec![1, 1]);
    }

    #[test]
    fn label_error_rate_cases() {
        assert_eq!(label_error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(label_error_rate(&[], &[1, 2, 3]).unwrap(), 1.0);
        // a b c vs a x c d
        assert_eq!(label_error_rate(&[1, 2, 3], &[1, 9, 3, 4]).unwrap(), 0.5);
        assert!(label_error_rate(&[1], &[]).is_err());
    }

    #[test]
    fn priors_from_single_utterance() {
        let p = estimate_priors([&[1u32, 2][..]], 3).unwrap();
        let probs: Vec<f64> = p.log_prior.iter().map(|v| v.exp()).collect();
        assert!((probs[0] - 0.6).abs() < 1e-15);
        assert!((probs[1] - 0.2).abs() < 1e-15);
        assert!((probs[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn priors_of_repeated_single_label_corpus() {
        let corpus = vec![vec![1u32]; 5];
        let p = estimate_priors(corpus.iter().map(|v| v.as_slice()), 2).unwrap();
        assert!((p.log_prior[0].exp() - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.log_prior[1].exp() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_labels_are_floored() {
        let p = estimate_priors([&[1u32][..]], 4).unwrap();
        assert!(p.log_prior.iter().all(|v| v.is_finite()));
        let total: f64 = p.log_prior.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // counts {2, 1, 0.5, 0.5}
        assert!((p.log_prior[3].exp() - 0.125).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn trellis_matches_enumeration(seed in any::<u64>(), t in 1usize..=6, k in 1usize..=3, u in 1usize..=3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let labels: Vec<u32> = (0..u).map(|_| rng.random_range(1..=k as u32)).collect();
                prop_assume!(min_frames(&labels) <= t);
                let lp = random_log_posteriors(&mut rng, t, k + 1);
                let tr = forward_backward_log(lp.view(), &labels, "u").unwrap();
                let brute = brute_force_likelihood(lp.view(), &labels);
                prop_assert!((tr.log_likelihood.exp() - brute).abs() < 1e-10);
            }

            #[test]
            fn collapse_is_idempotent_on_label_sequences(path in proptest::collection::vec(0u32..4, 0..12)) {
                let once = collapse_path(&path);
                prop_assert!(!once.contains(&BLANK));
                // A collapsed sequence with blanks re-inserted collapses to itself.
                let spaced: Vec<u32> = once.iter().flat_map(|&l| [l, BLANK]).collect();
                prop_assert_eq!(collapse_path(&spaced), once);
            }
        }
    }
}
