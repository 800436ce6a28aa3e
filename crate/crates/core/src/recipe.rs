//! Toy recipes: a seeded synthetic corpus in phoneme or character form, and
//! the five pipeline stages (prepare, train, build-graph, decode, score)
//! operating on a work directory.
//!
//! Work directory layout:
//!
//! ```text
//! data/    raw inputs: {train,test}.ark, {train,test}.txt, utt2spk,
//!          units.txt, lexicon.txt, lm.arpa
//! feats/   normalized features with deltas: {train,test}.ark
//! labels/  unit label archives: {train,test}.txt
//! priors.txt
//! checkpoint/, final.mdl, train.log
//! graph/   T.fst L.fst G.fst S.fst S.bin S_nolm.bin words.txt units.txt
//! decode/  hyp.txt hyp_nolm.txt wer.txt wer_nolm.txt
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::ctc::{estimate_priors, LabelSequence};
use crate::decoder::{decode_corpus, word_error_rate, AcousticScorer, DecodeConfig, WerReport};
use crate::features::{add_deltas, FeatureMatrix};
use crate::graphs::{
    build_grammar_fst, build_lexicon_fst_phoneme, build_lexicon_fst_spelling, build_token_fst,
    compile_lexicon_only_graph, compile_search_graph, compile_unoptimized_graph, word_symbols, ArpaLm, Lexicon,
    UnitTable, SENTENCE_END, SENTENCE_START, SPACE_SYMBOL,
};
use crate::io::{self, read_text, source_name, write_file};
use crate::nnet::ModelSpec;
use crate::trainer::{run_training, split_validation, EpochReport, TrainConfig, TrainingOutcome, Utterance};
use crate::wfst::{SymbolTable, Wfst};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Phoneme,
    Character,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phoneme" => Ok(Mode::Phoneme),
            "character" => Ok(Mode::Character),
            _ => Err(Error::InvalidInput(format!("mode must be phoneme or character, got {s}"))),
        }
    }
}

pub const TOY_LAYERS: usize = 2;
pub const TOY_CELLS: usize = 32;
pub const TOY_LEARNING_RATE: f64 = 3e-2;
pub const TOY_HOLD_EPOCHS: usize = 10;

/// Every knob of a recipe run, read from TOML. Unset keys take the toy
/// defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecipeConfig {
    pub mode: Mode,
    pub seed: u64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub speakers: usize,
    pub raw_dim: usize,
    pub noise: f64,
    pub speaker_offset: f64,
    pub min_unit_frames: usize,
    pub max_unit_frames: usize,
    pub delta_order: usize,
    pub delta_window: usize,
    pub lm_discount: f64,
    pub layers: usize,
    pub cells: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip: f64,
    pub hold_epochs: usize,
    pub validation_fraction: f64,
    pub acoustic_scale: f64,
    pub beam: f64,
    pub max_active: usize,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Phoneme,
            seed: 7,
            train_utterances: 50,
            test_utterances: 10,
            speakers: 5,
            raw_dim: 8,
            noise: 0.5,
            speaker_offset: 1.0,
            min_unit_frames: 3,
            max_unit_frames: 5,
            delta_order: 2,
            delta_window: 2,
            lm_discount: 0.5,
            layers: TOY_LAYERS,
            cells: TOY_CELLS,
            learning_rate: TOY_LEARNING_RATE,
            batch_size: 1,
            max_epochs: 30,
            clip: 50.0,
            hold_epochs: TOY_HOLD_EPOCHS,
            validation_fraction: 0.05,
            acoustic_scale: crate::decoder::DEFAULT_ACOUSTIC_SCALE,
            beam: 16.0,
            max_active: 5000,
        }
    }
}

impl RecipeConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("recipe config", 0, e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            layers: self.layers,
            cells: self.cells,
            learning_rate: self.learning_rate,
            clip: self.clip,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            validation_fraction: self.validation_fraction,
            hold_epochs: self.hold_epochs,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            max_active: self.max_active,
        }
    }
}

const WORDS: [&str; 5] = ["a", "big", "dog", "licks", "cat"];
const PHONEMES: [(&str, &[&str]); 5] = [
    ("a", &["AH"]),
    ("big", &["B", "IY", "G"]),
    ("dog", &["D", "OW", "G"]),
    ("licks", &["L", "IY", "K", "S"]),
    ("cat", &["K", "AH", "T"]),
];

/// Unit inventory and lexicon of the toy language.
pub fn toy_language(mode: Mode) -> (UnitTable, Lexicon) {
    match mode {
        Mode::Phoneme => {
            let lex = Lexicon::new(
                PHONEMES
                    .iter()
                    .map(|(w, p)| crate::graphs::LexiconEntry::new(*w, p.iter().map(|s| s.to_string()).collect()))
                    .collect(),
                true,
            )
            .expect("static lexicon is valid");
            let units = ["AH", "B", "D", "G", "IY", "K", "L", "OW", "S", "T"];
            (UnitTable::from_units(units).expect("static units are valid"), lex)
        }
        Mode::Character => {
            let mut letters: Vec<String> = WORDS.iter().flat_map(|w| w.chars().map(String::from)).collect();
            letters.sort();
            letters.dedup();
            letters.push(SPACE_SYMBOL.to_string());
            (
                UnitTable::from_units(letters).expect("letters are valid units"),
                Lexicon::spelling(WORDS).expect("static words are valid"),
            )
        }
    }
}

/// `a [big] (dog|cat) [licks a [big] (dog|cat)]`.
fn sample_sentence(rng: &mut impl Rng) -> Vec<String> {
    let mut s = Vec::new();
    let noun_phrase = |s: &mut Vec<String>, rng: &mut dyn rand::RngCore| {
        s.push("a".to_string());
        if rng.random_bool(0.5) {
            s.push("big".to_string());
        }
        s.push(["dog", "cat"][rng.random_range(0..2)].to_string());
    };
    noun_phrase(&mut s, rng);
    if rng.random_bool(0.8) {
        s.push("licks".to_string());
        noun_phrase(&mut s, rng);
    }
    s
}

/// Unit symbols of a word sequence. The character form separates words
/// with the space unit.
pub fn transcript_units(words: &[String], lex: &Lexicon, mode: Mode) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let e = lex.get(w).ok_or_else(|| Error::Unknown {
            kind: "word",
            name: w.clone(),
            context: Some("transcript".into()),
        })?;
        if mode == Mode::Character && i > 0 {
            out.push(SPACE_SYMBOL.to_string());
        }
        out.extend(e.units.iter().cloned());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SyntheticUtterance {
    pub features: FeatureMatrix,
    pub words: Vec<String>,
    pub speaker: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub units: UnitTable,
    pub lexicon: Lexicon,
    pub train: Vec<SyntheticUtterance>,
    pub test: Vec<SyntheticUtterance>,
}

/// Each unit (and silence) has a random prototype vector; an utterance is
/// silence, the units of its sentence held for a random number of frames
/// each, short pauses between words, and trailing silence, plus a
/// per-speaker offset and frame noise.
pub fn generate_corpus(cfg: &RecipeConfig) -> Result<SyntheticCorpus> {
    if cfg.min_unit_frames == 0 || cfg.min_unit_frames > cfg.max_unit_frames || cfg.speakers == 0 {
        return Err(Error::InvalidInput("need 1 ≤ min_unit_frames ≤ max_unit_frames and speakers ≥ 1".into()));
    }
    let (units, lexicon) = toy_language(cfg.mode);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let prototypes = Array2::from_shape_fn((units.num_labels(), cfg.raw_dim), |_| 2.0 * unit_normal.sample(&mut rng));
    let offsets = Array2::from_shape_fn((cfg.speakers, cfg.raw_dim), |_| cfg.speaker_offset * unit_normal.sample(&mut rng));
    let make = |split: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<SyntheticUtterance>> {
        (0..n)
            .map(|i| {
                let spk = i % cfg.speakers;
                let words = sample_sentence(rng);
                let mut segments: Vec<(usize, usize)> = vec![(0, rng.random_range(2..=4))];
                for (j, w) in words.iter().enumerate() {
                    if j > 0 {
                        let pause = rng.random_range(0..=2);
                        if cfg.mode == Mode::Character {
                            let space = units.id(SPACE_SYMBOL).expect("space unit") as usize;
                            segments.push((space, pause.max(1) + 1));
                        } else if pause > 0 {
                            segments.push((0, pause));
                        }
                    }
                    for u in &lexicon.get(w).expect("sampled words are in the lexicon").units {
                        let k = units.id(u).expect("lexicon units are in the table") as usize;
                        segments.push((k, rng.random_range(cfg.min_unit_frames..=cfg.max_unit_frames)));
                    }
                }
                segments.push((0, rng.random_range(2..=4)));
                let total: usize = segments.iter().map(|s| s.1).sum();
                let mut frames = Array2::zeros((total, cfg.raw_dim));
                let mut t = 0;
                for (k, len) in segments {
                    for _ in 0..len {
                        for d in 0..cfg.raw_dim {
                            frames[[t, d]] = prototypes[[k, d]] + offsets[[spk, d]] + noise.sample(rng);
                        }
                        t += 1;
                    }
                }
                let id = format!("spk{spk}_{split}{i:03}");
                Ok(SyntheticUtterance {
                    features: FeatureMatrix::new(id, frames)?,
                    words,
                    speaker: format!("spk{spk}"),
                })
            })
            .collect()
    };
    let train = make("train", cfg.train_utterances, &mut rng)?;
    let test = make("test", cfg.test_utterances, &mut rng)?;
    Ok(SyntheticCorpus {
        units,
        lexicon,
        train,
        test,
    })
}

/// Bigram model with absolute discounting and backoff to maximum-likelihood
/// unigrams. `<s>` gets the conventional −99 unigram.
pub fn estimate_bigram_lm(sentences: &[Vec<String>], discount: f64) -> Result<ArpaLm> {
    if sentences.is_empty() {
        return Err(Error::InvalidInput("cannot estimate a language model from no sentences".into()));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidInput(format!("discount {discount} outside [0, 1)")));
    }
    let mut unigrams: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bigrams: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for s in sentences {
        let seq: Vec<&str> = std::iter::once(SENTENCE_START)
            .chain(s.iter().map(String::as_str))
            .chain(std::iter::once(SENTENCE_END))
            .collect();
        for w in &seq[1..] {
            *unigrams.entry(w).or_default() += 1.0;
        }
        for p in seq.windows(2) {
            *bigrams.entry(p[0]).or_default().entry(p[1]).or_default() += 1.0;
        }
    }
    let total: f64 = unigrams.values().sum();
    let p_uni = |w: &str| unigrams.get(w).map_or(0.0, |c| c / total);
    let mut entries: Vec<(Vec<String>, f64, Option<f64>)> = Vec::new();
    let mut backoffs: HashMap<&str, f64> = HashMap::new();
    for (&v, next) in &bigrams {
        let count: f64 = next.values().sum();
        let left = discount * next.len() as f64 / count;
        let covered: f64 = next.keys().map(|w| p_uni(w)).sum();
        let bow = if 1.0 - covered > 1e-12 && left > 0.0 { left / (1.0 - covered) } else { 1.0 };
        backoffs.insert(v, bow.log10());
        for (&w, &c) in next {
            entries.push((vec![v.to_string(), w.to_string()], ((c - discount) / count).log10(), None));
        }
    }
    entries.push((vec![SENTENCE_START.to_string()], -99.0, backoffs.get(SENTENCE_START).copied()));
    for (&w, &c) in &unigrams {
        let bow = if w == SENTENCE_END { None } else { backoffs.get(w).copied() };
        entries.push((vec![w.to_string()], (c / total).log10(), bow));
    }
    ArpaLm::from_entries(entries)
}

/// Paths of the standard work-directory layout.
#[derive(Debug, Clone)]
pub struct WorkDir {
    pub root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn feats(&self, split: &str) -> PathBuf {
        self.root.join("feats").join(format!("{split}.ark"))
    }

    pub fn labels(&self, split: &str) -> PathBuf {
        self.root.join("labels").join(format!("{split}.txt"))
    }

    pub fn priors(&self) -> PathBuf {
        self.root.join("priors.txt")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("final.mdl")
    }

    pub fn graph(&self, name: &str) -> PathBuf {
        self.root.join("graph").join(name)
    }

    pub fn decode(&self, name: &str) -> PathBuf {
        self.root.join("decode").join(name)
    }
}

/// Writes a synthetic corpus as raw data files under `dir`.
pub fn write_synthetic_data(dir: &Path, corpus: &SyntheticCorpus, cfg: &RecipeConfig) -> Result<()> {
    let mut spk = BTreeMap::new();
    for (split, utts) in [("train", &corpus.train), ("test", &corpus.test)] {
        let feats: Vec<FeatureMatrix> = utts.iter().map(|u| u.features.clone()).collect();
        write_file(&dir.join(format!("{split}.ark")), io::write_feature_archive(&feats))?;
        let text: BTreeMap<String, Vec<String>> =
            utts.iter().map(|u| (u.features.utterance_id.clone(), u.words.clone())).collect();
        write_file(&dir.join(format!("{split}.txt")), io::write_transcripts(&text))?;
        for u in utts {
            spk.insert(u.features.utterance_id.clone(), u.speaker.clone());
        }
    }
    write_file(&dir.join("utt2spk"), io::write_speaker_map(&spk))?;
    write_file(&dir.join("units.txt"), io::write_unit_table(&corpus.units))?;
    write_file(&dir.join("lexicon.txt"), io::write_lexicon(&corpus.lexicon))?;
    let sentences: Vec<Vec<String>> = corpus.train.iter().map(|u| u.words.clone()).collect();
    write_file(&dir.join("lm.arpa"), io::write_arpa(&estimate_bigram_lm(&sentences, cfg.lm_discount)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub feature_dim: usize,
    pub num_labels: usize,
}

fn read_transcripts(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    io::parse_transcripts(&read_text(path)?, &source_name(path))
}

/// Generates the synthetic corpus into `data/` unless raw data already
/// exists there (its unit table then decides the mode), then writes normalized features with deltas, unit label
/// archives and label priors.
pub fn prepare(work: &WorkDir, cfg: &RecipeConfig) -> Result<PrepareSummary> {
    if !work.data("units.txt").is_file() {
        log::info!("generating the synthetic {:?} corpus", cfg.mode);
        write_synthetic_data(&work.root.join("data"), &generate_corpus(cfg)?, cfg)?;
    }
    let units = read_units(work)?;
    let mode = infer_mode(&units);
    let lexicon = io::parse_lexicon(&read_text(&work.data("lexicon.txt"))?, "lexicon.txt")?;
    let mut counts = Vec::new();
    let mut dim = 0;
    let mut train_labels = Vec::new();
    for split in ["train", "test"] {
        let text = read_transcripts(&work.data(&format!("{split}.txt")))?;
        let mut labels = Vec::new();
        let mut problems = Vec::new();
        for (id, words) in &text {
            match transcript_units(words, &lexicon, mode)
                .and_then(|u| units.encode(&u, id))
                .and_then(|ids| LabelSequence::new(id.clone(), ids))
            {
                Ok(l) => labels.push(l),
                Err(e) => problems.push(format!("{id}: {e}")),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Corpus(problems));
        }
        write_file(&work.labels(split), io::write_label_archive(&labels, &units)?)?;
        let corpus = io::load_corpus(&io::CorpusPaths {
            features: work.data(&format!("{split}.ark")),
            labels: Some(work.labels(split)),
            units: work.data("units.txt"),
            speakers: Some(work.data("utt2spk")).filter(|p| p.is_file()),
        })
        .or_else(|e| match e {
            // The speaker map covers both splits.
            Error::Corpus(p) if p.iter().all(|m| m.starts_with("speaker map names unknown")) => {
                restricted_corpus(work, split)
            }
            e => Err(e),
        })?;
        let normalized = corpus.normalized_features()?;
        let feats = par::map(&normalized, |f| add_deltas(f, cfg.delta_order, cfg.delta_window));
        let feats = feats.into_iter().collect::<Result<Vec<_>>>()?;
        dim = feats.first().map_or(0, FeatureMatrix::dim);
        write_file(&work.feats(split), io::write_feature_archive(&feats))?;
        counts.push(feats.len());
        if split == "train" {
            train_labels = labels;
        }
    }
    let priors = estimate_priors(train_labels.iter().map(LabelSequence::labels), units.num_labels())?;
    write_file(&work.priors(), io::write_priors(&priors, &units)?)?;
    Ok(PrepareSummary {
        train_utterances: counts[0],
        test_utterances: counts[1],
        feature_dim: dim,
        num_labels: units.num_labels(),
    })
}

/// Loads one split with the speaker map filtered to its utterances.
fn restricted_corpus(work: &WorkDir, split: &str) -> Result<io::Corpus> {
    let feats = work.data(&format!("{split}.ark"));
    let ids: std::collections::HashSet<String> =
        io::read_features(&feats)?.into_iter().map(|f| f.utterance_id).collect();
    let spk = work.data("utt2spk");
    let mut map = io::parse_speaker_map(&read_text(&spk)?, &source_name(&spk))?;
    map.retain(|u, _| ids.contains(u));
    let tmp = work.root.join(format!("data/.utt2spk.{split}"));
    write_file(&tmp, io::write_speaker_map(&map))?;
    let corpus = io::load_corpus(&io::CorpusPaths {
        features: feats,
        labels: Some(work.labels(split)),
        units: work.data("units.txt"),
        speakers: Some(tmp.clone()),
    });
    let _ = std::fs::remove_file(&tmp);
    corpus
}

/// Labeled utterances of one split from `feats/` and `labels/`.
pub fn load_split(work: &WorkDir, split: &str, units: &UnitTable) -> Result<Vec<Utterance>> {
    let feats = io::read_features(&work.feats(split))?;
    let labels = io::parse_label_archive(&read_text(&work.labels(split))?, &source_name(&work.labels(split)), units)?;
    let by_id: HashMap<String, LabelSequence> = labels.into_iter().map(|l| (l.utterance_id.clone(), l)).collect();
    feats
        .into_iter()
        .filter_map(|f| by_id.get(&f.utterance_id).cloned().map(|l| Utterance::new(f, l)))
        .collect()
}

/// Character inventories are the ones containing the space unit.
pub fn infer_mode(units: &UnitTable) -> Mode {
    if units.id(SPACE_SYMBOL).is_some() {
        Mode::Character
    } else {
        Mode::Phoneme
    }
}

pub fn read_units(work: &WorkDir) -> Result<UnitTable> {
    let p = work.data("units.txt");
    io::parse_unit_table(&read_text(&p)?, &source_name(&p))
}

/// Trains on `feats/train.ark` with a seeded 95/5 split, checkpointing after
/// every epoch, and writes `final.mdl` and `train.log`. A resumed run keeps
/// the log lines of the epochs already checkpointed.
pub fn train(
    work: &WorkDir,
    cfg: &TrainConfig,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainingOutcome> {
    let units = read_units(work)?;
    let utts = load_split(work, "train", &units)?;
    let input_dim = utts
        .first()
        .map(|u| u.features.dim())
        .ok_or_else(|| Error::InvalidInput("training set is empty".into()))?;
    let spec = ModelSpec::uniform(input_dim, cfg.layers, cfg.cells, units.num_labels());
    let (train, val) = split_validation(utts, cfg.validation_fraction, cfg.seed);
    let log_path = work.root.join("train.log");
    let mut log = String::new();
    if resume && io::checkpoint_exists(&work.checkpoint()) && log_path.is_file() {
        let done = io::read_checkpoint(&work.checkpoint())?.1.epochs;
        for line in read_text(&log_path)?.lines().take(done) {
            log.push_str(line);
            log.push('\n');
        }
    }
    let outcome = run_training(cfg, &spec, &train, &val, Some(&work.checkpoint()), resume, |r| {
        log.push_str(&format!("{r}\n"));
        on_epoch(r);
    })?;
    write_file(&work.model(), io::write_model(&outcome.model))?;
    write_file(&log_path, log)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FstSize {
    pub states: usize,
    pub arcs: usize,
}

impl FstSize {
    pub fn of(fst: &Wfst) -> Self {
        Self {
            states: fst.num_states(),
            arcs: fst.num_arcs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStats {
    pub token: FstSize,
    pub lexicon: FstSize,
    pub grammar: FstSize,
    pub search: FstSize,
    /// `T ∘ (L ∘ G)` without determinization and minimization.
    pub unoptimized: FstSize,
    pub lexicon_only: FstSize,
}

impl std::fmt::Display for GraphStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, s) in [
            ("T", self.token),
            ("L", self.lexicon),
            ("G", self.grammar),
            ("S", self.search),
            ("TLG_unoptimized", self.unoptimized),
            ("S_nolm", self.lexicon_only),
        ] {
            writeln!(f, "{name} states {} arcs {}", s.states, s.arcs)?;
        }
        Ok(())
    }
}

/// Builds T, L and G from `data/`, compiles S with and without the grammar,
/// and writes every machine under `graph/`.
pub fn build_graph(work: &WorkDir) -> Result<GraphStats> {
    let units = read_units(work)?;
    let mode = infer_mode(&units);
    let lexicon = io::parse_lexicon(&read_text(&work.data("lexicon.txt"))?, "lexicon.txt")?;
    let lm_path = work.data("lm.arpa");
    let lm = io::parse_arpa(&read_text(&lm_path)?, &source_name(&lm_path))?;
    let words = word_symbols(&lexicon, lm.vocabulary());
    let t = build_token_fst(&units);
    let l = match mode {
        Mode::Phoneme => build_lexicon_fst_phoneme(&lexicon, &units, &words)?,
        Mode::Character => build_lexicon_fst_spelling(&lexicon, &units, &words, SPACE_SYMBOL)?,
    };
    let g = build_grammar_fst(&lm, &words)?;
    let s = compile_search_graph(&t, &l, &g)?;
    let unopt = compile_unoptimized_graph(&t, &l, &g)?;
    let s_lex = compile_lexicon_only_graph(&t, &l)?;
    for (name, fst) in [("T.fst", &t), ("L.fst", &l), ("G.fst", &g), ("S.fst", &s)] {
        write_file(&work.graph(name), io::write_fst_text(fst)?)?;
    }
    write_file(&work.graph("S.bin"), io::write_fst_binary(&s))?;
    write_file(&work.graph("S_nolm.bin"), io::write_fst_binary(&s_lex))?;
    write_file(&work.graph("words.txt"), io::write_symbol_table(&words))?;
    write_file(&work.graph("units.txt"), io::write_symbol_table(t.output_symbols().unwrap_or(&units.unit_symbols())))?;
    Ok(GraphStats {
        token: FstSize::of(&t),
        lexicon: FstSize::of(&l),
        grammar: FstSize::of(&g),
        search: FstSize::of(&s),
        unoptimized: FstSize::of(&unopt),
        lexicon_only: FstSize::of(&s_lex),
    })
}

/// Inputs of a decoding run; [`DecodePaths::standard`] fills in the work
/// directory layout.
#[derive(Debug, Clone)]
pub struct DecodePaths {
    pub model: PathBuf,
    pub features: PathBuf,
    pub priors: PathBuf,
    pub units: PathBuf,
    pub graph: PathBuf,
    pub word_symbols: PathBuf,
    pub output: PathBuf,
}

impl DecodePaths {
    pub fn standard(work: &WorkDir, with_grammar: bool) -> Self {
        let (graph, hyp) = if with_grammar { ("S.bin", "hyp.txt") } else { ("S_nolm.bin", "hyp_nolm.txt") };
        Self {
            model: work.model(),
            features: work.feats("test"),
            priors: work.priors(),
            units: work.data("units.txt"),
            graph: work.graph(graph),
            word_symbols: work.graph("words.txt"),
            output: work.decode(hyp),
        }
    }
}

/// Decodes every utterance of the feature archive and writes `<utt> <word>…`
/// lines. Returns the hypotheses as words.
pub fn decode(paths: &DecodePaths, scale: f64, cfg: &DecodeConfig) -> Result<BTreeMap<String, Vec<String>>> {
    let model = io::parse_model(&io::read_bytes(&paths.model)?, &source_name(&paths.model))?;
    let units = io::parse_unit_table(&read_text(&paths.units)?, &source_name(&paths.units))?;
    let priors = io::parse_priors(&read_text(&paths.priors)?, &source_name(&paths.priors), &units)?;
    let graph: Wfst = io::parse_fst_binary(&io::read_bytes(&paths.graph)?, &source_name(&paths.graph))?;
    let words: SymbolTable = io::parse_symbol_table(&read_text(&paths.word_symbols)?, &source_name(&paths.word_symbols))?;
    if model.num_outputs() != units.num_labels() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} outputs but the unit table has {} labels",
            model.num_outputs(),
            units.num_labels()
        )));
    }
    let feats = io::read_features(&paths.features)?;
    let scorers = par::map(&feats, |f| -> Result<AcousticScorer> {
        let pass = model.forward(f.frames())?;
        AcousticScorer::new(&pass.posteriors(f.utterance_id.clone()), &priors, scale)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let hyps = decode_corpus(&graph, &scorers, cfg)?;
    let mut out = BTreeMap::new();
    for h in hyps {
        let ws = h
            .words
            .iter()
            .map(|&w| {
                words.symbol(w).map(str::to_string).ok_or_else(|| Error::Unknown {
                    kind: "word id",
                    name: w.to_string(),
                    context: Some(source_name(&paths.word_symbols)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(h.utterance_id, ws);
    }
    write_file(&paths.output, io::write_transcripts(&out))?;
    Ok(out)
}

/// Scores a hypothesis file against reference transcripts and writes the
/// report next to the hypotheses when `report` is given.
pub fn score(hyp: &Path, reference: &Path, report: Option<&Path>) -> Result<WerReport> {
    let r = word_error_rate(&read_transcripts(hyp)?, &read_transcripts(reference)?)?;
    if let Some(p) = report {
        write_file(p, io::format_wer_report(&r))?;
    }
    Ok(r)
}

/// Outcome of a full recipe run.
#[derive(Debug, Clone)]
pub struct RecipeSummary {
    pub prepare: PrepareSummary,
    pub epochs: Vec<EpochReport>,
    pub graph: GraphStats,
    pub wer: WerReport,
    pub wer_lexicon_only: WerReport,
    pub seconds: f64,
}

/// Every stage in order on a fresh or existing work directory.
pub fn run_all(work: &WorkDir, cfg: &RecipeConfig, mut on_epoch: impl FnMut(&EpochReport)) -> Result<RecipeSummary> {
    let start = Instant::now();
    let prepare = prepare(work, cfg)?;
    let trained = train(work, &cfg.train_config(), false, |r| on_epoch(r))?;
    let graph = build_graph(work)?;
    let mut reports = Vec::new();
    for with_grammar in [true, false] {
        let paths = DecodePaths::standard(work, with_grammar);
        decode(&paths, cfg.acoustic_scale, &cfg.decode_config())?;
        let name = if with_grammar { "wer.txt" } else { "wer_nolm.txt" };
        reports.push(score(&paths.output, &work.data("test.txt"), Some(&work.decode(name)))?);
    }
    let wer_lexicon_only = reports.pop().expect("two reports");
    let wer = reports.pop().expect("two reports");
    Ok(RecipeSummary {
        prepare,
        epochs: trained.reports,
        graph,
        wer,
        wer_lexicon_only,
        seconds: start.elapsed().as_secs_f64(),
    })
}
