use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_10;

use super::word_label;
use crate::wfst::{Arc, Semiring, StateId, SymbolTable, TropicalWeight, Wfst, WfstBuilder, EPSILON};
use crate::{Error, Result};

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";

/// Log10 values at or below this are treated as probability zero.
const LOG10_ZERO: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramEntry {
    pub log10_prob: f64,
    pub backoff: Option<f64>,
}

/// Backoff n-gram model. `ngrams[n - 1]` maps each n-gram (context words
/// followed by the predicted word) to its entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ArpaLm {
    ngrams: Vec<BTreeMap<Vec<String>, NgramEntry>>,
}

impl ArpaLm {
    /// Checks that every n-gram's context exists one order down.
    pub fn new(ngrams: Vec<BTreeMap<Vec<String>, NgramEntry>>) -> Result<Self> {
        if ngrams.first().is_none_or(BTreeMap::is_empty) {
            return Err(Error::InvalidInput("language model has no unigrams".into()));
        }
        for (i, order) in ngrams.iter().enumerate() {
            for (words, e) in order {
                if words.len() != i + 1 {
                    return Err(Error::InvalidInput(format!(
                        "{}-gram table holds {:?}",
                        i + 1,
                        words.join(" ")
                    )));
                }
                if e.log10_prob > 0.0 || !e.log10_prob.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "n-gram {:?} has log10 probability {}",
                        words.join(" "),
                        e.log10_prob
                    )));
                }
                if i > 0 && !ngrams[i - 1].contains_key(&words[..i]) {
                    return Err(Error::InvalidInput(format!(
                        "context of n-gram {:?} is missing",
                        words.join(" ")
                    )));
                }
            }
        }
        Ok(Self { ngrams })
    }

    /// Builds from `(words, log10 prob, backoff)` triples.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<S>, f64, Option<f64>)>,
        S: Into<String>,
    {
        let mut ngrams: Vec<BTreeMap<Vec<String>, NgramEntry>> = Vec::new();
        for (words, log10_prob, backoff) in entries {
            let words: Vec<String> = words.into_iter().map(Into::into).collect();
            let n = words.len();
            if n == 0 {
                return Err(Error::InvalidInput("empty n-gram".into()));
            }
            if ngrams.len() < n {
                ngrams.resize_with(n, BTreeMap::new);
            }
            ngrams[n - 1].insert(words, NgramEntry { log10_prob, backoff });
        }
        Self::new(ngrams)
    }

    pub fn order(&self) -> usize {
        self.ngrams.len()
    }

    pub fn ngrams(&self, n: usize) -> &BTreeMap<Vec<String>, NgramEntry> {
        &self.ngrams[n - 1]
    }

    pub fn get(&self, words: &[String]) -> Option<&NgramEntry> {
        self.ngrams.get(words.len().checked_sub(1)?)?.get(words)
    }

    /// Unigram vocabulary, sentence markers included.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.ngrams[0].keys().map(|k| k[0].as_str())
    }

    /// `log10 P(word | history)` by the backoff recursion.
    pub fn log10_prob(&self, history: &[String], word: &str) -> f64 {
        let h = &history[history.len().saturating_sub(self.order() - 1)..];
        let mut key = h.to_vec();
        key.push(word.to_string());
        if let Some(e) = self.get(&key) {
            return e.log10_prob;
        }
        if h.is_empty() {
            return f64::NEG_INFINITY;
        }
        let bow = self.get(h).and_then(|e| e.backoff).unwrap_or(0.0);
        bow + self.log10_prob(&h[1..], word)
    }

    /// `log10 P(<s> words </s>)`.
    pub fn score_sentence<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut history = vec![SENTENCE_START.to_string()];
        let mut total = 0.0;
        for w in words.iter().map(AsRef::as_ref).chain([SENTENCE_END]) {
            total += self.log10_prob(&history, w);
            history.push(w.to_string());
        }
        total
    }
}

fn cost(log10: f64) -> TropicalWeight {
    TropicalWeight(-log10 * LN_10)
}

/// Grammar acceptor over `words`. One state per history; word arcs carry
/// `-ln P`, backoff arcs are epsilon arcs to the shortened history, and
/// `</s>` becomes a final weight. Starts in the `<s>` history when the model
/// has one.
pub fn build_grammar_fst(lm: &ArpaLm, words: &SymbolTable) -> Result<Wfst> {
    let n = lm.order();
    let mut b = WfstBuilder::new();
    let mut states: HashMap<&[String], StateId> = HashMap::new();
    let null: &[String] = &[];
    states.insert(null, b.add_state());
    for order in 1..n {
        for key in lm.ngrams(order).keys() {
            if key.last().map(String::as_str) != Some(SENTENCE_END) {
                states.insert(key.as_slice(), b.add_state());
            }
        }
    }
    let start_key = [SENTENCE_START.to_string()];
    let start = states.get(&start_key[..]).copied().unwrap_or(states[null]);
    b.set_start(start);

    for order in 1..=n {
        for (key, e) in lm.ngrams(order) {
            let (history, word) = key.split_at(order - 1);
            let word = &word[0];
            if e.log10_prob <= LOG10_ZERO || word == SENTENCE_START {
                continue;
            }
            let Some(&src) = states.get(history) else {
                continue;
            };
            if word == SENTENCE_END {
                b.set_final(src, cost(e.log10_prob));
                continue;
            }
            let label = word_label(words, word)?;
            let keep = key.len().min(n - 1);
            let mut target = &key[key.len() - keep..];
            while !states.contains_key(target) {
                target = &target[1..];
            }
            b.add_arc(src, Arc::new(label, label, cost(e.log10_prob), states[target]));
        }
    }
    for (&h, &s) in &states {
        if h.is_empty() {
            continue;
        }
        let bow = lm.get(h).and_then(|e| e.backoff).unwrap_or(0.0);
        b.add_arc(s, Arc::new(EPSILON, EPSILON, cost(bow), states[&h[1..]]));
    }
    b.set_input_symbols(Some(words.clone()));
    b.set_output_symbols(Some(words.clone()));
    Ok(b.build()?.connect())
}

/// One state accepting any word sequence at weight one.
pub fn build_word_loop(words: &SymbolTable) -> Wfst {
    let mut b = WfstBuilder::new();
    b.add_state();
    b.set_start(0);
    b.set_final(0, TropicalWeight::one());
    for (id, _) in words.iter().skip(1) {
        b.add_arc(0, Arc::new(id, id, TropicalWeight::one(), 0));
    }
    b.set_input_symbols(Some(words.clone()));
    b.set_output_symbols(Some(words.clone()));
    b.build().expect("word loop is well formed")
}
