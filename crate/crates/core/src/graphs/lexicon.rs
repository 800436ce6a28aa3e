use std::collections::{HashMap, HashSet};

use super::{word_label, UnitTable};
use crate::wfst::{Arc, Label, Semiring, StateId, SymbolTable, TropicalWeight, Wfst, WfstBuilder, EPSILON};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub word: String,
    pub units: Vec<String>,
    /// Pronunciation probability, 1 unless given.
    pub prob: f64,
}

impl LexiconEntry {
    pub fn new(word: impl Into<String>, units: Vec<String>) -> Self {
        Self {
            word: word.into(),
            units,
            prob: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
}

impl Lexicon {
    /// With `first_only`, later pronunciations of a word are dropped.
    pub fn new(entries: Vec<LexiconEntry>, first_only: bool) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("lexicon is empty".into()));
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(entries.len());
        for e in entries {
            if e.units.is_empty() {
                return Err(Error::InvalidInput(format!("word {} has an empty unit sequence", e.word)));
            }
            if !(e.prob > 0.0 && e.prob <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "word {} has pronunciation probability {} outside (0, 1]",
                    e.word, e.prob
                )));
            }
            if seen.insert(e.word.clone()) || !first_only {
                kept.push(e);
            }
        }
        Ok(Self { entries: kept })
    }

    /// Character lexicon: every word spelled out letter by letter.
    pub fn spelling<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = words
            .into_iter()
            .map(|w| {
                let w = w.as_ref();
                LexiconEntry::new(w, w.chars().map(String::from).collect())
            })
            .collect();
        Self::new(entries, true)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|e| e.word == word)
    }
}

/// `#` followed by digits.
pub fn is_disambig_symbol(s: &str) -> bool {
    s.len() > 1 && s.starts_with('#') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Disambiguation index (1-based) for each pronunciation that is repeated or
/// is a proper prefix of another; `None` otherwise. Repeated pronunciations
/// are numbered in order of appearance.
pub fn add_disambiguation(prons: &[Vec<u32>]) -> Vec<Option<u32>> {
    let mut counts: HashMap<&[u32], usize> = HashMap::new();
    let mut prefixes: HashSet<&[u32]> = HashSet::new();
    for p in prons {
        *counts.entry(p).or_default() += 1;
        for n in 1..p.len() {
            prefixes.insert(&p[..n]);
        }
    }
    let mut next: HashMap<&[u32], u32> = HashMap::new();
    prons
        .iter()
        .map(|p| {
            let p = p.as_slice();
            (counts[p] > 1 || prefixes.contains(p)).then(|| {
                let n = next.entry(p).or_insert(0);
                *n += 1;
                *n
            })
        })
        .collect()
}

/// Phoneme lexicon: each pronunciation is a chain from and back to the
/// start state, emitting the word on its first arc.
pub fn build_lexicon_fst_phoneme(lex: &Lexicon, units: &UnitTable, words: &SymbolTable) -> Result<Wfst> {
    build_lexicon(lex, units, words, None)
}

/// Spelling lexicon. A `space` self-loop on the start state makes the space
/// unit optional before, after and between words.
pub fn build_lexicon_fst_spelling(
    lex: &Lexicon,
    units: &UnitTable,
    words: &SymbolTable,
    space: &str,
) -> Result<Wfst> {
    let space_id = units.id(space).ok_or_else(|| Error::Unknown {
        kind: "unit",
        name: space.to_string(),
        context: Some("space unit".into()),
    })?;
    build_lexicon(lex, units, words, Some(space_id))
}

fn build_lexicon(lex: &Lexicon, units: &UnitTable, words: &SymbolTable, space: Option<u32>) -> Result<Wfst> {
    let prons = lex
        .entries()
        .iter()
        .map(|e| units.encode(&e.units, &format!("word {}", e.word)))
        .collect::<Result<Vec<_>>>()?;
    let disambig = add_disambiguation(&prons);
    let mut isyms = units.unit_symbols();
    let max_disambig = disambig.iter().flatten().copied().max().unwrap_or(0);
    let first_disambig = isyms.len() as Label;
    for i in 1..=max_disambig {
        isyms.add(&format!("#{i}"));
    }

    let mut b = WfstBuilder::new();
    let start = b.add_state();
    b.set_start(start);
    b.set_final(start, TropicalWeight::one());
    if let Some(s) = space {
        b.add_arc(start, Arc::new(s, EPSILON, TropicalWeight::one(), start));
    }
    for ((entry, pron), d) in lex.entries().iter().zip(&prons).zip(&disambig) {
        let word = word_label(words, &entry.word)?;
        let mut ilabels: Vec<Label> = pron.clone();
        if let Some(d) = d {
            ilabels.push(first_disambig + d - 1);
        }
        let mut prev = start;
        for (i, &il) in ilabels.iter().enumerate() {
            let (olabel, weight) = if i == 0 {
                (word, TropicalWeight(-entry.prob.ln()))
            } else {
                (EPSILON, TropicalWeight::one())
            };
            let next: StateId = if i + 1 == ilabels.len() { start } else { b.add_state() };
            b.add_arc(prev, Arc::new(il, olabel, weight, next));
            prev = next;
        }
    }
    b.set_input_symbols(Some(isyms));
    b.set_output_symbols(Some(words.clone()));
    b.build()
}
