//! Construction of the decoding graph from its three components: the token
//! transducer T (frame labels to units), the lexicon L (units to words) and
//! the grammar G (word sequences), combined as `T ∘ min(det(L ∘ G))`.
//!
//! Symbol conventions:
//! - T's input tape numbers CTC label `k` as `k + 1`, keeping 0 for epsilon.
//! - T's output tape and L's input tape number unit `k` as `k` (the blank
//!   never appears there), followed by disambiguation symbols `#1, #2, …`.
//! - L's output tape and both tapes of G share one word table.

mod grammar;
mod lexicon;
mod search;
mod token;

pub use grammar::{build_grammar_fst, build_word_loop, ArpaLm, NgramEntry, SENTENCE_END, SENTENCE_START};
pub use lexicon::{
    add_disambiguation, build_lexicon_fst_phoneme, build_lexicon_fst_spelling, is_disambig_symbol, Lexicon,
    LexiconEntry,
};
pub use search::{
    compile_lexicon_only_graph, compile_search_graph, compile_unoptimized_graph, remove_disambiguation,
};
pub use token::{build_token_fst, frame_input_label, token_input_symbols};

use std::collections::HashMap;

use crate::wfst::{Label, SymbolTable};
use crate::{Error, Result, BLANK};

pub const BLANK_SYMBOL: &str = "<blank>";
pub const SPACE_SYMBOL: &str = "<space>";

/// The CTC label inventory: `<blank>` at 0, then the K units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitTable {
    symbols: Vec<String>,
    ids: HashMap<String, u32>,
}

impl UnitTable {
    /// `symbols[0]` must be `<blank>`.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.first().map(String::as_str) != Some(BLANK_SYMBOL) {
            return Err(Error::InvalidInput(format!("unit table must start with {BLANK_SYMBOL}")));
        }
        if symbols.len() < 2 {
            return Err(Error::InvalidInput("unit table has no units besides the blank".into()));
        }
        let mut ids = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) || is_disambig_symbol(s) || s == "<eps>" {
                return Err(Error::InvalidInput(format!("invalid unit symbol {s:?}")));
            }
            if ids.insert(s.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate unit {s}")));
            }
        }
        Ok(Self { symbols, ids })
    }

    /// Prepends the blank to the given units.
    pub fn from_units<I, S>(units: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut symbols = vec![BLANK_SYMBOL.to_string()];
        symbols.extend(units.into_iter().map(Into::into));
        Self::new(symbols)
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    /// `K + 1`, the posterior width.
    pub fn num_labels(&self) -> usize {
        self.symbols.len()
    }

    pub fn num_units(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Resolves symbols to label ids, naming `context` on failure.
    pub fn encode<S: AsRef<str>>(&self, symbols: &[S], context: &str) -> Result<Vec<u32>> {
        symbols
            .iter()
            .map(|s| {
                let s = s.as_ref();
                match self.id(s) {
                    Some(BLANK) => Err(Error::InvalidInput(format!("{context}: blank used as a unit"))),
                    Some(id) => Ok(id),
                    None => Err(Error::Unknown {
                        kind: "unit",
                        name: s.to_string(),
                        context: Some(context.to_string()),
                    }),
                }
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.symbol(i).unwrap_or("<unk>")).collect()
    }

    /// Input table of L (and output table of T): `<eps>` then every unit at
    /// its CTC id.
    pub fn unit_symbols(&self) -> SymbolTable {
        let mut t = SymbolTable::new();
        for s in &self.symbols[1..] {
            t.add(s);
        }
        t
    }
}

/// The 72-label phoneme inventory: blank, 24 consonants, 15 vowels in three
/// stress variants, and two noise marks.
pub fn cmu_phone_units() -> UnitTable {
    const CONSONANTS: [&str; 24] = [
        "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T", "TH", "V",
        "W", "Y", "Z", "ZH",
    ];
    const VOWELS: [&str; 15] = [
        "AA", "AE", "AH", "AO", "AW", "AX", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH",
    ];
    let mut units: Vec<String> = CONSONANTS.iter().map(|s| s.to_string()).collect();
    for v in VOWELS {
        for stress in 0..3 {
            units.push(format!("{v}{stress}"));
        }
    }
    units.push("<noise>".into());
    units.push("<spn>".into());
    UnitTable::from_units(units).expect("static inventory is valid")
}

/// Word table shared by L and G: `<eps>`, the lexicon words in order, then
/// any further words in `extra`.
pub fn word_symbols<'a>(lexicon: &Lexicon, extra: impl IntoIterator<Item = &'a str>) -> SymbolTable {
    let mut t = SymbolTable::new();
    for e in lexicon.entries() {
        t.add(&e.word);
    }
    for w in extra {
        if w != SENTENCE_START && w != SENTENCE_END {
            t.add(w);
        }
    }
    t
}

pub(crate) fn word_label(words: &SymbolTable, w: &str) -> Result<Label> {
    words.find(w).ok_or_else(|| Error::Unknown {
        kind: "word",
        name: w.to_string(),
        context: None,
    })
}
