//! Readers and writers for every on-disk format. Floats are written in
//! Rust's shortest round-trip form, so write→read is bitwise exact.
//!
//! Parsers work on `&str` plus a source name used in error locations; the
//! `read_*`/`write_*` path helpers wrap them with file access.

mod arpa;
mod corpus;
mod features;
mod fst;
mod model;

pub use arpa::{parse_arpa, write_arpa};
pub use corpus::{load_corpus, Corpus, CorpusPaths};
pub use features::{parse_feature_archive, read_features, write_feature_archive, write_feature_dir};
pub use fst::{parse_fst_binary, parse_fst_text, write_fst_binary, write_fst_text, FST_BINARY_VERSION};
pub use model::{
    checkpoint_exists, parse_model, parse_newbob, read_checkpoint, write_checkpoint, write_model, write_newbob,
    MODEL_MAGIC, MODEL_VERSION,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::ctc::{LabelPriors, LabelSequence};
use crate::graphs::{Lexicon, LexiconEntry, UnitTable};
use crate::wfst::SymbolTable;
use crate::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Non-empty lines with their 1-based numbers; `#`-free formats keep every
/// token.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
}

pub(crate) fn parse_f64(tok: &str, src: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(src, line, format!("expected a number, found {tok:?}")))
}

pub(crate) fn parse_usize(tok: &str, src: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(src, line, format!("expected a non-negative integer, found {tok:?}")))
}

/// `<key> <token> <token> …` lines into an ordered map. Duplicate keys are
/// errors; with `allow_empty`, a key alone maps to an empty list.
fn parse_keyed_lists(text: &str, src: &str, allow_empty: bool) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (line, toks) in content_lines(text) {
        if toks.len() < 2 && !allow_empty {
            return Err(Error::parse(src, line, "expected an id followed by at least one symbol"));
        }
        let list = toks[1..].iter().map(|s| s.to_string()).collect();
        if out.insert(toks[0].to_string(), list).is_some() {
            return Err(Error::parse(src, line, format!("duplicate id {}", toks[0])));
        }
    }
    Ok(out)
}

fn write_keyed_lists<S: AsRef<str>>(entries: &BTreeMap<String, Vec<S>>) -> String {
    let mut out = String::new();
    for (id, list) in entries {
        out.push_str(id);
        for s in list {
            out.push(' ');
            out.push_str(s.as_ref());
        }
        out.push('\n');
    }
    out
}

/// Word transcripts, `<utt> <word> …`. Also the hypothesis format; an
/// utterance with an empty hypothesis is a bare id.
pub fn parse_transcripts(text: &str, src: &str) -> Result<BTreeMap<String, Vec<String>>> {
    parse_keyed_lists(text, src, true)
}

pub fn write_transcripts<S: AsRef<str>>(entries: &BTreeMap<String, Vec<S>>) -> String {
    write_keyed_lists(entries)
}

/// Label archive: unit symbols resolved against `units`.
pub fn parse_label_archive(text: &str, src: &str, units: &UnitTable) -> Result<Vec<LabelSequence>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (line, toks) in content_lines(text) {
        if toks.len() < 2 {
            return Err(Error::parse(src, line, "expected an utterance id followed by labels"));
        }
        if !seen.insert(toks[0]) {
            return Err(Error::parse(src, line, format!("duplicate utterance {}", toks[0])));
        }
        let ids = units
            .encode(&toks[1..], toks[0])
            .map_err(|e| Error::parse(src, line, e.to_string()))?;
        out.push(LabelSequence::new(toks[0], ids).map_err(|e| Error::parse(src, line, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_label_archive(labels: &[LabelSequence], units: &UnitTable) -> Result<String> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.utterance_id);
        for &k in l.labels() {
            let sym = units.symbol(k).ok_or_else(|| Error::Unknown {
                kind: "label id",
                name: k.to_string(),
                context: Some(format!("utterance {}", l.utterance_id)),
            })?;
            out.push(' ');
            out.push_str(sym);
        }
        out.push('\n');
    }
    Ok(out)
}

/// `<utt> <speaker>` lines.
pub fn parse_speaker_map(text: &str, src: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (line, toks) in content_lines(text) {
        if toks.len() != 2 {
            return Err(Error::parse(src, line, "expected `<utterance> <speaker>`"));
        }
        if out.insert(toks[0].to_string(), toks[1].to_string()).is_some() {
            return Err(Error::parse(src, line, format!("duplicate utterance {}", toks[0])));
        }
    }
    Ok(out)
}

pub fn write_speaker_map(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(u, s)| format!("{u} {s}\n")).collect()
}

/// `<word> <unit> …`; repeated words are alternative pronunciations.
pub fn parse_lexicon(text: &str, src: &str) -> Result<Lexicon> {
    let mut entries = Vec::new();
    for (line, toks) in content_lines(text) {
        if toks.len() < 2 {
            return Err(Error::parse(src, line, "expected a word followed by its units"));
        }
        entries.push(LexiconEntry::new(toks[0], toks[1..].iter().map(|s| s.to_string()).collect()));
    }
    Lexicon::new(entries, false).map_err(|e| Error::parse(src, 0, e.to_string()))
}

pub fn write_lexicon(lex: &Lexicon) -> String {
    let mut out = String::new();
    for e in lex.entries() {
        out.push_str(&e.word);
        for u in &e.units {
            out.push(' ');
            out.push_str(u);
        }
        out.push('\n');
    }
    out
}

/// `<symbol> <id>` lines with ids `0, 1, 2, …` in order.
fn parse_id_list(text: &str, src: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (line, toks) in content_lines(text) {
        if toks.len() != 2 {
            return Err(Error::parse(src, line, "expected `<symbol> <id>`"));
        }
        let id = parse_usize(toks[1], src, line)?;
        if id != out.len() {
            return Err(Error::parse(src, line, format!("expected id {}, found {id}", out.len())));
        }
        out.push(toks[0].to_string());
    }
    Ok(out)
}

pub fn parse_unit_table(text: &str, src: &str) -> Result<UnitTable> {
    UnitTable::new(parse_id_list(text, src)?).map_err(|e| Error::parse(src, 1, e.to_string()))
}

pub fn write_unit_table(units: &UnitTable) -> String {
    units.symbols().iter().enumerate().map(|(i, s)| format!("{s} {i}\n")).collect()
}

pub fn parse_symbol_table(text: &str, src: &str) -> Result<SymbolTable> {
    SymbolTable::from_symbols(parse_id_list(text, src)?).map_err(|e| Error::parse(src, 1, e.to_string()))
}

pub fn write_symbol_table(table: &SymbolTable) -> String {
    table.iter().map(|(i, s)| format!("{s} {i}\n")).collect()
}

/// `<symbol> <log_prior>`, one line per label of `units`, any order.
pub fn parse_priors(text: &str, src: &str, units: &UnitTable) -> Result<LabelPriors> {
    let mut values = vec![None; units.num_labels()];
    for (line, toks) in content_lines(text) {
        if toks.len() != 2 {
            return Err(Error::parse(src, line, "expected `<symbol> <log_prior>`"));
        }
        let k = units
            .id(toks[0])
            .ok_or_else(|| Error::parse(src, line, format!("unknown unit {}", toks[0])))?;
        let v = parse_f64(toks[1], src, line)?;
        if v > 0.0 || v.is_nan() {
            return Err(Error::parse(src, line, format!("log prior {v} is not a log probability")));
        }
        if values[k as usize].replace(v).is_some() {
            return Err(Error::parse(src, line, format!("duplicate prior for {}", toks[0])));
        }
    }
    let log_prior = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| v.ok_or_else(|| Error::parse(src, 0, format!("no prior for {}", units.symbols()[k]))))
        .collect::<Result<_>>()?;
    Ok(LabelPriors { log_prior })
}

pub fn write_priors(priors: &LabelPriors, units: &UnitTable) -> Result<String> {
    if priors.num_labels() != units.num_labels() {
        return Err(Error::DimensionMismatch(format!(
            "{} priors for {} labels",
            priors.num_labels(),
            units.num_labels()
        )));
    }
    let mut out = String::new();
    for (s, p) in units.symbols().iter().zip(&priors.log_prior) {
        writeln!(out, "{s} {p}").unwrap();
    }
    Ok(out)
}

/// Corpus WER line followed by per-utterance counts.
pub fn format_wer_report(report: &crate::decoder::WerReport) -> String {
    let t = report.totals;
    let mut out = format!(
        "%WER {:.2} [ {} / {}, {} ins, {} del, {} sub ]\n",
        report.wer_percent(),
        t.errors(),
        report.reference_words(),
        t.insertions,
        t.deletions,
        t.substitutions
    );
    if report.missing() > 0 {
        writeln!(out, "missing hypotheses: {}", report.missing()).unwrap();
    }
    for u in &report.utterances {
        let c = u.counts;
        writeln!(
            out,
            "{} ref {} sub {} ins {} del {}",
            u.utterance_id,
            c.reference_len(),
            c.substitutions,
            c.insertions,
            c.deletions
        )
        .unwrap();
    }
    out
}
