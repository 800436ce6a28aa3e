use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{parse_f64, parse_usize};
use crate::graphs::{ArpaLm, NgramEntry};
use crate::{Error, Result};

enum Section {
    Preamble,
    Data,
    Ngrams(usize),
    End,
}

/// Parses the `\data\` … `\end\` text format. Declared counts must match
/// the entries that follow.
pub fn parse_arpa(text: &str, src: &str) -> Result<ArpaLm> {
    let mut section = Section::Preamble;
    let mut declared: Vec<(usize, usize)> = Vec::new();
    let mut tables: Vec<BTreeMap<Vec<String>, NgramEntry>> = Vec::new();
    let check_count = |tables: &Vec<BTreeMap<_, _>>, n: usize, declared: &[(usize, usize)]| {
        let (want, line) = declared[n - 1];
        let got = tables[n - 1].len();
        if got != want {
            return Err(Error::parse(src, line, format!("declared {want} {n}-grams but found {got}")));
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        match section {
            Section::Preamble => {
                if l == "\\data\\" {
                    section = Section::Data;
                }
            }
            Section::Data if l.starts_with("ngram ") => {
                let spec = &l["ngram ".len()..];
                let (n, c) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::parse(src, line, format!("malformed count line {l:?}")))?;
                let n = parse_usize(n.trim(), src, line)?;
                let c = parse_usize(c.trim(), src, line)?;
                if n != declared.len() + 1 {
                    return Err(Error::parse(src, line, format!("expected count for order {}", declared.len() + 1)));
                }
                declared.push((c, line));
            }
            Section::Data | Section::Ngrams(_) => {
                if let Section::Ngrams(n) = section {
                    if l.starts_with('\\') {
                        check_count(&tables, n, &declared)?;
                    }
                }
                if l == "\\end\\" {
                    section = Section::End;
                    continue;
                }
                if let Some(n) = l.strip_prefix('\\').and_then(|r| r.strip_suffix("-grams:")) {
                    let n = parse_usize(n, src, line)?;
                    if n != tables.len() + 1 || n > declared.len() {
                        return Err(Error::parse(src, line, format!("unexpected section {l}")));
                    }
                    tables.push(BTreeMap::new());
                    section = Section::Ngrams(n);
                    continue;
                }
                let Section::Ngrams(n) = section else {
                    return Err(Error::parse(src, line, format!("unexpected line {l:?} in \\data\\ header")));
                };
                let toks: Vec<&str> = l.split_whitespace().collect();
                let backoff = match toks.len() {
                    k if k == n + 1 => None,
                    k if k == n + 2 => Some(parse_f64(toks[n + 1], src, line)?),
                    _ => return Err(Error::parse(src, line, format!("malformed {n}-gram line"))),
                };
                let log10_prob = parse_f64(toks[0], src, line)?;
                if !log10_prob.is_finite() || log10_prob > 0.0 || backoff.is_some_and(|b| !b.is_finite()) {
                    return Err(Error::parse(src, line, "probabilities must be finite log10 values ≤ 0"));
                }
                let words: Vec<String> = toks[1..=n].iter().map(|s| s.to_string()).collect();
                if tables[n - 1].insert(words, NgramEntry { log10_prob, backoff }).is_some() {
                    return Err(Error::parse(src, line, "duplicate n-gram"));
                }
            }
            Section::End => return Err(Error::parse(src, line, "content after \\end\\")),
        }
    }
    let end_line = text.lines().count();
    if !matches!(section, Section::End) {
        return Err(Error::parse(src, end_line, "missing \\end\\ (or \\data\\)"));
    }
    if declared.is_empty() || tables.len() != declared.len() {
        return Err(Error::parse(
            src,
            end_line,
            format!("declared {} orders but found {} sections", declared.len(), tables.len()),
        ));
    }
    ArpaLm::new(tables).map_err(|e| Error::parse(src, end_line, e.to_string()))
}

pub fn write_arpa(lm: &ArpaLm) -> String {
    let mut out = String::from("\\data\\\n");
    for n in 1..=lm.order() {
        writeln!(out, "ngram {n}={}", lm.ngrams(n).len()).unwrap();
    }
    for n in 1..=lm.order() {
        write!(out, "\n\\{n}-grams:\n").unwrap();
        for (words, e) in lm.ngrams(n) {
            write!(out, "{}\t{}", e.log10_prob, words.join(" ")).unwrap();
            if let Some(b) = e.backoff {
                write!(out, "\t{b}").unwrap();
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}
