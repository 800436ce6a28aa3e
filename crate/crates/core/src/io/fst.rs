//! Arc-list text format and its binary twin.
//!
//! Text: the start state's lines come first, then the other states in id
//! order. `src dst ilabel olabel weight` per arc, `state weight` per final
//! state. A state with no arcs that is not final, but must exist (the start
//! state, or a trailing id), is written as a final line with weight `inf`.
//! Labels are symbols when tables are supplied and numeric ids otherwise.

use std::fmt::Write as _;

use super::{parse_f64, parse_usize};
use crate::wfst::{Arc, Label, Semiring, StateId, SymbolTable, Wfst, WfstBuilder};
use crate::{Error, Result};

pub const FST_BINARY_VERSION: u32 = 1;
const FST_MAGIC: &[u8; 8] = b"CTCWFST\0";

fn label_text(l: Label, table: Option<&SymbolTable>) -> Result<String> {
    match table {
        None => Ok(l.to_string()),
        Some(t) => t.symbol(l).map(str::to_string).ok_or_else(|| Error::Unknown {
            kind: "label",
            name: l.to_string(),
            context: Some("symbol table used for FST output".into()),
        }),
    }
}

pub fn write_fst_text<W: Semiring>(fst: &Wfst<W>) -> Result<String> {
    let mut out = String::new();
    let Some(start) = fst.start() else {
        return Ok(out);
    };
    let (isyms, osyms) = (fst.input_symbols(), fst.output_symbols());
    let order = std::iter::once(start).chain(fst.states().filter(|&s| s != start));
    let last = fst.num_states() as StateId - 1;
    for s in order {
        for a in fst.arcs(s) {
            writeln!(
                out,
                "{s} {} {} {} {}",
                a.nextstate,
                label_text(a.ilabel, isyms)?,
                label_text(a.olabel, osyms)?,
                a.weight.value()
            )
            .unwrap();
        }
        let needs_line = fst.arcs(s).is_empty() && (s == start || s == last);
        if fst.is_final(s) || needs_line {
            writeln!(out, "{s} {}", fst.final_weight(s).value()).unwrap();
        }
    }
    Ok(out)
}

fn parse_label(tok: &str, table: Option<&SymbolTable>, src: &str, line: usize) -> Result<Label> {
    match table {
        None => tok
            .parse()
            .map_err(|_| Error::parse(src, line, format!("expected a numeric label, found {tok:?}"))),
        Some(t) => t
            .find(tok)
            .ok_or_else(|| Error::parse(src, line, format!("symbol {tok:?} is not in the table"))),
    }
}

fn parse_weight<W: Semiring>(tok: &str, src: &str, line: usize) -> Result<W> {
    let v = parse_f64(tok, src, line)?;
    if v.is_nan() || v == f64::NEG_INFINITY {
        return Err(Error::parse(src, line, format!("invalid weight {tok}")));
    }
    Ok(W::new(v))
}

/// The first line's source state is the start state. Symbol tables, when
/// given, resolve labels and are attached to the result.
pub fn parse_fst_text<W: Semiring>(
    text: &str,
    src: &str,
    isyms: Option<&SymbolTable>,
    osyms: Option<&SymbolTable>,
) -> Result<Wfst<W>> {
    let mut b = WfstBuilder::<W>::new();
    let mut start = None;
    let ensure = |b: &mut WfstBuilder<W>, s: usize| {
        while b.num_states() <= s {
            b.add_state();
        }
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let s = parse_usize(toks[0], src, line)?;
        if s > StateId::MAX as usize / 2 {
            return Err(Error::parse(src, line, format!("state id {s} is too large")));
        }
        start.get_or_insert(s);
        ensure(&mut b, s);
        match toks.len() {
            1 | 2 => {
                let w = if toks.len() == 2 { parse_weight(toks[1], src, line)? } else { W::one() };
                b.set_final(s as StateId, w);
            }
            4 | 5 => {
                let d = parse_usize(toks[1], src, line)?;
                if d > StateId::MAX as usize / 2 {
                    return Err(Error::parse(src, line, format!("state id {d} is too large")));
                }
                ensure(&mut b, d);
                let il = parse_label(toks[2], isyms, src, line)?;
                let ol = parse_label(toks[3], osyms, src, line)?;
                let w = if toks.len() == 5 { parse_weight(toks[4], src, line)? } else { W::one() };
                b.add_arc(s as StateId, Arc::new(il, ol, w, d as StateId));
            }
            _ => return Err(Error::parse(src, line, "expected an arc or a final-state line")),
        }
    }
    if let Some(s) = start {
        b.set_start(s as StateId);
    }
    b.set_input_symbols(isyms.cloned());
    b.set_output_symbols(osyms.cloned());
    b.build().map_err(|e| Error::parse(src, 0, e.to_string()))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_table(out: &mut Vec<u8>, t: Option<&SymbolTable>) {
    match t {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            put_u64(out, t.len() as u64);
            for (_, s) in t.iter() {
                put_u64(out, s.len() as u64);
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
}

/// Magic, version, semiring name, start (`u64::MAX` for none), state count,
/// then per state its final weight, arc count and arcs; symbol tables last.
/// All little-endian.
pub fn write_fst_binary<W: Semiring>(fst: &Wfst<W>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FST_MAGIC);
    put_u32(&mut out, FST_BINARY_VERSION);
    put_u64(&mut out, W::NAME.len() as u64);
    out.extend_from_slice(W::NAME.as_bytes());
    put_u64(&mut out, fst.start().map_or(u64::MAX, u64::from));
    put_u64(&mut out, fst.num_states() as u64);
    for s in fst.states() {
        out.extend_from_slice(&fst.final_weight(s).value().to_le_bytes());
        put_u64(&mut out, fst.arcs(s).len() as u64);
        for a in fst.arcs(s) {
            put_u32(&mut out, a.ilabel);
            put_u32(&mut out, a.olabel);
            out.extend_from_slice(&a.weight.value().to_le_bytes());
            put_u32(&mut out, a.nextstate);
        }
    }
    put_table(&mut out, fst.input_symbols());
    put_table(&mut out, fst.output_symbols());
    out
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    src: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], src: &'a str) -> Self {
        Self { bytes, pos: 0, src }
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.src, 0, format!("byte {}: {}", self.pos, msg.into()))
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated, wanted {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count that must fit in the remaining input at `unit` bytes each.
    pub(crate) fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(unit as u64) > left {
            return Err(self.error(format!("count {n} exceeds the remaining input")));
        }
        Ok(n as usize)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error("trailing bytes"));
        }
        Ok(())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.error("invalid UTF-8"))
    }

    fn table(&mut self) -> Result<Option<SymbolTable>> {
        match self.take(1)?[0] {
            0 => Ok(None),
            1 => {
                let n = self.count(8)?;
                let symbols = (0..n).map(|_| self.string()).collect::<Result<Vec<_>>>()?;
                SymbolTable::from_symbols(symbols).map(Some).map_err(|e| self.error(e.to_string()))
            }
            b => Err(self.error(format!("bad symbol-table flag {b}"))),
        }
    }
}

pub fn parse_fst_binary<W: Semiring>(bytes: &[u8], src: &str) -> Result<Wfst<W>> {
    let mut r = Reader::new(bytes, src);
    if r.take(FST_MAGIC.len())? != FST_MAGIC {
        return Err(r.error("not a binary FST file"));
    }
    let version = r.u32()?;
    if version != FST_BINARY_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let name = r.string()?;
    if name != W::NAME {
        return Err(r.error(format!("file holds {name} weights, expected {}", W::NAME)));
    }
    let start = r.u64()?;
    let n = r.count(16)?;
    let mut b = WfstBuilder::<W>::new();
    b.add_states(n);
    for s in 0..n as StateId {
        b.set_final(s, W::new(r.f64()?));
        for _ in 0..r.count(20)? {
            let (il, ol, w, d) = (r.u32()?, r.u32()?, r.f64()?, r.u32()?);
            b.add_arc(s, Arc::new(il, ol, W::new(w), d));
        }
    }
    if start != u64::MAX {
        b.set_start(u32::try_from(start).map_err(|_| r.error("start state out of range"))?);
    }
    b.set_input_symbols(r.table()?);
    b.set_output_symbols(r.table()?);
    r.finish()?;
    b.build().map_err(|e| r.error(e.to_string()))
}
