//! Model binary and training checkpoints.
//!
//! Model layout (little-endian): 8-byte magic, `u32` version, `u32` input
//! dimension, `u32` layer count, one `u32` cell count per layer, `u32`
//! output count, then every parameter as `f64`. Per layer the forward
//! direction precedes the backward one, each as W_ix, W_fx, W_cx, W_ox,
//! W_ih, W_fh, W_ch, W_oh, W_ic, W_fc, W_oc, b_i, b_f, b_c, b_o (matrices
//! row-major); the output weights and bias come last.

use std::fmt::Write as _;
use std::path::Path;

use super::fst::Reader;
use super::{parse_f64, parse_usize, read_bytes, read_text, source_name, write_file};
use crate::nnet::{BlstmStack, ModelSpec};
use crate::trainer::{NewbobState, Phase};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"CTCBLSTM";
pub const MODEL_VERSION: u32 = 1;

const MODEL_FILE: &str = "model.bin";
const SCHEDULE_FILE: &str = "newbob.txt";

pub fn write_model(stack: &BlstmStack) -> Vec<u8> {
    let spec = stack.spec();
    let mut out = Vec::with_capacity(32 + 8 * stack.num_params());
    out.extend_from_slice(MODEL_MAGIC);
    let mut u32s = vec![MODEL_VERSION, spec.input_dim as u32, spec.cells.len() as u32];
    u32s.extend(spec.cells.iter().map(|&c| c as u32));
    u32s.push(spec.num_outputs as u32);
    for v in u32s {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in stack.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_model(bytes: &[u8], src: &str) -> Result<BlstmStack> {
    let mut r = Reader::new(bytes, src);
    if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(r.error("not a model file"));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(r.error(format!("unsupported model version {version}")));
    }
    let input_dim = r.u32()? as usize;
    let layers = r.u32()? as usize;
    if layers > 1024 {
        return Err(r.error(format!("implausible layer count {layers}")));
    }
    let cells = (0..layers).map(|_| r.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
    let num_outputs = r.u32()? as usize;
    let spec = ModelSpec {
        input_dim,
        cells,
        num_outputs,
    };
    spec.validate().map_err(|e| r.error(e.to_string()))?;
    let expected = expected_params(&spec).ok_or_else(|| r.error("layer sizes overflow"))?;
    if expected.saturating_mul(8) != bytes.len() - (8 + 4 * (4 + layers)) {
        return Err(r.error(format!("expected {expected} parameters")));
    }
    let mut stack = BlstmStack::zeros(&spec)?;
    for block in stack.tensors_mut() {
        for v in block.iter_mut() {
            *v = r.f64()?;
        }
    }
    r.finish()?;
    Ok(stack)
}

fn expected_params(spec: &ModelSpec) -> Option<usize> {
    let mut total = 0usize;
    let mut input = spec.input_dim;
    for &c in &spec.cells {
        let dir = c.checked_mul(input.checked_add(c)?.checked_mul(4)?.checked_add(7)?)?;
        total = total.checked_add(dir.checked_mul(2)?)?;
        input = c.checked_mul(2)?;
    }
    total.checked_add(spec.num_outputs.checked_mul(input.checked_add(1)?)?)
}

/// Key-value text, one `key value` pair per line.
pub fn write_newbob(s: &NewbobState) -> String {
    let mut out = String::new();
    writeln!(out, "learning_rate {}", s.learning_rate).unwrap();
    writeln!(out, "phase {}", s.phase.name()).unwrap();
    match s.prev_ler {
        Some(v) => writeln!(out, "prev_ler {v}").unwrap(),
        None => writeln!(out, "prev_ler none").unwrap(),
    }
    writeln!(out, "halving_factor {}", s.halving_factor).unwrap();
    writeln!(out, "start_decay_threshold {}", s.start_decay_threshold).unwrap();
    writeln!(out, "stop_threshold {}", s.stop_threshold).unwrap();
    writeln!(out, "hold_epochs {}", s.hold_epochs).unwrap();
    writeln!(out, "epochs {}", s.epochs).unwrap();
    out
}

pub fn parse_newbob(text: &str, src: &str) -> Result<NewbobState> {
    let mut s = NewbobState::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let [key, value] = toks[..] else {
            return Err(Error::parse(src, line, "expected `<key> <value>`"));
        };
        if !seen.insert(key) {
            return Err(Error::parse(src, line, format!("duplicate key {key}")));
        }
        match key {
            "learning_rate" => s.learning_rate = parse_f64(value, src, line)?,
            "phase" => {
                s.phase = Phase::from_name(value)
                    .ok_or_else(|| Error::parse(src, line, format!("unknown phase {value}")))?
            }
            "prev_ler" => s.prev_ler = if value == "none" { None } else { Some(parse_f64(value, src, line)?) },
            "halving_factor" => s.halving_factor = parse_f64(value, src, line)?,
            "start_decay_threshold" => s.start_decay_threshold = parse_f64(value, src, line)?,
            "stop_threshold" => s.stop_threshold = parse_f64(value, src, line)?,
            "hold_epochs" => s.hold_epochs = parse_usize(value, src, line)?,
            "epochs" => s.epochs = parse_usize(value, src, line)?,
            _ => return Err(Error::parse(src, line, format!("unknown key {key}"))),
        }
    }
    const KEYS: usize = 8;
    if seen.len() != KEYS {
        return Err(Error::parse(src, 0, "schedule file is missing keys"));
    }
    Ok(s)
}

pub fn checkpoint_exists(dir: &Path) -> bool {
    dir.join(MODEL_FILE).is_file() && dir.join(SCHEDULE_FILE).is_file()
}

/// Writes `model.bin` and the `newbob.txt` sidecar into `dir`.
pub fn write_checkpoint(dir: &Path, model: &BlstmStack, schedule: &NewbobState) -> Result<()> {
    write_file(&dir.join(MODEL_FILE), write_model(model))?;
    write_file(&dir.join(SCHEDULE_FILE), write_newbob(schedule))
}

pub fn read_checkpoint(dir: &Path) -> Result<(BlstmStack, NewbobState)> {
    let m = dir.join(MODEL_FILE);
    let s = dir.join(SCHEDULE_FILE);
    Ok((
        parse_model(&read_bytes(&m)?, &source_name(&m))?,
        parse_newbob(&read_text(&s)?, &source_name(&s))?,
    ))
}
