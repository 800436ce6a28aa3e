use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{parse_f64, parse_usize, read_text, source_name, write_file};
use crate::features::FeatureMatrix;
use crate::{Error, Result};

/// Parses every `<id> <T> <D>` record of an archive, in file order.
pub fn parse_feature_archive(text: &str, src: &str) -> Result<Vec<FeatureMatrix>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    while let Some((line, header)) = lines.next() {
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 3 {
            return Err(Error::parse(src, line, "expected a `<utterance> <frames> <dim>` header"));
        }
        let id = toks[0];
        let (t, d) = (parse_usize(toks[1], src, line)?, parse_usize(toks[2], src, line)?);
        if t == 0 || d == 0 {
            return Err(Error::parse(src, line, "feature matrices must be non-empty"));
        }
        if !ids.insert(id.to_string()) {
            return Err(Error::parse(src, line, format!("duplicate utterance {id}")));
        }
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            let Some((line, row)) = lines.next() else {
                return Err(Error::parse(src, line, format!("archive ends inside utterance {id}")));
            };
            let before = data.len();
            for tok in row.split_whitespace() {
                let v = parse_f64(tok, src, line)?;
                if !v.is_finite() {
                    return Err(Error::parse(src, line, format!("non-finite value {tok}")));
                }
                data.push(v);
            }
            if data.len() - before != d {
                return Err(Error::parse(src, line, format!("expected {d} values, found {}", data.len() - before)));
            }
        }
        let frames = Array2::from_shape_vec((t, d), data).expect("length checked per row");
        out.push(FeatureMatrix::new(id, frames).map_err(|e| Error::parse(src, line, e.to_string()))?);
    }
    Ok(out)
}

fn write_record(out: &mut String, feat: &FeatureMatrix) {
    writeln!(out, "{} {} {}", feat.utterance_id, feat.num_frames(), feat.dim()).unwrap();
    for row in feat.frames().rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
}

pub fn write_feature_archive(feats: &[FeatureMatrix]) -> String {
    let mut out = String::new();
    for f in feats {
        write_record(&mut out, f);
    }
    out
}

/// One `<id>.feat` file per utterance.
pub fn write_feature_dir(dir: &Path, feats: &[FeatureMatrix]) -> Result<()> {
    for f in feats {
        let mut text = String::new();
        write_record(&mut text, f);
        write_file(&dir.join(format!("{}.feat", f.utterance_id)), text)?;
    }
    Ok(())
}

/// Reads a single archive, or every regular file of a directory in name
/// order.
pub fn read_features(path: &Path) -> Result<Vec<FeatureMatrix>> {
    if !path.is_dir() {
        return parse_feature_archive(&read_text(path)?, &source_name(path));
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    files.retain(|p| p.is_file() && !p.to_string_lossy().ends_with(".tmp"));
    files.sort();
    let parsed = crate::par::map(&files, |p| parse_feature_archive(&read_text(p)?, &source_name(p)));
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (file, feats) in files.iter().zip(parsed) {
        for f in feats? {
            if !ids.insert(f.utterance_id.clone()) {
                return Err(Error::parse(source_name(file), 1, format!("duplicate utterance {}", f.utterance_id)));
            }
            out.push(f);
        }
    }
    Ok(out)
}
