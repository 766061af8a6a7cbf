//! Line codec for knowledge tuples:
//! `provider,context,d,v_1..v_d,cs_1..cs_d,cu_1..cu_d`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! decode of an encode reproduces every component exactly.

use std::io::{self, BufRead, Write};

use nalgebra::DVector;
use thiserror::Error;

use super::KnowledgeTuple;
use crate::transaction::AgentId;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("field `{0}` contains a comma or line break")]
    Unencodable(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_text(s: &str) -> Result<(), CodecError> {
    if s.contains([',', '\n', '\r']) {
        Err(CodecError::Unencodable(s.to_owned()))
    } else {
        Ok(())
    }
}

pub fn encode(tuple: &KnowledgeTuple) -> Result<String, CodecError> {
    check_text(tuple.provider.as_str())?;
    check_text(&tuple.context)?;
    let mut fields = vec![
        tuple.provider.0.clone(),
        tuple.context.clone(),
        tuple.dimensionality().to_string(),
    ];
    for v in [
        &tuple.direction,
        &tuple.centroid_successful,
        &tuple.centroid_unsuccessful,
    ] {
        fields.extend(v.iter().map(|x| x.to_string()));
    }
    Ok(fields.join(","))
}

/// Decodes one line; `line` is only used in error messages.
pub fn decode(text: &str, line: usize) -> Result<KnowledgeTuple, CodecError> {
    let malformed = |message: String| CodecError::Malformed { line, message };
    let fields: Vec<&str> = text.trim_end_matches(['\n', '\r']).split(',').collect();
    if fields.len() < 3 {
        return Err(malformed(format!(
            "expected at least 3 fields, found {}",
            fields.len()
        )));
    }
    let d: usize = fields[2]
        .trim()
        .parse()
        .map_err(|_| malformed(format!("dimensionality `{}` is not a count", fields[2])))?;
    if d == 0 {
        return Err(malformed("dimensionality must be positive".into()));
    }
    if fields.len() != 3 + 3 * d {
        return Err(malformed(format!(
            "expected {} fields for d = {d}, found {}",
            3 + 3 * d,
            fields.len()
        )));
    }
    let mut values = Vec::with_capacity(3 * d);
    for (i, raw) in fields[3..].iter().enumerate() {
        let x: f64 = raw
            .trim()
            .parse()
            .map_err(|_| malformed(format!("field {} (`{raw}`) is not a number", i + 4)))?;
        if !x.is_finite() {
            return Err(malformed(format!("field {} is not finite", i + 4)));
        }
        values.push(x);
    }
    let direction = DVector::from_column_slice(&values[..d]);
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(malformed(format!(
            "direction has norm {}, expected 1",
            direction.norm()
        )));
    }
    Ok(KnowledgeTuple {
        provider: AgentId::new(fields[0].trim()),
        context: fields[1].trim().to_owned(),
        direction,
        centroid_successful: DVector::from_column_slice(&values[d..2 * d]),
        centroid_unsuccessful: DVector::from_column_slice(&values[2 * d..]),
    })
}

pub fn write_tuples<W: Write>(tuples: &[KnowledgeTuple], mut out: W) -> Result<(), CodecError> {
    for t in tuples {
        writeln!(out, "{}", encode(t)?)?;
    }
    Ok(())
}

/// Reads one tuple per non-empty line.
pub fn read_tuples<R: BufRead>(input: R) -> Result<Vec<KnowledgeTuple>, CodecError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode(&line, i + 1)?);
    }
    Ok(out)
}
