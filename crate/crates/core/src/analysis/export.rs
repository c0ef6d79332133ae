use std::path::Path;

use crate::error::{DartError, Result};
use crate::harness::csv_error;

use super::rd::LabeledStates;

fn header(d: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "class".to_string()];
    h.extend((0..d).map(|i| format!("h{i}")));
    h
}

/// One row per example and capture: step, class, then the `d` values in
/// scientific notation with 9 significant digits. An untagged capture
/// writes an empty step field.
pub fn states_to_csv(captures: &[LabeledStates]) -> Result<String> {
    let d = captures.iter().map(|s| s.d).max().unwrap_or(0);
    if let Some(bad) = captures.iter().find(|s| s.d != d && !s.is_empty()) {
        return Err(DartError::dims("export_states_csv", &[d], &[bad.d]));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(d)).map_err(csv_error)?;
    for s in captures {
        let step = s.step.map(|x| x.to_string()).unwrap_or_default();
        for (c, v) in s.classes.iter().zip(&s.vectors) {
            let mut rec = vec![step.clone(), c.to_string()];
            rec.extend(v.iter().map(|x| format!("{x:.8e}")));
            w.write_record(rec).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_states_csv(captures: &[LabeledStates], path: &Path) -> Result<()> {
    std::fs::write(path, states_to_csv(captures)?)?;
    Ok(())
}

fn field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| DartError::Validation(format!("states csv: bad {what} field {s:?}")))
}

/// Inverse of `states_to_csv`; consecutive rows with the same step form
/// one capture.
pub fn read_states_csv(text: &str) -> Result<Vec<LabeledStates>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let d = r.headers().map_err(csv_error)?.len().saturating_sub(2);
    let mut out: Vec<LabeledStates> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let step = match &rec[0] {
            "" => None,
            s => Some(field(s, "step")?),
        };
        let v = rec
            .iter()
            .skip(2)
            .map(|x| field::<f32>(x, "value"))
            .collect::<Result<Vec<_>>>()?;
        if out.last().is_none_or(|s| s.step != step) {
            out.push(LabeledStates::new(step, d));
        }
        out.last_mut().expect("pushed").push(field(&rec[1], "class")?, v)?;
    }
    Ok(out)
}
