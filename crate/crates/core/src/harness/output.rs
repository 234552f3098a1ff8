use std::io::{Read, Write};

use super::{CandidateRecord, EvalSplit, RunResult, SelectedRecord};
use crate::error::{FormatError, Result};
use crate::selection::UsageCounts;

const CANDIDATE_COLUMNS: [&str; 7] = ["step", "id", "score", "percentile", "accepted", "label", "raw_score"];

/// `step,id,score,percentile,accepted,label,raw_score`
pub fn write_candidates_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CANDIDATE_COLUMNS)?;
    for c in &result.candidates {
        w.write_record([
            c.step.to_string(),
            c.id.to_string(),
            c.score.to_string(),
            c.percentile.to_string(),
            u8::from(c.accepted).to_string(),
            c.label.to_string(),
            c.raw_score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `update,split,accuracy`
pub fn write_accuracy_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["update", "split", "accuracy"])?;
    for p in &result.accuracy_curve {
        let split = match p.split {
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        };
        w.write_record([p.update.to_string(), split.to_string(), p.accuracy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `id,label,step` with an empty step for the warm start.
pub fn write_selected_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "label", "step"])?;
    for s in &result.selected {
        w.write_record([s.id.to_string(), s.label.to_string(), s.step.map_or(String::new(), |t| t.to_string())])?;
    }
    w.flush()?;
    Ok(())
}

/// `id,count`
pub fn write_usage_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "count"])?;
    for (id, count) in result.usage.iter() {
        w.write_record([id.to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn check_header<R: Read>(r: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = r.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(FormatError::Csv(format!("expected header {expected:?}, found {header:?}")).into());
    }
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let v = row.get(i).unwrap_or("");
    v.parse().map_err(|_| FormatError::Csv(format!("bad {name} {v:?}")).into())
}

pub fn read_candidates_csv<R: Read>(input: R) -> Result<Vec<CandidateRecord>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &CANDIDATE_COLUMNS)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push(CandidateRecord {
            step: field(&row, 0, "step")?,
            id: field(&row, 1, "id")?,
            score: field(&row, 2, "score")?,
            percentile: field(&row, 3, "percentile")?,
            accepted: field::<u8>(&row, 4, "accepted")? != 0,
            label: field(&row, 5, "label")?,
            raw_score: field(&row, 6, "raw_score")?,
        });
    }
    Ok(out)
}

pub fn read_selected_csv<R: Read>(input: R) -> Result<Vec<SelectedRecord>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &["id", "label", "step"])?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let step = match row.get(2).unwrap_or("") {
            "" => None,
            _ => Some(field(&row, 2, "step")?),
        };
        out.push(SelectedRecord { id: field(&row, 0, "id")?, label: field(&row, 1, "label")?, step });
    }
    Ok(out)
}

pub fn read_usage_csv<R: Read>(input: R) -> Result<UsageCounts> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &["id", "count"])?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push((field(&row, 0, "id")?, field(&row, 1, "count")?));
    }
    Ok(out.into_iter().collect())
}
