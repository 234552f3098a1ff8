//! Embedding file formats.
//!
//! PKEM (little-endian):
//!
//! ```text
//! "PKEM" | version u32 = 1 | n u32 | d u32 | C u32
//! n × ( id u64 | label u32 | clean_label u32 | d × f32 )
//! ```
//!
//! `clean_label == 0xFFFF_FFFF` means unknown. The CSV variant has a header
//! `id,label,clean_label,f0,...,f{d-1}` with an empty `clean_label` for
//! unknown; its class count is `max(label, clean_label) + 1`.

use std::io::{Read, Write};

use super::{Dataset, Example};
use crate::error::{Error, FormatError, Result};

pub const PKEM_MAGIC: [u8; 4] = *b"PKEM";
pub const PKEM_VERSION: u32 = 1;
pub const UNKNOWN_LABEL: u32 = u32::MAX;

const HEADER_LEN: u64 = 20;

pub fn write_pkem<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in u32")))
    };
    out.write_all(&PKEM_MAGIC)?;
    out.write_all(&PKEM_VERSION.to_le_bytes())?;
    out.write_all(&as_u32(dataset.len(), "record count")?.to_le_bytes())?;
    out.write_all(&as_u32(dataset.feature_dim, "feature dim")?.to_le_bytes())?;
    out.write_all(&as_u32(dataset.num_classes, "class count")?.to_le_bytes())?;
    for ex in &dataset.examples {
        out.write_all(&ex.id.to_le_bytes())?;
        out.write_all(&(ex.label as u32).to_le_bytes())?;
        let clean = ex.clean_label.map_or(UNKNOWN_LABEL, |c| c as u32);
        out.write_all(&clean.to_le_bytes())?;
        for &f in &ex.features {
            out.write_all(&(f as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pkem<R: Read>(mut input: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let found = bytes.len() as u64;
    if found < HEADER_LEN {
        return Err(FormatError::Truncated { expected: HEADER_LEN, found }.into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != PKEM_MAGIC {
        return Err(FormatError::BadMagic { found: magic, expected: PKEM_MAGIC }.into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != PKEM_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let (n, d, c) = (u32_at(8) as u64, u32_at(12) as u64, u32_at(16));
    let record_len = 16 + 4 * d;
    let expected = HEADER_LEN + n * record_len;
    if found < expected {
        return Err(FormatError::Truncated { expected, found }.into());
    }
    if found > expected {
        return Err(FormatError::TrailingBytes(found - expected).into());
    }

    let mut examples = Vec::with_capacity(n as usize);
    for (record, chunk) in bytes[HEADER_LEN as usize..].chunks_exact(record_len as usize).enumerate() {
        let id = u64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let label = u32::from_le_bytes(chunk[8..12].try_into().unwrap());
        let clean = u32::from_le_bytes(chunk[12..16].try_into().unwrap());
        let known_clean = (clean != UNKNOWN_LABEL).then_some(clean);
        for l in std::iter::once(label).chain(known_clean) {
            if l >= c {
                return Err(FormatError::LabelOutOfRange { record, label: l, classes: c }.into());
            }
        }
        let mut features = Vec::with_capacity(d as usize);
        for (index, f) in chunk[16..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(f.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFiniteFeature { record, index }.into());
            }
            features.push(v as f64);
        }
        examples.push(Example { id, features, label: label as usize, clean_label: known_clean.map(|c| c as usize) });
    }
    Dataset::new(c as usize, d as usize, examples)
}

pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string(), "clean_label".to_string()];
    header.extend((0..dataset.feature_dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for ex in &dataset.examples {
        let mut row =
            vec![ex.id.to_string(), ex.label.to_string(), ex.clean_label.map_or(String::new(), |c| c.to_string())];
        row.extend(ex.features.iter().map(|f| f.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let fixed = ["id", "label", "clean_label"];
    if header.len() < 3 || header.iter().take(3).ne(fixed) {
        return Err(FormatError::Csv(format!("expected header starting with {fixed:?}")).into());
    }
    let d = header.len() - 3;
    for (i, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{i}") {
            return Err(FormatError::Csv(format!("unexpected feature column {name:?}")).into());
        }
    }
    let parse_err = |record: usize, what: &str, v: &str| FormatError::Csv(format!("record {record}: bad {what} {v:?}"));
    let mut examples = Vec::new();
    let mut max_label = 0usize;
    for (record, row) in r.records().enumerate() {
        let row = row?;
        let id = row[0].parse::<u64>().map_err(|_| parse_err(record, "id", &row[0]))?;
        let label = row[1].parse::<usize>().map_err(|_| parse_err(record, "label", &row[1]))?;
        let clean_label = match row[2].trim() {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| parse_err(record, "clean_label", s))?),
        };
        let mut features = Vec::with_capacity(d);
        for (index, v) in row.iter().skip(3).enumerate() {
            let f = v.trim().parse::<f64>().map_err(|_| parse_err(record, "feature", v))?;
            if !f.is_finite() {
                return Err(FormatError::NonFiniteFeature { record, index }.into());
            }
            features.push(f);
        }
        max_label = max_label.max(label).max(clean_label.unwrap_or(0));
        examples.push(Example { id, features, label, clean_label });
    }
    let classes = if examples.is_empty() { 0 } else { max_label + 1 };
    Dataset::new(classes, d, examples)
}
