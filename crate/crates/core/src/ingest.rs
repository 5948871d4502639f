//! Parsing and validation of scholar records from delimited text.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scholar's observed platform and bibliometric fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScholarRecord {
    pub scholar_id: String,
    /// Days since the account was created ("AD").
    pub account_days: u64,
    pub post_count: u64,
    pub followers_current: u64,
    pub followers_historical: u64,
    pub followed_count: u64,
    /// Window for follower growth. `None` means the whole account lifetime.
    pub growth_interval_days: Option<u64>,
    /// "P"
    pub publications: u64,
    /// "C"
    pub citations: u64,
    /// "PC", average citations per paper.
    pub per_cited: f64,
    /// "AW", appearances in the corpus journals.
    pub amount_weight: u64,
    pub h_index: u64,
    pub has_professional_declaration: bool,
    pub is_science_dedicated: bool,
}

impl ScholarRecord {
    pub fn is_eligible(&self) -> bool {
        self.has_professional_declaration && self.is_science_dedicated
    }

    pub fn interval_days(&self) -> u64 {
        self.growth_interval_days.unwrap_or(self.account_days)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// Data rows read from the source, before any filtering.
    pub source_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<ScholarRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Column names used for each record field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub scholar_id: String,
    pub account_days: String,
    pub post_count: String,
    pub followers_current: String,
    pub followers_historical: String,
    pub followed_count: String,
    pub interval_days: String,
    pub publications: String,
    pub citations: String,
    pub per_cited: String,
    pub amount_weight: String,
    pub h_index: String,
    pub professional_declaration: String,
    pub science_dedicated: String,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            scholar_id: "scholar_id".into(),
            account_days: "account_days".into(),
            post_count: "post_count".into(),
            followers_current: "followers_current".into(),
            followers_historical: "followers_historical".into(),
            followed_count: "followed_count".into(),
            interval_days: "interval_days".into(),
            publications: "publications".into(),
            citations: "citations".into(),
            per_cited: "per_cited".into(),
            amount_weight: "amount_weight".into(),
            h_index: "h_index".into(),
            professional_declaration: "professional_declaration".into(),
            science_dedicated: "science_dedicated".into(),
            delimiter: b',',
        }
    }
}

const PER_CITED_REL_TOL: f64 = 1e-6;

struct Columns {
    scholar_id: usize,
    account_days: usize,
    post_count: usize,
    followers_current: usize,
    followers_historical: Option<usize>,
    followed_count: usize,
    interval_days: Option<usize>,
    publications: usize,
    citations: usize,
    per_cited: Option<usize>,
    amount_weight: usize,
    h_index: usize,
    professional_declaration: usize,
    science_dedicated: usize,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, schema: &Schema) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let req = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
        Ok(Columns {
            scholar_id: req(&schema.scholar_id)?,
            account_days: req(&schema.account_days)?,
            post_count: req(&schema.post_count)?,
            followers_current: req(&schema.followers_current)?,
            followers_historical: find(&schema.followers_historical),
            followed_count: req(&schema.followed_count)?,
            interval_days: find(&schema.interval_days),
            publications: req(&schema.publications)?,
            citations: req(&schema.citations)?,
            per_cited: find(&schema.per_cited),
            amount_weight: req(&schema.amount_weight)?,
            h_index: req(&schema.h_index)?,
            professional_declaration: req(&schema.professional_declaration)?,
            science_dedicated: req(&schema.science_dedicated)?,
        })
    }
}

struct Row<'a> {
    number: usize,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn raw(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("").trim()
    }

    fn bad(&self, column: &str, raw: &str, reason: impl Into<String>) -> Error {
        Error::BadCell {
            row: self.number,
            column: column.to_string(),
            raw: raw.to_string(),
            reason: reason.into(),
        }
    }

    fn count(&self, idx: usize, column: &str) -> Result<u64> {
        let raw = self.raw(idx);
        if raw.is_empty() {
            return Err(self.bad(column, raw, "empty cell"));
        }
        raw.parse::<u64>().map_err(|_| {
            let reason = if raw.starts_with('-') {
                "negative value; expected a non-negative integer"
            } else {
                "expected a non-negative integer"
            };
            self.bad(column, raw, reason)
        })
    }

    fn optional_count(&self, idx: Option<usize>, column: &str) -> Result<Option<u64>> {
        match idx {
            Some(i) if !self.raw(i).is_empty() => self.count(i, column).map(Some),
            _ => Ok(None),
        }
    }

    fn optional_real(&self, idx: Option<usize>, column: &str) -> Result<Option<f64>> {
        let Some(i) = idx else { return Ok(None) };
        let raw = self.raw(i);
        if raw.is_empty() {
            return Ok(None);
        }
        let v: f64 = raw
            .parse()
            .map_err(|_| self.bad(column, raw, "expected a real number"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.bad(column, raw, "expected a finite non-negative real"));
        }
        Ok(Some(v))
    }

    fn flag(&self, idx: usize, column: &str) -> Result<bool> {
        let raw = self.raw(idx);
        match raw.to_ascii_lowercase().as_str() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            _ => Err(self.bad(column, raw, "expected one of 0, 1, true, false")),
        }
    }
}

fn parse_row(row: &Row<'_>, c: &Columns, s: &Schema) -> Result<ScholarRecord> {
    let scholar_id = row.raw(c.scholar_id).to_string();
    if scholar_id.is_empty() {
        return Err(row.bad(&s.scholar_id, "", "empty scholar_id"));
    }
    let followers_current = row.count(c.followers_current, &s.followers_current)?;
    let followers_historical = row
        .optional_count(c.followers_historical, &s.followers_historical)?
        .unwrap_or(0);
    if followers_historical > followers_current {
        return Err(Error::InvalidRecord {
            row: row.number,
            message: format!(
                "followers_historical ({followers_historical}) exceeds followers_current ({followers_current})"
            ),
        });
    }
    let publications = row.count(c.publications, &s.publications)?;
    let citations = row.count(c.citations, &s.citations)?;
    let derived_pc = if publications > 0 {
        citations as f64 / publications as f64
    } else {
        0.0
    };
    let per_cited = match row.optional_real(c.per_cited, &s.per_cited)? {
        Some(pc) => {
            if publications > 0 {
                let diff = (pc - derived_pc).abs();
                if diff > PER_CITED_REL_TOL * derived_pc.abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidRecord {
                        row: row.number,
                        message: format!(
                            "per_cited {pc} disagrees with citations/publications = {derived_pc}"
                        ),
                    });
                }
            }
            pc
        }
        None => derived_pc,
    };
    Ok(ScholarRecord {
        scholar_id,
        account_days: row.count(c.account_days, &s.account_days)?,
        post_count: row.count(c.post_count, &s.post_count)?,
        followers_current,
        followers_historical,
        followed_count: row.count(c.followed_count, &s.followed_count)?,
        growth_interval_days: row.optional_count(c.interval_days, &s.interval_days)?,
        publications,
        citations,
        per_cited,
        amount_weight: row.count(c.amount_weight, &s.amount_weight)?,
        h_index: row.count(c.h_index, &s.h_index)?,
        has_professional_declaration: row.flag(c.professional_declaration, &s.professional_declaration)?,
        is_science_dedicated: row.flag(c.science_dedicated, &s.science_dedicated)?,
    })
}

/// Reads records from any reader. `source` is recorded as provenance.
pub fn parse_reader<R: Read>(reader: R, schema: &Schema, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let columns = Columns::resolve(&headers, schema)?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = Row {
            number: i + 1,
            record: &rec,
        };
        let parsed = parse_row(&row, &columns, schema)?;
        if !seen.insert(parsed.scholar_id.clone()) {
            return Err(Error::DuplicateId {
                row: row.number,
                id: parsed.scholar_id,
            });
        }
        records.push(parsed);
    }
    let source_rows = records.len();
    Ok(Dataset {
        records,
        provenance: Provenance {
            source: source.to_string(),
            source_rows,
        },
    })
}

/// Parses a delimited file with a header row. Row numbers in errors count
/// data rows from 1.
pub fn parse_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_reader(std::io::BufReader::new(file), schema, &path.display().to_string())
}

/// Keeps records carrying both eligibility flags, in their original order.
pub fn filter_eligible(d: &Dataset) -> Dataset {
    Dataset {
        records: d.records.iter().filter(|r| r.is_eligible()).cloned().collect(),
        provenance: d.provenance.clone(),
    }
}

/// Writes records with every schema column present, so the output parses
/// back to the same dataset.
pub fn write_dataset<W: Write>(d: &Dataset, schema: &Schema, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(schema.delimiter)
        .from_writer(out);
    w.write_record([
        &schema.scholar_id,
        &schema.account_days,
        &schema.post_count,
        &schema.followers_current,
        &schema.followers_historical,
        &schema.followed_count,
        &schema.interval_days,
        &schema.publications,
        &schema.citations,
        &schema.per_cited,
        &schema.amount_weight,
        &schema.h_index,
        &schema.professional_declaration,
        &schema.science_dedicated,
    ])?;
    for r in &d.records {
        w.write_record([
            r.scholar_id.clone(),
            r.account_days.to_string(),
            r.post_count.to_string(),
            r.followers_current.to_string(),
            r.followers_historical.to_string(),
            r.followed_count.to_string(),
            r.growth_interval_days.map(|v| v.to_string()).unwrap_or_default(),
            r.publications.to_string(),
            r.citations.to_string(),
            r.per_cited.to_string(),
            r.amount_weight.to_string(),
            r.h_index.to_string(),
            u8::from(r.has_professional_declaration).to_string(),
            u8::from(r.is_science_dedicated).to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}
