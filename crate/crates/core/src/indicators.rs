//! Derived social-media indicators and the stratification-mobility label.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, ScholarRecord};
use crate::stats::Matrix;

/// Canonical feature order of the analysis.
pub const FEATURE_NAMES: [&str; 9] = ["AD", "TD", "FGR", "FR", "CA", "P", "C", "PC", "AW"];

/// Weights of post density and the follower/followed ratio in composite
/// activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl CompositeWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "composite weights must be finite and non-negative (alpha={alpha}, beta={beta})"
            )));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Err(Error::InvalidArgument(
                "composite weights cannot both be zero".into(),
            ));
        }
        Ok(CompositeWeights { alpha, beta })
    }
}

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Posts per day of account existence ("TD").
pub fn post_density(post_count: u64, account_days: u64) -> Result<f64> {
    if account_days == 0 {
        return Err(Error::degenerate("post density undefined for account_days = 0"));
    }
    Ok(post_count as f64 / account_days as f64)
}

/// Follower gain per day over `interval_days` ("FGR").
pub fn follower_growth_rate(
    followers_current: u64,
    followers_historical: u64,
    interval_days: u64,
) -> Result<f64> {
    if interval_days == 0 {
        return Err(Error::degenerate(
            "follower growth rate undefined for a zero-day interval",
        ));
    }
    if followers_historical > followers_current {
        return Err(Error::degenerate(format!(
            "historical followers ({followers_historical}) exceed current followers ({followers_current})"
        )));
    }
    Ok((followers_current - followers_historical) as f64 / interval_days as f64)
}

/// Followed accounts per follower ("FR").
pub fn following_ratio(followed_count: u64, followers: u64) -> Result<f64> {
    if followers == 0 {
        return Err(Error::degenerate("following ratio undefined for zero followers"));
    }
    Ok(followed_count as f64 / followers as f64)
}

/// `alpha·td + beta·followers/followed` ("CA").
pub fn composite_activity(td: f64, followers: u64, followed: u64, w: CompositeWeights) -> Result<f64> {
    if followed == 0 {
        return Err(Error::degenerate(
            "composite activity undefined for zero followed accounts",
        ));
    }
    Ok(w.alpha * td + w.beta * (followers as f64 / followed as f64))
}

/// Mid-rank percentile of every value: `(#{v < x} + 0.5·#{v == x, other}) / n`.
pub fn percentile_rank(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let ties = (end - start - 1) as f64;
        let r = (start as f64 + 0.5 * ties) / n as f64;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// 1 (Increase) when the follower rank exceeds the h-index rank, else 0.
pub fn mobility_label(h_rank_pct: f64, follower_rank_pct: f64) -> Result<u8> {
    for (name, v) in [
        ("h_rank_pct", h_rank_pct),
        ("follower_rank_pct", follower_rank_pct),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    Ok(u8::from(follower_rank_pct - h_rank_pct > 0.0))
}

/// Rectangular table of indicator values with a binary target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    column_names: Vec<String>,
    values: Matrix,
    target: Vec<u8>,
    row_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        column_names: Vec<String>,
        values: Matrix,
        target: Vec<u8>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        if column_names.len() != values.cols() {
            return Err(Error::DimensionMismatch {
                expected: values.cols(),
                got: column_names.len(),
            });
        }
        for len in [target.len(), row_ids.len()] {
            if len != values.rows() {
                return Err(Error::DimensionMismatch {
                    expected: values.rows(),
                    got: len,
                });
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = column_names.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate column name `{dup}`")));
        }
        if let Some(pos) = values.as_slice().iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos / values.cols(), pos % values.cols());
            return Err(Error::degenerate(format!(
                "non-finite value in column {} of row {}",
                column_names[j], row_ids[i]
            )));
        }
        if let Some(bad) = target.iter().find(|&&t| t > 1) {
            return Err(Error::InvalidArgument(format!(
                "target value {bad} is not binary"
            )));
        }
        Ok(FeatureMatrix {
            column_names,
            values,
            target,
            row_ids,
        })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn target(&self) -> &[u8] {
        &self.target
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.cols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Column indices for `names`, failing on the first unknown name.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::UnknownFeature(n.clone()))
            })
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|j| self.values.column(j))
    }

    /// Sub-table restricted to rows `idx` (in that order).
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            column_names: self.column_names.clone(),
            values: self.values.select_rows(idx),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }

    /// Count of Increase (1) and Decrease (0) labels.
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.target.iter().filter(|&&t| t == 1).count();
        (ones, self.target.len() - ones)
    }

    /// CSV with header `scholar_id, <columns…>, target`. Values use the
    /// shortest round-trip float representation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["scholar_id".to_string()];
        header.extend(self.column_names.iter().cloned());
        header.push("target".into());
        w.write_record(&header)?;
        for (i, row) in self.values.iter_rows().enumerate() {
            let mut rec = vec![self.row_ids[i].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push(self.target[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<output>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<FeatureMatrix> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let h: Vec<&str> = headers.iter().map(str::trim).collect();
        if h.first() != Some(&"scholar_id") {
            return Err(Error::MissingColumn("scholar_id".into()));
        }
        if h.last() != Some(&"target") || h.len() < 3 {
            return Err(Error::MissingColumn("target".into()));
        }
        let names: Vec<String> = h[1..h.len() - 1].iter().map(|s| s.to_string()).collect();
        let p = names.len();
        let mut data = Vec::new();
        let mut target = Vec::new();
        let mut ids = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != p + 2 {
                return Err(Error::InvalidRecord {
                    row: i + 1,
                    message: format!("expected {} fields, found {}", p + 2, rec.len()),
                });
            }
            ids.push(rec[0].trim().to_string());
            for (j, name) in names.iter().enumerate() {
                let raw = rec[j + 1].trim();
                let v: f64 = raw.parse().map_err(|_| Error::BadCell {
                    row: i + 1,
                    column: name.clone(),
                    raw: raw.to_string(),
                    reason: "expected a real number".into(),
                })?;
                data.push(v);
            }
            let raw = rec[p + 1].trim();
            let t: u8 = match raw {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(Error::BadCell {
                        row: i + 1,
                        column: "target".into(),
                        raw: raw.to_string(),
                        reason: "expected 0 or 1".into(),
                    })
                }
            };
            target.push(t);
        }
        let values = Matrix::from_row_major(ids.len(), p, data)?;
        FeatureMatrix::new(names, values, target, ids)
    }
}

fn record_features(r: &ScholarRecord, w: CompositeWeights) -> Result<[f64; 9]> {
    let td = post_density(r.post_count, r.account_days)?;
    let fgr = follower_growth_rate(r.followers_current, r.followers_historical, r.interval_days())?;
    let fr = following_ratio(r.followed_count, r.followers_current)?;
    let ca = composite_activity(td, r.followers_current, r.followed_count, w)?;
    Ok([
        r.account_days as f64,
        td,
        fgr,
        fr,
        ca,
        r.publications as f64,
        r.citations as f64,
        r.per_cited,
        r.amount_weight as f64,
    ])
}

/// Builds the nine indicator columns and the mobility target.
///
/// The target compares each scholar's percentile rank on followers (the
/// platform-era proxy) against their rank on h-index (the pre-platform
/// proxy). The h-index itself is not a feature column.
pub fn build_feature_matrix(d: &Dataset, w: CompositeWeights) -> Result<FeatureMatrix> {
    if d.is_empty() {
        return Err(Error::degenerate("dataset has no records"));
    }
    let mut data = Vec::with_capacity(d.len() * FEATURE_NAMES.len());
    for r in &d.records {
        let row =
            record_features(r, w).map_err(|e| e.with_context(format!("scholar_id {}", r.scholar_id)))?;
        data.extend_from_slice(&row);
    }
    let h: Vec<f64> = d.records.iter().map(|r| r.h_index as f64).collect();
    let f: Vec<f64> = d.records.iter().map(|r| r.followers_current as f64).collect();
    let target = percentile_rank(&h)
        .into_iter()
        .zip(percentile_rank(&f))
        .map(|(hr, fr)| mobility_label(hr, fr))
        .collect::<Result<Vec<u8>>>()?;

    FeatureMatrix::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        Matrix::from_row_major(d.len(), FEATURE_NAMES.len(), data)?,
        target,
        d.records.iter().map(|r| r.scholar_id.clone()).collect(),
    )
}
