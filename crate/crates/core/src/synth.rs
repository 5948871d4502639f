//! Seeded synthetic scholar cohorts.
//!
//! Real scholar panels are not redistributable, so tests and examples run
//! on generated cohorts with heavy-tailed indicators. Follower counts are
//! swapped between scholars until the mobility label hits the requested
//! number of Increase cases.

use rand::RngExt;
use rand_distr::{Distribution, LogNormal, Normal};
use rand_pcg::Pcg32;

use crate::error::{Error, Result};
use crate::indicators::{mobility_label, percentile_rank};
use crate::ingest::{Dataset, Provenance, ScholarRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSpec {
    pub n: usize,
    pub increases: usize,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n: 459,
            increases: 226,
            seed: 20240601,
        }
    }
}

const MAX_SWEEPS: usize = 200_000;

fn lognormal(mu: f64, sigma: f64) -> LogNormal<f64> {
    LogNormal::new(mu, sigma).expect("valid lognormal parameters")
}

fn increases(records: &[ScholarRecord]) -> usize {
    let h: Vec<f64> = records.iter().map(|r| r.h_index as f64).collect();
    let f: Vec<f64> = records.iter().map(|r| r.followers_current as f64).collect();
    percentile_rank(&h)
        .into_iter()
        .zip(percentile_rank(&f))
        .filter(|&(hr, fr)| mobility_label(hr, fr).unwrap_or(0) == 1)
        .count()
}

pub fn synthetic_cohort(spec: CohortSpec) -> Result<Dataset> {
    if spec.n < 2 || spec.increases >= spec.n {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {} increases among {} scholars",
            spec.increases, spec.n
        )));
    }
    let mut rng = Pcg32::new(spec.seed, 7);
    let std = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let account_days: u64 = rng.random_range(222..=6127);
        let activity: f64 = std.sample(&mut rng);
        let td = (lognormal(-2.6, 1.6).sample(&mut rng) * (0.6 * activity).exp()).min(125.0);
        let post_count = (td * account_days as f64).round() as u64;

        let publications = if rng.random::<f64>() < 0.05 {
            0
        } else {
            lognormal(1.4, 1.3).sample(&mut rng).round().max(1.0) as u64
        };
        let citations = if publications == 0 {
            0
        } else {
            (publications as f64 * lognormal(2.0, 1.3).sample(&mut rng)).round() as u64
        };
        let h_cap = (citations as f64).sqrt().floor() as u64;
        let h_index = ((h_cap as f64) * rng.random_range(0.3..1.0)).round() as u64;
        let h_index = h_index.min(publications);
        let amount_weight = 2 + lognormal(0.0, 1.1).sample(&mut rng).floor() as u64;

        let reach = 5.3 + 0.9 * activity + 0.15 * (amount_weight as f64).ln() + 0.3 * std.sample(&mut rng);
        let followers_current = lognormal(reach, 1.2).sample(&mut rng).round().max(1.0) as u64;
        let ratio = lognormal(-0.1, 1.0).sample(&mut rng);
        let followed_count = ((followers_current as f64) * ratio).round().max(1.0) as u64;

        records.push(ScholarRecord {
            scholar_id: format!("S{:04}", i + 1),
            account_days,
            post_count,
            followers_current,
            followers_historical: 0,
            followed_count,
            growth_interval_days: None,
            publications,
            citations,
            per_cited: if publications == 0 {
                0.0
            } else {
                citations as f64 / publications as f64
            },
            amount_weight,
            h_index,
            has_professional_declaration: true,
            is_science_dedicated: true,
        });
    }

    let mut count = increases(&records);
    let mut sweeps = 0;
    while count != spec.increases {
        sweeps += 1;
        if sweeps > MAX_SWEEPS {
            return Err(Error::Invariant("label balancing did not converge".into()));
        }
        let i = rng.random_range(0..spec.n);
        let j = rng.random_range(0..spec.n);
        if i == j {
            continue;
        }
        swap_reach(&mut records, i, j);
        let next = increases(&records);
        if next.abs_diff(spec.increases) < count.abs_diff(spec.increases) {
            count = next;
        } else {
            swap_reach(&mut records, i, j);
        }
    }

    Ok(Dataset {
        provenance: Provenance {
            source: format!("synthetic cohort (n={}, seed={})", spec.n, spec.seed),
            source_rows: spec.n,
        },
        records,
    })
}

fn swap_reach(records: &mut [ScholarRecord], i: usize, j: usize) {
    let fi = (records[i].followers_current, records[i].followed_count);
    let fj = (records[j].followers_current, records[j].followed_count);
    (records[i].followers_current, records[i].followed_count) = fj;
    (records[j].followers_current, records[j].followed_count) = fi;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::{build_feature_matrix, CompositeWeights};

    #[test]
    fn default_cohort_shape() {
        let d = synthetic_cohort(CohortSpec::default()).unwrap();
        assert_eq!(d.len(), 459);
        let m = build_feature_matrix(&d, CompositeWeights::default()).unwrap();
        assert_eq!(m.class_counts(), (226, 233));
    }

    #[test]
    fn deterministic() {
        let spec = CohortSpec {
            n: 60,
            increases: 25,
            seed: 3,
        };
        assert_eq!(synthetic_cohort(spec).unwrap(), synthetic_cohort(spec).unwrap());
    }
}
