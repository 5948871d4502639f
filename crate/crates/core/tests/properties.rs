use proptest::prelude::*;

use stratlogit::attribution::{linear_shap, lowess};
use stratlogit::evaluate::{make_split, roc_auc, ConfusionMatrix};
use stratlogit::indicators::{percentile_rank, FeatureMatrix};
use stratlogit::ingest::{parse_reader, write_dataset, Dataset, Provenance, Schema, ScholarRecord};
use stratlogit::logit::{fit_logistic, DesignMatrix, LogitOptions};
use stratlogit::network::{build_graph, edge_betweenness, girvan_newman, modularity, CoauthorRecord};
use stratlogit::stats::{pearson_matrix, vif, Matrix};

fn matrix(n: usize, p: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, n * p).prop_map(move |v| Matrix::from_row_major(n, p, v).unwrap())
}

fn design() -> impl Strategy<Value = (Matrix, Vec<u8>)> {
    (12usize..40, 1usize..4).prop_flat_map(|(n, p)| (matrix(n, p), prop::collection::vec(0u8..2, n)))
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

/// Fits or returns `None` on the documented degenerate errors.
fn try_fit(x: &Matrix, y: &[u8]) -> Option<stratlogit::logit::LogitFit> {
    let d = DesignMatrix::new(x, y.to_vec(), names(x.cols())).ok()?;
    fit_logistic(&d, &LogitOptions::default())
        .ok()
        .filter(|f| f.converged)
}

fn edges() -> impl Strategy<Value = Vec<CoauthorRecord>> {
    prop::collection::vec((0u8..10, 0u8..10, 1u8..4), 1..30).prop_map(|v| {
        v.into_iter()
            .map(|(a, b, w)| CoauthorRecord {
                author_a: format!("a{a}"),
                author_b: format!("a{b}"),
                weight: w as f64,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn percentile_ranks_are_bounded_and_sum_to_half_n_minus_one(v in prop::collection::vec(0u32..20, 1..60)) {
        let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
        let r = percentile_rank(&x);
        prop_assert!(r.iter().all(|&p| (0.0..1.0).contains(&p)));
        let expected = (x.len() as f64 - 1.0) / 2.0;
        prop_assert!((r.iter().sum::<f64>() - expected).abs() < 1e-9);
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] { prop_assert!(r[i] < r[j]); }
            }
        }
    }

    #[test]
    fn fit_statistics_are_coherent((x, y) in design()) {
        if let Some(f) = try_fit(&x, &y) {
            prop_assert!(f.llr_stat >= -1e-9);
            prop_assert!((-1e-12..=1.0).contains(&f.pseudo_r2));
            prop_assert!(f.log_lik <= 0.0);
            prop_assert!(f.log_lik >= f.log_lik_null - 1e-9);
            prop_assert!(f.std_err.iter().all(|s| s.is_finite() && *s > 0.0));
            prop_assert!(f.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
    }

    #[test]
    fn flipping_labels_negates_coefficients((x, y) in design()) {
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        if let (Some(a), Some(b)) = (try_fit(&x, &y), try_fit(&x, &flipped)) {
            for (ca, cb) in a.coef.iter().zip(&b.coef) {
                prop_assert!((ca + cb).abs() < 1e-6 * ca.abs().max(1.0));
            }
            prop_assert!((a.log_lik - b.log_lik).abs() < 1e-9 * a.log_lik.abs().max(1.0));
        }
    }

    #[test]
    fn conflicting_duplicate_pair_costs_two_ln_two((x, y) in design(), pick in 0usize..1000) {
        if let Some(f) = try_fit(&x, &y) {
            let i = pick % x.rows();
            let mut rows: Vec<Vec<f64>> = x.iter_rows().map(|r| r.to_vec()).collect();
            rows.push(x.row(i).to_vec());
            rows.push(x.row(i).to_vec());
            let mut y2 = y.clone();
            y2.extend([0, 1]);
            if let Some(g) = try_fit(&Matrix::from_rows(&rows).unwrap(), &y2) {
                prop_assert!(g.log_lik <= f.log_lik - 2.0 * std::f64::consts::LN_2 + 1e-7);
            }
        }
    }

    #[test]
    fn auc_is_bounded_and_antisymmetric(
        scores in prop::collection::vec(0u8..8, 2..50),
        labels in prop::collection::vec(0u8..2, 2..50),
    ) {
        let n = scores.len().min(labels.len());
        let s: Vec<f64> = scores[..n].iter().map(|&v| v as f64).collect();
        let mut l = labels[..n].to_vec();
        l[0] = 0;
        l[1] = 1;
        let a = roc_auc(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.auc));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let b = roc_auc(&neg, &l).unwrap();
        prop_assert!((a.auc + b.auc - 1.0).abs() < 1e-12);
        prop_assert!(a.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
    }

    #[test]
    fn confusion_matrix_partitions_rows(p in prop::collection::vec(0u8..2, 1..40), a in prop::collection::vec(0u8..2, 1..40)) {
        let n = p.len().min(a.len());
        let cm = ConfusionMatrix::from_predictions(&p[..n], &a[..n]).unwrap();
        prop_assert_eq!(cm.total(), n);
    }

    #[test]
    fn split_is_a_deterministic_partition(n in 2usize..300, frac in 0.05f64..0.95, seed in 0u64..1000) {
        let train = (frac * n as f64).round() as usize;
        if train == 0 || train == n {
            prop_assert!(make_split(n, frac, seed).is_err());
            return Ok(());
        }
        let s = make_split(n, frac, seed).unwrap();
        let mut all: Vec<usize> = s.train_indices.iter().chain(&s.val_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.train_indices.len(), train);
        prop_assert_eq!(make_split(n, frac, seed).unwrap(), s);
    }

    #[test]
    fn correlation_and_vif_bounds(x in (30usize..60, 2usize..5).prop_flat_map(|(n, p)| matrix(n, p))) {
        let nm = names(x.cols());
        let c = pearson_matrix(&nm, &x).unwrap();
        for i in 0..x.cols() {
            prop_assert!((c.r[(i, i)] - 1.0).abs() < 1e-12);
            for j in 0..x.cols() {
                prop_assert!(c.r[(i, j)].abs() <= 1.0);
                prop_assert_eq!(c.r[(i, j)], c.r[(j, i)]);
            }
        }
        if let Ok(v) = vif(&nm, &x) {
            prop_assert!(v.iter().all(|&f| f >= 1.0 - 1e-12));
        }
    }

    #[test]
    fn shap_columns_average_to_zero_over_their_background((x, y) in design()) {
        if let Some(f) = try_fit(&x, &y) {
            let means: Vec<f64> = (0..x.cols()).map(|j| x.column(j).iter().sum::<f64>() / x.rows() as f64).collect();
            let ids: Vec<String> = (0..x.rows()).map(|i| i.to_string()).collect();
            let s = linear_shap(&f, &x, &means, &ids, "m").unwrap();
            for j in 0..x.cols() {
                let avg = s.values.column(j).iter().sum::<f64>() / x.rows() as f64;
                prop_assert!(avg.abs() < 1e-9 * f.coef[j + 1].abs().max(1.0) * 10.0);
            }
        }
    }

    #[test]
    fn lowess_is_order_invariant_and_affine_in_y(
        pts in prop::collection::vec((0u16..500, -50.0f64..50.0), 6..60),
        frac in 0.3f64..1.0,
        shift in -5.0f64..5.0,
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0 as f64 / 10.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        prop_assume!({ let mut d = x.clone(); d.sort_by(f64::total_cmp); d.dedup(); d.len() >= 2 });
        let a = lowess(&x, &y, frac, 0).unwrap();
        let (rx, ry): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).rev().map(|(a, b)| (*a, *b)).unzip();
        let b = lowess(&rx, &ry, frac, 0).unwrap();
        prop_assert_eq!(&a.points, &b.points);
        let ys: Vec<f64> = y.iter().map(|v| 2.0 * v + shift).collect();
        let c = lowess(&x, &ys, frac, 0).unwrap();
        for (p, q) in a.points.iter().zip(&c.points) {
            prop_assert!((2.0 * p.smoothed + shift - q.smoothed).abs() < 1e-8);
        }
    }

    #[test]
    fn graph_invariants(recs in edges()) {
        let g = build_graph(&recs).unwrap();
        let self_loops = recs.iter().filter(|r| r.author_a == r.author_b).count();
        prop_assert_eq!(g.dropped_self_loops(), self_loops);
        let w: f64 = recs.iter().filter(|r| r.author_a != r.author_b).map(|r| r.weight).sum();
        prop_assert!((g.total_weight() - w).abs() < 1e-12);
        if g.n_edges() == 0 {
            prop_assert!(girvan_newman(&g, None).is_err());
            return Ok(());
        }

        // Σ betweenness = Σ over connected pairs of their hop distance.
        let n = g.n_nodes();
        let mut dist_sum = 0.0;
        for s in 0..n {
            let mut d = vec![usize::MAX; n];
            d[s] = 0;
            let mut q = std::collections::VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for &(u, _) in g.neighbours(v) {
                    if d[u] == usize::MAX { d[u] = d[v] + 1; q.push_back(u); }
                }
            }
            dist_sum += d.iter().skip(s + 1).filter(|&&x| x != usize::MAX).map(|&x| x as f64).sum::<f64>();
        }
        let b: f64 = edge_betweenness(&g).iter().sum();
        prop_assert!((b - dist_sum).abs() < 1e-9);

        let gn = girvan_newman(&g, None).unwrap();
        prop_assert!(gn.dendrogram.windows(2).all(|w| w[1].n_communities >= w[0].n_communities));
        prop_assert!(gn.steps.windows(2).all(|w| w[1].components >= w[0].components));
        for p in gn.dendrogram.iter().chain([&gn.best]) {
            prop_assert_eq!(p.assignment.len(), n);
            prop_assert!(p.n_communities <= n);
            prop_assert!((-0.5..=1.0).contains(&p.modularity));
            prop_assert!(gn.best.modularity >= p.modularity);
        }
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let q = modularity(&g, &labels).unwrap();
        prop_assert!((-0.5..=1.0).contains(&q));
    }

    #[test]
    fn dataset_csv_round_trip(rows in prop::collection::vec((1u64..5000, 0u64..900, 1u64..900, 1u64..900, 0u64..50, 0u64..900, 0u64..40, any::<bool>()), 1..20)) {
        let records: Vec<ScholarRecord> = rows.iter().enumerate().map(|(i, r)| ScholarRecord {
            scholar_id: format!("id{i}"),
            account_days: r.0,
            post_count: r.1,
            followers_current: r.2,
            followers_historical: r.2 / 2,
            followed_count: r.3,
            growth_interval_days: if r.7 { Some(r.0) } else { None },
            publications: r.4,
            citations: r.5,
            per_cited: if r.4 == 0 { 0.0 } else { r.5 as f64 / r.4 as f64 },
            amount_weight: 2,
            h_index: r.6,
            has_professional_declaration: r.7,
            is_science_dedicated: true,
        }).collect();
        let d = Dataset { records, provenance: Provenance { source: "mem".into(), source_rows: rows.len() } };
        let mut buf = Vec::new();
        write_dataset(&d, &Schema::default(), &mut buf).unwrap();
        let back = parse_reader(buf.as_slice(), &Schema::default(), "mem").unwrap();
        prop_assert_eq!(back.records, d.records);
    }

    #[test]
    fn feature_csv_round_trip_is_exact(x in matrix(5, 3), y in prop::collection::vec(0u8..2, 5)) {
        let m = FeatureMatrix::new(names(3), x, y, (0..5).map(|i| format!("r{i}")).collect()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        prop_assert_eq!(FeatureMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }
}
