use proptest::prelude::*;

use shapedm::contour::Point;
use shapedm::distmat::{
    edm, mirror_both, normalize, reindex, sanitize, Direction, RawMatrix, Reindexing, SedmFile, SedmRecord,
};
use shapedm::eval::{fit_logreg, metrics, FeatureTable, LogRegConfig};
use shapedm::loss::rec_loss;

fn points(n: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y)| [x, y]), n)
}

fn side() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![4usize, 8, 16])
}

fn contour() -> impl Strategy<Value = Vec<Point>> {
    side().prop_flat_map(points)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edm_is_a_valid_distance_matrix(pts in contour()) {
        let d = edm(&pts);
        let n = d.n();
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(d.get(i, j) >= 0.0);
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        if let Ok(u) = normalize(&d) {
            prop_assert!((u.norm() - 1.0).abs() < 1e-12);
            prop_assert!(u.frobenius_norm().unwrap() > 0.0);
        }
    }

    #[test]
    fn reindexing_is_a_permutation_with_inverse(pts in contour(), k in 0usize..64, rev in any::<bool>()) {
        let d = edm(&pts);
        let n = d.n();
        let dir = if rev { Direction::Reverse } else { Direction::Forward };
        let r = Reindexing::new(k % n, dir);
        let e = reindex(&d, r).unwrap();
        let mut a = d.entries().to_vec();
        let mut b = e.entries().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        // the same orbit, as a set of matrices
        let orbit: Vec<Vec<f64>> = Reindexing::enumerate(n).map(|s| reindex(&d, s).unwrap().entries().to_vec()).collect();
        prop_assert!(Reindexing::enumerate(n).all(|s| orbit.contains(&reindex(&e, s).unwrap().entries().to_vec())));
    }

    #[test]
    fn mirroring_reverses_the_travel_direction(pts in contour()) {
        let d = edm(&pts);
        let n = d.n();
        let r = reindex(&d, Reindexing::new(n - 1, Direction::Reverse)).unwrap();
        let m = mirror_both(&d);
        prop_assert_eq!(m.entries(), r.entries());
        let mm = mirror_both(&m);
        prop_assert_eq!(mm.entries(), d.entries());
    }

    #[test]
    fn sanitize_output_is_a_distance_matrix(n in side(), seed in any::<u64>()) {
        let mut state = seed;
        let raw: Vec<f64> = (0..n * n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.3
            })
            .collect();
        let s = sanitize(&RawMatrix::new(n, raw).unwrap());
        for i in 0..n {
            prop_assert_eq!(s.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(s.get(i, j) >= 0.0);
                prop_assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }

    #[test]
    fn rec_loss_is_at_most_plain_mse(pts in points(8), pred in prop::collection::vec(-0.2..0.5f64, 64)) {
        let d = normalize(&edm(&pts)).unwrap();
        let pred = RawMatrix::new(8, pred).unwrap();
        let (v, r) = rec_loss(&pred, &d).unwrap();
        let plain = pred.entries().iter().zip(d.entries()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 64.0;
        prop_assert!(v <= plain);
        let chosen = reindex(&d, r).unwrap();
        let at_argmin = pred.entries().iter().zip(chosen.entries()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 64.0;
        prop_assert!((at_argmin - v).abs() <= 1e-15 * v.max(1.0));
    }

    #[test]
    fn macro_f1_ignores_class_relabeling(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40),
        perm in Just([0usize, 1, 2]).prop_shuffle(),
    ) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let probs = vec![vec![1.0 / 3.0; 3]; t.len()];
        let a = metrics(&t, &p, &probs, 3).unwrap();
        let t2: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
        let p2: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let b = metrics(&t2, &p2, &probs, 3).unwrap();
        prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
    }
}

fn table(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> FeatureTable {
    let d = rows[0].len();
    FeatureTable::new(
        (0..rows.len()).map(|i| format!("o{i}")).collect(),
        labels,
        vec!["a".into(), "b".into(), "c".into()],
        (0..d).map(|j| format!("f{j}")).collect(),
        rows,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn test_row_order_does_not_change_metrics(
        rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 30..40),
        shift in 1usize..29,
    ) {
        let labels: Vec<usize> = (0..rows.len()).map(|i| i % 3).collect();
        let train = table(rows[..24].to_vec(), labels[..24].to_vec());
        let model = fit_logreg(&train, &LogRegConfig::default()).unwrap();
        let test_rows = rows[24..].to_vec();
        let test_labels = labels[24..].to_vec();
        let eval = |rows: &[Vec<f64>], labels: &[usize]| {
            let probs = model.predict_proba(rows);
            let pred = model.predict(rows);
            metrics(labels, &pred, &probs, 3).unwrap()
        };
        let base = eval(&test_rows, &test_labels);
        let k = shift % test_rows.len();
        let mut r2 = test_rows.clone();
        let mut l2 = test_labels.clone();
        r2.rotate_left(k);
        l2.rotate_left(k);
        let moved = eval(&r2, &l2);
        prop_assert_eq!(base.f1, moved.f1);
        prop_assert!((base.log_loss - moved.log_loss).abs() < 1e-12);
    }

    #[test]
    fn sedm_container_round_trips(pts in points(8), id in "[a-z]{1,12}") {
        let d = normalize(&edm(&pts)).unwrap();
        let file = SedmFile { n: 8, records: vec![SedmRecord::from_normalized(&id, &d).unwrap()] };
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        prop_assert_eq!(SedmFile::read_from(buf.as_slice()).unwrap(), file);
    }
}

#[test]
fn feature_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    let t = table(vec![vec![1.5, -2.0e-7], vec![0.1, 3.0], vec![7.0, 0.0]], vec![0, 1, 2]);
    t.write_csv(&path).unwrap();
    assert_eq!(FeatureTable::read_csv(&path).unwrap(), t);
}
