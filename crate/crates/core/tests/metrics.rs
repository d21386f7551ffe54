mod common;

use bip_core::{
    bip_metrics, calibrate_threshold, evaluate_pairs, fit_pca, inter_sep_rate, non_collision_rate, provision,
    sample_uniform_sphere, AllocConfig, EmbeddingMatrix, Error, Gallery, Pair, PairList, Protocol, ThresholdMode,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair(a: usize, b: usize, genuine: bool, fold: Option<u32>) -> Pair {
    Pair { a, b, genuine, fold }
}

/// Two tight clusters; genuine pairs stay inside one cluster.
fn two_cluster_pairs(n_pairs: usize, folds: u32, seed: u64) -> (EmbeddingMatrix, PairList) {
    let g = common::vmf_gallery(2, 60, 16, 40.0, seed);
    let labels: Vec<usize> = (0..120).map(|i| i / 60).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n_pairs)
        .map(|i| {
            let genuine = i % 2 == 0;
            let a = rng.gen_range(0..120);
            let b = loop {
                let b = rng.gen_range(0..120);
                if b != a && (labels[a] == labels[b]) == genuine {
                    break b;
                }
            };
            pair(a, b, genuine, (folds > 0).then(|| i as u32 % folds))
        })
        .collect();
    (g.centroids, PairList::new(pairs))
}

fn direct_confusion(m: &EmbeddingMatrix, pairs: &PairList, theta: f64) -> (f64, f64) {
    let (mut right, mut fa, mut imp) = (0usize, 0usize, 0usize);
    for p in &pairs.pairs {
        let s = common::dot(m.row(p.a), m.row(p.b));
        let accept = s >= theta;
        if accept == p.genuine {
            right += 1;
        }
        if !p.genuine {
            imp += 1;
            if accept {
                fa += 1;
            }
        }
    }
    (right as f64 / pairs.pairs.len() as f64, fa as f64 / imp as f64)
}

#[test]
fn provisioned_sets_score_full_marks() {
    let g = common::vmf_gallery(40, 10, 64, 20.0, 31);
    let pca = fit_pca(&g).unwrap();
    let (v, _) = provision(&g, &pca, &AllocConfig { seed: 9, ..AllocConfig::default() }, 500).unwrap();
    let m = bip_metrics(&v, &g, 0.391).unwrap();
    assert_eq!((m.non_collision_pct, m.inter_sep_pct), (100.0, 100.0));
    assert_eq!((m.gallery_violations, m.pair_violations), (0, 0));
    assert_eq!((m.n_virtual, m.n_gallery), (500, 400));
    assert!(m.to_string().contains("100.00"));
}

#[test]
fn one_gallery_copy_in_ten() {
    let u = sample_uniform_sphere(64, 10, 4).unwrap();
    let g = Gallery::unlabeled(EmbeddingMatrix::new(64, u.row(0).to_vec()).unwrap(), "g");
    let mut rows: Vec<f32> = Vec::new();
    rows.extend_from_slice(u.row(0));
    // nine rows orthogonal to the copied one
    for k in 1..10 {
        let mut r = vec![0.0f64; 64];
        let c = u.row(0);
        r[k] = 1.0;
        let p = c[k] as f64;
        let mut x: Vec<f64> = r.iter().zip(c).map(|(a, b)| a - p * *b as f64).collect();
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= n);
        rows.extend(x.iter().map(|&v| v as f32));
    }
    let v = common::virtual_set(EmbeddingMatrix::from_raw(64, rows).unwrap());
    assert!((non_collision_rate(&v, &g, 0.391).unwrap() - 90.0).abs() < 1e-12);
}

#[test]
fn repeated_vector_fails_one_pair_in_three() {
    let v = common::virtual_set(common::unit_rows(2, &[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]));
    assert!((inter_sep_rate(&v, 0.391) - 66.67).abs() < 0.005);
    let single = common::virtual_set(common::unit_rows(2, &[vec![1.0, 0.0]]));
    assert_eq!(inter_sep_rate(&single, 0.391), 100.0);
}

#[test]
fn calibration_picks_the_order_statistic() {
    let s: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
    // 95 of the scores are >= the 6th-smallest; the 5th-smallest admits 96
    let theta = calibrate_threshold(&s, 0.95).unwrap();
    assert_eq!(theta, 0.06);
    assert_eq!(s.iter().filter(|&&x| x >= theta).count(), 95);
    assert_eq!(calibrate_threshold(&s, 1.0).unwrap(), 0.01);
    assert_eq!(calibrate_threshold(&[0.9; 100], 0.95).unwrap(), 0.9);
    assert!(matches!(calibrate_threshold(&[], 0.5), Err(Error::EmptyScores)));
    assert!(calibrate_threshold(&s, 0.0).is_err());
}

#[test]
fn identical_genuine_pairs_are_all_accepted() {
    let m = common::unit_rows(3, &[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]]);
    let pl = PairList::new(vec![pair(0, 0, true, None), pair(1, 1, true, None)]);
    let r = evaluate_pairs(&m, &m, &pl, ThresholdMode::Fixed(0.999), Protocol::RealReal).unwrap();
    assert_eq!(r.accuracy, Some(1.0));
    assert_eq!(r.far, None);
}

#[test]
fn orthogonal_populations_have_zero_far() {
    let a = common::unit_rows(4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
    let b = common::unit_rows(4, &[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]);
    let pl = PairList::new((0..2).flat_map(|i| (0..2).map(move |j| pair(i, j, false, None))).collect());
    let r = evaluate_pairs(&a, &b, &pl, ThresholdMode::Fixed(0.391), Protocol::RealVirtual).unwrap();
    assert_eq!(r.far, Some(0.0));
    assert_eq!(r.accuracy, None);
    assert_eq!((r.n_pairs, r.n_genuine, r.n_impostor), (4, 0, 4));
}

#[test]
fn fixed_threshold_matches_confusion_oracle() {
    let (m, pl) = two_cluster_pairs(600, 0, 3);
    for theta in [-1.0, 0.0, 0.2, 0.391, 0.6, 0.9, 1.0 + 1e-9] {
        let r = evaluate_pairs(&m, &m, &pl, ThresholdMode::Fixed(theta), Protocol::RealReal).unwrap();
        let (acc, far) = direct_confusion(&m, &pl, theta);
        assert!((r.accuracy.unwrap() - acc).abs() < 1e-15, "theta={theta}");
        assert!((r.far.unwrap() - far).abs() < 1e-15);
    }
    let all = evaluate_pairs(&m, &m, &pl, ThresholdMode::Fixed(-1.0), Protocol::RealReal).unwrap();
    assert_eq!(all.accuracy.unwrap(), 0.5);
    assert_eq!(all.far.unwrap(), 1.0);
    let none = evaluate_pairs(&m, &m, &pl, ThresholdMode::Fixed(1.0 + 1e-9), Protocol::RealReal).unwrap();
    assert_eq!(none.accuracy.unwrap(), 0.5);
    assert_eq!(none.far.unwrap(), 0.0);
}

#[test]
fn folded_calibration_matches_leave_one_fold_out_oracle() {
    let (m, pl) = two_cluster_pairs(600, 10, 8);
    let r = evaluate_pairs(&m, &m, &pl, ThresholdMode::Folded { target_tar: 0.95 }, Protocol::VirtualVirtual).unwrap();
    let folds = r.per_fold.as_ref().unwrap();
    assert_eq!(folds.len(), 10);
    let (mut right, mut total) = (0usize, 0usize);
    for f in folds {
        let mut train: Vec<f64> = pl
            .pairs
            .iter()
            .filter(|p| p.genuine && p.fold != Some(f.fold))
            .map(|p| common::dot(m.row(p.a), m.row(p.b)))
            .collect();
        train.sort_by(|a, b| b.partial_cmp(a).unwrap());
        // the k-th largest, k = ceil(0.95 n)
        let k = (0.95 * train.len() as f64 - 1e-9).ceil() as usize;
        assert_eq!(f.threshold, train[k - 1]);
        let test: Vec<&Pair> = pl.pairs.iter().filter(|p| p.fold == Some(f.fold)).collect();
        assert_eq!(f.n_pairs, test.len());
        for p in test {
            let ok = (common::dot(m.row(p.a), m.row(p.b)) >= f.threshold) == p.genuine;
            right += ok as usize;
            total += 1;
        }
    }
    assert_eq!(total, 600);
    assert!((r.accuracy.unwrap() - right as f64 / 600.0).abs() < 1e-15);
}

#[test]
fn pair_list_errors() {
    let m = common::unit_rows(2, &[vec![1.0, 0.0]]);
    let pl = PairList::new(vec![pair(0, 3, true, None)]);
    assert!(matches!(
        evaluate_pairs(&m, &m, &pl, ThresholdMode::Fixed(0.5), Protocol::RealReal),
        Err(Error::IndexOutOfRange { index: 3, len: 1 })
    ));
    let pl = PairList::new(vec![pair(0, 0, true, None)]);
    assert!(matches!(
        evaluate_pairs(&m, &m, &pl, ThresholdMode::Folded { target_tar: 0.95 }, Protocol::RealReal),
        Err(Error::MissingFolds)
    ));
}

#[test]
fn pair_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pairs.csv");
    let pl = PairList::new(vec![pair(0, 1, true, Some(0)), pair(2, 3, false, Some(9))]);
    pl.write_csv(&p).unwrap();
    assert_eq!(PairList::read_csv(&p).unwrap(), pl);

    std::fs::write(&p, "4,5,I\n6,7,G,\n").unwrap();
    let back = PairList::read_csv(&p).unwrap();
    assert_eq!(back.pairs, vec![pair(4, 5, false, None), pair(6, 7, true, None)]);
    assert!(!back.has_folds());

    std::fs::write(&p, "1,2,X,0\n").unwrap();
    assert!(matches!(PairList::read_csv(&p), Err(Error::PairList(_))));
}

proptest! {
    #[test]
    fn inter_sep_ignores_row_order(seed in 0u64..1000, n in 2usize..40, tau in 0.0f64..0.9) {
        let u = sample_uniform_sphere(6, n, seed).unwrap();
        let mut rows: Vec<Vec<f64>> = u.rows().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let a = inter_sep_rate(&common::virtual_set(EmbeddingMatrix::from_f64_rows(6, &rows).unwrap()), tau);
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = inter_sep_rate(&common::virtual_set(EmbeddingMatrix::from_f64_rows(6, &rows).unwrap()), tau);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn far_does_not_rise_with_threshold(seed in 0u64..50, t1 in -1.0f64..1.0, dt in 0.0f64..1.0) {
        let (m, pl) = two_cluster_pairs(100, 0, seed);
        let f1 = evaluate_pairs(&m, &m, &pl, ThresholdMode::Fixed(t1), Protocol::RealReal).unwrap().far.unwrap();
        let f2 = evaluate_pairs(&m, &m, &pl, ThresholdMode::Fixed(t1 + dt), Protocol::RealReal).unwrap().far.unwrap();
        prop_assert!(f2 <= f1);
    }

    #[test]
    fn calibrated_threshold_reaches_target(scores in prop::collection::vec(-1.0f64..1.0, 1..300), tar in 0.01f64..=1.0) {
        let theta = calibrate_threshold(&scores, tar).unwrap();
        let n = scores.len() as f64;
        let hit = scores.iter().filter(|&&s| s >= theta).count() as f64;
        prop_assert!(hit / n >= tar - 1e-9);
        // any larger score would fall short
        let next = scores.iter().cloned().filter(|&s| s > theta).fold(f64::INFINITY, f64::min);
        if next.is_finite() {
            let hit2 = scores.iter().filter(|&&s| s >= next).count() as f64;
            prop_assert!(hit2 / n < tar - 1e-9 || hit2 / n < tar);
        }
    }
}
