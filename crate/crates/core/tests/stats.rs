mod common;

use bip_core::capacity::{chi2_quantile, half_chi2_quantile, prefix_len};
use bip_core::special::regularized_lower_gamma;
use bip_core::{
    acceptance_probability_model, count_collisions, exact_poisson_ci, expected_collisions, open_world_stress,
    plant_collisions, poisson_mle, poisson_pmf, zero_collision_bound, CollisionStats, Error, Gallery, VirtualSet,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Gamma(k) CDF for integer k via the Poisson tail identity.
fn gamma_cdf_integer(k: u32, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k {
        term *= x / j as f64;
        sum += term;
    }
    1.0 - (-x).exp() * sum
}

fn orthogonal_pair() -> (VirtualSet, Gallery) {
    let v = common::virtual_set(common::unit_rows(4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]));
    let g = Gallery::unlabeled(common::unit_rows(4, &[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]), "t");
    (v, g)
}

fn uniform_virtuals(n: usize, dim: usize, seed: u64) -> VirtualSet {
    // well-separated rows: greedy filter of uniform draws at 0.391
    let raw = bip_core::sample_uniform_sphere(dim, n * 3, seed).unwrap();
    let mut keep: Vec<Vec<f64>> = Vec::new();
    for r in raw.rows() {
        let r64: Vec<f64> = r.iter().map(|&x| x as f64).collect();
        if keep.iter().all(|k| k.iter().zip(&r64).map(|(a, b)| a * b).sum::<f64>() < 0.391) {
            keep.push(r64);
        }
        if keep.len() == n {
            break;
        }
    }
    assert_eq!(keep.len(), n);
    common::virtual_set(common::unit_rows(dim, &keep))
}

#[test]
fn mle_examples() {
    assert!(rel(poisson_mle(1e6, 180000.0, 3).unwrap(), 6.0e10) < 1e-15);
    assert_eq!(poisson_mle(7.0, 3.0, 21).unwrap(), 1.0);
    assert!(matches!(poisson_mle(1e6, 1.0, 0), Err(Error::ZeroCollisions)));
}

#[test]
fn interval_table_values() {
    let nl = 1.8e11;
    // half of chi2_{2,0.975} = 7.378 / 2
    let (lo, hi) = exact_poisson_ci(1e6, 180000.0, 0, 0.95).unwrap();
    assert!(rel(nl / lo, 3.689) < 1e-3);
    assert!(hi.is_infinite());
    // chi2_{8,0.975} = 17.535 and chi2_{6,0.025} = 1.237
    let (lo, hi) = exact_poisson_ci(1e6, 180000.0, 3, 0.95).unwrap();
    assert!(rel(nl / lo, 17.535 / 2.0) < 1e-3);
    assert!(rel(nl / hi, 1.237 / 2.0) < 1e-3);
    assert!(lo <= 6.0e10 && 6.0e10 <= hi);
    assert!(rel(chi2_quantile(2.0, 0.975).unwrap(), 7.378) < 1e-3);
    for bad in [0.0, 1.0, -0.5, 1.5] {
        assert!(matches!(exact_poisson_ci(1.0, 1.0, 1, bad), Err(Error::Domain(_))));
    }
}

#[test]
fn zero_collision_examples() {
    assert!(rel(zero_collision_bound(1e6, 180000.0, 0.95).unwrap(), 6.0e10) < 2e-3);
    assert!(rel(zero_collision_bound(1.0, 1.8e11, 1.0 - (-1.0f64).exp()).unwrap(), 1.8e11) < 1e-14);
    assert!(rel(zero_collision_bound(1.0, 20f64.ln(), 0.95).unwrap(), 1.0) < 1e-14);
    assert!(matches!(zero_collision_bound(1.0, 1.0, 1.0), Err(Error::Domain(_))));
}

#[test]
fn expected_collision_audit() {
    assert!((expected_collisions(1e6, 180000.0, 1.35e-11) - 2.43).abs() < 0.01);
    assert!(rel(expected_collisions(1e6, 180000.0, 4.21e-8), 7.58e3) < 1e-3);
    assert!(rel(expected_collisions(1e6, 180000.0, 4.92e-15), 8.9e-4) < 1e-2);
    assert!((poisson_pmf(2.43, 0).unwrap() - 0.088).abs() < 0.002);
    assert!((poisson_pmf(2.43, 1).unwrap() - 0.214).abs() < 0.003);
    assert_eq!(poisson_pmf(0.0, 0).unwrap(), 1.0);
    // the direct product form
    let want = (-7.5f64).exp() * 7.5f64.powi(6) / 720.0;
    assert!(rel(poisson_pmf(7.5, 6).unwrap(), want) < 1e-13);
}

#[test]
fn acceptance_model_examples() {
    assert!((acceptance_probability_model(360232.0, 1e6, 7.41e10).unwrap() - 0.99998).abs() < 5e-6);
    assert!((acceptance_probability_model(360232.0, 1e7, 7.41e10).unwrap() - 0.99986).abs() < 5e-6);
    assert_eq!(acceptance_probability_model(0.0, 0.0, 10.0).unwrap(), 1.0);
    assert!(matches!(acceptance_probability_model(5.0, 5.0, 10.0), Err(Error::CapacityExceeded { .. })));
}

#[test]
fn interval_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (n, l) = (1e4, 1e3);
    let mut covered = 0;
    for &lambda in &[0.7, 3.0, 12.0, 40.0] {
        let truth = n * l / lambda;
        let pois = Poisson::new(lambda).unwrap();
        for _ in 0..200 {
            let c = pois.sample(&mut rng) as u64;
            let (lo, hi) = exact_poisson_ci(n, l, c, 0.95).unwrap();
            if lo <= truth && truth <= hi {
                covered += 1;
            }
        }
    }
    assert!(covered as f64 / 800.0 >= 0.93, "{covered}/800");
}

#[test]
fn counting_examples() {
    let (v, orth) = orthogonal_pair();
    assert_eq!(count_collisions(&v, &orth, 0.391).unwrap(), 0);

    let vs = uniform_virtuals(40, 32, 3);
    let copy = Gallery::unlabeled(
        bip_core::EmbeddingMatrix::new(32, vs.embeddings.as_slice()[..3 * 32].to_vec()).unwrap(),
        "copy",
    );
    let c = count_collisions(&vs, &copy, 0.391).unwrap();
    assert!(c >= 3);
    assert_eq!(c, 3);

    let planted = plant_collisions(&vs, 3000, 0.02, 0.391, 11).unwrap();
    let got = count_collisions(&vs, &planted.gallery, 0.391).unwrap();
    assert_eq!(got as usize, planted.planted_count());
    assert!(planted.planted_count() > 0);
    // the same count by brute force
    let brute = vs
        .embeddings
        .rows()
        .map(|a| planted.gallery.centroids.rows().filter(|b| common::dot(a, b) >= 0.391).count())
        .sum::<usize>();
    assert_eq!(brute, planted.planted_count());
}

#[test]
fn collision_stats_serialize_infinity_as_text() {
    let s = CollisionStats::from_counts(1000, 180, 0, 0.391, 0.95).unwrap();
    assert!(s.mle.is_none());
    assert!(rel(s.zero_collision_lower.unwrap(), 180000.0 / 20f64.ln()) < 1e-14);
    let json = serde_json::to_value(&s).unwrap();
    assert_eq!(json["ci_high"], "inf");
    assert!(json.get("mle").is_none());
    let back: CollisionStats = serde_json::from_value(json).unwrap();
    assert_eq!(back, s);

    let s = CollisionStats::from_counts(1000, 180, 4, 0.391, 0.95).unwrap();
    assert_eq!(s.mle, Some(45000.0));
    assert!(s.ci_low <= 45000.0 && 45000.0 <= s.ci_high);
    assert!(s.zero_collision_lower.is_none());
    let back: CollisionStats = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn open_world_curve_shapes() {
    let (v, orth) = orthogonal_pair();
    let curve = open_world_stress(&v, &orth, 0.391, &[0.5, 1.0]).unwrap();
    assert_eq!(curve.rates, vec![0.0, 0.0]);
    assert_eq!(curve.lengths, vec![1, 2]);

    let vs = uniform_virtuals(40, 32, 5);
    let planted = plant_collisions(&vs, 4000, 0.05, 0.391, 12).unwrap();
    let fr = [0.1, 0.25, 0.5, 1.0];
    let curve = open_world_stress(&vs, &planted.gallery, 0.391, &fr).unwrap();
    let direct = count_collisions(&vs, &planted.gallery, 0.391).unwrap();
    assert_eq!(*curve.collisions.last().unwrap(), direct);
    assert_eq!(*curve.rates.last().unwrap(), direct as f64 / (40.0 * 4000.0));
    for (i, &f) in fr.iter().enumerate() {
        let lf = prefix_len(f, 4000);
        assert_eq!(curve.lengths[i], lf);
        let want = planted.targets[..lf].iter().filter(|t| t.is_some()).count() as u64;
        assert_eq!(curve.collisions[i], want);
    }
    assert!(curve.rates.iter().all(|&r| r >= 0.0));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("curve.csv");
    curve.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), "fraction,l_f,collisions,rate");
    assert_eq!(text.lines().count(), 5);

    assert!(open_world_stress(&vs, &planted.gallery, 0.391, &[0.5, 0.2]).is_err());
    assert!(open_world_stress(&vs, &planted.gallery, 0.391, &[0.0, 0.2]).is_err());
    assert!(open_world_stress(&vs, &planted.gallery, 0.391, &[1.5]).is_err());
}

#[test]
fn prefix_lengths_are_floored() {
    assert_eq!(prefix_len(0.1, 1000), 100);
    assert_eq!(prefix_len(0.3, 10), 3);
    assert_eq!(prefix_len(0.35, 10), 3);
    assert_eq!(prefix_len(1.0, 7), 7);
}

#[test]
fn pmf_sums_to_one() {
    for &lambda in &[0.01, 0.5, 2.43, 6.0, 10.0] {
        let s: f64 = (0..=50).map(|c| poisson_pmf(lambda, c).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-10, "lambda={lambda} sum={s}");
    }
}

proptest! {
    #[test]
    fn chi2_quantiles_round_trip(k in 1u32..60, p in 0.001f64..0.999) {
        let q = half_chi2_quantile(k as f64, p).unwrap();
        prop_assert!((regularized_lower_gamma(k as f64, q).unwrap() - p).abs() < 1e-8);
        prop_assert!((gamma_cdf_integer(k, q) - p).abs() < 1e-8);
        let nu = 2.0 * k as f64 + 1.0;
        let q = chi2_quantile(nu, p).unwrap();
        prop_assert!((regularized_lower_gamma(nu / 2.0, q / 2.0).unwrap() - p).abs() < 1e-8);
    }

    #[test]
    fn wider_level_gives_wider_interval(c in 0u64..200, a in 0.5f64..0.98, b in 0.001f64..0.019) {
        let (lo1, hi1) = exact_poisson_ci(1e5, 1e3, c, a).unwrap();
        let (lo2, hi2) = exact_poisson_ci(1e5, 1e3, c, a + b).unwrap();
        prop_assert!(lo2 < lo1);
        prop_assert!(hi2 >= hi1);
        if c > 0 {
            prop_assert!(hi2 > hi1);
            let mle = poisson_mle(1e5, 1e3, c).unwrap();
            prop_assert!(lo1 <= mle && mle <= hi1);
        }
    }

    #[test]
    fn mle_times_count_recovers_exposure(n in 1u32..100_000, l in 1u32..100_000, c in 1u32..1000) {
        let (n, l) = (n as f64, l as f64);
        let a = poisson_mle(n, l, c as u64).unwrap();
        prop_assert!(rel(a * c as f64, n * l) < 1e-15);
    }

    #[test]
    fn stats_invariants(c in 0u64..500, level in 0.5f64..0.999) {
        let s = CollisionStats::from_counts(5000, 400, c, 0.391, level).unwrap();
        prop_assert_eq!(s.mle.is_some(), c > 0);
        prop_assert_eq!(s.zero_collision_lower.is_some(), c == 0);
        if let Some(m) = s.mle {
            prop_assert_eq!(m, 2e6 / c as f64);
            prop_assert!(s.ci_low <= m && m <= s.ci_high);
        }
    }
}
