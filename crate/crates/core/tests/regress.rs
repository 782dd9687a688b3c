//! Unit tests for `regress`.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sindy_core::error::Error;
use sindy_core::regress::*;

fn random_columns(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p)
        .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Weighted normal equations solved by Gaussian elimination with partial
/// pivoting.
fn normal_equations_oracle(theta: &[Vec<f64>], y: &[f64], w: &[f64], mask: &[bool]) -> Vec<f64> {
    let p = theta.len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for t in 0..y.len() {
        if !mask[t] {
            continue;
        }
        for i in 0..p {
            for k in 0..p {
                a[i][k] += w[t] * theta[i][t] * theta[k][t];
            }
            a[i][p] += w[t] * theta[i][t] * y[t];
        }
    }
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs()))
            .unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

fn no_fft() -> RegressionConfig {
    RegressionConfig {
        fft_block_scale: 0.0,
        ..Default::default()
    }
}

#[test]
fn exact_two_term_fit() {
    let th = random_columns(1, 200, 2);
    let y: Vec<f64> = (0..200).map(|t| 2.0 * th[0][t] + 3.0 * th[1][t]).collect();
    let c = fit_coefficients(&th, &y, &[1.0; 200], &[true; 200], &no_fft()).unwrap();
    assert!((c[0] - 2.0).abs() < 1e-8 && (c[1] - 3.0).abs() < 1e-8);
}

#[test]
fn weighted_fit_matches_normal_equations() {
    let th = random_columns(2, 300, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<f64> = (0..300).map(|_| rng.random_range(-5.0..5.0)).collect();
    let w: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..2.0)).collect();
    let mask: Vec<bool> = (0..300).map(|t| t % 7 != 0).collect();
    let got = fit_coefficients(&th, &y, &w, &mask, &no_fft()).unwrap();
    let want = normal_equations_oracle(&th, &y, &w, &mask);
    for (g, o) in got.iter().zip(&want) {
        assert!((g - o).abs() < 1e-8);
    }
}

#[test]
fn complex_mode_equals_time_domain() {
    for n in [256usize, 301] {
        let th = random_columns(4, n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ones = vec![1.0; n];
        let all = vec![true; n];
        let plain = fit_coefficients(&th, &y, &ones, &all, &no_fft()).unwrap();
        for scale in [0.5, 1.0, 3.0] {
            let cfg = RegressionConfig {
                fft_mode: FftMode::Complex,
                fft_block_scale: scale,
                ..Default::default()
            };
            let aug = fit_coefficients(&th, &y, &ones, &all, &cfg).unwrap();
            for (a, b) in aug.iter().zip(&plain) {
                assert!((a - b).abs() < 1e-8, "n={n} scale={scale}");
            }
        }
    }
}

#[test]
fn proportional_target_exact_in_every_mode() {
    let th = random_columns(6, 128, 1);
    let y: Vec<f64> = th[0].iter().map(|v| -4.5 * v).collect();
    let w: Vec<f64> = (0..128).map(|t| 0.5 + (t % 3) as f64).collect();
    for mode in [
        FftMode::Complex,
        FftMode::Real,
        FftMode::Magnitude,
        FftMode::Power,
    ] {
        let cfg = RegressionConfig {
            fft_mode: mode,
            ..Default::default()
        };
        let c = fit_coefficients(&th, &y, &w, &[true; 128], &cfg).unwrap();
        assert!((c[0] + 4.5).abs() < 1e-10, "{mode:?}");
    }
}

#[test]
fn zero_weight_equals_deleted_row() {
    let th = random_columns(7, 150, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y: Vec<f64> = (0..150).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut w = vec![1.0; 150];
    let mut mask = vec![true; 150];
    for t in [3, 40, 41, 99] {
        w[t] = 0.0;
    }
    let a = fit_coefficients(&th, &y, &w, &mask, &RegressionConfig::default()).unwrap();
    for t in [3, 40, 41, 99] {
        mask[t] = false;
    }
    let b = fit_coefficients(&th, &y, &[1.0; 150], &mask, &RegressionConfig::default()).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-10);
    }
}

#[test]
fn duplicate_columns_are_rank_deficient() {
    let mut th = random_columns(9, 100, 2);
    th.push(th[0].iter().map(|v| 2.0 * v).collect());
    let y = th[1].clone();
    let err = fit_coefficients(
        &th,
        &y,
        &[1.0; 100],
        &[true; 100],
        &RegressionConfig::default(),
    );
    assert!(matches!(err, Err(Error::RankDeficient { .. })));
}

#[test]
fn ratio_exclusion_examples() {
    assert_eq!(
        exclude_extreme_ratio(&[vec![1e-9, 5.0]], 30.0),
        vec![true, true]
    );
    assert_eq!(
        exclude_extreme_ratio(&[vec![10.0], vec![0.1]], 30.0),
        vec![false]
    );
    assert_eq!(
        exclude_extreme_ratio(&[vec![3.0], vec![2.0], vec![1.0]], 30.0),
        vec![true]
    );
    assert_eq!(
        exclude_extreme_ratio(&[vec![1.0], vec![0.0]], 30.0),
        vec![false]
    );
}

#[test]
fn subset_examples() {
    let full = RegressionConfig {
        subset_fraction: 1.0,
        n_subsets: 3,
        ..Default::default()
    };
    for s in select_subsets(50, 3, &full).unwrap() {
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }
    let cfg = RegressionConfig::default();
    let a = select_subsets(1000, 10, &cfg).unwrap();
    assert_eq!(a, select_subsets(1000, 10, &cfg).unwrap());
    assert_eq!(a.len(), 17);
    for s in &a {
        assert_eq!(s.len(), 700);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
    assert_ne!(a[0], a[1]);
    assert_eq!(
        select_subsets(10, 6, &cfg),
        Err(Error::SubsetTooSmall {
            size: 7,
            n_active: 6
        })
    );
}

#[test]
fn ensemble_noise_free_draws_agree() {
    let th = random_columns(10, 400, 3);
    let y: Vec<f64> = (0..400)
        .map(|t| th[0][t] - 0.5 * th[1][t] + 7.0 * th[2][t])
        .collect();
    let e = ensemble_fit(&th, &y, &[1.0; 400], &RegressionConfig::default()).unwrap();
    assert_eq!(e.draws.len(), 17);
    for d in &e.draws {
        for (a, b) in d.iter().zip(&e.median) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    assert!((e.median[2] - 7.0).abs() < 1e-9);
}

#[test]
fn median_of_draws_examples() {
    let d = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![100.0, 5.0]];
    assert_eq!(median_of_draws(&d), vec![2.0, 5.0]);
}

proptest! {
    #[test]
    fn median_is_permutation_invariant(vals in proptest::collection::vec(-100.0f64..100.0, 1..20), rot in 0usize..20) {
        let draws: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v, -v]).collect();
        let mut shuffled = draws.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        prop_assert_eq!(median_of_draws(&draws), median_of_draws(&shuffled));
    }

    #[test]
    fn scale_equivariance(seed in 0u64..500, c in 0.01f64..100.0, mode in 0usize..4) {
        let mode = [FftMode::Complex, FftMode::Real, FftMode::Magnitude, FftMode::Power][mode];
        let th = random_columns(seed, 120, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let y: Vec<f64> = (0..120).map(|t| th[0][t] + 2.0 * th[2][t] + rng.random_range(-0.3..0.3)).collect();
        let cfg = RegressionConfig { fft_mode: mode, ..Default::default() };
        let a = fit_coefficients(&th, &y, &[1.0; 120], &[true; 120], &cfg).unwrap();
        let mut th2 = th.clone();
        th2[1].iter_mut().for_each(|v| *v *= c);
        let b = fit_coefficients(&th2, &y, &[1.0; 120], &[true; 120], &cfg).unwrap();
        prop_assert!((b[1] * c - a[1]).abs() < 1e-8 * a[1].abs().max(1.0));
        prop_assert!((b[0] - a[0]).abs() < 1e-8 * a[0].abs().max(1.0));
    }
}
