use pif_core::bootstrap::{percentile_interval, train_ensemble};
use pif_core::rng;
use pif_core::synthetic::{GeneratorKind, GeneratorSpec, Noise};
use pif_core::{Dataset, LearnerSpec};
use rand_distr::{Distribution, StandardNormal};

fn linear(n: usize, seed: u64) -> Dataset {
    GeneratorSpec { kind: GeneratorKind::Linear, n, d: 3, noise: Noise::Gaussian { sigma: 1.0 }, seed }
        .generate()
        .unwrap()
        .dataset
}

fn kahan_sum(values: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0, 0.0);
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

#[test]
fn bagged_mean_and_variance_match_oracles() {
    let data = linear(60, 1);
    let ens = train_ensemble(&LearnerSpec::ridge(0.5), &data, 50, 8).unwrap();
    for x in [[0.0, 0.0, 0.0], [1.5, -2.0, 0.3], [1e3, 1e3, -1e3]] {
        let p = ens.member_predictions(&x).unwrap();
        let mean = kahan_sum(&p) / p.len() as f64;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (p.len() - 1) as f64;
        let bagged = ens.bagged_prediction(&x).unwrap();
        assert!((bagged - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        let v = ens.prediction_variance(&x).unwrap();
        assert!((v - var).abs() <= 1e-9 * var.max(1e-12), "{v} vs {var}");
    }
}

#[test]
fn percentile_recovers_normal_quantiles() {
    let mut r = rng::seeded(77);
    let values: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut r)).collect();
    let pi = percentile_interval(&values, 0.05);
    assert!((pi.lower + 1.96).abs() < 0.08, "{}", pi.lower);
    assert!((pi.upper - 1.96).abs() < 0.08, "{}", pi.upper);
}

#[test]
fn prediction_intervals_need_no_further_training() {
    use pif_core::evaluation::CountingLearner;
    let data = linear(40, 2);
    let spec = LearnerSpec::ridge(0.1);
    let counter = CountingLearner::new(&spec);
    let ens = train_ensemble(&counter, &data, 25, 3).unwrap();
    assert_eq!(counter.fits(), 25);
    for i in 0..10 {
        let x = [i as f64, 0.0, 1.0];
        ens.pivot_pi(&x, 0.1).unwrap();
        ens.percentile_pi(&x, 0.1, i).unwrap();
    }
    assert_eq!(counter.fits(), 25);
}

#[test]
fn pivot_coverage_on_linear_data() {
    let train = linear(200, 3);
    let test = linear(2000, 4);
    let ens = train_ensemble(&LearnerSpec::ridge(0.1), &train, 200, 5).unwrap();
    let hits = (0..test.n_rows())
        .filter(|&i| ens.pivot_pi(test.row(i), 0.1).unwrap().0.contains(test.target(i)))
        .count();
    let coverage = hits as f64 / test.n_rows() as f64;
    assert!(coverage >= 0.88, "{coverage}");
}

#[test]
fn nested_in_alpha() {
    let data = linear(50, 6);
    let ens = train_ensemble(&LearnerSpec::knn(5), &data, 40, 1).unwrap();
    let x = [0.2, -0.1, 0.4];
    let alphas = [0.02, 0.05, 0.1, 0.2, 0.5];
    for w in alphas.windows(2) {
        let (a, _) = ens.pivot_pi(&x, w[0]).unwrap();
        let (b, _) = ens.pivot_pi(&x, w[1]).unwrap();
        assert!(a.lower <= b.lower && b.upper <= a.upper);
        // same seed, so the same adjusted predictions
        let (a, _) = ens.percentile_pi(&x, w[0], 9).unwrap();
        let (b, _) = ens.percentile_pi(&x, w[1], 9).unwrap();
        assert!(a.lower <= b.lower && b.upper <= a.upper);
    }
}
