use emscreen::simulate::{elevated_cluster, gen_homogeneous, generate, CaseId, SimScenario};
use emscreen::{FamilyKind, Theta};
use proptest::prelude::*;

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let skew = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / var.powf(1.5);
    (m, var, skew)
}

#[test]
fn label_frequencies_track_the_mixing_proportions() {
    for case in [CaseId::nb_case(4).unwrap(), CaseId::NormalBalanced] {
        let sc = SimScenario::new(case, 25, 10_000, 61);
        let ds = generate(&sc).unwrap();
        for (g, a) in sc.alpha_true.iter().enumerate() {
            let freq = ds.labels.iter().filter(|l| **l == g + 1).count() as f64 / 10_000.0;
            let se = (a * (1.0 - a) / 10_000.0).sqrt();
            assert!(
                (freq - a).abs() <= 4.0 * se,
                "{case}: cluster {} freq {freq} vs {a}",
                g + 1
            );
        }
    }
}

#[test]
fn count_features_are_overdispersed_with_the_drawn_moments() {
    let ds = generate(&SimScenario::new(CaseId::nb_case(2).unwrap(), 30, 10_000, 62)).unwrap();
    for j in 20..30 {
        let (m, var, _) = moments(ds.data.column(j));
        let mu = ds.truth.means[0][j];
        let r = ds.truth.dispersion[j];
        assert!(var >= m, "feature {j}: var {var} < mean {m}");
        assert!((m - mu).abs() <= 4.0 * ((mu + mu * mu / r) / 10_000.0).sqrt());
        assert!((var / (mu + mu * mu / r) - 1.0).abs() < 0.1, "feature {j}: var {var}");
    }
}

#[test]
fn noise_features_of_normal_scenarios_are_symmetric() {
    let ds = generate(&SimScenario::new(CaseId::NormalBalanced, 25, 10_000, 63)).unwrap();
    let (_, _, skew) = moments(ds.data.column(22));
    assert!(skew.abs() < 0.1, "skewness {skew}");
}

#[test]
fn relevant_block_layout() {
    for case in CaseId::all() {
        let ds = generate(&SimScenario::new(case, 40, 200, 64)).unwrap();
        assert_eq!(ds.relevant, (0..20).collect::<Vec<_>>());
        for j in 0..40 {
            let base = ds.truth.means[0][j];
            let raised: Vec<usize> = (0..5)
                .filter(|&g| ds.truth.means[g][j] != base)
                .map(|g| g + 1)
                .collect();
            if j < 20 {
                assert_eq!(raised, vec![elevated_cluster(j)]);
            } else {
                assert!(raised.is_empty());
            }
        }
        assert_eq!(elevated_cluster(2), 2);
    }
}

#[test]
fn balanced_normal_clusters_are_well_separated() {
    let ds = generate(&SimScenario::new(CaseId::NormalBalanced, 20, 100, 65)).unwrap();
    for j in 0..20 {
        let g = elevated_cluster(j) - 1;
        let gap = ds.truth.means[g][j] - ds.truth.means[0][j];
        let sigma = ds.truth.dispersion[j];
        assert!(gap >= 10.0 && sigma <= 1.5 && gap / sigma >= 6.6);
    }
}

#[test]
fn homogeneous_draws_match_the_requested_model() {
    let data = gen_homogeneous(FamilyKind::Poisson, &Theta::new(&[3.0]), 5000, 3, 66).unwrap();
    for j in 0..3 {
        let (m, var, _) = moments(data.column(j));
        assert!((m - 3.0).abs() < 4.0 * (3.0f64 / 5000.0).sqrt());
        assert!((var / 3.0 - 1.0).abs() < 0.1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_values_are_valid_and_reproducible(case_ix in 0usize..8, seed in any::<u64>(), p in 20usize..40, n in 10usize..80) {
        let case = CaseId::all()[case_ix];
        let sc = SimScenario::new(case, p, n, seed);
        let a = generate(&sc).unwrap();
        prop_assert_eq!(&a, &generate(&sc).unwrap());
        prop_assert_eq!(a.data.n(), n);
        prop_assert_eq!(a.data.p(), p);
        for j in 0..p {
            for &x in a.data.column(j) {
                prop_assert!(x.is_finite());
                if matches!(case, CaseId::NegBin { .. }) {
                    prop_assert!(x >= 0.0 && x.fract() == 0.0);
                }
            }
        }
    }
}
