mod common;

use common::*;
use firecast_core::metrics::{
    append_reports, auprc, baseline_scores, naive_any_baseline, naive_majority_baseline, pivot_by_radius, prior_labels,
    read_reports, write_radius_table, Baseline, EvalReport,
};
use firecast_core::sampling::{candidates, SplitSpec};
use firecast_core::SampleSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_exhaustive_threshold_oracle_on_all_small_labelings() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut checked = 0;
    for n in 1..=8 {
        for scores in score_vectors(n, &mut rng) {
            for labels in labelings(n) {
                let got = auprc(&scores, &labels).unwrap();
                assert_eq!(got, brute_force_ap(&scores, &labels), "scores {scores:?} labels {labels:?}");
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 5 * ((1 << 9) - 2 - 8));
}

#[test]
fn perfect_ranking_is_one() {
    for n in 1..=8 {
        for labels in labelings(n) {
            let scores: Vec<f64> = labels.iter().enumerate().map(|(i, &l)| l as f64 + i as f64 * 1e-3).collect();
            assert_eq!(auprc(&scores, &labels).unwrap(), 1.0);
        }
    }
}

#[test]
fn undefined_or_invalid_inputs_error() {
    assert!(auprc(&[0.1, 0.2], &[0, 0]).is_err());
    assert!(auprc(&[0.1], &[1, 0]).is_err());
    assert!(auprc(&[f64::NAN, 0.2], &[1, 0]).unwrap_err().is_numerical());
    assert!(auprc(&[0.1, 0.2], &[2, 0]).is_err());
}

#[test]
fn random_scores_approach_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 40_000;
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.2)).collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let prevalence = labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
    let ap = auprc(&scores, &labels).unwrap();
    assert!((ap - prevalence).abs() < 0.02, "{ap} vs {prevalence}");
}

#[test]
fn constant_scores_give_prevalence_exactly() {
    let labels = [1, 0, 0, 1, 0, 0, 0, 0];
    assert_eq!(auprc(&[0.3; 8], &labels).unwrap(), 0.25);
}

proptest! {
    #[test]
    fn invariant_under_monotone_transforms(pairs in prop::collection::vec((0u32..1000, any::<bool>()), 1..60)) {
        prop_assume!(pairs.iter().any(|p| p.1));
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 1000.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        let base = auprc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| sig(8.0 * s - 4.0)).collect();
        let affine: Vec<f64> = scores.iter().map(|&s| 3.0 * s + 7.0).collect();
        prop_assert_eq!(auprc(&squashed, &labels).unwrap(), base);
        prop_assert_eq!(auprc(&affine, &labels).unwrap(), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn invariant_under_duplication_and_permutation(pairs in prop::collection::vec((0u32..20, any::<bool>()), 1..40), seed in any::<u64>()) {
        prop_assume!(pairs.iter().any(|p| p.1));
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        let base = auprc(&scores, &labels).unwrap();
        let doubled_s: Vec<f64> = scores.iter().chain(&scores).copied().collect();
        let doubled_l: Vec<u8> = labels.iter().chain(&labels).copied().collect();
        prop_assert_eq!(auprc(&doubled_s, &doubled_l).unwrap(), base);
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ps: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let pl: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(auprc(&ps, &pl).unwrap(), base);
    }
}

#[test]
fn baselines_match_counting_oracle_on_random_histories() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let years = rng.gen_range(2..12);
        let rate: f64 = rng.gen();
        let history: Vec<Vec<u8>> =
            (0..years).map(|_| (0..46).map(|_| u8::from(rng.gen::<f64>() < rate)).collect()).collect();
        let target = rng.gen_range(1..years);
        let period = rng.gen_range(0..46);
        let mut fires = 0;
        for y in 0..target {
            fires += history[y][period] as usize;
        }
        let any = naive_any_baseline(&history, target, period).unwrap();
        let maj = naive_majority_baseline(&history, target, period).unwrap();
        assert_eq!(any, u8::from(fires >= 1));
        assert_eq!(maj, u8::from(2 * fires > target));
        assert!(maj <= any, "majority implies any");
    }
}

#[test]
fn baselines_reject_missing_history() {
    let history = vec![vec![1u8; 46]; 3];
    assert!(naive_any_baseline(&history, 0, 0).is_err());
    assert!(naive_majority_baseline(&history, 4, 0).is_err());
    assert!(naive_any_baseline(&history, 2, 46).is_err());
    // Ties between fire and no fire predict no fire.
    let tie = vec![vec![1u8], vec![0u8], vec![1u8]];
    assert_eq!(naive_majority_baseline(&tie, 2, 0).unwrap(), 0);
}

#[test]
fn cube_baselines_use_the_label_step_period() {
    let cube = identity_prepared(&toy_cube(3, 4, 4, false, &[]));
    let split = SplitSpec::default_for(&cube.header).unwrap();
    let spec = SampleSpec::new(3, 5, 0, 1).unwrap();
    let refs: Vec<_> = candidates(&cube, &spec, &split).into_iter().map(|(_, r)| r).collect();
    let any = baseline_scores(&cube, &spec, &refs, Baseline::NaiveAny);
    // Samples in the first year have no history at the label step.
    assert!(any.is_err());
    let refs: Vec<_> = refs.into_iter().filter(|r| cube.header.year_of(r.cell.t_idx + spec.h) > 2001).collect();
    let any = baseline_scores(&cube, &spec, &refs, Baseline::NaiveAny).unwrap();
    let maj = baseline_scores(&cube, &spec, &refs, Baseline::NaiveMajority).unwrap();
    for ((r, a), m) in refs.iter().zip(&any).zip(&maj) {
        let t = r.cell.t_idx + spec.h;
        let (i, j) = (r.cell.lat_idx, r.cell.lon_idx);
        let period = t % 46;
        let years = t / 46;
        let fires = (0..years).filter(|y| toy_fire(y * 46 + period, i, j)).count();
        assert_eq!(prior_labels(&cube, i, j, t).len(), years);
        assert_eq!(*a, f64::from(u8::from(fires > 0)));
        assert_eq!(*m, f64::from(u8::from(2 * fires > years)));
    }
}

#[test]
fn report_rows_round_trip_and_pivot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let mut rows = Vec::new();
    for (r, auprc) in [(1, 0.4), (2, 0.5), (3, 0.45)] {
        let spec = SampleSpec::new(36, 1, r, 9).unwrap();
        rows.push(EvalReport::from_scores("convlstm", &spec, "test", 0, &[auprc, 0.1], &[1, 0]).unwrap());
    }
    let failed = EvalReport::failed("tgcn", &SampleSpec::new(12, 2, 1, 9).unwrap(), "test", 0);
    append_reports(&path, &rows[..2]).unwrap();
    append_reports(&path, &[rows[2].clone(), failed]).unwrap();
    let back = read_reports(&path).unwrap();
    assert_eq!(back.len(), 4);
    assert_eq!(&back[..3], &rows[..]);
    assert!(back[3].auprc.is_nan());
    assert_eq!(std::fs::read_to_string(&path).unwrap().matches("model,").count(), 1);

    let table = pivot_by_radius(&back);
    assert_eq!(table.radii, vec![1, 2, 3]);
    assert_eq!(table.rows.len(), 2);
    let out = dir.path().join("table.csv");
    write_radius_table(&out, &table).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("model,ts,target,r1,r2,r3"));
    assert_eq!(text.lines().nth(1), Some("convlstm,36,1,1,1,1"));
}
