use ohmstat_core::environment::{sample, ConductanceLaw};
use ohmstat_core::harness::{
    clt_test, ks_bootstrap_p_value, ks_normal, moments, run_ceff, selftest, variance_scaling,
    write_records_csv, ExperimentConfig, LawKind, SummaryStats,
};
use ohmstat_core::lattice::BoxDomain;
use ohmstat_core::solver::series_conductance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use std::sync::Arc;

fn config(dim: usize, sides: &[usize], law: LawKind, lambda: f64, replicas: usize) -> ExperimentConfig {
    ExperimentConfig {
        dim,
        sides: sides.to_vec(),
        law,
        lambda,
        replicas,
        seed: 42,
        ..Default::default()
    }
}

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn config_validation() {
    assert!(config(2, &[8], LawKind::Uniform, 0.9, 10).validate().is_ok());
    assert!(config(2, &[8], LawKind::Uniform, 0.9, 1).validate().is_err());
    assert!(config(2, &[1], LawKind::Uniform, 0.9, 10).validate().is_err());
    assert!(config(2, &[], LawKind::Uniform, 0.9, 10).validate().is_err());
    assert!(config(2, &[8], LawKind::Uniform, 1.5, 10).validate().is_err());
    let mut c = config(2, &[8], LawKind::TwoPoint, 0.5, 10);
    c.t = vec![1.0];
    assert!(c.validate().is_err());
    c.t = vec![1.0, f64::NAN];
    assert!(c.validate().is_err());
    c.t = vec![1.0, 2.0];
    c.p = 1.5;
    assert!(c.validate().is_err());
    assert_eq!(config(3, &[4], LawKind::Uniform, 0.9, 2).direction(), vec![1.0, 0.0, 0.0]);
    assert!("two-point".parse::<LawKind>().is_ok());
    assert!("gaussian".parse::<LawKind>().is_err());
}

#[test]
fn config_json_round_trip() {
    let c = config(2, &[4, 8], LawKind::TwoPoint, 0.5, 20);
    let s = serde_json::to_string(&c).unwrap();
    assert!(s.contains("\"L\":[4,8]") && s.contains("\"two-point\""));
    assert_eq!(ExperimentConfig::from_json(&s).unwrap(), c);
    let partial = ExperimentConfig::from_json(r#"{"dim": 1, "L": [16], "replicas": 5}"#).unwrap();
    assert_eq!(partial.sides, vec![16]);
    assert_eq!(partial.law, LawKind::Uniform);
    assert!(ExperimentConfig::from_json(r#"{"dimension": 1}"#).is_err());
}

#[test]
fn constant_law_matches_the_closed_form() {
    let mut c = config(2, &[4, 8], LawKind::Constant, 0.5, 3);
    c.t = vec![0.6, -0.8];
    let run = run_ceff(&c).unwrap();
    assert_eq!(run.records.len(), 6);
    for s in &run.summaries {
        let l = s.side as f64;
        assert!((s.stats.mean / ((l + 1.0) * l) - 1.0).abs() < 1e-10);
        assert!(s.stats.variance < 1e-20);
        assert!(s.stats.skewness.is_none() && s.stats.bootstrap_p_value.is_none());
    }
}

#[test]
fn one_dimensional_replicas_match_series_resistors() {
    let c = config(1, &[5, 32], LawKind::Uniform, 0.2, 20);
    let run = run_ceff(&c).unwrap();
    assert!(run.failures.is_empty());
    let law = ConductanceLaw::uniform(0.2);
    for r in &run.records {
        let env = sample(&law, Arc::new(BoxDomain::new(1, r.side).unwrap()), r.seed).unwrap();
        let exact = series_conductance(&env, 1.0).unwrap();
        assert!((r.ceff / exact - 1.0).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let mut c = config(2, &[4, 6], LawKind::Uniform, 0.5, 12);
    c.threads = 1;
    let a = run_ceff(&c).unwrap();
    let b = run_ceff(&c).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    write_records_csv(&a.records, &mut x).unwrap();
    write_records_csv(&b.records, &mut y).unwrap();
    assert_eq!(x, y);
    assert!(String::from_utf8(x).unwrap().starts_with("replica,L,seed,ceff\n"));
    c.threads = 3;
    let d = run_ceff(&c).unwrap();
    assert_eq!(a.records, d.records);
    let seeds: std::collections::HashSet<u64> = a.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), a.records.len());
}

#[test]
fn energy_density_stabilizes() {
    let c = config(2, &[4, 8, 16], LawKind::Uniform, 0.9, 40);
    let run = run_ceff(&c).unwrap();
    let density: Vec<f64> = run
        .summaries
        .iter()
        .map(|s| s.stats.mean / (s.side * s.side) as f64)
        .collect();
    let gaps: Vec<f64> = density.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(gaps[1] < gaps[0], "{density:?}");
}

#[test]
fn moments_of_known_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 400_000;
    let exp: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let (m, v, s, k) = moments(&exp);
    assert!((m - 1.0).abs() < 0.01 && (v - 1.0).abs() < 0.02);
    assert!((s.unwrap() - 2.0).abs() < 0.1, "skewness {s:?}");
    assert!((k.unwrap() - 6.0).abs() < 1.0, "kurtosis {k:?}");
    let uni: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let (m, v, s, k) = moments(&uni);
    assert!((m - 0.5).abs() < 0.01 && (v - 1.0 / 12.0).abs() < 1e-3);
    assert!(s.unwrap().abs() < 0.02);
    assert!((k.unwrap() + 1.2).abs() < 0.02);
    let (_, v, s, k) = moments(&normals(n, 2));
    assert!((v - 1.0).abs() < 0.01 && s.unwrap().abs() < 0.02 && k.unwrap().abs() < 0.04);
    assert_eq!(moments(&[3.0, 3.0, 3.0]).2, None);
}

#[test]
fn standard_errors_track_their_closed_forms() {
    let x = normals(2000, 3);
    let st = SummaryStats::compute(&x, 1, 10, 9).unwrap();
    let n = x.len() as f64;
    // Normal data: SE(mean) = σ/√n, SE(s²) = σ²√(2/(n−1)), SE(skew) ≈ √(6/n), SE(kurt) ≈ √(24/n).
    assert!((st.mean_se / (1.0 / n.sqrt()) - 1.0).abs() < 0.2);
    assert!((st.variance_se / (2.0 / (n - 1.0)).sqrt() - 1.0).abs() < 0.25);
    assert!((st.skewness_se.unwrap() / (6.0 / n).sqrt() - 1.0).abs() < 0.25);
    assert!((st.excess_kurtosis_se.unwrap() / (24.0 / n).sqrt() - 1.0).abs() < 0.35);
    assert!((st.variance_per_volume - st.variance / 10.0).abs() < 1e-15);
    let p = st.bootstrap_p_value.unwrap();
    assert!((0.0..=1.0).contains(&p));
    let json = serde_json::to_value(&st).unwrap();
    for key in [
        "n",
        "mean",
        "variance",
        "skewness",
        "excess_kurtosis",
        "ks_statistic",
        "bootstrap_p_value",
        "variance_per_volume",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!(SummaryStats::compute(&[1.0], 1, 2, 0).is_err());
}

#[test]
fn ks_p_values_are_calibrated_on_normal_data() {
    let p: Vec<f64> = (0..300)
        .map(|r| {
            let x = normals(60, 1000 + r);
            ks_bootstrap_p_value(x.len(), ks_normal(&x).unwrap(), 199, r)
        })
        .collect();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let low = p.iter().filter(|&&v| v <= 0.1).count() as f64 / p.len() as f64;
    assert!((mean - 0.5).abs() < 0.06, "mean p {mean}");
    assert!((low - 0.1).abs() < 0.06, "P(p ≤ 0.1) = {low}");
}

#[test]
fn ks_rejects_skewed_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..600).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let rep = clt_test(&x, 1, 4, 1).unwrap();
    assert!(rep.stats.bootstrap_p_value.unwrap() < 0.01);
    assert!(rep.skewness_significant && !rep.passed);
}

#[test]
fn clt_test_accepts_normal_data_and_refuses_small_samples() {
    let x = normals(1000, 7);
    let rep = clt_test(&x, 2, 8, 3).unwrap();
    assert!(rep.passed, "{rep:?}");
    assert_eq!(rep.lindeberg.len(), 3);
    assert!(rep.lindeberg.iter().all(|r| r.fraction == 0.0));
    assert!(clt_test(&x[..499], 2, 8, 3).is_err());
}

#[test]
fn small_heavy_contrast_boxes_are_visibly_skewed() {
    let c = config(1, &[4], LawKind::Uniform, 0.1, 2000);
    let run = run_ceff(&c).unwrap();
    let rep = clt_test(&run.values(4), 1, 4, 11).unwrap();
    assert!(rep.skewness_significant, "{:?}", rep.stats);
}

#[test]
fn variance_scaling_recovers_a_power_law() {
    let groups: Vec<(usize, Vec<f64>)> = [4usize, 8, 16, 32]
        .iter()
        .map(|&l| {
            let s = l as f64;
            (l, normals(4000, l as u64).into_iter().map(|z| 100.0 + s * z).collect())
        })
        .collect();
    let rep = variance_scaling(&groups, 2, 1).unwrap();
    assert!((rep.slope.unwrap() - 2.0).abs() < 0.1, "{rep:?}");
    let ci = rep.slope_ci.unwrap();
    assert!(ci[0] < 2.0 && 2.0 < ci[1]);
    for (v, ci) in rep.variance_per_volume.iter().zip(&rep.variance_per_volume_ci) {
        assert!(ci[0] <= *v && *v <= ci[1]);
        assert!((v - 1.0).abs() < 0.1);
    }
    assert!(rep.last_relative_change.unwrap() < 0.15);
}

#[test]
fn variance_scaling_refuses_degenerate_input() {
    let flat: Vec<(usize, Vec<f64>)> = [4usize, 8, 16].iter().map(|&l| (l, vec![2.0; 10])).collect();
    let rep = variance_scaling(&flat, 2, 0).unwrap();
    assert!(rep.slope.is_none() && rep.note.is_some());
    assert!(variance_scaling(&flat[..2], 2, 0).is_err());
    let dup = vec![(4, vec![1.0, 2.0]), (4, vec![1.0, 3.0]), (8, vec![1.0, 5.0])];
    assert!(variance_scaling(&dup, 2, 0).is_err());
}

#[test]
fn selftest_passes() {
    let rep = selftest();
    assert_eq!(rep.failed, 0, "{:#?}", rep.cases.iter().filter(|c| !c.passed).collect::<Vec<_>>());
    assert!(rep.passed >= 10);
}
