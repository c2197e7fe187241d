use std::sync::Arc;

use ohmstat_core::environment::{perturb, sample, shift, ConductanceLaw, Environment};
use ohmstat_core::lattice::BoxDomain;
use proptest::prelude::*;
use rayon::prelude::*;

fn dom(d: usize, l: usize) -> Arc<BoxDomain> {
    Arc::new(BoxDomain::new(d, l).unwrap())
}

fn within(env: &Environment, lambda: f64) -> bool {
    env.conductances().iter().all(|&a| a >= lambda && a <= 1.0 / lambda)
}

#[test]
fn sampled_values_stay_in_the_support() {
    for (i, law) in [ConductanceLaw::uniform(0.3), ConductanceLaw::two_point(0.6, 0.4)].iter().enumerate() {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for s in 0..1000 {
            let env = sample(law, dom(2, 4), 1000 * i as u64 + s).unwrap();
            for &a in env.conductances() {
                lo = lo.min(a);
                hi = hi.max(a);
            }
            assert!(env.check_ellipticity().is_ok());
        }
        let (a, b) = law.support();
        assert!(lo >= a && hi <= b, "{law:?}: [{lo}, {hi}]");
    }
}

#[test]
fn sampling_ignores_the_thread_schedule() {
    let law = ConductanceLaw::uniform(0.5);
    let serial: Vec<Vec<f64>> = (0..64).map(|s| sample(&law, dom(3, 5), s).unwrap().conductances().to_vec()).collect();
    let parallel: Vec<Vec<f64>> = (0..64u64)
        .into_par_iter()
        .map(|s| sample(&law, dom(3, 5), s).unwrap().conductances().to_vec())
        .collect();
    assert_eq!(serial, parallel);
}

#[test]
fn distinct_edges_are_uncorrelated() {
    let law = ConductanceLaw::uniform(0.5);
    let n = 10_000;
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|s| {
            let env = sample(&law, dom(2, 3), s).unwrap();
            (env.get(0), env.get(7))
        })
        .collect();
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / n as f64;
    let (mx, my) = (mean(&|p| p.0), mean(&|p| p.1));
    let cov = mean(&|p| (p.0 - mx) * (p.1 - my));
    let (vx, vy) = (mean(&|p| (p.0 - mx).powi(2)), mean(&|p| (p.1 - my).powi(2)));
    let r = cov / (vx * vy).sqrt();
    // Under independence the sample correlation has standard error ≈ 1/√n.
    assert!(r.abs() < 4.0 / (n as f64).sqrt(), "r = {r}");
}

#[test]
fn uniform_quadrature_is_exact_for_polynomials() {
    let law = ConductanceLaw::uniform(0.4);
    let (a, b) = law.support();
    for k in 0..32 {
        let exact = (b.powi(k + 1) - a.powi(k + 1)) / ((k + 1) as f64 * (b - a));
        let got = law.expect(|x| x.powi(k));
        assert!((got / exact - 1.0).abs() < 1e-12, "degree {k}: {got} vs {exact}");
    }
    let tp = ConductanceLaw::two_point(0.5, 0.25);
    assert!((tp.expect(|x| x * x) - (0.75 * 0.25 + 0.25 * 4.0)).abs() < 1e-15);
}

#[test]
fn perturbation_is_local_and_checked() {
    let env = sample(&ConductanceLaw::constant(1.0), dom(2, 4), 0).unwrap();
    let d = env.domain().clone();
    let e = d.edge(9).clone();
    let p = perturb(&env, &e, 1.0).unwrap();
    assert_eq!(p, env);
    let env = Environment::homogeneous(dom(2, 4), 1.0).with_lambda(0.5).unwrap();
    let p = perturb(&env, &e, 2.0).unwrap();
    let diffs = env.conductances().iter().zip(p.conductances()).filter(|(a, b)| a != b).count();
    assert_eq!(diffs, 1);
    assert_eq!(p.get(9), 2.0);
    assert!(p.check_ellipticity().is_ok());
    assert!(perturb(&env, &e, 2.5).is_err());
    assert_eq!(perturb(&p, &e, 1.0).unwrap(), env);
}

#[test]
fn shift_matches_translation() {
    let law = ConductanceLaw::uniform(0.5);
    let big = sample(&law, dom(2, 10), 4).unwrap();
    let sub = shift(&big, &[3, 2], dom(2, 5)).unwrap();
    for (k, e) in sub.domain().edges().iter().enumerate() {
        let moved = ohmstat_core::lattice::shift_edge(e, &[3, 2]);
        assert_eq!(Some(sub.get(k)), big.conductance(&moved));
    }
    assert!(shift(&big, &[8, 0], dom(2, 5)).is_err());
}

#[test]
fn serialization_round_trips() {
    let env = sample(&ConductanceLaw::two_point(0.5, 0.3), dom(2, 3), 77).unwrap();
    let back = Environment::from_json(&env.to_json().unwrap()).unwrap();
    assert_eq!(back, env);
    assert_eq!(back.header(), env.header());
    let mut buf = Vec::new();
    env.write_binary(&mut buf).unwrap();
    let back = Environment::read_binary(buf.as_slice()).unwrap();
    assert_eq!(back, env);
    assert_eq!(back.header().seed, Some(77));
    assert!(Environment::read_binary(&buf[..buf.len() - 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_deterministic_and_elliptic(seed in any::<u64>(), lambda in 0.05f64..1.0, d in 1usize..4, l in 1usize..6) {
        let law = ConductanceLaw::uniform(lambda);
        let a = sample(&law, dom(d, l), seed).unwrap();
        let b = sample(&law, dom(d, l), seed).unwrap();
        prop_assert_eq!(a.conductances(), b.conductances());
        prop_assert!(within(&a, lambda));
    }

    #[test]
    fn perturbed_environments_stay_elliptic(seed in any::<u64>(), k in 0usize..40, u in 0.0f64..1.0) {
        let law = ConductanceLaw::uniform(0.4);
        let env = sample(&law, dom(2, 4), seed).unwrap();
        let value = 0.4 + u * (2.5 - 0.4);
        let p = env.perturb_index(k, value).unwrap();
        prop_assert!(p.check_ellipticity().is_ok());
        prop_assert_eq!(p.perturb_index(k, env.get(k)).unwrap(), env);
    }
}
