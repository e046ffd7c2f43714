mod common;

use common::*;
use dtr::inference::Draw;
use dtr::mtpp::PolicyParams;
use dtr::policy::*;
use dtr::rng::{std_normal, stream};
use dtr::sim::RewardSpec;

fn draws(n: usize) -> Vec<Draw> {
    (0..n)
        .map(|i| {
            let mut phi = phi_ref();
            phi.surv.h0 += 0.02 * i as f64;
            Draw { theta: theta_ref(), phi }
        })
        .collect()
}

fn patient() -> PatientProfile {
    PatientProfile {
        x: vec![0.2, 1.0, -0.4],
        y0: 5.0,
    }
}

fn config(steps: usize, mask: ParamMask) -> SgdConfig {
    SgdConfig {
        steps,
        mask,
        master_seed: 17,
        ..SgdConfig::default()
    }
}

/// Gaussian toy policy a ~ N(θ, 1) with reward 20 − (a − 1)²; the exact
/// gradient of the expected reward is −2(θ − 1).
fn toy_estimates(theta: f64, k: usize, reps: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream(2024, &[]);
    let mut with = Vec::with_capacity(reps);
    let mut without = Vec::with_capacity(reps);
    for _ in 0..reps {
        let actions: Vec<f64> = (0..k).map(|_| theta + std_normal(&mut rng)).collect();
        let rewards: Vec<f64> = actions.iter().map(|a| 20.0 - (a - 1.0).powi(2)).collect();
        let scores: Vec<Vec<f64>> = actions.iter().map(|a| vec![a - theta]).collect();
        with.push(reinforce_estimate(&rewards, &scores, true).unwrap()[0]);
        without.push(reinforce_estimate(&rewards, &scores, false).unwrap()[0]);
    }
    (with, without)
}

#[test]
fn baseline_is_unbiased_and_reduces_variance() {
    let reps = 10_000;
    for k in [10, 50] {
        let (with, without) = toy_estimates(0.0, k, reps);
        let (m1, s1) = mean_sd(&with);
        let (m0, s0) = mean_sd(&without);
        let se = ((s1 * s1 + s0 * s0) / reps as f64).sqrt();
        assert!((m1 - m0).abs() < 3.0 * se, "K={k}: {m1} vs {m0} (se {se})");
        assert!((m1 - 2.0).abs() < 3.0 * s1 / (reps as f64).sqrt(), "K={k}: {m1}");
        assert!(s1 < s0, "K={k}: sd {s1} vs {s0}");
    }
}

#[test]
fn baseline_needs_two_rollouts() {
    assert!(reinforce_estimate(&[1.0], &[vec![1.0]], true).is_err());
    assert_eq!(reinforce_estimate(&[2.0], &[vec![1.5]], false).unwrap(), vec![3.0]);
    assert!(config(1, ParamMask::Both).validate(1).is_err());
    assert!(config(0, ParamMask::Both).validate(10).is_err());
    assert!(config(1, ParamMask::Both).validate(2).is_ok());
}

#[test]
fn adaptive_step_window() {
    let hist: Vec<Vec<f64>> = (1..=5).map(|i| vec![i as f64, 0.0]).collect();
    let s = adaptive_step(&hist, &[9.0, 9.0], 0.01, 2, StepRule::PerCoordinate);
    assert!((s[0] - 0.01 / ((16.0f64 + 25.0).sqrt() + 1e-8)).abs() < 1e-15);
    assert!((s[1] - 0.01 / 1e-8).abs() < 1e-3);
    let s = adaptive_step(&hist, &[9.0, 9.0], 0.01, 2, StepRule::ScalarNorm);
    assert_eq!(s[0], s[1]);
}

#[test]
fn single_step_run() {
    let d = draws(4);
    let res = optimize(&theta_ref(), &d, &patient(), &config(1, ParamMask::Both)).unwrap();
    assert_eq!(res.iterations.len(), 2);
    assert_eq!(res.iterations[0].theta, theta_ref());
    check_best(&res);
}

fn check_best(res: &OptResult) {
    let max = res.iterations.iter().map(|i| i.mean_reward).fold(f64::MIN, f64::max);
    assert_eq!(res.best_reward, max);
    assert_eq!(res.best_theta, res.iterations[res.best_index].theta);
    assert_eq!(res.initial_reward(), res.iterations[0].mean_reward);
    assert!(res.improvement() >= 0.0);
}

fn frozen(a: &PolicyParams, b: &PolicyParams, mask: ParamMask) -> bool {
    let (ua, ub) = (a.to_unconstrained(), b.to_unconstrained());
    ua.iter()
        .zip(&ub)
        .enumerate()
        .filter(|(i, _)| !mask.is_active(*i))
        .all(|(_, (x, y))| x.to_bits() == y.to_bits())
}

#[test]
fn masks_freeze_their_coordinates() {
    let d = draws(4);
    let t0 = theta_ref();
    for mask in [ParamMask::VisitsOnly, ParamMask::DosageOnly] {
        let res = optimize(&t0, &d, &patient(), &config(3, mask)).unwrap();
        check_best(&res);
        for it in &res.iterations {
            assert!(frozen(&t0, &it.theta, mask), "{mask:?}");
        }
        assert!(res.iterations.iter().any(|it| it.theta != t0), "{mask:?} never moved");
    }
    // frozen scalars keep their exact values, not just their transforms
    let res = optimize(&t0, &d, &patient(), &config(3, ParamMask::VisitsOnly)).unwrap();
    for it in &res.iterations {
        assert_eq!(it.theta.beta_d, t0.beta_d);
        assert_eq!(it.theta.sigma_d2.to_bits(), t0.sigma_d2.to_bits());
    }
    let res = optimize(&t0, &d, &patient(), &config(3, ParamMask::DosageOnly)).unwrap();
    for it in &res.iterations {
        assert_eq!((it.theta.nu1, it.theta.nu2, it.theta.mu), (t0.nu1, t0.nu2, t0.mu));
    }
}

#[test]
fn fixed_schedule_tunes_dosage_only() {
    let d = draws(4);
    let t0 = theta_ref();
    let bad = SgdConfig {
        fixed_interval: Some(91.0),
        ..config(2, ParamMask::Both)
    };
    assert!(optimize(&t0, &d, &patient(), &bad).is_err());
    let cfg = SgdConfig {
        fixed_interval: Some(91.0),
        ..config(3, ParamMask::DosageOnly)
    };
    let res = optimize(&t0, &d, &patient(), &cfg).unwrap();
    check_best(&res);
    assert!(res.iterations.iter().all(|it| (it.theta.nu1, it.theta.nu2, it.theta.mu) == (t0.nu1, t0.nu2, t0.mu)));
    assert!(res.iterations.iter().any(|it| it.theta.beta_d != t0.beta_d));
    // iteration 0 is the fixed-schedule evaluation of θ₀ on the step-0 rollouts
    let fixed = EvalPolicy::Fixed { interval: 91.0, dosage: t0.clone() };
    assert!(res.iterations[0].mean_reward.is_finite());
    assert!(evaluate_policy(&fixed, &d, &patient(), 4, RewardSpec::default(), 1).is_ok());
}

#[test]
fn optimization_is_reproducible() {
    let d = draws(4);
    let cfg = SgdConfig {
        rollouts_per_step: Some(6),
        ..config(3, ParamMask::Both)
    };
    let a = optimize(&theta_ref(), &d, &patient(), &cfg).unwrap();
    let b = optimize(&theta_ref(), &d, &patient(), &cfg).unwrap();
    assert_eq!(a, b);
    let e1 = estimate_gradient(&theta_ref(), &d, &patient(), &cfg, 5).unwrap();
    let e2 = estimate_gradient(&theta_ref(), &d, &patient(), &cfg, 5).unwrap();
    assert_eq!(e1, e2);
    assert_eq!(e1.n_used + e1.n_capped, 6);
}

#[test]
fn policy_evaluation() {
    let d = draws(3);
    let p = patient();
    let fixed = EvalPolicy::Fixed {
        interval: 91.0,
        dosage: theta_ref(),
    };
    let a = evaluate_policy(&fixed, &d, &p, 12, RewardSpec::default(), 4).unwrap();
    assert_eq!(a, evaluate_policy(&fixed, &d, &p, 12, RewardSpec::default(), 4).unwrap());
    for o in &a {
        assert!((o.reward - o.median_time.ln()).abs() < 1e-12);
        let expected = ((o.median_time / 91.0).ceil() as usize).saturating_sub(1);
        assert_eq!(o.n_visits, expected);
    }
    let pen = evaluate_policy(&fixed, &d, &p, 12, RewardSpec::PenalizedVisits { eta0: -0.01 }, 4).unwrap();
    for (x, y) in a.iter().zip(&pen) {
        assert!((x.reward - 0.01 * x.n_visits as f64 - y.reward).abs() < 1e-12);
    }
    let mtpp = evaluate_policy(&EvalPolicy::Intensity(theta_ref()), &d, &p, 12, RewardSpec::default(), 4).unwrap();
    assert_eq!(mtpp.len(), 12);
    assert!(evaluate_policy(&fixed, &[], &p, 12, RewardSpec::default(), 4).is_err());
}
