//! Covariance accumulators, bonus schedules and bonus functions.

use cmdp_core::bonuses::{
    bonus_model1_reward, bonus_model1_transition, bonus_model2_reward, bonus_model2_transition,
    schedule_model1, schedule_model2, BonusParams, CConvention, CovarianceAccumulator,
};
use cmdp_core::CmdpError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(d: usize, h: usize, class: usize) -> BonusParams {
    BonusParams {
        gamma1: 1.0,
        gamma2: 1.0,
        delta: 0.1,
        transition_class_size: class,
        reward_class_size: class,
        horizon: h,
        feat_dim: d,
        num_actions: 2,
        planned_episodes: None,
        c: 1.0,
        bonus_scale: 1.0,
    }
}

fn dense_quad(gram: &DMatrix<f64>, x: &[f64], lambda: f64) -> f64 {
    let d = x.len();
    let m = gram + DMatrix::<f64>::identity(d, d) * lambda;
    let v = DVector::from_column_slice(x);
    (v.transpose() * m.try_inverse().unwrap() * &v)[(0, 0)]
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn update_builds_outer_products() {
    let mut acc = CovarianceAccumulator::new(3);
    acc.update(&[1.0, 0.0, 0.0]).unwrap();
    assert_eq!(acc.count(), 1);
    assert_eq!(acc.gram()[(0, 0)], 1.0);
    assert_eq!(acc.gram().iter().filter(|v| **v != 0.0).count(), 1);

    let x = [0.3, -0.2, 0.5];
    let mut acc = CovarianceAccumulator::new(3);
    acc.update(&x).unwrap();
    acc.update(&x.map(|v| -v)).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((acc.gram()[(i, j)] - 2.0 * x[i] * x[j]).abs() < 1e-15);
        }
    }
}

#[test]
fn update_rejects_wrong_dimension() {
    let mut acc = CovarianceAccumulator::new(2);
    assert!(matches!(
        acc.update(&[1.0]),
        Err(CmdpError::DimMismatch {
            expected: 2,
            got: 1
        })
    ));
    assert!(acc.quad_form_inv(&[1.0, 2.0, 3.0], 1.0).is_err());
}

#[test]
fn gram_equals_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut acc = CovarianceAccumulator::new(4);
    let mut direct = DMatrix::<f64>::zeros(4, 4);
    for _ in 0..100 {
        let x = random_vec(&mut rng, 4);
        acc.update(&x).unwrap();
        let v = DVector::from_column_slice(&x);
        direct += &v * v.transpose();
    }
    assert_eq!(acc.count(), 100);
    assert!((acc.gram() - direct).abs().max() < 1e-12);
    assert!((acc.gram() - acc.gram().transpose()).abs().max() < 1e-12);
}

#[test]
fn quad_form_examples() {
    let acc = CovarianceAccumulator::new(2);
    assert!((acc.quad_form_inv(&[1.0, 0.0], 2.0).unwrap() - 0.5).abs() < 1e-15);
    let mut acc = CovarianceAccumulator::new(3);
    acc.update(&[1.0, 2.0, 0.0]).unwrap();
    acc.update(&[0.0, 1.0, 0.0]).unwrap();
    assert!((acc.quad_form_inv(&[0.0, 0.0, 0.7], 1.0).unwrap() - 0.49).abs() < 1e-15);
}

#[test]
fn schedule_model1_worked_example() {
    let p = params(2, 3, 4);
    let s = schedule_model1(&p, 1);
    // independent evaluation of λ = γ₁d·log(2nH/δ), α = 5H√(2λd + 4 log(2nH|Ψ|/δ)), β = √(dξ)
    let lambda = 2.0 * 60f64.ln();
    assert!((s.lambda - lambda).abs() < 1e-12);
    assert!((s.xi - lambda).abs() < 1e-12);
    let alpha = 15.0 * (2.0 * lambda * 2.0 + 4.0 * 240f64.ln()).sqrt();
    assert!((s.alpha - alpha).abs() < 1e-10);
    assert!((s.beta - (2.0 * 2.0 * 60f64.ln()).sqrt()).abs() < 1e-12);

    let zero = schedule_model1(
        &BonusParams {
            bonus_scale: 0.0,
            ..p.clone()
        },
        5,
    );
    assert_eq!((zero.alpha, zero.beta), (0.0, 0.0));
    assert!(schedule_model1(&p, 2).lambda > schedule_model1(&p, 1).lambda);
}

#[test]
fn schedule_model2_worked_example() {
    let p = BonusParams {
        num_actions: 4,
        c: 2.0,
        feat_dim: 1,
        planned_episodes: Some(100),
        ..params(1, 3, 4)
    };
    let s = schedule_model2(&p, 7).unwrap();
    assert!((s.alpha - 375.0).abs() < 1e-10);
    assert!((s.beta - s.alpha / 3.0).abs() < 1e-12);
    assert_eq!(schedule_model2(&p, 1).unwrap().alpha, s.alpha);
    let zero = schedule_model2(
        &BonusParams {
            bonus_scale: 0.0,
            ..p.clone()
        },
        7,
    )
    .unwrap();
    assert_eq!((zero.alpha, zero.beta), (0.0, 0.0));
    let missing = BonusParams {
        planned_episodes: None,
        ..p
    };
    assert!(matches!(
        schedule_model2(&missing, 1),
        Err(CmdpError::MissingN)
    ));
}

#[test]
fn bonus_examples() {
    let acc = CovarianceAccumulator::new(2);
    let e1 = [1.0, 0.0];
    let zero = [0.0, 0.0];
    assert_eq!(
        bonus_model1_transition(&zero, &acc, 5.0, 1.0, 4.0).unwrap(),
        0.0
    );
    assert_eq!(
        bonus_model1_transition(&e1, &acc, 1e9, 1.0, 4.0).unwrap(),
        4.0
    );
    assert!((bonus_model1_transition(&e1, &acc, 2.0, 1.0, 5.0).unwrap() - 2.0).abs() < 1e-15);
    assert_eq!(bonus_model1_reward(&zero, &acc, 3.0, 1.0).unwrap(), 0.0);
    assert_eq!(bonus_model1_reward(&e1, &acc, 1e9, 1.0).unwrap(), 1.0);
    assert!((bonus_model1_reward(&e1, &acc, 1.0, 4.0).unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(
        bonus_model2_transition(&zero, &acc, 3.0, 2.0, 10.0).unwrap(),
        0.0
    );
    assert!((bonus_model2_transition(&e1, &acc, 3.0, 2.0, 10.0).unwrap() - 1.5).abs() < 1e-15);
    assert_eq!(
        bonus_model2_transition(&e1, &acc, 1e12, 2.0, 10.0).unwrap(),
        10.0
    );
    assert_eq!(bonus_model2_reward(&zero, &acc, 2.0, 4.0).unwrap(), 0.0);
    assert_eq!(bonus_model2_reward(&e1, &acc, 1e12, 4.0).unwrap(), 1.0);
    assert!((bonus_model2_reward(&e1, &acc, 2.0, 4.0).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn reachability_constant_conventions() {
    assert!((CConvention::Sqrt.constant(0.25, 1.0) - 2.0).abs() < 1e-15);
    assert!((CConvention::Ratio.constant(0.25, 1.0) - 4.0).abs() < 1e-15);
    assert_eq!(CConvention::default(), CConvention::Sqrt);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn quad_form_matches_dense_inverse(seed in any::<u64>(), d in 1usize..6, n in 0usize..40, lambda in 0.05f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = CovarianceAccumulator::new(d);
        for _ in 0..n { acc.update(&random_vec(&mut rng, d)).unwrap(); }
        let x = random_vec(&mut rng, d);
        let fast = acc.quad_form_inv(&x, lambda).unwrap();
        let dense = dense_quad(acc.gram(), &x, lambda);
        prop_assert!((fast - dense).abs() < 1e-10 * (1.0 + dense));
    }

    #[test]
    fn updates_never_increase_quad_form(seed in any::<u64>(), d in 1usize..5, lambda in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = random_vec(&mut rng, d);
        let mut acc = CovarianceAccumulator::new(d);
        let mut prev = acc.quad_form_inv(&probe, lambda).unwrap();
        for _ in 0..30 {
            acc.update(&random_vec(&mut rng, d)).unwrap();
            let cur = acc.quad_form_inv(&probe, lambda).unwrap();
            prop_assert!(cur <= prev * (1.0 + 1e-12) + 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn bonuses_respect_caps(seed in any::<u64>(), scale in 0.0f64..1e3, h in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = CovarianceAccumulator::new(3);
        for _ in 0..rng.random_range(0..10) { acc.update(&random_vec(&mut rng, 3)).unwrap(); }
        let x = random_vec(&mut rng, 3);
        let hf = h as f64;
        for b in [
            bonus_model1_transition(&x, &acc, scale, 1.0, hf).unwrap(),
            bonus_model2_transition(&x, &acc, scale, 1.0, hf).unwrap(),
        ] {
            prop_assert!((0.0..=hf).contains(&b));
        }
        for b in [
            bonus_model1_reward(&x, &acc, scale, 1.0).unwrap(),
            bonus_model2_reward(&x, &acc, scale, 1.0).unwrap(),
        ] {
            prop_assert!((0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn squared_bonus_is_square_of_plain_bonus(seed in any::<u64>(), lambda in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = CovarianceAccumulator::new(3);
        for _ in 0..5 { acc.update(&random_vec(&mut rng, 3)).unwrap(); }
        let x = random_vec(&mut rng, 3);
        let plain = bonus_model1_transition(&x, &acc, 1.0, lambda, f64::INFINITY).unwrap();
        let squared = bonus_model2_transition(&x, &acc, 1.0, lambda, f64::INFINITY).unwrap();
        prop_assert!((plain * plain - squared).abs() < 1e-12 * (1.0 + squared));
    }
}
