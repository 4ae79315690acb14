mod common;

use common::*;
use mmpo_core::advantage::{mixed_advantage, mode_advantage, sample_advantage, Algorithm};
use mmpo_core::grammar::ThinkingMode::{self, *};
use mmpo_core::policy::PolicyParams;
use rand::Rng;

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
    }
}

#[test]
fn worked_sample_values() {
    let s2 = 2f64.sqrt();
    assert_close(&sample_advantage(&[0.0, 1.0, 1.0, 2.0]).unwrap(), &[-s2, 0.0, 0.0, s2], 1e-12);
}

#[test]
fn worked_mode_values() {
    let modes = [Some(QuickResponse), Some(QuickResponse), Some(SemanticAnalysis), Some(SemanticAnalysis)];
    assert_close(&mode_advantage(&[0.0, 1.0, 1.0, 1.0], &modes).unwrap(), &[-1.0, -1.0, 1.0, 1.0], 1e-12);

    // Three modes with averages 2, 0, 1: population std sqrt(2/3).
    let modes = [Some(QuickResponse), Some(SemanticAnalysis), Some(ProspectiveSimulation), None];
    let k = 1.0 / (2.0f64 / 3.0).sqrt();
    assert_close(&mode_advantage(&[2.0, 0.0, 1.0, 5.0], &modes).unwrap(), &[k, -k, 0.0, 0.0], 1e-12);
}

#[test]
fn matches_pairwise_oracle_on_random_groups() {
    let mut rng = rng(1);
    for _ in 0..5000 {
        let g = rng.random_range(2..=16);
        let discrete = rng.random_bool(0.5);
        let rewards: Vec<f64> = (0..g)
            .map(|_| if discrete { rng.random_range(0..3) as f64 } else { rng.random_range(-5.0..5.0) })
            .collect();
        let modes: Vec<Option<ThinkingMode>> = (0..g).map(|_| random_mode(&mut rng, 0.15)).collect();
        assert_close(&sample_advantage(&rewards).unwrap(), &oracle_standardize(&rewards), 1e-9);
        assert_close(
            &mode_advantage(&rewards, &modes).unwrap(),
            &oracle_mode_advantage(&rewards, &modes),
            1e-9,
        );
    }
}

#[test]
fn unclassifiable_responses_get_no_mode_credit() {
    let modes = [None, Some(QuickResponse), Some(SemanticAnalysis), None];
    let a = mode_advantage(&[2.0, 0.0, 2.0, 0.0], &modes).unwrap();
    assert_eq!(a[0], 0.0);
    assert_eq!(a[3], 0.0);
    assert!(a[2] > 0.0 && a[1] < 0.0);
}

#[test]
fn vanilla_zeroes_the_mode_term() {
    let mut rng = rng(2);
    let p = PolicyParams::default();
    for _ in 0..200 {
        let g = rng.random_range(2..=16);
        let group = random_group(&mut rng, &p, &p, g);
        let v = mixed_advantage(&group, Algorithm::VanillaGrpo).unwrap();
        assert!(v.a_mode.iter().all(|&x| x == 0.0));
        assert_eq!(v.a_mixed, v.a_sample);
        let m = mixed_advantage(&group, Algorithm::Mmpo).unwrap();
        assert_eq!(m.a_sample, v.a_sample);
        for i in 0..g {
            assert_eq!(m.a_mixed[i].to_bits(), (m.a_sample[i] + m.a_mode[i]).to_bits());
        }
    }
}

#[test]
fn groups_below_two_are_rejected() {
    assert!(sample_advantage(&[1.0]).is_err());
    assert!(mode_advantage(&[1.0], &[None]).is_err());
    assert!(mode_advantage(&[1.0, 2.0], &[None]).is_err());
}
