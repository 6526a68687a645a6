use cevae_core::metrics::{auc, pehe, policy_risk, sqrt_pehe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Policy value by tallying the four `(t, π)` cells unit by unit.
fn tallied_risk(policy: &[u8], t: &[u8], y: &[f64], mask: &[u8]) -> f64 {
    let mut n = 0usize;
    let mut treated_by_policy = 0usize;
    let mut sum = [0.0f64; 2];
    let mut count = [0usize; 2];
    for i in 0..t.len() {
        if mask[i] == 0 {
            continue;
        }
        n += 1;
        treated_by_policy += usize::from(policy[i]);
        if policy[i] == t[i] {
            sum[t[i] as usize] += y[i];
            count[t[i] as usize] += 1;
        }
    }
    let cell = |a: usize| if count[a] == 0 { 0.0 } else { sum[a] / count[a] as f64 };
    let p = treated_by_policy as f64 / n as f64;
    1.0 - (cell(1) * p + cell(0) * (1.0 - p))
}

#[test]
fn policy_risk_matches_enumeration_over_every_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for fixture in 0..3 {
        let t: Vec<u8> = (0..20).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let y: Vec<f64> = (0..20)
            .map(|_| if fixture == 2 { rng.random::<f64>() } else { f64::from(u8::from(rng.random::<f64>() < 0.6)) })
            .collect();
        let mask: Vec<u8> = (0..20).map(|i| u8::from(fixture == 0 || i % 4 != 0)).collect();
        for bits in 0u32..(1 << 20) {
            let policy: Vec<u8> = (0..20).map(|i| ((bits >> i) & 1) as u8).collect();
            let r = policy_risk(&policy, &t, &y, &mask).unwrap();
            assert_eq!(r.risk, tallied_risk(&policy, &t, &y, &mask), "fixture {fixture} policy {bits:#x}");
            if fixture < 2 {
                assert!((0.0..=1.0).contains(&r.risk));
            }
        }
    }
}

#[test]
fn auc_matches_pairwise_enumeration() {
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        // coarse scores force ties
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8)) / 5.0).collect();
        let mut l: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        l[0] = 0;
        l[1] = 1;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if l[i] == 1 && l[j] == 0 {
                    pairs += 1.0;
                    wins += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((auc(&s, &l).unwrap() - wins / pairs).abs() < 1e-12);
    }
}

#[test]
fn pehe_fixtures() {
    assert_eq!(pehe(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
    assert_eq!(sqrt_pehe(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
    let truth = [0.25, -1.5, 3.0];
    assert_eq!(pehe(&truth, &truth).unwrap(), 0.0);
    let shifted: Vec<f64> = truth.iter().map(|v| v + 0.5).collect();
    assert_eq!(pehe(&truth, &shifted).unwrap(), 0.25);
}
