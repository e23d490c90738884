mod common;

use hashtag_core::attack::{
    attack_stats, progressive_bfa, random_flip_baseline, replay, sign_changed, AttackConfig,
};
use hashtag_core::Error;
use proptest::prelude::*;

#[test]
fn progressive_attack_reaches_random_guess_quickly() {
    let (m, data) = common::toy_cnn(8);
    let cfg = AttackConfig::random_guess(3, 0);
    let (attacked, trace) = progressive_bfa(&m, &data.attack, &cfg).unwrap();
    assert!(trace.reached_threshold);
    assert!(trace.flips() <= 40, "{} flips", trace.flips());
    assert!(trace.terminal_accuracy <= 1.0 / 3.0);
    assert_eq!(
        attacked.accuracy(&data.attack).unwrap(),
        trace.terminal_accuracy
    );
    let last = trace.records.last().unwrap();
    assert_eq!(last.accuracy_after, trace.terminal_accuracy);
    // every earlier step stayed above the threshold
    assert!(trace.records[..trace.flips() - 1]
        .iter()
        .all(|r| r.accuracy_after > cfg.stop_acc));
}

#[test]
fn committed_losses_never_decrease_and_trace_replays() {
    let (m, data) = common::toy_cnn(6);
    for seed in 0..3 {
        let cfg = AttackConfig::random_guess(3, seed);
        let (attacked, trace) = progressive_bfa(&m, &data.attack, &cfg).unwrap();
        let mut prev = trace.initial_loss;
        for r in &trace.records {
            assert!(
                r.loss_after >= prev,
                "loss fell from {prev} to {}",
                r.loss_after
            );
            prev = r.loss_after;
            assert_eq!(
                (r.old_value as u8 ^ r.new_value as u8) & ((1u16 << 6) - 1) as u8,
                1 << r.bit
            );
            assert_eq!(r.sign_changed, sign_changed(r.old_value, r.new_value));
        }
        assert_eq!(replay(&m, &trace).unwrap(), attacked);
        let batch = data.attack.sample_batch(cfg.batch_size, seed);
        let last = trace.records.last().unwrap();
        assert!((attacked.loss(&batch).unwrap() - last.loss_after).abs() < 1e-9);
    }
}

#[test]
fn attack_is_deterministic() {
    let (m, data) = common::toy_cnn(4);
    let cfg = AttackConfig::random_guess(3, 5);
    let a = progressive_bfa(&m, &data.attack, &cfg).unwrap();
    let b = progressive_bfa(&m, &data.attack, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_iterations_give_an_incomplete_empty_trace() {
    let (m, data) = common::toy_cnn(8);
    let cfg = AttackConfig {
        max_iters: 0,
        ..AttackConfig::random_guess(3, 1)
    };
    let (attacked, trace) = progressive_bfa(&m, &data.attack, &cfg).unwrap();
    assert!(trace.records.is_empty());
    assert!(!trace.reached_threshold);
    assert_eq!(attacked, m);
}

#[test]
fn iteration_cap_is_flagged() {
    let (m, data) = common::toy_cnn(8);
    let cfg = AttackConfig {
        max_iters: 1,
        ..AttackConfig::random_guess(3, 1)
    };
    let (_, trace) = progressive_bfa(&m, &data.attack, &cfg).unwrap();
    assert_eq!(trace.flips(), 1);
    assert_eq!(
        trace.reached_threshold,
        trace.terminal_accuracy <= cfg.stop_acc
    );
}

#[test]
fn bad_configurations_are_rejected() {
    let (m, data) = common::toy_cnn(8);
    for stop in [0.0, 1.0, -0.5, f64::NAN] {
        let cfg = AttackConfig {
            stop_acc: stop,
            ..AttackConfig::random_guess(3, 1)
        };
        assert!(progressive_bfa(&m, &data.attack, &cfg).is_err());
    }
    let empty = data.attack.subset(&[]);
    assert!(matches!(
        progressive_bfa(&m, &empty, &AttackConfig::random_guess(3, 1)),
        Err(Error::Empty(_))
    ));
    assert!(random_flip_baseline(&m, &data.attack, 0, 1).is_err());
}

#[test]
fn random_baseline_is_deterministic_and_far_weaker() {
    let (m, data) = common::toy_cnn(8);
    let (a, ta) = random_flip_baseline(&m, &data.attack, 3, 9).unwrap();
    let (b, tb) = random_flip_baseline(&m, &data.attack, 3, 9).unwrap();
    assert_eq!((a, &ta), (b, &tb));
    assert_eq!(
        replay(&m, &ta).unwrap(),
        random_flip_baseline(&m, &data.attack, 3, 9).unwrap().0
    );

    let mut drop_random = 0.0;
    let mut drop_attack = 0.0;
    for seed in 0..10 {
        let (_, r) = random_flip_baseline(&m, &data.attack, 1, seed).unwrap();
        drop_random += r.initial_accuracy - r.terminal_accuracy;
        let cfg = AttackConfig {
            max_iters: 1,
            ..AttackConfig::random_guess(3, seed)
        };
        let (_, p) = progressive_bfa(&m, &data.attack, &cfg).unwrap();
        drop_attack += p.initial_accuracy - p.terminal_accuracy;
    }
    assert!(
        drop_random < drop_attack,
        "random {drop_random} vs progressive {drop_attack}"
    );
}

#[test]
fn replay_rejects_a_foreign_trace() {
    let (m, data) = common::toy_cnn(8);
    let (_, trace) = progressive_bfa(&m, &data.attack, &AttackConfig::random_guess(3, 2)).unwrap();
    let other = common::small_cnn(8, 1);
    assert!(replay(&other, &trace).is_err());
}

#[test]
fn stats_over_attack_runs() {
    let (m, data) = common::toy_cnn(8);
    let traces: Vec<_> = (0..4)
        .map(|s| {
            progressive_bfa(&m, &data.attack, &AttackConfig::random_guess(3, s))
                .unwrap()
                .1
        })
        .collect();
    let stats = attack_stats(&traces, m.num_layers()).unwrap();
    let total: usize = traces.iter().map(|t| t.flips()).sum();
    assert_eq!(stats.total_flips, total);
    assert_eq!(stats.per_layer_hit_counts.iter().sum::<usize>(), total);
    assert!((0.0..=1.0).contains(&stats.sign_change_pct));
    assert!(stats.per_layer_max_concentration >= 1.0);
    assert!(attack_stats(&[], 6).is_err());
    assert!(attack_stats(&traces, 2).is_err());
}

proptest! {
    #[test]
    fn sign_change_matches_sign_comparison(old in any::<i8>(), new in any::<i8>()) {
        prop_assert_eq!(sign_changed(old, new), (old < 0 && new > 0) || (old > 0 && new < 0));
    }
}
