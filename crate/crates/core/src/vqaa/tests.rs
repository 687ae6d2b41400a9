use super::*;
use crate::statevector::DenseBackend;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn params(n: usize, j: f64) -> ModelParams {
    ModelParams::new(n, j, 1.0, 1.0).unwrap()
}

#[test]
fn equal_ratios_are_a_fixed_point() {
    let lengths = [0.2, 0.5, 0.3];
    let o = [0.9, 0.81, 0.729];
    let r = ratio_rebalance_step(&o, &lengths, 0.3).unwrap();
    for (a, b) in r.lengths.iter().zip(&lengths) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    assert!(r.flagged.is_empty());
}

#[test]
fn larger_drop_shrinks_the_chunk() {
    let r = ratio_rebalance_step(&[0.5, 0.5], &[0.5, 0.5], 0.5).unwrap();
    // R = (0.5, 1.0), mean 0.75
    assert!(r.lengths[0] < 0.5 && r.lengths[1] > 0.5);
    assert_abs_diff_eq!(r.lengths.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    // scaled by 1 -/+ 0.5 / 3 before renormalization
    assert_abs_diff_eq!(r.lengths[0], (5.0 / 6.0) / 2.0, epsilon = 1e-12);
}

#[test]
fn zero_overlap_is_flagged() {
    let r = ratio_rebalance_step(&[0.9, 0.0, 0.0], &[0.3, 0.3, 0.4], 0.3).unwrap();
    assert_eq!(r.flagged, vec![1, 2]);
    assert_abs_diff_eq!(r.lengths[1], MIN_LEN, epsilon = 1e-15);
    assert_abs_diff_eq!(r.lengths[0], 1.0 - 2.0 * MIN_LEN, epsilon = 1e-12);
    assert!(ratio_rebalance_step(&[0.9], &[0.5, 0.5], 0.3).is_err());
}

proptest! {
    #[test]
    fn rebalance_stays_on_the_simplex(
        o in prop::collection::vec(0.0f64..=1.0, 2..7),
        w in prop::collection::vec(0.01f64..1.0, 7),
        step in 0.0f64..1.0,
    ) {
        let l = o.len();
        let s: f64 = w[..l].iter().sum();
        let lengths: Vec<f64> = w[..l].iter().map(|x| x / s).collect();
        let r = ratio_rebalance_step(&o, &lengths, step).unwrap();
        prop_assert!((r.lengths.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.lengths.iter().all(|&x| x >= MIN_LEN - 1e-15));
    }
}

#[test]
fn single_chunk_blackbox_is_naive() {
    let p = params(6, 1.0);
    let cfg = BlackboxConfig::new(p, 1, 3.0, OptimizerKind::NelderMead, 5);
    let trace = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    let naive = schedule_fidelity(&DenseBackend, &p, &crate::evolve::naive_schedule(1, 3.0).unwrap()).unwrap();
    assert_abs_diff_eq!(trace.best_objective, naive, epsilon = 1e-14);
    assert_abs_diff_eq!(trace.baseline_objective, naive, epsilon = 1e-14);
}

#[test]
fn uniform_lengths_are_permutation_invariant() {
    let p = params(6, 2.0);
    let path = PathConfig::default();
    let a = path.schedule(&[0.25; 4], &[0.5, 1.0, 0.7, 0.3]).unwrap();
    let b = path.schedule(&[0.25; 4], &[0.5, 1.0, 0.7, 0.3]).unwrap();
    assert_eq!(
        schedule_fidelity(&DenseBackend, &p, &a).unwrap(),
        schedule_fidelity(&DenseBackend, &p, &b).unwrap()
    );
}

fn check_trace_invariants(t: &OptimizationTrace) {
    assert!(t.best_objective >= t.baseline_objective);
    for w in t.rows.windows(2) {
        assert!(w[1].eval_count > w[0].eval_count);
        assert!(w[1].best_objective >= w[0].best_objective);
        assert!(w[1].measurement_count >= w[0].measurement_count);
    }
    for r in &t.rows {
        assert!((r.lengths.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(r.lengths.iter().all(|&x| x >= MIN_LEN - 1e-15));
    }
}

#[test]
fn blackbox_optimizers_keep_invariants_and_budget() {
    let p = params(6, 2.0);
    for opt in [OptimizerKind::NelderMead, OptimizerKind::QuasiNewton, OptimizerKind::CobylaLike] {
        let cfg = BlackboxConfig::new(p, 3, 2.0, opt, 30);
        let t = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
        check_trace_invariants(&t);
        assert!(t.evaluations() <= 30, "{opt:?} used {}", t.evaluations());
        assert!(t.best_objective > t.baseline_objective, "{opt:?} made no progress");
        assert_abs_diff_eq!(
            t.final_fidelity.unwrap(),
            schedule_fidelity(&DenseBackend, &p, &t.best).unwrap(),
            epsilon = 1e-12
        );
    }
}

#[test]
fn blackbox_budget_must_cover_a_simplex() {
    let cfg = BlackboxConfig::new(params(4, 1.0), 3, 2.0, OptimizerKind::NelderMead, 3);
    assert!(run_blackbox_vqaa(&DenseBackend, &cfg).is_err());
}

#[test]
fn experiment_mode_is_deterministic_and_counts_shots() {
    let p = params(6, 2.0);
    let mut cfg = BlackboxConfig::new(p, 2, 3.0, OptimizerKind::NelderMead, 12);
    cfg.mode = ObjectiveMode::Experiment {
        shots: Some(200),
        tau_count: 8,
        delta_estimate: 1.0,
    };
    cfg.seed = 5;
    let a = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    let b = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows[0].measurement_count, 2 * 200 * 8);
    check_trace_invariants(&a);
    cfg.seed = 6;
    let c = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn exact_experiment_objective_bounds_the_fidelity() {
    let p = params(6, 1.0);
    let mut cfg = BlackboxConfig::new(p, 2, 6.0, OptimizerKind::NelderMead, 3);
    cfg.mode = ObjectiveMode::Experiment {
        shots: None,
        tau_count: 32,
        delta_estimate: 1.0,
    };
    let t = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    for r in &t.rows {
        let f = schedule_fidelity(&DenseBackend, &p, &PathConfig::default().schedule(&r.lengths, &r.times).unwrap()).unwrap();
        assert!(r.objective <= f + 0.02, "estimate {} vs fidelity {f}", r.objective);
    }
}

#[test]
fn noiseless_noise_config_matches_oracle() {
    let p = params(4, 1.0);
    let mut cfg = BlackboxConfig::new(p, 2, 2.0, OptimizerKind::NelderMead, 6);
    let clean = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    cfg.noise = Some(NoiseConfig {
        p: 0.0,
        n_trajectories: 3,
        shot_m: None,
        seed: 1,
    });
    let noisy = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    for (a, b) in clean.rows.iter().zip(&noisy.rows) {
        assert_abs_diff_eq!(a.objective, b.objective, epsilon = 1e-12);
    }
}

#[test]
fn ratio_run_without_gap_structure_stays_balanced() {
    let mut cfg = RatioConfig::new(params(4, 1.0), 2, 40.0, RatioMode::AncillaFree);
    cfg.max_iters = 20;
    let t = run_ratio_vqaa(&DenseBackend, &cfg).unwrap();
    let last = t.last.chunk_lengths();
    assert!((last[0] - 0.5).abs() < 0.1, "{last:?}");
    assert!(t.rows[0].chunk_overlaps.len() == 2);
    for w in t.rows.windows(2) {
        assert!(w[1].eval_count > w[0].eval_count);
    }
    let fo = run_ratio_vqaa(&DenseBackend, &RatioConfig { mode: RatioMode::ForwardOnly, ..cfg }).unwrap();
    assert!((fo.last.chunk_lengths()[0] - 0.5).abs() < 0.1);
}

#[test]
fn ratio_needs_two_chunks() {
    let cfg = RatioConfig::new(params(4, 1.0), 1, 4.0, RatioMode::ForwardOnly);
    assert!(run_ratio_vqaa(&DenseBackend, &cfg).is_err());
}

#[test]
fn easy_profile_uses_short_chunks() {
    let p = params(6, 1.0);
    let mut cfg = ProfileConfig::new(p, 4, 0.5, 20.0);
    cfg.theta0 = 0.5;
    cfg.verify = true;
    cfg.test.epsilon = 0.01;
    let t = run_profile_vqaa(&DenseBackend, &cfg).unwrap();
    assert!(!t.degraded());
    for c in &t.profile {
        assert!(c.time < 5.0, "{c:?}");
        assert!(c.tests <= 20);
        assert!(c.oracle_overlap.unwrap() >= 0.5);
    }
    assert_eq!(t.objective_kind, ObjectiveKind::ProfileFollow);
}

#[test]
fn unreachable_profile_pins_the_cap() {
    let p = params(6, 3.0);
    let mut cfg = ProfileConfig::new(p, 2, 0.999, 0.5);
    cfg.test.max_samples = 2000;
    let t = run_profile_vqaa(&DenseBackend, &cfg).unwrap();
    assert!(t.flags.contains(&RunFlag::ChunkAtCap { chunk: 1 }));
    assert_abs_diff_eq!(t.best.chunk_times()[1], 0.5, epsilon = 0.0);
}

#[test]
fn rotation_replacement_of_a_vanishing_chunk() {
    let p = params(6, 1.0);
    let sched = PathConfig::default().schedule(&[0.5, MIN_LEN, 0.5 - MIN_LEN], &[2.0, 1.5, 2.0]).unwrap();
    let r = rotation_check(&DenseBackend, &p, &sched).unwrap();
    assert_eq!(r.chunk, 1);
    assert!(r.change() < 1e-3, "{r:?}");
}

#[test]
fn trace_round_trips_and_writes_csv() {
    let cfg = BlackboxConfig::new(params(4, 1.0), 2, 1.0, OptimizerKind::CobylaLike, 8);
    let t = run_blackbox_vqaa(&DenseBackend, &cfg).unwrap();
    assert_eq!(OptimizationTrace::from_json(&t.to_json().unwrap()).unwrap(), t);
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iter,eval_count,measurement_count,objective,best_objective,len_1,len_2,t_1,t_2\n"));
    assert_eq!(text.lines().count(), t.rows.len() + 1);
}
