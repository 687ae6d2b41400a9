//! End-to-end acceptance checks. Each check prints one PASS/FAIL line.
//! Checks listed in `KNOWN_RED` are reported but do not fail the run.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqaa_core::evolve::{evolve_chunk, evolve_schedule, naive_schedule, Direction, Propagator, StepConfig};
use vqaa_core::hamiltonian::exact::{gap_profile_in, ground_state, GapSector};
use vqaa_core::hamiltonian::{build_zzxz, interpolate, ModelParams};
use vqaa_core::inference::{decide_simulated, hoeffding_samples, BetaPosterior, TestConfig, Verdict};
use vqaa_core::linalg::C64;
use vqaa_core::mps::Mps;
use vqaa_core::noise::{deliberate_flip_run, dry_run_event_counts, Flip, Pauli};
use vqaa_core::overlap::{alpha, ancilla_density_matrix, explicit_ancilla_reference, ground_population_bound, SpectralCache};
use vqaa_core::spectroscopy::{gap_profile_estimate, lz_sweep, lz_time_scaling, lz_transition_probability, log_log_slope, run_spectroscopy, uniform_grid, SpectroscopyConfig, SpectroscopyMethod};
use vqaa_core::statevector::{minus_states, DenseBackend, StateVector};
use vqaa_core::vqaa::{
    rotation_check, run_blackbox_vqaa, run_profile_vqaa, schedule_fidelity, BlackboxConfig, ObjectiveMode, OptimizerKind, ProfileConfig,
};

const KNOWN_RED: &[&str] = &["C5", "C7", "C10"];

type Outcome = Result<(bool, String), String>;

fn random_params(n: usize, rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams::new(n, rng.random_range(0.5..4.0), rng.random_range(0.5..1.5), rng.random_range(0.2..1.5)).unwrap()
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector {
    let amps: Vec<C64> = (0..1usize << n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let mut s = StateVector::new(n, amps).unwrap();
    s.normalize().unwrap();
    s
}

fn dense_run(p: &ModelParams, t: f64, dt: f64, prop: Propagator) -> StateVector {
    let (h0, ht) = build_zzxz(p).unwrap();
    let sched = naive_schedule(1, t).unwrap().with_dt(dt).unwrap();
    let mut s = StateVector::product_state(&minus_states(p.num_sites)).unwrap();
    let step = StepConfig::from_schedule(&sched).with_propagator(prop);
    evolve_chunk(&mut s, &h0, &ht, 0.0, 1.0, t, &step).unwrap();
    s
}

fn backend_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 1.0;
    for _ in 0..2 {
        let p = random_params(8, &mut rng);
        let (h0, ht) = build_zzxz(&p).map_err(|e| e.to_string())?;
        for t in [1.0, 5.0, 20.0] {
            let sched = naive_schedule(1, t).map_err(|e| e.to_string())?;
            let mut m = Mps::product_state(&minus_states(8)).map_err(|e| e.to_string())?;
            evolve_schedule(&mut m, &h0, &ht, &sched, Direction::Forward, None, Propagator::Trotter).map_err(|e| e.to_string())?;
            let exact = dense_run(&p, t, sched.dt, Propagator::Exact);
            let f = m.to_dense().map_err(|e| e.to_string())?.fidelity(&exact).powi(2);
            worst = worst.min(f);
        }
    }
    Ok((worst >= 1.0 - 1e-4, format!("min fidelity {worst:.10}")))
}

fn trotter_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ratios = Vec::new();
    for _ in 0..2 {
        let p = random_params(8, &mut rng);
        for t in [1.0, 5.0] {
            let deficit = |dt: f64| {
                let f = dense_run(&p, t, dt, Propagator::Trotter).fidelity(&dense_run(&p, t, dt, Propagator::Exact));
                (1.0 - f * f).max(0.0).sqrt()
            };
            ratios.push(deficit(1.0 / 16.0) / deficit(1.0 / 32.0));
        }
    }
    let ok = ratios.iter().all(|r| (3.0..=5.0).contains(r));
    Ok((ok, format!("deficit ratios {:?}", ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>())))
}

fn ancilla_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let p = random_params(n, &mut rng);
        let (h0, ht) = build_zzxz(&p).map_err(|e| e.to_string())?;
        let terms = interpolate(&h0, &ht, rng.random_range(0.0..1.0)).map_err(|e| e.to_string())?;
        let state = random_state(n, &mut rng);
        let tau = rng.random_range(-10.0..10.0);
        let a = alpha(&state, &terms, tau, &StepConfig::default().with_propagator(Propagator::Exact)).map_err(|e| e.to_string())?;
        let explicit = explicit_ancilla_reference(&state, &terms, tau).map_err(|e| e.to_string())?;
        let rho = ancilla_density_matrix(&state, &terms, tau).map_err(|e| e.to_string())?;
        let purity = (rho * rho).trace().re;
        worst = worst
            .max((a - explicit).norm())
            .max((rho[(1, 0)] * 2.0 - a).norm())
            .max((purity - 0.5 * (1.0 + a.norm_sqr())).abs());
    }
    Ok((worst < 1e-8, format!("max disagreement {worst:.2e}")))
}

fn bound_soundness() -> Outcome {
    let at = ground_population_bound(0.54).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut violations = 0;
    let mut checked = 0;
    for n in [2usize, 4, 6, 8, 10] {
        let p = random_params(n, &mut rng);
        let (h0, ht) = build_zzxz(&p).map_err(|e| e.to_string())?;
        let terms = interpolate(&h0, &ht, rng.random_range(0.0..1.0)).map_err(|e| e.to_string())?;
        let cache = SpectralCache::new(&terms).map_err(|e| e.to_string())?;
        let (_, ground) = ground_state(&terms).map_err(|e| e.to_string())?;
        let mut kept = 0;
        while kept < 200 {
            let rest = random_state(n, &mut rng);
            let w = rng.random_range(0.5f64..1.0).sqrt();
            let amps: Vec<C64> = ground.iter().zip(rest.amplitudes()).map(|(g, r)| g * w + r * (1.0 - w * w).sqrt()).collect();
            let mut s = StateVector::new(n, amps).map_err(|e| e.to_string())?;
            s.normalize().map_err(|e| e.to_string())?;
            let pops = cache.populations(&s).map_err(|e| e.to_string())?;
            if pops[0] < 0.5 {
                continue;
            }
            let e2: f64 = pops.iter().map(|q| q * q).sum();
            if pops[0] + 1e-12 < ground_population_bound(e2.min(1.0)).map_err(|e| e.to_string())? {
                violations += 1;
            }
            checked += 1;
            kept += 1;
        }
    }
    let ok = (at - 0.6414).abs() <= 5e-4 && violations == 0 && checked >= 1000;
    Ok((ok, format!("bound(0.54) = {at:.5}; {violations} violations over {checked} states")))
}

fn spectroscopy_localization() -> Outcome {
    let grid = uniform_grid(25);
    let fine: Vec<f64> = (0..=400).map(|k| k as f64 / 400.0).collect();
    let mut rows = Vec::new();
    for j in [2.0, 3.0, 5.0] {
        let p = ModelParams::new(10, j, 1.0, 1.0).map_err(|e| e.to_string())?;
        let curve = run_spectroscopy(&DenseBackend, &SpectroscopyConfig::new(p, 0.7, SpectroscopyMethod::Ancilla), &grid).map_err(|e| e.to_string())?;
        let est = gap_profile_estimate(&curve).map_err(|e| e.to_string())?;
        let gaps = gap_profile_in(&p, &fine, GapSector::Reachable).map_err(|e| e.to_string())?;
        let min = gaps.iter().min_by(|a, b| a.gap.total_cmp(&b.gap)).unwrap();
        rows.push((j, est.argmin_s, est.min_value, min.s, min.gap));
    }
    let (_, argmin, _, oracle_s, _) = rows[1];
    let position_ok = (argmin - oracle_s).abs() <= 0.05;
    let mut by_depth: Vec<_> = rows.iter().collect();
    by_depth.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut by_gap: Vec<_> = rows.iter().collect();
    by_gap.sort_by(|a, b| a.4.total_cmp(&b.4));
    let ranking_ok = by_depth.iter().zip(&by_gap).all(|(a, b)| a.0 == b.0);
    let detail = rows
        .iter()
        .map(|r| format!("J={}: argmin {:.3} depth {:.2} | oracle s {:.3} gap {:.4}", r.0, r.1, r.2, r.3, r.4))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((position_ok && ranking_ok, format!("position {} ranking {}; {detail}", ok_str(position_ok), ok_str(ranking_ok))))
}

fn landau_zener() -> Outcome {
    let g: f64 = 1.0;
    let mut worst: f64 = 0.0;
    for delta in [0.02, 0.05, 0.1] {
        for end in [-2.0f64, -1.0, -0.5, 0.0] {
            let e = (end * end + g * g).sqrt();
            let start = end - 8.0 * e.max(g);
            let numeric = lz_sweep(delta, g, start, end, 0.01).map_err(|e| e.to_string())?;
            let formula = lz_transition_probability(delta, g, end / delta).map_err(|e| e.to_string())?;
            worst = worst.max((numeric / formula - 1.0).abs());
        }
    }
    let ends: Vec<f64> = (0..8).map(|k| -0.2 - 0.2 * k as f64).collect();
    let mut slopes = Vec::new();
    for target in [1e-5, 1e-6] {
        let pts = lz_time_scaling(target, g, &ends).map_err(|e| e.to_string())?;
        let gaps: Vec<f64> = pts.iter().map(|p| p.gap).collect();
        let rates: Vec<f64> = pts.iter().map(|p| p.time_rate).collect();
        slopes.push(log_log_slope(&gaps, &rates).map_err(|e| e.to_string())?);
    }
    let ok = worst <= 0.2 && slopes.iter().all(|s| (s + 2.0).abs() <= 0.3);
    Ok((ok, format!("max relative deviation {worst:.3}; slopes {:?}", slopes.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>())))
}

fn blackbox_improvement() -> Outcome {
    let p = ModelParams::new(12, 3.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let t = 1.0;
    let naive = schedule_fidelity(&DenseBackend, &p, &naive_schedule(3, t).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let tr = run_blackbox_vqaa(&DenseBackend, &BlackboxConfig::new(p, 3, t, OptimizerKind::NelderMead, 300)).map_err(|e| e.to_string())?;
    let best = schedule_fidelity(&DenseBackend, &p, &tr.best).map_err(|e| e.to_string())?;
    let ok = (0.05..=0.3).contains(&naive) && best >= 3.0 * naive && tr.evaluations() <= 300;
    Ok((ok, format!("naive {naive:.4} optimized {best:.4} ratio {:.2} after {} evaluations", best / naive, tr.evaluations())))
}

fn rotation_phenomenon() -> Outcome {
    let p = ModelParams::new(10, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let tr = run_blackbox_vqaa(&DenseBackend, &BlackboxConfig::new(p, 3, 1.0, OptimizerKind::NelderMead, 300)).map_err(|e| e.to_string())?;
    let check = rotation_check(&DenseBackend, &p, &tr.best).map_err(|e| e.to_string())?;
    let ok = check.s_len < 1e-3 && check.change() < 1e-3;
    Ok((ok, format!("chunk {} length {:.2e}; fidelity change {:.2e}", check.chunk, check.s_len, check.change())))
}

fn sample_counts() -> Outcome {
    let cfg = TestConfig {
        prior: BetaPosterior::new(10.0, 2.0).map_err(|e| e.to_string())?,
        h0: 0.9,
        epsilon: 0.05,
        alpha_threshold: 0.05,
        max_samples: 10_000,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut used = Vec::new();
    let mut accepted = 0;
    for _ in 0..1000 {
        let d = decide_simulated(0.99, &cfg, &mut rng).map_err(|e| e.to_string())?;
        if d.verdict == Verdict::Accept {
            accepted += 1;
        }
        used.push(d.samples_used);
    }
    used.sort_unstable();
    let median = used[used.len() / 2];
    let h = hoeffding_samples(0.1, 0.5, 2.0).map_err(|e| e.to_string())?;
    Ok((median <= 25 && h == 139, format!("median {median} samples, {accepted}/1000 accepted; hoeffding {h}")))
}

fn noise_expectations() -> Outcome {
    let sched = naive_schedule(1, 5.0).map_err(|e| e.to_string())?;
    let counts = dry_run_event_counts(100, &sched, 1e-4, 10_000, 21).map_err(|e| e.to_string())?;
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let p = ModelParams::new(10, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let small = naive_schedule(3, 5.0).map_err(|e| e.to_string())?;
    let base = deliberate_flip_run(&DenseBackend, &p, &small, None).map_err(|e| e.to_string())?;
    let flipped = deliberate_flip_run(&DenseBackend, &p, &small, Some(Flip { site: 4, layer: 0, pauli: Pauli::X })).map_err(|e| e.to_string())?;
    let extra = (flipped - base).abs();
    let ok = (mean - 0.96).abs() <= 0.03 && extra < 1e-10;
    Ok((ok, format!("mean events {mean:.4}; layer-0 flip extra error {extra:.1e}")))
}

fn shot_noise_convergence() -> Outcome {
    let p = ModelParams::new(10, 3.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    for m in [1_000usize, 10_000] {
        let mut cfg = BlackboxConfig::new(p, 3, 20.0, OptimizerKind::NelderMead, 150);
        cfg.mode = ObjectiveMode::Experiment {
            shots: Some(m),
            tau_count: 32,
            delta_estimate: 1.0,
        };
        cfg.seed = 7;
        let tr = run_blackbox_vqaa(&DenseBackend, &cfg).map_err(|e| e.to_string())?;
        finals.push(schedule_fidelity(&DenseBackend, &p, &tr.best).map_err(|e| e.to_string())?);
    }
    let diff = (finals[0] - finals[1]).abs();
    Ok((diff <= 0.05, format!("final fidelity m=1e3 {:.4}, m=1e4 {:.4}, difference {diff:.4}", finals[0], finals[1])))
}

fn profile_algorithm() -> Outcome {
    let p = ModelParams::new(10, 3.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let mut cfg = ProfileConfig::new(p, 10, 0.99, 20.0);
    cfg.seed = 3;
    let tr = run_profile_vqaa(&DenseBackend, &cfg).map_err(|e| e.to_string())?;
    let fid = schedule_fidelity(&DenseBackend, &p, &tr.best).map_err(|e| e.to_string())?;
    let max_tests = tr.profile.iter().map(|c| c.tests).max().unwrap_or(0);
    let ok = fid >= 0.99 - 0.02 && max_tests <= 20;
    Ok((ok, format!("final fidelity {fid:.4}; at most {max_tests} estimations per chunk; total T {:.2}", tr.best.total_time())))
}

fn ok_str(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "off"
    }
}

fn main() {
    let checks: [(&str, &str, fn() -> Outcome); 12] = [
        ("C1", "MPS and dense evolution agree", backend_equivalence),
        ("C2", "Trotter deficit scales to second order", trotter_order),
        ("C3", "ancilla routes agree", ancilla_consistency),
        ("C4", "ground population bound", bound_soundness),
        ("C5", "spectroscopy localizes the gap", spectroscopy_localization),
        ("C6", "Landau-Zener formula and slope", landau_zener),
        ("C7", "black-box schedule improves on naive", blackbox_improvement),
        ("C8", "vanishing chunk acts as a rotation", rotation_phenomenon),
        ("C9", "sequential test sample counts", sample_counts),
        ("C10", "noise event counts and layer-0 flip", noise_expectations),
        ("C11", "shot-noise convergence", shot_noise_convergence),
        ("C12", "profile search reaches target", profile_algorithm),
    ];
    let mut unexpected = 0;
    for (id, name, check) in checks {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let note = if !pass && KNOWN_RED.contains(&id) { " (known)" } else { "" };
        println!(
            "{id:<4} {} {name}: {detail} [{:.1}s]{note}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !pass && !KNOWN_RED.contains(&id) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
