"""Quick end-to-end check of the Python bindings."""

import json
import math

import vqaa


def main():
    p = vqaa.ModelParams(6, J=2.0)
    assert p.n == 6 and p.J == 2.0, p

    gaps = vqaa.gap_profile(vqaa.ModelParams(2, J=1.5, h=0.7), [0.0, 0.5, 1.0])
    assert abs(gaps[0][2] - 1.4) < 1e-12, gaps

    naive = vqaa.Schedule.naive(3, 2.0)
    assert abs(sum(naive.lengths) - 1.0) < 1e-12
    assert vqaa.Schedule.from_json(naive.to_json()).times == naive.times

    f0 = vqaa.schedule_fidelity(p, naive)
    trace = vqaa.run_blackbox(p, 3, 2.0, budget=40)
    assert trace.best_objective >= f0 - 1e-12
    assert trace.evaluations <= 40
    json.loads(trace.to_json())

    assert abs(vqaa.ground_population_bound(0.54) - 0.6414) < 5e-4
    assert vqaa.hoeffding_samples(0.1, 0.5) == 139
    assert math.isclose(vqaa.lz_transition_probability(0.1, 1.0, 0.0), 0.01 / 16)

    counts = vqaa.dry_run_event_counts(4, vqaa.Schedule.naive(1, 1.0), 0.05, trajectories=20, seed=1)
    assert len(counts) == 20

    try:
        vqaa.ModelParams(1)
    except ValueError:
        pass
    else:
        raise AssertionError("single-site chain accepted")

    print(f"ok: naive {f0:.4f} -> optimized {trace.best_objective:.4f}")


if __name__ == "__main__":
    main()
