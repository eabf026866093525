"""m-regret of NeuralUCB under always-solicit, FSS and an FSS-UT alpha sweep."""
import argparse

import numpy as np

from qoebandit import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=5)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--sessions", type=int, default=200)
    ap.add_argument("--lam", type=float, default=0.13)
    ap.add_argument("--out", default="runs/solicitation")
    args = ap.parse_args()

    schedules = ["always", f"fss:{args.sessions}"] + [f"fssut:{a:.1f}" for a in np.arange(1, 11) / 10]
    results = []
    print(f"{'schedule':>12} {'asked':>6} {'learning':>9} {'m-regret':>9}")
    for sched in schedules:
        cfg = harness.ExperimentConfig(policy="neural_ucb", schedule=sched, lam=args.lam, users=args.users,
                                       repetitions=args.seeds, sessions=args.sessions)
        res = harness.run_experiment(cfg)
        results.append(res)
        s = res.summary()
        print(f"{sched:>12} {s['solicitations_mean']:6.0f} {s['final_regret_mean']:9.3f} "
              f"{s['final_m_regret_mean']:9.3f}", flush=True)
    harness.write_outputs(results, args.out)


if __name__ == "__main__":
    main()
