"""Regret curves and average QoE for the main policies on the default simulator.

    python scripts/compare_policies.py --users 50 --seeds 10 --out runs/policies
"""
import argparse

from qoebandit import harness, metrics

POLICIES = ["oracle", "neural_ucb_transfer", "neural_ucb", "fixed(0)", "fixed(1)", "fixed(2)", "linucb", "random"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=50)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sessions", type=int, default=200)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/policies")
    args = ap.parse_args()

    results = []
    for name in POLICIES:
        cfg = harness.ExperimentConfig(policy=name, users=args.users, repetitions=args.seeds,
                                       sessions=args.sessions, workers=args.workers)
        res = harness.run_experiment(cfg)
        results.append(res)
        curve = res.mean_regret_curve()
        slope = metrics.loglog_slope(curve, 50, args.sessions) if curve[49] > 0 else float("nan")
        print(f"{cfg.policy:>20}  qoe {res.average_qoes().mean():.4f}  regret {curve[-1]:7.3f}  slope {slope:.3f}",
              flush=True)
    print("wrote", harness.write_outputs(results, args.out))


if __name__ == "__main__":
    main()
