"""QoE gain of refined aggregated feedback over naive last-arm attribution."""
import argparse

from qoebandit import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=2)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sessions", type=int, default=100)
    ap.add_argument("--fractions", type=float, nargs="*", default=[1.0],
                    help="share of sessions whose feedback is aggregated")
    args = ap.parse_args()

    for mode in ("mean", "sequence"):
        for frac in args.fractions:
            qoe = {}
            for naive in (True, False):
                cfg = harness.ExperimentConfig(policy="neural_ucb_agg", aggregation=mode, mixed_fraction=frac,
                                               naive_attribution=naive, users=args.users,
                                               repetitions=args.seeds, sessions=args.sessions)
                res = harness.run_experiment(cfg)
                qoe[naive] = res.per_seed(res.average_qoes())
            gain = qoe[False] - qoe[True]
            print(f"{mode:>8} fraction {frac:.2f}: naive {qoe[True].mean():.4f} refined {qoe[False].mean():.4f} "
                  f"gain {gain.mean():+.4f} +- {gain.std() / len(gain) ** 0.5:.4f}", flush=True)


if __name__ == "__main__":
    main()
