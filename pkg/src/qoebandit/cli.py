"""Command line entry points: ``run`` experiments and ``pretrain`` a transfer QPN."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from . import harness, qpn

log = logging.getLogger("qoebandit")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qoebandit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate users and write sessions/curves/summary CSVs")
    run.add_argument("--config", help="YAML file of flat ExperimentConfig keys")
    run.add_argument("--policy", action="append",
                     help="policy name, repeatable: neural_ucb, neural_ucb_transfer, neural_ucb_agg, "
                          "linucb, random, oracle or fixed(m)")
    run.add_argument("--sessions", type=int)
    run.add_argument("--users", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--repetitions", type=int, help="number of consecutive seeds starting at --seed")
    run.add_argument("--schedule", help="always | fss:<T> | fssut:<alpha>")
    run.add_argument("--lambda", dest="lam", type=float, help="cost per solicitation")
    run.add_argument("--aggregation", choices=harness.AGGREGATIONS)
    run.add_argument("--mixed-fraction", dest="mixed_fraction", type=float)
    run.add_argument("--transfer-params", dest="transfer_params", help="pretrained parameter dump")
    run.add_argument("--workers", type=int)
    run.add_argument("--out", required=True, help="output directory")

    pre = sub.add_parser("pretrain", help="pretrain a QPN on pooled simulated users")
    pre.add_argument("--config", help="YAML file; only environment and pretrain_* keys are used")
    pre.add_argument("--seed", type=int)
    pre.add_argument("--out", required=True, help="binary parameter dump to write")
    return parser


def _base_config(path, overrides) -> harness.ExperimentConfig:
    if path:
        return harness.load_config(path, overrides)
    return harness.config_from_mapping(overrides)


def _cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in
                 ("sessions", "users", "seed", "repetitions", "schedule", "lam", "aggregation",
                  "mixed_fraction", "transfer_params", "workers")}
    base = _base_config(args.config, overrides)
    results = []
    for policy in args.policy or [base.policy]:
        cfg = base.replace(policy=harness.normalize_policy(policy))
        start = time.perf_counter()
        results.append(harness.run_experiment(cfg))
        log.info("%s: %d runs in %.1fs", cfg.policy, len(results[-1].runs), time.perf_counter() - start)
    out = harness.write_outputs(results, args.out)
    for row in (r.summary() for r in results):
        print(f"{row['policy']:>20}  qoe {row['average_qoe_mean']:.4f}  regret {row['final_regret_mean']:.3f}"
              f"  m-regret {row['final_m_regret_mean']:.3f}")
    print(f"wrote {out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _base_config(args.config, {"seed": args.seed})
    params = harness.pretrain_transfer_qpn(
        cfg.seed, cfg.pretrain_samples_per_user, cfg.pretrain_users,
        qpn.TrainConfig(cfg.pretrain_learning_rate, cfg.pretrain_steps), cfg.env)
    qpn.save_params(params, args.out)
    print(f"wrote {params.num_params} parameters to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return _cmd_run(args) if args.command == "run" else _cmd_pretrain(args)
    except (ValueError, OSError, qpn.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
