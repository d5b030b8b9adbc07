"""Accuracy / FLOPs trade-off on the toy task.

Trains the guidance and target pair, picks tau on the validation split, then
reports the held-out test numbers next to the full-token baseline, together
with the saliency hit rate and a gamma ablation at the chosen tau.

    python3 scripts/tradeoff.py --seed 0 [--out results/tradeoff.json]
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from tinydrop.experiment import DeskConfig, build_setup, select_tau
from tinydrop.pipeline import _states, evaluate_baseline, summarize
from tinydrop.policy import PolicyParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    setup = build_setup(DeskConfig(seed=args.seed))
    chosen, val_rows = select_tau(setup)
    print("validation sweep (gamma=0.5, r_max=0.7)")
    for r in val_rows:
        print(f"  tau={r.tau:<6} acc={r.accuracy:.4f} gflops={r.mean_gflops:.5f} "
              f"exit={r.exit_rate:.3f} keep={r.mean_keep_ratio:.3f}")
    print(f"chosen tau = {chosen.tau}")

    t0 = time.perf_counter()
    base = evaluate_baseline(setup.test, setup.target)
    states = _states(setup.test, setup.guidance, setup.target, 1)
    T = setup.target.cfg.num_patches
    results = {}
    for gamma in (0.25, 0.5, 1.0):
        params = PolicyParams(chosen.tau, gamma, 0.7)
        records = [s.resolve(params) for s in states]
        summary = summarize(records, params, T)
        proceed = [r for r in records if not r.exited_early]
        hits = [int(setup.test.cells[r.index]) in r.keep_indices for r in proceed]
        results[gamma] = dict(
            accuracy=summary.accuracy, mean_flops=summary.mean_flops, exit_rate=summary.exit_rate,
            mean_keep_ratio=summary.mean_keep_ratio, saliency_hit=float(np.mean(hits)) if hits else None,
        )
    dt = time.perf_counter() - t0

    d = results[0.5]
    report = dict(
        seed=args.seed, train_seconds=setup.train_seconds, eval_seconds=dt, tau=chosen.tau,
        baseline_accuracy=base.accuracy, baseline_flops=base.mean_flops,
        flops_reduction=1 - d["mean_flops"] / base.mean_flops,
        accuracy_drop=base.accuracy - d["accuracy"], gamma=results,
    )
    print(json.dumps(report, indent=2))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(report, indent=2) + "\n")


if __name__ == "__main__":
    main()
