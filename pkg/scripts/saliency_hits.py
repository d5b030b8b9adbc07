"""How often the informative cell survives selection, as a function of K.

Every test sample is scored regardless of the exit rule, so this isolates the
quality of the guidance saliency map. A uniform random selection keeps the
cell with probability K/T, printed alongside for reference.

    python3 scripts/saliency_hits.py --seed 0
"""

import argparse

import numpy as np

from tinydrop.dropper import select_tokens
from tinydrop.experiment import DeskConfig, build_setup
from tinydrop.pipeline import _states


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    setup = build_setup(DeskConfig(seed=args.seed))
    states = _states(setup.test, setup.guidance, setup.target, 1)
    cells = setup.test.cells
    labels = setup.test.labels
    T = setup.target.cfg.num_patches
    print(" K   hit    random")
    for k in (1, 2, 4, 8):
        hit = np.array([cells[s.index] in select_tokens(s.saliency, k).keep_indices for s in states])
        print(f"{k:2d}  {hit.mean():.4f}  {k / T:.4f}")
        if k == 1:
            per_class = {int(c): round(float(hit[labels == c].mean()), 3) for c in np.unique(labels)}
            print("    top-1 hit by class:", per_class)


if __name__ == "__main__":
    main()
