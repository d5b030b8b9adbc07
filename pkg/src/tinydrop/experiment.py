"""Desk-scale experiment setup shared by the scripts and the acceptance suite.

A single seed fixes everything: the train / validation / test splits of the
toy dataset and the initialisation and batch order of both models.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

from .data import ToyDataset, make_toy_dataset
from .model import ViTModel
from .pipeline import EvalSummary, sweep
from .train import RECIPES, accuracy, fit, preset_config

log = logging.getLogger(__name__)

TAU_GRID = (0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.98, 0.99, 0.995, 0.999)


@dataclass(frozen=True)
class DeskConfig:
    seed: int = 0
    num_classes: int = 8
    n_train: int = 4000
    n_val: int = 500
    n_test: int = 2000
    guidance_epochs: int = RECIPES["guidance"]["epochs"]
    guidance_lr: float = RECIPES["guidance"]["lr"]
    target_epochs: int = RECIPES["target"]["epochs"]
    target_lr: float = RECIPES["target"]["lr"]


@dataclass
class DeskSetup:
    config: DeskConfig
    train: ToyDataset
    val: ToyDataset
    test: ToyDataset
    guidance: ViTModel
    target: ViTModel
    train_seconds: float
    build_seconds: float
    history: dict = field(default_factory=dict)


def build_setup(config: DeskConfig = DeskConfig()) -> DeskSetup:
    s = config.seed
    start = time.perf_counter()
    # disjoint seeds per split so the test images are never seen in training
    train = make_toy_dataset(config.n_train, 3 * s + 1000, num_classes=config.num_classes)
    val = make_toy_dataset(config.n_val, 3 * s + 1001, num_classes=config.num_classes)
    test = make_toy_dataset(config.n_test, 3 * s + 1002, num_classes=config.num_classes)
    t0 = time.perf_counter()
    hist = {"guidance": [], "target": []}
    guidance = fit(preset_config("guidance", config.num_classes), train,
                   config.guidance_epochs, config.guidance_lr, s, history=hist["guidance"])
    target = fit(preset_config("target", config.num_classes), train,
                 config.target_epochs, config.target_lr, s, history=hist["target"])
    dt = time.perf_counter() - t0
    if log.isEnabledFor(logging.INFO):
        log.info("trained pair in %.1fs (guidance %.3f, target %.3f on test)",
                 dt, accuracy(guidance, test), accuracy(target, test))
    return DeskSetup(config, train, val, test, guidance, target, dt, time.perf_counter() - start, hist)


def choose_tau(rows: Sequence[EvalSummary], baseline_accuracy: float, max_drop: float = 0.01) -> EvalSummary:
    """Cheapest sweep row whose accuracy stays within ``max_drop`` of the baseline.

    Falls back to the most accurate row if none qualifies.
    """
    ok = [r for r in rows if r.accuracy is not None and r.accuracy >= baseline_accuracy - max_drop]
    if ok:
        return min(ok, key=lambda r: (r.mean_flops, -r.tau))
    return max(rows, key=lambda r: (r.accuracy or 0.0, -r.mean_flops))


def select_tau(setup: DeskSetup, gamma: float = 0.5, r_max: float = 0.7, taus=TAU_GRID,
               max_drop: float = 0.01) -> tuple[EvalSummary, list[EvalSummary]]:
    """Sweep tau on the validation split only."""
    base = accuracy(setup.target, setup.val)
    rows = sweep(setup.val, setup.guidance, setup.target, taus, [gamma], r_max)
    return choose_tau(rows, base, max_drop), rows
