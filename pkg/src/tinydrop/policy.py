"""Guidance-confidence decisions: early exit, drop ratio, kept-token count."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyParams:
    tau: float
    gamma: float = 0.5
    r_max: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.r_max < 1.0:
            raise ValueError(f"r_max must lie in [0, 1), got {self.r_max}")


@dataclass(frozen=True)
class Exit:
    class_index: int
    confidence: float


@dataclass(frozen=True)
class Proceed:
    confidence: float
    drop_ratio: float = 0.0
    kept_count: int | None = None

    def __post_init__(self):
        if self.kept_count is not None and self.kept_count < 1:
            raise ContractError(f"kept_count must be >= 1, got {self.kept_count}")


ExitDecision = Exit | Proceed


def early_exit(probs, tau: float) -> ExitDecision:
    """Exit with the guidance argmax when its confidence strictly exceeds ``tau``."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    total = probs.sum()
    if abs(total - 1.0) > 1e-6 or np.any(probs < 0):
        raise ContractError(f"not a probability vector (sum={total:.9g})")
    idx = int(np.argmax(probs))
    c = float(probs[idx])
    if c > tau:
        return Exit(idx, c)
    return Proceed(c)


def drop_ratio(c: float, params: PolicyParams) -> float:
    c = min(max(c, 0.0), params.tau)
    return min(params.r_max, params.r_max * (c / params.tau) ** params.gamma)


def kept_count(r: float, num_tokens: int) -> int:
    return max(1, math.floor((1.0 - r) * num_tokens))


def decide(probs, params: PolicyParams, num_tokens: int) -> ExitDecision:
    d = early_exit(probs, params.tau)
    if isinstance(d, Exit):
        return d
    r = drop_ratio(d.confidence, params)
    return replace(d, drop_ratio=r, kept_count=kept_count(r, num_tokens))
