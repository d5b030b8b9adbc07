"""Token selection and positional-structure adaptation for a reduced sequence.

Row/slice 0 of every adapted structure is the class token; rows ``1..K``
follow ``keep_indices`` in ascending (raster) order. Patch index ``i`` lives at
row ``i + 1`` of the full positional tables because row 0 is the class token.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tensor import arg_top_k


class SelectionError(IndexError):
    pass


class AdaptationError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSelection:
    keep_indices: tuple[int, ...]

    def __post_init__(self):
        idx = self.keep_indices
        if len(idx) < 1:
            raise SelectionError("selection must keep at least one token")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise SelectionError(f"keep_indices must be strictly increasing: {idx}")
        if idx[0] < 0:
            raise SelectionError(f"negative token index in {idx}")

    @property
    def k(self) -> int:
        return len(self.keep_indices)

    @classmethod
    def all(cls, num_tokens: int) -> "TokenSelection":
        return cls(tuple(range(num_tokens)))

    def sequence_index(self) -> np.ndarray:
        """Row indices into a (T+1)-row table: class token first, then kept patches."""
        return np.array((0,) + tuple(i + 1 for i in self.keep_indices), dtype=np.int64)


@dataclass(frozen=True)
class AdaptedPositional:
    """Positional structure matching a (K+1)-token sequence.

    ``pos`` is ``(K+1, C)`` in absolute mode, ``bias`` is ``(K+1, K+1, n_H)``
    in relative_bias mode; the other one is ``None``.
    """

    mode: Literal["absolute", "relative_bias"]
    pos: np.ndarray | None = None
    bias: np.ndarray | None = None

    @property
    def length(self) -> int:
        return (self.pos if self.mode == "absolute" else self.bias).shape[0]


def select_tokens(scores, k: int) -> TokenSelection:
    """Keep the ``k`` highest-scoring patch tokens (accepts a SaliencyMap or a vector)."""
    scores = getattr(scores, "scores", scores)
    return TokenSelection(tuple(arg_top_k(scores, k)))


def _check_bounds(sel: TokenSelection, num_tokens: int) -> None:
    if sel.keep_indices[-1] >= num_tokens:
        raise SelectionError(
            f"index {sel.keep_indices[-1]} out of bounds for {num_tokens} patch tokens"
        )


def gather_tokens(x_patch: np.ndarray, x_cls: np.ndarray, sel: TokenSelection) -> np.ndarray:
    """Reduced sequence ``concat(x_cls, x_patch[keep_indices])`` of shape (K+1, C)."""
    x_patch = np.asarray(x_patch, dtype=np.float64)
    x_cls = np.asarray(x_cls, dtype=np.float64).reshape(1, -1)
    if x_patch.ndim != 2 or x_cls.shape[1] != x_patch.shape[1]:
        raise SelectionError(f"incompatible shapes: patch {x_patch.shape}, cls {x_cls.shape}")
    _check_bounds(sel, x_patch.shape[0])
    return np.concatenate([x_cls, x_patch[list(sel.keep_indices)]], axis=0)


def adapt_absolute(pos_embed: np.ndarray, sel: TokenSelection) -> np.ndarray:
    pos_embed = np.asarray(pos_embed, dtype=np.float64)
    if pos_embed.ndim != 2:
        raise AdaptationError(f"positional table must be 2-D, got {pos_embed.shape}")
    _check_bounds_adapt(sel, pos_embed.shape[0] - 1)
    return pos_embed[sel.sequence_index()]


def adapt_relative_bias(bias: np.ndarray, sel: TokenSelection) -> np.ndarray:
    # the class-token index 0 is prepended so the slice is (K+1) x (K+1) x n_H
    bias = np.asarray(bias, dtype=np.float64)
    if bias.ndim != 3 or bias.shape[0] != bias.shape[1]:
        raise AdaptationError(f"relative bias must be (T+1, T+1, n_H), got {bias.shape}")
    _check_bounds_adapt(sel, bias.shape[0] - 1)
    idx = sel.sequence_index()
    return bias[np.ix_(idx, idx)]


def _check_bounds_adapt(sel: TokenSelection, num_tokens: int) -> None:
    if sel.keep_indices[-1] >= num_tokens:
        raise AdaptationError(
            f"selection index {sel.keep_indices[-1]} exceeds table for {num_tokens} patch tokens"
        )


def adapt_positional(mode: str, table: np.ndarray, sel: TokenSelection) -> AdaptedPositional:
    if mode == "absolute":
        return AdaptedPositional("absolute", pos=adapt_absolute(table, sel))
    if mode == "relative_bias":
        return AdaptedPositional("relative_bias", bias=adapt_relative_bias(table, sel))
    raise AdaptationError(f"unknown positional mode {mode!r}")
