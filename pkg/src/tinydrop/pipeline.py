"""Per-sample guided inference, dataset evaluation and (tau, gamma) sweeps."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import ToyDataset
from .dropper import AdaptationError, SelectionError, TokenSelection, select_tokens
from .flops import FlopsReport, baseline_flops, pipeline_flops
from .model import ConfigError, ForwardTrace, ViTModel
from .policy import Exit, ExitDecision, PolicyParams, decide
from .saliency import SaliencyMap, saliency_from_trace
from .tensor import softmax


class SampleError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"sample {index}: {cause}")
        self.index = index


@dataclass
class SampleResult:
    index: int
    prediction: int
    exited_early: bool
    confidence: float
    drop_ratio: float
    kept_tokens: int
    flops: FlopsReport
    label: int | None = None
    keep_indices: tuple[int, ...] | None = None
    logits: np.ndarray | None = field(default=None, repr=False, compare=False)
    saliency: SaliencyMap | None = field(default=None, repr=False, compare=False)

    @property
    def correct(self) -> bool | None:
        return None if self.label is None else self.prediction == self.label

    def to_json_dict(self) -> dict:
        """Fixed key order; see :mod:`tinydrop.reports` for the schema."""
        d = {
            "index": self.index,
            "label": self.label,
            "prediction": self.prediction,
            "correct": self.correct,
            "exited_early": self.exited_early,
            "confidence": self.confidence,
            "drop_ratio": self.drop_ratio,
            "kept_tokens": self.kept_tokens,
            "keep_indices": None if self.keep_indices is None else list(self.keep_indices),
            "flops": self.flops.to_dict(),
        }
        if self.label is None:
            del d["label"], d["correct"]
        return d


@dataclass(frozen=True)
class EvalSummary:
    tau: float
    gamma: float
    r_max: float
    n_samples: int
    accuracy: float | None
    mean_flops: float
    exit_rate: float
    mean_keep_ratio: float

    @property
    def mean_gflops(self) -> float:
        return self.mean_flops / 1e9


class _SampleState:
    """Guidance-side work for one sample, shared across policy settings."""

    def __init__(self, index: int, image, label, guidance: ViTModel, target: ViTModel):
        self.index = index
        self.image = image
        self.label = label
        self.guidance = guidance
        self.target = target
        self.trace: ForwardTrace = guidance.forward_full(image)
        self.probs = softmax(self.trace.logits)
        self._saliency: SaliencyMap | None = None
        self._target_logits: dict[int, tuple[tuple[int, ...], np.ndarray]] = {}

    @property
    def saliency(self) -> SaliencyMap:
        if self._saliency is None:
            g = self.guidance
            self._saliency = saliency_from_trace(
                self.trace, g.cfg, g.weights, int(np.argmax(self.trace.logits)), self.target.cfg.num_patches
            )
        return self._saliency

    def target_logits(self, k: int) -> tuple[tuple[int, ...], np.ndarray]:
        if k not in self._target_logits:
            sel = select_tokens(self.saliency, k)
            trace = self.target.forward_selected(self.image, sel)
            self._target_logits[k] = (sel.keep_indices, trace.logits)
        return self._target_logits[k]

    def resolve(self, params: PolicyParams) -> SampleResult:
        try:
            return self._resolve(params)
        except (ConfigError, AdaptationError, SelectionError, ValueError) as e:
            raise SampleError(self.index, e) from e

    def _resolve(self, params: PolicyParams) -> SampleResult:
        T = self.target.cfg.num_patches
        decision: ExitDecision = decide(self.probs, params, T)
        flops = pipeline_flops(decision, self.guidance.cfg, self.target.cfg)
        if isinstance(decision, Exit):
            return SampleResult(
                self.index, decision.class_index, True, decision.confidence, 0.0, T, flops,
                label=self.label, logits=self.trace.logits,
            )
        keep, logits = self.target_logits(decision.kept_count)
        return SampleResult(
            self.index, int(np.argmax(logits)), False, decision.confidence, decision.drop_ratio,
            decision.kept_count, flops, label=self.label, keep_indices=keep, logits=logits,
            saliency=self.saliency,
        )


def _label(ds: ToyDataset, i: int) -> int | None:
    lab = int(ds.labels[i])
    return lab if lab >= 0 else None


def infer_one(image, label, guidance: ViTModel, target: ViTModel, params: PolicyParams, index: int = 0) -> SampleResult:
    try:
        state = _SampleState(index, image, label, guidance, target)
    except (ConfigError, AdaptationError) as e:
        raise SampleError(index, e) from e
    return state.resolve(params)


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    # results land in dataset order whatever the pool size
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def summarize(records: Sequence[SampleResult], params: PolicyParams, num_tokens: int) -> EvalSummary:
    n = len(records)
    if n == 0:
        raise ValueError("no records to summarise")
    labelled = all(r.label is not None for r in records)
    acc = sum(bool(r.correct) for r in records) / n if labelled else None
    return EvalSummary(
        tau=params.tau,
        gamma=params.gamma,
        r_max=params.r_max,
        n_samples=n,
        accuracy=acc,
        mean_flops=sum(r.flops.total for r in records) / n,
        exit_rate=sum(r.exited_early for r in records) / n,
        mean_keep_ratio=sum(r.kept_tokens for r in records) / (n * num_tokens),
    )


def mean_report(reports: Iterable[FlopsReport]) -> dict[str, float]:
    reports = list(reports)
    keys = ("guidance_forward", "gradcam_backward", "target_forward", "total")
    return {k: sum(getattr(r, k) for r in reports) / len(reports) for k in keys}


def _states(dataset: ToyDataset, guidance: ViTModel, target: ViTModel, workers: int) -> list[_SampleState]:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")

    def build(i):
        try:
            return _SampleState(i, dataset.images[i], _label(dataset, i), guidance, target)
        except (ConfigError, AdaptationError) as e:
            raise SampleError(i, e) from e

    return _map(build, range(len(dataset)), workers)


def evaluate(
    dataset: ToyDataset, guidance: ViTModel, target: ViTModel, params: PolicyParams, workers: int = 1
) -> tuple[EvalSummary, list[SampleResult]]:
    states = _states(dataset, guidance, target, workers)
    records = _map(lambda s: s.resolve(params), states, workers)
    return summarize(records, params, target.cfg.num_patches), records


def sweep(
    dataset: ToyDataset,
    guidance: ViTModel,
    target: ViTModel,
    taus: Sequence[float],
    gammas: Sequence[float],
    r_max: float = 0.7,
    workers: int = 1,
) -> list[EvalSummary]:
    """One summary per (tau, gamma) in row-major grid order.

    Guidance forward passes, saliency maps and target passes at a given keep
    count are computed once per sample and shared across grid points.
    """
    grid = [PolicyParams(t, g, r_max) for t, g in itertools.product(taus, gammas)]
    if not grid:
        raise ValueError("empty sweep grid")
    states = _states(dataset, guidance, target, workers)
    out = []
    for params in grid:
        records = _map(lambda s: s.resolve(params), states, workers)
        out.append(summarize(records, params, target.cfg.num_patches))
    return out


@dataclass(frozen=True)
class BaselineSummary:
    accuracy: float | None
    mean_flops: float
    logits: np.ndarray = field(repr=False, compare=False)


def evaluate_baseline(dataset: ToyDataset, target: ViTModel, workers: int = 1) -> BaselineSummary:
    """Plain full-token target inference, one sample at a time."""
    logits = np.stack(_map(lambda i: target.forward_full(dataset.images[i]).logits, range(len(dataset)), workers))
    acc = float(np.mean(np.argmax(logits, -1) == dataset.labels)) if dataset.has_labels() else None
    return BaselineSummary(acc, float(baseline_flops(target.cfg)), logits)


def full_selection(model: ViTModel) -> TokenSelection:
    return TokenSelection.all(model.cfg.num_patches)
