"""``tinydrop`` command line.

Subcommands: gen-data, train, infer, eval, sweep, flops. Exit codes: 0 success,
1 runtime or I/O error (one-line diagnostic on stderr), 2 usage error.
The default seed comes from ``TINYDROP_SEED`` when set, else 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import flops as F
from .data import load_dataset, load_image, make_toy_dataset, save_dataset
from .model import ViTModel, init_weights
from .pipeline import _SampleState, evaluate, sweep
from .policy import PolicyParams
from .reports import samples_jsonl, summary_csv, write_text
from .train import RECIPES, preset_config, train_toy
from .weights_io import load_weights, save_weights

COMMANDS = ("gen-data", "train", "infer", "eval", "sweep", "flops")
DEFAULT_TAU = 0.9
DEFAULT_SWEEP_TAUS = (0.5, 0.7, 0.8, 0.9, 0.95, 0.99)

log = logging.getLogger("tinydrop")


@dataclass
class RunConfig:
    command: str
    taus: tuple[float, ...] = (DEFAULT_TAU,)
    gammas: tuple[float, ...] = (0.5,)
    r_max: float = 0.7
    seed: int = 0
    workers: int = 1
    data: Path | None = None
    guidance: Path | None = None
    target: Path | None = None
    out: Path | None = None
    image: Path | None = None
    dump_saliency: Path | None = None
    dump_selection: Path | None = None
    n: int = 1000
    num_classes: int = 8
    role: str = "target"
    epochs: int | None = None
    lr: float | None = None
    keep: tuple[int, ...] = field(default_factory=tuple)

    @property
    def tau(self) -> float:
        return self.taus[0]

    @property
    def gamma(self) -> float:
        return self.gammas[0]

    @property
    def grid(self) -> list[tuple[float, float]]:
        return [(t, g) for t in self.taus for g in self.gammas]


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_seed() -> int:
    env = os.environ.get("TINYDROP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        return -1  # rejected by validation with a named flag


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinydrop", description="Guided token dropping for ViTs (desk scale).")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=False, models=False, workers=False):
        sp.add_argument("--seed", type=int, default=_default_seed())
        if workers:
            sp.add_argument("--workers", type=int, default=1)
        if models:
            sp.add_argument("--guidance", type=Path, default=Path("guidance.tdw"))
            sp.add_argument("--target", type=Path, default=Path("target.tdw"))
        if policy:
            sp.add_argument("--gamma", type=_float_list, default=(0.5,))
            sp.add_argument("--r-max", dest="r_max", type=float, default=0.7)

    sp = sub.add_parser("gen-data", help="write a synthetic toy dataset")
    common(sp)
    sp.add_argument("--out", type=Path, default=Path("data"))
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--num-classes", type=int, default=8)

    sp = sub.add_parser("train", help="train a guidance or target model on a dataset")
    common(sp)
    sp.add_argument("--data", type=Path, default=Path("data"))
    sp.add_argument("--role", choices=("guidance", "target"), default="target")
    sp.add_argument("--out", type=Path, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--num-classes", type=int, default=8)

    sp = sub.add_parser("infer", help="run the pipeline on one image")
    common(sp, policy=True, models=True)
    sp.add_argument("--tau", type=_float_list, default=(DEFAULT_TAU,))
    sp.add_argument("--image", type=Path, required=False)
    sp.add_argument("--out", type=Path, default=None, help="prediction JSON (stdout if omitted)")
    sp.add_argument("--dump-saliency", type=Path, default=None, help="CSV grid of the saliency map")
    sp.add_argument("--dump-selection", type=Path, default=None, help="kept token indices as JSON")

    sp = sub.add_parser("eval", help="evaluate on a dataset directory")
    common(sp, policy=True, models=True, workers=True)
    sp.add_argument("--tau", type=_float_list, default=(DEFAULT_TAU,))
    sp.add_argument("--data", type=Path, default=Path("data"))
    sp.add_argument("--out", type=Path, default=Path("out"), help="directory for samples.jsonl and summary.csv")

    sp = sub.add_parser("sweep", help="evaluate a tau x gamma grid")
    common(sp, policy=True, models=True, workers=True)
    sp.add_argument("--tau", type=_float_list, default=DEFAULT_SWEEP_TAUS)
    sp.add_argument("--data", type=Path, default=Path("data"))
    sp.add_argument("--out", type=Path, default=Path("sweep.csv"))

    sp = sub.add_parser("flops", help="analytic FLOP report for a model pair")
    common(sp, models=True)
    sp.add_argument("--keep", type=_int_list, default=(), help="keep counts K to cost")
    sp.add_argument("--out", type=Path, default=None)
    return p


def parse_args(argv: list[str] | None = None) -> RunConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    cfg = RunConfig(command=ns.command, seed=ns.seed)
    for name in ("data", "guidance", "target", "out", "image", "dump_saliency", "dump_selection",
                 "n", "num_classes", "role", "epochs", "lr", "keep", "workers", "r_max"):
        if hasattr(ns, name):
            setattr(cfg, name, getattr(ns, name))
    if hasattr(ns, "tau"):
        cfg.taus = ns.tau
    if hasattr(ns, "gamma"):
        cfg.gammas = ns.gamma

    def bad(flag, msg):
        parser.error(f"argument {flag}: {msg}")

    for t in cfg.taus:
        if not 0.0 < t < 1.0:
            bad("--tau", f"{t} not in (0, 1)")
    for g in cfg.gammas:
        if not g > 0.0:
            bad("--gamma", f"{g} must be positive")
    if not 0.0 <= cfg.r_max < 1.0:
        bad("--r-max", f"{cfg.r_max} not in [0, 1)")
    if cfg.seed < 0:
        bad("--seed", "must be a non-negative integer (check TINYDROP_SEED)")
    if cfg.workers < 1:
        bad("--workers", "must be positive")
    if cfg.command == "gen-data" and cfg.n < 1:
        bad("--n", "must be positive")
    if cfg.command == "train" and cfg.lr is not None and cfg.lr < 0:
        bad("--lr", "must be non-negative")
    if cfg.command in ("infer", "eval") and len(cfg.taus) > 1:
        bad("--tau", "takes a single value for this command")
    if cfg.command in ("infer", "eval") and len(cfg.gammas) > 1:
        bad("--gamma", "takes a single value for this command")
    if cfg.command == "infer" and cfg.image is None:
        bad("--image", "required for infer")
    return cfg


def _load_pair(cfg: RunConfig) -> tuple[ViTModel, ViTModel]:
    return ViTModel(*load_weights(cfg.guidance)), ViTModel(*load_weights(cfg.target))


def _cmd_gen_data(cfg: RunConfig) -> None:
    ds = make_toy_dataset(cfg.n, cfg.seed, num_classes=cfg.num_classes)
    save_dataset(ds, cfg.out)
    log.info("wrote %d images to %s", len(ds), cfg.out)


def _cmd_train(cfg: RunConfig) -> None:
    ds = load_dataset(cfg.data)
    recipe = RECIPES[cfg.role]
    mcfg = preset_config(cfg.role, cfg.num_classes)
    model = ViTModel(mcfg, init_weights(mcfg, cfg.seed))
    history: list = []
    weights = train_toy(
        model, ds,
        epochs=cfg.epochs if cfg.epochs is not None else recipe["epochs"],
        lr=cfg.lr if cfg.lr is not None else recipe["lr"],
        seed=cfg.seed, history=history,
    )
    out = cfg.out or Path(f"{cfg.role}.tdw")
    save_weights(weights, mcfg, out)
    if history:
        log.info("final training accuracy %.4f", history[-1][1])


def _cmd_infer(cfg: RunConfig) -> None:
    guidance, target = _load_pair(cfg)
    params = PolicyParams(cfg.tau, cfg.gamma, cfg.r_max)
    state = _SampleState(0, load_image(cfg.image), None, guidance, target)
    result = state.resolve(params)
    text = json.dumps(result.to_json_dict(), separators=(",", ":")) + "\n"
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        write_text(cfg.out, text)
    if cfg.dump_saliency is not None:
        # computed even on early exit, purely for inspection
        write_text(cfg.dump_saliency, state.saliency.to_csv())
    if cfg.dump_selection is not None:
        keep = None if result.keep_indices is None else list(result.keep_indices)
        write_text(cfg.dump_selection, json.dumps(keep) + "\n")


def _cmd_eval(cfg: RunConfig) -> None:
    guidance, target = _load_pair(cfg)
    ds = load_dataset(cfg.data)
    summary, records = evaluate(ds, guidance, target, PolicyParams(cfg.tau, cfg.gamma, cfg.r_max), cfg.workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_text(cfg.out / "samples.jsonl", samples_jsonl(records))
    write_text(cfg.out / "summary.csv", summary_csv([summary]))


def _cmd_sweep(cfg: RunConfig) -> None:
    guidance, target = _load_pair(cfg)
    ds = load_dataset(cfg.data)
    rows = sweep(ds, guidance, target, cfg.taus, cfg.gammas, cfg.r_max, cfg.workers)
    write_text(cfg.out, summary_csv(rows))


def _cmd_flops(cfg: RunConfig) -> None:
    guidance, target = _load_pair(cfg)
    g, t = guidance.cfg, target.cfg
    report = {
        "convention": "1 multiply-add = 2 FLOPs",
        "guidance_forward": F.guidance_forward_flops(g),
        "gradcam_backward": F.gradcam_backward_flops(g, t.num_patches),
        "target_full": F.baseline_flops(t),
        "target_at_keep": {str(k): F.vit_forward_flops(t, k + 1) for k in cfg.keep},
    }
    text = json.dumps(report, indent=2) + "\n"
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        write_text(cfg.out, text)


HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "flops": _cmd_flops,
}


def run(cfg: RunConfig) -> int:
    try:
        HANDLERS[cfg.command](cfg)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"tinydrop {cfg.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    return run(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
