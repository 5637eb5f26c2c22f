"""``clot`` command line: synth, train, segment, eval, solve, check-grad.

Exit codes: 0 ok, 2 bad input, 3 refused because of existing state,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import format_config, load_config, parse_config
from .core import ClotError, InputError, StateError
from .cost import banded_adjacency, distinct_actions, CostBundle
from .evaluation import evaluate
from .io import load_dataset, read_features, read_labels, label_dir, write_features, write_labels
from .model import load_checkpoint, save_checkpoint
from .ot import Marginals, OtConfig, solve_fused
from .pipeline import infer, train, trained_from_tensors
from .plot import write_band_plot
from .synthetic import GenerationError, generate_synthetic, parse_spec

EXIT_OK, EXIT_INPUT, EXIT_STATE, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("clot")


class NumericalFailure(ClotError):
    pass


def config_sidecar(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".cfg")


def worker_count() -> int:
    raw = os.environ.get("CLOT_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"CLOT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InputError("CLOT_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    try:
        spec = parse_spec(_read_text(args.spec), str(args.spec))
        manifest = generate_synthetic(spec, args.out)
    except GenerationError as exc:
        raise InputError(str(exc)) from None
    n_frames = sum(v["n_frames"] for v in manifest["videos"])
    print(f"wrote {len(manifest['videos'])} videos ({n_frames} frames, K={manifest['k_actions']}, "
          f"ordering={spec.ordering}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise StateError(f"{out} exists; pass --force to overwrite")
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg = parse_config(format_config(cfg) + f"seed = {args.seed}\n")
    data = load_dataset(args.data)
    groups = data.activities()
    if args.activity is not None:
        if args.activity not in groups:
            raise InputError(f"activity {args.activity!r} not in {sorted(groups)}")
        videos = groups[args.activity]
    elif len(groups) > 1:
        raise InputError(f"dataset has {len(groups)} activities; choose one with --activity")
    else:
        videos = data.videos
    k = cfg.n_actions or data.n_actions
    if not k:
        raise InputError("number of actions unknown: set n_actions in the config or k_actions in the manifest")

    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    with open(log_path, "w") as fh:
        def on_step(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        trained = train(videos, cfg, k, on_step=on_step)
    for name, arr in trained.params.items():
        if not np.all(np.isfinite(arr)):
            raise NumericalFailure(f"parameter {name} became non-finite during training")
    save_checkpoint(out, trained.tensors())
    config_sidecar(out).write_text(format_config(cfg))
    print(f"trained on {len(videos)} videos, K={k}, {cfg.epochs} epochs; checkpoint {out}")
    return EXIT_OK


def _load_trained(ckpt: Path):
    if not ckpt.exists():
        raise InputError(f"checkpoint {ckpt} not found")
    side = config_sidecar(ckpt)
    if not side.exists():
        raise InputError(f"config sidecar {side} not found next to the checkpoint")
    return trained_from_tensors(load_checkpoint(ckpt), load_config(side))


def cmd_segment(args) -> int:
    trained = _load_trained(Path(args.ckpt))
    data = load_dataset(args.data)
    out = Path(args.out)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)

    def run(video):
        result = infer(video.features, trained, args.decode_from)
        write_labels(out / "labels" / f"{video.name}.txt", result.labels)
        write_band_plot(out / "plots" / f"{video.name}.svg", result.labels, video.labels,
                        f"{video.name} ({args.decode_from})")
        return video.name, len(result.segments)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        done = list(pool.map(run, data.videos))
    for name, n_seg in done:
        log.info("%s: %d segments", name, n_seg)
    print(f"segmented {len(done)} videos from {args.decode_from} into {out}")
    return EXIT_OK


def _activity_of(gt_root: Path) -> dict[str, str]:
    manifest = gt_root / "manifest.json"
    if not manifest.exists():
        return {}
    return {v["name"]: v.get("activity", "default") for v in json.loads(manifest.read_text()).get("videos", [])}


def cmd_eval(args) -> int:
    pred_dir, gt_dir = label_dir(args.pred), label_dir(args.gt)
    gt_files = sorted(gt_dir.glob("*.txt"))
    if not gt_files:
        raise InputError(f"no ground-truth label files in {gt_dir}")
    activity = _activity_of(Path(args.gt))
    preds, gts, groups = [], [], []
    for g in gt_files:
        p = pred_dir / g.name
        if not p.exists():
            raise InputError(f"missing prediction {p} for ground truth {g}")
        preds.append(read_labels(p))
        gts.append(read_labels(g))
        groups.append(activity.get(g.stem, "default"))
    report = evaluate(preds, gts, args.level, groups, args.ignore_label)
    payload = {"level": args.level, "n_videos": len(gts), **report.to_dict()}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"MoF {report.mof:.4f}  F1 {report.f1:.4f}  mIoU {report.miou:.4f}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cost = read_features(args.cost)
    n, m = cost.shape
    cfg = OtConfig(alpha=args.alpha, epsilon=args.epsilon, lam=args.lam,
                   outer_iters=args.outer_iters, inner_iters=args.inner_iters, tol=args.tol)
    bundle = CostBundle(cost, banded_adjacency(n, args.radius), distinct_actions(m))
    coupling = solve_fused(bundle, Marginals.uniform(n, m), cfg)
    if not np.all(np.isfinite(coupling.t)):
        raise NumericalFailure("coupling has non-finite entries")
    write_features(args.out, coupling.t)
    side = {
        "converged": bool(coupling.converged),
        "iterations": int(coupling.iterations_used),
        "objective": float(coupling.objective),
        "objective_history": [float(v) for v in coupling.objective_history],
        "row_sums": coupling.t.sum(axis=1).tolist(),
        "col_sums": coupling.t.sum(axis=0).tolist(),
    }
    Path(str(args.out) + ".json").write_text(json.dumps(side, indent=2) + "\n")
    if not coupling.converged:
        print("warning: solver stopped before reaching tolerance", file=sys.stderr)
    print(f"{n}x{m} coupling, objective {coupling.objective:.6g}, converged={coupling.converged}")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    report = gradcheck.run_suite(args.seed)
    print(gradcheck.format_report(report))
    worst = max(report.values())
    if worst > gradcheck.TOLERANCE:
        raise NumericalFailure(f"gradient check failed: max relative error {worst:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clot", description="Unsupervised action segmentation with fused transport.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="key = value generator spec")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key = value run config (defaults if omitted)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines step log (default: <out>.log.jsonl)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--activity", help="train on one activity of a multi-activity dataset")
    p.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment every video of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--decode-from", choices=("T", "P", "TR"), default="TR")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--level", choices=("video", "activity"), default="activity")
    p.add_argument("--ignore-label", type=int, help="ground-truth label excluded from scoring")
    p.add_argument("--out", help="metrics JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="solve one fused transport problem on a cost matrix")
    p.add_argument("--cost", required=True, help="cost matrix in feature-file format")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--epsilon", type=float, default=0.07)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--radius", type=int, default=1, help="row-structure band radius")
    p.add_argument("--outer-iters", type=int, default=10)
    p.add_argument("--inner-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True, help="coupling file; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-grad", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ClotError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
