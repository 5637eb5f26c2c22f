"""Cyclic pseudo-label training over three transport stages, and inference.

Per video and step:

1. ``F = dispatch(encode(X))``; the frame-to-action plan ``T`` on ``F``.
2. ``S = decode_segments(F)``; the segment-to-action plan ``T_S``.
3. ``F_R = refine(F, S)``; the refined frame-to-action plan ``T_R``.

Plans are computed from detached values and act as constant soft targets for
the three cross-entropy terms.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import model as M
from .config import TrainConfig
from .core import ParameterError, Rng, kmeans, make_rng
from .cost import (
    CostBundle,
    banded_adjacency,
    distinct_actions,
    frame_kot_cost,
    refined_kot_cost,
    segment_kot_cost,
    structure_matrices,
)
from .evaluation import segments_of
from .io import Video
from .ot import Coupling, Marginals, decode_labels, solve_fused
from .swd import ProjectionSet, sample_projections

log = logging.getLogger(__name__)

# above this many frames the adjacency band is kept sparse
_SPARSE_FRAMES = 512


@dataclass
class SegmentationResult:
    labels: np.ndarray
    segments: list[tuple[int, int, int]]
    source_stage: str


def subsample(features, n_target: int, rng: Rng | None = None, train: bool = True):
    """One frame per equal-width interval: random in train mode, the midpoint otherwise."""
    features = np.asarray(features)
    n = features.shape[0]
    if n <= n_target:
        idx = np.arange(n)
        return idx, features[idx]
    k = np.arange(n_target)
    lo = (k * n) // n_target
    hi = ((k + 1) * n) // n_target
    if train:
        if rng is None:
            raise ParameterError("train-mode subsampling needs an rng")
        idx = lo + (rng.random(n_target) * (hi - lo)).astype(np.int64)
        idx = np.minimum(idx, hi - 1)
    else:
        idx = ((2 * k + 1) * n) // (2 * n_target)
    return idx, features[idx]


def model_config(cfg: TrainConfig, input_dim: int, k: int) -> M.ModelConfig:
    return M.ModelConfig(
        input_dim=input_dim,
        n_actions=k,
        n_queries=cfg.n_queries(k),
        hidden_dim=cfg.hidden_dim,
        embed_dim=cfg.embed_dim,
        dec_dim=cfg.dec_dim,
        dec_layers=cfg.dec_layers,
        dec_heads=cfg.dec_heads,
        tau=cfg.tau,
        dropout=cfg.dropout,
        dec_dropout=cfg.dec_dropout,
        detach_s_in_refine=cfg.detach_s_in_refine,
    )


def init_actions(model: M.Model, feature_sets: Iterable[np.ndarray], k: int, rng: Rng,
                 max_frames: int = 10_000, max_iter: int = 100) -> np.ndarray:
    """k-means centroids of encoder outputs over a uniform frame subsample."""
    frames = np.concatenate([np.asarray(x) for x in feature_sets], axis=0)
    if frames.shape[0] < k:
        raise ParameterError(f"need at least {k} frames to initialize {k} actions, have {frames.shape[0]}")
    if frames.shape[0] > max_frames:
        idx = np.sort(rng.choice(frames.shape[0], size=max_frames, replace=False))
        frames = frames[idx]
    encoded = M.encode(frames, model.params).data
    return kmeans(encoded, k, rng, max_iter=max_iter).centroids


# ---------------------------------------------------------------- per-stage solves


def _frame_structure(n: int, k: int, cfg: TrainConfig):
    return structure_matrices(n, k, cfg.nr_fraction, sparse=n > _SPARSE_FRAMES)


def solve_stage1(f: np.ndarray, actions: np.ndarray, cfg: TrainConfig, proj: ProjectionSet | None) -> Coupling:
    n, k = f.shape[0], actions.shape[0]
    c_rows, c_cols = _frame_structure(n, k, cfg)
    cost = frame_kot_cost(f, actions, cfg.rho, proj if cfg.uses_swd(1) else None)
    return solve_fused(CostBundle(cost, c_rows, c_cols), Marginals.uniform(n, k), cfg.stage1)


def solve_stage2(s: np.ndarray, actions: np.ndarray, cfg: TrainConfig, proj: ProjectionSet | None) -> Coupling:
    kq, k = s.shape[0], actions.shape[0]
    cost = segment_kot_cost(s, actions, cfg.rho_s)
    if cfg.uses_swd(2) and proj is not None:
        from .swd import swd_matrix

        cost = cost + swd_matrix(s, actions, proj)
    bundle = CostBundle(cost, banded_adjacency(kq, 1), distinct_actions(k))
    return solve_fused(bundle, Marginals.uniform(kq, k), cfg.stage2)


def solve_stage3(f_r: np.ndarray, actions: np.ndarray, cfg: TrainConfig, proj: ProjectionSet | None) -> Coupling:
    n, k = f_r.shape[0], actions.shape[0]
    c_rows, c_cols = _frame_structure(n, k, cfg)
    cost = refined_kot_cost(f_r, actions, cfg.rho, proj if cfg.uses_swd(3) else None)
    return solve_fused(CostBundle(cost, c_rows, c_cols), Marginals.uniform(n, k), cfg.stage3)


# ---------------------------------------------------------------- training


@dataclass
class StepLosses:
    loss: float
    loss_s: float
    loss_r: float
    converged: bool = True


def train_step(model: M.Model, batch: list[np.ndarray], state: M.AdamState, cfg: TrainConfig,
               proj: ProjectionSet | None, rng: Rng) -> StepLosses:
    """One optimizer step on a batch of (already subsampled) feature matrices."""
    model.begin()
    actions = model.params["actions"]
    totals = np.zeros(3)
    converged = True
    for x in batch:
        f = model.frames(x, train=True, rng=rng)
        t = solve_stage1(f.data, actions, cfg, proj)
        s = model.segments(f, train=True, rng=rng)
        t_s = solve_stage2(s.data, actions, cfg, proj)
        f_r = model.refined(f, s)
        t_r = solve_stage3(f_r.data, actions, cfg, proj)
        converged &= t.converged and t_s.converged and t_r.converged
        terms = (
            M.soft_cross_entropy(model.log_probs(f), t.t),
            M.soft_cross_entropy(model.log_probs(s), t_s.t),
            M.soft_cross_entropy(model.log_probs(f_r), t_r.t),
        )
        totals += [float(term.data) for term in terms]
        model.add_loss(terms[0] + terms[1] + terms[2])
    grads = model.backward(scale=1.0 / len(batch))
    M.adam_step(model.params, grads, state)
    if not converged:
        log.warning("a transport solve stopped before reaching tolerance; using the last iterate")
    totals /= len(batch)
    return StepLosses(*totals.tolist(), converged=converged)


@dataclass
class TrainedModel:
    cfg: TrainConfig
    model_cfg: M.ModelConfig
    params: dict[str, np.ndarray]
    projections: ProjectionSet | None

    def tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        if self.projections is not None:
            out["swd_projections"] = self.projections.directions
        return out


def train(videos: list[Video] | list[np.ndarray], cfg: TrainConfig, n_actions: int,
          on_step: Callable[[dict], None] | None = None) -> TrainedModel:
    """Train one model on the given videos (one activity, or one video)."""
    feats = [v.features if isinstance(v, Video) else np.asarray(v, dtype=np.float64) for v in videos]
    if not feats:
        raise ParameterError("no videos to train on")
    k = cfg.n_actions or n_actions
    if cfg.frames_per_video < k:
        raise ParameterError("frames_per_video must be at least the number of actions")
    rng = make_rng(cfg.seed)
    mcfg = model_config(cfg, feats[0].shape[1], k)
    params = M.init_params(mcfg, rng)
    model = M.Model(mcfg, params)
    proj = sample_projections(mcfg.embed_dim, cfg.p_factor, rng) if cfg.swd_stages else None
    params["actions"] = init_actions(model, feats, k, rng, cfg.init_max_frames, cfg.kmeans_iters)
    state = M.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)

    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(feats))
        for lo in range(0, len(order), cfg.batch_size):
            t0 = time.perf_counter()
            batch = [subsample(feats[i], cfg.frames_per_video, rng, train=True)[1] for i in order[lo : lo + cfg.batch_size]]
            losses = train_step(model, batch, state, cfg, proj, rng)
            step += 1
            if on_step is not None:
                on_step({
                    "epoch": epoch,
                    "step": step,
                    "loss": losses.loss,
                    "loss_S": losses.loss_s,
                    "loss_R": losses.loss_r,
                    "converged": losses.converged,
                    "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3),
                })
    return TrainedModel(cfg, mcfg, params, proj)


# ---------------------------------------------------------------- inference


def infer(features, trained: TrainedModel, decode_from: str = "TR", full_length: bool = True) -> SegmentationResult:
    """Segment one video in eval mode; labels come from ``T_R``, ``T`` or ``P``."""
    cfg = trained.cfg
    x = np.asarray(features, dtype=np.float64)
    idx = None
    if not full_length:
        idx, x = subsample(x, cfg.frames_per_video, train=False)
    model = M.Model(trained.model_cfg, trained.params)
    actions = trained.params["actions"]
    f = model.frames(x)
    if decode_from == "P":
        labels = np.argmax(model.log_probs(f).data, axis=1)
    elif decode_from == "T":
        labels = decode_labels(solve_stage1(f.data, actions, cfg, trained.projections))
    elif decode_from == "TR":
        f_r = model.refined(f, model.segments(f))
        labels = decode_labels(solve_stage3(f_r.data, actions, cfg, trained.projections))
    else:
        raise ParameterError(f"decode_from must be T, P or TR, got {decode_from!r}")
    if idx is not None:
        # spread subsampled labels back over the full video
        full = np.empty(np.asarray(features).shape[0], dtype=np.int64)
        bounds = np.concatenate([[0], (idx[1:] + idx[:-1]) // 2 + 1, [full.size]])
        for j in range(labels.size):
            full[bounds[j] : bounds[j + 1]] = labels[j]
        labels = full
    labels = labels.astype(np.int64)
    return SegmentationResult(labels, segments_of(labels), decode_from)


def trained_from_tensors(tensors: dict[str, np.ndarray], cfg: TrainConfig) -> TrainedModel:
    """Rebuild a :class:`TrainedModel` from checkpoint tensors and its run config."""
    tensors = dict(tensors)
    proj_dirs = tensors.pop("swd_projections", None)
    input_dim = tensors["enc_w1"].shape[0]
    k = tensors["actions"].shape[0]
    mcfg = model_config(cfg, input_dim, k)
    expected = M.param_names(mcfg)
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise ParameterError(f"checkpoint lacks tensors {missing[:5]}")
    proj = ProjectionSet(proj_dirs, cfg.p_factor) if proj_dirs is not None else None
    return TrainedModel(cfg, mcfg, {n: tensors[n] for n in expected}, proj)
