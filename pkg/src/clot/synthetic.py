"""Synthetic action-segmentation datasets with a known segment plan."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import _coerce, parse_pairs
from .core import ClotError, InputError, ParameterError, Rng, make_rng
from .io import Video, write_dataset

MAX_PROTOTYPE_TRIES = 100_000


class GenerationError(ClotError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    k_actions: int = 4
    n_videos: int = 10
    frames_per_video: int = 120
    feature_dim: int = 16
    noise_sigma: float = 0.1
    min_segment: int = 0  # 0: no bound
    max_segment: int = 0  # 0: no bound
    ordering: str = "permuted"
    background_fraction: float = 0.0
    max_cosine: float = 0.3
    activity: str = "synthetic"
    seed: int = 0

    def __post_init__(self):
        if self.k_actions < 1 or self.n_videos < 1 or self.feature_dim < 1:
            raise ParameterError("k_actions, n_videos and feature_dim must be positive")
        if self.ordering not in ("fixed", "permuted", "markov"):
            raise ParameterError(f"ordering must be fixed|permuted|markov, got {self.ordering!r}")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be nonnegative")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ParameterError("background_fraction must be in [0, 1)")
        if self.frames_per_video < self.k_actions:
            raise ParameterError("frames_per_video must be at least k_actions")
        if self.max_segment and self.min_segment > self.max_segment:
            raise ParameterError("min_segment exceeds max_segment")


def parse_spec(text: str, source: str = "<spec>") -> SyntheticSpec:
    kinds = {f.name: f.type for f in dataclasses.fields(SyntheticSpec)}
    values = {}
    for key, raw in parse_pairs(text, source).items():
        if key not in kinds:
            raise InputError(f"{source}: unknown spec key {key!r}")
        values[key] = _coerce(raw, kinds[key], key)
    return SyntheticSpec(**values)


def sample_prototypes(k: int, dim: int, max_cosine: float, rng: Rng) -> np.ndarray:
    """Unit vectors whose pairwise cosine is at most ``max_cosine``."""
    protos: list[np.ndarray] = []
    for _ in range(MAX_PROTOTYPE_TRIES):
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm == 0:
            continue
        v /= norm
        if all(float(v @ p) <= max_cosine for p in protos):
            protos.append(v)
            if len(protos) == k:
                return np.stack(protos)
    raise GenerationError(
        f"could not place {k} prototypes in {dim} dims with cosine <= {max_cosine} "
        f"after {MAX_PROTOTYPE_TRIES} tries"
    )


def _split_lengths(total: int, parts: int, lo: int, hi: int, rng: Rng) -> np.ndarray:
    """Random positive lengths summing to ``total``, within [lo, hi] when feasible."""
    lo = max(1, lo)
    hi = hi if hi > 0 else total
    if parts * lo > total or parts * hi < total:
        raise ParameterError(f"cannot split {total} frames into {parts} segments of length [{lo}, {hi}]")
    weights = rng.uniform(0.5, 1.5, size=parts)
    lengths = np.full(parts, lo)
    extra = total - parts * lo
    share = np.floor(weights / weights.sum() * extra).astype(int)
    lengths += np.minimum(share, hi - lo)
    while lengths.sum() < total:
        room = np.flatnonzero(lengths < hi)
        lengths[room[int(rng.integers(room.size))]] += 1
    return lengths


def _action_sequence(spec: SyntheticSpec, fixed_order: np.ndarray, transitions: np.ndarray, rng: Rng):
    k = spec.k_actions
    if spec.ordering == "fixed":
        return fixed_order.copy()
    if spec.ordering == "permuted":
        return rng.permutation(k)
    seq = [int(rng.integers(k))]
    for _ in range(k - 1):
        seq.append(int(rng.choice(k, p=transitions[seq[-1]])))
    return np.asarray(seq)


def segment_plan(spec: SyntheticSpec, fixed_order, transitions, rng: Rng) -> list[tuple[int, int, int]]:
    """(start, end_exclusive, label) triples covering every frame once."""
    n = spec.frames_per_video
    actions = _action_sequence(spec, fixed_order, transitions, rng)
    n_bg = int(round(spec.background_fraction * n))
    n_act = n - n_bg
    lengths = _split_lengths(n_act, len(actions), spec.min_segment, spec.max_segment, rng)
    pieces: list[tuple[int, int]] = [(int(a), int(l)) for a, l in zip(actions, lengths)]
    if n_bg:
        gaps = len(pieces) + 1
        bg = _split_lengths(n_bg, gaps, 0, 0, rng) if n_bg >= gaps else np.bincount(
            rng.choice(gaps, size=n_bg), minlength=gaps
        )
        merged = []
        for i in range(gaps):
            if bg[i]:
                merged.append((spec.k_actions, int(bg[i])))
            if i < len(pieces):
                merged.append(pieces[i])
        pieces = merged
    plan = []
    start = 0
    for label, length in pieces:
        if plan and plan[-1][2] == label:
            plan[-1] = (plan[-1][0], start + length, label)
        else:
            plan.append((start, start + length, label))
        start += length
    return plan


def generate(spec: SyntheticSpec) -> tuple[list[Video], dict]:
    rng = make_rng(spec.seed)
    n_protos = spec.k_actions + (1 if spec.background_fraction > 0 else 0)
    protos = sample_prototypes(n_protos, spec.feature_dim, spec.max_cosine, rng)
    fixed_order = rng.permutation(spec.k_actions)
    transitions = rng.random((spec.k_actions, spec.k_actions)) + 1e-3
    np.fill_diagonal(transitions, 0.0 if spec.k_actions > 1 else 1.0)
    transitions /= transitions.sum(axis=1, keepdims=True)

    videos, entries = [], []
    width = len(str(spec.n_videos - 1))
    for v in range(spec.n_videos):
        plan = segment_plan(spec, fixed_order, transitions, rng)
        labels = np.concatenate([np.full(e - s, lab) for s, e, lab in plan])
        noise = rng.standard_normal((spec.frames_per_video, spec.feature_dim)) * spec.noise_sigma
        x = protos[labels] + noise
        name = f"video_{v:0{width}d}"
        videos.append(Video(name, x, labels, spec.activity))
        entries.append({"name": name, "activity": spec.activity, "n_frames": spec.frames_per_video,
                        "plan": [list(p) for p in plan]})
    manifest = {
        "generator": "synthetic",
        "spec": dataclasses.asdict(spec),
        "k_actions": spec.k_actions,
        "background_label": spec.k_actions if spec.background_fraction > 0 else None,
        "videos": entries,
    }
    return videos, manifest


def generate_synthetic(spec: SyntheticSpec, out_dir) -> dict:
    """Write a dataset directory and return its manifest."""
    videos, manifest = generate(spec)
    write_dataset(Path(out_dir), videos, manifest)
    return manifest
