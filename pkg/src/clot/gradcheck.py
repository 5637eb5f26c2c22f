"""Central finite-difference checks of every differentiable model component."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autograd as ag
from . import model as M
from .core import make_rng, softmax_rows
from .cost import frame_kot_cost, refined_kot_cost, segment_kot_cost, structure_matrices
from .ot import Marginals, OtConfig, solve_fused
from .cost import CostBundle

STEP = 1e-4
TOLERANCE = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-10:
        return float(diff)
    return float(diff / scale)


def check(fn: Callable[[dict[str, ag.Tensor]], ag.Tensor], inputs: dict[str, np.ndarray], step: float = STEP) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps a dict of tensors to a scalar tensor; it must be a pure
    function of the input values.
    """
    leaves = {k: ag.leaf(v) for k, v in inputs.items()}
    out = fn(leaves)
    ag.backward(out)
    worst = 0.0
    for name, value in inputs.items():
        analytic = leaves[name].grad if leaves[name].grad is not None else np.zeros_like(value)
        numeric = np.zeros_like(value)
        base = {k: v.copy() for k, v in inputs.items()}
        flat = base[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn({k: ag.Tensor(v) for k, v in base.items()}).data)
            flat[i] = orig - step
            down = float(fn({k: ag.Tensor(v) for k, v in base.items()}).data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _weighted_sum(out: ag.Tensor, w: np.ndarray) -> ag.Tensor:
    return ag.tsum(out * w)


def tiny_config(**overrides) -> M.ModelConfig:
    base = dict(
        input_dim=5, n_actions=3, n_queries=3, hidden_dim=6, embed_dim=4,
        dec_dim=4, dec_layers=1, dec_heads=2, tau=0.5, dropout=0.3, dec_dropout=0.2,
    )
    base.update(overrides)
    return M.ModelConfig(**base)


def _tiny_setup(seed: int):
    rng = make_rng(seed)
    cfg = tiny_config()
    params = M.init_params(cfg, rng)
    params["actions"] = rng.standard_normal((cfg.n_actions, cfg.embed_dim))
    params["queries"] = rng.standard_normal(params["queries"].shape) * 0.5
    for k in params:
        if k.endswith(("_b", "_b1", "_b2")) or "ln" in k or k == "dec_norm_g":
            params[k] = params[k] + 0.1 * rng.standard_normal(params[k].shape)
    x = rng.standard_normal((7, cfg.input_dim))
    return rng, cfg, params, x


def end_to_end_loss(cfg: M.ModelConfig, x: np.ndarray, labels, dropout_seed: int):
    """Loss closure over parameter tensors with pseudo-labels held fixed."""
    t, t_s, t_r = labels

    def fn(P):
        model = M.Model(cfg, {})
        model._leaves = P
        rng = make_rng(dropout_seed)
        f = model.frames(x, train=True, rng=rng)
        s = model.segments(f, train=True, rng=rng)
        f_r = model.refined(f, s)
        return (
            M.soft_cross_entropy(model.log_probs(f), t)
            + M.soft_cross_entropy(model.log_probs(s), t_s)
            + M.soft_cross_entropy(model.log_probs(f_r), t_r)
        )

    return fn


def pseudo_labels(cfg: M.ModelConfig, params, x, seed: int):
    """Solver plans for the three stages at the given parameters (held constant)."""
    model = M.Model(cfg, params)
    rng = make_rng(seed)
    f = model.frames(x, train=True, rng=rng)
    s = model.segments(f, train=True, rng=rng)
    f_r = model.refined(f, s)
    a = params["actions"]
    ot_cfg = OtConfig(alpha=0.3, epsilon=0.07, lam=0.1)
    n, k, kq = x.shape[0], a.shape[0], s.shape[0]
    cr, cc = structure_matrices(n, k, 0.2)
    t = solve_fused(CostBundle(frame_kot_cost(f.data, a, 0.1, None), cr, cc), Marginals.uniform(n, k), ot_cfg).t
    sr, sc = structure_matrices(kq, k, 1.0 / kq)
    t_s = solve_fused(CostBundle(segment_kot_cost(s.data, a, 0.0), sr, sc), Marginals.uniform(kq, k), ot_cfg).t
    t_r = solve_fused(CostBundle(refined_kot_cost(f_r.data, a, 0.1), cr, cc), Marginals.uniform(n, k), ot_cfg).t
    return t, t_s, t_r


def run_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative error per component."""
    rng, cfg, params, x = _tiny_setup(seed)
    n, d, k = x.shape[0], cfg.embed_dim, cfg.n_actions
    dd = cfg.dec_dim
    report: dict[str, float] = {}

    enc_keys = ["enc_w1", "enc_b1", "enc_w2", "enc_b2"]
    w = rng.standard_normal((n, d))
    report["encoder"] = check(
        lambda P: _weighted_sum(M.encode(x, P, cfg.dropout, make_rng(seed + 1), True), w),
        {key: params[key] for key in enc_keys},
    )

    f0 = rng.standard_normal((n, d))
    report["dispatch"] = check(
        lambda P: _weighted_sum(M.dispatch(P["f"], P["actions"], P["alpha"], P["beta"]), w),
        {"f": f0, "actions": params["actions"], "alpha": np.array([[0.7]]), "beta": np.array([[-0.3]])},
    )

    q0 = rng.standard_normal((cfg.n_queries, dd))
    mem = rng.standard_normal((n, d))
    wq = rng.standard_normal((cfg.n_queries, dd))
    pre = "dec0."
    report["layer_norm"] = check(
        lambda P: _weighted_sum(ag.layer_norm(P["x"], P["g"], P["b"]), wq),
        {"x": q0, "g": params[pre + "ln1_g"], "b": params[pre + "ln1_b"]},
    )
    sa = {key: params[pre + f"sa_{key}"] for key in ("wq", "wk", "wv", "wo")}
    report["self_attention"] = check(
        lambda P: _weighted_sum(M.attention(P["q"], P["q"], P["wq"], P["wk"], P["wv"], P["wo"], cfg.dec_heads), wq),
        {"q": q0, **sa},
    )
    ca = {key: params[pre + f"ca_{key}"] for key in ("wq", "wk", "wv", "wo")}
    report["cross_attention"] = check(
        lambda P: _weighted_sum(M.attention(P["q"], P["mem"], P["wq"], P["wk"], P["wv"], P["wo"], cfg.dec_heads), wq),
        {"q": q0, "mem": mem, **ca},
    )
    ffn = {key: params[pre + f"ffn_{key}"] for key in ("w1", "b1", "w2", "b2")}
    report["feed_forward"] = check(
        lambda P: _weighted_sum(M.feed_forward(P["h"], P["w1"], P["b1"], P["w2"], P["b2"]), wq),
        {"h": q0, **ffn},
    )
    dec_keys = [key for key in params if key.startswith("dec") or key in ("queries", "out_proj")]
    ws = rng.standard_normal((cfg.n_queries, d))
    report["decoder"] = check(
        lambda P: _weighted_sum(M.decode_segments(mem, P, cfg, True, make_rng(seed + 2)), ws),
        {key: params[key] for key in dec_keys},
    )

    s0 = rng.standard_normal((cfg.n_queries, d))
    report["refine"] = check(
        lambda P: _weighted_sum(M.refine(P["f"], P["s"], cfg.tau), w),
        {"f": f0, "s": s0},
    )

    t = softmax_rows(rng.standard_normal((n, k))) / n
    report["predict_loss"] = check(
        lambda P: M.soft_cross_entropy(M.predict_log(P["h"], P["actions"], cfg.tau), t),
        {"h": f0, "actions": params["actions"]},
    )

    labels = pseudo_labels(cfg, params, x, seed + 3)
    report["end_to_end"] = check(end_to_end_loss(cfg, x, labels, seed + 3), params)
    return report


def format_report(report: dict[str, float], tol: float = TOLERANCE) -> str:
    lines = []
    for name, err in report.items():
        status = "ok" if err <= tol else "FAIL"
        lines.append(f"{name:<16} max rel err {err:.3e}  {status}")
    return "\n".join(lines)
