import numpy as np
import pytest

from clot import autograd as ag
from clot import model as M
from clot.core import DimensionError, FormatError, ParameterError, StateError, make_rng
from clot.gradcheck import tiny_config


@pytest.fixture
def setup():
    rng = make_rng(3)
    cfg = tiny_config()
    params = M.init_params(cfg, rng)
    params["actions"] = rng.standard_normal((cfg.n_actions, cfg.embed_dim))
    return rng, cfg, params


def test_config_validation():
    with pytest.raises(ParameterError):
        tiny_config(dec_dim=6, dec_heads=4)
    with pytest.raises(ParameterError):
        tiny_config(tau=0.0)
    with pytest.raises(ParameterError):
        tiny_config(dropout=1.0)


def test_param_names_cover_init(setup):
    _, cfg, params = setup
    assert list(params) == M.param_names(cfg)
    assert params["queries"].shape == (cfg.n_queries, cfg.dec_dim)


def test_encode_zero_weights():
    cfg = tiny_config()
    params = {k: np.zeros_like(v) for k, v in M.init_params(cfg, make_rng(0)).items()}
    out = M.encode(np.ones((3, cfg.input_dim)), params)
    assert np.all(out.data == 0)


def test_encode_dropout_zero_matches_eval(setup):
    rng, cfg, params = setup
    x = rng.standard_normal((5, cfg.input_dim))
    a = M.encode(x, params, 0.0, rng, train=True).data
    b = M.encode(x, params).data
    assert np.array_equal(a, b)
    with pytest.raises(DimensionError):
        M.encode(np.ones((2, cfg.input_dim + 1)), params)


def test_dispatch_examples():
    f = np.array([[1.0, 0.0]])
    out = M.dispatch(f, f, np.array([[1.0]]), np.array([[0.0]])).data
    np.testing.assert_allclose(out, f + 0.7310585786300049 * f, atol=1e-12)
    a = np.array([[0.3, -1.0], [2.0, 0.5]])
    off = M.dispatch(f, a, np.array([[0.0]]), np.array([[-40.0]])).data
    np.testing.assert_allclose(off, f, atol=1e-15)


def test_decoder_ignores_zero_memory(setup):
    _, cfg, params = setup
    a = M.decode_segments(np.zeros((4, cfg.embed_dim)), params, cfg).data
    b = M.decode_segments(np.zeros((9, cfg.embed_dim)), params, cfg).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a.shape == (cfg.n_queries, cfg.embed_dim)


def test_refine_examples(rng=make_rng(8)):
    f = rng.standard_normal((5, 4))
    assert np.array_equal(M.refine(f, np.zeros((3, 4)), 0.5).data, f)
    s = rng.standard_normal((1, 4))
    np.testing.assert_allclose(M.refine(f, s, 0.5).data, f + s, atol=1e-15)
    s = rng.standard_normal((3, 4))
    np.testing.assert_allclose(M.refine(f, s, 1e12).data, f + s.mean(0), atol=1e-9)


def test_predict_examples():
    h, a = np.array([[1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(M.predict(h, a, 1.0), [[0.8807970779778824, 0.11920292202211756]], atol=1e-12)
    np.testing.assert_allclose(M.predict(h, a, 2.0), [[0.7310585786300049, 0.2689414213699951]], atol=1e-12)
    np.testing.assert_allclose(M.predict(np.zeros((2, 2)), a, 1.0), 0.5)


def test_predict_rows_sum_to_one(setup):
    rng, cfg, params = setup
    p = M.predict(rng.standard_normal((6, cfg.embed_dim)) * 30, params["actions"], 0.1)
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)


def test_cross_entropy_examples():
    eye = np.eye(3)
    assert M.cross_entropy_loss(eye, eye) == pytest.approx(0.0, abs=1e-15)
    assert M.cross_entropy_loss(np.full((1, 4), 0.25), np.full((1, 4), 0.25)) == pytest.approx(1.3862943611198906)
    with pytest.raises(DimensionError):
        M.cross_entropy_loss(np.ones((1, 2)), np.ones((1, 3)))


def test_soft_cross_entropy_matches_clamped_version(setup):
    rng, cfg, params = setup
    h = rng.standard_normal((5, cfg.embed_dim))
    t = rng.random((5, cfg.n_actions)) / 5
    got = float(M.soft_cross_entropy(M.predict_log(h, params["actions"], 0.5), t).data)
    assert got == pytest.approx(M.cross_entropy_loss(M.predict(h, params["actions"], 0.5), t), rel=1e-12)


def _loss(model, x, rng):
    f = model.frames(x, train=True, rng=rng)
    t = np.full((x.shape[0], model.cfg.n_actions), 1.0 / (x.shape[0] * model.cfg.n_actions))
    return M.soft_cross_entropy(model.log_probs(f), t)


def test_backward_before_forward(setup):
    _, cfg, params = setup
    with pytest.raises(StateError):
        M.Model(cfg, params).backward()


def test_doubling_loss_doubles_grads(setup):
    rng, cfg, params = setup
    x = rng.standard_normal((5, cfg.input_dim))
    model = M.Model(cfg, params)
    model.begin()
    model.add_loss(_loss(model, x, make_rng(1)))
    g1 = model.backward()
    model.begin()
    model.add_loss(_loss(model, x, make_rng(1)))
    g2 = model.backward(scale=2.0)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], atol=1e-14)


def test_unused_parameter_gets_zero_grad(setup):
    rng, cfg, params = setup
    model = M.Model(cfg, params)
    model.begin()
    model.add_loss(_loss(model, rng.standard_normal((5, cfg.input_dim)), make_rng(1)))
    grads = model.backward()
    # the frame loss never touches the decoder
    assert np.all(grads["queries"] == 0)
    assert np.all(grads["out_proj"] == 0)


def test_detach_s_in_refine_blocks_decoder_path(setup):
    rng, cfg, params = setup
    x = rng.standard_normal((5, cfg.input_dim))
    t = np.full((5, cfg.n_actions), 1 / 15)
    grads = {}
    for flag in (False, True):
        model = M.Model(tiny_config(detach_s_in_refine=flag), params)
        model.begin()
        f = model.frames(x)
        f_r = model.refined(f, model.segments(f))
        model.add_loss(M.soft_cross_entropy(model.log_probs(f_r), t))
        grads[flag] = model.backward()
    assert np.any(grads[False]["queries"] != 0)
    assert np.all(grads[True]["queries"] == 0)


def test_adam_zero_grad_no_decay(setup):
    _, _, params = setup
    before = {k: v.copy() for k, v in params.items()}
    M.adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, M.AdamState(weight_decay=0.0))
    for k in params:
        assert np.array_equal(params[k], before[k])


def test_adam_first_step_is_sign():
    p = {"w": np.array([[1.0, -2.0, 0.5]])}
    g = {"w": np.array([[3.0, -0.01, 1e3]])}
    M.adam_step(p, g, M.AdamState(lr=1e-3, weight_decay=0.0))
    np.testing.assert_allclose(p["w"], [[1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3]], atol=1e-8)


def test_adam_decoupled_decay():
    p = {"w": np.array([[2.0]])}
    M.adam_step(p, {"w": np.zeros((1, 1))}, M.AdamState(lr=0.1, weight_decay=0.5))
    assert p["w"][0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        M.adam_step({"w": np.zeros((1, 2))}, {"w": np.zeros((2, 1))}, M.AdamState())


def test_checkpoint_round_trip(tmp_path, setup):
    _, _, params = setup
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, params)
    back = M.load_checkpoint(path)
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k])
    assert path.read_bytes()[:8] == b"CLOTCKPT"


def test_checkpoint_errors(tmp_path, setup):
    _, _, params = setup
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, params)
    raw = path.read_bytes()
    (tmp_path / "bad_magic").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FormatError, match="offset 0"):
        M.load_checkpoint(tmp_path / "bad_magic")
    (tmp_path / "bad_version").write_bytes(raw[:8] + b"\x09\x00\x00\x00" + raw[12:])
    with pytest.raises(FormatError, match="offset 8"):
        M.load_checkpoint(tmp_path / "bad_version")
    (tmp_path / "short").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="bytes"):
        M.load_checkpoint(tmp_path / "short")
