import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clot.config import TrainConfig, format_config, load_config, parse_config
from clot.core import InputError, ParameterError


def test_defaults():
    cfg = parse_config("")
    assert cfg == TrainConfig()
    assert (cfg.lr, cfg.weight_decay, cfg.batch_size, cfg.frames_per_video) == (1e-3, 1e-4, 2, 256)
    assert cfg.dec_heads == 8 and cfg.dec_layers == 2 and cfg.dropout == 0.5
    assert cfg.rho == 0.15 and cfg.nr_fraction == 0.04 and cfg.p_factor == 2
    assert cfg.stage1.epsilon == 0.07 and cfg.stage1.outer_iters == 10


def test_lambda_line_sets_all_stages():
    cfg = parse_config("lambda = 0.1\n")
    assert cfg.stage1.lam == cfg.stage2.lam == cfg.stage3.lam == 0.1


def test_stage_override_wins():
    cfg = parse_config("alpha = 0.5\nstage2.alpha = 0.0  # no structure for segments\n")
    assert (cfg.stage1.alpha, cfg.stage2.alpha, cfg.stage3.alpha) == (0.5, 0.0, 0.5)


def test_comments_blank_lines_and_types():
    cfg = parse_config("# header\n\nepochs = 3\ndetach_s_in_refine = true\nswd_stages = 13\n")
    assert cfg.epochs == 3 and cfg.detach_s_in_refine is True
    assert cfg.uses_swd(1) and cfg.uses_swd(3) and not cfg.uses_swd(2)


@pytest.mark.parametrize("text", ["bogus = 1", "stage4.alpha = 1", "stage1.rho = 1", "epochs", "epochs = x",
                                  "= 3"])
def test_rejects_bad_lines(text):
    with pytest.raises(InputError):
        parse_config(text)


def test_invariants():
    with pytest.raises(ParameterError):
        parse_config("batch_size = 0")
    with pytest.raises(ParameterError):
        parse_config("alpha = 2")


def test_n_queries_clamped():
    assert parse_config("nseg = -6").n_queries(4) == 1
    assert parse_config("nseg = 2").n_queries(4) == 6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100), st.floats(1e-5, 1.0), st.floats(0.0, 1.0), st.floats(1e-3, 10.0), st.booleans(),
       st.integers(-3, 3))
def test_format_round_trip(epochs, lr, alpha, lam, detach, nseg):
    cfg = parse_config(f"epochs={epochs}\nlr={lr!r}\nstage3.alpha={alpha!r}\nlambda={lam!r}\n"
                       f"detach_s_in_refine={detach}\nnseg={nseg}")
    assert parse_config(format_config(cfg)) == cfg


def test_load_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epochs = 4\n")
    assert load_config(p).epochs == 4
