import pytest

from depthpl import config as C


def test_defaults_match_published_settings():
    cfg = C.load_config()
    assert cfg.learning_rate == 1e-4
    assert cfg.decay_start == 10
    assert (cfg.epochs_stage1, cfg.epochs_stage2, cfg.epochs_completion) == (20, 10, 20)
    assert cfg.epochs_stereo_extra == 10
    assert cfg.stylized_copies_per_source == 3
    assert cfg.tau == 0.5
    assert cfg.alpha == 0.7
    assert (cfg.lambda_task, cfg.lambda_sm, cfg.lambda_cons, cfg.lambda_comp,
            cfg.lambda_tgc) == (100.0, 0.1, 1.0, 0.1, 50.0)
    assert cfg.epsilon == 40.0
    assert cfg.depth_scale == pytest.approx(1.0 / 80.0)
    assert cfg.d_max == 80.0
    assert cfg.f == 725.0
    assert cfg.baseline == 0.54
    assert (cfg.width, cfg.height) == (192, 64)
    assert (cfg.o_x, cfg.o_y) == (96.0, 32.0)   # auto-centered


def test_parse_file_with_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment line\n"
                    "tau = 0.3   # inline comment\n"
                    "\n"
                    "mode = stereo\n")
    cfg = C.load_config(path)
    assert cfg.tau == 0.3
    assert cfg.mode == "stereo"


def test_unknown_key_reports_line_number(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("tau = 0.5\nbogus = 1\n")
    with pytest.raises(C.ConfigError, match=r"run\.cfg:2.*bogus"):
        C.load_config(path)


def test_bad_value_reports_line_and_type(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs_stage1 = soon\n")
    with pytest.raises(C.ConfigError, match=r":1.*int"):
        C.load_config(path)


def test_out_of_range_reports_expected_range(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("alpha = 1.5\n")
    with pytest.raises(C.ConfigError, match=r"\[0, 1\]"):
        C.load_config(path)


def test_missing_equals_is_error(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("tau 0.5\n")
    with pytest.raises(C.ConfigError, match=":1"):
        C.load_config(path)


def test_duplicate_key_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("tau = 0.5\ntau = 0.6\n")
    with pytest.raises(C.ConfigError, match="duplicate"):
        C.load_config(path)


def test_set_overrides_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("tau = 0.5\n")
    cfg = C.load_config(path, overrides=["tau=0.3"])
    assert cfg.tau == 0.3


def test_seed_argument_wins():
    cfg = C.load_config(overrides=["seed=3"], seed=9)
    assert cfg.seed == 9


def test_set_validates_like_file():
    with pytest.raises(C.ConfigError, match="unknown key"):
        C.load_config(overrides=["nope=1"])
    with pytest.raises(C.ConfigError):
        C.load_config(overrides=["tau=-1"])


def test_width_must_be_divisible():
    with pytest.raises(C.ConfigError):
        C.load_config(overrides=["width=100"])


def test_principal_point_range_checked():
    with pytest.raises(C.ConfigError, match="o_x"):
        C.load_config(overrides=["o_x=500"])


def test_dmin_below_dmax():
    with pytest.raises(C.ConfigError, match="d_min"):
        C.load_config(overrides=["d_min=90"])


def test_camera_and_weights_helpers():
    cfg = C.load_config(overrides=["width=96", "height=32", "f=80"])
    cam = cfg.camera()
    assert (cam.width, cam.height, cam.f) == (96, 32, 80.0)
    w = cfg.weights()
    assert w.tau == cfg.tau


def test_completion_k_derived_from_ratio():
    assert C.load_config().completion_k() == 4
    assert C.load_config(overrides=["sample_ratio=0.5"]).completion_k() == 2
    assert C.load_config(overrides=["sample_ratio=1.0"]).completion_k() == 1


def test_completion_lr_inherits():
    cfg = C.load_config()
    assert cfg.completion_lr() == cfg.learning_rate
    cfg2 = C.load_config(overrides=["learning_rate_completion=0.01"])
    assert cfg2.completion_lr() == 0.01


def test_derive_seed_stable_and_distinct():
    a = C.derive_seed(7, "stage1", "init")
    assert a == C.derive_seed(7, "stage1", "init")
    assert a != C.derive_seed(7, "stage1", "order")
    assert a != C.derive_seed(8, "stage1", "init")


def test_parse_total_any_file(tmp_path):
    # config parsing is total: parse or line-numbered error, never half-valid
    import numpy as np
    rng = np.random.default_rng(0)
    keys = list(C.KEY_TABLE)
    for trial in range(200):
        lines = []
        for _ in range(int(rng.integers(0, 6))):
            k = keys[int(rng.integers(len(keys)))]
            v = ["0.5", "-3", "abc", "1", "stereo", "1e-3", ""][int(rng.integers(7))]
            lines.append(f"{k} = {v}")
        text = "\n".join(lines)
        path = tmp_path / f"t{trial}.cfg"
        path.write_text(text)
        try:
            cfg = C.load_config(path)
            for name in C.KEY_TABLE:
                assert hasattr(cfg, name)
        except C.ConfigError as exc:
            assert ".cfg:" in str(exc) or "--set" in str(exc) or "d_min" in str(exc) \
                or "o_x" in str(exc) or "o_y" in str(exc)
