import dataclasses
import os

import numpy as np
import pytest

from depthpl import pipeline as P
from depthpl import networks as N
from depthpl.config import load_config
from depthpl.scenegen import make_dataset


def tiny_cfg(**over):
    base = dict(width=48, height=16, f=40, n_source=3, n_target=3, n_eval=2,
                epochs_stage1=2, epochs_completion=2, epochs_stage2=2,
                batch_size=2, learning_rate="1e-3", decay_start=1, seed=4)
    base.update(over)
    return load_config(overrides=[f"{k}={v}" for k, v in base.items()])


@pytest.fixture(scope="module")
def tiny_data():
    cfg = tiny_cfg()
    return P.dataset_from_records(make_dataset(cfg, cfg.seed))


def test_lr_schedule_formula():
    # flat until decay_start, then lr * (1 - (e - ds) / (total - ds))
    for e in range(10):
        assert P.lr_for_epoch(1e-3, e, 10, 20) == 1e-3
    for e in range(11, 20):
        assert P.lr_for_epoch(1e-3, e, 10, 20) == pytest.approx(1e-3 * (1 - (e - 10) / 10))
    assert all(P.lr_for_epoch(1e-3, e, 10, 20) >= 0 for e in range(20))
    # degenerate: no decay room
    assert P.lr_for_epoch(1e-3, 5, 10, 8) == 1e-3


def test_stage1_zero_epochs_keeps_init(tiny_data):
    cfg = tiny_cfg()
    net, curve = P.train_stage1(tiny_data, cfg, epochs=0)
    ref = N.DepthNet(d_min=cfg.d_min, d_max=cfg.d_max,
                     seed=P.derive_seed(cfg.seed, "stage1", "init"))
    assert curve == []
    for k in net.params:
        assert np.array_equal(net.params[k].data, ref.params[k].data)


def test_stage1_deterministic(tiny_data):
    cfg = tiny_cfg()
    a, _ = P.train_stage1(tiny_data, cfg)
    b, _ = P.train_stage1(tiny_data, cfg)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)


def test_stage1_losses_finite(tiny_data):
    _, curve = P.train_stage1(tiny_data, tiny_cfg())
    assert np.isfinite(curve).all()


def test_stage1_requires_target_images():
    cfg = tiny_cfg()
    data = P.Dataset(sources=[(np.zeros((16, 48, 3)), np.ones((16, 48)))],
                     targets=[], target_rights=[], evals=[])
    with pytest.raises(ValueError):
        P.train_stage1(data, cfg)


def test_stage1_stereo_requires_right_views(tiny_data):
    cfg = tiny_cfg(mode="stereo")
    data = P.Dataset(tiny_data.sources, tiny_data.targets, [], tiny_data.evals)
    with pytest.raises(ValueError):
        P.train_stage1(data, cfg)


def test_stage1_stereo_mode_runs():
    cfg = tiny_cfg(mode="stereo", epochs_stage1=1, epochs_stereo_extra=1)
    data = P.dataset_from_records(make_dataset(cfg, cfg.seed))
    assert len(data.target_rights) == len(data.targets)
    net, curve = P.train_stage1(data, cfg)
    assert np.isfinite(curve).all()


def test_completion_deterministic(tiny_data):
    cfg = tiny_cfg()
    a, ia = P.train_completion(tiny_data, cfg)
    b, ib = P.train_completion(tiny_data, cfg)
    assert ia["initial_cd"] == ib["initial_cd"]
    assert ia["final_cd"] == ib["final_cd"]
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)


def test_completion_identity_start_cd_is_cover_distance(tiny_data):
    # zero-initialized decoder means the initial CD is the sparse-cover term
    cfg = tiny_cfg(sample_ratio=1.0)
    net, info = P.train_completion(tiny_data, cfg, epochs=1)
    assert info["initial_cd"] == pytest.approx(0.0, abs=1e-18)


def test_labels_deterministic(tiny_data):
    cfg = tiny_cfg()
    net, _ = P.train_stage1(tiny_data, cfg, epochs=1)
    cnet, _ = P.train_completion(tiny_data, cfg, epochs=1)
    la = P.generate_pseudolabels(net, cnet, tiny_data, cfg)
    lb = P.generate_pseudolabels(net, cnet, tiny_data, cfg)
    for a, b in zip(la, lb):
        assert np.array_equal(a.y_cons.depth, b.y_cons.depth)
        assert np.array_equal(a.y_comp.depth, b.y_comp.depth)
        assert a.m_consist == b.m_consist and a.m_valid == b.m_valid


def test_labels_partition_identity(tiny_data):
    cfg = tiny_cfg()
    net, _ = P.train_stage1(tiny_data, cfg, epochs=1)
    cnet, _ = P.train_completion(tiny_data, cfg, epochs=1)
    for ls in P.generate_pseudolabels(net, cnet, tiny_data, cfg):
        n = ls.m_consist.bits.size
        assert (ls.stats.frac_2d_only + ls.stats.frac_refined) * n == pytest.approx(
            ls.m_consist.popcount())
        assert (ls.stats.frac_refined + ls.stats.frac_extended) * n == pytest.approx(
            ls.m_valid.popcount())


def test_stage2_runs_and_is_deterministic(tiny_data):
    cfg = tiny_cfg()
    net, _ = P.train_stage1(tiny_data, cfg, epochs=1)
    cnet, _ = P.train_completion(tiny_data, cfg, epochs=1)
    labels = P.generate_pseudolabels(net, cnet, tiny_data, cfg)
    a, ca = P.train_stage2(net.params, labels, tiny_data, cfg)
    b, cb = P.train_stage2(net.params, labels, tiny_data, cfg)
    assert ca == cb
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)


def test_stage2_alpha_one_stays_finite(tiny_data):
    # no synthetic anchor at all: training must still not diverge
    cfg = tiny_cfg(alpha=1.0)
    net, _ = P.train_stage1(tiny_data, cfg, epochs=1)
    cnet, _ = P.train_completion(tiny_data, cfg, epochs=1)
    labels = P.generate_pseudolabels(net, cnet, tiny_data, cfg)
    _, curve = P.train_stage2(net.params, labels, tiny_data, cfg)
    assert np.isfinite(curve).all()


def test_stage2_label_count_mismatch(tiny_data):
    cfg = tiny_cfg()
    net, _ = P.train_stage1(tiny_data, cfg, epochs=0)
    with pytest.raises(ValueError):
        P.train_stage2(net.params, [], tiny_data, cfg)


# ---------------------------------------------------------------------------
# evaluation metrics


def test_eval_perfect_prediction_all_zero():
    r = P.metrics_from_arrays(np.array([1.0, 5.0, 20.0]), np.array([1.0, 5.0, 20.0]), 80.0)
    assert (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) == (0, 0, 0, 0)
    assert (r.delta1, r.delta2, r.delta3) == (1, 1, 1)


def test_eval_single_pixel_hand_case():
    r = P.metrics_from_arrays(np.array([12.0]), np.array([10.0]), 80.0)
    assert r.abs_rel == pytest.approx(0.2, abs=1e-12)
    assert r.sq_rel == pytest.approx(0.4, abs=1e-12)
    assert r.rmse == pytest.approx(2.0, abs=1e-12)
    assert r.rmse_log == pytest.approx(np.log(1.2), abs=1e-12)
    assert r.delta1 == 1.0


def test_eval_crafted_four_pixel_case():
    # thresholds max(p/g, g/p): [1.0, 1.1765, 1.65, 1.3]
    pred = np.array([10.0, 8.5, 33.0, 2.6])
    gt = np.array([10.0, 10.0, 20.0, 2.0])
    r = P.metrics_from_arrays(pred, gt, 80.0)
    assert r.abs_rel == pytest.approx(np.mean([0, 0.15, 0.65, 0.3]), abs=1e-12)
    assert r.sq_rel == pytest.approx(np.mean([0, 2.25 / 10, 169 / 20, 0.36 / 2]), abs=1e-12)
    assert r.rmse == pytest.approx(np.sqrt(np.mean([0, 2.25, 169, 0.36])), abs=1e-12)
    expected_log = np.sqrt(np.mean(np.log(pred / gt) ** 2))
    assert r.rmse_log == pytest.approx(expected_log, abs=1e-12)
    assert r.delta1 == pytest.approx(0.5, abs=1e-12)      # 1.0 and 1.1765
    assert r.delta2 == pytest.approx(0.75, abs=1e-12)     # + 1.3 (< 1.5625)
    assert r.delta3 == pytest.approx(1.0, abs=1e-12)      # + 1.65 (< 1.953)
    assert r.delta1 <= r.delta2 <= r.delta3
    assert r.count == 4


def test_eval_delta_monotone_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pred = rng.uniform(1, 80, 30)
        gt = rng.uniform(1, 80, 30)
        r = P.metrics_from_arrays(pred, gt, 80.0)
        assert r.delta1 <= r.delta2 <= r.delta3


def test_eval_empty_pixel_set_errors():
    with pytest.raises(ValueError):
        P.metrics_from_arrays(np.zeros(0), np.zeros(0), 80.0)


def test_evaluate_respects_cap_and_clamp(tiny_data):
    cfg = tiny_cfg()
    net, _ = P.train_stage1(tiny_data, cfg, epochs=0)
    r50 = P.evaluate(net, tiny_data.evals, 50.0, cfg.d_min)
    r80 = P.evaluate(net, tiny_data.evals, 80.0, cfg.d_min)
    assert r50.count <= r80.count
    assert r50.cap == 50.0


def test_eval_csv_shape():
    r = P.metrics_from_arrays(np.array([12.0]), np.array([10.0]), 80.0)
    lines = r.to_csv().strip().splitlines()
    assert lines[0] == "metric,value"
    assert lines[1].startswith("abs_rel,")
    assert len(lines) == 10


# ---------------------------------------------------------------------------
# disk round trips


def test_dataset_write_load_round_trip(tmp_path):
    cfg = tiny_cfg()
    records = make_dataset(cfg, cfg.seed)
    P.write_dataset(tmp_path / "data", records)
    loaded = P.load_dataset(tmp_path / "data")
    assert len(loaded.sources) == cfg.n_source
    assert len(loaded.targets) == cfg.n_target
    assert len(loaded.evals) == cfg.n_eval
    # depth survives exactly (float32 storage of float64-representable values)
    src_gt = records[0].depth
    assert np.abs(loaded.sources[0][1] - src_gt).max() < 1e-4


def test_labels_save_load_round_trip(tmp_path, tiny_data):
    cfg = tiny_cfg()
    net, _ = P.train_stage1(tiny_data, cfg, epochs=1)
    cnet, _ = P.train_completion(tiny_data, cfg, epochs=1)
    labels = P.generate_pseudolabels(net, cnet, tiny_data, cfg)
    P.save_labels(tmp_path / "labels", labels)
    loaded = P.load_labels(tmp_path / "labels", len(labels))
    for a, b in zip(labels, loaded):
        assert a.m_consist == b.m_consist
        assert a.m_valid == b.m_valid
        assert np.abs(a.y_cons.depth - b.y_cons.depth).max() < 1e-4
        assert a.stats.frac_refined == pytest.approx(b.stats.frac_refined)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("DEPTHPL_THREADS", "2")
    assert P.worker_count() == 2
    monkeypatch.setenv("DEPTHPL_THREADS", "0")
    assert P.worker_count() >= 1
    monkeypatch.setenv("DEPTHPL_THREADS", "junk")
    assert P.worker_count() >= 1
