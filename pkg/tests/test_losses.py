import numpy as np
import pytest

from depthpl import losses as L
from depthpl import tensor as T
from depthpl.geometry import PixelMask, PointCloud, disparity_from_depth


def test_task_loss_zero_at_match():
    gt = np.random.default_rng(0).uniform(1, 10, (4, 6))
    assert L.task_loss(T.Tensor(gt.copy()), gt).item() == 0.0


def test_task_loss_constant_offset():
    gt = np.full((3, 3), 5.0)
    assert L.task_loss(T.Tensor(gt + 1.0), gt).item() == pytest.approx(1.0)


def test_task_loss_hand_example():
    val = L.task_loss(T.Tensor(np.array([[10.0, 20.0]])), np.array([[12.0, 16.0]])).item()
    assert val == pytest.approx(3.0)


def test_task_loss_shape_mismatch():
    with pytest.raises(T.ShapeError):
        L.task_loss(T.Tensor(np.zeros((2, 2))), np.zeros((2, 3)))


def test_smoothness_zero_for_constant_depth():
    img = np.random.default_rng(1).random((3, 4, 6))
    assert L.smoothness_loss(T.Tensor(np.full((4, 6), 7.0)), img).item() == 0.0


def test_smoothness_unit_ramp_row():
    # slope-1 ramp on a 1x4 row with a constant image: weight e^0, mean 1
    d = np.arange(4.0).reshape(1, 4)
    assert L.smoothness_loss(T.Tensor(d), np.zeros((1, 1, 4))).item() == pytest.approx(1.0)


def test_smoothness_suppressed_at_image_edges():
    d = np.zeros((1, 4))
    d[0, 2:] = 5.0                              # depth jump between cols 1 and 2
    img = np.zeros((1, 1, 4))
    img[0, 0, 2:] = 1e6                          # collocated huge image edge
    val = L.smoothness_loss(T.Tensor(d), img).item()
    assert val < 1e-12


def test_smoothness_gradient():
    rng = np.random.default_rng(2)
    img = rng.random((3, 4, 4))
    rep = T.check_gradients(lambda z: L.smoothness_loss(z, img),
                            rng.uniform(1, 10, (4, 4)))
    assert rep.ok, rep


# ---------------------------------------------------------------------------
# Chamfer distance


def test_chamfer_self_zero():
    a = np.random.default_rng(3).random((20, 3))
    assert L.chamfer_distance(a, a).item() == 0.0


def test_chamfer_hand_example():
    val = L.chamfer_distance(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])).item()
    assert val == 2.0


def test_chamfer_symmetry():
    rng = np.random.default_rng(4)
    a, b = rng.random((17, 3)), rng.random((9, 3))
    assert L.chamfer_distance(a, b).item() == L.chamfer_distance(b, a).item()


def test_chamfer_empty_cloud_errors():
    with pytest.raises(ValueError):
        L.chamfer_distance(np.zeros((0, 3)), np.ones((3, 3)))


def test_chamfer_matches_bruteforce_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = rng.random((int(rng.integers(1, 64)), 3)) * 5
        b = rng.random((int(rng.integers(1, 64)), 3)) * 5
        assert L.chamfer_distance(a, b).item() == L.chamfer_distance_bruteforce(a, b)


def test_chamfer_kdtree_path_matches_direct(monkeypatch):
    rng = np.random.default_rng(6)
    a, b = rng.random((900, 3)), rng.random((1100, 3))
    direct = L.chamfer_distance(a, b).item()
    monkeypatch.setattr(L, "BRUTE_FORCE_LIMIT", 10)
    assert L.chamfer_distance(a, b).item() == direct


def test_chamfer_accepts_pointcloud_and_tensor():
    a = PointCloud(np.array([[0.0, 0, 0], [1, 1, 1]]))
    b = T.Tensor(np.array([[0.0, 0, 0]]))
    assert L.chamfer_distance(a, b).item() == pytest.approx(1.5)


def test_chamfer_gradients_each_side():
    rng = np.random.default_rng(7)
    ref = rng.random((6, 3)) * 2
    rep = T.check_gradients(lambda z: L.chamfer_distance(z, ref), rng.random((5, 3)))
    assert rep.ok, rep
    rep = T.check_gradients(lambda z: L.chamfer_distance(ref, z), rng.random((4, 3)))
    assert rep.ok, rep


# ---------------------------------------------------------------------------
# pseudo-label losses


def _masks():
    m_consist = PixelMask(np.array([[1, 1], [1, 0]], dtype=np.uint8))
    m_valid = PixelMask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
    return m_consist, m_valid


def test_pseudo_cons_full_valid_mask_gives_zero():
    pred = T.Tensor(np.full((2, 2), 99.0))
    y = np.ones((2, 2))
    m_consist = PixelMask(np.ones((2, 2), dtype=np.uint8))
    m_valid = PixelMask(np.ones((2, 2), dtype=np.uint8))
    assert L.pseudo_cons_loss(pred, y, m_consist, m_valid).item() == 0.0


def test_pseudo_cons_empty_consistency_gives_zero():
    pred = T.Tensor(np.full((2, 2), 99.0))
    empty = PixelMask(np.zeros((2, 2), dtype=np.uint8))
    assert L.pseudo_cons_loss(pred, np.ones((2, 2)), empty, empty).item() == 0.0


def test_pseudo_cons_single_eligible_pixel():
    m_consist = PixelMask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
    m_valid = PixelMask(np.zeros((2, 2), dtype=np.uint8))
    pred = T.Tensor(np.array([[11.0, 3.0], [4.0, 5.0]]))
    label = np.array([[10.0, 0.0], [0.0, 0.0]])
    assert L.pseudo_cons_loss(pred, label, m_consist, m_valid).item() == pytest.approx(1.0)


def test_pseudo_comp_empty_mask_zero():
    pred = T.Tensor(np.full((2, 2), 9.0))
    assert L.pseudo_comp_loss(pred, np.ones((2, 2)),
                              PixelMask(np.zeros((2, 2), dtype=np.uint8))).item() == 0.0


def test_pseudo_comp_exact_match_zero():
    y = np.array([[4.0, 0.0], [0.0, 0.0]])
    m = PixelMask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
    assert L.pseudo_comp_loss(T.Tensor(np.array([[4.0, 77.0], [8.0, 9.0]])), y, m).item() == 0.0


def test_pseudo_comp_mean_of_residuals():
    m = PixelMask(np.array([[1, 1], [0, 0]], dtype=np.uint8))
    pred = T.Tensor(np.array([[11.0, 13.0], [0.0, 0.0]]))
    y = np.array([[10.0, 10.0], [0.0, 0.0]])
    assert L.pseudo_comp_loss(pred, y, m).item() == pytest.approx(2.0)   # (1 + 3) / 2


def test_mask_disjointness_between_terms():
    # any single pixel feeds at most one of the two pseudo losses
    rng = np.random.default_rng(8)
    m_consist = PixelMask(rng.random((6, 8)) < 0.6)
    m_valid = PixelMask(rng.random((6, 8)) < 0.5)
    pred_data = rng.uniform(1, 10, (6, 8))
    y_cons = rng.uniform(1, 10, (6, 8)) * m_consist.bits
    y_comp = rng.uniform(1, 10, (6, 8)) * m_valid.bits

    tape = T.Tape()
    pred = T.Tensor(pred_data, tape)
    T.backward(tape, L.pseudo_cons_loss(pred, y_cons, m_consist, m_valid))
    cons_px = set(map(tuple, np.argwhere(pred.grad != 0)))
    tape = T.Tape()
    pred = T.Tensor(pred_data, tape)
    T.backward(tape, L.pseudo_comp_loss(pred, y_comp, m_valid))
    comp_px = set(map(tuple, np.argwhere(pred.grad != 0)))
    assert not (cons_px & comp_px)


def test_pseudo_losses_gradients():
    rng = np.random.default_rng(9)
    m_consist = PixelMask(rng.random((4, 5)) < 0.7)
    m_valid = PixelMask(rng.random((4, 5)) < 0.4)
    y_cons = rng.uniform(1, 9, (4, 5)) * m_consist.bits
    y_comp = rng.uniform(1, 9, (4, 5)) * m_valid.bits
    point = rng.uniform(1, 9, (4, 5))
    rep = T.check_gradients(lambda z: L.pseudo_cons_loss(z, y_cons, m_consist, m_valid), point)
    assert rep.ok, rep
    rep = T.check_gradients(lambda z: L.pseudo_comp_loss(z, y_comp, m_valid), point)
    assert rep.ok, rep


# ---------------------------------------------------------------------------
# geometric consistency


def test_tgc_identity_pair_near_zero():
    rng = np.random.default_rng(10)
    img = rng.random((1, 8, 16))
    far = T.Tensor(np.full((8, 16), 1e7))
    val = L.geometric_consistency_loss(img, img, far, T.Tensor(np.full((8, 16), 1e7)),
                                       0.5, 100.0).item()
    assert val < 1e-6


def test_tgc_exact_reconstruction_integer_shift():
    # g constant near both borders, ramp in the middle; true disparity 1
    g = np.concatenate([np.zeros(3), np.arange(6.0) / 6.0, np.ones(8)])
    left = np.tile(g[:16], (1, 8, 1))
    right = np.tile(g[1:17], (1, 8, 1))
    b, f = 0.5, 100.0
    depth = np.full((8, 16), b * f / 1.0)
    val = L.geometric_consistency_loss(left, right, T.Tensor(depth), T.Tensor(depth),
                                       b, f).item()
    assert val < 1e-6


def test_tgc_rejects_nonpositive_depth():
    img = np.zeros((1, 4, 4))
    with pytest.raises(ValueError):
        L.geometric_consistency_loss(img, img, T.Tensor(np.zeros((4, 4))),
                                     T.Tensor(np.ones((4, 4))), 0.5, 100.0)


def test_tgc_gradient():
    rng = np.random.default_rng(11)
    left = rng.random((1, 4, 8))
    right = rng.random((1, 4, 8))

    def f(z):
        pl = T.subslice(z, (0,))
        pr = T.subslice(z, (1,))
        return L.geometric_consistency_loss(left, right, pl, pr, 0.54, 30.0)

    rep = T.check_gradients(f, rng.uniform(5.0, 20.0, (2, 4, 8)))
    assert rep.ok, rep


def test_halving_depth_doubles_disparity():
    d = np.full((3, 3), 20.0)
    assert np.allclose(disparity_from_depth(d / 2, 0.54, 100.0),
                       2 * disparity_from_depth(d, 0.54, 100.0))


# ---------------------------------------------------------------------------
# stage totals


def test_totals_zero_components():
    assert L.stage1_total(0.0, 0.0, 0.0).item() == 0.0
    assert L.stage2_total(0.0, 0.0, 0.0, 0.0).item() == 0.0


def test_stage2_hand_example():
    val = L.stage2_total(0.02, 0.1, 0.05, 0.01).item()
    assert val == pytest.approx(1.522, abs=1e-12)


def test_stage2_stereo_adds_weighted_tgc():
    base = L.stage2_total(0.02, 0.1, 0.05, 0.01).item()
    val = L.stage2_stereo_total(0.02, 0.1, 0.05, 0.01, 0.003).item()
    assert val == pytest.approx(base + 50.0 * 0.003, abs=1e-12)


def test_stage1_total_formula():
    w = L.LossWeights()
    assert L.stage1_total(0.5, 0.25, 0.1, w).item() == pytest.approx(100 * 0.75 + 0.1 * 0.1)


def test_stage1_stereo_total_formula():
    w = L.LossWeights()
    val = L.stage1_stereo_total(0.5, 0.1, 0.02, w).item()
    assert val == pytest.approx(100 * 0.5 + 0.1 * 0.1 + 50 * 0.02)


def test_weights_validation():
    with pytest.raises(ValueError):
        L.LossWeights(alpha=1.5)
    with pytest.raises(ValueError):
        L.LossWeights(tau=0.0)
    with pytest.raises(ValueError):
        L.LossWeights(lambda_task=-1.0)


def test_default_weights_match_published_settings():
    w = L.LossWeights()
    assert (w.lambda_task, w.lambda_sm, w.lambda_cons, w.lambda_comp) == (100.0, 0.1, 1.0, 0.1)
    assert (w.lambda_tgc, w.alpha, w.eta, w.mu, w.tau) == (50.0, 0.7, 0.85, 0.15, 0.5)


def test_losses_nonnegative_random():
    rng = np.random.default_rng(12)
    for _ in range(20):
        pred = T.Tensor(rng.uniform(1, 10, (4, 4)))
        gt = rng.uniform(1, 10, (4, 4))
        assert L.task_loss(pred, gt).item() >= 0
        assert L.smoothness_loss(pred, rng.random((1, 4, 4))).item() >= 0
        a, b = rng.random((5, 3)), rng.random((7, 3))
        assert L.chamfer_distance(a, b).item() >= 0
