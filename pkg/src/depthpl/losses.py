"""Training objectives: supervised depth, smoothness, Chamfer, pseudo-label
terms, stereo geometric consistency, and the weighted stage totals.

All L1-style terms are means (masked terms divide by the masked pixel count,
never the full pixel count) so the loss weights stay scale-free across image
sizes and label densities. Every function returns a scalar Tensor; inputs
that are plain arrays are treated as constants.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import DepthMap, PixelMask, PointCloud, disparity_from_depth, ssim, warp_horizontal

BRUTE_FORCE_LIMIT = 4096    # nearest-neighbor search switches to a KD-tree above this
_NN_CHUNK = 256


@dataclass(frozen=True)
class LossWeights:
    lambda_task: float = 100.0
    lambda_sm: float = 0.1
    lambda_cons: float = 1.0
    lambda_comp: float = 0.1
    lambda_tgc: float = 50.0
    alpha: float = 0.7
    eta: float = 0.85
    mu: float = 0.15
    tau: float = 0.5            # meters

    def __post_init__(self):
        for name in ("lambda_task", "lambda_sm", "lambda_cons", "lambda_comp", "lambda_tgc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def _as_array(x):
    if isinstance(x, DepthMap):
        return x.depth
    if isinstance(x, T.Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _as_tensor(x):
    if isinstance(x, T.Tensor):
        return x
    return T.Tensor(_as_array(x))


def task_loss(pred, gt):
    """Mean absolute depth error against a fixed ground truth."""
    pred = _as_tensor(pred)
    gt = _as_array(gt)
    if pred.data.shape != gt.shape:
        raise T.ShapeError(f"task_loss: shape mismatch {pred.data.shape} vs {gt.shape}")
    return T.mean(T.absolute(T.sub(pred, gt)))


def smoothness_loss(pred, image):
    """Edge-aware first-order smoothness of the prediction.

    mean(e^-|dx I| * |dx d|) + mean(e^-|dy I| * |dy d|) with forward
    differences; the image gradient magnitude is averaged over channels
    before the exponent. The image is a constant, gradients flow into the
    prediction only.
    """
    pred = _as_tensor(pred)
    img = _as_array(image)
    if pred.data.ndim != 2:
        raise T.ShapeError(f"smoothness_loss: prediction must be (H, W), got {pred.data.shape}")
    if img.ndim == 2:
        img = img[None]
    if img.shape[1:] != pred.data.shape:
        raise T.ShapeError(f"smoothness_loss: image {img.shape} vs depth {pred.data.shape}")
    h, w = pred.data.shape
    total = T.Tensor(0.0)
    if w > 1:
        wx = np.exp(-np.abs(img[:, :, 1:] - img[:, :, :-1]).mean(axis=0))
        dx = T.sub(T.subslice(pred, (slice(None), slice(1, None))),
                   T.subslice(pred, (slice(None), slice(0, -1))))
        total = T.add(total, T.mean(T.mul(T.absolute(dx), wx)))
    if h > 1:
        wy = np.exp(-np.abs(img[:, 1:, :] - img[:, :-1, :]).mean(axis=0))
        dy = T.sub(T.subslice(pred, (slice(1, None), slice(None))),
                   T.subslice(pred, (slice(0, -1), slice(None))))
        total = T.add(total, T.mean(T.mul(T.absolute(dy), wy)))
    return total


# ---------------------------------------------------------------------------
# Chamfer distance


def _nn_indices_both(a, b):
    """Nearest-neighbor indices in both directions: (a->b, b->a).

    Exact tiled brute force up to BRUTE_FORCE_LIMIT points (one pass over
    the distance matrix serves both directions); a KD-tree finds the indices
    above that. Squared distances are always recomputed from the points, so
    both paths report identical loss values.
    """
    if max(len(a), len(b)) <= BRUTE_FORCE_LIMIT:
        ab = np.empty(len(a), dtype=np.int64)
        ba_best = np.full(len(b), np.inf)
        ba = np.zeros(len(b), dtype=np.int64)
        for s in range(0, len(a), _NN_CHUNK):
            c = a[s:s + _NN_CHUNK]
            d2 = (c[:, 0][:, None] - b[:, 0][None, :]) ** 2
            d2 += (c[:, 1][:, None] - b[:, 1][None, :]) ** 2
            d2 += (c[:, 2][:, None] - b[:, 2][None, :]) ** 2
            ab[s:s + _NN_CHUNK] = d2.argmin(axis=1)
            col_min = d2.min(axis=0)
            better = col_min < ba_best
            ba_best[better] = col_min[better]
            ba[better] = s + d2[:, better].argmin(axis=0)
        return ab, ba
    from scipy.spatial import cKDTree
    ta, tb = cKDTree(a), cKDTree(b)
    return (tb.query(a, k=1)[1].astype(np.int64),
            ta.query(b, k=1)[1].astype(np.int64))


def chamfer_distance(a, b):
    """Symmetric mean squared nearest-neighbor distance between two clouds.

    CD = mean_i min_j |a_i - b_j|^2 + mean_j min_i |b_j - a_i|^2.
    Gradients flow through the selected pairs (the argmin is held fixed).
    """
    at = a if isinstance(a, T.Tensor) else None
    bt = b if isinstance(b, T.Tensor) else None
    pa = a.data if at is not None else (a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64))
    pb = b.data if bt is not None else (b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64))
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer_distance: empty cloud")
    nn_ab, nn_ba = _nn_indices_both(pa, pb)
    diff_ab = pa - pb[nn_ab]
    diff_ba = pb - pa[nn_ba]
    na, nb = len(pa), len(pb)
    value = (diff_ab ** 2).sum(axis=1).mean() + (diff_ba ** 2).sum(axis=1).mean()

    def back(g):
        s = float(g.reshape(()))
        ga = gb = None
        if at is not None:
            ga = (2.0 * s / na) * diff_ab
            gb_term = np.zeros_like(pa)
            np.add.at(gb_term, nn_ba, (-2.0 * s / nb) * diff_ba)
            ga = ga + gb_term
        if bt is not None:
            gb = (2.0 * s / nb) * diff_ba
            ga_term = np.zeros_like(pb)
            np.add.at(ga_term, nn_ab, (-2.0 * s / na) * diff_ab)
            gb = gb + ga_term
        return ga, gb

    inputs = (at if at is not None else T.Tensor(pa),
              bt if bt is not None else T.Tensor(pb))
    return T.record("chamfer", inputs, np.float64(value), back)


def chamfer_distance_bruteforce(a, b):
    """All-pairs reference oracle; O(|A| * |B|) with no shortcuts."""
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer_distance_bruteforce: empty cloud")
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


# ---------------------------------------------------------------------------
# pseudo-label terms


def _masked_l1(pred, label, mask_bits):
    count = int(mask_bits.sum())
    if count == 0:
        return T.Tensor(0.0)
    resid = T.mul(T.sub(pred, label), mask_bits.astype(np.float64))
    return T.mul(T.reduce_sum(T.absolute(resid)), 1.0 / count)


def pseudo_cons_loss(pred_r, y_cons, m_consist, m_valid):
    """Consistency-label L1 on pixels the completion label does not cover.

    The residual is (m_consist * pred - y_cons) restricted to
    m_consist & ~m_valid; the stored label is already masked, so the inner
    mask is idempotent but kept for fidelity to the published form.
    """
    pred = _as_tensor(pred_r)
    label = _as_array(y_cons)
    if pred.data.shape != label.shape:
        raise T.ShapeError(f"pseudo_cons_loss: shape mismatch {pred.data.shape} vs {label.shape}")
    eligible = (m_consist & ~m_valid).bits
    inner = T.mul(pred, m_consist.bits.astype(np.float64))
    return _masked_l1(inner, label, eligible)


def pseudo_comp_loss(pred_r, y_comp, m_valid):
    """Completion-label L1 over the valid-projection mask."""
    pred = _as_tensor(pred_r)
    label = _as_array(y_comp)
    if pred.data.shape != label.shape:
        raise T.ShapeError(f"pseudo_comp_loss: shape mismatch {pred.data.shape} vs {label.shape}")
    return _masked_l1(pred, label, m_valid.bits)


# ---------------------------------------------------------------------------
# stereo geometric consistency


def _tgc_one_direction(target_img, source_img, disparity_signed, w):
    recon = warp_horizontal(source_img, disparity_signed)
    photo = T.mean(T.absolute(T.sub(T.Tensor(target_img), recon)))
    struct = T.mean(T.sub(1.0, ssim(target_img, recon)))
    return T.add(T.mul(struct, w.eta / 2.0), T.mul(photo, w.mu))


def geometric_consistency_loss(left, right, pred_left, pred_right, baseline, f, w=None):
    """Photometric + SSIM penalty between each view and its warped partner.

    The left reconstruction samples the right image at u - a_left with
    a = baseline * f / depth; the right reconstruction samples the left
    image at u + a_right. Both directions are summed.
    """
    w = w or LossWeights()
    left = _as_array(left)
    right = _as_array(right)
    if left.shape != right.shape or left.ndim != 3:
        raise T.ShapeError(f"geometric_consistency_loss: image mismatch {left.shape} vs {right.shape}")
    for p in (pred_left, pred_right):
        if _as_array(p).min() <= 0:
            raise ValueError("geometric_consistency_loss: non-positive depth")
    a_left = disparity_from_depth(_as_tensor(pred_left), baseline, f)
    a_right = disparity_from_depth(_as_tensor(pred_right), baseline, f)
    loss_l = _tgc_one_direction(left, right, a_left, w)
    loss_r = _tgc_one_direction(right, left, T.neg(a_right), w)
    return T.add(loss_l, loss_r)


# ---------------------------------------------------------------------------
# stage totals


def stage1_total(l_task_s, l_task_sr, l_sm, w=None):
    """First-stage objective: lambda_task * (task_s + task_sr) + lambda_sm * sm."""
    w = w or LossWeights()
    task = T.add(_as_tensor(l_task_s), _as_tensor(l_task_sr))
    return T.add(T.mul(task, w.lambda_task), T.mul(_as_tensor(l_sm), w.lambda_sm))


def stage1_stereo_total(l_task_s, l_sm, l_tgc, w=None):
    """Stereo warm-up objective: drops the stylized task term, adds tgc."""
    w = w or LossWeights()
    return T.add(T.add(T.mul(_as_tensor(l_task_s), w.lambda_task),
                       T.mul(_as_tensor(l_sm), w.lambda_sm)),
                 T.mul(_as_tensor(l_tgc), w.lambda_tgc))


def stage2_total(l_cons, l_comp, l_task_s, l_sm, w=None):
    """Self-training objective with the alpha mix of pseudo and synthetic terms."""
    w = w or LossWeights()
    pseudo = T.add(T.mul(_as_tensor(l_cons), w.lambda_cons),
                   T.mul(_as_tensor(l_comp), w.lambda_comp))
    return T.add(T.add(T.mul(pseudo, w.alpha),
                       T.mul(_as_tensor(l_task_s), (1.0 - w.alpha) * w.lambda_task)),
                 T.mul(_as_tensor(l_sm), w.lambda_sm))


def stage2_stereo_total(l_cons, l_comp, l_task_s, l_sm, l_tgc, w=None):
    w = w or LossWeights()
    return T.add(stage2_total(l_cons, l_comp, l_task_s, l_sm, w),
                 T.mul(_as_tensor(l_tgc), w.lambda_tgc))
