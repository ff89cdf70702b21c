"""Pseudo-label generation and fusion.

Two label families supervise the unlabeled domain: consistency labels keep
depth predictions that agree between a real image and its synthetic-stylized
copy, and completion labels re-project a densified point cloud grown from
the consistency labels. When a pixel has both, the completion label wins;
consistency supervision is restricted to the leftover pixels.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import (DepthMap, PixelMask, project_2d_to_3d, project_3d_to_2d,
                       uniform_subsample)


@dataclass
class PseudoLabelStats:
    frac_2d_only: float
    frac_refined: float
    frac_extended: float


@dataclass
class PseudoLabelSet:
    y_cons: DepthMap
    m_consist: PixelMask
    y_comp: DepthMap
    m_valid: PixelMask
    stats: PseudoLabelStats


def consistency_label(pred_r, pred_rs, tau):
    """Keep pixels where two predictions agree within tau (strict).

    Returns (mask, label) with label = mask * pred_r.
    """
    a = pred_r.depth if isinstance(pred_r, DepthMap) else np.asarray(pred_r, dtype=np.float64)
    b = pred_rs.depth if isinstance(pred_rs, DepthMap) else np.asarray(pred_rs, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"consistency_label: shape mismatch {a.shape} vs {b.shape}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    mask = PixelMask(np.abs(a - b) < tau)
    return mask, DepthMap(a * mask.bits)


def completion_label(y_cons, m_consist, completer, cam, ratio, seed, d_max=None):
    """Densify the consistency label through 3D completion and re-project.

    project to 3D -> seeded uniform subsample -> completer -> project back;
    duplicate pixels keep the minimum depth, off-plane points are dropped.
    Returns (y_comp, m_valid). Completed depths above d_max are capped.
    """
    if m_consist.popcount() == 0:
        raise ValueError("completion_label: empty consistency mask")
    cloud = project_2d_to_3d(y_cons, m_consist, cam)
    sparse = uniform_subsample(cloud, ratio, seed)
    dense = completer.complete(sparse)
    if not np.isfinite(dense.points).all():
        raise FloatingPointError("completion_label: completer produced non-finite points")
    depth, m_valid, _ = project_3d_to_2d(dense, cam)
    d = depth.depth
    if d_max is not None:
        d = np.where(m_valid.bits > 0, np.minimum(d, d_max), d)
    return DepthMap(d), m_valid


def empty_label_set(height, width):
    """Label set for an image that produced no usable labels (skipped in
    training rather than silently full-masked)."""
    zero = DepthMap(np.zeros((height, width)))
    none = PixelMask.empty(height, width)
    return PseudoLabelSet(zero, none, DepthMap(zero.depth.copy()), PixelMask.empty(height, width),
                          PseudoLabelStats(0.0, 0.0, 0.0))


def fuse_for_training(label_set):
    """Masks for the two stage-2 pseudo terms: (consistency, completion).

    The completion term owns every valid-projection pixel; the consistency
    term keeps only consistent pixels the completion label does not cover,
    so the two supervision sets are disjoint.
    """
    mask_comp = label_set.m_valid
    mask_cons = label_set.m_consist & ~label_set.m_valid
    return mask_cons, mask_comp


def label_statistics(label_set):
    """Pixel fractions: 2D-only, refined (both), extended (3D-only)."""
    mc = label_set.m_consist.bits.astype(bool)
    mv = label_set.m_valid.bits.astype(bool)
    n = mc.size
    return PseudoLabelStats(
        frac_2d_only=float((mc & ~mv).sum()) / n,
        frac_refined=float((mc & mv).sum()) / n,
        frac_extended=float((~mc & mv).sum()) / n,
    )


def build_label_set(y_cons, m_consist, y_comp, m_valid):
    ls = PseudoLabelSet(y_cons, m_consist, y_comp, m_valid,
                        PseudoLabelStats(0.0, 0.0, 0.0))
    ls.stats = label_statistics(ls)
    return ls
