"""Feature vectors for proposals, frame-to-frame links, and division triples.

The proposal vector has 92 entries: 15 intensity histogram bins, two 8-bin
boundary-contrast histograms (dilation radii 1 and 3), a 12x5 polar boundary
histogram, and the area fraction.  All histograms are L1-normalized.
"""
from __future__ import annotations

import math

import numpy as np

from .geometry import Mask, boundary_and_dilations, iou_mask
from .proposals import Frame, Proposal

PROPOSAL_DIM = 92
MOVE_DIM = 195
MITOSIS_DIM = 290

BOUNDARY_RADII = (1, 3)
N_INTENSITY_BINS = 15
N_CONTRAST_BINS = 8
N_ANGULAR_BINS = 12
N_RADIAL_BINS = 5

# Block layout of the proposal vector, used by the move-feature summary stats.
_BLOCKS = ((0, 15), (15, 31), (31, 91), (91, 92))

_EPS = 1e-9


def _clip_pixels(mask: Mask, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = mask.pixels()
    keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    return rows[keep], cols[keep]


def _contrast_hist(
    intensity: np.ndarray, b_rows, b_cols, r_rows, r_cols
) -> np.ndarray:
    """Histogram of (nearest ring sample mean - boundary intensity) in [-0.5, 0.5]."""
    if len(r_rows) == 0 or len(b_rows) == 0:
        return np.zeros(N_CONTRAST_BINS)
    d2 = (b_rows[:, None] - r_rows[None, :]) ** 2 + (b_cols[:, None] - r_cols[None, :]) ** 2
    nearest = d2 == d2.min(axis=1, keepdims=True)  # integer distances: ties are exact
    ring_vals = intensity[r_rows, r_cols]
    means = (nearest @ ring_vals) / nearest.sum(axis=1)
    diffs = np.clip(means - intensity[b_rows, b_cols], -0.5, 0.5)
    hist, _ = np.histogram(diffs, bins=N_CONTRAST_BINS, range=(-0.5, 0.5))
    return hist / len(b_rows)


def _polar_hist(mask: Mask, b_rows, b_cols) -> np.ndarray:
    cx, cy = mask.centroid
    dy = b_rows.astype(np.float64) - cy
    dx = b_cols.astype(np.float64) - cx
    radius = np.hypot(dx, dy)
    r_max = radius.max()
    unit = radius / r_max if r_max > 0 else np.zeros_like(radius)
    ang_bin = np.floor((np.arctan2(dy, dx) + math.pi) / (2.0 * math.pi / N_ANGULAR_BINS))
    ang_bin = np.clip(ang_bin.astype(int), 0, N_ANGULAR_BINS - 1)
    rad_bin = np.minimum((unit * N_RADIAL_BINS).astype(int), N_RADIAL_BINS - 1)
    hist = np.zeros(N_ANGULAR_BINS * N_RADIAL_BINS)
    np.add.at(hist, ang_bin * N_RADIAL_BINS + rad_bin, 1.0)
    return hist / len(b_rows)


def proposal_features(p: Proposal, frame: Frame) -> np.ndarray:
    """92-entry appearance vector; invariant to joint translation of mask and image."""
    intensity = frame.intensity
    height, width = intensity.shape
    rows, cols = p.mask.pixels()
    vals = intensity[rows, cols]
    int_hist, _ = np.histogram(vals, bins=N_INTENSITY_BINS, range=(0.0, 1.0))
    int_hist = int_hist / len(vals)

    boundary, rings = boundary_and_dilations(p.mask, BOUNDARY_RADII)
    b_rows, b_cols = boundary.pixels()
    contrast = []
    for r in BOUNDARY_RADII:
        r_rows, r_cols = _clip_pixels(rings[r], width, height)
        contrast.append(_contrast_hist(intensity, b_rows, b_cols, r_rows, r_cols))

    polar = _polar_hist(p.mask, b_rows, b_cols)
    area = np.array([p.area / float(width * height)])
    out = np.concatenate([int_hist, contrast[0], contrast[1], polar, area])
    assert out.shape == (PROPOSAL_DIM,)
    return out


def centroid_distance(a: Proposal, b: Proposal) -> float:
    (ax, ay), (bx, by) = a.centroid, b.centroid
    return float(math.hypot(bx - ax, by - ay))


def aligned_iou(a: Mask, b: Mask) -> float:
    """Mask IoU after translating b so the centroids coincide (rounded to pixels)."""
    (ax, ay), (bx, by) = a.centroid, b.centroid
    return iou_mask(a, b.translated(int(round(ax - bx)), int(round(ay - by))))


def _diff_stats(f_i: np.ndarray, f_j: np.ndarray) -> np.ndarray:
    diff = np.abs(f_i - f_j) / (np.abs(f_i) + np.abs(f_j) + _EPS)
    blocks = [diff[a:b].mean() for a, b in _BLOCKS]
    return np.array([diff.mean(), diff.max(), *blocks])


def move_features(
    p_i: Proposal,
    p_j: Proposal,
    prob_i: float,
    prob_j: float,
    frame_i: Frame,
    frame_j: Frame,
    feat_i: np.ndarray | None = None,
    feat_j: np.ndarray | None = None,
) -> np.ndarray:
    """195-entry link vector for a candidate move from p_i (frame t) to p_j (t+1)."""
    if feat_i is None:
        feat_i = proposal_features(p_i, frame_i)
    if feat_j is None:
        feat_j = proposal_features(p_j, frame_j)
    rel = np.array([
        centroid_distance(p_i, p_j),
        iou_mask(p_i.mask, p_j.mask),
        aligned_iou(p_i.mask, p_j.mask),
    ])
    out = np.concatenate([
        feat_i,
        feat_j,
        rel,
        _diff_stats(feat_i, feat_j),
        [prob_i, prob_j],
    ])
    assert out.shape == (MOVE_DIM,)
    return out


def mitosis_features(
    p: Proposal,
    d1: Proposal,
    d2: Proposal,
    prob_p: float,
    prob_d1: float,
    prob_d2: float,
    frame_parent: Frame,
    frame_daughters: Frame,
    feat_p: np.ndarray | None = None,
    feat_d1: np.ndarray | None = None,
    feat_d2: np.ndarray | None = None,
) -> np.ndarray:
    """290-entry division vector; invariant to the order the daughters are given in.

    Daughters are canonicalized to ascending id, and the pairwise-distance
    block is sorted.
    """
    if d1.id > d2.id:
        d1, d2 = d2, d1
        prob_d1, prob_d2 = prob_d2, prob_d1
        feat_d1, feat_d2 = feat_d2, feat_d1
    if feat_p is None:
        feat_p = proposal_features(p, frame_parent)
    if feat_d1 is None:
        feat_d1 = proposal_features(d1, frame_daughters)
    if feat_d2 is None:
        feat_d2 = proposal_features(d2, frame_daughters)

    d_pd1 = centroid_distance(p, d1)
    d_pd2 = centroid_distance(p, d2)
    d_dd = centroid_distance(d1, d2)
    dists = np.sort([d_pd1, d_pd2, d_dd])

    ious = np.array([
        iou_mask(p.mask, d1.mask),
        iou_mask(p.mask, d2.mask),
        iou_mask(d1.mask, d2.mask),
    ])
    aligned = np.array([
        aligned_iou(p.mask, d1.mask),
        aligned_iou(p.mask, d2.mask),
        aligned_iou(d1.mask, d2.mask),
    ])
    out = np.concatenate([
        feat_p,
        feat_d1,
        feat_d2,
        dists,
        ious,
        aligned,
        [_point_to_line(p.centroid, d1.centroid, d2.centroid)],
        [abs(d_dd - (d_pd1 + d_pd2))],
        [prob_p, prob_d1, prob_d2],
    ])
    assert out.shape == (MITOSIS_DIM,)
    return out


def _point_to_line(pt, a, b) -> float:
    """Distance from pt to the line through a and b (to a itself when a == b)."""
    ax, ay = a
    bx, by = b
    px, py = pt
    vx, vy = bx - ax, by - ay
    norm = math.hypot(vx, vy)
    if norm < _EPS:
        return math.hypot(px - ax, py - ay)
    return abs(vx * (ay - py) - vy * (ax - px)) / norm
