"""Empirical viewpoint distribution fitted from silhouettes.

Camera poses of training images are unknown; they are recovered per image
by rendering a handful of candidate shapes over a fixed elevation/azimuth
grid and keeping the pose whose silhouette best overlaps the target
(largest IoU).  The per-image winners feed a smoothed 2-D histogram that
viewpoints are sampled from during generation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .projection import CameraIntrinsics, Viewpoint, rasterize_hard

DEFAULT_ELEV_BINS = 6
DEFAULT_AZIM_BINS = 24
DEFAULT_ELEV_RANGE = (0.0, math.radians(30.0))


def iou(a, b) -> float:
    """Intersection over union of two binary masks; empty union counts as 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass(frozen=True)
class PoseGrid:
    """Bin centers over elevation x azimuth; azimuth covers the full circle."""

    elev_edges: np.ndarray
    azim_edges: np.ndarray

    @classmethod
    def default(cls, elev_bins=DEFAULT_ELEV_BINS, azim_bins=DEFAULT_AZIM_BINS,
                elev_range=DEFAULT_ELEV_RANGE):
        return cls(
            np.linspace(elev_range[0], elev_range[1], elev_bins + 1),
            np.linspace(0.0, 2.0 * math.pi, azim_bins + 1),
        )

    @property
    def elev_centers(self):
        return 0.5 * (self.elev_edges[:-1] + self.elev_edges[1:])

    @property
    def azim_centers(self):
        return 0.5 * (self.azim_edges[:-1] + self.azim_edges[1:])

    def poses(self):
        """All bin-center viewpoints in (elevation, azimuth) index order."""
        return [
            (ei, ai, Viewpoint(float(e), float(a)))
            for ei, e in enumerate(self.elev_centers)
            for ai, a in enumerate(self.azim_centers)
        ]


def render_pose_bank(candidates, pose_grid: PoseGrid, intr: CameraIntrinsics):
    """Hard silhouettes of every candidate at every grid pose.

    Returns (masks (n_candidates, n_poses, H*W) bool, poses list).  The bank
    is the expensive part of the search; fit once, reuse per target.
    """
    poses = pose_grid.poses()
    n_px = intr.height * intr.width
    bank = np.zeros((len(candidates), len(poses), n_px), dtype=bool)
    for ci, grid in enumerate(candidates):
        for pi, (_, _, view) in enumerate(poses):
            mask, _ = rasterize_hard(grid, view, intr)
            bank[ci, pi] = mask.reshape(-1)
    return bank, poses


def _best_pose(target_flat, bank, poses):
    inter = (bank & target_flat).sum(axis=2)
    union = (bank | target_flat).sum(axis=2)
    with np.errstate(invalid="ignore"):
        scores = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    flat = scores.reshape(-1)
    best = int(np.argmax(flat))  # argmax keeps the lowest flat index on ties
    ci, pi = divmod(best, len(poses))
    ei, ai, view = poses[pi]
    return view, float(flat[best]), ci, ei, ai


def estimate_view(target_mask, candidates, pose_grid=None, intr=None):
    """Exhaustive candidate x pose IoU search for one silhouette.

    Ties break toward the lowest (candidate, elevation, azimuth) triple.
    Returns (viewpoint, best IoU, candidate index).
    """
    target = np.asarray(target_mask, dtype=bool)
    if not target.any():
        raise ValueError("target mask is empty; no pose is recoverable")
    if not candidates:
        raise ValueError("need at least one candidate shape")
    pose_grid = pose_grid or PoseGrid.default()
    intr = intr or CameraIntrinsics(height=target.shape[0], width=target.shape[1])
    bank, poses = render_pose_bank(candidates, pose_grid, intr)
    view, score, ci, _, _ = _best_pose(target.reshape(-1), bank, poses)
    return view, score, ci


@dataclass
class ViewDistribution:
    """Additively smoothed histogram over elevation x azimuth bins."""

    elev_edges: np.ndarray
    azim_edges: np.ndarray
    counts: np.ndarray  # (elev_bins, azim_bins)
    smoothing: float = 0.0

    def __post_init__(self):
        self.elev_edges = np.asarray(self.elev_edges, dtype=np.float64)
        self.azim_edges = np.asarray(self.azim_edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.shape != (len(self.elev_edges) - 1, len(self.azim_edges) - 1):
            raise ValueError("counts shape does not match bin edges")
        if np.any(self.counts < 0) or self.smoothing < 0:
            raise ValueError("counts and smoothing must be nonnegative")
        if np.all(self.counts + self.smoothing == 0):
            raise ValueError("distribution has no mass; use smoothing > 0")

    def probabilities(self):
        p = self.counts + self.smoothing
        return p / p.sum()

    def sample(self, rng) -> Viewpoint:
        """Draw a bin by probability, then a uniform point inside the bin."""
        p = self.probabilities().reshape(-1)
        idx = int(rng.choice(p.size, p=p))
        ei, ai = divmod(idx, self.counts.shape[1])
        elev = float(rng.uniform(self.elev_edges[ei], self.elev_edges[ei + 1]))
        azim = float(rng.uniform(self.azim_edges[ai], self.azim_edges[ai + 1]))
        return Viewpoint(elev, azim)

    def to_json(self):
        return {
            "elev_edges_deg": [math.degrees(v) for v in self.elev_edges],
            "azim_edges_deg": [math.degrees(v) for v in self.azim_edges],
            "counts": self.counts.tolist(),
            "smoothing": self.smoothing,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            np.radians(obj["elev_edges_deg"]),
            np.radians(obj["azim_edges_deg"]),
            np.asarray(obj["counts"], dtype=np.float64),
            float(obj["smoothing"]),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def fit_distribution(masks, candidates, pose_grid=None, smoothing=0.0, intr=None):
    """Histogram the argmax poses of every mask over the pose grid."""
    if len(masks) == 0:
        raise ValueError("need at least one mask")
    pose_grid = pose_grid or PoseGrid.default()
    first = np.asarray(masks[0], dtype=bool)
    intr = intr or CameraIntrinsics(height=first.shape[0], width=first.shape[1])
    bank, poses = render_pose_bank(candidates, pose_grid, intr)
    counts = np.zeros((len(pose_grid.elev_centers), len(pose_grid.azim_centers)))
    for mask in masks:
        target = np.asarray(mask, dtype=bool).reshape(-1)
        if not target.any():
            raise ValueError("target mask is empty; no pose is recoverable")
        _, _, _, ei, ai = _best_pose(target, bank, poses)
        counts[ei, ai] += 1
    return ViewDistribution(pose_grid.elev_edges, pose_grid.azim_edges, counts, smoothing)
