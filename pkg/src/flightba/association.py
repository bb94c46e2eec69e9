"""Multi-candidate observations, RANSAC triangulation and trajectory initialization.

Frames and cameras are 0-based in memory. An assignment is an integer array
of shape ``(T, M)`` holding the chosen candidate index per (frame, camera),
or ``-1`` when no candidate is chosen.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import Trajectory
from .errors import InsufficientViews, NoResolvableFrames
from .losses import RobustLoss
from .scene import camera_arrays, pixel_to_normalized, project_many, triangulate_batch

DEFAULT_CAP = 16


@dataclass(eq=False)
class CandidateSet:
    camera_id: int
    frame: int
    candidates: np.ndarray

    def __post_init__(self):
        self.candidates = np.asarray(self.candidates, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.candidates)


class ObservationTable:
    """Candidate detections for every (camera, frame) pair.

    Candidates are stored flat, ordered by frame then camera;
    ``offsets[t * M + j]`` is where the slice for camera ``j`` at frame ``t``
    starts.
    """

    def __init__(self, n_cameras, n_frames, sets=None, cap=DEFAULT_CAP):
        self.n_cameras = int(n_cameras)
        self.n_frames = int(n_frames)
        self.cap = int(cap)
        sets = sets or {}
        counts = np.zeros((self.n_frames, self.n_cameras), dtype=np.int64)
        chunks = {}
        for (cam, frame), pts in sets.items():
            if not (0 <= cam < self.n_cameras and 0 <= frame < self.n_frames):
                raise ValueError(f"observation ({cam}, {frame}) out of range")
            pts = np.asarray(pts, dtype=float).reshape(-1, 2)
            if len(pts) > self.cap:
                raise ValueError(
                    f"{len(pts)} candidates at camera {cam} frame {frame} exceed cap {self.cap}"
                )
            if not np.all(np.isfinite(pts)):
                raise ValueError(f"non-finite candidate at camera {cam} frame {frame}")
            counts[frame, cam] = len(pts)
            chunks[(frame, cam)] = pts
        self.counts = counts
        self.offsets = np.concatenate([[0], np.cumsum(counts.ravel())]).astype(np.int64)
        flat = [chunks[k] for k in sorted(chunks) if len(chunks[k])]
        self.candidates = np.concatenate(flat) if flat else np.zeros((0, 2))

    def get(self, cam, frame):
        i = frame * self.n_cameras + cam
        return self.candidates[self.offsets[i] : self.offsets[i + 1]]

    def candidate_set(self, cam, frame):
        return CandidateSet(cam, frame, self.get(cam, frame))

    def visible_cameras(self, frame):
        """Cameras with at least one candidate at ``frame``."""
        return np.flatnonzero(self.counts[frame] > 0)

    def frame_sets(self, frame):
        return [self.get(j, frame) for j in range(self.n_cameras)]

    def items(self):
        for t in range(self.n_frames):
            for j in range(self.n_cameras):
                if self.counts[t, j]:
                    yield (j, t), self.get(j, t)

    def as_dict(self):
        return {k: v.copy() for k, v in self.items()}

    def select(self, assignment):
        """Table keeping only the assigned candidate per (camera, frame)."""
        sets = {}
        for (j, t), pts in self.items():
            k = assignment[t, j]
            if k >= 0:
                sets[(j, t)] = pts[k : k + 1]
        return ObservationTable(self.n_cameras, self.n_frames, sets, self.cap)

    def validate_bounds(self, cameras):
        for (j, t), pts in self.items():
            k = cameras[j].intrinsics
            if np.any(pts < 0) or np.any(pts[:, 0] > k.width) or np.any(pts[:, 1] > k.height):
                raise ValueError(f"candidate outside image at camera {j} frame {t}")

    def __eq__(self, other):
        return (
            isinstance(other, ObservationTable)
            and self.n_cameras == other.n_cameras
            and self.n_frames == other.n_frames
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.candidates, other.candidates)
        )


def _sets_arrays(sets):
    return [np.asarray(getattr(s, "candidates", s), dtype=float).reshape(-1, 2) for s in sets]


def min_candidate_residual(camera, x, candidates, loss):
    """Smallest robust reprojection loss over a candidate set.

    Returns ``(value, index)``. An empty set gives ``(0.0, None)``; a point
    behind the camera gives ``(loss.saturation, None)``.
    """
    cands = _sets_arrays([candidates])[0]
    if len(cands) == 0:
        return 0.0, None
    uv, z = project_many(camera, np.asarray(x, dtype=float)[None])
    if not z[0] > 0:
        return loss.saturation, None
    d = cands - uv[0]
    s = np.einsum("ij,ij->i", d, d)
    k = int(np.argmin(s))
    return float(loss(s[k])), k


def _pad_sets(sets):
    counts = np.array([len(s) for s in sets], dtype=np.int64)
    K = int(counts.max()) if len(counts) else 0
    padded = np.zeros((len(sets), max(K, 1), 2))
    for j, s in enumerate(sets):
        padded[j, : len(s)] = s
    return padded, counts


def hypothesis_scores(cameras, sets, X, loss, arrays=None):
    """Score 3D hypotheses by summing min-over-candidates losses over cameras."""
    R, t, intr = arrays if arrays is not None else camera_arrays(cameras)
    padded, counts = _pad_sets(_sets_arrays(sets))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return kernels.score_hypotheses(
        R, t, intr, X, padded, counts, loss.code, loss.delta, loss.saturation
    )


def ransac_triangulate(cameras, sets, n_iter=200, loss=None, seed=0, full_output=False, arrays=None):
    """RANSAC over two-view hypotheses scored by the multi-candidate cost.

    Each iteration picks two distinct cameras that have candidates, one
    candidate in each, and triangulates them. The hypothesis with the lowest
    total score wins. Returns the point (or ``None`` when every hypothesis was
    degenerate); with ``full_output`` returns ``(point, score, hypotheses,
    scores)``.
    """
    loss = loss or RobustLoss()
    sets = _sets_arrays(sets)
    if len(sets) != len(cameras):
        raise ValueError("need one candidate set per camera")
    avail = np.array([j for j, s in enumerate(sets) if len(s)], dtype=np.int64)
    if len(avail) < 2:
        raise InsufficientViews(f"{len(avail)} camera(s) with candidates; need 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    n_av = len(avail)
    ia = rng.integers(n_av, size=n_iter)
    ib = rng.integers(n_av - 1, size=n_iter)
    ib += ib >= ia
    ca, cb = avail[ia], avail[ib]
    counts = np.array([len(s) for s in sets])
    ka = np.minimum((rng.random(n_iter) * counts[ca]).astype(np.int64), counts[ca] - 1)
    kb = np.minimum((rng.random(n_iter) * counts[cb]).astype(np.int64), counts[cb] - 1)

    # back-project every candidate once
    centers = np.stack([c.center for c in cameras])
    starts = np.concatenate([[0], np.cumsum(counts)])
    dirs = np.zeros((starts[-1], 3))
    for j in avail:
        xy = pixel_to_normalized(cameras[j], sets[j])
        d = np.concatenate([xy, np.ones((len(xy), 1))], axis=1)
        dirs[starts[j] : starts[j + 1]] = d @ cameras[j].rotation
    X = triangulate_batch(
        centers[ca], dirs[starts[ca] + ka], centers[cb], dirs[starts[cb] + kb]
    )
    scores = hypothesis_scores(cameras, sets, X, loss, arrays)
    best = int(np.argmin(scores))
    if not np.isfinite(scores[best]):
        point = None
    else:
        point = X[best].copy()
    if full_output:
        return point, (float(scores[best]) if point is not None else np.inf), X, scores
    return point


@dataclass(frozen=True)
class TriangulationConfig:
    n_iter: int = 200
    loss: RobustLoss = field(default_factory=RobustLoss)
    seed: int = 0


def frame_assignment(cameras, sets, x, loss):
    out = np.full(len(cameras), -1, dtype=np.int64)
    for j, (cam, s) in enumerate(zip(cameras, sets)):
        _, k = min_candidate_residual(cam, x, s, loss)
        if k is not None:
            out[j] = k
    return out


def initialize_trajectory(obs, cameras, cfg=None, dt=1.0 / 30.0):
    """Triangulate every frame with RANSAC and fill unresolved frames.

    Frame ``t`` uses seed ``cfg.seed + t``. Frames that cannot be triangulated
    are filled by linear interpolation between the nearest resolved frames
    (nearest value beyond the ends).
    """
    cfg = cfg or TriangulationConfig()
    T, M = obs.n_frames, obs.n_cameras
    arrays = camera_arrays(cameras)
    X = np.full((T, 3), np.nan)
    assignment = np.full((T, M), -1, dtype=np.int64)
    for t in range(T):
        sets = obs.frame_sets(t)
        if np.count_nonzero(obs.counts[t]) < 2:
            continue
        x = ransac_triangulate(cameras, sets, cfg.n_iter, cfg.loss, cfg.seed + t, arrays=arrays)
        if x is None:
            continue
        X[t] = x
        assignment[t] = frame_assignment(cameras, sets, x, cfg.loss)
    ok = np.flatnonzero(np.isfinite(X[:, 0]))
    if len(ok) == 0:
        raise NoResolvableFrames("no frame could be triangulated")
    frames = np.arange(T)
    for ax in range(3):
        X[:, ax] = np.interp(frames, ok, X[ok, ax])
    return Trajectory(dt, X), assignment
