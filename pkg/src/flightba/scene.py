"""Camera model, projection, two-view triangulation and similarity alignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, DegenerateGeometry, NonPositiveDepth

_ORTHO_TOL = 1e-9
_PARALLEL_TOL = 1e-8


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def quat_from_matrix(R):
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0 or (q[0] == 0 and q[np.flatnonzero(q)[0]] < 0):
        q = -q
    return q


def matrix_from_quat(q):
    w, x, y, z = np.asarray(q, dtype=float)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    width: int = 2704
    height: int = 1536

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    def as_array(self):
        return np.array([self.fx, self.fy, self.cx, self.cy, self.k1, self.k2])

    def in_bounds(self, uv):
        uv = np.asarray(uv)
        return (
            (uv[..., 0] >= 0)
            & (uv[..., 0] <= self.width)
            & (uv[..., 1] >= 0)
            & (uv[..., 1] <= self.height)
        )


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera with two-coefficient radial distortion.

    The pose maps world to camera coordinates, ``x_cam = R x + t``. The
    rotation is stored as a unit quaternion ``quat = (w, x, y, z)``.
    """

    id: int
    intrinsics: Intrinsics
    quat: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must have unit norm")
        object.__setattr__(self, "quat", _frozen(q / n))
        object.__setattr__(self, "translation", _frozen(self.translation))
        object.__setattr__(self, "_R", _frozen(matrix_from_quat(self.quat)))

    @classmethod
    def from_rotation(cls, id, intrinsics, R, t):
        R = np.asarray(R, dtype=float)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(R @ R.T - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1) > _ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        return cls(int(id), intrinsics, quat_from_matrix(R), np.asarray(t, dtype=float))

    @classmethod
    def look_at(cls, id, intrinsics, center, target, up=(0.0, 0.0, 1.0)):
        """Camera at ``center`` whose optical axis points at ``target``."""
        center = np.asarray(center, dtype=float)
        fwd = np.asarray(target, dtype=float) - center
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, (1.0, 0.0, 0.0))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(int(id), intrinsics, quat_from_matrix(R), -R @ center)

    @property
    def rotation(self):
        return self._R

    @property
    def center(self):
        return -self._R.T @ self.translation

    def with_pose(self, quat, translation):
        return Camera(self.id, self.intrinsics, quat, translation)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            self.id == other.id
            and self.intrinsics == other.intrinsics
            and np.array_equal(self.quat, other.quat)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


def camera_arrays(cameras):
    """Stack cameras into the ``(R, t, intr)`` arrays used by the kernels."""
    R = np.stack([c.rotation for c in cameras])
    t = np.stack([c.translation for c in cameras])
    intr = np.stack([c.intrinsics.as_array() for c in cameras])
    return R, t, intr


# ---------------------------------------------------------------------------
# distortion


def distort(xy, k1, k2):
    """Apply radial distortion to normalized image coordinates."""
    xy = np.asarray(xy, dtype=float)
    r2 = np.sum(xy * xy, axis=-1, keepdims=True)
    return xy * (1.0 + k1 * r2 + k2 * r2 * r2)


def undistort(xy, k1, k2, max_iter=10, tol=1e-10):
    """Invert :func:`distort` by Newton iteration on the radius."""
    xy = np.asarray(xy, dtype=float)
    if k1 == 0.0 and k2 == 0.0:
        return xy.copy()
    rd = np.sqrt(np.sum(xy * xy, axis=-1, keepdims=True))
    r = rd.copy()
    for _ in range(max_iter):
        r2 = r * r
        f = r * (1.0 + k1 * r2 + k2 * r2 * r2) - rd
        fp = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2
        step = f / fp
        r = r - step
        if np.all(np.abs(step) <= tol * np.maximum(1.0, r)):
            break
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rd > 0, r / rd, 1.0)
    return xy * scale


def pixel_to_normalized(camera, uv):
    k = camera.intrinsics
    uv = np.asarray(uv, dtype=float)
    xy = np.stack([(uv[..., 0] - k.cx) / k.fx, (uv[..., 1] - k.cy) / k.fy], axis=-1)
    return undistort(xy, k.k1, k.k2)


# ---------------------------------------------------------------------------
# projection


def project(camera, point):
    """Project a world point to pixels. Raises NonPositiveDepth behind the camera."""
    xc = camera.rotation @ np.asarray(point, dtype=float) + camera.translation
    if not xc[2] > 0:
        raise NonPositiveDepth(f"depth {xc[2]:.6g} <= 0 in camera {camera.id}")
    k = camera.intrinsics
    xy = distort(xc[:2] / xc[2], k.k1, k.k2)
    return np.array([k.fx * xy[0] + k.cx, k.fy * xy[1] + k.cy])


def project_many(camera, points):
    """Vectorised projection. Returns ``(uv, depth)``; rows with depth <= 0 are NaN."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    xc = points @ camera.rotation.T + camera.translation
    z = xc[:, 2]
    k = camera.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = distort(xc[:, :2] / z[:, None], k.k1, k.k2)
    uv = np.stack([k.fx * xy[:, 0] + k.cx, k.fy * xy[:, 1] + k.cy], axis=1)
    uv[~(z > 0)] = np.nan
    return uv, z


# ---------------------------------------------------------------------------
# triangulation


def _midpoints(c1, d1, c2, d2):
    """Midpoint of the common perpendicular for batches of rays."""
    w = c1 - c2
    a = np.sum(d1 * d1, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    c = np.sum(d2 * d2, axis=-1)
    d = np.sum(d1 * w, axis=-1)
    e = np.sum(d2 * w, axis=-1)
    den = a * c - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (b * e - c * d) / den
        u = (a * e - b * d) / den
    p1 = c1 + s[..., None] * d1
    p2 = c2 + u[..., None] * d2
    return 0.5 * (p1 + p2)


def _ray_degenerate(c1, d1, c2, d2):
    n1 = d1 / np.linalg.norm(d1, axis=-1, keepdims=True)
    n2 = d2 / np.linalg.norm(d2, axis=-1, keepdims=True)
    sin_angle = np.linalg.norm(np.cross(n1, n2), axis=-1)
    baseline = np.linalg.norm(c1 - c2, axis=-1)
    return (sin_angle < _PARALLEL_TOL) | (baseline < 1e-12)


def ray(camera, uv):
    """World-space ray ``(center, direction)`` through pixel ``uv``."""
    xy = pixel_to_normalized(camera, uv)
    d_cam = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
    return camera.center, d_cam @ camera.rotation


def triangulate_two_view(p1, c1, p2, c2):
    """Ray-midpoint triangulation of one correspondence."""
    o1, d1 = ray(c1, p1)
    o2, d2 = ray(c2, p2)
    if _ray_degenerate(o1, d1, o2, d2):
        raise DegenerateGeometry("rays are parallel or camera centers coincide")
    return _midpoints(o1, d1, o2, d2)


def triangulate_batch(o1, d1, o2, d2):
    """Vectorised midpoint triangulation; degenerate rows are NaN."""
    X = _midpoints(o1, d1, o2, d2)
    X[_ray_degenerate(o1, d1, o2, d2)] = np.nan
    return X


# ---------------------------------------------------------------------------
# similarity alignment


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``y = scale * R @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation))

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return self.scale * points @ self.rotation.T + self.translation

    def inverse(self):
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )


def _umeyama(src, dst, w):
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    S = src - mu_s
    D = dst - mu_d
    var_s = w @ np.sum(S * S, axis=1)
    cov = (D * w[:, None]).T @ S
    U, sig, Vt = np.linalg.svd(cov)
    E = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        E[2, 2] = -1.0
    R = U @ E @ Vt
    scale = float(np.trace(np.diag(sig) @ E) / var_s)
    return SimilarityTransform(scale, R, mu_d - scale * R @ mu_s)


def _points(x):
    return np.asarray(getattr(x, "positions", x), dtype=float)


def align_similarity(estimate, reference, trim=0.1, max_iter=20):
    """Similarity transform taking ``estimate`` onto ``reference``.

    Minimises a trimmed sum of squared distances: the closed-form
    (Umeyama) solution is refit on the ``1 - trim`` fraction of best-fitting
    points until the inlier set stops changing.
    """
    src = _points(estimate)
    dst = _points(reference)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("trajectories must be equal-length (T, 3) arrays")
    n = len(src)
    if n < 3:
        raise DegenerateConfiguration("need at least 3 points")
    for pts in (dst, src):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateConfiguration("points are collinear")

    keep = max(3, int(np.ceil((1.0 - trim) * n)))
    w = np.ones(n)
    tf = _umeyama(src, dst, w)
    inliers = None
    for _ in range(max_iter):
        err = np.sum((tf.apply(src) - dst) ** 2, axis=1)
        order = np.argsort(err, kind="stable")
        new = np.sort(order[:keep])
        if inliers is not None and np.array_equal(new, inliers):
            break
        inliers = new
        w = np.zeros(n)
        w[inliers] = 1.0
        tf = _umeyama(src, dst, w)
    return tf
