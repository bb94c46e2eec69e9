"""Robust losses evaluated on squared residual norms.

A loss maps the squared norm ``s = |r|^2`` of a residual to a penalty.
Both kinds agree with ``s`` inside the inlier region so that a 1 px residual
under either loss costs 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQUARED = 0
HUBER = 1

_KINDS = {"squared": SQUARED, "huber": HUBER}


@dataclass(frozen=True)
class RobustLoss:
    """Squared or Huber loss.

    ``saturation_radius`` is the residual norm charged when a residual cannot
    be formed at all (point behind a camera); it keeps scoring finite.
    """

    kind: str = "huber"
    delta: float = 2.0
    saturation_radius: float = 1.0e4

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "huber" and not self.delta > 0:
            raise ValueError("Huber delta must be positive")

    @classmethod
    def squared(cls, saturation_radius=1.0e4):
        return cls("squared", 1.0, saturation_radius)

    @classmethod
    def huber(cls, delta, saturation_radius=1.0e4):
        return cls("huber", float(delta), saturation_radius)

    @property
    def code(self) -> int:
        return _KINDS[self.kind]

    @property
    def saturation(self) -> float:
        return float(self(self.saturation_radius**2))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.code == SQUARED:
            return s
        d = self.delta
        return np.where(s <= d * d, s, 2.0 * d * np.sqrt(s) - d * d)

    def weight(self, s):
        """Derivative of the loss w.r.t. ``s``; the IRLS weight."""
        s = np.asarray(s, dtype=float)
        if self.code == SQUARED:
            return np.ones_like(s)
        d = self.delta
        with np.errstate(divide="ignore"):
            return np.where(s <= d * d, 1.0, d / np.sqrt(np.maximum(s, d * d)))
