"""Charged test particles."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import MASS_DEFAULT


@dataclass
class Particle:
    """Point charge with mass and kinematic state.

    Charge-to-mass ratio gamma = q/m is the single knob that matters for
    statics; q and m are kept separate because drag and inertia are not.
    """

    q: float
    m: float = MASS_DEFAULT
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    id: int = 0

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass must be positive")
        self.r = np.asarray(self.r, dtype=float).reshape(3).copy()
        self.v = np.asarray(self.v, dtype=float).reshape(3).copy()
        if not (np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v))):
            raise ValueError("non-finite particle state")

    @property
    def gamma(self) -> float:
        return self.q / self.m

    @classmethod
    def from_gamma(cls, gamma: float, m: float = MASS_DEFAULT, **kw) -> "Particle":
        """Build a particle with the given charge-to-mass ratio."""
        return cls(q=gamma * m, m=m, **kw)

    def copy(self) -> "Particle":
        return replace(self, r=self.r.copy(), v=self.v.copy())
