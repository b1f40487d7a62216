"""Initial-condition synthesis."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import TWO_PI, Grid

KINDS = ("constant", "single_mode", "random_smooth", "from_snapshot")


def constant(grid: Grid, mean: float = 0.0) -> np.ndarray:
    return np.full(grid.shape, float(mean))


def single_mode(grid: Grid, mean: float = 0.0, amplitude: float = 1.0, mode=(1,), phase: str = "sin") -> np.ndarray:
    """``mean + amplitude * sin(2 pi k.x)`` (or cos)."""
    k = tuple(mode) + (0,) * (grid.dim - len(mode))
    if len(k) != grid.dim:
        raise ValueError(f"mode vector {mode} has more entries than the grid dimension {grid.dim}")
    x = grid.coordinates()
    arg = TWO_PI * sum(ki * xi for ki, xi in zip(k, x))
    trig = np.sin if phase == "sin" else np.cos
    return mean + amplitude * trig(arg)


def random_smooth(grid: Grid, seed: int = 0, mean: float = 0.0, amplitude: float = 0.1, q: float = 2.0,
                  kmax: float | None = None) -> np.ndarray:
    """Random field with coefficients damped by (1 + |k|^2)^(-q), zero mean part
    rescaled to root-mean-square ``amplitude``, then shifted by ``mean``.

    ``kmax`` additionally removes every mode with Euclidean |k| > kmax.
    """
    if q < 2:
        raise ValueError(f"spectral decay exponent q must be >= 2, got {q}")
    rng = np.random.default_rng(seed)
    c = grid.transform(rng.standard_normal(grid.shape))
    ksq = sum(k * k for k in grid.k)
    c = c * (1.0 + ksq) ** (-q)
    if kmax is not None:
        c = np.where(ksq <= kmax * kmax, c, 0.0)
    c = grid.dealias(c)
    c[grid.zero] = 0.0
    u = grid.inverse_transform(c)
    rms = float(np.sqrt(np.mean(u * u)))
    if rms > 0:
        u *= amplitude / rms
    return u + mean


@dataclass
class InitialConditionSpec:
    kind: str = "constant"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown initial condition kind {self.kind!r}; expected one of {KINDS}")

    def build(self, grid: Grid, seed: int = 0) -> np.ndarray:
        p = dict(self.params)
        if self.kind == "constant":
            return constant(grid, p.get("mean", 0.0))
        if self.kind == "single_mode":
            return single_mode(grid, p.get("mean", 0.0), p.get("amplitude", 1.0), p.get("mode", (1,)),
                               p.get("phase", "sin"))
        if self.kind == "random_smooth":
            return random_smooth(grid, int(p.get("seed", seed)), p.get("mean", 0.0), p.get("amplitude", 0.1),
                                 p.get("q", 2.0), p.get("kmax"))
        from .io import read_snapshot

        snap_grid, _, values = read_snapshot(p["path"])
        if snap_grid.shape != grid.shape:
            raise ValueError(f"snapshot {p['path']} has shape {snap_grid.shape}, grid is {grid.shape}")
        return values
