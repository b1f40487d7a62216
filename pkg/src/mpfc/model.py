"""Physical parameters, the nonlinearity f = F' and the energy functionals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.optimize import minimize_scalar

from .spectral import Grid


class Nonlinearity(Protocol):
    """Pointwise potential F with derivative f, split as f(s) = linear*s + rest."""

    linear: float

    def f(self, s): ...

    def F(self, s): ...

    def f_prime(self, s): ...


class Cubic:
    """f(s) = g s^3 + (1 - eps) s, F(s) = (1 - eps)/2 s^2 + g/4 s^4.

    ``g = 0`` switches the cubic off and leaves the linear problem.
    """

    def __init__(self, epsilon: float, g: float = 1.0):
        self.epsilon = float(epsilon)
        self.g = float(g)
        self.linear = 1.0 - self.epsilon

    def f(self, s):
        return self.g * s**3 + self.linear * s

    def F(self, s):
        return 0.5 * self.linear * s**2 + 0.25 * self.g * s**4

    def f_prime(self, s):
        return 3.0 * self.g * s**2 + self.linear

    def rest(self, s):
        """The part of f not proportional to s."""
        return self.g * s**3

    def __repr__(self) -> str:
        return f"Cubic(epsilon={self.epsilon}, g={self.g})"


@dataclass(frozen=True)
class Params:
    """MPFC constants.

    ``split_k`` is the shift of f_k(s) = f(s) + k s; it defaults to
    max(0, eps - 1) + 1, which keeps f_k nondecreasing. ``cubic`` scales the
    s^3 term (0 disables it).
    """

    beta: float = 1.0
    epsilon: float = 0.25
    split_k: float | None = None
    mean_M: float | None = None
    cubic: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not np.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite, got {self.epsilon}")
        k_min = max(0.0, self.epsilon - 1.0)
        if self.split_k is None:
            object.__setattr__(self, "split_k", k_min + 1.0)
        elif self.split_k < k_min:
            raise ValueError(
                f"split_k={self.split_k} < max(0, epsilon - 1) = {k_min}: f_k would not be monotone"
            )

    @property
    def nonlinearity(self) -> Cubic:
        return Cubic(self.epsilon, self.cubic)


# -- pointwise nonlinearity family ---------------------------------------


def f_eval(phi, params: Params):
    return params.nonlinearity.f(phi)


def F_eval(phi, params: Params):
    return params.nonlinearity.F(phi)


def f_prime(phi, params: Params):
    return params.nonlinearity.f_prime(phi)


def f_shifted(y, M: float, params: Params):
    """f_M(y) = f(y + M)."""
    return params.nonlinearity.f(y + M)


def F_shifted(y, M: float, params: Params):
    return params.nonlinearity.F(y + M)


def f_split(y, params: Params):
    """f_k(y) = f(y) + k y."""
    return params.nonlinearity.f(y) + params.split_k * y


def lower_bound_constant(params: Params) -> float:
    """c1 = sup_s (s^2 - F(s)), found by scalar minimization."""
    F = params.nonlinearity.F
    res = minimize_scalar(lambda s: F(s) - s * s, bounds=(0.0, 10.0 + abs(params.epsilon)), method="bounded",
                          options={"xatol": 1e-12})
    return float(max(-res.fun, 0.0))


# -- energies -----------------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    free_energy: float
    pseudo_energy: float
    pseudo_energy_unbarred: float
    quadratic_energy: float


def gradient_energy_hat(grid: Grid, c: np.ndarray) -> float:
    """1/2 ||Lap u||^2 - ||grad u||^2 from coefficients."""
    lam = grid.lam
    return float(np.sum(grid.weight * (0.5 * lam**2 - lam) * np.abs(c) ** 2))


def free_energy_hat(grid: Grid, c: np.ndarray, params: Params) -> float:
    return gradient_energy_hat(grid, c) + grid.quadrature(c, params.nonlinearity.F)


def free_energy(grid: Grid, phi: np.ndarray, params: Params) -> float:
    """E(phi) = int 1/2 |Lap phi|^2 - |grad phi|^2 + F(phi) dx."""
    return free_energy_hat(grid, grid.transform(phi), params)


def kinetic_hat(grid: Grid, d: np.ndarray, beta: float, barred: bool = True) -> float:
    """beta/2 ||v||_{-1}^2, with the mean of v removed when ``barred``."""
    if barred:
        d = d.copy()
        d[grid.zero] = 0.0
    return 0.5 * beta * grid.inner_hat(d, d, -1.0)


def pseudo_energy(grid: Grid, phi: np.ndarray, phi_t: np.ndarray, params: Params) -> float:
    """beta/2 ||mean-free phi_t||_{-1}^2 + E(phi)."""
    return kinetic_hat(grid, grid.transform(phi_t), params.beta) + free_energy(grid, phi, params)


def pseudo_energy_unbarred(grid: Grid, phi: np.ndarray, phi_t: np.ndarray, params: Params) -> float:
    """beta/2 ||phi_t||_{-1}^2 + E(phi), mean of phi_t included."""
    return kinetic_hat(grid, grid.transform(phi_t), params.beta, barred=False) + free_energy(grid, phi, params)


def quadratic_energy(grid: Grid, psi: np.ndarray, psi_t: np.ndarray, beta: float, Lambda: float) -> float:
    """beta/2 ||psi_t||_{-1}^2 + 1/2 ||Lap psi||^2 - ||grad psi||^2 + Lambda/2 ||psi||_{-1}^2 (bars implied)."""
    if Lambda < 0:
        raise ValueError(f"Lambda must be nonnegative, got {Lambda}")
    c = grid.transform(psi)
    c[grid.zero] = 0.0
    return (
        kinetic_hat(grid, grid.transform(psi_t), beta)
        + gradient_energy_hat(grid, c)
        + 0.5 * Lambda * grid.inner_hat(c, c, -1.0)
    )


def lambda_threshold(grid: Grid) -> float:
    """Smallest Lambda >= 0 for which every mode of the quadratic energy is positive.

    Mode k contributes (lam^2/2 - lam + Lambda/(2 lam)) |c_k|^2, positive iff
    Lambda > lam^2 (2 - lam).
    """
    lam = grid.lam[grid.lam > 0]
    return float(max(0.0, np.max(lam**2 * (2.0 - lam))))


def energy_report(grid: Grid, phi: np.ndarray, phi_t: np.ndarray, params: Params, Lambda: float = 0.0) -> EnergyReport:
    E = free_energy(grid, phi, params)
    d = grid.transform(phi_t)
    return EnergyReport(
        free_energy=E,
        pseudo_energy=E + kinetic_hat(grid, d, params.beta),
        pseudo_energy_unbarred=E + kinetic_hat(grid, d, params.beta, barred=False),
        quadratic_energy=quadratic_energy(grid, phi, phi_t, params.beta, Lambda),
    )
