"""Time steppers for the MPFC equation and its first-order (PFC) limit.

All steppers work on Fourier coefficients. Mode k != 0 of the MPFC equation
reads ``beta a'' + a' = -lam [(lam^2 - 2 lam) a + f_hat]`` with
``lam = (2 pi |k|)^2``; the mean mode obeys ``beta a'' + a' = 0`` and is
always written from its closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import Ledger, LedgerRecorder
from .model import Params
from .spectral import Grid

SCHEMES = ("imex2", "split1", "pfc_split1")
MIN_BETA = 1e-8


class SolverError(RuntimeError):
    """A stepper could not complete a step."""

    def __init__(self, message: str, trace=None, step: int | None = None):
        super().__init__(message)
        self.trace = list(trace or [])
        self.step = step


class NonFiniteError(SolverError):
    pass


@dataclass(eq=False)
class State:
    grid: Grid
    phi: np.ndarray
    phi_t: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.phi_t = np.asarray(self.phi_t, dtype=float)
        if self.phi.shape != self.grid.shape or self.phi_t.shape != self.grid.shape:
            raise ValueError(f"state fields must have shape {self.grid.shape}")

    def copy(self) -> "State":
        return State(self.grid, self.phi.copy(), self.phi_t.copy(), self.t)


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "imex2"
    dt: float = 1e-3
    stabilizer_s: float | None = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.stabilizer_s is not None and self.stabilizer_s < 0:
            raise ValueError(f"stabilizer_s must be >= 0, got {self.stabilizer_s}")
        if not self.newton_tol > 0 or self.newton_max_iter < 1:
            raise ValueError("newton_tol and newton_max_iter must be positive")

    def stabilizer(self, params: Params) -> float:
        if self.stabilizer_s is not None:
            return float(self.stabilizer_s)
        base = max(0.0, params.epsilon - 1.0)
        return base if self.scheme == "imex2" else base + 1.0


@dataclass(frozen=True)
class MeanLaw:
    """Closed-form means: <phi_t> = a0 e^{-(t-t0)/beta}, <phi> = M - beta <phi_t>."""

    M: float
    a0: float
    beta: float
    t0: float = 0.0

    @classmethod
    def from_means(cls, mean_phi: float, mean_phit: float, beta: float, t0: float = 0.0) -> "MeanLaw":
        return cls(beta * mean_phit + mean_phi, mean_phit, beta, t0)

    @classmethod
    def from_state(cls, state: State, beta: float) -> "MeanLaw":
        g = state.grid
        return cls.from_means(g.mean(state.phi), g.mean(state.phi_t), beta, state.t)

    def __call__(self, t):
        return mean_law_eval(self, t)


def mean_law_eval(law: MeanLaw, t):
    """Return (<phi>(t), <phi_t>(t))."""
    mean_phit = law.a0 * np.exp(-(np.asarray(t, dtype=float) - law.t0) / law.beta)
    mean_phi = law.M - law.beta * mean_phit
    if np.ndim(mean_phi) == 0:
        return float(mean_phi), float(mean_phit)
    return mean_phi, mean_phit


def damped_flow(L: np.ndarray, beta: float, h: float):
    """Exact propagator of ``beta a'' + a' + L a = 0`` over a time ``h``.

    Returns the four entries (p11, p12, p21, p22) mapping (a, a') at t to
    (a, a') at t + h. ``L`` must be nonnegative.
    """
    L = np.asarray(L, dtype=float)
    gamma = 0.5 / beta
    w2 = L / beta - gamma * gamma
    p11, p12, p21, p22 = (np.empty_like(L) for _ in range(4))

    under = w2 > 0
    if np.any(under):
        w = np.sqrt(w2[under])
        e = math.exp(-gamma * h)
        C = np.cos(w * h)
        S = h * np.sinc(w * h / np.pi)
        p11[under] = e * (C + gamma * S)
        p22[under] = e * (C - gamma * S)
        p12[under] = e * S
        p21[under] = -(L[under] / beta) * e * S

    sigma = np.sqrt(np.maximum(-w2, 0.0))
    near = ~under & (sigma * h < 1e-2)
    if np.any(near):
        x = sigma[near] * h
        e = math.exp(-gamma * h)
        C = np.cosh(x)
        S = h * (1.0 + x * x / 6.0 + x**4 / 120.0)
        p11[near] = e * (C + gamma * S)
        p22[near] = e * (C - gamma * S)
        p12[near] = e * S
        p21[near] = -(L[near] / beta) * e * S

    over = ~under & ~near
    if np.any(over):
        s = sigma[over]
        r1 = -(L[over] / beta) / (gamma + s)  # slow root, free of cancellation
        r2 = -(gamma + s)
        e1, e2 = np.exp(r1 * h), np.exp(r2 * h)
        p11[over] = (r1 * e2 - r2 * e1) / (2 * s)
        p22[over] = (r1 * e1 - r2 * e2) / (2 * s)
        p12[over] = e1 * -np.expm1(-2 * s * h) / (2 * s)
        p21[over] = -(L[over] / beta) * p12[over]
    return p11, p12, p21, p22


class ImexTrajectory:
    """One second-order trajectory advanced by kick / exact linear flow / kick.

    The linear symbol ``lam (lam^2 - 2 lam + linear + s)`` is integrated
    exactly per mode. ``explicit(c)`` returns the dealiased coefficients of the
    remaining nonlinearity; it and the ``-s phi`` correction enter as kicks.
    """

    def __init__(self, grid: Grid, c, d, beta: float, h: float, linear: float, s: float, explicit):
        self.grid = grid
        self.c = grid.dealias(np.array(c, dtype=complex))
        self.d = grid.dealias(np.array(d, dtype=complex))
        self.beta = beta
        self.h = h
        self.s = s
        self.explicit = explicit
        lam = grid.lam
        self.L = lam * (lam**2 - 2 * lam + linear + s)
        if np.any(self.L[grid.mask] < 0):
            raise ValueError("implicit symbol is negative on retained modes; raise the stabilizer")
        self.p = damped_flow(np.maximum(self.L, 0.0), beta, h)
        self._kick = 0.5 * h / beta
        self._force = None

    def force(self) -> np.ndarray:
        if self._force is None:
            self._force = -self.grid.lam * (self.explicit(self.c) - self.s * self.c)
        return self._force

    def kick(self) -> None:
        self.d = self.d + self._kick * self.force()

    def flow(self) -> None:
        p11, p12, p21, p22 = self.p
        self.c, self.d = p11 * self.c + p12 * self.d, p21 * self.c + p22 * self.d
        self._force = None

    def set_mean(self, mean_phi: float, mean_phit: float) -> None:
        z = self.grid.zero
        self.c[z] = mean_phi
        self.d[z] = mean_phit
        self._force = None

    def step(self) -> None:
        self.kick()
        self.flow()


class Stepper:
    """Common bookkeeping: time, mean law, spectral state, finiteness checks."""

    first_order = False

    def __init__(self, state: State, params: Params, scheme: SchemeConfig, law: MeanLaw | None = None):
        self.grid = state.grid
        self.params = params
        self.scheme = scheme
        self.h = scheme.dt
        self.t0 = state.t
        self.n = 0
        self.law = law if law is not None else self._default_law(state)
        self.c = self.grid.dealias(self.grid.transform(state.phi))
        self.d = self.grid.dealias(self.grid.transform(state.phi_t))
        self._apply_mean(self.t0)

    def _default_law(self, state: State) -> MeanLaw:
        return MeanLaw.from_state(state, self.params.beta)

    @property
    def t(self) -> float:
        return self.t0 + self.n * self.h

    def _apply_mean(self, t: float) -> None:
        mean_phi, mean_phit = self.law(t)
        self.c[self.grid.zero] = mean_phi
        self.d[self.grid.zero] = mean_phit

    def state(self) -> State:
        g = self.grid
        return State(g, g.inverse_transform(self.c), g.inverse_transform(self.d), self.t)

    def step(self) -> None:
        self._advance()
        self.n += 1
        if not (np.isfinite(self.c).all() and np.isfinite(self.d).all()):
            raise NonFiniteError(f"non-finite field after step {self.n} (t={self.t:.17g})", step=self.n)

    def _advance(self) -> None:
        raise NotImplementedError


def _check_beta(params: Params) -> None:
    if params.beta < MIN_BETA:
        raise ValueError(
            f"beta={params.beta} is below {MIN_BETA}: the second-order update is ill conditioned; "
            "use the first-order PFC stepper (step_pfc / subcommand pfc) instead"
        )


class Imex2Stepper(Stepper):
    """Second-order MPFC stepper: exact linear flow per mode, explicit cubic."""

    def __init__(self, state, params, scheme, law=None):
        _check_beta(params)
        super().__init__(state, params, scheme, law)
        nl = params.nonlinearity
        g = self.grid
        self.traj = ImexTrajectory(
            g, self.c, self.d, params.beta, self.h, nl.linear, scheme.stabilizer(params),
            lambda c: g.pointwise(c, nl.rest),
        )

    def _advance(self) -> None:
        tr = self.traj
        tr.kick()
        tr.flow()
        tr.set_mean(*self.law(self.t0 + (self.n + 1) * self.h))
        tr.kick()
        self.c, self.d = tr.c, tr.d


def solve_implicit(grid: Grid, D: np.ndarray, b: np.ndarray, guess: np.ndarray, rest, rest_slope: float,
                   tol: float, max_iter: int, step: int | None = None) -> np.ndarray:
    """Solve ``D x + lam P[rest(x)] = b`` on retained modes with the mean of x pinned.

    Damped fixed point: the frozen slope ``sigma`` of ``rest`` is moved to the
    left-hand side, which makes each sweep a contraction for the stiff symbols
    met here. ``rest_slope(u)`` bounds the derivative of ``rest`` at samples u.
    """
    lam = grid.lam
    z = grid.zero
    x = guess.copy()
    sigma = 0.5 * rest_slope(grid.to_padded(x))
    denom = D + lam * sigma
    trace = []
    for _ in range(max_iter):
        r = grid.pointwise(x, rest)
        new = np.where(grid.mask, (b - lam * (r - sigma * x)) / denom, 0.0)
        new[z] = x[z]
        inc = float(np.max(np.abs(new - x)))
        scale = max(1.0, float(np.max(np.abs(new))))
        trace.append(inc)
        x = new
        if not np.isfinite(inc):
            break
        if inc <= tol * scale:
            return x
    raise SolverError(
        f"implicit cubic solve did not converge in {max_iter} iterations at step {step}; "
        f"increments: {', '.join(f'{v:.3e}' for v in trace)}",
        trace=trace, step=step,
    )


class Split1Stepper(Stepper):
    """First-order convex splitting for MPFC.

    Implicit: the biharmonic term, the quartic and ((1 - eps + C)/2) phi^2;
    explicit: -||grad phi||^2 - (C/2)||phi||^2. The velocity is the backward
    difference, so the discrete pseudo energy is non-increasing whenever
    <phi_1> = 0.
    """

    first_order = True

    def __init__(self, state, params, scheme, law=None):
        _check_beta(params)
        super().__init__(state, params, scheme, law)
        lam = self.grid.lam
        h, beta = self.h, params.beta
        nl = params.nonlinearity
        C = scheme.stabilizer(params)
        if nl.linear + C < 0:
            raise ValueError("stabilizer too small: implicit potential is not convex")
        self._mass = beta / h**2 + 1.0 / h
        self.D = self._mass + lam * (lam**2 + nl.linear + C)
        self.E = lam * (2 * lam + C)

    def _advance(self) -> None:
        h = self.h
        nl = self.params.nonlinearity
        b = self._mass * self.c + (self.params.beta / h) * self.d + self.E * self.c
        t_new = self.t0 + (self.n + 1) * h
        mean_phi, mean_phit = self.law(t_new)
        guess = self.c + h * self.d
        guess[self.grid.zero] = mean_phi
        x = solve_implicit(self.grid, self.D, b, guess, nl.rest, lambda u: 3 * nl.g * np.max(u * u),
                           self.scheme.newton_tol, self.scheme.newton_max_iter, step=self.n + 1)
        self.d = (x - self.c) / h
        self.c = x
        self._apply_mean(t_new)


class PfcStepper(Stepper):
    """First-order convex splitting for phi_t = Lap(Lap^2 phi + 2 Lap phi + f(phi)).

    The mean mode is never touched, so mass is conserved exactly and the
    discrete free energy is non-increasing for every dt.
    """

    first_order = True

    def __init__(self, state, params, scheme, law=None):
        super().__init__(state, params, scheme, law)
        lam = self.grid.lam
        nl = params.nonlinearity
        C = scheme.stabilizer(params)
        if nl.linear + C < 0:
            raise ValueError("stabilizer too small: implicit potential is not convex")
        self.D = 1.0 / self.h + lam * (lam**2 + nl.linear + C)
        self.E = lam * (2 * lam + C)

    def _default_law(self, state: State) -> MeanLaw:
        return MeanLaw(state.grid.mean(state.phi), 0.0, 1.0, state.t)

    def _apply_mean(self, t: float) -> None:
        self.d[self.grid.zero] = 0.0

    def _advance(self) -> None:
        nl = self.params.nonlinearity
        b = self.c / self.h + self.E * self.c
        x = solve_implicit(self.grid, self.D, b, self.c, nl.rest, lambda u: 3 * nl.g * np.max(u * u),
                           self.scheme.newton_tol, self.scheme.newton_max_iter, step=self.n + 1)
        self.d = (x - self.c) / self.h
        self.c = x
        self.d[self.grid.zero] = 0.0


_STEPPERS = {"imex2": Imex2Stepper, "split1": Split1Stepper, "pfc_split1": PfcStepper}


def make_stepper(state: State, params: Params, scheme: SchemeConfig, law: MeanLaw | None = None) -> Stepper:
    return _STEPPERS[scheme.scheme](state, params, scheme, law)


def step_mpfc(state: State, params: Params, scheme: SchemeConfig) -> State:
    """Advance an MPFC state by one step of ``scheme.dt``."""
    if scheme.scheme == "pfc_split1":
        raise ValueError("pfc_split1 is a PFC scheme; use step_pfc")
    st = make_stepper(state, params, scheme)
    st.step()
    return st.state()


def step_pfc(phi, params: Params, scheme: SchemeConfig, grid: Grid | None = None, t: float = 0.0):
    """Advance a PFC field by one convex-splitting step; returns the new field."""
    if isinstance(phi, State):
        grid, t, phi = phi.grid, phi.t, phi.phi
    if grid is None:
        raise ValueError("step_pfc needs the grid of a bare field")
    pfc = scheme if scheme.scheme == "pfc_split1" else SchemeConfig(
        "pfc_split1", scheme.dt, None, scheme.newton_tol, scheme.newton_max_iter)
    st = PfcStepper(State(grid, phi, np.zeros_like(phi), t), params, pfc)
    st.step()
    return grid.inverse_transform(st.c)


@dataclass
class Trajectory:
    ledger: Ledger
    final: State
    snapshots: list = field(default_factory=list)
    steps: int = 0
    law: MeanLaw | None = None


def steps_for(t_end: float, dt: float) -> int:
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"t_end={t_end} is not a whole number of steps of dt={dt}")
    return n


def run(initial: State, params: Params, scheme: SchemeConfig, t_end: float, sample_every: int = 1,
        snapshot_every: int = 0, on_sample=None, until=None) -> Trajectory:
    """Integrate from ``initial`` to ``t_end`` (measured from the initial time).

    A ledger row is recorded every ``sample_every`` steps and at the final
    step; states are kept every ``snapshot_every`` steps (0 keeps none).
    ``until(row)`` returning True at a sample ends the run early.
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    n_steps = steps_for(t_end, scheme.dt)
    st = make_stepper(initial, params, scheme)
    pfc = scheme.scheme == "pfc_split1"
    rec = LedgerRecorder(st.grid, params, st.law, pfc=pfc)
    snaps = []

    def sample() -> bool:
        row = rec.record(st.t, st.c, st.d)
        if on_sample is not None:
            on_sample(st)
        return until is not None and bool(until(row))

    done = sample()
    if snapshot_every:
        snaps.append(st.state())
    i = 0
    while not done and i < n_steps:
        i += 1
        st.step()
        if i % sample_every == 0 or i == n_steps:
            done = sample()
        if snapshot_every and (i % snapshot_every == 0 or i == n_steps or done):
            snaps.append(st.state())
    final = st.state() if i else initial.copy()
    return Trajectory(rec.ledger, final, snaps, i, st.law)
