"""Steady states under a mean constraint, and the decaying/compact decomposition run."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .diagnostics import fit_rate, hm1_bar_hat, stationary_residual_hat
from .integrators import (ImexTrajectory, MeanLaw, NonFiniteError, PfcStepper, SchemeConfig, SolverError,
                          State, steps_for)
from .model import Params, free_energy_hat
from .spectral import TWO_PI, Grid


@dataclass
class SteadyState:
    grid: Grid
    phi_inf: np.ndarray
    M: float
    lagrange_const: float
    residual: float
    energy: float
    iterations: int = 0
    converged: bool = True
    flags: list = field(default_factory=list)
    history: list = field(default_factory=list)


def _package(grid: Grid, c: np.ndarray, M: float, params: Params, iterations: int, converged: bool,
             flags, history) -> SteadyState:
    c = c.copy()
    c[grid.zero] = M
    res = grid.norm_hat(stationary_residual_hat(grid, c, M, params), -2.0)
    lagrange = grid.quadrature(c, params.nonlinearity.f)
    return SteadyState(grid, grid.inverse_transform(c), M, lagrange, res, free_energy_hat(grid, c, params),
                       iterations, converged, list(flags), list(history))


def solve_steady(guess: np.ndarray, M: float, params: Params, grid: Grid, tol: float = 1e-11, max_iter: int = 30,
                 sigma: float | None = None, krylov_rtol: float = 1e-13, krylov_maxiter: int = 20) -> SteadyState:
    """Newton-Krylov solve of Lap^2 phi + 2 Lap phi + f(phi) = const with <phi> = M.

    Unknowns are the retained mean-free samples phibar; the mean is pinned to
    ``M``. Jacobian products are formed spectrally; GMRES runs on the system
    left-preconditioned by ``(lam^2 + sigma)^(-1)``. Convergence is declared on the ``||.||_{-2}``
    norm of the residual. Non-convergence returns the best iterate with
    ``converged=False``; GMRES failures are recorded in ``flags``.
    """
    lam = grid.lam
    sigma = TWO_PI**4 if sigma is None else sigma
    nl = params.nonlinearity
    keep = grid.mask.copy()
    keep[grid.zero] = False
    shape = grid.shape

    def project(v):
        c = grid.transform(v.reshape(shape))
        return np.where(keep, c, 0.0)

    c = np.where(keep, grid.transform(np.asarray(guess, dtype=float)), 0.0)
    history = []
    flags = []

    def residual(cb):
        r = stationary_residual_hat(grid, cb, M, params)
        return r, grid.norm_hat(r, -2.0)

    r, rn = residual(c)
    history.append(rn)
    best = (rn, c)
    for it in range(max_iter + 1):
        if rn <= tol:
            return _package(grid, c, M, params, it, True, flags, history)
        if it == max_iter:
            break
        slope = nl.f_prime(grid.to_padded(c) + M)

        def op(v):
            # (lam^2 + sigma)^(-1) J on the retained mean-free subspace, identity on its complement
            cv = project(v)
            out = (lam**2 - 2 * lam) * cv + grid.pointwise(cv, lambda w: slope * w)
            out = np.where(keep, out / (lam**2 + sigma), 0.0)
            return grid.inverse_transform(out).ravel() + (v - grid.inverse_transform(cv).ravel())

        n = int(np.prod(shape))
        A = LinearOperator((n, n), matvec=op, dtype=float)
        rhs = -grid.inverse_transform(r / (lam**2 + sigma)).ravel()
        delta, info = gmres(A, rhs, rtol=krylov_rtol, atol=0.0, restart=60, maxiter=krylov_maxiter)
        if info != 0:
            flags.append(f"iteration {it + 1}: Krylov solve stagnated (info={info}); Jacobian may be singular")
        dc = project(delta)
        # backtracking on the residual norm keeps far-from-root guesses from diverging
        step = 1.0
        while True:
            trial = c + step * dc
            r_new, rn_new = residual(trial)
            if rn_new < rn or step < 1e-4:
                break
            step *= 0.5
        if not np.isfinite(rn_new):
            flags.append(f"iteration {it + 1}: non-finite residual")
            break
        c, r, rn = trial, r_new, rn_new
        history.append(rn)
        if rn < best[0]:
            best = (rn, c)
    flags.append(f"max_iter={max_iter} exceeded; residual {best[0]:.3e} > tol {tol:.1e}")
    return _package(grid, best[1], M, params, max_iter, False, flags, history)


def relax_to_steady(initial: np.ndarray, M: float, params: Params, grid: Grid, dt: float = 0.05,
                    threshold: float = 1e-9, max_steps: int = 200000, check_every: int = 1) -> SteadyState:
    """Run the PFC gradient flow until ||phi_t||_{-1} < threshold.

    The step is first-order convex splitting, whose fixed points are exactly
    the discrete steady states, so a large ``dt`` is harmless.
    """
    initial = np.asarray(initial, dtype=float)
    if abs(grid.mean(initial) - M) > 1e-12 * max(1.0, abs(M)):
        raise ValueError(f"initial mean {grid.mean(initial)} differs from M={M}")
    st = PfcStepper(State(grid, initial, np.zeros_like(initial)), params, SchemeConfig("pfc_split1", dt))
    st.c[grid.zero] = M
    energies = []
    for n in range(max_steps + 1):
        if n % check_every == 0 or n == max_steps:
            rate = hm1_bar_hat(grid, st.d) if n else hm1_bar_hat(grid, _one_step_velocity(st))
            energies.append(free_energy_hat(grid, st.c, params))
            if rate < threshold:
                return _package(grid, st.c, M, params, n, True, [], energies)
        if n == max_steps:
            break
        st.step()
    raise SolverError(f"relaxation did not reach ||phi_t||_-1 < {threshold:g} within {max_steps} steps",
                      trace=energies[-10:])


def _one_step_velocity(st: PfcStepper) -> np.ndarray:
    """Velocity a single trial step would produce (used to test the starting field)."""
    trial = PfcStepper(st.state(), st.params, st.scheme)
    trial.step()
    return trial.d


# -- decomposition ----------------------------------------------------------------


@dataclass
class DecompositionRun:
    t: np.ndarray
    full_state: State
    d_state: State
    c_state: State
    split_k: float
    d_x0: np.ndarray
    c_x1: np.ndarray
    defect_h2: np.ndarray
    mean_d: np.ndarray
    mean_dt: np.ndarray
    kappa: float
    fit_residual: float
    c_x1_max: float

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defect_h2))


class ConsistencyError(SolverError):
    pass


def run_decomposition(initial: State, params: Params, t_end: float, scheme: SchemeConfig | None = None,
                      sample_every: int = 10, consistency_tol: float | None = None) -> DecompositionRun:
    """Advance phi, phi^d and phi^c in lockstep with the imex2 stepper.

    phi^d solves the MPFC equation with f replaced by f_k from the mean-free
    data; phi^c carries the means and is forced by f_k(phi) - f_k(phi - phi^c)
    and k (phi - <phi>). The sum phi^d + phi^c reproduces phi up to the time
    discretization error. ``consistency_tol`` bounds ||phi^d + phi^c - phi||_2;
    the run aborts once the defect exceeds ten times this value.
    """
    scheme = scheme or SchemeConfig("imex2", 1e-3)
    if scheme.scheme != "imex2":
        raise ValueError("the decomposition run is implemented for the imex2 stepper only")
    if params.beta < 1e-8:
        raise ValueError("beta too small for the second-order stepper")
    g = initial.grid
    beta, h, k = params.beta, scheme.dt, params.split_k
    nl = params.nonlinearity
    cube = lambda u: nl.g * u**3  # noqa: E731
    law = MeanLaw.from_state(initial, beta)

    c0 = g.dealias(g.transform(initial.phi))
    d0 = g.dealias(g.transform(initial.phi_t))
    bar = lambda c: c - _zero_only(g, c)  # noqa: E731

    full = ImexTrajectory(g, c0, d0, beta, h, nl.linear, scheme.stabilizer(params), lambda c: g.pointwise(c, cube))
    dec = ImexTrajectory(g, bar(c0), bar(d0), beta, h, nl.linear + k, 0.0, lambda c: g.pointwise(c, cube))

    def compact_rest(cc):
        # f_k(phi) - f_k(phi - phi^c) - k phi^c = phi^3 - (phi - phi^c)^3 ; source k phibar moves to the right
        u = g.to_padded(full.c)
        w = g.to_padded(cc)
        return g.from_padded(cube(u) - cube(u - w)) - k * bar(full.c)

    com = ImexTrajectory(g, _zero_only(g, c0), _zero_only(g, d0), beta, h, nl.linear + k, 0.0, compact_rest)
    trajs = (full, dec, com)

    def set_means(t):
        mphi, mphit = law(t)
        full.set_mean(mphi, mphit)
        com.set_mean(mphi, mphit)
        dec.set_mean(0.0, 0.0)

    set_means(initial.t)
    if consistency_tol is None:
        consistency_tol = max(1e-10, 50.0 * h**2 * max(1.0, g.norm_hat(c0, 2.0)))

    ts, dx0, cx1, defect, md, mdt = [], [], [], [], [], []

    def sample(t):
        ts.append(t)
        dx0.append(g.x_norm_hat(dec.c, dec.d, "X0"))
        cx1.append(g.x_norm_hat(com.c, com.d, "X1"))
        defect.append(g.norm_hat(dec.c + com.c - full.c, 2.0))
        md.append(float(dec.c[g.zero].real))
        mdt.append(float(dec.d[g.zero].real))
        if defect[-1] > 10 * consistency_tol:
            raise ConsistencyError(
                f"decomposition defect {defect[-1]:.3e} exceeds 10 x tolerance {consistency_tol:.3e} at t={t:.6g}",
                trace=defect[-10:])

    n_steps = steps_for(t_end, h)
    sample(initial.t)
    for i in range(1, n_steps + 1):
        for tr in trajs:
            tr.kick()
        for tr in trajs:
            tr.flow()
        t = initial.t + i * h
        set_means(t)
        for tr in trajs:
            tr.kick()
        if not all(np.isfinite(tr.c).all() and np.isfinite(tr.d).all() for tr in trajs):
            raise NonFiniteError(f"non-finite field in decomposition after step {i}", step=i)
        if i % sample_every == 0 or i == n_steps:
            sample(t)

    ts_a, dx0_a = np.array(ts), np.array(dx0)
    kappa, resid = float("nan"), float("nan")
    if len(ts_a) >= 10 and np.all(dx0_a > 0):
        fit = fit_rate(ts_a, dx0_a, "exponential")
        kappa, resid = fit.rate, fit.residual

    def as_state(tr):
        return State(g, g.inverse_transform(tr.c), g.inverse_transform(tr.d), ts[-1])

    return DecompositionRun(ts_a, as_state(full), as_state(dec), as_state(com), k, dx0_a, np.array(cx1),
                            np.array(defect), np.array(md), np.array(mdt), kappa, resid, float(np.max(cx1)))


def _zero_only(g: Grid, c: np.ndarray) -> np.ndarray:
    out = np.zeros_like(c)
    out[g.zero] = c[g.zero]
    return out
