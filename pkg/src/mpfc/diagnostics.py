"""Measured quantities: the energy ledger, residuals, auxiliary functionals and rate fits."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .model import Params, gradient_energy_hat
from .spectral import Grid

COLUMNS = ("t", "mean_phi", "mean_phit", "E", "pseudoE", "h2_phi", "hm1_phit_bar",
           "stat_residual", "z", "cum_identity_residual")


@dataclass(frozen=True)
class LedgerRow:
    t: float
    mean_phi: float
    mean_phit: float
    free_energy: float
    pseudo_energy: float
    h2_phi: float
    hminus1_phit_bar: float
    stationary_residual: float
    z_value: float
    cum_identity_residual: float


_ALIASES = dict(zip(COLUMNS, (f.name for f in fields(LedgerRow))))


def fmt(x: float) -> str:
    return format(float(x), ".17g")


class Ledger:
    """Append-only table of ledger rows.

    ``source`` holds the per-sample spatial integral of f(phi), needed to
    re-evaluate the energy identity on sub-segments; it is not part of the CSV.
    """

    def __init__(self, rows=None, source=None, beta: float | None = None):
        self.rows: list[LedgerRow] = list(rows or [])
        self.source: list[float] | None = list(source) if source is not None else None
        self.beta = beta

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: LedgerRow, source: float | None = None) -> None:
        if self.rows and not row.t > self.rows[-1].t:
            raise ValueError(f"ledger times must increase: {row.t} after {self.rows[-1].t}")
        self.rows.append(row)
        if self.source is not None:
            self.source.append(float(source))

    def column(self, name: str) -> np.ndarray:
        attr = _ALIASES.get(name, name)
        if attr not in _ALIASES.values():
            raise KeyError(f"unknown ledger column {name!r}")
        return np.array([getattr(r, attr) for r in self.rows], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        for r in self.rows:
            buf.write(",".join(fmt(v) for v in astuple(r)) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, is_text: bool = False) -> "Ledger":
        if is_text:
            lines = path_or_text.splitlines()
        else:
            with open(path_or_text, newline="") as fh:
                lines = fh.read().splitlines()
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"ledger header must be {','.join(COLUMNS)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(COLUMNS):
                raise ValueError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
            try:
                vals = [float(v) for v in rec]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            rows.append(LedgerRow(*vals))
        return cls(rows)


# -- field functionals ------------------------------------------------------


def _bar(grid: Grid, c: np.ndarray) -> np.ndarray:
    c = c.copy()
    c[grid.zero] = 0.0
    return c


def stationary_residual_hat(grid: Grid, c: np.ndarray, M: float, params: Params) -> np.ndarray:
    """Coefficients of Lap^2 phibar + 2 Lap phibar + f_M(phibar) minus its mean, on retained modes."""
    lam = grid.lam
    cb = grid.dealias(_bar(grid, c))
    f = params.nonlinearity.f
    r = (lam**2 - 2 * lam) * cb + grid.pointwise(cb, lambda u: f(u + M))
    r[grid.zero] = 0.0
    return r


def stationary_residual(grid: Grid, phi: np.ndarray, M: float, params: Params) -> float:
    """||Lap^2 phibar + 2 Lap phibar + f_M(phibar) - <f_M(phibar)>||_{-2}."""
    return grid.norm_hat(stationary_residual_hat(grid, grid.transform(phi), M, params), -2.0)


def hm1_bar_hat(grid: Grid, d: np.ndarray) -> float:
    return grid.norm_hat(_bar(grid, d), -1.0)


def z_functional(state, M: float, params: Params, t0: float = 0.0) -> float:
    """Z = sqrt(||phibar_t||_{-1}^2 + res^2 / beta) + exp(-t/beta), t measured from t0."""
    g = state.grid
    a = hm1_bar_hat(g, g.transform(state.phi_t))
    r = stationary_residual(g, state.phi, M, params)
    return math.sqrt(a * a + r * r / params.beta) + math.exp(-(state.t - t0) / params.beta)


def g_functional(state, M: float, params: Params, route: str = "spectral") -> float:
    """(A0^{-1} phibar_t, A0^{-1} r)_{-1} with r the stationary residual field.

    ``route="spectral"`` sums v_k conj(r_k) / lam^3; ``route="real"`` builds
    the two potentials in physical space and integrates the product of the
    gradients of their inverse Laplacians.
    """
    g = state.grid
    v = g.dealias(_bar(g, g.transform(state.phi_t)))
    r = stationary_residual_hat(g, g.transform(state.phi), M, params)
    if route == "spectral":
        return g.inner_hat(v, r, -3.0)
    if route == "real":
        a = g.inverse_transform(v)
        b = g.inverse_transform(r)
        for _ in range(2):
            a = g.apply_multiplier(a, "inv_neg_laplacian")
            b = g.apply_multiplier(b, "inv_neg_laplacian")
        ga, gb = g.gradient(a), g.gradient(b)
        return float(np.mean(sum(x * y for x, y in zip(ga, gb))))
    raise ValueError(f"unknown route {route!r}; expected 'spectral' or 'real'")


def w_functional(state, M: float, params: Params, nu: float = 0.01) -> float:
    """W = beta ||phibar_t||_{-1}^2 + ||Lap phibar||^2 - 2 ||grad phibar||^2 + 2 int F_M(phibar) + nu G."""
    if nu < 0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    g = state.grid
    cb = _bar(g, g.transform(state.phi))
    a = hm1_bar_hat(g, g.transform(state.phi_t))
    F = params.nonlinearity.F
    w = params.beta * a * a + 2 * gradient_energy_hat(g, cb) + 2 * g.quadrature(cb, lambda u: F(u + M))
    if nu:
        w += nu * g_functional(state, M, params)
    return w


# -- ledger recording ---------------------------------------------------------


class LedgerRecorder:
    """Builds ledger rows from spectral states.

    For PFC runs (``pfc=True``) the kinetic term is absent, pseudoE equals E
    and Z is formed with unit weight and no exponential term.
    """

    def __init__(self, grid: Grid, params: Params, law, pfc: bool = False):
        self.grid = grid
        self.params = params
        self.law = law
        self.pfc = pfc
        self.ledger = Ledger(source=[], beta=None if pfc else params.beta)
        self._prev = None
        self._cum = 0.0

    def record(self, t: float, c: np.ndarray, d: np.ndarray) -> LedgerRow:
        g, p = self.grid, self.params
        nl = p.nonlinearity
        u = g.to_padded(c)
        mean_phi = float(c[g.zero].real)
        mean_phit = float(d[g.zero].real)
        E = gradient_energy_hat(g, c) + float(np.mean(nl.F(u)))
        src = float(np.mean(nl.f(u)))
        a = hm1_bar_hat(g, d)
        M = self.law.M
        res = g.norm_hat(stationary_residual_hat(g, c, M, p), -2.0)
        if self.pfc:
            pseudo = E
            z = math.sqrt(a * a + res * res)
        else:
            pseudo = E + 0.5 * p.beta * a * a
            z = math.sqrt(a * a + res * res / p.beta) + math.exp(-(t - self.law.t0) / p.beta)
        power = mean_phit * src - a * a  # d(pseudoE)/dt along exact solutions
        if self._prev is None:
            self._cum = 0.0
            self._base = pseudo
        else:
            t_prev, power_prev = self._prev
            self._cum += 0.5 * (t - t_prev) * (power + power_prev)
        self._prev = (t, power)
        row = LedgerRow(t, mean_phi, mean_phit, E, pseudo, g.norm_hat(c, 2.0), a, res, z,
                        pseudo - self._base - self._cum)
        self.ledger.append(row, src)
        return row


def energy_identity_residual(ledger: Ledger, s: float | None = None, t: float | None = None) -> float:
    """R = pseudoE(t) - pseudoE(s) + int ||phibar_t||_{-1}^2 - int A(tau) int f dx, trapezoidal in time."""
    times = ledger.t
    lo = times[0] if s is None else s
    hi = times[-1] if t is None else t
    tol = 1e-12 * max(1.0, abs(hi))
    sel = (times >= lo - tol) & (times <= hi + tol)
    if sel.sum() < 3:
        raise ValueError(f"segment [{lo}, {hi}] holds {int(sel.sum())} samples; at least 3 are needed")
    if ledger.source is None:
        raise ValueError("ledger carries no source integrals (loaded from CSV); use cum_identity_residual")
    tt = times[sel]
    pe = ledger.column("pseudoE")[sel]
    a = ledger.column("hm1_phit_bar")[sel]
    src = np.asarray(ledger.source)[sel] * ledger.column("mean_phit")[sel]
    power = src - a * a
    return float(pe[-1] - pe[0] - np.trapezoid(power, tt))


# -- rate fitting -------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    model: str
    amplitude: float
    rate: float
    t_a: float
    t_b: float
    residual: float
    samples: int


def fit_rate(t, y, model: str = "exponential", window=None, discard: float = 0.2) -> RateFit:
    """Least-squares fit of log y to ``A exp(-kappa t)`` or ``C (1+t)^(-p)``.

    The first ``discard`` fraction of the window is dropped as transient.
    ``residual`` is the root-mean-square deviation in log space.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if model not in ("exponential", "algebraic"):
        raise ValueError(f"unknown model {model!r}; expected 'exponential' or 'algebraic'")
    t_a, t_b = (t[0], t[-1]) if window is None else window
    if t_a < t[0] - 1e-12 or t_b > t[-1] + 1e-12 or not t_b > t_a:
        raise ValueError(f"window [{t_a}, {t_b}] is not inside the data range [{t[0]}, {t[-1]}]")
    sel = (t >= t_a) & (t <= t_b)
    if sel.sum() < 10:
        raise ValueError(f"fit window holds {int(sel.sum())} samples; at least 10 are needed")
    tw, yw = t[sel], y[sel]
    start = tw[0] + discard * (tw[-1] - tw[0])
    keep = tw >= start
    tw, yw = tw[keep], yw[keep]
    if np.any(yw <= 0) or not np.all(np.isfinite(yw)):
        raise ValueError("rate fits need positive finite data in the window")
    x = tw if model == "exponential" else np.log1p(tw)
    ly = np.log(yw)
    A = np.vstack([np.ones_like(x), -x]).T
    (c0, rate), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ np.array([c0, rate])
    return RateFit(model, float(np.exp(c0)), float(rate), float(t_a), float(t_b),
                   float(np.sqrt(np.mean(resid**2))), int(tw.size))


def fit_ledger(ledger: Ledger, column: str, model: str = "exponential", window=None,
               absolute: bool = True) -> RateFit:
    y = ledger.column(column)
    return fit_rate(ledger.t, np.abs(y) if absolute else y, model, window)


# -- continuous dependence ------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    t: np.ndarray
    distance: np.ndarray
    slope: float  # L2: growth rate of the envelope of log(distance / distance[0])
    intercept: float  # L1: log of the envelope constant


def continuous_dependence_probe(states_a, states_b) -> ProbeResult:
    """X0 distance between two sampled trajectories and its exponential envelope."""
    if len(states_a) != len(states_b) or not states_a:
        raise ValueError("probe needs two non-empty trajectories sampled at the same times")
    ts, dist = [], []
    for a, b in zip(states_a, states_b):
        if a.grid != b.grid:
            raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
        if abs(a.t - b.t) > 1e-12 * max(1.0, abs(a.t)):
            raise ValueError(f"sample times differ: {a.t} vs {b.t}")
        ts.append(a.t)
        dist.append(a.grid.x_norm(a.phi - b.phi, a.phi_t - b.phi_t, "X0"))
    ts, dist = np.array(ts), np.array(dist)
    if dist[0] == 0 or len(ts) < 2:
        return ProbeResult(ts, dist, 0.0, 0.0)
    lr = np.log(np.maximum(dist, np.finfo(float).tiny) / dist[0])
    slope = float(np.polyfit(ts - ts[0], lr, 1)[0])
    intercept = float(np.max(lr - slope * (ts - ts[0])))
    return ProbeResult(ts, dist, slope, intercept)
