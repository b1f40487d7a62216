"""Periodic Fourier grids on the unit cube and the operators acting on them.

Coefficients use the real-FFT layout (last axis holds the half spectrum) and
the forward normalization, so that ``u(x) = sum_k c_k exp(2 pi i k.x)`` and
the k = 0 coefficient equals the spatial mean (the box has unit volume).
"""
from __future__ import annotations

import math
import os
from fractions import Fraction

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi

MULTIPLIERS = ("laplacian", "biharmonic", "triharmonic", "inv_neg_laplacian")


def fft_workers() -> int:
    """Thread cap for FFT kernels, read from ``MPFC_THREADS`` (default 1)."""
    value = os.environ.get("MPFC_THREADS", "").strip()
    if not value:
        return 1
    return max(1, int(value))


class Grid:
    """Uniform periodic grid of ``n**dim`` samples on (0, 1)^dim.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 to 3.
    n : int
        Even number of modes per axis.
    padding_factor : rational >= 1
        Size ratio of the grid used for nonlinear products. With the
        default 2 every cubic product of retained modes is alias free.
    """

    def __init__(self, dim: int = 2, n: int = 64, padding_factor=2):
        if dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
        if n < 4 or n % 2:
            raise ValueError(f"modes per axis must be an even integer >= 4, got {n}")
        p = Fraction(padding_factor).limit_denominator(1000)
        if p < 1:
            raise ValueError(f"padding_factor must be >= 1, got {padding_factor}")
        self.dim = dim
        self.n = n
        self.padding_factor = p
        self.shape = (n,) * dim
        self.spec_shape = (n,) * (dim - 1) + (n // 2 + 1,)
        m = 2 * math.ceil(p * n / 2)
        self.padded_n = m
        self.padded_shape = (m,) * dim
        # cubic products of modes with |k_i| <= kmax alias onto unretained modes only
        self.kmax = min(n // 2 - 1, math.ceil(p * n / 4) - 1)

        full = np.fft.fftfreq(n, d=1.0 / n)
        full[n // 2] = n // 2  # lattice runs -n/2+1 .. n/2
        half = np.arange(n // 2 + 1, dtype=float)
        axes = [full] * (dim - 1) + [half]
        self.k = tuple(
            _freeze(a.reshape([-1 if i == j else 1 for j in range(dim)]))
            for i, a in enumerate(axes)
        )
        ksq = sum(k * k for k in self.k)
        self.lam = _freeze(TWO_PI**2 * ksq)  # eigenvalues of -Laplacian
        self.zero = (0,) * dim
        lam_safe = self.lam.copy()
        lam_safe[self.zero] = 1.0
        self._lam_safe = _freeze(lam_safe)

        # hermitian weights: half-spectrum columns other than 0 and n/2 stand for two modes
        w = np.full(n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self.weight = _freeze(np.broadcast_to(w, self.spec_shape).copy())

        mask = np.ones(self.spec_shape, dtype=bool)
        for k in self.k:
            mask &= np.abs(k) <= self.kmax
        self.mask = _freeze(mask)

        keep_full = np.concatenate([np.arange(self.kmax + 1), np.arange(n - self.kmax, n)])
        keep_full_pad = np.concatenate([np.arange(self.kmax + 1), np.arange(m - self.kmax, m)])
        keep_half = np.arange(self.kmax + 1)
        self._src = np.ix_(*([keep_full] * (dim - 1) + [keep_half]))
        self._dst = np.ix_(*([keep_full_pad] * (dim - 1) + [keep_half]))
        self._pad_spec_shape = (m,) * (dim - 1) + (m // 2 + 1,)

    def __repr__(self) -> str:
        return f"Grid(dim={self.dim}, n={self.n}, padding_factor={self.padding_factor})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and (self.dim, self.n, self.padding_factor) == (other.dim, other.n, other.padding_factor)
        )

    def __hash__(self) -> int:
        return hash((self.dim, self.n, self.padding_factor))

    # -- transforms -------------------------------------------------------

    def _check_field(self, u: np.ndarray) -> None:
        if np.shape(u) != self.shape:
            raise ValueError(f"field shape {np.shape(u)} does not match grid {self.shape}")

    def _check_coeffs(self, c: np.ndarray) -> None:
        if np.shape(c) != self.spec_shape:
            raise ValueError(f"coefficient shape {np.shape(c)} does not match grid {self.spec_shape}")

    def transform(self, u: np.ndarray) -> np.ndarray:
        self._check_field(u)
        return sfft.rfftn(u, norm="forward", workers=fft_workers())

    def inverse_transform(self, c: np.ndarray) -> np.ndarray:
        self._check_coeffs(c)
        return sfft.irfftn(c, s=self.shape, norm="forward", workers=fft_workers())

    def coordinates(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) / self.n
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    # -- padded evaluation of nonlinear terms ---------------------------

    def to_padded(self, c: np.ndarray) -> np.ndarray:
        """Real samples on the padded grid of the retained part of ``c``."""
        big = np.zeros(self._pad_spec_shape, dtype=complex)
        big[self._dst] = c[self._src]
        return sfft.irfftn(big, s=self.padded_shape, norm="forward", workers=fft_workers())

    def from_padded(self, w: np.ndarray) -> np.ndarray:
        """Coefficients of padded samples ``w``, truncated to retained modes."""
        big = sfft.rfftn(w, norm="forward", workers=fft_workers())
        c = np.zeros(self.spec_shape, dtype=complex)
        c[self._src] = big[self._dst]
        return c

    def pointwise(self, c: np.ndarray, func) -> np.ndarray:
        """Dealiased coefficients of ``func(u)`` where ``u`` has coefficients ``c``."""
        return self.from_padded(func(self.to_padded(c)))

    def quadrature(self, c: np.ndarray, func) -> float:
        """Integral over the box of ``func(u)``, evaluated on the padded grid."""
        return float(np.mean(func(self.to_padded(c))))

    def dealias(self, c: np.ndarray) -> np.ndarray:
        self._check_coeffs(c)
        return np.where(self.mask, c, 0.0)

    # -- multipliers ------------------------------------------------------

    def symbol(self, name: str) -> np.ndarray:
        if name == "laplacian":
            return -self.lam
        if name == "biharmonic":
            return self.lam**2
        if name == "triharmonic":
            return -self.lam**3
        if name == "inv_neg_laplacian":
            s = 1.0 / self._lam_safe
            s[self.zero] = 0.0
            return s
        raise ValueError(f"unknown multiplier {name!r}; expected one of {MULTIPLIERS}")

    def apply_multiplier(self, u: np.ndarray, name: str) -> np.ndarray:
        s = self.symbol(name)
        return self.inverse_transform(s * self.transform(u))

    def gradient(self, u: np.ndarray) -> list[np.ndarray]:
        c = self.transform(u)
        out = []
        for k in self.k:
            kk = np.where(np.abs(k) == self.n // 2, 0.0, k)  # odd derivative of the nyquist mode is dropped
            out.append(self.inverse_transform(1j * TWO_PI * kk * c))
        return out

    # -- means, inner products and norms -------------------------------

    def mean(self, u: np.ndarray) -> float:
        self._check_field(u)
        return float(np.mean(u))

    def sobolev_weight(self, m: float) -> np.ndarray:
        w = self._lam_safe**m
        w[self.zero] = 1.0
        return w

    def graph_weight(self, m: int) -> np.ndarray:
        """Fourier weights sum_{j<=m} lam^j of the full H^m graph norm."""
        return sum(self.lam**j for j in range(m + 1))

    def inner_hat(self, a: np.ndarray, b: np.ndarray, m: float = 0.0) -> float:
        return float(np.sum(self.weight * self.sobolev_weight(m) * (a * np.conj(b)).real))

    def norm_hat(self, c: np.ndarray, m: float = 0.0) -> float:
        return math.sqrt(max(self.inner_hat(c, c, m), 0.0))

    def sobolev_norm(self, u: np.ndarray, m: float) -> float:
        """Single-weight Fourier norm: mean^2 plus sum_{k!=0} lam^m |c_k|^2."""
        return self.norm_hat(self.transform(u), m)

    def x_norm_hat(self, c: np.ndarray, d: np.ndarray, space: str = "X0") -> float:
        if space == "X0":
            m_phi, m_v = 2, -1
        elif space == "X1":
            m_phi, m_v = 3, 0
        else:
            raise ValueError(f"unknown product space {space!r}; expected 'X0' or 'X1'")
        phi_part = float(np.sum(self.weight * self.graph_weight(m_phi) * np.abs(c) ** 2))
        return math.sqrt(phi_part + self.inner_hat(d, d, m_v))

    def x_norm(self, u: np.ndarray, v: np.ndarray, space: str = "X0") -> float:
        """Graph norm of the pair (u, v) in X0 = H2 x H-1 or X1 = H3 x L2."""
        return self.x_norm_hat(self.transform(u), self.transform(v), space)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a
