"""One-sided kernel-weighted local polynomial regression.

All fits use the scaled design ``x_p(R/h) = (1, R/h, ..., (R/h)^p)`` with
kernel weights ``k_h(R) = k(|R|/h)/h`` restricted to one side of the cutoff.
Matrices are normalised by the full sample size ``n`` (both sides), so that

    Gamma   = X' Z X / n
    vartheta_q = X' Z (R/h)^q / n
    beta    = H_p(h) Gamma^{-1} X' Z A / n,   H_p(h) = diag(1, 1/h, ..., 1/h^p).

Weighted least squares is solved through a QR factorisation of
``sqrt(Z) X``; products with ``Gamma^{-1}`` reuse the triangular factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Literal

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularFitError

Side = Literal["above", "below"]
SIDES: tuple[Side, Side] = ("above", "below")

_KINDS = ("triangular", "uniform", "epanechnikov")

# Relative size of the smallest R-factor pivot below which a design is singular.
_RANK_TOL = 1e-12


@dataclass(frozen=True)
class Kernel:
    """Symmetric kernel supported on ``[-support, support]``."""

    kind: str = "triangular"
    support: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {_KINDS}")
        if not self.support > 0:
            raise ValueError("kernel support must be positive")

    def __call__(self, u) -> np.ndarray:
        t = np.abs(np.asarray(u, dtype=float)) / self.support
        inside = t <= 1.0
        if self.kind == "triangular":
            val = 1.0 - t
        elif self.kind == "uniform":
            val = np.full_like(t, 0.5)
        else:
            val = 0.75 * (1.0 - t * t)
        return np.where(inside, val, 0.0)


TRIANGULAR = Kernel()


def as_kernel(kernel: Kernel | str | None) -> Kernel:
    if kernel is None:
        return TRIANGULAR
    if isinstance(kernel, Kernel):
        return kernel
    return Kernel(str(kernel))


def kernel_weight(kernel: Kernel | str, u, h: float):
    """Return ``k(|u|/h)/h``."""
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h!r}")
    kern = as_kernel(kernel)
    out = kern(np.asarray(u, dtype=float) / h) / h
    return float(out) if np.ndim(out) == 0 else out


def side_mask(R, side: Side) -> np.ndarray:
    """Boolean membership; the cutoff itself belongs to the above side."""
    R = np.asarray(R, dtype=float)
    if side == "above":
        return R >= 0.0
    if side == "below":
        return R < 0.0
    raise ValueError(f"side must be 'above' or 'below', got {side!r}")


def _sides_weights(R: np.ndarray, side: Side, h: float, kernel: Kernel) -> np.ndarray:
    return np.where(side_mask(R, side), kernel_weight(kernel, R, h), 0.0)


@dataclass
class LocalPolyFit:
    side: str
    p: int
    h: float
    beta: np.ndarray
    gamma: np.ndarray
    n_eff: int

    @property
    def intercept(self) -> float:
        return float(self.beta[0])

    def derivative(self, nu: int) -> float:
        """Estimate of the ``nu``-th derivative at the cutoff."""
        return factorial(nu) * float(self.beta[nu])


class SideDesign:
    """Factorised one-sided design for fixed ``(side, p, h, kernel)``.

    Several outcomes share one design, so the QR factor is computed once and
    reused for every fit, bias factor and sandwich product.
    """

    def __init__(self, R, side: Side, p: int, h: float, kernel: Kernel | str = TRIANGULAR,
                 n: int | None = None):
        R = np.asarray(R, dtype=float)
        if p < 0:
            raise ValueError("polynomial order must be nonnegative")
        self.kernel = as_kernel(kernel)
        self.side, self.p, self.h = side, int(p), float(h)
        self.n = R.size if n is None else int(n)
        w = _sides_weights(R, side, h, self.kernel)
        self.idx = np.flatnonzero(w > 0)
        self.u = R[self.idx] / self.h
        self.w = w[self.idx]
        self.X = np.vander(self.u, self.p + 1, increasing=True)
        self.n_eff = int(self.idx.size)

        n_distinct = np.unique(self.u).size
        if n_distinct < self.p + 1:
            raise SingularFitError(
                f"{side} side has {n_distinct} distinct support points with positive "
                f"weight at h={h:g}; order {p} needs at least {p + 1}",
                n_eff=self.n_eff, condition=np.inf)
        self._sw = np.sqrt(self.w)
        self._q, self._r = np.linalg.qr(self._sw[:, None] * self.X)
        piv = np.abs(np.diag(self._r))
        if piv.min() <= _RANK_TOL * piv.max():
            raise SingularFitError(
                f"rank-deficient {side} design at h={h:g}, p={p}",
                n_eff=self.n_eff, condition=np.linalg.cond(self._r))
        self._scale = self.h ** -np.arange(self.p + 1)

    @property
    def gamma(self) -> np.ndarray:
        return self._r.T @ self._r / self.n

    def solve_gamma(self, v) -> np.ndarray:
        """Return ``Gamma^{-1} v`` through two triangular solves."""
        y = solve_triangular(self._r, np.asarray(v, dtype=float), trans="T")
        return self.n * solve_triangular(self._r, y)

    def vartheta(self, q_power: int) -> np.ndarray:
        return self.X.T @ (self.w * self.u ** q_power) / self.n

    def scaled_coef(self, A) -> np.ndarray:
        """``Gamma^{-1} X'ZA/n``: coefficients in units of ``R/h``.

        ``A`` may be a vector over the full sample or a matrix whose rows are
        observations and columns are outcomes.
        """
        a = np.asarray(A, dtype=float)[self.idx]
        rhs = self._q.T @ (self._sw[:, None] * a if a.ndim == 2 else self._sw * a)
        return solve_triangular(self._r, rhs)

    def coef(self, A) -> np.ndarray:
        c = self.scaled_coef(A)
        return c * (self._scale[:, None] if c.ndim == 2 else self._scale)

    def fit(self, A) -> LocalPolyFit:
        return LocalPolyFit(self.side, self.p, self.h, self.coef(A), self.gamma, self.n_eff)

    def derivative(self, A, nu: int):
        c = self.coef(A)
        return factorial(nu) * c[nu]

    def bias_factor(self, nu: int, q_power: int) -> float:
        return factorial(nu) * float(self.solve_gamma(self.vartheta(q_power))[nu])

    def unit_vector(self, nu: int) -> np.ndarray:
        e = np.zeros(self.p + 1)
        e[nu] = 1.0
        return e


def fit_one_side(A, R, side: Side, p: int, h: float,
                 kernel: Kernel | str = TRIANGULAR) -> LocalPolyFit:
    """Kernel-weighted polynomial fit of ``A`` on one side of the cutoff."""
    return SideDesign(R, side, p, h, kernel).fit(A)


def design_matrices(R, side: Side, p: int, q_power: int, h: float,
                    kernel: Kernel | str = TRIANGULAR) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Gamma, vartheta_q)``; no invertibility is required."""
    R = np.asarray(R, dtype=float)
    w = _sides_weights(R, side, h, as_kernel(kernel))
    u = R / h
    X = np.vander(u, p + 1, increasing=True)
    gamma = X.T @ (w[:, None] * X) / R.size
    vartheta = X.T @ (w * u ** q_power) / R.size
    return gamma, vartheta


def bias_factor(R, side: Side, nu: int, p: int, q_power: int, h: float,
                kernel: Kernel | str = TRIANGULAR) -> float:
    """``nu! e_nu' Gamma^{-1} vartheta_q`` on the observed data."""
    return SideDesign(R, side, p, h, kernel).bias_factor(nu, q_power)


def sandwich(d1: SideDesign, nu1: int, d2: SideDesign, nu2: int, sigma) -> float:
    """``e_nu1' Gamma_1^{-1} Psi Gamma_2^{-1} e_nu2`` with
    ``Psi = X_1' Z_1 Sigma Z_2 X_2 / n`` and diagonal ``Sigma`` given as a
    full-sample vector."""
    sigma = np.asarray(sigma, dtype=float)
    common, i1, i2 = np.intersect1d(d1.idx, d2.idx, assume_unique=True, return_indices=True)
    psi = (d1.X[i1].T * (d1.w[i1] * sigma[common] * d2.w[i2])) @ d2.X[i2] / d1.n
    left = d1.solve_gamma(d1.unit_vector(nu1))
    right = d2.solve_gamma(d2.unit_vector(nu2))
    return float(left @ psi @ right)


@dataclass(frozen=True)
class KernelConstants:
    """Population kernel functionals over ``[0, support]`` for one order ``p``."""

    p: int
    gamma: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    vartheta: dict = field(repr=False)

    def bias_constant(self, nu: int, q_power: int) -> float:
        return float(np.linalg.solve(self.gamma, self.vartheta[q_power])[nu])

    def variance_constant(self, nu: int) -> float:
        g_inv_e = np.linalg.solve(self.gamma, np.eye(self.p + 1)[nu])
        return float(g_inv_e @ self.psi @ g_inv_e)


def kernel_constants(kernel: Kernel | str, p: int, q_powers=(2, 3)) -> KernelConstants:
    """Integrals of ``k(u) u^j`` and ``k(u)^2 u^j`` on the positive half line."""
    from scipy.integrate import quad

    kern = as_kernel(kernel)
    kappa = kern.support
    qmax = max(q_powers)

    def mom(j: int, power: int) -> float:
        val, _ = quad(lambda x: float(kern(x)) ** power * x ** j, 0.0, kappa,
                      epsabs=0.0, epsrel=1e-12, limit=200)
        return val

    m1 = [mom(j, 1) for j in range(2 * p + qmax + 1)]
    m2 = [mom(j, 2) for j in range(2 * p + 1)]
    gamma = np.array([[m1[i + j] for j in range(p + 1)] for i in range(p + 1)])
    psi = np.array([[m2[i + j] for j in range(p + 1)] for i in range(p + 1)])
    vartheta = {q: np.array([m1[i + q] for i in range(p + 1)]) for q in q_powers}
    return KernelConstants(p, gamma, psi, vartheta)
