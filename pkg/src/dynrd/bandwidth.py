"""Direct plug-in MSE-optimal bandwidths.

The main bandwidth minimises ``h^4 Bdot_h^2 + Vdot_h / (n h)`` and the pilot
bandwidth minimises ``b^2 Bdot_b^2 + Vdot_b / (n b^5)``:

    h = (Vdot_h / (4 Bdot_h^2))^{1/5} n^{-1/5}
    b = (5 Vdot_b / (2 Bdot_b^2))^{1/7} n^{-1/7}

Unknown population quantities are replaced by preliminary estimates: a
normal-reference kernel density estimate of ``f(0)``, one-sided global
polynomial fits for the derivatives, and nearest-neighbour variances near
the cutoff.  Kernel functionals come from numerical quadrature.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import iqr

from .data import RdVectors
from .errors import DegenerateDenominatorError, InsufficientDataError
from .estimator import DENOM_TOL, Neighbors
from .localpoly import SIDES, TRIANGULAR, Kernel, as_kernel, kernel_constants, side_mask

log = logging.getLogger(__name__)

VARIABLES = ("Y", "W", "D")
ZERO_BIAS_TOL = 1e-10


@dataclass(frozen=True)
class BandwidthConfig:
    kernel: Kernel = TRIANGULAR
    j_star: int = 3
    min_per_side: int = 50
    nn_fraction: float = 0.2
    reg_scale: float = 1.0
    rho: float = 0.5
    denom_tol: float = DENOM_TOL
    pilot_floor: bool = True

    def __post_init__(self):
        if self.min_per_side < 1:
            raise ValueError("min_per_side must be positive")
        if not 0 < self.nn_fraction <= 1:
            raise ValueError("nn_fraction must lie in (0, 1]")
        if self.reg_scale < 0 or self.rho <= 0:
            raise ValueError("reg_scale must be nonnegative and rho positive")


@lru_cache(maxsize=None)
def bandwidth_constants(kernel: Kernel) -> dict:
    """Kernel functionals entering the bias and variance constants."""
    k1 = kernel_constants(kernel, 1, q_powers=(2,))
    k2 = kernel_constants(kernel, 2, q_powers=(3,))
    return {
        "bias_h": k1.bias_constant(0, 2),
        "var_h": k1.variance_constant(0),
        "bias_b": 2.0 * k2.bias_constant(2, 3),
        "var_b": 4.0 * k2.variance_constant(2),
    }


@dataclass(frozen=True)
class PluginPrelim:
    """Preliminary estimates; bandwidths are a deterministic function of these."""

    n: int
    f_hat_c: float
    sd_prelim: dict = field(repr=False)
    deriv_prelim: dict = field(repr=False)
    coefs: dict = field(repr=False)
    kernel: Kernel = TRIANGULAR
    r_range: float = 1.0
    r_absmax: float = 1.0
    reg_h: float = 0.0
    reg_b: float = 0.0
    rho: float = 0.5

    def sigma2(self, side: str) -> float:
        """Variance of the linearised combination on ``side``."""
        c = self.coefs[side]
        S = np.array([[self.sd_prelim[side][a + b] for b in VARIABLES] for a in VARIABLES])
        return float(c @ S @ c)

    def combo(self, side: str, order: int) -> float:
        d = self.deriv_prelim[side][f"d{order}"]
        return float(self.coefs[side] @ np.array([d[a] for a in VARIABLES]))

    def constants(self) -> dict:
        k = bandwidth_constants(self.kernel)
        s2 = self.sigma2("above") + self.sigma2("below")
        return {
            "V_h": k["var_h"] * s2 / self.f_hat_c,
            "B_h": k["bias_h"] * (self.combo("above", 2) - self.combo("below", 2)) / 2.0,
            "V_b": k["var_b"] * s2 / self.f_hat_c,
            "B_b": k["bias_b"] * (self.combo("above", 3) + self.combo("below", 3)) / 6.0,
        }


@dataclass
class BandwidthPair:
    h_mse: float
    b_mse: float
    diagnostics: dict = field(default_factory=dict)


def h_from_constants(V: float, B2: float, n: float) -> float:
    return (V / (4.0 * B2)) ** 0.2 * n ** -0.2


def b_from_constants(V: float, B2: float, n: float) -> float:
    return (5.0 * V / (2.0 * B2)) ** (1.0 / 7.0) * n ** (-1.0 / 7.0)


def density_at_cutoff(R) -> float:
    """Gaussian kernel density at 0 with a normal-reference bandwidth."""
    R = np.asarray(R, dtype=float)
    spread = min(np.std(R, ddof=1), iqr(R) / 1.349)
    if not spread > 0:
        spread = np.std(R, ddof=1)
    bw = 1.06 * spread * R.size ** -0.2
    return float(np.mean(np.exp(-0.5 * (R / bw) ** 2)) / (bw * np.sqrt(2 * np.pi)))


def global_derivatives(A, R, side: str, order: int) -> np.ndarray:
    """Derivatives ``mu^{(0..order)}`` at the cutoff from an unweighted one-sided polynomial fit."""
    R = np.asarray(R, dtype=float)
    m = side_mask(R, side)
    r = R[m]
    scale = np.max(np.abs(r))
    X = np.vander(r / scale, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(X, np.asarray(A, dtype=float)[m], rcond=None)
    fact = np.cumprod(np.r_[1.0, np.arange(1, order + 1)])
    return coef * fact / scale ** np.arange(order + 1)


def plugin_prelim(v: RdVectors, cfg: BandwidthConfig = BandwidthConfig()) -> PluginPrelim:
    R = v.R
    kern = as_kernel(cfg.kernel)
    cols = {"Y": v.Y, "W": v.W, "D": v.D}
    for side in SIDES:
        m = int(side_mask(R, side).sum())
        if m < cfg.min_per_side:
            raise InsufficientDataError(
                f"{side} side has {m} observations; bandwidth selection needs {cfg.min_per_side}")

    deriv, sd, coefs = {}, {}, {}
    for side in SIDES:
        g4 = {a: global_derivatives(x, R, side, 4) for a, x in cols.items()}
        g5 = {a: global_derivatives(x, R, side, 5) for a, x in cols.items()}
        deriv[side] = {"level": {a: float(g4[a][0]) for a in VARIABLES},
                       "d2": {a: float(g4[a][2]) for a in VARIABLES},
                       "d3": {a: float(g5[a][3]) for a in VARIABLES}}
        mu_w, mu_d = deriv[side]["level"]["W"], deriv[side]["level"]["D"]
        if abs(mu_d) <= cfg.denom_tol:
            raise DegenerateDenominatorError(
                f"{side}-side preliminary level of D is {mu_d:.3e}", side=side, value=mu_d)
        coefs[side] = np.array([1.0, 1.0 / mu_d, -mu_w / mu_d ** 2])

        nb = Neighbors(R, side, cfg.j_star)
        dist = np.abs(R[nb.idx])
        n_near = max(cfg.j_star + 1, int(np.ceil(cfg.nn_fraction * nb.idx.size)))
        near = nb.idx[np.lexsort((nb.idx, dist))[:n_near]]
        res = {a: np.zeros(R.size) for a in VARIABLES}
        for a in VARIABLES:
            res[a][nb.idx] = nb.residual(cols[a])
        k = nb.j / (nb.j + 1)
        sd[side] = {a + b: float(np.mean(k * res[a][near] * res[b][near]))
                    for a in VARIABLES for b in VARIABLES}

    prelim = PluginPrelim(n=R.size, f_hat_c=density_at_cutoff(R), sd_prelim=sd,
                          deriv_prelim=deriv, coefs=coefs, kernel=kern,
                          r_range=float(np.ptp(R)), r_absmax=float(np.max(np.abs(R))),
                          rho=cfg.rho)
    kc = bandwidth_constants(kern)
    side_bh = [kc["bias_h"] * prelim.combo(s, 2) / 2.0 for s in SIDES]
    side_bb = [kc["bias_b"] * prelim.combo(s, 3) / 6.0 for s in SIDES]
    scale = cfg.reg_scale * R.size ** -0.5
    return replace(prelim, reg_h=scale * float(np.sum(np.square(side_bh))),
                   reg_b=scale * float(np.sum(np.square(side_bb))))


def _guard(x: float, prelim: PluginPrelim, name: str) -> float:
    cap = prelim.r_absmax / prelim.kernel.support
    if x > cap:
        warnings.warn(f"{name}={x:.4g} exceeds the data range; truncated to {cap:.4g}",
                      RuntimeWarning, stacklevel=3)
        return cap
    return x


def _fallback(prelim: PluginPrelim, name: str) -> float:
    x = prelim.rho * prelim.r_range
    warnings.warn(f"{name}: estimated bias constant is zero; using {prelim.rho:g} x range(R)",
                  RuntimeWarning, stacklevel=3)
    return x


def select_h_mse(prelim: PluginPrelim) -> float:
    c = prelim.constants()
    if abs(c["B_h"]) < ZERO_BIAS_TOL:
        return _guard(_fallback(prelim, "h"), prelim, "h")
    return _guard(h_from_constants(c["V_h"], c["B_h"] ** 2 + prelim.reg_h, prelim.n),
                  prelim, "h")


def select_b_mse(prelim: PluginPrelim) -> float:
    c = prelim.constants()
    if abs(c["B_b"]) < ZERO_BIAS_TOL:
        return _guard(_fallback(prelim, "b"), prelim, "b")
    return _guard(b_from_constants(c["V_b"], c["B_b"] ** 2 + prelim.reg_b, prelim.n),
                  prelim, "b")


def select_bandwidths(v: RdVectors, cfg: BandwidthConfig = BandwidthConfig()) -> BandwidthPair:
    prelim = plugin_prelim(v, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        h, b = select_h_mse(prelim), select_b_mse(prelim)
    notes = [str(w.message) for w in caught]
    if cfg.pilot_floor and b < h:
        notes.append(f"pilot bandwidth {b:.4g} raised to main bandwidth {h:.4g}")
        b = h
    for msg in notes:
        log.info(msg)
    diag = {"n": prelim.n, "f_hat_c": prelim.f_hat_c, **prelim.constants(),
            "reg_h": prelim.reg_h, "reg_b": prelim.reg_b,
            "sigma2_above": prelim.sigma2("above"), "sigma2_below": prelim.sigma2("below"),
            "notes": notes}
    return BandwidthPair(h, b, diag)
