"""Dynamic ADTE estimator with robust bias-corrected inference.

For each side of the cutoff the estimand is a smooth function of one-sided
limits, ``eta = mu_Y + mu_W / mu_D``.  Point estimates use local linear
intercepts at the main bandwidth ``h``; curvature for the bias correction
comes from local quadratics at the pilot bandwidth ``b``; the variance of
the bias-corrected, linearised estimator is assembled from sandwich
matrices whose middle is a nearest-neighbour estimate of the conditional
second moments.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data import RdVectors
from .errors import DegenerateDenominatorError, InsufficientNeighborsError, NegativeVarianceError
from .localpoly import SIDES, TRIANGULAR, Kernel, SideDesign, as_kernel, sandwich, side_mask

log = logging.getLogger(__name__)

DENOM_TOL = 1e-6
NEG_VAR_TOL = 1e-12


@dataclass(frozen=True)
class NnConfig:
    j_star: int = 3

    def __post_init__(self):
        if int(self.j_star) != self.j_star or self.j_star < 1:
            raise ValueError("j_star must be a positive integer")


class Neighbors:
    """The ``j_star`` nearest same-side neighbours of every observation on one side.

    Distance is ``|R_j - R_i|``; ties go to the smaller original index.
    """

    def __init__(self, R, side: str, j_star: int = 3):
        R = np.asarray(R, dtype=float)
        self.n, self.side, self.j = R.size, side, int(j_star)
        self.idx = np.flatnonzero(side_mask(R, side))
        m, j = self.idx.size, self.j
        if m < j + 1:
            raise InsufficientNeighborsError(
                f"{side} side has {m} observation(s); nearest-neighbour moments need {j + 1}")
        r = R[self.idx]
        local = np.arange(m)
        order = np.lexsort((local, r))
        rs = r[order]
        pos = np.arange(m)[:, None]
        offs = np.r_[-j:0, 1:j + 1]
        cand = pos + offs
        valid = (cand >= 0) & (cand < m)
        cc = np.clip(cand, 0, m - 1)
        dist = np.where(valid, np.abs(rs[cc] - rs[:, None]), np.inf)
        orig = np.where(valid, order[cc], m)
        pick = np.lexsort((orig, dist), axis=1)[:, :j]
        chosen = np.take_along_axis(orig, pick, axis=1)
        dj = np.take_along_axis(dist, pick[:, -1:], axis=1)[:, 0]

        # A point just outside the window can tie with the j-th pick; resolve
        # those rows by brute force so the tie rule holds exactly.
        left, right = pos[:, 0] - j - 1, pos[:, 0] + j + 1
        tie = np.zeros(m, bool)
        ok = left >= 0
        tie[ok] |= np.abs(rs[left[ok]] - rs[ok]) == dj[ok]
        ok = right < m
        tie[ok] |= np.abs(rs[right[ok]] - rs[ok]) == dj[ok]
        for p in np.flatnonzero(tie):
            i = order[p]
            d = np.abs(r - r[i])
            d[i] = np.inf
            chosen[p] = np.lexsort((local, d))[:j]

        nbrs = np.empty((m, j), dtype=np.int64)
        nbrs[order] = chosen
        self.nbrs = nbrs

    def residual(self, A) -> np.ndarray:
        """``A_i`` minus the neighbour mean, on this side only (length ``m``)."""
        a = np.asarray(A, dtype=float)[self.idx]
        return a - a[self.nbrs].mean(axis=1)

    def cov(self, A, B) -> np.ndarray:
        """Full-length vector of nearest-neighbour second moments."""
        out = np.zeros(self.n)
        out[self.idx] = self.j / (self.j + 1) * (self.residual(A) * self.residual(B))
        return out


def nn_cov(A, B, R, side: str, cfg: NnConfig = NnConfig()) -> np.ndarray:
    """Per-observation estimate of ``Cov(A, B | R)`` from ``j_star`` neighbours."""
    return Neighbors(R, side, cfg.j_star).cov(A, B)


@dataclass
class SideMoments:
    side: str
    mu: dict
    mu2: dict
    bias_factor_B: float
    n_eff: int

    def __getattr__(self, name):
        if name.startswith("mu2_"):
            return self.__dict__["mu2"][name[4:]]
        if name.startswith("mu_"):
            return self.__dict__["mu"][name[3:]]
        raise AttributeError(name)


class SideEngine:
    """Fits, bias and variance pieces for one side at fixed ``(h, b)``."""

    def __init__(self, R, side: str, h: float, b: float, kernel: Kernel = TRIANGULAR,
                 j_star: int = 3):
        R = np.asarray(R, dtype=float)
        self.R, self.side, self.h, self.b, self.j_star = R, side, float(h), float(b), j_star
        self.main = SideDesign(R, side, 1, h, kernel)
        self.pilot = SideDesign(R, side, 2, b, kernel)
        self.B = self.main.bias_factor(0, 2)
        self._nbrs: Neighbors | None = None

    @property
    def neighbors(self) -> Neighbors:
        if self._nbrs is None:
            self._nbrs = Neighbors(self.R, self.side, self.j_star)
        return self._nbrs

    def level(self, A) -> float:
        return float(self.main.coef(A)[0])

    def curvature(self, A) -> float:
        return float(self.pilot.derivative(A, 2))

    def sigma(self, cols: Sequence[np.ndarray], coefs: Sequence[float]) -> np.ndarray:
        """``sum_AB c_A c_B sigma_AB(R_i)`` for every observation."""
        out = np.zeros(self.R.size)
        for a, ca in zip(cols, coefs):
            for b_, cb in zip(cols, coefs):
                if ca != 0.0 and cb != 0.0:
                    out += ca * cb * self.neighbors.cov(a, b_)
        return out

    def variance(self, cols, coefs) -> dict:
        """Robust variance of the bias-corrected linearised side estimate."""
        sig = self.sigma(cols, coefs)
        n, h, b, B = self.main.n, self.h, self.b, self.B
        v_h = sandwich(self.main, 0, self.main, 0, sig) / n
        v_b = 4.0 / (n * b ** 4) * sandwich(self.pilot, 2, self.pilot, 2, sig)
        c_hb = 2.0 / (n * b ** 2) * sandwich(self.main, 0, self.pilot, 2, sig)
        v_bc = v_h + h ** 4 * v_b * B ** 2 / 4.0 - 2.0 * h ** 2 * c_hb * B / 2.0
        return {"v_h": v_h, "v_b": v_b, "c_hb": c_hb, "v_bc": v_bc}


def check_variance(v: float, what: str = "variance") -> tuple[float, list[str]]:
    """Clamp tiny negative round-off to zero; reject anything larger."""
    if v >= 0:
        return v, []
    if v >= -NEG_VAR_TOL:
        msg = f"{what} {v:.3e} clamped to 0"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return 0.0, [msg]
    raise NegativeVarianceError(f"assembled {what} is negative ({v:.3e})")


def _check_denominator(mu_d: float, side: str, tol: float, name: str = "D") -> list[str]:
    if abs(mu_d) <= tol:
        raise DegenerateDenominatorError(
            f"{side}-side intercept of {name} is {mu_d:.3e}, at or below tolerance {tol:g}",
            side=side, value=mu_d)
    if not -1e-8 <= mu_d <= 1 + 1e-8:
        return [f"{side}-side intercept of {name} is {mu_d:.6g}, outside [0, 1]"]
    return []


@dataclass
class RobustEstimate:
    theta_hat: float
    bias_hat: float
    theta_bc: float
    v_bc: float
    se: float
    ci: tuple[float, float]
    h: float
    b: float
    n_above: int
    n_below: int
    alpha: float = 0.05
    moments: dict = field(default_factory=dict, repr=False)
    warnings: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"theta_hat": self.theta_hat, "bias_hat": self.bias_hat,
                "theta_bc": self.theta_bc, "v_bc": self.v_bc, "se": self.se,
                "ci_lo": self.ci[0], "ci_hi": self.ci[1], "h": self.h, "b": self.b,
                "n_above": self.n_above, "n_below": self.n_below, "alpha": self.alpha}


def normal_ci(center: float, v: float, alpha: float) -> tuple[float, float]:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    z = norm.ppf(1.0 - alpha / 2.0)
    half = float(z * np.sqrt(v))
    return (float(center - half), float(center + half))


def sharp_rd(R, A, h: float, p: int = 1, kernel: Kernel | str = TRIANGULAR) -> float:
    """Difference of one-sided intercepts of ``A`` at the cutoff."""
    kern = as_kernel(kernel)
    up = SideDesign(R, "above", p, h, kern).coef(A)[0]
    dn = SideDesign(R, "below", p, h, kern).coef(A)[0]
    return float(up - dn)


def _ratio_coefs(mu_w: float, mu_d: float) -> np.ndarray:
    """Gradient of ``mu_Y + mu_W / mu_D`` with respect to ``(mu_Y, mu_W, mu_D)``."""
    return np.array([1.0, 1.0 / mu_d, -mu_w / mu_d ** 2])


def _levels(v: RdVectors, h: float, kern: Kernel, denom_tol: float):
    out, notes = {}, []
    for side in SIDES:
        d = SideDesign(v.R, side, 1, h, kern)
        mu = {name: float(d.coef(getattr(v, name))[0]) for name in ("Y", "W", "D")}
        notes += _check_denominator(mu["D"], side, denom_tol)
        out[side] = mu
    return out, notes


def adte_point(v: RdVectors, h: float, kernel: Kernel | str = TRIANGULAR,
               denom_tol: float = DENOM_TOL) -> float:
    """``mu_Y+ - mu_Y- + mu_W+/mu_D+ - mu_W-/mu_D-`` from local linear intercepts."""
    mu, _ = _levels(v, h, as_kernel(kernel), denom_tol)
    up, dn = mu["above"], mu["below"]
    return float((up["Y"] - dn["Y"]) + (up["W"] / up["D"] - dn["W"] / dn["D"]))


class _Fit:
    """Everything the estimator needs at one ``(h, b)``; shared by the public helpers."""

    def __init__(self, v: RdVectors, h: float, b: float, kernel, j_star: int, denom_tol: float):
        if not (h > 0 and b > 0):
            raise ValueError("bandwidths must be positive")
        kern = as_kernel(kernel)
        self.v, self.h, self.b = v, float(h), float(b)
        self.notes: list[str] = []
        self.eng, self.mom, self.coefs = {}, {}, {}
        cols = (v.Y, v.W, v.D)
        for side in SIDES:
            eng = SideEngine(v.R, side, h, b, kern, j_star)
            mu = {"Y": eng.level(v.Y), "W": eng.level(v.W), "D": eng.level(v.D)}
            self.notes += _check_denominator(mu["D"], side, denom_tol)
            self.eng[side] = eng
            self.coefs[side] = _ratio_coefs(mu["W"], mu["D"])
            self.mom[side] = SideMoments(side, mu, {}, eng.B, eng.main.n_eff)
        self.cols = cols
        up, dn = self.mom["above"].mu, self.mom["below"].mu
        self.theta_hat = float((up["Y"] - dn["Y"]) + (up["W"] / up["D"] - dn["W"] / dn["D"]))

    def bias(self) -> float:
        parts = {}
        for side in SIDES:
            eng, mom = self.eng[side], self.mom[side]
            mom.mu2 = {k: eng.curvature(a) for k, a in zip(("Y", "W", "D"), self.cols)}
            mu2 = np.array([mom.mu2[k] for k in ("Y", "W", "D")])
            parts[side] = float(self.coefs[side] @ mu2) / 2.0 * eng.B
        return parts["above"] - parts["below"]

    def variance(self) -> tuple[float, dict]:
        pieces = {s: self.eng[s].variance(self.cols, self.coefs[s]) for s in SIDES}
        return pieces["above"]["v_bc"] + pieces["below"]["v_bc"], pieces


def bias_estimate(v: RdVectors, h: float, b: float, kernel: Kernel | str = TRIANGULAR,
                  denom_tol: float = DENOM_TOL) -> float:
    """Leading bias constant ``B_hat`` so that ``theta_bc = theta_hat - h^2 B_hat``."""
    return _Fit(v, h, b, kernel, 3, denom_tol).bias()


def robust_variance(v: RdVectors, h: float, b: float, kernel: Kernel | str = TRIANGULAR,
                    cfg: NnConfig = NnConfig(), denom_tol: float = DENOM_TOL) -> float:
    """Variance of the bias-corrected estimator, summed over both sides."""
    vbc, _ = _Fit(v, h, b, kernel, cfg.j_star, denom_tol).variance()
    return check_variance(vbc, "robust variance")[0]


def estimate(v: RdVectors, h: float, b: float, kernel: Kernel | str = TRIANGULAR,
             cfg: NnConfig = NnConfig(), alpha: float = 0.05,
             denom_tol: float = DENOM_TOL) -> RobustEstimate:
    """Point estimate, bias correction, robust variance and normal CI."""
    fit = _Fit(v, h, b, kernel, cfg.j_star, denom_tol)
    bias = fit.bias()
    vbc, _ = fit.variance()
    vbc, notes = check_variance(vbc, "robust variance")
    theta_bc = fit.theta_hat - fit.h ** 2 * bias
    for msg in fit.notes:
        log.warning(msg)
    return RobustEstimate(
        theta_hat=fit.theta_hat, bias_hat=bias, theta_bc=theta_bc, v_bc=vbc,
        se=float(np.sqrt(vbc)), ci=normal_ci(theta_bc, vbc, alpha), h=fit.h, b=fit.b,
        n_above=fit.mom["above"].n_eff, n_below=fit.mom["below"].n_eff, alpha=alpha,
        moments=fit.mom, warnings=fit.notes + notes)

