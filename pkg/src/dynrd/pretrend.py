"""Common-trends pre-test.

On each side of the cutoff the statistic contrasts the pre-period trend of
units that stay untreated after the focal period with that of the
complementary group:

    pi = mu_J / mu_D - mu_K / mu_G,   J = dY * D,  K = dY * G,  G = 1 - D.

Both sides are bias corrected and given robust variances with the same
machinery as the ADTE estimator; the joint Wald statistic is chi-square
with two degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import PretrendVectors
from .errors import DegenerateGroupError, EstimationError
from .estimator import DENOM_TOL, NnConfig, SideEngine, check_variance
from .localpoly import SIDES, TRIANGULAR, Kernel, as_kernel

_NAMES = ("J", "D", "K", "G")


@dataclass
class SidePretrend:
    side: str
    pi_hat: float
    pi_bc: float
    v_bc: float
    bias_hat: float
    mu: dict = field(default_factory=dict, repr=False)


@dataclass
class PretrendResult:
    u: int
    v: int
    pi_plus: float
    pi_minus: float
    v_plus: float
    v_minus: float
    stat: float
    p_value: float

    @property
    def se_plus(self) -> float:
        return float(np.sqrt(self.v_plus))

    @property
    def se_minus(self) -> float:
        return float(np.sqrt(self.v_minus))

    def to_dict(self) -> dict:
        return {"u": self.u, "v": self.v, "pi_plus": self.pi_plus, "pi_minus": self.pi_minus,
                "se_plus": self.se_plus, "se_minus": self.se_minus, "stat": self.stat,
                "p_value": self.p_value}


def chi2_2_sf(x: float) -> float:
    """Upper tail of the chi-square distribution with two degrees of freedom."""
    return float(np.exp(-max(float(x), 0.0) / 2.0))


def pretrend_side(vec: PretrendVectors, side: str, h: float, b: float,
                  kernel: Kernel | str = TRIANGULAR, cfg: NnConfig = NnConfig(),
                  denom_tol: float = DENOM_TOL) -> SidePretrend:
    eng = SideEngine(vec.R, side, h, b, as_kernel(kernel), cfg.j_star)
    cols = [getattr(vec, a) for a in _NAMES]
    mu = {a: eng.level(x) for a, x in zip(_NAMES, cols)}
    for grp, label in (("D", "untreated-path"), ("G", "treated-path")):
        if abs(mu[grp]) <= denom_tol:
            raise DegenerateGroupError(
                f"{label} group ({grp}) is empty near the cutoff on the {side} side "
                f"(intercept {mu[grp]:.3e})", side=side, group=grp, value=mu[grp])
    coefs = np.array([1.0 / mu["D"], -mu["J"] / mu["D"] ** 2,
                      -1.0 / mu["G"], mu["K"] / mu["G"] ** 2])
    pi_hat = mu["J"] / mu["D"] - mu["K"] / mu["G"]
    mu2 = np.array([eng.curvature(x) for x in cols])
    bias = float(coefs @ mu2) / 2.0 * eng.B
    var = eng.variance(cols, coefs)["v_bc"]
    var, _ = check_variance(var, f"{side}-side pre-trend variance")
    return SidePretrend(side, float(pi_hat), float(pi_hat - eng.h ** 2 * bias), var, bias, mu)


def joint_test(plus: SidePretrend, minus: SidePretrend, u: int = 0, v: int = 0) -> PretrendResult:
    """Wald statistic ``z_+^2 + z_-^2`` and its chi-square(2) p-value."""
    if not (plus.v_bc > 0 and minus.v_bc > 0):
        raise EstimationError("pre-trend variances must be positive for the joint test")
    stat = plus.pi_bc ** 2 / plus.v_bc + minus.pi_bc ** 2 / minus.v_bc
    return PretrendResult(u, v, plus.pi_bc, minus.pi_bc, plus.v_bc, minus.v_bc,
                          float(stat), chi2_2_sf(stat))


def pretrend_test(vec: PretrendVectors, h: float, b: float, kernel: Kernel | str = TRIANGULAR,
                  cfg: NnConfig = NnConfig(), denom_tol: float = DENOM_TOL) -> PretrendResult:
    sides = [pretrend_side(vec, s, h, b, kernel, cfg, denom_tol) for s in SIDES]
    return joint_test(*sides, u=vec.u, v=vec.v)


def pooled_joint_test(parts: Sequence[tuple[float, SidePretrend, SidePretrend]],
                      u: int = 0, v: int = 0) -> PretrendResult:
    """Combine per-cohort side statistics with fixed weights before testing.

    ``parts`` holds ``(weight, above, below)`` triples; cohorts are treated as
    independent, so variances add with squared weights.
    """
    w = np.array([p[0] for p in parts], dtype=float)
    if w.size == 0 or not np.isclose(w.sum(), 1.0, atol=1e-12, rtol=0):
        raise ValueError("pooled pre-trend weights must sum to one")
    plus = SidePretrend("above", 0.0, float(sum(x * p[1].pi_bc for x, p in zip(w, parts))),
                        float(sum(x * x * p[1].v_bc for x, p in zip(w, parts))), 0.0)
    minus = SidePretrend("below", 0.0, float(sum(x * p[2].pi_bc for x, p in zip(w, parts))),
                         float(sum(x * x * p[2].v_bc for x, p in zip(w, parts))), 0.0)
    return joint_test(plus, minus, u, v)

