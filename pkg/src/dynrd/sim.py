"""Referendum panel simulation and Monte Carlo harness."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .aggregate import EstimationConfig, event_study, pretrend_study
from .data import Panel, PretrendVectors, RdVectors, panel_from_frame
from .errors import DynRDError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DgpParams:
    n: int = 30000
    t_bar: int = 30
    q_bar: float = 1.7
    sigma2_q: float = 0.5
    sigma2_uq: float = 1.0
    sigma2_r: float = 0.01
    sigma2_ur: float = 0.02
    mu_r: float = 0.05
    sigma2_v: float = 0.2
    eta: float = 0.0
    phi: float = 0.1
    theta0_mean: float = 0.4
    theta1_mean: float = -0.1
    sigma2_0: float = 0.08 ** 2
    sigma2_1: float = 0.02 ** 2
    cap: int = 4
    s_bar: int = 3
    rho_q: tuple = (-0.9, -0.5, -0.1)
    delta_q: tuple = (0.5, 0.3, 0.1)
    rho_r: tuple = (-0.05, -0.03, -0.01)
    delta_r: tuple = (0.05, 0.03, 0.01)
    gamma: tuple = (0.05, 0.03, 0.01)
    p_q0: float = 0.1
    common_time_effects: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("rho_q", "delta_q", "rho_r", "delta_r", "gamma"):
            vec = tuple(float(x) for x in getattr(self, name))
            object.__setattr__(self, name, vec)
            if len(vec) != self.s_bar:
                raise ValueError(f"{name} must have s_bar={self.s_bar} entries")
        for name in ("sigma2_q", "sigma2_uq", "sigma2_r", "sigma2_ur", "sigma2_v",
                     "sigma2_0", "sigma2_1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n < 1 or self.t_bar < 1 or self.cap < 0:
            raise ValueError("n and t_bar must be positive and cap nonnegative")
        if not 0 <= self.p_q0 <= 1:
            raise ValueError("p_q0 must be a probability")

    @classmethod
    def null(cls, **kw) -> "DgpParams":
        """No treatment effect of any kind."""
        base = dict(eta=0.0, phi=0.0, theta0_mean=0.0, theta1_mean=0.0,
                    sigma2_0=0.0, sigma2_1=0.0)
        return cls(**{**base, **kw})


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, replication)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed),
                                                                      spawn_key=(int(replication),))))


def true_theta(params: DgpParams, tau: int) -> float:
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return params.theta0_mean + min(tau, params.cap) * params.theta1_mean


def simulate_panel(params: DgpParams, replication: int = 0) -> Panel:
    """Draw one panel of ``n`` units over periods ``1..t_bar``.

    Pre-sample lags (before period 0) are untreated with no referendum.
    Cohort effect draws are kept in ``panel.meta``.
    """
    p = params
    rng = replication_rng(p.seed, replication)
    n, T, S = p.n, p.t_bar, p.s_bar
    sq, sr = np.sqrt(p.sigma2_q), np.sqrt(p.sigma2_r)
    a_q = rng.normal(0.0, sq, n)
    a_r = rng.normal(0.0, sr, n)
    tshape = T if p.common_time_effects else (n, T)
    b_q = np.broadcast_to(rng.normal(0.0, sq, tshape), (n, T))
    b_r = np.broadcast_to(rng.normal(0.0, sr, tshape), (n, T))
    theta0 = rng.normal(p.theta0_mean, np.sqrt(p.sigma2_0), T)
    theta1 = rng.normal(p.theta1_mean, np.sqrt(p.sigma2_1), T)
    q0 = rng.random(n) < p.p_q0
    r0 = rng.normal(p.mu_r, sr, n)
    u_q = rng.normal(0.0, np.sqrt(p.sigma2_uq), (n, T))
    u_r = rng.normal(0.0, np.sqrt(p.sigma2_ur), (n, T))
    v = rng.normal(0.0, np.sqrt(p.sigma2_v), (n, T))

    # Column j holds period j - S, so columns 0..S-1 are pre-sample lags.
    Q = np.zeros((n, T + S + 1), bool)
    D = np.zeros((n, T + S + 1), bool)
    Rm = np.full((n, T + S + 1), np.nan)
    Q[:, S] = q0
    Rm[q0, S] = r0[q0]
    D[:, S] = q0 & (r0 >= 0.0)
    rho_q, dl_q = np.array(p.rho_q), np.array(p.delta_q)
    rho_r, dl_r, gam = np.array(p.rho_r), np.array(p.delta_r), np.array(p.gamma)
    for t in range(1, T + 1):
        c = t + S
        lag = slice(c - S, c)
        dq = D[:, lag][:, ::-1].astype(float)
        qq = Q[:, lag][:, ::-1].astype(float)
        rej = qq * (1.0 - dq)
        latent = a_q + b_q[:, t - 1] + u_q[:, t - 1] + dq @ rho_q + rej @ dl_q
        held = latent > p.q_bar
        margin = a_r + b_r[:, t - 1] + u_r[:, t - 1] + dq @ rho_r + rej @ dl_r + (1.0 - qq) @ gam
        Q[:, c] = held
        Rm[held, c] = margin[held]
        D[:, c] = held & (margin >= 0.0)

    Qs, Ds, Rs = Q[:, S + 1:], D[:, S + 1:], Rm[:, S + 1:]
    n_held = Qs.sum(axis=1)
    r_bar = np.where(n_held > 0, np.nansum(Rs, axis=1) / np.maximum(n_held, 1), 0.0)
    rel = np.arange(T)[None, :] - np.arange(T)[:, None]
    M = np.where(rel >= 0, theta0[:, None] + theta1[:, None] * np.minimum(rel, p.cap), 0.0)
    Df = Ds.astype(float)
    y = Df @ M + p.phi * np.cumsum(np.where(Ds, Rs, 0.0), axis=1) + p.eta * r_bar[:, None] + v

    frame = pd.DataFrame({
        "unit": np.repeat(np.arange(1, n + 1), T),
        "period": np.tile(np.arange(1, T + 1), n),
        "q_held": Qs.ravel(), "r": Rs.ravel(), "y": y.ravel()})
    meta = {"theta0": theta0, "theta1": theta1, "q0": q0, "replication": int(replication)}
    return panel_from_frame(frame, cutoff=0.0, meta=meta)


def cohort_target(panel: Panel, weights: dict, tau: int, cap: int) -> float:
    """Weighted cohort effect at the cutoff implied by the drawn effect paths."""
    if tau < 0:
        return 0.0
    th0, th1 = panel.meta["theta0"], panel.meta["theta1"]
    total = 0.0
    for label, w in weights.items():
        gs = [int(x) for x in label.split("+")]
        total += w * np.mean([th0[g - 1] + min(tau, cap) * th1[g - 1] for g in gs])
    return float(total)


@dataclass
class McReport:
    taus: list
    true: list
    mean_est: list
    sd: list
    coverage: list
    mean_target: list
    mean_se: list
    pretest_nonrejection: float
    replications: int
    failures: int = 0
    runtime_sec: float = 0.0
    params: dict = field(default_factory=dict)
    per_rep: list = field(default_factory=list, repr=False)

    def plot_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"tau": self.taus, "true": self.true, "mean_est": self.mean_est,
                             "sd": self.sd})

    def to_dict(self, include_runtime: bool = True) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "per_rep"}
        if not include_runtime:
            out.pop("runtime_sec")
        return out


def _replicate(args) -> dict | None:
    params, r, cfg, k, tau_range, pre, cohorts = args
    try:
        panel = simulate_panel(params, r)
        es = event_study(panel, cohorts, k, tau_range, cfg)
        bws = {c.cohort_id: (c.est.h, c.est.b) for c in es.cohort_estimates if c.tau == 1}
        out = {"rep": r, "est": {}, "se": {}, "cover": {}, "target": {}}
        for tau, agg in es.aggregates.items():
            truth = true_theta(params, tau) if tau >= 0 else 0.0
            out["est"][tau] = agg.theta_agg
            out["se"][tau] = agg.se_agg
            out["cover"][tau] = bool(agg.ci[0] <= truth <= agg.ci[1])
            out["target"][tau] = cohort_target(panel, agg.weights, tau, params.cap)
        out["p_value"] = None
        if pre is not None:
            u, v, horizon = pre
            pt = pretrend_study(panel, cohorts, k, u, v, horizon, cfg, bws)
            out["p_value"] = pt.result.p_value
        return out
    except DynRDError as exc:
        log.warning("replication %d failed: %s", r, exc)
        return None


def monte_carlo(params: DgpParams, reps: int, cfg: EstimationConfig = EstimationConfig(),
                tau_range: tuple[int, int] = (-3, 5), k: int = 3,
                pretrend: tuple[int, int, int] | None = (3, 1, 5), test_alpha: float = 0.05,
                workers: int = 1, first_rep: int = 0, cohorts=None) -> McReport:
    """Simulate, estimate the event study and run the pre-trend test ``reps`` times.

    ``cohorts`` is any spec accepted by :func:`dynrd.aggregate.resolve_cohorts`.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    start = time.perf_counter()
    inner = replace(cfg, workers=1)
    jobs = [(params, r, inner, k, tau_range, pretrend, cohorts) for r in range(first_rep, first_rep + reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    ok = [x for x in results if x is not None]
    if not ok:
        raise RuntimeError("every replication failed")
    taus = list(range(tau_range[0], tau_range[1] + 1))

    def stat(key, tau, fn):
        vals = [x[key][tau] for x in ok if tau in x[key]]
        return float(fn(vals)) if vals else float("nan")

    sd = lambda v: np.std(v, ddof=1) if len(v) > 1 else 0.0  # noqa: E731
    pvals = [x["p_value"] for x in ok if x["p_value"] is not None]
    return McReport(
        taus=taus,
        true=[true_theta(params, t) if t >= 0 else 0.0 for t in taus],
        mean_est=[stat("est", t, np.mean) for t in taus],
        sd=[stat("est", t, sd) for t in taus],
        coverage=[stat("cover", t, np.mean) for t in taus],
        mean_target=[stat("target", t, np.mean) for t in taus],
        mean_se=[stat("se", t, np.mean) for t in taus],
        pretest_nonrejection=float(np.mean([p > test_alpha for p in pvals])) if pvals else float("nan"),
        replications=len(ok), failures=len(results) - len(ok),
        runtime_sec=time.perf_counter() - start, params=asdict(params), per_rep=ok)


@dataclass(frozen=True)
class SimpleDgp:
    """Cross-sectional dynamic design with a known effect.

    ``R ~ U(-1, 1)``; the focal outcome jumps by ``jump_level`` at the cutoff;
    a unit stays untreated after the focal period with a probability that is
    smooth in ``R`` apart from a jump at zero; among those units the trend
    jumps by ``jump_trend``.  The target is ``jump_level + jump_trend``.
    """

    n: int = 2000
    jump_level: float = 0.4
    jump_trend: float = -0.1
    sigma: float = 0.3
    seed: int = 0

    @property
    def theta(self) -> float:
        return self.jump_level + self.jump_trend

    def draw(self, replication: int = 0) -> RdVectors:
        rng = replication_rng(self.seed, replication)
        R = rng.uniform(-1.0, 1.0, self.n)
        above = (R >= 0).astype(float)
        Y = 0.5 + 0.8 * R - 0.6 * R ** 2 + self.jump_level * above + rng.normal(0, self.sigma, self.n)
        stay = rng.random(self.n) < 0.7 - 0.2 * R + 0.1 * above
        trend = (0.1 + 0.3 * R + 0.4 * R ** 2 + self.jump_trend * above
                 + rng.normal(0, self.sigma, self.n))
        D = stay.astype(float)
        return RdVectors(R, Y, trend * D, D, tau=1)


def simulate_pretrend_vectors(n: int, slope: float, seed: int = 0, replication: int = 0,
                              u: int = 3, v: int = 1, sigma: float = 0.3) -> PretrendVectors:
    """Two-group pre-period trends; ``slope`` per period separates the groups.

    With ``slope = 0`` both groups share the trend ``0.2 + 0.3 R`` and the
    common-trends null holds.
    """
    rng = replication_rng(seed, replication)
    R = rng.uniform(-1.0, 1.0, n)
    D = (rng.random(n) < 0.6 - 0.2 * R).astype(float)
    G = 1.0 - D
    dy = (u - v) * (0.2 + 0.3 * R + slope * G) + rng.normal(0, sigma, n)
    return PretrendVectors(R, dy * D, D, dy * G, G, u, v, 5)
