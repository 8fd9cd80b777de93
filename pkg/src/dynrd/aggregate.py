"""Cohort aggregation and event-study assembly."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .bandwidth import BandwidthConfig, select_bandwidths
from .data import (EventSample, Panel, build_event_sample, make_pretrend_vectors, make_rd_vectors,
                   sharp_vectors)
from .errors import DataError, EstimationError, NoCohortsError
from .estimator import DENOM_TOL, NnConfig, RobustEstimate, estimate, normal_ci
from .localpoly import SIDES, TRIANGULAR, Kernel, as_kernel
from .pretrend import PretrendResult, pooled_joint_test, pretrend_side

log = logging.getLogger(__name__)

TABLE_COLUMNS = ["tau", "estimate", "se", "ci_lo", "ci_hi", "n_units", "h", "b"]


@dataclass(frozen=True)
class EstimationConfig:
    kernel: Kernel = TRIANGULAR
    j_star: int = 3
    alpha: float = 0.05
    h: float | None = None
    b: float | None = None
    denom_tol: float = DENOM_TOL
    weights: str = "probability"
    min_per_side: int = 50
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", as_kernel(self.kernel))
        if self.weights not in ("probability", "equal"):
            raise ValueError("weights must be 'probability' or 'equal'")
        for name in ("h", "b"):
            x = getattr(self, name)
            if x is not None and not x > 0:
                raise ValueError(f"{name} override must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        NnConfig(self.j_star)

    @property
    def nn(self) -> NnConfig:
        return NnConfig(self.j_star)

    @property
    def bandwidth(self) -> BandwidthConfig:
        return BandwidthConfig(kernel=self.kernel, j_star=self.j_star,
                               min_per_side=self.min_per_side, denom_tol=self.denom_tol)


@dataclass
class CohortEstimate:
    cohort_id: str
    g_periods: tuple
    tau: int
    est: RobustEstimate
    n_units: int


@dataclass
class AggregateResult:
    tau: int
    theta_agg: float
    se_agg: float
    weights: dict
    ci: tuple = (np.nan, np.nan)


def cohort_weights(counts: Mapping[str, int], tau: int | None = None,
                   scheme: str = "probability") -> dict:
    """Shares ``n_g / sum n`` (or equal shares) over the eligible cohorts."""
    if not counts:
        raise NoCohortsError(f"no eligible cohorts for tau={tau}")
    if any(c <= 0 for c in counts.values()):
        raise ValueError("cohort counts must be positive")
    if scheme == "equal":
        return {g: 1.0 / len(counts) for g in counts}
    total = float(sum(counts.values()))
    return {g: c / total for g, c in counts.items()}


def aggregate_tau(estimates: Sequence[CohortEstimate], weights: Mapping[str, float],
                  alpha: float = 0.05) -> AggregateResult:
    """Fixed-weight combination of independent cohort estimates."""
    by_id = {e.cohort_id: e for e in estimates}
    if set(by_id) != set(weights):
        raise KeyError(f"weights {sorted(weights)} do not match cohorts {sorted(by_id)}")
    taus = {e.tau for e in estimates}
    if len(taus) != 1:
        raise ValueError("estimates must share one tau")
    keys = sorted(by_id)
    w = np.array([weights[k] for k in keys])
    theta = float(np.sum(w * np.array([by_id[k].est.theta_bc for k in keys])))
    var = float(np.sum(w ** 2 * np.array([by_id[k].est.v_bc for k in keys])))
    return AggregateResult(taus.pop(), theta, float(np.sqrt(var)), dict(weights),
                           normal_ci(theta, var, alpha))


def cohort_label(periods: Iterable[int]) -> str:
    return "+".join(str(int(g)) for g in sorted(periods))


def resolve_cohorts(panel: Panel, cohorts, k: int, k_pre: int) -> list[tuple[int, ...]]:
    """Expand a cohort spec into groups of focal periods.

    ``None`` or ``"all"`` gives every focal period with enough history;
    ``{"block": m}`` pools runs of ``m`` consecutive such periods; a
    sequence may mix single periods and lists of periods to pool.
    """
    t_min, t_max = panel.period_range
    eligible = list(range(t_min + max(k, k_pre), t_max + 1))
    if cohorts is None or cohorts == "all":
        return [(g,) for g in eligible]
    if isinstance(cohorts, Mapping):
        m = int(cohorts.get("block", 1))
        if m < 1:
            raise ValueError("cohort block size must be positive")
        return [tuple(eligible[i:i + m]) for i in range(0, len(eligible), m)]
    out = []
    for c in cohorts:
        grp = (int(c),) if np.ndim(c) == 0 else tuple(sorted(int(x) for x in c))
        out.append(grp)
    return out


def _bandwidths(vec, cfg: EstimationConfig) -> tuple[float, float, dict]:
    if cfg.h is not None and cfg.b is not None:
        return cfg.h, cfg.b, {"source": "override"}
    bw = select_bandwidths(vec, cfg.bandwidth)
    h = cfg.h if cfg.h is not None else bw.h_mse
    b = cfg.b if cfg.b is not None else bw.b_mse
    return h, b, bw.diagnostics


def _cohort_job(args) -> tuple[list, list, dict, EventSample | None]:
    panel, grp, k, k_pre, taus, cfg = args
    label = cohort_label(grp)
    t_max = panel.period_range[1]
    tau_top = min(max(taus), t_max - max(grp))
    notices, rows, diags = [], [], {}
    try:
        sample = build_event_sample(panel, grp, k, max(tau_top, 0), k_pre)
    except DataError as exc:
        notices.append(f"cohort {label} dropped: {exc}")
        return rows, notices, diags, None
    for tau in taus:
        if tau > tau_top or tau < -k_pre:
            notices.append(f"cohort {label} dropped at tau={tau}: outside observed window")
            continue
        vec = make_rd_vectors(sample, tau) if tau >= 1 else sharp_vectors(sample.R, sample.y(tau), tau)
        try:
            h, b, diag = _bandwidths(vec, cfg)
            est = estimate(vec, h, b, cfg.kernel, cfg.nn, cfg.alpha, cfg.denom_tol)
        except EstimationError as exc:
            notices.append(f"cohort {label} dropped at tau={tau}: {exc}")
            continue
        diags[tau] = diag
        rows.append(CohortEstimate(label, tuple(grp), tau, est, sample.n_units))
    return rows, notices, diags, sample


@dataclass
class EventStudy:
    table: pd.DataFrame
    aggregates: dict
    cohort_estimates: list
    diagnostics: dict = field(default_factory=dict, repr=False)
    samples: dict = field(default_factory=dict, repr=False)
    notices: list = field(default_factory=list)

    def cohort_table(self) -> pd.DataFrame:
        recs = [{"cohort": c.cohort_id, "tau": c.tau, "n_units": c.n_units, **c.est.to_dict()}
                for c in self.cohort_estimates]
        return pd.DataFrame(recs)


def event_study(panel: Panel, cohorts=None, k: int = 3, tau_range: tuple[int, int] = (-3, 5),
                cfg: EstimationConfig = EstimationConfig()) -> EventStudy:
    """Per-cohort estimates for each horizon, aggregated across cohorts.

    Horizons ``tau >= 1`` use the dynamic estimator; ``tau <= 0`` use the
    sharp contrast of ``Y_{g+tau}``.
    """
    tau_lo, tau_hi = int(tau_range[0]), int(tau_range[1])
    if tau_lo > tau_hi:
        raise ValueError("tau_range must be increasing")
    k_pre = max(0, -tau_lo)
    taus = list(range(tau_lo, tau_hi + 1))
    groups = resolve_cohorts(panel, cohorts, k, k_pre)
    jobs = [(panel, grp, k, k_pre, taus, cfg) for grp in groups]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_cohort_job, jobs))
    else:
        results = [_cohort_job(j) for j in jobs]

    estimates, notices, diags, samples = [], [], {}, {}
    for grp, (rows, notes, dg, sample) in zip(groups, results):
        estimates += rows
        notices += notes
        if sample is not None:
            diags[cohort_label(grp)] = dg
            samples[cohort_label(grp)] = sample
    for msg in notices:
        log.info(msg)

    aggregates, records = {}, []
    for tau in taus:
        ests = [e for e in estimates if e.tau == tau]
        if not ests:
            notices.append(f"no cohort estimates at tau={tau}")
            continue
        w = cohort_weights({e.cohort_id: e.n_units for e in ests}, tau, cfg.weights)
        agg = aggregate_tau(ests, w, cfg.alpha)
        aggregates[tau] = agg
        records.append({"tau": tau, "estimate": agg.theta_agg, "se": agg.se_agg,
                        "ci_lo": agg.ci[0], "ci_hi": agg.ci[1],
                        "n_units": int(sum(e.n_units for e in ests)),
                        "h": float(sum(w[e.cohort_id] * e.est.h for e in ests)),
                        "b": float(sum(w[e.cohort_id] * e.est.b for e in ests))})
    if not records:
        raise NoCohortsError("no cohort produced an estimate")
    table = pd.DataFrame.from_records(records, columns=TABLE_COLUMNS)
    return EventStudy(table, aggregates, estimates, diags, samples, notices)


@dataclass
class PretrendStudy:
    result: PretrendResult
    per_cohort: list
    notices: list = field(default_factory=list)


def pretrend_study(panel: Panel, cohorts=None, k: int = 3, u: int = 3, v: int = 1,
                   horizon: int = 5, cfg: EstimationConfig = EstimationConfig(),
                   bandwidths: Mapping[str, tuple[float, float]] | None = None) -> PretrendStudy:
    """Cohort-level pre-trend statistics pooled with cohort-size weights.

    Each cohort uses the bandwidths of its ``tau = 1`` dynamic estimate unless
    ``bandwidths`` or the config supply them.
    """
    t_max = panel.period_range[1]
    groups = [g for g in resolve_cohorts(panel, cohorts, k, u) if max(g) + horizon <= t_max]
    parts, notices, per, failures = [], [], [], []
    for grp in groups:
        label = cohort_label(grp)
        try:
            sample = build_event_sample(panel, grp, k, horizon, u)
            vec = make_pretrend_vectors(sample, u, v, horizon)
            if bandwidths is not None and label in bandwidths:
                h, b = bandwidths[label]
            else:
                h, b, _ = _bandwidths(make_rd_vectors(sample, 1), cfg)
            sides = [pretrend_side(vec, s, h, b, cfg.kernel, cfg.nn, cfg.denom_tol) for s in SIDES]
        except (DataError, EstimationError) as exc:
            notices.append(f"cohort {label} dropped from pre-trend test: {exc}")
            failures.append(exc)
            continue
        parts.append((sample.n_units, sides[0], sides[1]))
        per.append({"cohort": label, "n_units": sample.n_units, "h": h, "b": b,
                    "pi_plus": sides[0].pi_bc, "pi_minus": sides[1].pi_bc,
                    "se_plus": float(np.sqrt(sides[0].v_bc)),
                    "se_minus": float(np.sqrt(sides[1].v_bc))})
    if not parts:
        # surface the most specific cause: estimation failures over sample-construction ones
        est_fail = [e for e in failures if isinstance(e, EstimationError)]
        if est_fail:
            raise est_fail[0]
        if failures:
            raise failures[0]
        raise NoCohortsError("no cohort supports the pre-trend test")
    w = cohort_weights({str(i): p[0] for i, p in enumerate(parts)}, None, cfg.weights)
    res = pooled_joint_test([(w[str(i)], p[1], p[2]) for i, p in enumerate(parts)], u, v)
    return PretrendStudy(res, per, notices)
