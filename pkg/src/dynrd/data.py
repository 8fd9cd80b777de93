"""Panel ingestion and cohort event samples."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import (BalanceError, ConsistencyError, DuplicateError, EmptyCohortError,
                     SchemaError)

log = logging.getLogger(__name__)

COLUMNS = ("unit", "period", "q_held", "r", "y")
DEFAULT_SCHEMA = {c: c for c in COLUMNS}

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


@dataclass(frozen=True)
class PanelRow:
    unit_id: object
    period: int
    q_held: bool
    r: float | None
    y: float


@dataclass
class Panel:
    """Long-format unit-by-period records sorted by ``(unit, period)``."""

    frame: pd.DataFrame
    cutoff: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def period_range(self) -> tuple[int, int]:
        p = self.frame["period"]
        return int(p.min()), int(p.max())

    @property
    def n_units(self) -> int:
        return int(self.frame["unit"].nunique())

    @property
    def balanced(self) -> bool:
        """True when every unit is observed in every period of the range."""
        t0, t1 = self.period_range
        return len(self.frame) == self.n_units * (t1 - t0 + 1)

    def rows(self) -> Iterable[PanelRow]:
        for rec in self.frame.itertuples(index=False):
            r = None if np.isnan(rec.r) else float(rec.r)
            yield PanelRow(rec.unit, int(rec.period), bool(rec.q_held), r, float(rec.y))

    @cached_property
    def wide(self) -> "_Wide":
        return _Wide.from_panel(self)


@dataclass
class _Wide:
    """Dense unit-by-period arrays; missing rows have ``present`` False."""

    units: np.ndarray
    t_min: int
    present: np.ndarray
    q: np.ndarray
    r: np.ndarray
    y: np.ndarray
    d: np.ndarray

    @classmethod
    def from_panel(cls, panel: Panel) -> "_Wide":
        f = panel.frame
        units, ui = np.unique(f["unit"].to_numpy(), return_inverse=True)
        t0, t1 = panel.period_range
        ti = f["period"].to_numpy() - t0
        shape = (units.size, t1 - t0 + 1)
        present = np.zeros(shape, bool)
        q = np.zeros(shape, bool)
        r = np.full(shape, np.nan)
        y = np.full(shape, np.nan)
        present[ui, ti] = True
        q[ui, ti] = f["q_held"].to_numpy()
        r[ui, ti] = f["r"].to_numpy()
        y[ui, ti] = f["y"].to_numpy()
        # No referendum means untreated in that period.
        d = q & (np.nan_to_num(r, nan=-np.inf) >= panel.cutoff)
        return cls(units, t0, present, q, r, y, d)

    def col(self, t: int) -> int:
        return t - self.t_min


def _parse_bool(s: pd.Series, name: str) -> np.ndarray:
    if s.dtype == bool:
        return s.to_numpy()
    txt = s.astype(str).str.strip().str.lower()
    bad = ~txt.isin(_TRUE | _FALSE)
    if bad.any():
        raise SchemaError(f"column {name!r} has non-boolean values, e.g. {s[bad].iloc[0]!r}",
                          missing=[])
    return txt.isin(_TRUE).to_numpy()


def _parse_real(s: pd.Series, name: str) -> np.ndarray:
    if pd.api.types.is_numeric_dtype(s) and not pd.api.types.is_bool_dtype(s):
        return s.to_numpy(dtype=float)
    out = pd.to_numeric(s, errors="coerce")
    bad = out.isna() & s.notna() & (s.astype(str).str.strip() != "")
    if bad.any():
        raise SchemaError(f"column {name!r} has non-numeric values, e.g. {s[bad].iloc[0]!r}",
                          missing=[])
    return out.to_numpy(dtype=float)


def panel_from_frame(df: pd.DataFrame, cutoff: float = 0.0,
                     schema: Mapping[str, str] | None = None, meta: dict | None = None) -> Panel:
    """Validate a long-format frame and return a sorted :class:`Panel`."""
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    missing = [schema[c] for c in COLUMNS if schema[c] not in df.columns]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}", missing=missing)

    period = _parse_real(df[schema["period"]], schema["period"])
    if np.isnan(period).any() or np.any(period != np.round(period)):
        raise SchemaError(f"column {schema['period']!r} must hold integers", missing=[])
    q = _parse_bool(df[schema["q_held"]], schema["q_held"])
    r = _parse_real(df[schema["r"]], schema["r"])
    y = _parse_real(df[schema["y"]], schema["y"])
    out = pd.DataFrame({"unit": df[schema["unit"]].to_numpy(), "period": period.astype(np.int64),
                        "q_held": q, "r": r, "y": y})

    stray = ~q & ~np.isnan(r)
    if stray.any():
        i = int(np.flatnonzero(stray)[0])
        raise ConsistencyError(
            f"vote margin present without a referendum (unit {out['unit'].iat[i]!r}, "
            f"period {out['period'].iat[i]})")
    absent = q & np.isnan(r)
    if absent.any():
        i = int(np.flatnonzero(absent)[0])
        raise ConsistencyError(
            f"referendum held but vote margin missing (unit {out['unit'].iat[i]!r}, "
            f"period {out['period'].iat[i]})")

    dup = out.duplicated(["unit", "period"], keep=False)
    if dup.any():
        pairs = sorted(set(map(tuple, out.loc[dup, ["unit", "period"]].to_numpy().tolist())))
        raise DuplicateError(f"duplicate (unit, period) pairs: {pairs[:5]}", duplicates=pairs)

    out = out.sort_values(["unit", "period"], kind="mergesort").reset_index(drop=True)
    return Panel(out, float(cutoff), dict(meta or {}))


def load_panel(path, schema: Mapping[str, str] | None = None, cutoff: float = 0.0) -> Panel:
    """Read a UTF-8 CSV panel with columns unit, period, q_held, r, y.

    Leading lines starting with ``#`` (metadata written by the CLI) are skipped.
    """
    path = Path(path)
    unit_col = {**DEFAULT_SCHEMA, **(schema or {})}["unit"]
    with open(path, encoding="utf-8") as fh:
        skip = 0
        for line in fh:
            if not line.startswith("#"):
                break
            skip += 1
    df = pd.read_csv(path, encoding="utf-8", dtype={unit_col: str}, keep_default_na=True,
                     skiprows=skip)
    return panel_from_frame(df, cutoff=cutoff, schema=schema, meta={"source": str(path)})


@dataclass
class EventSample:
    """Cohort cross-section around one focal period (or a pooled set)."""

    focal_periods: tuple[int, ...]
    k_clean: int
    tau_max: int
    k_pre: int
    unit_ids: np.ndarray
    cohort: np.ndarray
    R: np.ndarray
    outcomes: np.ndarray
    post_treated: np.ndarray
    dropped_units: list = field(default_factory=list)

    @property
    def n_units(self) -> int:
        return int(self.R.size)

    def y(self, s: int) -> np.ndarray:
        """Outcome in event time ``s`` (``Y_{g+s}``)."""
        if not -self.k_pre <= s <= self.tau_max:
            raise ValueError(f"event time {s} outside [-{self.k_pre}, {self.tau_max}]")
        return self.outcomes[:, s + self.k_pre]


def _one_cohort(panel: Panel, g: int, k: int, tau_max: int, k_pre: int,
                on_missing: str) -> EventSample:
    wide = panel.wide
    t_min, t_max = panel.period_range
    lo = g - max(k, k_pre)
    if lo < t_min or g + tau_max > t_max:
        raise BalanceError(
            f"cohort {g} needs periods {lo}..{g + tau_max} but the panel covers {t_min}..{t_max}")
    window = slice(wide.col(lo), wide.col(g + tau_max) + 1)
    hist = slice(wide.col(g - k), wide.col(g))
    outc = slice(wide.col(g - k_pre), wide.col(g + tau_max) + 1)
    post = slice(wide.col(g + 1), wide.col(g + tau_max) + 1)

    held = wide.q[:, wide.col(g)]
    clean = ~wide.d[:, hist].any(axis=1)
    complete = wide.present[:, window].all(axis=1) & np.isfinite(wide.y[:, outc]).all(axis=1)
    offending = held & clean & ~complete
    if offending.any():
        bad = wide.units[offending].tolist()
        if on_missing == "raise":
            raise BalanceError(f"cohort {g}: {len(bad)} unit(s) lack required periods", units=bad)
        log.info("cohort %s: dropping %d unit(s) with missing event-time rows", g, len(bad))
    keep = held & clean & complete
    if not keep.any():
        raise EmptyCohortError(f"cohort {g} is empty under the k={k} clean-history rule")
    return EventSample(
        focal_periods=(int(g),), k_clean=int(k), tau_max=int(tau_max), k_pre=int(k_pre),
        unit_ids=wide.units[keep], cohort=np.full(int(keep.sum()), int(g)),
        R=wide.r[keep, wide.col(g)] - panel.cutoff,
        outcomes=wide.y[keep][:, outc].copy(),
        post_treated=wide.d[keep][:, post].copy(),
        dropped_units=wide.units[offending].tolist())


def build_event_sample(panel: Panel, g, k: int, tau_max: int, k_pre: int = 0,
                       on_missing: str = "drop") -> EventSample:
    """Units with a referendum in ``g`` and no approval in the ``k`` prior periods.

    ``g`` may be a single period or an iterable of periods, in which case
    the per-period samples (each centred at the cutoff) are concatenated.
    Units lacking any required row are dropped (``on_missing="drop"``) or
    reported through a balance error (``on_missing="raise"``).
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    if tau_max < 0 or k_pre < 0:
        raise ValueError("tau_max and k_pre must be nonnegative")
    if on_missing not in ("drop", "raise"):
        raise ValueError("on_missing must be 'drop' or 'raise'")
    periods = [int(g)] if np.ndim(g) == 0 else sorted({int(x) for x in g})
    if not periods:
        raise EmptyCohortError("no focal periods given")
    parts = []
    for t in periods:
        try:
            parts.append(_one_cohort(panel, t, k, tau_max, k_pre, on_missing))
        except EmptyCohortError:
            if len(periods) == 1:
                raise
            log.info("pooled cohort: focal period %s is empty", t)
    if not parts:
        raise EmptyCohortError(f"pooled cohort {periods} is empty")
    if len(parts) == 1:
        out = parts[0]
        out.focal_periods = tuple(periods)
        return out
    ids = np.concatenate([s.unit_ids for s in parts])
    if np.unique(ids).size < ids.size:
        log.warning("pooled cohort %s contains units observed in several focal periods", periods)
    return EventSample(
        focal_periods=tuple(periods), k_clean=int(k), tau_max=int(tau_max), k_pre=int(k_pre),
        unit_ids=ids, cohort=np.concatenate([s.cohort for s in parts]),
        R=np.concatenate([s.R for s in parts]),
        outcomes=np.vstack([s.outcomes for s in parts]),
        post_treated=np.vstack([s.post_treated for s in parts]),
        dropped_units=[u for s in parts for u in s.dropped_units])


@dataclass
class RdVectors:
    """Estimator inputs for horizon ``tau``."""

    R: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    D: np.ndarray
    tau: int = 0

    def __post_init__(self):
        for name in ("R", "Y", "W", "D"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.R.size
        if any(getattr(self, a).shape != (n,) for a in ("Y", "W", "D")):
            raise ValueError("R, Y, W and D must be vectors of equal length")

    @property
    def n(self) -> int:
        return int(self.R.size)

    def take(self, idx) -> "RdVectors":
        return RdVectors(self.R[idx], self.Y[idx], self.W[idx], self.D[idx], self.tau)


def sharp_vectors(R, A, tau: int = 0) -> RdVectors:
    """Vectors under which the dynamic estimator reduces to a sharp contrast of ``A``."""
    R = np.asarray(R, dtype=float)
    return RdVectors(R, A, np.zeros(R.size), np.ones(R.size), tau)


def never_treated(sample: EventSample, tau: int) -> np.ndarray:
    """``prod_{s=1..tau} (1 - D_{g+s})`` as floats."""
    if not 0 <= tau <= sample.tau_max:
        raise ValueError(f"tau={tau} outside [0, {sample.tau_max}]")
    return (~sample.post_treated[:, :tau].any(axis=1)).astype(float)


def make_rd_vectors(sample: EventSample, tau: int) -> RdVectors:
    D = never_treated(sample, tau)
    if tau == 0:
        W = np.zeros(sample.n_units)
    else:
        W = (sample.y(tau) - sample.y(0)) * D
    return RdVectors(sample.R.copy(), sample.y(0).copy(), W, D, tau)


@dataclass
class PretrendVectors:
    """Inputs of the common-trends test: ``J = dY*D``, ``K = dY*G``, ``G = 1 - D``."""

    R: np.ndarray
    J: np.ndarray
    D: np.ndarray
    K: np.ndarray
    G: np.ndarray
    u: int
    v: int
    tau: int

    def swapped(self) -> "PretrendVectors":
        """Exchange the roles of the two groups."""
        return PretrendVectors(self.R, self.K, self.G, self.J, self.D, self.u, self.v, self.tau)

    def take(self, idx) -> "PretrendVectors":
        return PretrendVectors(self.R[idx], self.J[idx], self.D[idx], self.K[idx], self.G[idx],
                               self.u, self.v, self.tau)


def make_pretrend_vectors(sample: EventSample, u: int, v: int, tau: int) -> PretrendVectors:
    """Trend ``Y_{g-v} - Y_{g-u}`` split by the post-period treatment path."""
    if not (0 <= v < u <= sample.k_pre):
        raise BalanceError(f"pre-periods u={u}, v={v} need 0 <= v < u <= k_pre={sample.k_pre}")
    if tau < 1:
        raise ValueError("pre-trend horizon tau must be at least 1")
    D = never_treated(sample, tau)
    G = 1.0 - D
    dy = sample.y(-v) - sample.y(-u)
    return PretrendVectors(sample.R.copy(), dy * D, D, dy * G, G, int(u), int(v), int(tau))
