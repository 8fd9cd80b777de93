"""Command-line interface: ``dynrd {estimate,simulate,mc,test-ct}``.

Settings come from built-in defaults, then an optional YAML/JSON config
file, then flags (flags win).  Every output embeds the resolved settings,
their hash, the seed and the package version; wall-clock information is
written separately to ``run_info.json`` so the other outputs are
byte-reproducible.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .aggregate import EstimationConfig, event_study, pretrend_study
from .data import load_panel
from .errors import ConfigError, DataError, DynRDError, EstimationError
from .localpoly import Kernel
from .sim import DgpParams, monte_carlo, simulate_panel

log = logging.getLogger("dynrd")

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4


@dataclass
class RunConfig:
    command: str = "estimate"
    input: str | None = None
    schema: dict = field(default_factory=dict)
    cutoff: float = 0.0
    k: int = 3
    k_pre: int = 3
    tau_max: int = 5
    kernel: str = "triangular"
    j_star: int = 3
    alpha: float = 0.05
    h: float | None = None
    b: float | None = None
    cohorts: object = None
    weights: str = "probability"
    min_per_side: int = 50
    u: int = 3
    v: int = 1
    horizon: int = 5
    seed: int = 0
    reps: int = 50
    dgp: dict = field(default_factory=dict)
    out_dir: str = "out"
    workers: int = 1

    def validate(self) -> "RunConfig":
        def need(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        need(self.command in ("estimate", "simulate", "mc", "test-ct"),
             f"unknown command {self.command!r}")
        need(self.kernel in ("triangular", "uniform", "epanechnikov"),
             f"unknown kernel {self.kernel!r}")
        for name in ("k", "j_star", "reps", "workers", "min_per_side", "horizon"):
            val = getattr(self, name)
            need(isinstance(val, int) and not isinstance(val, bool) and val >= 1,
                 f"{name} must be a positive integer, got {val!r}")
        for name in ("k_pre", "tau_max", "v", "seed"):
            val = getattr(self, name)
            need(isinstance(val, int) and not isinstance(val, bool) and val >= 0,
                 f"{name} must be a nonnegative integer, got {val!r}")
        need(self.u > self.v, "pre-period indices need u > v")
        need(isinstance(self.alpha, (int, float)) and 0 < self.alpha <= 1,
             "alpha must lie in (0, 1]")
        for name in ("h", "b"):
            val = getattr(self, name)
            need(val is None or (isinstance(val, (int, float)) and val > 0),
                 f"{name} must be positive")
        need(self.weights in ("probability", "equal"), "weights must be 'probability' or 'equal'")
        need(isinstance(self.schema, dict) and isinstance(self.dgp, dict),
             "schema and dgp must be mappings")
        if self.command in ("estimate", "test-ct"):
            need(self.input is not None, f"{self.command} needs an input CSV (--input)")
        self.cohorts = parse_cohorts(self.cohorts)
        try:
            self.dgp_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid dgp settings: {exc}") from None
        return self

    def estimation(self) -> EstimationConfig:
        return EstimationConfig(kernel=Kernel(self.kernel), j_star=self.j_star, alpha=self.alpha,
                                h=self.h, b=self.b, weights=self.weights,
                                min_per_side=self.min_per_side, workers=self.workers)

    def dgp_params(self) -> DgpParams:
        return DgpParams(**{**self.dgp, "seed": self.seed})

    def resolved(self) -> dict:
        out = asdict(self)
        out.pop("out_dir")
        if self.command in ("simulate", "mc"):
            out["dgp"] = {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in asdict(self.dgp_params()).items()}
        return out


def parse_cohorts(spec):
    """Accept None/"all", ``"block:m"``, ``{"block": m}`` or ``"4,5;6+7"`` style lists."""
    if spec is None or spec == "all":
        return None
    if isinstance(spec, dict):
        if set(spec) != {"block"} or not isinstance(spec["block"], int) or spec["block"] < 1:
            raise ConfigError("cohort spec mapping must be {'block': positive integer}")
        return dict(spec)
    if isinstance(spec, str):
        s = spec.strip()
        if s.startswith("block:"):
            return parse_cohorts({"block": _int(s[6:], "cohort block")})
        groups = []
        for part in s.replace(";", ",").split(","):
            part = part.strip()
            if part:
                grp = [_int(x, "cohort period") for x in part.split("+")]
                groups.append(grp[0] if len(grp) == 1 else grp)
        spec = groups
    if isinstance(spec, (list, tuple)):
        out = []
        for g in spec:
            if isinstance(g, (list, tuple)):
                out.append([_int(x, "cohort period") for x in g])
            else:
                out.append(_int(g, "cohort period"))
        if not out:
            raise ConfigError("cohort list is empty")
        return out
    raise ConfigError(f"unrecognised cohort spec {spec!r}")


def _int(x, what: str) -> int:
    try:
        return int(str(x).strip())
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {x!r}") from None


_FLAG_MAP = {"seed": "seed", "out_dir": "out_dir", "kernel": "kernel", "jstar": "j_star",
             "alpha": "alpha", "h": "h", "b": "b", "k": "k", "tau_max": "tau_max",
             "kpre": "k_pre", "workers": "workers", "input": "input", "cutoff": "cutoff",
             "cohorts": "cohorts", "weights": "weights", "reps": "reps", "u": "u", "v": "v",
             "horizon": "horizon", "n": "n", "t_bar": "t_bar"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--kernel", choices=["triangular", "uniform", "epanechnikov"])
    common.add_argument("--jstar", type=int, help="nearest neighbours for variance estimation")
    common.add_argument("--alpha", type=float)
    common.add_argument("--h", type=float, help="main bandwidth (skips selection)")
    common.add_argument("--b", type=float, help="pilot bandwidth (skips selection)")
    common.add_argument("--k", type=int, help="clean-history length for cohorts")
    common.add_argument("--tau-max", type=int)
    common.add_argument("--kpre", type=int, help="pre-periods in the event study")
    common.add_argument("--workers", type=int)
    common.add_argument("--cohorts", help='"all", "block:3" or e.g. "4,5,6+7"')
    common.add_argument("--weights", choices=["probability", "equal"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dynrd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    est = sub.add_parser("estimate", parents=[common], help="event study from a panel CSV")
    est.add_argument("--input")
    est.add_argument("--cutoff", type=float)
    sim = sub.add_parser("simulate", parents=[common], help="write one simulated panel")
    sim.add_argument("--n", type=int)
    sim.add_argument("--t-bar", type=int)
    mc = sub.add_parser("mc", parents=[common], help="Monte Carlo study")
    mc.add_argument("--reps", type=int)
    mc.add_argument("--n", type=int)
    mc.add_argument("--t-bar", type=int)
    mc.add_argument("--u", type=int)
    mc.add_argument("--v", type=int)
    mc.add_argument("--horizon", type=int)
    ct = sub.add_parser("test-ct", parents=[common], help="common-trends pre-test")
    ct.add_argument("--input")
    ct.add_argument("--cutoff", type=float)
    ct.add_argument("--u", type=int)
    ct.add_argument("--v", type=int)
    ct.add_argument("--horizon", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
    raw = {str(k).replace("-", "_"): v for k, v in raw.items()}
    dgp = dict(raw.pop("dgp", {}) or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for flag, key in _FLAG_MAP.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if key in ("n", "t_bar"):
            dgp[key] = val
        else:
            raw[key] = val
    raw["dgp"] = dgp
    raw["command"] = args.command
    return RunConfig(**raw).validate()


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serialisable: {type(x)}")


class Writer:
    """Writes outputs that all carry the same reproducibility record."""

    def __init__(self, cfg: RunConfig):
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        resolved = cfg.resolved()
        self.meta = {"schema_version": SCHEMA_VERSION, "tool": "dynrd", "version": __version__,
                     "command": cfg.command, "config_hash": config_hash(resolved),
                     "seed": cfg.seed, "config": resolved}
        self.written: list[str] = []

    def json(self, name: str, payload: dict):
        doc = {"metadata": self.meta, **payload}
        path = self.out / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n",
                        encoding="utf-8")
        self.written.append(str(path))

    def csv(self, name: str, frame: pd.DataFrame):
        path = self.out / name
        header = "# " + json.dumps(self.meta, sort_keys=True, default=_jsonable) + "\n"
        path.write_text(header + frame.to_csv(index=False), encoding="utf-8")
        self.written.append(str(path))

    def run_info(self, started: float):
        info = {"started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
                "elapsed_sec": time.time() - started, "config_hash": self.meta["config_hash"],
                "files": self.written}
        (self.out / "run_info.json").write_text(json.dumps(info, indent=2) + "\n",
                                                encoding="utf-8")


def cmd_estimate(cfg: RunConfig) -> int:
    panel = load_panel(cfg.input, cfg.schema or None, cfg.cutoff)
    es = event_study(panel, cfg.cohorts, cfg.k, (-cfg.k_pre, cfg.tau_max), cfg.estimation())
    w = Writer(cfg)
    w.csv("event_study.csv", es.table)
    w.csv("cohorts.csv", es.cohort_table())
    w.json("event_study.json", {
        "table": es.table.to_dict(orient="records"),
        "weights": {str(t): a.weights for t, a in es.aggregates.items()},
        "notices": es.notices,
        "bandwidth_overrides": {"h": cfg.h, "b": cfg.b}})
    w.json("bandwidths.json", {"diagnostics": {c: {str(t): d for t, d in dg.items()}
                                               for c, dg in es.diagnostics.items()}})
    return w


def cmd_simulate(cfg: RunConfig):
    params = cfg.dgp_params()
    panel = simulate_panel(params)
    w = Writer(cfg)
    frame = panel.frame.copy()
    frame["q_held"] = frame["q_held"].astype(int)
    w.csv("panel.csv", frame)
    w.json("simulate.json", {"n_rows": len(frame), "theta0": panel.meta["theta0"],
                             "theta1": panel.meta["theta1"]})
    return w


def cmd_mc(cfg: RunConfig):
    params = cfg.dgp_params()
    rep = monte_carlo(params, cfg.reps, cfg.estimation(), (-cfg.k_pre, cfg.tau_max), cfg.k,
                      (cfg.u, cfg.v, cfg.horizon), cfg.alpha, cfg.workers, cohorts=cfg.cohorts)
    w = Writer(cfg)
    w.json("mc_report.json", {"report": rep.to_dict(include_runtime=False)})
    w.csv("mc_plot.csv", rep.plot_frame())
    return w


def cmd_test_ct(cfg: RunConfig):
    panel = load_panel(cfg.input, cfg.schema or None, cfg.cutoff)
    st = pretrend_study(panel, cfg.cohorts, cfg.k, cfg.u, cfg.v, cfg.horizon, cfg.estimation())
    w = Writer(cfg)
    w.json("pretrend.json", {**st.result.to_dict(), "per_cohort": st.per_cohort,
                             "notices": st.notices,
                             "test": "asymptotic Wald statistic, chi-square(2) reference"})
    return w


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "mc": cmd_mc,
            "test-ct": cmd_test_ct}


def _fail(code: int, err: dict, out_dir: str | None) -> int:
    doc = json.dumps({"exit_code": code, **err}, sort_keys=True, default=_jsonable)
    print(doc, file=sys.stderr)
    if out_dir:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(doc + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    out_dir = getattr(args, "out_dir", None)
    try:
        cfg = resolve_config(args)
        out_dir = cfg.out_dir
        writer = COMMANDS[cfg.command](cfg)
        writer.run_info(started)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.to_dict(), out_dir)
    except DataError as exc:
        return _fail(EXIT_DATA, exc.to_dict(), out_dir)
    except FileNotFoundError as exc:
        return _fail(EXIT_DATA, {"error": "io_error", "message": str(exc)}, out_dir)
    except (EstimationError, DynRDError) as exc:
        return _fail(EXIT_ESTIMATION, exc.to_dict(), out_dir)
    for path in writer.written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
