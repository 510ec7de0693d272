"""Command-line runner: TOML experiment configs in, JSON/CSV artifacts out."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from . import certificates as C
from . import estimators as E
from .lattice_geom import Box, GeometryError, make_frame
from .passage_core import BudgetExhausted, PassageError, QueryError
from .weight_field import (DistributionError, DimensionError, TwoPoint, WeightField,
                           distribution_from_dict)

SCHEMA_VERSION = 1
OUT_ENV = "FPPLAB_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EMPTY = 3
EXIT_COMPUTE = 4
EXIT_BUDGET = 5

log = logging.getLogger("fpplab")


class ConfigError(ValueError):
    pass


class EmptyPlotData(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

# name -> (type, default); a default of REQUIRED marks a mandatory key
REQUIRED = object()

_MU = {"mu_ref": ("mu", REQUIRED), "mu_N": ("int", None), "mu_samples": ("int", 200)}

PARAMS: dict[str, dict[str, tuple[str, Any]]] = {
    "mu": {"N_list": ("int_list", REQUIRED)},
    "chi": {"N_list": ("int_list", REQUIRED)},
    "xi": {"N_list": ("int_list", REQUIRED)},
    "chi_u_excess": {"N_list": ("int_list", REQUIRED), "chi_probe": ("float", REQUIRED), **_MU},
    "tail": {"N": ("int", REQUIRED), "side": ("side", REQUIRED), "a": ("float", None),
             "zeta": ("float", None), **_MU},
    "rate_curve": {"N": ("int", REQUIRED), "side": ("side", REQUIRED),
                   "zeta_grid": ("float_list", REQUIRED), **_MU},
    "slab_certify": {"N": ("int", REQUIRED), "a": ("float", REQUIRED), "M": ("int", 4),
                     "eps": ("float", 0.1), "instances": ("int", 1), **_MU},
    "bad_scan": {"N": ("float", REQUIRED), "m": ("int", REQUIRED), "M": ("int", 4),
                 "a": ("float", REQUIRED), "b": ("float", REQUIRED),
                 "chi_bar": ("float", REQUIRED), "eps": ("float", 0.1),
                 "K": ("float", None), "chi_bar_eps": ("float", None),
                 "decimate": ("bool", False), **_MU},
    "dark_scan": {"points": ("point_list", REQUIRED), "b": ("float", REQUIRED),
                  "K_hat": ("int", REQUIRED), "A": ("float", REQUIRED), **_MU},
    "face_profile": {"N": ("float", REQUIRED), "K": ("float", REQUIRED), "L": ("int", REQUIRED),
                     "chi_bar": ("float", REQUIRED), "eps": ("float", 0.1),
                     "window": ("int", None), **_MU},
    "block_chain_upper": {"N": ("int", REQUIRED), "zeta": ("float", REQUIRED),
                          "chi_hat": ("float", REQUIRED), "eps": ("float", 0.1),
                          "A": ("float", REQUIRED), "instances": ("int", 1), **_MU},
    "block_chain_lower": {"N": ("int", REQUIRED), "a": ("float", None), "zeta": ("float", None),
                          "chi_lower": ("float", REQUIRED), "instances": ("int", 1), **_MU},
    "exact_oracle": {"shape": ("int_list", REQUIRED), "source": ("point", None),
                     "target": ("point", None), "thresholds": ("float_list", [])},
}

SAMPLED = {"mu", "chi", "xi", "chi_u_excess", "tail", "rate_curve"}
TOP_KEYS = {"schema_version", "kind", "seed", "dimension", "n_samples", "direction",
            "workers", "out", "budget", "distribution", "params"}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    dimension: int
    distribution: Any
    direction: tuple[float, ...]
    n_samples: int | None
    params: dict
    workers: int = 1
    out: str | None = None
    budget: int | None = None
    raw: dict | None = None

    def field(self, replica: int = 0) -> WeightField:
        return WeightField(self.distribution, self.dimension, self.seed, replica)

    def echo(self) -> dict:
        """Config content that determines the results (no workers/out/budget)."""
        return {"kind": self.kind, "seed": self.seed, "dimension": self.dimension,
                "distribution": self.distribution.to_dict(),
                "direction": list(self.direction), "n_samples": self.n_samples,
                "params": self.params}


def _coerce(name: str, typ: str, val):
    def bad(what):
        raise ConfigError(f"params.{name}: expected {what}, got {val!r}")

    if typ == "int":
        if isinstance(val, bool) or not isinstance(val, int):
            bad("an integer")
        return val
    if typ == "float":
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            bad("a number")
        return float(val)
    if typ == "bool":
        if not isinstance(val, bool):
            bad("true/false")
        return val
    if typ == "side":
        if val not in ("upper", "lower"):
            bad("'upper' or 'lower'")
        return val
    if typ == "mu":
        if val == "estimate":
            return val
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
            bad("a positive number or 'estimate'")
        return float(val)
    if typ in ("int_list", "point"):
        if not isinstance(val, list) or not val or any(
                isinstance(v, bool) or not isinstance(v, int) for v in val):
            bad("a nonempty list of integers")
        return list(val)
    if typ == "float_list":
        if not isinstance(val, list) or any(
                isinstance(v, bool) or not isinstance(v, (int, float)) for v in val):
            bad("a list of numbers")
        return [float(v) for v in val]
    if typ == "point_list":
        if not isinstance(val, list) or not val:
            bad("a nonempty list of points")
        return [_coerce(name, "point", p) for p in val]
    raise AssertionError(typ)


def parse_config(data: dict, kind_hint: str | None = None) -> ExperimentConfig:
    """Validate a decoded config; every unknown or malformed key is an error."""
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    kind = data.get("kind", kind_hint)
    if kind_hint is not None and kind != kind_hint:
        raise ConfigError(f"config kind {kind!r} does not match subcommand {kind_hint!r}")
    if kind not in PARAMS:
        raise ConfigError(f"kind must be one of {sorted(PARAMS)}, got {kind!r}")
    seed = data.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be a non-negative 64-bit integer")
    dim = data.get("dimension", 2)
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 2:
        raise ConfigError("dimension must be an integer >= 2")
    if not isinstance(data.get("distribution"), dict):
        raise ConfigError("missing [distribution] table")
    try:
        dist = distribution_from_dict(dict(data["distribution"]))
        WeightField(dist, dim, seed)
    except (DistributionError, DimensionError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"distribution: {exc}") from None
    direction = data.get("direction", [1.0] + [0.0] * (dim - 1))
    if (not isinstance(direction, list) or len(direction) != dim
            or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in direction)):
        raise ConfigError(f"direction must be a list of {dim} numbers")
    if abs(math.hypot(*direction) - 1.0) > 1e-9:
        raise ConfigError("direction must be a unit vector")
    n = data.get("n_samples")
    if kind in SAMPLED:
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("n_samples must be a positive integer for this kind")
    elif n is not None and (isinstance(n, bool) or not isinstance(n, int)):
        raise ConfigError("n_samples must be an integer")
    workers = data.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    budget = data.get("budget")
    if budget is not None and (isinstance(budget, bool) or not isinstance(budget, int) or budget < 1):
        raise ConfigError("budget must be a positive integer")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a string")
    raw_params = data.get("params", {})
    if not isinstance(raw_params, dict):
        raise ConfigError("params must be a table")
    schema = PARAMS[kind]
    extra = set(raw_params) - set(schema)
    if extra:
        raise ConfigError(f"unknown params for kind {kind!r}: {sorted(extra)}")
    params = {}
    for name, (typ, default) in schema.items():
        if name in raw_params:
            params[name] = _coerce(name, typ, raw_params[name])
        elif default is REQUIRED:
            raise ConfigError(f"params.{name} is required for kind {kind!r}")
        else:
            params[name] = default
    if kind in ("tail", "block_chain_lower"):
        if (params["a"] is None) == (params["zeta"] is None):
            raise ConfigError("give exactly one of params.a and params.zeta")
    if kind == "exact_oracle" and not isinstance(dist, TwoPoint):
        raise ConfigError("exact_oracle needs a two_point distribution")
    if kind == "exact_oracle" and len(params["shape"]) != dim:
        raise ConfigError("exact_oracle shape must have one entry per dimension")
    return ExperimentConfig(kind, seed, dim, dist, tuple(float(c) for c in direction), n,
                            params, workers, out, budget, data)


def load_config(path: str | Path, kind_hint: str | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return parse_config(data, kind_hint)


# ---------------------------------------------------------------------------
# computation


@dataclass
class RunResult:
    result: dict
    tables: dict[str, list[dict]]
    status: int = EXIT_OK


def _mu_ref(cfg: ExperimentConfig, workers: int, budget) -> tuple[float, dict | None]:
    p = cfg.params
    if p["mu_ref"] != "estimate":
        return p["mu_ref"], None
    N = p["mu_N"] or int(p.get("N") or max(p.get("N_list") or [64]))
    est = E.estimate_time_constant(cfg.field(), cfg.direction, [N], p["mu_samples"],
                                   workers=workers, budget=budget)
    return est.mu_hat, est.to_dict()


def _instance_field(cfg: ExperimentConfig, i: int) -> WeightField:
    base = E.substream_base("instance", cfg.kind)
    return cfg.field(base + i)


def compute(cfg: ExperimentConfig, workers: int = 1, budget: int | None = None) -> RunResult:
    p, k, u = cfg.params, cfg.kind, cfg.direction
    field = cfg.field()
    frame = make_frame(u)
    if k == "mu":
        est = E.estimate_time_constant(field, u, p["N_list"], cfg.n_samples, workers, budget=budget)
        return RunResult(est.to_dict(), {"scales": est.rows()})
    if k in ("chi", "xi"):
        fn = E.estimate_fluctuation_exponent if k == "chi" else E.estimate_wandering_exponent
        est = fn(field, u, p["N_list"], cfg.n_samples, workers, budget=budget)
        return RunResult(est.to_dict(), {"regression": _regression_rows(est)})
    if k == "chi_u_excess":
        mu, mu_est = _mu_ref(cfg, workers, budget)
        est = E.estimate_restricted_mean_excess(field, u, p["chi_probe"], p["N_list"],
                                                cfg.n_samples, mu, workers, frame, budget)
        out = est.to_dict()
        out.update(mu_ref=mu, mu_estimate=mu_est)
        return RunResult(out, {"regression": _regression_rows(est)})
    if k == "tail":
        mu, mu_est = _mu_ref(cfg, workers, budget)
        kind, mag = ("a", p["a"]) if p["a"] is not None else ("zeta", p["zeta"])
        est = E.estimate_tail_probability(field, u, p["N"], p["side"], mag, mu, cfg.n_samples,
                                          kind, workers, budget=budget)
        out = est.to_dict()
        out.update(mu_ref=mu, mu_estimate=mu_est)
        return RunResult(out, {"tail": [{"threshold": est.threshold, "hits": est.hits,
                                         "n": est.n, "p_hat": est.p_hat,
                                         "ci_lo": est.ci[0], "ci_hi": est.ci[1]}]})
    if k == "rate_curve":
        mu, mu_est = _mu_ref(cfg, workers, budget)
        rc = E.estimate_rate_curve(field, u, p["N"], p["side"], p["zeta_grid"], mu,
                                   cfg.n_samples, workers, budget=budget)
        out = rc.to_dict()
        out.update(mu_ref=mu, mu_estimate=mu_est)
        return RunResult(out, {"rate_curve": rc.rows()})
    if k == "exact_oracle":
        ex = E.exact_tail_distribution(p["shape"], cfg.distribution, p["source"], p["target"])
        out = ex.to_dict()
        out["tails"] = [{"threshold": t, "upper": ex.prob_greater(t), "lower": ex.prob_less(t)}
                        for t in p["thresholds"]]
        return RunResult(out, {"pmf": [{"time": t, "probability": q}
                                       for t, q in zip(ex.support.tolist(), ex.pmf.tolist())]})
    mu, mu_est = _mu_ref(cfg, workers, budget)
    if k == "slab_certify":
        outs, rows = [], []
        for i in range(p["instances"]):
            f = _instance_field(cfg, i)
            sp = C.SlabParams(p["N"], p["a"], p["M"], u, frame, mu, p["eps"])
            o = C.slab_certificate(f, sp, budget)
            outs.append(o.to_dict())
            rows.append({"instance": i, "replica": f.replica, "outcome": o.kind,
                         "direct_T": o.direct_T, "bound": o.bound, "m": o.m, "side": o.side,
                         "A_size": len(o.A), "reached": o.reached,
                         "rechecked": o.verification.get("rechecked")})
        return RunResult({"kind": "slab_certify", "mu_ref": mu, "mu_estimate": mu_est,
                          "outcomes": outs}, {"instances": rows})
    if k == "bad_scan":
        scan = C.scan_bad_vertices(field, p["N"], p["m"], p["M"], p["a"], p["b"], u, frame, mu,
                                   p["chi_bar"], p["eps"], p["K"], p["chi_bar_eps"],
                                   p["decimate"], budget)
        rows = [{"z": " ".join(map(str, w.z)), "y": " ".join(map(str, w.y)),
                 "y_prime": " ".join(map(str, w.y_prime)), "restricted_time": w.restricted_time,
                 "threshold": w.threshold} for w in scan.witnesses]
        out = scan.to_dict()
        out.update(mu_ref=mu, mu_estimate=mu_est)
        return RunResult(out, {"witnesses": rows},
                         EXIT_BUDGET if scan.status == "aborted" else EXIT_OK)
    if k == "dark_scan":
        res = [C.is_dark_vertex(field, x, p["b"], p["K_hat"], p["A"], frame, mu, budget)
               for x in p["points"]]
        rows = [{"x": " ".join(map(str, r.x)), "dark": r.dark, "reason": r.reason,
                 "y": "" if r.y is None else " ".join(map(str, r.y)), "time": r.time}
                for r in res]
        return RunResult({"kind": "dark_scan", "mu_ref": mu, "mu_estimate": mu_est,
                          "count": sum(r.dark for r in res),
                          "outcomes": [r.to_dict() for r in res]}, {"dark": rows})
    if k == "face_profile":
        window = None
        if p["window"] is not None:
            window = Box((-p["window"],) * cfg.dimension, (p["window"],) * cfg.dimension)
        prof = C.face_deficit_profile(field, p["N"], p["K"], u, frame, mu, p["L"],
                                      p["chi_bar"], p["eps"], window, budget)
        out = prof.to_dict()
        out.update(mu_ref=mu, mu_estimate=mu_est)
        return RunResult(out, {"face_times": [{"i": i, "time": t} for i, t in enumerate(prof.times)],
                               "deficits": [{"b": str(b), "b_value": float(b), "count": c}
                                            for b, c in zip(prof.b_grid, prof.deficits)]})
    if k == "block_chain_upper":
        outs, rows = [], []
        for i in range(p["instances"]):
            f = _instance_field(cfg, i)
            r = C.block_event_check(f, p["N"], p["zeta"], p["chi_hat"], p["eps"], p["A"], mu, budget)
            outs.append(r.to_dict())
            rows.append({"instance": i, "all_events": all(r.events), "confined": r.confined,
                         "implied_lower_bound": r.implied_lower_bound, "actual_T": r.actual_T,
                         "hypotheses_hold": r.hypotheses_hold, "chain_holds": r.chain_holds})
        return RunResult({"kind": "block_chain_upper", "mu_ref": mu, "mu_estimate": mu_est,
                          "outcomes": outs}, {"blocks": rows})
    if k == "block_chain_lower":
        outs, rows = [], []
        kind, mag = ("a", p["a"]) if p["a"] is not None else ("zeta", p["zeta"])
        for i in range(p["instances"]):
            f = _instance_field(cfg, i)
            r = C.lower_tail_block_chain(f, p["N"], mag, p["chi_lower"], mu, kind, u, budget)
            outs.append(r.to_dict())
            rows.append({"instance": i, "conjunction": r.conjunction, "J": r.J,
                         "deviation": r.deviation, "target_deviation": r.target_deviation,
                         "direct_T": r.direct_T})
        return RunResult({"kind": "block_chain_lower", "mu_ref": mu, "mu_estimate": mu_est,
                          "outcomes": outs}, {"blocks_lower": rows})
    raise ConfigError(f"unhandled kind {k!r}")


def _regression_rows(est: E.ExponentEstimate) -> list[dict]:
    return [{"log_N": x, "log_stat": y} for x, y in zip(est.log_N, est.log_stat)]


# ---------------------------------------------------------------------------
# plot data

_REG_COLUMNS = {"chi": "log_var", "xi": "log_mean_deviation", "chi_u_excess": "log_mean_excess"}
PLOT_KINDS = set(_REG_COLUMNS) | {"rate_curve", "mu", "exact_oracle", "face_profile", "tail"}


def emit_plotdata(result: dict, kind: str) -> dict[str, Any]:
    """Tidy CSV tables (name -> rows) and JSON sidecars (name -> dict) for plotting."""
    if not result:
        raise EmptyPlotData("empty result set")
    files: dict[str, Any] = {}
    if kind in _REG_COLUMNS:
        reg = result.get("regression", {})
        pairs = list(zip(reg.get("log_N", []), reg.get("log_stat", [])))
        if not pairs:
            raise EmptyPlotData(f"no regression points in the {kind} result")
        col = _REG_COLUMNS[kind]
        files[f"plot_{kind}.csv"] = [{"log_N": x, col: y} for x, y in pairs]
        files[f"plot_{kind}_fit.json"] = {"slope": reg.get("slope"),
                                          "intercept": reg.get("intercept"),
                                          "exponent_hat": result.get("exponent_hat"),
                                          "ci": [result.get("ci_low"), result.get("ci_high")]}
    elif kind == "rate_curve":
        rows = [{"zeta": z, "p_hat": t["p_hat"], "ci_lo": t["ci"][0], "ci_hi": t["ci"][1],
                 "neg_log_p_normalized": v}
                for z, t, v in zip(result.get("zeta_grid", []), result.get("tails", []),
                                   result.get("normalized", []))]
        if not rows:
            raise EmptyPlotData("rate curve has no grid points")
        files["plot_rate_curve.csv"] = rows
    elif kind == "mu":
        rows = [{"N": n, "mean_per_N": m, "stderr": s}
                for n, m, s in zip(result.get("N_list", []), result.get("mean_per_N", []),
                                   result.get("stderr", []))]
        if not rows:
            raise EmptyPlotData("no scales in the mu result")
        files["plot_mu.csv"] = rows
    elif kind == "exact_oracle":
        rows = [{"time": t, "probability": q}
                for t, q in zip(result.get("support", []), result.get("pmf", []))]
        if not rows:
            raise EmptyPlotData("empty pmf")
        files["plot_exact_oracle.csv"] = rows
    elif kind == "face_profile":
        w = result.get("witness", {})
        rows = [{"b": b, "deficit_count": c}
                for b, c in zip(w.get("b_grid", []), w.get("deficits", []))]
        if not rows:
            raise EmptyPlotData("empty b grid")
        files["plot_face_profile.csv"] = rows
    elif kind == "tail":
        files["plot_tail.csv"] = [{"threshold": result["threshold"], "p_hat": result["p_hat"],
                                   "ci_lo": result["ci"][0], "ci_hi": result["ci"][1]}]
    else:
        raise EmptyPlotData(f"kind {kind!r} has no plot data")
    return files


def loglog_svg(xs, ys, title: str, slope=None, intercept=None) -> str:
    """A bare-bones scatter (plus fitted line) as standalone SVG text."""
    w, h, pad = 360, 260, 40
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (w - 2 * pad)

    def sy(y):
        return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="12">{title}</text>',
             f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>']
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="black"/>')
    if slope is not None and intercept is not None:
        parts.append(f'<line x1="{sx(x0):.2f}" y1="{sy(slope * x0 + intercept):.2f}" '
                     f'x2="{sx(x1):.2f}" y2="{sy(slope * x1 + intercept):.2f}" stroke="red"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# serialization


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(v) -> str:
    v = _clean(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# headers for tables that may legitimately have no rows
EMPTY_HEADERS = {"witnesses": ["z", "y", "y_prime", "restricted_time", "threshold"]}


def to_csv(rows: list[dict], header: list[str] | None = None) -> str:
    buf = io.StringIO()
    if not rows and not header:
        return ""
    header = list(rows[0]) if rows else header
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_cell(r.get(c)) for c in header])
    return buf.getvalue()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str, written: list[Path]):
    path.write_bytes(text.encode("utf-8"))
    written.append(path)


def write_plotdata(result: dict, kind: str, out: Path, written: list[Path], svg: bool):
    files = emit_plotdata(result, kind)
    for name, content in files.items():
        if name.endswith(".csv"):
            _write(out / name, to_csv(content), written)
        else:
            _write(out / name, to_json(content), written)
    if svg and kind in _REG_COLUMNS:
        reg = result["regression"]
        _write(out / f"plot_{kind}.svg",
               loglog_svg(reg["log_N"], reg["log_stat"], kind, reg.get("slope"),
                          reg.get("intercept")), written)


# ---------------------------------------------------------------------------
# entry points


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _setup_logging(level: str, logfile: Path | None) -> list[logging.Handler]:
    log.setLevel(logging.DEBUG)
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(message)s")
    handlers: list[logging.Handler] = []
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(getattr(logging, level.upper(), logging.INFO))
    err.setFormatter(fmt)
    handlers.append(err)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w", encoding="utf-8")
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(fmt)
        handlers.append(fh)
    for h in handlers:
        log.addHandler(h)
    return handlers


def _teardown_logging(handlers):
    for h in handlers:
        log.removeHandler(h)
        h.close()


def run(config_path: str, kind_hint: str | None = None, out: str | None = None,
        workers: int | None = None, budget: int | None = None, log_level: str = "INFO",
        svg: bool = False) -> int:
    """Validate, compute and write artifacts; returns the process exit status."""
    try:
        cfg = load_config(config_path, kind_hint)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out or os.environ.get(OUT_ENV) or cfg.out or "fpplab-out")
    workers = workers or cfg.workers
    budget = budget or cfg.budget
    out_dir.mkdir(parents=True, exist_ok=True)
    handlers = _setup_logging(log_level, out_dir / "run.log")
    started = _now()
    written: list[Path] = []
    status = EXIT_OK
    try:
        log.info("fpplab %s: kind=%s seed=%d workers=%d", __version__, cfg.kind, cfg.seed, workers)
        try:
            res = compute(cfg, workers, budget)
            status = res.status
        except BudgetExhausted as exc:
            log.error("budget exhausted: %s", exc)
            status = EXIT_BUDGET
            return status
        except (PassageError, QueryError, GeometryError, C.CertificateError,
                E.EstimationError, DistributionError, ValueError) as exc:
            log.error("computation failed: %s", exc)
            status = EXIT_COMPUTE
            return status
        doc = {"schema_version": SCHEMA_VERSION, "tool_version": __version__,
               "config": cfg.echo(), "result": res.result}
        _write(out_dir / "results.json", to_json(doc), written)
        for name, rows in res.tables.items():
            _write(out_dir / f"{name}.csv", to_csv(rows, EMPTY_HEADERS.get(name)), written)
        if cfg.kind in PLOT_KINDS:
            try:
                write_plotdata(_clean(res.result), cfg.kind, out_dir, written, svg)
            except EmptyPlotData as exc:
                log.warning("no plot data written: %s", exc)
        if status == EXIT_BUDGET:
            log.error("scan aborted by the expansion budget")
        log.info("wrote %d artifacts to %s", len(written), out_dir)
        return status
    finally:
        _teardown_logging(handlers)
        _write_manifest(out_dir, config_path, started, written, status)


def _write_manifest(out_dir: Path, config_path: str, started: str, written: list[Path],
                    status: int):
    files = written + [out_dir / "run.log"]
    manifest = {"tool_version": __version__,
                "config_sha256": _sha256(Path(config_path)),
                "started": started, "finished": _now(), "exit_status": status,
                "artifacts": [{"path": p.name, "sha256": _sha256(p), "bytes": p.stat().st_size}
                              for p in files if p.exists()]}
    (out_dir / "manifest.json").write_text(to_json(manifest), encoding="utf-8")


def plotdata_command(results_path: str, out: str | None, svg: bool) -> int:
    try:
        doc = json.loads(Path(results_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read results: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = doc.get("result") or {}
    kind = (doc.get("config") or {}).get("kind", "")
    out_dir = Path(out or os.environ.get(OUT_ENV) or Path(results_path).parent)
    try:
        files = emit_plotdata(result, kind)
    except EmptyPlotData as exc:
        print(f"empty plot data: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    write_plotdata(result, kind, out_dir, written, svg)
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpplab", description="First-passage percolation experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", help=f"output directory (env {OUT_ENV} also works)")
        p.add_argument("--workers", type=int, help="worker threads")
        p.add_argument("--budget", type=int, help="max settled vertices per search")
        p.add_argument("--log-level", default="INFO")
        p.add_argument("--svg", action="store_true", help="also write log-log SVG panels")

    common(sub.add_parser("run", help="run whatever kind the config names"))
    for kind in PARAMS:
        common(sub.add_parser(kind, help=f"run the {kind} experiment"))
    common(sub.add_parser("oracle", help="exact enumeration (exact_oracle)"))
    v = sub.add_parser("validate", help="check a config without computing")
    v.add_argument("--config", required=True)
    pd = sub.add_parser("plotdata", help="re-emit plot data from results.json")
    pd.add_argument("results")
    pd.add_argument("--out")
    pd.add_argument("--svg", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"ok: kind={cfg.kind}")
        return EXIT_OK
    if args.command == "plotdata":
        return plotdata_command(args.results, args.out, args.svg)
    hint = {"run": None, "oracle": "exact_oracle"}.get(args.command, args.command)
    if args.workers is not None and args.workers < 1:
        print("config error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.config, hint, args.out, args.workers, args.budget, args.log_level, args.svg)


if __name__ == "__main__":
    sys.exit(main())
