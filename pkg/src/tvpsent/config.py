"""Run configuration: a flat key-value file with dotted namespaces.

The file is TOML. Keys may be written flat (``mcmc.iterations = 11000``) or
as tables (``[mcmc]`` then ``iterations = 11000``); both normalize to the
same dotted keys. Unknown keys are errors. See ``DEFAULTS`` for every key.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli

from .econ_tests import CRITERIA, AdfSpec
from .sentiment import WeightScheme
from .tvpvar import INTERCEPT_MODES, McmcConfig, PriorSpec, TvpVarSpec

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths.comments": None,
    "paths.market": None,
    "filter.max_len": 150,
    "filter.top_k": 50,
    "sentiment.weights": "unit",
    "adf.sent": [1, 0, 1],
    "adf.rv": [1, 0, 2],
    "adf.dturn": [1, 0, 4],
    "adf.max_lags": 8,
    "lagselect.max_lag": 8,
    "var.lag": 3,
    "var.lag_criterion": "AIC",
    "granger.lag": None,
    "model.intercept": "time-varying",
    "model.order": ["sent", "rv", "dturn"],
    "prior.beta_shape": 20.0,
    "prior.beta_rate": 1e-4,
    "prior.a_shape": 4.0,
    "prior.a_rate": 1e-4,
    "prior.h_shape": 4.0,
    "prior.h_rate": 1e-4,
    "prior.init_mean": 0.0,
    "prior.init_var": 10.0,
    "mcmc.iterations": 11000,
    "mcmc.burn_in": 1000,
    "mcmc.thin": 1,
    "irf.horizons": [1, 7, 14],
    "irf.dates": [],
    "irf.max_horizon": 20,
    "irf.mode": "per-draw",
    "irf.draw_stride": 1,
    "simulate.T": 400,
    "simulate.p": 3,
    "simulate.sig_beta": 5e-6,
    "simulate.sig_a": 2.5e-5,
    "simulate.sig_h": 2.5e-5,
    "output.dir": "out",
}

#: stage name -> spawn key for seed derivation
STAGE_KEYS = {"estimate": 1, "irf": 2, "simulate": 3}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def tvp_spec(self, lag: int) -> TvpVarSpec:
        order = tuple(self.values["model.order"])
        return TvpVarSpec(len(order), lag, order, self.values["model.intercept"])

    def prior_spec(self) -> PriorSpec:
        v = self.values
        m, s = v["prior.init_mean"], v["prior.init_var"]
        return PriorSpec(v["prior.beta_shape"], v["prior.beta_rate"], v["prior.a_shape"],
                         v["prior.a_rate"], v["prior.h_shape"], v["prior.h_rate"],
                         m, s, m, s, m, s)

    def mcmc_config(self) -> McmcConfig:
        v = self.values
        return McmcConfig(v["mcmc.iterations"], v["mcmc.burn_in"], v["mcmc.thin"], self.seed)

    def adf_specs(self) -> dict[str, AdfSpec]:
        out = {}
        for name in ("sent", "rv", "dturn"):
            c, t, L = self.values[f"adf.{name}"]
            out[name] = AdfSpec(bool(c), bool(t), None if L == "auto" else int(L),
                                self.values["adf.max_lags"])
        return out

    def to_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, indent=2)


def normalize(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Fill defaults and check every key; all problems are reported together."""
    flat = _flatten(raw)
    errors = [f"unknown key {k!r}" for k in sorted(flat) if k not in DEFAULTS]
    v = dict(DEFAULTS)
    v.update({k: val for k, val in flat.items() if k in DEFAULTS})

    def need(key, ok, what):
        if not ok(v[key]):
            errors.append(f"{key}: expected {what}, got {v[key]!r}")
            return False
        return True

    need("seed", lambda x: _is_int(x) and 0 <= x < 2 ** 64, "an unsigned 64-bit integer")
    for key in ("paths.comments", "paths.market"):
        if need(key, lambda x: x is None or isinstance(x, str), "a path string") and v[key] is not None:
            p = Path(v[key])
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.is_file():
                errors.append(f"{key}: file not found: {p}")
            v[key] = str(p)
    for key in ("filter.max_len", "filter.top_k", "mcmc.iterations", "mcmc.thin",
                "irf.draw_stride", "lagselect.max_lag", "simulate.T", "simulate.p"):
        need(key, lambda x: _is_int(x) and x >= 1, "a positive integer")
    for key in ("mcmc.burn_in", "adf.max_lags", "irf.max_horizon"):
        need(key, lambda x: _is_int(x) and x >= 0, "a nonnegative integer")
    need("sentiment.weights", lambda x: x in WeightScheme.KINDS, f"one of {WeightScheme.KINDS}")
    for name in ("sent", "rv", "dturn"):
        need(f"adf.{name}", lambda x: isinstance(x, list) and len(x) == 3 and x[0] in (0, 1)
             and x[1] in (0, 1) and (x[2] == "auto" or (_is_int(x[2]) and x[2] >= 0))
             and not (x[1] == 1 and x[0] == 0),
             "[C, T, L] with C, T in {0, 1}, L >= 0 or 'auto', and no trend without intercept")
    need("var.lag", lambda x: x == "auto" or (_is_int(x) and x >= 1), "an integer >= 1 or 'auto'")
    need("var.lag_criterion", lambda x: x in CRITERIA, f"one of {CRITERIA}")
    need("granger.lag", lambda x: x is None or (_is_int(x) and x >= 1), "an integer >= 1")
    need("model.intercept", lambda x: x in INTERCEPT_MODES, f"one of {INTERCEPT_MODES}")
    need("model.order", lambda x: isinstance(x, list) and sorted(x) == ["dturn", "rv", "sent"],
         "a permutation of ['sent', 'rv', 'dturn']")
    for key in [k for k in DEFAULTS if k.startswith("prior.")]:
        lower_ok = (lambda x: _is_num(x)) if key == "prior.init_mean" else (lambda x: _is_num(x) and x > 0)
        need(key, lower_ok, "a number" if key == "prior.init_mean" else "a positive number")
    for key in ("simulate.sig_beta", "simulate.sig_a", "simulate.sig_h"):
        need(key, lambda x: _is_num(x) and x >= 0, "a nonnegative number")
    if all(_is_int(v[k]) for k in ("mcmc.iterations", "mcmc.burn_in", "mcmc.thin")):
        try:
            McmcConfig(v["mcmc.iterations"], v["mcmc.burn_in"], v["mcmc.thin"])
        except ValueError as exc:
            errors.append(f"mcmc: {exc}")
    need("irf.horizons", lambda x: isinstance(x, list) and len(x) > 0 and all(_is_int(h) and h >= 1 for h in x),
         "a nonempty list of horizons >= 1 (trace mode)")
    need("irf.dates", lambda x: isinstance(x, list) and all(_is_int(d) or isinstance(d, str) for d in x),
         "a list of sample indices or ISO dates")
    need("irf.mode", lambda x: x in ("per-draw", "posterior-mean"), "'per-draw' or 'posterior-mean'")
    need("output.dir", lambda x: isinstance(x, str), "a path string")
    if errors:
        raise ConfigError(errors)
    return RunConfig(v)


def validate_config(path=None) -> RunConfig:
    """Load and normalize a config file; ``None`` gives the defaults."""
    if path is None:
        return normalize({})
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return normalize(raw, base_dir=path.parent)


def dump_flat(values: dict) -> str:
    """Serialize a flat key dict back to the file format."""
    lines = []
    for key in sorted(values):
        val = values[key]
        if val is None:
            continue
        lines.append(f"{key} = {json.dumps(val)}")
    return "\n".join(lines) + "\n"
