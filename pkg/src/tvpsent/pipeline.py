"""Stage-by-stage pipeline writing plot-ready CSV artifacts.

Every stage reads only the files written by earlier stages (plus the input
files), so any suffix of the pipeline can be rerun on its own. Randomness
comes from the root seed: stage ``s`` uses
``SeedSequence(seed, spawn_key=(STAGE_KEYS[s],))``.

Output layout under the run directory::

    comments_filtered.csv  market_clean.csv            ingest
    sentiment.csv  sentiment_summary.csv  panel.csv     sentiment
    adf.csv  lagselect.csv  granger.csv                 tests
    draws/*.npy  draws/draws_meta.json                  estimate
    summary.csv                                         summarize
    irf_trace.csv  irf_profile.csv                      irf
    inputs/comments.csv  inputs/market.csv ...          simulate
    manifest.json                                       every stage
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .config import STAGE_KEYS, RunConfig
from .econ_tests import CRITERIA, adf_test, pairwise_granger, select_var_lag
from .ingestion import (IngestError, filter_comments, load_comments, load_market, load_panel,
                        align_panel, parse_date, write_comments, write_market, write_panel)
from .posterior import PROFILE_FIELDS, SUMMARY_FIELDS, TRACE_FIELDS, summarize, tv_irf
from .sentiment import WeightScheme, daily_bullishness, summarize_sentiment, write_sentiment
from .synthetic import DgpSpec, simulate, write_synthetic_inputs
from .tvpvar import McmcConfig, PosteriorDraws, PriorSpec, TvpVarSpec, run_mcmc

log = logging.getLogger(__name__)

STAGES = ("ingest", "sentiment", "adf", "lagselect", "granger", "estimate", "summarize", "irf")
DRAW_FAMILIES = ("beta", "a", "h", "sig_beta", "sig_a", "sig_h")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STAGE_KEYS[stage],)))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path} is missing; run the stage that produces it first")
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# draw store

def save_draws(draws: PosteriorDraws, directory: Path) -> None:
    """One .npy per state family plus a JSON sidecar; no timestamps, so byte-stable."""
    directory.mkdir(parents=True, exist_ok=True)
    for fam in DRAW_FAMILIES:
        np.save(directory / f"{fam}.npy", getattr(draws, fam))
    np.save(directory / "y.npy", draws.y)
    meta = {
        "spec": asdict(draws.spec), "prior": asdict(draws.prior), "cfg": asdict(draws.cfg),
        "dates": [d.isoformat() for d in draws.dates] if draws.dates is not None else None,
        "intercept_means": None if draws.intercept_means is None else draws.intercept_means.tolist(),
        "n_draws": draws.n_draws,
    }
    (directory / "draws_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_draws(directory: Path) -> PosteriorDraws:
    directory = Path(directory)
    meta_path = directory / "draws_meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{meta_path} is missing; run the estimate stage first")
    meta = json.loads(meta_path.read_text())
    arrs = {fam: np.load(directory / f"{fam}.npy") for fam in DRAW_FAMILIES}
    dates = tuple(parse_date(d) for d in meta["dates"]) if meta["dates"] is not None else None
    means = None if meta["intercept_means"] is None else np.array(meta["intercept_means"])
    return PosteriorDraws(TvpVarSpec(**meta["spec"]), PriorSpec(**meta["prior"]), McmcConfig(**meta["cfg"]),
                          dates=dates, y=np.load(directory / "y.npy"), intercept_means=means, **arrs)


# ---------------------------------------------------------------------------
# pipeline

class Pipeline:
    """Runs stages against one output directory and keeps ``manifest.json`` current."""

    def __init__(self, cfg: RunConfig, out_dir=None):
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg["output.dir"])

    # paths -----------------------------------------------------------------
    def path(self, name: str) -> Path:
        return self.out / name

    def input_path(self, kind: str) -> Path:
        """Configured input, else the file written by the simulate stage."""
        p = self.cfg[f"paths.{kind}"]
        return Path(p) if p is not None else self.out / "inputs" / f"{kind}.csv"

    @property
    def run_id(self) -> str:
        return hashlib.sha1(self.cfg.to_json().encode()).hexdigest()[:12]

    # manifest ---------------------------------------------------------------
    def _manifest(self) -> dict:
        p = self.path("manifest.json")
        if p.is_file():
            m = json.loads(p.read_text())
            if m.get("run_id") == self.run_id:
                return m
        return {"run_id": self.run_id, "seed": self.cfg.seed, "config": self.cfg.values,
                "versions": _versions(), "stages": {}}

    def _record(self, stage: str, wall: float, outputs: Sequence[str], extra: dict | None = None) -> None:
        m = self._manifest()
        m["stages"][stage] = {"wall_time_s": round(wall, 3), "outputs": list(outputs),
                              "finished": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
                              **(extra or {})}
        self.path("manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True, default=str) + "\n")

    def run(self, stage: str) -> None:
        fn: Callable = getattr(self, f"stage_{stage}")
        self.out.mkdir(parents=True, exist_ok=True)
        log.info("stage %s", stage)
        t0 = time.perf_counter()
        try:
            outputs, extra = fn()
        except IngestError as exc:
            exc.stage = stage
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        self._record(stage, time.perf_counter() - t0, outputs, extra)

    def run_all(self) -> None:
        """Every stage in order; simulated inputs are generated first when no input paths are set."""
        if self.cfg["paths.comments"] is None and self.cfg["paths.market"] is None:
            self.run("simulate")
        for stage in STAGES:
            self.run(stage)

    # stages ------------------------------------------------------------------
    def stage_simulate(self):
        v = self.cfg.values
        seed = int(stage_rng(self.cfg.seed, "simulate").integers(2 ** 63))
        dgp = DgpSpec(n=3, p=v["simulate.p"], T=v["simulate.T"] + 1, intercept=True,
                      sig_beta=v["simulate.sig_beta"], sig_a=v["simulate.sig_a"],
                      sig_h=v["simulate.sig_h"], seed=seed)
        sim = simulate(dgp)
        paths = write_synthetic_inputs(sim, self.out / "inputs", seed=seed)
        truth = self.out / "inputs" / "truth_hyper.csv"
        rows = [(f"{fam}[{i + 1}]", float(np.sqrt(x))) for fam, arr in
                (("sigma_beta", sim.sig_beta), ("sigma_a", sim.sig_a), ("sigma_h", sim.sig_h))
                for i, x in enumerate(arr)]
        write_csv(truth, ("parameter", "true_value"), rows)
        outs = [str(p.relative_to(self.out)) for p in paths.values()] + [str(truth.relative_to(self.out))]
        return outs, {"dgp_seed": seed}

    def stage_ingest(self):
        comments = load_comments(self.input_path("comments"))
        bars = load_market(self.input_path("market"))
        kept = filter_comments(comments, self.cfg["filter.max_len"], self.cfg["filter.top_k"])
        write_comments(self.path("comments_filtered.csv"), kept)
        write_market(self.path("market_clean.csv"), bars)
        return ["comments_filtered.csv", "market_clean.csv"], {"comments_in": len(comments),
                                                               "comments_kept": len(kept)}

    def stage_sentiment(self):
        kept = load_comments(self.path("comments_filtered.csv"))
        bars = load_market(self.path("market_clean.csv"))
        series = daily_bullishness(kept, WeightScheme(self.cfg["sentiment.weights"]))
        write_sentiment(self.path("sentiment.csv"), series)
        panel = align_panel(series, bars)
        write_panel(self.path("panel.csv"), panel)
        s = summarize_sentiment(series)
        write_csv(self.path("sentiment_summary.csv"), ("mean", "sd", "skewness", "min", "max", "count"),
                  [(s.mean, s.sd, s.skewness, s.min, s.max, s.count)])
        return ["sentiment.csv", "panel.csv", "sentiment_summary.csv"], {"panel_rows": len(panel)}

    def _panel(self):
        return load_panel(self.path("panel.csv"))

    def stage_adf(self):
        panel = self._panel()
        rows = []
        for name, spec in self.cfg.adf_specs().items():
            r = adf_test(getattr(panel, name), spec)
            rows.append((name, spec.triple(r.lags), r.t_stat, r.p_value, r.nobs,
                         r.reject[0.01], r.reject[0.05], r.reject[0.10]))
        write_csv(self.path("adf.csv"), ("variable", "spec", "t_stat", "p_value", "nobs",
                                         "reject_1pct", "reject_5pct", "reject_10pct"), rows)
        return ["adf.csv"], None

    def stage_lagselect(self):
        tab = select_var_lag(self._panel().matrix(self.cfg["model.order"]), self.cfg["lagselect.max_lag"])
        rows = []
        for r in tab.rows():
            chosen = ";".join(c for c in CRITERIA if tab.selected[c] == r["lag"])
            rows.append((r["lag"], r["logl"], r["lr"], r["fpe"], r["aic"], r["sc"], r["hq"], chosen))
        write_csv(self.path("lagselect.csv"), ("lag", "logl", "lr", "fpe", "aic", "sc", "hq", "selected_by"), rows)
        return ["lagselect.csv"], {"selected": tab.selected}

    def var_lag(self) -> int:
        lag = self.cfg["var.lag"]
        if lag != "auto":
            return int(lag)
        crit = self.cfg["var.lag_criterion"]
        for r in read_csv(self.path("lagselect.csv")):
            if crit in r["selected_by"].split(";"):
                if int(r["lag"]) < 1:
                    raise ValueError(f"{crit} selects lag 0; set var.lag explicitly")
                return int(r["lag"])
        raise ValueError(f"lagselect.csv has no lag selected by {crit}")

    def stage_granger(self):
        lag = self.cfg["granger.lag"] or self.var_lag()
        order = self.cfg["model.order"]
        res = pairwise_granger(self._panel().matrix(order), order, lag)
        write_csv(self.path("granger.csv"), ("hypothesis", "cause", "effect", "lag", "f_stat", "p_value",
                                             "df_num", "df_den"),
                  [(r.hypothesis, r.cause, r.effect, r.lag, r.f_stat, r.p_value, r.df[0], r.df[1]) for r in res])
        return ["granger.csv"], {"lag": lag}

    def stage_estimate(self):
        lag = self.var_lag()
        spec = self.cfg.tvp_spec(lag)
        draws = run_mcmc(self._panel(), spec, self.cfg.prior_spec(), self.cfg.mcmc_config(),
                         rng=stage_rng(self.cfg.seed, "estimate"))
        save_draws(draws, self.path("draws"))
        return ["draws/"], {"lag": lag, "n_draws": draws.n_draws,
                            "sampler_wall_time_s": round(draws.meta["wall_time_s"], 3)}

    def stage_summarize(self):
        summ = summarize(load_draws(self.path("draws")))
        write_csv(self.path("summary.csv"), SUMMARY_FIELDS, (r.row() for r in summ.rows))
        return ["summary.csv"], None

    def _irf_dates(self, draws: PosteriorDraws) -> list[int]:
        sel = self.cfg["irf.dates"]
        if not sel:
            return list(range(draws.nobs))
        index = {d: i for i, d in enumerate(draws.dates or ())}
        out = []
        for d in sel:
            if isinstance(d, int):
                out.append(d)
            else:
                key = parse_date(d)
                if key not in index:
                    raise ValueError(f"irf date {d} is not in the estimation sample")
                out.append(index[key])
        return out

    def stage_irf(self):
        draws = load_draws(self.path("draws"))
        trace_h = self.cfg["irf.horizons"]
        mode, stride = self.cfg["irf.mode"], self.cfg["irf.draw_stride"]
        trace = tv_irf(draws, trace_h, None, mode, stride)
        write_csv(self.path("irf_trace.csv"), TRACE_FIELDS, trace.trace_rows())
        prof = tv_irf(draws, range(self.cfg["irf.max_horizon"] + 1), self._irf_dates(draws), mode, stride)
        write_csv(self.path("irf_profile.csv"), PROFILE_FIELDS, prof.profile_rows())
        return ["irf_trace.csv", "irf_profile.csv"], {"shock_size": trace.shock_size.tolist(),
                                                      "draws_used": trace.meta["draws_used"]}


def _versions() -> dict:
    out = {"tvpsent": __version__, "python": sys.version.split()[0], "platform": platform.platform()}
    for mod in ("numpy", "scipy", "numba", "statsmodels"):
        try:
            out[mod] = __import__(mod).__version__
        except ImportError:
            out[mod] = None
    return out
