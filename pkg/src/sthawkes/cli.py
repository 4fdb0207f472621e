"""Command-line surface: ingest, fit, predict, flags, map, simulate.

Configuration comes from a JSON file (--config) overridden by command-line
flags; every JSON artifact embeds the resolved config and seed so a run can
be reproduced from its outputs alone. Exit codes: 0 success, 1 model or
convergence failure, 2 input error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import backend
from .earlywarn import compare_methods, hawkes_flags, naive_flags, write_flags
from .forecast import (aggregate_percentiles, point_predictive,
                       posterior_predictive, simulate_forward, spatial_risk_map,
                       write_ensemble, write_percentiles, write_risk_map)
from .ingest import (EventGrid, RegionSet, aggregate_counts, assign_regions,
                     parse_events, read_grid, set_warmup, write_grid)
from .intensity import ModelParams
from .ioutil import InputError, read_json, write_csv, write_json
from .kernels import SpatialKernel, build_weight_matrix
from .mcmc import McmcConfig, PosteriorChains, read_chains, sample_posterior, summarize, write_chains
from .mle import fit_mle

DEFAULTS = {
    "events": None,
    "centroids": None,
    "columns": {},
    "policy": "fail",
    "countries": [],
    "event_types": [],
    "start": None,
    "end": None,
    "t_max": 3,
    "metric": "euclidean",
    "squared_distance": False,
    "mode": "bayes",
    "chains": 4,
    "draws": 1000,
    "warmup_draws": 1000,
    "thin": 1,
    "init": "mle",
    "allow_nonconverged": False,
    "grid": None,
    "fit": None,
    "horizon": 3,
    "n_samples": 100,
    "window": 12,
    "q": 0.975,
    "k_sd": 2.0,
    "roll_before_median": False,
    "month": "median-over-window",
    "mu": 0.5,
    "alpha": 0.5,
    "beta": 0.4,
    "sigma": 1.0,
    "months": 60,
    "start_month": "2010-01",
    "seed": 0,
    "out": ".",
    "threads": None,
}

_LIST_KEYS = ("countries", "event_types")


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            loaded = read_json(path)
        except json.JSONDecodeError as exc:
            raise InputError(f"config file is not valid JSON: {path}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in _LIST_KEYS:
        if isinstance(cfg[key], str):
            cfg[key] = [v for v in cfg[key].split(",") if v]
    if cfg["threads"] is None:
        env = os.environ.get("STHAWKES_THREADS")
        if env:
            try:
                cfg["threads"] = int(env)
            except ValueError:
                raise InputError(f"STHAWKES_THREADS must be an integer, got {env!r}") from None
    return cfg


def config_echo(cfg: dict) -> dict:
    # threads only schedules work, it never changes results, so it stays out
    # of the echo to keep outputs byte-identical across thread counts
    return {k: v for k, v in cfg.items() if k != "threads"}


def _apply_threads(cfg: dict) -> None:
    threads = cfg.get("threads")
    if threads and backend.NUMBA_ENABLED:
        import warnings

        import numba

        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # threading-layer probe chatter
                numba.set_num_threads(int(threads))
        except ValueError:
            pass  # fewer cores than requested; numba keeps its own cap


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise InputError(f"missing required settings: {', '.join(missing)}")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _slug(value: str) -> str:
    s = re.sub(r"[^A-Za-z0-9]+", "-", value.strip().lower()).strip("-")
    return s or "all"


def _kernel(cfg: dict) -> SpatialKernel:
    return SpatialKernel(sigma=1.0, metric=cfg["metric"],
                         squared_distance=bool(cfg["squared_distance"]))


def regions_for_grid(regions: RegionSet, grid: EventGrid) -> RegionSet:
    """Restrict and reorder a centroid set to the grid's column order."""
    index = regions.index_of()
    missing = [r for r in grid.region_ids if r not in index]
    if missing:
        raise InputError(f"centroid file is missing regions: {missing[:5]}")
    xy = np.array([regions.xy[index[r]] for r in grid.region_ids])
    return RegionSet(ids=tuple(grid.region_ids), xy=xy)


def _load_grid_and_regions(cfg: dict):
    _require(cfg, "grid", "centroids")
    grid = read_grid(cfg["grid"])
    regions = regions_for_grid(RegionSet.from_csv(cfg["centroids"]), grid)
    return grid, regions


def _load_fit_artifact(path: str):
    """A chains CSV or an MLE JSON, detected by extension."""
    p = Path(path)
    if not p.exists():
        raise InputError(f"fit artifact not found: {p}")
    if p.suffix == ".json":
        doc = read_json(p)
        params = doc.get("params")
        if not isinstance(params, dict):
            raise InputError(f"fit JSON has no params object: {p}")
        return ModelParams(mu=params["mu"], alpha=params["alpha"],
                           beta=params["beta"], sigma=params["sigma"],
                           t_max=int(params.get("t_max", 3)))
    return read_chains(p)


def _as_chains(fit, seed: int) -> PosteriorChains:
    if isinstance(fit, PosteriorChains):
        return fit
    samples = fit.as_array().reshape(1, 1, 4)
    return PosteriorChains(samples=samples, accept_rate=np.array([np.nan]),
                           rhat=np.full(4, np.nan), ess=np.full(4, np.nan),
                           seed=seed)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(cfg: dict) -> int:
    _require(cfg, "events", "centroids", "start", "end")
    regions = RegionSet.from_csv(cfg["centroids"])
    parsed = parse_events(cfg["events"], column_map=cfg["columns"] or None,
                          policy=cfg["policy"])
    events = assign_regions(parsed.records, regions)

    countries = cfg["countries"] or [None]
    event_types = cfg["event_types"] or [None]
    out = _out_dir(cfg)
    written = []
    for country, etype in itertools.product(countries, event_types):
        grid = aggregate_counts(events, regions, cfg["start"], cfg["end"],
                                event_type=etype, country=country)
        if cfg["t_max"] >= grid.n_months:
            raise InputError(
                f"t_max {cfg['t_max']} needs more than {grid.n_months} months of data")
        grid = set_warmup(grid, cfg["t_max"])
        if country is None and etype is None:
            name = "grid.csv"
        else:
            name = f"grid-{_slug(country or 'all')}-{_slug(etype or 'all')}.csv"
        write_grid(grid, out / name)
        written.append(name)
    write_json(out / "ingest.json", {
        "files": written,
        "n_events": len(events),
        "n_skipped": len(parsed.skipped),
        "config": config_echo(cfg),
        "seed": cfg["seed"],
    })
    print(f"wrote {len(written)} grid file(s) to {out}")
    return 0


def cmd_fit(cfg: dict) -> int:
    grid, regions = _load_grid_and_regions(cfg)
    kernel = _kernel(cfg)
    out = _out_dir(cfg)
    allow = bool(cfg["allow_nonconverged"])

    if cfg["mode"] == "mle":
        fit = fit_mle(grid, regions, kernel, t_max=cfg["t_max"])
        doc = fit.to_json_dict()
        doc["config"] = config_echo(cfg)
        doc["seed"] = cfg["seed"]
        if not fit.converged and allow:
            doc["warning"] = "optimizer did not converge; kept because allow_nonconverged is set"
        write_json(out / "mle.json", doc)
        print(f"mle fit: loglik={fit.loglik:.4f} converged={fit.converged}")
        if not fit.converged and not allow:
            print("fit did not converge (rerun with --allow-nonconverged to keep it)",
                  file=sys.stderr)
            return 1
        return 0

    if cfg["mode"] != "bayes":
        raise InputError(f"mode must be 'mle' or 'bayes', got {cfg['mode']!r}")

    mc = McmcConfig(chains=cfg["chains"], draws=cfg["draws"],
                    warmup_draws=cfg["warmup_draws"], seed=cfg["seed"],
                    init=cfg["init"], thin=cfg["thin"])
    chains = sample_posterior(grid, regions, kernel, mc, t_max=cfg["t_max"])
    rhat_ok = bool(np.all(chains.rhat < 1.05))
    warning = None
    if not rhat_ok:
        warning = "rhat above 1.05 for at least one parameter"

    write_chains(chains, out / "chains.csv")
    diagnostics = {
        "rhat": {n: chains.rhat[i] for i, n in enumerate(chains.param_names)},
        "ess": {n: chains.ess[i] for i, n in enumerate(chains.param_names)},
        "accept_rate": list(chains.accept_rate),
        "divergences": chains.divergences,
        "warning": warning,
        "config": config_echo(cfg),
        "seed": cfg["seed"],
    }
    write_json(out / "diagnostics.json", diagnostics)
    summary = summarize(chains)
    write_json(out / "summary.json", {
        "params": summary.to_json_dict(),
        "config": config_echo(cfg),
        "seed": cfg["seed"],
    })
    rh = ", ".join(f"{n}={chains.rhat[i]:.3f}" for i, n in enumerate(chains.param_names))
    print(f"bayes fit: rhat {rh}")
    if not rhat_ok and not allow:
        print("chains did not converge (rerun with --allow-nonconverged to keep them)",
              file=sys.stderr)
        return 1
    return 0


def cmd_predict(cfg: dict) -> int:
    grid, regions = _load_grid_and_regions(cfg)
    _require(cfg, "fit")
    fit = _load_fit_artifact(cfg["fit"])
    kernel = _kernel(cfg)
    out = _out_dir(cfg)

    warning = None
    if isinstance(fit, PosteriorChains):
        ensemble = posterior_predictive(fit, grid, regions, kernel,
                                        horizon=cfg["horizon"],
                                        n_samples=cfg["n_samples"],
                                        seed=cfg["seed"], t_max=cfg["t_max"])
    else:
        warning = ("point-estimate prediction: single-member ensemble; "
                   "interval output needs a bayes fit")
        print(warning, file=sys.stderr)
        ensemble = point_predictive(fit, grid, regions, kernel,
                                    horizon=cfg["horizon"], seed=cfg["seed"])

    write_ensemble(ensemble, out / "ensemble.csv")
    for axis in ("space", "time", "cell"):
        write_percentiles(aggregate_percentiles(ensemble, axis),
                          out / f"percentiles_{axis}.csv")
    write_json(out / "predict.json", {
        "horizon": ensemble.horizon,
        "n_samples": ensemble.n_samples,
        "warning": warning,
        "config": config_echo(cfg),
        "seed": cfg["seed"],
    })
    print(f"wrote ensemble of {ensemble.n_samples} member(s), horizon {ensemble.horizon}")
    return 0


def cmd_flags(cfg: dict) -> int:
    grid, regions = _load_grid_and_regions(cfg)
    _require(cfg, "fit")
    chains = _as_chains(_load_fit_artifact(cfg["fit"]), cfg["seed"])
    kernel = _kernel(cfg)
    out = _out_dir(cfg)

    hawkes = hawkes_flags(chains, grid, regions, kernel, window=cfg["window"],
                          q=cfg["q"], n_samples=cfg["n_samples"],
                          seed=cfg["seed"], t_max=cfg["t_max"],
                          roll_before_median=bool(cfg["roll_before_median"]))
    naive = naive_flags(grid, window=cfg["window"], k_sd=cfg["k_sd"])
    table = compare_methods(hawkes, naive)

    write_flags(hawkes, out / "flags_hawkes.csv")
    write_flags(naive, out / "flags_naive.csv")
    rows = [(int(table.month_index[i]), int(table.observed[i]),
             bool(table.hawkes_flagged[i]), bool(table.naive_flagged[i]))
            for i in range(table.month_index.size)]
    write_csv(out / "comparison.csv",
              ["month_index", "observed", "hawkes_flagged", "naive_flagged"], rows)
    write_json(out / "comparison_totals.json", {
        "totals": table.totals,
        "config": config_echo(cfg),
        "seed": cfg["seed"],
    })
    print(f"flags: hawkes {table.totals['hawkes_flagged']}, "
          f"naive {table.totals['naive_flagged']} of {table.totals['n_months']} months")
    return 0


def cmd_map(cfg: dict) -> int:
    grid, regions = _load_grid_and_regions(cfg)
    _require(cfg, "fit")
    fit = _load_fit_artifact(cfg["fit"])
    month = cfg["month"]
    if isinstance(month, str) and month != "median-over-window":
        try:
            month = int(month)
        except ValueError:
            raise InputError(
                f"month must be an integer index or 'median-over-window', got {month!r}"
            ) from None
    if isinstance(month, int) and not 0 <= month < grid.n_months:
        raise InputError(f"month {month} outside the grid (0..{grid.n_months - 1})")

    risk = spatial_risk_map(fit, grid, regions, _kernel(cfg), month=month,
                            t_max=cfg["t_max"])
    out = _out_dir(cfg)
    write_risk_map(risk, out / "riskmap.csv")
    print(f"wrote risk map for {len(risk.region_ids)} regions")
    return 0


def cmd_simulate(cfg: dict) -> int:
    _require(cfg, "centroids")
    regions = RegionSet.from_csv(cfg["centroids"])
    params = ModelParams(mu=cfg["mu"], alpha=cfg["alpha"], beta=cfg["beta"],
                         sigma=cfg["sigma"], t_max=cfg["t_max"])
    kernel = _kernel(cfg).with_sigma(params.sigma)
    weights = build_weight_matrix(kernel, regions)
    months = int(cfg["months"])
    if months <= cfg["t_max"]:
        raise InputError(f"months must exceed t_max, got {months}")
    sim = simulate_forward(params, np.zeros((0, len(regions))), weights,
                           horizon=months, seed=cfg["seed"])
    grid = EventGrid(counts=sim.counts, start_month=cfg["start_month"],
                     region_ids=regions.ids)
    grid = set_warmup(grid, cfg["t_max"])
    out = _out_dir(cfg)
    write_grid(grid, out / "simulated.csv")
    print(f"simulated {months} months x {len(regions)} regions "
          f"({int(grid.counts.sum())} events)")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--threads", type=int,
                        help="worker thread cap (default from STHAWKES_THREADS)")

    parser = argparse.ArgumentParser(
        prog="sthawkes",
        description="Discrete-time spatiotemporal Hawkes modeling on monthly "
                    "region-count grids",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common],
                       help="aggregate an event CSV into monthly count grids")
    p.add_argument("--events", help="event CSV path")
    p.add_argument("--centroids", help="region centroid CSV path")
    p.add_argument("--start", help="first month, YYYY-MM")
    p.add_argument("--end", help="last month, YYYY-MM")
    p.add_argument("--countries", help="comma-separated country filters")
    p.add_argument("--event-types", dest="event_types",
                   help="comma-separated event type filters")
    p.add_argument("--policy", choices=["fail", "skip"], help="bad-row policy")
    p.add_argument("--t-max", dest="t_max", type=int, help="truncation lag / warmup")

    p = sub.add_parser("fit", parents=[common], help="fit the model to a grid")
    p.add_argument("--grid", help="grid CSV from ingest or simulate")
    p.add_argument("--centroids", help="region centroid CSV path")
    p.add_argument("--mode", choices=["mle", "bayes"], help="inference mode")
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--metric", choices=["euclidean", "haversine"])
    p.add_argument("--squared-distance", dest="squared_distance",
                   action="store_true", default=None,
                   help="use d^2 in the RBF exponent")
    p.add_argument("--chains", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--warmup-draws", dest="warmup_draws", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--init", choices=["mle", "prior"])
    p.add_argument("--allow-nonconverged", dest="allow_nonconverged",
                   action="store_true", default=None,
                   help="exit 0 and keep outputs even without convergence")

    p = sub.add_parser("predict", parents=[common],
                       help="posterior-predictive forecast from a fit")
    p.add_argument("--grid", help="history grid CSV")
    p.add_argument("--centroids")
    p.add_argument("--fit", help="chains.csv or mle.json")
    p.add_argument("--horizon", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--metric", choices=["euclidean", "haversine"])
    p.add_argument("--squared-distance", dest="squared_distance",
                   action="store_true", default=None)

    p = sub.add_parser("flags", parents=[common],
                       help="early-warning flags, model vs rolling baseline")
    p.add_argument("--grid")
    p.add_argument("--centroids")
    p.add_argument("--fit", help="chains.csv or mle.json")
    p.add_argument("--window", type=int)
    p.add_argument("--q", type=float, help="upper quantile level (default 0.975)")
    p.add_argument("--k-sd", dest="k_sd", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--roll-before-median", dest="roll_before_median",
                   action="store_true", default=None)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--metric", choices=["euclidean", "haversine"])
    p.add_argument("--squared-distance", dest="squared_distance",
                   action="store_true", default=None)

    p = sub.add_parser("map", parents=[common],
                       help="per-region intensity percentiles for one month")
    p.add_argument("--grid")
    p.add_argument("--centroids")
    p.add_argument("--fit")
    p.add_argument("--month", help="month index or 'median-over-window'")
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--metric", choices=["euclidean", "haversine"])
    p.add_argument("--squared-distance", dest="squared_distance",
                   action="store_true", default=None)

    p = sub.add_parser("simulate", parents=[common],
                       help="simulate a synthetic grid from given parameters")
    p.add_argument("--centroids")
    p.add_argument("--mu", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--months", type=int, help="number of months to simulate")
    p.add_argument("--start", dest="start_month", help="calendar month of row 0")
    p.add_argument("--metric", choices=["euclidean", "haversine"])
    p.add_argument("--squared-distance", dest="squared_distance",
                   action="store_true", default=None)

    return parser


_COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "flags": cmd_flags,
    "map": cmd_map,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        _apply_threads(cfg)
        return _COMMANDS[args.command](cfg)
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
