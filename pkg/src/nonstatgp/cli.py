"""Command-line pipeline: simulate, fit-gev, build-neighbors, mcmc,
predict, and summarize.

Options resolve in three layers: built-in defaults, then a flat
``key = value`` config file given with ``--config``, then explicit flags.
Every run writes a JSON manifest next to its primary output (config hash,
versions, seed, stage timings), including on failure, and exits with 0 on
success, 2 on configuration errors, 3 on data errors, and 4 on numerical
failures.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .data import (
    DataError,
    atomic_write_text,
    load_ensemble_maxima,
    load_return_values,
    make_dataset,
    write_dataset_csv,
)
from .design import ThetaState, build_design, build_spline_basis
from .extremes import MIN_SERIES_LENGTH, extract_annual_maxima, fit_gev, return_value
from .inference import (
    SamplerConfig,
    default_init,
    effective_sample_size,
    fit_mcmc,
    load_chain_csv,
    save_chain_csv,
    split_rhat,
    summarize,
)
from .likelihood import NngpWorkspace, NumericalError, PriorSpec
from .neighbors import (
    build_neighbor_graph,
    graph_cache_key,
    knn_predict_sets,
    load_graph,
    save_graph,
)
from .predict import predict_field, save_predictions_csv
from .simulate import simulate_dataset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class ConfigError(ValueError):
    """Bad option values or missing referenced files."""


class _Stages:
    """Accumulates named stage timings for the manifest."""

    def __init__(self):
        self.records = []
        self.current = "setup"

    @contextmanager
    def stage(self, name):
        self.current = name
        start = time.perf_counter()
        try:
            yield
        finally:
            self.records.append({"name": name, "seconds": round(time.perf_counter() - start, 4)})


def _manifest_path(primary_out, explicit):
    if explicit:
        return explicit
    return str(primary_out) + ".manifest.json"


def _write_manifest(path, payload):
    try:
        atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError:
        logger.warning("could not write manifest to %s", path)


def _config_hash(options: dict) -> str:
    as_json = json.dumps({k: repr(v) for k, v in sorted(options.items())})
    return hashlib.sha256(as_json.encode()).hexdigest()


def _parse_float_list(text, name, expected=None):
    try:
        vals = np.array([float(v) for v in str(text).split(",")])
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of numbers, got {text!r}") from None
    if expected is not None and vals.size != expected:
        raise ConfigError(f"{name} must have {expected} entries, got {vals.size}")
    return vals


def _require_file(path, what):
    if not os.path.exists(str(path)):
        raise ConfigError(f"{what} not found: {path}")


# ----------------------------------------------------------------------
# option plumbing
# ----------------------------------------------------------------------

def load_config_file(path) -> dict:
    """Flat ``key = value`` file; keys use the flag spelling without dashes."""
    _require_file(path, "config file")
    values = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(value: str, action: argparse.Action):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"boolean option {action.dest} got {value!r}")
    return (action.type or str)(value)


def _apply_config(parsers: list[argparse.ArgumentParser], config: dict):
    known = set()
    for parser in parsers:
        for action in parser._actions:
            if action.dest == "help":
                continue
            known.add(action.dest)
            if action.dest in config:
                try:
                    parser.set_defaults(**{action.dest: _coerce(config[action.dest], action)})
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"config option {action.dest}: {exc}") from exc
    unknown = set(config) - known
    if unknown:
        raise ConfigError(f"unknown config option(s): {sorted(unknown)}")


def build_parser() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="nonstatgp",
        description="Nonstationary GP modeling of gridded return-value fields",
    )
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap BLAS threads (0 = library default)")
    sub = parser.add_subparsers(dest="command", required=True)
    children = []

    def common_model(p):
        p.add_argument("--k", type=int, default=15, help="neighbor count")
        p.add_argument("--nu", type=float, default=0.5, help="Matern smoothness")
        p.add_argument("--df", type=int, default=3, help="spline degrees of freedom")
        p.add_argument("--land-interaction", action=argparse.BooleanOptionalAction,
                       default=True,
                       help="land indicator in the SD and range processes")

    p = sub.add_parser("simulate", help="draw a synthetic dataset from the dense GP")
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mu", type=float, default=300.0)
    p.add_argument("--tau2", type=float, default=0.25)
    p.add_argument("--alpha", default="0.4,0,0,0,0,0,0,0", help="8 comma-separated values")
    p.add_argument("--phi", default="0.3,-0.5", help="2 comma-separated values")
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--df", type=int, default=3)
    p.add_argument("--lat-limit", type=float, default=85.0)
    p.add_argument("--land-prob", type=float, default=0.5)
    p.add_argument("--missing-frac", type=float, default=0.0)
    p.add_argument("--land-interaction", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="land indicator in the SD and range processes")
    p.add_argument("--manifest", default=None)
    children.append(p)

    p = sub.add_parser("fit-gev", help="fit per-cell GEV and derive return values")
    p.add_argument("--input", required=True, help="ensemble CSV (cell_id,year,member,value)")
    p.add_argument("--out", required=True, help="per-cell fit CSV")
    p.add_argument("--return-period", type=float, default=20.0)
    p.add_argument("--coords", default=None,
                   help="coords CSV (cell_id,longitude,latitude,ind_land) to merge")
    p.add_argument("--out-dataset", default=None, help="model-ready CSV (needs --coords)")
    p.add_argument("--manifest", default=None)
    children.append(p)

    p = sub.add_parser("build-neighbors", help="maxmin ordering and conditioning sets")
    p.add_argument("--input", required=True, help="return-value CSV")
    p.add_argument("--out", required=True, help="neighbor cache (.npz)")
    common_model(p)
    p.add_argument("--manifest", default=None)
    children.append(p)

    p = sub.add_parser("mcmc", help="sample the posterior of the covariance parameters")
    p.add_argument("--input", required=True, help="return-value CSV")
    p.add_argument("--out-chain", required=True, help="chain CSV")
    p.add_argument("--neighbors", default=None, help="neighbor cache path (reused/created)")
    common_model(p)
    p.add_argument("--n-iter", type=int, default=20000)
    p.add_argument("--n-burn", type=int, default=10000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--adapt-interval", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-mu", type=float, default=None)
    p.add_argument("--init-tau2", type=float, default=None)
    p.add_argument("--init-alpha", default=None, help="8 comma-separated values")
    p.add_argument("--init-phi", default=None, help="2 comma-separated values")
    p.add_argument("--out-diagnostics", default=None, help="acceptance/ESS JSON")
    p.add_argument("--dump-design", default=None,
                   help="also write the per-cell design matrices (debugging)")
    p.add_argument("--manifest", default=None)
    children.append(p)

    p = sub.add_parser("predict", help="local kriging at missing (or all) cells")
    p.add_argument("--input", required=True, help="return-value CSV")
    p.add_argument("--chain", required=True, help="chain CSV from mcmc")
    p.add_argument("--out", required=True, help="prediction CSV")
    common_model(p)
    p.add_argument("--target", choices=("y", "z"), default="y")
    p.add_argument("--pred-set", choices=("missing", "all"), default="missing")
    p.add_argument("--max-draws", type=int, default=0, help="0 = use all saved draws")
    p.add_argument("--manifest", default=None)
    children.append(p)

    p = sub.add_parser("summarize", help="posterior summary table from a chain CSV")
    p.add_argument("--chain", required=True)
    p.add_argument("--out", required=True, help="summary CSV")
    p.add_argument("--level", type=float, default=0.99)
    p.add_argument("--manifest", default=None)
    children.append(p)

    return parser, children


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def _prepare_fit_inputs(args, dataset):
    """Observed subset, basis, and design matrices for mcmc/predict."""
    obs = dataset.observed_indices()
    if obs.size < args.df + 2:
        raise DataError(f"only {obs.size} observed cells; too few to fit")
    basis = build_spline_basis(dataset.lat[obs], df=args.df)
    design_obs = build_design(
        dataset.lat[obs], dataset.land[obs], basis,
        land_interaction=args.land_interaction,
    )
    return obs, basis, design_obs


def cmd_simulate(args, stages):
    from .simulate import SIMULATE_MAX_N

    n_alpha = 2 * (args.df + 1) if args.land_interaction else args.df + 1
    n_phi = 2 if args.land_interaction else 1
    alpha = _parse_float_list(args.alpha, "--alpha", expected=n_alpha)
    phi = _parse_float_list(args.phi, "--phi", expected=n_phi)
    if args.tau2 <= 0:
        raise ConfigError("--tau2 must be positive")
    if not args.df + 2 <= args.n <= SIMULATE_MAX_N:
        raise ConfigError(f"--n must be in [{args.df + 2}, {SIMULATE_MAX_N}]")
    theta = ThetaState(mu=args.mu, tau2=args.tau2, alpha=alpha, phi=phi)
    with stages.stage("simulate"):
        dataset = simulate_dataset(
            n=args.n,
            theta=theta,
            seed=args.seed,
            nu=args.nu,
            df=args.df,
            lat_limit=args.lat_limit,
            land_prob=args.land_prob,
            missing_frac=args.missing_frac,
            land_interaction=args.land_interaction,
        )
    with stages.stage("write"):
        write_dataset_csv(args.out, dataset)
    logger.info("wrote %d-cell synthetic dataset to %s", dataset.n, args.out)
    return {"out": args.out, "n_cells": dataset.n}


def _load_coords_csv(path):
    import csv

    _require_file(path, "coords file")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = ("cell_id", "longitude", "latitude", "ind_land")
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing required column(s) {missing}")
        rows = {}
        for line_no, row in enumerate(reader, start=2):
            try:
                rows[row["cell_id"].strip()] = (
                    float(row["longitude"]),
                    float(row["latitude"]),
                    int(row["ind_land"]),
                )
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line_no}: unparseable row") from None
    return rows


def cmd_fit_gev(args, stages):
    if args.return_period <= 1:
        raise ConfigError("--return-period must exceed 1")
    if args.out_dataset and not args.coords:
        raise ConfigError("--out-dataset requires --coords")
    _require_file(args.input, "ensemble file")

    with stages.stage("ingest"):
        cells, years, _, values = load_ensemble_maxima(args.input)
        series_list = extract_annual_maxima(cells, years, values)
    n_years = series_list[0].values.size
    if n_years < MIN_SERIES_LENGTH:
        raise DataError(f"only {n_years} years per cell; need >= {MIN_SERIES_LENGTH}")

    with stages.stage("fit"):
        rows = []
        rv_by_cell = {}
        n_failed = 0
        for series in series_list:
            fit = fit_gev(series.values)
            if fit.converged:
                rv = return_value(fit.params, args.return_period)
                rv_by_cell[series.cell_id] = rv
                rv_str = format(rv, ".17g")
            else:
                n_failed += 1
                rv_by_cell[series.cell_id] = np.nan
                rv_str = ""
            rows.append(
                f"{series.cell_id},{fit.params.mu:.17g},{fit.params.sigma:.17g},"
                f"{fit.params.xi:.17g},{int(fit.converged)},{rv_str}"
            )
    logger.info("fit %d cells, %d failed", len(rows), n_failed)

    with stages.stage("write"):
        atomic_write_text(
            args.out, "\n".join(["cell_id,mu,sigma,xi,converged,rv20"] + rows) + "\n"
        )
        if args.out_dataset:
            coords = _load_coords_csv(args.coords)
            missing_coords = [s.cell_id for s in series_list if s.cell_id not in coords]
            if missing_coords:
                raise DataError(f"coords file lacks cell(s): {missing_coords[:10]}")
            ids = [s.cell_id for s in series_list]
            dataset = make_dataset(
                np.array(ids, dtype=object),
                [coords[c][0] for c in ids],
                [coords[c][1] for c in ids],
                [coords[c][2] for c in ids],
                [rv_by_cell[c] for c in ids],
            )
            write_dataset_csv(args.out_dataset, dataset)
    return {"out": args.out, "n_cells": len(rows), "n_failed": n_failed}


def cmd_build_neighbors(args, stages):
    _require_file(args.input, "input file")
    if args.k < 1:
        raise ConfigError("--k must be >= 1")
    with stages.stage("ingest"):
        dataset = load_return_values(args.input)
    obs = dataset.observed_indices()
    pts = dataset.xyz[obs]
    with stages.stage("order"):
        graph = build_neighbor_graph(pts, k=args.k)
    with stages.stage("write"):
        save_graph(args.out, graph, graph_cache_key(pts, args.k))
    logger.info("neighbor graph for %d observed cells cached at %s", len(obs), args.out)
    return {"out": args.out, "n_observed": int(obs.size), "k": args.k}


def _obtain_graph(args, pts, stages):
    key = graph_cache_key(pts, args.k)
    if args.neighbors and os.path.exists(args.neighbors):
        try:
            graph = load_graph(args.neighbors, expected_key=key)
        except Exception:
            logger.warning("neighbor cache %s is unreadable; rebuilding", args.neighbors)
            graph = None
        if graph is not None:
            logger.info("reusing neighbor cache %s", args.neighbors)
            return graph
        logger.info("neighbor cache %s does not match the data; rebuilding", args.neighbors)
    with stages.stage("neighbors"):
        graph = build_neighbor_graph(pts, k=args.k)
        if args.neighbors:
            save_graph(args.neighbors, graph, key)
    return graph


def cmd_mcmc(args, stages):
    _require_file(args.input, "input file")
    if args.k < 1 or args.df < 1:
        raise ConfigError("--k and --df must be >= 1")
    with stages.stage("ingest"):
        dataset = load_return_values(args.input)
    obs, _, design_obs = _prepare_fit_inputs(args, dataset)
    pts = dataset.xyz[obs]
    z = dataset.rv[obs]

    if args.dump_design:
        header = (
            ["cell_id"]
            + [f"x_sigma{j}" for j in range(design_obs.X_sigma.shape[1])]
            + [f"x_Sigma{j}" for j in range(design_obs.X_Sigma.shape[1])]
        )
        lines = [",".join(header)]
        ids = dataset.cell_id[obs]
        for i in range(len(obs)):
            vals = np.concatenate([design_obs.X_sigma[i], design_obs.X_Sigma[i]])
            lines.append(f"{ids[i]}," + ",".join(format(v, ".17g") for v in vals))
        atomic_write_text(args.dump_design, "\n".join(lines) + "\n")

    graph = _obtain_graph(args, pts, stages)
    with stages.stage("workspace"):
        ws = NngpWorkspace(pts, graph, design_obs, nu=args.nu)

    config = SamplerConfig(
        n_iter=args.n_iter,
        n_burn=args.n_burn,
        thin=args.thin,
        adapt_interval=args.adapt_interval,
        rng_seed=args.seed,
    )
    n_alpha, n_phi = design_obs.n_alpha, design_obs.n_phi
    init = default_init(z, n_alpha=n_alpha, n_phi=n_phi)
    if args.init_mu is not None:
        init[0] = args.init_mu
    if args.init_tau2 is not None:
        init[1] = args.init_tau2
    if args.init_alpha is not None:
        init[2 : 2 + n_alpha] = _parse_float_list(
            args.init_alpha, "--init-alpha", expected=n_alpha
        )
    if args.init_phi is not None:
        init[2 + n_alpha :] = _parse_float_list(
            args.init_phi, "--init-phi", expected=n_phi
        )

    with stages.stage("mcmc"):
        chain = fit_mcmc(z, ws, PriorSpec(), config, init=init)
    with stages.stage("write"):
        save_chain_csv(args.out_chain, chain)
        diag_path = args.out_diagnostics or args.out_chain + ".diagnostics.json"
        diagnostics = {
            "accept_rates": chain.accept_rates,
            "accept_targets": {
                "univariate": config.target_accept_univ,
                "block": config.target_accept_block,
            },
            "n_saved": chain.n_saved,
            "likelihood_evaluations": ws.eval_count,
            "inconsistent_theta_events": ws.inconsistent_count,
        }
        if chain.n_saved >= 4:
            diagnostics["split_rhat"] = {
                name: round(split_rhat([chain.column(name)]), 4)
                for name in chain.param_names
            }
            diagnostics["ess"] = {
                name: round(effective_sample_size(chain.column(name)), 1)
                for name in ("mu", "tau2")
            }
        atomic_write_text(diag_path, json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    logger.info("saved %d draws to %s", chain.n_saved, args.out_chain)
    return {"out_chain": args.out_chain, "n_saved": chain.n_saved,
            "accept_rates": chain.accept_rates}


def cmd_predict(args, stages):
    _require_file(args.input, "input file")
    if not os.path.exists(args.chain):
        raise ConfigError(f"chain file not found: {args.chain}")
    with stages.stage("ingest"):
        dataset = load_return_values(args.input)
        chain = load_chain_csv(args.chain)
    obs, basis, design_obs = _prepare_fit_inputs(args, dataset)

    if args.pred_set == "missing":
        pred_idx = dataset.missing_indices()
        if pred_idx.size == 0:
            raise DataError("no missing cells to predict; use --pred-set all")
    else:
        pred_idx = np.arange(dataset.n)
    if args.k > obs.size:
        raise ConfigError(f"--k {args.k} exceeds the {obs.size} observed cells")
    expected_width = 2 + design_obs.n_alpha + design_obs.n_phi
    if chain.draws.shape[1] != expected_width:
        raise ConfigError(
            f"chain has {chain.draws.shape[1]} parameters but the model needs "
            f"{expected_width}; check --df/--land-interaction against the mcmc run"
        )

    design_pred = build_design(
        dataset.lat[pred_idx], dataset.land[pred_idx], basis,
        land_interaction=args.land_interaction,
    )
    draws = chain.draws
    if args.max_draws and draws.shape[0] > args.max_draws:
        step = int(np.ceil(draws.shape[0] / args.max_draws))
        draws = draws[::step]

    with stages.stage("neighbors"):
        nbr = knn_predict_sets(dataset.xyz[obs], dataset.xyz[pred_idx], args.k)
    with stages.stage("krige"):
        result = predict_field(
            draws,
            dataset.xyz[pred_idx],
            design_pred,
            dataset.xyz[obs],
            design_obs,
            dataset.rv[obs],
            nbr,
            nu=args.nu,
            target=args.target,
        )
    with stages.stage("write"):
        save_predictions_csv(
            args.out, result,
            dataset.cell_id[pred_idx], dataset.lon[pred_idx], dataset.lat[pred_idx],
        )
    logger.info("predicted %d cells (%d draws) to %s", pred_idx.size, result.n_draws, args.out)
    return {"out": args.out, "n_predicted": int(pred_idx.size),
            "n_draws": result.n_draws, "sd_kind": result.sd_kind, "target": args.target}


def cmd_summarize(args, stages):
    if not os.path.exists(args.chain):
        raise ConfigError(f"chain file not found: {args.chain}")
    if not 0 < args.level < 1:
        raise ConfigError("--level must be in (0, 1)")
    with stages.stage("summarize"):
        chain = load_chain_csv(args.chain)
        rows = summarize(chain, level=args.level)
    with stages.stage("write"):
        lines = ["parameter,mean,sd,lower,upper,level"]
        for row in rows:
            lines.append(
                f"{row['parameter']},{row['mean']:.17g},{row['sd']:.17g},"
                f"{row['lower']:.17g},{row['upper']:.17g},{row['level']:g}"
            )
        atomic_write_text(args.out, "\n".join(lines) + "\n")
    return {"out": args.out, "n_parameters": len(rows)}


_COMMANDS = {
    "simulate": (cmd_simulate, "out"),
    "fit-gev": (cmd_fit_gev, "out"),
    "build-neighbors": (cmd_build_neighbors, "out"),
    "mcmc": (cmd_mcmc, "out_chain"),
    "predict": (cmd_predict, "out"),
    "summarize": (cmd_summarize, "out"),
}


@contextmanager
def _thread_cap(n_threads):
    if n_threads and n_threads > 0:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            logger.warning("threadpoolctl unavailable; --threads ignored")
            yield
            return
        with threadpool_limits(limits=n_threads):
            yield
    else:
        yield


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)

    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre_args, _ = pre.parse_known_args(argv)

    parser, children = build_parser()
    try:
        if pre_args.config:
            _apply_config([parser] + children, load_config_file(pre_args.config))
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    handler, primary_dest = _COMMANDS[args.command]
    options = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    manifest_path = _manifest_path(getattr(args, primary_dest), args.manifest)
    stages = _Stages()
    started = time.time()
    manifest = {
        "command": args.command,
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "config": {k: str(v) for k, v in sorted(options.items())},
        "config_hash": _config_hash(options),
        "seed": getattr(args, "seed", None),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
    }

    try:
        with _thread_cap(args.threads):
            outputs = handler(args, stages)
        manifest.update(status="ok", outputs=outputs)
        code = EXIT_OK
    except ConfigError as exc:
        manifest.update(status="error",
                        error={"stage": stages.current, "type": "config", "message": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except DataError as exc:
        manifest.update(status="error",
                        error={"stage": stages.current, "type": "data", "message": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        manifest.update(status="error",
                        error={"stage": stages.current, "type": "numerical", "message": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL

    manifest["wall_time_s"] = round(time.time() - started, 3)
    manifest["stages"] = stages.records
    _write_manifest(manifest_path, manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
