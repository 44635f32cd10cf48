"""Command-line front end: fit, simulate, select, predict, summarize.

Settings come from an optional YAML/JSON config file; command-line flags
override it. Errors exit nonzero with a JSON record on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import point_state, predict, summarize_chain
from .io import (DataError, atomic_write, config_hash, file_digest, load_config, load_dataset,
                 read_draws, read_header, write_dataset, write_draws, write_table)
from .model import Hyperparameters, ModelId
from .samplers import ChainOutput, McmcConfig, run_chains
from .selection import fdr_select
from .synth import Scenario, generate_dataset, run_replications

log = logging.getLogger(__name__)

COMMANDS = ("fit", "simulate", "select", "predict", "summarize")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        sys.exit(2)


def _emit_error(kind, message, command=None):
    rec = {"status": "error", "error": kind, "message": str(message)}
    if command:
        rec["command"] = command
    print(json.dumps(rec), file=sys.stderr)


def build_parser():
    ap = _Parser(prog="tweedie-dglm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)
    sub.required = True

    def common(p, data_help):
        p.add_argument("--model", choices=[m.value for m in ModelId])
        p.add_argument("--data", help=data_help)
        p.add_argument("--coords", help="coordinates CSV (site_id, x, y)")
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--iters", type=int)
        p.add_argument("--burnin", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--fdr-alpha", type=float, dest="fdr_alpha")
        p.add_argument("--fdr-c", type=float, dest="fdr_c")
        p.add_argument("--chains", type=int)
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("fit", help="run the sampler on a dataset"), "data CSV")
    p = sub.add_parser("simulate", help="generate synthetic data, optionally fit a replication grid")
    common(p, "unused")
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int)
    p = sub.add_parser("select", help="FDR selection on stored draws")
    common(p, "draws CSV or fit output directory")
    p.add_argument("--truth", help="truth.json from simulate, to score the selection")
    p = sub.add_parser("predict", help="score held-out data against a fit")
    common(p, "new data CSV")
    p.add_argument("--fit", required=True, help="fit output directory")
    p.add_argument("--estimate", choices=("median", "mean", "map"), default="median")
    common(sub.add_parser("summarize", help="posterior summaries from stored draws"),
           "draws CSV or fit output directory")
    return ap


def _merge(args, cfg):
    """Effective settings: config file values overridden by explicit flags."""
    out = {
        "model": cfg.get("model"),
        "seed": cfg.get("seed", 0),
        "chains": cfg.get("chains", 1),
        "hyper": dict(cfg.get("hyper", {})),
        "mcmc": dict(cfg.get("mcmc", {})),
        "data": cfg.get("data"),
        "coords": cfg.get("coords"),
        "out": cfg.get("out"),
    }
    for key in ("model", "seed", "chains", "data", "coords", "out"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    for key in ("iters", "burnin", "thin"):
        val = getattr(args, key, None)
        if val is not None:
            out["mcmc"][key] = val
    for key in ("fdr_alpha", "fdr_c"):
        val = getattr(args, key, None)
        if val is not None:
            out["hyper"][key] = val
    return out


def _build(cls, overrides, section):
    allowed = {f.name for f in fields(cls)}
    unknown = set(overrides) - allowed
    if unknown:
        raise UsageError(f"unknown {section} setting(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {section} settings: {exc}") from None


def _need(settings, key, command):
    if not settings.get(key):
        raise UsageError(f"{command} needs --{key}")
    return settings[key]


def _draws_path(data):
    p = Path(data)
    return p / "draws.csv" if p.is_dir() else p


def _fit_meta(draws_path):
    meta_path = Path(draws_path).parent / "meta.json"
    if meta_path.exists():
        with open(meta_path) as fh:
            return json.load(fh)
    return {}


def _write_summary(path, chain, chash, seed):
    summ = summarize_chain(chain)
    cols = ["parameter", "map", "median", "mean", "sd", "hpd_lower", "hpd_upper"]
    write_table(path, cols, ([r[c] for c in cols] for r in summ.rows()), chash, seed)


def _selection_reports(chain, hyper):
    reports = {}
    for blk in ("beta", "gamma"):
        reports[blk] = fdr_select(chain.block(blk), hyper.fdr_c, hyper.fdr_alpha, chain.block_names(blk))
    return reports


def _write_selection(path, reports, chash, seed):
    rows = []
    for blk, rep in reports.items():
        for n, pu, sel in zip(rep.names, rep.p, rep.selected):
            rows.append([blk, n, pu, sel, rep.kappa_alpha, rep.c, rep.alpha_level])
    write_table(path, ["block", "coefficient", "p_u", "selected", "kappa_alpha", "c", "alpha"],
                rows, chash, seed)


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# commands

def cmd_fit(args, settings):
    model_id = ModelId(_need(settings, "model", "fit"))
    data = _need(settings, "data", "fit")
    out = Path(_need(settings, "out", "fit"))
    coords = settings.get("coords")
    if model_id.spatial and not coords:
        raise UsageError(f"{model_id.value} needs --coords")
    hyper = _build(Hyperparameters, settings["hyper"], "hyper")
    mcmc = _build(McmcConfig, settings["mcmc"], "mcmc")
    loaded = load_dataset(data, coords if model_id.spatial else None)
    seed = int(settings["seed"])
    record = {"command": "fit", "model": model_id.value, "seed": seed, "chains": settings["chains"],
              "hyper": asdict(hyper), "mcmc": asdict(mcmc), "data_sha256": file_digest(data),
              "coords_sha256": file_digest(coords) if model_id.spatial else None}
    chash = config_hash(record)
    t0 = time.perf_counter()
    chains = run_chains(model_id, loaded.obs, loaded.domain, hyper, mcmc, seed=seed,
                        n_chains=int(settings["chains"]))
    pooled = read_pool(chains)
    write_draws(out / "draws.csv", chains, chash, seed)
    _write_summary(out / "summary.csv", pooled, chash, seed)
    if model_id.selection:
        _write_selection(out / "selection.csv", _selection_reports(pooled, hyper), chash, seed)
    meta = {
        "config_hash": chash, "seed": seed, "config": record,
        "location_ids": list(loaded.location_ids),
        "n": loaded.obs.n, "p": loaded.obs.p, "q": loaded.obs.q, "L": loaded.obs.n_sites,
        "chains": [{"seed": str(c.seed), "acceptance": c.acceptance, "step_sizes": c.step.as_dict(),
                    "n_clamped": c.n_clamped, "elapsed_s": c.elapsed} for c in chains],
        "elapsed_s": time.perf_counter() - t0,
    }
    _write_json(out / "meta.json", meta)
    return {"status": "ok", "command": "fit", "out": str(out), "config_hash": chash}


def read_pool(chains):
    """Concatenate chains (same model and names) into one ChainOutput."""
    if len(chains) == 1:
        return chains[0]
    first = chains[0]
    return ChainOutput(draws=np.vstack([c.draws for c in chains]), names=first.names,
                       logpost=np.concatenate([c.logpost for c in chains]), acceptance={},
                       step=first.step, seed=first.seed, model_id=first.model_id)


def _draws_and_meta(settings, command):
    path = _draws_path(_need(settings, "data", command))
    meta = _fit_meta(path)
    model = settings.get("model") or meta.get("config", {}).get("model")
    if not model:
        raise UsageError(f"{command} needs --model (no meta.json beside the draws)")
    return path, meta, ModelId(model)


def cmd_summarize(args, settings):
    path, meta, model_id = _draws_and_meta(settings, "summarize")
    out = Path(settings.get("out") or path.parent)
    chash, seed = read_header(path)
    chain = read_draws(path, model_id)
    _write_summary(out / "summary.csv", chain, chash, seed)
    return {"status": "ok", "command": "summarize", "out": str(out)}


def cmd_select(args, settings):
    path, meta, model_id = _draws_and_meta(settings, "select")
    out = Path(settings.get("out") or path.parent)
    hyper = _build(Hyperparameters, {**meta.get("config", {}).get("hyper", {}), **settings["hyper"]}, "hyper")
    chash, seed = read_header(path)
    chain = read_draws(path, model_id)
    reports = _selection_reports(chain, hyper)
    _write_selection(out / "selection.csv", reports, chash, seed)
    result = {"status": "ok", "command": "select", "out": str(out),
              "selected": {b: r.selected_names() for b, r in reports.items()},
              "kappa_alpha": {b: r.kappa_alpha for b, r in reports.items()},
              "c": hyper.fdr_c, "alpha": hyper.fdr_alpha, "config_hash": chash, "seed": seed}
    if args.truth:
        with open(args.truth) as fh:
            truth = json.load(fh)
        result.update(score_selection(reports, truth))
    _write_json(out / "selection.json", result)
    return result


def score_selection(reports, truth):
    """FPR/TPR over non-intercept coefficients of both blocks against truth.json."""
    flags, actual = [], []
    for blk in ("beta", "gamma"):
        act = dict(zip(truth[f"{blk}_names"], truth[f"active_{blk}"]))
        rep = reports[blk]
        for n, s in zip(rep.names, rep.selected):
            if n == "intercept":
                continue
            if n not in act:
                raise DataError(f"coefficient {n!r} missing from truth")
            flags.append(bool(s))
            actual.append(bool(act[n]))
    flags = np.array(flags)
    actual = np.array(actual)
    tpr = float(np.sum(flags & actual) / max(actual.sum(), 1))
    fpr = float(np.sum(flags & ~actual) / max((~actual).sum(), 1))
    return {"tpr": tpr, "fpr": fpr}


def cmd_predict(args, settings):
    fit_dir = Path(args.fit)
    meta = _fit_meta(fit_dir / "draws.csv")
    if not meta:
        raise UsageError(f"{fit_dir} has no meta.json")
    model_id = ModelId(meta["config"]["model"])
    data = _need(settings, "data", "predict")
    out = Path(settings.get("out") or fit_dir)
    hyper = _build(Hyperparameters, meta["config"]["hyper"], "hyper")
    chain = read_draws(fit_dir / "draws.csv", model_id)
    loaded = load_dataset(data)
    # re-index sites through the fitted location order
    fitted = {s: i for i, s in enumerate(meta["location_ids"])}
    new_obs = loaded.obs
    if model_id.spatial:
        remap = []
        for s in loaded.location_ids:
            if s not in fitted:
                raise DataError(f"{data}: location {s!r} was not seen during fitting")
            remap.append(fitted[s])
        new_obs = replace(new_obs, loc=np.array(remap, dtype=np.int64)[new_obs.loc],
                          n_sites=len(meta["location_ids"]))
    state = point_state(chain, args.estimate)
    mu, phi, score = predict(state, new_obs, model_id, hyper)
    chash, seed = meta["config_hash"], meta["seed"]
    write_table(out / "predictions.csv", ["row", "y", "mu_hat", "phi_hat"],
                ([k, new_obs.y[k], mu[k], phi[k]] for k in range(new_obs.n)), chash, seed)
    result = {"status": "ok", "command": "predict", "sqrt_deviance": score, "estimate": args.estimate,
              "n": new_obs.n, "config_hash": chash, "seed": seed}
    _write_json(out / "predict.json", result)
    return result


def cmd_simulate(args, settings):
    cfg = settings["raw"]
    out = Path(_need(settings, "out", "simulate"))
    sc_cfg = dict(cfg.get("scenario", {}))
    seed = int(settings["seed"])
    sc_cfg.setdefault("seed", seed)
    try:
        scenario = Scenario.from_dict(sc_cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scenario: {exc}") from None
    record = {"command": "simulate", "scenario": asdict(scenario), "seed": seed}
    chash = config_hash(record)
    obs, domain, truth = generate_dataset(scenario, np.random.default_rng(seed))
    ids = tuple(str(i + 1) for i in range(obs.n_sites))
    write_dataset(out / "data.csv", obs, chash, seed,
                  coords_path=out / "coords.csv" if domain is not None else None,
                  domain=domain, location_ids=ids)
    truth_rec = {
        "config_hash": chash, "seed": seed, "scenario": asdict(scenario),
        "beta_names": list(truth.x_names), "gamma_names": list(truth.z_names),
        "beta": truth.beta, "gamma": truth.gamma, "xi": truth.xi,
        "w": truth.w, "sigma2": truth.sigma2, "phi_s": truth.phi_s,
        "active_beta": truth.active_beta, "active_gamma": truth.active_gamma,
        "zero_fraction": truth.zero_fraction,
    }
    _write_json(out / "truth.json", truth_rec)
    result = {"status": "ok", "command": "simulate", "out": str(out), "config_hash": chash,
              "zero_fraction": truth.zero_fraction}

    n_reps = args.replications if args.replications is not None else cfg.get("replications", 0)
    if n_reps:
        models = [settings["model"]] if settings.get("model") else cfg.get("models", [])
        if not models:
            raise UsageError("replications need --model or a 'models' list in the config")
        hyper = _build(Hyperparameters, settings["hyper"], "hyper")
        mcmc = _build(McmcConfig, settings["mcmc"], "mcmc")
        workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
        grid = {**record, "models": models, "replications": n_reps,
                "hyper": asdict(hyper), "mcmc": asdict(mcmc)}
        ghash = config_hash(grid)
        rows, header = [], None
        for m in models:
            mid = ModelId(m)
            if mid.spatial != scenario.spatial:
                raise UsageError(f"{mid.value} does not match pattern {scenario.pattern!r}")
            metrics = run_replications(scenario, mid, n_reps, mcmc, hyper, seed, workers)
            for r, met in enumerate(metrics):
                row = {"model": mid.value, "replication": r, **met.to_row()}
                header = header or list(row)
                rows.append([row.get(h, float("nan")) for h in header])
        write_table(out / "metrics.csv", header, rows, ghash, seed)
        result["metrics"] = str(out / "metrics.csv")
    return result


HANDLERS = {"fit": cmd_fit, "simulate": cmd_simulate, "select": cmd_select,
            "predict": cmd_predict, "summarize": cmd_summarize}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_config(args.config)
        settings = _merge(args, raw)
        settings["raw"] = raw
        result = HANDLERS[args.command](args, settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _emit_error("usage", exc, args.command)
        return 2
    except (DataError, ValueError, OSError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _emit_error(type(exc).__name__, exc, args.command)
        return 1
    print(json.dumps(result, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
