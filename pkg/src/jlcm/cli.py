"""Command-line interface: ``jlcm {simulate,fit,select,predict,evaluate}``.

Configuration is an INI file with the sections ``[model]``, ``[priors]``,
``[sampler]``, ``[io]``, ``[codings]``, ``[scenario]`` and ``[evaluate]``;
every key is optional.  Command-line flags override the file.  All outputs
are CSV files and are byte-identical for identical configuration and seed.

On failure the exit status is nonzero and a single line
``error: <category>: <message>`` is written to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pandas as pd

from . import io
from .data import Dataset, ParameterSet, ValidationError
from .inference import (DegenerateLandmarkError, PosteriorEstimates, UndefinedAUCError,
                        compute_dic, dynamic_survival, error_rate, ipcw_auc,
                        posterior_membership)
from .mcmc import PriorConfig, SamplerConfig, relabel, run_chain, summarize
from .mcmc.chain import DivergenceError
from .simulate import SimulationScenario, simulate_dataset

log = logging.getLogger("jlcm")


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------------

def _read_config(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # column names are case sensitive
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        cp.read(path, encoding="utf-8")
    for section in ("model", "priors", "sampler", "io", "codings", "scenario", "evaluate"):
        if not cp.has_section(section):
            cp.add_section(section)
    return cp


def _get(cp, section, key, kind=str, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _list(raw):
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def parse_k_range(text):
    """``"A..B"`` (inclusive) or a single integer."""
    try:
        if ".." in text:
            a, b = (int(x) for x in text.split("..", 1))
        else:
            a = b = int(text)
    except ValueError:
        raise ConfigError(f"bad K range {text!r}; expected A..B") from None
    if a < 1 or b < a:
        raise ConfigError(f"bad K range {text!r}; need 1 <= A <= B")
    return list(range(a, b + 1))


def parse_horizons(text):
    try:
        values = [float(x) for x in _list(text)]
    except ValueError:
        raise ConfigError(f"bad horizons {text!r}; expected a comma-separated list") from None
    if not values or any(v < 0 for v in values):
        raise ConfigError("horizons must be a nonempty list of nonnegative numbers")
    return values


def schema_from_config(cp) -> io.SchemaConfig:
    base = io.SchemaConfig() if _get(cp, "io", "data") else io.simulation_schema()
    kw = {}
    for key in ("id", "time", "event", "response", "obstime"):
        v = _get(cp, "io", key)
        if v is not None:
            kw[key] = v
    for key in ("membership", "fixed", "random", "hazard", "cov_a", "cov_b"):
        v = _get(cp, "io", key)
        if v is not None:
            kw[key] = _list(v)
    if cp.items("codings"):
        codings = {}
        for col, spec in cp.items("codings"):
            levels = {}
            for item in _list(spec):
                level, _, code = item.partition(":")
                if code.strip() not in ("0", "1"):
                    raise ConfigError(f"[codings] {col}: level {level!r} must map to 0 or 1")
                levels[level.strip()] = int(code)
            codings[col] = levels
        kw["codings"] = codings
    return replace(base, **kw)


def priors_from_config(cp) -> PriorConfig:
    kw = {k: _get(cp, "priors", k, float) for k in
          ("beta_var", "lam_shape", "lam_rate", "tau_shape", "tau_rate", "theta_var")}
    try:
        return PriorConfig(**{k: v for k, v in kw.items() if v is not None})
    except ValueError as exc:
        raise ConfigError(f"[priors] {exc}") from None


def sampler_from_config(cp, seed) -> SamplerConfig:
    kw = dict(n_iter=_get(cp, "sampler", "n_iter", int), burn_in=_get(cp, "sampler", "burn_in", int),
              thin=_get(cp, "sampler", "thin", int), sigma2=_get(cp, "sampler", "sigma2", float),
              alpha_prop=_get(cp, "sampler", "alpha_prop", float),
              initial_scale=_get(cp, "sampler", "initial_scale", float),
              relabel=_get(cp, "sampler", "relabel"),
              use_likelihood=_get(cp, "sampler", "use_likelihood", bool))
    try:
        return SamplerConfig(seed=seed, **{k: v for k, v in kw.items() if v is not None})
    except ValueError as exc:
        raise ConfigError(f"[sampler] {exc}") from None


def scenario_from_config(cp, seed) -> SimulationScenario:
    kw = dict(N=_get(cp, "scenario", "N", int), n_visits=_get(cp, "scenario", "n_visits", int),
              spacing=_get(cp, "scenario", "spacing", float),
              admin_censor=_get(cp, "scenario", "admin_censor", float),
              censor_low=_get(cp, "scenario", "censor_low", float),
              censor_high=_get(cp, "scenario", "censor_high", float),
              censoring=_get(cp, "scenario", "censoring", bool))
    try:
        return SimulationScenario(seed=seed, **{k: v for k, v in kw.items() if v is not None})
    except ValueError as exc:
        raise ConfigError(f"[scenario] {exc}") from None


def derive_seed(*keys) -> int:
    """Deterministic 63-bit seed from integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(2, np.uint64)[0] >> np.uint64(1))


class Run:
    """Resolved settings of one invocation."""

    def __init__(self, args):
        cp = _read_config(args.config)
        self.cp = cp
        seed = args.seed if args.seed is not None else _get(cp, "sampler", "seed", int, 0)
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        self.seed = seed
        self.out = args.out or _get(cp, "io", "out", str, "jlcm_out")
        self.schema = schema_from_config(cp)
        self.priors = priors_from_config(cp)
        self.sampler = sampler_from_config(cp, seed)
        self.scenario = scenario_from_config(cp, _get(cp, "scenario", "seed", int, seed)
                                             if args.seed is None else seed)
        design = args.covariance_design or _get(cp, "model", "covariance_design", str, "regression")
        if design not in ("regression", "intercept-only"):
            raise ConfigError(f"unknown covariance design {design!r}")
        self.design = design
        if args.k is not None and args.k_range is not None:
            raise ConfigError("give either --k or --k-range, not both")
        if args.k_range is not None:
            self.ks = parse_k_range(args.k_range)
        elif args.k is not None:
            self.ks = parse_k_range(str(args.k))
        elif _get(cp, "model", "k_range"):
            self.ks = parse_k_range(_get(cp, "model", "k_range"))
        else:
            self.ks = parse_k_range(str(_get(cp, "model", "K", int, 2)))
        self.landmark = args.landmark if args.landmark is not None else \
            _get(cp, "evaluate", "landmark", float, 0.5)
        horizons = args.horizons or _get(cp, "evaluate", "horizons", str, "0.3")
        self.horizons = parse_horizons(horizons)
        self.data_path = _get(cp, "io", "data")
        self.truth_path = _get(cp, "io", "truth")
        self.fit_dir = _get(cp, "io", "fit_dir", str, self.out)
        self.random_effects = _get(cp, "evaluate", "random_effects", str, "chain")
        if self.random_effects not in ("chain", "landmark"):
            raise ConfigError("[evaluate] random_effects must be chain or landmark")
        self.replicates = _get(cp, "evaluate", "replicates", int, 5)
        self.comparator = _get(cp, "evaluate", "comparator", bool, True)
        self.threads = max(1, int(os.environ.get("JLCM_THREADS", "1") or 1))

    def dataset(self) -> Dataset:
        if self.data_path:
            data = io.load_dataset(self.data_path, self.schema)
        else:
            data = simulate_dataset(self.scenario)
        return data.intercept_only() if self.design == "intercept-only" else data

    def chain_config(self, K) -> SamplerConfig:
        return replace(self.sampler, seed=derive_seed(self.seed, K))


# -- fitting ---------------------------------------------------------------------------

def fit_and_write(data: Dataset, K: int, priors, config: SamplerConfig, outdir):
    """Fit one model and write its output tree; returns the ModelScore."""
    try:
        chain = run_chain(data, K, priors, config)
    except DivergenceError as exc:
        raise DivergenceError(exc.iteration, exc.value, f"K={K}") from None
    chain = relabel(chain, config.relabel)
    io.write_chain(chain, outdir)
    io.write_summary(summarize(chain), os.path.join(outdir, "summary.csv"))
    est = PosteriorEstimates(params=chain.posterior_mean(), W=chain.mean_W(), R=chain.modal_R())
    io.write_random_effects(data, est.W, os.path.join(outdir, "random_effects.csv"))
    probs, modal = posterior_membership(est, data)
    io.write_membership(data, probs, modal, os.path.join(outdir, "membership.csv"),
                        chain_modal=est.R)
    score = compute_dic(chain, data, "none")
    io.write_frame(_score_frame([score]), os.path.join(outdir, "score.csv"))
    return score, chain


def _score_frame(scores):
    return pd.DataFrame([(s.K, s.mean_deviance, s.p_d, s.dic) for s in scores],
                        columns=["K", "mean_deviance", "p_d", "dic"])


def _fit_job(args):
    data, K, priors, config, outdir = args
    score, _ = fit_and_write(data, K, priors, config, outdir)
    return score


def load_estimates(fit_dir, data: Dataset) -> PosteriorEstimates:
    """Plug-in estimates from a fit directory written by ``jlcm fit``."""
    draws = io.read_parameter_draws(fit_dir)
    params = ParameterSet(**{f: v.mean(axis=0) for f, v in draws.items()})
    problems = params.check(data)
    if problems:
        raise ValidationError(["fit does not match the dataset: " + p for p in problems])
    W = io.read_random_effects(os.path.join(fit_dir, "random_effects.csv"), data)
    return PosteriorEstimates(params=params, W=W, R=np.zeros(data.n_obs, dtype=np.int64))


# -- commands --------------------------------------------------------------------------

def cmd_simulate(run: Run):
    data = simulate_dataset(run.scenario)
    io.write_dataset(data, os.path.join(run.out, "data.csv"), io.simulation_schema())
    io.write_truth(data, os.path.join(run.out, "truth.csv"))
    log.info("simulated %d subjects, %d observations", data.n_subjects, data.n_obs)


def cmd_fit(run: Run):
    if len(run.ks) != 1:
        raise ConfigError("fit takes a single K; use select for a range")
    K = run.ks[0]
    data = run.dataset()
    fit_and_write(data, K, run.priors, run.chain_config(K), run.out)


def cmd_select(run: Run):
    data = run.dataset()
    jobs = [(data, K, run.priors, run.chain_config(K), os.path.join(run.out, f"K{K}"))
            for K in run.ks]
    workers = min(run.threads, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_fit_job, jobs))
    else:
        scores = [_fit_job(j) for j in jobs]
    table = _score_frame(scores)
    best = int(np.argmin(table["dic"].to_numpy()))
    table["selected"] = (np.arange(len(table)) == best).astype(int)
    io.write_frame(table, os.path.join(run.out, "select.csv"))


def _design_row(names, base_row, s, obstime):
    return np.array([1.0 if c == io.INTERCEPT else s if c == obstime else base_row[j]
                     for j, c in enumerate(names)])


def plot_frame(est: PosteriorEstimates, data: Dataset, landmark, horizons, obstime, n_grid=11):
    """Per-subject fitted class trajectories and conditional survival curve."""
    p = est.params
    names_x2 = data.covariate_names.get("X2", [])
    names_z = data.covariate_names.get("Z", [])
    grid = np.unique(np.concatenate([np.linspace(0.0, landmark, n_grid),
                                     landmark + np.linspace(0.0, max(horizons), n_grid)]))
    rows = []
    for i in range(data.n_subjects):
        last = data.last_obs[i]
        post = grid[grid >= landmark]
        try:
            surv = dynamic_survival(est, data, landmark, post - landmark, subjects=[i],
                                    random_effects="chain")[0]
        except (DegenerateLandmarkError, ValueError):
            surv = np.full(len(post), np.nan)
        surv_at = dict(zip(post, surv))
        for s in grid:
            x2 = _design_row(names_x2, data.X2[last], s, obstime)
            z = _design_row(names_z, data.Z[last], s, obstime)
            fitted = x2 @ p.beta.T + z @ est.W[i, :data.q]
            rows.append((data.subject_ids[i], s, *fitted, surv_at.get(s, np.nan)))
    cols = ["subject_id", "time"] + [f"fitted_class{k + 1}" for k in range(p.K)] + \
        ["conditional_survival"]
    return pd.DataFrame(rows, columns=cols)


def cmd_predict(run: Run):
    data = run.dataset()
    est = load_estimates(run.fit_dir, data)
    rows, errors = [], []
    for i in range(data.n_subjects):
        try:
            S = dynamic_survival(est, data, run.landmark, run.horizons, subjects=[i],
                                 random_effects=run.random_effects)[0]
        except (DegenerateLandmarkError, ValueError) as exc:
            errors.append((data.subject_ids[i], str(exc)))
            S = np.full(len(run.horizons), np.nan)
        rows += [(data.subject_ids[i], run.landmark, h, s) for h, s in zip(run.horizons, S)]
    io.write_frame(pd.DataFrame(rows, columns=["subject_id", "landmark", "horizon",
                                               "conditional_survival"]),
                   os.path.join(run.out, "predictions.csv"))
    io.write_frame(pd.DataFrame(errors, columns=["subject_id", "error"]),
                   os.path.join(run.out, "prediction_errors.csv"))
    obstime = run.schema.obstime
    io.write_frame(plot_frame(est, data, run.landmark, run.horizons, obstime),
                   os.path.join(run.out, "plot_data.csv"))
    for sid, msg in errors:
        log.warning("subject %s: %s", sid, msg)


def _auc_for(est, data, landmark, horizon, random_effects):
    at = np.flatnonzero(data.followup > landmark)
    S = dynamic_survival(est, data, landmark, [horizon], subjects=at,
                         random_effects=random_effects)[:, 0]
    return ipcw_auc(1.0 - S, data.followup[at], data.event[at], landmark, horizon)


def cmd_evaluate(run: Run):
    K = run.ks[0]
    horizon = run.horizons[0]
    models = [("general", False)] + ([("intercept-only", True)] if run.comparator else [])
    if run.data_path:
        base = io.load_dataset(run.data_path, run.schema)
        truth = io.read_truth(run.truth_path, base) if run.truth_path else None
        replicates = [(1, base, truth)]
    else:
        replicates = []
        for r in range(1, run.replicates + 1):
            d = simulate_dataset(replace(run.scenario, seed=derive_seed(run.seed, r, 0)))
            replicates.append((r, d, d.true_classes))
    rows = []
    for r, data, truth in replicates:
        for name, intercept in models:
            d = data.intercept_only() if intercept else data
            config = replace(run.sampler, seed=derive_seed(run.seed, r, K))
            chain = relabel(run_chain(d, K, run.priors, config), config.relabel)
            est = PosteriorEstimates(params=chain.posterior_mean(), W=chain.mean_W(),
                                     R=chain.modal_R())
            try:
                auc = _auc_for(est, d, run.landmark, horizon, run.random_effects)
            except (UndefinedAUCError, DegenerateLandmarkError) as exc:
                log.warning("replicate %d (%s): %s", r, name, exc)
                auc = np.nan
            err = np.nan
            if truth is not None:
                err = error_rate(posterior_membership(est, d)[1], truth)
            rows.append((r, name, K, run.landmark, horizon, auc, err))
    io.write_frame(pd.DataFrame(rows, columns=["replicate", "model", "K", "landmark", "horizon",
                                               "auc", "error_rate"]),
                   os.path.join(run.out, "metrics.csv"))


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select,
            "predict": cmd_predict, "evaluate": cmd_evaluate}


def build_parser():
    ap = argparse.ArgumentParser(prog="jlcm", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--seed", type=int, help="run seed (overrides the config)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--k", type=int, help="number of classes")
    ap.add_argument("--k-range", help="class counts to compare, A..B")
    ap.add_argument("--landmark", type=float)
    ap.add_argument("--horizons", help="comma-separated prediction horizons")
    ap.add_argument("--covariance-design", choices=["regression", "intercept-only"])
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _category(exc):
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, ValidationError):
        return "validation"
    if isinstance(exc, DivergenceError):
        return "divergence"
    if isinstance(exc, (DegenerateLandmarkError, UndefinedAUCError)):
        return "prediction"
    if isinstance(exc, OSError):
        return "io"
    return "value"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
        COMMANDS[args.command](run)
    except (ValueError, OSError, DivergenceError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {_category(exc)}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
