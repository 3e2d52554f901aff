"""Command-line interface: simulate, fit, impute, eval, and icc.

Configuration is config-file-first with flag overrides: a JSON document
passed via --config supplies defaults, any flag given explicitly on the
command line (or through a VIBO_IRT_* environment variable) wins, and the
global --seed fills every unset per-stage seed. Failures print a
machine-readable JSON object to stderr and exit nonzero.
"""

import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import click
import jsonschema
import numpy as np
from click.core import ParameterSource

from . import baselines, engine, evaluation
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ResponseDataset,
    read_response_csv,
    simulate,
    write_items_csv,
    write_posterior_csv,
    write_simulation,
)
from .diffcore import DimensionError, NumericalError
from .engine import ViboConfig
from .models import FAMILIES, RESPONSE_MODES, ModelSpec, prob_matrix

_MISSING = object()

# ---------------------------------------------------------------------------
# machine-readable failure plumbing


def _fail(code: str, message: str, **details) -> None:
    body = {"code": code, "message": message}
    if details:
        body["details"] = {k: str(v) for k, v in details.items()}
    click.echo(json.dumps({"error": body}), err=True)
    sys.exit(1)


def _guarded(fn):
    """Translate library failures into error JSON on stderr + exit 1."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except jsonschema.ValidationError as err:
            _fail("config_schema", f"config does not match the schema: "
                  f"{err.message}", path="/".join(str(p) for p in err.absolute_path))
        except FileNotFoundError as err:
            _fail("missing_file", str(err))
        except NumericalError as err:
            _fail("numerical", str(err))
        except DimensionError as err:
            _fail("dimension", str(err))
        except (ValueError, TypeError, KeyError) as err:
            _fail("invalid_input", str(err))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# run configuration


def _int_field(minimum=None):
    out = {"type": "integer"}
    if minimum is not None:
        out["minimum"] = minimum
    return out


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "algorithm": {"enum": ["vibo", "jmle", "em"]},
        "data": {"type": "string"},
        "checkpoint": {"type": "string"},
        "out_dir": {"type": "string"},
        "seed": _int_field(),
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "k_dim": _int_field(minimum=1),
                "response_mode": {"enum": list(RESPONSE_MODES)},
                "hidden_size": _int_field(minimum=1),
                "hidden_layers": _int_field(minimum=1),
            },
        },
        "vibo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta": {"type": "number", "minimum": 0},
                "epochs": _int_field(minimum=0),
                "batch_size": _int_field(minimum=1),
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "seed": _int_field(),
                "posterior_mode": {"enum": list(engine.POSTERIOR_MODES)},
                "flows": _int_field(minimum=0),
                "mc_samples": _int_field(minimum=1),
            },
        },
        "jmle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _int_field(minimum=0),
                "batch_size": _int_field(minimum=1),
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "seed": _int_field(),
            },
        },
        "em": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_nodes": _int_field(minimum=2),
                "max_iterations": _int_field(minimum=1),
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "seed": _int_field(),
            },
        },
        "holdout": {
            "type": "object",
            "additionalProperties": False,
            "required": ["fraction"],
            "properties": {
                "fraction": {"type": "number", "exclusiveMinimum": 0,
                             "exclusiveMaximum": 1},
                "seed": _int_field(),
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": _int_field(minimum=1),
                "sims": _int_field(minimum=1),
                "seed": _int_field(),
            },
        },
        "metrics": {
            "type": "array",
            "items": {"enum": ["log_marginal", "ppc"]},
        },
    },
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        cfg = json.load(fh)
    jsonschema.validate(cfg, CONFIG_SCHEMA,
                        cls=jsonschema.Draft202012Validator)
    return cfg


def _cfg_get(cfg: dict, *path, default=_MISSING):
    cur = cfg
    for key in path:
        if not isinstance(cur, dict) or key not in cur:
            return default
        cur = cur[key]
    return cur


def _resolve(ctx, name, cfg, *path, fallback=_MISSING):
    """Flag if given explicitly, else config value, else the flag default."""
    source = ctx.get_parameter_source(name)
    value = ctx.params[name]
    if source in (ParameterSource.COMMANDLINE, ParameterSource.ENVIRONMENT):
        return value
    got = _cfg_get(cfg, *path)
    if got is not _MISSING:
        return got
    if value is None and fallback is not _MISSING:
        return fallback
    return value


def _load_dataset(path) -> ResponseDataset:
    if path is None:
        _fail("invalid_input", "no dataset given: pass --data or set "
              "\"data\" in the config")
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    return read_response_csv(path)


def _load_fitted(path):
    if path is None:
        _fail("invalid_input", "no checkpoint given: pass --checkpoint or "
              "set \"checkpoint\" in the config")
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint file not found: {path}")
    return load_checkpoint(path)


def _out_dir(ctx) -> Path:
    out = Path(ctx.obj["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_json(payload: dict) -> None:
    click.echo(json.dumps(payload))


# ---------------------------------------------------------------------------
# group


@click.group(context_settings={"auto_envvar_prefix": "VIBO_IRT",
                               "help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=str, default=None,
              help="JSON run configuration supplying defaults for all flags.")
@click.option("--seed", type=int, default=None,
              help="Global seed filling any per-stage seed left unset.")
@click.option("--out-dir", type=str, default=None,
              help="Directory for output artifacts (default '.').")
@click.option("--threads", type=int, default=None,
              help="Thread count hint exported to the numeric libraries.")
@click.pass_context
@_guarded
def main(ctx, config_path, seed, out_dir, threads):
    """Variational, joint-ML, and EM fitting for item response models."""
    if threads is not None:
        if threads < 1:
            raise ValueError(f"--threads must be >= 1, got {threads}")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    cfg = _load_config(config_path)
    ctx.obj = {
        "cfg": cfg,
        "seed": seed if seed is not None else _cfg_get(cfg, "seed", default=None),
        "out_dir": out_dir if out_dir is not None
        else _cfg_get(cfg, "out_dir", default="."),
    }


def _global_seed(ctx, default=0) -> int:
    seed = ctx.obj.get("seed")
    return default if seed is None else int(seed)


# ---------------------------------------------------------------------------
# simulate


@main.command("simulate")
@click.option("--family", type=click.Choice(["2pl", "mirt", "idl"]), default="2pl")
@click.option("--n", "n_persons", type=int, default=100, help="Number of people.")
@click.option("--m", "n_items", type=int, default=10, help="Number of items.")
@click.option("--k", "k_dim", type=int, default=1, help="Ability dimensions.")
@click.option("--missing", "missing_frac", type=float, default=0.0,
              help="Fraction of cells masked at random.")
@click.option("--mode", type=click.Choice(list(RESPONSE_MODES)), default="binary")
@click.option("--seed", type=int, default=None)
@click.option("--prefix", type=str, default="sim", help="Output file stem.")
@click.pass_context
@_guarded
def cmd_simulate(ctx, family, n_persons, n_items, k_dim, missing_frac, mode,
                 seed, prefix):
    """Draw a synthetic dataset and write it with ground-truth sidecars."""
    seed = seed if seed is not None else _global_seed(ctx)
    ds = simulate(family=family, n_persons=n_persons, n_items=n_items,
                  k_dim=k_dim, missing_frac=missing_frac, seed=seed,
                  response_mode=mode)
    out = _out_dir(ctx)
    path = out / f"{prefix}.csv"
    write_simulation(path, ds)
    _echo_json({
        "dataset": str(path),
        "abilities": str(path.with_suffix("")) + ".abilities.csv",
        "items": str(path.with_suffix("")) + ".items.csv",
        "n_persons": n_persons,
        "n_items": n_items,
        "seed": seed,
    })


# ---------------------------------------------------------------------------
# fit


def _jmle_report(result) -> dict:
    return {
        "algorithm": "jmle",
        "spec": dataclasses.asdict(result.model.spec),
        "options": {"epochs": result.epochs, "batch_size": result.batch_size,
                    "learning_rate": result.learning_rate, "seed": result.seed},
        "trace": result.trace.tolist(),
        "wall_clock_sec": result.wall_clock_sec,
    }


def _em_report(result) -> dict:
    return {
        "algorithm": "em",
        "spec": dataclasses.asdict(result.model.spec),
        "n_iterations": int(result.n_iterations),
        "converged": bool(result.converged),
        "trace": result.trace.tolist(),
        "log_marginal": float(result.log_marginal_per_person.sum()),
        "item_flags": list(result.item_flags),
    }


@main.command("fit")
@click.option("--data", "data_path", type=str, default=None)
@click.option("--algorithm", type=click.Choice(["vibo", "jmle", "em"]), default=None)
@click.option("--family", type=click.Choice(list(FAMILIES)), default=None)
@click.option("--k-dim", type=int, default=None)
@click.option("--response-mode", type=click.Choice(list(RESPONSE_MODES)), default=None)
@click.option("--hidden-size", type=int, default=None)
@click.option("--hidden-layers", type=int, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--posterior-mode", type=click.Choice(list(engine.POSTERIOR_MODES)),
              default=None)
@click.option("--flows", type=int, default=None)
@click.option("--mc-samples", type=int, default=None)
@click.option("--n-nodes", type=int, default=None)
@click.option("--max-iterations", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--fit-seed", type=int, default=None,
              help="Seed for the chosen algorithm (defaults to --seed).")
@click.option("--holdout-fraction", type=float, default=None,
              help="Hide this fraction of observed cells before fitting.")
@click.option("--holdout-seed", type=int, default=None)
@click.pass_context
@_guarded
def cmd_fit(ctx, **_):
    """Fit a model and write checkpoint, report, and parameter CSVs."""
    cfg = ctx.obj["cfg"]
    data_path = _resolve(ctx, "data_path", cfg, "data")
    ds = _load_dataset(data_path)

    algorithm = _resolve(ctx, "algorithm", cfg, "algorithm", fallback="vibo")
    response_mode = _resolve(ctx, "response_mode", cfg, "model",
                             "response_mode", fallback=ds.mode)
    spec = ModelSpec(
        family=_resolve(ctx, "family", cfg, "model", "family", fallback="2pl"),
        k_dim=_resolve(ctx, "k_dim", cfg, "model", "k_dim", fallback=1),
        response_mode=response_mode,
        hidden_size=_resolve(ctx, "hidden_size", cfg, "model", "hidden_size",
                             fallback=64),
        hidden_layers=_resolve(ctx, "hidden_layers", cfg, "model",
                               "hidden_layers", fallback=3),
    )
    fit_seed = _resolve(ctx, "fit_seed", cfg, algorithm, "seed",
                        fallback=_global_seed(ctx))

    holdout_fraction = _resolve(ctx, "holdout_fraction", cfg, "holdout",
                                "fraction", fallback=None)
    holdout_meta = None
    train = ds
    if holdout_fraction is not None:
        holdout_seed = _resolve(ctx, "holdout_seed", cfg, "holdout", "seed",
                                fallback=_global_seed(ctx))
        train, split = evaluation.make_holdout(ds, float(holdout_fraction),
                                               int(holdout_seed))
        holdout_meta = {"fraction": split.fraction, "seed": split.seed}

    out = _out_dir(ctx)
    if algorithm == "vibo":
        config = ViboConfig(
            beta=_resolve(ctx, "beta", cfg, "vibo", "beta", fallback=0.5),
            epochs=_resolve(ctx, "epochs", cfg, "vibo", "epochs", fallback=100),
            batch_size=_resolve(ctx, "batch_size", cfg, "vibo", "batch_size",
                                fallback=16),
            learning_rate=_resolve(ctx, "learning_rate", cfg, "vibo",
                                   "learning_rate", fallback=5e-3),
            seed=int(fit_seed),
            posterior_mode=_resolve(ctx, "posterior_mode", cfg, "vibo",
                                    "posterior_mode", fallback="product"),
            flows=_resolve(ctx, "flows", cfg, "vibo", "flows", fallback=0),
            mc_samples=_resolve(ctx, "mc_samples", cfg, "vibo", "mc_samples",
                                fallback=1),
        )
        result = engine.fit(train, spec, config)
        report = engine.fit_report(result)
        items_raw = engine.item_point_estimates(result.state)
        mu, var = engine.infer_ability_posterior(result, train.values, train.mask)
    elif algorithm == "jmle":
        result = baselines.fit_jmle(
            train, spec,
            epochs=_resolve(ctx, "epochs", cfg, "jmle", "epochs", fallback=100),
            batch_size=_resolve(ctx, "batch_size", cfg, "jmle", "batch_size",
                                fallback=16),
            learning_rate=_resolve(ctx, "learning_rate", cfg, "jmle",
                                   "learning_rate", fallback=5e-3),
            seed=int(fit_seed))
        report = _jmle_report(result)
        items_raw = result.items_raw
        mu, var = result.abilities, np.zeros_like(result.abilities)
    elif algorithm == "em":
        result = baselines.em_fit(
            train, spec,
            n_nodes=_resolve(ctx, "n_nodes", cfg, "em", "n_nodes", fallback=61),
            max_iterations=_resolve(ctx, "max_iterations", cfg, "em",
                                    "max_iterations", fallback=50),
            tol=_resolve(ctx, "tol", cfg, "em", "tol", fallback=1e-4),
            seed=int(fit_seed))
        report = _em_report(result)
        items_raw = result.items_raw
        mu, var = result.abilities, result.ability_var
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    checkpoint_path = out / "checkpoint.json"
    report_path = out / "report.json"
    items_path = out / "items.csv"
    posterior_path = out / "posterior.csv"
    save_checkpoint(checkpoint_path, result, holdout=holdout_meta,
                    extra={"data": str(data_path)})
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    write_items_csv(items_path, spec, np.asarray(items_raw), train.item_ids)
    write_posterior_csv(posterior_path, train.person_ids, np.asarray(mu),
                        np.asarray(var))
    _echo_json({
        "checkpoint": str(checkpoint_path),
        "report": str(report_path),
        "items": str(items_path),
        "posterior": str(posterior_path),
        "algorithm": algorithm,
        "n_persons": train.values.shape[0],
        "n_items": train.values.shape[1],
    })


# ---------------------------------------------------------------------------
# predictions shared by impute/eval


def _probability_matrix(result, dataset: ResponseDataset) -> np.ndarray:
    """Response probabilities for the dataset rows under a fitted result."""
    if isinstance(result, engine.FitResult):
        return engine.predicted_probabilities(result, dataset.values,
                                              dataset.mask)
    if isinstance(result, baselines.JmleResult):
        abilities = baselines.refit_abilities(result.model, result.items_raw,
                                              dataset.values, dataset.mask)
        return prob_matrix(result.model, abilities, result.items_raw)
    eap, _ = baselines.em_eap_abilities(result, dataset)
    return prob_matrix(result.model, eap, result.items_raw)


@main.command("impute")
@click.option("--checkpoint", "checkpoint_path", type=str, default=None)
@click.option("--data", "data_path", type=str, default=None)
@click.option("--fraction", type=float, default=None,
              help="Holdout fraction (defaults to the checkpoint's record).")
@click.option("--holdout-seed", type=int, default=None)
@click.pass_context
@_guarded
def cmd_impute(ctx, checkpoint_path, data_path, fraction, holdout_seed):
    """Score held-out imputation accuracy for a fitted checkpoint."""
    cfg = ctx.obj["cfg"]
    result, payload = _load_fitted(_resolve(ctx, "checkpoint_path", cfg,
                                            "checkpoint"))
    ds = _load_dataset(_resolve(ctx, "data_path", cfg, "data"))

    recorded = payload.get("holdout") or {}
    fraction = _resolve(ctx, "fraction", cfg, "holdout", "fraction",
                        fallback=recorded.get("fraction"))
    holdout_seed = _resolve(ctx, "holdout_seed", cfg, "holdout", "seed",
                            fallback=recorded.get("seed", _global_seed(ctx)))
    if fraction is None:
        _fail("invalid_input", "no holdout recorded in the checkpoint; "
              "pass --fraction")
    train, split = evaluation.make_holdout(ds, float(fraction),
                                           int(holdout_seed))
    prob = _probability_matrix(result, train)
    accuracy = evaluation.impute_accuracy(prob, ds, split)
    metrics = {
        "accuracy": accuracy,
        "n_holdout": split.n_cells,
        "fraction": float(fraction),
        "holdout_seed": int(holdout_seed),
    }
    out = _out_dir(ctx) / "impute.json"
    with open(out, "w") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    _echo_json(metrics)


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", type=str, default=None)
@click.option("--data", "data_path", type=str, default=None)
@click.option("--samples", type=int, default=None,
              help="Importance samples for the log-marginal estimate.")
@click.option("--sims", type=int, default=None,
              help="Simulations for posterior predictive statistics.")
@click.option("--eval-seed", type=int, default=None)
@click.option("--metrics", "metrics_arg", type=str, default=None,
              help="Comma list from {log_marginal, ppc}; default both.")
@click.pass_context
@_guarded
def cmd_eval(ctx, checkpoint_path, data_path, samples, sims, eval_seed,
             metrics_arg):
    """Evaluate a fitted checkpoint on a dataset."""
    cfg = ctx.obj["cfg"]
    result, _ = _load_fitted(_resolve(ctx, "checkpoint_path", cfg, "checkpoint"))
    ds = _load_dataset(_resolve(ctx, "data_path", cfg, "data"))
    samples = _resolve(ctx, "samples", cfg, "eval", "samples", fallback=1000)
    sims = _resolve(ctx, "sims", cfg, "eval", "sims", fallback=100)
    eval_seed = _resolve(ctx, "eval_seed", cfg, "eval", "seed",
                         fallback=_global_seed(ctx))
    if metrics_arg is not None:
        wanted = [m.strip() for m in metrics_arg.split(",") if m.strip()]
    else:
        wanted = _cfg_get(cfg, "metrics", default=["log_marginal", "ppc"])
    unknown = set(wanted) - {"log_marginal", "ppc"}
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}; "
                         f"choose from ['log_marginal', 'ppc']")

    report: dict = {"n_persons": ds.values.shape[0],
                    "n_items": ds.values.shape[1]}
    if "log_marginal" in wanted:
        if isinstance(result, engine.FitResult):
            report["log_marginal"] = evaluation.log_marginal(
                result, ds.values, ds.mask, n_samples=int(samples),
                seed=int(eval_seed))
        elif isinstance(result, baselines.EmResult):
            rule = baselines.gauss_hermite_rule(61, result.model.spec.k_dim)
            _, total, _ = baselines.em_e_step(ds, result.model, rule,
                                              result.items_raw)
            report["log_marginal"] = float(total)
        else:
            # a point-estimate model has no posterior to integrate over
            report["log_marginal"] = None
    if "ppc" in wanted:
        source = result if isinstance(result, engine.FitResult) else (
            _probability_matrix(result, ds))
        rows, cols = evaluation.posterior_predictive_stats(
            source, ds, n_sims=int(sims), seed=int(eval_seed))
        report["ppc"] = {"row_means": rows.tolist(), "col_means": cols.tolist()}
    out = _out_dir(ctx) / "eval.json"
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _echo_json(report)


# ---------------------------------------------------------------------------
# item characteristic curves


def _fitted_items(result) -> np.ndarray:
    if isinstance(result, engine.FitResult):
        return engine.item_point_estimates(result.state)
    return np.asarray(result.items_raw, dtype=np.float64)


def _ability_grid(k_dim: int, lo: float, hi: float, points: int,
                  diagonal: bool, pair) -> tuple[np.ndarray, list[str]]:
    grid = np.linspace(lo, hi, points)
    if diagonal:
        A = np.repeat(grid[:, None], k_dim, axis=1)
        return A, ["a"]
    if k_dim == 1:
        return grid[:, None], ["a"]
    if pair is None:
        if k_dim == 2:
            pair = (1, 2)
        else:
            raise ValueError(f"ability has {k_dim} dimensions; pass --pair "
                             f"i,j or --diagonal to choose a sweep")
    i, j = pair
    if not (1 <= i <= k_dim and 1 <= j <= k_dim and i != j):
        raise ValueError(f"--pair must name two distinct dimensions in "
                         f"1..{k_dim}, got {i},{j}")
    aa, bb = np.meshgrid(grid, grid, indexing="ij")
    A = np.zeros((points * points, k_dim))
    A[:, i - 1] = aa.ravel()
    A[:, j - 1] = bb.ravel()
    return A, [f"a_{i}", f"a_{j}"]


@main.command("icc")
@click.option("--checkpoint", "checkpoint_path", type=str, default=None)
@click.option("--items", "items_arg", type=str, default=None,
              help="Comma list of item indices (default: all items).")
@click.option("--item-vector", type=str, default=None,
              help="Explicit raw item vector, comma-separated, instead of "
                   "fitted items.")
@click.option("--grid-min", type=float, default=-5.0, show_default=True)
@click.option("--grid-max", type=float, default=5.0, show_default=True)
@click.option("--points", type=int, default=101, show_default=True)
@click.option("--diagonal", is_flag=True, default=False,
              help="Sweep all ability dimensions together along the diagonal.")
@click.option("--pair", type=str, default=None,
              help="Two 1-based ability dimensions for a 2-d grid, e.g. 1,2.")
@click.option("--out", "out_name", type=str, default="icc.csv")
@click.pass_context
@_guarded
def cmd_icc(ctx, checkpoint_path, items_arg, item_vector, grid_min, grid_max,
            points, diagonal, pair, out_name):
    """Tabulate response probabilities over an ability grid."""
    cfg = ctx.obj["cfg"]
    result, _ = _load_fitted(_resolve(ctx, "checkpoint_path", cfg, "checkpoint"))
    model = result.model
    spec = model.spec
    if points < 2:
        raise ValueError(f"--points must be >= 2, got {points}")
    if grid_min >= grid_max:
        raise ValueError(f"--grid-min must be below --grid-max, got "
                         f"[{grid_min}, {grid_max}]")

    if item_vector is not None:
        vec = np.array([float(tok) for tok in item_vector.split(",")])
        if vec.shape != (spec.item_dim,):
            raise ValueError(f"--item-vector needs {spec.item_dim} values for "
                             f"family {spec.family!r}, got {vec.size}")
        bank = vec[None, :]
        labels = ["custom"]
    else:
        fitted = _fitted_items(result)
        if items_arg is None:
            idx = list(range(fitted.shape[0]))
        else:
            idx = [int(tok) for tok in items_arg.split(",")]
            bad = [i for i in idx if not 0 <= i < fitted.shape[0]]
            if bad:
                raise ValueError(f"item indices {bad} out of range for "
                                 f"{fitted.shape[0]} items")
        bank = fitted[idx]
        labels = [str(i) for i in idx]

    pair_parsed = None
    if pair is not None:
        parts = pair.split(",")
        if len(parts) != 2:
            raise ValueError(f"--pair must be two comma-separated dimensions, "
                             f"got {pair!r}")
        pair_parsed = (int(parts[0]), int(parts[1]))
    A, a_cols = _ability_grid(spec.k_dim, grid_min, grid_max, points,
                              diagonal, pair_parsed)
    prob = prob_matrix(model, A, bank)

    path = _out_dir(ctx) / out_name
    with open(path, "w") as fh:
        fh.write(",".join(["item"] + a_cols + ["prob"]) + "\n")
        for col, label in enumerate(labels):
            for row in range(A.shape[0]):
                if len(a_cols) == 1:
                    coords = [repr(float(A[row, 0]))]
                else:
                    i = int(a_cols[0][2:]) - 1
                    j = int(a_cols[1][2:]) - 1
                    coords = [repr(float(A[row, i])), repr(float(A[row, j]))]
                fh.write(",".join([label] + coords +
                                  [repr(float(prob[row, col]))]) + "\n")
    _echo_json({"icc": str(path), "rows": A.shape[0] * len(labels),
                "items": labels})


if __name__ == "__main__":
    main()
