"""Value-exact JSON checkpoints for fitted models.

A checkpoint records the model specification, the fitting configuration,
and every parameter store (values plus optimizer moments) with repr-exact
floats, so save -> load -> save is byte-stable and a loaded model predicts
bit-identically. Loading rebuilds the object graph by re-running the
builders with the recorded configuration, then overwrites every tensor in
place from the stored payload.
"""

import dataclasses
import json

import numpy as np

from .baselines import EmResult, JmleResult
from .data import ResponseDataset
from .diffcore import ParamStore
from .diffcore.params import store_from_dict, store_to_dict
from .engine import FitResult, ViboConfig, build_variational_state
from .models import ModelSpec, build_generative_model

FORMAT = "vibo-irt-checkpoint/1"

__all__ = ["FORMAT", "save_checkpoint", "load_checkpoint",
           "result_to_payload", "result_from_payload"]


def _spec_to_dict(spec: ModelSpec) -> dict:
    return dataclasses.asdict(spec)


def _load_into(store: ParamStore, payload: dict) -> None:
    """Overwrite an existing store's tensors and moments in place."""
    want = set(payload["params"])
    have = set(store.names())
    if want != have:
        raise ValueError(f"checkpoint parameters {sorted(want)} do not match "
                         f"rebuilt model parameters {sorted(have)}")
    fresh = store_from_dict(payload)
    for name in store.names():
        tensor = store[name]
        if fresh[name].data.shape != tensor.data.shape:
            raise ValueError(f"checkpoint shape {fresh[name].data.shape} for "
                             f"{name!r} does not match {tensor.data.shape}")
        tensor.data[...] = fresh[name].data
        store._m[name][...] = fresh._m[name]
        store._v[name][...] = fresh._v[name]
    store.step_count = fresh.step_count


def result_to_payload(result, holdout: dict | None = None,
                      extra: dict | None = None) -> dict:
    """Serialize a fitted result (any of the three algorithms) to a dict."""
    if isinstance(result, FitResult):
        body = {
            "algorithm": "vibo",
            "spec": _spec_to_dict(result.model.spec),
            "config": dataclasses.asdict(result.config),
            "n_persons": result.n_persons,
            "n_items": result.n_items,
            "model_store": store_to_dict(result.model.store),
            "variational_store": store_to_dict(result.state.phi),
            "trace": np.asarray(result.trace, dtype=np.float64).tolist(),
            "epoch_stats": result.epoch_stats,
            "wall_clock_sec": result.wall_clock_sec,
        }
    elif isinstance(result, JmleResult):
        body = {
            "algorithm": "jmle",
            "spec": _spec_to_dict(result.model.spec),
            "options": {"epochs": result.epochs,
                        "batch_size": result.batch_size,
                        "learning_rate": result.learning_rate,
                        "seed": result.seed},
            "n_persons": int(result.abilities.shape[0]),
            "n_items": int(result.items_raw.shape[0]),
            "model_store": store_to_dict(result.model.store),
            "abilities": result.abilities.tolist(),
            "items_raw": result.items_raw.tolist(),
            "trace": np.asarray(result.trace, dtype=np.float64).tolist(),
            "wall_clock_sec": result.wall_clock_sec,
        }
    elif isinstance(result, EmResult):
        body = {
            "algorithm": "em",
            "spec": _spec_to_dict(result.model.spec),
            "n_persons": int(result.abilities.shape[0]),
            "n_items": int(result.items_raw.shape[0]),
            "items_raw": result.items_raw.tolist(),
            "abilities": result.abilities.tolist(),
            "ability_var": result.ability_var.tolist(),
            "trace": np.asarray(result.trace, dtype=np.float64).tolist(),
            "log_marginal_per_person": result.log_marginal_per_person.tolist(),
            "converged": result.converged,
            "n_iterations": result.n_iterations,
            "item_flags": list(result.item_flags),
        }
    else:
        raise TypeError(f"cannot checkpoint object of type {type(result).__name__}")
    payload = {"format": FORMAT, **body}
    if holdout is not None:
        payload["holdout"] = {"fraction": float(holdout["fraction"]),
                              "seed": int(holdout["seed"])}
    if extra is not None:
        payload["extra"] = extra
    return payload


def result_from_payload(payload: dict):
    """Rebuild the fitted result recorded by result_to_payload."""
    if payload.get("format") != FORMAT:
        raise ValueError(f"not a recognized checkpoint (format "
                         f"{payload.get('format')!r}, expected {FORMAT!r})")
    algorithm = payload["algorithm"]
    spec = ModelSpec(**payload["spec"])
    if algorithm == "vibo":
        config = ViboConfig(**payload["config"])
        rng = np.random.default_rng(config.seed)
        model = build_generative_model(spec, rng)
        state = build_variational_state(spec, payload["n_persons"],
                                        payload["n_items"], config, rng)
        _load_into(model.store, payload["model_store"])
        _load_into(state.phi, payload["variational_store"])
        return FitResult(model=model, state=state, config=config,
                         trace=np.array(payload["trace"], dtype=np.float64),
                         epoch_stats=payload["epoch_stats"],
                         wall_clock_sec=payload["wall_clock_sec"],
                         n_persons=payload["n_persons"],
                         n_items=payload["n_items"])
    if algorithm == "jmle":
        opts = payload["options"]
        model = build_generative_model(spec, np.random.default_rng(opts["seed"]))
        _load_into(model.store, payload["model_store"])
        return JmleResult(model=model,
                          abilities=np.array(payload["abilities"], dtype=np.float64),
                          items_raw=np.array(payload["items_raw"], dtype=np.float64),
                          trace=np.array(payload["trace"], dtype=np.float64),
                          wall_clock_sec=payload["wall_clock_sec"],
                          epochs=opts["epochs"], batch_size=opts["batch_size"],
                          learning_rate=opts["learning_rate"], seed=opts["seed"])
    if algorithm == "em":
        model = build_generative_model(spec, np.random.default_rng(0))
        return EmResult(model=model,
                        items_raw=np.array(payload["items_raw"], dtype=np.float64),
                        abilities=np.array(payload["abilities"], dtype=np.float64),
                        ability_var=np.array(payload["ability_var"], dtype=np.float64),
                        trace=np.array(payload["trace"], dtype=np.float64),
                        log_marginal_per_person=np.array(
                            payload["log_marginal_per_person"], dtype=np.float64),
                        converged=payload["converged"],
                        n_iterations=payload["n_iterations"],
                        item_flags=list(payload["item_flags"]))
    raise ValueError(f"unknown checkpoint algorithm {algorithm!r}")


def save_checkpoint(path, result, holdout: dict | None = None,
                    extra: dict | None = None) -> None:
    payload = result_to_payload(result, holdout=holdout, extra=extra)
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (result, payload); payload keeps holdout/extra metadata."""
    with open(path) as fh:
        payload = json.load(fh)
    return result_from_payload(payload), payload
