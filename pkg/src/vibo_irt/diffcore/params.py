"""Named parameter collections, reverse-mode gradients, and Adam.

A ParamStore owns the trainable tensors for one model component plus the
Adam moment estimates and step counter, so checkpointing a store captures
everything needed to resume optimization bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, NumericalError, Tensor, run_backward


class ParamStore:
    """Mapping of name -> leaf Tensor with attached optimizer state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count: int = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"parameter {name!r} initialized with non-finite values")
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None


class Gradient:
    """Named arrays mirroring a ParamStore's parameter shapes."""

    def __init__(self, values: dict[str, np.ndarray]):
        self.values = values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return sorted(self.values)


def backward(objective: Tensor, *stores: ParamStore):
    """Differentiate a scalar objective and collect per-store gradients.

    Parameters never touched by the objective get zero gradients. Returns
    one Gradient when a single store is given, else a tuple in call order.
    """
    if not np.all(np.isfinite(objective.data)):
        raise NumericalError("objective is non-finite")
    run_backward(objective)
    grads = []
    for store in stores:
        values = {}
        for name, t in store.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            g = np.asarray(g, dtype=np.float64)
            if g.shape != t.data.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} != parameter shape {t.data.shape} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            values[name] = g
        grads.append(Gradient(values))
    return grads[0] if len(grads) == 1 else tuple(grads)


def adam_step(store: ParamStore, grad: Gradient, learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update, applied atomically.

    Every proposed value is computed and checked finite before any
    parameter is overwritten, so a failing step leaves the store intact.
    """
    if learning_rate <= 0.0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("beta1/beta2 must lie in [0, 1)")
    t = store.step_count + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    staged = []
    for name in store.names():
        p = store[name]
        if name not in grad:
            raise DimensionError(f"gradient missing parameter {name!r}")
        g = grad[name]
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = beta1 * store._m[name] + (1.0 - beta1) * g
        v = beta2 * store._v[name] + (1.0 - beta2) * g * g
        new = p.data - learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
        if not np.all(np.isfinite(new)):
            raise NumericalError(f"Adam step produced non-finite values for {name!r}")
        staged.append((name, m, v, new))
    for name, m, v, new in staged:
        store._m[name] = m
        store._v[name] = v
        store[name].data = new
    store.step_count = t
    return store


# ---------------------------------------------------------------------------
# serialization
#
# JSON with repr-exact floats: python's float formatting is shortest
# round-trip, so every value survives save/load bit-for-bit.


def store_to_dict(store: ParamStore) -> dict:
    return {
        "step_count": store.step_count,
        "params": {
            name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
            for name, t in store.items()
        },
        "moments": {
            name: {
                "m": store._m[name].ravel().tolist(),
                "v": store._v[name].ravel().tolist(),
            }
            for name in store.names()
        },
    }


def store_from_dict(payload: dict) -> ParamStore:
    store = ParamStore()
    for name, rec in payload["params"].items():
        shape = tuple(rec["shape"])
        store.add(name, np.array(rec["values"], dtype=np.float64).reshape(shape))
        mom = payload["moments"][name]
        store._m[name] = np.array(mom["m"], dtype=np.float64).reshape(shape)
        store._v[name] = np.array(mom["v"], dtype=np.float64).reshape(shape)
    store.step_count = int(payload["step_count"])
    return store
