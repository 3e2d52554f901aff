"""Classical estimation baselines.

Joint maximum likelihood (JMLE) treats abilities and item vectors as free
parameters of one big likelihood and climbs it with minibatch Adam — the
same optimizer budget as the variational engine, no posteriors.

Marginal maximum likelihood (EM) integrates abilities out over a fixed
Gauss-Hermite grid: the E-step computes per-person responsibilities over
the grid nodes in two matrix products, and the M-step re-maximizes each
item's expected log-likelihood separately with L-BFGS-B, using exact
gradients obtained from the same differentiable response models. Abilities
are reported as posterior means over the grid (EAP). Binary responses
only, analytic families only: the M-step relies on items being coupled
solely through their own parameter vectors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .data import ResponseDataset
from .diffcore import NumericalError, ParamStore, Tensor, backward, adam_step, select, take_rows
from .models import (
    ANALYTIC_FAMILIES,
    GenerativeModel,
    ModelSpec,
    build_generative_model,
    conventional_item_init,
    response_loglik_matrix_t,
)

# ---------------------------------------------------------------------------
# joint maximum likelihood


@dataclass
class JmleResult:
    """Point estimates from joint maximum likelihood."""

    model: GenerativeModel
    abilities: np.ndarray
    items_raw: np.ndarray
    trace: np.ndarray
    wall_clock_sec: float
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int




def fit_jmle(dataset: ResponseDataset, spec: ModelSpec, epochs: int = 100,
             batch_size: int = 16, learning_rate: float = 5e-3,
             seed: int = 0) -> JmleResult:
    if dataset.mode != spec.response_mode:
        raise ValueError(
            f"dataset mode {dataset.mode!r} != model response mode {spec.response_mode!r}")
    if epochs < 0 or batch_size < 1 or learning_rate <= 0:
        raise ValueError("need epochs >= 0, batch_size >= 1, learning_rate > 0")
    t_start = time.perf_counter()
    n, m = dataset.values.shape
    rng = np.random.default_rng(seed)
    model = build_generative_model(spec, rng)
    store = ParamStore()
    abilities = store.add("abilities", 0.01 * rng.standard_normal((n, spec.k_dim)))
    items = store.add("items", conventional_item_init(spec, m, rng))
    trace = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        ll_sum = 0.0
        for lo in range(0, n, batch_size):
            idx = perm[lo:lo + batch_size]
            b = idx.size
            values = dataset.values[idx]
            mask = dataset.mask[idx]
            try:
                a = take_rows(abilities, idx)
                ll = response_loglik_matrix_t(model, a, items, values)
                total = select(mask, ll, Tensor(np.zeros_like(values))).sum()
                loss = -total / b
                store.zero_grad()
                model.store.zero_grad()
                g, g_theta = backward(loss, store, model.store)
                adam_step(store, g, learning_rate)
                if len(model.store):
                    adam_step(model.store, g_theta, learning_rate)
            except NumericalError as err:
                raise NumericalError(
                    f"training diverged at epoch {epoch}, batch {lo // batch_size}: "
                    f"{err}") from err
            ll_sum += total.item()
        trace.append(ll_sum / n)
    return JmleResult(model, abilities.data.copy(), items.data.copy(),
                      np.array(trace), time.perf_counter() - t_start,
                      epochs, batch_size, learning_rate, seed)


def refit_abilities(model: GenerativeModel, items_raw: np.ndarray, values, mask,
                    steps: int = 300, learning_rate: float = 0.1) -> np.ndarray:
    """Maximum-likelihood abilities for new rows, items held fixed."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    store = ParamStore()
    a = store.add("abilities", np.zeros((values.shape[0], model.spec.k_dim)))
    items = Tensor(np.asarray(items_raw, dtype=np.float64))
    zeros = Tensor(np.zeros_like(values))
    for _ in range(steps):
        ll = response_loglik_matrix_t(model, a, items, values)
        loss = -select(mask, ll, zeros).sum()
        store.zero_grad()
        grad = backward(loss, store)
        adam_step(store, grad, learning_rate)
    return a.data.copy()


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and log-weights for integrals against a standard normal."""

    nodes: np.ndarray       # (Q, K)
    log_weights: np.ndarray  # (Q,)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def gauss_hermite_rule(n_nodes: int = 61, k_dim: int = 1) -> QuadratureRule:
    """Gauss-Hermite rule rescaled to N(0, I_K), tensor product over dims."""
    if n_nodes < 2:
        raise ValueError("need at least 2 quadrature nodes")
    if k_dim < 1 or k_dim > 3:
        raise ValueError("quadrature supports 1 <= k_dim <= 3")
    x, w = np.polynomial.hermite.hermgauss(n_nodes)
    nodes1 = np.sqrt(2.0) * x
    logw1 = np.log(w) - 0.5 * np.log(np.pi)
    if k_dim == 1:
        return QuadratureRule(nodes1[:, None], logw1)
    idx = np.indices((n_nodes,) * k_dim).reshape(k_dim, -1).T
    return QuadratureRule(nodes1[idx], logw1[idx].sum(axis=1))


# ---------------------------------------------------------------------------
# marginal maximum likelihood (EM)


@dataclass
class EmResult:
    """EM output: raw item estimates plus EAP ability summaries."""

    model: GenerativeModel
    items_raw: np.ndarray
    abilities: np.ndarray
    ability_var: np.ndarray
    trace: np.ndarray
    log_marginal_per_person: np.ndarray
    converged: bool
    n_iterations: int
    item_flags: list = field(default_factory=list)


_LOG_FLOOR = -745.0  # below the log of the smallest subnormal double


def _floor_t(x: Tensor) -> Tensor:
    # the bell family reaches p = 1 exactly at z = 0, so log(1-p) can be
    # -inf right on a quadrature node; cells that far down carry zero
    # responsibility anyway, and flooring keeps 0 * -inf out of the matmuls
    if x.data.min() > _LOG_FLOOR:
        return x
    return select(x.data > _LOG_FLOOR, x, Tensor(np.full(x.shape, _LOG_FLOOR)))


def _loglik_tables(model: GenerativeModel, rule: QuadratureRule, items: Tensor):
    """(Q, M) tensors of log p and log(1-p) at every node/item pair."""
    q = rule.n_nodes
    m = items.shape[0]
    ones = np.ones((q, m))
    lp = response_loglik_matrix_t(model, rule.nodes, items, ones)
    l1p = response_loglik_matrix_t(model, rule.nodes, items, np.zeros((q, m)))
    return _floor_t(lp), _floor_t(l1p)


def em_e_step(dataset: ResponseDataset, model: GenerativeModel,
              rule: QuadratureRule, items_raw: np.ndarray):
    """Posterior over grid nodes per person.

    Returns (responsibilities (N, Q), total log marginal, per-person
    log marginal (N,)).
    """
    lp_t, l1p_t = _loglik_tables(model, rule, Tensor(np.asarray(items_raw, float)))
    lp, l1p = lp_t.data, l1p_t.data
    r_obs = dataset.values * dataset.mask
    w_obs = (1.0 - dataset.values) * dataset.mask
    ll = r_obs @ lp.T + w_obs @ l1p.T + rule.log_weights  # (N, Q)
    log_marg = special.logsumexp(ll, axis=1)
    resp = np.exp(ll - log_marg[:, None])
    return resp, float(log_marg.sum()), log_marg


def _item_m_step(model: GenerativeModel, rule: QuadratureRule, v0: np.ndarray,
                 a_col: np.ndarray, b_col: np.ndarray, bound: float = 6.0):
    """Maximize one item's expected log-likelihood over its raw vector.

    a_col/b_col are the expected success/failure counts at each node.
    Returns (new vector, flag string or None); falls back to the starting
    point whenever the polished candidate is not strictly better.
    """
    store = ParamStore()
    v = store.add("item", v0.reshape(1, -1))
    q = rule.n_nodes
    ones = np.ones((q, 1))
    zeros = np.zeros((q, 1))
    ac = a_col.reshape(q, 1)
    bc = b_col.reshape(q, 1)

    def neg_q(vec):
        v.data[...] = vec.reshape(1, -1)
        lp = _floor_t(response_loglik_matrix_t(model, rule.nodes, v, ones))
        l1p = _floor_t(response_loglik_matrix_t(model, rule.nodes, v, zeros))
        obj = (lp * ac + l1p * bc).sum()
        store.zero_grad()
        grad = backward(obj, store)
        return -obj.item(), -grad.values["item"].ravel()

    f0, _ = neg_q(v0)
    res = optimize.minimize(neg_q, v0.copy(), jac=True, method="L-BFGS-B",
                            bounds=[(-bound, bound)] * v0.size)
    flag = None
    if not res.success:
        flag = f"optimizer: {res.message}"
    if res.fun < f0:
        out = res.x
    else:  # never accept a step that lowers the expected log-likelihood
        out, flag = v0, flag or "no improvement"
    if np.any(np.abs(out) >= bound - 1e-9):
        flag = "at bound"
    return out, flag


def em_fit(dataset: ResponseDataset, spec: ModelSpec, n_nodes: int = 61,
           max_iterations: int = 50, tol: float = 1e-4, seed: int = 0,
           init_items: np.ndarray | None = None) -> EmResult:
    """Fit an analytic-family model by quadrature EM.

    The trace records the total log marginal likelihood after every
    E-step; EM theory makes it nondecreasing, and the M-step keeps the
    incumbent whenever polishing fails, so that holds here to roundoff.
    """
    if spec.canonical_family not in ANALYTIC_FAMILIES:
        raise ValueError(f"EM supports analytic families only, got {spec.family!r}")
    if dataset.mode != "binary":
        raise ValueError("EM handles binary responses only")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    rng = np.random.default_rng(seed)
    model = build_generative_model(spec, rng)
    rule = gauss_hermite_rule(n_nodes, spec.k_dim)
    if init_items is None:
        items = np.zeros((dataset.n_items, spec.item_dim))
        fam = spec.canonical_family
        if fam != "1pl":
            items[:, : spec.k_dim] = 1.0
        if fam == "3pl":
            items[:, -1] = special.logit(0.2)
    else:
        items = np.array(init_items, dtype=np.float64)
        if items.shape != (dataset.n_items, spec.item_dim):
            raise ValueError(
                f"init_items must have shape {(dataset.n_items, spec.item_dim)}")
    r_obs = dataset.values * dataset.mask
    w_obs = (1.0 - dataset.values) * dataset.mask
    trace: list[float] = []
    flags: list = []
    resp = log_marg = None
    for _ in range(max_iterations + 1):
        resp, total_ll, log_marg = em_e_step(dataset, model, rule, items)
        trace.append(total_ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        if len(trace) > max_iterations:
            break
        a_tab = resp.T @ r_obs   # (Q, M) expected successes at each node
        b_tab = resp.T @ w_obs
        flags = []
        for j in range(dataset.n_items):
            items[j], flag = _item_m_step(model, rule, items[j],
                                          a_tab[:, j], b_tab[:, j])
            if flag:
                flags.append((dataset.item_ids[j], flag))
    eap = resp @ rule.nodes
    second = resp @ (rule.nodes ** 2)
    ability_var = np.maximum(second - eap ** 2, 0.0)
    converged = len(trace) > 1 and trace[-1] - trace[-2] < tol
    return EmResult(model, items, eap, ability_var, np.array(trace), log_marg,
                    converged, len(trace) - 1, flags)


def em_eap_abilities(result: EmResult, dataset: ResponseDataset, n_nodes: int = 61):
    """EAP abilities (mean, var) for new rows under fitted items."""
    rule = gauss_hermite_rule(n_nodes, result.model.spec.k_dim)
    resp, _, _ = em_e_step(dataset, result.model, rule, result.items_raw)
    eap = resp @ rule.nodes
    var = np.maximum(resp @ (rule.nodes ** 2) - eap ** 2, 0.0)
    return eap, var
