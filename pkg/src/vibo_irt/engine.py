"""Variational fitting of item response models.

The per-person objective is an evidence lower bound: expected
reconstruction of the observed responses under sampled abilities and
item vectors, minus beta times the KL of the ability posterior from its
prior, minus beta times the KL of the item posterior bank. Training
follows single-sample reparameterized gradients with Adam over both the
generative weights and the variational parameters.

Bookkeeping choice: the item bank's KL is shared by everyone, so inside a
minibatch of size B (out of N persons) it enters the training loss scaled
by B/N; summed over an epoch it is counted exactly once. Reported traces
and vibo_value use the unscaled per-person bound instead, which is the
quantity the importance-sampled marginal likelihood upper-bounds.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ResponseDataset
from .diffcore import (
    NumericalError,
    ParamStore,
    Tensor,
    adam_step,
    backward,
    select,
    take_rows,
)
from .diffcore.nn import Mlp
from .models import (
    GenerativeModel,
    ModelSpec,
    build_generative_model,
    prob_matrix,
    response_loglik_matrix_t,
)
from .posterior import (
    AbilityEncoder,
    DiagGaussian,
    PlanarFlowStack,
    build_ability_encoder,
    build_ability_table,
    build_flow_stack,
    build_row_encoder,
    encoder_experts_t,
    flow_push_t,
    gaussian_logpdf_t,
    kl_diag_t,
    moe_fuse_t,
    poe_fuse_t,
    reparam_t,
    row_encoder_posterior_t,
    standard_gaussian,
)

POSTERIOR_MODES = ("product", "mean", "independent", "unamortized")


@dataclass(frozen=True)
class ViboConfig:
    """Training hyperparameters.

    beta = 0 is allowed and reduces the objective to pure reconstruction
    (the maximum-likelihood collapse); beta = 1 is the untempered bound.
    """

    beta: float = 0.5
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 5e-3
    seed: int = 0
    posterior_mode: str = "product"
    flows: int = 0
    mc_samples: int = 1

    def __post_init__(self):
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.posterior_mode not in POSTERIOR_MODES:
            raise ValueError(f"posterior_mode must be one of {POSTERIOR_MODES}")
        if self.flows < 0:
            raise ValueError(f"flows must be >= 0, got {self.flows}")
        if self.mc_samples < 1:
            raise ValueError(f"mc_samples must be >= 1, got {self.mc_samples}")


@dataclass
class VariationalState:
    """All variational parameters and their structural components."""

    phi: ParamStore = field(repr=False)
    mode: str = "product"
    k_dim: int = 1
    item_dim: int = 1
    n_items: int = 0
    n_persons: int = 0
    prior: DiagGaussian = None
    item_prior: DiagGaussian = None
    item_mu: Tensor = field(default=None, repr=False)
    item_log_var: Tensor = field(default=None, repr=False)
    encoder: AbilityEncoder | None = field(default=None, repr=False)
    row_encoder: Mlp | None = field(default=None, repr=False)
    table_mu: Tensor | None = field(default=None, repr=False)
    table_log_var: Tensor | None = field(default=None, repr=False)
    ability_flows: PlanarFlowStack | None = field(default=None, repr=False)
    item_flows: PlanarFlowStack | None = field(default=None, repr=False)


def build_variational_state(spec: ModelSpec, n_persons: int, n_items: int,
                            config: ViboConfig, rng: np.random.Generator) -> VariationalState:
    phi = ParamStore()
    d = spec.item_dim
    k = spec.k_dim
    state = VariationalState(phi=phi, mode=config.posterior_mode, k_dim=k, item_dim=d,
                             n_items=n_items, n_persons=n_persons,
                             prior=standard_gaussian(k), item_prior=standard_gaussian(d))
    state.item_mu = phi.add("item_posterior.mu", np.zeros((n_items, d)))
    state.item_log_var = phi.add("item_posterior.log_var", np.zeros((n_items, d)))
    if config.posterior_mode in ("product", "mean"):
        state.encoder = build_ability_encoder(phi, d, k, rng, spec.hidden_size,
                                              spec.hidden_layers)
    elif config.posterior_mode == "independent":
        state.row_encoder = build_row_encoder(phi, n_items, k, rng, spec.hidden_size,
                                              spec.hidden_layers)
    else:
        state.table_mu, state.table_log_var = build_ability_table(phi, n_persons, k)
    if config.flows > 0:
        state.ability_flows = build_flow_stack(phi, "ability_flows", k, config.flows, rng)
        state.item_flows = build_flow_stack(phi, "item_flows", d, config.flows, rng)
    return state


@dataclass
class FitResult:
    """A trained model plus its posterior state and training history."""

    model: GenerativeModel
    state: VariationalState
    config: ViboConfig
    trace: np.ndarray
    epoch_stats: list
    wall_clock_sec: float
    n_persons: int
    n_items: int

    @property
    def item_posterior_mean(self) -> np.ndarray:
        return self.state.item_mu.data.copy()

    @property
    def item_posterior_var(self) -> np.ndarray:
        return np.exp(self.state.item_log_var.data)


def _fill_for_mode(values, mask, mode: str) -> np.ndarray:
    return np.where(mask, values, 0.5 if mode == "continuous" else 0.0)


def _ability_posterior_t(state: VariationalState, d_sample, filled, mask, person_idx):
    """(mu, log_var) tensors of shape (B, K) for the configured mode."""
    if state.mode in ("product", "mean"):
        mu_e, lv_e = encoder_experts_t(state.encoder, d_sample, filled)
        fuse = poe_fuse_t if state.mode == "product" else moe_fuse_t
        return fuse(mu_e, lv_e, mask, state.prior)
    if state.mode == "independent":
        return row_encoder_posterior_t(state.row_encoder, filled, mask)
    return take_rows(state.table_mu, person_idx), take_rows(state.table_log_var, person_idx)


def _batch_terms(model: GenerativeModel, state: VariationalState, values, mask,
                 person_idx, rng: np.random.Generator, mc_samples: int = 1):
    """Single-sample bound pieces as scalar tensors.

    Returns (recon_mean, kl_ability_mean, kl_item_total): reconstruction
    and ability KL are per-person means over the batch; the item KL is the
    whole bank's total, unscaled.
    """
    b, m = values.shape
    mode = model.spec.response_mode
    filled = _fill_for_mode(values, mask, mode)
    recon_acc, kl_a_acc, kl_d_acc = None, None, None
    for _ in range(mc_samples):
        eps_d = rng.standard_normal((m, state.item_dim))
        d0 = reparam_t(state.item_mu, state.item_log_var, eps_d)
        if state.item_flows is not None:
            logq_d = gaussian_logpdf_t(d0, state.item_mu, state.item_log_var).sum(axis=1)
            d_use, logq_d = flow_push_t(state.item_flows, d0, logq_d)
            logp_d = gaussian_logpdf_t(d_use, 0.0, 0.0).sum(axis=1)
            kl_item = (logq_d - logp_d).sum()
        else:
            d_use = d0
            kl_item = kl_diag_t(state.item_mu, state.item_log_var, 0.0, 0.0).sum()
        mu_a, lv_a = _ability_posterior_t(state, d_use, filled, mask, person_idx)
        eps_a = rng.standard_normal((b, state.k_dim))
        a0 = reparam_t(mu_a, lv_a, eps_a)
        if state.ability_flows is not None:
            logq_a = gaussian_logpdf_t(a0, mu_a, lv_a).sum(axis=1)
            a_use, logq_a = flow_push_t(state.ability_flows, a0, logq_a)
            logp_a = gaussian_logpdf_t(a_use, 0.0, 0.0).sum(axis=1)
            kl_ability = logq_a - logp_a
        else:
            a_use = a0
            kl_ability = kl_diag_t(mu_a, lv_a, 0.0, 0.0).sum(axis=1)
        ll = response_loglik_matrix_t(model, a_use, d_use, filled)
        recon = select(mask, ll, Tensor(np.zeros((b, m)))).sum(axis=1)
        recon_acc = recon if recon_acc is None else recon_acc + recon
        kl_a_acc = kl_ability if kl_a_acc is None else kl_a_acc + kl_ability
        kl_d_acc = kl_item if kl_d_acc is None else kl_d_acc + kl_item
    scale = 1.0 / mc_samples
    return (recon_acc.mean() * scale, kl_a_acc.mean() * scale, kl_d_acc * scale)


def vibo_value(model: GenerativeModel, state: VariationalState, values, mask,
               rng: np.random.Generator, beta: float = 1.0, person_index: int = 0,
               mc_samples: int = 1):
    """Single-sample bound estimate for one person.

    Returns (total, recon, kl_ability, kl_item) where
    total = recon - beta * (kl_ability + kl_item) with the full,
    unscaled item-bank KL.
    """
    values = np.asarray(values, dtype=np.float64).reshape(1, -1)
    mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    if values.shape[1] != state.n_items:
        raise ValueError(f"expected {state.n_items} items, got {values.shape[1]}")
    idx = np.array([person_index])
    recon, kl_a, kl_d = _batch_terms(model, state, values, mask, idx, rng, mc_samples)
    recon_v, kl_a_v, kl_d_v = recon.item(), kl_a.item(), kl_d.item()
    total = recon_v - beta * (kl_a_v + kl_d_v)
    return total, recon_v, kl_a_v, kl_d_v


def fit(dataset: ResponseDataset, spec: ModelSpec, config: ViboConfig) -> FitResult:
    """Train generative and variational parameters jointly with Adam."""
    if dataset.mode != spec.response_mode:
        raise ValueError(
            f"dataset mode {dataset.mode!r} != model response mode {spec.response_mode!r}")
    t_start = time.perf_counter()
    n, m = dataset.values.shape
    rng = np.random.default_rng(config.seed)
    model = build_generative_model(spec, rng)
    state = build_variational_state(spec, n, m, config, rng)
    beta = config.beta
    bsz = config.batch_size
    epoch_stats: list[dict] = []
    for epoch in range(config.epochs):
        t_epoch = time.perf_counter()
        perm = rng.permutation(n)
        recon_sum = kl_a_sum = kl_d_sum = 0.0
        for lo in range(0, n, bsz):
            idx = perm[lo:lo + bsz]
            b = idx.size
            values = dataset.values[idx]
            mask = dataset.mask[idx]
            try:
                recon, kl_a, kl_d = _batch_terms(model, state, values, mask, idx, rng,
                                                 config.mc_samples)
                loss = -(recon - beta * kl_a - beta * (b / n) * kl_d)
                model.store.zero_grad()
                state.phi.zero_grad()
                g_theta, g_phi = backward(loss, model.store, state.phi)
                if len(model.store):
                    adam_step(model.store, g_theta, config.learning_rate)
                adam_step(state.phi, g_phi, config.learning_rate)
            except NumericalError as err:
                raise NumericalError(
                    f"training diverged at epoch {epoch}, batch {lo // bsz}: {err}") from err
            recon_sum += b * recon.item()
            kl_a_sum += b * kl_a.item()
            kl_d_sum += b * kl_d.item()
        stats = {
            "recon": recon_sum / n,
            "kl_ability": kl_a_sum / n,
            "kl_item": kl_d_sum / n,
            "seconds": time.perf_counter() - t_epoch,
        }
        stats["vibo"] = stats["recon"] - beta * (stats["kl_ability"] + stats["kl_item"])
        epoch_stats.append(stats)
    trace = np.array([s["vibo"] for s in epoch_stats])
    if not np.all(np.isfinite(trace)):
        raise NumericalError("training trace contains non-finite values")
    return FitResult(model, state, config, trace, epoch_stats,
                     time.perf_counter() - t_start, n, m)


# ---------------------------------------------------------------------------
# post-fit inference


def item_point_estimates(state: VariationalState) -> np.ndarray:
    """Item posterior means (flow-pushed when flows are attached)."""
    means = state.item_mu.data
    if state.item_flows is not None:
        pushed, _ = flow_push_t(state.item_flows, Tensor(means), None)
        return pushed.data
    return means.copy()


def ability_posterior_base(result: FitResult, values, mask, chunk: int = 2048):
    """Diagonal-Gaussian ability posterior (mu, log_var) BEFORE any flows.

    This is the actual sampling density of the reparameterized base draw,
    which importance sampling needs; most callers want
    infer_ability_posterior instead.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    state = result.state
    n = values.shape[0]
    if values.shape[1] != state.n_items:
        raise ValueError(f"expected {state.n_items} items, got {values.shape[1]}")
    if state.mode == "unamortized":
        if n != state.n_persons:
            raise ValueError(
                "the unamortized posterior is a per-person table; it cannot encode new rows")
        return state.table_mu.data.copy(), state.table_log_var.data.copy()
    items = item_point_estimates(state)
    filled = _fill_for_mode(values, mask, result.model.spec.response_mode)
    mus, lvs = [], []
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        if state.mode == "independent":
            mu_t, lv_t = row_encoder_posterior_t(state.row_encoder, filled[lo:hi],
                                                 mask[lo:hi])
        else:
            mu_e, lv_e = encoder_experts_t(state.encoder, items, filled[lo:hi])
            fuse = poe_fuse_t if state.mode == "product" else moe_fuse_t
            mu_t, lv_t = fuse(mu_e, lv_e, mask[lo:hi], state.prior)
        mus.append(mu_t.data)
        lvs.append(lv_t.data)
    return np.vstack(mus), np.vstack(lvs)


def infer_ability_posterior(result: FitResult, values, mask, chunk: int = 2048):
    """Posterior (mu, var) per row of a response matrix.

    Amortized modes re-encode any matrix over the same items, conditioning
    on the item posterior means. The unamortized mode has no encoder and
    only reports its training rows. With flows, mu is the base mean pushed
    through the flow stack and var is the base variance (a point summary
    of a non-Gaussian posterior).
    """
    mu, lv = ability_posterior_base(result, values, mask, chunk)
    if result.state.ability_flows is not None:
        pushed, _ = flow_push_t(result.state.ability_flows, Tensor(mu), None)
        mu = pushed.data
    return mu, np.exp(lv)


def predicted_probabilities(result: FitResult, values, mask) -> np.ndarray:
    """Predicted response-probability matrix at posterior point estimates."""
    mu, _ = infer_ability_posterior(result, values, mask)
    return prob_matrix(result.model, mu, item_point_estimates(result.state))


def fit_report(result: FitResult) -> dict:
    """JSON-ready training report: config echo, per-epoch bound pieces."""
    return {
        "algorithm": "vibo",
        "spec": asdict(result.model.spec),
        "config": asdict(result.config),
        "n_persons": result.n_persons,
        "n_items": result.n_items,
        "wall_clock_sec": result.wall_clock_sec,
        "epochs": [
            {
                "epoch": i,
                "vibo": s["vibo"],
                "recon": s["recon"],
                "kl_ability": s["kl_ability"],
                "kl_item": s["kl_item"],
                "seconds": s["seconds"],
            }
            for i, s in enumerate(result.epoch_stats)
        ],
    }
