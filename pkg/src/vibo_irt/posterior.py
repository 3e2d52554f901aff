"""Amortized variational posteriors over abilities and items.

The ability posterior conditions on a person's observed responses and on
the (sampled) item vectors. Each observed item contributes one Gaussian
expert produced by a shared MLP that reads [item vector, response]; the
experts are combined with the N(0, I) prior by precision-weighted product
(product of experts). The prior enters that product exactly once, so a
person with no observed responses falls back to the prior itself.

Alternatives kept for comparison: a moment-matched mixture (mean of
experts), a non-amortized per-person Gaussian table, and an "independent"
encoder that reads the raw response row and ignores item parameters.
Planar flows can be stacked on either posterior to leave the Gaussian
family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import (
    DimensionError,
    Mlp,
    NumericalError,
    ParamStore,
    Tensor,
    build_mlp,
    concat,
    forward,
    matmul,
    mlp_widths,
    narrow,
    reshape,
    select,
    softplus,
    tanh,
    texp,
    tile_rows,
    tlog,
    tsum,
)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian in (mean, log-variance) form."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        self.log_var = np.atleast_1d(np.asarray(self.log_var, dtype=np.float64))
        if self.mu.shape != self.log_var.shape:
            raise DimensionError(
                f"mu shape {self.mu.shape} != log_var shape {self.log_var.shape}")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.log_var))):
            raise NumericalError("DiagGaussian parameters must be finite")

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)

    def dim(self) -> int:
        return self.mu.shape[-1]


def standard_gaussian(dim: int) -> DiagGaussian:
    return DiagGaussian(np.zeros(dim), np.zeros(dim))


def reparam_sample(q: DiagGaussian, noise: np.ndarray) -> np.ndarray:
    """mu + exp(log_var / 2) * noise."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != q.mu.shape[-1]:
        raise DimensionError(f"noise shape {noise.shape} does not match {q.mu.shape}")
    return q.mu + q.std * noise


def kl_diag_gaussians(q: DiagGaussian, p: DiagGaussian) -> float:
    """KL(q || p) for diagonal Gaussians, in closed form."""
    if q.mu.shape != p.mu.shape:
        raise DimensionError(f"dimension mismatch: {q.mu.shape} vs {p.mu.shape}")
    ratio = np.exp(q.log_var - p.log_var)
    sq = (q.mu - p.mu) ** 2 * np.exp(-p.log_var)
    return float(0.5 * np.sum(ratio + sq - 1.0 + p.log_var - q.log_var))


def gaussian_logpdf(x: np.ndarray, q: DiagGaussian) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = (x - q.mu) ** 2 * np.exp(-q.log_var)
    return float(-0.5 * np.sum(LOG_2PI + q.log_var + z))


# tensor versions, elementwise over trailing dims; callers reduce


def reparam_t(mu: Tensor, log_var: Tensor, noise: np.ndarray) -> Tensor:
    return mu + texp(0.5 * log_var) * noise


def kl_diag_t(mu_q, lv_q, mu_p, lv_p) -> Tensor:
    """Elementwise KL(q || p) contributions; sum for the total."""
    ratio = texp(lv_q - lv_p)
    sq = (mu_q - mu_p) * (mu_q - mu_p) * texp(-lv_p)
    return 0.5 * (ratio + sq - 1.0 + lv_p - lv_q)


def gaussian_logpdf_t(x, mu, lv) -> Tensor:
    """Elementwise Gaussian log-density terms; sum for the total."""
    z = (x - mu) * (x - mu) * texp(-lv)
    return -0.5 * (LOG_2PI + lv + z)


# ---------------------------------------------------------------------------
# expert fusion


def product_of_experts(mus: np.ndarray, log_vars: np.ndarray) -> DiagGaussian:
    """Precision-weighted product of the given experts (no implicit prior)."""
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    log_vars = np.atleast_2d(np.asarray(log_vars, dtype=np.float64))
    if mus.shape != log_vars.shape or mus.shape[0] < 1:
        raise DimensionError("experts need matching (n, dim) mus and log_vars")
    prec = np.exp(-log_vars)
    total = prec.sum(axis=0)
    mu = (mus * prec).sum(axis=0) / total
    return DiagGaussian(mu, -np.log(total))


def mean_of_experts(mus: np.ndarray, log_vars: np.ndarray) -> DiagGaussian:
    """Moment-matched Gaussian for a uniform mixture of the experts."""
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    log_vars = np.atleast_2d(np.asarray(log_vars, dtype=np.float64))
    if mus.shape != log_vars.shape or mus.shape[0] < 1:
        raise DimensionError("experts need matching (n, dim) mus and log_vars")
    mean = mus.mean(axis=0)
    second = (np.exp(log_vars) + mus ** 2).mean(axis=0)
    return DiagGaussian(mean, np.log(second - mean ** 2))


# ---------------------------------------------------------------------------
# amortized ability encoder


@dataclass
class AbilityEncoder:
    """Shared per-item expert network: [item vector, response] -> (mu, log_var)."""

    mlp: Mlp = field(repr=False)
    item_dim: int = 0
    k_dim: int = 1


def build_ability_encoder(store: ParamStore, item_dim: int, k_dim: int,
                          rng: np.random.Generator, hidden_size: int = 64,
                          hidden_layers: int = 3) -> AbilityEncoder:
    widths = mlp_widths(item_dim + 1, 2 * k_dim, hidden_size, hidden_layers)
    mlp = build_mlp(store, "encoder", widths, rng)
    return AbilityEncoder(mlp, item_dim, k_dim)


def encoder_experts_t(enc: AbilityEncoder, items, values: np.ndarray):
    """Per-(person, item) expert parameters.

    items: (M, item_dim) Tensor or array (sampled or point item vectors);
    values: (B, M) response array with missing cells already filled (the
    outputs at those cells are discarded by the fusion mask).
    Returns (mu, log_var) tensors of shape (B, M, K).
    """
    items = items if isinstance(items, Tensor) else Tensor(items)
    values = np.asarray(values, dtype=np.float64)
    b, m = values.shape
    if items.shape != (m, enc.item_dim):
        raise DimensionError(f"items shape {items.shape} != ({m}, {enc.item_dim})")
    k = enc.k_dim
    tiled = tile_rows(items, b)  # (B*M, item_dim), person-major
    resp = Tensor(values.reshape(b * m, 1))
    out = forward(enc.mlp, concat([tiled, resp], axis=1))
    out = reshape(out, (b, m, 2 * k))
    return narrow(out, 2, 0, k), narrow(out, 2, k, k)


def poe_fuse_t(mu_e: Tensor, lv_e: Tensor, mask: np.ndarray, prior: DiagGaussian):
    """Fuse observed experts with the prior by product of experts.

    mask: (B, M) booleans; the prior participates exactly once per person.
    Returns (mu, log_var) tensors of shape (B, K).
    """
    maskf = np.asarray(mask, dtype=np.float64)[:, :, None]
    prior_prec = np.exp(-prior.log_var)[None, :]           # (1, K)
    prior_num = (prior.mu * np.exp(-prior.log_var))[None, :]
    prec = texp(-lv_e) * maskf
    total = prec.sum(axis=1) + prior_prec
    num = (mu_e * prec).sum(axis=1) + prior_num
    mu = num / total
    return mu, -tlog(total)


def moe_fuse_t(mu_e: Tensor, lv_e: Tensor, mask: np.ndarray, prior: DiagGaussian):
    """Moment-matched uniform mixture over M components, one per item:
    the expert where the response is observed, the prior where missing.
    """
    b, m = mask.shape
    mask3 = np.asarray(mask, dtype=bool)[:, :, None]
    prior_mu = np.broadcast_to(prior.mu, (1, 1, prior.dim()))
    prior_var = np.broadcast_to(prior.var, (1, 1, prior.dim()))
    comp_mu = select(mask3, mu_e, Tensor(prior_mu))
    comp_var = select(mask3, texp(lv_e), Tensor(prior_var))
    mean = comp_mu.mean(axis=1)
    second = (comp_var + comp_mu * comp_mu).mean(axis=1)
    var = second - mean * mean
    return mean, tlog(var)


def encode_ability(enc: AbilityEncoder, items: np.ndarray, responses: np.ndarray,
                   mask: np.ndarray, prior: DiagGaussian) -> DiagGaussian:
    """Product-of-experts posterior for one person; prior appears once."""
    return _encode_one(enc, items, responses, mask, prior, poe_fuse_t)


def encode_ability_mean(enc: AbilityEncoder, items: np.ndarray, responses: np.ndarray,
                        mask: np.ndarray, prior: DiagGaussian) -> DiagGaussian:
    """Moment-matched mean-of-experts posterior for one person."""
    return _encode_one(enc, items, responses, mask, prior, moe_fuse_t)


def _encode_one(enc, items, responses, mask, prior, fuse) -> DiagGaussian:
    mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    responses = np.asarray(responses, dtype=np.float64).reshape(1, -1)
    if mask.shape != responses.shape:
        raise DimensionError("responses and mask lengths differ")
    if prior.mu.shape != (enc.k_dim,):
        raise DimensionError(f"prior dimension {prior.mu.shape} != ({enc.k_dim},)")
    if not mask.any() and fuse is poe_fuse_t:
        return DiagGaussian(prior.mu.copy(), prior.log_var.copy())
    filled = np.where(mask, responses, 0.0)
    mu_e, lv_e = encoder_experts_t(enc, items, filled)
    if not (np.all(np.isfinite(mu_e.data)) and np.all(np.isfinite(lv_e.data))):
        raise NumericalError("encoder produced non-finite expert parameters")
    mu, lv = fuse(mu_e, lv_e, mask, prior)
    return DiagGaussian(mu.data[0], lv.data[0])


# ---------------------------------------------------------------------------
# non-amortized and response-only posteriors


def build_ability_table(store: ParamStore, n_persons: int, k_dim: int):
    """Free per-person Gaussian parameters, initialized at the prior."""
    mu = store.add("ability_table.mu", np.zeros((n_persons, k_dim)))
    lv = store.add("ability_table.log_var", np.zeros((n_persons, k_dim)))
    return mu, lv


def build_row_encoder(store: ParamStore, n_items: int, k_dim: int,
                      rng: np.random.Generator, hidden_size: int = 64,
                      hidden_layers: int = 3) -> Mlp:
    """Encoder over the raw response row only: q(a | r), no item parameters.

    Input is the row recoded as +1 (correct), -1 (incorrect), 0 (missing),
    concatenated with the observation mask.
    """
    widths = mlp_widths(2 * n_items, 2 * k_dim, hidden_size, hidden_layers)
    return build_mlp(store, "row_encoder", widths, rng)


def row_encoder_input(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    signed = np.where(mask, 2.0 * values - 1.0, 0.0)
    return np.concatenate([signed, mask.astype(np.float64)], axis=1)


def row_encoder_posterior_t(mlp: Mlp, values: np.ndarray, mask: np.ndarray):
    x = row_encoder_input(values, mask)
    out = forward(mlp, x)
    k = out.shape[1] // 2
    return narrow(out, 1, 0, k), narrow(out, 1, k, k)


# ---------------------------------------------------------------------------
# planar normalizing flows


@dataclass
class PlanarFlowStack:
    """z -> z + u * tanh(w.z + b), composed `count` times."""

    us: list = field(repr=False)
    ws: list = field(repr=False)
    bs: list = field(repr=False)
    dim: int = 1

    @property
    def count(self) -> int:
        return len(self.us)


def build_flow_stack(store: ParamStore, prefix: str, dim: int, count: int,
                     rng: np.random.Generator) -> PlanarFlowStack:
    us, ws, bs = [], [], []
    lim = math.sqrt(6.0 / (2.0 * dim))
    for i in range(count):
        us.append(store.add(f"{prefix}.u{i}", rng.uniform(-lim, lim, size=dim)))
        ws.append(store.add(f"{prefix}.w{i}", rng.uniform(-lim, lim, size=dim)))
        bs.append(store.add(f"{prefix}.b{i}", np.zeros(1)))
    return PlanarFlowStack(us, ws, bs, dim)


def flow_push_t(stack: PlanarFlowStack, z: Tensor, logdens: Tensor | None):
    """Push (B, dim) samples through the stack, tracking log-density.

    Whenever w.u < -1 (where the map could fold), u is reprojected so that
    w.u_hat = -1 + softplus(w.u) > -1, keeping the Jacobian determinant
    1 + tanh'(w.z + b) * (w.u_hat) positive. Compliant u pass through
    untouched, so u = 0 is exactly the identity map.
    """
    b = z.shape[0]
    for u, w, bb in zip(stack.us, stack.ws, stack.bs):
        wu = tsum(w * u)
        if wu.data >= -1.0:
            uhat = u
        else:
            m = softplus(wu) - 1.0
            wnorm2 = tsum(w * w)
            uhat = u + (m - wu) * w / wnorm2
        s = matmul(z, reshape(w, (stack.dim, 1))) + bb  # (B, 1)
        h = tanh(s)
        z = z + matmul(h, reshape(uhat, (1, stack.dim)))
        hprime = 1.0 - h * h
        det = 1.0 + hprime * tsum(w * uhat)  # (B, 1)
        if det.data.min() < 1e-12:
            raise NumericalError(
                f"planar flow Jacobian is numerically singular (min det {det.data.min():.3e})")
        if logdens is not None:
            logdens = logdens - reshape(tlog(det), (b,))
    return z, logdens


def flow_push(stack: PlanarFlowStack, z0: np.ndarray, base_logdensity) -> tuple:
    """Plain-array wrapper: returns (z_K, adjusted log-density)."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    base = np.atleast_1d(np.asarray(base_logdensity, dtype=np.float64))
    if base.shape[0] != z0.shape[0]:
        raise DimensionError("one base log-density per sample row is required")
    z, ld = flow_push_t(stack, Tensor(z0), Tensor(base))
    return z.data, ld.data
