"""Fit-quality metrics: holdout imputation, ability recovery, importance-
sampled log marginal likelihood, and posterior predictive checks.

All metrics are deterministic given their seed. The log marginal treats
the whole item bank as latent alongside each person's ability, matching
the training bound: every importance sample draws one ability per person
and one full item bank, so the per-person estimates within a call share
item draws (each remains unbiased on its own).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .data import ResponseDataset
from .diffcore import NumericalError
from .engine import FitResult, ability_posterior_base, item_point_estimates
from .models import CONTINUOUS_VAR, loglik_matrix, prob_matrix
from .posterior import LOG_2PI, flow_push

# ---------------------------------------------------------------------------
# holdout splits


@dataclass(frozen=True)
class HoldoutSplit:
    """Cells hidden from training, all of which were observed."""

    mask: np.ndarray
    fraction: float
    seed: int

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())


def make_holdout(dataset: ResponseDataset, fraction: float = 0.10,
                 seed: int = 0) -> tuple[ResponseDataset, HoldoutSplit]:
    """Hide a uniform sample of observed cells; returns (train, split)."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"holdout fraction must lie in (0, 1), got {fraction}")
    observed = np.argwhere(dataset.mask)
    n_hold = int(round(fraction * observed.shape[0]))
    if n_hold < 1:
        raise ValueError("holdout fraction selects zero observed cells")
    rng = np.random.default_rng(seed)
    pick = rng.choice(observed.shape[0], size=n_hold, replace=False)
    hold = np.zeros_like(dataset.mask)
    hold[observed[pick, 0], observed[pick, 1]] = True
    train = dataset.with_mask(dataset.mask & ~hold)
    return train, HoldoutSplit(hold, fraction, seed)


def impute_accuracy(prob: np.ndarray, dataset: ResponseDataset,
                    split: HoldoutSplit) -> float:
    """Fraction of held-out responses matched by thresholded predictions.

    Predictions use r_hat = 1 iff p >= 0.5 (ties count as 1); continuous
    responses are rounded the same way before comparison.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if prob.shape != dataset.values.shape:
        raise ValueError(f"probability matrix shape {prob.shape} != "
                         f"data shape {dataset.values.shape}")
    if split.n_cells == 0:
        raise ValueError("holdout split is empty")
    if not np.all(split.mask <= dataset.mask):
        raise ValueError("holdout contains cells never observed in the data")
    pred = prob[split.mask] >= 0.5
    truth = dataset.values[split.mask] >= 0.5
    return float(np.mean(pred == truth))


# ---------------------------------------------------------------------------
# recovery


def recovery_correlation_per_dim(inferred, true_abilities) -> np.ndarray:
    inferred = np.atleast_2d(np.asarray(inferred, dtype=np.float64).T).T
    true_abilities = np.atleast_2d(np.asarray(true_abilities, dtype=np.float64).T).T
    if inferred.shape != true_abilities.shape:
        raise ValueError(f"ability shapes differ: {inferred.shape} vs "
                         f"{true_abilities.shape}")
    out = np.empty(inferred.shape[1])
    for c in range(inferred.shape[1]):
        a, b = inferred[:, c], true_abilities[:, c]
        if a.std() == 0.0 or b.std() == 0.0:
            raise ValueError(f"correlation undefined: zero variance in dimension {c}")
        out[c] = np.corrcoef(a, b)[0, 1]
    return out


def recovery_correlation(inferred, true_abilities) -> float:
    """Pearson correlation with the generating abilities, averaged over
    latent dimensions."""
    return float(recovery_correlation_per_dim(inferred, true_abilities).mean())


# ---------------------------------------------------------------------------
# importance-sampled log marginal likelihood


def _diag_logpdf(x, mu, log_var):
    """Gaussian log-density summed over the last axis."""
    z = (x - mu) ** 2 * np.exp(-log_var)
    return -0.5 * np.sum(LOG_2PI + log_var + z, axis=-1)


def log_marginal_per_person(result: FitResult, values, mask,
                            n_samples: int = 1000, seed: int = 0) -> np.ndarray:
    """Importance-sampled log p(responses) per person, items integrated out.

    Proposals are the fitted posteriors (flow-pushed when flows are
    attached); weights are p(r, a, d) / (q(a) q(d)), accumulated in
    log space.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    model, state = result.model, result.state
    n, k = values.shape[0], state.k_dim
    mu_a, lv_a = ability_posterior_base(result, values, mask)
    sd_a = np.exp(0.5 * lv_a)
    mu_d = state.item_mu.data
    lv_d = state.item_log_var.data
    sd_d = np.exp(0.5 * lv_d)
    m, d_dim = mu_d.shape
    rng = np.random.default_rng(seed)
    logw = np.empty((n, n_samples))
    for s in range(n_samples):
        a0 = mu_a + sd_a * rng.standard_normal((n, k))
        logq_a = _diag_logpdf(a0, mu_a, lv_a)
        d0 = mu_d + sd_d * rng.standard_normal((m, d_dim))
        logq_d_rows = _diag_logpdf(d0, mu_d, lv_d)
        if state.ability_flows is not None:
            a, logq_a = flow_push(state.ability_flows, a0, logq_a)
        else:
            a = a0
        if state.item_flows is not None:
            d_use, logq_d_rows = flow_push(state.item_flows, d0, logq_d_rows)
        else:
            d_use = d0
        logq_d = logq_d_rows.sum()
        logp_a = _diag_logpdf(a, 0.0, 0.0)
        logp_d = _diag_logpdf(d_use, 0.0, 0.0).sum()
        ll = loglik_matrix(model, a, d_use, values)
        ll_obs = np.where(mask, ll, 0.0).sum(axis=1)
        logw[:, s] = ll_obs + logp_a - logq_a + logp_d - logq_d
    top = logw.max(axis=1)
    bad = ~np.isfinite(top)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NumericalError(
            f"importance weights underflowed for person {i}: "
            f"max log-weight {top[i]}")
    return special.logsumexp(logw, axis=1) - math.log(n_samples)


def log_marginal(result: FitResult, values, mask, n_samples: int = 1000,
                 seed: int = 0) -> float:
    """Total importance-sampled log marginal likelihood over all rows."""
    return float(log_marginal_per_person(result, values, mask,
                                         n_samples, seed).sum())


# ---------------------------------------------------------------------------
# posterior predictive checks


def _simulate_matrix(prob: np.ndarray, mode: str, rng: np.random.Generator):
    if mode == "binary":
        return (rng.random(prob.shape) < prob).astype(np.float64)
    sd = math.sqrt(CONTINUOUS_VAR)
    draw = rng.normal(prob, sd)
    # redraw out-of-range cells until every response lands in [0, 1]
    for _ in range(1000):
        out = (draw < 0.0) | (draw > 1.0)
        if not out.any():
            return draw
        draw[out] = rng.normal(prob[out], sd)
    raise NumericalError("truncated-normal rejection sampling failed to converge")


def posterior_predictive_stats(source, dataset: ResponseDataset,
                               n_sims: int = 100, seed: int = 0):
    """Average simulated row and column means across response simulations.

    source: a fitted variational result (each simulation redraws abilities
    and items from their posteriors) or a fixed (N, M) probability matrix
    (simulations share it and only redraw responses).
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    rng = np.random.default_rng(seed)
    n, m = dataset.values.shape
    rows = np.zeros(n)
    cols = np.zeros(m)
    fixed = None if isinstance(source, FitResult) else np.asarray(source, float)
    if fixed is not None and fixed.shape != (n, m):
        raise ValueError(f"probability matrix shape {fixed.shape} != {(n, m)}")
    for _ in range(n_sims):
        if fixed is None:
            p = _posterior_prob_draw(source, dataset, rng)
        else:
            p = fixed
        sim = _simulate_matrix(p, dataset.mode, rng)
        rows += sim.mean(axis=1)
        cols += sim.mean(axis=0)
    return rows / n_sims, cols / n_sims


def _posterior_prob_draw(result: FitResult, dataset: ResponseDataset,
                         rng: np.random.Generator) -> np.ndarray:
    """One probability matrix under posterior draws of abilities and items."""
    state = result.state
    mu_a, lv_a = ability_posterior_base(result, dataset.values, dataset.mask)
    a = mu_a + np.exp(0.5 * lv_a) * rng.standard_normal(mu_a.shape)
    mu_d, lv_d = state.item_mu.data, state.item_log_var.data
    d = mu_d + np.exp(0.5 * lv_d) * rng.standard_normal(mu_d.shape)
    if state.ability_flows is not None:
        a, _ = flow_push(state.ability_flows, a, np.zeros(a.shape[0]))
    if state.item_flows is not None:
        d, _ = flow_push(state.item_flows, d, np.zeros(d.shape[0]))
    return prob_matrix(result.model, a, d)
