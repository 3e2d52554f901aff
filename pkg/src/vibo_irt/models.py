"""Item response model zoo.

Ability is a vector a in R^K, items carry discrimination k in R^K,
difficulty d, and family-specific extras. Correct-response probability
by family (note the sign convention: difficulty enters positively, so
larger d makes an item easier):

    1pl        p = sigmoid(a + d)                      (K = 1)
    2pl/mirt   p = sigmoid(a.k + d)
    3pl        p = g + (1 - g) * sigmoid(a.k + d)      guess g in [0, 1)
    lpe        p = sigmoid(a.k + d) ** b               complexity b > 0
    idl        p = exp(-(a.k + d)^2 / 2)
    link       p = sigmoid(f(-(a.k + d)))              f: scalar MLP
    deep       p = sigmoid(f_c(f_a(a), f_e(e)))        e: item embedding in R^K
    residual   p = sigmoid(a.k + d - f(a, k, d))       f zero-initialized

During optimization every item lives in a flat real vector: guess as a
logit (g = sigmoid(g_raw)) and complexity on the log scale (b = exp(b_raw)),
so gradient steps can never leave the valid region. The scalar public API
below works on the natural scale instead, which keeps boundary cases such
as g = 0 exact.

Binary responses use Bernoulli log-likelihoods written in logsigmoid /
log1mexp form so extreme logits stay finite. Bounded-continuous responses
in [0, 1] use a Normal with mean p and variance 0.1 truncated to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _special

from .diffcore import (
    DimensionError,
    Mlp,
    ParamStore,
    Tensor,
    build_mlp,
    concat,
    erf,
    forward,
    log1mexp,
    logsigmoid,
    matmul,
    mlp_widths,
    narrow,
    repeat_rows,
    reshape,
    select,
    sigmoid,
    texp,
    tile_rows,
    tlog,
    transpose,
)

ANALYTIC_FAMILIES = ("1pl", "2pl", "mirt", "3pl", "lpe", "idl")
DEEP_FAMILIES = ("link", "deep", "residual")
FAMILIES = ANALYTIC_FAMILIES + DEEP_FAMILIES
RESPONSE_MODES = ("binary", "continuous")

CONTINUOUS_VAR = 0.1  # truncated-Normal response noise variance

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ModelSpec:
    """Declares a response model family and its dimensions."""

    family: str = "2pl"
    k_dim: int = 1
    response_mode: str = "binary"
    hidden_size: int = 64
    hidden_layers: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.response_mode not in RESPONSE_MODES:
            raise ValueError(f"unknown response mode {self.response_mode!r}")
        if self.k_dim < 1:
            raise ValueError(f"k_dim must be >= 1, got {self.k_dim}")
        if self.family == "1pl" and self.k_dim != 1:
            raise ValueError("1pl is a scalar-ability model; use k_dim=1")
        if self.hidden_size < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_size and hidden_layers must be positive")

    @property
    def canonical_family(self) -> str:
        return "2pl" if self.family == "mirt" else self.family

    @property
    def item_dim(self) -> int:
        """Length of one item's flat optimization vector."""
        fam, k = self.canonical_family, self.k_dim
        if fam == "1pl":
            return 1
        if fam in ("2pl", "idl", "link", "residual"):
            return k + 1
        if fam in ("3pl", "lpe"):
            return k + 2
        return k  # deep: embedding only

    def item_column_labels(self) -> list[str]:
        fam, k = self.canonical_family, self.k_dim
        ks = [f"k_{i + 1}" for i in range(k)]
        if fam == "1pl":
            return ["d"]
        if fam in ("2pl", "idl", "link", "residual"):
            return ks + ["d"]
        if fam == "3pl":
            return ks + ["d", "g"]
        if fam == "lpe":
            return ks + ["d", "b"]
        return [f"e_{i + 1}" for i in range(k)]


@dataclass
class Ability:
    """A single person's latent ability vector."""

    a: np.ndarray

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if self.a.ndim != 1:
            raise DimensionError(f"ability must be a vector, got shape {self.a.shape}")


@dataclass
class ItemParams:
    """One item on the natural scale (g and b untransformed)."""

    family: str
    d: float | None = None
    k: np.ndarray | None = None
    g: float | None = None
    b: float | None = None
    e: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        fam = "2pl" if self.family == "mirt" else self.family
        if self.k is not None:
            self.k = np.atleast_1d(np.asarray(self.k, dtype=np.float64))
        if self.e is not None:
            self.e = np.atleast_1d(np.asarray(self.e, dtype=np.float64))
        if fam == "deep":
            if self.e is None:
                raise ValueError("deep items need an embedding e")
            return
        if self.d is None:
            raise ValueError(f"{self.family} items need a difficulty d")
        if fam != "1pl" and self.k is None:
            raise ValueError(f"{self.family} items need a discrimination vector k")
        if fam == "3pl":
            if self.g is None or not (0.0 <= self.g < 1.0):
                raise ValueError("3pl items need a guessing rate g in [0, 1)")
        elif self.g is not None:
            raise ValueError(f"{self.family} items do not take g")
        if fam == "lpe":
            if self.b is None or self.b <= 0.0:
                raise ValueError("lpe items need a complexity b > 0")
        elif self.b is not None:
            raise ValueError(f"{self.family} items do not take b")


@dataclass
class GenerativeModel:
    """A response model: spec, trainable weights, and any MLP components."""

    spec: ModelSpec
    store: ParamStore = field(repr=False)
    mlps: dict = field(repr=False)

    @property
    def item_dim(self) -> int:
        return self.spec.item_dim


def build_generative_model(spec: ModelSpec, rng: np.random.Generator) -> GenerativeModel:
    store = ParamStore()
    mlps: dict[str, Mlp] = {}
    k, h, nl = spec.k_dim, spec.hidden_size, spec.hidden_layers
    fam = spec.canonical_family
    if fam == "link":
        mlps["link"] = build_mlp(store, "link", mlp_widths(1, 1, h, nl), rng)
    elif fam in ("deep", "residual"):
        item_in = k if fam == "deep" else k + 1
        mlps["ability"] = build_mlp(store, "ability", mlp_widths(k, h, h, nl), rng)
        mlps["item"] = build_mlp(store, "item", mlp_widths(item_in, h, h, nl), rng)
        mlps["combine"] = build_mlp(store, "combine", mlp_widths(2 * h, 1, h, nl), rng)
        if fam == "residual":
            # start exactly at the 2pl surface: the correction term is zero
            mlps["combine"].weights[-1].data[:] = 0.0
            mlps["combine"].biases[-1].data[:] = 0.0
    return GenerativeModel(spec, store, mlps)


# ---------------------------------------------------------------------------
# flat item vector <-> natural-scale parameters


def pack_item_params(spec: ModelSpec, item: ItemParams) -> np.ndarray:
    """Natural-scale ItemParams -> flat optimization vector.

    3pl requires g > 0 here because the raw parameterization stores the
    guess as a logit; g = 0 exists only on the natural scale.
    """
    fam, k = spec.canonical_family, spec.k_dim
    _check_item(spec, item)
    if fam == "1pl":
        return np.array([item.d], dtype=np.float64)
    if fam in ("2pl", "idl", "link", "residual"):
        return np.concatenate([item.k, [item.d]])
    if fam == "3pl":
        if item.g <= 0.0:
            raise ValueError("raw parameterization needs g > 0; g = 0 is a natural-scale limit")
        return np.concatenate([item.k, [item.d], [_special.logit(item.g)]])
    if fam == "lpe":
        return np.concatenate([item.k, [item.d], [math.log(item.b)]])
    return np.asarray(item.e, dtype=np.float64).copy()


def unpack_item_vector(spec: ModelSpec, vec: np.ndarray) -> ItemParams:
    vec = np.asarray(vec, dtype=np.float64)
    fam, k = spec.canonical_family, spec.k_dim
    if vec.shape != (spec.item_dim,):
        raise DimensionError(f"expected item vector of shape ({spec.item_dim},), got {vec.shape}")
    if fam == "1pl":
        return ItemParams(spec.family, d=float(vec[0]))
    if fam in ("2pl", "idl", "link", "residual"):
        return ItemParams(spec.family, d=float(vec[k]), k=vec[:k].copy())
    if fam == "3pl":
        return ItemParams(spec.family, d=float(vec[k]), k=vec[:k].copy(),
                          g=float(_special.expit(vec[k + 1])))
    if fam == "lpe":
        return ItemParams(spec.family, d=float(vec[k]), k=vec[:k].copy(),
                          b=float(np.exp(vec[k + 1])))
    return ItemParams(spec.family, e=vec.copy())


def _check_item(spec: ModelSpec, item: ItemParams) -> None:
    fam, k = spec.canonical_family, spec.k_dim
    ifam = "2pl" if item.family == "mirt" else item.family
    if ifam != fam:
        raise ValueError(f"item family {item.family!r} does not match model {spec.family!r}")
    if fam == "deep":
        if item.e.shape != (k,):
            raise DimensionError(f"deep embedding must have shape ({k},), got {item.e.shape}")
    elif fam != "1pl" and item.k.shape != (k,):
        raise DimensionError(f"discrimination must have shape ({k},), got {item.k.shape}")


def conventional_item_init(spec: ModelSpec, n_items: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Raw-scale starting item matrix: unit slopes, centered difficulties.

    The likelihood is invariant to flipping every slope and ability sign at
    once, and zero slopes sit on the stationary ridge between the two
    orientations; starting slopes at +1 both selects the conventional
    orientation and starts optimization off that ridge. Guessing starts at
    its customary 0.2. Every coordinate also gets a small symmetric
    perturbation so ties are broken.
    """
    items = 0.01 * rng.standard_normal((n_items, spec.item_dim))
    fam = spec.canonical_family
    if fam in ("2pl", "3pl", "lpe", "idl", "link", "residual"):
        items[:, : spec.k_dim] += 1.0
    if fam == "3pl":
        items[:, -1] += _special.logit(0.2)
    return items


# ---------------------------------------------------------------------------
# differentiable batched response surfaces
#
# A: (B, K) abilities; items: (M, item_dim) raw item matrix; both Tensor or
# array. Return shapes are (B, M).


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _linear_logit_t(spec: ModelSpec, A: Tensor, items: Tensor) -> Tensor:
    k = spec.k_dim
    m = items.shape[0]
    if spec.canonical_family == "1pl":
        d = reshape(items, (1, m))
        return A + d
    ks = narrow(items, 1, 0, k)
    d = reshape(narrow(items, 1, k, 1), (1, m))
    return matmul(A, transpose(ks)) + d


def _pairwise_mlp_t(model: GenerativeModel, A: Tensor, item_in: Tensor) -> Tensor:
    """f_c(f_a(a_i), f_e(x_j)) for every (person, item) pair -> (B, M)."""
    b = A.shape[0]
    m = item_in.shape[0]
    ha = forward(model.mlps["ability"], A)
    hi = forward(model.mlps["item"], item_in)
    pairs = concat([repeat_rows(ha, m), tile_rows(hi, b)], axis=1)
    return reshape(forward(model.mlps["combine"], pairs), (b, m))


def response_logits_t(model: GenerativeModel, A, items) -> Tensor:
    """Logit surface for the sigmoid-output families."""
    spec = model.spec
    A, items = _as_tensor(A), _as_tensor(items)
    fam = spec.canonical_family
    if fam in ("1pl", "2pl"):
        return _linear_logit_t(spec, A, items)
    if fam == "link":
        z = _linear_logit_t(spec, A, items)
        b, m = z.shape
        out = forward(model.mlps["link"], reshape(-z, (b * m, 1)))
        return reshape(out, (b, m))
    if fam == "deep":
        return _pairwise_mlp_t(model, A, items)
    if fam == "residual":
        z = _linear_logit_t(spec, A, items)
        return z - _pairwise_mlp_t(model, A, items)
    raise ValueError(f"{spec.family} has no logit surface")


def predictive_prob_t(model: GenerativeModel, A, items) -> Tensor:
    spec = model.spec
    A, items = _as_tensor(A), _as_tensor(items)
    fam, k = spec.canonical_family, spec.k_dim
    m = items.shape[0]
    if fam in ("1pl", "2pl", "link", "deep", "residual"):
        return sigmoid(response_logits_t(model, A, items))
    z = _linear_logit_t(spec, A, items)
    if fam == "3pl":
        g = sigmoid(reshape(narrow(items, 1, k + 1, 1), (1, m)))
        return g + (1.0 - g) * sigmoid(z)
    if fam == "lpe":
        b = texp(reshape(narrow(items, 1, k + 1, 1), (1, m)))
        return texp(b * logsigmoid(z))
    # idl: bell-shaped in the linear form
    return texp(-0.5 * z * z)


def bernoulli_loglik_t(model: GenerativeModel, A, items, R) -> Tensor:
    """log p(r | a, item) per cell; R is a constant 0/1 array (B, M).

    Values at missing cells are whatever R's filler implies; callers mask.
    """
    spec = model.spec
    A, items = _as_tensor(A), _as_tensor(items)
    correct = np.asarray(R) >= 0.5
    fam, k = spec.canonical_family, spec.k_dim
    m = items.shape[0]
    if fam in ("1pl", "2pl", "link", "deep", "residual"):
        z = response_logits_t(model, A, items)
        return select(correct, logsigmoid(z), logsigmoid(-z))
    z = _linear_logit_t(spec, A, items)
    if fam == "3pl":
        graw = reshape(narrow(items, 1, k + 1, 1), (1, m))
        logp = tlog(sigmoid(graw) + sigmoid(-graw) * sigmoid(z))
        log1mp = logsigmoid(-graw) + logsigmoid(-z)
        return select(correct, logp, log1mp)
    if fam == "lpe":
        b = texp(reshape(narrow(items, 1, k + 1, 1), (1, m)))
        logp = b * logsigmoid(z)
        return select(correct, logp, log1mexp(logp))
    logp = -0.5 * z * z
    return select(correct, logp, log1mexp(logp))


def _std_normal_cdf_t(x: Tensor) -> Tensor:
    return 0.5 * (erf(x * (1.0 / _SQRT2)) + 1.0)


def truncnorm_loglik_t(model: GenerativeModel, A, items, R) -> Tensor:
    """log density of responses in [0, 1] under Normal(p, 0.1) truncated to [0, 1]."""
    mean = predictive_prob_t(model, A, items)
    sd = math.sqrt(CONTINUOUS_VAR)
    R = np.asarray(R, dtype=np.float64)
    zvals = (R - mean) * (1.0 / sd)
    log_kernel = -0.5 * zvals * zvals - math.log(sd * math.sqrt(2.0 * math.pi))
    zmass = _std_normal_cdf_t((1.0 - mean) * (1.0 / sd)) - _std_normal_cdf_t((0.0 - mean) * (1.0 / sd))
    return log_kernel - tlog(zmass)


def response_loglik_matrix_t(model: GenerativeModel, A, items, R) -> Tensor:
    if model.spec.response_mode == "continuous":
        return truncnorm_loglik_t(model, A, items, R)
    return bernoulli_loglik_t(model, A, items, R)


def prob_matrix(model: GenerativeModel, abilities: np.ndarray, items_raw: np.ndarray,
                chunk: int = 4096) -> np.ndarray:
    """Plain-array predicted probabilities, chunked over persons."""
    abilities = np.atleast_2d(np.asarray(abilities, dtype=np.float64))
    items_raw = np.asarray(items_raw, dtype=np.float64)
    n = abilities.shape[0]
    if n <= chunk:
        return predictive_prob_t(model, abilities, items_raw).data
    out = np.empty((n, items_raw.shape[0]))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        out[lo:hi] = predictive_prob_t(model, abilities[lo:hi], items_raw).data
    return out


def loglik_matrix(model: GenerativeModel, abilities: np.ndarray, items_raw: np.ndarray,
                  R: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Plain-array per-cell log-likelihood, chunked over persons."""
    abilities = np.atleast_2d(np.asarray(abilities, dtype=np.float64))
    R = np.asarray(R, dtype=np.float64)
    n = abilities.shape[0]
    if n <= chunk:
        return response_loglik_matrix_t(model, abilities, items_raw, R).data
    out = np.empty_like(R)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        out[lo:hi] = response_loglik_matrix_t(model, abilities[lo:hi], items_raw, R[lo:hi]).data
    return out


# ---------------------------------------------------------------------------
# scalar public API on the natural parameter scale


def _logsig(z: float) -> float:
    return -np.logaddexp(0.0, -z)


def _log1mexp(x: float) -> float:
    if x >= 0.0:
        return -math.inf
    if x < -math.log(2.0):
        return math.log1p(-math.exp(x))
    return math.log(-math.expm1(x))


def _scalar_inputs(model: GenerativeModel, ability: Ability, item: ItemParams):
    spec = model.spec
    _check_item(spec, item)
    if ability.a.shape != (spec.k_dim,):
        raise DimensionError(
            f"ability must have shape ({spec.k_dim},), got {ability.a.shape}")
    if not np.all(np.isfinite(ability.a)):
        raise ValueError("ability contains non-finite values")
    return spec


def _natural_logit(spec: ModelSpec, ability: Ability, item: ItemParams) -> float:
    if spec.canonical_family == "1pl":
        return float(ability.a[0] + item.d)
    return float(ability.a @ item.k + item.d)


def response_prob(model: GenerativeModel, ability: Ability, item: ItemParams) -> float:
    """P(correct) for one person-item pair; natural-scale parameters."""
    spec = _scalar_inputs(model, ability, item)
    fam = spec.canonical_family
    if fam in DEEP_FAMILIES:
        return deep_response_prob(model, ability, item)
    z = _natural_logit(spec, ability, item)
    if fam in ("1pl", "2pl"):
        return float(_special.expit(z))
    if fam == "3pl":
        return float(item.g + (1.0 - item.g) * _special.expit(z))
    if fam == "lpe":
        return float(np.exp(item.b * _logsig(z)))
    return float(np.exp(-0.5 * z * z))


def deep_response_prob(model: GenerativeModel, ability: Ability, item: ItemParams) -> float:
    """P(correct) under the MLP-based families."""
    spec = _scalar_inputs(model, ability, item)
    if spec.canonical_family not in DEEP_FAMILIES:
        raise ValueError(f"{model.spec.family} is analytic; use response_prob")
    vec = pack_item_params(spec, item)
    out = predictive_prob_t(model, ability.a.reshape(1, -1), vec.reshape(1, -1))
    return float(out.data[0, 0])


def response_loglik(model: GenerativeModel, ability: Ability, item: ItemParams, r: float) -> float:
    """log p(r | a, item). Binary mode needs r in {0, 1}; continuous, [0, 1]."""
    spec = _scalar_inputs(model, ability, item)
    fam = spec.canonical_family
    if spec.response_mode == "continuous":
        if not (0.0 <= r <= 1.0):
            raise ValueError(f"continuous responses live in [0, 1], got {r}")
        mean = response_prob(model, ability, item)
        sd = math.sqrt(CONTINUOUS_VAR)
        kernel = -0.5 * ((r - mean) / sd) ** 2 - math.log(sd * math.sqrt(2.0 * math.pi))
        zmass = _norm_cdf((1.0 - mean) / sd) - _norm_cdf(-mean / sd)
        return float(kernel - math.log(zmass))
    if r not in (0.0, 1.0):
        raise ValueError(f"binary responses must be 0 or 1, got {r}")
    correct = r == 1.0
    if fam in DEEP_FAMILIES:
        vec = pack_item_params(spec, item)
        rr = np.array([[1.0 if correct else 0.0]])
        out = bernoulli_loglik_t(model, ability.a.reshape(1, -1), vec.reshape(1, -1), rr)
        return float(out.data[0, 0])
    z = _natural_logit(spec, ability, item)
    if fam in ("1pl", "2pl"):
        return float(_logsig(z) if correct else _logsig(-z))
    if fam == "3pl":
        if correct:
            if item.g == 0.0:
                return float(_logsig(z))
            return float(np.log(item.g + (1.0 - item.g) * _special.expit(z)))
        return float(np.log1p(-item.g) + _logsig(-z))
    if fam == "lpe":
        lp = item.b * _logsig(z)
        if correct:
            return float(lp)
        if lp == 0.0:
            # logsigmoid underflowed: 1 - sigmoid(z)^b ~ b * exp(-z)
            return float(math.log(item.b) - z)
        return float(_log1mexp(lp))
    lp = -0.5 * _natural_logit(spec, ability, item) ** 2
    return float(lp if correct else _log1mexp(lp))


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / _SQRT2))
