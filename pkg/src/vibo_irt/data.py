"""Response datasets: simulation and CSV interchange.

The on-disk format is one header row `person_id,item_1,...,item_M`, then
one row per person. Cells are 0/1 for binary data, decimals in [0, 1] for
continuous data, and the literal NA for a missing response. The response
mode of a file is inferred on read: continuous if and only if some
observed value is non-integral (an all-integral continuous matrix is
therefore indistinguishable from a binary one by design).

Simulated datasets keep their generating ground truth and can write it to
sidecar files `<stem>.abilities.csv` and `<stem>.items.csv`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .diffcore import DimensionError
from .models import CONTINUOUS_VAR, ModelSpec, unpack_item_vector

SIMULATION_FAMILIES = ("2pl", "mirt", "idl")
_NA = "NA"


@dataclass
class ResponseDataset:
    """A possibly-incomplete response matrix plus optional ground truth."""

    values: np.ndarray
    mask: np.ndarray
    mode: str = "binary"
    person_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)
    true_abilities: np.ndarray | None = None
    true_items: np.ndarray | None = None
    true_spec: ModelSpec | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2:
            raise DimensionError(f"response matrix must be 2-D, got {self.values.shape}")
        if self.mask.shape != self.values.shape:
            raise DimensionError(
                f"mask shape {self.mask.shape} != matrix shape {self.values.shape}")
        if self.mode not in ("binary", "continuous"):
            raise ValueError(f"unknown response mode {self.mode!r}")
        obs = self.values[self.mask]
        if not np.all(np.isfinite(obs)):
            raise ValueError("observed responses must be finite")
        if self.mode == "binary":
            if obs.size and not np.all((obs == 0.0) | (obs == 1.0)):
                raise ValueError("binary datasets may only contain 0/1 responses")
        elif obs.size and (obs.min() < 0.0 or obs.max() > 1.0):
            raise ValueError("continuous responses must lie in [0, 1]")
        self.values = np.where(self.mask, self.values, 0.0)
        if not self.person_ids:
            self.person_ids = [f"p{i + 1}" for i in range(self.n_persons)]
        if not self.item_ids:
            self.item_ids = [f"item_{j + 1}" for j in range(self.n_items)]
        if len(self.person_ids) != self.n_persons or len(self.item_ids) != self.n_items:
            raise DimensionError("id lists must match the matrix shape")

    @property
    def n_persons(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def observed_fraction(self) -> float:
        return self.n_observed / self.mask.size

    def with_mask(self, new_mask: np.ndarray) -> "ResponseDataset":
        """Same responses restricted to a sub-mask (for holdout splits)."""
        new_mask = np.asarray(new_mask, dtype=bool)
        if not np.all(new_mask <= self.mask):
            raise ValueError("new mask may only hide cells, not reveal them")
        return ResponseDataset(self.values, new_mask, self.mode,
                               list(self.person_ids), list(self.item_ids),
                               self.true_abilities, self.true_items, self.true_spec)


def simulate(family: str = "2pl", n_persons: int = 100, n_items: int = 10,
             k_dim: int = 1, missing_frac: float = 0.0, seed: int = 0,
             response_mode: str = "binary") -> ResponseDataset:
    """Draw a synthetic dataset with standard-normal abilities and items.

    Abilities a_i ~ N(0, I_K); item discriminations and difficulties are
    standard normal as well. Binary mode draws each response once from
    Bernoulli(p_ij); continuous mode draws from Normal(p_ij, 0.1)
    truncated to [0, 1]. Cells then go missing independently with
    probability missing_frac.
    """
    if family not in SIMULATION_FAMILIES:
        raise ValueError(f"simulate supports families {SIMULATION_FAMILIES}, got {family!r}")
    if not (0.0 <= missing_frac < 1.0):
        raise ValueError(f"missing_frac must lie in [0, 1), got {missing_frac}")
    if n_persons < 1 or n_items < 1 or k_dim < 1:
        raise ValueError("n_persons, n_items, and k_dim must be positive")
    spec = ModelSpec(family=family, k_dim=k_dim, response_mode=response_mode)
    rng = np.random.default_rng(seed)
    abilities = rng.standard_normal((n_persons, k_dim))
    disc = rng.standard_normal((n_items, k_dim))
    diff = rng.standard_normal(n_items)
    items = np.column_stack([disc, diff])
    z = abilities @ disc.T + diff
    if spec.canonical_family == "2pl":
        probs = 1.0 / (1.0 + np.exp(-z))
    else:
        probs = np.exp(-0.5 * z * z)
    if response_mode == "binary":
        values = (rng.random((n_persons, n_items)) < probs).astype(np.float64)
    else:
        sd = np.sqrt(CONTINUOUS_VAR)
        lo, hi = (0.0 - probs) / sd, (1.0 - probs) / sd
        values = stats.truncnorm.rvs(lo, hi, loc=probs, scale=sd, random_state=rng)
    mask = rng.random((n_persons, n_items)) >= missing_frac
    return ResponseDataset(values, mask, response_mode,
                           true_abilities=abilities, true_items=items, true_spec=spec)


# ---------------------------------------------------------------------------
# CSV interchange


def _format_cell(value: float, mode: str) -> str:
    if mode == "binary":
        return str(int(value))
    return repr(float(value))


def write_response_csv(path, dataset: ResponseDataset) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["person_id"] + list(dataset.item_ids))
        for i, pid in enumerate(dataset.person_ids):
            row = [pid]
            for j in range(dataset.n_items):
                row.append(_format_cell(dataset.values[i, j], dataset.mode)
                           if dataset.mask[i, j] else _NA)
            writer.writerow(row)


def read_response_csv(path) -> ResponseDataset:
    """Parse a response CSV; errors cite the 1-based data row at fault."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "person_id":
            raise ValueError(f"{path}: header must be person_id,<item>,... got {header[:3]}")
        item_ids = header[1:]
        m = len(item_ids)
        person_ids: list[str] = []
        seen: set[str] = set()
        rows: list[list[float]] = []
        masks: list[list[bool]] = []
        any_fractional = False
        for rownum, row in enumerate(reader, start=1):
            if len(row) != m + 1:
                raise ValueError(
                    f"{path}: data row {rownum} has {len(row)} fields, expected {m + 1}")
            pid = row[0]
            if pid in seen:
                raise ValueError(f"{path}: data row {rownum}: duplicate person_id {pid!r}")
            seen.add(pid)
            person_ids.append(pid)
            vals, obs = [], []
            for col, cell in enumerate(row[1:], start=1):
                cell = cell.strip()
                if cell == _NA:
                    vals.append(0.0)
                    obs.append(False)
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: data row {rownum}, column {col}: "
                        f"cannot parse {cell!r}") from None
                if not np.isfinite(x) or x < 0.0 or x > 1.0:
                    raise ValueError(
                        f"{path}: data row {rownum}, column {col}: "
                        f"value {cell!r} outside [0, 1]")
                if x not in (0.0, 1.0):
                    any_fractional = True
                vals.append(x)
                obs.append(True)
            rows.append(vals)
            masks.append(obs)
        if not rows:
            raise ValueError(f"{path}: no data rows")
    mode = "continuous" if any_fractional else "binary"
    return ResponseDataset(np.array(rows), np.array(masks), mode, person_ids, item_ids)


def abilities_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".abilities.csv")


def items_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".items.csv")


def write_abilities_csv(path, person_ids, abilities: np.ndarray) -> None:
    abilities = np.atleast_2d(np.asarray(abilities, dtype=np.float64))
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["person_id"] + [f"a_{k + 1}" for k in range(abilities.shape[1])])
        for pid, row in zip(person_ids, abilities):
            writer.writerow([pid] + [repr(float(v)) for v in row])


def read_abilities_csv(path):
    with Path(path).open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    ids = [r[0] for r in rows]
    mat = np.array([[float(v) for v in r[1:]] for r in rows])
    if len(header) != mat.shape[1] + 1:
        raise ValueError(f"{path}: ragged ability file")
    return ids, mat


def write_items_csv(path, spec: ModelSpec, items_raw: np.ndarray, item_ids=None) -> None:
    """Write natural-scale item parameters: item_id,family,d,k_1..k_K,g,b.

    The deep family has embeddings instead and gets e_1..e_K columns.
    """
    items_raw = np.atleast_2d(np.asarray(items_raw, dtype=np.float64))
    m = items_raw.shape[0]
    if item_ids is None:
        item_ids = [f"item_{j + 1}" for j in range(m)]
    k = spec.k_dim
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        if spec.canonical_family == "deep":
            writer.writerow(["item_id", "family"] + [f"e_{i + 1}" for i in range(k)])
            for iid, vec in zip(item_ids, items_raw):
                writer.writerow([iid, spec.family] + [repr(float(v)) for v in vec])
            return
        writer.writerow(["item_id", "family", "d"]
                        + [f"k_{i + 1}" for i in range(k)] + ["g", "b"])
        for iid, vec in zip(item_ids, items_raw):
            item = unpack_item_vector(spec, vec)
            row = [iid, spec.family, repr(float(item.d))]
            row += [repr(float(v)) for v in item.k] if item.k is not None else [""] * k
            row.append(repr(float(item.g)) if item.g is not None else "")
            row.append(repr(float(item.b)) if item.b is not None else "")
            writer.writerow(row)


def write_posterior_csv(path, person_ids, mu: np.ndarray, var: np.ndarray) -> None:
    """Per-person posterior summary: person_id,mu_1..mu_K,var_1..var_K."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    var = np.atleast_2d(np.asarray(var, dtype=np.float64))
    if mu.shape != var.shape:
        raise DimensionError("posterior mu and var must have matching shapes")
    k = mu.shape[1]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["person_id"] + [f"mu_{i + 1}" for i in range(k)]
                        + [f"var_{i + 1}" for i in range(k)])
        for pid, mrow, vrow in zip(person_ids, mu, var):
            writer.writerow([pid] + [repr(float(v)) for v in mrow]
                            + [repr(float(v)) for v in vrow])


def write_simulation(path, dataset: ResponseDataset) -> None:
    """Write a simulated dataset plus its ground-truth sidecar files."""
    write_response_csv(path, dataset)
    if dataset.true_abilities is not None:
        write_abilities_csv(abilities_sidecar_path(path), dataset.person_ids,
                            dataset.true_abilities)
    if dataset.true_items is not None and dataset.true_spec is not None:
        write_items_csv(items_sidecar_path(path), dataset.true_spec,
                        dataset.true_items, dataset.item_ids)
