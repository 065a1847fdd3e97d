"""Offline fitting of the confounder prior and relative-transition tables.

Records come from a privileged setting where the confounder is observable, so
counting recovers the interventional mechanism directly; the closed-form
smoothed estimator below is the exact optimum of a Dirichlet-prior categorical
fit.  File formats (dataset CSV, parameter text) are documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .model import TransitionMode, UcPomdpModel
from .scm import CategoricalTable, UsageError, kl_divergence


@dataclass(frozen=True)
class Record:
    """One privileged observation: region flag, confounder, action, outcome."""

    uc: bool
    u: int
    a: int
    ds: int


@dataclass(frozen=True)
class DatasetMeta:
    seed: int
    model_name: str
    n_records: int
    n_u: int
    n_a: int
    n_ds: int


class Dataset:
    """Columnar store of records; iterates as :class:`Record` objects."""

    def __init__(self, uc: np.ndarray, u: np.ndarray, a: np.ndarray,
                 ds: np.ndarray, meta: DatasetMeta):
        n = len(uc)
        if not (len(u) == len(a) == len(ds) == n == meta.n_records):
            raise UsageError("dataset columns disagree on length")
        self.uc = np.asarray(uc, dtype=bool)
        self.u = np.asarray(u, dtype=np.int64)
        self.a = np.asarray(a, dtype=np.int64)
        self.ds = np.asarray(ds, dtype=np.int64)
        self.meta = meta

    def __len__(self) -> int:
        return self.meta.n_records

    def __iter__(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> Record:
        return Record(bool(self.uc[i]), int(self.u[i]), int(self.a[i]),
                      int(self.ds[i]))

    def permuted(self, order) -> "Dataset":
        order = np.asarray(order)
        return Dataset(self.uc[order], self.u[order], self.a[order],
                       self.ds[order], self.meta)


@dataclass(frozen=True)
class FitMeta:
    n_records: int
    smoothing: float
    u_count: np.ndarray          # total confounder draws
    uc_row_counts: np.ndarray    # records per (a, u) row, region only
    free_row_counts: np.ndarray  # records per action row, outside the region


@dataclass(frozen=True)
class LearnedParams:
    p_u: CategoricalTable
    p_uc: CategoricalTable
    p_0: CategoricalTable
    meta: FitMeta


def _inverse_cdf(cdf_rows: np.ndarray, draws: np.ndarray) -> np.ndarray:
    return np.minimum(
        (cdf_rows <= draws[:, None]).sum(axis=1), cdf_rows.shape[1] - 1
    )


def generate_dataset(model: UcPomdpModel, n: int, seed: int) -> Dataset:
    """Sample ``n`` privileged records from the ground-truth model.

    Per record: confounder from its prior, a starting cell uniform over the
    ordinary states, the reactive action (reflexive inside the region,
    uniform outside), and the relative outcome from the matching mechanism
    table.  Fully determined by ``seed``.
    """
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 10)))
    n_ordinary = model.n_states - 2
    n_a = model.n_actions

    u = _inverse_cdf(
        np.broadcast_to(model.confounder_prior.cdf[0], (n, model.n_confounder)),
        rng.random(n),
    )
    cells = rng.integers(0, n_ordinary, size=n)
    region_mask = np.zeros(n_ordinary, dtype=bool)
    region_mask[list(model.confounded_states)] = True
    uc = region_mask[cells]

    action_draws = rng.random(n)
    uniform_cdf = np.arange(1, n_a + 1) / n_a
    a = np.where(
        uc,
        _inverse_cdf(model.reactive_policy.cdf[u], action_draws),
        _inverse_cdf(np.broadcast_to(uniform_cdf, (n, n_a)), action_draws),
    )

    ds_draws = rng.random(n)
    uc_rows = model.p_uc.cdf[a * model.n_confounder + u]
    free_rows = model.p_0.cdf[a]
    ds = np.where(
        uc,
        _inverse_cdf(uc_rows, ds_draws),
        _inverse_cdf(free_rows, ds_draws),
    )

    meta = DatasetMeta(
        seed=seed,
        model_name=model.name,
        n_records=n,
        n_u=model.n_confounder,
        n_a=n_a,
        n_ds=model.n_ds,
    )
    return Dataset(uc, u, a, ds, meta)


def fit(dataset: Dataset, smoothing: float = 1.0) -> LearnedParams:
    """Smoothed-count estimate of the three categorical tables.

    Each row is (count + smoothing) / (row total + arity * smoothing), the
    posterior mode of a symmetric Dirichlet prior; smoothing > 0 keeps every
    row well defined even with no data.
    """
    if len(dataset) < 1:
        raise UsageError("dataset is empty")
    if smoothing <= 0:
        raise UsageError("smoothing must be positive")
    m = dataset.meta
    n_u, n_a, n_ds = m.n_u, m.n_a, m.n_ds

    u_counts = np.bincount(dataset.u, minlength=n_u).astype(float)
    p_u = (u_counts + smoothing) / (u_counts.sum() + n_u * smoothing)

    in_region = dataset.uc
    rows = dataset.a[in_region] * n_u + dataset.u[in_region]
    uc_counts = np.bincount(
        rows * n_ds + dataset.ds[in_region], minlength=n_a * n_u * n_ds
    ).astype(float).reshape(n_a * n_u, n_ds)
    p_uc = (uc_counts + smoothing) / (
        uc_counts.sum(axis=1, keepdims=True) + n_ds * smoothing
    )

    free_counts = np.bincount(
        dataset.a[~in_region] * n_ds + dataset.ds[~in_region],
        minlength=n_a * n_ds,
    ).astype(float).reshape(n_a, n_ds)
    p_0 = (free_counts + smoothing) / (
        free_counts.sum(axis=1, keepdims=True) + n_ds * smoothing
    )

    meta = FitMeta(
        n_records=len(dataset),
        smoothing=float(smoothing),
        u_count=u_counts,
        uc_row_counts=uc_counts.sum(axis=1),
        free_row_counts=free_counts.sum(axis=1),
    )
    return LearnedParams(
        p_u=CategoricalTable((), p_u),
        p_uc=CategoricalTable((n_a, n_u), p_uc),
        p_0=CategoricalTable((n_a,), p_0),
        meta=meta,
    )


def assemble_model(structure: UcPomdpModel, params: LearnedParams) -> UcPomdpModel:
    """The structural model with the three learned tables swapped in."""
    if params.p_u.n_categories != structure.n_confounder:
        raise UsageError("learned P(U) arity does not match the structure")
    if params.p_uc.parent_arities != (structure.n_actions, structure.n_confounder):
        raise UsageError("learned P_UC parents do not match the structure")
    if params.p_0.parent_arities != (structure.n_actions,):
        raise UsageError("learned P_0 parents do not match the structure")
    if (params.p_uc.n_categories != structure.n_ds
            or params.p_0.n_categories != structure.n_ds):
        raise UsageError("learned outcome arity does not match the structure")
    return structure.with_tables(
        params.p_u, params.p_uc, params.p_0, name=f"{structure.name}+learned"
    )


def eval_kl_full_transition(learned: UcPomdpModel, truth: UcPomdpModel) -> float:
    """Mean KL over (state, action, confounder) contexts of the true full
    transition row against the learned one, uniformly weighted."""
    if learned.n_states != truth.n_states or learned.n_actions != truth.n_actions:
        raise UsageError("models disagree on state or action spaces")
    if learned.n_confounder != truth.n_confounder:
        raise UsageError("models disagree on the confounder")
    total = 0.0
    count = 0
    for s in range(truth.n_states - 2):
        for a in range(truth.n_actions):
            for u in range(truth.n_confounder):
                total += kl_divergence(
                    truth.mechanism_transition_row(s, a, u),
                    learned.mechanism_transition_row(s, a, u),
                )
                count += 1
    return total / count


def max_abs_table_error(
    learned: UcPomdpModel, truth: UcPomdpModel, mode: TransitionMode
) -> float:
    """Largest absolute deviation across the confounded-region relative
    transition table (action x outcome), the quantity the learning method is
    judged on."""
    worst = 0.0
    for a in range(truth.n_actions):
        t = truth.relative_transition_dist(True, a, mode).probs
        l = learned.relative_transition_dist(True, a, mode).probs
        worst = max(worst, float(np.abs(t - l).max()))
    return worst


# -- file formats ----------------------------------------------------------------


def save_dataset_csv(dataset: Dataset, path) -> None:
    m = dataset.meta
    with open(path, "w") as fh:
        fh.write(f"# seed={m.seed} model={m.model_name} n={m.n_records} "
                 f"n_u={m.n_u} n_a={m.n_a} n_ds={m.n_ds}\n")
        fh.write("uc,u,a,ds\n")
        for i in range(len(dataset)):
            fh.write(f"{int(dataset.uc[i])},{dataset.u[i]},"
                     f"{dataset.a[i]},{dataset.ds[i]}\n")


def load_dataset_csv(path) -> Dataset:
    meta_fields = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        key, value = token.split("=", 1)
                        meta_fields[key] = value
                continue
            if line == "uc,u,a,ds":
                continue
            rows.append(tuple(int(v) for v in line.split(",")))
    data = np.array(rows, dtype=np.int64).reshape(len(rows), 4)
    meta = DatasetMeta(
        seed=int(meta_fields.get("seed", 0)),
        model_name=meta_fields.get("model", "unknown"),
        n_records=len(rows),
        n_u=int(meta_fields["n_u"]),
        n_a=int(meta_fields["n_a"]),
        n_ds=int(meta_fields["n_ds"]),
    )
    return Dataset(data[:, 0].astype(bool), data[:, 1], data[:, 2], data[:, 3], meta)


def save_params(params: LearnedParams, path) -> None:
    meta = params.meta
    n_a, n_u = params.p_uc.parent_arities
    lines = [
        f"# n_records={meta.n_records} smoothing={meta.smoothing!r}",
        "[p_u]",
        "# count=" + ",".join(repr(float(c)) for c in meta.u_count),
        " ".join(repr(float(v)) for v in params.p_u.values[0]),
    ]
    for a in range(n_a):
        for u in range(n_u):
            row = a * n_u + u
            lines.append(f"[p_uc a={a} u={u}]")
            lines.append(f"# count={float(meta.uc_row_counts[row])!r}")
            lines.append(" ".join(repr(float(v)) for v in params.p_uc.values[row]))
    for a in range(n_a):
        lines.append(f"[p_0 a={a}]")
        lines.append(f"# count={float(meta.free_row_counts[a])!r}")
        lines.append(" ".join(repr(float(v)) for v in params.p_0.values[a]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> LearnedParams:
    n_records, smoothing = 0, 1.0
    sections: dict[str, np.ndarray] = {}
    counts: dict[str, np.ndarray] = {}
    current = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if token.startswith("n_records="):
                        n_records = int(token.split("=", 1)[1])
                    elif token.startswith("smoothing="):
                        smoothing = float(token.split("=", 1)[1])
                    elif token.startswith("count=") and current is not None:
                        counts[current] = np.array(
                            [float(v) for v in token.split("=", 1)[1].split(",")]
                        )
                continue
            if line.startswith("["):
                current = line[1:-1]
                continue
            sections[current] = np.array([float(v) for v in line.split()])
    p_u = sections["p_u"]
    uc_keys = sorted(
        (k for k in sections if k.startswith("p_uc")),
        key=lambda k: (int(k.split("a=")[1].split()[0]), int(k.split("u=")[1])),
    )
    free_keys = sorted(
        (k for k in sections if k.startswith("p_0")),
        key=lambda k: int(k.split("a=")[1]),
    )
    n_u = len({k.split("u=")[1] for k in uc_keys})
    n_a = len(free_keys)
    p_uc = np.stack([sections[k] for k in uc_keys])
    p_0 = np.stack([sections[k] for k in free_keys])
    meta = FitMeta(
        n_records=n_records,
        smoothing=smoothing,
        u_count=counts.get("p_u", np.zeros(len(p_u))),
        uc_row_counts=np.array([float(counts.get(k, [0.0])[0]) for k in uc_keys]),
        free_row_counts=np.array([float(counts.get(k, [0.0])[0]) for k in free_keys]),
    )
    return LearnedParams(
        p_u=CategoricalTable((), p_u),
        p_uc=CategoricalTable((n_a, n_u), p_uc),
        p_0=CategoricalTable((n_a,), p_0),
        meta=meta,
    )
