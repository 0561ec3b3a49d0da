"""Synthetic data, holdout masks, model-order sweeps, and AUC link prediction."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .inference import FitConfig, fit, reconstruct
from .model import DEFAULT_A, DEFAULT_B, Observation, PltfModel, build_cp
from .tensor import IndexDef, NamedTensor, contract

__all__ = [
    "generate_cp",
    "HoldoutSplit",
    "make_holdout",
    "SweepReport",
    "sweep_order",
    "auc",
    "link_prediction_run",
    "synthetic_link_tensor",
    "LinkRow",
    "evaluate_links",
]

logger = logging.getLogger(__name__)

_NAMES = "ijklmnopqs"


def generate_cp(dims, rank, a=DEFAULT_A, b=DEFAULT_B, seed=0, poisson=True, factors=None):
    """Sample a CP tensor with Gamma(a, b/a) factor entries.

    Returns ``(X, factors)`` where ``X`` is a :class:`NamedTensor` over
    ``i, j, k, ...`` and ``factors`` the list of ground-truth factor matrices.
    With ``poisson`` the cells are Poisson counts around the noiseless
    product; otherwise ``X`` is the product itself.  Pass ``factors`` to
    skip sampling them.
    """
    dims = tuple(int(d) for d in dims)
    if rank < 1 or any(d < 1 for d in dims):
        raise ValueError("dims and rank must be positive")
    rng = np.random.default_rng(seed)
    if factors is None:
        factors = [rng.gamma(a, b / a, size=(d, rank)) for d in dims]
    else:
        factors = [np.asarray(f, dtype=float) for f in factors]
    names = _NAMES[: len(dims)]
    lam = contract([((n, "r"), f) for n, f in zip(names, factors)], tuple(names))
    X = rng.poisson(lam).astype(float) if poisson else lam
    indices = tuple(IndexDef(n, d) for n, d in zip(names, dims))
    return NamedTensor(indices, X, nonneg=True), factors


@dataclass
class HoldoutSplit:
    """Training mask plus the flat positions of the held-out cells."""

    train_mask: np.ndarray
    test_index: np.ndarray
    labels: np.ndarray | None = None

    @property
    def test_cells(self):
        shape = self.train_mask.shape
        cells = [tuple(int(i) for i in np.unravel_index(k, shape)) for k in self.test_index]
        labels = self.labels if self.labels is not None else [None] * len(cells)
        return list(zip(cells, (None if l is None else int(l) for l in labels)))


def make_holdout(dims, missing_fraction, seed, X=None) -> HoldoutSplit:
    """Hide ``round(fraction * N)`` cells chosen uniformly without replacement.

    If ``X`` is given the held-out labels ``X > 0`` are stored on the split.
    """
    if not 0 <= missing_fraction < 1:
        raise ValueError(f"missing fraction must lie in [0, 1), got {missing_fraction}")
    dims = tuple(int(d) for d in dims)
    n = int(np.prod(dims))
    count = int(round(missing_fraction * n))
    rng = np.random.default_rng(seed)
    test = np.sort(rng.choice(n, size=count, replace=False))
    mask = np.ones(n)
    mask[test] = 0.0
    labels = None
    if X is not None:
        labels = (np.asarray(getattr(X, "values", X)).reshape(-1)[test] > 0).astype(int)
    return HoldoutSplit(mask.reshape(dims), test, labels)


@dataclass
class SweepReport:
    """Best score per candidate order over restarts.

    ``scores[o][r]`` is the final score of restart ``r`` at order ``orders[o]``
    (the bound for VB, minus the divergence for EM).
    """

    orders: list
    scores: list
    best_bound: list = field(init=False)
    selected_order: int = field(init=False)

    def __post_init__(self):
        self.best_bound = [max(row) for row in self.scores]
        best = max(self.best_bound)
        # First maximum in increasing order is the smallest tied order.
        self.selected_order = self.orders[self.best_bound.index(best)]

    def to_csv(self) -> str:
        lines = ["order,restart,bound"]
        for order, row in zip(self.orders, self.scores):
            lines += [f"{order},{r},{v!r}" for r, v in enumerate(row)]
        return "\n".join(lines) + "\n"


def restart_seed(base_seed, order, restart) -> int:
    """Seed of one ``(order, restart)`` fit, independent of enumeration order."""
    return int(np.random.SeedSequence([int(base_seed), int(order), int(restart)]).generate_state(1)[0])


def _run_one(args):
    family, obs, order, restart, config = args
    cfg = replace(config, seed=restart_seed(config.seed, order, restart))
    try:
        return fit(family(order), obs, cfg).score
    except Exception as exc:
        raise type(exc)(f"order {order}, restart {restart}: {exc}") from exc


def sweep_order(
    family: Callable[[int], PltfModel],
    obs: Observation,
    r_min: int,
    r_max: int,
    restarts: int,
    config: FitConfig | None = None,
    n_jobs: int = 1,
) -> SweepReport:
    """Fit every order in ``r_min..r_max`` from ``restarts`` random starts.

    ``family(order)`` builds the model for one candidate order.  Ties in the
    best score go to the smaller order.  With ``n_jobs > 1`` fits run in a
    process pool; results do not depend on ``n_jobs``.
    """
    if r_min < 1 or r_max < r_min:
        raise ValueError(f"invalid order range {r_min}..{r_max}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    config = config or FitConfig()
    orders = list(range(r_min, r_max + 1))
    jobs = [(family, obs, o, r, config) for o in orders for r in range(restarts)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            flat = list(pool.map(_run_one, jobs))
    else:
        flat = [_run_one(job) for job in jobs]
    scores = [flat[k * restarts:(k + 1) * restarts] for k in range(len(orders))]
    report = SweepReport(orders, scores)
    logger.info("order sweep selected %d", report.selected_order)
    return report


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Ties between a positive and a negative count one half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and of equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def link_prediction_run(model: PltfModel, X_full, split: HoldoutSplit, config: FitConfig | None = None) -> float:
    """Fit on the training cells and score the held-out ones by AUC.

    Scores are the reconstruction from the fitted point estimates (posterior
    means for VB); labels are ``X_full > 0`` at the held-out cells.
    """
    X_full = np.asarray(getattr(X_full, "values", X_full), dtype=float)
    if split.train_mask.shape != X_full.shape:
        raise ValueError(f"split shape {split.train_mask.shape} != data shape {X_full.shape}")
    if len(split.test_index) == 0:
        raise ValueError("holdout split has no test cells")
    obs = Observation(X_full * split.train_mask, split.train_mask)
    result = fit(model, obs, config)
    scores = reconstruct(model, result.factors).reshape(-1)[split.test_index]
    labels = (X_full.reshape(-1)[split.test_index] > 0).astype(int)
    return auc(scores, labels)


def synthetic_link_tensor(dims=(40, 40, 5), rank=3, a=DEFAULT_A, b=0.3, seed=0) -> np.ndarray:
    """Binary tensor ``Poisson(CP intensity) > 0`` for link-prediction trials.

    The default prior mean ``b=0.3`` gives roughly 9% ones at the default
    shape, keeping the positive class rare as in real link data.
    """
    X, _ = generate_cp(dims, rank, a, b, seed, poisson=True)
    return (X.values > 0).astype(float)


@dataclass
class LinkRow:
    run: int
    seed: int
    missing_fraction: float
    method: str
    rank: int
    auc: float

    def csv(self) -> str:
        value = "" if np.isnan(self.auc) else repr(self.auc)
        return f"{self.run},{self.seed},{self.missing_fraction!r},{self.method},{self.rank},{value}"


LINK_HEADER = "run,seed,missing_fraction,method,rank,auc"


def evaluate_links(
    X,
    fractions: Sequence[float],
    methods: Sequence[str],
    ranks: Sequence[int],
    seeds: Sequence[int],
    a=DEFAULT_A,
    b=DEFAULT_B,
    max_iters=500,
) -> list[LinkRow]:
    """Run the (fraction x method x rank x seed) CP link-prediction grid.

    The holdout for a given ``(fraction, seed)`` is shared by all methods and
    ranks.  A split whose held-out cells are all one class yields ``nan``.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if X.ndim != 3:
        raise ValueError("link prediction grid expects a three-way tensor")
    rows = []
    run = 0
    for frac in fractions:
        for method in methods:
            for rank in ranks:
                model = build_cp(*X.shape, rank, a, b)
                for seed in seeds:
                    split = make_holdout(X.shape, frac, seed)
                    cfg = FitConfig(method=method, max_iters=max_iters, seed=seed)
                    try:
                        value = link_prediction_run(model, X, split, cfg)
                    except ValueError as exc:
                        if "positive and one negative" not in str(exc):
                            raise
                        logger.warning("fraction %s seed %s: %s", frac, seed, exc)
                        value = float("nan")
                    rows.append(LinkRow(run, seed, frac, method, rank, value))
                    run += 1
    return rows
