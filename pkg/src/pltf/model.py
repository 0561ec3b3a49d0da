"""Declarative factorization structures: indices, factors, priors, clamps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import IndexDef, NamedTensor

__all__ = [
    "GammaPrior",
    "FactorSpec",
    "PltfModel",
    "Observation",
    "build_cp",
    "build_tucker",
    "build_model",
    "validate",
    "DEFAULT_A",
    "DEFAULT_B",
]

DEFAULT_A = 0.5
DEFAULT_B = 10.0


@dataclass(frozen=True, eq=False)
class GammaPrior:
    """Elementwise Gamma prior with shape ``A`` and mean ``B``.

    Samples are ``Gamma(shape=A, scale=B/A)``, so the prior mean is ``B`` and
    the standard deviation ``B / sqrt(A)``.
    """

    shape: np.ndarray
    scale_mean: np.ndarray

    def __post_init__(self):
        a = np.array(self.shape, dtype=float)
        b = np.array(self.scale_mean, dtype=float)
        if a.shape != b.shape:
            raise ShapeError(f"prior arrays differ in shape: {a.shape} vs {b.shape}")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "shape", a)
        object.__setattr__(self, "scale_mean", b)

    @classmethod
    def constant(cls, shape, a=DEFAULT_A, b=DEFAULT_B):
        return cls(np.full(shape, float(a)), np.full(shape, float(b)))

    @property
    def scale(self) -> np.ndarray:
        """Gamma scale parameter ``B/A``."""
        return self.scale_mean / self.shape


@dataclass(frozen=True, eq=False)
class FactorSpec:
    """One factor: its index names, prior, and (for clamped factors) value."""

    name: str
    indices: tuple[str, ...]
    prior: GammaPrior
    clamped: bool = False
    value: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(self.indices))
        if self.value is not None:
            v = np.array(self.value, dtype=float)
            v.flags.writeable = False
            object.__setattr__(self, "value", v)


@dataclass(frozen=True, eq=False)
class PltfModel:
    """Index universe, visible indices, and ordered factor list.

    Construction does not check the structural invariants; call
    :func:`validate` (the fitting routines do so and raise on violations).
    """

    indices: tuple[IndexDef, ...]
    observed: tuple[str, ...]
    factors: tuple[FactorSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(self.indices))
        object.__setattr__(self, "observed", tuple(self.observed))
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def sizes(self) -> dict[str, int]:
        return {ix.name: ix.cardinality for ix in self.indices}

    @property
    def observed_shape(self) -> tuple[int, ...]:
        sizes = self.sizes
        return tuple(sizes[n] for n in self.observed)

    @property
    def observed_indices(self) -> tuple[IndexDef, ...]:
        lookup = {ix.name: ix for ix in self.indices}
        return tuple(lookup[n] for n in self.observed)

    def factor_indices(self, alpha: int) -> tuple[IndexDef, ...]:
        lookup = {ix.name: ix for ix in self.indices}
        return tuple(lookup[n] for n in self.factors[alpha].indices)

    def factor_shape(self, alpha: int) -> tuple[int, ...]:
        sizes = self.sizes
        return tuple(sizes[n] for n in self.factors[alpha].indices)

    def __repr__(self):
        body = ", ".join(f"{f.name}({','.join(f.indices)})" for f in self.factors)
        return f"PltfModel(observed={','.join(self.observed)}; {body})"


@dataclass(frozen=True, eq=False)
class Observation:
    """Non-negative data ``X`` over the visible indices and a 0/1 mask ``M``.

    ``M`` defaults to all ones (fully observed).  Missing cells of ``X`` may
    hold any non-negative value; they never enter an update or the bound.
    """

    X: np.ndarray
    M: np.ndarray | None = None

    def __post_init__(self):
        X = self.X.values if isinstance(self.X, NamedTensor) else self.X
        X = np.array(X, dtype=float)
        M = self.M.values if isinstance(self.M, NamedTensor) else self.M
        M = np.ones_like(X) if M is None else np.array(M, dtype=float)
        if M.shape != X.shape:
            raise ShapeError(f"mask shape {M.shape} differs from data shape {X.shape}")
        if not np.all(np.isfinite(X)) or np.any(X < 0):
            raise ValidationError("observation X must be finite and non-negative")
        if not np.all((M == 0) | (M == 1)):
            raise ValidationError("mask M must contain only 0 and 1")
        X.flags.writeable = False
        M.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "M", M)

    @property
    def shape(self):
        return self.X.shape


def _prior_arrays(shape, a, b):
    a = np.broadcast_to(np.asarray(a, dtype=float), shape)
    b = np.broadcast_to(np.asarray(b, dtype=float), shape)
    return GammaPrior(a, b)


def build_model(
    indices: Mapping[str, int],
    observed: Sequence[str],
    factors: Sequence[Sequence[str]],
    a=DEFAULT_A,
    b=DEFAULT_B,
    names: Sequence[str] | None = None,
    clamped: Mapping[int, np.ndarray] | None = None,
) -> PltfModel:
    """Assemble an arbitrary factorization structure.

    Parameters
    ----------
    indices : mapping
        Index name to cardinality, in declaration order.
    observed : sequence of str
        Visible indices, in the axis order of the data tensor.
    factors : sequence of sequences of str
        Index names of each factor.
    a, b : float or sequence
        Prior shape and mean.  A scalar is broadcast to every element of every
        factor; a sequence gives one (scalar or array) value per factor.
    names : sequence of str, optional
        Factor names; default ``Z1, Z2, ...``.
    clamped : mapping, optional
        Factor position to fixed value.  Clamped factors are never updated.
    """
    index_defs = tuple(IndexDef(n, c) for n, c in indices.items())
    sizes = dict(indices)
    clamped = dict(clamped or {})
    names = list(names) if names is not None else [f"Z{k + 1}" for k in range(len(factors))]
    per_factor_a = a if isinstance(a, (list, tuple)) else [a] * len(factors)
    per_factor_b = b if isinstance(b, (list, tuple)) else [b] * len(factors)
    specs = []
    for k, idx in enumerate(factors):
        shape = tuple(sizes.get(n, 1) for n in idx)
        value = clamped.get(k)
        if value is not None:
            value = np.broadcast_to(np.asarray(value, dtype=float), shape)
        specs.append(
            FactorSpec(
                names[k],
                tuple(idx),
                _prior_arrays(shape, per_factor_a[k], per_factor_b[k]),
                clamped=k in clamped,
                value=value,
            )
        )
    return PltfModel(index_defs, tuple(observed), tuple(specs))


def build_cp(dim_i: int, dim_j: int, dim_k: int, rank: int, a=DEFAULT_A, b=DEFAULT_B) -> PltfModel:
    """Three-way CP model: ``X(i,j,k) = sum_r Z1(i,r) Z2(j,r) Z3(k,r)``."""
    return build_model(
        {"i": dim_i, "j": dim_j, "k": dim_k, "r": rank},
        ("i", "j", "k"),
        [("i", "r"), ("j", "r"), ("k", "r")],
        a,
        b,
    )


def build_tucker(dim_i, dim_j, dim_k, p, q, r, a=DEFAULT_A, b=DEFAULT_B) -> PltfModel:
    """Three-way Tucker model with core ``Z4(p,q,r)``."""
    return build_model(
        {"i": dim_i, "j": dim_j, "k": dim_k, "p": p, "q": q, "r": r},
        ("i", "j", "k"),
        [("i", "p"), ("j", "q"), ("k", "r"), ("p", "q", "r")],
        a,
        b,
    )


def validate(model: PltfModel) -> list[str]:
    """Return every structural violation of ``model`` (empty list when valid)."""
    problems = []
    names = [ix.name for ix in model.indices]
    known = set(names)
    if len(known) != len(names):
        problems.append(f"duplicate index names in {names}")
    for n in model.observed:
        if n not in known:
            problems.append(f"observed index {n!r} is not a model index")
    if len(set(model.observed)) != len(model.observed):
        problems.append("duplicate observed indices")
    if not model.factors:
        problems.append("model has no factors")

    sizes = model.sizes
    in_factors = set()
    for k, f in enumerate(model.factors):
        label = f"factor {f.name!r} (position {k})"
        if not f.indices:
            problems.append(f"{label} has no indices")
        if len(set(f.indices)) != len(f.indices):
            problems.append(f"{label} repeats an index")
        unknown = [n for n in f.indices if n not in known]
        if unknown:
            problems.append(f"{label} references unknown indices {unknown}")
        in_factors.update(f.indices)
        shape = tuple(sizes.get(n, -1) for n in f.indices)
        if f.prior.shape.shape != shape:
            problems.append(f"{label} prior shape {f.prior.shape.shape} != factor shape {shape}")
        elif np.any(f.prior.shape <= 0) or np.any(f.prior.scale_mean <= 0):
            problems.append(f"{label} prior parameters must be strictly positive")
        if f.clamped:
            if f.value is None:
                problems.append(f"{label} is clamped but has no value")
            elif f.value.shape != shape:
                problems.append(f"{label} clamped value shape {f.value.shape} != {shape}")
            elif np.any(f.value < 0) or not np.all(np.isfinite(f.value)):
                problems.append(f"{label} clamped value must be finite and non-negative")

    for n in names:
        if n not in in_factors and n not in model.observed:
            problems.append(f"index {n!r} appears neither in the observed set nor in any factor")
    for n in model.observed:
        if n in known and n not in in_factors:
            problems.append(f"observed index {n!r} appears in no factor")
    if model.factors and all(f.clamped for f in model.factors):
        problems.append("all factors are clamped; nothing to estimate")
    return problems


def check_model(model: PltfModel):
    """Raise :class:`ValidationError` listing every violation, if any."""
    problems = validate(model)
    if problems:
        raise ValidationError(problems)


def check_observation(model: PltfModel, obs: Observation):
    if obs.shape != model.observed_shape:
        raise ValidationError(
            f"data shape {obs.shape} does not match observed indices "
            f"{model.observed} with shape {model.observed_shape}"
        )
