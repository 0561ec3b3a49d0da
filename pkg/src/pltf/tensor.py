"""Named-index dense tensors and the contraction kernels built on them.

Every tensor in the library is a dense, row-major ``numpy`` array whose axes
carry symbolic index names.  Two kernels do all of the heavy lifting:

* :func:`full_product` sums the product of a set of factors over every index
  that is not requested in the output (the model reconstruction).
* :func:`delta` contracts a tensor over the observed indices against all
  factors except one, giving an object shaped like the excluded factor.

Both lower to a deterministic sequence of pairwise contractions, each of which
is a single (batched) matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ShapeError, SingularModelError

__all__ = [
    "IndexDef",
    "NamedTensor",
    "CooTable",
    "contract",
    "full_product",
    "delta",
    "hadamard",
    "safe_div",
]


@dataclass(frozen=True)
class IndexDef:
    """A symbolic index with its number of settings."""

    name: str
    cardinality: int

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ShapeError(f"index name must be a non-empty string, got {self.name!r}")
        if int(self.cardinality) != self.cardinality or self.cardinality < 1:
            raise ShapeError(
                f"index {self.name!r} needs a positive integer cardinality, "
                f"got {self.cardinality!r}"
            )
        object.__setattr__(self, "cardinality", int(self.cardinality))


def _check_unique(indices: Sequence[IndexDef]):
    names = [ix.name for ix in indices]
    if len(set(names)) != len(names):
        raise ShapeError(f"duplicate index names in {names}")


@dataclass(frozen=True, eq=False)
class NamedTensor:
    """Dense array whose axes are labelled by :class:`IndexDef` objects.

    ``values`` may be given flat (row-major, axis order = ``indices`` order) or
    already shaped.  The stored array is a read-only float64 copy.
    """

    indices: tuple[IndexDef, ...]
    values: np.ndarray
    nonneg: bool = False

    def __post_init__(self):
        indices = tuple(self.indices)
        _check_unique(indices)
        shape = tuple(ix.cardinality for ix in indices)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.size != prod(shape):
            raise ShapeError(
                f"{values.size} values supplied for indices of shape {shape}"
            )
        values = values.reshape(shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("tensor values must be finite")
        if self.nonneg and np.any(values < 0):
            raise ValueError("tensor flagged non-negative has negative entries")
        values.flags.writeable = False
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @classmethod
    def full(cls, indices: Iterable[IndexDef], fill: float, nonneg: bool = False):
        indices = tuple(indices)
        return cls(indices, np.full([ix.cardinality for ix in indices], float(fill)), nonneg)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(ix.name for ix in self.indices)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def sizes(self) -> dict[str, int]:
        return {ix.name: ix.cardinality for ix in self.indices}

    def transpose_to(self, names: Sequence[str]) -> "NamedTensor":
        """Return the same tensor with axes reordered to ``names``."""
        if sorted(names) != sorted(self.names):
            raise ShapeError(f"cannot reorder {self.names} to {tuple(names)}")
        lookup = {ix.name: ix for ix in self.indices}
        axes = [self.names.index(n) for n in names]
        return NamedTensor(tuple(lookup[n] for n in names), self.values.transpose(axes), self.nonneg)

    def __repr__(self):
        dims = ", ".join(f"{ix.name}={ix.cardinality}" for ix in self.indices)
        return f"NamedTensor({dims})"


@dataclass
class CooTable:
    """Sparse coordinate listing of a tensor: ``(index tuple, value)`` pairs."""

    indices: tuple[IndexDef, ...]
    entries: list[tuple[tuple[int, ...], float]] = field(default_factory=list)

    def __post_init__(self):
        self.indices = tuple(self.indices)
        _check_unique(self.indices)
        shape = tuple(ix.cardinality for ix in self.indices)
        seen = set()
        for idx, _ in self.entries:
            if len(idx) != len(shape) or any(not 0 <= i < n for i, n in zip(idx, shape)):
                raise ShapeError(f"entry {idx} out of range for shape {shape}")
            if idx in seen:
                raise ShapeError(f"duplicate entry {idx}")
            seen.add(idx)

    @classmethod
    def from_dense(cls, tensor: NamedTensor, keep_zeros: bool = False) -> "CooTable":
        values = tensor.values
        mask = np.ones(values.shape, bool) if keep_zeros else values != 0
        entries = [
            (tuple(int(i) for i in idx), float(values[tuple(idx)]))
            for idx in np.argwhere(mask)
        ]
        return cls(tensor.indices, entries)

    def to_dense(self, nonneg: bool = False) -> NamedTensor:
        values = np.zeros([ix.cardinality for ix in self.indices])
        for idx, v in self.entries:
            values[idx] = v
        return NamedTensor(self.indices, values, nonneg)


# ---------------------------------------------------------------------------
# Contraction engine
# ---------------------------------------------------------------------------

def _pair(a, a_names, b, b_names, keep):
    """Contract two labelled arrays, keeping only names in ``keep``.

    Lowered to ``matmul`` over layout ``(batch, free_a, summed) @ (batch,
    summed, free_b)``.  Returns ``(array, names)``.
    """
    a_drop = tuple(i for i, n in enumerate(a_names) if n not in b_names and n not in keep)
    if a_drop:
        a = a.sum(axis=a_drop)
        a_names = tuple(n for n in a_names if n in b_names or n in keep)
    b_drop = tuple(i for i, n in enumerate(b_names) if n not in a_names and n not in keep)
    if b_drop:
        b = b.sum(axis=b_drop)
        b_names = tuple(n for n in b_names if n in a_names or n in keep)

    batch = [n for n in a_names if n in b_names and n in keep]
    summed = [n for n in a_names if n in b_names and n not in keep]
    free_a = [n for n in a_names if n not in b_names]
    free_b = [n for n in b_names if n not in a_names]

    a_shape = dict(zip(a_names, a.shape))
    b_shape = dict(zip(b_names, b.shape))
    nb = prod(a_shape[n] for n in batch)
    nfa = prod(a_shape[n] for n in free_a)
    ns = prod(a_shape[n] for n in summed)
    nfb = prod(b_shape[n] for n in free_b)

    a2 = a.transpose([a_names.index(n) for n in batch + free_a + summed]).reshape(nb, nfa, ns)
    b2 = b.transpose([b_names.index(n) for n in batch + summed + free_b]).reshape(nb, ns, nfb)
    out = np.matmul(a2, b2)
    names = tuple(batch + free_a + free_b)
    shape = [a_shape[n] for n in batch + free_a] + [b_shape[n] for n in free_b]
    return out.reshape(shape), names


def _greedy_order(names_list):
    """Deterministic operand order: start with operand 0, then repeatedly take
    the operand sharing most indices with the running result (ties broken by
    declaration order)."""
    order = [0]
    current = set(names_list[0])
    remaining = list(range(1, len(names_list)))
    while remaining:
        best = max(remaining, key=lambda k: (len(current & set(names_list[k])), -k))
        order.append(best)
        current |= set(names_list[best])
        remaining.remove(best)
    return order


def contract(operands, out_names, sizes=None):
    """Sum the product of labelled arrays over every index not in ``out_names``.

    Parameters
    ----------
    operands : sequence of (names, ndarray)
        Each array's axes are labelled by the matching tuple of index names.
    out_names : sequence of str
        Output axis order.  Output names absent from all operands are
        broadcast (the summand does not depend on them); this requires
        ``sizes``.
    sizes : mapping, optional
        Cardinality lookup for broadcast output indices.

    Returns
    -------
    ndarray
    """
    out_names = tuple(out_names)
    operands = [(tuple(n), np.asarray(a)) for n, a in operands]
    if not operands:
        raise ShapeError("contract needs at least one operand")
    order = _greedy_order([n for n, _ in operands])
    names, arr = operands[order[0]]
    for pos, k in enumerate(order[1:], start=1):
        later = set(out_names)
        for j in order[pos + 1:]:
            later.update(operands[j][0])
        b_names, b = operands[k]
        arr, names = _pair(arr, names, b, b_names, later)
    extra = tuple(i for i, n in enumerate(names) if n not in out_names)
    if extra:
        arr = arr.sum(axis=extra)
        names = tuple(n for n in names if n in out_names)
    missing = [n for n in out_names if n not in names]
    if missing:
        if sizes is None:
            raise ShapeError(f"output indices {missing} appear in no operand")
        arr = arr.reshape(arr.shape + (1,) * len(missing))
        names = names + tuple(missing)
        arr = np.broadcast_to(arr, tuple(
            arr.shape[i] if n not in missing else sizes[n] for i, n in enumerate(names)
        ))
    return np.ascontiguousarray(arr.transpose([names.index(n) for n in out_names]))


def _merged_sizes(tensors: Iterable[NamedTensor]) -> dict[str, IndexDef]:
    lookup: dict[str, IndexDef] = {}
    for t in tensors:
        for ix in t.indices:
            prev = lookup.setdefault(ix.name, ix)
            if prev.cardinality != ix.cardinality:
                raise ShapeError(
                    f"index {ix.name!r} has cardinality {prev.cardinality} "
                    f"and {ix.cardinality} in different tensors"
                )
    return lookup


def full_product(factors: Sequence[NamedTensor], out_indices: Sequence[IndexDef]) -> NamedTensor:
    """Sum of the product of ``factors`` over all indices not in ``out_indices``."""
    out_indices = tuple(out_indices)
    lookup = _merged_sizes(list(factors) + [NamedTensor.full(out_indices, 0.0)])
    present = {n for f in factors for n in f.names}
    absent = [ix.name for ix in out_indices if ix.name not in present]
    if absent:
        raise ShapeError(f"output indices {absent} appear in no factor")
    values = contract([(f.names, f.values) for f in factors], [ix.name for ix in out_indices])
    nonneg = all(f.nonneg or bool(np.all(f.values >= 0)) for f in factors)
    return NamedTensor(tuple(lookup[ix.name] for ix in out_indices), values, nonneg)


def delta(alpha: int, Q: NamedTensor, factors: Sequence[NamedTensor]) -> NamedTensor:
    """Contract ``Q`` against every factor except ``factors[alpha]``.

    The result is shaped like ``factors[alpha]``: entry ``v_alpha`` is the sum,
    over all indices outside factor ``alpha``, of ``Q`` times the product of
    the remaining factors.
    """
    if not 0 <= alpha < len(factors):
        raise IndexError(f"factor position {alpha} out of range for {len(factors)} factors")
    _merged_sizes([Q, *factors])
    target = factors[alpha]
    operands = [(Q.names, Q.values)] + [
        (f.names, f.values) for k, f in enumerate(factors) if k != alpha
    ]
    values = contract(operands, target.names, target.sizes)
    return NamedTensor(target.indices, values)


def _same_layout(a: NamedTensor, b: NamedTensor):
    if a.names != b.names or a.shape != b.shape:
        raise ShapeError(f"index lists differ: {a.names}{a.shape} vs {b.names}{b.shape}")


def hadamard(a: NamedTensor, b: NamedTensor) -> NamedTensor:
    """Elementwise product of two tensors with identical index lists."""
    _same_layout(a, b)
    return NamedTensor(a.indices, a.values * b.values)


def safe_div(num: NamedTensor, den: NamedTensor) -> NamedTensor:
    """Elementwise quotient with ``0/0 -> 0``.

    A positive numerator over a zero denominator raises
    :class:`SingularModelError` naming the first such cell.
    """
    _same_layout(num, den)
    return NamedTensor(num.indices, divide_zero_safe(num.values, den.values))


def divide_zero_safe(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Array form of :func:`safe_div`."""
    zero = den == 0
    if zero.any():
        bad = zero & (num != 0)
        if bad.any():
            cell = tuple(int(i) for i in np.argwhere(bad)[0])
            raise SingularModelError(
                f"non-zero numerator over zero denominator at cell {cell}", cell=cell
            )
        out = np.zeros(np.broadcast_shapes(num.shape, den.shape))
        np.divide(num, den, out=out, where=~zero)
        return out
    return num / den


def index_lookup(indices: Iterable[IndexDef]) -> Mapping[str, IndexDef]:
    return {ix.name: ix for ix in indices}
