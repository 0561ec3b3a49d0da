import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_delta, naive_full_product
from pltf.errors import ShapeError, SingularModelError
from pltf.tensor import (
    CooTable,
    IndexDef,
    NamedTensor,
    contract,
    delta,
    full_product,
    hadamard,
    safe_div,
)


def nt(spec, values):
    return NamedTensor(tuple(IndexDef(n, c) for n, c in spec), values)


def cp_factors(rng, dims, rank):
    return [nt([(n, d), ("r", rank)], rng.random((d, rank))) for n, d in zip("ijk", dims)]


def tucker_factors(rng, dims, core):
    mats = [nt([(n, d), (c, s)], rng.random((d, s))) for n, d, c, s in zip("ijk", dims, "pqr", core)]
    return mats + [nt(list(zip("pqr", core)), rng.random(core))]


class TestTypes:
    def test_index_cardinality_must_be_positive(self):
        with pytest.raises(ShapeError):
            IndexDef("i", 0)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ShapeError):
            nt([("i", 2), ("i", 2)], np.zeros(4))

    def test_flat_values_reshaped_row_major(self):
        t = nt([("i", 2), ("j", 3)], np.arange(6))
        assert t.shape == (2, 3)
        assert t.values[1, 0] == 3

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            nt([("i", 2)], np.zeros(3))

    def test_nonneg_flag_enforced(self):
        with pytest.raises(ValueError):
            NamedTensor((IndexDef("i", 2),), [1.0, -1.0], nonneg=True)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            nt([("i", 2)], [1.0, np.inf])

    def test_values_read_only(self):
        t = nt([("i", 2)], [1.0, 2.0])
        with pytest.raises(ValueError):
            t.values[0] = 5.0

    def test_coo_roundtrip_and_invariants(self):
        t = nt([("i", 2), ("j", 2)], [[0, 1.5], [2, 0]])
        table = CooTable.from_dense(t)
        assert table.entries == [((0, 1), 1.5), ((1, 0), 2.0)]
        np.testing.assert_array_equal(table.to_dense().values, t.values)
        with pytest.raises(ShapeError):
            CooTable(t.indices, [((0, 2), 1.0)])
        with pytest.raises(ShapeError):
            CooTable(t.indices, [((0, 1), 1.0), ((0, 1), 2.0)])


class TestFullProduct:
    def test_rank_one_ones(self):
        f = [NamedTensor.full([IndexDef(n, d), IndexDef("r", 1)], 1.0) for n, d in zip("ijk", (2, 3, 4))]
        out = full_product(f, [IndexDef("i", 2), IndexDef("j", 3), IndexDef("k", 4)])
        np.testing.assert_array_equal(out.values, np.ones((2, 3, 4)))

    def test_shared_index_sum(self):
        z1 = nt([("i", 1), ("r", 2)], [[1, 2]])
        z2 = nt([("j", 1), ("r", 2)], [[3, 4]])
        out = full_product([z1, z2], [IndexDef("i", 1), IndexDef("j", 1)])
        assert out.values[0, 0] == 11.0

    def test_tucker_all_ones(self):
        f = tucker_factors(np.random.default_rng(0), (2, 2, 2), (2, 2, 2))
        f = [NamedTensor.full(t.indices, 1.0) for t in f]
        out = full_product(f, [IndexDef(n, 2) for n in "ijk"])
        np.testing.assert_array_equal(out.values, np.full((2, 2, 2), 8.0))

    def test_single_factor_identity(self, rng):
        z = nt([("i", 3), ("j", 4)], rng.random((3, 4)))
        np.testing.assert_array_equal(full_product([z], z.indices).values, z.values)

    def test_output_order_follows_request(self, rng):
        f = cp_factors(rng, (2, 3, 4), 2)
        a = full_product(f, [IndexDef("i", 2), IndexDef("j", 3), IndexDef("k", 4)]).values
        b = full_product(f, [IndexDef("k", 4), IndexDef("i", 2), IndexDef("j", 3)]).values
        np.testing.assert_allclose(b, a.transpose(2, 0, 1), rtol=1e-14)

    def test_nonneg_inputs_give_nonneg_output(self, rng):
        out = full_product(cp_factors(rng, (2, 2, 2), 2), [IndexDef(n, 2) for n in "ijk"])
        assert out.nonneg and np.all(out.values >= 0)

    def test_cardinality_mismatch(self):
        z1 = nt([("i", 2), ("r", 2)], np.ones(4))
        z2 = nt([("j", 2), ("r", 3)], np.ones(6))
        with pytest.raises(ShapeError):
            full_product([z1, z2], [IndexDef("i", 2), IndexDef("j", 2)])

    def test_output_index_absent(self):
        z1 = nt([("i", 2), ("r", 2)], np.ones(4))
        with pytest.raises(ShapeError):
            full_product([z1], [IndexDef("i", 2), IndexDef("q", 2)])

    @pytest.mark.parametrize("seed", range(5))
    def test_cp_matches_loops(self, seed):
        rng = np.random.default_rng(seed)
        f = cp_factors(rng, (3, 4, 2), 3)
        out = full_product(f, [IndexDef(n, d) for n, d in zip("ijk", (3, 4, 2))])
        ref = naive_full_product([t.values for t in f], [t.names for t in f], "ijk",
                                 {"i": 3, "j": 4, "k": 2, "r": 3})
        np.testing.assert_allclose(out.values, ref, rtol=1e-12, atol=1e-12)


class TestDelta:
    def test_all_ones_cp(self):
        f = [NamedTensor.full([IndexDef(n, d), IndexDef("r", 2)], 1.0) for n, d in zip("ijk", (2, 3, 4))]
        Q = NamedTensor.full([IndexDef(n, d) for n, d in zip("ijk", (2, 3, 4))], 1.0)
        d0 = delta(0, Q, f)
        assert d0.shape == (2, 2)
        np.testing.assert_array_equal(d0.values, np.full((2, 2), 12.0))

    def test_zero_q(self, rng):
        f = cp_factors(rng, (2, 3, 4), 2)
        Q = NamedTensor.full([IndexDef(n, d) for n, d in zip("ijk", (2, 3, 4))], 0.0)
        for alpha in range(3):
            assert not delta(alpha, Q, f).values.any()

    def test_random_cp_against_loops(self, rng):
        f = cp_factors(rng, (3, 3, 3), 2)
        Q = nt([(n, 3) for n in "ijk"], rng.random((3, 3, 3)))
        ref = naive_delta(1, Q.values, "ijk", [t.values for t in f], [t.names for t in f],
                          {"i": 3, "j": 3, "k": 3, "r": 2})
        np.testing.assert_allclose(delta(1, Q, f).values, ref, rtol=1e-10, atol=1e-12)

    def test_shape_mismatch(self, rng):
        f = cp_factors(rng, (3, 3, 3), 2)
        Q = nt([("i", 3), ("j", 3), ("k", 4)], np.ones(36))
        with pytest.raises(ShapeError):
            delta(0, Q, f)

    def test_index_private_to_factor_is_broadcast(self):
        # Z1(i,s) with s used nowhere else: the contraction is constant along s.
        z1 = nt([("i", 2), ("s", 3)], np.ones(6))
        z2 = nt([("i", 2)], [2.0, 5.0])
        Q = nt([("i", 2)], [1.0, 1.0])
        np.testing.assert_array_equal(delta(0, Q, [z1, z2]).values, [[2, 2, 2], [5, 5, 5]])


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10**6),
    tucker=st.booleans(),
    dims=st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
    core=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
)
def test_delta_full_product_duality(seed, tucker, dims, core):
    rng = np.random.default_rng(seed)
    f = tucker_factors(rng, dims, core) if tucker else cp_factors(rng, dims, core[0])
    obs = [IndexDef(n, d) for n, d in zip("ijk", dims)]
    Q = NamedTensor(tuple(obs), rng.random(dims))
    xhat = full_product(f, obs)
    rhs = float(np.sum(Q.values * xhat.values))
    for alpha in range(len(f)):
        lhs = float(np.sum(f[alpha].values * delta(alpha, Q, f).values))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


class TestElementwise:
    def test_hadamard_identity(self, rng):
        t = nt([("i", 2), ("j", 3)], rng.random(6))
        ones = NamedTensor.full(t.indices, 1.0)
        np.testing.assert_array_equal(hadamard(ones, t).values, t.values)

    def test_safe_div_zero_over_zero(self):
        z = nt([("i", 3)], [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(safe_div(z, z).values, [0, 0, 0])

    def test_safe_div_arithmetic(self):
        out = safe_div(nt([("i", 2)], [2, 6]), nt([("i", 2)], [4, 3]))
        np.testing.assert_array_equal(out.values, [0.5, 2.0])

    def test_safe_div_positive_over_zero(self):
        with pytest.raises(SingularModelError) as info:
            safe_div(nt([("i", 2)], [1, 1]), nt([("i", 2)], [1, 0]))
        assert info.value.cell == (1,)

    def test_layout_mismatch(self):
        with pytest.raises(ShapeError):
            hadamard(nt([("i", 2)], [1, 1]), nt([("j", 2)], [1, 1]))


def test_contract_is_bit_reproducible(rng):
    ops = [(("i", "r"), rng.random((5, 3))), (("j", "r"), rng.random((6, 3))), (("k", "r"), rng.random((4, 3)))]
    a = contract(ops, "ijk")
    b = contract(ops, "ijk")
    assert np.array_equal(a, b)
