import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from girko_lab.blocks import E1, E2, EMINUS, F, FSTAR, IDENTITY, BlockConstant, s_op

entries = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)
blocks_st = st.builds(BlockConstant, entries, entries, entries, entries)


@given(blocks_st, blocks_st)
def test_algebra_matches_2x2_matrices(A, B):
    assert np.allclose((A @ B).matrix, A.matrix @ B.matrix)
    assert np.allclose((A + B).matrix, A.matrix + B.matrix)
    assert np.allclose(A.H.matrix, A.matrix.conj().T)
    assert BlockConstant.from_matrix(A.matrix) == A


@given(blocks_st, blocks_st, st.integers(1, 4))
def test_embedding_is_an_algebra_map(A, B, n):
    assert np.allclose(A.embed(n) @ B.embed(n), (A @ B).embed(n))
    assert np.isclose(np.trace(A.embed(n)) / (2 * n), A.trace())


def test_named_blocks():
    assert (E1 + E2).allclose(IDENTITY)
    assert (E1 - E2).allclose(EMINUS)
    assert (F @ FSTAR).allclose(E1)
    assert s_op(BlockConstant(1, 2, 3, 4)) == BlockConstant(4, 0, 0, 1)


def test_norm_is_operator_norm():
    A = BlockConstant(3, 0, 0, -4j)
    assert np.isclose(A.norm(), 4.0)
