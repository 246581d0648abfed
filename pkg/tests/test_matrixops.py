import numpy as np
import pytest

from linattn.matrixops import (
    REFERENCE,
    WORKING,
    BlockLayout,
    DomainError,
    ShapeError,
    as_matrix,
    block_partition,
    causal_decay_mask,
    check_decay,
    decay_powers,
    diag_lambda,
    hadamard,
    matmul,
)


def test_matmul_identity():
    a = as_matrix([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, np.eye(2)), a)


def test_matmul_hand_case():
    got = matmul(as_matrix([[1.0, 2.0]]), as_matrix([[3.0], [4.0]]))
    assert got.shape == (1, 1)
    assert got[0, 0] == 11.0


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((6, 4)), rng.standard_normal((4, 5))
    slow = np.zeros((6, 5))
    for i in range(6):
        for j in range(5):
            for k in range(4):
                slow[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b), slow, rtol=1e-14, atol=0)


def test_matmul_associativity():
    rng = np.random.default_rng(1)
    a, b, c = rng.standard_normal((5, 7)), rng.standard_normal((7, 3)), rng.standard_normal((3, 6))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) / np.max(np.abs(left)) < 1e-12


def test_matmul_rejects_bad_shapes_and_dtypes():
    a = np.ones((2, 3))
    with pytest.raises(ShapeError):
        matmul(a, np.ones((2, 2)))
    with pytest.raises(ShapeError):
        matmul(a, np.ones((3, 2), dtype=WORKING))
    with pytest.raises(ShapeError):
        matmul(np.ones(3), np.ones((3, 1)))
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 2), dtype=np.int64), np.ones((2, 2)))


def test_matmul_rejects_nonfinite():
    bad = np.array([[np.nan, 1.0], [0.0, 1.0]])
    with pytest.raises(DomainError):
        matmul(bad, np.eye(2))
    # silent overflow is also caught, on the result side
    huge = np.full((1, 1), 1e308)
    with np.errstate(over="ignore"), pytest.raises(DomainError):
        matmul(huge, np.full((1, 1), 10.0))


def test_hadamard_cases():
    a = as_matrix([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(hadamard(a, np.ones((2, 2))), a)
    assert np.array_equal(hadamard(a, np.zeros((2, 2))), np.zeros((2, 2)))
    got = hadamard(a, as_matrix([[2.0, 0.0], [0.0, 2.0]]))
    assert np.array_equal(got, [[2.0, 0.0], [0.0, 8.0]])
    with pytest.raises(ShapeError):
        hadamard(a, np.ones((2, 3)))


def test_check_decay_domain():
    assert check_decay(1.0) == 1.0
    assert check_decay(1e-9) == 1e-9
    for bad in (0.0, -0.5, 1.0001, float("nan")):
        with pytest.raises(DomainError):
            check_decay(bad)


def test_decay_powers_values():
    assert np.array_equal(decay_powers(4, 0.5), [0.5, 0.25, 0.125, 0.0625])
    assert np.array_equal(decay_powers(3, 0.5, first=0), [1.0, 0.5, 0.25])
    assert decay_powers(0, 0.7).size == 0
    with pytest.raises(DomainError):
        decay_powers(-1, 0.5)


def test_lambda_power_ladder_identity():
    # the diagonal of lam^B * inv(Lambda) is lam^(B-i), the reversed 0-based ladder
    lam, B = 0.77, 9
    derived = lam**B / decay_powers(B, lam, first=1)
    direct = decay_powers(B, lam, first=0)[::-1]
    assert np.allclose(derived, direct, rtol=1e-13, atol=0)


def test_causal_decay_mask_hand_values():
    assert np.array_equal(causal_decay_mask(2, 1.0), [[1.0, 0.0], [1.0, 1.0]])
    assert np.array_equal(causal_decay_mask(2, 0.5), [[1.0, 0.0], [0.5, 1.0]])
    m3 = causal_decay_mask(3, 0.5)
    assert m3[2, 0] == 0.25
    assert np.array_equal(m3, [[1, 0, 0], [0.5, 1, 0], [0.25, 0.5, 1]])


def test_causal_decay_mask_strict_upper_is_zero():
    m = causal_decay_mask(17, 0.93)
    assert np.array_equal(np.triu(m, 1), np.zeros_like(m))
    assert m.dtype == REFERENCE
    assert causal_decay_mask(4, 0.5, precision=WORKING).dtype == WORKING


def test_diag_lambda():
    assert np.array_equal(diag_lambda(3, 1.0), np.eye(3))
    assert np.array_equal(diag_lambda(2, 0.5), [[0.5, 0.0], [0.0, 0.25]])


def test_block_layout_shapes():
    lay = BlockLayout.for_sequence(10, 4)
    assert (lay.T, lay.tail) == (3, 2)
    assert [lay.bounds(t) for t in range(3)] == [(0, 4), (4, 8), (8, 10)]
    assert BlockLayout.for_sequence(8, 4).tail == 4
    assert BlockLayout.for_sequence(3, 7) == BlockLayout(n=3, B=7, T=1, tail=3)
    with pytest.raises(DomainError):
        BlockLayout.for_sequence(0, 4)
    with pytest.raises(DomainError):
        BlockLayout.for_sequence(4, 0)


def test_block_partition_examples():
    x = np.arange(8.0).reshape(4, 2)
    blocks, lay = block_partition(x, 2)
    assert lay.T == 2 and all(b.shape == (2, 2) for b in blocks)
    blocks, lay = block_partition(np.ones((5, 3)), 2)
    assert [b.shape[0] for b in blocks] == [2, 2, 1]
    blocks, _ = block_partition(x, 4)
    assert np.array_equal(blocks[0], x)


def test_block_partition_roundtrip_and_copy_semantics():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((11, 3))
    for b in range(1, 15):
        blocks, _ = block_partition(x, b)
        assert np.array_equal(np.vstack(blocks), x), f"roundtrip failed at B={b}"
    pristine = x.copy()
    blocks, _ = block_partition(x, 4)
    blocks[0][:] = 0.0
    assert np.array_equal(x, pristine)  # mutating a block never touches X
