"""Dense-matrix substrate shared by every kernel and model in this package.

A "matrix" here is nothing more exotic than a 2-D, C-contiguous numpy array
in one of two precisions: float32 (working) or float64 (reference).  Ground
truth is always computed in reference precision; the tiled kernels may run
in either.  The helpers in this module exist to pin down the contracts the
rest of the package leans on -- explicit shape checks, finiteness checks,
and the decay-mask / block-partition constructions used by the kernels --
not to reinvent numpy.

Scalars named ``lam`` are the per-call exponential decay rate, restricted
to (0, 1].  Powers of lam are always produced by cumulative multiplication
so mask construction stays O(B^2) and bit-deterministic across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORKING = np.float32
REFERENCE = np.float64

_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operands have incompatible or malformed shapes."""


class DomainError(ValueError):
    """A scalar argument or result lies outside its legal domain."""


def as_matrix(data, precision=REFERENCE) -> np.ndarray:
    """Build a 2-D array in the given precision from nested sequences.

    Args:
        data: anything numpy can turn into a 2-D array (list of rows,
            another array, ...).
        precision: target dtype, WORKING or REFERENCE.

    Returns:
        A fresh C-contiguous 2-D array.

    Raises:
        ShapeError: if the input is not two-dimensional.
    """
    a = np.array(data, dtype=precision, order="C")
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def check_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate that `a` is a finite 2-D float matrix and return it."""
    if not isinstance(a, np.ndarray) or a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D ndarray")
    if a.dtype not in _ALLOWED:
        raise ShapeError(f"{name}: dtype must be float32 or float64, got {a.dtype}")
    ensure_finite(a, name)
    return a


def ensure_finite(a: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.isfinite(a).all():
        raise DomainError(f"{what}: contains NaN or Inf")
    return a


def check_decay(lam: float) -> float:
    """Reject decay rates outside (0, 1]."""
    lam = float(lam)
    if not (0.0 < lam <= 1.0):
        raise DomainError(f"decay rate must lie in (0, 1], got {lam}")
    return lam


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Checked matrix product C = A B.

    Both operands must share a precision and satisfy A.cols == B.rows.
    The result is verified finite, so silent overflow cannot propagate.
    """
    check_matrix(a, "A")
    check_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: mixed precisions {a.dtype} and {b.dtype}")
    return ensure_finite(a @ b, "matmul result")


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equal-shape matrices."""
    check_matrix(a, "A")
    check_matrix(b, "B")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    return ensure_finite(a * b, "hadamard result")


def decay_powers(count: int, lam: float, first: int = 1) -> np.ndarray:
    """[lam^first, lam^(first+1), ..., lam^(first+count-1)] in float64.

    Built by cumulative multiplication, never by per-entry pow, so a whole
    mask costs O(B^2) multiplies and successive powers are consistent with
    each other to the last bit.
    """
    lam = check_decay(lam)
    if count < 0:
        raise DomainError(f"power count must be >= 0, got {count}")
    if count == 0:
        return np.empty(0, dtype=REFERENCE)
    seed = lam**first if first else 1.0
    steps = np.full(count, lam, dtype=REFERENCE)
    steps[0] = seed
    return np.cumprod(steps)


def causal_decay_mask(b: int, lam: float, precision=REFERENCE) -> np.ndarray:
    """Lower-triangular decay mask M with M[t, s] = lam^(t-s) for t >= s.

    Rows index the query position, columns the key position (0-based here;
    only the difference t-s matters).  Entries above the diagonal are zero.
    With lam == 1 this is exactly the binary causal mask.

    Args:
        b: mask side length (block size), >= 1.
        lam: decay rate in (0, 1].
        precision: output dtype; powers are formed in float64 first.
    """
    if b < 1:
        raise DomainError(f"mask size must be >= 1, got {b}")
    lam = check_decay(lam)
    pw = decay_powers(b, lam, first=0)  # lam^0 .. lam^(b-1)
    delta = np.arange(b)[:, None] - np.arange(b)[None, :]
    mask = np.where(delta >= 0, pw[np.clip(delta, 0, None)], 0.0)
    return mask.astype(precision)


def diag_lambda(b: int, lam: float, precision=REFERENCE) -> np.ndarray:
    """Diagonal matrix diag(lam^1, lam^2, ..., lam^b)."""
    if b < 1:
        raise DomainError(f"diagonal size must be >= 1, got {b}")
    return np.diag(decay_powers(b, lam, first=1)).astype(precision)


@dataclass(frozen=True)
class BlockLayout:
    """How a length-n sequence splits into T row blocks of size B.

    The final block may be partial; `tail` is its row count, in [1, B].
    B larger than n is legal at this layer (a single block of n rows);
    clamping B to the sequence is the attention config's business.
    """

    n: int
    B: int
    T: int
    tail: int

    @classmethod
    def for_sequence(cls, n: int, b: int) -> "BlockLayout":
        if n < 1:
            raise DomainError(f"sequence length must be >= 1, got {n}")
        if b < 1:
            raise DomainError(f"block size must be >= 1, got {b}")
        t = -(-n // b)  # ceil
        return cls(n=n, B=b, T=t, tail=n - (t - 1) * b)

    def bounds(self, t: int) -> tuple[int, int]:
        """Row range [lo, hi) of block t, 0-based."""
        lo = t * self.B
        return lo, min(lo + self.B, self.n)


def block_partition(x: np.ndarray, b: int) -> tuple[list[np.ndarray], BlockLayout]:
    """Split X into row-contiguous blocks of at most b rows.

    Blocks are copies (mutating one never aliases X), and stacking them
    back together reproduces X bit-exactly.
    """
    check_matrix(x, "X")
    layout = BlockLayout.for_sequence(x.shape[0], b)
    blocks = [x[lo:hi].copy() for lo, hi in (layout.bounds(t) for t in range(layout.T))]
    return blocks, layout
