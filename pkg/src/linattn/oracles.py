"""Ground-truth attention oracles, all in float64.

Causal linear attention with an optional exponential decay lam admits two
algebraically identical formulations:

  * left product  -- materialize the full n x n masked score matrix
    [(Q K^T) * M] with M[t, s] = lam^(t-s) for t >= s, then multiply by V.
    Quadratic in n, but transparently correct: every (t, s) pair is summed
    explicitly.

  * right product -- walk the sequence once, carrying the d x d summary
    kv_t = lam * kv_(t-1) + k_t v_t^T and emitting o_t = q_t kv_t.
    Linear in n, inherently sequential.

Everything downstream (the tiled kernels, the model, the parallel sim) is
tested against these two routes and against finite differences.  To keep
ground truth unambiguous the oracles coerce their inputs to float64 and
never run in single precision.

The error metric used across the whole package lives here too:
per-entry |a - b| / max(|a|, |b|, 1e-8), reduced by max.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrixops import (
    REFERENCE,
    ShapeError,
    causal_decay_mask,
    check_decay,
    ensure_finite,
)

REL_FLOOR = 1e-8


@dataclass
class GradBundle:
    """Gradients of a scalar loss with respect to attention inputs."""

    dq: np.ndarray
    dk: np.ndarray
    dv: np.ndarray

    def __iter__(self):
        return iter((self.dq, self.dk, self.dv))


def max_rel_error(a, b) -> float:
    """max over entries of |a-b| / max(|a|, |b|, 1e-8).

    The floor keeps exact zeros comparable; it does not rescue entries that
    are merely small, so callers are expected to feed well-conditioned data.
    """
    a = np.asarray(a, dtype=REFERENCE)
    b = np.asarray(b, dtype=REFERENCE)
    if a.shape != b.shape:
        raise ShapeError(f"comparison shapes differ: {a.shape} vs {b.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def max_scaled_error(a, b) -> float:
    """max|a-b| divided by the overall scale max(max|a|, max|b|, 1e-8).

    Used for sign-mixed random data where individual entries may cancel to
    zero and the per-entry relative metric would measure conditioning, not
    correctness.
    """
    a = np.asarray(a, dtype=REFERENCE)
    b = np.asarray(b, dtype=REFERENCE)
    if a.shape != b.shape:
        raise ShapeError(f"comparison shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), REL_FLOOR)
    return float(np.max(np.abs(a - b))) / scale


def _coerce(*arrays: np.ndarray) -> list[np.ndarray]:
    """Upcast oracle inputs to float64 and insist on matching n x d shapes."""
    out = []
    shape = None
    for a in arrays:
        a = np.asarray(a, dtype=REFERENCE)
        if a.ndim != 2:
            raise ShapeError(f"expected 2-D input, got ndim={a.ndim}")
        if shape is None:
            shape = a.shape
        elif a.shape != shape:
            raise ShapeError(f"input shapes differ: {shape} vs {a.shape}")
        out.append(a)
    return out


def left_product_forward(q, k, v, lam: float = 1.0) -> np.ndarray:
    """O = [(Q K^T) * M] V with the full n x n decay mask.

    Args:
        q, k, v: n x d matrices (coerced to float64).
        lam: decay rate in (0, 1]; lam = 1 is the plain causal mask.

    Returns:
        n x d output, float64.
    """
    q, k, v = _coerce(q, k, v)
    lam = check_decay(lam)
    n = q.shape[0]
    s = q @ k.T
    s *= causal_decay_mask(n, lam)
    return ensure_finite(s @ v, "left product output")


def right_product_forward(q, k, v, lam: float = 1.0) -> np.ndarray:
    """Same map as left_product_forward via the kv recurrence.

    kv_0 = 0;  kv_t = lam * kv_(t-1) + k_t v_t^T;  o_t = q_t kv_t.
    """
    q, k, v = _coerce(q, k, v)
    lam = check_decay(lam)
    n, d = q.shape
    o = np.empty_like(q)
    kv = np.zeros((d, d), dtype=REFERENCE)
    for t in range(n):
        kv = lam * kv + np.outer(k[t], v[t])
        o[t] = q[t] @ kv
    return ensure_finite(o, "right product output")


def reference_backward(q, k, v, do, lam: float = 1.0) -> GradBundle:
    """Closed-form gradients of the decayed causal attention map.

    Two sequential sweeps:

      forward   kv_t  = lam * kv_(t-1) + k_t v_t^T      dq_t = do_t kv_t^T
      backward  dkv_t = lam * dkv_(t+1) + q_t do_t^T    dk_t = v_t dkv_t^T
                                                        dv_t = k_t dkv_t

    dkv_t sums lam^(s-t) q_s do_s^T over s >= t, so the reverse sweep adds
    the own-position term before emitting dk_t and dv_t.
    """
    q, k, v, do = _coerce(q, k, v, do)
    lam = check_decay(lam)
    n, d = q.shape
    dq = np.empty_like(q)
    dk = np.empty_like(q)
    dv = np.empty_like(q)
    kv = np.zeros((d, d), dtype=REFERENCE)
    for t in range(n):
        kv = lam * kv + np.outer(k[t], v[t])
        dq[t] = do[t] @ kv.T
    dkv = np.zeros((d, d), dtype=REFERENCE)
    for t in range(n - 1, -1, -1):
        dkv = lam * dkv + np.outer(q[t], do[t])
        dk[t] = v[t] @ dkv.T
        dv[t] = k[t] @ dkv
    return GradBundle(dq=dq, dk=dk, dv=dv)


def left_product_backward(q, k, v, do, lam: float = 1.0) -> GradBundle:
    """Quadratic-route gradients through the materialized score matrix.

    With S = (Q K^T) * M:  dV = S^T dO,  dS = (dO V^T) * M,  dQ = dS K,
    dK = dS^T Q.  Independent of reference_backward's recurrences, which
    makes the two a cross-check on each other.
    """
    q, k, v, do = _coerce(q, k, v, do)
    lam = check_decay(lam)
    n = q.shape[0]
    m = causal_decay_mask(n, lam)
    s = (q @ k.T) * m
    ds = (do @ v.T) * m
    return GradBundle(dq=ds @ k, dk=ds.T @ q, dv=s.T @ do)


def finite_difference_grads(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one entry at a time.

    Args:
        f: scalar-valued function of a single array.
        x: evaluation point; a float64 working copy is perturbed in place
            and handed to f, so the caller's array is never touched.
        h: step size, > 0.

    Returns:
        Array of f's partial derivatives, same shape as x.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be > 0, got {h}")
    x = np.array(x, dtype=REFERENCE)
    g = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return g
