"""Positional machinery: decay schedules and pairwise feature rotations.

Two ingredients give the attention kernels their sense of position:

  * a per-head, per-layer decay rate lam[h][l] = exp(-(8h/H) * (1 - l/L)),
    frozen (never trained).  Heads fade the past at different speeds, and
    later layers fade it less; the last layer's last head keeps everything
    (lam = 1).

  * a relative rotation: feature pairs (x_2j, x_2j+1) of each query/key row
    at position t are rotated by angle theta_j * t, so inner products
    between rotated rows depend only on the position difference t - s.
    theta is a learnable length-d/2 vector shared by every site that
    rotates.

Composed, a query/key pair scores as
    sum_j [ (q.k)_j cos(theta_j (t-s)) + (q x k)_j sin(theta_j (t-s)) ] * lam^(t-s)
where (q.k)_j and (q x k)_j are the dot and cross products of the j-th
feature pair.  rotation_score_attention builds that sum pair by pair and is
the oracle the fast path (rotate rows, then run the decay kernel) is tested
against.

The default policy rotates only the first layer and leaves deeper layers
decay-only; config switches select all-rotation or no-rotation instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matrixops import REFERENCE, DomainError, ShapeError, causal_decay_mask

PE_MODES = ("mix", "lrpe_d", "decay_only")


def decay_rate(h: int, l: int, H: int, L: int, temperature: bool = True) -> float:
    """Decay rate of head h in layer l (both 1-indexed).

    lam = exp(-(8h/H) * (1 - l/L)); with temperature=False the layer factor
    (1 - l/L) is dropped and every layer uses exp(-8h/H).
    """
    if not (1 <= h <= H):
        raise DomainError(f"head index {h} outside 1..{H}")
    if not (1 <= l <= L):
        raise DomainError(f"layer index {l} outside 1..{L}")
    scale = (1.0 - l / L) if temperature else 1.0
    return math.exp(-(8.0 * h / H) * scale)


@dataclass(frozen=True)
class DecaySchedule:
    """Frozen table of decay rates, one per (head, layer)."""

    H: int
    L: int
    temperature: bool = True
    table: np.ndarray = field(default=None, repr=False)  # (H, L), float64

    @classmethod
    def build(cls, H: int, L: int, temperature: bool = True) -> "DecaySchedule":
        if H < 1 or L < 1:
            raise DomainError(f"need H >= 1 and L >= 1, got H={H}, L={L}")
        t = np.empty((H, L), dtype=REFERENCE)
        for h in range(1, H + 1):
            for l in range(1, L + 1):
                t[h - 1, l - 1] = decay_rate(h, l, H, L, temperature)
        t.setflags(write=False)
        return cls(H=H, L=L, temperature=temperature, table=t)

    def rate(self, h: int, l: int) -> float:
        """lam for head h of layer l, 1-indexed."""
        if not (1 <= h <= self.H and 1 <= l <= self.L):
            raise DomainError(f"(h={h}, l={l}) outside 1..{self.H} x 1..{self.L}")
        return float(self.table[h - 1, l - 1])

    def to_csv(self) -> str:
        lines = ["h,l,lambda"]
        for h in range(1, self.H + 1):
            for l in range(1, self.L + 1):
                lines.append(f"{h},{l},{self.rate(h, l)!r}")
        return "\n".join(lines) + "\n"


@dataclass
class LrpeParams:
    """Learnable rotation angles, one per feature pair."""

    theta: np.ndarray  # (d/2,)
    learnable: bool = True

    @classmethod
    def default_init(cls, d: int, base: float = 10000.0, learnable: bool = True) -> "LrpeParams":
        """Geometrically spaced angles theta_j = base^(-2j/d), j = 0..d/2-1."""
        if d < 2 or d % 2:
            raise ShapeError(f"rotation needs an even feature dim >= 2, got {d}")
        j = np.arange(d // 2, dtype=REFERENCE)
        return cls(theta=base ** (-2.0 * j / d), learnable=learnable)


def _theta_of(theta) -> np.ndarray:
    t = theta.theta if isinstance(theta, LrpeParams) else theta
    return np.asarray(t, dtype=REFERENCE)


def _angles(n: int, theta: np.ndarray, offset: int) -> np.ndarray:
    if offset < 0:
        raise DomainError(f"position offset must be >= 0, got {offset}")
    pos = np.arange(offset, offset + n, dtype=REFERENCE)
    return pos[:, None] * theta[None, :]


def _split_pairs(x: np.ndarray, theta: np.ndarray):
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D input, got ndim={x.ndim}")
    n, d = x.shape
    if d % 2:
        raise ShapeError(f"rotation needs an even feature dim, got d={d}")
    if theta.shape != (d // 2,):
        raise ShapeError(f"theta has shape {theta.shape}, expected ({d // 2},)")
    return x[:, 0::2], x[:, 1::2]


def apply_lrpe(x: np.ndarray, theta, offset: int = 0) -> np.ndarray:
    """Rotate each feature pair of row t by angle theta_j * (t + offset).

    Args:
        x: n x d matrix, d even.
        theta: LrpeParams or a raw (d/2,) angle array.
        offset: absolute position of row 0; lets recurrent decoding resume
            mid-sequence.

    Returns:
        The rotated matrix, same shape and dtype as x.  Per-pair norms are
        preserved exactly (up to rounding), so |out| == |x| rowwise.
    """
    th = _theta_of(theta)
    x1, x2 = _split_pairs(x, th)
    ang = _angles(x.shape[0], th, offset)
    c, s = np.cos(ang), np.sin(ang)
    out = np.empty_like(x)
    out[:, 0::2] = x1 * c - x2 * s
    out[:, 1::2] = x1 * s + x2 * c
    return out


def apply_lrpe_backward(dy: np.ndarray, x: np.ndarray, theta, offset: int = 0):
    """Gradients of apply_lrpe with respect to x and theta.

    dx is the reverse rotation of dy.  For theta, d(rotation)/d(angle)
    maps (y1, y2) to (-y2, y1), so each position contributes
    (t + offset) * (dy2 * y1 - dy1 * y2) to its pair's angle gradient.

    Returns:
        (dx, dtheta) with dx shaped like x and dtheta shaped like theta.
    """
    th = _theta_of(theta)
    x1, x2 = _split_pairs(x, th)
    dy1, dy2 = _split_pairs(dy, th)
    if dy.shape != x.shape:
        raise ShapeError(f"dy shape {dy.shape} != x shape {x.shape}")
    ang = _angles(x.shape[0], th, offset)
    c, s = np.cos(ang), np.sin(ang)
    dx = np.empty_like(x)
    dx[:, 0::2] = dy1 * c + dy2 * s
    dx[:, 1::2] = -dy1 * s + dy2 * c
    y1 = x1 * c - x2 * s
    y2 = x1 * s + x2 * c
    pos = np.arange(offset, offset + x.shape[0], dtype=REFERENCE)
    dtheta = ((dy2 * y1 - dy1 * y2) * pos[:, None]).sum(axis=0)
    return dx, dtheta


def layer_pe_policy(l: int, L: int, mode: str = "mix") -> str:
    """Which positional treatment layer l gets: "lrpe_d" or "decay_only".

    mode "mix" rotates only the first layer; "lrpe_d" rotates every layer;
    "decay_only" rotates none.  Decay applies in all modes.
    """
    if mode not in PE_MODES:
        raise DomainError(f"unknown positional mode {mode!r}, expected one of {PE_MODES}")
    if not (1 <= l <= L):
        raise DomainError(f"layer index {l} outside 1..{L}")
    if mode == "lrpe_d":
        return "lrpe_d"
    if mode == "decay_only":
        return "decay_only"
    return "lrpe_d" if l == 1 else "decay_only"


def rotation_score_attention(q, k, v, theta, lam: float = 1.0) -> np.ndarray:
    """Brute-force oracle for rotated-and-decayed attention.

    Builds the n x n score matrix pair by pair --

        score[t, s] = lam^(t-s) * sum_j ( dot_j cos(theta_j (t-s))
                                        + cross_j sin(theta_j (t-s)) )

    for t >= s, with dot_j / cross_j the dot and cross products of feature
    pair j of q_t and k_s -- then multiplies by V.  Quadratic and slow on
    purpose; this is what the rotate-then-kernel fast path must reproduce.
    """
    th = _theta_of(theta)
    q = np.asarray(q, dtype=REFERENCE)
    k = np.asarray(k, dtype=REFERENCE)
    v = np.asarray(v, dtype=REFERENCE)
    q1, q2 = _split_pairs(q, th)
    k1, k2 = _split_pairs(k, th)
    n = q.shape[0]
    decay = causal_decay_mask(n, lam)
    scores = np.zeros((n, n), dtype=REFERENCE)
    for t in range(n):
        for s in range(t + 1):
            ang = th * (t - s)
            dot = q1[t] * k1[s] + q2[t] * k2[s]
            cross = q1[t] * k2[s] - q2[t] * k1[s]
            scores[t, s] = decay[t, s] * float(dot @ np.cos(ang) + cross @ np.sin(ang))
    return scores @ v
