"""Tiled causal linear attention, forward and backward, with optional decay.

The quadratic left product and the sequential right product are two ends of
a spectrum; the kernels here take the middle road.  The sequence is cut
into T = ceil(n / B) row blocks.  Inside a block, attention is the plain
masked left product (B x B work, embarrassingly local).  Across blocks,
history is carried by a single d x d summary

    kv  <-  lam^b * kv + (scaled K_t)^T V_t

so each block adds one rank-d update and reads the summary once.  The split
is exact, not an approximation: outputs match the full left product to
rounding error for every block size, including ragged final blocks.

Two variants ship, as separate code paths on purpose so each can be tested
against the other:

  * lightning_forward / lightning_backward         plain causal (lam = 1)
  * lightning_forward_decay / lightning_backward_decay   decayed, lam in (0, 1]

Backward passes walk blocks twice: a forward sweep rebuilding kv for the
dQ terms, then a reverse sweep carrying the adjoint summary dkv for dK and
dV.  Ordering is load-bearing: the cross-block dK/dV contributions at block
t must use dkv accumulated strictly from blocks after t, so the dkv update
runs after those terms are emitted.  All dkv updates funnel through
_dkv_step, which doubles as a fault-injection seam for the verifier's
mutation test.

Per-block data is copied into small contiguous working buffers before any
arithmetic touches it -- the CPU analog of staging tiles in fast memory --
and the per-block decay factors (lam^b and the power ladders) are computed
in float64 and then cast, whatever the working precision.  lam^b can flush
to zero for strong decay and large blocks (0.5^64 ~ 5e-20 is subnormal in
float32); that is benign, the summary simply forgets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from .matrixops import (
    REFERENCE,
    WORKING,
    BlockLayout,
    DomainError,
    ShapeError,
    causal_decay_mask,
    check_decay,
    decay_powers,
    ensure_finite,
)
from .oracles import (
    GradBundle,
    left_product_backward,
    left_product_forward,
    reference_backward,
    right_product_forward,
)

KERNEL_KINDS = ("left", "right", "lightning", "lightning-decay")

_PRECISIONS = {"working": WORKING, "reference": REFERENCE}


@dataclass(frozen=True)
class AttentionConfig:
    """Shape, block size, decay, and precision for one attention call.

    B = None picks the default block min(d, n); any explicit B is clamped
    to [1, n].  precision selects the dtype the kernel computes in
    ("working" = float32, "reference" = float64); inputs are cast on entry.
    """

    n: int
    d: int
    B: int | None = None
    lam: float = 1.0
    precision: str = "reference"

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise DomainError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        check_decay(self.lam)
        if self.precision not in _PRECISIONS:
            raise DomainError(f"precision must be one of {sorted(_PRECISIONS)}")
        if self.B is not None and self.B < 1:
            raise DomainError(f"block size must be >= 1, got {self.B}")

    @property
    def block(self) -> int:
        """Effective block size: default min(d, n), clamped to [1, n]."""
        b = min(self.d, self.n) if self.B is None else self.B
        return max(1, min(b, self.n))

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    @classmethod
    def for_inputs(cls, q: np.ndarray, **kw) -> "AttentionConfig":
        return cls(n=q.shape[0], d=q.shape[1], **kw)


@dataclass
class KvState:
    """The d x d cross-block accumulators: kv (forward), dkv (adjoint)."""

    kv: np.ndarray
    dkv: np.ndarray

    @classmethod
    def zeros(cls, d: int, dtype=REFERENCE) -> "KvState":
        return cls(kv=np.zeros((d, d), dtype=dtype), dkv=np.zeros((d, d), dtype=dtype))

    @property
    def nbytes(self) -> int:
        return self.kv.nbytes + self.dkv.nbytes


def _dkv_step(dkv: np.ndarray, decay: float, q_rows: np.ndarray, do_rows: np.ndarray) -> np.ndarray:
    """One adjoint-summary update: decay * dkv + q_rows^T do_rows.

    Kept as a free function so the verifier can monkeypatch it to prove the
    verification suites catch a corrupted update.
    """
    return decay * dkv + q_rows.T @ do_rows


def _prep(arrays: list[np.ndarray], cfg: AttentionConfig | None, names: str = "QKV"):
    """Validate shapes, build/check the config, cast inputs to its dtype."""
    first = None
    for a, name in zip(arrays, names):
        if not isinstance(a, np.ndarray) or a.ndim != 2:
            raise ShapeError(f"{name}: expected a 2-D ndarray")
        if first is None:
            first = a.shape
        elif a.shape != first:
            raise ShapeError(f"{name}: shape {a.shape} != {first}")
    if cfg is None:
        cfg = AttentionConfig(n=first[0], d=first[1])
    elif (cfg.n, cfg.d) != first:
        raise ShapeError(f"config says {cfg.n}x{cfg.d}, inputs are {first[0]}x{first[1]}")
    cast = [np.ascontiguousarray(a, dtype=cfg.dtype) for a in arrays]
    for a, name in zip(cast, names):
        ensure_finite(a, name)
    return cast, cfg


def _require_lam_one(cfg: AttentionConfig, who: str) -> None:
    if cfg.lam != 1.0:
        raise DomainError(f"{who} is the undecayed kernel; lam must be 1, got {cfg.lam} (use the decay variant)")


def lightning_forward(q, k, v, cfg: AttentionConfig | None = None) -> np.ndarray:
    """Blockwise causal linear attention, no decay.

    Per block t: O_t = [(Q_t K_t^T) * M] V_t + Q_t kv, then kv += K_t^T V_t,
    where M is the binary lower-triangular mask at the block's actual size.
    Matches left_product_forward(lam=1) to rounding error.
    """
    (q, k, v), cfg = _prep([q, k, v], cfg)
    _require_lam_one(cfg, "lightning_forward")
    n, d, B = cfg.n, cfg.d, cfg.block
    dt = cfg.dtype
    layout = BlockLayout.for_sequence(n, B)
    mask = causal_decay_mask(B, 1.0, dt)
    qb, kb, vb = (np.empty((B, d), dtype=dt) for _ in range(3))
    state = KvState.zeros(d, dt)
    o = np.empty((n, d), dtype=dt)
    for t in range(layout.T):
        lo, hi = layout.bounds(t)
        b = hi - lo
        np.copyto(qb[:b], q[lo:hi])
        np.copyto(kb[:b], k[lo:hi])
        np.copyto(vb[:b], v[lo:hi])
        scores = (qb[:b] @ kb[:b].T) * mask[:b, :b]
        o[lo:hi] = scores @ vb[:b] + qb[:b] @ state.kv
        state.kv += kb[:b].T @ vb[:b]
    return o


def lightning_backward(q, k, v, do, cfg: AttentionConfig | None = None) -> GradBundle:
    """Gradients of lightning_forward.

    Sweep 1 (blocks in order) rebuilds kv and emits
        dQ_t = [(dO_t V_t^T) * M] K_t + dO_t kv^T .
    Sweep 2 (blocks in reverse) emits, using dkv from blocks strictly
    after t, then folds in block t's own contribution:
        dK_t = [(dO_t V_t^T) * M]^T Q_t + V_t dkv^T
        dV_t = [(Q_t K_t^T) * M]^T dO_t + K_t dkv
        dkv += Q_t^T dO_t      (after the two lines above)
    """
    (q, k, v, do), cfg = _prep([q, k, v, do], cfg, names=["Q", "K", "V", "dO"])
    _require_lam_one(cfg, "lightning_backward")
    n, d, B = cfg.n, cfg.d, cfg.block
    dt = cfg.dtype
    layout = BlockLayout.for_sequence(n, B)
    mask = causal_decay_mask(B, 1.0, dt)
    qb, kb, vb, dob = (np.empty((B, d), dtype=dt) for _ in range(4))
    state = KvState.zeros(d, dt)
    dq = np.empty((n, d), dtype=dt)
    dk = np.empty((n, d), dtype=dt)
    dv = np.empty((n, d), dtype=dt)

    for t in range(layout.T):
        lo, hi = layout.bounds(t)
        b = hi - lo
        np.copyto(kb[:b], k[lo:hi])
        np.copyto(vb[:b], v[lo:hi])
        np.copyto(dob[:b], do[lo:hi])
        ds = (dob[:b] @ vb[:b].T) * mask[:b, :b]
        dq[lo:hi] = ds @ kb[:b] + dob[:b] @ state.kv.T
        state.kv += kb[:b].T @ vb[:b]

    for t in range(layout.T - 1, -1, -1):
        lo, hi = layout.bounds(t)
        b = hi - lo
        np.copyto(qb[:b], q[lo:hi])
        np.copyto(kb[:b], k[lo:hi])
        np.copyto(vb[:b], v[lo:hi])
        np.copyto(dob[:b], do[lo:hi])
        m = mask[:b, :b]
        ds = (dob[:b] @ vb[:b].T) * m
        dk[lo:hi] = ds.T @ qb[:b] + vb[:b] @ state.dkv.T
        dv[lo:hi] = ((qb[:b] @ kb[:b].T) * m).T @ dob[:b] + kb[:b] @ state.dkv
        state.dkv = _dkv_step(state.dkv, 1.0, qb[:b], dob[:b])
    return GradBundle(dq=dq, dk=dk, dv=dv)


def _decay_factors(B: int, lam: float, dt):
    """Per-block decay machinery, built in float64 and cast once.

    Returns (mask, lam_out, lam_in) where, for a block of size b <= B,
      mask[:b, :b]      is the decayed causal mask,
      lam_out[:b]       = lam^1 .. lam^b        (scales Q rows going out),
      lam_in(b)         = lam^(b-1) .. lam^0    (scales K/V rows coming in),
    and lam^b itself is recomputed per actual block length.
    """
    mask = causal_decay_mask(B, lam, dt)
    pw0 = decay_powers(B, lam, first=0)  # lam^0 .. lam^(B-1), float64
    lam_out = decay_powers(B, lam, first=1).astype(dt)[:, None]

    def lam_in(b: int) -> np.ndarray:
        return pw0[:b][::-1].astype(dt)[:, None]

    return mask, lam_out, lam_in


def lightning_forward_decay(q, k, v, cfg: AttentionConfig | None = None) -> np.ndarray:
    """Blockwise causal linear attention with exponential decay.

    Scores decay as lam^(t-s).  Per block of size b (the final block may be
    shorter), with L = diag(lam^1..lam^b):

        O_t  = [(Q_t K_t^T) * M] V_t  +  L Q_t kv
        kv   = lam^b * kv + (lam^b L^-1 K_t)^T V_t

    i.e. outgoing queries see history damped by their depth into the block,
    and incoming keys are pre-damped by their distance to the block's end.
    Matches left_product_forward at the same lam.
    """
    (q, k, v), cfg = _prep([q, k, v], cfg)
    n, d, B, lam = cfg.n, cfg.d, cfg.block, cfg.lam
    dt = cfg.dtype
    layout = BlockLayout.for_sequence(n, B)
    mask, lam_out, lam_in = _decay_factors(B, lam, dt)
    qb, kb, vb = (np.empty((B, d), dtype=dt) for _ in range(3))
    state = KvState.zeros(d, dt)
    o = np.empty((n, d), dtype=dt)
    for t in range(layout.T):
        lo, hi = layout.bounds(t)
        b = hi - lo
        np.copyto(qb[:b], q[lo:hi])
        np.copyto(kb[:b], k[lo:hi])
        np.copyto(vb[:b], v[lo:hi])
        lam_b = dt(lam**b)
        scores = (qb[:b] @ kb[:b].T) * mask[:b, :b]
        o[lo:hi] = scores @ vb[:b] + (lam_out[:b] * qb[:b]) @ state.kv
        state.kv = lam_b * state.kv + (lam_in(b) * kb[:b]).T @ vb[:b]
    return ensure_finite(o, "lightning decay output")


def lightning_backward_decay(q, k, v, do, cfg: AttentionConfig | None = None) -> GradBundle:
    """Gradients of lightning_forward_decay.

    Mirrors the undecayed backward with the decay scalings of the forward:
    sweep 1 rebuilds kv and emits dQ_t = [(dO_t V_t^T) * M] K_t
    + L dO_t kv^T; sweep 2 carries dkv = lam^b * dkv + (L Q_t)^T dO_t
    (updated only after block t's dK/dV inter terms are emitted) with

        dK_t = [(dO_t V_t^T) * M]^T Q_t + (lam^b L^-1 V_t) dkv^T
        dV_t = [(Q_t K_t^T) * M]^T dO_t + (lam^b L^-1 K_t) dkv .
    """
    (q, k, v, do), cfg = _prep([q, k, v, do], cfg, names=["Q", "K", "V", "dO"])
    n, d, B, lam = cfg.n, cfg.d, cfg.block, cfg.lam
    dt = cfg.dtype
    layout = BlockLayout.for_sequence(n, B)
    mask, lam_out, lam_in = _decay_factors(B, lam, dt)
    qb, kb, vb, dob = (np.empty((B, d), dtype=dt) for _ in range(4))
    state = KvState.zeros(d, dt)
    dq = np.empty((n, d), dtype=dt)
    dk = np.empty((n, d), dtype=dt)
    dv = np.empty((n, d), dtype=dt)

    for t in range(layout.T):
        lo, hi = layout.bounds(t)
        b = hi - lo
        np.copyto(kb[:b], k[lo:hi])
        np.copyto(vb[:b], v[lo:hi])
        np.copyto(dob[:b], do[lo:hi])
        lam_b = dt(lam**b)
        ds = (dob[:b] @ vb[:b].T) * mask[:b, :b]
        dq[lo:hi] = ds @ kb[:b] + (lam_out[:b] * dob[:b]) @ state.kv.T
        state.kv = lam_b * state.kv + (lam_in(b) * kb[:b]).T @ vb[:b]

    for t in range(layout.T - 1, -1, -1):
        lo, hi = layout.bounds(t)
        b = hi - lo
        np.copyto(qb[:b], q[lo:hi])
        np.copyto(kb[:b], k[lo:hi])
        np.copyto(vb[:b], v[lo:hi])
        np.copyto(dob[:b], do[lo:hi])
        lam_b = dt(lam**b)
        m = mask[:b, :b]
        damp_in = lam_in(b)
        ds = (dob[:b] @ vb[:b].T) * m
        dk[lo:hi] = ds.T @ qb[:b] + (damp_in * vb[:b]) @ state.dkv.T
        dv[lo:hi] = ((qb[:b] @ kb[:b].T) * m).T @ dob[:b] + (damp_in * kb[:b]) @ state.dkv
        state.dkv = _dkv_step(state.dkv, lam_b, lam_out[:b] * qb[:b], dob[:b])
    return GradBundle(dq=dq, dk=dk, dv=dv)


# ---------------------------------------------------------------------------
# Timing and auxiliary-memory accounting
# ---------------------------------------------------------------------------


def aux_state_bytes(kind: str, n: int, d: int, block: int, itemsize: int, backward: bool = False) -> int:
    """Auxiliary bytes a kernel allocates beyond its inputs and outputs.

    An analytic inventory, not an allocator trace:

      left            score matrix + mask, both n x n
      right           kv summary + one outer-product temp, both d x d
      lightning       3 (4 backward) staging buffers B x d, score and mask
                      B x B, summaries d x d (kv; plus dkv when backward),
                      ~2 B x d arithmetic temps
      lightning-decay same, plus three length-B power ladders

    The headline property is structural: the lightning kinds' totals do not
    mention n, while the left product's grow as n^2.
    """
    if kind not in KERNEL_KINDS:
        raise DomainError(f"unknown kernel kind {kind!r}, expected one of {KERNEL_KINDS}")
    if kind == "left":
        return (2 * n * n) * itemsize
    if kind == "right":
        return (2 * d * d) * itemsize
    buffers = (4 if backward else 3) * block * d
    temps = 2 * block * d
    masks = 2 * block * block
    summaries = (2 if backward else 1) * d * d
    ladders = 3 * block if kind == "lightning-decay" else 0
    return (buffers + temps + masks + summaries + ladders) * itemsize


@dataclass(frozen=True)
class TimingRecord:
    """One timed kernel invocation, ready for CSV serialization."""

    kernel: str
    n: int
    d: int
    B: int
    lam: float
    pass_name: str  # "fwd" or "bwd"
    median_ns: int
    per_token_ns: float
    aux_bytes: int

    CSV_HEADER = "kernel,n,d,B,lambda,pass,median_ns,per_token_ns,aux_bytes"

    def csv_row(self) -> str:
        return (
            f"{self.kernel},{self.n},{self.d},{self.B},{self.lam:g},{self.pass_name},"
            f"{self.median_ns},{self.per_token_ns:.3f},{self.aux_bytes}"
        )


def _forward_runner(kind: str, cfg: AttentionConfig):
    if kind == "left":
        return lambda q, k, v: left_product_forward(q, k, v, cfg.lam)
    if kind == "right":
        return lambda q, k, v: right_product_forward(q, k, v, cfg.lam)
    if kind == "lightning":
        return lambda q, k, v: lightning_forward(q, k, v, cfg)
    if kind == "lightning-decay":
        return lambda q, k, v: lightning_forward_decay(q, k, v, cfg)
    raise DomainError(f"unknown kernel kind {kind!r}, expected one of {KERNEL_KINDS}")


def _backward_runner(kind: str, cfg: AttentionConfig):
    if kind == "left":
        return lambda q, k, v, do: left_product_backward(q, k, v, do, cfg.lam)
    if kind == "right":
        return lambda q, k, v, do: reference_backward(q, k, v, do, cfg.lam)
    if kind == "lightning":
        return lambda q, k, v, do: lightning_backward(q, k, v, do, cfg)
    if kind == "lightning-decay":
        return lambda q, k, v, do: lightning_backward_decay(q, k, v, do, cfg)
    raise DomainError(f"unknown kernel kind {kind!r}, expected one of {KERNEL_KINDS}")


def bench_kernel(
    kind: str,
    cfg: AttentionConfig,
    repeats: int,
    backward: bool = False,
    seed: int = 0,
) -> TimingRecord:
    """Time one kernel kind on seeded random inputs.

    One untimed warm-up call, then `repeats` timed calls; the record holds
    the median wall-clock nanoseconds, the per-token figure, and the
    analytic auxiliary-byte count.  The lightning kinds honor
    cfg.precision; the left/right kinds are the float64 oracles and ignore
    it.  The vanilla kinds require cfg.lam == 1.

    Args:
        kind: one of "left", "right", "lightning", "lightning-decay".
        cfg: shapes, block size, decay, precision.
        repeats: timed invocations, >= 3.
        backward: time the gradient pass instead of the forward pass.
        seed: RNG seed for the inputs.
    """
    if repeats < 3:
        raise DomainError(f"repeats must be >= 3, got {repeats}")
    rng = np.random.default_rng(seed)
    dt = cfg.dtype if kind.startswith("lightning") else REFERENCE
    q, k, v = (rng.standard_normal((cfg.n, cfg.d)).astype(dt) for _ in range(3))
    if kind == "lightning":
        _require_lam_one(cfg, "bench of the undecayed kernel")
    if backward:
        do = rng.standard_normal((cfg.n, cfg.d)).astype(dt)
        run = _backward_runner(kind, cfg)
        call = lambda: run(q, k, v, do)  # noqa: E731
    else:
        fwd = _forward_runner(kind, cfg)
        call = lambda: fwd(q, k, v)  # noqa: E731
    call()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        call()
        times.append(time.perf_counter_ns() - t0)
    med = int(median(times))
    return TimingRecord(
        kernel=kind,
        n=cfg.n,
        d=cfg.d,
        B=cfg.block,
        lam=cfg.lam,
        pass_name="bwd" if backward else "fwd",
        median_ns=med,
        per_token_ns=med / cfg.n,
        aux_bytes=aux_state_bytes(kind, cfg.n, cfg.d, cfg.block, np.dtype(dt).itemsize, backward),
    )
