"""Single-process simulation of feature-sharded SGLU and GLA layers.

P simulated workers each hold column slices of the up projections (Wv/Wu,
plus Wq/Wk for attention) and the matching row slice of the down projection
Wo.  A worker computes its partial output end to end; the only
communication is one explicit all-reduce (an elementwise sum over workers,
performed in worker-index order and counted, so tests can assert "exactly
one collective per layer pass").

For SGLU the algebra is immediate: columns of the elementwise product pair
up with rows of Wo, so the sum of partials is the unsharded output.

GLA adds two wrinkles.  First, sharding must respect head boundaries
(attention mixes features only within a head), so heads are dealt out
H/P per worker and each worker applies its own heads' decay rates and
rotations.  Second, the row normalization of the attention output needs
full-row statistics that no single worker has.  Because the norm is a
scalar per row and everything downstream of it is linear in the normed
rows, each worker can send its unnormalized gated partial along with its
slice's squared row norms, and the scale sqrt(d_model)/max(norm, eps) can
be applied after the same single all-reduce:

    [diag(c) A * U] Wo = diag(c) [(A * U) Wo]    for any row scales c.

The normalization therefore acts on gathered full-row statistics, never
per shard (a shard-local norm gives a genuinely different result; the test
suite checks that too).  Only the parameter-free norm flavor is supported
here, since a gain/bias norm would need its parameters sharded as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import lightning_forward_decay
from .matrixops import REFERENCE, DomainError, ShapeError
from .model import ACTIVATIONS, SRMS_EPS, GlaWeights, ModelConfig, SgluWeights, _head_attention_cfg
from .positional import DecaySchedule, apply_lrpe, layer_pe_policy

_reduce_calls = 0


def all_reduce(partials) -> np.ndarray:
    """Elementwise sum of per-worker arrays, in worker order; instrumented."""
    global _reduce_calls
    _reduce_calls += 1
    if not partials:
        raise ShapeError("all_reduce needs at least one partial")
    shape = partials[0].shape
    out = np.zeros(shape, dtype=REFERENCE)
    for i, p in enumerate(partials):
        if p.shape != shape:
            raise ShapeError(f"worker {i} partial has shape {p.shape}, expected {shape}")
        out += p
    return out


def reduce_count() -> int:
    """Total all_reduce invocations since import (monotone counter)."""
    return _reduce_calls


@dataclass(frozen=True)
class ShardSet:
    """Per-worker weight slices for one layer.

    wv/wu (and wq/wk for attention) are column slices; wo is the matching
    row slice.  Concatenating any of them in worker order reproduces the
    original weight bit-exactly.
    """

    P: int
    wv: tuple
    wu: tuple
    wo: tuple
    wq: tuple | None = None
    wk: tuple | None = None
    heads_per_worker: int | None = None

    @property
    def is_attention(self) -> bool:
        return self.wq is not None


def _col_slices(w: np.ndarray, P: int) -> tuple:
    cols = w.shape[1] // P
    return tuple(w[:, p * cols : (p + 1) * cols].copy() for p in range(P))


def _row_slices(w: np.ndarray, P: int) -> tuple:
    rows = w.shape[0] // P
    return tuple(w[p * rows : (p + 1) * rows, :].copy() for p in range(P))


def shard_weights(w, P: int) -> ShardSet:
    """Slice a layer's weights for P workers.

    SgluWeights split along d_ff; GlaWeights along d_model with head
    alignment.  The split dimension must divide evenly, otherwise the
    configuration is rejected.
    """
    if P < 1:
        raise DomainError(f"worker count must be >= 1, got {P}")
    if isinstance(w, SgluWeights):
        if w.wv.shape[1] % P:
            raise DomainError(f"d_ff={w.wv.shape[1]} not divisible by P={P}")
        return ShardSet(P=P, wv=_col_slices(w.wv, P), wu=_col_slices(w.wu, P), wo=_row_slices(w.wo, P))
    if isinstance(w, GlaWeights):
        if w.heads % P:
            raise DomainError(f"heads={w.heads} not divisible by P={P}")
        return ShardSet(
            P=P,
            wv=_col_slices(w.wv, P),
            wu=_col_slices(w.wu, P),
            wo=_row_slices(w.wo, P),
            wq=_col_slices(w.wq, P),
            wk=_col_slices(w.wk, P),
            heads_per_worker=w.heads // P,
        )
    raise DomainError(f"cannot shard weights of type {type(w).__name__}")


def sglu_parallel_forward(x, shards: ShardSet) -> np.ndarray:
    """Feature-sharded SGLU: each worker computes [(X Wv_p) * (X Wu_p)] Wo_p.

    One all-reduce sums the partials; equals the unsharded layer up to
    float64 rounding.
    """
    if shards.is_attention:
        raise DomainError("these shards carry attention projections; use gla_parallel_forward")
    x = np.asarray(x, dtype=REFERENCE)
    partials = [((x @ shards.wv[p]) * (x @ shards.wu[p])) @ shards.wo[p] for p in range(shards.P)]
    return all_reduce(partials)


def gla_parallel_forward(x, shards: ShardSet, schedule: DecaySchedule, lrpe, layer: int, cfg: ModelConfig) -> np.ndarray:
    """Head-sharded gated linear attention with a single collective.

    Each worker p runs its own heads (global indices p*hpw .. p*hpw+hpw-1,
    with their decay rates and the layer's rotation policy), gates with its
    U slice, and multiplies its Wo row block -- all unnormalized.  The one
    all-reduce carries [partial | squared row norms of the worker's
    attention slice]; the parameter-free row scale is applied afterwards
    from the gathered statistics.
    """
    if not shards.is_attention:
        raise DomainError("these shards carry no attention projections; use sglu_parallel_forward")
    if cfg.norm != "srmsnorm":
        raise DomainError("sharded attention supports only the parameter-free norm")
    x = np.asarray(x, dtype=REFERENCE)
    n, dm = x.shape[0], x.shape[1]
    act, _ = ACTIVATIONS[cfg.gla_act]
    rotate = layer_pe_policy(layer, cfg.layers, cfg.pe_mode) == "lrpe_d"
    dh = cfg.head_dim
    hpw = shards.heads_per_worker
    augmented = []
    for p in range(shards.P):
        q = act(x @ shards.wq[p])
        k = act(x @ shards.wk[p])
        v = x @ shards.wv[p]
        a = np.empty_like(v)
        for j in range(hpw):
            sl = slice(j * dh, (j + 1) * dh)
            qh, kh = q[:, sl], k[:, sl]
            if rotate:
                qh, kh = apply_lrpe(qh, lrpe), apply_lrpe(kh, lrpe)
            lam = schedule.rate(p * hpw + j + 1, layer)
            a[:, sl] = lightning_forward_decay(qh, kh, v[:, sl], _head_attention_cfg(cfg, n, lam))
        gated = a * (x @ shards.wu[p]) if cfg.gate else a
        part = np.empty((n, dm + 1), dtype=REFERENCE)
        part[:, :dm] = gated @ shards.wo[p]
        part[:, dm] = (a * a).sum(axis=1)
        augmented.append(part)
    red = all_reduce(augmented)
    scale = np.sqrt(dm) / np.maximum(np.sqrt(red[:, dm]), SRMS_EPS)
    return red[:, :dm] * scale[:, None]
