"""A miniature gated-linear-attention language model with handwritten gradients.

Architecture (pre-norm residual throughout, float64 end to end):

    x   = embed(tokens)                                  (n, d_model)
    for each of L blocks:
        x = x + GLA(norm(x))        token mixing
        x = x + SGLU(norm(x))       channel mixing
    logits = norm(x) @ head

GLA projects to Q, K, V, U, applies an optional activation to Q and K,
splits heads, rotates Q/K feature pairs on layers the positional policy
selects, runs the decayed block kernel per head with that head's decay
rate, normalizes the concatenated head outputs, gates them with U, and
projects back.  SGLU is the activation-free gated channel mixer
[(X Wv) * (X Wu)] Wo.

Every forward op here has a matching hand-derived backward; gradients flow
into one flat {parameter name: array} dict whose keys mirror
TnlModel.named_parameters().  That same naming carries the checkpoint
format (raw tensor bytes plus a JSON manifest) and the Adam state.

Generation never re-reads the prefix: DecodeState carries one d x d
summary per (layer, head) and a position counter, and generate_step
advances them with the same recurrence the kernels implement blockwise,
so stepwise logits match the parallel forward to rounding error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import AttentionConfig, lightning_backward_decay, lightning_forward_decay
from .matrixops import REFERENCE, DomainError, ShapeError
from .positional import (
    PE_MODES,
    DecaySchedule,
    LrpeParams,
    apply_lrpe,
    apply_lrpe_backward,
    layer_pe_policy,
)

SRMS_EPS = 1e-8
NORM_KINDS = ("srmsnorm", "rmsnorm", "layernorm")
GLA_ACTS = ("swish", "one_plus_elu", "none")
GLU_ACTS = ("none", "swish")


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def sigmoid(x):
    # tanh form stays finite for any input, unlike 1/(1+exp(-x)).
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=REFERENCE)))


def swish(x):
    """x * sigmoid(x), elementwise."""
    x = np.asarray(x, dtype=REFERENCE)
    return x * sigmoid(x)


def swish_grad(x):
    s = sigmoid(x)
    return s * (1.0 + np.asarray(x, dtype=REFERENCE) * (1.0 - s))


def one_plus_elu(x):
    """1 + elu(x): x + 1 for x > 0, exp(x) otherwise. Always positive."""
    x = np.asarray(x, dtype=REFERENCE)
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def one_plus_elu_grad(x):
    x = np.asarray(x, dtype=REFERENCE)
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _identity(x):
    return np.asarray(x, dtype=REFERENCE)


def _ones_like(x):
    return np.ones_like(np.asarray(x, dtype=REFERENCE))


ACTIVATIONS = {
    "swish": (swish, swish_grad),
    "one_plus_elu": (one_plus_elu, one_plus_elu_grad),
    "none": (_identity, _ones_like),
}


# ---------------------------------------------------------------------------
# Norms (rowwise over the last axis; 1-D inputs treated as a single row)
# ---------------------------------------------------------------------------


def srmsnorm(x, eps: float = SRMS_EPS):
    """Scale each row to l2 norm sqrt(d): y = x * sqrt(d) / max(|x|, eps).

    Parameter-free.  Rows with |x| >= eps come out with norm exactly
    sqrt(d); smaller rows are scaled linearly (no division blow-up).
    """
    x = np.asarray(x, dtype=REFERENCE)
    d = x.shape[-1]
    r = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), eps)
    return x * (np.sqrt(d) / r)


def srmsnorm_backward(dy, x, eps: float = SRMS_EPS):
    x = np.asarray(x, dtype=REFERENCE)
    dy = np.asarray(dy, dtype=REFERENCE)
    d = x.shape[-1]
    rd = np.sqrt(d)
    raw = np.linalg.norm(x, axis=-1, keepdims=True)
    r = np.maximum(raw, eps)
    dx = dy * (rd / r)
    # the r-dependence only exists where the max() picked |x|
    live = raw >= eps
    proj = (x * dy).sum(axis=-1, keepdims=True) / (r * r)
    return np.where(live, dx - x * proj * (rd / r), dx)


def _norm_forward(x, kind: str, gain, bias, eps: float = SRMS_EPS):
    """Dispatch over the three norm flavors; returns (y, cache)."""
    x = np.asarray(x, dtype=REFERENCE)
    if kind == "srmsnorm":
        return srmsnorm(x, eps), ("srmsnorm", x, eps)
    if kind == "rmsnorm":
        r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
        xhat = x / r
        return xhat * gain, ("rmsnorm", x, r, xhat, gain)
    if kind == "layernorm":
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        r = np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + eps)
        xhat = xc / r
        return xhat * gain + bias, ("layernorm", r, xhat, gain)
    raise DomainError(f"unknown norm kind {kind!r}, expected one of {NORM_KINDS}")


def _norm_backward(dy, cache):
    """Returns (dx, dgain, dbias); the parameter grads are None where absent."""
    kind = cache[0]
    dy = np.asarray(dy, dtype=REFERENCE)
    if kind == "srmsnorm":
        _, x, eps = cache
        return srmsnorm_backward(dy, x, eps), None, None
    if kind == "rmsnorm":
        _, x, r, xhat, gain = cache
        d = x.shape[-1]
        dxhat = dy * gain
        dgain = (dy * xhat).reshape(-1, d).sum(axis=0)
        dx = dxhat / r - x * ((dxhat * x).sum(axis=-1, keepdims=True) / (d * r**3))
        return dx, dgain, None
    if kind == "layernorm":
        _, r, xhat, gain = cache
        d = xhat.shape[-1]
        dxhat = dy * gain
        dgain = (dy * xhat).reshape(-1, d).sum(axis=0)
        dbias = dy.reshape(-1, d).sum(axis=0)
        mean1 = dxhat.mean(axis=-1, keepdims=True)
        mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - mean1 - xhat * mean2) / r
        return dx, dgain, dbias
    raise DomainError(f"corrupt norm cache kind {kind!r}")


@dataclass
class NormParams:
    """Learnable pieces of one norm site; both fields absent for srmsnorm."""

    gain: np.ndarray | None = None
    bias: np.ndarray | None = None

    @classmethod
    def for_kind(cls, kind: str, d: int) -> "NormParams":
        if kind == "srmsnorm":
            return cls()
        if kind == "rmsnorm":
            return cls(gain=np.ones(d, dtype=REFERENCE))
        if kind == "layernorm":
            return cls(gain=np.ones(d, dtype=REFERENCE), bias=np.zeros(d, dtype=REFERENCE))
        raise DomainError(f"unknown norm kind {kind!r}, expected one of {NORM_KINDS}")

    def named(self, prefix: str):
        if self.gain is not None:
            yield f"{prefix}.gain", self.gain
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


# ---------------------------------------------------------------------------
# Configuration and weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    layers: int
    heads: int
    d_ff: int
    vocab: int = 256
    pe_mode: str = "mix"  # which layers rotate Q/K: mix | lrpe_d | decay_only
    gate: bool = True  # multiplicative U gate in GLA
    gla_act: str = "swish"  # activation on Q and K projections
    glu_act: str = "none"  # activation on SGLU's Wv branch
    norm: str = "srmsnorm"
    decay_temperature: bool = True  # layer-dependent decay (drop for ablation)
    block: int | None = None  # attention block size; None = min(head_dim, n)
    theta_base: float = 10000.0

    def __post_init__(self):
        if self.d_model < 1 or self.layers < 1 or self.heads < 1 or self.d_ff < 1:
            raise DomainError("d_model, layers, heads, d_ff must all be >= 1")
        if self.d_model % self.heads:
            raise ShapeError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if not 1 <= self.vocab <= 2**31:
            raise DomainError(f"bad vocab size {self.vocab}")
        if self.pe_mode not in PE_MODES:
            raise DomainError(f"pe_mode must be one of {PE_MODES}")
        if self.gla_act not in GLA_ACTS:
            raise DomainError(f"gla_act must be one of {GLA_ACTS}")
        if self.glu_act not in GLU_ACTS:
            raise DomainError(f"glu_act must be one of {GLU_ACTS}")
        if self.norm not in NORM_KINDS:
            raise DomainError(f"norm must be one of {NORM_KINDS}")
        if self.pe_mode != "decay_only" and self.head_dim % 2:
            raise ShapeError(f"rotation needs an even head dim, got {self.head_dim}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


@dataclass
class GlaWeights:
    """Token-mixer weights: four input projections, a norm, an output projection."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wu: np.ndarray
    wo: np.ndarray
    norm: NormParams
    heads: int

    def named(self, prefix: str):
        for nm in ("wq", "wk", "wv", "wu", "wo"):
            yield f"{prefix}.{nm}", getattr(self, nm)
        yield from self.norm.named(f"{prefix}.norm")


@dataclass
class SgluWeights:
    """Channel-mixer weights: two up projections and one down projection."""

    wv: np.ndarray
    wu: np.ndarray
    wo: np.ndarray

    def named(self, prefix: str):
        for nm in ("wv", "wu", "wo"):
            yield f"{prefix}.{nm}", getattr(self, nm)


@dataclass
class BlockWeights:
    norm1: NormParams
    gla: GlaWeights
    norm2: NormParams
    sglu: SgluWeights

    def named(self, prefix: str):
        yield from self.norm1.named(f"{prefix}.norm1")
        yield from self.gla.named(f"{prefix}.gla")
        yield from self.norm2.named(f"{prefix}.norm2")
        yield from self.sglu.named(f"{prefix}.sglu")


@dataclass
class TnlModel:
    cfg: ModelConfig
    embedding: np.ndarray  # (vocab, d_model)
    blocks: list[BlockWeights]
    final_norm: NormParams
    head: np.ndarray  # (d_model, vocab)
    schedule: DecaySchedule
    lrpe: LrpeParams | None  # None when no layer ever rotates

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "TnlModel":
        """Fresh model; every weight ~ N(0, (0.02/sqrt(L))^2)."""
        rng = np.random.default_rng(seed)
        scale = 0.02 / np.sqrt(cfg.layers)
        w = lambda *shape: rng.normal(0.0, scale, shape).astype(REFERENCE)  # noqa: E731
        dm, ff = cfg.d_model, cfg.d_ff
        blocks = [
            BlockWeights(
                norm1=NormParams.for_kind(cfg.norm, dm),
                gla=GlaWeights(
                    wq=w(dm, dm), wk=w(dm, dm), wv=w(dm, dm), wu=w(dm, dm), wo=w(dm, dm),
                    norm=NormParams.for_kind(cfg.norm, dm), heads=cfg.heads,
                ),
                norm2=NormParams.for_kind(cfg.norm, dm),
                sglu=SgluWeights(wv=w(dm, ff), wu=w(dm, ff), wo=w(ff, dm)),
            )
            for _ in range(cfg.layers)
        ]
        lrpe = None
        if cfg.pe_mode != "decay_only":
            lrpe = LrpeParams.default_init(cfg.head_dim, base=cfg.theta_base)
        return cls(
            cfg=cfg,
            embedding=w(cfg.vocab, dm),
            blocks=blocks,
            final_norm=NormParams.for_kind(cfg.norm, dm),
            head=w(dm, cfg.vocab),
            schedule=DecaySchedule.build(cfg.heads, cfg.layers, cfg.decay_temperature),
            lrpe=lrpe,
        )

    def named_parameters(self):
        """Deterministically ordered (name, array) pairs; arrays are live."""
        yield "embedding", self.embedding
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"blocks.{i}")
        yield from self.final_norm.named("final_norm")
        yield "head", self.head
        if self.lrpe is not None and self.lrpe.learnable:
            yield "lrpe.theta", self.lrpe.theta

    def parameter(self, name: str) -> np.ndarray:
        for nm, arr in self.named_parameters():
            if nm == name:
                return arr
        raise KeyError(name)

    @property
    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.named_parameters())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {nm: np.zeros_like(a) for nm, a in self.named_parameters()}


# ---------------------------------------------------------------------------
# GLA and SGLU
# ---------------------------------------------------------------------------


def _head_attention_cfg(cfg: ModelConfig, n: int, lam: float) -> AttentionConfig:
    return AttentionConfig(n=n, d=cfg.head_dim, B=cfg.block, lam=lam, precision="reference")


def gla_forward(x, w: GlaWeights, schedule: DecaySchedule, lrpe, layer: int, cfg: ModelConfig):
    """Gated linear attention over one layer's input rows.

    Args:
        x: (n, d_model) input (already pre-normed by the caller).
        w: this layer's GlaWeights.
        schedule: per-(head, layer) decay table.
        lrpe: LrpeParams, or None if nothing rotates.
        layer: 1-indexed layer number (selects decay rates and rotation).
        cfg: model config (activations, gate, head split, block size).

    Returns:
        (y, cache): y is (n, d_model); cache feeds gla_backward.
    """
    x = np.asarray(x, dtype=REFERENCE)
    n = x.shape[0]
    act, _ = ACTIVATIONS[cfg.gla_act]
    qp, kp = x @ w.wq, x @ w.wk
    q, k = act(qp), act(kp)
    v = x @ w.wv
    u = x @ w.wu if cfg.gate else None
    rotate = layer_pe_policy(layer, cfg.layers, cfg.pe_mode) == "lrpe_d"
    if rotate and lrpe is None:
        raise DomainError("layer policy requests rotation but the model has no angles")

    dh = cfg.head_dim
    a = np.empty_like(x)
    heads = []
    for h in range(cfg.heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        if rotate:
            qh, kh = apply_lrpe(qh, lrpe), apply_lrpe(kh, lrpe)
        lam = schedule.rate(h + 1, layer)
        acfg = _head_attention_cfg(cfg, n, lam)
        a[:, sl] = lightning_forward_decay(qh, kh, vh, acfg)
        heads.append((qh, kh, vh, acfg))
    an, ncache = _norm_forward(a, cfg.norm, w.norm.gain, w.norm.bias)
    gated = an * u if cfg.gate else an
    y = gated @ w.wo
    cache = (x, qp, kp, q, k, v, u, rotate, heads, ncache, an, gated)
    return y, cache


def gla_backward(dy, w: GlaWeights, lrpe, cfg: ModelConfig, cache, grads: dict, prefix: str):
    """Backward of gla_forward; accumulates into grads, returns dx."""
    x, qp, kp, q, k, v, u, rotate, heads, ncache, an, gated = cache
    dy = np.asarray(dy, dtype=REFERENCE)
    _, dact = ACTIVATIONS[cfg.gla_act]

    grads[f"{prefix}.wo"] += gated.T @ dy
    dgated = dy @ w.wo.T
    if cfg.gate:
        dan = dgated * u
        du = dgated * an
    else:
        dan, du = dgated, None
    da, dgain, dbias = _norm_backward(dan, ncache)
    if dgain is not None:
        grads[f"{prefix}.norm.gain"] += dgain
    if dbias is not None:
        grads[f"{prefix}.norm.bias"] += dbias

    dh = cfg.head_dim
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    for h in range(cfg.heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh, kh, vh, acfg = heads[h]
        g = lightning_backward_decay(qh, kh, vh, da[:, sl], acfg)
        dqh, dkh = g.dq, g.dk
        if rotate:
            dqh, dth_q = apply_lrpe_backward(dqh, q[:, sl], lrpe)
            dkh, dth_k = apply_lrpe_backward(dkh, k[:, sl], lrpe)
            if lrpe.learnable:
                grads["lrpe.theta"] += dth_q + dth_k
        dq[:, sl], dk[:, sl], dv[:, sl] = dqh, dkh, g.dv

    dqp = dq * dact(qp)
    dkp = dk * dact(kp)
    grads[f"{prefix}.wq"] += x.T @ dqp
    grads[f"{prefix}.wk"] += x.T @ dkp
    grads[f"{prefix}.wv"] += x.T @ dv
    dx = dqp @ w.wq.T + dkp @ w.wk.T + dv @ w.wv.T
    if cfg.gate:
        grads[f"{prefix}.wu"] += x.T @ du
        dx += du @ w.wu.T
    return dx


def sglu_forward(x, w: SgluWeights, cfg: ModelConfig | None = None):
    """Channel mixer y = [phi(X Wv) * (X Wu)] Wo; phi is identity by default.

    Returns (y, cache).
    """
    x = np.asarray(x, dtype=REFERENCE)
    act, _ = ACTIVATIONS[cfg.glu_act if cfg else "none"]
    vp = x @ w.wv
    va = act(vp)
    u = x @ w.wu
    inner = va * u
    return inner @ w.wo, (x, vp, va, u, inner)


def sglu_backward(dy, w: SgluWeights, cfg: ModelConfig | None, cache, grads: dict, prefix: str):
    x, vp, va, u, inner = cache
    dy = np.asarray(dy, dtype=REFERENCE)
    _, dact = ACTIVATIONS[cfg.glu_act if cfg else "none"]
    grads[f"{prefix}.wo"] += inner.T @ dy
    dinner = dy @ w.wo.T
    dva = dinner * u
    du = dinner * va
    dvp = dva * dact(vp)
    grads[f"{prefix}.wv"] += x.T @ dvp
    grads[f"{prefix}.wu"] += x.T @ du
    return dvp @ w.wv.T + du @ w.wu.T


def tnl_block_forward(x, blk: BlockWeights, schedule, lrpe, layer: int, cfg: ModelConfig):
    """One pre-norm residual block: x + GLA(norm(x)), then + SGLU(norm(.)).

    Returns (z, cache).
    """
    n1, c1 = _norm_forward(x, cfg.norm, blk.norm1.gain, blk.norm1.bias)
    g, cg = gla_forward(n1, blk.gla, schedule, lrpe, layer, cfg)
    y = x + g
    n2, c2 = _norm_forward(y, cfg.norm, blk.norm2.gain, blk.norm2.bias)
    s, cs = sglu_forward(n2, blk.sglu, cfg)
    return y + s, (c1, cg, c2, cs)


def tnl_block_backward(dz, blk: BlockWeights, lrpe, cfg: ModelConfig, cache, grads: dict, prefix: str):
    c1, cg, c2, cs = cache
    dn2 = sglu_backward(dz, blk.sglu, cfg, cs, grads, f"{prefix}.sglu")
    dy_norm, dgain2, dbias2 = _norm_backward(dn2, c2)
    if dgain2 is not None:
        grads[f"{prefix}.norm2.gain"] += dgain2
    if dbias2 is not None:
        grads[f"{prefix}.norm2.bias"] += dbias2
    dy = dz + dy_norm
    dn1 = gla_backward(dy, blk.gla, lrpe, cfg, cg, grads, f"{prefix}.gla")
    dx_norm, dgain1, dbias1 = _norm_backward(dn1, c1)
    if dgain1 is not None:
        grads[f"{prefix}.norm1.gain"] += dgain1
    if dbias1 is not None:
        grads[f"{prefix}.norm1.bias"] += dbias1
    return dy + dx_norm


# ---------------------------------------------------------------------------
# Full model: forward, loss, training
# ---------------------------------------------------------------------------


def _check_tokens(tokens, vocab: int) -> np.ndarray:
    t = np.asarray(tokens)
    if t.ndim != 1 or t.size < 1:
        raise ShapeError("tokens must be a nonempty 1-D id sequence")
    if not np.issubdtype(t.dtype, np.integer):
        raise DomainError("token ids must be integers")
    if t.min() < 0 or t.max() >= vocab:
        raise DomainError(f"token id outside [0, {vocab})")
    return t.astype(np.int64)


def _forward_cached(tokens: np.ndarray, model: TnlModel):
    x = model.embedding[tokens]
    caches = []
    for i, blk in enumerate(model.blocks):
        x, c = tnl_block_forward(x, blk, model.schedule, model.lrpe, i + 1, model.cfg)
        caches.append((x, c))  # x here is the block's OUTPUT; cache holds inputs
    xf, cf = _norm_forward(x, model.cfg.norm, model.final_norm.gain, model.final_norm.bias)
    logits = xf @ model.head
    return logits, (tokens, caches, xf, cf)


def model_forward(tokens, model: TnlModel) -> np.ndarray:
    """Logits for every position of a token id sequence; shape (n, vocab)."""
    tokens = _check_tokens(tokens, model.cfg.vocab)
    logits, _ = _forward_cached(tokens, model)
    return logits


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=REFERENCE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray, denom: int):
    """Summed next-token loss / denom, and the matching dlogits."""
    p = softmax_rows(logits)
    rows = np.arange(targets.size)
    picked = np.maximum(p[rows, targets], 1e-300)
    loss = float(-np.log(picked).sum() / denom)
    dlogits = p
    dlogits[rows, targets] -= 1.0
    return loss, dlogits / denom


def sequence_loss_and_grads(tokens, model: TnlModel, grads: dict, denom: int | None = None) -> float:
    """Mean next-token cross-entropy of one sequence; grads accumulate in place.

    tokens[:-1] are the inputs, tokens[1:] the targets.  denom overrides the
    averaging count so batches can average across sequences.
    """
    tokens = _check_tokens(tokens, model.cfg.vocab)
    if tokens.size < 2:
        raise ShapeError("need at least 2 tokens for a next-token loss")
    inp, tgt = tokens[:-1], tokens[1:]
    denom = denom if denom is not None else tgt.size
    logits, (_, caches, xf, cf) = _forward_cached(inp, model)
    loss, dlogits = cross_entropy(logits, tgt, denom)

    grads["head"] += xf.T @ dlogits
    dxf = dlogits @ model.head.T
    dx, dgain, dbias = _norm_backward(dxf, cf)
    if dgain is not None:
        grads["final_norm.gain"] += dgain
    if dbias is not None:
        grads["final_norm.bias"] += dbias
    for i in range(len(model.blocks) - 1, -1, -1):
        _, c = caches[i]
        dx = tnl_block_backward(dx, model.blocks[i], model.lrpe, model.cfg, c, grads, f"blocks.{i}")
    np.add.at(grads["embedding"], inp, dx)
    return loss


@dataclass
class Adam:
    """Adam with bias correction; state keyed by parameter name."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, model: TnlModel, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, param in model.named_parameters():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(param))
            v = self.v.setdefault(name, np.zeros_like(param))
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            param -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(batch, model: TnlModel, lr: float, optimizer: Adam | None = None) -> float:
    """One update on a batch of token rows; returns mean loss in nats.

    batch: (num_sequences, length) int array; each row contributes
    length - 1 next-token predictions.  With no optimizer the update is
    plain SGD at lr; passing an Adam instance uses (and advances) it.
    """
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] < 2:
        raise ShapeError("batch must be (sequences, length >= 2)")
    grads = model.zero_grads()
    denom = batch.shape[0] * (batch.shape[1] - 1)
    loss = 0.0
    for row in batch:
        loss += sequence_loss_and_grads(row, model, grads, denom)
    if optimizer is not None:
        optimizer.step(model, grads)
    else:
        for name, param in model.named_parameters():
            param -= lr * grads[name]
    return loss


# ---------------------------------------------------------------------------
# Recurrent decoding
# ---------------------------------------------------------------------------


@dataclass
class DecodeState:
    """Everything generation carries: (L, H, dh, dh) summaries + a position."""

    kv: np.ndarray
    position: int = 0

    @classmethod
    def fresh(cls, model: TnlModel) -> "DecodeState":
        cfg = model.cfg
        return cls(kv=np.zeros((cfg.layers, cfg.heads, cfg.head_dim, cfg.head_dim), dtype=REFERENCE))

    @property
    def nbytes(self) -> int:
        return self.kv.nbytes

    def clone(self) -> "DecodeState":
        return DecodeState(kv=self.kv.copy(), position=self.position)


def decode_step(state: DecodeState, token: int, model: TnlModel):
    """Advance one token; returns (next-token logits row, state).

    Reads nothing but the d x d per-(layer, head) summaries, so cost and
    state size are independent of how much has been generated.  The state
    is updated in place and also returned.
    """
    cfg = model.cfg
    tok = _check_tokens(np.array([token]), cfg.vocab)
    act, _ = ACTIVATIONS[cfg.gla_act]
    pos = state.position
    x = model.embedding[tok]  # (1, d_model)
    dh = cfg.head_dim
    for li, blk in enumerate(model.blocks):
        layer = li + 1
        h1, _ = _norm_forward(x, cfg.norm, blk.norm1.gain, blk.norm1.bias)
        q, k = act(h1 @ blk.gla.wq), act(h1 @ blk.gla.wk)
        v = h1 @ blk.gla.wv
        u = h1 @ blk.gla.wu if cfg.gate else None
        rotate = layer_pe_policy(layer, cfg.layers, cfg.pe_mode) == "lrpe_d"
        a = np.empty_like(h1)
        for h in range(cfg.heads):
            sl = slice(h * dh, (h + 1) * dh)
            qh, kh = q[:, sl], k[:, sl]
            if rotate:
                qh, kh = apply_lrpe(qh, model.lrpe, offset=pos), apply_lrpe(kh, model.lrpe, offset=pos)
            lam = model.schedule.rate(h + 1, layer)
            kv = state.kv[li, h]
            kv *= lam
            kv += np.outer(kh[0], v[0, sl])
            a[0, sl] = qh[0] @ kv
        an, _ = _norm_forward(a, cfg.norm, blk.gla.norm.gain, blk.gla.norm.bias)
        gated = an * u if cfg.gate else an
        x = x + gated @ blk.gla.wo
        n2, _ = _norm_forward(x, cfg.norm, blk.norm2.gain, blk.norm2.bias)
        s, _ = sglu_forward(n2, blk.sglu, cfg)
        x = x + s
    xf, _ = _norm_forward(x, cfg.norm, model.final_norm.gain, model.final_norm.bias)
    logits = (xf @ model.head)[0]
    state.position = pos + 1
    return logits, state


def generate_step(state: DecodeState, token: int, model: TnlModel):
    """Advance one token; returns (next-token distribution, state)."""
    logits, state = decode_step(state, token, model)
    return softmax_rows(logits[None, :])[0], state


# ---------------------------------------------------------------------------
# Checkpoints: raw tensor bytes + JSON manifest
# ---------------------------------------------------------------------------


def save_checkpoint(model: TnlModel, stem) -> tuple[Path, Path]:
    """Write <stem>.bin (concatenated little-endian tensors) and <stem>.json."""
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    man_path = stem.with_suffix(".json")
    entries = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in model.named_parameters():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(raw)
            entries.append(
                {"name": name, "shape": list(arr.shape), "precision": "reference", "offset": offset, "nbytes": len(raw)}
            )
            offset += len(raw)
    cfg = model.cfg
    manifest = {
        "format": "linattn-checkpoint-v1",
        "config": {
            "d_model": cfg.d_model, "layers": cfg.layers, "heads": cfg.heads, "d_ff": cfg.d_ff,
            "vocab": cfg.vocab, "pe_mode": cfg.pe_mode, "gate": cfg.gate, "gla_act": cfg.gla_act,
            "glu_act": cfg.glu_act, "norm": cfg.norm, "decay_temperature": cfg.decay_temperature,
            "block": cfg.block, "theta_base": cfg.theta_base,
        },
        "tensors": entries,
    }
    man_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return bin_path, man_path


def load_checkpoint(stem) -> TnlModel:
    """Rebuild a model bit-exactly from save_checkpoint's two files."""
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("format") != "linattn-checkpoint-v1":
        raise DomainError(f"{stem}: not a recognized checkpoint manifest")
    cfg = ModelConfig(**manifest["config"])
    model = TnlModel.init(cfg, seed=0)
    raw = stem.with_suffix(".bin").read_bytes()
    params = dict(model.named_parameters())
    seen = set()
    for e in manifest["tensors"]:
        name, shape = e["name"], tuple(e["shape"])
        if name not in params:
            raise DomainError(f"checkpoint tensor {name!r} has no slot in this model")
        arr = np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)), offset=e["offset"]).reshape(shape)
        if params[name].shape != arr.shape:
            raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {params[name].shape}")
        np.copyto(params[name], arr)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise DomainError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
