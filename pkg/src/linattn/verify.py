"""Self-check suites behind the command line's `verify`.

Each suite runs a battery of equivalence and invariant checks and reports
one line per check with the measured maximum relative error (the shared
|a-b| / max(|a|, |b|, 1e-8) metric) against that check's tolerance.  Check
names carry the full parameter point (kernel, n, d, B, lam), so a failure
pinpoints where the implementations disagree.

Random instances use positive-support uniform inputs: every masked sum
then has condition number 1, so the tight tolerances measure algorithmic
agreement rather than cancellation luck.  Sign-mixed data is covered by
the package's unit tests under a scale-aware metric.

Suites: core, vanilla, decay, gradients, positional, model, parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import parallel as tp
from .kernels import (
    AttentionConfig,
    lightning_backward,
    lightning_backward_decay,
    lightning_forward,
    lightning_forward_decay,
)
from .matrixops import REFERENCE, WORKING, block_partition, causal_decay_mask, matmul
from .model import (
    DecodeState,
    ModelConfig,
    SgluWeights,
    TnlModel,
    generate_step,
    gla_forward,
    model_forward,
    sequence_loss_and_grads,
    sglu_forward,
    softmax_rows,
    srmsnorm,
)
from .oracles import (
    finite_difference_grads,
    left_product_backward,
    left_product_forward,
    max_rel_error,
    reference_backward,
    right_product_forward,
)
from .positional import DecaySchedule, LrpeParams, apply_lrpe, rotation_score_attention


@dataclass
class CheckResult:
    name: str
    err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.err <= self.tol


@dataclass
class SuiteResult:
    name: str
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_err(self) -> float:
        return max((c.err for c in self.checks), default=0.0)

    def add(self, name: str, err: float, tol: float) -> None:
        self.checks.append(CheckResult(name=name, err=float(err), tol=tol))


def _positive(rng: np.random.Generator, n: int, d: int, count: int = 3):
    return tuple(rng.uniform(0.05, 1.0, (n, d)) for _ in range(count))


def _grid(ns=(1, 2, 5, 31, 64), ds=(1, 4, 16)):
    for n in ns:
        for d in ds:
            for B in sorted({1, 3, d, n}):
                yield n, d, B


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def suite_core() -> SuiteResult:
    out = SuiteResult("core")
    rng = np.random.default_rng(101)

    a = rng.uniform(-1, 1, (7, 5))
    b = rng.uniform(-1, 1, (5, 3))
    slow = np.zeros((7, 3))
    for i in range(7):
        for j in range(3):
            for k in range(5):
                slow[i, j] += a[i, k] * b[k, j]
    out.add("matmul vs triple loop (7x5 @ 5x3)", max_rel_error(matmul(a, b), slow), 1e-14)

    c = rng.uniform(-1, 1, (3, 4))
    out.add(
        "matmul associativity (A B) C vs A (B C)",
        max_rel_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))),
        1e-12,
    )

    binary = np.tril(np.ones((9, 9)))
    out.add("decay mask at lam=1 is the binary causal mask", max_rel_error(causal_decay_mask(9, 1.0), binary), 0.0)

    x = rng.uniform(-1, 1, (11, 4))
    worst = 0.0
    for b_sz in range(1, 15):
        blocks, _ = block_partition(x, b_sz)
        if not np.array_equal(np.vstack(blocks), x):
            worst = 1.0
    out.add("block partition + stack is the identity, B=1..14", worst, 0.0)
    return out


def suite_vanilla() -> SuiteResult:
    out = SuiteResult("vanilla")
    rng = np.random.default_rng(202)
    for n, d, B in _grid():
        q, k, v = _positive(rng, n, d)
        do = rng.uniform(0.05, 1.0, (n, d))
        cfg = AttentionConfig(n=n, d=d, B=B, lam=1.0)
        ref = left_product_forward(q, k, v, 1.0)
        out.add(f"forward vs left oracle (n={n} d={d} B={B})", max_rel_error(lightning_forward(q, k, v, cfg), ref), 1e-10)
        single = AttentionConfig(n=n, d=d, B=B, lam=1.0, precision="working")
        got32 = lightning_forward(q.astype(WORKING), k.astype(WORKING), v.astype(WORKING), single)
        out.add(f"forward single precision (n={n} d={d} B={B})", max_rel_error(got32.astype(REFERENCE), ref), 1e-4)
        gref = reference_backward(q, k, v, do, 1.0)
        got = lightning_backward(q, k, v, do, cfg)
        err = max(max_rel_error(a, b) for a, b in zip(got, gref))
        out.add(f"backward vs recurrent oracle (n={n} d={d} B={B})", err, 1e-10)
    return out


def suite_decay() -> SuiteResult:
    out = SuiteResult("decay")
    rng = np.random.default_rng(303)
    for lam in (1.0, 0.9, 0.5):
        for n, d, B in _grid():
            q, k, v = _positive(rng, n, d)
            left = left_product_forward(q, k, v, lam)
            right = right_product_forward(q, k, v, lam)
            out.add(f"right vs left oracle (n={n} d={d} lam={lam})", max_rel_error(right, left), 1e-10)
            cfg = AttentionConfig(n=n, d=d, B=B, lam=lam)
            out.add(
                f"decay forward vs left oracle (n={n} d={d} B={B} lam={lam})",
                max_rel_error(lightning_forward_decay(q, k, v, cfg), left),
                1e-10,
            )
    rng2 = np.random.default_rng(304)
    for n, d, B in ((17, 4, 4), (64, 16, 16), (33, 8, 5)):
        q, k, v = _positive(rng2, n, d)
        one = AttentionConfig(n=n, d=d, B=B, lam=1.0)
        out.add(
            f"decay kernel at lam=1 equals vanilla kernel (n={n} d={d} B={B})",
            max_rel_error(lightning_forward_decay(q, k, v, one), lightning_forward(q, k, v, one)),
            1e-12,
        )
    return out


def suite_gradients() -> SuiteResult:
    out = SuiteResult("gradients")
    rng = np.random.default_rng(404)
    for lam in (1.0, 0.9, 0.5):
        for n, d, B in _grid():
            q, k, v = _positive(rng, n, d)
            do = rng.uniform(0.05, 1.0, (n, d))
            gref = reference_backward(q, k, v, do, lam)
            got = lightning_backward_decay(q, k, v, do, AttentionConfig(n=n, d=d, B=B, lam=lam))
            err = max(max_rel_error(a, b) for a, b in zip(got, gref))
            out.add(f"decay backward vs recurrent oracle (n={n} d={d} B={B} lam={lam})", err, 1e-10)
        # the two independent backward routes agree with each other
        q, k, v = _positive(rng, 23, 5)
        do = rng.uniform(0.05, 1.0, (23, 5))
        gl = left_product_backward(q, k, v, do, lam)
        gr = reference_backward(q, k, v, do, lam)
        err = max(max_rel_error(a, b) for a, b in zip(gl, gr))
        out.add(f"left-route backward vs recurrent backward (n=23 d=5 lam={lam})", err, 1e-10)

    for n, d, lam in ((6, 3, 0.8), (12, 8, 1.0), (16, 4, 0.5)):
        q, k, v = _positive(np.random.default_rng(1000 + n), n, d)
        do = np.ones((n, d))
        g = reference_backward(q, k, v, do, lam)
        for name, point, idx in (("dQ", q, 0), ("dK", k, 1), ("dV", v, 2)):
            mats = [q, k, v]

            def f(m, _i=idx, _mats=mats):
                args = list(_mats)
                args[_i] = m
                return float(left_product_forward(*args, lam).sum())

            fd = finite_difference_grads(f, point, 1e-5)
            out.add(f"recurrent backward {name} vs finite differences (n={n} d={d} lam={lam})", max_rel_error(list(g)[idx], fd), 1e-6)
    return out


def suite_positional() -> SuiteResult:
    out = SuiteResult("positional")
    sched = DecaySchedule.build(8, 6)
    out.add("top head, top layer decay is 1", abs(sched.rate(8, 6) - 1.0), 0.0)
    mono = 0.0
    for l in range(1, 7):
        rates = [sched.rate(h, l) for h in range(1, 9)]
        if any(b > a + 1e-15 for a, b in zip(rates, rates[1:])):
            mono = 1.0
    for h in range(1, 9):
        rates = [sched.rate(h, l) for l in range(1, 7)]
        if any(b < a - 1e-15 for a, b in zip(rates, rates[1:])):
            mono = 1.0
    out.add("decay non-increasing in head, non-decreasing in layer", mono, 0.0)

    rng = np.random.default_rng(505)
    x = rng.standard_normal((40, 8))
    pe = LrpeParams.default_init(8)
    out.add(
        "rotation preserves the Frobenius norm",
        abs(np.linalg.norm(apply_lrpe(x, pe)) - np.linalg.norm(x)) / np.linalg.norm(x),
        1e-12,
    )
    for n, d, lam in ((48, 8, 0.9), (64, 4, 1.0), (31, 6, 0.5)):
        rng_i = np.random.default_rng(60 + n)
        q, k, v = (rng_i.standard_normal((n, d)) for _ in range(3))
        pe_i = LrpeParams.default_init(d)
        fast = lightning_forward_decay(apply_lrpe(q, pe_i), apply_lrpe(k, pe_i), v, AttentionConfig(n, d, None, lam))
        slow = rotation_score_attention(q, k, v, pe_i, lam)
        out.add(f"rotate-then-kernel vs per-pair score oracle (n={n} d={d} lam={lam})", max_rel_error(fast, slow), 1e-8)
    return out


def _conditioned_model(cfg: ModelConfig, seed: int) -> TnlModel:
    """A model whose weights are drawn at a scale that keeps norms well away
    from their singular region (the training init is much smaller)."""
    model = TnlModel.init(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in model.named_parameters():
        if name != "lrpe.theta":
            np.copyto(p, rng.normal(0.0, 0.35, p.shape))
    return model


def suite_model() -> SuiteResult:
    out = SuiteResult("model")
    rng = np.random.default_rng(606)

    x = np.array([[1.0, 2.0]])
    hand = sglu_forward(x, SgluWeights(wv=np.eye(2), wu=np.eye(2), wo=np.array([[1.0], [1.0]])), None)[0]
    out.add("channel mixer hand case [1,2] -> 5", abs(float(hand[0, 0]) - 5.0), 0.0)

    norms = np.linalg.norm(srmsnorm(rng.standard_normal((64, 12))), axis=1)
    out.add("row norms after srmsnorm equal sqrt(d)", float(np.max(np.abs(norms - np.sqrt(12)))), 1e-10)

    cfg = ModelConfig(d_model=16, layers=2, heads=2, d_ff=32, vocab=32, block=4)
    model = _conditioned_model(cfg, 11)

    # gate neutrality: choose Wu so that U = X Wu is all-ones, then the gated
    # path must coincide with the ungated one; Wu = 0 must zero the output
    blk = model.blocks[0]
    xg = rng.standard_normal((16, 16))
    saved = blk.gla.wu.copy()
    ungated_cfg = ModelConfig(**{**cfg.__dict__, "gate": False})
    y_plain, _ = gla_forward(xg, blk.gla, model.schedule, model.lrpe, 1, ungated_cfg)
    blk.gla.wu[:] = np.linalg.solve(xg, np.ones((16, 16)))
    y_ones, _ = gla_forward(xg, blk.gla, model.schedule, model.lrpe, 1, cfg)
    blk.gla.wu[:] = 0.0
    y_zero, _ = gla_forward(xg, blk.gla, model.schedule, model.lrpe, 1, cfg)
    blk.gla.wu[:] = saved
    out.add("all-ones gate equals the ungated path", max_rel_error(y_ones, y_plain), 1e-10)
    out.add("zero gate zeroes the GLA output", float(np.max(np.abs(y_zero))), 0.0)

    # directional derivative of the full loss against analytic gradients
    toks = np.random.default_rng(5).integers(0, 32, size=13)
    grads = model.zero_grads()
    sequence_loss_and_grads(toks, model, grads)
    rngd = np.random.default_rng(99)
    dirs = {nm: rngd.standard_normal(p.shape) for nm, p in model.named_parameters()}
    analytic = sum(float((grads[nm] * d).sum()) for nm, d in dirs.items())
    h = 1e-6

    def loss_shifted(eps: float) -> float:
        for nm, p in model.named_parameters():
            p += eps * dirs[nm]
        g2 = model.zero_grads()
        val = sequence_loss_and_grads(toks, model, g2)
        for nm, p in model.named_parameters():
            p -= eps * dirs[nm]
        return val

    fd = (loss_shifted(h) - loss_shifted(-h)) / (2 * h)
    out.add("directional derivative of loss vs gradient dot", abs(fd - analytic) / max(abs(analytic), 1e-8), 1e-6)

    # stepwise decode equals the parallel forward
    prefix = np.random.default_rng(8).integers(0, 32, size=32)
    par = softmax_rows(model_forward(prefix, model))
    st = DecodeState.fresh(model)
    worst = 0.0
    for t, tok in enumerate(prefix):
        probs, st = generate_step(st, int(tok), model)
        worst = max(worst, float(np.max(np.abs(probs - par[t]))))
    out.add("recurrent decode matches parallel forward (32 steps)", worst, 1e-6)
    out.add("decode state size is position independent", float(st.nbytes != DecodeState.fresh(model).nbytes), 0.0)
    return out


def suite_parallel() -> SuiteResult:
    out = SuiteResult("parallel")
    cfg = ModelConfig(d_model=32, layers=2, heads=4, d_ff=64, vocab=64, block=8)
    model = _conditioned_model(cfg, 21)
    blk = model.blocks[0]
    rng = np.random.default_rng(707)
    x = rng.standard_normal((40, 32))
    ref_s, _ = sglu_forward(x, blk.sglu, cfg)
    ref_g, _ = gla_forward(x, blk.gla, model.schedule, model.lrpe, 1, cfg)
    for P in (1, 2, 4):
        before = tp.reduce_count()
        ys = tp.sglu_parallel_forward(x, tp.shard_weights(blk.sglu, P))
        yg = tp.gla_parallel_forward(x, tp.shard_weights(blk.gla, P), model.schedule, model.lrpe, 1, cfg)
        reduces = tp.reduce_count() - before
        out.add(f"sharded channel mixer vs unsharded (P={P})", max_rel_error(ys, ref_s), 1e-10)
        out.add(f"sharded attention vs unsharded (P={P})", max_rel_error(yg, ref_g), 1e-10)
        out.add(f"exactly one reduce per layer pass (P={P})", float(reduces != 2), 0.0)
    return out


SUITES = {
    "core": suite_core,
    "vanilla": suite_vanilla,
    "decay": suite_decay,
    "gradients": suite_gradients,
    "positional": suite_positional,
    "model": suite_model,
    "parallel": suite_parallel,
}


def run_suites(names=None) -> list[SuiteResult]:
    """Run the named suites (all by default) and return their results."""
    if names is None:
        names = list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; available: {sorted(SUITES)}")
    return [SUITES[n]() for n in names]


def format_report(results: list[SuiteResult], verbose: bool = False) -> str:
    """Human-readable report; failures always show their check lines."""
    lines = []
    for suite in results:
        status = "PASS" if suite.passed else "FAIL"
        lines.append(f"== suite {suite.name}: {status}  ({len(suite.checks)} checks, max rel err {suite.max_err:.3e})")
        for c in suite.checks:
            if verbose or not c.passed:
                mark = "ok  " if c.passed else "FAIL"
                lines.append(f"  [{mark}] {c.name}: max rel err {c.err:.3e} (tol {c.tol:g})")
    total = sum(len(s.checks) for s in results)
    bad = sum(1 for s in results for c in s.checks if not c.passed)
    lines.append(f"== overall: {total - bad}/{total} checks passed")
    return "\n".join(lines)
