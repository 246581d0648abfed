"""Tiled causal linear attention with decay, plus a small gated-attention
language model built on it.

The kernels compute exactly what the quadratic masked product computes,
in linear time for the forward and backward passes, and every fast path
here is checked against a slow independent oracle (see linattn.verify and
the test suite).
"""

from .bench import RunConfig, read_csv, run_bench, write_csv
from .kernels import (
    KERNEL_KINDS,
    AttentionConfig,
    KvState,
    TimingRecord,
    aux_state_bytes,
    bench_kernel,
    lightning_backward,
    lightning_backward_decay,
    lightning_forward,
    lightning_forward_decay,
)
from .matrixops import (
    REFERENCE,
    WORKING,
    BlockLayout,
    DomainError,
    ShapeError,
    block_partition,
    causal_decay_mask,
    decay_powers,
    matmul,
)
from .model import (
    Adam,
    DecodeState,
    ModelConfig,
    TnlModel,
    decode_step,
    generate_step,
    load_checkpoint,
    model_forward,
    save_checkpoint,
    sequence_loss_and_grads,
    srmsnorm,
    train_step,
)
from .oracles import (
    GradBundle,
    finite_difference_grads,
    left_product_backward,
    left_product_forward,
    max_rel_error,
    max_scaled_error,
    reference_backward,
    right_product_forward,
)
from .parallel import all_reduce, gla_parallel_forward, reduce_count, sglu_parallel_forward, shard_weights
from .plotsvg import plot_csv
from .positional import (
    PE_MODES,
    DecaySchedule,
    LrpeParams,
    apply_lrpe,
    apply_lrpe_backward,
    decay_rate,
    layer_pe_policy,
    rotation_score_attention,
)
from .verify import SUITES, format_report, run_suites

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "KvState", "TimingRecord", "KERNEL_KINDS",
    "lightning_forward", "lightning_backward",
    "lightning_forward_decay", "lightning_backward_decay",
    "aux_state_bytes", "bench_kernel",
    "left_product_forward", "right_product_forward",
    "reference_backward", "left_product_backward",
    "finite_difference_grads", "GradBundle",
    "max_rel_error", "max_scaled_error",
    "BlockLayout", "block_partition", "causal_decay_mask", "decay_powers",
    "matmul", "ShapeError", "DomainError", "WORKING", "REFERENCE",
    "DecaySchedule", "decay_rate", "LrpeParams",
    "apply_lrpe", "apply_lrpe_backward", "layer_pe_policy",
    "rotation_score_attention", "PE_MODES",
    "ModelConfig", "TnlModel", "Adam", "DecodeState",
    "model_forward", "sequence_loss_and_grads", "train_step",
    "decode_step", "generate_step", "save_checkpoint", "load_checkpoint", "srmsnorm",
    "shard_weights", "sglu_parallel_forward", "gla_parallel_forward",
    "all_reduce", "reduce_count",
    "run_suites", "format_report", "SUITES",
    "RunConfig", "run_bench", "write_csv", "read_csv", "plot_csv",
    "__version__",
]
