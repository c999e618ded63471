"""Synthetic trace generators.

`gen_transformer_trace` emits a decoder-block-shaped iteration so the rest
of the toolkit can be exercised without real profiler output: a forward pass
(attention + MLP kernel per layer), the backward pass in reverse layer
order, and one trailing optimizer-step kernel. Sizes use the usual
transformer algebra (see the constants below); durations scale a FLOP
estimate by a single `compute_rate` factor, since only relative durations
matter to planning.

`gen_random_trace` produces arbitrary valid traces for property tests.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .trace import KernelRecord, TensorKind, TensorRecord, Trace, make_trace

# Per-layer tensor sizing, in units of bytes_per_element:
#   attention weights  4 * hidden^2        (Q, K, V, O projections)
#   mlp weights        8 * hidden^2        (hidden -> 4*hidden -> hidden)
#   gradients          mirror their weights
#   optimizer state    2x weights          (two moment buffers)
#   attention act.     2 * batch * seq * hidden
#   mlp activations    6 * batch * seq * hidden  (4h intermediate + 2h I/O)
ATTN_WEIGHT_ELEMS = 4
MLP_WEIGHT_ELEMS = 8
OPT_STATE_FACTOR = 2
ATTN_ACT_ELEMS = 2
MLP_ACT_ELEMS = 6


@dataclass(frozen=True)
class TransformerGenConfig:
    num_layers: int = 12
    hidden_dim: int = 4096
    num_heads: int = 32
    batch: int = 8
    seq_len: int = 1024
    bytes_per_element: int = 4
    pipeline_stages: int = 1
    compute_rate: int = 1_000_000_000  # FLOPs per microsecond
    # effective FLOPs charged per parameter in an optimizer step; the real
    # kernel is memory bound, so its time-equivalent cost is far above the
    # ~10 arithmetic ops it performs
    optimizer_intensity: int = 25
    seed: int = 0

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "batch", "seq_len",
                     "bytes_per_element", "pipeline_stages", "compute_rate",
                     "optimizer_intensity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _flops(cfg: TransformerGenConfig) -> tuple[int, int]:
    """(attention, mlp) forward FLOPs for one layer."""
    tokens = cfg.batch * cfg.seq_len
    h = cfg.hidden_dim
    attn = 8 * tokens * h * h + 4 * cfg.batch * cfg.seq_len ** 2 * h
    mlp = 16 * tokens * h * h
    return attn, mlp


def _duration(flops: int, cfg: TransformerGenConfig) -> int:
    return max(1, -(-flops // cfg.compute_rate))


def gen_transformer_trace(cfg: TransformerGenConfig) -> Trace:
    """Deterministic transformer-shaped iteration.

    Kernel order: [attn_fwd_0, mlp_fwd_0, ..., attn_fwd_{L-1}, mlp_fwd_{L-1},
    mlp_bwd_{L-1}, attn_bwd_{L-1}, ..., mlp_bwd_0, attn_bwd_0,
    opt_step_0, ..., opt_step_{L-1}]. The optimizer runs per layer, so no
    single kernel touches every weight at once. Each activation is used
    exactly twice (its forward kernel and the matching backward kernel);
    weights and their gradient/optimizer-state tensors are global.
    """
    L = cfg.num_layers
    attn_flops, mlp_flops = _flops(cfg)

    def attn_fwd(i): return 2 * i
    def mlp_fwd(i): return 2 * i + 1
    def mlp_bwd(i): return 2 * L + 2 * (L - 1 - i)
    def attn_bwd(i): return 2 * L + 2 * (L - 1 - i) + 1
    def opt_step(i): return 4 * L + i

    def stage(i: int) -> int:
        return i * cfg.pipeline_stages // L

    layer_params = (ATTN_WEIGHT_ELEMS + MLP_WEIGHT_ELEMS) * cfg.hidden_dim ** 2
    kernels = []
    for i in range(L):
        kernels.append(KernelRecord(attn_fwd(i), f"attn_fwd_{i}",
                                    _duration(attn_flops, cfg), stage(i), i))
        kernels.append(KernelRecord(mlp_fwd(i), f"mlp_fwd_{i}",
                                    _duration(mlp_flops, cfg), stage(i), i))
    for i in reversed(range(L)):
        kernels.append(KernelRecord(mlp_bwd(i), f"mlp_bwd_{i}",
                                    _duration(2 * mlp_flops, cfg), stage(i), i))
        kernels.append(KernelRecord(attn_bwd(i), f"attn_bwd_{i}",
                                    _duration(2 * attn_flops, cfg), stage(i), i))
    for i in range(L):
        kernels.append(KernelRecord(
            opt_step(i), f"opt_step_{i}",
            _duration(cfg.optimizer_intensity * layer_params, cfg),
            stage(i), i))

    bpe = cfg.bytes_per_element
    h2 = cfg.hidden_dim ** 2
    act_base = cfg.batch * cfg.seq_len * cfg.hidden_dim * bpe
    tensors = []
    next_id = 0

    def add(size, kind, accesses, layer):
        nonlocal next_id
        tensors.append(TensorRecord(next_id, size, kind, tuple(accesses), layer))
        next_id += 1

    for i in range(L):
        attn_w = ATTN_WEIGHT_ELEMS * h2 * bpe
        mlp_w = MLP_WEIGHT_ELEMS * h2 * bpe
        add(attn_w, TensorKind.GLOBAL, [attn_fwd(i), attn_bwd(i), opt_step(i)], i)
        add(mlp_w, TensorKind.GLOBAL, [mlp_fwd(i), mlp_bwd(i), opt_step(i)], i)
        add(attn_w, TensorKind.GLOBAL, [attn_bwd(i), opt_step(i)], i)   # grads
        add(mlp_w, TensorKind.GLOBAL, [mlp_bwd(i), opt_step(i)], i)
        add(OPT_STATE_FACTOR * attn_w, TensorKind.GLOBAL, [opt_step(i)], i)
        add(OPT_STATE_FACTOR * mlp_w, TensorKind.GLOBAL, [opt_step(i)], i)
        add(ATTN_ACT_ELEMS * act_base, TensorKind.INTERMEDIATE,
            [attn_fwd(i), attn_bwd(i)], i)
        add(MLP_ACT_ELEMS * act_base, TensorKind.INTERMEDIATE,
            [mlp_fwd(i), mlp_bwd(i)], i)

    meta = {
        "generator": "transformer",
        "num_layers": L,
        "hidden_dim": cfg.hidden_dim,
        "num_heads": cfg.num_heads,
        "batch": cfg.batch,
        "seq_len": cfg.seq_len,
        "bytes_per_element": bpe,
        "pipeline_stages": cfg.pipeline_stages,
        "compute_rate": cfg.compute_rate,
        "seed": cfg.seed,
    }
    return make_trace(kernels, tensors, meta)


def transformer_peak_bytes(cfg: TransformerGenConfig) -> int:
    """Closed-form peak demand: all globals plus every retained activation
    (the turn from forward to backward holds all of them)."""
    bpe = cfg.bytes_per_element
    h2 = cfg.hidden_dim ** 2
    weights = cfg.num_layers * (ATTN_WEIGHT_ELEMS + MLP_WEIGHT_ELEMS) * h2 * bpe
    grads = weights
    opt_states = OPT_STATE_FACTOR * weights
    act_base = cfg.batch * cfg.seq_len * cfg.hidden_dim * bpe
    acts = cfg.num_layers * (ATTN_ACT_ELEMS + MLP_ACT_ELEMS) * act_base
    return weights + grads + opt_states + acts


def gen_random_trace(seed: int, num_kernels: int, num_tensors: int,
                     size_range: tuple[int, int] = (1_000_000, 200_000_000),
                     duration_range: tuple[int, int] = (100, 10_000),
                     global_fraction: float = 0.3) -> Trace:
    """A random but always-valid trace; identical for identical arguments."""
    if size_range[0] <= 0 or duration_range[0] <= 0:
        raise ValueError("ranges must be positive")
    rng = random.Random(seed)
    kernels = [
        KernelRecord(i, f"k{i}", rng.randint(*duration_range))
        for i in range(num_kernels)
    ]
    tensors = []
    if num_kernels > 0:
        for tid in range(num_tensors):
            count = rng.randint(1, min(4, num_kernels))
            accesses = sorted(rng.sample(range(num_kernels), count))
            kind = (TensorKind.GLOBAL if rng.random() < global_fraction
                    else TensorKind.INTERMEDIATE)
            tensors.append(TensorRecord(tid, rng.randint(*size_range), kind,
                                        tuple(accesses)))
    return make_trace(kernels, tensors, {"generator": "random", "seed": seed})
