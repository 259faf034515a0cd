"""Softmax attention (the oracle) and elu-kernel linear attention.

`standard_attention` computes the quadratic softmax form. `linear_attention`
replaces exp(q k^T / sqrt(D)) with the kernel phi(q) phi(k)^T, phi(x) =
elu(x) + 1, and reassociates the products so the cost is O(N D^2) instead
of O(N^2 D). The kernel form carries no sqrt(D) scaling. The multi-head
wrapper projects, splits heads along the channel axis, and treats the
leading axis as an independent batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

_DEN_FLOOR = 1e-12


@dataclass
class AttentionParams:
    """Projection weights for one multi-head attention layer."""

    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    head_count: int

    def __post_init__(self):
        dim = self.w_q.shape[0]
        for w in (self.w_q, self.w_k, self.w_v, self.w_o):
            if w.shape != (dim, dim):
                raise ValueError(f"projections must all be ({dim}, {dim}), got {w.shape}")
        if dim % self.head_count != 0:
            raise ValueError(f"head_count {self.head_count} does not divide dim {dim}")

    @classmethod
    def create(cls, rng: np.random.Generator, dim: int, head_count: int, prefix: str) -> "AttentionParams":
        def proj(name):
            return Parameter(T.glorot_uniform(rng, dim, dim), f"{prefix}.{name}")

        return cls(proj("w_q"), proj("w_k"), proj("w_v"), proj("w_o"), head_count)

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v, self.w_o]


def _check_qkv(q: Tensor, k: Tensor, v: Tensor):
    if q.ndim != 2 or q.shape != k.shape or q.shape != v.shape:
        raise ValueError(f"q, k, v must share one (N, D) shape, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[0] < 1:
        raise ValueError("attention needs at least one token")


def standard_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Softmax attention: row i gets sum_j softmax_j(q_i k_j^T / sqrt(D)) v_j."""
    _check_qkv(q, k, v)
    dim = q.shape[1]
    scores = T.scale(T.einsum("nd,md->nm", q, k), 1.0 / np.sqrt(dim))
    return T.einsum("nm,md->nd", T.softmax_rows(scores), v)


def _kernel_attention(fq: Tensor, fk: Tensor, v: Tensor, reassociated: bool) -> Tensor:
    """Normalized kernel attention on (B, H, N, Dh) stacks.

    The two association orders are algebraically identical; `reassociated`
    picks the O(N Dh^2) one, otherwise the O(N^2 Dh) score matrix is
    formed (cheaper when the token axis is short). Denominators are
    floored at 1e-12 (phi > 0, so this only guards overflow).
    """
    if reassociated:
        summary = T.bmm(T.swap_axes(fk, -1, -2), v)
        key_total = T.sum_axis(fk, axis=2, keepdims=True)
        num = T.bmm(fq, summary)
        den = T.bmm(fq, T.swap_axes(key_total, -1, -2))
    else:
        scores = T.bmm(fq, T.swap_axes(fk, -1, -2))
        num = T.bmm(scores, v)
        den = T.sum_axis(scores, axis=-1, keepdims=True)
    return T.div(num, T.clamp_min(den, _DEN_FLOOR))


def linear_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Kernel attention in the reassociated O(N D^2) order.

    out_i = phi(q_i) (sum_j phi(k_j)^T v_j) / (phi(q_i) sum_j phi(k_j)^T).
    """
    _check_qkv(q, k, v)
    n, dim = q.shape
    lift = lambda t: T.reshape(t, (1, 1, n, dim))
    out = _kernel_attention(
        T.elu_plus_one(lift(q)), T.elu_plus_one(lift(k)), lift(v), reassociated=True
    )
    return T.reshape(out, (n, dim))


def linear_attention_quadratic(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """The same kernel attention in the O(N^2 D) order (oracle for tests)."""
    _check_qkv(q, k, v)
    fq = T.elu_plus_one(q)
    fk = T.elu_plus_one(k)
    weights = T.einsum("nd,md->nm", fq, fk)
    ones = Tensor(np.ones(k.shape[0]))
    num = T.einsum("nm,md->nd", weights, v)
    den = T.clamp_min(T.einsum("nm,m->n", weights, ones), _DEN_FLOOR)
    return T.div(num, T.reshape(den, (q.shape[0], 1)))


def multi_head_linear_attention(x: Tensor, params: AttentionParams) -> Tensor:
    """Project, split heads, run linear attention per (batch, head), merge.

    `x` is B x N x D: each slice along the first axis is an independent
    token sequence. Heads are consecutive channel blocks of width
    D / head_count. The association order is chosen per call: the
    reassociated form when the token axis is long, the score-matrix form
    when it is short; the two agree by associativity.
    """
    if x.ndim != 3:
        raise ValueError(f"expected a B x N x D tensor, got shape {x.shape}")
    b, n, dim = x.shape
    h = params.head_count
    if dim != params.w_q.shape[0]:
        raise ValueError(f"input dim {dim} does not match projections {params.w_q.shape}")
    if dim % h != 0:
        raise ValueError(f"head_count {h} does not divide dim {dim}")
    dh = dim // h
    flat = T.reshape(x, (b * n, dim))

    def split(w):
        # (B*N, D) @ (D, D) -> (B, H, N, Dh): heads are channel blocks
        return T.swap_axes(T.reshape(T.matmul(flat, w), (b, n, h, dh)), 1, 2)

    fq = T.elu_plus_one(split(params.w_q))
    fk = T.elu_plus_one(split(params.w_k))
    v4 = split(params.w_v)
    out = _kernel_attention(fq, fk, v4, reassociated=n > dh)
    merged = T.reshape(T.swap_axes(out, 1, 2), (b * n, dim))
    return T.reshape(T.matmul(merged, params.w_o), (b, n, dim))
