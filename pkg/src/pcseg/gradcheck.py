"""Finite-difference verification for every differentiable operation.

Each entry builds random inputs, runs the op, and compares analytic
gradients with central differences via `tensor.finite_difference_check`.
The suite ends with an end-to-end check: the episode loss differentiated
against a sampled subset of every model parameter.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import model as M
from . import tensor as T
from .attention import linear_attention, multi_head_linear_attention, standard_attention
from .config import RunConfig
from .episodes import generate_episode, make_split
from .seeding import derive_seed
from .synth import synth_scene
from .tensor import Tensor, finite_difference_check

TOLERANCE = 1e-4


def _tensors(rng, *shapes):
    return [Tensor(rng.standard_normal(s)) for s in shapes]


def _check_matmul(rng):
    return T.matmul, _tensors(rng, (3, 4), (4, 2))


def _check_add_broadcast(rng):
    return T.add, _tensors(rng, (4, 5), (5,))


def _check_mul(rng):
    return T.mul, _tensors(rng, (3, 4), (3, 4))


def _check_div(rng):
    a = Tensor(rng.standard_normal((4, 3)))
    b = Tensor(rng.uniform(0.5, 1.5, size=(4, 1)))
    return T.div, [a, b]


def _check_concat(rng):
    return (lambda a, b: T.concat([a, b], axis=1)), _tensors(rng, (4, 1, 8), (4, 2, 8))


def _check_transpose_first_two(rng):
    return T.transpose_first_two, _tensors(rng, (2, 5, 3))


def _check_reshape(rng):
    return (lambda t: T.reshape(t, (6, 2))), _tensors(rng, (3, 4))


def _check_narrow(rng):
    return (lambda t: T.narrow(t, 1, 1, 2)), _tensors(rng, (3, 4, 2))


def _check_take_rows(rng):
    idx = rng.integers(0, 5, size=8)  # duplicates exercise the scatter-add
    return (lambda t: T.take_rows(t, idx)), _tensors(rng, (5, 3))


def _check_elu(rng):
    return T.elu, _tensors(rng, (4, 5))


def _check_elu_plus_one(rng):
    return T.elu_plus_one, _tensors(rng, (4, 5))


def _check_layer_norm(rng):
    t, = _tensors(rng, (4, 6))
    gain = Tensor(rng.uniform(0.5, 1.5, size=6))
    bias = Tensor(rng.standard_normal(6))
    return T.layer_norm, [t, gain, bias]


def _check_mlp_forward(rng):
    x, w1, b1, w2, b2 = _tensors(rng, (5, 4), (4, 6), (6,), (6, 3), (3,))
    op = lambda x, w1, b1, w2, b2: T.mlp_forward(x, SimpleNamespace(w1=w1, b1=b1, w2=w2, b2=b2))
    return op, [x, w1, b1, w2, b2]


def _check_cosine_rows(rng):
    return T.cosine_rows, _tensors(rng, (3, 4), (2, 4))


def _check_max_pool_rows(rng):
    return T.max_pool_rows, _tensors(rng, (5, 7))


def _check_masked_mean_rows(rng):
    mask = rng.random(6) < 0.6
    if not mask.any():
        mask[0] = True
    return (lambda t: T.masked_mean_rows(t, mask)), _tensors(rng, (6, 4))


def _check_group_mean_rows(rng):
    groups = [np.array([0, 2]), np.array([1, 3, 4])]
    return (lambda t: T.group_mean_rows(t, groups)), _tensors(rng, (5, 3))


def _check_softmax_rows(rng):
    return T.softmax_rows, _tensors(rng, (4, 6))


def _check_cross_entropy(rng):
    targets = rng.integers(0, 3, size=6)
    return (lambda t: T.cross_entropy(t, targets)), _tensors(rng, (6, 3))


def _check_einsum_batched(rng):
    return (lambda a, b: T.einsum("bnhd,bnhe->bhde", a, b)), _tensors(rng, (2, 4, 2, 3), (2, 4, 2, 3))


def _check_standard_attention(rng):
    return standard_attention, _tensors(rng, (5, 4), (5, 4), (5, 4))


def _check_linear_attention(rng):
    return linear_attention, _tensors(rng, (6, 4), (6, 4), (6, 4))


def _check_multi_head_linear_attention(rng):
    x, = _tensors(rng, (2, 5, 8))
    ws = _tensors(rng, (8, 8), (8, 8), (8, 8), (8, 8))
    op = lambda x, wq, wk, wv, wo: multi_head_linear_attention(
        x, SimpleNamespace(w_q=wq, w_k=wk, w_v=wv, w_o=wo, head_count=2)
    )
    return op, [x] + ws


OP_CHECKS = [
    ("matmul", _check_matmul),
    ("add_broadcast", _check_add_broadcast),
    ("mul", _check_mul),
    ("div", _check_div),
    ("concat", _check_concat),
    ("transpose_first_two", _check_transpose_first_two),
    ("reshape", _check_reshape),
    ("narrow", _check_narrow),
    ("take_rows", _check_take_rows),
    ("elu", _check_elu),
    ("elu_plus_one", _check_elu_plus_one),
    ("layer_norm", _check_layer_norm),
    ("mlp_forward", _check_mlp_forward),
    ("cosine_rows", _check_cosine_rows),
    ("max_pool_rows", _check_max_pool_rows),
    ("masked_mean_rows", _check_masked_mean_rows),
    ("group_mean_rows", _check_group_mean_rows),
    ("softmax_rows", _check_softmax_rows),
    ("cross_entropy", _check_cross_entropy),
    ("einsum_batched", _check_einsum_batched),
    ("standard_attention", _check_standard_attention),
    ("linear_attention", _check_linear_attention),
    ("multi_head_linear_attention", _check_multi_head_linear_attention),
]


def check_op(builder, seed: int, trials: int) -> float:
    """Worst finite-difference error over `trials` random input draws."""
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(derive_seed(seed, "gradcheck-trial", t))
        op, inputs = builder(rng)
        worst = max(worst, finite_difference_check(op, inputs, rng=rng))
    return worst


def _end_to_end_setup(seed: int):
    """A tiny 1-way training episode plus freshly initialized parameters."""
    config = RunConfig(
        seed=seed,
        dim=8,
        n_prototypes=4,
        hca_layers=2,
        heads=2,
        max_points=48,
        min_fg_points=10,
        episodes=0,
    )
    # every unordered class pair appears once, so any target has >= 3
    # eligible scenes regardless of the seed
    pairs = [(a, b) for a in range(1, 5) for b in range(a + 1, 5)]
    pool = [
        synth_scene(derive_seed(seed, "gradcheck-pool", i), [(a, 60), (b, 60)])
        for i, (a, b) in enumerate(pairs)
    ]
    split = make_split(range(1, 5), fold=0)
    episode = generate_episode(
        pool, split, "train", 1, 1, config.min_fg_points, config.max_points, derive_seed(seed, "gradcheck-episode")
    )
    rng = np.random.default_rng(derive_seed(seed, "gradcheck-init"))
    params = M.ModelParams.create(
        rng, dim=config.dim, n_prototypes=config.n_prototypes,
        n_layers=config.hca_layers, heads=config.heads, n_base=len(split.train_classes),
    )
    bank = M.BasePrototypeBank.zeros(split.train_classes, config.dim, config.momentum)
    for cid in split.train_classes:  # live guidance so its gradient path is exercised
        bank.apply_update(cid, rng.standard_normal(config.dim))
    base_gt = M.base_targets(episode.query.labels, bank.class_ids)

    def op(*_params):
        seg_logits, base_logits = M.forward(episode, params, bank, "train")
        return M.loss(seg_logits, base_logits, episode.query_gt, base_gt)

    return op, params.parameters()


def check_end_to_end(seed: int, trials: int, coords_per_param: int = 2) -> float:
    """FD-check the episode loss against a sample of every parameter tensor."""
    worst = 0.0
    for t in range(trials):
        op, leaves = _end_to_end_setup(derive_seed(seed, "gradcheck-e2e", t))
        rng = np.random.default_rng(derive_seed(seed, "gradcheck-e2e-rng", t))
        worst = max(worst, finite_difference_check(op, leaves, rng=rng, max_coords=coords_per_param))
    return worst


def _corrupted_scale(t: Tensor) -> Tensor:
    # Deliberately wrong backward (5% off): the detector must flag it.
    return Tensor(t.data * 2.0, (t,), lambda g: (g * 2.1,))


def check_corrupted(seed: int) -> float:
    rng = np.random.default_rng(derive_seed(seed, "gradcheck-corrupt"))
    return finite_difference_check(_corrupted_scale, _tensors(rng, (4, 3)), rng=rng)


def run_suite(seed: int, trials: int = 10, include_corrupt: bool = False, e2e_trials: int | None = None):
    """Run every check; returns [(name, max_rel_error)]."""
    results = [(name, check_op(builder, seed, trials)) for name, builder in OP_CHECKS]
    results.append(("end_to_end_loss", check_end_to_end(seed, e2e_trials if e2e_trials is not None else min(trials, 10))))
    if include_corrupt:
        results.append(("deliberately_corrupted", check_corrupted(seed)))
    return results
