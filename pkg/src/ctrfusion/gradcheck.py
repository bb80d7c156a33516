"""Finite-difference verification of every analytic gradient.

Builds a small but fully wired model (two heads, two cross layers, a
two-layer MLP, items with nonzero fused vectors, histories of mixed
length including an out-of-vocabulary target) and compares the analytic
gradients of the mean-BCE loss against central differences, layer group
by layer group and then for the whole composed model.
"""

from __future__ import annotations

import numpy as np

from .data import InteractionRecord
from .fusion import ItemEmbeddingTable
from .model import ClickModel, Hyperparams
from .ops import finite_diff_check

LAYER_GROUPS = (
    ("embeddings", ("id_embedding",)),
    ("fused_projection", ("fused_projection",)),
    ("attention", ("attn_wq_h", "attn_wk_h", "attn_wv_h", "attn_wo")),
    ("senet", ("senet_w1", "senet_w2")),
    ("cross", ("cross_w", "cross_b")),
    ("bilinear", ("bilinear_w",)),
    ("mlp", ("mlp_w", "mlp_b", "out_bias")),
)


def small_fixture(seed: int):
    """A tiny model plus a 4-record labelled batch for gradient checks."""
    rng = np.random.default_rng((int(seed), 99))
    hyper = Hyperparams(d_id=4, n_heads=2, senet_reduction=2, cross_depth=2,
                        mlp_sizes=(8, 4), max_history_len=6)
    item_ids = [f"g{i}" for i in range(8)]
    fused = ItemEmbeddingTable(item_ids=item_ids,
                               vectors=0.5 * rng.standard_normal((8, 6)),
                               strategy="v4")
    model = ClickModel(hyper, fused)
    params = model.init_params(seed)
    records = [
        InteractionRecord("u0", ("g0", "g1", "g2", "g3", "g4"), "g5", 1),
        InteractionRecord("u1", ("g6", "g7", "g1"), "g0", 0),
        InteractionRecord("u2", ("g2", "g5"), "not-in-vocab", 1),
        InteractionRecord("u3", (), "g4", 0),  # cold start: empty history
    ]
    batch = model.encode(records)
    return model, params, batch


def run_gradcheck(seed: int, eps: float = 1e-4) -> dict[str, float]:
    """Max relative finite-difference error per layer group and composed.

    Keys are the layer-group names plus ``composed``; values are the max
    over all perturbed elements of |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|).
    """
    model, params, batch = small_fixture(seed)
    _, grads = model.backward(params, batch)

    def loss_with(sub):
        merged = {**params, **sub}
        return model.loss(merged, batch)

    results: dict[str, float] = {}
    for group, prefixes in LAYER_GROUPS:
        names = [n for n in params if n.startswith(prefixes)]
        sub_params = {n: params[n] for n in names}
        sub_grads = {n: grads[n] for n in names}
        results[group] = finite_diff_check(loss_with, sub_params, sub_grads, eps)
    results["composed"] = finite_diff_check(loss_with, params, grads, eps)
    return results
