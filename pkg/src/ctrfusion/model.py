"""Attention-based click scorer with analytic gradients.

Scoring path for one (user history, target item) pair:

1. Embedding lookup: trainable id embedding plus a frozen fused
   multimodal vector mapped through a trainable linear projection.
2. Multi-head target attention pools the history, with the target as
   the query; padded slots are masked out of the softmax.
3. Three feature fields (target id embedding, target projected
   multimodal embedding, pooled history) pass through a
   squeeze-and-excitation gate.
4. A cross-layer stack and a pairwise bilinear interaction run in
   parallel on the gated fields; their outputs plus the raw flattened
   fields feed a relu MLP ending in a sigmoid.

Every layer carries a hand-derived backward pass; ``gradcheck`` compares
the composition against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import NumericError, ValidationError
from .fusion import ItemEmbeddingTable
from .ops import assert_finite, masked_softmax_rows, relu, sigmoid

PAD_ID = 0
OOV_ID = 1
N_RESERVED = 2
# fixed field set: target id embedding, target fused projection, pooled history
N_FIELDS = 3


@dataclass(frozen=True)
class Hyperparams:
    """Architecture sizes. ``d_id`` must be divisible by ``n_heads``."""

    d_id: int = 32
    n_heads: int = 2
    senet_reduction: int = 2
    cross_depth: int = 2
    mlp_sizes: tuple[int, ...] = (128, 64)
    max_history_len: int = 50
    unknown_item_policy: str = "map"  # "map" -> OOV slot, "error" -> reject

    def __post_init__(self):
        if min(self.d_id, self.n_heads, self.senet_reduction, self.max_history_len) < 1:
            raise ValidationError("hyperparams: sizes must be positive")
        if self.cross_depth < 0:
            raise ValidationError("hyperparams: cross_depth must be >= 0")
        if self.d_id % self.n_heads != 0:
            raise ValidationError(
                f"hyperparams: d_id={self.d_id} not divisible by n_heads={self.n_heads}")
        if any(m < 1 for m in self.mlp_sizes):
            raise ValidationError("hyperparams: mlp layer sizes must be positive")
        if self.unknown_item_policy not in ("map", "error"):
            raise ValidationError(
                f"hyperparams: unknown_item_policy must be 'map' or 'error', "
                f"got {self.unknown_item_policy!r}")
        object.__setattr__(self, "mlp_sizes", tuple(int(m) for m in self.mlp_sizes))

    @property
    def d_head(self) -> int:
        return self.d_id // self.n_heads

    @property
    def senet_hidden(self) -> int:
        return math.ceil(N_FIELDS / self.senet_reduction)

    @property
    def cross_width(self) -> int:
        return N_FIELDS * self.d_id


class Vocab:
    """Item-id -> embedding-row mapping; rows 0/1 are padding and OOV."""

    def __init__(self, item_ids: Sequence[str]):
        self.index = {iid: i + N_RESERVED for i, iid in enumerate(item_ids)}
        if len(self.index) != len(item_ids):
            raise ValidationError("vocab: duplicate item ids")
        self.size = len(item_ids) + N_RESERVED

    def encode(self, item_id: str, policy: str) -> int:
        idx = self.index.get(item_id)
        if idx is None:
            if policy == "error":
                raise ValidationError(f"unknown item id {item_id!r}")
            return OOV_ID
        return idx


# ---------------------------------------------------------------------------
# layer forward/backward pairs (batched; caches carry what backward needs)
# ---------------------------------------------------------------------------

def attention_forward(tgt, hist, mask, heads, wo):
    """Multi-head target attention pooling.

    tgt [B,d], hist [B,L,d], mask [B,L]; heads is a list of (wq, wk, wv)
    each [d,dh]; wo [H*dh,d]. Rows whose mask is entirely false pool to
    the zero vector.
    """
    d_head = heads[0][0].shape[1]
    scale = 1.0 / math.sqrt(d_head)
    outs, per_head = [], []
    for wq, wk, wv in heads:
        q = tgt @ wq
        k = hist @ wk
        v = hist @ wv
        scores = np.einsum("bd,bld->bl", q, k) * scale
        probs = masked_softmax_rows(scores, mask)
        outs.append(np.einsum("bl,bld->bd", probs, v))
        per_head.append((q, k, v, probs))
    concat = np.concatenate(outs, axis=1)
    return concat @ wo, (concat, per_head)


def attention_backward(d_pooled, tgt, hist, heads, wo, cache):
    concat, per_head = cache
    d_wo = concat.T @ d_pooled
    d_concat = d_pooled @ wo.T
    d_head = heads[0][0].shape[1]
    scale = 1.0 / math.sqrt(d_head)
    b, l, d = hist.shape
    hist_flat = hist.reshape(b * l, d)
    d_tgt = np.zeros_like(tgt)
    d_hist = np.zeros_like(hist)
    d_heads = []
    for h, (wq, wk, wv) in enumerate(heads):
        q, k, v, probs = per_head[h]
        g_out = d_concat[:, h * d_head:(h + 1) * d_head]
        d_v = probs[:, :, None] * g_out[:, None, :]
        d_probs = np.einsum("bd,bld->bl", g_out, v)
        # softmax jacobian; all-zero (empty-history) rows stay zero
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=1, keepdims=True))
        d_scores *= scale
        d_q = np.einsum("bl,bld->bd", d_scores, k)
        d_k = d_scores[:, :, None] * q[:, None, :]
        d_tgt += d_q @ wq.T
        d_k_flat = d_k.reshape(b * l, d_head)
        d_v_flat = d_v.reshape(b * l, d_head)
        d_hist += (d_k_flat @ wk.T + d_v_flat @ wv.T).reshape(b, l, d)
        d_heads.append((tgt.T @ d_q, hist_flat.T @ d_k_flat, hist_flat.T @ d_v_flat))
    return d_tgt, d_hist, d_heads, d_wo


def senet_forward(fields, w1, w2):
    """Gate each field by sigmoid(relu(mean(field) @ w1) @ w2)."""
    z = fields.mean(axis=2)
    h1 = z @ w1
    r1 = relu(h1)
    gates = sigmoid(r1 @ w2)
    return fields * gates[:, :, None], (z, h1, r1, gates)


def senet_backward(d_out, fields, w1, w2, cache):
    z, h1, r1, gates = cache
    d_fields = d_out * gates[:, :, None]
    d_gates = (d_out * fields).sum(axis=2)
    d_h2 = d_gates * gates * (1.0 - gates)
    d_w2 = r1.T @ d_h2
    d_r1 = d_h2 @ w2.T
    d_h1 = d_r1 * (h1 > 0)
    d_w1 = z.T @ d_h1
    d_fields += (d_h1 @ w1.T)[:, :, None] / fields.shape[2]
    return d_fields, d_w1, d_w2


def cross_forward(x0, ws, bs):
    """x_{l+1} = x0 * (w_l . x_l) + b_l + x_l, starting from x_0 = x0."""
    xs = [x0]
    ss = []
    for w, bias in zip(ws, bs):
        s = xs[-1] @ w
        ss.append(s)
        xs.append(x0 * s[:, None] + bias + xs[-1])
    return xs[-1], (xs, ss)


def cross_backward(g, x0, ws, cache):
    xs, ss = cache
    d_ws = [None] * len(ws)
    d_bs = [None] * len(ws)
    d_x0 = np.zeros_like(x0)
    for layer in range(len(ws) - 1, -1, -1):
        d_bs[layer] = g.sum(axis=0)
        d_x0 += g * ss[layer][:, None]
        d_s = (g * x0).sum(axis=1)
        d_ws[layer] = d_s @ xs[layer]
        g = g + d_s[:, None] * ws[layer][None, :]
    return d_x0 + g, d_ws, d_bs


def bilinear_forward(fields, wb):
    """Pairwise field interactions (v_i @ wb) * v_j, pairs in (i, j) order."""
    n_fields = fields.shape[1]
    pairs = list(combinations(range(n_fields), 2))
    proj = {i: fields[:, i, :] @ wb for i in {p[0] for p in pairs}}
    out = np.concatenate([proj[i] * fields[:, j, :] for i, j in pairs], axis=1)
    return out, (pairs, proj)


def bilinear_backward(g, fields, wb, cache):
    pairs, proj = cache
    d = fields.shape[2]
    d_fields = np.zeros_like(fields)
    d_wb = np.zeros_like(wb)
    for idx, (i, j) in enumerate(pairs):
        g_ij = g[:, idx * d:(idx + 1) * d]
        d_fields[:, j, :] += proj[i] * g_ij
        d_ti = g_ij * fields[:, j, :]
        d_fields[:, i, :] += d_ti @ wb.T
        d_wb += fields[:, i, :].T @ d_ti
    return d_fields, d_wb


def mlp_forward(x, ws, bs, w_out, out_bias):
    acts = [x]
    pre = []
    h = x
    for w, bias in zip(ws, bs):
        zpre = h @ w + bias
        pre.append(zpre)
        h = relu(zpre)
        acts.append(h)
    logit = h @ w_out[:, 0] + out_bias[0]
    return logit, (acts, pre)


def mlp_backward(d_logit, ws, w_out, cache):
    acts, pre = cache
    d_w_out = (acts[-1].T @ d_logit)[:, None]
    d_out_bias = np.array([d_logit.sum()])
    g = d_logit[:, None] * w_out[:, 0][None, :]
    d_ws = [None] * len(ws)
    d_bs = [None] * len(ws)
    for i in range(len(ws) - 1, -1, -1):
        g = g * (pre[i] > 0)
        d_ws[i] = acts[i].T @ g
        d_bs[i] = g.sum(axis=0)
        g = g @ ws[i].T
    return g, d_ws, d_bs, d_w_out, d_out_bias


# ---------------------------------------------------------------------------
# single-sample entry points (thin wrappers over the batched kernels)
# ---------------------------------------------------------------------------

def target_attention(target_vec, history, mask, heads, wo):
    """Pool one history [L,d] against one target [d]; needs >=1 valid slot."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValidationError("target_attention: history is entirely masked")
    pooled, _ = attention_forward(np.asarray(target_vec, dtype=np.float64)[None, :],
                                  np.asarray(history, dtype=np.float64)[None, :, :],
                                  mask[None, :], heads, wo)
    return pooled[0]


def senet_reweight(fields, w1, w2):
    out, _ = senet_forward(np.asarray(fields, dtype=np.float64)[None], w1, w2)
    return out[0]


def cross_stack(x0, ws, bs):
    out, _ = cross_forward(np.asarray(x0, dtype=np.float64)[None], ws, bs)
    return out[0]


def bilinear_interaction(fields, wb):
    out, _ = bilinear_forward(np.asarray(fields, dtype=np.float64)[None], wb)
    return out[0]


# ---------------------------------------------------------------------------
# the assembled model
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    target_idx: np.ndarray          # int [B]
    history_idx: np.ndarray         # int [B, L], 0 = padding
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.target_idx.shape[0]


class ClickModel:
    """Binds hyperparameters, vocabulary, and the frozen fused table.

    Parameters live in a plain name->array dict so the optimizer and the
    checkpoint format can enumerate them; the model itself is stateless
    between calls.
    """

    def __init__(self, hyper: Hyperparams, fused_table: ItemEmbeddingTable):
        self.hyper = hyper
        self.vocab = Vocab(fused_table.item_ids)
        self.fused_dim = fused_table.fused_dim
        fused = np.zeros((self.vocab.size, self.fused_dim))
        fused[N_RESERVED:] = fused_table.vectors
        self.fused = fused  # frozen input, rows 0/1 stay zero

    # -- parameters ---------------------------------------------------------

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.hyper
        shapes: dict[str, tuple[int, ...]] = {
            "id_embedding": (self.vocab.size, h.d_id),
            "fused_projection": (self.fused_dim, h.d_id),
        }
        for head in range(h.n_heads):
            shapes[f"attn_wq_h{head}"] = (h.d_id, h.d_head)
            shapes[f"attn_wk_h{head}"] = (h.d_id, h.d_head)
            shapes[f"attn_wv_h{head}"] = (h.d_id, h.d_head)
        shapes["attn_wo"] = (h.n_heads * h.d_head, h.d_id)
        shapes["senet_w1"] = (N_FIELDS, h.senet_hidden)
        shapes["senet_w2"] = (h.senet_hidden, N_FIELDS)
        for layer in range(h.cross_depth):
            shapes[f"cross_w{layer}"] = (h.cross_width,)
            shapes[f"cross_b{layer}"] = (h.cross_width,)
        shapes["bilinear_w"] = (h.d_id, h.d_id)
        widths = [self._mlp_input_width(), *h.mlp_sizes]
        for i in range(len(h.mlp_sizes)):
            shapes[f"mlp_w{i}"] = (widths[i], widths[i + 1])
            shapes[f"mlp_b{i}"] = (widths[i + 1],)
        shapes["mlp_w_out"] = (widths[-1], 1)
        shapes["out_bias"] = (1,)
        return shapes

    def _mlp_input_width(self) -> int:
        h = self.hyper
        n_pairs = N_FIELDS * (N_FIELDS - 1) // 2
        return h.cross_width + n_pairs * h.d_id + h.cross_width

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        """Glorot-uniform draws in fixed name order from one seeded stream."""
        rng = np.random.default_rng((int(seed), 0))
        params: dict[str, np.ndarray] = {}
        for name, shape in self.param_shapes().items():
            fan_in = shape[0]
            fan_out = shape[-1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
        params["id_embedding"][PAD_ID] = 0.0  # padding row pinned to zero
        return params

    # -- record encoding ----------------------------------------------------

    def encode(self, records) -> Batch:
        """Map records to index arrays; history keeps the most recent items."""
        h = self.hyper
        n = len(records)
        tgt = np.zeros(n, dtype=np.int64)
        hist = np.zeros((n, h.max_history_len), dtype=np.int64)
        labels = np.zeros(n, dtype=np.float64)
        have_labels = True
        for i, rec in enumerate(records):
            tgt[i] = self.vocab.encode(rec.target, h.unknown_item_policy)
            recent = rec.history[-h.max_history_len:]
            for j, iid in enumerate(recent):
                hist[i, j] = self.vocab.encode(iid, h.unknown_item_policy)
            if rec.label is None:
                have_labels = False
            else:
                labels[i] = float(rec.label)
        return Batch(tgt, hist, labels if have_labels else None)

    # -- forward / backward -------------------------------------------------

    def _forward(self, params, target_idx, history_idx):
        h = self.hyper
        emb = params["id_embedding"]
        proj = params["fused_projection"]
        tgt_id = emb[target_idx]
        tgt_fused_raw = self.fused[target_idx]
        tgt_fused = tgt_fused_raw @ proj
        tgt_vec = tgt_id + tgt_fused
        hist_fused_raw = self.fused[history_idx]
        hist_emb = emb[history_idx] + hist_fused_raw @ proj
        mask = history_idx != PAD_ID

        heads = [(params[f"attn_wq_h{i}"], params[f"attn_wk_h{i}"], params[f"attn_wv_h{i}"])
                 for i in range(h.n_heads)]
        pooled, att_cache = attention_forward(tgt_vec, hist_emb, mask, heads, params["attn_wo"])

        fields_raw = np.stack([tgt_id, tgt_fused, pooled], axis=1)
        fields_se, se_cache = senet_forward(fields_raw, params["senet_w1"], params["senet_w2"])

        batch = target_idx.shape[0]
        x0 = fields_se.reshape(batch, -1)
        cross_ws = [params[f"cross_w{l}"] for l in range(h.cross_depth)]
        cross_bs = [params[f"cross_b{l}"] for l in range(h.cross_depth)]
        cross_out, cross_cache = cross_forward(x0, cross_ws, cross_bs)

        bil_out, bil_cache = bilinear_forward(fields_se, params["bilinear_w"])

        raw_flat = fields_raw.reshape(batch, -1)
        mlp_in = np.concatenate([cross_out, bil_out, raw_flat], axis=1)
        mlp_ws = [params[f"mlp_w{i}"] for i in range(len(h.mlp_sizes))]
        mlp_bs = [params[f"mlp_b{i}"] for i in range(len(h.mlp_sizes))]
        logit, mlp_cache = mlp_forward(mlp_in, mlp_ws, mlp_bs,
                                       params["mlp_w_out"], params["out_bias"])
        assert_finite(logit, "logit")
        probs = sigmoid(logit)
        cache = dict(
            tgt_id=tgt_id, tgt_fused_raw=tgt_fused_raw, tgt_fused=tgt_fused,
            tgt_vec=tgt_vec, hist_fused_raw=hist_fused_raw, hist_emb=hist_emb,
            heads=heads, att=att_cache, fields_raw=fields_raw, fields_se=fields_se,
            se=se_cache, x0=x0, cross_ws=cross_ws, cross=cross_cache,
            bil=bil_cache, mlp_ws=mlp_ws, mlp=mlp_cache, logit=logit,
        )
        return probs, cache

    def predict(self, params, batch: Batch, chunk: int = 2048) -> np.ndarray:
        """Click probabilities for a batch; chunked, read-only on params."""
        outs = []
        for start in range(0, len(batch), chunk):
            sl = slice(start, start + chunk)
            probs, _ = self._forward(params, batch.target_idx[sl], batch.history_idx[sl])
            outs.append(probs)
        return np.concatenate(outs) if outs else np.zeros(0)

    def forward_record(self, params, record) -> float:
        """Click probability for a single record."""
        batch = self.encode([record])
        probs, _ = self._forward(params, batch.target_idx, batch.history_idx)
        return float(probs[0])

    def loss(self, params, batch: Batch) -> float:
        probs, _ = self._forward(params, batch.target_idx, batch.history_idx)
        return float(np.mean(self._per_record_bce(probs, batch.labels)))

    @staticmethod
    def _per_record_bce(probs, labels):
        return -(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs))

    def backward(self, params, batch: Batch):
        """Mean-BCE loss and gradients for every named parameter.

        The padding embedding row always receives zero gradient; gradient
        names mirror parameter names exactly.
        """
        if len(batch) == 0:
            raise ValidationError("backward: empty batch")
        if batch.labels is None:
            raise ValidationError("backward: batch has no labels")
        probs, cache = self._forward(params, batch.target_idx, batch.history_idx)
        losses = self._per_record_bce(probs, batch.labels)
        finite = np.isfinite(losses)
        if not finite.all():
            bad = int(np.argmin(finite))
            raise NumericError(f"backward: non-finite loss at record index {bad}")
        loss = float(losses.mean())

        h = self.hyper
        batch_size = len(batch)
        d_logit = (probs - batch.labels) / batch_size

        g_mlp_in, d_mlp_ws, d_mlp_bs, d_w_out, d_out_bias = mlp_backward(
            d_logit, cache["mlp_ws"], params["mlp_w_out"], cache["mlp"])

        dx_w = h.cross_width
        n_pairs = N_FIELDS * (N_FIELDS - 1) // 2
        d_cross_out = g_mlp_in[:, :dx_w]
        d_bil_out = g_mlp_in[:, dx_w:dx_w + n_pairs * h.d_id]
        d_raw_flat = g_mlp_in[:, dx_w + n_pairs * h.d_id:]

        d_x0, d_cross_ws, d_cross_bs = cross_backward(
            d_cross_out, cache["x0"], cache["cross_ws"], cache["cross"])
        d_fields_se = d_x0.reshape(batch_size, N_FIELDS, h.d_id)

        d_fields_bil, d_wb = bilinear_backward(
            d_bil_out, cache["fields_se"], params["bilinear_w"], cache["bil"])
        d_fields_se = d_fields_se + d_fields_bil

        d_fields_raw, d_w1, d_w2 = senet_backward(
            d_fields_se, cache["fields_raw"], params["senet_w1"], params["senet_w2"],
            cache["se"])
        d_fields_raw = d_fields_raw + d_raw_flat.reshape(batch_size, N_FIELDS, h.d_id)

        d_tgt_id = d_fields_raw[:, 0, :]
        d_tgt_fused = d_fields_raw[:, 1, :]
        d_pooled = d_fields_raw[:, 2, :]

        d_tgt_vec, d_hist, d_heads, d_wo = attention_backward(
            d_pooled, cache["tgt_vec"], cache["hist_emb"], cache["heads"],
            params["attn_wo"], cache["att"])

        d_emb = np.zeros_like(params["id_embedding"])
        np.add.at(d_emb, batch.target_idx, d_tgt_id + d_tgt_vec)
        np.add.at(d_emb, batch.history_idx.reshape(-1),
                  d_hist.reshape(-1, h.d_id))
        d_emb[PAD_ID] = 0.0

        d_proj = cache["tgt_fused_raw"].T @ (d_tgt_fused + d_tgt_vec)
        d_proj += cache["hist_fused_raw"].reshape(-1, self.fused_dim).T @ d_hist.reshape(-1, h.d_id)

        grads: dict[str, np.ndarray] = {
            "id_embedding": d_emb,
            "fused_projection": d_proj,
        }
        for i, (d_wq, d_wk, d_wv) in enumerate(d_heads):
            grads[f"attn_wq_h{i}"] = d_wq
            grads[f"attn_wk_h{i}"] = d_wk
            grads[f"attn_wv_h{i}"] = d_wv
        grads["attn_wo"] = d_wo
        grads["senet_w1"] = d_w1
        grads["senet_w2"] = d_w2
        for layer in range(h.cross_depth):
            grads[f"cross_w{layer}"] = d_cross_ws[layer]
            grads[f"cross_b{layer}"] = d_cross_bs[layer]
        grads["bilinear_w"] = d_wb
        for i in range(len(h.mlp_sizes)):
            grads[f"mlp_w{i}"] = d_mlp_ws[i]
            grads[f"mlp_b{i}"] = d_mlp_bs[i]
        grads["mlp_w_out"] = d_w_out
        grads["out_bias"] = d_out_bias
        return loss, grads
