"""Causal multi-head attention and pre-layer-norm residual blocks.

Standard attention, its relative-bias variant (key/value offset tables), and
the query/key pair rotation are all wired through one block so every encoding
variant runs through identical plumbing. Masks are boolean keep-matrices;
disallowed scores become -inf before the softmax and fully masked rows come
out as zeros, never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .encodings import EncodingSpec, relative_index_matrix, rope_rotate
from .errors import UserError
from .numeric import Rng, TensorNode

ACTIVATIONS = ("leaky", "silu")


@dataclass
class BlockConfig:
    model_dim: int
    heads: int
    ff_hidden: int
    dropout: float = 0.0
    activation: str = "leaky"
    block_index: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise UserError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if self.activation not in ACTIVATIONS:
            raise UserError(f"activation '{self.activation}' not one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise UserError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


def scaled_dot_attention(q, k, v, keep_mask, return_weights: bool = False):
    """softmax(QK^T / sqrt(d_h)) V with boolean keep mask, all [B, h, L, d_h]."""
    d_h = q.shape[-1]
    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d_h))
    weights = nm.softmax_last(nm.mask_fill(scores, keep_mask))
    out = nm.matmul(weights, v)
    return (out, weights) if return_weights else out


def relative_attention(q, k, v, a_k, a_v, keep_mask, use_value_bias: bool = True,
                       return_weights: bool = False):
    """Attention with trainable biases indexed by the clamped offset j - i.

    a_k rows enter the pre-softmax scores through a dot with the query;
    a_v rows are added to the values under the attention weights.
    """
    d_h = q.shape[-1]
    L = q.shape[-2]
    clip = (a_k.shape[0] - 1) // 2
    idx = relative_index_matrix(L, clip)
    key_bias = nm.gather(a_k, idx)  # [L, L, d_h]
    scores = nm.add(
        nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))),
        nm.einsum2("bhid,ijd->bhij", q, key_bias),
    )
    scores = nm.scale(scores, 1.0 / np.sqrt(d_h))
    weights = nm.softmax_last(nm.mask_fill(scores, keep_mask))
    out = nm.matmul(weights, v)
    if use_value_bias:
        value_bias = nm.gather(a_v, idx)
        out = nm.add(out, nm.einsum2("bhij,ijd->bhid", weights, value_bias))
    return (out, weights) if return_weights else out


def _activation(name: str, x: TensorNode) -> TensorNode:
    return nm.leaky_relu(x) if name == "leaky" else nm.silu(x)


def _xavier(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform((fan_in, fan_out), -limit, limit)


class TransformerBlock:
    """Pre-layer-norm residual block: attention sublayer then feed-forward.

    x -> x + drop(attn(LN(x)))  -> h + drop(W2 act(W1 LN(h) + b1) + b2)

    Relative bias tables are shared across blocks, so they are passed in by
    the model rather than owned here.
    """

    def __init__(self, cfg: BlockConfig, spec: EncodingSpec, rng: Rng,
                 rel_tables: tuple[TensorNode, TensorNode] | None = None):
        d = cfg.model_dim
        if spec.rope_active(cfg.block_index) and cfg.head_dim % 2:
            raise UserError(
                f"rotation needs an even head dim, got {cfg.head_dim} "
                f"(model_dim {d} / heads {cfg.heads})"
            )
        if spec.is_relative and rel_tables is None:
            raise UserError("relative encoding requires shared bias tables")
        self.cfg = cfg
        self.spec = spec
        self.rel_tables = rel_tables
        g = cfg.ff_hidden
        pre = f"block{cfg.block_index}."
        self.ln1_gain = nm.parameter(np.ones(d), name=pre + "ln1_gain")
        self.ln1_bias = nm.parameter(np.zeros(d), name=pre + "ln1_bias")
        self.w_query = nm.parameter(_xavier(rng, d, d), name=pre + "w_query")
        self.w_key = nm.parameter(_xavier(rng, d, d), name=pre + "w_key")
        self.w_value = nm.parameter(_xavier(rng, d, d), name=pre + "w_value")
        self.w_out = nm.parameter(_xavier(rng, d, d), name=pre + "w_out")
        self.b_query = nm.parameter(np.zeros(d), name=pre + "b_query")
        self.b_key = nm.parameter(np.zeros(d), name=pre + "b_key")
        self.b_value = nm.parameter(np.zeros(d), name=pre + "b_value")
        self.b_out = nm.parameter(np.zeros(d), name=pre + "b_out")
        self.ln2_gain = nm.parameter(np.ones(d), name=pre + "ln2_gain")
        self.ln2_bias = nm.parameter(np.zeros(d), name=pre + "ln2_bias")
        self.w_ff1 = nm.parameter(_xavier(rng, d, g), name=pre + "w_ff1")
        self.b_ff1 = nm.parameter(np.zeros(g), name=pre + "b_ff1")
        self.w_ff2 = nm.parameter(_xavier(rng, g, d), name=pre + "w_ff2")
        self.b_ff2 = nm.parameter(np.zeros(d), name=pre + "b_ff2")

    def parameters(self) -> list[tuple[str, TensorNode]]:
        names = (
            "ln1_gain", "ln1_bias",
            "w_query", "b_query", "w_key", "b_key", "w_value", "b_value",
            "w_out", "b_out",
            "ln2_gain", "ln2_bias",
            "w_ff1", "b_ff1", "w_ff2", "b_ff2",
        )
        return [(getattr(self, n).name, getattr(self, n)) for n in names]

    def _split_heads(self, x: TensorNode, B: int, L: int) -> TensorNode:
        h, d_h = self.cfg.heads, self.cfg.head_dim
        return nm.transpose(nm.reshape(x, (B, L, h, d_h)), (0, 2, 1, 3))

    def __call__(self, x: TensorNode, keep_mask, rng: Rng | None = None,
                 train: bool = False) -> TensorNode:
        cfg = self.cfg
        B, L, d = x.shape
        normed = nm.layer_norm(x, self.ln1_gain, self.ln1_bias)
        q = self._split_heads(nm.add(nm.matmul(normed, self.w_query), self.b_query), B, L)
        k = self._split_heads(nm.add(nm.matmul(normed, self.w_key), self.b_key), B, L)
        v = self._split_heads(nm.add(nm.matmul(normed, self.w_value), self.b_value), B, L)
        if self.spec.rope_active(cfg.block_index):
            q = rope_rotate(q, base=self.spec.rope_base)
            k = rope_rotate(k, base=self.spec.rope_base)
        if self.spec.is_relative:
            a_k, a_v = self.rel_tables
            attended = relative_attention(
                q, k, v, a_k, a_v, keep_mask, use_value_bias=self.spec.use_value_bias
            )
        else:
            attended = scaled_dot_attention(q, k, v, keep_mask)
        merged = nm.reshape(nm.transpose(attended, (0, 2, 1, 3)), (B, L, d))
        attn_out = nm.add(nm.matmul(merged, self.w_out), self.b_out)
        attn_out = nm.dropout(attn_out, cfg.dropout, rng.child(0) if rng else None, train)
        x = nm.add(x, attn_out)

        normed = nm.layer_norm(x, self.ln2_gain, self.ln2_bias)
        hidden = _activation(cfg.activation, nm.add(nm.matmul(normed, self.w_ff1), self.b_ff1))
        ff_out = nm.add(nm.matmul(hidden, self.w_ff2), self.b_ff2)
        ff_out = nm.dropout(ff_out, cfg.dropout, rng.child(1) if rng else None, train)
        return nm.add(x, ff_out)


def causal_keep_mask(valid: np.ndarray) -> np.ndarray:
    """[B, 1, L, L] boolean: key j visible from query i iff j <= i and j is real."""
    B, L = valid.shape
    tri = np.tril(np.ones((L, L), dtype=bool))
    return (tri[None, :, :] & valid[:, None, :].astype(bool))[:, None, :, :]
