"""Positional encoding variants and their parameter tables.

Ten variants, referred to everywhere by these exact names:

    None        no positional information
    Abs         fixed sinusoidal table, added to the embeddings
    AbsCon      fixed sinusoidal table, concatenated then projected
    Learnt      trainable position table, added
    LearntCon   trainable position table, concatenated then projected
    Rotatory    trainable angle table driving a sin/cos row pattern, added
    RotatoryCon the same rows, concatenated then projected
    RMHA4       relative attention biases at clamped offsets (in-attention)
    RoPE        query/key pair rotation by position (in-attention)
    RopeOne     RoPE in the first attention block only

The first seven act on the input embeddings (vector encodings); the last
three act inside attention and are applied by the attention module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .errors import GraphError, UserError
from .numeric import Rng, TensorNode

VARIANTS = (
    "None",
    "Abs",
    "AbsCon",
    "Learnt",
    "LearntCon",
    "Rotatory",
    "RotatoryCon",
    "RMHA4",
    "RoPE",
    "RopeOne",
)
VECTOR_VARIANTS = ("Abs", "AbsCon", "Learnt", "LearntCon", "Rotatory", "RotatoryCon")
CON_VARIANTS = ("AbsCon", "LearntCon", "RotatoryCon")
PROJECTION_ACTIVATIONS = ("leaky", "silu", "identity")


def check_variant(name: str) -> str:
    if name not in VARIANTS:
        raise UserError(
            f"unknown encoding variant '{name}'; valid variants are: " + ", ".join(VARIANTS)
        )
    return name


def sinusoidal_table(max_len: int, model_dim: int) -> np.ndarray:
    """Classic interleaved sin/cos table, shape [max_len, model_dim]."""
    if model_dim % 2:
        raise UserError(f"sinusoidal table needs an even dimension, got {model_dim}")
    if max_len < 1:
        raise UserError(f"sinusoidal table needs max_len >= 1, got {max_len}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(model_dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / model_dim)
    table = np.empty((max_len, model_dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def rotatory_table(angle_table: TensorNode, model_dim: int) -> TensorNode:
    """Trainable trig rows: even columns (-1)^i sin, odd columns cos.

    angle_table has one column per pair (H = model_dim / 2); each entry is
    scaled by 2*pi / 10000^(2i/d) so a unit angle entry sweeps the full
    circle at the lowest frequency. Every (sin, cos) pair has unit norm by
    construction, whatever the angles are.
    """
    L, H = angle_table.shape
    if model_dim != 2 * H:
        raise GraphError(f"rotatory table with H={H} columns needs model_dim {2 * H}, got {model_dim}")
    i = np.arange(H, dtype=np.float64)
    freq = 2.0 * np.pi / np.power(10000.0, 2.0 * i / model_dim)
    sign = np.where(i % 2 == 0, 1.0, -1.0)
    theta = nm.mul(angle_table, nm.constant(freq))
    s = nm.mul(nm.sin(theta), nm.constant(sign))
    c = nm.cos(theta)
    return nm.interleave_last(s, c)


def rope_angles(positions, head_dim: int, base: float = 10000.0):
    """(cos, sin) arrays of shape [len(positions), head_dim], pairwise duplicated."""
    if head_dim % 2:
        raise GraphError(f"rotation needs an even head dim, got {head_dim}")
    pos = np.asarray(positions, dtype=np.float64)
    i = np.arange(head_dim // 2, dtype=np.float64)
    theta = pos[:, None] / np.power(base, 2.0 * i / head_dim)
    cos = np.repeat(np.cos(theta), 2, axis=-1)
    sin = np.repeat(np.sin(theta), 2, axis=-1)
    return cos, sin


def rope_rotate(x: TensorNode, base: float = 10000.0, positions=None) -> TensorNode:
    """Rotate each (2i, 2i+1) pair of the last axis by its position's angle.

    x is [..., L, head_dim]; position m gets angle m / base^(2i/head_dim).
    Two multiplies and one add: x*cos + swap(x)*sin.
    """
    L, d_h = x.shape[-2], x.shape[-1]
    if positions is None:
        positions = np.arange(L)
    cos, sin = rope_angles(positions, d_h, base)
    return nm.add(
        nm.mul(x, nm.constant(cos)),
        nm.mul(nm.pair_swap(x), nm.constant(sin)),
    )


def relative_index_matrix(length: int, clip: int) -> np.ndarray:
    """Table row index for every (query i, key j): clamp(j - i, -clip, clip) + clip."""
    j = np.arange(length)[None, :]
    i = np.arange(length)[:, None]
    return np.clip(j - i, -clip, clip) + clip


def relative_bias_tables(clip: int, head_dim: int) -> tuple[TensorNode, TensorNode]:
    """Trainable key/value bias tables, one row per clamped offset.

    Zero-initialized, so relative attention starts out identical to standard
    attention and the offsets are introduced by training.
    """
    if clip < 1:
        raise UserError(f"relative clip distance must be >= 1, got {clip}")
    rows = 2 * clip + 1
    a_k = nm.parameter(np.zeros((rows, head_dim)), name="rel_key_table")
    a_v = nm.parameter(np.zeros((rows, head_dim)), name="rel_value_table")
    return a_k, a_v


@dataclass
class EncodingSpec:
    """One variant plus exactly the tables and options that variant demands.

    Parameter fields stay None until initialize(rng) runs; afterwards the
    fields demanded by the variant are populated and all others remain None.
    """

    variant: str
    max_len: int
    model_dim: int
    clip_distance: int = 4
    rope_base: float = 10000.0
    use_value_bias: bool = True
    projection_activation: str = "leaky"
    abs_table: np.ndarray | None = field(default=None, repr=False)
    position_table: TensorNode | None = field(default=None, repr=False)
    angle_table: TensorNode | None = field(default=None, repr=False)
    projection_weight: TensorNode | None = field(default=None, repr=False)
    projection_bias: TensorNode | None = field(default=None, repr=False)

    def __post_init__(self):
        check_variant(self.variant)
        if self.max_len < 1:
            raise UserError(f"max_len must be >= 1, got {self.max_len}")
        if self.model_dim < 1:
            raise UserError(f"model_dim must be >= 1, got {self.model_dim}")
        if self.variant in ("Abs", "AbsCon", "Rotatory", "RotatoryCon") and self.model_dim % 2:
            raise UserError(f"variant {self.variant} needs an even model_dim, got {self.model_dim}")
        if self.variant == "RMHA4" and self.clip_distance < 1:
            raise UserError(f"clip_distance must be >= 1, got {self.clip_distance}")
        if self.projection_activation not in PROJECTION_ACTIVATIONS:
            raise UserError(
                f"projection activation '{self.projection_activation}' not one of "
                + ", ".join(PROJECTION_ACTIVATIONS)
            )

    # variant predicates -----------------------------------------------------
    @property
    def is_vector(self) -> bool:
        return self.variant in VECTOR_VARIANTS

    @property
    def is_concat(self) -> bool:
        return self.variant in CON_VARIANTS

    @property
    def is_relative(self) -> bool:
        return self.variant == "RMHA4"

    def rope_active(self, block_index: int) -> bool:
        return self.variant == "RoPE" or (self.variant == "RopeOne" and block_index == 0)

    # parameters ---------------------------------------------------------------
    def initialize(self, rng: Rng) -> "EncodingSpec":
        """Create the tables this variant trains (or caches, for Abs)."""
        L, d = self.max_len, self.model_dim
        if self.variant in ("Abs", "AbsCon"):
            self.abs_table = sinusoidal_table(L, d)
        if self.variant in ("Learnt", "LearntCon"):
            self.position_table = nm.parameter(rng.normal((L, d), scale=0.02), name="position_table")
        if self.variant in ("Rotatory", "RotatoryCon"):
            # U[0, 1) angle entries sweep the full circle at the base frequency
            self.angle_table = nm.parameter(rng.uniform((L, d // 2)), name="angle_table")
        if self.is_concat:
            limit = np.sqrt(6.0 / (3.0 * d))
            self.projection_weight = nm.parameter(
                rng.uniform((d, 2 * d), -limit, limit), name="projection_weight"
            )
            self.projection_bias = nm.parameter(np.zeros(d), name="projection_bias")
        return self

    def parameters(self) -> list[tuple[str, TensorNode]]:
        out = []
        for name in ("position_table", "angle_table", "projection_weight", "projection_bias"):
            node = getattr(self, name)
            if node is not None:
                out.append((name, node))
        return out

    def clamped_tables(self) -> list[TensorNode]:
        """Vector-encoding tables subject to the max-norm clamp."""
        return [t for t in (self.position_table, self.angle_table) if t is not None]

    def config_dict(self) -> dict:
        cfg = {"variant": self.variant, "max_len": self.max_len, "model_dim": self.model_dim}
        if self.variant == "RMHA4":
            cfg["clip_distance"] = self.clip_distance
            cfg["use_value_bias"] = self.use_value_bias
        if self.variant in ("RoPE", "RopeOne"):
            cfg["rope_base"] = self.rope_base
        if self.is_concat:
            cfg["projection_activation"] = self.projection_activation
        return cfg

    def encoding_rows(self, length: int) -> TensorNode:
        """The [length, d] table this vector variant adds or concatenates."""
        if self.variant in ("Abs", "AbsCon"):
            table = nm.constant(self.abs_table)
        elif self.variant in ("Learnt", "LearntCon"):
            table = self.position_table
        elif self.variant in ("Rotatory", "RotatoryCon"):
            table = rotatory_table(self.angle_table, self.model_dim)
        else:
            raise GraphError(f"variant {self.variant} has no encoding rows")
        if table is None:
            raise GraphError(f"variant {self.variant} used before initialize()")
        if length > self.max_len:
            raise GraphError(f"sequence length {length} exceeds max_len {self.max_len}")
        if length == self.max_len:
            return table
        return nm.gather(table, np.arange(length))


def _projection_activation(spec: EncodingSpec, x: TensorNode) -> TensorNode:
    if spec.projection_activation == "leaky":
        return nm.leaky_relu(x)
    if spec.projection_activation == "silu":
        return nm.silu(x)
    return x


def apply_vector_encoding(x: TensorNode, spec: EncodingSpec, mode: str | None = None) -> TensorNode:
    """Combine input embeddings [B, L, d] with the variant's position rows.

    mode defaults to what the variant dictates ("add", or "concat" for the
    Con variants, which project activation(W . [x ; rows] + b) back to d).
    The None variant returns x unchanged; in-attention variants are rejected.
    """
    if spec.variant == "None":
        return x
    if not spec.is_vector:
        raise GraphError(f"variant {spec.variant} is applied inside attention, not on embeddings")
    natural = "concat" if spec.is_concat else "add"
    if mode is None:
        mode = natural
    if mode != natural:
        raise GraphError(f"variant {spec.variant} uses mode '{natural}', not '{mode}'")
    B, L, d = x.shape
    if d != spec.model_dim:
        raise GraphError(f"input dim {d} does not match encoding dim {spec.model_dim}")
    rows = spec.encoding_rows(L)
    if mode == "add":
        return nm.add(x, rows)
    # broadcast rows across the batch, then concat and project
    rows_b = nm.add(rows, nm.constant(np.zeros_like(x.values)))
    cat = nm.concat([x, rows_b])
    projected = nm.add(nm.einsum2("blc,dc->bld", cat, spec.projection_weight), spec.projection_bias)
    return _projection_activation(spec, projected)
