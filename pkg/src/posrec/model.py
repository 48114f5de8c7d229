"""Sequential recommender over item histories.

Item embeddings (optionally fused with per-item attribute vectors), a
positional-encoding stage, a stack of causal transformer blocks, and a final
layer norm produce one hidden state per position; targets are scored by a
sigmoid dot product against their embeddings.  Training minimises masked
binary cross-entropy over (positive, sampled-negative) target pairs with
Adam, an optional per-row max-norm clamp on the embedding/encoding tables,
and a logarithmic validation schedule that keeps the best checkpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .attention import BlockConfig, TransformerBlock, causal_keep_mask
from .data import InteractionDataset, leave_one_out
from .encodings import EncodingSpec, apply_vector_encoding
from .errors import GraphError, TrainingDiverged, UserError
from .metrics import evaluate
from .numeric import AdamState, Rng, TensorNode, adam_step

CHECKPOINT_FORMAT_VERSION = 1
# validation runs at epoch 1, then whenever epoch >= 1.3 * last-evaluated epoch
EVAL_SCHEDULE_FACTOR = 1.3
LOSS_EPS = 1e-7

HISTORY_COLUMNS = ("epoch", "split", "loss", "Hit@10", "NDCG")


@dataclass
class ModelConfig:
    """Hyperparameters for one training run.

    `encoding` accepts either a variant name or a ready EncodingSpec; names
    are expanded against this config's dimensions, and the concat projection
    inherits `activation`.  `nmax` is the per-row norm bound on embedding and
    vector-encoding tables (None or NaN disables it).  `lr == 0` turns the
    run into a dry run: forward and backward execute, parameters never move.
    """

    d: int = 90
    g: int = 450
    blocks: int = 3
    heads: int = 3
    dropout: float = 0.0
    max_len: int = 50
    activation: str = "leaky"
    encoding: str | EncodingSpec = "None"
    lr: float = 1e-4
    nmax: float | None = None
    l2_weight: float = 0.0
    epochs: int = 200
    extra_epochs: int = 0
    batch_size: int = 128
    seed: int = 0
    eval_negatives: int = 100

    def __post_init__(self):
        if self.d < 1 or self.g < 1 or self.blocks < 1 or self.heads < 1:
            raise UserError("d, g, blocks and heads must all be positive")
        if self.max_len < 2:
            raise UserError(f"max_len must be at least 2, got {self.max_len}")
        if self.epochs < 1 or self.extra_epochs < 0:
            raise UserError("epochs must be >= 1 and extra_epochs >= 0")
        if self.batch_size < 1:
            raise UserError("batch_size must be positive")
        if self.lr < 0:
            raise UserError(f"lr must be >= 0, got {self.lr}")
        if self.l2_weight < 0:
            raise UserError("l2_weight must be >= 0")
        if self.eval_negatives < 0:
            raise UserError("eval_negatives must be >= 0 (0 ranks the full catalogue)")
        if self.nmax is not None:
            if math.isnan(self.nmax):
                self.nmax = None
            elif self.nmax <= 0:
                raise UserError(f"nmax must be positive or None, got {self.nmax}")
        if isinstance(self.encoding, str):
            self.encoding = EncodingSpec(
                variant=self.encoding,
                max_len=self.max_len,
                model_dim=self.d,
                projection_activation=self.activation,
            )
        else:
            if self.encoding.model_dim != self.d or self.encoding.max_len != self.max_len:
                raise UserError(
                    "encoding spec dimensions "
                    f"({self.encoding.max_len}, {self.encoding.model_dim}) "
                    f"do not match the model ({self.max_len}, {self.d})"
                )

    @property
    def total_epochs(self) -> int:
        return self.epochs + self.extra_epochs

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "g": self.g,
            "blocks": self.blocks,
            "heads": self.heads,
            "dropout": self.dropout,
            "max_len": self.max_len,
            "activation": self.activation,
            "encoding": self.encoding.config_dict(),
            "lr": self.lr,
            "nmax": self.nmax,
            "l2_weight": self.l2_weight,
            "epochs": self.epochs,
            "extra_epochs": self.extra_epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "eval_negatives": self.eval_negatives,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        enc = data.pop("encoding", "None")
        if isinstance(enc, dict):
            enc = EncodingSpec(
                variant=enc["variant"],
                max_len=enc.get("max_len", data.get("max_len", 50)),
                model_dim=enc.get("model_dim", data.get("d", 90)),
                clip_distance=enc.get("clip_distance", 4),
                rope_base=enc.get("rope_base", 10000.0),
                use_value_bias=enc.get("use_value_bias", True),
                projection_activation=enc.get("projection_activation", "leaky"),
            )
        known = {
            "d", "g", "blocks", "heads", "dropout", "max_len", "activation",
            "lr", "nmax", "l2_weight", "epochs", "extra_epochs", "batch_size",
            "seed", "eval_negatives",
        }
        unknown = set(data) - known
        if unknown:
            raise UserError(f"unknown model config keys: {', '.join(sorted(unknown))}")
        return cls(encoding=enc, **data)


@dataclass
class SequenceBatch:
    """Training rows in model id space: 0 is padding, item i maps to i + 1."""

    inputs: np.ndarray     # [B, L] int
    positives: np.ndarray  # [B, L] item following inputs[b, t]
    negatives: np.ndarray  # [B, L] sampled outside the user's history
    mask: np.ndarray       # [B, L] bool, True at real positions

    @classmethod
    def stack(cls, rows: list["SequenceBatch"]) -> "SequenceBatch":
        fields = ("inputs", "positives", "negatives", "mask")
        return cls(*(np.concatenate([getattr(r, f) for r in rows]) for f in fields))

    @property
    def positions(self) -> int:
        return int(self.mask.sum())


def _sample_negatives(count: int, num_items: int, forbidden: np.ndarray, rng: Rng) -> np.ndarray:
    """Uniform item ids avoiding `forbidden` (sorted unique), via rejection."""
    if num_items - forbidden.size <= 0:
        raise UserError("cannot sample negatives: the history covers the whole catalogue")
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        draw = rng.integers(0, num_items, (2 * (count - filled) + 4,))
        draw = draw[~np.isin(draw, forbidden)]
        take = min(count - filled, draw.size)
        out[filled:filled + take] = draw[:take]
        filled += take
    return out


def build_sequences(history, num_items: int, max_len: int, rng: Rng,
                    exclude=None) -> SequenceBatch | None:
    """One user's training row: inputs are the history minus its last item,
    positives the history shifted by one, negatives drawn uniformly outside
    `exclude` (default: the history itself).  Keeps the most recent max_len
    steps, left-pads shorter ones.  Histories under 2 events yield None.
    """
    history = np.asarray(history, dtype=np.int64)
    if history.size < 2:
        return None
    inputs = history[:-1][-max_len:]
    positives = history[1:][-max_len:]
    forbidden = history if exclude is None else np.asarray(list(exclude), dtype=np.int64)
    negatives = _sample_negatives(inputs.size, num_items, np.unique(forbidden), rng)

    n = inputs.size
    def pad(vals):
        row = np.zeros((1, max_len), dtype=np.int64)
        row[0, max_len - n:] = vals + 1
        return row

    mask = np.zeros((1, max_len), dtype=bool)
    mask[0, max_len - n:] = True
    return SequenceBatch(pad(inputs), pad(positives), pad(negatives), mask)


def score(hidden: TensorNode, target_emb: TensorNode) -> TensorNode:
    """Per-position relevance: sigmoid of the hidden/target dot product."""
    return nm.sigmoid(nm.dot_last(hidden, target_emb))


def bce_loss(batch: SequenceBatch, y_pos: TensorNode, y_neg: TensorNode,
             reduction: str = "sum") -> TensorNode:
    """Masked binary cross-entropy over (positive, negative) target pairs.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs.  "sum"
    totals over unpadded positions; "mean" divides by their count, which
    keeps the gradient scale comparable across batch sizes.
    """
    if reduction not in ("sum", "mean"):
        raise GraphError(f"unknown reduction '{reduction}'")
    mask = nm.constant(batch.mask.astype(np.float64))
    pos_term = nm.log(nm.clip(y_pos, LOSS_EPS, 1.0 - LOSS_EPS))
    neg_flip = nm.add_const(nm.scale(y_neg, -1.0), 1.0)
    neg_term = nm.log(nm.clip(neg_flip, LOSS_EPS, 1.0 - LOSS_EPS))
    total = nm.sum_all(nm.mul(mask, nm.add(pos_term, neg_term)))
    if reduction == "mean":
        positions = batch.positions
        if positions == 0:
            raise GraphError("mean reduction over a fully padded batch")
        return nm.scale(total, -1.0 / positions)
    return nm.scale(total, -1.0)


def apply_max_norm(tables: list[TensorNode], nmax: float | None) -> None:
    """Rescale any row with Euclidean norm above nmax back to exactly nmax."""
    if nmax is None:
        return
    if not nmax > 0:
        raise UserError(f"nmax must be positive or None, got {nmax}")
    for table in tables:
        vals = table.values
        norms = np.sqrt(np.sum(vals * vals, axis=-1, keepdims=True))
        # the relative band keeps already-clamped rows (norm = nmax up to
        # rounding) as fixed points, making the clamp exactly idempotent
        over = norms > nmax * (1.0 + 1e-12)
        if over.any():
            table.values = vals * np.where(over, nmax / np.where(over, norms, 1.0), 1.0)


class Model:
    """The encoder plus every parameter one training run owns."""

    def __init__(self, num_items: int, config: ModelConfig, rng: Rng, attributes=None):
        if num_items < 1:
            raise UserError("model needs at least one item")
        self.config = config
        self.num_items = num_items
        base = config.encoding
        self.spec = EncodingSpec(
            variant=base.variant,
            max_len=base.max_len,
            model_dim=base.model_dim,
            clip_distance=base.clip_distance,
            rope_base=base.rope_base,
            use_value_bias=base.use_value_bias,
            projection_activation=base.projection_activation,
        ).initialize(rng.child(1))

        d = config.d
        table = rng.child(0).normal((num_items + 1, d), scale=0.02)
        table[0] = 0.0  # padding row
        self.item_table = nm.parameter(table, name="item_table")

        self.attribute_table = None
        self.fuse_weight = None
        self.fuse_bias = None
        if attributes is not None:
            attributes = np.asarray(attributes, dtype=np.float64)
            if attributes.shape[0] != num_items:
                raise UserError(
                    f"attribute matrix covers {attributes.shape[0]} items, dataset has {num_items}"
                )
            rows = np.zeros((num_items + 1, attributes.shape[1]))
            rows[1:] = attributes
            self.attribute_table = nm.constant(rows, name="attribute_table")
            fan_in = d + attributes.shape[1]
            limit = math.sqrt(6.0 / (fan_in + d))
            self.fuse_weight = nm.parameter(
                rng.child(2).uniform((d, fan_in), -limit, limit), name="fuse_weight"
            )
            self.fuse_bias = nm.parameter(np.zeros(d), name="fuse_bias")

        block_cfgs = [
            BlockConfig(d, config.heads, config.g, dropout=config.dropout,
                        activation=config.activation, block_index=i)
            for i in range(config.blocks)
        ]
        self.rel_tables = None
        if self.spec.is_relative:
            from .encodings import relative_bias_tables
            self.rel_tables = relative_bias_tables(base.clip_distance, block_cfgs[0].head_dim)
        self.blocks = [
            TransformerBlock(cfg, self.spec, rng.child(10 + i), rel_tables=self.rel_tables)
            for i, cfg in enumerate(block_cfgs)
        ]
        self.final_gain = nm.parameter(np.ones(d), name="final_gain")
        self.final_bias = nm.parameter(np.zeros(d), name="final_bias")

    def parameters(self) -> list[tuple[str, TensorNode]]:
        out = [("item_table", self.item_table)]
        if self.fuse_weight is not None:
            out += [("fuse_weight", self.fuse_weight), ("fuse_bias", self.fuse_bias)]
        out += self.spec.parameters()
        if self.rel_tables is not None:
            out += [(t.name, t) for t in self.rel_tables]
        for block in self.blocks:
            out += block.parameters()
        out += [("final_gain", self.final_gain), ("final_bias", self.final_bias)]
        return out

    def clamped_tables(self) -> list[TensorNode]:
        return [self.item_table] + self.spec.clamped_tables()

    def hidden_states(self, inputs: np.ndarray, mask: np.ndarray,
                      rng: Rng | None = None, train: bool = False) -> TensorNode:
        """[B, L, d] hidden states for inputs already in model id space."""
        ids = np.asarray(inputs, dtype=np.int64)
        x = nm.gather(self.item_table, ids)
        if self.fuse_weight is not None:
            attrs = nm.gather(self.attribute_table, ids)
            fused = nm.einsum2("blc,dc->bld", nm.concat([x, attrs]), self.fuse_weight)
            x = nm.add(fused, self.fuse_bias)
        if self.spec.is_vector or self.spec.variant == "None":
            x = apply_vector_encoding(x, self.spec)
        x = nm.dropout(x, self.config.dropout, rng.child(0) if rng else None, train)
        keep = causal_keep_mask(mask)
        for i, block in enumerate(self.blocks):
            x = block(x, keep, rng.child(i + 1) if rng else None, train)
        return nm.layer_norm(x, self.final_gain, self.final_bias)

    def final_hidden(self, contexts) -> np.ndarray:
        """Graph-free [B, d] hidden state at each context's last position.

        Contexts are dataset item-id sequences; longer ones keep their most
        recent max_len events.
        """
        max_len = self.config.max_len
        batch = len(contexts)
        inputs = np.zeros((batch, max_len), dtype=np.int64)
        mask = np.zeros((batch, max_len), dtype=bool)
        for b, ctx in enumerate(contexts):
            ctx = np.asarray(ctx, dtype=np.int64)[-max_len:]
            if ctx.size == 0:
                raise UserError("cannot score an empty context")
            inputs[b, max_len - ctx.size:] = ctx + 1
            mask[b, max_len - ctx.size:] = True
        with nm.no_graph():
            hidden = self.hidden_states(inputs, mask)
        return hidden.values[:, -1, :]

    def snapshot(self) -> dict:
        return {name: node.values.copy() for name, node in self.parameters()}

    def restore(self, values: dict) -> None:
        for name, node in self.parameters():
            node.values = values[name].copy()


@dataclass
class MetricRecord:
    epoch: int
    split: str   # train | valid | test
    loss: float  # NaN on eval rows
    hit: float   # percentage scale; NaN on train rows
    ndcg: float


def _fmt(value: float) -> str:
    return f"{value:.6f}" if np.isfinite(value) else "NaN"


def write_history_tsv(history: list[MetricRecord], path: str) -> None:
    lines = ["\t".join(HISTORY_COLUMNS)]
    for r in history:
        lines.append(f"{r.epoch}\t{r.split}\t{_fmt(r.loss)}\t{_fmt(r.hit)}\t{_fmt(r.ndcg)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    model: Model
    history: list[MetricRecord] = field(repr=False)
    best_epoch: int
    valid_hit: float   # percentage scale, NaN when no validation rows exist
    valid_ndcg: float
    test_hit: float
    test_ndcg: float
    skipped_users: int


def train(config: ModelConfig, dataset: InteractionDataset, progress=None) -> TrainResult:
    """Full training run: leave-one-out split, Adam over shuffled user
    batches, max-norm clamp, logarithmic validation schedule, best-checkpoint
    test metrics.  Deterministic given config.seed; NaN loss aborts.
    """
    split = leave_one_out(dataset)
    root = Rng(config.seed)
    model = Model(dataset.num_items, config, root.child(0), attributes=dataset.attributes)
    nodes = [node for _, node in model.parameters()]
    state = AdamState.for_params(nodes)

    eligible = [u for u, seq in enumerate(split.train_sequences) if seq.size >= 2]
    skipped = dataset.num_users - len(eligible)
    if not eligible:
        raise UserError("no user has a training sequence of at least 2 events")

    neg_root = root.child(1)
    shuffle_root = root.child(2)
    drop_root = root.child(3)
    valid_root = root.child(4)
    test_rng = root.child(5)

    history: list[MetricRecord] = []
    best_values = None
    best_epoch = 0
    best_hit = -1.0
    best_ndcg = float("nan")
    last_eval = 0
    total = config.total_epochs

    for epoch in range(1, total + 1):
        order = shuffle_root.child(epoch).permutation(len(eligible))
        neg_epoch = neg_root.child(epoch)
        drop_epoch = drop_root.child(epoch)
        loss_sum = 0.0
        loss_positions = 0
        for start in range(0, len(order), config.batch_size):
            users = [eligible[i] for i in order[start:start + config.batch_size]]
            rows = [
                build_sequences(
                    split.train_sequences[u], dataset.num_items, config.max_len,
                    neg_epoch.child(u), exclude=dataset.sequences[u],
                )
                for u in users
            ]
            batch = SequenceBatch.stack(rows)
            hidden = model.hidden_states(
                batch.inputs, batch.mask, rng=drop_epoch.child(start), train=True
            )
            y_pos = score(hidden, nm.gather(model.item_table, batch.positives))
            y_neg = score(hidden, nm.gather(model.item_table, batch.negatives))
            loss = bce_loss(batch, y_pos, y_neg, reduction="mean")
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    epoch,
                    f"loss became {value} (encoding={config.encoding.variant}, "
                    f"lr={config.lr}, seed={config.seed})",
                )
            loss.backward()
            if config.l2_weight > 0.0:
                for node in nodes:
                    grad = node.adjoint if node.adjoint is not None else 0.0
                    node.adjoint = grad + 2.0 * config.l2_weight * node.values
            if config.lr > 0.0:
                adam_step(nodes, state, lr=config.lr)
                apply_max_norm(model.clamped_tables(), config.nmax)
            else:  # dry run: gradients computed, parameters untouched
                for node in nodes:
                    node.adjoint = None
            loss_sum += value * batch.positions
            loss_positions += batch.positions

        epoch_loss = loss_sum / loss_positions
        history.append(MetricRecord(epoch, "train", epoch_loss, float("nan"), float("nan")))

        if epoch == 1 or epoch == total or epoch >= last_eval * EVAL_SCHEDULE_FACTOR:
            last_eval = epoch
            if split.valid:
                result = evaluate(model, split.valid, config.eval_negatives,
                                  valid_root.child(epoch))
                hit, ndcg = 100.0 * result.hit_at_10, 100.0 * result.ndcg
                history.append(MetricRecord(epoch, "valid", float("nan"), hit, ndcg))
                if hit > best_hit:
                    best_hit, best_ndcg, best_epoch = hit, ndcg, epoch
                    best_values = model.snapshot()
                if progress:
                    progress(f"epoch {epoch}: loss {epoch_loss:.4f}  "
                             f"valid Hit@10 {hit:.2f}  NDCG {ndcg:.2f}")
            elif progress:
                progress(f"epoch {epoch}: loss {epoch_loss:.4f}")

    if best_values is None:  # nothing to validate on: final parameters win
        best_epoch = total
        best_hit = best_ndcg = float("nan")
        best_values = model.snapshot()
    model.restore(best_values)

    test_result = evaluate(model, split.test, config.eval_negatives, test_rng)
    test_hit, test_ndcg = 100.0 * test_result.hit_at_10, 100.0 * test_result.ndcg
    history.append(MetricRecord(best_epoch, "test", float("nan"), test_hit, test_ndcg))
    if progress:
        progress(f"best epoch {best_epoch}: test Hit@10 {test_hit:.2f}  NDCG {test_ndcg:.2f}")
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        valid_hit=best_hit,
        valid_ndcg=best_ndcg,
        test_hit=test_hit,
        test_ndcg=test_ndcg,
        skipped_users=skipped,
    )


def save_checkpoint(model: Model, path: str) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "num_items": model.num_items,
        "has_attributes": model.attribute_table is not None,
        "config": model.config.as_dict(),
    }
    arrays = {f"param:{name}": node.values for name, node in model.parameters()}
    if model.attribute_table is not None:
        arrays["attributes"] = model.attribute_table.values[1:]
    np.savez(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str) -> Model:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as err:
        raise UserError(f"cannot read checkpoint {path}: {err}") from None
    with archive:
        if "__meta__" not in archive:
            raise UserError(f"{path} is not a model checkpoint")
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise UserError(
                f"checkpoint format {meta.get('format_version')} is not supported"
            )
        config = ModelConfig.from_dict(meta["config"])
        attributes = archive["attributes"] if meta["has_attributes"] else None
        model = Model(meta["num_items"], config, Rng(config.seed), attributes=attributes)
        for name, node in model.parameters():
            key = f"param:{name}"
            if key not in archive:
                raise UserError(f"checkpoint is missing parameter '{name}'")
            stored = archive[key]
            if stored.shape != node.values.shape:
                raise UserError(
                    f"checkpoint parameter '{name}' has shape {stored.shape}, "
                    f"expected {node.values.shape}"
                )
            node.values = stored.astype(np.float64)
    return model
