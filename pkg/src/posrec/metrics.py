"""Hit@10 / NDCG under sampled-candidate ranking.

Each user's ground-truth next item is ranked against sampled negatives by
dot product with the model's final hidden state (the sigmoid is monotone, so
ranks are unaffected by skipping it).  Ties break against the ground truth:
a constant scorer lands at the bottom, not the top.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UserError
from .numeric import Rng

NDCG_CUTOFF = 10


@dataclass
class EvalResult:
    hit_at_10: float          # fraction of users with rank <= 10
    ndcg: float
    per_user_ranks: list[int] = field(repr=False)
    candidate_count: int      # typical candidate-list size (rounded mean)
    seed: int

    def tsv(self) -> str:
        header = "Hit@10\tNDCG\tusers\tcandidates\tseed"
        row = (f"{100.0 * self.hit_at_10:.4f}\t{100.0 * self.ndcg:.4f}\t"
               f"{len(self.per_user_ranks)}\t{self.candidate_count}\t{self.seed}")
        return header + "\n" + row + "\n"


def ndcg_single(rank: int) -> float:
    """DCG of one relevant item at `rank`, cutoff 10, against an ideal of 1."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank > NDCG_CUTOFF:
        return 0.0
    return 1.0 / np.log2(rank + 1.0)


def _rank(hidden_row: np.ndarray, item_values: np.ndarray, candidates: np.ndarray) -> int:
    # candidates[0] is the ground truth; +1 shifts into model id space
    scores = item_values[candidates + 1] @ hidden_row
    return 1 + int(np.sum(scores[1:] >= scores[0]))


def rank_candidates(model, context, ground_truth: int, negatives) -> int:
    """1-based pessimistic rank of the ground truth among itself + negatives."""
    hidden = model.final_hidden([context])[0]
    candidates = np.concatenate(([ground_truth], np.asarray(negatives, dtype=np.int64)))
    return _rank(hidden, model.item_table.values, candidates)


def _negatives_for(row, num_items: int, num_negatives: int | None, rng: Rng) -> np.ndarray:
    """Distinct items outside the context and ground truth.

    num_negatives of None or 0 means the full remaining catalogue; a pool
    smaller than the request is returned whole.
    """
    seen = np.concatenate((np.asarray(row.context, dtype=np.int64), [row.target]))
    pool = np.setdiff1d(np.arange(num_items, dtype=np.int64), seen)
    if pool.size == 0:
        raise UserError(f"user {row.user}: no candidate items outside the history")
    if not num_negatives or num_negatives >= pool.size:
        return pool
    return rng.choice(pool, num_negatives, replace=False)


def evaluate(model, rows, num_negatives: int | None, rng: Rng, batch_size: int = 256) -> EvalResult:
    """Average Hit@10 and NDCG over evaluation rows.

    Deterministic given rng: user i always draws from rng.child(i), so the
    result is independent of batching.
    """
    if not rows:
        raise UserError("evaluation split is empty")
    ranks = []
    counts = []
    item_values = model.item_table.values
    for start in range(0, len(rows), batch_size):
        chunk = rows[start:start + batch_size]
        hidden = model.final_hidden([row.context for row in chunk])
        for j, row in enumerate(chunk):
            negatives = _negatives_for(row, model.num_items, num_negatives,
                                       rng.child(start + j))
            candidates = np.concatenate(([row.target], negatives))
            ranks.append(_rank(hidden[j], item_values, candidates))
            counts.append(candidates.size)
    hit = float(np.mean([r <= NDCG_CUTOFF for r in ranks]))
    ndcg = float(np.mean([ndcg_single(r) for r in ranks]))
    return EvalResult(
        hit_at_10=hit,
        ndcg=ndcg,
        per_user_ranks=ranks,
        candidate_count=int(round(np.mean(counts))),
        seed=rng.seed,
    )
