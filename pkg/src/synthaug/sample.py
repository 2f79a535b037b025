"""Subset selection over scored synthetic pools.

Selectors are deterministic given (inputs, seed, tie_break): metric-based
top-n, greedy k-center over an embedding space, uniform random, and the
round-based incremental schedule that returns strictly nested id sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import QualityRecord
from .quality import HIGHER_IS_BETTER, LOWER_IS_BETTER

TIE_BY_ID = "by_id"
TIE_BY_SEED_SHUFFLE = "by_seed_shuffle"


@dataclass(frozen=True, slots=True)
class SelectionPlan:
    metric_name: str
    rounds: int
    increment: int
    seed: int = 0
    tie_break: str = TIE_BY_ID

    def __post_init__(self):
        if self.rounds <= 0 or self.increment <= 0:
            raise ValueError("rounds and increment must be positive")
        if self.tie_break not in (TIE_BY_ID, TIE_BY_SEED_SHUFFLE):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")


def _tie_rank(ids: Iterable[str], tie_break: str, seed: int) -> dict[str, int]:
    ordered = sorted(ids)
    if tie_break == TIE_BY_SEED_SHUFFLE:
        rng = np.random.default_rng(seed)
        ordered = [ordered[i] for i in rng.permutation(len(ordered))]
    return {image_id: i for i, image_id in enumerate(ordered)}


def top_n(records: Sequence[QualityRecord], n: int, polarity: str,
          tie_break: str = TIE_BY_ID, seed: int = 0) -> list[str]:
    """Ids of the n best-scoring images under the metric's polarity."""
    if n > len(records):
        raise ValueError(f"cannot select {n} from a pool of {len(records)}")
    if polarity not in (HIGHER_IS_BETTER, LOWER_IS_BETTER):
        raise ValueError(f"unknown polarity {polarity!r}")
    rank = _tie_rank((r.image_id for r in records), tie_break, seed)
    sign = 1.0 if polarity == LOWER_IS_BETTER else -1.0
    ordered = sorted(records, key=lambda r: (sign * r.score, rank[r.image_id]))
    return [r.image_id for r in ordered[:n]]


def coreset_select(embeddings: Mapping[str, np.ndarray], base_ids: Iterable[str],
                   pool_ids: Iterable[str], k: int) -> list[str]:
    """Greedy k-center: repeatedly take the pool point farthest (in minimum
    Euclidean distance) from the base set plus everything picked so far.

    With an empty base the first pick falls to the lexicographically first
    id (all distances are infinite). Ties always break by id. Greedy
    farthest-first gives the classical factor-2 bound on the covering
    radius relative to the optimal k centers.
    """
    base_ids = list(base_ids)
    pool_ids = sorted(pool_ids)
    if k > len(pool_ids):
        raise ValueError(f"cannot select {k} from a pool of {len(pool_ids)}")
    if k == 0:
        return []

    dims = {np.asarray(embeddings[i]).shape for i in [*base_ids, *pool_ids]}
    if len(dims) > 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")

    pool = np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in pool_ids])
    if base_ids:
        base = np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in base_ids])
        min_dist = np.sqrt(((pool[:, None, :] - base[None, :, :]) ** 2).sum(-1)).min(axis=1)
    else:
        min_dist = np.full(len(pool_ids), np.inf)

    chosen: list[str] = []
    taken = np.zeros(len(pool_ids), dtype=bool)
    for _ in range(k):
        best = -1
        for i in range(len(pool_ids)):  # pool_ids sorted, so first max wins ties
            if not taken[i] and (best < 0 or min_dist[i] > min_dist[best]):
                best = i
        taken[best] = True
        chosen.append(pool_ids[best])
        dist = np.sqrt(((pool - pool[best]) ** 2).sum(-1))
        min_dist = np.minimum(min_dist, dist)
    return chosen


def random_select(pool_ids: Iterable[str], n: int, seed: int) -> list[str]:
    """Uniform sample without replacement; deterministic per seed and
    independent of the input ordering."""
    ordered = sorted(pool_ids)
    if n > len(ordered):
        raise ValueError(f"cannot select {n} from a pool of {len(ordered)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    return [ordered[i] for i in perm[:n]]


def rounds_select(plan: SelectionPlan, *,
                  records: Sequence[QualityRecord] | None = None,
                  polarity: str | None = None,
                  embeddings: Mapping[str, np.ndarray] | None = None,
                  base_ids: Iterable[str] = (),
                  rescore: Callable[[int, list[str]], Sequence[QualityRecord]] | None = None,
                  ) -> list[list[str]]:
    """Incremental selection: `rounds` nested id sets of sizes increment,
    2*increment, ... Each round only extends the previous set, so sets stay
    nested even when a model-aware metric rescores between rounds."""
    total = plan.rounds * plan.increment

    if plan.metric_name == "random":
        pool = [r.image_id for r in records] if records is not None else list(embeddings or ())
        if total > len(pool):
            raise ValueError(f"plan needs {total} items, pool has {len(pool)}")
        full = random_select(pool, total, plan.seed)
        return [full[: plan.increment * (r + 1)] for r in range(plan.rounds)]

    if plan.metric_name == "coreset":
        if embeddings is None:
            raise ValueError("coreset selection needs embeddings")
        pool = [i for i in embeddings if i not in set(base_ids)]
        if total > len(pool):
            raise ValueError(f"plan needs {total} items, pool has {len(pool)}")
        full = coreset_select(embeddings, base_ids, pool, total)
        return [full[: plan.increment * (r + 1)] for r in range(plan.rounds)]

    if records is None or polarity is None:
        raise ValueError("metric-based selection needs scored records and polarity")
    if total > len(records):
        raise ValueError(f"plan needs {total} items, pool has {len(records)}")

    if rescore is None:
        full = top_n(records, total, polarity, plan.tie_break, plan.seed)
        return [full[: plan.increment * (r + 1)] for r in range(plan.rounds)]

    selected: list[str] = []
    out: list[list[str]] = []
    current = records
    for r in range(plan.rounds):
        if r > 0:
            current = rescore(r, list(selected))
        taken = set(selected)
        remaining = [rec for rec in current if rec.image_id not in taken]
        extension = top_n(remaining, plan.increment, polarity, plan.tie_break, plan.seed)
        selected.extend(extension)
        out.append(list(selected))
    return out
