"""Samplers that pick training subsets from a pool, the geometric quantities
they optimize, and exhaustive oracles for certifying them on small instances.

All samplers are deterministic in their seed, break ties by smallest row
index, and report per-step fill/separation traces. Distances are Euclidean.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError
from .rng import child_seed, rng_from_seed

STRATEGY_KINDS = ("fps", "random", "facility_location", "kmedoidspp", "fps_then_random")

# Above this pool size the facility-location greedy scores candidates in
# chunks instead of precomputing the full distance matrix.
_DENSE_MATRIX_LIMIT = 8192

_BRUTEFORCE_LIMIT = 10**6


@dataclass(frozen=True)
class SelectionResult:
    """Ordered selected row indices plus per-step distance traces.

    ``fill_trace[t]`` is the fill distance after ``t + 1`` selections.
    ``sep_trace[t]`` is the separation distance of the first ``t + 1``
    selections; it is undefined (NaN) at step 0.
    """

    indices: np.ndarray
    fill_trace: np.ndarray
    sep_trace: np.ndarray
    strategy: str
    seed: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        fill = np.ascontiguousarray(self.fill_trace, dtype=np.float64)
        sep = np.ascontiguousarray(self.sep_trace, dtype=np.float64)
        if idx.ndim != 1 or idx.size < 1:
            raise DataError("indices must be a non-empty 1-D sequence")
        if np.unique(idx).size != idx.size:
            raise DataError("selected indices must be distinct")
        if (idx < 0).any():
            raise DataError("selected indices must be non-negative")
        if fill.shape != idx.shape or sep.shape != idx.shape:
            raise DataError("traces must have one entry per selection step")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "fill_trace", fill)
        object.__setattr__(self, "sep_trace", sep)

    def to_json(self, include_traces: bool = True) -> str:
        payload: dict = {
            "strategy": self.strategy,
            "seed": self.seed,
            "indices": [int(i) for i in self.indices],
        }
        if include_traces:
            payload["fill_trace"] = [float(v) for v in self.fill_trace]
            payload["sep_trace"] = [None if math.isnan(v) else float(v) for v in self.sep_trace]
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        payload = json.loads(text)
        indices = np.asarray(payload["indices"], dtype=np.int64)
        fill = np.asarray(payload.get("fill_trace", [math.nan] * indices.size))
        sep = np.asarray(
            [math.nan if v is None else v for v in payload.get("sep_trace", [None] * indices.size)]
        )
        return cls(
            indices=indices,
            fill_trace=fill,
            sep_trace=sep,
            strategy=payload["strategy"],
            seed=int(payload["seed"]),
        )


@dataclass(frozen=True)
class StrategySpec:
    """Which sampler to run and its options."""

    kind: str
    switch_fraction: float | None = None
    start_index: int | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise DataError(f"unknown strategy {self.kind!r}; valid: {STRATEGY_KINDS}")
        if self.kind == "fps_then_random":
            if self.switch_fraction is None:
                raise DataError("fps_then_random requires switch_fraction")
            if not 0.0 < self.switch_fraction < 1.0:
                raise DataError("switch_fraction must be in (0, 1)")
        elif self.switch_fraction is not None:
            raise DataError("switch_fraction is only valid for fps_then_random")

    @property
    def label(self) -> str:
        if self.kind == "fps_then_random":
            return f"fps_then_random:{self.switch_fraction:g}"
        return self.kind


# ---------------------------------------------------------------------------
# Distance plumbing
#
# All fill/separation quantities go through _sq_dists_to_row so that traces
# recorded incrementally by the samplers agree bit-for-bit with values
# recomputed from scratch.
# ---------------------------------------------------------------------------


def _as_pool(pool) -> np.ndarray:
    arr = np.ascontiguousarray(pool, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"pool must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("pool contains NaN or Inf entries")
    return arr


def _row_norms_sq(pool: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", pool, pool)


def _sq_dists_to_row(pool: np.ndarray, norms_sq: np.ndarray, row: int) -> np.ndarray:
    d2 = norms_sq - 2.0 * (pool @ pool[row])
    d2 += norms_sq[row]
    np.maximum(d2, 0.0, out=d2)
    d2[row] = 0.0  # exact self-distance despite cancellation in the expansion
    return d2


def _check_selected(pool: np.ndarray, selected) -> np.ndarray:
    idx = np.ascontiguousarray(selected, dtype=np.int64)
    if idx.ndim != 1 or idx.size < 1:
        raise DataError("selected must be a non-empty index sequence")
    if (idx < 0).any() or (idx >= pool.shape[0]).any():
        raise DataError("selected index out of range")
    return idx


def fill_distance(pool, selected) -> float:
    """Largest distance from any pool row to its nearest selected row."""
    pool = _as_pool(pool)
    idx = _check_selected(pool, selected)
    norms_sq = _row_norms_sq(pool)
    best = _sq_dists_to_row(pool, norms_sq, int(idx[0]))
    for i in idx[1:]:
        np.minimum(best, _sq_dists_to_row(pool, norms_sq, int(i)), out=best)
    return float(np.sqrt(best.max()))


def separation_distance(pool, selected) -> float:
    """Half the minimum pairwise distance among the selected rows."""
    pool = _as_pool(pool)
    idx = _check_selected(pool, selected)
    if idx.size < 2:
        raise DataError("separation distance needs at least 2 selected rows")
    norms_sq = _row_norms_sq(pool)
    smallest_sq = math.inf
    for s in range(idx.size - 1):
        d2 = _sq_dists_to_row(pool, norms_sq, int(idx[s]))
        smallest_sq = min(smallest_sq, float(d2[idx[s + 1 :]].min()))
    return 0.5 * math.sqrt(smallest_sq)


def nn_distances(pool) -> tuple[np.ndarray, float]:
    """Distance from every row to its nearest other row, plus the mean.

    The mean is the reference level against which isolated points are judged.
    """
    pool = _as_pool(pool)
    n = pool.shape[0]
    if n < 2:
        raise DataError("nearest-neighbour distances need at least 2 rows")
    out = np.empty(n)
    chunk = max(1, int(2e7) // max(n, 1))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        block = cdist(pool[lo:hi], pool)
        block[np.arange(lo, hi) - lo, np.arange(lo, hi)] = np.inf
        out[lo:hi] = block.min(axis=1)
    return out, float(out.mean())


def selection_traces(pool, indices) -> tuple[np.ndarray, np.ndarray]:
    """Recompute per-step fill and separation traces for an ordered selection."""
    pool = _as_pool(pool)
    idx = _check_selected(pool, indices)
    norms_sq = _row_norms_sq(pool)
    b = idx.size
    fill = np.empty(b)
    sep = np.full(b, math.nan)
    cache = _sq_dists_to_row(pool, norms_sq, int(idx[0]))
    fill[0] = math.sqrt(cache.max())
    smallest_sq = math.inf
    for t in range(1, b):
        d2 = _sq_dists_to_row(pool, norms_sq, int(idx[t]))
        smallest_sq = min(smallest_sq, float(cache[idx[t]]))
        np.minimum(cache, d2, out=cache)
        fill[t] = math.sqrt(cache.max())
        sep[t] = 0.5 * math.sqrt(smallest_sq)
    return fill, sep


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def _check_budget(n: int, budget: int) -> int:
    budget = int(budget)
    if not 1 <= budget <= n:
        raise DataError(f"budget must satisfy 1 <= b <= {n}, got {budget}")
    return budget


def _first_index(n: int, seed: int, start_index: int | None) -> int:
    if start_index is not None:
        start_index = int(start_index)
        if not 0 <= start_index < n:
            raise DataError(f"start_index {start_index} out of range for {n} rows")
        return start_index
    return int(rng_from_seed(seed).integers(n))


def fps(pool, budget: int, seed: int = 0, start_index: int | None = None) -> SelectionResult:
    """Farthest point sampling.

    Starts from a seeded-uniform row (or ``start_index``) and repeatedly adds
    the row farthest from the current selection, ties broken by smallest row
    index. A per-row minimum-distance cache keeps the cost at O(n * budget)
    distance evaluations and O(n) extra memory.
    """
    pool = _as_pool(pool)
    n = pool.shape[0]
    budget = _check_budget(n, budget)
    norms_sq = _row_norms_sq(pool)

    indices = np.empty(budget, dtype=np.int64)
    fill = np.empty(budget)
    sep = np.full(budget, math.nan)
    indices[0] = _first_index(n, seed, start_index)

    cache = _sq_dists_to_row(pool, norms_sq, int(indices[0]))
    fill[0] = math.sqrt(cache.max())
    smallest_sq = math.inf
    for t in range(1, budget):
        nxt = int(np.argmax(cache))  # first max = smallest-index tie-break
        indices[t] = nxt
        smallest_sq = min(smallest_sq, float(cache[nxt]))
        np.minimum(cache, _sq_dists_to_row(pool, norms_sq, nxt), out=cache)
        fill[t] = math.sqrt(cache.max())
        sep[t] = 0.5 * math.sqrt(smallest_sq)
    return SelectionResult(indices, fill, sep, strategy="fps", seed=int(seed))


def random_select(pool, budget: int, seed: int = 0) -> SelectionResult:
    """Uniform sampling without replacement, deterministic in the seed."""
    pool = _as_pool(pool)
    n = pool.shape[0]
    budget = _check_budget(n, budget)
    indices = rng_from_seed(seed).permutation(n)[:budget].astype(np.int64)
    fill, sep = selection_traces(pool, indices)
    return SelectionResult(indices, fill, sep, strategy="random", seed=int(seed))


def _candidate_scores_chunked(pool, min_dists, chunk_rows: int) -> np.ndarray:
    n = pool.shape[0]
    scores = np.empty(n)
    for lo in range(0, n, chunk_rows):
        hi = min(lo + chunk_rows, n)
        block = cdist(pool[lo:hi], pool)
        scores[lo:hi] = np.minimum(block, min_dists[None, :]).sum(axis=1)
    return scores


def facility_location(
    pool, budget: int, seed: int = 0, start_index: int | None = None
) -> SelectionResult:
    """Add-only greedy minimization of the summed distance from every pool
    row to its nearest selected row.

    Each step scores every remaining candidate against the full pool, so a
    step costs O(n^2) distance evaluations; the pairwise matrix is kept dense
    for small pools and streamed in chunks otherwise.
    """
    pool = _as_pool(pool)
    n = pool.shape[0]
    budget = _check_budget(n, budget)
    indices = np.empty(budget, dtype=np.int64)
    indices[0] = _first_index(n, seed, start_index)

    dense = n <= _DENSE_MATRIX_LIMIT
    dist_matrix = cdist(pool, pool) if dense else None
    min_dists = (
        dist_matrix[indices[0]].copy()
        if dense
        else cdist(pool[indices[0]][None, :], pool)[0]
    )
    selected_mask = np.zeros(n, dtype=bool)
    selected_mask[indices[0]] = True
    for t in range(1, budget):
        if dense:
            scores = np.minimum(dist_matrix, min_dists[None, :]).sum(axis=1)
        else:
            scores = _candidate_scores_chunked(pool, min_dists, max(1, int(2e7) // n))
        scores[selected_mask] = np.inf
        nxt = int(np.argmin(scores))  # first min = smallest-index tie-break
        indices[t] = nxt
        selected_mask[nxt] = True
        row = dist_matrix[nxt] if dense else cdist(pool[nxt][None, :], pool)[0]
        np.minimum(min_dists, row, out=min_dists)
    fill, sep = selection_traces(pool, indices)
    return SelectionResult(indices, fill, sep, strategy="facility_location", seed=int(seed))


def kmedoidspp(pool, budget: int, seed: int = 0, max_iters: int = 100) -> SelectionResult:
    """k-medoids with squared-distance-proportional (++) seeding.

    After seeding, alternates assignment to the nearest medoid with replacing
    each medoid by the member of its cluster minimizing the within-cluster
    summed distance, until no medoid changes or ``max_iters`` is reached.
    Each medoid is pinned to its own cluster during assignment, so clusters
    are never empty. Deterministic in the seed.
    """
    pool = _as_pool(pool)
    n = pool.shape[0]
    budget = _check_budget(n, budget)
    if max_iters < 0:
        raise DataError("max_iters must be >= 0")
    rng = rng_from_seed(seed)
    norms_sq = _row_norms_sq(pool)

    medoids = np.empty(budget, dtype=np.int64)
    medoids[0] = int(rng.integers(n))
    chosen = np.zeros(n, dtype=bool)
    chosen[medoids[0]] = True
    d2 = _sq_dists_to_row(pool, norms_sq, int(medoids[0]))
    for t in range(1, budget):
        total = float(d2.sum())
        if total > 0.0:
            u = float(rng.uniform(0.0, total))
            nxt = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            nxt = min(nxt, n - 1)
            if chosen[nxt]:  # landed on a zero-mass chosen row by rounding
                nxt = int(np.flatnonzero(~chosen)[0])
        else:
            # Remaining rows all duplicate chosen ones; take the smallest.
            nxt = int(np.flatnonzero(~chosen)[0])
        medoids[t] = nxt
        chosen[nxt] = True
        np.minimum(d2, _sq_dists_to_row(pool, norms_sq, nxt), out=d2)

    for _ in range(max_iters):
        assign = cdist(pool[medoids], pool).argmin(axis=0)
        assign[medoids] = np.arange(budget)
        updated = medoids.copy()
        for k in range(budget):
            members = np.flatnonzero(assign == k)
            costs = cdist(pool[members], pool[members]).sum(axis=1)
            updated[k] = members[int(np.argmin(costs))]
        if np.array_equal(updated, medoids):
            break
        medoids = updated

    fill, sep = selection_traces(pool, medoids)
    return SelectionResult(medoids, fill, sep, strategy="kmedoidspp", seed=int(seed))


def fps_then_random(
    pool,
    budget: int,
    switch_fraction: float,
    seed: int = 0,
    start_index: int | None = None,
) -> SelectionResult:
    """Farthest point sampling for the first ceil(switch_fraction * n) picks,
    then uniform sampling over the remaining rows.

    When the budget does not exceed the switch point this is exactly ``fps``
    with the same seed.
    """
    pool = _as_pool(pool)
    n = pool.shape[0]
    budget = _check_budget(n, budget)
    if not 0.0 < switch_fraction < 1.0:
        raise DataError("switch_fraction must be in (0, 1)")
    n_switch = min(budget, math.ceil(switch_fraction * n))

    head = fps(pool, n_switch, seed=seed, start_index=start_index)
    indices = head.indices
    if budget > n_switch:
        remaining = np.setdiff1d(np.arange(n, dtype=np.int64), indices, assume_unique=False)
        tail_rng = rng_from_seed(child_seed(seed, "fps_then_random", "post-switch"))
        extra = remaining[tail_rng.permutation(remaining.size)[: budget - n_switch]]
        indices = np.concatenate([indices, extra])
    fill, sep = selection_traces(pool, indices)
    return SelectionResult(
        indices, fill, sep, strategy="fps_then_random", seed=int(seed)
    )


def select(pool, spec: StrategySpec, budget: int, seed: int = 0) -> SelectionResult:
    """Run the sampler named by a StrategySpec."""
    if spec.kind == "fps":
        return fps(pool, budget, seed=seed, start_index=spec.start_index)
    if spec.kind == "random":
        return random_select(pool, budget, seed=seed)
    if spec.kind == "facility_location":
        return facility_location(pool, budget, seed=seed, start_index=spec.start_index)
    if spec.kind == "kmedoidspp":
        return kmedoidspp(pool, budget, seed=seed)
    return fps_then_random(
        pool, budget, spec.switch_fraction, seed=seed, start_index=spec.start_index
    )


# ---------------------------------------------------------------------------
# Exhaustive oracles
# ---------------------------------------------------------------------------


def _check_bruteforce(n: int, budget: int) -> None:
    if math.comb(n, budget) > _BRUTEFORCE_LIMIT:
        raise DataError(
            f"C({n}, {budget}) exceeds the brute-force guard of {_BRUTEFORCE_LIMIT}"
        )


def kcenter_bruteforce(pool, budget: int) -> tuple[float, np.ndarray]:
    """Exact minimum fill distance over all budget-subsets, with the first
    lexicographic witness. Guarded to C(n, b) <= 1e6 subsets."""
    pool = _as_pool(pool)
    n = pool.shape[0]
    budget = _check_budget(n, budget)
    _check_bruteforce(n, budget)
    dist_matrix = cdist(pool, pool)
    best = math.inf
    witness: tuple[int, ...] | None = None
    for subset in itertools.combinations(range(n), budget):
        value = dist_matrix[:, subset].min(axis=1).max()
        if value < best:
            best = float(value)
            witness = subset
    return best, np.asarray(witness, dtype=np.int64)


def maxsep_bruteforce(pool, budget: int) -> tuple[float, np.ndarray]:
    """Exact maximum separation distance over all budget-subsets, with the
    first lexicographic witness. Guarded to C(n, b) <= 1e6 subsets."""
    pool = _as_pool(pool)
    n = pool.shape[0]
    budget = _check_budget(n, budget)
    if budget < 2:
        raise DataError("separation distance needs at least 2 selected rows")
    _check_bruteforce(n, budget)
    dist_matrix = cdist(pool, pool)
    iu = np.triu_indices(budget, k=1)
    best = -math.inf
    witness: tuple[int, ...] | None = None
    for subset in itertools.combinations(range(n), budget):
        sub = dist_matrix[np.ix_(subset, subset)]
        value = 0.5 * sub[iu].min()
        if value > best:
            best = float(value)
            witness = subset
    return best, np.asarray(witness, dtype=np.int64)
