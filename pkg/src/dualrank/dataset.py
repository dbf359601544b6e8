"""Build the ranking training set from labeled candidate pools.

Each problem's pool is de-duplicated, partitioned into groups of ``k``
candidates and filtered down to mixed-quality groups: those with at least
one passing and one failing candidate. Only those groups carry a ranking
contrast, so only they become ``TrainingInstance`` values.
"""

from __future__ import annotations

import hashlib
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .jsonl import read_json, read_jsonl, write_json, write_jsonl
from .problems import Problem

STRATEGIES = ("sequential", "shuffled")


@dataclass(frozen=True)
class LabeledCandidate:
    problem_id: str
    index: int
    source: str
    label: int
    verdict: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.source:
            raise ValueError("candidate source must be non-empty")

    @property
    def quarantined(self) -> bool:
        return self.verdict == "harness_error"

    def to_record(self) -> dict:
        return {"problem_id": self.problem_id, "index": self.index, "source": self.source, "label": self.label}

    @classmethod
    def from_record(cls, rec: Mapping) -> "LabeledCandidate":
        return cls(str(rec["problem_id"]), int(rec["index"]), rec["source"], int(rec["label"]))


@dataclass(frozen=True)
class TrainingInstance:
    group_id: str
    problem_id: str
    candidates: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))
        k = len(self.candidates)
        if k < 2 or len(self.labels) != k:
            raise ValueError(f"{self.group_id}: need K >= 2 candidates with one label each")
        if any(y not in (0, 1) for y in self.labels):
            raise ValueError(f"{self.group_id}: labels must be binary")
        if not 0 < sum(self.labels) < k:
            raise ValueError(f"{self.group_id}: group is not mixed-quality")
        if len(set(self.candidates)) != k:
            raise ValueError(f"{self.group_id}: duplicate candidates in group")

    @property
    def k(self) -> int:
        return len(self.candidates)

    def to_record(self) -> dict:
        return {
            "group_id": self.group_id,
            "problem_id": self.problem_id,
            "candidates": list(self.candidates),
            "labels": list(self.labels),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "TrainingInstance":
        return cls(rec["group_id"], rec["problem_id"], tuple(rec["candidates"]), tuple(rec["labels"]))


@dataclass(frozen=True)
class DatasetStats:
    n_problems: int = 0
    n_pools: int = 0
    n_groups_total: int = 0
    n_groups_retained: int = 0
    retained_by_positive_count: dict[int, float] = field(default_factory=dict)
    positives_per_pool_histogram: dict[int, int] = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["retained_by_positive_count"] = {str(k): v for k, v in self.retained_by_positive_count.items()}
        rec["positives_per_pool_histogram"] = {str(k): v for k, v in self.positives_per_pool_histogram.items()}
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "DatasetStats":
        return cls(
            n_problems=rec["n_problems"],
            n_pools=rec["n_pools"],
            n_groups_total=rec["n_groups_total"],
            n_groups_retained=rec["n_groups_retained"],
            retained_by_positive_count={int(k): v for k, v in rec["retained_by_positive_count"].items()},
            positives_per_pool_histogram={int(k): v for k, v in rec["positives_per_pool_histogram"].items()},
        )


class DanglingReferenceError(ValueError):
    def __init__(self, problem_ids: Sequence[str]):
        self.problem_ids = sorted(problem_ids)
        super().__init__(f"pools reference unknown problems: {', '.join(self.problem_ids)}")


def group_id(problem_id: str, ordinal: int) -> str:
    return f"{problem_id}#g{ordinal}"


def _problem_seed(seed: int, problem_id: str) -> list[int]:
    digest = hashlib.sha256(problem_id.encode("utf-8")).digest()
    return [seed, int.from_bytes(digest[:8], "little")]


def partition_pool(
    pool: Sequence, k: int, strategy: str = "shuffled", seed: int | Sequence[int] = 0
) -> list[list[int]]:
    """Split pool positions into ``len(pool) // k`` disjoint groups of ``k``.

    ``sequential`` takes consecutive runs ``[i*k, i*k + k)``; ``shuffled``
    permutes the positions with a generator seeded by ``seed`` first. The
    remainder is dropped.
    """
    if k < 2:
        raise ValueError("group size k must be >= 2")
    if len(pool) < k:
        raise ValueError(f"pool of {len(pool)} is smaller than k={k}")
    if strategy == "sequential":
        order = list(range(len(pool)))
    elif strategy == "shuffled":
        order = np.random.default_rng(seed).permutation(len(pool)).tolist()
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    n_groups = len(pool) // k
    return [order[g * k:(g + 1) * k] for g in range(n_groups)]


def filter_mixed(
    groups: Iterable[tuple[Sequence[str], Sequence[int]]],
    problem_id: str = "",
    group_ids: Sequence[str] | None = None,
) -> list[TrainingInstance]:
    """Keep the groups whose label sum is strictly between 0 and K.

    Group ids default to ``{problem_id}#g{ordinal}`` where the ordinal is the
    group's position in ``groups``, so ids do not shift when neighbours are
    rejected.
    """
    groups = list(groups)
    if groups:
        k = len(groups[0][0])
        if any(len(c) != k or len(y) != k for c, y in groups):
            raise ValueError("all groups must have the same size K")
    kept = []
    for ordinal, (cands, labels) in enumerate(groups):
        if 0 < sum(labels) < len(labels):
            gid = group_ids[ordinal] if group_ids is not None else group_id(problem_id, ordinal)
            kept.append(TrainingInstance(gid, problem_id, tuple(cands), tuple(labels)))
    return kept


def dedupe_pool(pool: Iterable[LabeledCandidate]) -> list[LabeledCandidate]:
    """Drop quarantined, empty and repeated sources (first occurrence wins)."""
    seen: set[str] = set()
    out = []
    for cand in pool:
        if cand.quarantined or not cand.source.strip() or cand.source in seen:
            continue
        seen.add(cand.source)
        out.append(cand)
    return out


def dataset_stats(
    instances: Sequence[TrainingInstance],
    groups_total: int,
    n_problems: int | None = None,
    n_pools: int | None = None,
    pool_positive_counts: Iterable[int] = (),
) -> DatasetStats:
    n = len(instances)
    counts = Counter(sum(inst.labels) for inst in instances)
    fractions = {npos: counts[npos] / n for npos in sorted(counts)} if n else {}
    histogram = dict(sorted(Counter(pool_positive_counts).items()))
    return DatasetStats(
        n_problems=len({i.problem_id for i in instances}) if n_problems is None else n_problems,
        n_pools=n_pools if n_pools is not None else sum(histogram.values()),
        n_groups_total=groups_total,
        n_groups_retained=n,
        retained_by_positive_count=fractions,
        positives_per_pool_histogram=histogram,
    )


def build_dataset(
    problems: Sequence[Problem],
    pools: Iterable[LabeledCandidate],
    k: int = 4,
    strategy: str = "shuffled",
    seed: int = 0,
) -> tuple[list[TrainingInstance], DatasetStats]:
    """Turn labeled pools into mixed-quality training instances plus stats.

    ``pools`` is a flat stream of candidates; they are grouped by problem id
    (problems in order of first appearance, candidates ordered by pool
    index). Per-problem shuffles are seeded from ``seed`` and the problem id,
    so the result does not depend on the order problems are listed in.
    """
    known = {p.id for p in problems}
    by_problem: dict[str, list[LabeledCandidate]] = {}
    for cand in pools:
        by_problem.setdefault(cand.problem_id, []).append(cand)
    dangling = set(by_problem) - known
    if dangling:
        raise DanglingReferenceError(sorted(dangling))

    instances: list[TrainingInstance] = []
    groups_total = 0
    positives = []
    for pid, pool in by_problem.items():
        pool = dedupe_pool(sorted(pool, key=lambda c: c.index))
        positives.append(sum(c.label for c in pool))
        if len(pool) < k:
            continue
        parts = partition_pool(pool, k, strategy, _problem_seed(seed, pid))
        groups_total += len(parts)
        groups = [([pool[i].source for i in g], [pool[i].label for i in g]) for g in parts]
        instances.extend(filter_mixed(groups, problem_id=pid))
    stats = dataset_stats(
        instances, groups_total, n_problems=len(problems), n_pools=len(by_problem), pool_positive_counts=positives
    )
    return instances, stats


# -- files -------------------------------------------------------------------


def read_pools(path: str | os.PathLike) -> list[LabeledCandidate]:
    return [LabeledCandidate.from_record(rec) for rec in read_jsonl(path)]


def write_pools(path: str | os.PathLike, pool: Iterable[LabeledCandidate]) -> int:
    return write_jsonl(path, (c.to_record() for c in pool))


def read_instances(path: str | os.PathLike) -> list[TrainingInstance]:
    return [TrainingInstance.from_record(rec) for rec in read_jsonl(path)]


def write_instances(path: str | os.PathLike, instances: Iterable[TrainingInstance]) -> int:
    return write_jsonl(path, (i.to_record() for i in instances))


def read_stats(path: str | os.PathLike) -> DatasetStats:
    return DatasetStats.from_record(read_json(path))


def write_stats(path: str | os.PathLike, stats: DatasetStats) -> None:
    write_json(path, stats.to_record())
