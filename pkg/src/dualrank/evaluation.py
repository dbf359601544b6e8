"""Generate-then-judge evaluation: Best-of-N accuracy, pass@1 and judgment NDCG.

Every (problem, repeat) pair gets ``n`` candidates from a generator source.
The sandbox labels them, a judge source ranks them, and the top-ranked
candidate's label is that pair's Best-of-N outcome. Unlike training data,
evaluation groups are never filtered: all-correct and all-incorrect groups
count toward accuracy.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gateway import EVAL_SAMPLING, ChatClient, SamplingConfig, sample_candidates, sample_judgments
from .problems import Problem
from .reward import DEFAULT_THINK_TAGS, FormatFailure, ParsedRanking, ndcg_reward, parse_ranking
from .sandbox import ResourceLimits, label_pool

logger = logging.getLogger(__name__)

NO_DIFFICULTY = "none"


class MissingMaterial(Exception):
    """Candidates or judgments for a (problem, repeat) could not be obtained."""


@dataclass(frozen=True)
class EvalGroup:
    problem_id: str
    candidates: tuple[str, ...]
    labels: tuple[int, ...]
    judge_ranking: ParsedRanking | FormatFailure
    repeat_index: int = 0
    difficulty: str | None = None

    def __post_init__(self):
        if not self.candidates or len(self.labels) != len(self.candidates):
            raise ValueError(f"{self.problem_id}: need N >= 1 candidates with one label each")

    @property
    def flagged(self) -> bool:
        return isinstance(self.judge_ranking, FormatFailure)

    @property
    def order(self) -> tuple[int, ...]:
        # a failed judgment falls back to sampling order
        if self.flagged:
            return tuple(range(1, len(self.candidates) + 1))
        return self.judge_ranking.order


def best_of_n(group: EvalGroup) -> int:
    """Label of the judge's top pick (candidate 1 if the judgment failed)."""
    return int(group.labels[group.order[0] - 1])


def pass_at_1(samples: Sequence[int]) -> float:
    if len(samples) == 0:
        raise ValueError("pass@1 of an empty sample set is undefined")
    return float(np.mean(samples))


def group_ndcg(group: EvalGroup) -> float | None:
    """NDCG of one group; all-correct scores 1, all-incorrect is skipped (None)."""
    n_pos = sum(group.labels)
    if n_pos == 0:
        return None
    if n_pos == len(group.labels):
        return 1.0
    return ndcg_reward(group.order, group.labels)


def _mean_std(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    return float(np.mean(values)), float(np.std(values))


def judgment_ndcg_metric(groups: Iterable[EvalGroup]) -> tuple[float | None, float | None]:
    """Mean NDCG per repeat, then mean and population std across repeats."""
    per_repeat: dict[int, list[float]] = defaultdict(list)
    for g in groups:
        v = group_ndcg(g)
        if v is not None:
            per_repeat[g.repeat_index].append(v)
    return _mean_std([float(np.mean(v)) for _, v in sorted(per_repeat.items())])


# -- judge and generator sources ------------------------------------------------


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


class Judge:
    name = "judge"

    def rank(self, problem: Problem, candidates: Sequence[str], labels: Sequence[int], repeat: int):
        raise NotImplementedError


class OracleJudge(Judge):
    """Ranks by true labels, correct first, ties by sampling order."""

    name = "oracle"

    def rank(self, problem, candidates, labels, repeat):
        order = sorted(range(1, len(labels) + 1), key=lambda i: (-labels[i - 1], i))
        return ParsedRanking(tuple(order))


class ReversedOracleJudge(OracleJudge):
    name = "reversed_oracle"

    def rank(self, problem, candidates, labels, repeat):
        return ParsedRanking(tuple(reversed(super().rank(problem, candidates, labels, repeat).order)))


class RandomJudge(Judge):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def rank(self, problem, candidates, labels, repeat):
        rng = np.random.default_rng([self.seed, _stable_int(problem.id), repeat])
        return ParsedRanking(tuple(int(i) + 1 for i in rng.permutation(len(candidates))))


class FileJudge(Judge):
    """Replays judgment responses: records {"problem_id", "repeat", "response"}.

    A record with ``repeat`` null applies to every repeat.
    """

    name = "file"

    def __init__(self, records: Iterable[Mapping], think_tags=DEFAULT_THINK_TAGS):
        self.responses: dict[tuple[str, int | None], str] = {}
        for rec in records:
            self.responses[(str(rec["problem_id"]), rec.get("repeat"))] = rec["response"]
        self.think_tags = think_tags

    def rank(self, problem, candidates, labels, repeat):
        text = self.responses.get((problem.id, repeat), self.responses.get((problem.id, None)))
        if text is None:
            raise MissingMaterial(f"no judgment for {problem.id} repeat {repeat}")
        return parse_ranking(text, len(candidates), self.think_tags)


class ModelJudge(Judge):
    name = "model"

    def __init__(self, client: ChatClient, config: SamplingConfig = EVAL_SAMPLING, think_tags=DEFAULT_THINK_TAGS):
        self.client = client
        self.config = SamplingConfig(**{**asdict(config), "n_samples": 1})
        self.think_tags = think_tags

    def rank(self, problem, candidates, labels, repeat):
        result = sample_judgments(problem, candidates, self.client, self.config, start_index=repeat)
        if not result.texts:
            reason = result.failures[0].kind if result.failures else "no completion"
            raise MissingMaterial(f"judge request failed for {problem.id}: {reason}")
        return parse_ranking(result.texts[0], len(candidates), self.think_tags)


class CandidateSource:
    name = "generator"

    def candidates(self, problem: Problem, repeat: int, n: int) -> list[str]:
        raise NotImplementedError


class FileCandidates(CandidateSource):
    """Candidate records {"problem_id", "repeat", "sample_index", "source"}.

    Records with ``repeat`` null are shared by all repeats.
    """

    name = "file"

    def __init__(self, records: Iterable[Mapping]):
        self.table: dict[tuple[str, int | None], list[tuple[int, str]]] = defaultdict(list)
        for rec in records:
            self.table[(str(rec["problem_id"]), rec.get("repeat"))].append((int(rec["sample_index"]), rec["source"]))
        for rows in self.table.values():
            rows.sort(key=lambda r: r[0])

    def candidates(self, problem, repeat, n):
        rows = self.table.get((problem.id, repeat)) or self.table.get((problem.id, None))
        if not rows or len(rows) < n:
            have = len(rows) if rows else 0
            raise MissingMaterial(f"{problem.id} repeat {repeat}: {have} candidates, need {n}")
        return [src for _, src in rows[:n]]


class ModelCandidates(CandidateSource):
    name = "model"

    def __init__(self, client: ChatClient, config: SamplingConfig = EVAL_SAMPLING, thinking_mode: bool = False):
        self.client = client
        self.config = config
        self.thinking_mode = thinking_mode

    def candidates(self, problem, repeat, n):
        cfg = SamplingConfig(**{**asdict(self.config), "n_samples": n})
        result = sample_candidates(problem, self.client, cfg, self.thinking_mode, start_index=repeat * n)
        if len(result.texts) < n:
            raise MissingMaterial(f"{problem.id} repeat {repeat}: only {len(result.texts)} usable candidates")
        return result.texts


class SandboxLabeler:
    """Labels candidates once per (problem, source) and reuses the verdict."""

    def __init__(self, limits: ResourceLimits | None = None, interpreter: Sequence[str] = ("python3",),
                 workers: int = 1):
        self.limits = limits or ResourceLimits()
        self.interpreter = tuple(interpreter)
        self.workers = workers
        self._memo: dict[tuple[str, str], int | None] = {}
        self._lock = threading.Lock()

    def __call__(self, problem: Problem, sources: Sequence[str]) -> list[int]:
        with self._lock:
            todo = [s for s in dict.fromkeys(sources) if (problem.id, s) not in self._memo]
        if todo:
            labeled = label_pool(problem, todo, self.limits, self.interpreter, self.workers)
            with self._lock:
                for cand in labeled:
                    self._memo[(problem.id, cand.source)] = None if cand.quarantined else cand.label
        labels = [self._memo[(problem.id, s)] for s in sources]
        if any(y is None for y in labels):
            raise MissingMaterial(f"{problem.id}: sandbox harness error while labeling")
        return labels


# -- reports -------------------------------------------------------------------


def _aggregate(groups: Sequence[EvalGroup]) -> dict:
    by_repeat: dict[int, list[EvalGroup]] = defaultdict(list)
    for g in groups:
        by_repeat[g.repeat_index].append(g)
    acc = [float(np.mean([best_of_n(g) for g in gs])) for _, gs in sorted(by_repeat.items())]
    p1 = [pass_at_1([y for g in gs for y in g.labels]) for _, gs in sorted(by_repeat.items())]
    ndcg_mean, ndcg_std = judgment_ndcg_metric(groups)
    acc_mean, acc_std = _mean_std(acc)
    return {
        "accuracy": acc_mean,
        "accuracy_std": acc_std,
        "pass_at_1": _mean_std(p1)[0],
        "judgment_ndcg": ndcg_mean,
        "judgment_ndcg_std": ndcg_std,
        "n_groups": len(groups),
        "n_problems": len({g.problem_id for g in groups}),
    }


def stratify(groups: Sequence[EvalGroup]) -> dict[str, dict]:
    """Metrics per difficulty stratum; ``weight`` is the stratum's share of groups."""
    strata: dict[str, list[EvalGroup]] = defaultdict(list)
    for g in groups:
        strata[g.difficulty or NO_DIFFICULTY].append(g)
    total = len(groups)
    out = {}
    for name in sorted(strata):
        metrics = _aggregate(strata[name])
        metrics["weight"] = len(strata[name]) / total
        out[name] = metrics
    return out


@dataclass
class MetricReport:
    accuracy: float | None
    accuracy_std: float | None
    pass_at_1: float | None
    judgment_ndcg: float | None
    judgment_ndcg_std: float | None
    per_difficulty: dict[str, dict] = field(default_factory=dict)
    n_repeats: int = 0
    n_problems: int = 0
    flagged_format_failures: int = 0
    excluded: int = 0
    exclusions: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return asdict(self)


def report_from_groups(groups: Sequence[EvalGroup], n_repeats: int, excluded: Sequence[str] = ()) -> MetricReport:
    if groups:
        overall = _aggregate(groups)
    else:
        overall = dict.fromkeys(("accuracy", "accuracy_std", "pass_at_1", "judgment_ndcg", "judgment_ndcg_std"))
        overall["n_problems"] = 0
    return MetricReport(
        accuracy=overall["accuracy"],
        accuracy_std=overall["accuracy_std"],
        pass_at_1=overall["pass_at_1"],
        judgment_ndcg=overall["judgment_ndcg"],
        judgment_ndcg_std=overall["judgment_ndcg_std"],
        per_difficulty=stratify(groups) if groups else {},
        n_repeats=n_repeats,
        n_problems=overall["n_problems"],
        flagged_format_failures=sum(g.flagged for g in groups),
        excluded=len(excluded),
        exclusions=list(excluded),
    )


def collect_groups(
    problems: Sequence[Problem],
    generator: CandidateSource,
    judge: Judge,
    labeler,
    n: int = 4,
    repeats: int = 10,
    workers: int = 1,
) -> tuple[list[EvalGroup], list[str]]:
    if n < 1 or repeats < 1:
        raise ValueError("n and repeats must be >= 1")

    def one(problem: Problem) -> tuple[list[EvalGroup], list[str]]:
        groups, excluded = [], []
        for r in range(repeats):
            try:
                cands = generator.candidates(problem, r, n)
                labels = labeler(problem, cands)
                ranking = judge.rank(problem, cands, labels, r)
            except MissingMaterial as exc:
                excluded.append(str(exc))
                continue
            groups.append(EvalGroup(problem.id, tuple(cands), tuple(labels), ranking, r, problem.difficulty))
        return groups, excluded

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, problems))
    else:
        parts = [one(p) for p in problems]
    groups = [g for gs, _ in parts for g in gs]
    excluded = [e for _, es in parts for e in es]
    for msg in excluded:
        logger.warning("excluded: %s", msg)
    return groups, excluded


def run_eval(
    problems: Sequence[Problem],
    generator: CandidateSource,
    judge: Judge,
    n: int = 4,
    repeats: int = 10,
    labeler=None,
    workers: int = 1,
) -> tuple[MetricReport, list[EvalGroup]]:
    labeler = labeler or SandboxLabeler()
    groups, excluded = collect_groups(problems, generator, judge, labeler, n, repeats, workers)
    return report_from_groups(groups, repeats, excluded), groups


# -- decomposition -------------------------------------------------------------

DECOMPOSITION_ROWS = (
    ("Baseline", "base", "base"),
    ("+ Trained Judge", "base", "trained"),
    ("+ Trained Gen & Judge", "trained", "trained"),
)
_COLUMNS = (("pass_at_1", "Generation pass@1"), ("judgment_ndcg", "Judgment NDCG"), ("accuracy", "TTS Accuracy"))


@dataclass
class DecompositionReport:
    rows: list[tuple[str, MetricReport]]

    def deltas(self) -> list[dict[str, float | None]]:
        base = self.rows[0][1]
        out = []
        for _, rep in self.rows:
            d = {}
            for key, _ in _COLUMNS:
                a, b = getattr(rep, key), getattr(base, key)
                d[key] = None if a is None or b is None else a - b
            out.append(d)
        return out

    def to_record(self) -> dict:
        return {
            "rows": [{"name": name, **rep.to_record(), "delta": delta}
                     for (name, rep), delta in zip(self.rows, self.deltas())]
        }

    def table(self) -> str:
        lines = ["| Configuration | " + " | ".join(c for _, c in _COLUMNS) + " |",
                 "|---|" + "---|" * len(_COLUMNS)]
        for (name, rep), delta in zip(self.rows, self.deltas()):
            cells = []
            for key, _ in _COLUMNS:
                cell = _pct(getattr(rep, key))
                if delta[key] is not None and rep is not self.rows[0][1]:
                    cell += f" ({delta[key] * 100:+.1f})"
                cells.append(cell)
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def decomposition_report(
    problems: Sequence[Problem],
    generators: Mapping[str, CandidateSource],
    judges: Mapping[str, Judge],
    n: int = 4,
    repeats: int = 10,
    labeler=None,
    workers: int = 1,
) -> DecompositionReport:
    """Baseline, then a trained judge, then both trained components."""
    labeler = labeler or SandboxLabeler()
    rows = []
    for name, gen_key, judge_key in DECOMPOSITION_ROWS:
        report, _ = run_eval(problems, generators[gen_key], judges[judge_key], n, repeats, labeler, workers)
        rows.append((name, report))
    return DecompositionReport(rows)


def _pct(v: float | None) -> str:
    return "n/a" if v is None else f"{v * 100:.1f}"


def render_report_table(report: MetricReport) -> str:
    """Accuracy by difficulty next to pass@1 and NDCG, in percent."""
    strata = [s for s in ("easy", "medium", "hard", NO_DIFFICULTY) if s in report.per_difficulty]
    head = ["Overall", *(s.capitalize() for s in strata), "pass@1", "NDCG"]
    cells = [_pct(report.accuracy), *(_pct(report.per_difficulty[s]["accuracy"]) for s in strata),
             _pct(report.pass_at_1), _pct(report.judgment_ndcg)]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head), "| " + " | ".join(cells) + " |"]
    foot = f"\n{report.n_problems} problems, {report.n_repeats} repeats"
    foot += f", {report.flagged_format_failures} judge format failures, {report.excluded} excluded\n"
    return "\n".join(lines) + "\n" + foot
