"""Ranking extraction and execution-grounded ranking rewards.

Rankings are 1-based candidate indices, best first, as produced by the
ranking prompt. Labels are the binary execution verdicts of the candidates.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

from .jsonl import read_jsonl, write_jsonl

REWARD_KINDS = ("pairwise", "ndcg", "selection")
DEFAULT_THINK_TAGS = (("<think>", "</think>"),)

NO_MATCH = "no-match"
NOT_PERMUTATION = "not-permutation"
OUT_OF_RANGE = "out-of-range"


@dataclass(frozen=True)
class ParsedRanking:
    order: tuple[int, ...]
    raw_span: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if sorted(self.order) != list(range(1, len(self.order) + 1)):
            raise ValueError(f"not a permutation of 1..{len(self.order)}: {self.order}")

    def __len__(self):
        return len(self.order)

    def positions(self) -> dict[int, int]:
        return {cand: pos for pos, cand in enumerate(self.order, 1)}


@dataclass(frozen=True)
class FormatFailure:
    reason: str
    detail: str = ""

    def __bool__(self):
        return False


RankingLike = Union[ParsedRanking, Sequence[int]]


@dataclass(frozen=True)
class RewardSpec:
    kind: str = "pairwise"
    format_penalty: float = -1.0

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"reward kind must be one of {REWARD_KINDS}")
        if not self.format_penalty < 0:
            raise ValueError("format_penalty must be negative")


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.pairs)


# -- parsing -----------------------------------------------------------------

_INT = re.compile(r"(?<![\w.])\d+(?!\w|\.\d)")
_SEP = re.compile(r"\s*,?\s*")


def strip_reasoning(text: str, tags: Iterable[tuple[str, str]] = DEFAULT_THINK_TAGS) -> str:
    """Blank out delimited reasoning blocks, keeping character offsets.

    Blocks are overwritten with NUL characters rather than deleted, so spans
    found afterwards still index into the original text and numbers on
    either side of a block never merge into one sequence. A dangling close
    tag blanks everything before it; a dangling open tag, everything after.
    """
    chars = list(text)
    for open_tag, close_tag in tags:
        s = "".join(chars)
        pos = 0
        while True:
            i = s.find(open_tag, pos)
            j = s.find(close_tag, pos)
            if i == -1 and j == -1:
                break
            if j != -1 and (i == -1 or j < i):
                end = j + len(close_tag)
                chars[pos:end] = "\0" * (end - pos)
                pos = end
                continue
            j = s.find(close_tag, i + len(open_tag))
            end = len(s) if j == -1 else j + len(close_tag)
            chars[i:end] = "\0" * (end - i)
            pos = end
    return "".join(chars)


def integer_runs(text: str) -> list[tuple[list[int], tuple[int, int]]]:
    """Maximal runs of integers separated by commas and/or whitespace."""
    runs: list[tuple[list[int], tuple[int, int]]] = []
    prev_end = None
    for m in _INT.finditer(text):
        if runs and _SEP.fullmatch(text, prev_end, m.start()):
            values, (start, _) = runs[-1]
            values.append(int(m.group()))
            runs[-1] = (values, (start, m.end()))
        else:
            runs.append(([int(m.group())], (m.start(), m.end())))
        prev_end = m.end()
    return runs


def parse_ranking(
    response: str, k: int, think_tags: Iterable[tuple[str, str]] = DEFAULT_THINK_TAGS
) -> ParsedRanking | FormatFailure:
    """Extract the final ranking from a judgment response.

    After reasoning blocks are removed, the last run of exactly ``k``
    integers is authoritative. It must be a permutation of ``1..k``.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    text = strip_reasoning(response or "", think_tags)
    runs = [r for r in integer_runs(text) if len(r[0]) == k]
    if not runs:
        return FormatFailure(NO_MATCH, f"no sequence of {k} integers")
    values, span = runs[-1]
    if any(not 1 <= v <= k for v in values):
        return FormatFailure(OUT_OF_RANGE, f"indices {values} outside 1..{k}")
    if len(set(values)) != k:
        return FormatFailure(NOT_PERMUTATION, f"indices {values} repeat")
    return ParsedRanking(tuple(values), span)


def format_ranking(order: Sequence[int]) -> str:
    return ", ".join(str(i) for i in order)


# -- rewards -----------------------------------------------------------------


def _order(ranking: RankingLike) -> tuple[int, ...]:
    return ranking.order if isinstance(ranking, ParsedRanking) else tuple(int(i) for i in ranking)


def _check(order: Sequence[int], labels: Sequence[int]) -> None:
    k = len(labels)
    if sorted(order) != list(range(1, k + 1)):
        raise ValueError(f"ranking {tuple(order)} is not a permutation of 1..{k}")
    if any(y not in (0, 1) for y in labels):
        raise ValueError("labels must be binary")
    if not 0 < sum(labels) < k:
        raise ValueError("labels must be mixed-quality (0 < sum < K)")


def pair_set(labels: Sequence[int]) -> PairSet:
    k = len(labels)
    if any(y not in (0, 1) for y in labels) or not 0 < sum(labels) < k:
        raise ValueError("pair set needs mixed binary labels")
    pos = [i for i in range(1, k + 1) if labels[i - 1] == 1]
    neg = [j for j in range(1, k + 1) if labels[j - 1] == 0]
    return PairSet(tuple((i, j) for i in pos for j in neg))


def pairwise_reward(ranking: RankingLike, labels: Sequence[int]) -> float:
    """Fraction of (correct, incorrect) pairs with the correct one ranked higher."""
    order = _order(ranking)
    _check(order, labels)
    pos = {cand: p for p, cand in enumerate(order)}
    pairs = pair_set(labels).pairs
    satisfied = sum(pos[i] < pos[j] for i, j in pairs)
    return satisfied / len(pairs)


def dcg(order: Sequence[int], labels: Sequence[int]) -> float:
    return sum(labels[c - 1] / math.log2(t + 1) for t, c in enumerate(order, 1))


def ideal_dcg(labels: Sequence[int]) -> float:
    return sum(1.0 / math.log2(t + 1) for t in range(1, sum(labels) + 1))


def ndcg_reward(ranking: RankingLike, labels: Sequence[int]) -> float:
    """Binary-gain NDCG with the log2(t + 1) discount."""
    order = _order(ranking)
    _check(order, labels)
    return dcg(order, labels) / ideal_dcg(labels)


def selection_reward(ranking: RankingLike, labels: Sequence[int]) -> float:
    order = _order(ranking)
    _check(order, labels)
    return float(labels[order[0] - 1])


_REWARD_FNS = {"pairwise": pairwise_reward, "ndcg": ndcg_reward, "selection": selection_reward}


def ranking_reward(ranking: RankingLike, labels: Sequence[int], kind: str = "pairwise") -> float:
    return _REWARD_FNS[kind](ranking, labels)


def score_response(
    response: str,
    labels: Sequence[int],
    spec: RewardSpec = RewardSpec(),
    think_tags: Iterable[tuple[str, str]] = DEFAULT_THINK_TAGS,
) -> tuple[ParsedRanking | FormatFailure, float]:
    parsed = parse_ranking(response, len(labels), think_tags)
    if isinstance(parsed, FormatFailure):
        return parsed, spec.format_penalty
    return parsed, ranking_reward(parsed, labels, spec.kind)


def response_reward(
    response: str,
    labels: Sequence[int],
    spec: RewardSpec = RewardSpec(),
    think_tags: Iterable[tuple[str, str]] = DEFAULT_THINK_TAGS,
) -> float:
    """Reward of a whole judgment response: ranking reward, or the format penalty."""
    return score_response(response, labels, spec, think_tags)[1]


# -- judgment records --------------------------------------------------------


@dataclass(frozen=True)
class JudgmentRecord:
    group_id: str
    response: str
    parsed: tuple[int, ...] | None
    reward: float
    reward_kind: str

    def to_record(self) -> dict:
        return {
            "group_id": self.group_id,
            "response": self.response,
            "parsed": list(self.parsed) if self.parsed is not None else None,
            "reward": self.reward,
            "reward_kind": self.reward_kind,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "JudgmentRecord":
        parsed = rec.get("parsed")
        return cls(rec["group_id"], rec["response"], tuple(parsed) if parsed is not None else None,
                   float(rec["reward"]), rec["reward_kind"])


def read_judgments(path: str | os.PathLike) -> list[JudgmentRecord]:
    return [JudgmentRecord.from_record(r) for r in read_jsonl(path)]


def write_judgments(path: str | os.PathLike, records: Iterable[JudgmentRecord]) -> int:
    return write_jsonl(path, (r.to_record() for r in records))
