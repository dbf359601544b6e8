"""Problem records: statement, I/O mode, test suite and comparison rule."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .jsonl import read_jsonl, write_jsonl

IO_MODES = ("stdin", "function")
DIFFICULTIES = ("easy", "medium", "hard")


@dataclass(frozen=True)
class TestCase:
    id: str
    input: str
    expected_output: str
    allow_empty: bool = False

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not self.allow_empty and not self.expected_output.rstrip():
            raise ValueError(f"test case {self.id!r}: empty expected output (set allow_empty to permit)")

    def to_record(self) -> dict:
        rec = {"id": self.id, "input": self.input, "expected": self.expected_output}
        if self.allow_empty:
            rec["allow_empty"] = True
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "TestCase":
        return cls(
            id=str(rec["id"]),
            input=rec["input"],
            expected_output=rec["expected"],
            allow_empty=bool(rec.get("allow_empty", False)),
        )


def validate_compare(compare: Any) -> Any:
    """Return ``compare`` unchanged if it is a valid comparison mode."""
    if compare in ("normalized", "exact"):
        return compare
    if isinstance(compare, Mapping) and set(compare) == {"float"}:
        eps = compare["float"]
        if isinstance(eps, (int, float)) and not isinstance(eps, bool) and eps >= 0:
            return {"float": float(eps)}
    raise ValueError(f"invalid comparison mode: {compare!r}")


@dataclass(frozen=True)
class Problem:
    id: str
    statement: str
    io_mode: str = "stdin"
    starter_code: str | None = None
    tests: tuple[TestCase, ...] = ()
    compare: Any = "normalized"
    difficulty: str | None = None

    def __post_init__(self):
        if not self.statement:
            raise ValueError(f"problem {self.id!r}: empty statement")
        if self.io_mode not in IO_MODES:
            raise ValueError(f"problem {self.id!r}: io_mode must be one of {IO_MODES}")
        if self.difficulty is not None and self.difficulty not in DIFFICULTIES:
            raise ValueError(f"problem {self.id!r}: unknown difficulty {self.difficulty!r}")
        object.__setattr__(self, "tests", tuple(self.tests))
        object.__setattr__(self, "compare", validate_compare(self.compare))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "statement": self.statement,
            "io_mode": self.io_mode,
            "starter_code": self.starter_code,
            "tests": [t.to_record() for t in self.tests],
            "compare": self.compare,
            "difficulty": self.difficulty,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Problem":
        return cls(
            id=str(rec["id"]),
            statement=rec["statement"],
            io_mode=rec.get("io_mode", "stdin"),
            starter_code=rec.get("starter_code"),
            tests=tuple(TestCase.from_record(t) for t in rec.get("tests", ())),
            compare=rec.get("compare", "normalized"),
            difficulty=rec.get("difficulty"),
        )


def read_problems(path: str | os.PathLike) -> list[Problem]:
    problems = [Problem.from_record(rec) for rec in read_jsonl(path)]
    seen: set[str] = set()
    for p in problems:
        if p.id in seen:
            raise ValueError(f"{path}: duplicate problem id {p.id!r}")
        seen.add(p.id)
    return problems


def write_problems(path: str | os.PathLike, problems: Iterable[Problem]) -> int:
    return write_jsonl(path, (p.to_record() for p in problems))
